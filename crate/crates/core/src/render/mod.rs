//! Geometry solving, vector scene construction, rasterization and PNG IO.

pub mod geometry;
pub mod raster;
pub mod scene;

pub use geometry::{solve_geometry, BikeGeometry, BikeParams, ForkStyle, GeometryError, HandlebarStyle, RenderStyle};
pub use raster::{decode_png, encode_png, rasterize, RasterError, RasterImage, DEFAULT_HEIGHT, DEFAULT_SUPERSAMPLE, DEFAULT_WIDTH};
pub use scene::{to_svg, Primitive, Stroke, SvgScene, ViewBox};

use thiserror::Error;

use crate::cad::CadDocument;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Document to default-size image in one step.
pub fn render_doc(doc: &CadDocument) -> Result<RasterImage, RenderError> {
    let params = BikeParams::from_doc(doc)?;
    render_params(&params)
}

pub fn render_params(params: &BikeParams) -> Result<RasterImage, RenderError> {
    let geom = params.solve()?;
    let scene = to_svg(&geom, params);
    Ok(rasterize(&scene, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_SUPERSAMPLE)?)
}
