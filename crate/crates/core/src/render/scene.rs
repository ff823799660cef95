//! Vector scene of a solved bicycle, and its SVG text form.
//!
//! Scene coordinates are SVG user units (millimetres, y pointing down); the
//! world-to-scene mapping is `(x, y) ↦ (x, −y)`.
//!
//! Draw order (later primitives paint over earlier ones):
//!
//! 1. rear tyre, rear rim, front tyre, front rim (circles)
//! 2. chain stay, seat stay, down tube, seat tube, top tube, head tube (lines)
//! 3. fork: one blade line (rigid) or two parallel stanchion lines plus a
//!    crown box polygon (suspension), so suspension adds [`SUSPENSION_FORK_EXTRA`]
//!    primitives
//! 4. stem polyline, handlebar polyline
//! 5. seat post line, saddle polygon
//!
//! Glyph shapes relative to the handlebar clamp point `h` and handlebar
//! drop `D`:
//! * drop: hook `h, h+(80,0), h+(110,−0.35D), h+(90,−0.8D), h+(40,−D)`
//! * flat: straight sweep `h, h+(−0.5D, 0)`
//! * riser: `h, h+(−0.2D, 0.35D), h+(−0.55D, 0.35D)`

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::geometry::{BikeGeometry, BikeParams, ForkStyle, HandlebarStyle};
use crate::geom::{Rgb8, Vec2};

/// Primitives added by a suspension fork compared with a rigid one.
pub const SUSPENSION_FORK_EXTRA: usize = 2;

/// Size of the fixed world window drawn around every bike, in millimetres.
pub const VIEW_WIDTH: f64 = 2100.0;
pub const VIEW_HEIGHT: f64 = 2100.0 * 679.0 / 1070.0;
/// Space left below the ground line.
const GROUND_MARGIN: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub width: f64,
    pub color: Rgb8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Round-capped stroked segment.
    Line { a: Vec2, b: Vec2, stroke: Stroke },
    Circle {
        center: Vec2,
        radius: f64,
        stroke: Option<Stroke>,
        fill: Option<Rgb8>,
    },
    /// Round-capped, round-joined open path.
    Polyline { points: Vec<Vec2>, stroke: Stroke },
    Polygon {
        points: Vec<Vec2>,
        fill: Rgb8,
        stroke: Option<Stroke>,
    },
}

impl Primitive {
    pub fn colors(&self) -> Vec<Rgb8> {
        match self {
            Primitive::Line { stroke, .. } | Primitive::Polyline { stroke, .. } => vec![stroke.color],
            Primitive::Circle { stroke, fill, .. } => {
                stroke.iter().map(|s| s.color).chain(fill.iter().copied()).collect()
            }
            Primitive::Polygon { fill, stroke, .. } => {
                std::iter::once(*fill).chain(stroke.iter().map(|s| s.color)).collect()
            }
        }
    }

    fn is_finite(&self) -> bool {
        let ok = |p: &Vec2| p.is_finite();
        match self {
            Primitive::Line { a, b, stroke } => ok(a) && ok(b) && stroke.width.is_finite(),
            Primitive::Circle { center, radius, stroke, .. } => {
                ok(center) && radius.is_finite() && stroke.as_ref().is_none_or(|s| s.width.is_finite())
            }
            Primitive::Polyline { points, stroke } => points.iter().all(ok) && stroke.width.is_finite(),
            Primitive::Polygon { points, stroke, .. } => {
                points.iter().all(ok) && stroke.as_ref().is_none_or(|s| s.width.is_finite())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Ordered draw list plus canvas description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvgScene {
    pub view_box: ViewBox,
    pub background: Rgb8,
    pub primitives: Vec<Primitive>,
}

impl SvgScene {
    pub fn empty(view_box: ViewBox) -> Self {
        SvgScene {
            view_box,
            background: Rgb8::WHITE,
            primitives: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.primitives.iter().all(Primitive::is_finite)
    }

    /// SVG 1.1 text using only line, circle, polyline and polygon elements.
    pub fn to_svg_string(&self, width: u32, height: u32) -> String {
        let vb = self.view_box;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"{} {} {} {}\">",
            vb.x, vb.y, vb.width, vb.height
        );
        let _ = writeln!(
            s,
            "  <polygon points=\"{},{} {},{} {},{} {},{}\" fill=\"{}\"/>",
            vb.x,
            vb.y,
            vb.x + vb.width,
            vb.y,
            vb.x + vb.width,
            vb.y + vb.height,
            vb.x,
            vb.y + vb.height,
            self.background
        );
        let pts = |p: &[Vec2]| p.iter().map(|q| format!("{},{}", q.x, q.y)).collect::<Vec<_>>().join(" ");
        let stroke_attr = |st: &Option<Stroke>| match st {
            Some(st) => format!(" stroke=\"{}\" stroke-width=\"{}\"", st.color, st.width),
            None => String::new(),
        };
        for p in &self.primitives {
            let _ = match p {
                Primitive::Line { a, b, stroke } => writeln!(
                    s,
                    "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"{}\" stroke-linecap=\"round\"/>",
                    a.x, a.y, b.x, b.y, stroke.color, stroke.width
                ),
                Primitive::Circle { center, radius, stroke, fill } => writeln!(
                    s,
                    "  <circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"{}/>",
                    center.x,
                    center.y,
                    radius,
                    fill.map_or("none".to_string(), |c| c.to_string()),
                    stroke_attr(stroke)
                ),
                Primitive::Polyline { points, stroke } => writeln!(
                    s,
                    "  <polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-linecap=\"round\" stroke-linejoin=\"round\"/>",
                    pts(points), stroke.color, stroke.width
                ),
                Primitive::Polygon { points, fill, stroke } => writeln!(
                    s,
                    "  <polygon points=\"{}\" fill=\"{}\"{}/>",
                    pts(points),
                    fill,
                    stroke_attr(stroke)
                ),
            };
        }
        s.push_str("</svg>\n");
        s
    }
}

fn flip(p: Vec2) -> Vec2 {
    Vec2::new(p.x, -p.y)
}

/// Builds the draw list for a solved bicycle.
pub fn to_svg(geom: &BikeGeometry, params: &BikeParams) -> SvgScene {
    let style = &params.style;
    let frame = params.frame_color;
    let d = params.tube_diameter;
    let mut prims = Vec::with_capacity(20);

    let line = |a: Vec2, b: Vec2, width: f64, color: Rgb8| Primitive::Line {
        a: flip(a),
        b: flip(b),
        stroke: Stroke { width, color },
    };
    let ring = |c: Vec2, radius: f64, width: f64, color: Rgb8| Primitive::Circle {
        center: flip(c),
        radius,
        stroke: Some(Stroke { width, color }),
        fill: None,
    };

    for (axle, radius, tire) in [
        (geom.rear_axle, geom.rear_radius, geom.tire_width_rear),
        (geom.front_axle, geom.front_radius, geom.tire_width_front),
    ] {
        prims.push(ring(axle, radius - tire / 2.0, tire, style.tire_color));
        prims.push(ring(
            axle,
            (radius - tire - style.rim_width / 2.0).max(style.rim_width / 2.0),
            style.rim_width,
            style.rim_color,
        ));
    }

    let stay = 0.6 * d;
    prims.push(line(geom.bottom_bracket, geom.rear_axle, stay, frame));
    prims.push(line(geom.rear_axle, geom.seat_stay_joint, stay, frame));
    prims.push(line(geom.bottom_bracket, geom.head_bottom, d, frame));
    prims.push(line(geom.bottom_bracket, geom.seat_top, d, frame));
    prims.push(line(geom.seat_top, geom.head_top, d, frame));
    prims.push(line(geom.head_top, geom.head_bottom, 1.25 * d, frame));

    match params.fork_style {
        ForkStyle::Rigid => prims.push(line(geom.head_bottom, geom.front_axle, 0.8 * d, frame)),
        ForkStyle::Suspension => {
            let blade = geom.front_axle - geom.head_bottom;
            let across = blade.normalized().perp() * (style.suspension_gap / 2.0);
            let leg = 0.45 * d;
            prims.push(line(geom.head_bottom + across, geom.front_axle + across, leg, frame));
            prims.push(line(geom.head_bottom - across, geom.front_axle - across, leg, frame));
            let along = blade.normalized() * (0.9 * d);
            let wide = across * 1.6;
            let crown = [
                geom.head_bottom - wide,
                geom.head_bottom + wide,
                geom.head_bottom + wide + along,
                geom.head_bottom - wide + along,
            ];
            prims.push(Primitive::Polygon {
                points: crown.iter().map(|p| flip(*p)).collect(),
                fill: style.component_color,
                stroke: None,
            });
        }
    }

    let comp = Stroke {
        width: style.component_width,
        color: style.component_color,
    };
    prims.push(Primitive::Polyline {
        points: [geom.head_top, geom.stem_top, geom.handlebar].map(flip).to_vec(),
        stroke: comp.clone(),
    });
    let h = geom.handlebar;
    let dd = params.handlebar_drop;
    let bar: Vec<Vec2> = match params.handlebar_style {
        HandlebarStyle::Drop => vec![
            h,
            h + Vec2::new(80.0, 0.0),
            h + Vec2::new(110.0, -0.35 * dd),
            h + Vec2::new(90.0, -0.8 * dd),
            h + Vec2::new(40.0, -dd),
        ],
        HandlebarStyle::Flat => vec![h, h + Vec2::new(-0.5 * dd, 0.0)],
        HandlebarStyle::Riser => vec![
            h,
            h + Vec2::new(-0.2 * dd, 0.35 * dd),
            h + Vec2::new(-0.55 * dd, 0.35 * dd),
        ],
    };
    prims.push(Primitive::Polyline {
        points: bar.into_iter().map(flip).collect(),
        stroke: comp.clone(),
    });

    prims.push(line(geom.seat_top, geom.saddle, style.component_width, style.component_color));
    let (s, l, t) = (geom.saddle, params.saddle_length, style.saddle_thickness);
    let saddle = [
        s + Vec2::new(0.55 * l, 0.15 * t),
        s + Vec2::new(0.5 * l, 0.55 * t),
        s + Vec2::new(-0.3 * l, t),
        s + Vec2::new(-0.45 * l, 0.8 * t),
        s + Vec2::new(-0.45 * l, 0.2 * t),
        s + Vec2::new(-0.2 * l, 0.0),
    ];
    prims.push(Primitive::Polygon {
        points: saddle.iter().map(|p| flip(*p)).collect(),
        fill: style.component_color,
        stroke: None,
    });

    // fixed-size window standing on the ground line, centred on the wheelbase
    let cx = (geom.rear_axle.x + geom.front_axle.x) / 2.0;
    let bottom = -(geom.ground_y - GROUND_MARGIN);
    SvgScene {
        view_box: ViewBox {
            x: cx - VIEW_WIDTH / 2.0,
            y: bottom - VIEW_HEIGHT,
            width: VIEW_WIDTH,
            height: VIEW_HEIGHT,
        },
        background: style.background,
        primitives: prims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_for(p: &BikeParams) -> SvgScene {
        to_svg(&p.solve().unwrap(), p)
    }

    fn tire_circles(scene: &SvgScene, tire: Rgb8) -> Vec<f64> {
        scene
            .primitives
            .iter()
            .filter_map(|p| match p {
                Primitive::Circle { stroke: Some(s), .. } if s.color == tire => Some(s.width),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn two_tires_with_design_widths() {
        let p = BikeParams {
            tire_width_front: 31.0,
            tire_width_rear: 57.5,
            ..BikeParams::default()
        };
        let scene = scene_for(&p);
        assert_eq!(tire_circles(&scene, p.style.tire_color), vec![57.5, 31.0]);
    }

    #[test]
    fn frame_tubes_use_design_colour() {
        let p = BikeParams {
            frame_color: Rgb8::from_unit(1.0, 1.0, 0.0),
            ..BikeParams::default()
        };
        let scene = scene_for(&p);
        let tubes: Vec<&Primitive> = scene
            .primitives
            .iter()
            .filter(|q| matches!(q, Primitive::Line { .. }))
            .collect();
        // six tubes, one rigid blade, one seat post
        assert_eq!(tubes.len(), 8);
        for t in &tubes[..7] {
            assert_eq!(t.colors(), vec![Rgb8([255, 255, 0])]);
        }
        assert!(scene.to_svg_string(1070, 679).contains("stroke=\"#FFFF00\""));
    }

    #[test]
    fn suspension_fork_delta() {
        let rigid = BikeParams::default();
        let susp = BikeParams {
            fork_style: ForkStyle::Suspension,
            ..BikeParams::default()
        };
        assert_eq!(
            scene_for(&susp).primitives.len(),
            scene_for(&rigid).primitives.len() + SUSPENSION_FORK_EXTRA
        );
    }

    #[test]
    fn handlebar_glyphs_differ() {
        let mut counts = Vec::new();
        for style in [HandlebarStyle::Drop, HandlebarStyle::Flat, HandlebarStyle::Riser] {
            let p = BikeParams {
                handlebar_style: style,
                ..BikeParams::default()
            };
            let scene = scene_for(&p);
            let n = scene
                .primitives
                .iter()
                .filter_map(|q| match q {
                    Primitive::Polyline { points, .. } => Some(points.len()),
                    _ => None,
                })
                .nth(1)
                .unwrap();
            counts.push(n);
        }
        assert_eq!(counts, vec![5, 2, 3]);
    }

    #[test]
    fn scene_fits_in_view_box() {
        let p = BikeParams::default();
        let scene = scene_for(&p);
        let vb = scene.view_box;
        for prim in &scene.primitives {
            let pts: Vec<Vec2> = match prim {
                Primitive::Line { a, b, .. } => vec![*a, *b],
                Primitive::Circle { center, radius, .. } => vec![
                    *center + Vec2::new(*radius, *radius),
                    *center - Vec2::new(*radius, *radius),
                ],
                Primitive::Polyline { points, .. } | Primitive::Polygon { points, .. } => points.clone(),
            };
            for q in pts {
                assert!(q.x > vb.x && q.x < vb.x + vb.width);
                assert!(q.y > vb.y && q.y < vb.y + vb.height);
            }
        }
    }

    #[test]
    fn deterministic_svg_text() {
        let p = BikeParams::default();
        let a = scene_for(&p).to_svg_string(1070, 679);
        let b = scene_for(&p).to_svg_string(1070, 679);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(!a.contains("<path"));
    }
}
