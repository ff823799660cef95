//! Parametric bicycle design generation, rendering, embedding and
//! surrogate-driven optimization.

pub mod cad;
pub mod constraints;
pub mod embed;
pub mod geom;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod render;
pub mod sampler;
pub mod schema;
pub mod surrogate;
