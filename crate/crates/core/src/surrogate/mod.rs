//! Regressor from encoded design parameters to view-averaged embeddings.

pub mod io;
pub mod net;
pub mod train;

use thiserror::Error;

pub use io::{load_weights, save_weights, WeightsError};
pub use net::{grad, mse_loss, NetError, ResidualNet, Topology};
pub use train::{
    evaluate_split, split_indices, train, Dataset, EarlyStopping, Split, StopDecision, TrainConfig, TrainError,
    TrainReport,
};

use crate::embed::Embedding;
use crate::schema::{encode_real, DesignSchema, DesignVector, SchemaError};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("network output is not a finite 512-vector")]
    Output,
}

/// Raw network output for one design.
pub fn predict_raw(net: &ResidualNet, design: &DesignVector, schema: &DesignSchema) -> Result<Vec<f64>, SurrogateError> {
    Ok(net.forward(&encode_real(design, schema)?)?)
}

pub fn predict(net: &ResidualNet, design: &DesignVector, schema: &DesignSchema) -> Result<Embedding, SurrogateError> {
    let y = predict_raw(net, design, schema)?;
    Embedding::try_new(y.iter().map(|&v| v as f32).collect()).map_err(|_| SurrogateError::Output)
}
