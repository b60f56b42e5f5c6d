//! Edge-model memory footprint and desk-scale embedding approximation.

pub mod footprint;
pub mod sea;

use thiserror::Error;

pub use footprint::{
    activation_kib, footprint_table, layer_shapes, static_size_bytes, total_activation_kib, ConvStackSpec, LayerShape,
    PoolRounding, Quant,
};
pub use sea::{fit_linear_student, pca_fit, sea_objective, LinearStudent, PcaMap};

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("requested {requested} components but data rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("gram matrix condition number {condition:.3e} too large")]
    IllConditioned { condition: f64 },
}
