//! Knowledge-base construction, retrieval, and evaluation for style-conditioned
//! graphic-design improvement.

pub mod apportion;
mod binfmt;
pub mod config;
pub mod evaluate;
pub mod gateway;
pub mod grad;
pub mod ingest;
pub mod knowledge;
pub mod matrix;
pub mod partition;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod scalar;
pub mod synthetic;

pub use scalar::Scalar;

pub type DistanceMatrix64 = grad::DistanceMatrix<f64>;
pub type DistanceMatrix32 = grad::DistanceMatrix<f32>;
pub type PatchGraph64 = grad::PatchGraph<f64>;
pub type PatchGraph32 = grad::PatchGraph<f32>;
pub type PatchEmbeddings64 = ingest::PatchEmbeddings<f64>;
pub type PatchEmbeddings32 = ingest::PatchEmbeddings<f32>;
pub type GradOutcome64 = grad::GradOutcome<f64>;
