//! Pattern selection for structured latent attribute models.

pub mod analysis;
pub mod bench;
pub mod error;
pub mod estimation;
pub mod identifiability;
pub mod patterns;
pub mod pipeline;
pub mod response;
pub mod scalar;
pub mod screening;
pub mod simulation;

pub use error::{Result, SlamError};

pub type ThetaMatrixF64 = response::ThetaMatrix<f64>;
pub type ProportionsF64 = response::ProportionVector<f64>;
pub type TwoParamParamsF64 = response::TwoParamItemParams<f64>;
pub type AllEffectParamsF64 = response::AllEffectItemParams<f64>;
pub type FitResultF64 = estimation::FitResult<f64>;
pub type SolutionPathF64 = estimation::SolutionPath<f64>;
pub type ScreenResultF64 = screening::ScreenResult<f64>;
pub type PipelineResultF64 = pipeline::PipelineResult<f64>;
