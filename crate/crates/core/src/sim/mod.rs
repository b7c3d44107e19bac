//! Synthetic data: structured covariances, matrix-normal draws, the
//! subject-level generative model and the null calibration study.

pub mod cov;
pub mod lhs;
pub mod matnorm;
pub mod model;
pub mod study;

pub use cov::{build_cov, CovKind, CovSpec};
pub use matnorm::{matnorm_sample, MatrixNormal};
pub use model::{simulate_dataset, simulate_preset, simulate_subject, Preset, SimSpec, SubjectDraw};
pub use study::{null_study, NullStudy, NullStudyConfig, PTest};
