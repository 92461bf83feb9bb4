//! Imbalanced binary classification and anomaly detection, with a synthetic
//! herd-disease panel simulator and a benchmark harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below name the common instantiations.

pub mod anomaly;
pub mod balance;
pub mod bench;
pub mod dataio;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod herdgraph;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod scalar;
pub mod seed;
pub mod simgen;
pub mod svm;

pub use anomaly::{AnomalyScores, Detector, DetectorKind, DetectorParams, RobustLocation};
pub use balance::{ClassWeights, ResampleMode, ResamplePlan};
pub use bench::{ScenarioConfig, ScenarioReport};
pub use dataio::{CsvSchema, Dataset, RowOrigin, Standardizer};
pub use ensembles::{DecisionTree, ForestModel, GbtModel};
pub use error::{Error, Result};
pub use eval::{FoldPlan, Learner, Strategy};
pub use herdgraph::{Centrality, NeighborGraph};
pub use linear::{LinearModel, LinearParams, Penalty};
pub use matrix::Matrix;
pub use metrics::{ConfusionMatrix, Metric, MetricSummary};
pub use scalar::Scalar;
pub use simgen::{HerdYearRecord, PanelData, SimConfig};
pub use svm::{KernelSpec, SvmModel};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type LinearModel64 = LinearModel<f64>;
pub type LinearModel32 = LinearModel<f32>;
pub type ForestModel64 = ForestModel<f64>;
pub type ForestModel32 = ForestModel<f32>;
pub type GbtModel64 = GbtModel<f64>;
pub type GbtModel32 = GbtModel<f32>;
pub type SvmModel64 = SvmModel<f64>;
pub type SvmModel32 = SvmModel<f32>;
pub type AnomalyScores64 = AnomalyScores<f64>;
pub type AnomalyScores32 = AnomalyScores<f32>;
