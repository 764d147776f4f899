//! Evaluation metrics: component matching, clustering agreement, kernel
//! independence tests and response-prediction scores.

pub mod cluster;
pub mod hsic;
pub mod kci;
pub mod kernel;
pub mod mcc;
pub mod nmi;
pub mod report;
pub mod response;

pub use cluster::{cluster_labels, knn_graph, leiden, Graph};
pub use hsic::{hsic, HsicResult};
pub use kci::{kci_test, KciResult};
pub use mcc::{mcc, AssignmentResult, Correlation};
pub use nmi::{nmi, Nmi};
pub use report::{evaluate, EvalConfig, MetricsReport};
pub use response::{counterfactual_predict, deg_mse, r2_score, CounterfactualPrediction, DegReport, DegTest};
