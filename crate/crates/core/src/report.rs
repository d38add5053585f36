use serde::{Deserialize, Serialize};

/// Evaluation summary for a model (or an averaged model set).
/// `attributability` is `None` when only a single model was evaluated and the
/// one-hot attribution rule is not meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub distinguishability: f64,
    pub attributability: Option<f64>,
    pub perturbation_norm: f64,
    pub samples_used: usize,
    pub seed: u64,
}
