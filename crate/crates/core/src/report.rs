use serde::{Deserialize, Serialize};

use crate::optim::StopReason;

/// Diagnostics produced by every fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `regularity_term + data_term`.
    pub energy: f64,
    pub data_term: f64,
    pub regularity_term: f64,
    /// `None` when the data have zero total variance.
    pub r_squared: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub gradient_norm: f64,
    /// Energy at the start and after every accepted step.
    pub energy_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitReport {
    pub(crate) fn new(data_term: f64, regularity_term: f64) -> Self {
        Self {
            energy: data_term + regularity_term,
            data_term,
            regularity_term,
            r_squared: None,
            iterations: 0,
            converged: false,
            stop: None,
            gradient_norm: 0.0,
            energy_trace: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub(crate) fn absorb(&mut self, outcome: &crate::optim::Outcome) {
        self.iterations = outcome.iterations;
        self.converged = outcome.converged;
        self.stop = Some(outcome.stop);
        self.gradient_norm = outcome.gradient_norm;
        self.energy_trace = outcome.trace.clone();
    }

    /// Merge per-piece reports (sums of energies and iterations).
    pub fn combine(reports: &[FitReport]) -> FitReport {
        let data: f64 = reports.iter().map(|r| r.data_term).sum();
        let reg: f64 = reports.iter().map(|r| r.regularity_term).sum();
        let mut out = FitReport::new(data, reg);
        out.iterations = reports.iter().map(|r| r.iterations).sum();
        out.converged = reports.iter().all(|r| r.converged);
        out.gradient_norm = reports.iter().map(|r| r.gradient_norm).fold(0.0, f64::max);
        out.warnings = reports.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
        out
    }
}
