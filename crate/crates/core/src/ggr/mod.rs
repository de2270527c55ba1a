//! Regression on G(p, n): geodesics, time-warped geodesics and cubic
//! splines, fitted by shooting with adjoint gradients.
//!
//! All fits work in normalized time `t = (r − r₀)/(r_{N−1} − r₀)`; models
//! carry the normalization so they are evaluated in the original units.

mod dataset;
mod geodesic;
mod piecewise;
mod spline;
mod timewarp;

use serde::{Deserialize, Serialize};

pub use dataset::{AffineMap, Dataset, Sample};
pub use geodesic::{
    evaluate_geodesic, fit_std_ggr, fit_std_ggr_from, geodesic_energy, geodesic_gradient, GeodesicModel,
};
pub use piecewise::{fit_piecewise_std_ggr, PiecewiseModel};
pub use spline::{fit_cs_ggr, fit_cs_ggr_from, spline_energy, spline_gradient, SplineModel};
pub use timewarp::{fit_tw_ggr, warp_energy, warp_energy_gradient, TimeWarpedModel};

use crate::error::{Error, Result};
use crate::grassmann::GrassmannPoint;
use crate::integrate::{State, DEFAULT_STEPS_PER_UNIT};
use crate::optim::OptimConfig;
use crate::report::FitReport;
use crate::shoot::{self, Dynamics, Reset};
use crate::warp::WarpSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Weight of the regularity term.
    pub alpha: f64,
    /// σ²; the data term is weighted by `1/σ²`.
    pub sigma2: f64,
    pub steps_per_unit: usize,
    pub optim: OptimConfig,
    /// Outer loop of the time-warped fit.
    pub warp: WarpSchedule,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            sigma2: 1.0,
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            optim: OptimConfig::default(),
            warp: WarpSchedule::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0 (got {})", self.alpha)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 must be > 0 (got {})", self.sigma2)));
        }
        if self.steps_per_unit == 0 {
            return Err(Error::InvalidArgument("steps_per_unit must be at least 1".into()));
        }
        self.optim.validate()?;
        self.warp.validate()
    }
}

/// A fitted curve that can be evaluated at values of the independent
/// variable in original units.
pub trait Curve {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>>;

    fn evaluate(&self, r: f64) -> Result<GrassmannPoint> {
        Ok(self.evaluate_many(&[r])?.remove(0))
    }
}

/// Any of the fitted model kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Std(GeodesicModel),
    Tw(TimeWarpedModel),
    Cs(SplineModel),
    Piecewise(PiecewiseModel),
}

impl FittedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::Std(_) => "std",
            FittedModel::Tw(_) => "tw",
            FittedModel::Cs(_) => "cs",
            FittedModel::Piecewise(_) => "piecewise",
        }
    }
}

impl Curve for FittedModel {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        match self {
            FittedModel::Std(m) => m.evaluate_many(r),
            FittedModel::Tw(m) => m.evaluate_many(r),
            FittedModel::Cs(m) => m.evaluate_many(r),
            FittedModel::Piecewise(m) => m.evaluate_many(r),
        }
    }
}

/// Fill `report.r_squared` from the fitted residuals; left `None` when the
/// data have zero variance.
pub(crate) fn attach_r_squared(report: &mut FitReport, data: &Dataset, residual: f64) {
    report.r_squared = match crate::eval::total_variance(&data.points()) {
        Ok(total) if total > 0.0 => Some(1.0 - residual / total),
        _ => None,
    };
}

/// States at normalized locations `t`: forward from 0 over `[0, max(1, t)]`
/// (the grid the fits use) and backward from 0 for negative locations.
pub(crate) fn sample_states<D: Dynamics + ?Sized>(
    dynamics: &D,
    x0: State,
    steps_per_unit: usize,
    t: &[f64],
    resets: &[Reset],
) -> Result<Vec<State>> {
    if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("cannot evaluate at {bad}")));
    }
    let pos: Vec<f64> = t.iter().copied().filter(|&v| v >= 0.0).collect();
    let neg: Vec<f64> = t.iter().copied().filter(|&v| v < 0.0).collect();
    let end = pos.iter().copied().fold(1.0, f64::max);
    let fwd = shoot::forward(dynamics, x0.clone(), 0.0, end, steps_per_unit, &pos, resets)?;
    let bwd = if neg.is_empty() {
        None
    } else {
        let start = neg.iter().copied().fold(0.0, f64::min);
        Some(shoot::forward(dynamics, x0, 0.0, start, steps_per_unit, &neg, &[])?)
    };
    let (mut ip, mut ineg) = (0, 0);
    Ok(t.iter()
        .map(|&v| {
            if v >= 0.0 {
                ip += 1;
                fwd.states[fwd.mark_nodes[ip - 1]].clone()
            } else {
                ineg += 1;
                let b = bwd.as_ref().expect("backward pass for negative locations");
                b.states[b.mark_nodes[ineg - 1]].clone()
            }
        })
        .collect())
}
