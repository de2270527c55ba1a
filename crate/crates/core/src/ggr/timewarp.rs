use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::geodesic::{with_index, GeodesicModel, GeodesicProblem};
use super::{attach_r_squared, AffineMap, Curve, Dataset, FitConfig};
use crate::error::{Error, Result};
use crate::grassmann::{mat, GrassmannPoint};
use crate::optim::OptimConfig;
use crate::report::FitReport;
use crate::warp::{self, Refit, TimeWarp, WarpedProblem};

/// Geodesic in warped time `t = f(r; θ)`, anchored at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWarpedModel {
    /// Geodesic parameterized directly by warped time (identity normalization).
    pub geodesic: GeodesicModel,
    /// Warp in original units of `r`.
    pub warp: TimeWarp,
}

impl Curve for TimeWarpedModel {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        let t: Vec<f64> = r.iter().map(|&v| self.warp.eval(v)).collect();
        self.geodesic.evaluate_many(&t)
    }
}

struct TwProblem<'a> {
    data: &'a Dataset,
    config: &'a FitConfig,
    inner: OptimConfig,
}

impl<'a> TwProblem<'a> {
    fn geodesic(&self, times: &[f64]) -> GeodesicProblem<'a> {
        GeodesicProblem::new(self.data, times.to_vec(), self.config)
    }
}

impl WarpedProblem for TwProblem<'_> {
    type Model = Vec<DMatrix<f64>>;

    fn refit(&self, times: &[f64], warm: &Self::Model) -> Result<Refit<Self::Model>> {
        let (outcome, terms) = self.geodesic(times).solve(warm.clone(), &self.inner)?;
        Ok(Refit {
            model: outcome.x,
            energy: terms.energy(),
        })
    }

    fn energy(&self, model: &Self::Model, times: &[f64]) -> Result<f64> {
        Ok(self.geodesic(times).evaluate(model)?.energy())
    }

    fn sensitivity(&self, model: &Self::Model, times: &[f64]) -> Result<(f64, Vec<f64>)> {
        sensitivity(&self.geodesic(times), model)
    }
}

/// Energy and `∂E/∂tᵢ = −(2/σ²)⟨log_{X₁(tᵢ)} Yᵢ, Ẋ₁(tᵢ)⟩`.
fn sensitivity(problem: &GeodesicProblem<'_>, x: &[DMatrix<f64>]) -> Result<(f64, Vec<f64>)> {
    let fwd = problem.forward(x)?;
    let terms = problem.terms(x, &fwd);
    let scale = -2.0 / problem.sigma2;
    let dedt = fwd
        .mark_nodes
        .iter()
        .zip(&problem.targets)
        .enumerate()
        .map(|(i, (&k, y))| {
            let s = &fwd.states[k];
            let log = mat::log(&s[0], y).map_err(|e| with_index(e, i))?;
            Ok(scale * log.dot(&s[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((terms.energy(), dedt))
}

fn audit_problem<'a>(data: &'a Dataset, config: &'a FitConfig, model: &TimeWarpedModel) -> Result<TwProblem<'a>> {
    model.geodesic.validate()?;
    model.warp.validate()?;
    if model.geodesic.normalization != AffineMap::identity() {
        return Err(Error::InvalidArgument(
            "time-warped geodesic must be parameterized by warped time".into(),
        ));
    }
    Ok(TwProblem {
        data,
        config,
        inner: config.optim.clone(),
    })
}

fn model_blocks(model: &TimeWarpedModel) -> Vec<DMatrix<f64>> {
    vec![model.geodesic.x1.matrix().clone(), model.geodesic.x2.clone()]
}

/// Energy of `model` on `data` (geodesic and warp held fixed).
pub fn warp_energy(data: &Dataset, config: &FitConfig, model: &TimeWarpedModel) -> Result<f64> {
    let cfg = FitConfig {
        steps_per_unit: model.geodesic.steps_per_unit,
        ..config.clone()
    };
    let p = audit_problem(data, &cfg, model)?;
    let times = warp::warped_times(&model.warp, &data.r_values())?;
    p.energy(&model_blocks(model), &times)
}

/// Energy and its gradient in the warp parameters `(k, M)` (original units)
/// at a fixed geodesic.
pub fn warp_energy_gradient(data: &Dataset, config: &FitConfig, model: &TimeWarpedModel) -> Result<(f64, [f64; 2])> {
    let cfg = FitConfig {
        steps_per_unit: model.geodesic.steps_per_unit,
        ..config.clone()
    };
    let p = audit_problem(data, &cfg, model)?;
    let r = data.r_values();
    let times = warp::warped_times(&model.warp, &r)?;
    let (e, dedt) = p.sensitivity(&model_blocks(model), &times)?;
    Ok((e, warp::theta_gradient(&model.warp, &r, &dedt)))
}

/// Time-warped geodesic regression. `beta` and `m` of the warp stay fixed;
/// `(k, M)` are optimized. Without `warp_init` the warp starts centered at
/// the median location with warped times spread over `[0.05, 0.95]`.
pub fn fit_tw_ggr(
    data: &Dataset,
    config: &FitConfig,
    warp_init: Option<TimeWarp>,
) -> Result<(TimeWarpedModel, FitReport)> {
    config.validate()?;
    data.require_fit(2)?;
    let map = *data.normalization();
    let r = data.normalized_r();
    let warp0 = match warp_init {
        Some(w) => {
            w.validate()?;
            w.to_normalized(&map)
        }
        None => TimeWarp::spread_over(&r)?,
    };
    let first = &data.samples()[0].point;
    let x0 = vec![first.matrix().clone(), DMatrix::zeros(first.n(), first.p())];
    let problem = TwProblem {
        data,
        config,
        inner: OptimConfig {
            rel_tol: config.warp.inner_rel_tol,
            ..config.optim.clone()
        },
    };
    let alt = warp::alternate(&problem, &r, warp0, x0, &config.warp)?;
    let times = warp::warped_times(&alt.warp, &r)?;
    let terms = problem.geodesic(&times).evaluate(&alt.model)?;
    let model = TimeWarpedModel {
        geodesic: GeodesicModel {
            x1: GrassmannPoint::from_raw_unchecked(alt.model[0].clone()),
            x2: alt.model[1].clone(),
            normalization: AffineMap::identity(),
            steps_per_unit: config.steps_per_unit,
        },
        warp: alt.warp.from_normalized(&map),
    };
    let mut report = FitReport::new(terms.data, terms.regularity);
    report.iterations = alt.outer_iterations;
    report.converged = alt.converged;
    report.gradient_norm = alt.gradient_norm;
    report.energy_trace = alt.trace;
    report.warnings = alt.warnings;
    attach_r_squared(&mut report, data, terms.data * config.sigma2);
    Ok((model, report))
}
