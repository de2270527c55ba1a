use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{attach_r_squared, sample_states, AffineMap, Curve, Dataset, FitConfig};
use crate::error::{Error, Result};
use crate::grassmann::{mat, matrix_serde, GrassmannPoint, TangentVector, TOL_ORTH};
use crate::integrate::State;
use crate::optim::{self, BlockKind, Objective, OptimConfig, Outcome};
use crate::report::FitReport;
use crate::shoot::{self, Dynamics, Forward};

/// Initial point and velocity of a geodesic in normalized time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicModel {
    pub x1: GrassmannPoint,
    #[serde(with = "matrix_serde")]
    pub x2: DMatrix<f64>,
    pub normalization: AffineMap,
    pub steps_per_unit: usize,
}

impl GeodesicModel {
    pub fn new(velocity: TangentVector, normalization: AffineMap, steps_per_unit: usize) -> Self {
        Self {
            x1: velocity.base().clone(),
            x2: velocity.matrix().clone(),
            normalization,
            steps_per_unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x2.shape() != self.x1.matrix().shape() {
            return Err(Error::DimensionMismatch("velocity shape differs from point".into()));
        }
        let h = self.x1.matrix().tr_mul(&self.x2).norm();
        if !(h < TOL_ORTH * (1.0 + self.x2.norm())) {
            return Err(Error::InvalidArgument(format!(
                "velocity is not horizontal: |X1ᵀX2| = {h:.3e}"
            )));
        }
        if self.steps_per_unit == 0 {
            return Err(Error::InvalidArgument("steps_per_unit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn initial_velocity(&self) -> TangentVector {
        TangentVector::from_raw_unchecked(self.x1.clone(), self.x2.clone())
    }

    /// Point at `r` from the closed-form exponential.
    pub fn evaluate_closed(&self, r: f64) -> Result<GrassmannPoint> {
        let t = self.normalization.apply(r);
        let (y, _) = mat::geodesic(self.x1.matrix(), &self.x2, t);
        crate::grassmann::retract(&y)
    }

    /// Point and velocity (per unit of normalized time) at `r`, closed form.
    pub fn state_closed(&self, r: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        mat::geodesic(self.x1.matrix(), &self.x2, self.normalization.apply(r))
    }

    /// Same curve parameterized with another normalization.
    pub fn renormalized(&self, map: AffineMap) -> Result<Self> {
        let origin = map.invert(0.0);
        let (y, v) = self.state_closed(origin);
        let x1 = crate::grassmann::retract(&y)?;
        // d t_old / d t_new
        let rate = self.normalization.scale / map.scale;
        let x2 = mat::project_horizontal(x1.matrix(), &(v * rate));
        Ok(Self {
            x1,
            x2,
            normalization: map,
            steps_per_unit: self.steps_per_unit,
        })
    }
}

impl Curve for GeodesicModel {
    /// Integrates the geodesic equation on the same grid the fit uses.
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        let t: Vec<f64> = r.iter().map(|&v| self.normalization.apply(v)).collect();
        let states = sample_states(
            &GeodesicDynamics,
            vec![self.x1.matrix().clone(), self.x2.clone()],
            self.steps_per_unit,
            &t,
            &[],
        )?;
        states
            .into_iter()
            .map(|s| crate::grassmann::retract(&s[0]))
            .collect()
    }
}

/// Point on the fitted geodesic at `r` (original units).
pub fn evaluate_geodesic(model: &GeodesicModel, r: f64) -> Result<GrassmannPoint> {
    model.evaluate(r)
}

/// `Ẋ₁ = X₂, Ẋ₂ = −X₁X₂ᵀX₂`.
pub(crate) struct GeodesicDynamics;

impl Dynamics for GeodesicDynamics {
    fn rhs(&self, x: &State) -> State {
        let gram = x[1].tr_mul(&x[1]);
        vec![x[1].clone(), -(&x[0] * gram)]
    }

    fn adjoint_rhs(&self, x: &State, lam: &State) -> State {
        let (x1, x2) = (&x[0], &x[1]);
        let (l1, l2) = (&lam[0], &lam[1]);
        let gram = x2.tr_mul(x2);
        let sym = l2.tr_mul(x1) + x1.tr_mul(l2);
        vec![l2 * gram, -l1 + x2 * sym]
    }
}

/// Std-GGR energy on fixed data locations in normalized time.
pub(crate) struct GeodesicProblem<'a> {
    pub targets: Vec<&'a DMatrix<f64>>,
    pub times: Vec<f64>,
    pub alpha: f64,
    pub sigma2: f64,
    pub steps_per_unit: usize,
}

const KINDS: [BlockKind; 2] = [BlockKind::Point, BlockKind::Horizontal];

pub(crate) struct Terms {
    pub data: f64,
    pub regularity: f64,
}

impl Terms {
    pub fn energy(&self) -> f64 {
        self.data + self.regularity
    }
}

impl<'a> GeodesicProblem<'a> {
    pub fn new(data: &'a Dataset, times: Vec<f64>, config: &FitConfig) -> Self {
        Self {
            targets: data.samples().iter().map(|s| s.point.matrix()).collect(),
            times,
            alpha: config.alpha,
            sigma2: config.sigma2,
            steps_per_unit: config.steps_per_unit,
        }
    }

    pub fn forward(&self, x: &[DMatrix<f64>]) -> Result<Forward> {
        let end = self.times.iter().copied().fold(1.0, f64::max);
        shoot::forward(
            &GeodesicDynamics,
            x.to_vec(),
            0.0,
            end,
            self.steps_per_unit,
            &self.times,
            &[],
        )
    }

    pub fn terms(&self, x: &[DMatrix<f64>], fwd: &Forward) -> Terms {
        let data: f64 = fwd
            .mark_nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, y)| mat::distance_sq(&fwd.states[k][0], y))
            .sum();
        Terms {
            data: data / self.sigma2,
            regularity: self.alpha * x[1].norm_squared(),
        }
    }

    pub fn evaluate(&self, x: &[DMatrix<f64>]) -> Result<Terms> {
        let fwd = self.forward(x)?;
        Ok(self.terms(x, &fwd))
    }

    /// Energy terms and the gradients in (X₁(0), X₂(0)).
    pub fn gradient(&self, x: &[DMatrix<f64>]) -> Result<(Terms, Vec<DMatrix<f64>>)> {
        let fwd = self.forward(x)?;
        let terms = self.terms(x, &fwd);
        let at = shoot::bucket(fwd.nodes.len(), &fwd.mark_nodes);
        let zero = DMatrix::zeros(x[0].nrows(), x[0].ncols());
        let scale = 2.0 / self.sigma2;
        let lam = shoot::backward(&GeodesicDynamics, &fwd, vec![zero.clone(), zero], |k, s, lam| {
            for &i in &at[k] {
                let log = mat::log(&s[0], self.targets[i]).map_err(|e| with_index(e, i))?;
                lam[0] += log * scale;
            }
            Ok(())
        })?;
        let (x1, x2) = (&x[0], &x[1]);
        let g1 = -mat::project_horizontal(x1, &lam[0]) + x2 * lam[1].tr_mul(x1);
        let g2 = x2 * (2.0 * self.alpha) - mat::project_horizontal(x1, &lam[1]);
        Ok((terms, vec![g1, g2]))
    }

    pub fn solve(&self, x0: Vec<DMatrix<f64>>, optim: &OptimConfig) -> Result<(Outcome, Terms)> {
        let outcome = optim::minimize(self, x0, optim)?;
        let terms = self.evaluate(&outcome.x)?;
        Ok((outcome, terms))
    }
}

pub(crate) fn with_index(e: Error, i: usize) -> Error {
    match e {
        Error::CutLocus { angle, .. } => Error::CutLocus { index: Some(i), angle },
        other => other,
    }
}

impl Objective for GeodesicProblem<'_> {
    fn kinds(&self) -> &[BlockKind] {
        &KINDS
    }

    fn energy(&self, x: &[DMatrix<f64>]) -> Result<f64> {
        Ok(self.evaluate(x)?.energy())
    }

    fn energy_and_gradient(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        let (terms, g) = self.gradient(x)?;
        Ok((terms.energy(), g))
    }
}

fn check_model(data: &Dataset, model: &GeodesicModel) -> Result<()> {
    model.validate()?;
    if model.x1.n() != data.n() || model.x1.p() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "model lies in G({}, {}), data in G({}, {})",
            model.x1.p(),
            model.x1.n(),
            data.p(),
            data.n()
        )));
    }
    Ok(())
}

fn model_times(data: &Dataset, model: &GeodesicModel) -> Vec<f64> {
    data.r_values().iter().map(|&r| model.normalization.apply(r)).collect()
}

/// `(data term, regularity term)` of `model` on `data`.
pub fn geodesic_energy(data: &Dataset, config: &FitConfig, model: &GeodesicModel) -> Result<(f64, f64)> {
    check_model(data, model)?;
    let cfg = FitConfig {
        steps_per_unit: model.steps_per_unit,
        ..config.clone()
    };
    let problem = GeodesicProblem::new(data, model_times(data, model), &cfg);
    let t = problem.evaluate(&[model.x1.matrix().clone(), model.x2.clone()])?;
    Ok((t.data, t.regularity))
}

/// Energy and adjoint gradients `[∇_{X₁(0)}E, ∇_{X₂(0)}E]` of `model` on `data`.
pub fn geodesic_gradient(
    data: &Dataset,
    config: &FitConfig,
    model: &GeodesicModel,
) -> Result<(f64, [DMatrix<f64>; 2])> {
    check_model(data, model)?;
    let cfg = FitConfig {
        steps_per_unit: model.steps_per_unit,
        ..config.clone()
    };
    let problem = GeodesicProblem::new(data, model_times(data, model), &cfg);
    let (t, mut g) = problem.gradient(&[model.x1.matrix().clone(), model.x2.clone()])?;
    let g2 = g.pop().expect("two blocks");
    let g1 = g.pop().expect("two blocks");
    Ok((t.energy(), [g1, g2]))
}

/// Standard geodesic regression started from `X₁ = Y₀`, `X₂ = 0`.
pub fn fit_std_ggr(data: &Dataset, config: &FitConfig) -> Result<(GeodesicModel, FitReport)> {
    let first = &data.samples()[0].point;
    let init = GeodesicModel {
        x1: first.clone(),
        x2: DMatrix::zeros(first.n(), first.p()),
        normalization: *data.normalization(),
        steps_per_unit: config.steps_per_unit,
    };
    fit_std_ggr_from(data, config, &init)
}

/// Standard geodesic regression warm-started from `init`.
pub fn fit_std_ggr_from(
    data: &Dataset,
    config: &FitConfig,
    init: &GeodesicModel,
) -> Result<(GeodesicModel, FitReport)> {
    config.validate()?;
    data.require_fit(2)?;
    check_model(data, init)?;
    let init = if init.normalization != *data.normalization() {
        init.renormalized(*data.normalization())?
    } else {
        init.clone()
    };
    let problem = GeodesicProblem::new(data, data.normalized_r(), config);
    let (outcome, terms) = problem.solve(vec![init.x1.matrix().clone(), init.x2.clone()], &config.optim)?;
    let x1 = GrassmannPoint::from_raw_unchecked(outcome.x[0].clone());
    let model = GeodesicModel {
        x2: outcome.x[1].clone(),
        x1,
        normalization: *data.normalization(),
        steps_per_unit: config.steps_per_unit,
    };
    let mut report = FitReport::new(terms.data, terms.regularity);
    report.absorb(&outcome);
    attach_r_squared(&mut report, data, terms.data * config.sigma2);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{exp_map_closed, geodesic_distance};
    use crate::random::{random_point, random_tangent, rng};

    fn geodesic_data(seed: u64, n: usize, p: usize, count: usize) -> (Dataset, TangentVector) {
        let mut g = rng(seed);
        let y0 = random_point(&mut g, n, p);
        let v = random_tangent(&mut g, &y0, 0.8);
        let r: Vec<f64> = (0..count).map(|i| 2.0 + 3.0 * i as f64 / (count - 1) as f64).collect();
        let pts = r
            .iter()
            .map(|&ri| exp_map_closed(&v.scaled((ri - 2.0) / 3.0)).unwrap())
            .collect();
        (Dataset::from_parts(&r, pts).unwrap(), v)
    }

    #[test]
    fn recovers_noise_free_geodesic() {
        let (data, truth) = geodesic_data(11, 6, 2, 10);
        let (model, report) = fit_std_ggr(&data, &FitConfig::default()).unwrap();
        assert!(report.data_term < 1e-8, "{report:?}");
        assert!(geodesic_distance(&model.x1, truth.base()).unwrap() < 1e-6);
        assert!(report.energy_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!((report.energy - report.data_term - report.regularity_term).abs() < 1e-12);
        assert!(report.r_squared.unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn two_points_are_interpolated() {
        let mut g = rng(5);
        let a = random_point(&mut g, 5, 2);
        let b = exp_map_closed(&random_tangent(&mut g, &a, 1.0)).unwrap();
        let data = Dataset::from_parts(&[0.0, 1.0], vec![a, b.clone()]).unwrap();
        let (model, report) = fit_std_ggr(&data, &FitConfig::default()).unwrap();
        assert!(report.data_term < 1e-8);
        assert!(geodesic_distance(&model.evaluate(1.0).unwrap(), &b).unwrap() < 1e-4);
    }

    #[test]
    fn ode_and_closed_form_evaluation_agree() {
        let (data, _) = geodesic_data(3, 6, 2, 6);
        let (model, _) = fit_std_ggr(&data, &FitConfig::default()).unwrap();
        let r: Vec<f64> = (0..50).map(|i| 2.0 + 3.0 * i as f64 / 49.0).collect();
        let ode = model.evaluate_many(&r).unwrap();
        for (ri, p) in r.iter().zip(&ode) {
            let c = model.evaluate_closed(*ri).unwrap();
            assert!(geodesic_distance(p, &c).unwrap() < 1e-6);
        }
        assert!(geodesic_distance(&model.evaluate(2.0).unwrap(), &model.x1).unwrap() < 1e-12);
    }

    #[test]
    fn renormalization_preserves_the_curve() {
        let (data, _) = geodesic_data(8, 5, 2, 5);
        let (model, _) = fit_std_ggr(&data, &FitConfig::default()).unwrap();
        let other = model
            .renormalized(AffineMap {
                offset: 1.0,
                scale: 0.5,
            })
            .unwrap();
        for r in [1.5, 2.0, 3.3, 5.0, 6.0] {
            let a = model.evaluate_closed(r).unwrap();
            let b = other.evaluate_closed(r).unwrap();
            assert!(geodesic_distance(&a, &b).unwrap() < 1e-10);
        }
    }

    #[test]
    fn rejects_single_location() {
        let mut g = rng(1);
        let a = random_point(&mut g, 4, 1);
        let b = random_point(&mut g, 4, 1);
        let data = Dataset::from_parts(&[1.0, 1.0], vec![a, b]).unwrap();
        assert!(matches!(fit_std_ggr(&data, &FitConfig::default()), Err(Error::Degenerate(_))));
    }
}
