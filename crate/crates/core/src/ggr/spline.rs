use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::geodesic::{with_index, GeodesicModel, Terms};
use super::{attach_r_squared, sample_states, AffineMap, Curve, Dataset, FitConfig};
use crate::error::{Error, Result};
use crate::grassmann::{mat, matrix_serde, GrassmannPoint, TOL_ORTH};
use crate::integrate::State;
use crate::optim::{self, BlockKind, Objective};
use crate::report::FitReport;
use crate::shoot::{self, Dynamics, Forward, Reset};

/// Initial conditions of a Riemannian cubic spline in normalized time.
///
/// `X₄` is replaced by `x4_segments[c]` at `control_points[c]`; `X₁..X₃` stay
/// continuous there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub x1: GrassmannPoint,
    #[serde(with = "matrix_serde")]
    pub x2: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub x3: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub x4: DMatrix<f64>,
    /// Control points in original units, strictly increasing.
    pub control_points: Vec<f64>,
    #[serde(with = "matrix_serde::vec")]
    pub x4_segments: Vec<DMatrix<f64>>,
    pub normalization: AffineMap,
    pub steps_per_unit: usize,
}

impl SplineModel {
    /// Spline with zero forcing that traces `geodesic`.
    pub fn from_geodesic(geodesic: &GeodesicModel, control_points: &[f64]) -> Self {
        let zero = DMatrix::zeros(geodesic.x1.n(), geodesic.x1.p());
        Self {
            x1: geodesic.x1.clone(),
            x2: geodesic.x2.clone(),
            x3: zero.clone(),
            x4: zero.clone(),
            control_points: control_points.to_vec(),
            x4_segments: vec![zero; control_points.len()],
            normalization: geodesic.normalization,
            steps_per_unit: geodesic.steps_per_unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.x1.matrix().shape();
        let blocks = [&self.x2, &self.x3, &self.x4];
        if blocks.iter().any(|b| b.shape() != shape) || self.x4_segments.iter().any(|b| b.shape() != shape) {
            return Err(Error::DimensionMismatch("spline blocks differ in shape".into()));
        }
        if self.x4_segments.len() != self.control_points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} X4 segments for {} control points",
                self.x4_segments.len(),
                self.control_points.len()
            )));
        }
        for (name, b) in [("X2", &self.x2), ("X3", &self.x3)] {
            let h = self.x1.matrix().tr_mul(b).norm();
            if !(h < TOL_ORTH * (1.0 + b.norm())) {
                return Err(Error::InvalidArgument(format!("{name} is not horizontal: {h:.3e}")));
            }
        }
        if self.steps_per_unit == 0 {
            return Err(Error::InvalidArgument("steps_per_unit must be at least 1".into()));
        }
        check_controls(&self.normalized_controls())
    }

    pub(crate) fn normalized_controls(&self) -> Vec<f64> {
        self.control_points.iter().map(|&c| self.normalization.apply(c)).collect()
    }

    fn blocks(&self) -> Vec<DMatrix<f64>> {
        let mut x = vec![
            self.x1.matrix().clone(),
            self.x2.clone(),
            self.x3.clone(),
            self.x4.clone(),
        ];
        x.extend(self.x4_segments.iter().cloned());
        x
    }

    /// `X₄(r_c⁺) − X₄(r_c⁻)` at every control point.
    pub fn x4_jumps(&self) -> Result<Vec<DMatrix<f64>>> {
        let dynamics = SplineDynamics { alpha: 0.0 };
        let controls = self.normalized_controls();
        let resets = resets(&controls, &self.x4_segments);
        let fwd = shoot::forward(
            &dynamics,
            initial_state(&self.blocks()),
            0.0,
            1.0f64.max(controls.iter().copied().fold(0.0, f64::max)),
            self.steps_per_unit,
            &[],
            &resets,
        )?;
        Ok(fwd
            .reset_nodes
            .iter()
            .map(|&k| &fwd.states[k][3] - &fwd.arrivals[k].as_ref().expect("reset fired")[3])
            .collect())
    }
}

impl Curve for SplineModel {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        let t: Vec<f64> = r.iter().map(|&v| self.normalization.apply(v)).collect();
        let controls = self.normalized_controls();
        let states = sample_states(
            &SplineDynamics { alpha: 0.0 },
            initial_state(&self.blocks()),
            self.steps_per_unit,
            &t,
            &resets(&controls, &self.x4_segments),
        )?;
        states
            .into_iter()
            .map(|s| crate::grassmann::retract(&s[0]))
            .collect()
    }
}

fn check_controls(controls: &[f64]) -> Result<()> {
    for (i, &c) in controls.iter().enumerate() {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "control point {i} lies outside the open data range"
            )));
        }
        if i > 0 && !(c > controls[i - 1]) {
            return Err(Error::InvalidArgument("control points must be strictly increasing".into()));
        }
    }
    Ok(())
}

fn resets(controls: &[f64], segments: &[DMatrix<f64>]) -> Vec<Reset> {
    controls
        .iter()
        .zip(segments)
        .map(|(&t, v)| Reset {
            t,
            component: 3,
            value: v.clone(),
        })
        .collect()
}

/// `[X₁, X₂, X₃, X₄, ∫α tr X₃ᵀX₃]` from the parameter blocks.
fn initial_state(blocks: &[DMatrix<f64>]) -> State {
    let mut x: State = blocks[..4].to_vec();
    x.push(DMatrix::zeros(1, 1));
    x
}

/// Four-state cubic dynamics plus the running regularity integral.
pub(crate) struct SplineDynamics {
    pub alpha: f64,
}

impl Dynamics for SplineDynamics {
    fn rhs(&self, x: &State) -> State {
        let (x1, x2, x3, x4) = (&x[0], &x[1], &x[2], &x[3]);
        let g22 = x2.tr_mul(x2);
        let f2 = x3 - x1 * &g22;
        let f3 = -x4 + x1 * x1.tr_mul(x4) - x1 * x2.tr_mul(x3);
        let f4 = x3 * &g22 + x2 * x4.tr_mul(x1) - x2 * x3.tr_mul(x2);
        let acc = DMatrix::from_element(1, 1, self.alpha * x3.norm_squared());
        vec![x2.clone(), f2, f3, f4, acc]
    }

    fn adjoint_rhs(&self, x: &State, lam: &State) -> State {
        let (x1, x2, x3, x4) = (&x[0], &x[1], &x[2], &x[3]);
        let (l1, l2, l3, l4) = (&lam[0], &lam[1], &lam[2], &lam[3]);
        let g22 = x2.tr_mul(x2);
        // X₁ᵀλ₃ + λ₄ᵀX₂ and its transpose
        let a = x1.tr_mul(l3) + l4.tr_mul(x2);
        let at = a.transpose();
        let d1 = l2 * &g22 - l3 * (x4.tr_mul(x1) - x3.tr_mul(x2)) - x4 * &at;
        let d2 = -l1
            + x2 * (l2.tr_mul(x1) + x1.tr_mul(l2) - l4.tr_mul(x3) - x3.tr_mul(l4))
            + x3 * &at
            + l4 * (x2.tr_mul(x3) - x1.tr_mul(x4));
        let d3 = -l2 - l4 * &g22 + x2 * &a + x3 * (2.0 * self.alpha);
        let d4 = l3 - x1 * &a;
        vec![d1, d2, d3, d4]
    }
}

pub(crate) struct SplineProblem<'a> {
    targets: Vec<&'a DMatrix<f64>>,
    times: Vec<f64>,
    controls: Vec<f64>,
    sigma2: f64,
    steps_per_unit: usize,
    dynamics: SplineDynamics,
    kinds: Vec<BlockKind>,
}

impl<'a> SplineProblem<'a> {
    fn new(data: &'a Dataset, map: &AffineMap, controls: Vec<f64>, config: &FitConfig) -> Self {
        let mut kinds = vec![
            BlockKind::Point,
            BlockKind::Horizontal,
            BlockKind::Horizontal,
            BlockKind::Free,
        ];
        kinds.extend(std::iter::repeat(BlockKind::Free).take(controls.len()));
        Self {
            targets: data.samples().iter().map(|s| s.point.matrix()).collect(),
            times: data.r_values().iter().map(|&r| map.apply(r)).collect(),
            controls,
            sigma2: config.sigma2,
            steps_per_unit: config.steps_per_unit,
            dynamics: SplineDynamics { alpha: config.alpha },
            kinds,
        }
    }

    fn forward(&self, x: &[DMatrix<f64>]) -> Result<Forward> {
        let end = self.times.iter().copied().fold(1.0, f64::max);
        shoot::forward(
            &self.dynamics,
            initial_state(x),
            0.0,
            end,
            self.steps_per_unit,
            &self.times,
            &resets(&self.controls, &x[4..]),
        )
    }

    fn terms(&self, fwd: &Forward) -> Terms {
        let data: f64 = fwd
            .mark_nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, y)| mat::distance_sq(&fwd.states[k][0], y))
            .sum();
        let last = fwd.states.last().expect("nonempty trajectory");
        Terms {
            data: data / self.sigma2,
            regularity: last[4][(0, 0)],
        }
    }

    fn evaluate(&self, x: &[DMatrix<f64>]) -> Result<Terms> {
        Ok(self.terms(&self.forward(x)?))
    }

    fn gradient(&self, x: &[DMatrix<f64>]) -> Result<(Terms, Vec<DMatrix<f64>>)> {
        let fwd = self.forward(x)?;
        let terms = self.terms(&fwd);
        let data_at = shoot::bucket(fwd.nodes.len(), &fwd.mark_nodes);
        let control_at = shoot::bucket(fwd.nodes.len(), &fwd.reset_nodes);
        let zero = DMatrix::zeros(x[0].nrows(), x[0].ncols());
        let scale = 2.0 / self.sigma2;
        let mut control_grads = vec![zero.clone(); self.controls.len()];
        let lam = shoot::backward(&self.dynamics, &fwd, vec![zero; 4], |k, s, lam| {
            for &i in &data_at[k] {
                let log = mat::log(&s[0], self.targets[i]).map_err(|e| with_index(e, i))?;
                lam[0] += log * scale;
            }
            for &c in &control_at[k] {
                control_grads[c] = -&lam[3];
                lam[3].fill(0.0);
            }
            Ok(())
        })?;
        let (x1, x2, x3) = (&x[0], &x[1], &x[2]);
        let g1 = -mat::project_horizontal(x1, &lam[0]) + x2 * lam[1].tr_mul(x1) + x3 * lam[2].tr_mul(x1);
        let g2 = -mat::project_horizontal(x1, &lam[1]);
        let g3 = -mat::project_horizontal(x1, &lam[2]);
        let g4 = -&lam[3];
        let mut g = vec![g1, g2, g3, g4];
        g.extend(control_grads);
        Ok((terms, g))
    }
}

/// `M − Y·sym(YᵀM)`.
fn drop_symmetric_vertical(y: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let b = y.tr_mul(m);
    m - y * ((&b + b.transpose()) * 0.5)
}

impl SplineProblem<'_> {
    /// Adding `X₁·S` with `S` symmetric to `X₄` leaves `X₁, X₂, X₃` and the
    /// energy unchanged, so that component is never pinned down by the fit.
    /// Remove it from `X₄(0)` and from every segment at its control point.
    fn without_gauge(&self, x: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let fwd = self.forward(x)?;
        let mut out = x.to_vec();
        out[3] = drop_symmetric_vertical(&x[0], &x[3]);
        for (c, &k) in fwd.reset_nodes.iter().enumerate() {
            out[4 + c] = drop_symmetric_vertical(&fwd.states[k][0], &x[4 + c]);
        }
        Ok(out)
    }
}

impl Objective for SplineProblem<'_> {
    fn kinds(&self) -> &[BlockKind] {
        &self.kinds
    }

    fn energy(&self, x: &[DMatrix<f64>]) -> Result<f64> {
        Ok(self.evaluate(x)?.energy())
    }

    fn energy_and_gradient(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        let (t, g) = self.gradient(x)?;
        Ok((t.energy(), g))
    }
}

fn check_model(data: &Dataset, model: &SplineModel) -> Result<()> {
    model.validate()?;
    if model.x1.n() != data.n() || model.x1.p() != data.p() {
        return Err(Error::DimensionMismatch("spline and data dimensions differ".into()));
    }
    Ok(())
}

fn audit_problem<'a>(data: &'a Dataset, config: &FitConfig, model: &SplineModel) -> Result<SplineProblem<'a>> {
    check_model(data, model)?;
    let cfg = FitConfig {
        steps_per_unit: model.steps_per_unit,
        ..config.clone()
    };
    Ok(SplineProblem::new(data, &model.normalization, model.normalized_controls(), &cfg))
}

/// `(data term, regularity term)` of `model` on `data`.
pub fn spline_energy(data: &Dataset, config: &FitConfig, model: &SplineModel) -> Result<(f64, f64)> {
    let t = audit_problem(data, config, model)?.evaluate(&model.blocks())?;
    Ok((t.data, t.regularity))
}

/// Energy and adjoint gradients for `[X₁(0), X₂(0), X₃(0), X₄(0), X₄(r_c⁺)…]`.
pub fn spline_gradient(
    data: &Dataset,
    config: &FitConfig,
    model: &SplineModel,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    let (t, g) = audit_problem(data, config, model)?.gradient(&model.blocks())?;
    Ok((t.energy(), g))
}

/// Cubic-spline regression started from `X₁ = Y₀` with all other states zero.
pub fn fit_cs_ggr(
    data: &Dataset,
    config: &FitConfig,
    control_points: &[f64],
) -> Result<(SplineModel, FitReport)> {
    let first = &data.samples()[0].point;
    let start = GeodesicModel {
        x1: first.clone(),
        x2: DMatrix::zeros(first.n(), first.p()),
        normalization: *data.normalization(),
        steps_per_unit: config.steps_per_unit,
    };
    fit_cs_ggr_from(data, config, &SplineModel::from_geodesic(&start, control_points))
}

/// Cubic-spline regression warm-started from `init` (control points included).
pub fn fit_cs_ggr_from(data: &Dataset, config: &FitConfig, init: &SplineModel) -> Result<(SplineModel, FitReport)> {
    config.validate()?;
    data.require_fit(2)?;
    if init.normalization != *data.normalization() {
        return Err(Error::InvalidArgument(
            "initial spline uses a different normalization than the data".into(),
        ));
    }
    check_model(data, init)?;
    let problem = SplineProblem::new(data, data.normalization(), init.normalized_controls(), config);
    let outcome = optim::minimize(&problem, init.blocks(), &config.optim)?;
    let mut x = problem.without_gauge(&outcome.x)?;
    let terms = problem.evaluate(&x)?;
    let segments = x.split_off(4);
    let model = SplineModel {
        x1: GrassmannPoint::from_raw_unchecked(x[0].clone()),
        x2: x[1].clone(),
        x3: x[2].clone(),
        x4: x[3].clone(),
        control_points: init.control_points.clone(),
        x4_segments: segments,
        normalization: *data.normalization(),
        steps_per_unit: config.steps_per_unit,
    };
    let mut report = FitReport::new(terms.data, terms.regularity);
    report.absorb(&outcome);
    attach_r_squared(&mut report, data, terms.data * config.sigma2);
    Ok((model, report))
}
