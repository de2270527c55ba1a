//! Linear, time-warped linear and cubic-spline regression in ℝⁿ by shooting.
//!
//! The same adjoint machinery as the manifold fits, on flat space. Every
//! result here has a closed form, which makes this module the reference the
//! manifold code is checked against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{State, DEFAULT_STEPS_PER_UNIT};
use crate::optim::{self, BlockKind, Objective, OptimConfig};
use crate::report::FitReport;
use crate::shoot::{self, Dynamics, Forward, Reset};
use crate::warp::{self, Refit, TimeWarp, WarpSchedule, WarpedProblem};

/// Samples `(tᵢ, yᵢ)` with `tᵢ ∈ [0, 1]`, sorted by `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EuclideanDataset {
    t: Vec<f64>,
    y: Vec<DVector<f64>>,
}

impl EuclideanDataset {
    pub fn new(t: Vec<f64>, y: Vec<DVector<f64>>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::DimensionMismatch(format!("{} locations for {} values", t.len(), y.len())));
        }
        if t.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("location {bad} lies outside [0, 1]")));
        }
        let n = y[0].len();
        if n == 0 || y.iter().any(|v| v.len() != n) {
            return Err(Error::DimensionMismatch("values differ in dimension".into()));
        }
        if y.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("values must be finite".into()));
        }
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&a, &b| t[a].partial_cmp(&t[b]).expect("finite locations"));
        Ok(Self {
            t: order.iter().map(|&i| t[i]).collect(),
            y: order.iter().map(|&i| y[i].clone()).collect(),
        })
    }

    /// One-dimensional values.
    pub fn scalar(t: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(t.to_vec(), y.iter().map(|&v| DVector::from_element(1, v)).collect())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn distinct_t(&self) -> usize {
        1 + self.t.windows(2).filter(|w| w[1] != w[0]).count()
    }

    /// `Σ ‖yᵢ − ȳ‖²`.
    pub fn total_variance(&self) -> f64 {
        let mean = self.y.iter().fold(DVector::zeros(self.dim()), |acc, v| acc + v) / self.len() as f64;
        self.y.iter().map(|v| (v - &mean).norm_squared()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EuclidConfig {
    pub steps_per_unit: usize,
    pub optim: OptimConfig,
    pub warp: WarpSchedule,
}

impl Default for EuclidConfig {
    fn default() -> Self {
        Self {
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            optim: OptimConfig {
                rel_tol: 0.0,
                ..OptimConfig::default()
            },
            warp: WarpSchedule::default(),
        }
    }
}

impl EuclidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_unit == 0 {
            return Err(Error::InvalidArgument("steps_per_unit must be at least 1".into()));
        }
        self.optim.validate()?;
        self.warp.validate()
    }
}

/// Straight line `x₁(t) = x₁(0) + t·x₂(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModelE {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
}

impl LinearModelE {
    pub fn evaluate(&self, t: f64) -> DVector<f64> {
        &self.x1 + &self.x2 * t
    }
}

/// Piecewise cubic with `x₄` replaced by `x4_segments[c]` from
/// `control_points[c]` on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineModelE {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub x3: DVector<f64>,
    pub x4: DVector<f64>,
    pub control_points: Vec<f64>,
    pub x4_segments: Vec<DVector<f64>>,
    pub steps_per_unit: usize,
}

impl SplineModelE {
    /// `x₄(t_c⁺) − x₄(t_c⁻)` at every control point.
    pub fn x4_jumps(&self) -> Vec<DVector<f64>> {
        let mut prev = &self.x4;
        self.x4_segments
            .iter()
            .map(|s| {
                let d = s - prev;
                prev = s;
                d
            })
            .collect()
    }

    /// States `[x₁, x₂, x₃, x₄]` at each `t ≥ 0` from the shooting integration.
    pub fn states(&self, t: &[f64]) -> Result<Vec<[DVector<f64>; 4]>> {
        check_controls(&self.control_points)?;
        if let Some(bad) = t.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("cannot evaluate at {bad}")));
        }
        let x = spline_blocks(self);
        let end = t.iter().copied().fold(1.0, f64::max);
        let fwd = shoot::forward(
            &SplineE,
            x[..4].to_vec(),
            0.0,
            end,
            self.steps_per_unit,
            t,
            &resets(&self.control_points, &x[4..]),
        )?;
        Ok(fwd
            .mark_nodes
            .iter()
            .map(|&k| {
                let s = &fwd.states[k];
                [col(&s[0]), col(&s[1]), col(&s[2]), col(&s[3])]
            })
            .collect())
    }

    pub fn evaluate_many(&self, t: &[f64]) -> Result<Vec<DVector<f64>>> {
        Ok(self.states(t)?.into_iter().map(|[x1, ..]| x1).collect())
    }

    /// Position from the piecewise cubic polynomial.
    pub fn evaluate_closed(&self, t: f64) -> DVector<f64> {
        let (mut x1, mut x2, mut x3) = (self.x1.clone(), self.x2.clone(), self.x3.clone());
        let mut x4 = self.x4.clone();
        let mut t0 = 0.0;
        for (&c, seg) in self.control_points.iter().zip(&self.x4_segments) {
            if c > t {
                break;
            }
            let h = c - t0;
            let (a, b, d) = cubic_step(&x1, &x2, &x3, &x4, h);
            x1 = a;
            x2 = b;
            x3 = d;
            x4 = seg.clone();
            t0 = c;
        }
        cubic_step(&x1, &x2, &x3, &x4, t - t0).0
    }
}

fn cubic_step(
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    x3: &DVector<f64>,
    x4: &DVector<f64>,
    h: f64,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        x1 + x2 * h + x3 * (h * h / 2.0) + x4 * (h * h * h / 6.0),
        x2 + x3 * h + x4 * (h * h / 2.0),
        x3 + x4 * h,
    )
}

fn mat(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn col(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// `ẋ₁ = x₂, ẋ₂ = 0`.
struct LineE;

impl Dynamics for LineE {
    fn rhs(&self, x: &State) -> State {
        vec![x[1].clone(), DMatrix::zeros(x[1].nrows(), 1)]
    }

    fn adjoint_rhs(&self, _x: &State, lam: &State) -> State {
        vec![DMatrix::zeros(lam[0].nrows(), 1), -&lam[0]]
    }
}

/// `ẋ₁ = x₂, ẋ₂ = x₃, ẋ₃ = x₄, ẋ₄ = 0`.
struct SplineE;

impl Dynamics for SplineE {
    fn rhs(&self, x: &State) -> State {
        vec![x[1].clone(), x[2].clone(), x[3].clone(), DMatrix::zeros(x[3].nrows(), 1)]
    }

    fn adjoint_rhs(&self, _x: &State, lam: &State) -> State {
        vec![DMatrix::zeros(lam[0].nrows(), 1), -&lam[0], -&lam[1], -&lam[2]]
    }
}

fn check_controls(controls: &[f64]) -> Result<()> {
    for (i, &c) in controls.iter().enumerate() {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidArgument(format!("control point {c} lies outside (0, 1)")));
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

fn spline_blocks(model: &SplineModelE) -> Vec<DMatrix<f64>> {
    let mut x = vec![mat(&model.x1), mat(&model.x2), mat(&model.x3), mat(&model.x4)];
    x.extend(model.x4_segments.iter().map(mat));
    x
}

/// Least-squares shooting problem shared by the line and the spline.
struct Shooting<'a, D> {
    dynamics: D,
    targets: Vec<DMatrix<f64>>,
    times: Vec<f64>,
    controls: &'a [f64],
    steps_per_unit: usize,
    kinds: Vec<BlockKind>,
    states: usize,
}

impl<'a, D: Dynamics> Shooting<'a, D> {
    fn new(dynamics: D, states: usize, data: &EuclideanDataset, times: Vec<f64>, controls: &'a [f64], steps: usize) -> Self {
        Self {
            dynamics,
            targets: data.y.iter().map(mat).collect(),
            times,
            controls,
            steps_per_unit: steps,
            kinds: vec![BlockKind::Free; states + controls.len()],
            states,
        }
    }

    fn forward(&self, x: &[DMatrix<f64>]) -> Result<Forward> {
        let end = self.times.iter().copied().fold(1.0, f64::max);
        shoot::forward(
            &self.dynamics,
            x[..self.states].to_vec(),
            0.0,
            end,
            self.steps_per_unit,
            &self.times,
            &resets(self.controls, &x[self.states..]),
        )
    }

    fn data_term(&self, fwd: &Forward) -> f64 {
        fwd.mark_nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, y)| (&fwd.states[k][0] - y).norm_squared())
            .sum()
    }

    fn gradient(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        let fwd = self.forward(x)?;
        let e = self.data_term(&fwd);
        let data_at = shoot::bucket(fwd.nodes.len(), &fwd.mark_nodes);
        let control_at = shoot::bucket(fwd.nodes.len(), &fwd.reset_nodes);
        let zero = DMatrix::zeros(x[0].nrows(), 1);
        let mut control_grads = vec![zero.clone(); self.controls.len()];
        let lam = shoot::backward(&self.dynamics, &fwd, vec![zero; self.states], |k, s, lam| {
            for &i in &data_at[k] {
                lam[0] -= (&s[0] - &self.targets[i]) * 2.0;
            }
            for &c in &control_at[k] {
                control_grads[c] = -&lam[3];
                lam[3].fill(0.0);
            }
            Ok(())
        })?;
        let mut g: Vec<DMatrix<f64>> = lam.into_iter().map(|l| -l).collect();
        g.extend(control_grads);
        Ok((e, g))
    }

    /// `∂E/∂tᵢ = 2 (x₁(tᵢ) − yᵢ)ᵀ ẋ₁(tᵢ)`.
    fn sensitivity(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<f64>)> {
        let fwd = self.forward(x)?;
        let dedt = fwd
            .mark_nodes
            .iter()
            .zip(&self.targets)
            .map(|(&k, y)| 2.0 * (&fwd.states[k][0] - y).dot(&fwd.states[k][1]))
            .collect();
        Ok((self.data_term(&fwd), dedt))
    }
}

impl<D: Dynamics> Objective for Shooting<'_, D> {
    fn kinds(&self) -> &[BlockKind] {
        &self.kinds
    }

    fn energy(&self, x: &[DMatrix<f64>]) -> Result<f64> {
        Ok(self.data_term(&self.forward(x)?))
    }

    fn energy_and_gradient(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        self.gradient(x)
    }
}

fn require_distinct(data: &EuclideanDataset, min: usize) -> Result<()> {
    if data.distinct_t() < min {
        return Err(Error::Degenerate(format!(
            "design needs at least {min} distinct locations (got {})",
            data.distinct_t()
        )));
    }
    Ok(())
}

fn report_from(data: &EuclideanDataset, energy: f64) -> FitReport {
    let mut report = FitReport::new(energy, 0.0);
    let total = data.total_variance();
    report.r_squared = (total > 0.0).then(|| 1.0 - energy / total);
    report
}

/// Response of `x₁(tᵢ)` to each scalar parameter of the shooting problem.
fn design_matrix<D: Dynamics>(problem: &Shooting<'_, D>) -> Result<DMatrix<f64>> {
    let q = problem.kinds.len();
    let mut design = DMatrix::zeros(problem.times.len(), q);
    for j in 0..q {
        let x: Vec<DMatrix<f64>> = (0..q).map(|i| DMatrix::from_element(1, 1, if i == j { 1.0 } else { 0.0 })).collect();
        let fwd = problem.forward(&x)?;
        for (i, &k) in fwd.mark_nodes.iter().enumerate() {
            design[(i, j)] = fwd.states[k][0][(0, 0)];
        }
    }
    Ok(design)
}

/// Numerical rank of the design and its parameter count.
fn design_rank(times: &[f64], controls: &[f64], steps: usize, spline: bool) -> Result<(usize, usize)> {
    let probe = EuclideanDataset {
        t: times.to_vec(),
        y: vec![DVector::zeros(1); times.len()],
    };
    let design = if spline {
        design_matrix(&Shooting::new(SplineE, 4, &probe, times.to_vec(), controls, steps))?
    } else {
        design_matrix(&Shooting::new(LineE, 2, &probe, times.to_vec(), controls, steps))?
    };
    let sv = design.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count();
    Ok((rank, design.ncols()))
}

fn rank_warning(rank: usize, params: usize) -> Option<String> {
    (rank < params).then(|| {
        format!("design has rank {rank} for {params} parameters per coordinate; the fit is not unique")
    })
}

/// Fit a straight line by shooting from `x₁ = y₀`, `x₂ = 0`.
pub fn fit_linear_euclid(data: &EuclideanDataset, config: &EuclidConfig) -> Result<(LinearModelE, FitReport)> {
    config.validate()?;
    require_distinct(data, 2)?;
    let problem = Shooting::new(LineE, 2, data, data.t.clone(), &[], config.steps_per_unit);
    let x0 = vec![mat(&data.y[0]), DMatrix::zeros(data.dim(), 1)];
    let outcome = optim::minimize(&problem, x0, &config.optim)?;
    let energy = problem.energy(&outcome.x)?;
    let mut report = report_from(data, energy);
    report.absorb(&outcome);
    Ok((
        LinearModelE {
            x1: col(&outcome.x[0]),
            x2: col(&outcome.x[1]),
        },
        report,
    ))
}

/// `(E, [∇x₁(0), ∇x₂(0)])` of a line on `data`.
pub fn linear_energy_gradient(
    data: &EuclideanDataset,
    config: &EuclidConfig,
    model: &LinearModelE,
) -> Result<(f64, [DVector<f64>; 2])> {
    let problem = Shooting::new(LineE, 2, data, data.t.clone(), &[], config.steps_per_unit);
    let (e, g) = problem.gradient(&[mat(&model.x1), mat(&model.x2)])?;
    Ok((e, [col(&g[0]), col(&g[1])]))
}

struct WarpedLine<'a> {
    data: &'a EuclideanDataset,
    config: &'a EuclidConfig,
    inner: OptimConfig,
}

impl WarpedLine<'_> {
    fn problem(&self, times: &[f64]) -> Shooting<'static, LineE> {
        Shooting::new(LineE, 2, self.data, times.to_vec(), &[], self.config.steps_per_unit)
    }
}

impl WarpedProblem for WarpedLine<'_> {
    type Model = Vec<DMatrix<f64>>;

    fn refit(&self, times: &[f64], warm: &Self::Model) -> Result<Refit<Self::Model>> {
        let problem = self.problem(times);
        let outcome = optim::minimize(&problem, warm.clone(), &self.inner)?;
        Ok(Refit {
            energy: problem.energy(&outcome.x)?,
            model: outcome.x,
        })
    }

    fn energy(&self, model: &Self::Model, times: &[f64]) -> Result<f64> {
        self.problem(times).energy(model)
    }

    fn sensitivity(&self, model: &Self::Model, times: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.problem(times).sensitivity(model)
    }
}

/// Line in warped time `f(t; θ)`; `(k, M)` of the warp are optimized.
pub fn fit_timewarped_euclid(
    data: &EuclideanDataset,
    config: &EuclidConfig,
    warp_init: TimeWarp,
) -> Result<(LinearModelE, TimeWarp, FitReport)> {
    config.validate()?;
    require_distinct(data, 2)?;
    let problem = WarpedLine {
        data,
        config,
        inner: OptimConfig {
            rel_tol: config.warp.inner_rel_tol,
            ..config.optim.clone()
        },
    };
    let x0 = vec![mat(&data.y[0]), DMatrix::zeros(data.dim(), 1)];
    let alt = warp::alternate(&problem, &data.t, warp_init, x0, &config.warp)?;
    let mut report = report_from(data, alt.energy);
    report.iterations = alt.outer_iterations;
    report.converged = alt.converged;
    report.gradient_norm = alt.gradient_norm;
    report.energy_trace = alt.trace;
    report.warnings = alt.warnings;
    Ok((
        LinearModelE {
            x1: col(&alt.model[0]),
            x2: col(&alt.model[1]),
        },
        alt.warp,
        report,
    ))
}

/// Energy and `∇_{(k, M)}E` of a warped line at fixed initial conditions.
pub fn timewarped_energy_gradient(
    data: &EuclideanDataset,
    config: &EuclidConfig,
    model: &LinearModelE,
    warp: &TimeWarp,
) -> Result<(f64, [f64; 2])> {
    let times = warp::warped_times(warp, &data.t)?;
    let problem = Shooting::new(LineE, 2, data, times, &[], config.steps_per_unit);
    let (e, dedt) = problem.sensitivity(&[mat(&model.x1), mat(&model.x2)])?;
    Ok((e, warp::theta_gradient(warp, &data.t, &dedt)))
}

/// Cubic spline with `x₄` free on each interval cut by `control_points`.
/// Rank deficiency of the design is reported as a warning.
pub fn fit_spline_euclid(
    data: &EuclideanDataset,
    config: &EuclidConfig,
    control_points: &[f64],
) -> Result<(SplineModelE, FitReport)> {
    config.validate()?;
    check_controls(control_points)?;
    require_distinct(data, 4)?;
    let problem = Shooting::new(SplineE, 4, data, data.t.clone(), control_points, config.steps_per_unit);
    let zero = DMatrix::zeros(data.dim(), 1);
    let mut x0 = vec![mat(&data.y[0]), zero.clone(), zero.clone(), zero.clone()];
    x0.extend(std::iter::repeat(zero).take(control_points.len()));
    let outcome = optim::minimize(&problem, x0, &config.optim)?;
    let energy = problem.energy(&outcome.x)?;
    let mut report = report_from(data, energy);
    report.absorb(&outcome);
    let (rank, params) = design_rank(&data.t, control_points, config.steps_per_unit, true)?;
    report.warnings.extend(rank_warning(rank, params));
    let x = &outcome.x;
    Ok((
        SplineModelE {
            x1: col(&x[0]),
            x2: col(&x[1]),
            x3: col(&x[2]),
            x4: col(&x[3]),
            control_points: control_points.to_vec(),
            x4_segments: x[4..].iter().map(col).collect(),
            steps_per_unit: config.steps_per_unit,
        },
        report,
    ))
}

/// `(E, [∇x₁(0), ∇x₂(0), ∇x₃(0), ∇x₄(0), ∇x₄(t_c⁺)…])` of a spline on `data`.
pub fn spline_energy_gradient(data: &EuclideanDataset, model: &SplineModelE) -> Result<(f64, Vec<DVector<f64>>)> {
    check_controls(&model.control_points)?;
    if model.x4_segments.len() != model.control_points.len() {
        return Err(Error::DimensionMismatch("one x4 segment per control point is required".into()));
    }
    let problem = Shooting::new(SplineE, 4, data, data.t.clone(), &model.control_points, model.steps_per_unit);
    let (e, g) = problem.gradient(&spline_blocks(model))?;
    Ok((e, g.iter().map(col).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ols(t: &[f64], y: &[f64]) -> (f64, f64) {
        let n = t.len() as f64;
        let (st, sy) = (t.iter().sum::<f64>(), y.iter().sum::<f64>());
        let stt: f64 = t.iter().map(|v| v * v).sum();
        let sty: f64 = t.iter().zip(y).map(|(a, b)| a * b).sum();
        let slope = (n * sty - st * sy) / (n * stt - st * st);
        ((sy - slope * st) / n, slope)
    }

    #[test]
    fn collinear_points() {
        let data = EuclideanDataset::scalar(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        let (m, r) = fit_linear_euclid(&data, &EuclidConfig::default()).unwrap();
        assert!((m.x1[0] - 1.0).abs() < 1e-9 && (m.x2[0] - 2.0).abs() < 1e-9);
        assert!(r.energy < 1e-18);
        assert_eq!(r.r_squared, Some(1.0 - r.energy / 2.0));
    }

    #[test]
    fn constant_zero() {
        let data = EuclideanDataset::scalar(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        let (m, r) = fit_linear_euclid(&data, &EuclidConfig::default()).unwrap();
        assert_eq!(m.x1[0], 0.0);
        assert_eq!(m.x2[0], 0.0);
        assert_eq!(r.r_squared, None);
    }

    #[test]
    fn matches_normal_equations() {
        let mut g = crate::random::rng(3);
        let t: Vec<f64> = (0..20).map(|_| g.random::<f64>()).collect();
        let y: Vec<f64> = (0..20).map(|_| g.random::<f64>() * 4.0 - 2.0).collect();
        let data = EuclideanDataset::scalar(&t, &y).unwrap();
        let (m, _) = fit_linear_euclid(&data, &EuclidConfig::default()).unwrap();
        let (b0, b1) = ols(&t, &y);
        assert!((m.x1[0] - b0).abs() < 1e-8, "{} vs {b0}", m.x1[0]);
        assert!((m.x2[0] - b1).abs() < 1e-8, "{} vs {b1}", m.x2[0]);
    }

    #[test]
    fn identical_locations_are_degenerate() {
        let data = EuclideanDataset::scalar(&[0.3, 0.3, 0.3], &[1.0, 2.0, 0.0]).unwrap();
        assert!(matches!(
            fit_linear_euclid(&data, &EuclidConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut g = crate::random::rng(11);
        let cfg = EuclidConfig::default();
        for _ in 0..10 {
            let t: Vec<f64> = (0..8).map(|_| g.random::<f64>()).collect();
            let y: Vec<DVector<f64>> = (0..8).map(|_| DVector::from_fn(3, |_, _| g.random::<f64>())).collect();
            let data = EuclideanDataset::new(t, y).unwrap();
            let model = LinearModelE {
                x1: DVector::from_fn(3, |_, _| g.random::<f64>() - 0.5),
                x2: DVector::from_fn(3, |_, _| g.random::<f64>() - 0.5),
            };
            let (_, grad) = linear_energy_gradient(&data, &cfg, &model).unwrap();
            let h = 1e-6;
            for b in 0..2 {
                for i in 0..3 {
                    let shifted = |s: f64| {
                        let mut m = model.clone();
                        if b == 0 { m.x1[i] += s } else { m.x2[i] += s }
                        linear_energy_gradient(&data, &cfg, &m).unwrap().0
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let an = grad[b][i];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn cube_has_constant_third_derivative() {
        let t: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let y: Vec<f64> = t.iter().map(|v| v * v * v).collect();
        let data = EuclideanDataset::scalar(&t, &y).unwrap();
        let (m, r) = fit_spline_euclid(&data, &EuclidConfig::default(), &[]).unwrap();
        assert!((m.x4[0] - 6.0).abs() < 1e-6, "{}", m.x4[0]);
        assert!(r.energy < 1e-10, "{}", r.energy);
    }

    #[test]
    fn line_with_control_point_has_no_forcing() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y: Vec<f64> = t.iter().map(|v| 0.5 - 2.0 * v).collect();
        let data = EuclideanDataset::scalar(&t, &y).unwrap();
        let (m, _) = fit_spline_euclid(&data, &EuclidConfig::default(), &[0.5]).unwrap();
        assert!(m.x3.norm() < 1e-6, "{}", m.x3.norm());
        assert!(m.x4.norm() < 1e-6, "{}", m.x4.norm());
        assert!(m.x4_jumps()[0].norm() < 1e-6);
    }

    #[test]
    fn recovers_single_jump() {
        let truth = SplineModelE {
            x1: DVector::from_vec(vec![0.2, -0.1]),
            x2: DVector::from_vec(vec![1.0, 0.5]),
            x3: DVector::from_vec(vec![-1.0, 2.0]),
            x4: DVector::from_vec(vec![3.0, -4.0]),
            control_points: vec![0.5],
            x4_segments: vec![DVector::from_vec(vec![-9.0, 5.0])],
            steps_per_unit: 100,
        };
        let t: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y = truth.evaluate_many(&t).unwrap();
        let data = EuclideanDataset::new(t, y).unwrap();
        let (m, r) = fit_spline_euclid(&data, &EuclidConfig::default(), &[0.5]).unwrap();
        let want = &truth.x4_jumps()[0];
        let got = &m.x4_jumps()[0];
        assert!((got - want).norm() <= 1e-3 * want.norm(), "{got} vs {want}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn spline_state_continuity_across_controls() {
        let model = SplineModelE {
            x1: DVector::from_vec(vec![0.0]),
            x2: DVector::from_vec(vec![1.0]),
            x3: DVector::from_vec(vec![0.5]),
            x4: DVector::from_vec(vec![2.0]),
            control_points: vec![0.3, 0.7],
            x4_segments: vec![DVector::from_vec(vec![-5.0]), DVector::from_vec(vec![7.0])],
            steps_per_unit: 100,
        };
        let eps = 1e-7;
        for &c in &model.control_points {
            let s = model.states(&[c - eps, c + eps]).unwrap();
            for j in 0..3 {
                assert!((&s[0][j] - &s[1][j]).norm() < 1e-5 * (1.0 + s[0][j].norm()));
            }
        }
        let s = model.states(&[0.1, 0.2, 0.5, 0.6, 0.9]).unwrap();
        assert_eq!(s[0][3], model.x4);
        assert_eq!(s[1][3], model.x4);
        assert_eq!(s[2][3], model.x4_segments[0]);
        assert_eq!(s[3][3], model.x4_segments[0]);
        assert_eq!(s[4][3], model.x4_segments[1]);
        for (i, &t) in [0.1, 0.2, 0.5, 0.6, 0.9].iter().enumerate() {
            assert!((&s[i][0] - model.evaluate_closed(t)).norm() < 1e-9);
        }
    }

    #[test]
    fn spline_gradient_matches_finite_differences() {
        let mut g = crate::random::rng(5);
        for _ in 0..5 {
            let t: Vec<f64> = (0..10).map(|_| g.random::<f64>()).collect();
            let y: Vec<DVector<f64>> = (0..10).map(|_| DVector::from_fn(2, |_, _| g.random::<f64>())).collect();
            let data = EuclideanDataset::new(t, y).unwrap();
            let mut v = || DVector::from_fn(2, |_, _| g.random::<f64>() - 0.5);
            let model = SplineModelE {
                x1: v(),
                x2: v(),
                x3: v(),
                x4: v(),
                control_points: vec![0.35, 0.6],
                x4_segments: vec![v(), v()],
                steps_per_unit: 100,
            };
            let (_, grad) = spline_energy_gradient(&data, &model).unwrap();
            let h = 1e-6;
            for b in 0..6 {
                for i in 0..2 {
                    let shifted = |s: f64| {
                        let mut m = model.clone();
                        match b {
                            0 => m.x1[i] += s,
                            1 => m.x2[i] += s,
                            2 => m.x3[i] += s,
                            3 => m.x4[i] += s,
                            _ => m.x4_segments[b - 4][i] += s,
                        }
                        spline_energy_gradient(&data, &m).unwrap().0
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let an = grad[b][i];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "block {b}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn sparse_interval_is_flagged() {
        let t: Vec<f64> = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.45];
        let y: Vec<f64> = t.iter().map(|v| v * v).collect();
        let data = EuclideanDataset::scalar(&t, &y).unwrap();
        let (_, r) = fit_spline_euclid(&data, &EuclidConfig::default(), &[0.5]).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("rank")), "{:?}", r.warnings);
    }

    #[test]
    fn rejects_control_points_outside_unit_interval() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let data = EuclideanDataset::scalar(&t, &t).unwrap();
        for bad in [0.0, 1.0, 1.2, -0.1] {
            assert!(matches!(
                fit_spline_euclid(&data, &EuclidConfig::default(), &[bad]),
                Err(Error::InvalidArgument(_))
            ));
        }
        assert!(fit_spline_euclid(&data, &EuclidConfig::default(), &[0.4]).is_ok());
    }

    #[test]
    fn warp_gradient_matches_finite_differences() {
        let mut g = crate::random::rng(8);
        let cfg = EuclidConfig::default();
        for _ in 0..10 {
            let t: Vec<f64> = (0..9).map(|_| g.random::<f64>()).collect();
            let y: Vec<f64> = (0..9).map(|_| g.random::<f64>()).collect();
            let data = EuclideanDataset::scalar(&t, &y).unwrap();
            let model = LinearModelE {
                x1: DVector::from_element(1, g.random::<f64>()),
                x2: DVector::from_element(1, g.random::<f64>() * 2.0),
            };
            let warp = TimeWarp::logistic(1.0 + 8.0 * g.random::<f64>(), 0.2 + 0.6 * g.random::<f64>());
            let (_, grad) = timewarped_energy_gradient(&data, &cfg, &model, &warp).unwrap();
            let h = 1e-6;
            for j in 0..2 {
                let shifted = |s: f64| {
                    let mut w = warp;
                    if j == 0 { w.k += s } else { w.center += s }
                    timewarped_energy_gradient(&data, &cfg, &model, &w).unwrap().0
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - grad[j]).abs() <= 1e-6 * grad[j].abs().max(1.0), "{fd} vs {}", grad[j]);
            }
        }
    }

    fn logistic_data() -> EuclideanDataset {
        let t: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = t.iter().map(|v| 1.0 / (1.0 + (-12.0 * (v - 0.4)).exp())).collect();
        EuclideanDataset::scalar(&t, &y).unwrap()
    }

    #[test]
    fn warp_captures_saturation() {
        let data = logistic_data();
        let cfg = EuclidConfig::default();
        let (_, lin) = fit_linear_euclid(&data, &cfg).unwrap();
        let (_, warp, tw) = fit_timewarped_euclid(&data, &cfg, TimeWarp::logistic(2.0, 0.5)).unwrap();
        assert!(tw.energy < 0.01 * lin.energy, "{} vs {} ({warp:?})", tw.energy, lin.energy);
        assert!(tw.energy_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn warp_is_harmless_on_linear_data() {
        let t: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let y: Vec<f64> = t.iter().map(|v| 0.3 + 1.5 * v).collect();
        let data = EuclideanDataset::scalar(&t, &y).unwrap();
        let cfg = EuclidConfig::default();
        let (line, lin) = fit_linear_euclid(&data, &cfg).unwrap();
        let (m, warp, tw) = fit_timewarped_euclid(&data, &cfg, TimeWarp::logistic(0.5, 0.5)).unwrap();
        assert!(tw.energy <= lin.energy + 1e-10, "{} vs {}", tw.energy, lin.energy);
        // slope in original time at the warp center
        let slope = m.x2[0] * warp.derivative(warp.center);
        assert!((slope - line.x2[0]).abs() < 1e-6, "{slope} vs {}", line.x2[0]);
        assert!(tw.energy_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shooting_matches_cubic_polynomial(
            c in prop::array::uniform4(-3.0f64..3.0),
            t in 0.0f64..1.0,
        ) {
            let model = SplineModelE {
                x1: DVector::from_element(1, c[0]),
                x2: DVector::from_element(1, c[1]),
                x3: DVector::from_element(1, c[2]),
                x4: DVector::from_element(1, c[3]),
                control_points: vec![],
                x4_segments: vec![],
                steps_per_unit: 100,
            };
            let shot = model.evaluate_many(&[t]).unwrap()[0][0];
            let closed = c[0] + c[1] * t + 0.5 * c[2] * t * t + c[3] * t * t * t / 6.0;
            prop_assert!((shot - closed).abs() < 1e-9);
        }
    }
}
