//! Generalized logistic time warp and the alternating warp/curve optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggr::AffineMap;

/// `f(r) = (1 + β e^{−k(r−M)})^{−1/m}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWarp {
    /// Growth rate.
    pub k: f64,
    /// Location `M` of maximum growth when `beta == m`.
    pub center: f64,
    pub beta: f64,
    pub m: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TimeWarp {
    /// Logistic warp (`beta = m = 1`).
    pub fn logistic(k: f64, center: f64) -> Self {
        Self {
            k,
            center,
            beta: 1.0,
            m: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.k, self.center, self.beta, self.m].iter().all(|v| v.is_finite())
            && self.k > 0.0
            && self.beta > 0.0
            && self.m > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "time warp needs finite parameters with k, beta, m > 0 (got {self:?})"
            )))
        }
    }

    /// `(ln(1 + βe^z), βe^z / (1 + βe^z))` with `z = −k(r − M)`.
    fn parts(&self, r: f64) -> (f64, f64) {
        let u = -self.k * (r - self.center) + self.beta.ln();
        (softplus(u), sigmoid(u))
    }

    pub fn eval(&self, r: f64) -> f64 {
        let (lg, _) = self.parts(r);
        (-lg / self.m).exp()
    }

    /// `∂f/∂(k, M, β, m)`.
    pub fn grad(&self, r: f64) -> [f64; 4] {
        let (lg, w) = self.parts(r);
        let f = (-lg / self.m).exp();
        if f == 0.0 || w == 0.0 {
            return [0.0; 4];
        }
        let c = f * w / self.m;
        [
            c * (r - self.center),
            -c * self.k,
            -c / self.beta,
            f * lg / (self.m * self.m),
        ]
    }

    /// `∂f/∂r`.
    pub fn derivative(&self, r: f64) -> f64 {
        let (lg, w) = self.parts(r);
        let f = (-lg / self.m).exp();
        if f == 0.0 || w == 0.0 {
            return 0.0;
        }
        f * w * self.k / self.m
    }

    /// Same warp expressed in coordinates `map.apply(r)`.
    pub fn to_normalized(&self, map: &AffineMap) -> Self {
        Self {
            k: self.k / map.scale,
            center: map.apply(self.center),
            ..*self
        }
    }

    /// Inverse of [`TimeWarp::to_normalized`].
    pub fn from_normalized(&self, map: &AffineMap) -> Self {
        Self {
            k: self.k * map.scale,
            center: map.invert(self.center),
            ..*self
        }
    }

    /// Logistic warp centered at the median of `r` whose values over
    /// `[min r, max r]` stay within `[0.05, 0.95]`.
    pub fn spread_over(r: &[f64]) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::InvalidArgument("no sample locations".into()));
        }
        let mut sorted = r.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample locations"));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let reach = (median - sorted[0]).max(sorted[n - 1] - median);
        if !(reach > 0.0) {
            return Err(Error::Degenerate("all sample locations coincide".into()));
        }
        Ok(Self::logistic(19f64.ln() / reach, median))
    }
}

/// `f(r; θ)`.
pub fn warp_eval(warp: &TimeWarp, r: f64) -> f64 {
    warp.eval(r)
}

/// `∇_θ f(r; θ)` for `θ = (k, M, β, m)`.
pub fn warp_grad(warp: &TimeWarp, r: f64) -> [f64; 4] {
    warp.grad(r)
}

/// Settings of the outer loop that alternates curve refits with warp steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpSchedule {
    pub max_outer: usize,
    /// Stop once an outer iteration lowers the energy by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Stop once the gradient in (k, M) drops below this value.
    pub grad_tol: f64,
    /// Relative-decrease tolerance of each inner curve refit.
    pub inner_rel_tol: f64,
    /// Largest change of k per step (normalized units).
    pub clip_k: f64,
    /// Largest change of M per step (normalized units).
    pub clip_center: f64,
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for WarpSchedule {
    fn default() -> Self {
        Self {
            max_outer: 1000,
            rel_tol: 1e-10,
            grad_tol: 1e-10,
            inner_rel_tol: 1e-7,
            clip_k: 2.0,
            clip_center: 0.1,
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

impl WarpSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_outer > 0
            && self.rel_tol >= 0.0
            && self.grad_tol >= 0.0
            && self.inner_rel_tol >= 0.0
            && self.clip_k > 0.0
            && self.clip_center > 0.0
            && self.initial_step > 0.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid warp schedule: {self:?}")))
        }
    }
}

pub(crate) struct Refit<M> {
    pub model: M,
    pub energy: f64,
}

/// A curve fit whose data are compared at warped locations.
pub(crate) trait WarpedProblem {
    type Model: Clone;
    fn refit(&self, times: &[f64], warm: &Self::Model) -> Result<Refit<Self::Model>>;
    fn energy(&self, model: &Self::Model, times: &[f64]) -> Result<f64>;
    /// Energy and its derivative with respect to each data location.
    fn sensitivity(&self, model: &Self::Model, times: &[f64]) -> Result<(f64, Vec<f64>)>;
}

pub(crate) struct Alternation<M> {
    pub model: M,
    /// Warp in the coordinates of the supplied locations.
    pub warp: TimeWarp,
    pub energy: f64,
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

pub(crate) fn warped_times(warp: &TimeWarp, r: &[f64]) -> Result<Vec<f64>> {
    let t: Vec<f64> = r.iter().map(|&ri| warp.eval(ri)).collect();
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let distinct = r.iter().any(|&ri| ri != r[0]);
    if distinct && !(hi - lo >= 1e-6) {
        return Err(Error::DegenerateWarp { span: hi - lo });
    }
    Ok(t)
}

/// Gradient of the energy in `(k, M)` given `∂E/∂tᵢ`.
pub(crate) fn theta_gradient(warp: &TimeWarp, r: &[f64], dedt: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (&ri, &di) in r.iter().zip(dedt) {
        let gf = warp.grad(ri);
        g[0] += di * gf[0];
        g[1] += di * gf[1];
    }
    g
}

const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

/// BFGS update of a 2×2 inverse Hessian; skipped without positive curvature.
fn bfgs_update(h: [[f64; 2]; 2], s: [f64; 2], y: [f64; 2]) -> [[f64; 2]; 2] {
    let sy = s[0] * y[0] + s[1] * y[1];
    if !(sy > 1e-12 * (s[0].hypot(s[1]) * y[0].hypot(y[1]))) {
        return h;
    }
    let rho = 1.0 / sy;
    let hy = [h[0][0] * y[0] + h[0][1] * y[1], h[1][0] * y[0] + h[1][1] * y[1]];
    let yhy = y[0] * hy[0] + y[1] * hy[1];
    let mut out = h;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
    out
}

/// Alternate full curve refits with single quasi-Newton steps on `(k, M)`.
/// A step is accepted when the refitted energy meets the Armijo condition.
/// `beta` and `m` stay at their initial values.
pub(crate) fn alternate<P: WarpedProblem>(
    problem: &P,
    r: &[f64],
    warp_init: TimeWarp,
    model_init: P::Model,
    schedule: &WarpSchedule,
) -> Result<Alternation<P::Model>> {
    schedule.validate()?;
    warp_init.validate()?;
    let mut warp = warp_init;
    let mut times = warped_times(&warp, r)?;
    let first = problem.refit(&times, &model_init)?;
    let mut model = first.model;
    let mut energy = first.energy;
    let mut trace = vec![energy];
    let mut step = schedule.initial_step;
    let mut converged = false;
    let mut gradient_norm = f64::NAN;
    let mut warnings = Vec::new();
    let mut outer = 0;
    let mut h = IDENTITY;

    while outer < schedule.max_outer {
        let (e0, dedt) = problem.sensitivity(&model, &times)?;
        energy = e0;
        let g = theta_gradient(&warp, r, &dedt);
        gradient_norm = g[0].hypot(g[1]);
        if gradient_norm <= schedule.grad_tol {
            if energy > 1e-12 {
                warnings.push(format!(
                    "warp gradient vanished with nonzero residual energy {energy:.3e}"
                ));
            }
            converged = true;
            break;
        }

        let mut dir = [-(h[0][0] * g[0] + h[0][1] * g[1]), -(h[1][0] * g[0] + h[1][1] * g[1])];
        if g[0] * dir[0] + g[1] * dir[1] >= 0.0 {
            h = IDENTITY;
            dir = [-g[0], -g[1]];
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..schedule.max_backtracks {
            let dk = (s * dir[0]).clamp(-schedule.clip_k, schedule.clip_k);
            let dm = (s * dir[1]).clamp(-schedule.clip_center, schedule.clip_center);
            let trial = TimeWarp {
                k: warp.k + dk,
                center: warp.center + dm,
                ..warp
            };
            let slope = g[0] * dk + g[1] * dm;
            if trial.k > 0.0 {
                if let Ok(t) = warped_times(&trial, r) {
                    if let Ok(refit) = problem.refit(&t, &model) {
                        let e = refit.energy;
                        if e.is_finite() && e <= energy + schedule.sufficient_decrease * slope {
                            accepted = Some((trial, t, refit, [dk, dm]));
                            break;
                        }
                    }
                }
            }
            s *= schedule.contraction;
        }
        let Some((trial, t, refit, delta)) = accepted else {
            converged = gradient_norm * gradient_norm <= 1e-13 * (1.0 + energy.abs());
            if !converged {
                warnings.push("warp line search stalled".into());
            }
            break;
        };
        outer += 1;
        step = if s < 1.0 { (2.0 * s).min(1.0) } else { 1.0 };
        warp = trial;
        times = t;
        let before = energy;
        model = refit.model;
        energy = refit.energy;
        trace.push(energy);
        let (_, dedt_new) = problem.sensitivity(&model, &times)?;
        let g_new = theta_gradient(&warp, r, &dedt_new);
        h = bfgs_update(h, delta, [g_new[0] - g[0], g_new[1] - g[1]]);
        if before - energy <= schedule.rel_tol * before.abs() {
            converged = true;
            break;
        }
    }
    if !gradient_norm.is_finite() {
        gradient_norm = 0.0;
    }
    Ok(Alternation {
        model,
        warp,
        energy,
        trace,
        outer_iterations: outer,
        converged,
        gradient_norm,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logistic_midpoint_is_one_half() {
        let w = TimeWarp::logistic(3.0, 0.4);
        assert!((w.eval(0.4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn asymptotes() {
        let w = TimeWarp {
            k: 2.0,
            center: 0.0,
            beta: 0.7,
            m: 1.6,
        };
        assert!((w.eval(1e6) - 1.0).abs() < 1e-15);
        assert!(w.eval(-1e6).abs() < 1e-15);
        assert_eq!(w.grad(1e300), [0.0; 4]);
        assert_eq!(w.grad(-1e300), [0.0; 4]);
        assert!(w.grad(f64::INFINITY).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spread_init_covers_five_to_ninety_five_percent() {
        let r = [0.0, 0.1, 0.5, 0.6, 1.0];
        let w = TimeWarp::spread_over(&r).unwrap();
        assert!((w.center - 0.5).abs() < 1e-15);
        assert!((w.eval(0.0) - 0.05).abs() < 1e-12);
        assert!((w.eval(1.0) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn normalization_round_trip() {
        let map = AffineMap {
            offset: 3.0,
            scale: 0.25,
        };
        let w = TimeWarp::logistic(0.8, 5.0);
        let n = w.to_normalized(&map);
        for r in [3.0, 4.5, 7.0] {
            assert!((w.eval(r) - n.eval(map.apply(r))).abs() < 1e-14);
        }
        let back = n.from_normalized(&map);
        assert!((back.k - w.k).abs() < 1e-14 && (back.center - w.center).abs() < 1e-14);
    }

    fn fd_check(w: TimeWarp, r: f64) -> f64 {
        let g = w.grad(r);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..4 {
            let shift = |s: f64| {
                let mut v = w;
                match j {
                    0 => v.k += s,
                    1 => v.center += s,
                    2 => v.beta += s,
                    _ => v.m += s,
                }
                v.eval(r)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let scale = g[j].abs().max(1e-6);
            worst = worst.max((fd - g[j]).abs() / scale);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences_on_fixed_cases() {
        let mut rng = crate::random::rng(3);
        use rand::Rng;
        for _ in 0..20 {
            let w = TimeWarp {
                k: rng.random_range(0.5..4.0),
                center: rng.random_range(-1.0..1.0),
                beta: rng.random_range(0.5..2.0),
                m: rng.random_range(0.5..2.0),
            };
            let r = rng.random_range(-1.5..1.5);
            assert!(fd_check(w, r) < 1e-6, "{w:?} at {r}");
        }
    }

    proptest! {
        #[test]
        fn strictly_increasing(k in 0.1f64..10.0, c in -2.0f64..2.0, beta in 0.2f64..5.0,
                               m in 0.2f64..5.0, a in -1.0f64..1.0, d in 1e-3f64..0.5) {
            let w = TimeWarp { k, center: c, beta, m };
            prop_assert!(w.eval(a + d) > w.eval(a));
            prop_assert!(w.derivative(a) > 0.0);
            let v = w.eval(a);
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }
}
