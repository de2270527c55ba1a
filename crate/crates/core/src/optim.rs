//! Line-search descent over parameter blocks, some of which live on the
//! Grassmannian.
//!
//! Parameters are an ordered list of matrices. A [`BlockKind::Point`] block is
//! an orthonormal representer updated by QR retraction; [`BlockKind::Horizontal`]
//! blocks are tangent at that point and are re-projected onto the new
//! horizontal space after every update; [`BlockKind::Free`] blocks are plain
//! Euclidean. Step acceptance is backtracking Armijo.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentMethod {
    /// Steepest descent.
    Gradient,
    /// Limited-memory BFGS directions (vector transport by projection).
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub method: DescentMethod,
    pub lbfgs_memory: usize,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the energy by less than this
    /// fraction of its previous value.
    pub rel_tol: f64,
    /// Stop once the gradient norm drops below this value.
    pub grad_tol: f64,
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: DescentMethod::Lbfgs,
            lbfgs_memory: 10,
            max_iters: 5000,
            rel_tol: 1e-9,
            grad_tol: 1e-10,
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.rel_tol >= 0.0
            && self.grad_tol >= 0.0
            && self.initial_step > 0.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.max_backtracks > 0
            && (self.method == DescentMethod::Gradient || self.lbfgs_memory > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Point,
    Horizontal,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailed,
}

pub trait Objective {
    /// Kind of each parameter block; at most one `Point`, listed first.
    fn kinds(&self) -> &[BlockKind];
    fn energy(&self, x: &[DMatrix<f64>]) -> Result<f64>;
    /// Energy and the (tangent) gradient in the same block layout.
    fn energy_and_gradient(&self, x: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)>;
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub x: Vec<DMatrix<f64>>,
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Energy at the start and after every accepted step.
    pub trace: Vec<f64>,
}

pub(crate) fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &[DMatrix<f64>]) -> f64 {
    dot(a, a).sqrt()
}

fn scaled(a: &[DMatrix<f64>], s: f64) -> Vec<DMatrix<f64>> {
    a.iter().map(|m| m * s).collect()
}

fn sub(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy_in_place(y: &mut [DMatrix<f64>], a: f64, x: &[DMatrix<f64>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi * a;
    }
}

fn point_of<'a>(kinds: &[BlockKind], x: &'a [DMatrix<f64>]) -> Option<&'a DMatrix<f64>> {
    kinds.iter().position(|k| *k == BlockKind::Point).map(|i| &x[i])
}

/// Project a direction onto the tangent space at `x`.
pub fn project_tangent(kinds: &[BlockKind], x: &[DMatrix<f64>], v: &mut [DMatrix<f64>]) {
    if let Some(y) = point_of(kinds, x) {
        for (k, vi) in kinds.iter().zip(v.iter_mut()) {
            if *k != BlockKind::Free {
                *vi = mat::project_horizontal(y, vi);
            }
        }
    }
}

/// Move from `x` along `d` by step `s`.
pub fn retract(
    kinds: &[BlockKind],
    x: &[DMatrix<f64>],
    d: &[DMatrix<f64>],
    s: f64,
) -> Option<Vec<DMatrix<f64>>> {
    let mut out: Vec<DMatrix<f64>> = x.iter().zip(d).map(|(xi, di)| xi + di * s).collect();
    if let Some(ip) = kinds.iter().position(|k| *k == BlockKind::Point) {
        let q = mat::qr_positive(&out[ip])?;
        for (k, m) in kinds.iter().zip(out.iter_mut()) {
            if *k == BlockKind::Horizontal {
                *m = mat::project_horizontal(&q, m);
            }
        }
        out[ip] = q;
    }
    Some(out)
}

struct Memory {
    pairs: VecDeque<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<DMatrix<f64>>, y: Vec<DMatrix<f64>>) {
        if dot(&s, &y) <= 1e-16 * norm(&s) * norm(&y) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// Two-loop recursion with stored pairs transported by projection.
    fn direction(&self, kinds: &[BlockKind], x: &[DMatrix<f64>], g: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let transported: Vec<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, f64)> = self
            .pairs
            .iter()
            .filter_map(|(s, y)| {
                let mut s = s.clone();
                let mut y = y.clone();
                project_tangent(kinds, x, &mut s);
                project_tangent(kinds, x, &mut y);
                let sy = dot(&s, &y);
                (sy > 1e-16 * norm(&s) * norm(&y)).then(|| (s, y, 1.0 / sy))
            })
            .collect();
        let mut q: Vec<DMatrix<f64>> = g.to_vec();
        let mut alphas = Vec::with_capacity(transported.len());
        for (s, y, rho) in transported.iter().rev() {
            let a = rho * dot(s, &q);
            axpy_in_place(&mut q, -a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = transported.last() {
            let gamma = dot(s, y) / dot(y, y);
            q = scaled(&q, gamma);
        }
        for ((s, y, rho), a) in transported.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy_in_place(&mut q, a - b, s);
        }
        let mut d = scaled(&q, -1.0);
        project_tangent(kinds, x, &mut d);
        d
    }
}

/// Relative size of energy differences lost to rounding.
const ROUNDOFF: f64 = 1e-13;

/// Minimize `objective` from `x0`.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    x0: Vec<DMatrix<f64>>,
    config: &OptimConfig,
) -> Result<Outcome> {
    config.validate()?;
    let kinds = objective.kinds().to_vec();
    let mut x = x0;
    let (mut energy, mut grad) = objective.energy_and_gradient(&x)?;
    if !energy.is_finite() {
        return Err(Error::Divergence { r: f64::NAN });
    }
    let mut trace = vec![energy];
    let mut memory = Memory {
        pairs: VecDeque::new(),
        cap: config.lbfgs_memory.max(1),
    };
    let mut iterations = 0;
    let stop = loop {
        let gnorm = norm(&grad);
        if gnorm <= config.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= config.max_iters {
            break StopReason::MaxIterations;
        }
        let mut d = match config.method {
            DescentMethod::Gradient => scaled(&grad, -1.0),
            DescentMethod::Lbfgs => memory.direction(&kinds, &x, &grad),
        };
        let mut slope = dot(&grad, &d);
        if !(slope < -1e-12 * gnorm * norm(&d)) {
            memory.pairs.clear();
            d = scaled(&grad, -1.0);
            slope = -gnorm * gnorm;
        }

        // Once the predicted decrease drops below the rounding noise of the
        // energy, Armijo cannot tell steps apart; such steps are accepted and
        // judged by the gradient instead.
        let noise = ROUNDOFF * energy.abs();
        let mut step = config.initial_step;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            if let Some(candidate) = retract(&kinds, &x, &d, step) {
                if let Ok(e) = objective.energy(&candidate) {
                    let armijo = e <= energy + config.sufficient_decrease * step * slope;
                    let unresolved = -step * slope <= noise && e <= energy + noise;
                    if e.is_finite() && (armijo || unresolved) {
                        accepted = Some((candidate, unresolved));
                        break;
                    }
                }
            }
            step *= config.contraction;
        }
        let Some((candidate, unresolved)) = accepted else {
            break StopReason::LineSearchFailed;
        };
        let (e_new, g_new) = objective.energy_and_gradient(&candidate)?;
        iterations += 1;
        if config.method == DescentMethod::Lbfgs {
            let mut g_old = grad.clone();
            project_tangent(&kinds, &candidate, &mut g_old);
            let mut s = scaled(&d, step);
            project_tangent(&kinds, &candidate, &mut s);
            memory.push(s, sub(&g_new, &g_old));
        }
        let decrease = energy - e_new;
        let previous = energy;
        x = candidate;
        energy = e_new;
        grad = g_new;
        trace.push(energy);
        let gradient_progress = unresolved && norm(&grad) < gnorm;
        if decrease <= config.rel_tol * previous.abs() && !gradient_progress {
            break StopReason::RelativeDecrease;
        }
    };
    let gradient_norm = norm(&grad);
    let converged = match stop {
        StopReason::GradientTolerance | StopReason::RelativeDecrease => true,
        StopReason::MaxIterations => false,
        StopReason::LineSearchFailed => gradient_norm * gradient_norm <= 1e-13 * (1.0 + energy.abs()),
    };
    Ok(Outcome {
        x,
        energy,
        gradient_norm,
        iterations,
        converged,
        stop,
        trace,
    })
}
