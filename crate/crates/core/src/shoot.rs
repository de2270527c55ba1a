//! Forward shooting and backward adjoint sweeps on a fixed RK4 grid.
//!
//! The forward pass stores the state at every grid node (and the arrival
//! state wherever a reset fires). The backward pass integrates state and
//! adjoint together one step at a time, restarting the state from the stored
//! forward node so both sweeps see the same trajectory.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, Grid, State};

pub(crate) trait Dynamics {
    fn rhs(&self, x: &State) -> State;
    /// λ̇ as a function of the state and the adjoint.
    fn adjoint_rhs(&self, x: &State, lam: &State) -> State;
}

/// Overwrite state component `component` with `value` at `t`.
#[derive(Clone, Debug)]
pub(crate) struct Reset {
    pub t: f64,
    pub component: usize,
    pub value: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Forward {
    pub nodes: Vec<f64>,
    /// State after resets at each node.
    pub states: Vec<State>,
    /// Arrival state at nodes where a reset fired.
    pub arrivals: Vec<Option<State>>,
    /// Node index of each requested mark.
    pub mark_nodes: Vec<usize>,
    /// Node index of each reset.
    pub reset_nodes: Vec<usize>,
}

fn locate(grid: &Grid, t: f64) -> Result<usize> {
    grid.index_of(t)
        .ok_or_else(|| Error::Integration(format!("location {t} is not a grid node")))
}

/// Integrate from `t0` to `t_end` (either direction) with `marks` and the
/// reset locations inserted into the grid.
pub(crate) fn forward<D: Dynamics + ?Sized>(
    dynamics: &D,
    x0: State,
    t0: f64,
    t_end: f64,
    steps_per_unit: usize,
    marks: &[f64],
    resets: &[Reset],
) -> Result<Forward> {
    if steps_per_unit == 0 {
        return Err(Error::InvalidArgument("steps_per_unit must be at least 1".into()));
    }
    let mut all: Vec<f64> = marks.to_vec();
    all.extend(resets.iter().map(|r| r.t));
    let grid = Grid::new(t0, t_end, steps_per_unit, &all);
    let mark_nodes = marks.iter().map(|&t| locate(&grid, t)).collect::<Result<Vec<_>>>()?;
    let reset_nodes = resets.iter().map(|r| locate(&grid, r.t)).collect::<Result<Vec<_>>>()?;

    let k = grid.len();
    let mut resets_at: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &node) in reset_nodes.iter().enumerate() {
        resets_at[node].push(i);
    }
    let apply = |node: usize, x: &mut State| {
        for &i in &resets_at[node] {
            x[resets[i].component] = resets[i].value.clone();
        }
    };

    let rhs = |_: f64, s: &State| dynamics.rhs(s);
    let mut states = Vec::with_capacity(k);
    let mut arrivals = vec![None; k];
    let mut x = x0;
    if !resets_at[0].is_empty() {
        arrivals[0] = Some(x.clone());
        apply(0, &mut x);
    }
    states.push(x);
    for i in 1..k {
        let (ta, tb) = (grid.nodes[i - 1], grid.nodes[i]);
        let mut next = rk4_step(&rhs, ta, tb - ta, &states[i - 1]);
        if !crate::integrate::is_finite(&next) {
            return Err(Error::Divergence { r: tb });
        }
        if !resets_at[i].is_empty() {
            arrivals[i] = Some(next.clone());
            apply(i, &mut next);
        }
        states.push(next);
    }
    Ok(Forward {
        nodes: grid.nodes,
        states,
        arrivals,
        mark_nodes,
        reset_nodes,
    })
}

/// Sweep the adjoint from the last node back to the first.
///
/// `at_node(k, x, lam)` is called at every node, first at the terminal node
/// before any integration and last at node 0; it applies jumps in place.
/// Returns the adjoint at node 0 after `at_node(0, ..)`.
pub(crate) fn backward<D, F>(
    dynamics: &D,
    fwd: &Forward,
    lam_terminal: State,
    mut at_node: F,
) -> Result<State>
where
    D: Dynamics + ?Sized,
    F: FnMut(usize, &State, &mut State) -> Result<()>,
{
    let k = fwd.nodes.len();
    let nx = fwd.states[0].len();
    let mut lam = lam_terminal;
    at_node(k - 1, &fwd.states[k - 1], &mut lam)?;
    let rhs = |_: f64, z: &State| {
        let (x, l) = z.split_at(nx);
        let x = x.to_vec();
        let l = l.to_vec();
        let mut out = dynamics.rhs(&x);
        out.extend(dynamics.adjoint_rhs(&x, &l));
        out
    };
    for i in (1..k).rev() {
        let start = fwd.arrivals[i].as_ref().unwrap_or(&fwd.states[i]);
        let mut z = start.clone();
        z.extend(lam);
        let (ta, tb) = (fwd.nodes[i], fwd.nodes[i - 1]);
        let mut out = rk4_step(&rhs, ta, tb - ta, &z);
        if !crate::integrate::is_finite(&out) {
            return Err(Error::Divergence { r: tb });
        }
        lam = out.split_off(nx);
        at_node(i - 1, &fwd.states[i - 1], &mut lam)?;
    }
    Ok(lam)
}

/// Per-node lists of the items located at each node.
pub(crate) fn bucket(len: usize, nodes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); len];
    for (i, &n) in nodes.iter().enumerate() {
        out[n].push(i);
    }
    out
}
