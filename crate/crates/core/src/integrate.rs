//! Fixed-step classical Runge–Kutta integration of matrix-valued state
//! systems, with discontinuities applied at scheduled values of the
//! independent variable.
//!
//! The step grid is uniform with `steps_per_unit` steps per unit of the
//! independent variable; every event or requested sample location is
//! inserted into the grid by splitting the enclosing step, so jumps are
//! applied exactly where they are scheduled.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of matrix-valued state components.
pub type State = Vec<DMatrix<f64>>;

/// Right-hand side `(r, state) -> d state / dr`.
pub type Rhs<'a> = Box<dyn Fn(f64, &State) -> State + 'a>;

/// Discontinuity applied in place to the state at a fixed location.
pub type Jump<'a> = Box<dyn Fn(f64, &mut State) + 'a>;

pub const DEFAULT_STEPS_PER_UNIT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub steps_per_unit: usize,
    pub direction: Direction,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            direction: Direction::Forward,
        }
    }
}

impl IntegrationConfig {
    pub fn forward(steps_per_unit: usize) -> Self {
        Self {
            steps_per_unit,
            direction: Direction::Forward,
        }
    }

    pub fn backward(steps_per_unit: usize) -> Self {
        Self {
            steps_per_unit,
            direction: Direction::Backward,
        }
    }
}

pub struct Event<'a> {
    pub r: f64,
    pub jump: Jump<'a>,
}

impl<'a> Event<'a> {
    pub fn new(r: f64, jump: impl Fn(f64, &mut State) + 'a) -> Self {
        Self {
            r,
            jump: Box::new(jump),
        }
    }
}

pub struct StateSystem<'a> {
    pub state: State,
    pub rhs: Rhs<'a>,
    /// Jump schedule; sorted by location on construction of the grid.
    pub events: Vec<Event<'a>>,
}

impl<'a> StateSystem<'a> {
    pub fn new(state: State, rhs: impl Fn(f64, &State) -> State + 'a) -> Self {
        Self {
            state,
            rhs: Box::new(rhs),
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, r: f64, jump: impl Fn(f64, &mut State) + 'a) -> Self {
        self.events.push(Event::new(r, jump));
        self
    }
}

/// Step grid between two locations, in integration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nodes: Vec<f64>,
}

impl Grid {
    /// Uniform grid from `r_start` to `r_end` refined so that every mark
    /// inside the span is a node. Marks within `1e-12` (relative to the span)
    /// of an existing node replace that node instead of creating a sliver step.
    pub fn new(r_start: f64, r_end: f64, steps_per_unit: usize, marks: &[f64]) -> Self {
        let span = r_end - r_start;
        if span == 0.0 {
            return Self {
                nodes: vec![r_start],
            };
        }
        let steps = ((span.abs() * steps_per_unit.max(1) as f64) - 1e-9).ceil().max(1.0) as usize;
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|k| r_start + span * (k as f64) / (steps as f64))
            .collect();
        nodes[steps] = r_end;

        let snap = 1e-12 * span.abs().max(1.0);
        let (lo, hi) = if span > 0.0 {
            (r_start, r_end)
        } else {
            (r_end, r_start)
        };
        for &m in marks {
            if !(lo - snap..=hi + snap).contains(&m) {
                continue;
            }
            // position of first node at or beyond m in integration order
            let pos = nodes.partition_point(|&x| if span > 0.0 { x < m } else { x > m });
            let near = |i: usize| nodes.get(i).map(|&x| (x - m).abs() <= snap).unwrap_or(false);
            if near(pos) {
                if pos != 0 && pos != nodes.len() - 1 {
                    nodes[pos] = m;
                }
            } else if pos > 0 && near(pos - 1) {
                if pos - 1 != 0 {
                    nodes[pos - 1] = m;
                }
            } else {
                nodes.insert(pos, m);
            }
        }
        Self { nodes }
    }

    /// Index of the node closest to `r`, if one lies within the snapping tolerance.
    pub fn index_of(&self, r: f64) -> Option<usize> {
        let span = (self.nodes[self.nodes.len() - 1] - self.nodes[0]).abs();
        let snap = 1e-12 * span.max(1.0);
        self.nodes.iter().position(|&x| (x - r).abs() <= snap)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `y + a * x`, componentwise over the state.
pub fn axpy(y: &State, a: f64, x: &State) -> State {
    y.iter().zip(x).map(|(yi, xi)| yi + xi * a).collect()
}

pub fn is_finite(state: &State) -> bool {
    state.iter().all(|m| m.iter().all(|v| v.is_finite()))
}

/// One classical RK4 step of size `h` (negative for backward steps).
pub fn rk4_step<F>(rhs: &F, r: f64, h: f64, y: &State) -> State
where
    F: Fn(f64, &State) -> State + ?Sized,
{
    let k1 = rhs(r, y);
    let k2 = rhs(r + 0.5 * h, &axpy(y, 0.5 * h, &k1));
    let k3 = rhs(r + 0.5 * h, &axpy(y, 0.5 * h, &k2));
    let k4 = rhs(r + h, &axpy(y, h, &k3));
    y.iter()
        .enumerate()
        .map(|(i, yi)| yi + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrajectoryNode {
    pub r: f64,
    /// State after any jumps scheduled at `r`.
    pub state: State,
    /// State on arrival, before jumps; present only where a jump fired.
    pub before_jump: Option<State>,
}

/// States recorded at every grid node, in integration order.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub nodes: Vec<TrajectoryNode>,
}

impl Trajectory {
    /// Post-jump state at the node matching `r`.
    pub fn state_at(&self, r: f64) -> Option<&State> {
        let first = self.nodes.first()?.r;
        let last = self.nodes.last()?.r;
        let snap = 1e-12 * (last - first).abs().max(1.0);
        self.nodes
            .iter()
            .find(|n| (n.r - r).abs() <= snap)
            .map(|n| &n.state)
    }

    pub fn final_state(&self) -> &State {
        &self.nodes.last().expect("trajectory has at least one node").state
    }
}

/// Integrate `system` from `r_start` to `r_end` with RK4.
///
/// Every event and every entry of `samples` becomes a grid node. Events at
/// the starting location fire before the first step; several events at one
/// location fire in schedule order going forward and in reverse order going
/// backward.
pub fn integrate(
    system: StateSystem<'_>,
    r_start: f64,
    r_end: f64,
    samples: &[f64],
    config: IntegrationConfig,
) -> Result<Trajectory> {
    if config.steps_per_unit == 0 {
        return Err(Error::InvalidArgument(
            "steps_per_unit must be at least 1".into(),
        ));
    }
    if !r_start.is_finite() || !r_end.is_finite() {
        return Err(Error::InvalidArgument("integration span must be finite".into()));
    }
    match config.direction {
        Direction::Forward if r_end < r_start => {
            return Err(Error::InvalidArgument(format!(
                "forward integration requires r_end >= r_start (got {r_start} -> {r_end})"
            )))
        }
        Direction::Backward if r_end > r_start => {
            return Err(Error::InvalidArgument(format!(
                "backward integration requires r_end <= r_start (got {r_start} -> {r_end})"
            )))
        }
        _ => {}
    }
    let (lo, hi) = (r_start.min(r_end), r_start.max(r_end));
    let snap = 1e-12 * (hi - lo).max(1.0);
    if let Some(ev) = system
        .events
        .iter()
        .find(|e| !(e.r >= lo - snap && e.r <= hi + snap))
    {
        return Err(Error::InvalidArgument(format!(
            "event at r = {} lies outside the integration span [{lo}, {hi}]",
            ev.r
        )));
    }

    let StateSystem {
        state,
        rhs,
        mut events,
    } = system;
    let backward = config.direction == Direction::Backward;
    // stable sort keeps schedule order for coincident events
    events.sort_by(|a, b| a.r.partial_cmp(&b.r).expect("finite event locations"));
    if backward {
        events.reverse();
    }

    let mut marks: Vec<f64> = events.iter().map(|e| e.r).collect();
    marks.extend(samples.iter().copied().filter(|r| r.is_finite()));
    let grid = Grid::new(r_start, r_end, config.steps_per_unit, &marks);

    let mut next_event = 0usize;
    let mut fire = |r: f64, state: &mut State| -> bool {
        let mut fired = false;
        while next_event < events.len() && (events[next_event].r - r).abs() <= snap {
            (events[next_event].jump)(r, state);
            next_event += 1;
            fired = true;
        }
        fired
    };

    let mut nodes = Vec::with_capacity(grid.len());
    let mut current = state;
    let r0 = grid.nodes[0];
    let arrival = current.clone();
    let before = fire(r0, &mut current).then_some(arrival);
    nodes.push(TrajectoryNode {
        r: r0,
        state: current.clone(),
        before_jump: before,
    });

    for w in grid.nodes.windows(2) {
        let (ra, rb) = (w[0], w[1]);
        current = rk4_step(rhs.as_ref(), ra, rb - ra, &current);
        if !is_finite(&current) {
            return Err(Error::Divergence { r: rb });
        }
        let arrival = current.clone();
        let before = fire(rb, &mut current).then_some(arrival);
        nodes.push(TrajectoryNode {
            r: rb,
            state: current.clone(),
            before_jump: before,
        });
    }
    Ok(Trajectory { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> State {
        vec![DMatrix::from_element(1, 1, v)]
    }

    fn exp_error(steps: usize) -> f64 {
        let sys = StateSystem::new(scalar(1.0), |_, s: &State| s.clone());
        let traj = integrate(sys, 0.0, 1.0, &[], IntegrationConfig::forward(steps)).unwrap();
        (traj.final_state()[0][(0, 0)] - std::f64::consts::E).abs()
    }

    #[test]
    fn zero_rhs_keeps_state_constant() {
        let sys = StateSystem::new(scalar(3.5), |_, s: &State| vec![s[0].clone() * 0.0]);
        let traj = integrate(sys, 0.0, 2.0, &[0.3, 1.7], IntegrationConfig::default()).unwrap();
        for n in &traj.nodes {
            assert_eq!(n.state[0][(0, 0)], 3.5);
        }
        assert!(traj.state_at(0.3).is_some());
        assert!(traj.state_at(1.7).is_some());
    }

    #[test]
    fn exponential_growth_matches_e() {
        let err = exp_error(100);
        assert!(err / std::f64::consts::E < 1e-9, "relative error {err}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let e25 = exp_error(25);
        let e50 = exp_error(50);
        let e100 = exp_error(100);
        for ratio in [e25 / e50, e50 / e100] {
            assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
        }
    }

    #[test]
    fn pure_jump_accumulates() {
        let sys = StateSystem::new(scalar(0.0), |_, s: &State| vec![s[0].clone() * 0.0])
            .with_event(0.5, |_, s: &mut State| s[0][(0, 0)] += 1.0);
        let traj = integrate(sys, 0.0, 1.0, &[], IntegrationConfig::default()).unwrap();
        assert_eq!(traj.final_state()[0][(0, 0)], 1.0);
        let node = traj.nodes.iter().find(|n| n.r == 0.5).unwrap();
        assert_eq!(node.before_jump.as_ref().unwrap()[0][(0, 0)], 0.0);
        assert_eq!(node.state[0][(0, 0)], 1.0);
    }

    #[test]
    fn forward_then_backward_returns_to_start() {
        let rot = |_: f64, s: &State| {
            let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.3]);
            vec![&a * &s[0]]
        };
        let x0 = DMatrix::from_row_slice(2, 1, &[0.7, -0.2]);
        let fwd = integrate(
            StateSystem::new(vec![x0.clone()], rot),
            0.0,
            1.3,
            &[],
            IntegrationConfig::forward(100),
        )
        .unwrap();
        let back = integrate(
            StateSystem::new(fwd.final_state().clone(), rot),
            1.3,
            0.0,
            &[],
            IntegrationConfig::backward(100),
        )
        .unwrap();
        assert!((&back.final_state()[0] - &x0).norm() < 1e-9);
    }

    #[test]
    fn noop_jump_does_not_perturb() {
        let rhs = |r: f64, s: &State| vec![s[0].map(|v| (v * r).sin())];
        let plain = integrate(
            StateSystem::new(scalar(0.4), rhs),
            0.0,
            1.0,
            &[],
            IntegrationConfig::default(),
        )
        .unwrap();
        let split = integrate(
            StateSystem::new(scalar(0.4), rhs).with_event(0.4567, |_, _| {}),
            0.0,
            1.0,
            &[],
            IntegrationConfig::default(),
        )
        .unwrap();
        let d = (plain.final_state()[0][(0, 0)] - split.final_state()[0][(0, 0)]).abs();
        assert!(d < 1e-12, "difference {d}");
    }

    #[test]
    fn backward_applies_terminal_jump_first() {
        // d/dr x = 0; a jump at the start of a backward pass fires immediately
        let sys = StateSystem::new(scalar(0.0), |_, s: &State| vec![s[0].clone() * 0.0])
            .with_event(1.0, |_, s: &mut State| s[0][(0, 0)] += 2.0)
            .with_event(0.0, |_, s: &mut State| s[0][(0, 0)] *= 3.0);
        let traj = integrate(sys, 1.0, 0.0, &[], IntegrationConfig::backward(10)).unwrap();
        assert_eq!(traj.nodes[0].state[0][(0, 0)], 2.0);
        assert_eq!(traj.final_state()[0][(0, 0)], 6.0);
    }

    #[test]
    fn event_outside_span_is_rejected() {
        let sys = StateSystem::new(scalar(0.0), |_, s: &State| s.clone())
            .with_event(1.5, |_, _| {});
        let err = integrate(sys, 0.0, 1.0, &[], IntegrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn divergence_is_reported() {
        let sys = StateSystem::new(scalar(1.0), |_, s: &State| vec![s[0].map(|v| v * v * 1e200)]);
        let err = integrate(sys, 0.0, 1.0, &[], IntegrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn grid_snaps_marks_and_keeps_endpoints() {
        let g = Grid::new(0.0, 1.0, 10, &[0.3 + 1e-15, 0.35, 1.0, 0.0]);
        assert_eq!(g.nodes.first(), Some(&0.0));
        assert_eq!(g.nodes.last(), Some(&1.0));
        assert_eq!(g.len(), 12);
        assert!(g.index_of(0.35).is_some());
        let b = Grid::new(1.0, 0.0, 10, &[0.35]);
        assert!(b.nodes.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(b.len(), 12);
    }
}
