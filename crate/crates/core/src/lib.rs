//! Intrinsic parametric regression on the Grassmann manifold.
//!
//! Curves are fitted to scalar-indexed subspace data by shooting: a model is
//! a set of initial conditions (plus time-warp parameters or control-point
//! jumps), the fitted curve is obtained by integrating its dynamics forward,
//! and energy gradients come from backward integration of the adjoint system.
//!
//! * [`grassmann`]: points, tangents, exp/log maps, distances.
//! * [`integrate`]: fixed-step RK4 with scheduled jumps.
//! * [`euclid`]: linear, time-warped and cubic-spline regression in ℝⁿ.
//! * [`ggr`]: the geodesic, time-warped and cubic-spline fits on G(p, n).
//! * [`represent`]: landmark shapes and linear dynamical systems as subspaces.
//! * [`synthetic`]: sine/cosine LDS toy data and manifold perturbation.
//! * [`eval`]: Karcher mean, R², MSD, prediction and crossvalidation.
//! * [`io`]: dataset and model file formats.

pub mod error;
pub mod euclid;
pub mod eval;
pub mod ggr;
pub mod grassmann;
pub mod integrate;
pub mod io;
pub mod optim;
pub mod random;
pub mod represent;
pub mod report;
mod shoot;
pub mod synthetic;
pub mod warp;

pub use error::{Error, Result};
pub use ggr::{Curve, Dataset, FitConfig, FittedModel};
pub use grassmann::{GrassmannPoint, TangentVector};
pub use report::FitReport;
pub use warp::TimeWarp;
