//! Riemannian primitives of the Grassmann manifold G(p, n).
//!
//! A point is the column span of an orthonormal n×p representer `Y`; tangent
//! vectors at `Y` are horizontal n×p matrices (`Yᵀ Δ = 0`). All comparisons
//! between points go through [`geodesic_distance`], never matrix equality,
//! because the representer is only defined up to a right p×p orthogonal factor.
//!
//! The matrix-level helpers in [`mat`] are what the fitting code uses in its
//! inner loops; the typed wrappers here validate dimensions and invariants.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{self, IntegrationConfig, State, StateSystem};

/// Orthonormality tolerance on `‖YᵀY − I‖_F` and `‖YᵀΔ‖_F`.
pub const TOL_ORTH: f64 = 1e-10;

/// Distance below π/2 at which a principal angle counts as on the cut locus.
pub const TOL_CUT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct GrassmannPoint {
    y: DMatrix<f64>,
}

impl GrassmannPoint {
    /// Wrap an orthonormal representer.
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        let (n, p) = y.shape();
        if p == 0 || p >= n {
            return Err(Error::InvalidArgument(format!(
                "a Grassmann representer needs 0 < p < n, got {n}x{p}"
            )));
        }
        let err = mat::orthonormality_error(&y);
        if !(err < TOL_ORTH) {
            return Err(Error::InvalidArgument(format!(
                "representer is not orthonormal: |YᵀY - I| = {err:.3e}"
            )));
        }
        Ok(Self { y })
    }

    /// Orthonormalize an arbitrary full-rank n×p matrix (see [`retract`]).
    pub fn from_spanning(raw: &DMatrix<f64>) -> Result<Self> {
        retract(raw)
    }

    pub(crate) fn from_raw_unchecked(y: DMatrix<f64>) -> Self {
        Self { y }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.y
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        mat::orthonormality_error(&self.y)
    }
}

/// Horizontal tangent vector together with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    delta: DMatrix<f64>,
    base: GrassmannPoint,
}

impl TangentVector {
    pub fn new(base: GrassmannPoint, delta: DMatrix<f64>) -> Result<Self> {
        if delta.shape() != base.y.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tangent {:?} vs base {:?}",
                delta.shape(),
                base.y.shape()
            )));
        }
        let vert = base.y.tr_mul(&delta).norm();
        if !(vert < TOL_ORTH * (1.0 + delta.norm())) {
            return Err(Error::InvalidArgument(format!(
                "tangent vector is not horizontal: |YᵀΔ| = {vert:.3e}"
            )));
        }
        Ok(Self { delta, base })
    }

    pub fn zero(base: GrassmannPoint) -> Self {
        let delta = DMatrix::zeros(base.n(), base.p());
        Self { delta, base }
    }

    pub(crate) fn from_raw_unchecked(base: GrassmannPoint, delta: DMatrix<f64>) -> Self {
        Self { delta, base }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn base(&self) -> &GrassmannPoint {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            delta: &self.delta * s,
            base: self.base.clone(),
        }
    }
}

/// Principal angles between two subspaces, each in [0, π/2].
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalAngles(pub Vec<f64>);

impl PrincipalAngles {
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Canonical metric `tr(Δ₁ᵀ Δ₂)` between two tangent vectors at one base point.
pub fn canonical_inner(a: &TangentVector, b: &TangentVector) -> Result<f64> {
    same_shape(&a.delta, &b.delta, "canonical_inner")?;
    if geodesic_distance(&a.base, &b.base)? > 1e-8 {
        return Err(Error::InvalidArgument(
            "tangent vectors live at different base points".into(),
        ));
    }
    Ok(a.delta.dot(&b.delta))
}

pub fn principal_angles(y: &GrassmannPoint, z: &GrassmannPoint) -> Result<PrincipalAngles> {
    same_shape(&y.y, &z.y, "principal_angles")?;
    Ok(PrincipalAngles(mat::principal_angles(&y.y, &z.y)))
}

/// Arc length of the connecting geodesic, `‖φ‖₂` over the principal angles.
pub fn geodesic_distance(y: &GrassmannPoint, z: &GrassmannPoint) -> Result<f64> {
    same_shape(&y.y, &z.y, "geodesic_distance")?;
    Ok(mat::distance_sq(&y.y, &z.y).sqrt())
}

/// Closed-form exponential map at unit time.
pub fn exp_map_closed(delta: &TangentVector) -> Result<GrassmannPoint> {
    let (point, _) = mat::geodesic(&delta.base.y, &delta.delta, 1.0);
    retract(&point)
}

/// Exponential map by integrating the geodesic equation
/// `Ẋ₁ = X₂, Ẋ₂ = −X₁(X₂ᵀX₂)` from 0 to `r`; returns end point and end velocity.
pub fn exp_map_ode(
    delta: &TangentVector,
    r: f64,
    steps_per_unit: usize,
) -> Result<(GrassmannPoint, TangentVector)> {
    if !r.is_finite() {
        return Err(Error::InvalidArgument("integration length must be finite".into()));
    }
    if r == 0.0 {
        return Ok((delta.base.clone(), delta.clone()));
    }
    let system = StateSystem::new(
        vec![delta.base.y.clone(), delta.delta.clone()],
        mat::geodesic_rhs,
    );
    let config = if r > 0.0 {
        IntegrationConfig::forward(steps_per_unit)
    } else {
        IntegrationConfig::backward(steps_per_unit)
    };
    let traj = integrate::integrate(system, 0.0, r, &[], config)?;
    let end = traj.final_state();
    let (mut x1, mut x2) = (end[0].clone(), end[1].clone());
    if mat::orthonormality_error(&x1) > TOL_ORTH {
        let q = mat::qr_positive(&x1)
            .ok_or_else(|| Error::Integration("geodesic left the manifold".into()))?;
        x2 = mat::project_horizontal(&q, &x2);
        x1 = q;
    }
    let base = GrassmannPoint::from_raw_unchecked(x1);
    let vel = TangentVector::from_raw_unchecked(base.clone(), x2);
    Ok((base, vel))
}

/// Riemannian logarithm: the tangent at `y` whose unit-time geodesic reaches `z`.
pub fn log_map(y: &GrassmannPoint, z: &GrassmannPoint) -> Result<TangentVector> {
    same_shape(&y.y, &z.y, "log_map")?;
    let delta = mat::log(&y.y, &z.y)?;
    Ok(TangentVector::from_raw_unchecked(y.clone(), delta))
}

/// `(I − YYᵀ) C`.
pub fn project_horizontal(y: &GrassmannPoint, c: &DMatrix<f64>) -> Result<TangentVector> {
    same_shape(&y.y, c, "project_horizontal")?;
    Ok(TangentVector::from_raw_unchecked(
        y.clone(),
        mat::project_horizontal(&y.y, c),
    ))
}

/// Thin-QR orthonormalization with a positive diagonal in `R`.
pub fn retract(raw: &DMatrix<f64>) -> Result<GrassmannPoint> {
    let (n, p) = raw.shape();
    if p == 0 || p >= n {
        return Err(Error::InvalidArgument(format!(
            "a Grassmann representer needs 0 < p < n, got {n}x{p}"
        )));
    }
    let q = mat::qr_positive(raw).ok_or_else(|| {
        Error::Degenerate("matrix does not have full column rank".into())
    })?;
    Ok(GrassmannPoint::from_raw_unchecked(q))
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<GrassmannPoint> for MatrixRepr {
    fn from(p: GrassmannPoint) -> Self {
        MatrixRepr::from(&p.y)
    }
}

impl From<&DMatrix<f64>> for MatrixRepr {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixRepr> for GrassmannPoint {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        if r.data.len() != r.rows * r.cols {
            return Err(Error::Format(format!(
                "matrix of shape {}x{} carries {} entries",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        GrassmannPoint::new(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// Serde adapters storing matrices as `{rows, cols, data}` with row-major data.
pub mod matrix_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    fn build(r: MatrixRepr) -> std::result::Result<DMatrix<f64>, String> {
        if r.data.len() != r.rows * r.cols {
            return Err(format!(
                "matrix of shape {}x{} carries {} entries",
                r.rows,
                r.cols,
                r.data.len()
            ));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        build(MatrixRepr::deserialize(d)?).map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(m: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
            let reprs: Vec<MatrixRepr> = m.iter().map(MatrixRepr::from).collect();
            reprs.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vec<DMatrix<f64>>, D::Error> {
            Vec::<MatrixRepr>::deserialize(d)?
                .into_iter()
                .map(|r| build(r).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// Untyped matrix kernels shared by the fitting code.
pub mod mat {
    use super::*;

    pub fn orthonormality_error(y: &DMatrix<f64>) -> f64 {
        let mut g = y.tr_mul(y);
        for i in 0..g.nrows() {
            g[(i, i)] -= 1.0;
        }
        g.norm()
    }

    pub fn project_horizontal(y: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        c - y * y.tr_mul(c)
    }

    /// Thin QR with the sign of each column fixed so that diag(R) > 0.
    /// Returns `None` when the input is numerically rank deficient.
    pub fn qr_positive(raw: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if !raw.iter().all(|v| v.is_finite()) {
            return None;
        }
        let qr = raw.clone().qr();
        let r = qr.r();
        let mut q = qr.q();
        let scale = raw.norm().max(f64::MIN_POSITIVE);
        for j in 0..r.ncols() {
            let d = r[(j, j)];
            if d.abs() <= 1e-13 * scale {
                return None;
            }
            if d < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Some(q)
    }

    fn sorted_singular_values(m: DMatrix<f64>) -> Vec<f64> {
        let mut s: Vec<f64> = SVD::new(m, false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        s
    }

    /// Principal angles, ascending. Cosines come from the SVD of `YᵀZ`
    /// (clamped to [0, 1] before `acos`); for angles below π/4 the sines of
    /// `(I − YYᵀ)Z` are used instead, which keeps small angles accurate.
    pub fn principal_angles(y: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<f64> {
        let yz = y.tr_mul(z);
        let resid = z - y * &yz;
        let cos = sorted_singular_values(yz);
        let mut sin = sorted_singular_values(resid);
        sin.reverse();
        cos.iter()
            .zip(&sin)
            .map(|(&c, &s)| {
                let c = c.clamp(-1.0, 1.0);
                if c > FRAC_1_SQRT_2 {
                    s.clamp(0.0, 1.0).asin()
                } else {
                    c.acos()
                }
            })
            .collect()
    }

    pub fn distance_sq(y: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
        principal_angles(y, z).iter().map(|a| a * a).sum()
    }

    /// Riemannian log at `y` of `z`: with `M = (I − YYᵀ)Z (YᵀZ)⁻¹ = UΣVᵀ`,
    /// the result is `U atan(Σ) Vᵀ`.
    pub fn log(y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let angles = principal_angles(y, z);
        let max = angles.iter().copied().fold(0.0, f64::max);
        if max >= FRAC_PI_2 - TOL_CUT {
            return Err(Error::CutLocus {
                index: None,
                angle: max,
            });
        }
        let yz = y.tr_mul(z);
        let resid = z - y * &yz;
        let inv = yz.try_inverse().ok_or(Error::CutLocus {
            index: None,
            angle: max,
        })?;
        let m = resid * inv;
        let svd = SVD::new(m, true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let atan = DMatrix::from_diagonal(&svd.singular_values.map(f64::atan));
        let delta = u * atan * vt;
        Ok(project_horizontal(y, &delta))
    }

    /// Point and velocity at time `t` along the geodesic from `y` with
    /// initial velocity `delta`, via the thin SVD `Δ = UΣVᵀ`:
    /// `Y(t) = Y V cos(Σt) Vᵀ + U sin(Σt) Vᵀ`.
    pub fn geodesic(y: &DMatrix<f64>, delta: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let svd = SVD::new(delta.clone(), true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let s: &DVector<f64> = &svd.singular_values;
        let cos = DMatrix::from_diagonal(&s.map(|v| (v * t).cos()));
        let sin = DMatrix::from_diagonal(&s.map(|v| (v * t).sin()));
        let scos = DMatrix::from_diagonal(&s.map(|v| v * (v * t).cos()));
        let ssin = DMatrix::from_diagonal(&s.map(|v| v * (v * t).sin()));
        let yv = y * vt.transpose();
        let point = &yv * cos * &vt + &u * sin * &vt;
        let vel = -(&yv * ssin * &vt) + &u * scos * &vt;
        (point, vel)
    }

    /// Right-hand side of the geodesic equation as a first-order system.
    pub fn geodesic_rhs(_r: f64, s: &State) -> State {
        let gram = s[1].tr_mul(&s[1]);
        vec![s[1].clone(), -(&s[0] * gram)]
    }
}
