//! Seeded random draws of matrices, subspaces and tangent vectors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grassmann::{mat, GrassmannPoint, TangentVector};

/// Deterministic generator used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly distributed point of G(p, n).
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize) -> GrassmannPoint {
    loop {
        let raw = gaussian_matrix(rng, n, p);
        if let Some(q) = mat::qr_positive(&raw) {
            return GrassmannPoint::from_raw_unchecked(q);
        }
    }
}

/// Random orthogonal p×p matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, p: usize) -> DMatrix<f64> {
    loop {
        let raw = gaussian_matrix(rng, p, p);
        if let Some(q) = mat::qr_positive(&raw) {
            return q;
        }
    }
}

/// Horizontal tangent vector at `base` with Frobenius norm `norm` and a
/// uniformly random direction.
pub fn random_tangent<R: Rng + ?Sized>(rng: &mut R, base: &GrassmannPoint, norm: f64) -> TangentVector {
    loop {
        let raw = gaussian_matrix(rng, base.n(), base.p());
        let h = mat::project_horizontal(base.matrix(), &raw);
        let len = h.norm();
        if len > 1e-8 {
            return TangentVector::from_raw_unchecked(base.clone(), h * (norm / len));
        }
    }
}
