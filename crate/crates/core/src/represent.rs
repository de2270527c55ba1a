//! Raw data as subspaces: landmark shapes through their left singular
//! vectors, and frame sequences through the observability matrix of an
//! identified linear dynamical system.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{self, matrix_serde, GrassmannPoint};

/// Relative threshold below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-10;

/// A shape as a point on G(d, m) plus the singular values needed to
/// rebuild landmark coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRepresentation {
    pub point: GrassmannPoint,
    /// Singular values of the centered landmark matrix, descending.
    pub singular_values: Vec<f64>,
}

fn significant_rank(sv: &[f64]) -> usize {
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Left singular vectors, sorted by decreasing singular value, with each
/// column's largest-magnitude entry made positive.
fn leading_left_vectors(m: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD did not produce singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if significant_rank(&sv) < k {
        return Err(Error::RankDeficient(format!(
            "{} significant singular values, {k} required",
            significant_rank(&sv)
        )));
    }
    let mut out = DMatrix::zeros(m.nrows(), k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let mut c = u.column(i).clone_owned();
        let pivot = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            c = -c;
        }
        out.set_column(j, &c);
    }
    Ok((out, sv))
}

/// Center the m×d landmark matrix and take its left singular vectors.
pub fn shape_to_grassmann(landmarks: &DMatrix<f64>) -> Result<ShapeRepresentation> {
    let (m, d) = landmarks.shape();
    if d == 0 || m <= d {
        return Err(Error::InvalidArgument(format!(
            "need more landmarks than dimensions (got {m} landmarks in {d} dimensions)"
        )));
    }
    if landmarks.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("landmark coordinates must be finite".into()));
    }
    let mut centered = landmarks.clone();
    for mut c in centered.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    let (u, sv) = leading_left_vectors(&centered, d).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::Degenerate(format!("centered shape is rank deficient: {msg}")),
        other => other,
    })?;
    Ok(ShapeRepresentation {
        point: GrassmannPoint::new(u)?,
        singular_values: sv[..d].to_vec(),
    })
}

/// Landmark coordinates `U·diag(scale)` of a shape point.
pub fn reconstruct_shape(point: &GrassmannPoint, scale: &[f64]) -> Result<DMatrix<f64>> {
    if scale.len() != point.p() {
        return Err(Error::DimensionMismatch(format!(
            "{} scale factors for a {}-dimensional shape",
            scale.len(),
            point.p()
        )));
    }
    let mut out = point.matrix().clone();
    for (j, &s) in scale.iter().enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    Ok(out)
}

/// Entrywise mean of the singular values of several shapes.
pub fn mean_singular_values(shapes: &[ShapeRepresentation]) -> Result<Vec<f64>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no shapes given".into()))?;
    let d = first.singular_values.len();
    if shapes.iter().any(|s| s.singular_values.len() != d) {
        return Err(Error::DimensionMismatch("shapes differ in dimension".into()));
    }
    Ok((0..d)
        .map(|j| shapes.iter().map(|s| s.singular_values[j]).sum::<f64>() / shapes.len() as f64)
        .collect())
}

/// `x_{k+1} = A x_k`, `y_k = C x_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsModel {
    #[serde(with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub c: DMatrix<f64>,
}

impl LdsModel {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.a.nrows();
        if p == 0 || self.a.ncols() != p || self.c.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, C is {}x{}",
                self.a.nrows(),
                self.a.ncols(),
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if self.a.iter().chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(())
    }
}

/// Options of [`identify_lds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    /// Subtract the (weighted) temporal mean of the frames first.
    pub subtract_mean: bool,
    /// Positive per-frame weights; `None` weighs all frames equally.
    pub weights: Option<Vec<f64>>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            subtract_mean: true,
            weights: None,
        }
    }
}

/// Gaussian weights over `len` frames centered at the middle frame.
pub fn gaussian_weights(len: usize, sigma: f64) -> Vec<f64> {
    let mid = (len as f64 - 1.0) / 2.0;
    (0..len)
        .map(|k| (-0.5 * ((k as f64 - mid) / sigma).powi(2)).exp())
        .collect()
}

/// Identify a `p`-state system from an n×τ matrix of frames (one frame per
/// column). `C` spans the top `p` left singular vectors of the (centered,
/// √w-scaled) frames; `A` is the weighted least-squares fit of
/// `x_{k+1} ≈ A x_k` with `x_k = Cᵀ y_k`.
pub fn identify_lds(frames: &DMatrix<f64>, p: usize, config: &IdentifyConfig) -> Result<LdsModel> {
    let (n, tau) = frames.shape();
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!("cannot identify {p} states from {n}-dimensional frames")));
    }
    if tau < p + 1 {
        return Err(Error::InvalidArgument(format!("{tau} frames are too few for {p} states")));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("frames must be finite".into()));
    }
    let weights = match &config.weights {
        Some(w) => {
            if w.len() != tau {
                return Err(Error::DimensionMismatch(format!("{} weights for {tau} frames", w.len())));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument("weights must be positive".into()));
            }
            Some(w.as_slice())
        }
        None => None,
    };
    let w = |k: usize| weights.map_or(1.0, |w| w[k]);

    let mut centered = frames.clone();
    if config.subtract_mean {
        let total: f64 = (0..tau).map(w).sum();
        let mut mean = nalgebra::DVector::zeros(n);
        for k in 0..tau {
            mean += frames.column(k) * w(k);
        }
        mean /= total;
        for mut c in centered.column_iter_mut() {
            c -= &mean;
        }
    }
    let mut scaled = centered.clone();
    if weights.is_some() {
        for (k, mut c) in scaled.column_iter_mut().enumerate() {
            c *= w(k).sqrt();
        }
    }
    let (c, _) = leading_left_vectors(&scaled, p)?;
    let x = c.tr_mul(&centered);

    let mut x0 = x.columns(0, tau - 1).clone_owned();
    let mut x1 = x.columns(1, tau - 1).clone_owned();
    if weights.is_some() {
        for k in 0..tau - 1 {
            let s = w(k).sqrt();
            x0.column_mut(k).scale_mut(s);
            x1.column_mut(k).scale_mut(s);
        }
    }
    // A = X₁X₀⁺ solved as X₀ᵀAᵀ = X₁ᵀ
    let svd = x0.transpose().svd(true, true);
    let sv = svd.singular_values.as_slice().to_vec();
    if significant_rank(&sv) < p {
        return Err(Error::RankDeficient(format!(
            "state sequence spans {} of {p} dimensions",
            significant_rank(&sv)
        )));
    }
    let top = sv.iter().copied().fold(0.0, f64::max);
    let at = svd
        .solve(&x1.transpose(), RANK_TOL * top)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(LdsModel { a: at.transpose(), c })
}

/// `O = [C; CA; …; CA^{p−1}]`.
pub fn observability_matrix(model: &LdsModel) -> Result<DMatrix<f64>> {
    model.validate()?;
    let (n, p) = model.c.shape();
    let mut out = DMatrix::zeros(n * p, p);
    let mut block = model.c.clone();
    for i in 0..p {
        out.view_mut((i * n, 0), (n, p)).copy_from(&block);
        block = &block * &model.a;
    }
    Ok(out)
}

/// Orthonormalized observability matrix as a point on G(p, np).
pub fn lds_to_grassmann(model: &LdsModel) -> Result<GrassmannPoint> {
    let o = observability_matrix(model)?;
    grassmann::retract(&o).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate("observability matrix is rank deficient".into()),
        other => other,
    })
}

/// Eigenvalues of a square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() != a.ncols() || a.is_empty() {
        return Err(Error::DimensionMismatch("eigenvalues need a nonempty square matrix".into()));
    }
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

/// `|arg λ|` of the eigenvalue of largest modulus.
pub fn dominant_phase(a: &DMatrix<f64>) -> Result<f64> {
    let ev = eigenvalues(a)?;
    let top = ev
        .iter()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()).then(x.im.abs().total_cmp(&y.im.abs())))
        .expect("nonempty");
    Ok(top.im.atan2(top.re).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::geodesic_distance;
    use crate::random::{gaussian_matrix, random_orthogonal, rng};

    fn landmarks(seed: u64) -> DMatrix<f64> {
        gaussian_matrix(&mut rng(seed), 8, 2)
    }

    #[test]
    fn affine_invariance() {
        let mut g = rng(4);
        for seed in 0..20 {
            let l = landmarks(seed);
            let mut m = gaussian_matrix(&mut g, 2, 2);
            m[(0, 0)] += 3.0;
            m[(1, 1)] += 3.0;
            let shift = gaussian_matrix(&mut g, 1, 2);
            let mut moved = &l * m.transpose();
            for mut row in moved.row_iter_mut() {
                row += &shift;
            }
            let a = shape_to_grassmann(&l).unwrap();
            let b = shape_to_grassmann(&moved).unwrap();
            assert!(geodesic_distance(&a.point, &b.point).unwrap() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_centered_shape_spans_itself() {
        let mut raw = gaussian_matrix(&mut rng(2), 6, 2);
        for mut c in raw.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
        let q = raw.qr().q();
        let rep = shape_to_grassmann(&q).unwrap();
        let want = GrassmannPoint::new(q).unwrap();
        assert!(geodesic_distance(&rep.point, &want).unwrap() < 1e-12);
    }

    #[test]
    fn single_shape_reconstruction() {
        let l = landmarks(7);
        let rep = shape_to_grassmann(&l).unwrap();
        let scale = mean_singular_values(std::slice::from_ref(&rep)).unwrap();
        let rebuilt = reconstruct_shape(&rep.point, &scale).unwrap();
        let mut centered = l.clone();
        for mut c in centered.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
        // best R with rebuilt·R ≈ centered
        let svd = (rebuilt.transpose() * &centered).svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        assert!((rebuilt * r - centered).norm() < 1e-8);
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let l = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(shape_to_grassmann(&l), Err(Error::Degenerate(_))));
    }

    fn simulate(a: &DMatrix<f64>, c: &DMatrix<f64>, x0: &DMatrix<f64>, tau: usize) -> DMatrix<f64> {
        let mut frames = DMatrix::zeros(c.nrows(), tau);
        let mut x = x0.clone();
        for k in 0..tau {
            frames.set_column(k, &(c * &x).column(0));
            x = a * x;
        }
        frames
    }

    fn rotation(theta: f64, radius: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]) * radius
    }

    #[test]
    fn recovers_known_system() {
        let mut g = rng(12);
        let c = random_orthogonal(&mut g, 10).columns(0, 2).clone_owned();
        let a = rotation(0.4, 0.98);
        let x0 = DMatrix::from_column_slice(2, 1, &[1.0, 0.3]);
        let frames = simulate(&a, &c, &x0, 60);
        let cfg = IdentifyConfig {
            subtract_mean: false,
            ..IdentifyConfig::default()
        };
        let m = identify_lds(&frames, 2, &cfg).unwrap();
        let got = GrassmannPoint::new(m.c.clone()).unwrap();
        let want = GrassmannPoint::new(c).unwrap();
        assert!(geodesic_distance(&got, &want).unwrap() < 1e-6);
        let mut e1 = eigenvalues(&m.a).unwrap();
        let mut e2 = eigenvalues(&a).unwrap();
        for e in [&mut e1, &mut e2] {
            e.sort_by(|x, y| x.im.total_cmp(&y.im));
        }
        for (x, y) in e1.iter().zip(&e2) {
            assert!((x - y).norm() < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn constant_sequence_has_unit_transition() {
        let frame = DMatrix::from_column_slice(5, 1, &[1.0, -2.0, 0.5, 3.0, 0.0]);
        let frames = DMatrix::from_fn(5, 12, |i, _| frame[(i, 0)]);
        let cfg = IdentifyConfig {
            subtract_mean: false,
            ..IdentifyConfig::default()
        };
        let m = identify_lds(&frames, 1, &cfg).unwrap();
        assert!((m.a[(0, 0)] - 1.0).abs() < 1e-10);
        // centering removes everything a constant sequence has
        assert!(matches!(
            identify_lds(&frames, 1, &IdentifyConfig::default()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn unit_weights_change_nothing() {
        let frames = gaussian_matrix(&mut rng(3), 7, 20);
        let plain = identify_lds(&frames, 3, &IdentifyConfig::default()).unwrap();
        let weighted = identify_lds(
            &frames,
            3,
            &IdentifyConfig {
                weights: Some(vec![1.0; 20]),
                ..IdentifyConfig::default()
            },
        )
        .unwrap();
        assert!((&plain.a - &weighted.a).amax() <= 1e-12);
        assert!((&plain.c - &weighted.c).amax() <= 1e-12);
    }

    #[test]
    fn rejects_bad_weights_and_short_sequences() {
        let frames = gaussian_matrix(&mut rng(3), 7, 4);
        assert!(identify_lds(&frames, 4, &IdentifyConfig::default()).is_err());
        let cfg = IdentifyConfig {
            weights: Some(vec![1.0, 0.0, 1.0, 1.0]),
            ..IdentifyConfig::default()
        };
        assert!(matches!(identify_lds(&frames, 2, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn similarity_transform_invariance() {
        let mut g = rng(30);
        let c = gaussian_matrix(&mut g, 6, 3);
        let a = gaussian_matrix(&mut g, 3, 3) * 0.4;
        let base = lds_to_grassmann(&LdsModel { a: a.clone(), c: c.clone() }).unwrap();
        for _ in 0..100 {
            let t = gaussian_matrix(&mut g, 3, 3) + DMatrix::identity(3, 3) * 2.0;
            let ti = t.clone().try_inverse().unwrap();
            let moved = LdsModel {
                a: &t * &a * &ti,
                c: &c * &ti,
            };
            let other = lds_to_grassmann(&moved).unwrap();
            assert!(geodesic_distance(&base, &other).unwrap() < 1e-8);
        }
    }

    #[test]
    fn identity_dynamics_stack_copies_of_c() {
        let c = random_orthogonal(&mut rng(5), 5).columns(0, 2).clone_owned();
        let point = lds_to_grassmann(&LdsModel {
            a: DMatrix::identity(2, 2),
            c: c.clone(),
        })
        .unwrap();
        let mut stack = DMatrix::zeros(10, 2);
        stack.view_mut((0, 0), (5, 2)).copy_from(&c);
        stack.view_mut((5, 0), (5, 2)).copy_from(&c);
        let want = grassmann::retract(&stack).unwrap();
        assert!(geodesic_distance(&point, &want).unwrap() < 1e-12);
    }

    #[test]
    fn gaussian_weights_peak_in_the_middle() {
        let w = gaussian_weights(201, 100.0);
        assert_eq!(w[100], 1.0);
        assert!((w[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(w[0], w[200]);
    }

    #[test]
    fn phase_of_rotation() {
        assert!((dominant_phase(&rotation(0.7, 0.9)).unwrap() - 0.7).abs() < 1e-12);
    }
}
