//! Toy data: 2D sine/cosine signals whose frequency depends on a scalar,
//! embedded in a higher-dimensional space, identified as linear dynamical
//! systems and mapped to G(p, np); plus the denoising protocol built on it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::ggr::{Curve, Dataset, FittedModel, Sample};
use crate::grassmann::{exp_map_closed, GrassmannPoint};
use crate::random::{gaussian_matrix, random_tangent, rng};
use crate::report::FitReport;
use crate::represent::{identify_lds, lds_to_grassmann, IdentifyConfig};
use crate::warp::TimeWarp;

/// How the independent variable `r` sets the signal frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum FrequencyLaw {
    /// `ω = r`.
    Std,
    /// `ω = lo + (hi − lo)·f(r; k, M)` with the logistic warp `f`.
    Logistic { lo: f64, hi: f64, k: f64, center: f64 },
    /// `ω = offset + amplitude·sin(rate·r)`.
    Sine { offset: f64, amplitude: f64, rate: f64 },
}

impl FrequencyLaw {
    pub fn logistic() -> Self {
        FrequencyLaw::Logistic {
            lo: 0.5,
            hi: 9.5,
            k: 1.0,
            center: 5.0,
        }
    }

    pub fn sine() -> Self {
        FrequencyLaw::Sine {
            offset: 5.0,
            amplitude: 4.0,
            rate: 0.5,
        }
    }

    pub fn frequency(&self, r: f64) -> f64 {
        match *self {
            FrequencyLaw::Std => r,
            FrequencyLaw::Logistic { lo, hi, k, center } => lo + (hi - lo) * TimeWarp::logistic(k, center).eval(r),
            FrequencyLaw::Sine {
                offset,
                amplitude,
                rate,
            } => offset + amplitude * (rate * r).sin(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_points: usize,
    pub freq_law: FrequencyLaw,
    pub embed_dim: usize,
    pub samples_per_signal: usize,
    /// Signals are sampled on `[0, domain_end]`.
    pub domain_end: f64,
    pub noise_sigma: f64,
    pub lds_states: usize,
    /// Independent variables are drawn uniformly from this open interval.
    pub r_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_points: 40,
            freq_law: FrequencyLaw::Std,
            embed_dim: 24,
            samples_per_signal: 630,
            domain_end: 10.0 * std::f64::consts::PI,
            noise_sigma: 0.1,
            lds_states: 2,
            r_range: (0.0, 10.0),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_points > 0
            && self.embed_dim > 2
            && self.lds_states > 0
            && self.lds_states <= 2
            && self.samples_per_signal > self.lds_states
            && self.domain_end > 0.0
            && self.noise_sigma >= 0.0
            && self.noise_sigma.is_finite()
            && self.r_range.0 < self.r_range.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid synthetic configuration: {self:?}")))
        }
    }
}

/// A generated dataset and the frequency behind each sample (same order).
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    pub frequencies: Vec<f64>,
}

/// Embedding with orthonormal columns shared by every signal of a dataset.
fn embedding<R: Rng>(g: &mut R, dim: usize) -> Result<DMatrix<f64>> {
    let w = gaussian_matrix(g, dim, 2);
    w.svd(true, false)
        .u
        .ok_or_else(|| Error::Degenerate("embedding SVD failed".into()))
}

fn signal_point<R: Rng>(
    cfg: &SynthConfig,
    u: &DMatrix<f64>,
    omega: f64,
    noise: Option<(&mut R, &Normal<f64>)>,
) -> Result<GrassmannPoint> {
    let steps = cfg.samples_per_signal;
    let s = DMatrix::from_fn(2, steps, |i, j| {
        let tau = cfg.domain_end * j as f64 / (steps - 1) as f64;
        if i == 0 {
            (omega * tau).sin()
        } else {
            (omega * tau).cos()
        }
    });
    let mut frames = u * s;
    if let Some((g, normal)) = noise {
        for v in frames.iter_mut() {
            *v += normal.sample(g);
        }
    }
    let id = IdentifyConfig {
        subtract_mean: false,
        weights: None,
    };
    lds_to_grassmann(&identify_lds(&frames, cfg.lds_states, &id)?)
}

/// Draw `num_points` locations, turn each into a noisy embedded signal and
/// map its identified system to the Grassmannian.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut g = rng(cfg.seed);
    let u = embedding(&mut g, cfg.embed_dim)?;
    let (lo, hi) = cfg.r_range;
    let r: Vec<f64> = (0..cfg.num_points)
        .map(|_| loop {
            let v = g.random_range(lo..hi);
            if v > lo {
                break v;
            }
        })
        .collect();
    let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut samples = Vec::with_capacity(r.len());
    for &ri in &r {
        let noise = (cfg.noise_sigma > 0.0).then_some((&mut g, &normal));
        samples.push(Sample {
            r: ri,
            point: signal_point(cfg, &u, cfg.freq_law.frequency(ri), noise)?,
        });
    }
    let dataset = Dataset::new(samples)?;
    let frequencies = dataset.r_values().iter().map(|&v| cfg.freq_law.frequency(v)).collect();
    Ok(SynthData { dataset, frequencies })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub shoot_time: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            shoot_time: 0.03,
            seed: 1,
        }
    }
}

/// Move every point along a random unit tangent for `shoot_time`.
pub fn perturb_along_manifold(data: &Dataset, cfg: &PerturbConfig) -> Result<Dataset> {
    if !(cfg.shoot_time >= 0.0 && cfg.shoot_time.is_finite()) {
        return Err(Error::InvalidArgument(format!("shoot_time must be >= 0 (got {})", cfg.shoot_time)));
    }
    let mut g = rng(cfg.seed);
    let samples = data
        .samples()
        .iter()
        .map(|s| {
            let v = random_tangent(&mut g, &s.point, 1.0);
            let point = if cfg.shoot_time == 0.0 {
                s.point.clone()
            } else {
                exp_map_closed(&v.scaled(cfg.shoot_time))?
            };
            Ok(Sample { r: s.r, point })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_normalization(samples, *data.normalization())
}

/// Result of one denoising run.
#[derive(Clone, Debug)]
pub struct Denoising {
    /// Model fitted to the clean data; its curve is the ground truth.
    pub reference: FittedModel,
    /// Ground-truth curve sampled at the data locations.
    pub ground_truth: Dataset,
    pub noisy: Dataset,
    pub estimate: FittedModel,
    pub estimate_report: FitReport,
    /// MSD between the estimated and ground-truth curves at the data locations.
    pub curve_msd: f64,
    /// MSD between the noisy data and the ground truth.
    pub data_msd: f64,
}

/// Fit `clean`, sample the fitted curve as ground truth, perturb it, refit
/// and compare the two curves.
pub fn denoising<F>(clean: &Dataset, perturb: &PerturbConfig, fit: F) -> Result<Denoising>
where
    F: Fn(&Dataset) -> Result<(FittedModel, FitReport)>,
{
    let (reference, _) = fit(clean)?;
    let r = clean.r_values();
    let truth = reference.evaluate_many(&r)?;
    let ground_truth = Dataset::with_normalization(
        r.iter()
            .zip(&truth)
            .map(|(&r, p)| Sample { r, point: p.clone() })
            .collect(),
        *clean.normalization(),
    )?;
    let noisy = perturb_along_manifold(&ground_truth, perturb)?;
    let (estimate, estimate_report) = fit(&noisy)?;
    let fitted = estimate.evaluate_many(&r)?;
    Ok(Denoising {
        curve_msd: eval::mean_square_distance(&fitted, &truth)?,
        data_msd: eval::mean_square_distance(&noisy.points(), &truth)?,
        reference,
        ground_truth,
        noisy,
        estimate,
        estimate_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::spearman;
    use crate::grassmann::geodesic_distance;
    use crate::represent::dominant_phase;

    fn small(law: FrequencyLaw, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            num_points: 12,
            freq_law: law,
            noise_sigma: noise,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn points_live_on_g_2_48() {
        let d = generate_dataset(&small(FrequencyLaw::Std, 0.1, 3)).unwrap();
        for s in d.dataset.samples() {
            assert_eq!(s.point.matrix().shape(), (48, 2));
            assert!(s.point.orthonormality_error() < 1e-10);
            assert!(s.r > 0.0 && s.r < 10.0);
        }
        assert_eq!(d.frequencies, d.dataset.r_values());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = small(FrequencyLaw::sine(), 0.1, 9);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn noiseless_equal_locations_coincide() {
        let cfg = small(FrequencyLaw::Std, 0.0, 1);
        let mut g = rng(5);
        let u = embedding(&mut g, 24).unwrap();
        let a = signal_point::<rand_chacha::ChaCha8Rng>(&cfg, &u, 3.3, None).unwrap();
        let b = signal_point::<rand_chacha::ChaCha8Rng>(&cfg, &u, 3.3, None).unwrap();
        assert!(geodesic_distance(&a, &b).unwrap() < 1e-6);
    }

    #[test]
    fn phase_tracks_frequency() {
        let cfg = small(FrequencyLaw::Std, 0.1, 4);
        let mut g = rng(cfg.seed);
        let u = embedding(&mut g, 24).unwrap();
        let normal = Normal::new(0.0, 0.1).unwrap();
        let freqs = [0.8, 2.5, 4.0, 6.1, 8.7];
        let mut phases = Vec::new();
        for &w in &freqs {
            let steps = cfg.samples_per_signal;
            let s = DMatrix::from_fn(2, steps, |i, j| {
                let tau = cfg.domain_end * j as f64 / (steps - 1) as f64;
                if i == 0 { (w * tau).sin() } else { (w * tau).cos() }
            });
            let mut frames = &u * s;
            for v in frames.iter_mut() {
                *v += normal.sample(&mut g);
            }
            let m = identify_lds(&frames, 2, &IdentifyConfig::default()).unwrap();
            phases.push(dominant_phase(&m.a).unwrap());
        }
        assert!(phases.windows(2).all(|w| w[1] > w[0]), "{phases:?}");
        assert!(spearman(&freqs, &phases) >= 0.9);
    }

    #[test]
    fn separated_frequencies_are_far_apart() {
        let cfg = small(FrequencyLaw::Std, 0.0, 2);
        let mut g = rng(5);
        let u = embedding(&mut g, 24).unwrap();
        let a = signal_point::<rand_chacha::ChaCha8Rng>(&cfg, &u, 1.0, None).unwrap();
        let b = signal_point::<rand_chacha::ChaCha8Rng>(&cfg, &u, 7.0, None).unwrap();
        assert!(geodesic_distance(&a, &b).unwrap() > 0.1);
    }

    #[test]
    fn perturbation_distance_equals_shoot_time() {
        let d = generate_dataset(&small(FrequencyLaw::Std, 0.1, 6)).unwrap().dataset;
        let same = perturb_along_manifold(&d, &PerturbConfig { shoot_time: 0.0, seed: 2 }).unwrap();
        assert_eq!(same, d);
        let moved = perturb_along_manifold(&d, &PerturbConfig::default()).unwrap();
        for (a, b) in d.samples().iter().zip(moved.samples()) {
            assert_eq!(a.r, b.r);
            assert!((geodesic_distance(&a.point, &b.point).unwrap() - 0.03).abs() < 1e-8);
        }
        let msd = eval::mean_square_distance(&moved.points(), &d.points()).unwrap();
        assert!((msd - 0.03 * 0.03).abs() <= 0.2 * 0.03 * 0.03);
    }
}
