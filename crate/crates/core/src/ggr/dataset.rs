use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::GrassmannPoint;

/// `r ↦ (r − offset) · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Map sending `[min r, max r]` onto `[0, 1]`; a pure shift when all
    /// values coincide.
    pub fn unit_interval(r: &[f64]) -> Self {
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Self::identity();
        }
        let span = hi - lo;
        Self {
            offset: lo,
            scale: if span > 0.0 { 1.0 / span } else { 1.0 },
        }
    }

    pub fn apply(&self, r: f64) -> f64 {
        (r - self.offset) * self.scale
    }

    pub fn invert(&self, t: f64) -> f64 {
        t / self.scale + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub r: f64,
    pub point: GrassmannPoint,
}

/// Samples `(rᵢ, Yᵢ)` sorted by `r` (stable, so ties keep their input order),
/// with the map that normalizes `r` onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    normalization: AffineMap,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let map = AffineMap::unit_interval(&samples.iter().map(|s| s.r).collect::<Vec<_>>());
        Self::with_normalization(samples, map)
    }

    pub fn with_normalization(mut samples: Vec<Sample>, normalization: AffineMap) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        };
        let (n, p) = (first.point.n(), first.point.p());
        for (i, s) in samples.iter().enumerate() {
            if !s.r.is_finite() {
                return Err(Error::InvalidArgument(format!("sample {i} has non-finite r")));
            }
            if s.point.n() != n || s.point.p() != p {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} lies in G({}, {}), expected G({p}, {n})",
                    s.point.p(),
                    s.point.n()
                )));
            }
        }
        if !(normalization.scale.is_finite() && normalization.scale > 0.0 && normalization.offset.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid normalization {normalization:?}")));
        }
        samples.sort_by(|a, b| a.r.partial_cmp(&b.r).expect("finite r"));
        Ok(Self {
            samples,
            normalization,
        })
    }

    pub fn from_parts(r: &[f64], points: Vec<GrassmannPoint>) -> Result<Self> {
        if r.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} locations for {} points",
                r.len(),
                points.len()
            )));
        }
        Self::new(
            r.iter()
                .zip(points)
                .map(|(&r, point)| Sample { r, point })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n(&self) -> usize {
        self.samples[0].point.n()
    }

    pub fn p(&self) -> usize {
        self.samples[0].point.p()
    }

    pub fn normalization(&self) -> &AffineMap {
        &self.normalization
    }

    pub fn r_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.r).collect()
    }

    pub fn normalized_r(&self) -> Vec<f64> {
        self.samples.iter().map(|s| self.normalization.apply(s.r)).collect()
    }

    pub fn points(&self) -> Vec<GrassmannPoint> {
        self.samples.iter().map(|s| s.point.clone()).collect()
    }

    pub fn distinct_r(&self) -> usize {
        let mut count = 0;
        let mut last = f64::NAN;
        for s in &self.samples {
            if s.r != last {
                count += 1;
                last = s.r;
            }
        }
        count
    }

    /// New dataset from the samples at `indices` (positions in sorted order),
    /// with its own normalization.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub(crate) fn require_fit(&self, min_distinct: usize) -> Result<()> {
        if self.distinct_r() < min_distinct {
            return Err(Error::Degenerate(format!(
                "fit needs at least {min_distinct} distinct values of r, found {}",
                self.distinct_r()
            )));
        }
        Ok(())
    }
}
