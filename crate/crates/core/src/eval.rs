//! Karcher mean, goodness of fit, prediction of the independent variable
//! and crossvalidation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggr::{Curve, Dataset, FittedModel};
use crate::grassmann::{mat, GrassmannPoint};
use crate::report::FitReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KarcherConfig {
    pub max_iters: usize,
    /// Stop once the mean of the logs has norm below this value.
    pub tol: f64,
    pub step: f64,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-9,
            step: 1.0,
        }
    }
}

/// Fixed-point iteration `μ ← exp_μ(step · mean log_μ Yᵢ)` started at the
/// first point.
pub fn karcher_mean(points: &[GrassmannPoint], cfg: &KarcherConfig) -> Result<GrassmannPoint> {
    if !(cfg.tol > 0.0 && cfg.step > 0.0) {
        return Err(Error::InvalidArgument("Karcher tol and step must be positive".into()));
    }
    let Some(first) = points.first() else {
        return Err(Error::InvalidArgument("Karcher mean of an empty set".into()));
    };
    if let Some(p) = points.iter().find(|p| p.n() != first.n() || p.p() != first.p()) {
        return Err(Error::DimensionMismatch(format!(
            "G({}, {}) point among G({}, {}) points",
            p.p(),
            p.n(),
            first.p(),
            first.n()
        )));
    }
    let mut mu = first.matrix().clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=cfg.max_iters {
        let mut mean = nalgebra::DMatrix::zeros(mu.nrows(), mu.ncols());
        for (i, p) in points.iter().enumerate() {
            mean += mat::log(&mu, p.matrix()).map_err(|e| match e {
                Error::CutLocus { angle, .. } => Error::CutLocus { index: Some(i), angle },
                other => other,
            })?;
        }
        mean /= points.len() as f64;
        residual = mean.norm();
        if residual < cfg.tol {
            return Ok(GrassmannPoint::from_raw_unchecked(mu));
        }
        let (next, _) = mat::geodesic(&mu, &mean, cfg.step);
        mu = mat::qr_positive(&next).ok_or_else(|| Error::Degenerate("Karcher iterate lost rank".into()))?;
    }
    Err(Error::KarcherNonConvergence {
        iterations: cfg.max_iters,
        residual,
        last: Box::new(GrassmannPoint::from_raw_unchecked(mu)),
    })
}

/// `Σ d²(μ, Yᵢ)` about the Karcher mean.
pub fn total_variance(points: &[GrassmannPoint]) -> Result<f64> {
    let mu = karcher_mean(points, &KarcherConfig::default())?;
    Ok(points.iter().map(|p| mat::distance_sq(mu.matrix(), p.matrix())).sum())
}

/// `Σ d²(curve(rᵢ), Yᵢ)`.
pub fn residual_sum(data: &Dataset, curve: &dyn Curve) -> Result<f64> {
    let fitted = curve.evaluate_many(&data.r_values())?;
    Ok(fitted
        .iter()
        .zip(data.samples())
        .map(|(f, s)| mat::distance_sq(f.matrix(), s.point.matrix()))
        .sum())
}

/// `1 − Σ d²(curve(rᵢ), Yᵢ) / Σ d²(μ, Yᵢ)` with `μ` the Karcher mean.
pub fn r_squared(data: &Dataset, curve: &dyn Curve) -> Result<f64> {
    let total = total_variance(&data.points())?;
    if total <= 1e-20 * data.len() as f64 {
        return Err(Error::UndefinedRSquared);
    }
    Ok(1.0 - residual_sum(data, curve)? / total)
}

/// Curve that stays at one point.
#[derive(Clone, Debug)]
pub struct ConstantCurve(pub GrassmannPoint);

impl Curve for ConstantCurve {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        Ok(vec![self.0.clone(); r.len()])
    }
}

/// Mean of `d²(aᵢ, bᵢ)`.
pub fn mean_square_distance(a: &[GrassmannPoint], b: &[GrassmannPoint]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no points to compare".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| mat::distance_sq(x.matrix(), y.matrix()))
        .sum::<f64>()
        / a.len() as f64)
}

/// Mean square distance between two curves sampled at `r`.
pub fn curve_msd(a: &dyn Curve, b: &dyn Curve, r: &[f64]) -> Result<f64> {
    mean_square_distance(&a.evaluate_many(r)?, &b.evaluate_many(r)?)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (ties get average ranks). NaN when either
/// sequence is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sequences differ in length");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Grid step as a fraction of the search range.
    pub step: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { step: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub r: f64,
    pub distance: f64,
    /// Another grid location lies within 1e-9 of the minimum distance.
    pub ambiguous: bool,
}

/// Curve sampled on a fixed grid over `[lo, hi]`, reused across queries.
pub struct CurveSearch {
    r: Vec<f64>,
    points: Vec<GrassmannPoint>,
}

impl CurveSearch {
    pub fn new(curve: &dyn Curve, lo: f64, hi: f64, cfg: &PredictionConfig) -> Result<Self> {
        if !(cfg.step > 0.0 && cfg.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("prediction step must be positive (got {})", cfg.step)));
        }
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::InvalidArgument(format!("invalid search range [{lo}, {hi}]")));
        }
        let span = hi - lo;
        let count = (1.0 / cfg.step + 1e-9).floor() as usize;
        let mut t: Vec<f64> = (0..=count).map(|j| j as f64 * cfg.step).collect();
        if span == 0.0 {
            t.truncate(1);
        } else if *t.last().expect("nonempty") < 1.0 - 1e-12 {
            t.push(1.0);
        }
        let r: Vec<f64> = t.iter().map(|&tj| lo + tj * span).collect();
        let points = curve.evaluate_many(&r)?;
        Ok(Self { r, points })
    }

    pub fn locations(&self) -> &[f64] {
        &self.r
    }

    pub fn predict(&self, query: &GrassmannPoint) -> Result<Prediction> {
        if self.r.is_empty() {
            return Err(Error::InvalidArgument("empty prediction grid".into()));
        }
        let d: Vec<f64> = self
            .points
            .iter()
            .map(|p| mat::distance_sq(p.matrix(), query.matrix()).sqrt())
            .collect();
        let mut best = 0;
        for (j, &dj) in d.iter().enumerate() {
            if dj < d[best] {
                best = j;
            }
        }
        let ambiguous = d.iter().enumerate().any(|(j, &dj)| j != best && dj - d[best] <= 1e-9);
        Ok(Prediction {
            r: self.r[best],
            distance: d[best],
            ambiguous,
        })
    }
}

/// Location on the curve closest to `query`, searched on a grid of
/// `cfg.step · (hi − lo)` over `[lo, hi]`; ties go to the smallest location.
pub fn predict_independent(
    curve: &dyn Curve,
    query: &GrassmannPoint,
    range: (f64, f64),
    cfg: &PredictionConfig,
) -> Result<Prediction> {
    CurveSearch::new(curve, range.0, range.1, cfg)?.predict(query)
}

/// Location of the training point closest to `query`; ties go to the
/// smallest location.
pub fn predict_nn_baseline(training: &Dataset, query: &GrassmannPoint) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for s in training.samples() {
        let d = mat::distance_sq(s.point.matrix(), query.matrix());
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, s.r));
        }
    }
    best.map(|(_, r)| r)
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    LeaveOneSubjectOut,
    KFold,
}

/// Fold id of every sample (in the dataset's sorted order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: Vec<usize>,
    pub mode: CvMode,
}

impl CvPlan {
    /// Interleaved assignment `i mod k`, which spreads every fold over the
    /// whole range of the independent variable.
    pub fn k_fold(len: usize, k: usize) -> Result<Self> {
        if k == 0 || k > len {
            return Err(Error::InvalidPlan(format!("cannot split {len} samples into {k} folds")));
        }
        Ok(Self {
            folds: (0..len).map(|i| i % k).collect(),
            mode: CvMode::KFold,
        })
    }

    /// One fold per distinct subject label.
    pub fn leave_one_subject_out<T: PartialEq + Clone>(subjects: &[T]) -> Self {
        let mut labels: Vec<T> = Vec::new();
        let folds = subjects
            .iter()
            .map(|s| match labels.iter().position(|l| l == s) {
                Some(i) => i,
                None => {
                    labels.push(s.clone());
                    labels.len() - 1
                }
            })
            .collect();
        Self {
            folds,
            mode: CvMode::LeaveOneSubjectOut,
        }
    }

    /// Distinct fold ids, ascending.
    pub fn fold_ids(&self) -> Vec<usize> {
        let mut ids = self.folds.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Curve(PredictionConfig),
    NearestNeighbor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub index: usize,
    pub r: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_mae: f64,
    pub test_mae: f64,
    pub energy: f64,
    pub test_predictions: Vec<SamplePrediction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub train_mae: MeanStd,
    pub test_mae: MeanStd,
    pub energy: MeanStd,
}

/// Predict every sample of `queries` with `predictor` given the fitted curve.
fn predict_all(
    model: &FittedModel,
    training: &Dataset,
    queries: &[(usize, f64, &GrassmannPoint)],
    predictor: &Predictor,
) -> Result<Vec<SamplePrediction>> {
    let search = match predictor {
        Predictor::Curve(cfg) => {
            let r = training.r_values();
            Some(CurveSearch::new(model, r[0], r[r.len() - 1], cfg)?)
        }
        Predictor::NearestNeighbor => None,
    };
    queries
        .iter()
        .map(|&(index, r, q)| {
            let predicted = match &search {
                Some(s) => s.predict(q)?.r,
                None => predict_nn_baseline(training, q)?,
            };
            Ok(SamplePrediction { index, r, predicted })
        })
        .collect()
}

fn mae(p: &[SamplePrediction]) -> f64 {
    p.iter().map(|s| (s.predicted - s.r).abs()).sum::<f64>() / p.len() as f64
}

/// Fit on the training folds and predict the held-out fold, for every fold
/// (in parallel). A plan with a single fold trains and tests on all samples.
pub fn run_cv<F>(data: &Dataset, plan: &CvPlan, fitter: F, predictor: &Predictor) -> Result<CvReport>
where
    F: Fn(&Dataset) -> Result<(FittedModel, FitReport)> + Sync,
{
    if plan.folds.len() != data.len() {
        return Err(Error::InvalidPlan(format!(
            "plan covers {} samples, dataset has {}",
            plan.folds.len(),
            data.len()
        )));
    }
    let ids = plan.fold_ids();
    let single = ids.len() == 1;
    let folds: Vec<FoldResult> = ids
        .par_iter()
        .map(|&fold| {
            let (train, test): (Vec<usize>, Vec<usize>) = if single {
                ((0..data.len()).collect(), (0..data.len()).collect())
            } else {
                (0..data.len()).partition(|&i| plan.folds[i] != fold)
            };
            if train.len() < 2 {
                return Err(Error::InvalidPlan(format!(
                    "fold {fold} leaves {} training samples",
                    train.len()
                )));
            }
            let training = data.subset(&train)?;
            let (model, report) = fitter(&training)?;
            let as_queries = |idx: &[usize]| -> Vec<(usize, f64, &GrassmannPoint)> {
                idx.iter()
                    .map(|&i| (i, data.samples()[i].r, &data.samples()[i].point))
                    .collect()
            };
            let train_pred = predict_all(&model, &training, &as_queries(&train), predictor)?;
            let test_pred = predict_all(&model, &training, &as_queries(&test), predictor)?;
            Ok(FoldResult {
                fold,
                train_mae: mae(&train_pred),
                test_mae: mae(&test_pred),
                energy: report.energy,
                test_predictions: test_pred,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&FoldResult) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    Ok(CvReport {
        train_mae: MeanStd::of(&col(|f| f.train_mae)),
        test_mae: MeanStd::of(&col(|f| f.test_mae)),
        energy: MeanStd::of(&col(|f| f.energy)),
        folds,
    })
}
