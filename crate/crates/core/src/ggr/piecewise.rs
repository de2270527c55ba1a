use serde::{Deserialize, Serialize};

use super::{attach_r_squared, fit_std_ggr, Curve, Dataset, FitConfig, GeodesicModel};
use crate::error::{Error, Result};
use crate::grassmann::GrassmannPoint;
use crate::report::FitReport;

/// Independent geodesics on the intervals cut by `breakpoints`; piece `j`
/// covers `[b_{j−1}, b_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    /// Breakpoints that fell strictly inside the data range, ascending.
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<GeodesicModel>,
}

impl PiecewiseModel {
    pub fn piece_index(&self, r: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= r)
    }
}

impl Curve for PiecewiseModel {
    fn evaluate_many(&self, r: &[f64]) -> Result<Vec<GrassmannPoint>> {
        if self.pieces.len() != self.breakpoints.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} pieces for {} breakpoints",
                self.pieces.len(),
                self.breakpoints.len()
            )));
        }
        let mut out: Vec<Option<GrassmannPoint>> = vec![None; r.len()];
        for (j, piece) in self.pieces.iter().enumerate() {
            let idx: Vec<usize> = (0..r.len()).filter(|&i| self.piece_index(r[i]) == j).collect();
            if idx.is_empty() {
                continue;
            }
            let vals = piece.evaluate_many(&idx.iter().map(|&i| r[i]).collect::<Vec<_>>())?;
            for (i, v) in idx.into_iter().zip(vals) {
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every location has a piece")).collect())
    }
}

/// Separate Std-GGR fits on each interval. Breakpoints outside the open data
/// range are ignored. Returns the model, the combined report and one report
/// per piece.
pub fn fit_piecewise_std_ggr(
    data: &Dataset,
    config: &FitConfig,
    breakpoints: &[f64],
) -> Result<(PiecewiseModel, FitReport, Vec<FitReport>)> {
    config.validate()?;
    if let Some(b) = breakpoints.iter().find(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument(format!("breakpoint {b} is not finite")));
    }
    let r = data.r_values();
    let (lo, hi) = (r[0], r[r.len() - 1]);
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > lo && b < hi).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cuts.dedup();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cuts.len() + 1];
    for (i, &ri) in r.iter().enumerate() {
        groups[cuts.partition_point(|&b| b <= ri)].push(i);
    }
    let mut pieces = Vec::with_capacity(groups.len());
    let mut reports = Vec::with_capacity(groups.len());
    for (j, idx) in groups.iter().enumerate() {
        let sub = data.subset(idx).map_err(|_| empty_piece(j, &cuts))?;
        if sub.distinct_r() < 2 {
            return Err(empty_piece(j, &cuts));
        }
        let (model, report) = fit_std_ggr(&sub, config)?;
        pieces.push(model);
        reports.push(report);
    }
    let mut combined = FitReport::combine(&reports);
    let residual = combined.data_term * config.sigma2;
    attach_r_squared(&mut combined, data, residual);
    Ok((
        PiecewiseModel {
            breakpoints: cuts,
            pieces,
        },
        combined,
        reports,
    ))
}

fn empty_piece(j: usize, cuts: &[f64]) -> Error {
    let lo = if j == 0 { f64::NEG_INFINITY } else { cuts[j - 1] };
    let hi = cuts.get(j).copied().unwrap_or(f64::INFINITY);
    Error::InvalidArgument(format!(
        "interval [{lo}, {hi}) holds fewer than two distinct sample locations"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ggr::geodesic_energy;
    use crate::grassmann::{exp_map_closed, geodesic_distance};
    use crate::random::{random_point, random_tangent, rng};

    fn broken_geodesic() -> Dataset {
        let mut g = rng(9);
        let y0 = random_point(&mut g, 6, 2);
        let v = random_tangent(&mut g, &y0, 0.6);
        let mid = exp_map_closed(&v).unwrap();
        let w = random_tangent(&mut g, &mid, 0.9);
        let mut r = Vec::new();
        let mut pts = Vec::new();
        for i in 0..6 {
            let t = i as f64 / 5.0;
            r.push(t);
            pts.push(exp_map_closed(&v.scaled(t)).unwrap());
        }
        for i in 1..6 {
            let t = i as f64 / 5.0;
            r.push(1.0 + t);
            pts.push(exp_map_closed(&w.scaled(t)).unwrap());
        }
        Dataset::from_parts(&r, pts).unwrap()
    }

    #[test]
    fn breakpoint_outside_range_matches_global_fit() {
        let data = broken_geodesic();
        let cfg = FitConfig::default();
        let (pw, report, _) = fit_piecewise_std_ggr(&data, &cfg, &[5.0]).unwrap();
        let (global, greport) = fit_std_ggr(&data, &cfg).unwrap();
        assert_eq!(pw.pieces.len(), 1);
        assert_eq!(report.data_term, greport.data_term);
        assert_eq!(pw.pieces[0], global);
    }

    #[test]
    fn two_segments_are_recovered_exactly() {
        let data = broken_geodesic();
        let cfg = FitConfig::default();
        let (pw, report, pieces) = fit_piecewise_std_ggr(&data, &cfg, &[1.1]).unwrap();
        assert_eq!(pieces.len(), 2);
        for p in &pieces {
            assert!(p.data_term < 1e-8, "{}", p.data_term);
        }
        let (_, global) = fit_std_ggr(&data, &cfg).unwrap();
        assert!(report.data_term <= global.data_term);
        let e = geodesic_energy(&data.subset(&[0, 1, 2, 3, 4, 5]).unwrap(), &cfg, &pw.pieces[0]).unwrap();
        assert!(e.0 < 1e-8);
        let at = pw.evaluate(1.6).unwrap();
        assert!(geodesic_distance(&at, &data.samples()[8].point).unwrap() < 1e-4);
    }

    #[test]
    fn sparse_interval_is_rejected() {
        let data = broken_geodesic();
        let err = fit_piecewise_std_ggr(&data, &FitConfig::default(), &[0.1, 0.15]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
