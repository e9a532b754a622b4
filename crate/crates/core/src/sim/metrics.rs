use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

/// Median ignoring NaNs; NaN when nothing is left.
pub fn median(xs: &[f64]) -> f64 {
    crate::math::median(xs)
}

/// Accuracy of one predictor against the truth, summarized over areas.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMetrics {
    pub name: String,
    /// Percentages.
    pub median_arb: f64,
    pub median_rrmse: f64,
    /// Median over areas of the RMSE ratio against the EBLUP.
    pub median_eff: Option<f64>,
    pub arb: Vec<f64>,
    pub rrmse: Vec<f64>,
    pub rmse: Vec<f64>,
}

/// Quality of one RMSE estimator of the EBP.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseMetrics {
    pub name: String,
    /// Percentages.
    pub median_rb: f64,
    pub median_rrmse: f64,
    pub median_coverage: f64,
    pub rb: Vec<f64>,
    pub rrmse: Vec<f64>,
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub predictors: Vec<PredictorMetrics>,
    pub rmse_estimators: Vec<RmseMetrics>,
    /// Replicates that entered the accumulators.
    pub replicates: usize,
    pub failed: usize,
}

/// Running sums per area for one predictor.
#[derive(Debug, Clone)]
pub(crate) struct ErrorSums {
    pub diff: Vec<f64>,
    pub sq: Vec<f64>,
}

impl ErrorSums {
    pub fn new(m: usize) -> Self {
        Self { diff: vec![0.0; m], sq: vec![0.0; m] }
    }

    pub fn add(&mut self, est: &[f64], truth: &[f64]) {
        for i in 0..truth.len() {
            let e = est[i] - truth[i];
            self.diff[i] += e;
            self.sq[i] += e * e;
        }
    }
}

/// Per-area `(arb, rrmse, rmse)` from error sums over `t` replicates, with
/// `truth_sum` the per-area sum of the true means.
pub(crate) fn accuracy(sums: &ErrorSums, truth_sum: &[f64], t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let tf = t as f64;
    let mut arb = Vec::with_capacity(truth_sum.len());
    let mut rrmse = Vec::with_capacity(truth_sum.len());
    let mut rmse = Vec::with_capacity(truth_sum.len());
    for i in 0..truth_sum.len() {
        let mean_truth = abs(truth_sum[i] / tf);
        let r = sqrt(sums.sq[i] / tf);
        arb.push(100.0 * abs(sums.diff[i] / tf) / mean_truth);
        rrmse.push(100.0 * r / mean_truth);
        rmse.push(r);
    }
    (arb, rrmse, rmse)
}

pub(crate) fn predictor_metrics(
    names: &[&str],
    sums: &[ErrorSums],
    truth_sum: &[f64],
    t: usize,
    reference: Option<usize>,
) -> Vec<PredictorMetrics> {
    let acc: Vec<_> = sums.iter().map(|s| accuracy(s, truth_sum, t)).collect();
    names
        .iter()
        .zip(&acc)
        .map(|(name, (arb, rrmse, rmse))| {
            let median_eff = reference.map(|r| {
                let ratios: Vec<f64> = rmse.iter().zip(&acc[r].2).map(|(a, b)| a / b).collect();
                median(&ratios)
            });
            PredictorMetrics {
                name: String::from(*name),
                median_arb: median(arb),
                median_rrmse: median(rrmse),
                median_eff,
                arb: arb.clone(),
                rrmse: rrmse.clone(),
                rmse: rmse.clone(),
            }
        })
        .collect()
}

/// Running sums per area for one RMSE estimator.
#[derive(Debug, Clone)]
pub(crate) struct RmseSums {
    pub est: Vec<f64>,
    pub est_sq: Vec<f64>,
    pub covered: Vec<f64>,
}

impl RmseSums {
    pub fn new(m: usize) -> Self {
        Self { est: vec![0.0; m], est_sq: vec![0.0; m], covered: vec![0.0; m] }
    }

    pub fn add(&mut self, rmse: &[f64], intervals: &[(f64, f64)], truth: &[f64]) {
        for i in 0..truth.len() {
            self.est[i] += rmse[i];
            self.est_sq[i] += rmse[i] * rmse[i];
            let (lo, hi) = intervals[i];
            if lo <= truth[i] && truth[i] <= hi {
                self.covered[i] += 1.0;
            }
        }
    }

    /// Relative bias and relative RMSE (percent) of the estimates against the
    /// empirical RMSE of the predictor, plus coverage (percent).
    pub fn metrics(&self, name: &str, true_rmse: &[f64], t: usize) -> RmseMetrics {
        let tf = t as f64;
        let m = true_rmse.len();
        let mut rb = Vec::with_capacity(m);
        let mut rr = Vec::with_capacity(m);
        let mut cov = Vec::with_capacity(m);
        for i in 0..m {
            let mean = self.est[i] / tf;
            let r = true_rmse[i];
            rb.push(100.0 * (mean - r) / r);
            // E[(est - r)^2] = E[est^2] - 2 r E[est] + r^2
            let mse = (self.est_sq[i] / tf - 2.0 * r * mean + r * r).max(0.0);
            rr.push(100.0 * sqrt(mse) / r);
            cov.push(100.0 * self.covered[i] / tf);
        }
        RmseMetrics {
            name: String::from(name),
            median_rb: median(&rb),
            median_rrmse: median(&rr),
            median_coverage: median(&cov),
            rb,
            rrmse: rr,
            coverage: cov,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_efficiency_is_one() {
        let mut a = ErrorSums::new(3);
        let mut b = ErrorSums::new(3);
        let truth = [10.0, 20.0, 30.0];
        a.add(&[11.0, 19.0, 33.0], &truth);
        b.add(&[10.5, 20.0, 29.0], &truth);
        let table = predictor_metrics(&["eblup", "ebp"], &[a, b], &truth, 1, Some(0));
        assert_eq!(table[0].median_eff, Some(1.0));
        assert!((table[0].arb[0] - 10.0).abs() < 1e-12);
        assert!((table[1].rrmse[2] - 100.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_scale_free() {
        let truth = [10.0, 20.0];
        let est = [[11.0, 18.0], [9.5, 21.0]];
        let run = |scale: f64| {
            let mut s = ErrorSums::new(2);
            for e in &est {
                s.add(&[e[0] * scale, e[1] * scale], &[truth[0] * scale, truth[1] * scale]);
            }
            accuracy(&s, &[2.0 * truth[0] * scale, 2.0 * truth[1] * scale], 2)
        };
        let (a1, r1, _) = run(1.0);
        let (a2, r2, _) = run(7.5);
        for i in 0..2 {
            assert!((a1[i] - a2[i]).abs() < 1e-10 && (r1[i] - r2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn coverage_counts_intervals() {
        let mut s = RmseSums::new(1);
        s.add(&[1.0], &[(0.0, 2.0)], &[1.0]);
        s.add(&[3.0], &[(0.0, 2.0)], &[5.0]);
        let m = s.metrics("x", &[2.0], 2);
        assert_eq!(m.coverage[0], 50.0);
        assert_eq!(m.rb[0], 0.0);
        assert!((m.rrmse[0] - 50.0).abs() < 1e-12);
    }
}
