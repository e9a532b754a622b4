//! Goodness-of-fit and precision-gain diagnostics comparing direct and
//! model-based area estimates.

use nerhd_core::math::sample_variance;
use nerhd_core::Sample;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `s_i^2 / n_i`, or `None` for single-unit areas.
pub fn direct_variances(sample: &Sample) -> Vec<Option<f64>> {
    sample
        .areas()
        .iter()
        .map(|a| (a.n() > 1).then(|| sample_variance(&a.y) / a.n() as f64))
        .collect()
}

/// The 0.95 quantile of a chi-square distribution.
pub fn chi_square_95(df: usize) -> f64 {
    ChiSquared::new(df as f64).expect("positive degrees of freedom").inverse_cdf(0.95)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub critical: f64,
    /// Areas left out of the sum for lack of a usable variance.
    pub excluded: Vec<usize>,
}

impl WaldTest {
    /// True when the model-based estimates are not significantly different
    /// from the direct ones at the 5% level.
    pub fn consistent(&self) -> bool {
        self.statistic < self.critical
    }
}

/// `W = sum_i (direct_i - ebp_i)^2 / (var_direct_i + mse_ebp_i)` over areas
/// with a direct variance and a positive denominator.
pub fn wald_gof(direct: &[f64], ebp: &[f64], var_direct: &[Option<f64>], mse_ebp: &[f64]) -> Option<WaldTest> {
    let mut statistic = 0.0;
    let mut df = 0;
    let mut excluded = Vec::new();
    for i in 0..direct.len() {
        let den = var_direct[i].map(|v| v + mse_ebp[i]);
        match den {
            Some(d) if d > 0.0 && d.is_finite() => {
                statistic += (direct[i] - ebp[i]).powi(2) / d;
                df += 1;
            }
            _ => excluded.push(i),
        }
    }
    (df > 0).then(|| WaldTest { statistic, df, critical: chi_square_95(df), excluded })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRatio {
    /// `CV(direct) / CV(ebp)` per area; `None` where undefined.
    pub ratios: Vec<Option<f64>>,
    pub mean: f64,
    pub excluded: Vec<usize>,
}

/// Ratio of the coefficients of variation of the direct and EBP estimates.
/// Areas with a zero estimate, a missing direct variance or a zero EBP RMSE
/// are excluded.
pub fn cv_ratio(direct: &[f64], var_direct: &[Option<f64>], ebp: &[f64], rmse_ebp: &[f64]) -> CvRatio {
    let mut ratios = Vec::with_capacity(direct.len());
    let mut excluded = Vec::new();
    for i in 0..direct.len() {
        let r = match var_direct[i] {
            Some(v) if direct[i] != 0.0 && ebp[i] != 0.0 && rmse_ebp[i] > 0.0 => {
                let cv_direct = v.sqrt() / direct[i].abs();
                let cv_ebp = rmse_ebp[i] / ebp[i].abs();
                Some(cv_direct / cv_ebp)
            }
            _ => None,
        };
        if r.is_none() {
            excluded.push(i);
        }
        ratios.push(r);
    }
    let used: Vec<f64> = ratios.iter().flatten().copied().collect();
    let mean = if used.is_empty() { f64::NAN } else { used.iter().sum::<f64>() / used.len() as f64 };
    CvRatio { ratios, mean, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_wald_statistic() {
        let w = wald_gof(&[10.0, 12.0, 9.0], &[11.0, 12.0, 7.0], &[Some(0.5), Some(1.0), Some(1.5)], &[0.5, 2.0, 0.5]).unwrap();
        // 1/1 + 0/3 + 4/2
        assert!((w.statistic - 3.0).abs() < 1e-12);
        assert_eq!(w.df, 3);
        assert!((w.critical - 7.814_727_903_251_178).abs() < 1e-9);
    }

    #[test]
    fn critical_value_for_86_areas() {
        assert!((chi_square_95(86) - 108.6479).abs() < 1e-3);
    }

    #[test]
    fn single_unit_areas_are_excluded() {
        let w = wald_gof(&[1.0, 2.0], &[1.0, 3.0], &[None, Some(1.0)], &[1.0, 1.0]).unwrap();
        assert_eq!(w.excluded, vec![0]);
        assert_eq!(w.df, 1);
        assert!((w.statistic - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_estimates_give_zero() {
        let w = wald_gof(&[1.0, 2.0], &[1.0, 2.0], &[Some(1.0), Some(1.0)], &[1.0, 1.0]).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!(w.consistent());
    }

    #[test]
    fn cv_ratio_examples() {
        let same = cv_ratio(&[2.0, 4.0], &[Some(1.0), Some(4.0)], &[2.0, 4.0], &[1.0, 2.0]);
        assert_eq!(same.ratios, vec![Some(1.0), Some(1.0)]);
        let half = cv_ratio(&[2.0, 4.0], &[Some(1.0), Some(4.0)], &[2.0, 4.0], &[0.5, 1.0]);
        assert!((half.mean - 2.0).abs() < 1e-12);
        let zero = cv_ratio(&[0.0, 4.0], &[Some(1.0), Some(4.0)], &[2.0, 4.0], &[0.5, 1.0]);
        assert_eq!(zero.excluded, vec![0]);
        assert_eq!(zero.mean, 2.0);
    }
}
