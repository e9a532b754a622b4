//! Point predictors of small-area means.

use alloc::vec::Vec;

use crate::error::Result;
use crate::mle::BhfFit;
use crate::model::{dot, FitResult, Sample};
use crate::mq::{fit_mquantile, TauEstimates};

/// `B = (sigma2_eps / n) / (sigma2_eps / n + sigma2_gamma)`, one when both
/// variances vanish.
pub fn shrinkage(sigma2_eps: f64, n: usize, sigma2_gamma: f64) -> f64 {
    let sampling = sigma2_eps / n as f64;
    if sampling + sigma2_gamma > 0.0 {
        sampling / (sampling + sigma2_gamma)
    } else {
        1.0
    }
}

/// Sample mean of each area.
pub fn direct(sample: &Sample) -> Vec<f64> {
    sample.areas().iter().map(|a| a.y_mean()).collect()
}

/// Plug-in best predictor, written as the shrinkage combination of the
/// synthetic and the survey-regression parts:
/// `(Xbar - xbar)' beta_i + B (beta0 + xbar' beta_i) + (1 - B) ybar`.
pub fn ebp(sample: &Sample, fit: &FitResult) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(&fit.params)
        .map(|(a, p)| {
            let xbar = a.x_mean();
            let b = shrinkage(p.sigma2_eps, a.n(), p.sigma2_gamma);
            let correction = dot(&a.pop_mean, &p.beta) - dot(&xbar, &p.beta);
            correction + b * (p.beta0 + dot(&xbar, &p.beta)) + (1.0 - b) * a.y_mean()
        })
        .collect()
}

/// The same predictor in survey-regression form,
/// `ybar + (Xbar - xbar)' beta_i - B (ybar - beta0 - xbar' beta_i)`.
pub fn ebp_survey_form(sample: &Sample, fit: &FitResult) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(&fit.params)
        .map(|(a, p)| {
            let xbar = a.x_mean();
            let ybar = a.y_mean();
            let b = shrinkage(p.sigma2_eps, a.n(), p.sigma2_gamma);
            ybar + dot(&a.pop_mean, &p.beta) - dot(&xbar, &p.beta) - b * (ybar - p.beta0 - dot(&xbar, &p.beta))
        })
        .collect()
}

/// `f ybar + (1 - f) ebp` with sampling fraction `f = n / N`.
pub fn ebp_finite(sample: &Sample, fit: &FitResult) -> Vec<f64> {
    finite_population(sample, &ebp(sample, fit))
}

/// Mixes predictions with the sample means by the sampling fractions.
pub fn finite_population(sample: &Sample, predictions: &[f64]) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(predictions)
        .map(|(a, t)| {
            let f = a.sampling_fraction();
            f * a.y_mean() + (1.0 - f) * t
        })
        .collect()
}

/// EBLUP under the homogeneous model:
/// `beta0 + Xbar' beta + (1 - B)(ybar - beta0 - xbar' beta)`.
pub fn eblup_bhf(sample: &Sample, bhf: &BhfFit) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(&bhf.shrinkage)
        .map(|(a, b)| {
            let xbar = a.x_mean();
            bhf.beta0 + dot(&a.pop_mean, &bhf.beta) + (1.0 - b) * (a.y_mean() - bhf.beta0 - dot(&xbar, &bhf.beta))
        })
        .collect()
}

/// M-quantile coefficients `(beta_0tau, beta_tau')` fitted at each area's
/// tilt; areas sharing a tilt share one fit.
pub fn mq_area_coefficients(sample: &Sample, taus: &[f64], c: f64) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(taus.len());
    for (i, &t) in taus.iter().enumerate() {
        if let Some(j) = taus[..i].iter().position(|&u| u == t) {
            let prev = out[j].clone();
            out.push(prev);
        } else {
            out.push(fit_mquantile(sample, t, c)?);
        }
    }
    Ok(out)
}

/// Synthetic M-quantile predictor `beta_0tau + Xbar' beta_tau` at the given
/// area tilts (the ELB predictions by default).
pub fn mq_synthetic(sample: &Sample, coefs: &[Vec<f64>]) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(coefs)
        .map(|(a, c)| c[0] + dot(&a.pop_mean, &c[1..]))
        .collect()
}

/// Survey-regression M-quantile predictor `ybar + (Xbar - xbar)' beta_i`;
/// `slopes` excludes the intercept.
pub fn mqcd(sample: &Sample, slopes: &[Vec<f64>]) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(slopes)
        .map(|(a, b)| {
            let xbar = a.x_mean();
            a.y_mean() + dot(&a.pop_mean, b) - dot(&xbar, b)
        })
        .collect()
}

/// Which tilt the M-quantile predictors use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MqTau {
    /// Shrinkage predictions of the area tilts.
    #[default]
    Elb,
    /// Plain area averages of the unit coefficients.
    AreaMean,
}

/// Per-area predictions of every estimator, with the shrinkage factors of
/// the model-based ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSet {
    pub area_ids: Vec<alloc::string::String>,
    pub direct: Vec<f64>,
    pub eblup_bhf: Vec<f64>,
    pub ebp: Vec<f64>,
    pub ebp_mle: Option<Vec<f64>>,
    pub ebp_finite: Vec<f64>,
    pub mq_synth: Vec<f64>,
    pub mqcd: Vec<f64>,
    pub b_bhf: Vec<f64>,
    pub b_gee: Vec<f64>,
    pub b_mle: Option<Vec<f64>>,
}

/// Shrinkage factors of a fit.
pub fn fit_shrinkage(sample: &Sample, fit: &FitResult) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(&fit.params)
        .map(|(a, p)| shrinkage(p.sigma2_eps, a.n(), p.sigma2_gamma))
        .collect()
}

/// Computes every predictor from the fits. `mle` is optional because the
/// likelihood fit requires unit variance multipliers.
pub fn predictor_set(
    sample: &Sample,
    gee: &FitResult,
    mle: Option<&FitResult>,
    bhf: &BhfFit,
    taus: &TauEstimates,
    which: MqTau,
    c: f64,
) -> Result<PredictorSet> {
    let area_taus = match which {
        MqTau::Elb => &taus.elb_tau,
        MqTau::AreaMean => &taus.area_mean_tau,
    };
    let coefs = mq_area_coefficients(sample, area_taus, c)?;
    let slopes: Vec<Vec<f64>> = coefs.iter().map(|c| c[1..].to_vec()).collect();
    Ok(PredictorSet {
        area_ids: sample.areas().iter().map(|a| a.id.clone()).collect(),
        direct: direct(sample),
        eblup_bhf: eblup_bhf(sample, bhf),
        ebp: ebp(sample, gee),
        ebp_mle: mle.map(|f| ebp(sample, f)),
        ebp_finite: ebp_finite(sample, gee),
        mq_synth: mq_synthetic(sample, &coefs),
        mqcd: mqcd(sample, &slopes),
        b_bhf: bhf.shrinkage.clone(),
        b_gee: fit_shrinkage(sample, gee),
        b_mle: mle.map(|f| fit_shrinkage(sample, f)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AreaSample, FitMethod, ParamVector};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn area(id: &str, x: Vec<f64>, y: Vec<f64>, pop: usize, xbar: f64) -> AreaSample {
        let n = y.len();
        AreaSample { id: id.to_string(), k: vec![1.0; n], y, x, h: 1.0, pop_size: pop, pop_mean: vec![xbar] }
    }

    fn fit_of(params: Vec<ParamVector>) -> FitResult {
        let m = params.len();
        let b0 = params[0].beta0;
        FitResult {
            params,
            method: FitMethod::Gee,
            iterations: 1,
            converged: true,
            max_param_delta: 0.0,
            trace: vec![],
            intercepts: vec![b0; m],
            bracket_warnings: 0,
        }
    }

    fn pv(beta0: f64, beta: f64, g: f64, s: f64) -> ParamVector {
        ParamVector { beta0, beta: vec![beta], sigma2_gamma: g, sigma2_eps: s, tau: 0.5 }
    }

    fn two() -> Sample {
        Sample::from_areas(
            vec![area("a", vec![1.0, 3.0], vec![14.0, 26.0], 100, 2.5), area("b", vec![2.0, 2.0, 5.0], vec![1.0, 2.0, 3.0], 3, 3.0)],
            1,
        )
        .unwrap()
    }

    #[test]
    fn shrinkage_examples() {
        assert!((shrinkage(6.0, 4, 3.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(shrinkage(2.0, 5, 0.0), 1.0);
        assert_eq!(shrinkage(0.0, 5, 2.0), 0.0);
        assert_eq!(shrinkage(0.0, 5, 0.0), 1.0);
    }

    #[test]
    fn direct_examples() {
        let s = Sample::from_areas(
            vec![area("a", vec![0.0; 3], vec![1.0, 2.0, 3.0], 10, 0.0), area("b", vec![0.0; 2], vec![4.0, 4.0], 10, 0.0)],
            1,
        )
        .unwrap();
        assert_eq!(direct(&s), vec![2.0, 4.0]);
    }

    #[test]
    fn ebp_limits() {
        let s = two();
        // sigma2_gamma huge -> B = 0: survey regression.
        let f0 = fit_of(vec![pv(1.0, 5.0, 1e300, 1e-300), pv(1.0, -1.0, 1e300, 1e-300)]);
        let e0 = ebp(&s, &f0);
        assert!((e0[0] - (20.0 + (2.5 - 2.0) * 5.0)).abs() < 1e-12);
        // sigma2_gamma = 0 -> B = 1: synthetic.
        let f1 = fit_of(vec![pv(1.0, 5.0, 0.0, 2.0), pv(1.0, -1.0, 0.0, 2.0)]);
        let e1 = ebp(&s, &f1);
        assert!((e1[0] - (1.0 + 2.5 * 5.0)).abs() < 1e-12);
        assert!((e1[1] - (1.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn ebp_finite_examples() {
        let s = two();
        let f = fit_of(vec![pv(1.0, 5.0, 3.0, 2.0), pv(1.0, -1.0, 3.0, 2.0)]);
        let e = ebp(&s, &f);
        let fin = ebp_finite(&s, &f);
        // area b is a census (n = N = 3)
        assert!((fin[1] - 2.0).abs() < 1e-12);
        assert!((fin[0] - (0.02 * 20.0 + 0.98 * e[0])).abs() < 1e-12);
    }

    #[test]
    fn eblup_limits() {
        let s = Sample::from_areas(
            vec![area("a", vec![1.0, 3.0], vec![14.0, 26.0], 100, 2.0), area("b", vec![2.0, 4.0], vec![1.0, 2.0], 50, 3.0)],
            1,
        )
        .unwrap();
        let mut bhf = BhfFit {
            beta0: 1.0,
            beta: vec![2.0],
            sigma2_gamma: 0.0,
            sigma2_eps: 1.0,
            shrinkage: vec![1.0, 1.0],
            criterion: 0.0,
        };
        let syn = eblup_bhf(&s, &bhf);
        assert!((syn[0] - 5.0).abs() < 1e-12 && (syn[1] - 7.0).abs() < 1e-12);
        bhf.shrinkage = vec![0.0, 0.0];
        let d = eblup_bhf(&s, &bhf);
        assert!((d[0] - 20.0).abs() < 1e-12 && (d[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn eblup_equals_ebp_with_shared_parameters() {
        let s = two();
        let bhf = BhfFit {
            beta0: 1.5,
            beta: vec![2.0],
            sigma2_gamma: 1.3,
            sigma2_eps: 2.2,
            shrinkage: vec![shrinkage(2.2, 2, 1.3), shrinkage(2.2, 3, 1.3)],
            criterion: 0.0,
        };
        let f = fit_of(bhf.to_params(2, 0.5));
        let a = eblup_bhf(&s, &bhf);
        let b = ebp(&s, &f);
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mqcd_examples() {
        let s = Sample::from_areas(
            vec![area("a", vec![1.0, 3.0], vec![14.0, 26.0], 100, 2.0), area("b", vec![2.0, 4.0], vec![1.0, 2.0], 50, 3.0)],
            1,
        )
        .unwrap();
        let v = mqcd(&s, &[vec![7.0], vec![0.0]]);
        assert_eq!(v, vec![20.0, 1.5]);
        let f = fit_of(vec![pv(1.0, 7.0, 1e300, 1e-300), pv(1.0, 0.0, 1e300, 1e-300)]);
        let e = ebp(&s, &f);
        assert!((e[0] - v[0]).abs() < 1e-12 && (e[1] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn mq_synthetic_on_noise_free_line() {
        let s = Sample::from_areas(
            vec![area("a", vec![1.0, 2.0, 3.0], vec![15.0, 20.0, 25.0], 100, 2.5), area("b", vec![4.0, 5.0], vec![30.0, 35.0], 100, 4.2)],
            1,
        )
        .unwrap();
        let coefs = mq_area_coefficients(&s, &[0.3, 0.8], 1.345).unwrap();
        let v = mq_synthetic(&s, &coefs);
        assert!((v[0] - 22.5).abs() < 1e-9 && (v[1] - 31.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn two_forms_agree(
            beta0 in -20.0f64..20.0, b1 in -10.0f64..10.0, b2 in -10.0f64..10.0,
            g in 0.0f64..10.0, s1 in 0.001f64..10.0, s2 in 0.001f64..10.0,
            ys in proptest::collection::vec(-50.0f64..50.0, 5),
            xs in proptest::collection::vec(0.0f64..10.0, 5),
            xbar1 in 0.0f64..10.0, xbar2 in 0.0f64..10.0,
        ) {
            let s = Sample::from_areas(vec![
                area("a", xs[..2].to_vec(), ys[..2].to_vec(), 40, xbar1),
                area("b", xs[2..].to_vec(), ys[2..].to_vec(), 40, xbar2),
            ], 1).unwrap();
            let f = fit_of(vec![pv(beta0, b1, g, s1), pv(beta0, b2, g, s2)]);
            let a = ebp(&s, &f);
            let b = ebp_survey_form(&s, &f);
            for i in 0..2 {
                prop_assert!((a[i] - b[i]).abs() <= 1e-12 * (1.0 + a[i].abs()));
            }
        }

        #[test]
        fn shrinkage_in_unit_interval(s in 0.0f64..100.0, n in 1usize..50, g in 0.0f64..100.0) {
            let b = shrinkage(s, n, g);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn finite_form_is_monotone_in_fraction(ybar in -10.0f64..10.0, t in -10.0f64..10.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let mix = |f: f64| f * ybar + (1.0 - f) * t;
            prop_assert!((mix(hi) - ybar).abs() <= (mix(lo) - ybar).abs() + 1e-12);
        }
    }
}
