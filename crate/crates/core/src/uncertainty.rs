//! Uncertainty measures `f(E[d(theta_hat, theta)])` of area predictors: the
//! naive analytic RMSE, the parametric bootstrap and its Monte Carlo
//! jackknife correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::gee::{self, GeeConfig};
use crate::math::{abs, ln, quantile, sqrt};
use crate::mle;
use crate::model::{dot, FitResult, Sample};
use crate::predict::ebp;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    SquaredError,
    AbsoluteError,
}

/// Applied to the averaged distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Sqrt,
    /// Divide by the mean prediction.
    RelativeToMean,
    /// Square root, then divide by the mean prediction.
    SqrtRelativeToMean,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureSpec {
    pub distance: Distance,
    pub transform: Transform,
}

impl MeasureSpec {
    pub const MSE: Self = Self { distance: Distance::SquaredError, transform: Transform::Identity };
    pub const RMSE: Self = Self { distance: Distance::SquaredError, transform: Transform::Sqrt };
    pub const RRMSE: Self = Self { distance: Distance::SquaredError, transform: Transform::SqrtRelativeToMean };
    pub const LOG_MSE: Self = Self { distance: Distance::SquaredError, transform: Transform::Log };

    pub fn distance(&self, estimate: f64, truth: f64) -> f64 {
        let e = estimate - truth;
        match self.distance {
            Distance::SquaredError => e * e,
            Distance::AbsoluteError => abs(e),
        }
    }

    /// `f` applied to an averaged distance, with the mean prediction for the
    /// relative transforms.
    pub fn apply(&self, mean_distance: f64, mean_prediction: f64) -> f64 {
        match self.transform {
            Transform::Identity => mean_distance,
            Transform::Sqrt => sqrt(mean_distance),
            Transform::RelativeToMean => mean_distance / mean_prediction,
            Transform::SqrtRelativeToMean => sqrt(mean_distance) / mean_prediction,
            Transform::Log => ln(mean_distance),
        }
    }

    /// True when the value is on the scale of a root mean squared error.
    pub fn is_rmse(&self) -> bool {
        self.distance == Distance::SquaredError && self.transform == Transform::Sqrt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    Bootstrap,
    McJack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub values: Vec<f64>,
    pub method: Method,
    pub measure: MeasureSpec,
    pub replicates: usize,
    /// Failed bootstrap refits (summed over all bootstrap runs).
    pub failed: usize,
    /// Per-area `(lo, hi)`.
    pub intervals: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

/// `g1 = sigma2_gamma (sigma2_eps / n) / (sigma2_gamma + sigma2_eps / n)`.
pub fn g1(sigma2_eps: f64, n: usize, sigma2_gamma: f64) -> f64 {
    let sampling = sigma2_eps / n as f64;
    let den = sigma2_gamma + sampling;
    if den > 0.0 {
        sigma2_gamma * sampling / den
    } else {
        0.0
    }
}

/// `sqrt(g1)` at the fitted parameters of every area.
pub fn naive_rmse(sample: &Sample, fit: &FitResult) -> Vec<f64> {
    sample
        .areas()
        .iter()
        .zip(&fit.params)
        .map(|(a, p)| sqrt(g1(p.sigma2_eps, a.n(), p.sigma2_gamma)))
        .collect()
}

/// Naive estimate with `prediction +- 2 rmse` intervals.
pub fn naive_measure(sample: &Sample, fit: &FitResult, predictions: &[f64]) -> UncertaintyEstimate {
    let values = naive_rmse(sample, fit);
    let intervals = predictions.iter().zip(&values).map(|(t, r)| (t - 2.0 * r, t + 2.0 * r)).collect();
    UncertaintyEstimate {
        values,
        method: Method::Naive,
        measure: MeasureSpec::RMSE,
        replicates: 0,
        failed: 0,
        intervals: Some(intervals),
        seed: 0,
    }
}

/// A fitting procedure and its predictor, as rerun on bootstrap samples.
pub trait Procedure: Sync {
    /// Fits a sample generated from `template`, which also supplies the fixed
    /// tilts and may serve as a starting point.
    fn refit(&self, sample: &Sample, template: &FitResult) -> Result<FitResult>;

    /// The fit on the original data with area `l` left out.
    fn fit_without(&self, sample: &Sample, template: &FitResult, l: usize) -> Result<FitResult>;

    fn predict(&self, sample: &Sample, fit: &FitResult) -> Vec<f64>;
}

/// GEE fit and its plug-in best predictor. Refits start from the generating
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeeEbp {
    pub config: GeeConfig,
}

impl Procedure for GeeEbp {
    fn refit(&self, sample: &Sample, template: &FitResult) -> Result<FitResult> {
        gee::fit_from(sample, &self.config, template)
    }

    fn fit_without(&self, sample: &Sample, template: &FitResult, l: usize) -> Result<FitResult> {
        gee::fit_without_from(sample, &self.config, template, l)
    }

    fn predict(&self, sample: &Sample, fit: &FitResult) -> Vec<f64> {
        ebp(sample, fit)
    }
}

/// Maximum likelihood fit and its plug-in best predictor. Leave-one-area-out
/// fits are unavailable because the deleted area's slopes are unidentified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleEbp {
    pub control: gee::FitControl,
}

impl Procedure for MleEbp {
    fn refit(&self, sample: &Sample, _template: &FitResult) -> Result<FitResult> {
        mle::fit_mle(sample, &self.control)
    }

    fn fit_without(&self, _sample: &Sample, _template: &FitResult, _l: usize) -> Result<FitResult> {
        Err(Error::Unsupported("the likelihood fit cannot estimate a deleted area".into()))
    }

    fn predict(&self, sample: &Sample, fit: &FitResult) -> Vec<f64> {
        ebp(sample, fit)
    }
}

/// Standard normal draws of one bootstrap replicate: one per area, then one
/// per unit. The same draws are reused for every parameter set so that
/// comparisons across parameter sets reflect the parameters only.
struct Noise {
    area: Vec<f64>,
    unit: Vec<Vec<f64>>,
}

fn noise(sample: &Sample, seed: u64, r: usize) -> Noise {
    let mut rng = rng_for(seed, stream::BOOTSTRAP, r as u64);
    let area = (0..sample.m()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let unit = sample.areas().iter().map(|a| (0..a.n()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    Noise { area, unit }
}

/// Bootstrap responses and true area means generated from `fit`.
fn generate(sample: &Sample, fit: &FitResult, z: &Noise) -> (Sample, Vec<f64>) {
    let mut ys = Vec::with_capacity(sample.m());
    let mut theta = Vec::with_capacity(sample.m());
    for (i, (a, p)) in sample.areas().iter().zip(&fit.params).enumerate() {
        let gamma = sqrt(a.h * p.sigma2_gamma) * z.area[i];
        let sd = sqrt(p.sigma2_eps);
        let y: Vec<f64> = (0..a.n())
            .map(|j| p.beta0 + dot(a.x_row(j), &p.beta) + gamma + sd * sqrt(a.k[j]) * z.unit[i][j])
            .collect();
        ys.push(y);
        theta.push(p.beta0 + dot(&a.pop_mean, &p.beta) + gamma);
    }
    (sample.with_responses(ys), theta)
}

/// Per-replicate `(theta_hat, theta)` for the parameters `fit`, or `None`
/// when the refit failed.
fn replicate_errors<P: Procedure>(
    sample: &Sample,
    fit: &FitResult,
    proc: &P,
    replicates: usize,
    seed: u64,
) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
    map_indexed(replicates, |r| {
        let z = noise(sample, seed, r);
        let (boot, theta) = generate(sample, fit, &z);
        match proc.refit(&boot, fit) {
            Ok(f) if f.is_valid() => Some((proc.predict(&boot, &f), theta)),
            _ => None,
        }
    })
}

struct BootSummary {
    values: Vec<f64>,
    errors: Vec<Vec<f64>>,
    failed: usize,
}

fn summarize(
    draws: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    m: usize,
    spec: MeasureSpec,
) -> Result<BootSummary> {
    let total = draws.len();
    let ok: Vec<(Vec<f64>, Vec<f64>)> = draws.into_iter().flatten().collect();
    let failed = total - ok.len();
    if failed * 5 > total || ok.is_empty() {
        return Err(Error::ReplicateFailures { failed, total });
    }
    let r = ok.len() as f64;
    let mut values = Vec::with_capacity(m);
    let mut errors = vec![Vec::with_capacity(ok.len()); m];
    for i in 0..m {
        let mut dist = 0.0;
        let mut mean_pred = 0.0;
        for (est, truth) in &ok {
            dist += spec.distance(est[i], truth[i]);
            mean_pred += est[i];
            errors[i].push(est[i] - truth[i]);
        }
        values.push(spec.apply(dist / r, mean_pred / r));
    }
    Ok(BootSummary { values, errors, failed })
}

/// Parametric bootstrap estimate of `spec` for the predictor of `proc`, with
/// basic bootstrap 95% intervals `[theta_hat - q97.5, theta_hat - q2.5]` of
/// the bootstrap prediction errors.
pub fn bootstrap_measure<P: Procedure>(
    sample: &Sample,
    fit: &FitResult,
    proc: &P,
    spec: MeasureSpec,
    replicates: usize,
    seed: u64,
) -> Result<UncertaintyEstimate> {
    if replicates < 2 {
        return Err(Error::Config(format!("need at least 2 bootstrap replicates, got {replicates}")));
    }
    let draws = replicate_errors(sample, fit, proc, replicates, seed);
    let summary = summarize(draws, sample.m(), spec)?;
    let point = proc.predict(sample, fit);
    let intervals = point
        .iter()
        .zip(&summary.errors)
        .map(|(t, e)| (t - quantile(e, 0.975), t - quantile(e, 0.025)))
        .collect();
    Ok(UncertaintyEstimate {
        values: summary.values,
        method: Method::Bootstrap,
        measure: spec,
        replicates,
        failed: summary.failed,
        intervals: Some(intervals),
        seed,
    })
}

/// Jackknife combination
/// `a_i - (m - 1)/m sum_l (a_{i,-l} - a_i)` of a full-data value and its `m`
/// leave-one-area-out values.
pub fn mcjack_combine(full: &[f64], leave_out: &[Vec<f64>]) -> Vec<f64> {
    let m = leave_out.len() as f64;
    full.iter()
        .enumerate()
        .map(|(i, a)| a - (m - 1.0) / m * leave_out.iter().map(|lo| lo[i] - a).sum::<f64>())
        .collect()
}

/// Monte Carlo jackknife correction of the bootstrap estimate. All `m + 1`
/// bootstrap runs share one noise stream. RMSE-type values are truncated at
/// zero; RMSE estimates get `prediction +- 2 value` intervals.
pub fn mcjack_measure<P: Procedure>(
    sample: &Sample,
    fit: &FitResult,
    proc: &P,
    spec: MeasureSpec,
    replicates: usize,
    seed: u64,
) -> Result<UncertaintyEstimate> {
    let m = sample.m();
    if m < 3 {
        return Err(Error::Unsupported("the jackknife correction needs at least three areas".into()));
    }
    if replicates < 2 {
        return Err(Error::Config(format!("need at least 2 bootstrap replicates, got {replicates}")));
    }
    let full = summarize(replicate_errors(sample, fit, proc, replicates, seed), m, spec)?;
    let mut failed = full.failed;
    let mut leave_out = Vec::with_capacity(m);
    for l in 0..m {
        let fl = proc.fit_without(sample, fit, l).map_err(|e| Error::LeaveOneOut {
            area: sample.area(l).id.clone(),
            reason: format!("{e}"),
        })?;
        let s = summarize(replicate_errors(sample, &fl, proc, replicates, seed), m, spec)?;
        failed += s.failed;
        leave_out.push(s.values);
    }
    let mut values = mcjack_combine(&full.values, &leave_out);
    let nonneg = spec.distance == Distance::AbsoluteError
        || matches!(spec.transform, Transform::Identity | Transform::Sqrt);
    if nonneg {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let intervals = spec.is_rmse().then(|| {
        proc.predict(sample, fit).iter().zip(&values).map(|(t, r)| (t - 2.0 * r, t + 2.0 * r)).collect()
    });
    Ok(UncertaintyEstimate {
        values,
        method: Method::McJack,
        measure: spec,
        replicates,
        failed,
        intervals,
        seed,
    })
}
