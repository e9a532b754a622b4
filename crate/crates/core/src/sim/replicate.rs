//! What one simulation replicate computes from its sample.

use alloc::vec::Vec;

use crate::error::Result;
use crate::gee::{self, FitControl, GeeConfig};
use crate::influence::PsiBase;
use crate::mle;
use crate::model::{FitResult, Sample};
use crate::mq::{estimate_taus, TauGrid};
use crate::predict;
use crate::uncertainty::{bootstrap_measure, mcjack_measure, naive_rmse, GeeEbp, MeasureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Predictor {
    Direct,
    Eblup,
    Ebp,
    EbpMle,
    EbpFinite,
    MqSynth,
    Mqcd,
}

impl Predictor {
    pub const ALL: [Predictor; 7] = [
        Predictor::Direct,
        Predictor::Eblup,
        Predictor::Ebp,
        Predictor::EbpMle,
        Predictor::EbpFinite,
        Predictor::MqSynth,
        Predictor::Mqcd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::Direct => "direct",
            Predictor::Eblup => "eblup",
            Predictor::Ebp => "ebp",
            Predictor::EbpMle => "ebp_mle",
            Predictor::EbpFinite => "ebp_finite",
            Predictor::MqSynth => "mq",
            Predictor::Mqcd => "mqcd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmseEstimator {
    Naive,
    Bootstrap,
    McJack,
}

impl RmseEstimator {
    pub fn name(self) -> &'static str {
        match self {
            RmseEstimator::Naive => "naive",
            RmseEstimator::Bootstrap => "bootstrap",
            RmseEstimator::McJack => "mcjack",
        }
    }
}

/// How area tilts are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauMode {
    Fixed(f64),
    /// Shrinkage predictions from M-quantile unit coefficients.
    Elb,
}

/// Estimation settings shared by the harnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub predictors: Vec<Predictor>,
    pub rmse_estimators: Vec<RmseEstimator>,
    pub bootstrap_replicates: usize,
    /// Huber constant of the GEE and M-quantile fits when `psi` is Huber.
    pub psi: PsiBase,
    pub mq_c: f64,
    pub tau: TauMode,
    pub grid: TauGrid,
    pub control: FitControl,
    /// Also fit by maximum likelihood and record parameter estimates.
    pub record_parameters: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            predictors: Predictor::ALL.to_vec(),
            rmse_estimators: Vec::new(),
            bootstrap_replicates: 100,
            psi: PsiBase::Huber { c: crate::influence::HUBER_C },
            mq_c: crate::influence::HUBER_C,
            tau: TauMode::Elb,
            grid: TauGrid::default(),
            control: FitControl::default(),
            record_parameters: false,
        }
    }
}

/// Outputs of one replicate, one entry per requested predictor / estimator.
pub(crate) struct ReplicateOutput {
    pub predictions: Vec<Vec<f64>>,
    /// Per estimator `(rmse, interval)` per area.
    pub rmse: Vec<(Vec<f64>, Vec<(f64, f64)>)>,
    pub gee: Option<FitResult>,
    pub mle: Option<FitResult>,
}

pub(crate) fn run_replicate(sample: &Sample, opts: &EstimationOptions, boot_seed: u64) -> Result<ReplicateOutput> {
    let wants = |p: Predictor| opts.predictors.contains(&p);
    let m = sample.m();
    let need_mq = wants(Predictor::MqSynth) || wants(Predictor::Mqcd);
    let need_gee = wants(Predictor::Ebp)
        || wants(Predictor::EbpFinite)
        || !opts.rmse_estimators.is_empty()
        || opts.record_parameters;
    let need_mle = wants(Predictor::EbpMle) || opts.record_parameters;

    let tau_est = if matches!(opts.tau, TauMode::Elb) || need_mq {
        Some(estimate_taus(sample, &opts.grid, opts.mq_c)?)
    } else {
        None
    };
    let taus: Vec<f64> = match (opts.tau, &tau_est) {
        (TauMode::Fixed(t), _) => alloc::vec![t; m],
        (TauMode::Elb, Some(te)) => te.elb_tau.clone(),
        (TauMode::Elb, None) => unreachable!("tilts are estimated in ELB mode"),
    };
    let gee_cfg = GeeConfig { psi: opts.psi, control: opts.control };
    let gee_fit = if need_gee { Some(gee::fit(sample, &gee_cfg, &taus)?) } else { None };
    let mle_fit = if need_mle { Some(mle::fit_mle(sample, &opts.control)?) } else { None };
    let bhf = if wants(Predictor::Eblup) { Some(mle::fit_bhf_reml(sample)?) } else { None };
    let mq_coefs = match &tau_est {
        Some(te) if need_mq => Some(predict::mq_area_coefficients(sample, &te.elb_tau, opts.mq_c)?),
        _ => None,
    };

    let mut predictions = Vec::with_capacity(opts.predictors.len());
    for &p in &opts.predictors {
        predictions.push(match p {
            Predictor::Direct => predict::direct(sample),
            Predictor::Eblup => predict::eblup_bhf(sample, bhf.as_ref().expect("fitted")),
            Predictor::Ebp => predict::ebp(sample, gee_fit.as_ref().expect("fitted")),
            Predictor::EbpFinite => predict::ebp_finite(sample, gee_fit.as_ref().expect("fitted")),
            Predictor::EbpMle => predict::ebp(sample, mle_fit.as_ref().expect("fitted")),
            Predictor::MqSynth => predict::mq_synthetic(sample, mq_coefs.as_ref().expect("fitted")),
            Predictor::Mqcd => {
                let slopes: Vec<Vec<f64>> = mq_coefs.as_ref().expect("fitted").iter().map(|c| c[1..].to_vec()).collect();
                predict::mqcd(sample, &slopes)
            }
        });
    }

    let mut rmse = Vec::with_capacity(opts.rmse_estimators.len());
    if let Some(fit) = &gee_fit {
        let point = predict::ebp(sample, fit);
        let proc = GeeEbp { config: gee_cfg };
        for &e in &opts.rmse_estimators {
            let est = match e {
                RmseEstimator::Naive => {
                    let v = naive_rmse(sample, fit);
                    let iv = point.iter().zip(&v).map(|(t, r)| (t - 2.0 * r, t + 2.0 * r)).collect();
                    (v, iv)
                }
                RmseEstimator::Bootstrap => {
                    let b = bootstrap_measure(sample, fit, &proc, MeasureSpec::RMSE, opts.bootstrap_replicates, boot_seed)?;
                    (b.values, b.intervals.unwrap_or_default())
                }
                RmseEstimator::McJack => {
                    let b = mcjack_measure(sample, fit, &proc, MeasureSpec::RMSE, opts.bootstrap_replicates, boot_seed)?;
                    (b.values, b.intervals.unwrap_or_default())
                }
            };
            rmse.push(est);
        }
    }
    Ok(ReplicateOutput { predictions, rmse, gee: gee_fit, mle: mle_fit })
}
