use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::exec::map_indexed;
use crate::predict;
use crate::rng::{derive_seed, rng_for, stream};

use super::metrics::{predictor_metrics, ErrorSums, MetricsTable, RmseSums};
use super::replicate::{run_replicate, EstimationOptions, Predictor};
use super::scenario::{generate_population, ScenarioConfig};

/// Per-area averages over replicates of the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub true_slope: Vec<f64>,
    pub gee_slope: Vec<f64>,
    pub mle_slope: Vec<f64>,
    /// Mean of `sigma2_eps_hat / sigma2_eps` per area.
    pub gee_variance_ratio: Vec<f64>,
    pub mle_variance_ratio: Vec<f64>,
    pub gee_sigma2_gamma: f64,
    pub mle_sigma2_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBasedReport {
    pub table: MetricsTable,
    pub parameters: Option<ParameterSummary>,
}

pub type ModelBasedOptions = EstimationOptions;

struct Outcome {
    truth: Vec<f64>,
    predictions: Vec<Vec<f64>>,
    ebp: Option<Vec<f64>>,
    rmse: Vec<(Vec<f64>, Vec<(f64, f64)>)>,
    /// `(gee slope, mle slope, gee ratio, mle ratio)` per area and the two
    /// area variance estimates.
    params: Option<(Vec<[f64; 4]>, f64, f64)>,
}

fn one(cfg: &ScenarioConfig, opts: &EstimationOptions, t: usize) -> Result<Outcome> {
    let gp = generate_population(cfg, t)?;
    let mut rng = rng_for(cfg.seed, stream::SAMPLING, t as u64);
    let sample = gp.population.draw_sample(cfg.sample_size, &mut rng)?;
    let out = run_replicate(&sample, opts, derive_seed(cfg.seed, stream::BOOTSTRAP, t as u64))?;
    let ebp = out.gee.as_ref().map(|f| predict::ebp(&sample, f));
    let params = match (&out.gee, &out.mle) {
        (Some(g), Some(m)) if opts.record_parameters => {
            let rows = (0..cfg.m)
                .map(|i| {
                    [
                        g.params[i].beta[0],
                        m.params[i].beta[0],
                        g.params[i].sigma2_eps / gp.sigma2_eps[i],
                        m.params[i].sigma2_eps / gp.sigma2_eps[i],
                    ]
                })
                .collect();
            Some((rows, g.sigma2_gamma(), m.sigma2_gamma()))
        }
        _ => None,
    };
    Ok(Outcome { truth: gp.population.true_means(), predictions: out.predictions, ebp, rmse: out.rmse, params })
}

/// Model-based simulation: every replicate regenerates the population, draws
/// a simple random sample of `n` units per area, and evaluates the requested
/// predictors against the finite-population area means. Replicates whose
/// fits fail are excluded from every accumulator.
pub fn run_model_based(cfg: &ScenarioConfig, opts: &EstimationOptions) -> Result<ModelBasedReport> {
    cfg.check()?;
    let m = cfg.m;
    let outcomes = map_indexed(cfg.replicates, |t| one(cfg, opts, t));

    let np = opts.predictors.len();
    let mut sums = vec![ErrorSums::new(m); np];
    let mut ebp_sums = ErrorSums::new(m);
    let mut rmse_sums = vec![RmseSums::new(m); opts.rmse_estimators.len()];
    let mut truth_sum = vec![0.0; m];
    let mut param_sums = vec![[0.0f64; 4]; m];
    let mut gamma_sums = (0.0, 0.0);
    let mut used = 0;
    let mut failed = 0;
    for o in outcomes {
        let Ok(o) = o else {
            failed += 1;
            continue;
        };
        used += 1;
        for i in 0..m {
            truth_sum[i] += o.truth[i];
        }
        for (s, p) in sums.iter_mut().zip(&o.predictions) {
            s.add(p, &o.truth);
        }
        if let Some(e) = &o.ebp {
            ebp_sums.add(e, &o.truth);
        }
        for (s, (v, iv)) in rmse_sums.iter_mut().zip(&o.rmse) {
            s.add(v, iv, &o.truth);
        }
        if let Some((rows, gg, mg)) = &o.params {
            for (acc, row) in param_sums.iter_mut().zip(rows) {
                for k in 0..4 {
                    acc[k] += row[k];
                }
            }
            gamma_sums.0 += gg;
            gamma_sums.1 += mg;
        }
    }
    if used == 0 {
        return Err(crate::error::Error::ReplicateFailures { failed, total: cfg.replicates });
    }

    let names: Vec<&str> = opts.predictors.iter().map(|p| p.name()).collect();
    let reference = opts.predictors.iter().position(|p| *p == Predictor::Eblup);
    let predictors = predictor_metrics(&names, &sums, &truth_sum, used, reference);
    let ebp_rmse = super::metrics::accuracy(&ebp_sums, &truth_sum, used).2;
    let rmse_estimators = opts
        .rmse_estimators
        .iter()
        .zip(&rmse_sums)
        .map(|(e, s)| s.metrics(e.name(), &ebp_rmse, used))
        .collect();
    let parameters = opts.record_parameters.then(|| {
        let u = used as f64;
        let col = |k: usize| param_sums.iter().map(|r| r[k] / u).collect::<Vec<f64>>();
        ParameterSummary {
            true_slope: cfg.slopes(),
            gee_slope: col(0),
            mle_slope: col(1),
            gee_variance_ratio: col(2),
            mle_variance_ratio: col(3),
            gee_sigma2_gamma: gamma_sums.0 / u,
            mle_sigma2_gamma: gamma_sums.1 / u,
        }
    });
    Ok(ModelBasedReport {
        table: MetricsTable { predictors, rmse_estimators, replicates: used, failed },
        parameters,
    })
}
