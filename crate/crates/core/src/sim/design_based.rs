use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::math::{abs, sqrt};
use crate::rng::{derive_seed, rng_for, stream};

use super::metrics::median;
use super::population::Population;
use super::replicate::{run_replicate, EstimationOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    /// Per-area sample sizes to evaluate (capped at each area's size).
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub estimation: EstimationOptions,
}

/// Design bias and accuracy of one predictor at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMetrics {
    pub name: String,
    /// Signed relative bias per area, percent.
    pub rb: Vec<f64>,
    pub rrmse: Vec<f64>,
    pub median_abs_rb: f64,
    pub median_rrmse: f64,
    /// Values for the area with the smallest population.
    pub smallest_area_rb: f64,
    pub smallest_area_rrmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    pub sample_size: usize,
    pub predictors: Vec<DesignMetrics>,
    pub replicates: usize,
    pub failed: usize,
}

/// Design-based simulation: the population stays fixed and each replicate
/// draws a new simple random sample per area.
pub fn run_design_based(pop: &Population, opts: &DesignOptions) -> Result<Vec<DesignTable>> {
    if opts.replicates == 0 || opts.sample_sizes.iter().any(|&n| n == 0) {
        return Err(Error::Config("need T >= 1 and positive sample sizes".into()));
    }
    let truth = pop.true_means();
    let m = pop.m();
    let smallest = (0..m).min_by_key(|&i| pop.areas()[i].size()).unwrap_or(0);
    let names: Vec<&str> = opts.estimation.predictors.iter().map(|p| p.name()).collect();
    let mut tables = Vec::with_capacity(opts.sample_sizes.len());
    for (k, &n) in opts.sample_sizes.iter().enumerate() {
        let runs = map_indexed(opts.replicates, |t| {
            let index = (k * opts.replicates + t) as u64;
            let mut rng = rng_for(opts.seed, stream::DESIGN, index);
            let sample = pop.draw_sample(n, &mut rng)?;
            run_replicate(&sample, &opts.estimation, derive_seed(opts.seed, stream::BOOTSTRAP, index))
                .map(|o| o.predictions)
        });
        let mut diff = vec![vec![0.0; m]; names.len()];
        let mut sq = vec![vec![0.0; m]; names.len()];
        let mut used = 0;
        let mut failed = 0;
        for r in runs {
            let Ok(preds) = r else {
                failed += 1;
                continue;
            };
            used += 1;
            for (p, est) in preds.iter().enumerate() {
                for i in 0..m {
                    let e = est[i] - truth[i];
                    diff[p][i] += e;
                    sq[p][i] += e * e;
                }
            }
        }
        if used == 0 {
            return Err(Error::ReplicateFailures { failed, total: opts.replicates });
        }
        let u = used as f64;
        let predictors = names
            .iter()
            .enumerate()
            .map(|(p, name)| {
                let rb: Vec<f64> = (0..m).map(|i| 100.0 * diff[p][i] / u / abs(truth[i])).collect();
                let rrmse: Vec<f64> = (0..m).map(|i| 100.0 * sqrt(sq[p][i] / u) / abs(truth[i])).collect();
                let abs_rb: Vec<f64> = rb.iter().map(|v| abs(*v)).collect();
                DesignMetrics {
                    name: String::from(*name),
                    median_abs_rb: median(&abs_rb),
                    median_rrmse: median(&rrmse),
                    smallest_area_rb: rb[smallest],
                    smallest_area_rrmse: rrmse[smallest],
                    rb,
                    rrmse,
                }
            })
            .collect();
        tables.push(DesignTable { sample_size: n, predictors, replicates: used, failed });
    }
    Ok(tables)
}
