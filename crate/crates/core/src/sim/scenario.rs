use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::rng::{rng_for, stream};

use super::population::{Population, PopulationArea};

const INTERCEPT: f64 = 10.0;
const SLOPE: f64 = 5.0;
const AREA_VARIANCE: f64 = 3.0;
const UNIT_VARIANCE: f64 = 6.0;
const HIGH_UNIT_VARIANCE: f64 = 12.0;
const UNIT_VARIANCE_SPREAD: f64 = 2.0;
const UNIT_VARIANCE_MIN: f64 = 0.5;
const CLEAN_PROB: f64 = 0.97;
const OUTLIER_MEAN: f64 = 20.0;
const OUTLIER_VARIANCE: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Common slope, common sampling variance.
    S00,
    /// Slopes +5 in the first half of the areas and -5 in the second.
    SBeta0,
    /// Split slopes and sampling variances drawn around 6 and 12.
    SBetaSigma,
    /// Split slopes with a 3% contaminated error distribution.
    OutlierMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub m: usize,
    /// Population size of every area.
    pub pop_size: usize,
    /// Sample size of every area.
    pub sample_size: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn check(&self) -> Result<()> {
        if self.m < 2 || self.sample_size == 0 || self.sample_size > self.pop_size || self.replicates == 0 {
            return Err(Error::Config(format!(
                "need m >= 2, 1 <= n <= N and T >= 1 (got m={}, N={}, n={}, T={})",
                self.m, self.pop_size, self.sample_size, self.replicates
            )));
        }
        Ok(())
    }

    /// Area slopes; fixed across replicates.
    pub fn slopes(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| match self.kind {
                ScenarioKind::S00 => SLOPE,
                _ if i < self.m / 2 => SLOPE,
                _ => -SLOPE,
            })
            .collect()
    }
}

/// A population together with the parameters that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPopulation {
    pub population: Population,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Sampling variance of each area's errors (the mixture variance for the
    /// contaminated scenario).
    pub sigma2_eps: Vec<f64>,
}

/// Draws one population: `x ~ LogNormal(1, 0.5)`, `y = 10 + beta_i x +
/// gamma_i + eps` with `gamma_i ~ N(0, 3)` and errors per scenario. Variances
/// are second arguments of `N(., .)`.
pub fn generate_population(cfg: &ScenarioConfig, replicate: usize) -> Result<GeneratedPopulation> {
    cfg.check()?;
    let mut rng = rng_for(cfg.seed, stream::POPULATION, replicate as u64);
    let lognormal = LogNormal::new(1.0, 0.5).expect("valid lognormal");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let beta = cfg.slopes();
    let gamma: Vec<f64> = (0..cfg.m).map(|_| sqrt(AREA_VARIANCE) * std_normal.sample(&mut rng)).collect();
    let sigma2_eps: Vec<f64> = match cfg.kind {
        ScenarioKind::SBetaSigma => (0..cfg.m)
            .map(|i| {
                let centre = if i < cfg.m / 2 { UNIT_VARIANCE } else { HIGH_UNIT_VARIANCE };
                (centre + sqrt(UNIT_VARIANCE_SPREAD) * std_normal.sample(&mut rng)).max(UNIT_VARIANCE_MIN)
            })
            .collect(),
        ScenarioKind::OutlierMixture => {
            let (p, q) = (CLEAN_PROB, 1.0 - CLEAN_PROB);
            let mix = p * UNIT_VARIANCE + q * (OUTLIER_VARIANCE + OUTLIER_MEAN * OUTLIER_MEAN) - (q * OUTLIER_MEAN) * (q * OUTLIER_MEAN);
            alloc::vec![mix; cfg.m]
        }
        _ => alloc::vec![UNIT_VARIANCE; cfg.m],
    };
    let areas = (0..cfg.m)
        .map(|i| {
            let mut x = Vec::with_capacity(cfg.pop_size);
            let mut y = Vec::with_capacity(cfg.pop_size);
            for _ in 0..cfg.pop_size {
                let xv = lognormal.sample(&mut rng);
                let eps = match cfg.kind {
                    ScenarioKind::OutlierMixture => {
                        let clean = rng.random_bool(CLEAN_PROB);
                        let z: f64 = std_normal.sample(&mut rng);
                        if clean {
                            sqrt(UNIT_VARIANCE) * z
                        } else {
                            OUTLIER_MEAN + sqrt(OUTLIER_VARIANCE) * z
                        }
                    }
                    _ => sqrt(sigma2_eps[i]) * std_normal.sample(&mut rng),
                };
                x.push(xv);
                y.push(INTERCEPT + beta[i] * xv + gamma[i] + eps);
            }
            PopulationArea { id: format!("{}", i + 1), y, x }
        })
        .collect();
    Ok(GeneratedPopulation { population: Population::new(1, areas)?, beta0: INTERCEPT, beta, gamma, sigma2_eps })
}
