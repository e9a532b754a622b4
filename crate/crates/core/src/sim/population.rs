use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::math::mean;
use crate::model::{AreaSample, Sample};
use crate::rng::Rng;

/// All units of one area.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationArea {
    pub id: String,
    pub y: Vec<f64>,
    /// Row-major `N × p`.
    pub x: Vec<f64>,
}

impl PopulationArea {
    pub fn size(&self) -> usize {
        self.y.len()
    }
}

/// A finite population split into areas.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    p: usize,
    areas: Vec<PopulationArea>,
}

impl Population {
    pub fn new(p: usize, areas: Vec<PopulationArea>) -> Result<Self> {
        if areas.len() < 2 {
            return Err(Error::Config(format!("a population needs at least 2 areas, got {}", areas.len())));
        }
        for a in &areas {
            if a.y.is_empty() || a.x.len() != a.y.len() * p {
                return Err(Error::Config(format!("area {} is empty or has ragged covariates", a.id)));
            }
            if a.y.iter().chain(&a.x).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("area {} has non-finite values", a.id)));
            }
        }
        Ok(Self { p, areas })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn areas(&self) -> &[PopulationArea] {
        &self.areas
    }

    pub fn m(&self) -> usize {
        self.areas.len()
    }

    /// Finite-population means of `y`.
    pub fn true_means(&self) -> Vec<f64> {
        self.areas.iter().map(|a| mean(&a.y)).collect()
    }

    /// Finite-population means of the covariates of area `i`.
    pub fn x_means(&self, i: usize) -> Vec<f64> {
        let a = &self.areas[i];
        let n = a.size() as f64;
        (0..self.p).map(|c| (0..a.size()).map(|j| a.x[j * self.p + c]).sum::<f64>() / n).collect()
    }

    /// Simple random sample without replacement of `min(n, N_i)` units per
    /// area, with `k = h = 1`.
    pub fn draw_sample(&self, n: usize, rng: &mut Rng) -> Result<Sample> {
        let p = self.p;
        let areas = self
            .areas
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let take = n.min(a.size());
                let idx = srswor(rng, a.size(), take);
                let mut x = Vec::with_capacity(take * p);
                for &j in &idx {
                    x.extend_from_slice(&a.x[j * p..(j + 1) * p]);
                }
                AreaSample {
                    id: a.id.clone(),
                    y: idx.iter().map(|&j| a.y[j]).collect(),
                    x,
                    k: alloc::vec![1.0; take],
                    h: 1.0,
                    pop_size: a.size(),
                    pop_mean: self.x_means(i),
                }
            })
            .collect();
        Sample::from_areas(areas, p)
    }
}

/// `n` distinct indices out of `0..population`, in increasing order.
pub fn srswor(rng: &mut Rng, population: usize, n: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, population, n).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};

    #[test]
    fn srswor_inclusion_frequencies() {
        let (big_n, n, draws) = (20usize, 5usize, 20_000usize);
        let mut counts = alloc::vec![0usize; big_n];
        let mut rng = rng_for(1, stream::SAMPLING, 0);
        for _ in 0..draws {
            let s = srswor(&mut rng, big_n, n);
            assert_eq!(s.len(), n);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            for j in s {
                counts[j] += 1;
            }
        }
        let pi = n as f64 / big_n as f64;
        let se = (draws as f64 * pi * (1.0 - pi)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * pi).abs() < 3.0 * se + 1.0, "{c}");
        }
    }

    #[test]
    fn census_sample_recovers_means() {
        let areas = (0..2)
            .map(|i| PopulationArea {
                id: format!("a{i}"),
                y: (0..4).map(|j| (i * 10 + j) as f64).collect(),
                x: (0..4).map(|j| j as f64).collect(),
            })
            .collect();
        let pop = Population::new(1, areas).unwrap();
        let mut rng = rng_for(3, stream::SAMPLING, 0);
        let s = pop.draw_sample(10, &mut rng).unwrap();
        let truth = pop.true_means();
        for (a, t) in s.areas().iter().zip(truth) {
            assert_eq!(a.n(), 4);
            assert!((a.y_mean() - t).abs() < 1e-12);
            assert_eq!(a.pop_mean, alloc::vec![1.5]);
        }
    }
}
