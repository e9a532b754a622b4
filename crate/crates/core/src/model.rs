//! Data model: unit records, area summaries, validation, and the fitted
//! parameter bundle shared by all fitters and predictors.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// One sampled unit. `x` excludes the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub area_id: String,
    pub y: f64,
    pub x: Vec<f64>,
    /// Unit-level variance multiplier `k_ij`.
    pub k: f64,
}

impl UnitRecord {
    pub fn new(area_id: impl Into<String>, y: f64, x: Vec<f64>) -> Self {
        Self { area_id: area_id.into(), y, x, k: 1.0 }
    }
}

/// Population-level summary of one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaInfo {
    pub area_id: String,
    /// Population size `N_i`.
    pub pop_size: usize,
    /// Sample size `n_i`.
    pub sample_size: usize,
    /// Population covariate means `X̄_i`.
    pub pop_mean: Vec<f64>,
    /// Area-level variance multiplier `h_i`.
    pub h: f64,
}

/// Raw unit-level sample plus area summaries, as read from input files.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub units: Vec<UnitRecord>,
    pub areas: Vec<AreaInfo>,
    /// Covariate dimension (intercept excluded).
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Dataset,
    Area(String),
    /// Zero-based position in `Dataset::units`.
    Unit { index: usize, area_id: String },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Dataset => f.write_str("dataset"),
            Location::Area(id) => write!(f, "area {id}"),
            Location::Unit { index, area_id } => write!(f, "unit {index} (area {area_id})"),
        }
    }
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl Dataset {
    pub fn new(units: Vec<UnitRecord>, areas: Vec<AreaInfo>, p: usize) -> Self {
        Self { units, areas, p }
    }

    /// Every broken invariant, in unit order then area order. Empty iff the
    /// dataset is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |location: Location, message: String| out.push(Violation { location, message });

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut known: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, a) in self.areas.iter().enumerate() {
            if known.insert(a.area_id.as_str(), i).is_some() {
                push(Location::Area(a.area_id.clone()), "duplicate area id".into());
            }
        }

        let mut missing_reported: BTreeMap<&str, ()> = BTreeMap::new();
        for (index, u) in self.units.iter().enumerate() {
            let loc = || Location::Unit { index, area_id: u.area_id.clone() };
            if !(u.k > 0.0 && u.k.is_finite()) {
                push(loc(), format!("variance multiplier k must be positive, got {}", u.k));
            }
            if !u.y.is_finite() {
                push(loc(), "response is not finite".into());
            }
            if u.x.len() != self.p {
                push(loc(), format!("expected {} covariates, got {}", self.p, u.x.len()));
            } else if u.x.iter().any(|v| !v.is_finite()) {
                push(loc(), "covariate is not finite".into());
            }
            *counts.entry(u.area_id.as_str()).or_default() += 1;
            if !known.contains_key(u.area_id.as_str())
                && missing_reported.insert(u.area_id.as_str(), ()).is_none()
            {
                push(Location::Area(u.area_id.clone()), "area appears in units but not in area table".into());
            }
        }

        for a in &self.areas {
            let loc = || Location::Area(a.area_id.clone());
            let observed = counts.get(a.area_id.as_str()).copied().unwrap_or(0);
            if observed == 0 {
                push(loc(), "area has no sampled units".into());
            }
            if a.sample_size != observed {
                push(loc(), format!("sample size {} but {} unit records", a.sample_size, observed));
            }
            if a.sample_size > a.pop_size {
                push(loc(), format!("sample size {} exceeds population size {}", a.sample_size, a.pop_size));
            }
            if !(a.h > 0.0 && a.h.is_finite()) {
                push(loc(), format!("variance multiplier h must be positive, got {}", a.h));
            }
            if a.pop_mean.len() != self.p {
                push(loc(), format!("expected {} population means, got {}", self.p, a.pop_mean.len()));
            }
        }

        if self.areas.len() < 2 {
            push(Location::Dataset, format!("need at least 2 areas, got {}", self.areas.len()));
        }
        out
    }
}

/// The sampled units of one area in contiguous storage.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaSample {
    pub id: String,
    pub y: Vec<f64>,
    /// Row-major `n × p` covariates.
    pub x: Vec<f64>,
    pub k: Vec<f64>,
    pub h: f64,
    pub pop_size: usize,
    pub pop_mean: Vec<f64>,
}

impl AreaSample {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        if self.y.is_empty() {
            self.pop_mean.len()
        } else {
            self.x.len() / self.y.len()
        }
    }

    pub fn x_row(&self, j: usize) -> &[f64] {
        let p = self.p();
        &self.x[j * p..(j + 1) * p]
    }

    pub fn y_mean(&self) -> f64 {
        crate::math::mean(&self.y)
    }

    pub fn x_mean(&self) -> Vec<f64> {
        let p = self.p();
        let n = self.n() as f64;
        let mut m = alloc::vec![0.0; p];
        for j in 0..self.n() {
            for (acc, v) in m.iter_mut().zip(self.x_row(j)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// `sum_j 1 / k_j`.
    pub fn inv_k_sum(&self) -> f64 {
        self.k.iter().map(|k| 1.0 / k).sum()
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.n() as f64 / self.pop_size as f64
    }
}

/// A validated dataset grouped by area, in order of first appearance in the
/// unit list. All fitters and predictors work on this form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    areas: Vec<AreaSample>,
    p: usize,
}

impl Sample {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let violations = ds.validate();
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &ds.units {
            if !slot.contains_key(u.area_id.as_str()) {
                slot.insert(u.area_id.as_str(), order.len());
                order.push(u.area_id.as_str());
            }
        }
        let info: BTreeMap<&str, &AreaInfo> = ds.areas.iter().map(|a| (a.area_id.as_str(), a)).collect();
        let mut areas: Vec<AreaSample> = order
            .iter()
            .map(|id| {
                let a = info[id];
                AreaSample {
                    id: a.area_id.clone(),
                    y: Vec::with_capacity(a.sample_size),
                    x: Vec::with_capacity(a.sample_size * ds.p),
                    k: Vec::with_capacity(a.sample_size),
                    h: a.h,
                    pop_size: a.pop_size,
                    pop_mean: a.pop_mean.clone(),
                }
            })
            .collect();
        for u in &ds.units {
            let a = &mut areas[slot[u.area_id.as_str()]];
            a.y.push(u.y);
            a.x.extend_from_slice(&u.x);
            a.k.push(u.k);
        }
        Ok(Self { areas, p: ds.p })
    }

    /// Builds a sample from already-grouped areas, checking the same
    /// invariants as [`Dataset::validate`].
    pub fn from_areas(areas: Vec<AreaSample>, p: usize) -> Result<Self> {
        let s = Self { areas, p };
        let violations = s.to_dataset().validate();
        let mut extra = Vec::new();
        for a in &s.areas {
            if a.x.len() != a.y.len() * p || a.k.len() != a.y.len() {
                extra.push(Violation {
                    location: Location::Area(a.id.clone()),
                    message: "ragged covariate or multiplier storage".into(),
                });
            }
        }
        if violations.is_empty() && extra.is_empty() {
            Ok(s)
        } else {
            let mut all = violations;
            all.extend(extra);
            Err(Error::Invalid(all))
        }
    }

    pub fn to_dataset(&self) -> Dataset {
        let mut units = Vec::new();
        let mut infos = Vec::new();
        for a in &self.areas {
            for j in 0..a.n() {
                units.push(UnitRecord {
                    area_id: a.id.clone(),
                    y: a.y[j],
                    x: if self.p == 0 { Vec::new() } else { a.x[j * self.p..(j + 1) * self.p].to_vec() },
                    k: a.k[j],
                });
            }
            infos.push(AreaInfo {
                area_id: a.id.clone(),
                pop_size: a.pop_size,
                sample_size: a.n(),
                pop_mean: a.pop_mean.clone(),
                h: a.h,
            });
        }
        Dataset { units, areas: infos, p: self.p }
    }

    pub fn m(&self) -> usize {
        self.areas.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_total(&self) -> usize {
        self.areas.iter().map(|a| a.n()).sum()
    }

    pub fn areas(&self) -> &[AreaSample] {
        &self.areas
    }

    pub fn area(&self, i: usize) -> &AreaSample {
        &self.areas[i]
    }

    /// Same design with new responses, one vector per area.
    pub fn with_responses(&self, ys: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(ys.len(), self.m());
        let areas = self
            .areas
            .iter()
            .zip(ys)
            .map(|(a, y)| {
                debug_assert_eq!(a.n(), y.len());
                AreaSample { y, ..a.clone() }
            })
            .collect();
        Self { areas, p: self.p }
    }

    /// True when every unit and area multiplier equals one.
    pub fn unit_multipliers(&self) -> bool {
        self.areas.iter().all(|a| a.h == 1.0 && a.k.iter().all(|&k| k == 1.0))
    }

    /// Sample variance of all responses pooled.
    pub fn response_variance(&self) -> f64 {
        let all: Vec<f64> = self.areas.iter().flat_map(|a| a.y.iter().copied()).collect();
        crate::math::sample_variance(&all)
    }
}

/// Per-area parameter bundle `(beta_0, beta_i, sigma2_gamma, sigma2_eps_i)`
/// with the area tilting parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma2_gamma: f64,
    pub sigma2_eps: f64,
    pub tau: f64,
}

impl ParamVector {
    pub fn is_valid(&self) -> bool {
        self.sigma2_gamma >= 0.0
            && self.sigma2_eps >= 0.0
            && self.tau > 0.0
            && self.tau < 1.0
            && self.beta0.is_finite()
            && self.beta.iter().all(|b| b.is_finite())
    }

    /// `beta_0 + x' beta_i`.
    pub fn synthetic(&self, x: &[f64]) -> f64 {
        self.beta0 + dot(x, &self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Gee,
    Mle,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Gee => "GEE",
            FitMethod::Mle => "MLE",
        })
    }
}

/// Fitted parameters for every area. `beta0` and `sigma2_gamma` are shared.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<ParamVector>,
    pub method: FitMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Parameter change of the final iteration.
    pub max_param_delta: f64,
    /// Per-iteration convergence trace: parameter change for GEE,
    /// log-likelihood for MLE.
    pub trace: Vec<f64>,
    /// Area-specific intercepts `alpha_0i` (GEE only; `beta0` otherwise).
    pub intercepts: Vec<f64>,
    /// Number of variance solves that found no sign change on their bracket.
    pub bracket_warnings: usize,
}

impl FitResult {
    pub fn beta0(&self) -> f64 {
        self.params[0].beta0
    }

    pub fn sigma2_gamma(&self) -> f64 {
        self.params[0].sigma2_gamma
    }

    pub fn taus(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.tau).collect()
    }

    pub fn is_valid(&self) -> bool {
        let Some(first) = self.params.first() else { return false };
        self.params.iter().all(|p| {
            p.is_valid() && p.beta0 == first.beta0 && p.sigma2_gamma == first.sigma2_gamma
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    pub fn area(id: &str, n: usize, pop: usize, xbar: f64) -> AreaInfo {
        AreaInfo { area_id: id.into(), pop_size: pop, sample_size: n, pop_mean: vec![xbar], h: 1.0 }
    }

    pub fn two_area() -> Dataset {
        let units = vec![
            UnitRecord::new("a", 1.0, vec![0.5]),
            UnitRecord::new("a", 2.0, vec![1.5]),
            UnitRecord::new("b", 3.0, vec![1.0]),
            UnitRecord::new("b", 5.0, vec![2.0]),
        ];
        Dataset::new(units, vec![area("a", 2, 10, 1.0), area("b", 2, 10, 1.5)], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use alloc::vec;

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(two_area().validate().is_empty());
    }

    #[test]
    fn zero_multiplier_is_reported_once() {
        let mut ds = two_area();
        ds.units[2].k = 0.0;
        let v = ds.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Location::Unit { index: 2, area_id: "b".into() });
    }

    #[test]
    fn unknown_area_is_reported_once() {
        let mut ds = two_area();
        ds.units.push(UnitRecord::new("zz", 1.0, vec![1.0]));
        ds.units.push(UnitRecord::new("zz", 2.0, vec![1.0]));
        let v = ds.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Location::Area("zz".into()));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut ds = two_area();
        ds.areas[0].sample_size = 3;
        ds.areas[1].h = -1.0;
        let before = ds.clone();
        assert_eq!(ds.validate(), ds.validate());
        assert_eq!(ds, before);
        assert_eq!(ds.validate().len(), 2);
    }

    #[test]
    fn single_area_rejected() {
        let ds = Dataset::new(
            vec![UnitRecord::new("a", 1.0, vec![0.0])],
            vec![area("a", 1, 5, 0.0)],
            1,
        );
        let v = ds.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, Location::Dataset);
    }

    #[test]
    fn sample_orders_areas_by_first_appearance() {
        let mut ds = two_area();
        ds.units.rotate_left(2);
        ds.areas.reverse();
        ds.areas.reverse();
        let s = Sample::from_dataset(&ds).unwrap();
        assert_eq!(s.area(0).id, "b");
        assert_eq!(s.area(1).id, "a");
        assert_eq!(s.area(0).y, vec![3.0, 5.0]);
        assert_eq!(s.area(1).x_mean(), vec![1.0]);
        assert_eq!(s.n_total(), 4);
    }

    #[test]
    fn sample_round_trips_through_dataset() {
        let s = Sample::from_dataset(&two_area()).unwrap();
        assert_eq!(Sample::from_dataset(&s.to_dataset()).unwrap(), s);
    }
}
