//! M-quantile regression over a grid of `tau` values, unit M-quantile
//! coefficients, and empirical linear best shrinkage of area `tau`s.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::influence::{PsiBase, PsiSpec};
use crate::linalg;
use crate::math::{abs, median};
use crate::model::Sample;

/// Normal-consistency constant of the median absolute residual.
const MAD_NORMAL: f64 = 0.6745;
const MQ_TOL: f64 = 1e-8;
const MQ_MAX_ITER: usize = 100;

/// Strictly increasing `tau` values within `[0.01, 0.99]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    values: Vec<f64>,
}

impl TauGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty tau grid".into()));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("tau grid must be strictly increasing".into()));
        }
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if !(lo >= 0.01 - 1e-12 && hi <= 0.99 + 1e-12) {
            return Err(Error::Config(format!("tau grid must lie in [0.01, 0.99], got [{lo}, {hi}]")));
        }
        Ok(Self { values })
    }

    /// `min, min + step, ...` up to `max` (inclusive, up to rounding).
    pub fn from_range(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= min) {
            return Err(Error::Config(format!("bad tau grid range {min}:{max}:{step}")));
        }
        let count = libm::floor((max - min) / step + 1e-9) as usize + 1;
        let values = (0..count).map(|k| libm::round((min + k as f64 * step) * 1e12) / 1e12).collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

impl Default for TauGrid {
    /// 0.02 to 0.98 in steps of 0.02.
    fn default() -> Self {
        Self::from_range(0.02, 0.98, 0.02).expect("default grid is valid")
    }
}

/// Design rows `(1, x_ij')` and responses of all units, area by area.
struct Pooled {
    rows: Vec<f64>,
    y: Vec<f64>,
    q: usize,
}

impl Pooled {
    fn new(sample: &Sample) -> Self {
        let q = sample.p() + 1;
        let mut rows = Vec::with_capacity(sample.n_total() * q);
        let mut y = Vec::with_capacity(sample.n_total());
        for a in sample.areas() {
            for j in 0..a.n() {
                rows.push(1.0);
                rows.extend_from_slice(a.x_row(j));
                y.push(a.y[j]);
            }
        }
        Self { rows, y, q }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.q..(j + 1) * self.q]
    }

    fn fitted(&self, j: usize, coef: &[f64]) -> f64 {
        self.row(j).iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    fn weighted_ls(&self, w: &[f64]) -> Result<Vec<f64>> {
        let q = self.q;
        let mut a = DMatrix::<f64>::zeros(q, q);
        let mut b = DVector::<f64>::zeros(q);
        for j in 0..self.y.len() {
            let row = self.row(j);
            for r in 0..q {
                b[r] += w[j] * row[r] * self.y[j];
                for c in 0..q {
                    a[(r, c)] += w[j] * row[r] * row[c];
                }
            }
        }
        Ok(linalg::solve(a, b, "M-quantile weighted least squares")?.as_slice().to_vec())
    }
}

/// M-quantile regression of `y` on `(1, x)` pooled over all areas, with a
/// tilted Huber influence function and MAD scale refreshed every iteration.
/// Returns `(beta_0tau, beta_tau')`.
pub fn fit_mquantile(sample: &Sample, tau: f64, c: f64) -> Result<Vec<f64>> {
    fit_pooled(&Pooled::new(sample), tau, c).map(|f| f.coef)
}

struct MqFit {
    coef: Vec<f64>,
    scale: f64,
}

fn fit_pooled(data: &Pooled, tau: f64, c: f64) -> Result<MqFit> {
    let psi = PsiSpec::huber(c, tau)?;
    let n = data.y.len();
    if n <= data.q {
        return Err(Error::Singular("M-quantile fit needs more units than coefficients"));
    }
    let mut w = vec![1.0; n];
    let mut coef = data.weighted_ls(&w)?;
    let mut scale = 0.0;
    let mut resid = vec![0.0; n];
    for _ in 0..MQ_MAX_ITER {
        for j in 0..n {
            resid[j] = data.y[j] - data.fitted(j, &coef);
        }
        let abs_resid: Vec<f64> = resid.iter().map(|r| abs(*r)).collect();
        scale = median(&abs_resid) / MAD_NORMAL;
        if !(scale > 0.0) {
            break;
        }
        for j in 0..n {
            w[j] = psi.weight(resid[j] / scale);
        }
        let next = data.weighted_ls(&w)?;
        let change = next.iter().zip(&coef).map(|(a, b)| abs(a - b)).fold(0.0, f64::max);
        coef = next;
        if change < MQ_TOL {
            break;
        }
    }
    Ok(MqFit { coef, scale })
}

/// Scaled M-quantile estimating equation `n^-1 sum psi_tau(e/s) (1, x')'` at
/// `coef`, with `s` the MAD scale of the residuals at `coef`.
pub fn mquantile_equation(sample: &Sample, tau: f64, c: f64, coef: &[f64]) -> Vec<f64> {
    let data = Pooled::new(sample);
    let psi = PsiSpec { base: PsiBase::Huber { c }, tau };
    let n = data.y.len();
    let resid: Vec<f64> = (0..n).map(|j| data.y[j] - data.fitted(j, coef)).collect();
    let abs_resid: Vec<f64> = resid.iter().map(|r| abs(*r)).collect();
    let scale = median(&abs_resid) / MAD_NORMAL;
    let mut eq = vec![0.0; data.q];
    if !(scale > 0.0) {
        return eq;
    }
    for j in 0..n {
        let v = psi.psi(resid[j] / scale);
        for (e, x) in eq.iter_mut().zip(data.row(j)) {
            *e += v * x;
        }
    }
    eq.iter_mut().for_each(|e| *e /= n as f64);
    eq
}

/// Coefficients of the M-quantile fit at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFits {
    pub grid: TauGrid,
    /// One `(p + 1)` coefficient vector per grid value.
    pub coefs: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

pub fn fit_grid(sample: &Sample, grid: &TauGrid, c: f64) -> Result<GridFits> {
    let data = Pooled::new(sample);
    let fits = grid
        .values()
        .iter()
        .map(|&t| fit_pooled(&data, t, c))
        .collect::<Result<Vec<_>>>()?;
    let (coefs, scales) = fits.into_iter().map(|f| (f.coef, f.scale)).unzip();
    Ok(GridFits { grid: grid.clone(), coefs, scales })
}

/// Chooses, for one unit, the grid value whose fitted line passes closest to
/// `y`. Ties go to the value nearest 0.5, then to the smaller value.
pub fn closest_tau(grid: &[f64], distances: &[f64]) -> f64 {
    let best = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + best);
    let mut chosen: Option<f64> = None;
    for (&t, &d) in grid.iter().zip(distances) {
        if d <= best + tol {
            chosen = Some(match chosen {
                None => t,
                Some(prev) => {
                    let (dp, dt) = (abs(prev - 0.5), abs(t - 0.5));
                    if dt < dp - 1e-12 || (abs(dt - dp) <= 1e-12 && t < prev) {
                        t
                    } else {
                        prev
                    }
                }
            });
        }
    }
    chosen.unwrap_or(0.5)
}

/// Estimated M-quantile coefficient of every unit, grouped by area.
pub fn unit_coefficients(sample: &Sample, fits: &GridFits) -> Vec<Vec<f64>> {
    let grid = fits.grid.values();
    let mut dist = vec![0.0; grid.len()];
    sample
        .areas()
        .iter()
        .map(|a| {
            (0..a.n())
                .map(|j| {
                    let x = a.x_row(j);
                    for (d, coef) in dist.iter_mut().zip(&fits.coefs) {
                        let fit = coef[0] + x.iter().zip(&coef[1..]).map(|(u, v)| u * v).sum::<f64>();
                        *d = abs(a.y[j] - fit);
                    }
                    closest_tau(grid, &dist)
                })
                .collect()
        })
        .collect()
}

/// Moment estimates and shrinkage predictions of the area `tau`s.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEstimates {
    pub unit_tau: Vec<Vec<f64>>,
    pub area_mean_tau: Vec<f64>,
    pub elb_tau: Vec<f64>,
    /// Shrinkage weight toward `mu_hat` per area.
    pub shrinkage: Vec<f64>,
    pub mu_hat: f64,
    pub eta2_hat: f64,
    pub nu2_hat: f64,
}

/// Empirical linear best predictor of each area's `tau` from unit
/// coefficients, clamped to `[lo, hi]`.
pub fn elb_tau(unit_tau: Vec<Vec<f64>>, lo: f64, hi: f64) -> Result<TauEstimates> {
    let m = unit_tau.len();
    if m < 2 || unit_tau.iter().any(|u| u.is_empty()) {
        return Err(Error::Config("ELB needs at least two areas, each with a unit".into()));
    }
    let area_mean_tau: Vec<f64> = unit_tau.iter().map(|u| crate::math::mean(u)).collect();
    let n: usize = unit_tau.iter().map(|u| u.len()).sum();
    let mu_hat = crate::math::mean(&area_mean_tau);
    let within: f64 = unit_tau
        .iter()
        .zip(&area_mean_tau)
        .map(|(u, mean)| u.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>())
        .sum();
    let nu2_hat = if n > m { within / (n - m) as f64 } else { 0.0 };
    let between = area_mean_tau.iter().map(|t| (t - mu_hat) * (t - mu_hat)).sum::<f64>() / (m - 1) as f64;
    let mean_inv_n = unit_tau.iter().map(|u| 1.0 / u.len() as f64).sum::<f64>() / m as f64;
    let eta2_hat = (between - nu2_hat * mean_inv_n).max(0.0);

    let shrinkage: Vec<f64> = unit_tau
        .iter()
        .map(|u| {
            let sampling = nu2_hat / u.len() as f64;
            if sampling + eta2_hat > 0.0 {
                sampling / (sampling + eta2_hat)
            } else {
                1.0
            }
        })
        .collect();
    let elb_tau = area_mean_tau
        .iter()
        .zip(&shrinkage)
        .map(|(t, b)| ((1.0 - b) * t + b * mu_hat).clamp(lo, hi))
        .collect();
    Ok(TauEstimates { unit_tau, area_mean_tau, elb_tau, shrinkage, mu_hat, eta2_hat, nu2_hat })
}

/// Grid fits, unit coefficients and ELB predictions in one call.
pub fn estimate_taus(sample: &Sample, grid: &TauGrid, c: f64) -> Result<TauEstimates> {
    let fits = fit_grid(sample, grid, c)?;
    elb_tau(unit_coefficients(sample, &fits), grid.min(), grid.max())
}
