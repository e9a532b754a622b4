//! Likelihood-based fitters: maximum likelihood for the model with
//! area-specific slopes and variances, and REML for the homogeneous nested
//! error model (used for the EBLUP and to initialize the GEE fitter).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gee::FitControl;
use crate::linalg;
use crate::math::{abs, exp, ln};
use crate::model::{dot, AreaSample, FitMethod, FitResult, ParamVector, Sample};
use crate::roots::golden_max;

/// Per-area sufficient pieces of the Gaussian likelihood at given
/// coefficients: residual mean and within-area residual sum of squares.
fn residual_moments(a: &AreaSample, beta0: f64, beta: &[f64]) -> (f64, f64) {
    let n = a.n();
    let mut sum = 0.0;
    let mut ss = 0.0;
    for j in 0..n {
        let e = a.y[j] - beta0 - dot(a.x_row(j), beta);
        sum += e;
        ss += e * e;
    }
    let mean = sum / n as f64;
    (mean, ss - n as f64 * mean * mean)
}

/// Area contribution to the log-likelihood (constant dropped), written in
/// within/between form.
fn area_loglik(n: usize, within: f64, mean_resid: f64, s: f64, g: f64) -> f64 {
    let nf = n as f64;
    let d = s + nf * g;
    -0.5 * ((nf - 1.0) * ln(s) + ln(d) + within / s + nf * mean_resid * mean_resid / d)
}

fn require_unit_multipliers(sample: &Sample) -> Result<()> {
    if sample.unit_multipliers() {
        Ok(())
    } else {
        Err(Error::Unsupported("the likelihood fitters require h = 1 and k = 1".into()))
    }
}

/// Log-likelihood of the area-specific model up to an additive constant.
/// Requires unit variance multipliers, positive sampling variances and a
/// nonnegative area variance.
pub fn loglik(sample: &Sample, params: &[ParamVector]) -> Result<f64> {
    require_unit_multipliers(sample)?;
    if params.len() != sample.m() {
        return Err(Error::Config(format!("{} parameter vectors for {} areas", params.len(), sample.m())));
    }
    let mut total = 0.0;
    for (a, p) in sample.areas().iter().zip(params) {
        if !(p.sigma2_eps > 0.0) || !(p.sigma2_gamma >= 0.0) {
            return Err(Error::Domain(format!(
                "sigma2_eps = {}, sigma2_gamma = {} in area {}",
                p.sigma2_eps, p.sigma2_gamma, a.id
            )));
        }
        let (mean, within) = residual_moments(a, p.beta0, &p.beta);
        total += area_loglik(a.n(), within, mean, p.sigma2_eps, p.sigma2_gamma);
    }
    Ok(total)
}

/// Homogeneous nested error model fitted by REML.
#[derive(Debug, Clone, PartialEq)]
pub struct BhfFit {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma2_gamma: f64,
    pub sigma2_eps: f64,
    /// `(sigma2_eps / n_i) / (sigma2_eps / n_i + sigma2_gamma)` per area.
    pub shrinkage: Vec<f64>,
    /// Profile REML criterion at the optimum.
    pub criterion: f64,
}

impl BhfFit {
    pub fn to_params(&self, m: usize, tau: f64) -> Vec<ParamVector> {
        (0..m)
            .map(|_| ParamVector {
                beta0: self.beta0,
                beta: self.beta.clone(),
                sigma2_gamma: self.sigma2_gamma,
                sigma2_eps: self.sigma2_eps,
                tau,
            })
            .collect()
    }
}

struct GlsPieces {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    logdet: f64,
}

/// Accumulates `X' S^-1 X`, `X' S^-1 y`, `y' S^-1 y` and `log |S|` for
/// `S = blockdiag(K_i + lambda h_i 1 1')`.
fn gls_pieces(sample: &Sample, lambda: f64) -> GlsPieces {
    let q = sample.p() + 1;
    let mut xtx = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    let mut yty = 0.0;
    let mut logdet = 0.0;
    let mut sx = vec![0.0; q];
    let mut row = vec![0.0; q];
    for a in sample.areas() {
        let s_inv = a.inv_k_sum();
        let c = lambda * a.h / (1.0 + lambda * a.h * s_inv);
        sx.iter_mut().for_each(|v| *v = 0.0);
        let mut sy = 0.0;
        for j in 0..a.n() {
            let w = 1.0 / a.k[j];
            row[0] = 1.0;
            row[1..].copy_from_slice(a.x_row(j));
            for r in 0..q {
                sx[r] += w * row[r];
                xty[r] += w * row[r] * a.y[j];
                for cc in 0..q {
                    xtx[(r, cc)] += w * row[r] * row[cc];
                }
            }
            sy += w * a.y[j];
            yty += w * a.y[j] * a.y[j];
            logdet += ln(a.k[j]);
        }
        for r in 0..q {
            xty[r] -= c * sx[r] * sy;
            for cc in 0..q {
                xtx[(r, cc)] -= c * sx[r] * sx[cc];
            }
        }
        yty -= c * sy * sy;
        logdet += ln(1.0 + lambda * a.h * s_inv);
    }
    GlsPieces { xtx, xty, yty, logdet }
}

struct ProfilePoint {
    criterion: f64,
    coef: DVector<f64>,
    sigma2: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Criterion {
    Reml,
    Ml,
}

fn profile(sample: &Sample, lambda: f64, kind: Criterion) -> Result<ProfilePoint> {
    let n = sample.n_total();
    let q = sample.p() + 1;
    if n <= q {
        return Err(Error::Singular("profile likelihood needs more units than coefficients"));
    }
    let g = gls_pieces(sample, lambda);
    let coef = linalg::solve(g.xtx.clone(), g.xty.clone(), "profile generalized least squares")?;
    let quad = (g.yty - coef.dot(&g.xty)).max(0.0);
    let (criterion, sigma2) = match kind {
        Criterion::Reml => {
            let df = (n - q) as f64;
            let sigma2 = quad / df;
            let logdet_xtx = g
                .xtx
                .clone()
                .cholesky()
                .map(|ch| 2.0 * ch.l().diagonal().iter().map(|d| ln(*d)).sum::<f64>())
                .unwrap_or(f64::NEG_INFINITY);
            (-0.5 * (df * ln(sigma2.max(1e-300)) + g.logdet + logdet_xtx), sigma2)
        }
        Criterion::Ml => {
            let sigma2 = quad / n as f64;
            (-0.5 * (n as f64 * ln(sigma2.max(1e-300)) + g.logdet), sigma2)
        }
    };
    Ok(ProfilePoint { criterion, coef, sigma2 })
}

/// Profile REML criterion (additive constant dropped) at variance ratio
/// `lambda = sigma2_gamma / sigma2_eps`.
pub fn reml_criterion(sample: &Sample, lambda: f64) -> Result<f64> {
    profile(sample, lambda, Criterion::Reml).map(|p| p.criterion)
}

/// Profile log-likelihood of the homogeneous model (constant dropped).
pub fn ml_criterion(sample: &Sample, lambda: f64) -> Result<f64> {
    profile(sample, lambda, Criterion::Ml).map(|p| p.criterion)
}

const MAX_LAMBDA: f64 = 1e6;

fn fit_homogeneous(sample: &Sample, kind: Criterion) -> Result<BhfFit> {
    // Search on rho = lambda / (1 + lambda); a coarse scan guards against
    // multiple local maxima before golden-section refinement.
    let to_lambda = |rho: f64| rho / (1.0 - rho);
    let crit = |lambda: f64| profile(sample, lambda, kind).map(|p| p.criterion);
    let rho_max = MAX_LAMBDA / (1.0 + MAX_LAMBDA);
    let scan = 40;
    let mut best = (0.0, crit(0.0)?);
    for k in 1..=scan {
        let rho = rho_max * k as f64 / scan as f64;
        let v = crit(to_lambda(rho))?;
        if v > best.1 {
            best = (rho, v);
        }
    }
    let step = rho_max / scan as f64;
    let lo = (best.0 - step).max(0.0);
    let hi = (best.0 + step).min(rho_max);
    let (rho, top) = golden_max(|rho| crit(to_lambda(rho)).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-12);
    // A maximum indistinguishable from the boundary value is the boundary.
    let at_zero = crit(0.0)?;
    let lambda = if lo == 0.0 && at_zero >= top - 1e-12 * (1.0 + abs(top)) { 0.0 } else { to_lambda(rho) };
    let point = profile(sample, lambda, kind)?;
    let sigma2_eps = point.sigma2;
    let sigma2_gamma = lambda * sigma2_eps;
    let shrinkage = sample
        .areas()
        .iter()
        .map(|a| crate::predict::shrinkage(sigma2_eps, a.n(), sigma2_gamma))
        .collect();
    Ok(BhfFit {
        beta0: point.coef[0],
        beta: point.coef.as_slice()[1..].to_vec(),
        sigma2_gamma,
        sigma2_eps,
        shrinkage,
        criterion: point.criterion,
    })
}

/// REML fit of the homogeneous nested error model by one-dimensional search
/// over the variance ratio on `[0, 1e6]`.
pub fn fit_bhf_reml(sample: &Sample) -> Result<BhfFit> {
    fit_homogeneous(sample, Criterion::Reml)
}

/// Maximum likelihood counterpart of [`fit_bhf_reml`].
pub fn fit_bhf_ml(sample: &Sample) -> Result<BhfFit> {
    fit_homogeneous(sample, Criterion::Ml)
}

/// Maximum likelihood fit by cyclic coordinate ascent: intercept and area
/// slopes by their closed-form conditional maximizers, each sampling
/// variance and the area variance by one-dimensional maximization. The
/// log-likelihood never decreases between iterations.
pub fn fit_mle(sample: &Sample, ctl: &FitControl) -> Result<FitResult> {
    require_unit_multipliers(sample)?;
    ctl.check()?;
    if let Some(a) = sample.areas().iter().find(|a| a.n() < 2) {
        return Err(Error::Unsupported(format!("area {} has fewer than two units", a.id)));
    }
    let m = sample.m();
    let p = sample.p();
    let init = fit_bhf_reml(sample)?;
    let bracket_max = ctl.bracket_max_for(sample);
    let floor = ctl.var_floor;

    let mut beta0 = init.beta0;
    let mut betas: Vec<Vec<f64>> = vec![init.beta.clone(); m];
    let mut s: Vec<f64> = vec![init.sigma2_eps.max(floor); m];
    let mut g = init.sigma2_gamma.max(0.0);

    let total = |beta0: f64, betas: &[Vec<f64>], s: &[f64], g: f64| -> f64 {
        sample
            .areas()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (mean, within) = residual_moments(a, beta0, &betas[i]);
                area_loglik(a.n(), within, mean, s[i], g)
            })
            .sum()
    };

    let mut ll = total(beta0, &betas, &s, g);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut last_delta = f64::INFINITY;

    for _ in 0..ctl.max_iter {
        iterations += 1;
        let before = ll;

        // Intercept given slopes and variances.
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, a) in sample.areas().iter().enumerate() {
            let n = a.n() as f64;
            let b = crate::predict::shrinkage(s[i], a.n(), g);
            let w = n * b / s[i];
            num += w * (a.y_mean() - dot(&a.x_mean(), &betas[i]));
            den += w;
        }
        if den > 0.0 {
            beta0 = num / den;
        }

        // Area slopes given intercept and variances.
        for (i, a) in sample.areas().iter().enumerate() {
            if p == 0 {
                break;
            }
            let n = a.n() as f64;
            let one_minus_b = 1.0 - crate::predict::shrinkage(s[i], a.n(), g);
            let xbar = a.x_mean();
            let ybar = a.y_mean();
            let mut lhs = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            for j in 0..a.n() {
                let x = a.x_row(j);
                for r in 0..p {
                    rhs[r] += x[r] * (a.y[j] - beta0);
                    for c in 0..p {
                        lhs[(r, c)] += x[r] * x[c];
                    }
                }
            }
            for r in 0..p {
                rhs[r] -= n * one_minus_b * xbar[r] * (ybar - beta0);
                for c in 0..p {
                    lhs[(r, c)] -= n * one_minus_b * xbar[r] * xbar[c];
                }
            }
            // A singular area keeps its previous slopes.
            if let Ok(sol) = linalg::solve(lhs, rhs, "area slope update") {
                betas[i] = sol.as_slice().to_vec();
            }
        }

        // Sampling variances: the closed-form residual update is one
        // candidate; a bracketed search is the other; the better one wins.
        for (i, a) in sample.areas().iter().enumerate() {
            let (mean, within) = residual_moments(a, beta0, &betas[i]);
            let n = a.n();
            let f = |v: f64| area_loglik(n, within, mean, v, g);
            let nf = n as f64;
            let one_minus_b = 1.0 - crate::predict::shrinkage(s[i], n, g);
            let ss = within + nf * mean * mean;
            let closed = ((ss - nf * one_minus_b * mean * mean) / nf).clamp(floor, bracket_max);
            let (lu, _) = golden_max(|u| f(exp(u)), ln(floor), ln(bracket_max), 1e-10);
            let searched = exp(lu).clamp(floor, bracket_max);
            let mut best = (s[i], f(s[i]));
            for cand in [closed, searched] {
                let v = f(cand);
                if v > best.1 {
                    best = (cand, v);
                }
            }
            s[i] = best.0;
        }

        // Area variance by line search.
        let area_terms: Vec<(usize, f64, f64)> = sample
            .areas()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (mean, within) = residual_moments(a, beta0, &betas[i]);
                (a.n(), within, mean)
            })
            .collect();
        let lg = |g: f64| -> f64 {
            area_terms
                .iter()
                .zip(&s)
                .map(|(&(n, w, mean), &si)| area_loglik(n, w, mean, si, g))
                .sum()
        };
        let current = lg(g);
        let mut best = (g, current);
        let zero = lg(0.0);
        if zero > best.1 {
            best = (0.0, zero);
        }
        let (lu, _) = golden_max(|u| lg(exp(u)), ln(floor), ln(bracket_max), 1e-10);
        let cand = exp(lu);
        let v = lg(cand);
        if v > best.1 {
            best = (cand, v);
        }
        g = best.0;

        ll = total(beta0, &betas, &s, g);
        trace.push(ll);
        last_delta = abs(ll - before);
        if last_delta < ctl.tol * (1.0 + abs(before)) {
            converged = true;
            break;
        }
    }

    let params = betas
        .into_iter()
        .zip(&s)
        .map(|(beta, &se)| ParamVector { beta0, beta, sigma2_gamma: g, sigma2_eps: se, tau: 0.5 })
        .collect();
    Ok(FitResult {
        params,
        method: FitMethod::Mle,
        iterations,
        converged,
        max_param_delta: last_delta,
        trace,
        intercepts: vec![beta0; m],
        bracket_warnings: 0,
    })
}
