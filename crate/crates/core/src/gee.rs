//! Robust pooled estimating equations for the area-specific model.
//!
//! Every area `i` gets its own coefficients `(alpha_0i, beta_i)` and sampling
//! variance from equations pooled over the data of all areas, weighted by the
//! working covariance `V_{l;i} = h_l sigma2_gamma 1 1' + sigma2_eps_i K_l` and
//! driven by the area's tilted influence function. The shared intercept is
//! the mean of the `alpha_0i` and the area variance solves one global
//! equation with the untilted influence function.
//!
//! All `V_{l;i}` products use the rank-one structure, so one outer iteration
//! costs `O(m n)` per distinct tilt rather than `O(m n^3)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::influence::{PsiBase, PsiSpec};
use crate::linalg;
use crate::math::{abs, sqrt};
use crate::mle::fit_bhf_reml;
use crate::model::{AreaSample, FitMethod, FitResult, ParamVector, Sample};
use crate::roots::positive_root;

/// Iteration and bracketing controls shared by the fitters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitControl {
    /// Convergence threshold on the largest relative parameter change,
    /// `|new - old| / (1 + |old|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Lower clamp of every variance solve.
    pub var_floor: f64,
    /// Upper end of the variance brackets; `None` means `1e6` times the
    /// sample variance of `y`.
    pub bracket_max: Option<f64>,
}

impl Default for FitControl {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200, var_floor: 1e-8, bracket_max: None }
    }
}

impl FitControl {
    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.var_floor > 0.0) {
            return Err(Error::Config(format!(
                "need tol > 0, max_iter >= 1 and var_floor > 0 (got {}, {}, {})",
                self.tol, self.max_iter, self.var_floor
            )));
        }
        if let Some(b) = self.bracket_max {
            if !(b > self.var_floor) {
                return Err(Error::Config(format!("bracket_max {b} must exceed var_floor {}", self.var_floor)));
            }
        }
        Ok(())
    }

    pub fn bracket_max_for(&self, sample: &Sample) -> f64 {
        self.bracket_max.unwrap_or_else(|| {
            let v = 1e6 * sample.response_variance();
            if v.is_finite() && v > 1e3 * self.var_floor {
                v
            } else {
                1e6
            }
        })
    }
}

/// Influence function family and iteration controls of a GEE fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeeConfig {
    pub psi: PsiBase,
    pub control: FitControl,
}

impl Default for GeeConfig {
    fn default() -> Self {
        Self { psi: PsiBase::Huber { c: crate::influence::HUBER_C }, control: FitControl::default() }
    }
}

/// `V = h sigma2_gamma 1 1' + sigma2_eps K` for one area block, stored by
/// its scalars. `V^-1 a = K^-1 a / s - c (1' K^-1 a) K^-1 1` with
/// `c = g h / (s (s + g h S))`, `S = sum 1/k`.
#[derive(Debug, Clone, Copy)]
pub struct WorkingCovariance<'a> {
    pub h: f64,
    pub sigma2_gamma: f64,
    pub sigma2_eps: f64,
    pub k: &'a [f64],
}

impl<'a> WorkingCovariance<'a> {
    pub fn new(area: &'a AreaSample, sigma2_gamma: f64, sigma2_eps: f64) -> Self {
        Self { h: area.h, sigma2_gamma, sigma2_eps, k: &area.k }
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    /// Diagonal entry, which is also the entry of `U`.
    pub fn diag(&self, j: usize) -> f64 {
        self.h * self.sigma2_gamma + self.sigma2_eps * self.k[j]
    }

    fn inv_k_sum(&self) -> f64 {
        self.k.iter().map(|k| 1.0 / k).sum()
    }

    /// Rank-one coefficient of the inverse.
    pub fn rank_one_coef(&self) -> f64 {
        rank_one_coef(self.h, self.sigma2_gamma, self.sigma2_eps, self.inv_k_sum())
    }

    /// `V^-1 a`.
    pub fn solve(&self, a: &[f64]) -> Vec<f64> {
        let s = self.sigma2_eps;
        let c = self.rank_one_coef();
        let t: f64 = a.iter().zip(self.k).map(|(v, k)| v / k).sum();
        a.iter().zip(self.k).map(|(v, k)| (v / s - c * t) / k).collect()
    }

    /// `tr(V^-1 K)`.
    pub fn trace_inv_k(&self) -> f64 {
        self.n() as f64 / self.sigma2_eps - self.rank_one_coef() * self.inv_k_sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |r, c| {
            let base = self.h * self.sigma2_gamma;
            if r == c {
                base + self.sigma2_eps * self.k[r]
            } else {
                base
            }
        })
    }
}

#[inline]
fn rank_one_coef(h: f64, g: f64, s: f64, inv_k_sum: f64) -> f64 {
    let gh = g * h;
    gh / (s * (s + gh * inv_k_sum))
}

/// The areas whose data enter the pooled equations; one may be left out.
#[derive(Clone, Copy)]
struct Pool<'a> {
    sample: &'a Sample,
    excluded: Option<usize>,
}

impl<'a> Pool<'a> {
    fn areas(&self) -> impl Iterator<Item = (usize, &'a AreaSample)> + 'a {
        let ex = self.excluded;
        self.sample.areas().iter().enumerate().filter(move |(i, _)| Some(*i) != ex)
    }

    fn n_total(&self) -> usize {
        self.areas().map(|(_, a)| a.n()).sum()
    }
}

#[inline]
fn fitted(area: &AreaSample, j: usize, coef: &[f64]) -> f64 {
    coef[0] + area.x_row(j).iter().zip(&coef[1..]).map(|(x, b)| x * b).sum::<f64>()
}

/// Result of the coefficient step for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSolution {
    /// `(alpha_0i, beta_i')`.
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of a scalar variance solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSolution {
    pub value: f64,
    /// Set when the equation kept one sign over the whole bracket and the
    /// value was clamped to an end.
    pub clamped: bool,
}

const INNER_MAX_ITER: usize = 100;
const ROOT_RTOL: f64 = 1e-12;

/// Pooled coefficient equation for one area's tilt and sampling variance,
/// `sum_l X_l' V_l^-1 U_l^{1/2} psi(U_l^{-1/2} (y_l - X_l coef))`.
pub fn beta_equation(sample: &Sample, psi: &PsiSpec, sigma2_eps: f64, sigma2_gamma: f64, coef: &[f64]) -> Vec<f64> {
    beta_equation_in(Pool { sample, excluded: None }, psi, sigma2_eps, sigma2_gamma, coef)
}

fn beta_equation_in(pool: Pool<'_>, psi: &PsiSpec, s: f64, g: f64, coef: &[f64]) -> Vec<f64> {
    let q = pool.sample.p() + 1;
    let mut out = vec![0.0; q];
    let mut z = Vec::new();
    for (_, a) in pool.areas() {
        let wc = WorkingCovariance::new(a, g, s);
        let qv: Vec<f64> = (0..a.n())
            .map(|j| {
                let su = sqrt(wc.diag(j));
                su * psi.psi((a.y[j] - fitted(a, j, coef)) / su)
            })
            .collect();
        z.clear();
        z.extend(wc.solve(&qv));
        for j in 0..a.n() {
            out[0] += z[j];
            for (o, x) in out[1..].iter_mut().zip(a.x_row(j)) {
                *o += x * z[j];
            }
        }
    }
    out
}

/// Solves the coefficient equation of one area by iteratively reweighted
/// least squares with weights `psi(r) / r`, starting from `start`.
pub fn solve_beta(
    sample: &Sample,
    psi: &PsiSpec,
    sigma2_eps: f64,
    sigma2_gamma: f64,
    start: &[f64],
    ctl: &FitControl,
) -> Result<BetaSolution> {
    solve_beta_in(Pool { sample, excluded: None }, psi, sigma2_eps, sigma2_gamma, start, ctl.tol)
}

fn solve_beta_in(pool: Pool<'_>, psi: &PsiSpec, s: f64, g: f64, start: &[f64], tol: f64) -> Result<BetaSolution> {
    let q = pool.sample.p() + 1;
    let mut coef = start.to_vec();
    let mut lhs = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    let mut row = vec![0.0; q];
    let mut sx = vec![0.0; q];
    let mut sdx = vec![0.0; q];
    for it in 1..=INNER_MAX_ITER {
        lhs.fill(0.0);
        rhs.fill(0.0);
        for (_, a) in pool.areas() {
            let wc = WorkingCovariance::new(a, g, s);
            let c = wc.rank_one_coef();
            sx.iter_mut().for_each(|v| *v = 0.0);
            sdx.iter_mut().for_each(|v| *v = 0.0);
            let mut sdy = 0.0;
            for j in 0..a.n() {
                row[0] = 1.0;
                row[1..].copy_from_slice(a.x_row(j));
                let su = sqrt(wc.diag(j));
                let e = a.y[j] - fitted(a, j, &coef);
                let d = psi.weight(e / su);
                let kj = a.k[j];
                let w = d / (s * kj);
                for r in 0..q {
                    sx[r] += row[r] / kj;
                    sdx[r] += d * row[r] / kj;
                    rhs[r] += w * row[r] * a.y[j];
                    for cc in 0..q {
                        lhs[(r, cc)] += w * row[r] * row[cc];
                    }
                }
                sdy += d * a.y[j] / kj;
            }
            for r in 0..q {
                rhs[r] -= c * sx[r] * sdy;
                for cc in 0..q {
                    lhs[(r, cc)] -= c * sx[r] * sdx[cc];
                }
            }
        }
        let next = linalg::solve(lhs.clone(), rhs.clone(), "pooled coefficient equations")?;
        let change = next.iter().zip(&coef).map(|(a, b)| abs(a - b) / (1.0 + abs(*b))).fold(0.0, f64::max);
        coef.copy_from_slice(next.as_slice());
        if change < tol {
            return Ok(BetaSolution { coef, iterations: it, converged: true });
        }
    }
    Ok(BetaSolution { coef, iterations: INNER_MAX_ITER, converged: false })
}

/// Sampling-variance equation of one area at trial value `s`:
/// `sum_l [z' K_l z - w tr(V_l^-1 K_l)]` with `z = V_l^-1 U_l^{1/2} psi(r)`,
/// residuals from the area's own coefficients and `w = E[psi^2]`.
pub fn sigma_eps_equation(sample: &Sample, psi: &PsiSpec, coef: &[f64], sigma2_gamma: f64, s: f64) -> f64 {
    let pool = Pool { sample, excluded: None };
    let resid = pool_residuals(pool, coef);
    sigma_eps_eq_in(pool, &resid, psi, psi.expected_square(), sigma2_gamma, s)
}

/// Residuals `y - X coef` of every area in the pool, concatenated.
fn pool_residuals(pool: Pool<'_>, coef: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pool.n_total());
    for (_, a) in pool.areas() {
        out.extend((0..a.n()).map(|j| a.y[j] - fitted(a, j, coef)));
    }
    out
}

fn sigma_eps_eq_in(pool: Pool<'_>, resid: &[f64], psi: &PsiSpec, w: f64, g: f64, s: f64) -> f64 {
    let mut total = 0.0;
    let mut off = 0;
    for (_, a) in pool.areas() {
        let n = a.n();
        let gh = g * a.h;
        let mut big_s = 0.0;
        let mut sum_sq = 0.0;
        let mut t = 0.0;
        for j in 0..n {
            let kj = a.k[j];
            let su = sqrt(gh + s * kj);
            let qj = su * psi.psi(resid[off + j] / su);
            big_s += 1.0 / kj;
            sum_sq += qj * qj / kj;
            t += qj / kj;
        }
        off += n;
        let c = rank_one_coef(a.h, g, s, big_s);
        // sum_j (q_j / s - c t)^2 / k_j expanded.
        let quad = sum_sq / (s * s) - 2.0 * c * t * t / s + c * c * t * t * big_s;
        let trace = n as f64 / s - c * big_s;
        total += quad - w * trace;
    }
    total
}

/// Solves the sampling-variance equation of one area on
/// `[var_floor, bracket_max]`.
pub fn solve_sigma_eps(
    sample: &Sample,
    psi: &PsiSpec,
    coef: &[f64],
    sigma2_gamma: f64,
    hint: Option<f64>,
    ctl: &FitControl,
) -> VarianceSolution {
    let pool = Pool { sample, excluded: None };
    let resid = pool_residuals(pool, coef);
    let w = psi.expected_square();
    solve_variance(
        |s| sigma_eps_eq_in(pool, &resid, psi, w, sigma2_gamma, s),
        ctl.var_floor,
        ctl.bracket_max_for(sample),
        hint,
    )
}

/// Area-variance equation at trial value `g`:
/// `sum_i h_i [(1' G_i^-1 A_i^{1/2} psi)^2 - w* 1' G_i^-1 1]` with residuals
/// `y - beta0 - X beta_i`, `A = diag(G)`, untilted `psi` and `w* = E[psi^2]`.
pub fn sigma_gamma_equation(
    sample: &Sample,
    psi: PsiBase,
    beta0: f64,
    betas: &[Vec<f64>],
    sigma2_eps: &[f64],
    g: f64,
) -> f64 {
    let pool = Pool { sample, excluded: None };
    let resid = own_residuals(pool, beta0, betas);
    sigma_gamma_eq_in(pool, &resid, PsiSpec::untilted(psi), psi.expected_square(), sigma2_eps, g)
}

/// Residuals of each pooled area from its own line with the shared intercept.
fn own_residuals(pool: Pool<'_>, beta0: f64, betas: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pool.n_total());
    for (i, a) in pool.areas() {
        out.extend((0..a.n()).map(|j| {
            a.y[j] - beta0 - a.x_row(j).iter().zip(&betas[i]).map(|(x, b)| x * b).sum::<f64>()
        }));
    }
    out
}

fn sigma_gamma_eq_in(pool: Pool<'_>, resid: &[f64], psi: PsiSpec, w: f64, sigma2_eps: &[f64], g: f64) -> f64 {
    let mut total = 0.0;
    let mut off = 0;
    for (i, a) in pool.areas() {
        let s = sigma2_eps[i];
        let gh = g * a.h;
        let mut big_s = 0.0;
        let mut t = 0.0;
        for j in 0..a.n() {
            let kj = a.k[j];
            let sa = sqrt(gh + s * kj);
            t += sa * psi.psi(resid[off + j] / sa) / kj;
            big_s += 1.0 / kj;
        }
        off += a.n();
        let d = s + gh * big_s;
        total += a.h * (t * t / (d * d) - w * big_s / d);
    }
    total
}

/// Solves the area-variance equation on `[var_floor, bracket_max]`.
pub fn solve_sigma_gamma(
    sample: &Sample,
    psi: PsiBase,
    beta0: f64,
    betas: &[Vec<f64>],
    sigma2_eps: &[f64],
    hint: Option<f64>,
    ctl: &FitControl,
) -> VarianceSolution {
    let pool = Pool { sample, excluded: None };
    solve_sigma_gamma_in(pool, psi, beta0, betas, sigma2_eps, hint, ctl.var_floor, ctl.bracket_max_for(sample))
}

#[allow(clippy::too_many_arguments)]
fn solve_sigma_gamma_in(
    pool: Pool<'_>,
    psi: PsiBase,
    beta0: f64,
    betas: &[Vec<f64>],
    sigma2_eps: &[f64],
    hint: Option<f64>,
    floor: f64,
    hi: f64,
) -> VarianceSolution {
    let resid = own_residuals(pool, beta0, betas);
    let spec = PsiSpec::untilted(psi);
    let w = psi.expected_square();
    solve_variance(|g| sigma_gamma_eq_in(pool, &resid, spec, w, sigma2_eps, g), floor, hi, hint)
}

/// Root of a variance equation that is positive below its root and negative
/// above it. Without a sign change the value is clamped to the end the sign
/// points to: the floor when the equation is negative throughout.
fn solve_variance<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, hint: Option<f64>) -> VarianceSolution {
    let r = positive_root(&mut f, lo, hi, hint, ROOT_RTOL);
    if r.bracketed {
        return VarianceSolution { value: r.root, clamped: false };
    }
    let value = if f(lo) < 0.0 { lo } else { hi };
    VarianceSolution { value, clamped: true }
}

/// Starting values: the REML fit of the homogeneous model, copied to every
/// area, with the given tilts (0.5 when `taus` is `None`).
pub fn initial_values(sample: &Sample, taus: Option<&[f64]>) -> Result<Vec<ParamVector>> {
    let bhf = fit_bhf_reml(sample)?;
    let m = sample.m();
    Ok((0..m)
        .map(|i| ParamVector {
            beta0: bhf.beta0,
            beta: bhf.beta.clone(),
            sigma2_gamma: bhf.sigma2_gamma,
            sigma2_eps: bhf.sigma2_eps,
            tau: taus.map_or(0.5, |t| t[i]),
        })
        .collect())
}

/// Fits the model by iterating the coefficient, sampling-variance and
/// area-variance steps until the largest relative parameter change falls
/// below `tol`. Non-convergence is reported in the result, not as an error.
pub fn fit(sample: &Sample, cfg: &GeeConfig, taus: &[f64]) -> Result<FitResult> {
    fit_with(sample, cfg, taus, None, None)
}

/// Like [`fit`] but starting from `start` instead of the REML fit.
pub fn fit_from(sample: &Sample, cfg: &GeeConfig, start: &FitResult) -> Result<FitResult> {
    fit_with(sample, cfg, &start.taus(), Some(start), None)
}

/// Fit with the data of area `excluded` removed from every equation. All `m`
/// areas still receive parameters: the deleted area's coefficients and
/// sampling variance come from its pooled equations over the other areas'
/// data, and the shared intercept and area variance use the remaining areas.
pub fn fit_without(sample: &Sample, cfg: &GeeConfig, taus: &[f64], excluded: usize) -> Result<FitResult> {
    if excluded >= sample.m() {
        return Err(Error::Config(format!("area index {excluded} out of range")));
    }
    if sample.m() < 3 {
        return Err(Error::Unsupported("leave-one-area-out fits need at least three areas".into()));
    }
    fit_with(sample, cfg, taus, None, Some(excluded))
}

/// Leave-one-area-out version of [`fit_from`].
pub fn fit_without_from(sample: &Sample, cfg: &GeeConfig, start: &FitResult, excluded: usize) -> Result<FitResult> {
    if excluded >= sample.m() || sample.m() < 3 {
        return Err(Error::Config(format!("cannot leave out area {excluded} of {}", sample.m())));
    }
    fit_with(sample, cfg, &start.taus(), Some(start), Some(excluded))
}

fn reduced_sample(sample: &Sample, excluded: usize) -> Result<Sample> {
    let areas = sample
        .areas()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != excluded)
        .map(|(_, a)| a.clone())
        .collect();
    Sample::from_areas(areas, sample.p())
}

#[inline]
fn rel_change(new: f64, old: f64) -> f64 {
    abs(new - old) / (1.0 + abs(old))
}

fn fit_with(
    sample: &Sample,
    cfg: &GeeConfig,
    taus: &[f64],
    start: Option<&FitResult>,
    excluded: Option<usize>,
) -> Result<FitResult> {
    let ctl = cfg.control;
    ctl.check()?;
    let m = sample.m();
    if taus.len() != m {
        return Err(Error::Config(format!("{} tilts for {m} areas", taus.len())));
    }
    let specs: Vec<PsiSpec> = taus.iter().map(|&t| PsiSpec::new(cfg.psi, t)).collect::<Result<_>>()?;
    let pool = Pool { sample, excluded };
    let floor = ctl.var_floor;
    let hi = ctl.bracket_max_for(sample);

    let (mut coefs, mut s, mut g) = match start {
        Some(st) => {
            if st.params.len() != m {
                return Err(Error::Config("start has the wrong number of areas".into()));
            }
            let coefs: Vec<Vec<f64>> = st
                .params
                .iter()
                .zip(&st.intercepts)
                .map(|(p, a0)| {
                    let mut c = vec![*a0];
                    c.extend_from_slice(&p.beta);
                    c
                })
                .collect();
            let s: Vec<f64> = st.params.iter().map(|p| p.sigma2_eps.max(floor)).collect();
            (coefs, s, st.sigma2_gamma().max(floor))
        }
        None => {
            let init = match excluded {
                Some(l) => initial_values(&reduced_sample(sample, l)?, None)?,
                None => initial_values(sample, None)?,
            };
            let p0 = &init[0];
            let mut c = vec![p0.beta0];
            c.extend_from_slice(&p0.beta);
            (vec![c; m], vec![p0.sigma2_eps.max(floor); m], p0.sigma2_gamma.max(floor))
        }
    };

    // Areas sharing a tilt and a current state follow identical trajectories,
    // so each distinct (tilt, state) is solved once per iteration.
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    let mut warnings = 0;
    let mut beta0 = 0.0;
    for _ in 0..ctl.max_iter {
        iterations += 1;
        let mut new_coefs: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut new_s: Vec<f64> = Vec::with_capacity(m);
        let mut step_warnings = 0;
        for i in 0..m {
            if let Some(j) = (0..i).find(|&j| taus[j] == taus[i] && s[j] == s[i] && coefs[j] == coefs[i]) {
                new_coefs.push(new_coefs[j].clone());
                new_s.push(new_s[j]);
                continue;
            }
            let b = solve_beta_in(pool, &specs[i], s[i], g, &coefs[i], ctl.tol * 1e-2)?;
            let resid = pool_residuals(pool, &b.coef);
            let w = specs[i].expected_square();
            let v = solve_variance(|v| sigma_eps_eq_in(pool, &resid, &specs[i], w, g, v), floor, hi, Some(s[i]));
            if v.clamped {
                step_warnings += 1;
            }
            new_coefs.push(b.coef);
            new_s.push(v.value);
        }

        let included: Vec<usize> = pool.areas().map(|(i, _)| i).collect();
        let new_beta0 = included.iter().map(|&i| new_coefs[i][0]).sum::<f64>() / included.len() as f64;
        let betas: Vec<Vec<f64>> = new_coefs.iter().map(|c| c[1..].to_vec()).collect();
        let gv = solve_sigma_gamma_in(pool, cfg.psi, new_beta0, &betas, &new_s, Some(g), floor, hi);
        if gv.clamped {
            step_warnings += 1;
        }

        delta = rel_change(gv.value, g);
        if iterations > 1 {
            delta = delta.max(rel_change(new_beta0, beta0));
        }
        for i in 0..m {
            delta = delta.max(rel_change(new_s[i], s[i]));
            for (a, b) in new_coefs[i].iter().zip(&coefs[i]) {
                delta = delta.max(rel_change(*a, *b));
            }
        }
        coefs = new_coefs;
        s = new_s;
        g = gv.value;
        beta0 = new_beta0;
        warnings = step_warnings;
        trace.push(delta);
        if delta < ctl.tol {
            converged = true;
            break;
        }
    }

    let params = coefs
        .iter()
        .zip(&s)
        .zip(taus)
        .map(|((c, &se), &tau)| ParamVector { beta0, beta: c[1..].to_vec(), sigma2_gamma: g, sigma2_eps: se, tau })
        .collect();
    Ok(FitResult {
        params,
        method: FitMethod::Gee,
        iterations,
        converged,
        max_param_delta: delta,
        trace,
        intercepts: coefs.iter().map(|c| c[0]).collect(),
        bracket_warnings: warnings,
    })
}

/// Largest scaled residual of the three estimating equations at a GEE fit.
/// Variance equations whose solution sits on a bracket end are skipped.
/// Coefficient equations are scaled by `sqrt(sigma2_eps_i) / n`, the variance
/// equations by `sigma2 / n`.
pub fn equation_residual(sample: &Sample, psi: PsiBase, fit: &FitResult, ctl: &FitControl) -> f64 {
    let n = sample.n_total() as f64;
    let g = fit.sigma2_gamma();
    let hi = ctl.bracket_max_for(sample);
    let on_end = |v: f64| v <= ctl.var_floor * (1.0 + 1e-9) || v >= hi * (1.0 - 1e-9);
    let mut worst = 0.0f64;
    for (i, p) in fit.params.iter().enumerate() {
        let spec = PsiSpec { base: psi, tau: p.tau };
        let mut coef = vec![fit.intercepts[i]];
        coef.extend_from_slice(&p.beta);
        for v in beta_equation(sample, &spec, p.sigma2_eps, g, &coef) {
            worst = worst.max(abs(v) * sqrt(p.sigma2_eps) / n);
        }
        if !on_end(p.sigma2_eps) {
            let v = sigma_eps_equation(sample, &spec, &coef, g, p.sigma2_eps);
            worst = worst.max(abs(v) * p.sigma2_eps / n);
        }
    }
    if !on_end(g) {
        let betas: Vec<Vec<f64>> = fit.params.iter().map(|p| p.beta.clone()).collect();
        let s: Vec<f64> = fit.params.iter().map(|p| p.sigma2_eps).collect();
        let v = sigma_gamma_equation(sample, psi, fit.beta0(), &betas, &s, g);
        let scale = s.iter().sum::<f64>() / s.len() as f64;
        worst = worst.max(abs(v) * scale / n);
    }
    worst
}
