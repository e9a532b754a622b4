//! Bracketed scalar root finding and one-dimensional maximization.

use crate::math::{abs, exp, ln};

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootResult {
    pub root: f64,
    /// Function value at `root`.
    pub value: f64,
    pub evaluations: usize,
    /// False when the bracket held no sign change and `root` is the endpoint
    /// with the smaller absolute function value.
    pub bracketed: bool,
}

/// Brent's method (bisection safeguarding secant and inverse quadratic
/// interpolation steps) on `[a, b]`.
///
/// If `f(a)` and `f(b)` share a sign the endpoint with the smaller `|f|` is
/// returned with `bracketed = false`.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, max_eval: usize) -> RootResult {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    let mut evals = 2;
    if fa == 0.0 {
        return RootResult { root: a, value: fa, evaluations: evals, bracketed: true };
    }
    if fb == 0.0 {
        return RootResult { root: b, value: fb, evaluations: evals, bracketed: true };
    }
    if (fa > 0.0) == (fb > 0.0) || fa.is_nan() || fb.is_nan() {
        let (root, value) = if abs(fa) <= abs(fb) || fb.is_nan() { (a, fa) } else { (b, fb) };
        return RootResult { root, value, evaluations: evals, bracketed: false };
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    while evals < max_eval {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if abs(fc) < abs(fb) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * abs(b) + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if abs(xm) <= tol1 || fb == 0.0 {
            break;
        }
        if abs(e) >= tol1 && abs(fa) > abs(fb) {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = abs(p);
            let min1 = 3.0 * xm * q - abs(tol1 * q);
            let min2 = abs(e * q);
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if abs(d) > tol1 { d } else if xm > 0.0 { tol1 } else { -tol1 };
        fb = f(b);
        evals += 1;
    }
    RootResult { root: b, value: fb, evaluations: evals, bracketed: true }
}

/// Root of `f` on the positive interval `[lo, hi]`, searched in `ln` scale.
///
/// When `hint` is given, a narrow bracket `[hint/4, hint*4]` (clipped to the
/// full interval) is tried first and the full interval only if it holds no
/// sign change. Relative accuracy of the returned root is about `rtol`.
pub fn positive_root<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    hint: Option<f64>,
    rtol: f64,
) -> RootResult {
    debug_assert!(lo > 0.0 && hi > lo);
    let (llo, lhi) = (ln(lo), ln(hi));
    let mut g = |u: f64| f(exp(u).clamp(lo, hi));
    let max_eval = 200;
    let mut spent = 0;
    if let Some(h) = hint.filter(|h| h.is_finite() && *h > 0.0) {
        let a = (ln(h) - 2.0 * core::f64::consts::LN_2).max(llo);
        let b = (ln(h) + 2.0 * core::f64::consts::LN_2).min(lhi);
        if b > a {
            let r = brent(&mut g, a, b, rtol, max_eval);
            spent = r.evaluations;
            if r.bracketed {
                return RootResult { root: exp(r.root).clamp(lo, hi), ..r };
            }
        }
    }
    let r = brent(&mut g, llo, lhi, rtol, max_eval);
    RootResult { root: exp(r.root).clamp(lo, hi), evaluations: r.evaluations + spent, ..r }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
/// Returns `(argmax, max)`; the endpoints are also compared so a monotone `f`
/// yields the better endpoint.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let fa0 = f(a);
    let fb0 = f(b);
    let (a0, b0) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iter = 0;
    while abs(b - a) > xtol && iter < 300 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        iter += 1;
    }
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if fa0 > best.1 {
        best = (a0, fa0);
    }
    if fb0 > best.1 {
        best = (b0, fb0);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0 * x - 5.0, 2.0, 3.0, 1e-14, 100);
        assert!(r.bracketed);
        assert!((r.root - 2.094_551_481_542_326_5).abs() < 1e-12);
    }

    #[test]
    fn brent_reports_missing_bracket() {
        let r = brent(|x| x * x + 1.0, -1.0, 2.0, 1e-12, 100);
        assert!(!r.bracketed);
        assert_eq!(r.root, -1.0);
    }

    #[test]
    fn positive_root_uses_hint_and_falls_back() {
        let f = |s: f64| 1.0 / s - 1.0 / 7.5;
        let with_hint = positive_root(f, 1e-8, 1e6, Some(7.0), 1e-12);
        let without = positive_root(f, 1e-8, 1e6, Some(1e3), 1e-12);
        assert!((with_hint.root - 7.5).abs() < 1e-9);
        assert!((without.root - 7.5).abs() < 1e-9);
        assert!(with_hint.evaluations < without.evaluations);
    }

    #[test]
    fn positive_root_clamps_to_lower_end() {
        let r = positive_root(|s| -1.0 / s, 1e-8, 10.0, None, 1e-12);
        assert!(!r.bracketed);
        assert_eq!(r.root, 10.0);
        let r = positive_root(|s| -s, 1e-8, 10.0, None, 1e-12);
        assert!((r.root - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, fx) = golden_max(|x| -(x - 1.3) * (x - 1.3) + 2.0, -5.0, 5.0, 1e-10);
        // A flat top limits the argmax to about the square root of machine precision.
        assert!((x - 1.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);
        let (x, _) = golden_max(|x| -x, 0.0, 5.0, 1e-10);
        assert_eq!(x, 0.0);
    }
}
