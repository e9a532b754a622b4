//! Influence functions and their area-tilted form
//! `psi_tau(r) = 2 psi(r) [tau 1(r > 0) + (1 - tau) 1(r <= 0)]`.

use alloc::format;

use crate::error::{Error, Result};
use crate::math::{abs, normal_cdf, normal_pdf};
use crate::quad;

/// Huber tuning constant with 95% Gaussian efficiency.
pub const HUBER_C: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiBase {
    Huber { c: f64 },
    Identity,
    Sign,
}

impl PsiBase {
    #[inline]
    pub fn eval(self, r: f64) -> f64 {
        match self {
            PsiBase::Huber { c } => r.clamp(-c, c),
            PsiBase::Identity => r,
            PsiBase::Sign => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Left-limit derivative.
    #[inline]
    pub fn deriv(self, r: f64) -> f64 {
        match self {
            PsiBase::Huber { c } => {
                if r > -c && r <= c {
                    1.0
                } else {
                    0.0
                }
            }
            PsiBase::Identity => 1.0,
            PsiBase::Sign => 0.0,
        }
    }

    /// `E[psi(U)^2]` for standard normal `U`.
    pub fn expected_square(self) -> f64 {
        match self {
            PsiBase::Huber { c } => {
                let phi = normal_pdf(c);
                let upper = 1.0 - normal_cdf(c);
                (1.0 - 2.0 * upper) - 2.0 * c * phi + 2.0 * c * c * upper
            }
            PsiBase::Identity | PsiBase::Sign => 1.0,
        }
    }
}

/// A base influence function together with its tilt `tau` (0.5 = untilted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSpec {
    pub base: PsiBase,
    pub tau: f64,
}

impl PsiSpec {
    pub fn new(base: PsiBase, tau: f64) -> Result<Self> {
        if let PsiBase::Huber { c } = base {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("Huber constant must be positive, got {c}")));
            }
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
        }
        Ok(Self { base, tau })
    }

    pub fn untilted(base: PsiBase) -> Self {
        Self { base, tau: 0.5 }
    }

    pub fn huber(c: f64, tau: f64) -> Result<Self> {
        Self::new(PsiBase::Huber { c }, tau)
    }

    #[inline]
    fn tilt(&self, r: f64) -> f64 {
        if r > 0.0 {
            2.0 * self.tau
        } else {
            2.0 * (1.0 - self.tau)
        }
    }

    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        self.tilt(r) * self.base.eval(r)
    }

    /// Derivative of [`psi`](Self::psi) in `r`, taking the left limit at kinks
    /// and at the tilt jump.
    #[inline]
    pub fn psi_deriv(&self, r: f64) -> f64 {
        self.tilt(r) * self.base.deriv(r)
    }

    /// IRLS weight `psi(r) / r`, with the derivative convention at `r = 0`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        if r == 0.0 {
            self.psi_deriv(0.0)
        } else {
            self.psi(r) / r
        }
    }

    /// `E[psi(U)^2]` for standard normal `U`. The integral is split at zero, so
    /// it equals `2 (tau^2 + (1 - tau)^2)` times the untilted value.
    pub fn expected_square(&self) -> f64 {
        let t = self.tau;
        2.0 * (t * t + (1.0 - t) * (1.0 - t)) * self.base.expected_square()
    }

    /// The same expectation by adaptive quadrature, split at zero and at the
    /// Huber kinks. Used to cross-check the closed forms.
    pub fn expected_square_quadrature(&self) -> f64 {
        let f = |u: f64| {
            let v = self.psi(u);
            v * v * normal_pdf(u)
        };
        let lim = 40.0;
        let mut cuts = alloc::vec![-lim, 0.0, lim];
        if let PsiBase::Huber { c } = self.base {
            if c < lim {
                cuts.push(-c);
                cuts.push(c);
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.windows(2)
            .filter(|w| abs(w[1] - w[0]) > 0.0)
            .map(|w| quad::integrate(f, w[0], w[1], 1e-15, 2000))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn huber(tau: f64) -> PsiSpec {
        PsiSpec::huber(HUBER_C, tau).unwrap()
    }

    #[test]
    fn psi_examples() {
        assert!((huber(0.5).psi(2.0) - 1.345).abs() < 1e-15);
        assert!((huber(0.7).psi(2.0) - 1.883).abs() < 1e-12);
        let id = PsiSpec::untilted(PsiBase::Identity);
        assert_eq!(id.psi(-0.4), -0.4);
    }

    #[test]
    fn psi_deriv_examples() {
        assert_eq!(huber(0.5).psi_deriv(0.5), 1.0);
        assert_eq!(huber(0.5).psi_deriv(3.0), 0.0);
        let id = PsiSpec::new(PsiBase::Identity, 0.7).unwrap();
        assert!((id.psi_deriv(-1.0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn kink_convention_is_left_limit() {
        let h = huber(0.5);
        assert_eq!(h.psi_deriv(HUBER_C), 1.0);
        assert_eq!(h.psi_deriv(-HUBER_C), 0.0);
        let t = huber(0.8);
        assert!((t.psi_deriv(0.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn expected_square_examples() {
        assert_eq!(PsiSpec::untilted(PsiBase::Identity).expected_square(), 1.0);
        assert_eq!(PsiSpec::untilted(PsiBase::Sign).expected_square(), 1.0);
        let closed = huber(0.5).expected_square();
        let quad = huber(0.5).expected_square_quadrature();
        assert!(((closed - quad) / quad).abs() < 1e-10, "{closed} vs {quad}");
        assert!(closed < 1.0 && closed > 0.7);
    }

    #[test]
    fn expected_square_matches_quadrature_for_tilts() {
        for &tau in &[0.02, 0.3, 0.5, 0.77, 0.98] {
            for base in [PsiBase::Huber { c: 0.5 }, PsiBase::Huber { c: HUBER_C }, PsiBase::Identity, PsiBase::Sign] {
                let s = PsiSpec::new(base, tau).unwrap();
                let (a, b) = (s.expected_square(), s.expected_square_quadrature());
                assert!(((a - b) / b).abs() < 1e-10, "{base:?} tau={tau}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn huber_tends_to_identity_for_large_c() {
        let s = PsiSpec::huber(40.0, 0.5).unwrap();
        assert!((s.expected_square() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(PsiSpec::huber(0.0, 0.5).is_err());
        assert!(PsiSpec::huber(1.0, 1.0).is_err());
        assert!(PsiSpec::new(PsiBase::Identity, 0.0).is_err());
    }

    fn any_base() -> impl Strategy<Value = PsiBase> {
        prop_oneof![
            (0.1f64..5.0).prop_map(|c| PsiBase::Huber { c }),
            Just(PsiBase::Identity),
            Just(PsiBase::Sign),
        ]
    }

    proptest! {
        #[test]
        fn untilted_reduces_to_base(base in any_base(), r in -50.0f64..50.0) {
            prop_assert_eq!(PsiSpec::untilted(base).psi(r), base.eval(r));
        }

        #[test]
        fn monotone_in_r(base in any_base(), tau in 0.01f64..0.99, a in -20.0f64..20.0, d in 0.0f64..10.0) {
            let s = PsiSpec::new(base, tau).unwrap();
            prop_assert!(s.psi(a + d) >= s.psi(a));
        }

        #[test]
        fn untilted_is_odd(base in any_base(), r in -20.0f64..20.0) {
            let s = PsiSpec::untilted(base);
            prop_assert_eq!(s.psi(-r), -s.psi(r));
        }

        #[test]
        fn huber_is_bounded(c in 0.1f64..5.0, tau in 0.01f64..0.99, r in -1e6f64..1e6) {
            let s = PsiSpec::huber(c, tau).unwrap();
            prop_assert!(s.psi(r).abs() <= 2.0 * c + 1e-12);
        }

        #[test]
        fn derivative_matches_finite_differences(base in any_base(), tau in 0.01f64..0.99, r in -6.0f64..6.0) {
            let s = PsiSpec::new(base, tau).unwrap();
            let kinks: &[f64] = match base { PsiBase::Huber { c } => &[0.0, c, -c][..], _ => &[0.0][..] };
            let c_kinks: alloc::vec::Vec<f64> = kinks.to_vec();
            prop_assume!(c_kinks.iter().all(|k| (r - k).abs() >= 1e-3));
            let h = 1e-6;
            let fd = (s.psi(r + h) - s.psi(r - h)) / (2.0 * h);
            prop_assert!((fd - s.psi_deriv(r)).abs() < 1e-6);
        }
    }
}
