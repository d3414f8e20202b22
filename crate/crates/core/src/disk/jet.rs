//! Truncated multivariate Taylor arithmetic ("jets") in the four formally
//! independent complex variables `(z, zbar, s, sbar)`, up to total order 4.
//!
//! Wirtinger derivatives of any composite expression are exact coefficient
//! shifts, so identities between differential expressions can be verified to
//! machine precision at arbitrary sample points, with no finite-difference
//! noise. Conjugation swaps the `z <-> zbar` and `s <-> sbar` exponents and
//! conjugates coefficients, which is the correct involution when the barred
//! variables carry the conjugate base values.

use crate::{c64, C64};
use std::ops::{Add, Mul, Neg, Sub};

/// Formal variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Z = 0,
    Zb = 1,
    S = 2,
    Sb = 3,
}

pub const MAX_ORD: i32 = 4;
const W: usize = (MAX_ORD + 1) as usize; // exponent range per variable
const DIM: usize = W * W * W * W;

#[inline]
fn idx(a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * W + b) * W + c) * W + d
}

/// A Taylor polynomial truncated to total degree 4. Entries with total
/// degree above `MAX_ORD` are never written or read.
#[derive(Clone)]
pub struct Jet {
    c: Box<[C64; DIM]>,
    /// Highest total order of coefficients still exact (decremented by
    /// differentiation; composition with analytic functions preserves it).
    pub ord: i32,
}

impl Jet {
    fn zeros(ord: i32) -> Jet {
        Jet { c: Box::new([c64(0.0, 0.0); DIM]), ord }
    }

    pub fn constant(v: C64) -> Jet {
        let mut j = Jet::zeros(MAX_ORD);
        j.c[0] = v;
        j
    }

    pub fn real(v: f64) -> Jet {
        Jet::constant(c64(v, 0.0))
    }

    /// The variable `var`, centered at base value `val`.
    pub fn var(var: Var, val: C64) -> Jet {
        let mut j = Jet::constant(val);
        let e = match var {
            Var::Z => idx(1, 0, 0, 0),
            Var::Zb => idx(0, 1, 0, 0),
            Var::S => idx(0, 0, 1, 0),
            Var::Sb => idx(0, 0, 0, 1),
        };
        j.c[e] = c64(1.0, 0.0);
        j
    }

    /// A conjugate pair `(z, zbar)` of variable jets at base value `z0`.
    pub fn var_pair(var: Var, cvar: Var, z0: C64) -> (Jet, Jet) {
        (Jet::var(var, z0), Jet::var(cvar, z0.conj()))
    }

    /// Value at the expansion center.
    pub fn value(&self) -> C64 {
        debug_assert!(self.ord >= 0, "jet differentiated past its valid order");
        self.c[0]
    }

    pub fn coeff(&self, a: usize, b: usize, c: usize, d: usize) -> C64 {
        self.c[idx(a, b, c, d)]
    }

    /// Wirtinger derivative with respect to one formal variable.
    pub fn d(&self, var: Var) -> Jet {
        let mut out = Jet::zeros(self.ord - 1);
        for a in 0..W {
            for b in 0..W - a {
                for c in 0..W - a - b {
                    for d in 0..W - a - b - c {
                        let (sa, sb, sc, sd, mult) = match var {
                            Var::Z => (a + 1, b, c, d, (a + 1) as f64),
                            Var::Zb => (a, b + 1, c, d, (b + 1) as f64),
                            Var::S => (a, b, c + 1, d, (c + 1) as f64),
                            Var::Sb => (a, b, c, d + 1, (d + 1) as f64),
                        };
                        if sa + sb + sc + sd <= MAX_ORD as usize {
                            out.c[idx(a, b, c, d)] = self.c[idx(sa, sb, sc, sd)] * mult;
                        }
                    }
                }
            }
        }
        out
    }

    /// Formal complex conjugate: swaps `z <-> zbar`, `s <-> sbar` exponents
    /// and conjugates coefficients.
    pub fn conj(&self) -> Jet {
        let mut out = Jet::zeros(self.ord);
        for a in 0..W {
            for b in 0..W - a {
                for c in 0..W - a - b {
                    for d in 0..W - a - b - c {
                        out.c[idx(a, b, c, d)] = self.c[idx(b, a, d, c)].conj();
                    }
                }
            }
        }
        out
    }

    fn scaled(&self, k: C64) -> Jet {
        let mut out = self.clone();
        for v in out.c.iter_mut() {
            *v *= k;
        }
        out
    }

    /// `sum_k ds[k] * (self - self(0))^k`: composition with an analytic
    /// function given by its Taylor coefficients `ds[k] = f^(k)(c0)/k!`.
    fn compose(&self, ds: &[C64; (MAX_ORD + 1) as usize]) -> Jet {
        let mut u = self.clone();
        u.c[0] = c64(0.0, 0.0); // nilpotent part
        let mut out = Jet::constant(ds[0]);
        out.ord = self.ord;
        let mut pow = Jet::constant(c64(1.0, 0.0));
        for dk in ds.iter().skip(1) {
            pow = &pow * &u;
            out = &out + &pow.scaled(*dk);
        }
        out.ord = self.ord;
        out
    }

    pub fn recip(&self) -> Jet {
        let c0 = self.c[0];
        assert!(c0.norm() > 0.0, "jet reciprocal at zero");
        let r = 1.0 / c0;
        self.compose(&[r, -r * r, r * r * r, -r * r * r * r, r * r * r * r * r])
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        self.compose(&[e, e, e / 2.0, e / 6.0, e / 24.0])
    }

    pub fn ln(&self) -> Jet {
        let c0 = self.c[0];
        let r = 1.0 / c0;
        let r2 = r * r;
        self.compose(&[c0.ln(), r, -r2 / 2.0, r2 * r / 3.0, -r2 * r2 / 4.0])
    }

    pub fn sqrt(&self) -> Jet {
        let c0 = self.c[0];
        let r = c0.sqrt();
        let q = 1.0 / c0;
        // r * binom(1/2, k) / c0^k
        self.compose(&[
            r,
            r * q * 0.5,
            r * q * q * (-0.125),
            r * q * q * q * 0.0625,
            r * q * q * q * q * (-0.0390625),
        ])
    }

    /// Squared modulus as a jet: `self * conj(self)`.
    pub fn norm_sqr(&self) -> Jet {
        self * &self.conj()
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let mut out = self.clone();
        for (o, r) in out.c.iter_mut().zip(rhs.c.iter()) {
            *o += r;
        }
        out.ord = self.ord.min(rhs.ord);
        out
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let mut out = self.clone();
        for (o, r) in out.c.iter_mut().zip(rhs.c.iter()) {
            *o -= r;
        }
        out.ord = self.ord.min(rhs.ord);
        out
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scaled(c64(-1.0, 0.0))
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let mut out = Jet::zeros(self.ord.min(rhs.ord));
        for a1 in 0..W {
            for b1 in 0..W - a1 {
                for c1 in 0..W - a1 - b1 {
                    for d1 in 0..W - a1 - b1 - c1 {
                        let x = self.c[idx(a1, b1, c1, d1)];
                        if x.norm_sqr() == 0.0 {
                            continue;
                        }
                        let rem = W - 1 - a1 - b1 - c1 - d1;
                        for a2 in 0..=rem {
                            for b2 in 0..=rem - a2 {
                                for c2 in 0..=rem - a2 - b2 {
                                    for d2 in 0..=rem - a2 - b2 - c2 {
                                        let y = rhs.c[idx(a2, b2, c2, d2)];
                                        if y.norm_sqr() == 0.0 {
                                            continue;
                                        }
                                        out.c[idx(a1 + a2, b1 + b2, c1 + c2, d1 + d2)] += x * y;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Convenience: jet +/- scalar and scalar * jet.
impl Add<C64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: C64) -> Jet {
        let mut out = self.clone();
        out.c[0] += rhs;
        out
    }
}

impl Mul<C64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: C64) -> Jet {
        self.scaled(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn product_and_chain_rules() {
        let z0 = c64(0.3, -0.2);
        let z = Jet::var(Var::Z, z0);
        // f = exp(z^2), f' = 2 z exp(z^2), f'' = (2 + 4z^2) exp(z^2)
        let f = (&z * &z).exp();
        let e = (z0 * z0).exp();
        assert!(close(f.value(), e, 1e-14));
        assert!(close(f.d(Var::Z).value(), 2.0 * z0 * e, 1e-13));
        assert!(close(
            f.d(Var::Z).d(Var::Z).value(),
            (2.0 + 4.0 * z0 * z0) * e,
            1e-12
        ));
        assert!(close(f.d(Var::Zb).value(), c64(0.0, 0.0), 1e-15));
    }

    #[test]
    fn ln_recip_sqrt_inverses() {
        let z0 = c64(0.7, 0.4);
        let s0 = c64(0.1, -0.05);
        let z = Jet::var(Var::Z, z0);
        let s = Jet::var(Var::S, s0);
        let f = &(&(&z * &s) + c64(2.0, 0.5)) * &z; // generic jet
        let back = f.ln().exp();
        for a in 0..3 {
            for c in 0..3 {
                let want = f.coeff(a, 0, c, 0);
                assert!(close(back.coeff(a, 0, c, 0), want, 1e-12));
            }
        }
        let one = &f * &f.recip();
        assert!(close(one.value(), c64(1.0, 0.0), 1e-13));
        assert!(close(one.d(Var::Z).value(), c64(0.0, 0.0), 1e-12));
        let sq = &f.sqrt() * &f.sqrt();
        assert!(close(sq.d(Var::S).value(), f.d(Var::S).value(), 1e-12));
    }

    #[test]
    fn conjugation_involution() {
        let z0 = c64(0.25, 0.6);
        let (z, zb) = Jet::var_pair(Var::Z, Var::Zb, z0);
        let r = &z * &zb; // |z|^2, formally
        assert!(close(r.value(), c64(z0.norm_sqr(), 0.0), 1e-15));
        // d/dz |z|^2 = zbar; d/dzbar |z|^2 = z
        assert!(close(r.d(Var::Z).value(), z0.conj(), 1e-15));
        assert!(close(r.d(Var::Zb).value(), z0, 1e-15));
        // conj(d/dz f) = d/dzbar conj(f)
        let f = &(&z * &z) * &zb;
        let lhs = f.d(Var::Z).conj();
        let rhs = f.conj().d(Var::Zb);
        assert!(close(lhs.value(), rhs.value(), 1e-15));
        assert!(close(lhs.d(Var::S).value(), rhs.d(Var::S).value(), 1e-15));
    }

    #[test]
    fn order_tracking() {
        let z = Jet::var(Var::Z, c64(0.1, 0.0));
        let f = z.exp();
        assert_eq!(f.ord, 4);
        assert_eq!(f.d(Var::Z).d(Var::Zb).ord, 2);
    }
}
