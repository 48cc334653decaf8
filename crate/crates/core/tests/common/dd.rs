//! Double-double arithmetic (about 32 significant digits) for finite-difference
//! oracles whose round-off would otherwise swamp small derivative entries.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use tfddp::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const TWO_PI: DD = DD {
    hi: std::f64::consts::TAU,
    lo: 2.4492935982947064e-16,
};

impl DD {
    pub const fn new(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    fn scale_pow2(self, s: f64) -> Self {
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn sin_cos_taylor(t: DD) -> (DD, DD) {
        // |t| ≤ π/8 here, so 30 terms are far past double-double precision
        let t2 = t * t;
        let mut sin = t;
        let mut cos = DD::new(1.0);
        let mut term_s = t;
        let mut term_c = DD::new(1.0);
        for k in 1..30 {
            let k = k as f64;
            term_s = -(term_s * t2) / DD::new((2.0 * k) * (2.0 * k + 1.0));
            term_c = -(term_c * t2) / DD::new((2.0 * k - 1.0) * (2.0 * k));
            sin += term_s;
            cos += term_c;
        }
        (sin, cos)
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DD::norm(s, e + f)
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        DD::norm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let q1 = self.hi / o.hi;
        let r = self - o * DD::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DD::new(q2);
        let q3 = r.hi / o.hi;
        DD::norm(q1, q2) + DD::new(q3)
    }
}

impl AddAssign for DD {
    fn add_assign(&mut self, o: DD) {
        *self = *self + o;
    }
}

impl SubAssign for DD {
    fn sub_assign(&mut self, o: DD) {
        *self = *self - o;
    }
}

impl MulAssign for DD {
    fn mul_assign(&mut self, o: DD) {
        *self = *self * o;
    }
}

impl Scalar for DD {
    fn from_f64(v: f64) -> Self {
        DD::new(v)
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }

    fn sin(self) -> Self {
        self.sin_cos().0
    }

    fn cos(self) -> Self {
        self.sin_cos().1
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DD::new(self.hi.sqrt());
        }
        let s = DD::new(self.hi.sqrt());
        s + (self - s * s) / (s + s)
    }

    fn constant_value(&self) -> Option<f64> {
        (self.lo == 0.0).then_some(self.hi)
    }

    fn sin_cos(self) -> (Self, Self) {
        let k = (self.hi / TWO_PI.hi).round();
        let r = self - TWO_PI * DD::new(k);
        let (mut s, mut c) = DD::sin_cos_taylor(r.scale_pow2(0.125));
        for _ in 0..3 {
            let s2 = (s * c).scale_pow2(2.0);
            c = c * c - s * s;
            s = s2;
        }
        (s, c)
    }
}

pub fn lift(xs: &[f64]) -> Vec<DD> {
    xs.iter().map(|&v| DD::new(v)).collect()
}
