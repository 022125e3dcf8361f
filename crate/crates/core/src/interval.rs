//! Outward-rounded interval arithmetic.
//!
//! Every operation returns an interval that contains the exact mathematical
//! range of the operation over its inputs. Since we compute with ordinary
//! (round-to-nearest) floating point, results are widened outward by a few
//! ulps after each step: one ulp for arithmetic, two for the transcendental
//! functions whose library implementations are faithful but not correctly
//! rounded.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<S: Scalar> {
    pub lo: S,
    pub hi: S,
}

fn widen1<S: Scalar>(lo: S, hi: S) -> Interval<S> {
    Interval {
        lo: lo.next_down(),
        hi: hi.next_up(),
    }
}

fn widen2<S: Scalar>(lo: S, hi: S) -> Interval<S> {
    Interval {
        lo: lo.next_down().next_down(),
        hi: hi.next_up().next_up(),
    }
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order");
        Interval { lo, hi }
    }

    pub fn point(v: S) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn zero() -> Self {
        Interval::point(S::zero())
    }

    pub fn width(&self) -> S {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> S {
        (self.lo + self.hi) * S::from_double(0.5)
    }

    pub fn contains(&self, v: S) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval<S>) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval<S>) -> Option<Interval<S>> {
        let lo = if self.lo > other.lo { self.lo } else { other.lo };
        let hi = if self.hi < other.hi { self.hi } else { other.hi };
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    /// Magnitude bound: max |x| over the interval.
    pub fn abs_max(&self) -> S {
        let a = self.lo.abs();
        let b = self.hi.abs();
        if a > b {
            a
        } else {
            b
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        widen1(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(&self, o: &Self) -> Self {
        widen1(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(&self) -> Self {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        widen1(lo, hi)
    }

    pub fn scale(&self, k: S) -> Self {
        let (a, b) = (self.lo * k, self.hi * k);
        if a <= b {
            widen1(a, b)
        } else {
            widen1(b, a)
        }
    }

    pub fn add_scalar(&self, k: S) -> Self {
        widen1(self.lo + k, self.hi + k)
    }

    /// Division; the divisor must not contain zero.
    pub fn div(&self, o: &Self) -> Self {
        assert!(
            !o.contains(S::zero()),
            "interval division by an interval containing zero"
        );
        let c = [
            self.lo / o.lo,
            self.lo / o.hi,
            self.hi / o.lo,
            self.hi / o.hi,
        ];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        widen1(lo, hi)
    }

    /// Integer power by repeated squaring on the monotone/even-case envelope.
    pub fn powi(&self, p: i32) -> Self {
        assert!(p >= 0, "negative powers: divide instead");
        if p == 0 {
            return Interval::point(S::one());
        }
        let a = self.lo.powi(p);
        let b = self.hi.powi(p);
        if p % 2 == 1 {
            widen1(a, b)
        } else {
            // even power: minimum at zero when the interval straddles it
            let hi = if a > b { a } else { b };
            if self.contains(S::zero()) {
                widen1(S::zero(), hi)
            } else {
                let lo = if a < b { a } else { b };
                widen1(lo, hi)
            }
        }
    }

    pub fn abs(&self) -> Self {
        if self.lo >= S::zero() {
            *self
        } else if self.hi <= S::zero() {
            self.neg()
        } else {
            Interval {
                lo: S::zero(),
                hi: self.abs_max(),
            }
        }
    }

    pub fn min(&self, o: &Self) -> Self {
        Interval {
            lo: if self.lo < o.lo { self.lo } else { o.lo },
            hi: if self.hi < o.hi { self.hi } else { o.hi },
        }
    }

    pub fn max(&self, o: &Self) -> Self {
        Interval {
            lo: if self.lo > o.lo { self.lo } else { o.lo },
            hi: if self.hi > o.hi { self.hi } else { o.hi },
        }
    }

    /// max(x, 0), the positive part.
    pub fn relu(&self) -> Self {
        self.max(&Interval::zero())
    }

    /// Heaviside step with the value 0 at 0 (the relu subgradient choice).
    pub fn step(&self) -> Self {
        if self.lo > S::zero() {
            Interval::point(S::one())
        } else if self.hi <= S::zero() {
            Interval::point(S::zero())
        } else {
            Interval::new(S::zero(), S::one())
        }
    }

    pub fn tanh(&self) -> Self {
        widen2(self.lo.tanh(), self.hi.tanh())
    }

    /// sech^2(z) = 1 - tanh(z)^2, the derivative of tanh. Even, unimodal
    /// with maximum 1 at z = 0.
    pub fn sech2(&self) -> Self {
        let s = |z: S| {
            let t = z.tanh();
            S::one() - t * t
        };
        let a = s(self.lo);
        let b = s(self.hi);
        if self.contains(S::zero()) {
            let lo = if a < b { a } else { b };
            widen2(lo, S::one())
        } else {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            widen2(lo, hi)
        }
    }

    /// Second derivative of tanh: -2 t (1 - t^2). Odd; extrema +-4/(3 sqrt 3)
    /// at z = -+ artanh(1/sqrt 3).
    pub fn tanh_dd(&self) -> Self {
        let f = |z: S| {
            let t = z.tanh();
            S::from_double(-2.0) * t * (S::one() - t * t)
        };
        // critical points of tanh'' are at +- z_star
        let z_star = S::from_double(0.658_478_948_462_408_3);
        let peak = S::from_double(0.769_800_358_919_501_3);
        let mut lo = f(self.lo);
        let mut hi = lo;
        let b = f(self.hi);
        if b < lo {
            lo = b;
        }
        if b > hi {
            hi = b;
        }
        if self.contains(-z_star) && peak > hi {
            hi = peak;
        }
        if self.contains(z_star) && -peak < lo {
            lo = -peak;
        }
        widen2(lo, hi)
    }

    pub fn sin(&self) -> Self {
        self.sin_cos_impl(S::from_double(std::f64::consts::FRAC_PI_2))
    }

    pub fn cos(&self) -> Self {
        self.sin_cos_impl(S::zero())
    }

    /// Shared range analysis: sin(x) peaks at pi/2 + 2k pi, cos at 2k pi.
    /// `peak_offset` is the location of the maximum nearest zero.
    fn sin_cos_impl(&self, peak_offset: S) -> Self {
        let two_pi = S::from_double(std::f64::consts::TAU);
        let pi = S::from_double(std::f64::consts::PI);
        if self.width() >= two_pi {
            return Interval::new(-S::one(), S::one());
        }
        let f = |z: S| {
            if peak_offset == S::zero() {
                z.cos()
            } else {
                z.sin()
            }
        };
        let a = f(self.lo);
        let b = f(self.hi);
        let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
        // does the interval contain a maximizer peak_offset + 2k pi?
        let contains_crit = |center: S| {
            let k = ((self.lo - center) / two_pi).ceil();
            center + k * two_pi <= self.hi
        };
        if contains_crit(peak_offset) {
            hi = S::one();
        }
        if contains_crit(peak_offset + pi) {
            lo = -S::one();
        }
        let out = widen2(lo, hi);
        Interval {
            lo: if out.lo < -S::one() { -S::one() } else { out.lo },
            hi: if out.hi > S::one() { S::one() } else { out.hi },
        }
    }
}
