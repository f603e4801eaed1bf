//! Scalar intervals and axis-aligned boxes.
//!
//! Arithmetic rounds outward by a few ulps so that enclosures stay sound
//! under floating point.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[inline]
fn down(x: f64) -> f64 {
    if x.is_finite() {
        x - (x.abs() * 4.0 * f64::EPSILON + f64::MIN_POSITIVE)
    } else {
        x
    }
}

#[inline]
fn up(x: f64) -> f64 {
    if x.is_finite() {
        x + (x.abs() * 4.0 * f64::EPSILON + f64::MIN_POSITIVE)
    } else {
        x
    }
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// Widens by `pad` on both sides.
    pub fn pad(self, pad: f64) -> Self {
        Interval { lo: self.lo - pad, hi: self.hi + pad }
    }

    pub fn outward(self) -> Self {
        Interval { lo: down(self.lo), hi: up(self.hi) }
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(self, other: Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Largest absolute value in the interval.
    pub fn mag(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest absolute value in the interval.
    pub fn mig(self) -> f64 {
        if self.lo > 0.0 {
            self.lo
        } else if self.hi < 0.0 {
            -self.hi
        } else {
            0.0
        }
    }

    pub fn hull(self, other: Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn intersect(self, other: Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn scale(self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval { lo: down(self.lo * k), hi: up(self.hi * k) }
        } else {
            Interval { lo: down(self.hi * k), hi: up(self.lo * k) }
        }
    }

    pub fn square(self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        if self.lo >= 0.0 {
            Interval { lo: down(a).max(0.0), hi: up(b) }
        } else if self.hi <= 0.0 {
            Interval { lo: down(b).max(0.0), hi: up(a) }
        } else {
            Interval { lo: 0.0, hi: up(a.max(b)) }
        }
    }

    pub fn sqrt(self) -> Interval {
        Interval { lo: down(self.lo.max(0.0).sqrt()).max(0.0), hi: up(self.hi.max(0.0).sqrt()) }
    }

    /// `1/x`; the whole real line when the interval contains zero.
    pub fn recip(self) -> Interval {
        if self.lo > 0.0 || self.hi < 0.0 {
            Interval { lo: down(1.0 / self.hi), hi: up(1.0 / self.lo) }
        } else {
            Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
        }
    }

    /// Image of a nondecreasing function.
    pub fn map_monotone(self, f: impl Fn(f64) -> f64) -> Interval {
        Interval { lo: down(f(self.lo)), hi: up(f(self.hi)) }
    }

    pub fn min(self, other: Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.min(other.hi) }
    }

    pub fn max(self, other: Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Interval {
        Interval { lo: self.lo.clamp(lo, hi), hi: self.hi.clamp(lo, hi) }
    }

    pub fn cos(self) -> Interval {
        trig_hull(self, f64::cos, 0.0)
    }

    pub fn sin(self) -> Interval {
        trig_hull(self, f64::sin, -std::f64::consts::FRAC_PI_2)
    }
}

/// Range of `f` (cos or a phase-shifted cos) over the interval; `shift` is
/// chosen so that `f(x) = cos(x + shift)`.
fn trig_hull(x: Interval, f: fn(f64) -> f64, shift: f64) -> Interval {
    use std::f64::consts::PI;
    if x.width() >= 2.0 * PI {
        return Interval::new(-1.0, 1.0);
    }
    let a = f(x.lo);
    let b = f(x.hi);
    let mut lo = a.min(b);
    let mut hi = a.max(b);
    // extrema of cos(y) at y = k*pi
    let y0 = x.lo + shift;
    let y1 = x.hi + shift;
    let mut k = (y0 / PI).ceil();
    while k * PI <= y1 {
        if (k as i64).rem_euclid(2) == 0 {
            hi = 1.0;
        } else {
            lo = -1.0;
        }
        k += 1.0;
    }
    Interval { lo: down(lo).max(-1.0), hi: up(hi).min(1.0) }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval { lo: down(self.lo + o.lo), hi: up(self.hi + o.hi) }
    }
}

impl Add<f64> for Interval {
    type Output = Interval;
    fn add(self, o: f64) -> Interval {
        Interval { lo: down(self.lo + o), hi: up(self.hi + o) }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        Interval { lo: down(self.lo - o.hi), hi: up(self.hi - o.lo) }
    }
}

impl Sub<f64> for Interval {
    type Output = Interval;
    fn sub(self, o: f64) -> Interval {
        Interval { lo: down(self.lo - o), hi: up(self.hi - o) }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let mut lo = p[0];
        let mut hi = p[0];
        for &v in &p[1..] {
            // 0 * inf style NaNs are treated as unbounded
            if v.is_nan() {
                return Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval { lo: down(lo), hi: up(hi) }
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    fn mul(self, k: f64) -> Interval {
        self.scale(k)
    }
}

/// Axis-aligned box, one interval per coordinate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox(pub Vec<Interval>);

impl IntervalBox {
    pub fn new(lower: &[f64], upper: &[f64]) -> Self {
        assert_eq!(lower.len(), upper.len());
        IntervalBox(lower.iter().zip(upper).map(|(&l, &u)| Interval::new(l, u)).collect())
    }

    pub fn point(x: &[f64]) -> Self {
        IntervalBox(x.iter().map(|&v| Interval::point(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.0.iter().map(|iv| iv.lo).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.0.iter().map(|iv| iv.hi).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(|iv| iv.mid()).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|iv| iv.lo <= iv.hi && iv.lo.is_finite() && iv.hi.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && self.0.iter().zip(x).all(|(iv, &v)| iv.contains(v))
    }

    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a.contains_interval(*b))
    }

    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        let mut w = f64::NEG_INFINITY;
        for (k, iv) in self.0.iter().enumerate() {
            if iv.width() > w {
                w = iv.width();
                best = k;
            }
        }
        best
    }

    pub fn max_width(&self) -> f64 {
        self.0.iter().map(|iv| iv.width()).fold(0.0, f64::max)
    }

    /// Splits at the midpoint of coordinate `k`.
    pub fn bisect(&self, k: usize) -> (IntervalBox, IntervalBox) {
        let mid = self.0[k].mid();
        let mut a = self.clone();
        let mut b = self.clone();
        a.0[k].hi = mid;
        b.0[k].lo = mid;
        (a, b)
    }

    pub fn hull(&self, other: &IntervalBox) -> IntervalBox {
        IntervalBox(self.0.iter().zip(&other.0).map(|(a, b)| a.hull(*b)).collect())
    }

    pub fn intersect(&self, other: &IntervalBox) -> Option<IntervalBox> {
        let mut out = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            out.push(a.intersect(*b)?);
        }
        Some(IntervalBox(out))
    }

    /// Uniform sample from the box.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.0
            .iter()
            .map(|iv| if iv.width() > 0.0 { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo })
            .collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> IntervalBox {
        IntervalBox(self.0[start..start + len].to_vec())
    }
}

impl std::ops::Index<usize> for IntervalBox {
    type Output = Interval;
    fn index(&self, k: usize) -> &Interval {
        &self.0[k]
    }
}

impl std::ops::IndexMut<usize> for IntervalBox {
    fn index_mut(&mut self, k: usize) -> &mut Interval {
        &mut self.0[k]
    }
}

/// Interval dot product of two interval vectors.
pub fn dot(a: &[Interval], b: &[Interval]) -> Interval {
    a.iter().zip(b).fold(Interval::ZERO, |acc, (&x, &y)| acc + x * y)
}

/// Enclosure of the Euclidean norm of a vector ranging over the box.
pub fn norm(v: &[Interval]) -> Interval {
    v.iter().fold(Interval::ZERO, |acc, &x| acc + x.square()).sqrt()
}
