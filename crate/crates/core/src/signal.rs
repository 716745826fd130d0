//! Reference-frame transforms.
//!
//! All transforms use the amplitude-invariant (2/3) Clarke scaling, so the
//! magnitude of a dq vector equals the peak value of the balanced phase
//! quantity it was produced from.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

const FRAC_1_SQRT_3: f64 = 0.577_350_269_189_625_8;
const FRAC_SQRT_3_2: f64 = 0.866_025_403_784_438_6;

/// One instantaneous sample per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0);

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// Balanced set `peak * cos(theta - 2*pi*k/3)` for k = 0, 1, 2.
    pub fn balanced(peak: f64, theta: f64) -> Self {
        let third = 2.0 * PI / 3.0;
        Self::new(
            peak * theta.cos(),
            peak * (theta - third).cos(),
            peak * (theta + third).cos(),
        )
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.a), f(self.b), f(self.c))
    }

    pub fn zip_with(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(f(self.a, other.a), f(self.b, other.b), f(self.c, other.c))
    }

    pub fn mean(&self) -> f64 {
        (self.a + self.b + self.c) / 3.0
    }

    /// Sum of per-phase products, e.g. instantaneous three-phase power.
    pub fn dot(&self, other: &Self) -> f64 {
        self.a * other.a + self.b * other.b + self.c * other.c
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }
}

impl Add for ThreePhase {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.zip_with(rhs, |x, y| x + y)
    }
}

impl AddAssign for ThreePhase {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for ThreePhase {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.zip_with(rhs, |x, y| x - y)
    }
}

impl Neg for ThreePhase {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|x| -x)
    }
}

impl Mul<f64> for ThreePhase {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.map(|x| x * k)
    }
}

/// Stationary-frame components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    pub zero: f64,
}

impl AlphaBeta {
    pub const fn new(alpha: f64, beta: f64, zero: f64) -> Self {
        Self { alpha, beta, zero }
    }
}

/// Rotating-frame components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DqPair {
    pub d: f64,
    pub q: f64,
    pub zero: f64,
}

impl DqPair {
    pub const ZERO: Self = Self::new(0.0, 0.0);

    /// A dq pair with no zero-sequence part.
    pub const fn new(d: f64, q: f64) -> Self {
        Self { d, q, zero: 0.0 }
    }

    pub fn from_polar(magnitude: f64, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        Self::new(magnitude * c, magnitude * s)
    }

    pub fn magnitude(&self) -> f64 {
        self.d.hypot(self.q)
    }

    /// Four-quadrant angle of the (d, q) vector; zero at the origin.
    pub fn phase(&self) -> f64 {
        if self.d == 0.0 && self.q == 0.0 {
            0.0
        } else {
            self.q.atan2(self.d)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.q.is_finite() && self.zero.is_finite()
    }
}

impl Add for DqPair {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            d: self.d + rhs.d,
            q: self.q + rhs.q,
            zero: self.zero + rhs.zero,
        }
    }
}

impl Sub for DqPair {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            d: self.d - rhs.d,
            q: self.q - rhs.q,
            zero: self.zero - rhs.zero,
        }
    }
}

impl Mul<f64> for DqPair {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self {
            d: self.d * k,
            q: self.q * k,
            zero: self.zero * k,
        }
    }
}

/// An angle in radians, stored unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(pub f64);

impl Angle {
    pub fn radians(self) -> f64 {
        self.0
    }

    /// The same angle mapped into (-pi, pi].
    pub fn normalized(self) -> f64 {
        wrap_to_pi(self.0)
    }
}

impl From<f64> for Angle {
    fn from(theta: f64) -> Self {
        Angle(theta)
    }
}

/// Maps any angle into (-pi, pi].
pub fn wrap_to_pi(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = theta.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

pub fn clarke(x: ThreePhase) -> AlphaBeta {
    AlphaBeta {
        alpha: (2.0 / 3.0) * (x.a - 0.5 * x.b - 0.5 * x.c),
        beta: FRAC_1_SQRT_3 * (x.b - x.c),
        zero: x.mean(),
    }
}

pub fn inverse_clarke(x: AlphaBeta) -> ThreePhase {
    ThreePhase {
        a: x.alpha + x.zero,
        b: -0.5 * x.alpha + FRAC_SQRT_3_2 * x.beta + x.zero,
        c: -0.5 * x.alpha - FRAC_SQRT_3_2 * x.beta + x.zero,
    }
}

pub fn park(x: AlphaBeta, theta: Angle) -> DqPair {
    Rotation::new(theta).park(x)
}

pub fn inverse_park(x: DqPair, theta: Angle) -> AlphaBeta {
    Rotation::new(theta).inverse_park(x)
}

/// Magnitude and four-quadrant phase of a dq vector. The origin maps to
/// phase 0.
pub fn magnitude_phase(x: DqPair) -> (f64, Angle) {
    (x.magnitude(), Angle(x.phase()))
}

/// A frame angle with its sine and cosine evaluated once, for code that
/// transforms several signals at the same angle.
#[derive(Debug, Clone, Copy)]
pub struct Rotation {
    sin: f64,
    cos: f64,
}

impl Rotation {
    pub fn new(theta: Angle) -> Self {
        let (sin, cos) = theta.0.sin_cos();
        Self { sin, cos }
    }

    pub fn park(&self, x: AlphaBeta) -> DqPair {
        DqPair {
            d: x.alpha * self.cos + x.beta * self.sin,
            q: -x.alpha * self.sin + x.beta * self.cos,
            zero: x.zero,
        }
    }

    pub fn inverse_park(&self, x: DqPair) -> AlphaBeta {
        AlphaBeta {
            alpha: x.d * self.cos - x.q * self.sin,
            beta: x.d * self.sin + x.q * self.cos,
            zero: x.zero,
        }
    }

    /// abc -> dq0 in one call.
    pub fn abc_to_dq(&self, x: ThreePhase) -> DqPair {
        self.park(clarke(x))
    }

    /// dq0 -> abc in one call.
    pub fn dq_to_abc(&self, x: DqPair) -> ThreePhase {
        inverse_clarke(self.inverse_park(x))
    }
}
