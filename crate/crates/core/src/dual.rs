//! Scalar abstraction shared by plain `f64` evaluation and a three-direction
//! forward-mode dual number, used to obtain per-pixel Jacobians of the
//! CIEDE2000 formula without hand-deriving its adjoint.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::diffcore::clamped_sqrt_derivative;

pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    /// Square root whose derivative is clamped at zero.
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// `atan2(y, x)` in degrees on `[0, 360)`, and 0 (with zero derivative) at the origin.
    fn hue(y: Self, x: Self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn hue(y: Self, x: Self) -> Self {
        if x == 0.0 && y == 0.0 {
            0.0
        } else {
            crate::colorspace::hue_degrees(y, x)
        }
    }
}

/// Value plus partial derivatives with respect to three inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        Self {
            v,
            d: [self.d[0] * dv, self.d[1] * dv, self.d[2] * dv],
        }
    }
}

impl Add for Dual3 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Div for Dual3 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Self {
            v: q,
            d: [
                (self.d[0] - q * o.d[0]) * inv,
                (self.d[1] - q * o.d[1]) * inv,
                (self.d[2] - q * o.d[2]) * inv,
            ],
        }
    }
}

impl Neg for Dual3 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: [-self.d[0], -self.d[1], -self.d[2]],
        }
    }
}

impl Real for Dual3 {
    #[inline]
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; 3] }
    }
    #[inline]
    fn val(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, clamped_sqrt_derivative(self.v))
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        let p = self.v.powi(n - 1);
        self.chain(p * self.v, f64::from(n) * p)
    }
    #[inline]
    fn hue(y: Self, x: Self) -> Self {
        let r2 = x.v * x.v + y.v * y.v;
        if r2 == 0.0 {
            return Self::cst(0.0);
        }
        let h = crate::colorspace::hue_degrees(y.v, x.v);
        let k = 180.0 / std::f64::consts::PI / r2;
        Self {
            v: h,
            d: [
                (x.v * y.d[0] - y.v * x.d[0]) * k,
                (x.v * y.d[1] - y.v * x.d[1]) * k,
                (x.v * y.d[2] - y.v * x.d[2]) * k,
            ],
        }
    }
}
