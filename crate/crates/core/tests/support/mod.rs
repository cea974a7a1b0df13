//! Smooth exact solution with homogeneous Dirichlet data for the constant
//! coefficient problem.
//!
//! With `w = (x(1-x)y(1-y))³`, `u = g(t) A ∇w` and
//! `p = g(t) A (λ+2μ)/α Δw` balance the momentum equation without body force;
//! the source follows from the flow equation.
#![allow(dead_code)]

pub mod raw {
    pub fn u1(x: f64, y: f64) -> f64 {
        3.0*x.powi(2)*y.powi(3)*(x - 1.0).powi(2)*(2.0*x - 1.0)*(y - 1.0).powi(3)
    }

    pub fn u2(x: f64, y: f64) -> f64 {
        3.0*x.powi(3)*y.powi(2)*(x - 1.0).powi(3)*(y - 1.0).powi(2)*(2.0*y - 1.0)
    }

    pub fn u1x(x: f64, y: f64) -> f64 {
        6.0*x*y.powi(3)*(x - 1.0)*(y - 1.0).powi(3)*(5.0*x.powi(2) - 5.0*x + 1.0)
    }

    pub fn u1y(x: f64, y: f64) -> f64 {
        9.0*x.powi(2)*y.powi(2)*(x - 1.0).powi(2)*(2.0*x - 1.0)*(y - 1.0).powi(2)*(2.0*y - 1.0)
    }

    pub fn u2x(x: f64, y: f64) -> f64 {
        9.0*x.powi(2)*y.powi(2)*(x - 1.0).powi(2)*(2.0*x - 1.0)*(y - 1.0).powi(2)*(2.0*y - 1.0)
    }

    pub fn u2y(x: f64, y: f64) -> f64 {
        6.0*x.powi(3)*y*(x - 1.0).powi(3)*(y - 1.0)*(5.0*y.powi(2) - 5.0*y + 1.0)
    }

    pub fn lap(x: f64, y: f64) -> f64 {
        6.0*x*y*(x - 1.0)*(y - 1.0)*(5.0*x.powi(4)*y.powi(2) - 5.0*x.powi(4)*y + x.powi(4) - 10.0*x.powi(3)*y.powi(2) + 10.0*x.powi(3)*y - 2.0*x.powi(3) + 5.0*x.powi(2)*y.powi(4) - 10.0*x.powi(2)*y.powi(3) + 10.0*x.powi(2)*y.powi(2) - 5.0*x.powi(2)*y + x.powi(2) - 5.0*x*y.powi(4) + 10.0*x*y.powi(3) - 5.0*x*y.powi(2) + y.powi(4) - 2.0*y.powi(3) + y.powi(2))
    }

    pub fn lapx(x: f64, y: f64) -> f64 {
        6.0*y*(2.0*x - 1.0)*(y - 1.0)*(15.0*x.powi(4)*y.powi(2) - 15.0*x.powi(4)*y + 3.0*x.powi(4) - 30.0*x.powi(3)*y.powi(2) + 30.0*x.powi(3)*y - 6.0*x.powi(3) + 10.0*x.powi(2)*y.powi(4) - 20.0*x.powi(2)*y.powi(3) + 25.0*x.powi(2)*y.powi(2) - 15.0*x.powi(2)*y + 3.0*x.powi(2) - 10.0*x*y.powi(4) + 20.0*x*y.powi(3) - 10.0*x*y.powi(2) + y.powi(4) - 2.0*y.powi(3) + y.powi(2))
    }

    pub fn lapy(x: f64, y: f64) -> f64 {
        6.0*x*(x - 1.0)*(2.0*y - 1.0)*(10.0*x.powi(4)*y.powi(2) - 10.0*x.powi(4)*y + x.powi(4) - 20.0*x.powi(3)*y.powi(2) + 20.0*x.powi(3)*y - 2.0*x.powi(3) + 15.0*x.powi(2)*y.powi(4) - 30.0*x.powi(2)*y.powi(3) + 25.0*x.powi(2)*y.powi(2) - 10.0*x.powi(2)*y + x.powi(2) - 15.0*x*y.powi(4) + 30.0*x*y.powi(3) - 15.0*x*y.powi(2) + 3.0*y.powi(4) - 6.0*y.powi(3) + 3.0*y.powi(2))
    }

    pub fn bilap(x: f64, y: f64) -> f64 {
        72.0*(5.0*x.powi(6)*y.powi(2) - 5.0*x.powi(6)*y + x.powi(6) - 15.0*x.powi(5)*y.powi(2) + 15.0*x.powi(5)*y - 3.0*x.powi(5) + 25.0*x.powi(4)*y.powi(4) - 50.0*x.powi(4)*y.powi(3) + 45.0*x.powi(4)*y.powi(2) - 20.0*x.powi(4)*y + 3.0*x.powi(4) - 50.0*x.powi(3)*y.powi(4) + 100.0*x.powi(3)*y.powi(3) - 65.0*x.powi(3)*y.powi(2) + 15.0*x.powi(3)*y - x.powi(3) + 5.0*x.powi(2)*y.powi(6) - 15.0*x.powi(2)*y.powi(5) + 45.0*x.powi(2)*y.powi(4) - 65.0*x.powi(2)*y.powi(3) + 36.0*x.powi(2)*y.powi(2) - 6.0*x.powi(2)*y - 5.0*x*y.powi(6) + 15.0*x*y.powi(5) - 20.0*x*y.powi(4) + 15.0*x*y.powi(3) - 6.0*x*y.powi(2) + x*y + y.powi(6) - 3.0*y.powi(5) + 3.0*y.powi(4) - y.powi(3))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub biot_modulus: f64,
    pub mobility: f64,
    pub amplitude: f64,
}

impl Manufactured {
    pub fn g(t: f64) -> f64 {
        1.0 + t * t
    }

    pub fn dg(t: f64) -> f64 {
        2.0 * t
    }

    fn p_scale(&self) -> f64 {
        self.amplitude * (self.lambda + 2.0 * self.mu) / self.alpha
    }

    /// Displacement component `c` and its gradient.
    pub fn u(&self, c: usize, t: f64, x: [f64; 2]) -> (f64, [f64; 2]) {
        let s = Self::g(t) * self.amplitude;
        let (v, d) = if c == 0 {
            (raw::u1(x[0], x[1]), [raw::u1x(x[0], x[1]), raw::u1y(x[0], x[1])])
        } else {
            (raw::u2(x[0], x[1]), [raw::u2x(x[0], x[1]), raw::u2y(x[0], x[1])])
        };
        (s * v, [s * d[0], s * d[1]])
    }

    pub fn p(&self, t: f64, x: [f64; 2]) -> (f64, [f64; 2]) {
        let s = Self::g(t) * self.p_scale();
        (
            s * raw::lap(x[0], x[1]),
            [s * raw::lapx(x[0], x[1]), s * raw::lapy(x[0], x[1])],
        )
    }

    pub fn source(&self, t: f64, x: [f64; 2]) -> f64 {
        let storage = self.alpha + (self.lambda + 2.0 * self.mu) / (self.alpha * self.biot_modulus);
        self.amplitude
            * (Self::dg(t) * storage * raw::lap(x[0], x[1])
                - self.mobility * Self::g(t) * (self.lambda + 2.0 * self.mu) / self.alpha
                    * raw::bilap(x[0], x[1]))
    }
}
