//! Double-double arithmetic (about 32 significant digits) and a reference
//! condensate propagator built on it, for finite differences whose
//! cancellation would swamp an `f64` evaluation.

use std::ops::{Add, Mul, Neg, Sub};

use ism::linalg::C64;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    (s, (a - (s - v)) + (b - v))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const PI: Dd = Dd {
        hi: std::f64::consts::PI,
        lo: 1.2246467991473532e-16,
    };

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let (s, t) = two_sum(self.hi, -p);
        let r = s + (t - e + self.lo);
        let q2 = r / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    pub fn gt(self, other: Dd) -> bool {
        (self - other).hi > 0.0
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dc {
    pub re: Dd,
    pub im: Dd,
}

impl Dc {
    pub fn from_c64(z: C64) -> Self {
        Dc {
            re: Dd::from_f64(z.re),
            im: Dd::from_f64(z.im),
        }
    }

    pub fn norm_sqr(self) -> Dd {
        self.re * self.re + self.im * self.im
    }

    pub fn scale(self, s: Dd) -> Dc {
        Dc {
            re: self.re * s,
            im: self.im * s,
        }
    }
}

impl Add for Dc {
    type Output = Dc;
    fn add(self, b: Dc) -> Dc {
        Dc {
            re: self.re + b.re,
            im: self.im + b.im,
        }
    }
}

impl Mul for Dc {
    type Output = Dc;
    fn mul(self, b: Dc) -> Dc {
        Dc {
            re: self.re * b.re - self.im * b.im,
            im: self.re * b.im + self.im * b.re,
        }
    }
}

/// `e^{iθ}`: Taylor series on `θ/2^k` with `|θ/2^k| ≤ 1/8`, squared back.
pub fn expi(theta: Dd) -> Dc {
    let mut k = 0;
    let mut x = theta;
    while x.hi.abs() > 0.125 {
        x = x * 0.5;
        k += 1;
    }
    let mut term = Dc {
        re: Dd::from_f64(1.0),
        im: Dd::ZERO,
    };
    let mut sum = term;
    for n in 1..24 {
        // term ← term · i x / n
        term = Dc {
            re: (-(term.im * x)).div_f64(n as f64),
            im: (term.re * x).div_f64(n as f64),
        };
        sum = sum + term;
    }
    for _ in 0..k {
        sum = sum * sum;
    }
    sum
}

/// Strang-split condensate `e^{-iτK/2} e^{-iτ(V(λ)+g|φ|²)} e^{-iτK/2}` on
/// a periodic grid with the split-trap potential, every operation in
/// double-double arithmetic from the same `f64` inputs.
pub struct Condensate {
    /// First column of the circulant kinetic half step.
    half_kinetic: Vec<Dc>,
    xs: Vec<f64>,
    d: f64,
    g: f64,
    tau: f64,
}

impl Condensate {
    /// `symbol[m]` is the kinetic eigenvalue of Fourier mode `m` in FFT order.
    pub fn new(xs: &[f64], symbol: &[f64], d: f64, g: f64, tau: f64) -> Self {
        let n = xs.len();
        let s = 0.5 * tau;
        let mode_phase: Vec<Dc> = symbol.iter().map(|&k| expi(-Dd::from_f64(s) * k)).collect();
        let root = |q: usize| expi((Dd::PI * 2.0).div_f64(n as f64) * q as f64);
        let half_kinetic = (0..n)
            .map(|r| {
                let mut acc = Dc::default();
                for (m, ph) in mode_phase.iter().enumerate() {
                    acc = acc + *ph * root((m * r) % n);
                }
                acc.scale(Dd::from_f64(1.0).div_f64(n as f64))
            })
            .collect();
        Self {
            half_kinetic,
            xs: xs.to_vec(),
            d,
            g,
            tau,
        }
    }

    fn kinetic(&self, psi: &[Dc]) -> Vec<Dc> {
        let n = psi.len();
        (0..n)
            .map(|a| {
                let mut acc = Dc::default();
                for (b, z) in psi.iter().enumerate() {
                    acc = acc + self.half_kinetic[(a + n - b) % n] * *z;
                }
                acc
            })
            .collect()
    }

    fn potential(&self, x: f64, lambda: f64) -> Dd {
        let ld = Dd::from_f64(lambda) * self.d;
        let ax = Dd::from_f64(x.abs());
        if ax.gt(ld * 0.25) {
            let r = ax - ld * 0.5;
            r * r * 0.5
        } else {
            (ld * ld * 0.125 - Dd::from_f64(x) * x) * 0.5
        }
    }

    pub fn step(&self, lambda: f64, psi: &[Dc]) -> Vec<Dc> {
        let mut a = self.kinetic(psi);
        for (z, &x) in a.iter_mut().zip(&self.xs) {
            let theta = (self.potential(x, lambda) + z.norm_sqr() * self.g) * self.tau;
            *z = *z * expi(-theta);
        }
        self.kinetic(&a)
    }
}

/// `Re Σ conj(ψ_k) target_k`.
pub fn overlap(psi: &[Dc], target: &[C64]) -> Dd {
    psi.iter()
        .zip(target)
        .fold(Dd::ZERO, |acc, (z, t)| acc + z.re * t.re + z.im * t.im)
}
