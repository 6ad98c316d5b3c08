//! Flat periodic 3-torus of period 2π: metric, volume form, derivative operators, quadrature,
//! seeded random trigonometric fields and Taylor jets at grid points.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("lattice needs N >= 8, got {0}")]
    TooSmall(usize),
    #[error("mode cutoff {cutoff} exceeds N/3 = {limit}")]
    AliasingGuard { cutoff: usize, limit: usize },
    #[error("grid data has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signature {
    #[serde(alias = "euclid")]
    Euclidean,
    #[serde(alias = "lorentz")]
    Lorentzian,
}

impl Signature {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclid" | "euclidean" => Some(Self::Euclidean),
            "lorentz" | "lorentzian" => Some(Self::Lorentzian),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Euclidean => "euclid",
            Self::Lorentzian => "lorentz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivMode {
    #[serde(rename = "spectral")]
    Spectral,
    #[serde(rename = "central-2")]
    Central2,
    #[serde(rename = "central-4")]
    Central4,
}

impl DerivMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spectral" | "spectral-exact" => Some(Self::Spectral),
            "central-2" => Some(Self::Central2),
            "central-4" => Some(Self::Central4),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::Central2 => "central-2",
            Self::Central4 => "central-4",
        }
    }
}

/// Diagonal constant metric with `ε_123 = +√|det η|` and `ε_σ^{μν} = ε_{σαβ} η^{μα} η^{νβ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric3 {
    pub signature: Signature,
    pub eta: [f64; 3],
    pub eta_inv: [f64; 3],
    pub eps_low: [[[f64; 3]; 3]; 3],
    pub eps_cross: [[[f64; 3]; 3]; 3],
}

impl Metric3 {
    pub fn new(signature: Signature) -> Self {
        let eta: [f64; 3] = match signature {
            Signature::Euclidean => [1.0, 1.0, 1.0],
            Signature::Lorentzian => [-1.0, 1.0, 1.0],
        };
        let eta_inv = eta.map(|x| 1.0 / x);
        let vol = (eta[0] * eta[1] * eta[2]).abs().sqrt();
        let mut eps_low = [[[0.0; 3]; 3]; 3];
        let mut eps_cross = [[[0.0; 3]; 3]; 3];
        for s in 0..3 {
            for m in 0..3 {
                for n in 0..3 {
                    eps_low[s][m][n] = vol * crate::lie::levi_civita(s, m, n);
                    eps_cross[s][m][n] = eps_low[s][m][n] * eta_inv[m] * eta_inv[n];
                }
            }
        }
        Self {
            signature,
            eta,
            eta_inv,
            eps_low,
            eps_cross,
        }
    }

    /// Nonzero `ε_σ^{μν}` as `(σ, μ, ν, value)`.
    pub fn cross_nonzeros(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::with_capacity(6);
        for s in 0..3 {
            for m in 0..3 {
                for n in 0..3 {
                    if self.eps_cross[s][m][n] != 0.0 {
                        out.push((s, m, n, self.eps_cross[s][m][n]));
                    }
                }
            }
        }
        out
    }
}

/// Wavenumber of FFT bin `m` on `n` points; the Nyquist bin is reported as `+n/2`.
pub fn wavenumber(m: usize, n: usize) -> i64 {
    if 2 * m <= n {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Multiplier of `∂^a` on a bin: derivatives of the symmetric trigonometric interpolant.
pub fn deriv_factor(m: usize, n: usize, a: usize) -> Complex64 {
    if a == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if 2 * m == n && a % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let k = wavenumber(m, n) as f64;
    Complex64::new(0.0, k).powu(a as u32)
}

/// Multi-indices with `|α| ≤ order`, graded then lexicographically descending.
pub fn multi_indices(order: usize) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for deg in 0..=order {
        for a in (0..=deg).rev() {
            for b in (0..=deg - a).rev() {
                out.push([a as u8, b as u8, (deg - a - b) as u8]);
            }
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

pub fn alpha_factorial(alpha: [u8; 3]) -> f64 {
    alpha.iter().map(|&a| factorial(a as usize)).product()
}

#[derive(Clone)]
pub struct Lattice3 {
    n: usize,
    h: f64,
    metric: Metric3,
    mode: DerivMode,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Lattice3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice3")
            .field("n", &self.n)
            .field("signature", &self.metric.signature)
            .field("mode", &self.mode)
            .finish()
    }
}

pub fn make_lattice(n: usize, signature: Signature, mode: DerivMode) -> Result<Lattice3, GeometryError> {
    if n < 8 {
        return Err(GeometryError::TooSmall(n));
    }
    let mut planner = FftPlanner::new();
    Ok(Lattice3 {
        n,
        h: 2.0 * PI / n as f64,
        metric: Metric3::new(signature),
        mode,
        fft: planner.plan_fft_forward(n),
        ifft: planner.plan_fft_inverse(n),
    })
}

impl Lattice3 {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn points(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn metric(&self) -> &Metric3 {
        &self.metric
    }

    pub fn mode(&self) -> DerivMode {
        self.mode
    }

    pub fn with_mode(&self, mode: DerivMode) -> Self {
        let mut l = self.clone();
        l.mode = mode;
        l
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.points() as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn coords(&self, p: usize) -> [f64; 3] {
        let n = self.n;
        [
            (p / (n * n)) as f64 * self.h,
            ((p / n) % n) as f64 * self.h,
            (p % n) as f64 * self.h,
        ]
    }

    /// Sample a function of position at every grid point.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.points()).map(|p| f(self.coords(p))).collect()
    }

    fn fft_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.ifft } else { &self.fft };
        let stride = match axis {
            0 => n * n,
            1 => n,
            _ => 1,
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for base in 0..n * n {
            let start = match axis {
                0 => base,
                1 => (base / n) * n * n + base % n,
                _ => base * n,
            };
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[start + t * stride];
            }
            plan.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                data[start + t * stride] = *v;
            }
        }
    }

    /// Unnormalized forward 3-D transform of a real scalar grid.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        for axis in 0..3 {
            self.fft_axis(&mut data, axis, false);
        }
        data
    }

    /// Inverse transform including the `1/N³` normalization; returns the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        for axis in 0..3 {
            self.fft_axis(&mut data, axis, true);
        }
        let s = 1.0 / self.points() as f64;
        data.iter().map(|c| c.re * s).collect()
    }

    /// Apply `∂^α` to already-transformed data.
    pub fn spectral_apply(&self, hat: &[Complex64], alpha: [u8; 3]) -> Vec<f64> {
        let n = self.n;
        let fx: Vec<Vec<Complex64>> = (0..3)
            .map(|ax| (0..n).map(|m| deriv_factor(m, n, alpha[ax] as usize)).collect())
            .collect();
        let mut out = Vec::with_capacity(hat.len());
        for i in 0..n {
            for j in 0..n {
                let fij = fx[0][i] * fx[1][j];
                for k in 0..n {
                    out.push(hat[self.index(i, j, k)] * fij * fx[2][k]);
                }
            }
        }
        self.inverse_real(out)
    }

    fn stencil(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let n = self.n;
        let h = self.h;
        let shift = |p: usize, d: isize| -> usize {
            let (mut i, mut j, mut k) = (p / (n * n), (p / n) % n, p % n);
            let w = |x: usize| ((x as isize + d).rem_euclid(n as isize)) as usize;
            match axis {
                0 => i = w(i),
                1 => j = w(j),
                _ => k = w(k),
            }
            (i * n + j) * n + k
        };
        (0..values.len())
            .map(|p| match self.mode {
                DerivMode::Central4 => {
                    (-values[shift(p, 2)] + 8.0 * values[shift(p, 1)] - 8.0 * values[shift(p, -1)]
                        + values[shift(p, -2)])
                        / (12.0 * h)
                }
                _ => (values[shift(p, 1)] - values[shift(p, -1)]) / (2.0 * h),
            })
            .collect()
    }

    /// `∂_axis` of a scalar grid in the lattice's derivative mode.
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut alpha = [0u8; 3];
        alpha[axis] = 1;
        self.derivative_multi(values, alpha)
    }

    /// `∂^α` of a scalar grid; FD modes compose first-derivative stencils.
    pub fn derivative_multi(&self, values: &[f64], alpha: [u8; 3]) -> Vec<f64> {
        match self.mode {
            DerivMode::Spectral => self.spectral_apply(&self.forward(values), alpha),
            _ => {
                let mut out = values.to_vec();
                for (axis, &a) in alpha.iter().enumerate() {
                    for _ in 0..a {
                        out = self.stencil(&out, axis);
                    }
                }
                out
            }
        }
    }

    /// Uniform sum × h³ with compensated summation in a fixed order.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        neumaier_sum(values.iter().copied()) * self.cell_volume()
    }
}

pub fn neumaier_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Taylor coefficients `∂^α f / α!` at every grid point for `|α| ≤ order`,
/// laid out `[point][alpha][comp]`, plus the spectrum when the lattice is spectral.
#[derive(Clone, Debug)]
pub struct JetField {
    pub ncomp: usize,
    pub order: usize,
    pub alphas: Vec<[u8; 3]>,
    pub data: Vec<f64>,
    pub spectrum: Option<Vec<Vec<Complex64>>>,
}

impl JetField {
    pub fn from_samples(lattice: &Lattice3, samples: &[f64], ncomp: usize, order: usize) -> Result<Self, GeometryError> {
        let np = lattice.points();
        if samples.len() != np * ncomp {
            return Err(GeometryError::LengthMismatch {
                expected: np * ncomp,
                found: samples.len(),
            });
        }
        let alphas = multi_indices(order);
        let na = alphas.len();
        let mut data = vec![0.0; np * na * ncomp];
        let mut spectrum = Vec::new();
        for c in 0..ncomp {
            let comp: Vec<f64> = (0..np).map(|p| samples[p * ncomp + c]).collect();
            let hat = (lattice.mode() == DerivMode::Spectral).then(|| lattice.forward(&comp));
            for (ai, &alpha) in alphas.iter().enumerate() {
                let d = match &hat {
                    Some(h) => lattice.spectral_apply(h, alpha),
                    None => lattice.derivative_multi(&comp, alpha),
                };
                let inv = 1.0 / alpha_factorial(alpha);
                for p in 0..np {
                    data[(p * na + ai) * ncomp + c] = if ai == 0 { comp[p] } else { d[p] * inv };
                }
            }
            if let Some(h) = hat {
                spectrum.push(h);
            }
        }
        Ok(Self {
            ncomp,
            order,
            alphas,
            data,
            spectrum: (!spectrum.is_empty()).then_some(spectrum),
        })
    }

    pub fn at(&self, point: usize, alpha_index: usize) -> &[f64] {
        let na = self.alphas.len();
        let start = (point * na + alpha_index) * self.ncomp;
        &self.data[start..start + self.ncomp]
    }

    /// Taylor coefficients at an arbitrary position from the spectrum, `[alpha][comp]`.
    pub fn at_position(&self, lattice: &Lattice3, x: [f64; 3], order: usize) -> Option<Vec<Vec<f64>>> {
        let sp = self.spectrum.as_ref()?;
        let n = lattice.n();
        let alphas = multi_indices(order);
        let phase = |ax: usize| -> Vec<Complex64> {
            (0..n)
                .map(|m| {
                    let k = wavenumber(m, n) as f64;
                    let th = if 2 * m == n { 0.0 } else { k * x[ax] };
                    Complex64::new(th.cos(), th.sin())
                })
                .collect()
        };
        let (p0, p1, p2) = (phase(0), phase(1), phase(2));
        // the Nyquist bin stands for the symmetric split between ±n/2
        let nyq = |ax: usize, a: usize| -> Complex64 {
            let half = (n / 2) as f64;
            let th = half * x[ax];
            let plus = Complex64::new(0.0, half).powu(a as u32) * Complex64::new(th.cos(), th.sin());
            let minus = Complex64::new(0.0, -half).powu(a as u32) * Complex64::new(th.cos(), -th.sin());
            (plus + minus) * 0.5
        };
        let fac = |m: usize, ax: usize, a: usize, ph: &[Complex64]| -> Complex64 {
            if 2 * m == n {
                nyq(ax, a)
            } else {
                let k = wavenumber(m, n) as f64;
                Complex64::new(0.0, k).powu(a as u32) * ph[m]
            }
        };
        let scale = 1.0 / lattice.points() as f64;
        let mut out = Vec::with_capacity(alphas.len());
        for alpha in alphas {
            let f0: Vec<Complex64> = (0..n).map(|m| fac(m, 0, alpha[0] as usize, &p0)).collect();
            let f1: Vec<Complex64> = (0..n).map(|m| fac(m, 1, alpha[1] as usize, &p1)).collect();
            let f2: Vec<Complex64> = (0..n).map(|m| fac(m, 2, alpha[2] as usize, &p2)).collect();
            let inv = scale / alpha_factorial(alpha);
            let vals = sp
                .iter()
                .map(|hat| {
                    let mut s = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let fij = f0[i] * f1[j];
                            let row = &hat[(i * n + j) * n..(i * n + j + 1) * n];
                            let mut acc = Complex64::new(0.0, 0.0);
                            for k in 0..n {
                                acc += row[k] * f2[k];
                            }
                            s += acc * fij;
                        }
                    }
                    s.re * inv
                })
                .collect();
            out.push(vals);
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i32; 3],
    /// `(cos, sin)` coefficient per component.
    pub coeffs: Vec<(f64, f64)>,
}

/// Finite sum of real trigonometric modes per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub ncomp: usize,
    pub modes: Vec<Mode>,
}

impl SpectralField {
    pub fn zero(ncomp: usize) -> Self {
        Self {
            ncomp,
            modes: Vec::new(),
        }
    }

    pub fn max_wavevector(&self) -> usize {
        self.modes
            .iter()
            .map(|m| m.k.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// `∂^α` of every component at `x`.
    pub fn eval_derivative(&self, x: [f64; 3], alpha: [u8; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncomp];
        let order: u8 = alpha.iter().sum();
        for m in &self.modes {
            let kk = m.k.map(|v| v as f64);
            let th = kk[0] * x[0] + kk[1] * x[1] + kk[2] * x[2];
            let pref: f64 = (0..3).map(|a| kk[a].powi(alpha[a] as i32)).product();
            // d^r/dθ^r of cos and sin
            let (dc, ds) = match order % 4 {
                0 => (th.cos(), th.sin()),
                1 => (-th.sin(), th.cos()),
                2 => (-th.cos(), -th.sin()),
                _ => (th.sin(), -th.cos()),
            };
            for (c, (a, b)) in m.coeffs.iter().enumerate() {
                out[c] += pref * (a * dc + b * ds);
            }
        }
        out
    }

    pub fn eval(&self, x: [f64; 3]) -> Vec<f64> {
        self.eval_derivative(x, [0, 0, 0])
    }

    /// Grid samples `[point][comp]`.
    pub fn samples(&self, lattice: &Lattice3) -> Vec<f64> {
        self.derivative_samples(lattice, [0, 0, 0])
    }

    /// Analytic `∂^α` at grid points, `[point][comp]`.
    pub fn derivative_samples(&self, lattice: &Lattice3, alpha: [u8; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(lattice.points() * self.ncomp);
        for p in 0..lattice.points() {
            out.extend(self.eval_derivative(lattice.coords(p), alpha));
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            ncomp: self.ncomp,
            modes: self
                .modes
                .iter()
                .map(|m| Mode {
                    k: m.k,
                    coeffs: m.coeffs.iter().map(|(a, b)| (a * s, b * s)).collect(),
                })
                .collect(),
        }
    }
}

/// Derivative of a spectral field along one axis at grid points, per the lattice mode.
pub fn derivative(lattice: &Lattice3, field: &SpectralField, axis: usize) -> Vec<f64> {
    let mut alpha = [0u8; 3];
    alpha[axis] = 1;
    match lattice.mode() {
        DerivMode::Spectral => field.derivative_samples(lattice, alpha),
        _ => {
            let s = field.samples(lattice);
            let nc = field.ncomp;
            let mut out = vec![0.0; s.len()];
            for c in 0..nc {
                let comp: Vec<f64> = s.iter().skip(c).step_by(nc).copied().collect();
                for (p, v) in lattice.derivative(&comp, axis).into_iter().enumerate() {
                    out[p * nc + c] = v;
                }
            }
            out
        }
    }
}

/// Seeded field with wavevectors `|k|∞ ≤ cutoff`, rescaled so the largest pointwise
/// Euclidean norm of the component vector on the grid equals `amplitude`.
pub fn random_modes(
    lattice: &Lattice3,
    ncomp: usize,
    seed: u64,
    cutoff: usize,
    amplitude: f64,
) -> Result<SpectralField, GeometryError> {
    let limit = lattice.n() / 3;
    if cutoff > limit {
        return Err(GeometryError::AliasingGuard { cutoff, limit });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cutoff as i32;
    let mut modes = Vec::new();
    for kx in -c..=c {
        for ky in -c..=c {
            for kz in -c..=c {
                let k = [kx, ky, kz];
                // one representative of ±k
                if k.iter().find(|&&v| v != 0).is_some_and(|&v| v < 0) {
                    continue;
                }
                let zero = k == [0, 0, 0];
                let coeffs = (0..ncomp)
                    .map(|_| {
                        let a = rng.gen_range(-1.0..1.0);
                        let b = if zero { 0.0 } else { rng.gen_range(-1.0..1.0) };
                        (a, b)
                    })
                    .collect();
                modes.push(Mode { k, coeffs });
            }
        }
    }
    let field = SpectralField { ncomp, modes };
    let samples = field.samples(lattice);
    let peak = samples
        .chunks(ncomp)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let s = if peak > 0.0 { amplitude / peak } else { 0.0 };
    Ok(field.scaled(s))
}

/// Random Lie-algebra-valued covector field: `3·dim` components ordered `(a, μ)`.
pub fn random_gauge_modes(
    lattice: &Lattice3,
    dim: usize,
    seed: u64,
    cutoff: usize,
    amplitude: f64,
) -> Result<SpectralField, GeometryError> {
    random_modes(lattice, 3 * dim, seed, cutoff, amplitude)
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub algebra: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub grid: usize,
    pub signature: String,
    pub deriv_mode: String,
    pub layout: String,
    pub encoding: String,
}

pub const SNAPSHOT_LAYOUT: &str = "point-major, then a=1..n, then μ=1..3";
pub const SNAPSHOT_ENCODING: &str = "little-endian 64-bit floats, base64";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("malformed data block: {0}")]
    Data(String),
}

impl SnapshotHeader {
    pub fn new(algebra: &str, n: usize, lattice: &Lattice3) -> Self {
        Self {
            algebra: algebra.to_string(),
            n,
            grid: lattice.n(),
            signature: lattice.metric().signature.as_str().into(),
            deriv_mode: lattice.mode().as_str().into(),
            layout: SNAPSHOT_LAYOUT.into(),
            encoding: SNAPSHOT_ENCODING.into(),
        }
    }
}

/// Header JSON on the first line, base64 data block on the second.
pub fn write_snapshot(w: &mut impl std::io::Write, header: &SnapshotHeader, data: &[f64]) -> Result<(), SnapshotError> {
    use base64::Engine;
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    writeln!(w, "{}", serde_json::to_string(header)?)?;
    writeln!(w, "{}", base64::engine::general_purpose::STANDARD.encode(bytes))?;
    Ok(())
}

pub fn read_snapshot(r: &mut impl std::io::BufRead) -> Result<(SnapshotHeader, Vec<f64>), SnapshotError> {
    use base64::Engine;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim())?;
    let mut block = String::new();
    r.read_to_string(&mut block)?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(block.trim())
        .map_err(|e| SnapshotError::Data(e.to_string()))?;
    let expected = header.grid.pow(3) * header.n * 3 * 8;
    if bytes.len() != expected {
        return Err(SnapshotError::Data(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize, mode: DerivMode) -> Lattice3 {
        make_lattice(n, Signature::Euclidean, mode).unwrap()
    }

    #[test]
    fn lattice_basics() {
        let l = lat(16, DerivMode::Spectral);
        assert!((l.cell_volume() - (2.0 * PI / 16.0).powi(3)).abs() < 1e-15);
        assert!((l.volume() - (2.0 * PI).powi(3)).abs() < 1e-12);
        assert!(matches!(
            make_lattice(7, Signature::Euclidean, DerivMode::Spectral),
            Err(GeometryError::TooSmall(7))
        ));
    }

    #[test]
    fn metric_tensors() {
        let e = Metric3::new(Signature::Euclidean);
        assert_eq!(e.eps_cross[0][1][2], 1.0);
        let l = Metric3::new(Signature::Lorentzian);
        assert_eq!(l.eps_cross[0][1][2], 1.0);
        assert_eq!(l.eps_cross[1][2][0], -1.0);
        assert_eq!(l.eps_cross[2][0][1], -1.0);
        for m in [e, l] {
            for i in 0..3 {
                assert_eq!(m.eta[i] * m.eta_inv[i], 1.0);
                for j in 0..3 {
                    for k in 0..3 {
                        assert_eq!(m.eps_cross[i][j][k], -m.eps_cross[i][k][j]);
                        assert_eq!(m.eps_low[i][j][k], -m.eps_low[j][i][k]);
                        assert_eq!(m.eps_low[i][j][k], m.eps_low[j][k][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let l = lat(16, DerivMode::Spectral);
        let f = l.sample(|x| x[0].sin());
        let d = l.derivative(&f, 0);
        let exact = l.sample(|x| x[0].cos());
        let err = d.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-14, "{err}");
        let field = SpectralField {
            ncomp: 1,
            modes: vec![Mode { k: [1, 0, 0], coeffs: vec![(0.0, 1.0)] }],
        };
        let d = derivative(&l, &field, 0);
        let err = d.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-14);
    }

    #[test]
    fn curl_grad_vanishes() {
        for mode in [DerivMode::Spectral, DerivMode::Central2] {
            let l = lat(12, mode);
            let f = l.sample(|x| (x[0] + 2.0 * x[1]).sin() * x[2].cos() + (3.0 * x[2]).sin());
            let g: Vec<Vec<f64>> = (0..3).map(|a| l.derivative(&f, a)).collect();
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let c1 = l.derivative(&g[b], a);
                let c2 = l.derivative(&g[a], b);
                let err = c1.iter().zip(&c2).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(err <= 1e-12, "{mode:?} {err}");
            }
        }
    }

    #[test]
    fn central2_converges_at_slope_two() {
        let err = |n: usize| {
            let l = lat(n, DerivMode::Central2);
            let f = l.sample(|x| (3.0 * x[0]).sin());
            let d = l.derivative(&f, 0);
            let e = l.sample(|x| 3.0 * (3.0 * x[0]).cos());
            d.iter().zip(&e).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let slope = (err(32) / err(64)).log2();
        assert!((slope - 2.0).abs() <= 0.1, "{slope}");
    }

    #[test]
    fn integration() {
        let l = lat(16, DerivMode::Spectral);
        assert!((l.integrate(&vec![1.0; l.points()]) - (2.0 * PI).powi(3)).abs() < 1e-11);
        assert!(l.integrate(&l.sample(|x| x[0].sin())).abs() <= 1e-14);
        let f = l.sample(|x| (x[0] + x[1]).cos() * (2.0 * x[2]).sin() + x[1].sin());
        assert!(l.integrate(&l.derivative(&f, 0)).abs() <= 1e-13);
    }

    #[test]
    fn jets_match_analytic_derivatives() {
        let l = lat(12, DerivMode::Spectral);
        let field = random_modes(&l, 2, 4, 2, 1.0).unwrap();
        let jets = JetField::from_samples(&l, &field.samples(&l), 2, 3).unwrap();
        let p = 77;
        for (ai, &alpha) in jets.alphas.iter().enumerate() {
            let exact = field.eval_derivative(l.coords(p), alpha);
            for c in 0..2 {
                let want = exact[c] / alpha_factorial(alpha);
                assert!((jets.at(p, ai)[c] - want).abs() < 1e-12, "{alpha:?}");
            }
        }
        let x = [0.31, 2.2, 4.05];
        let off = jets.at_position(&l, x, 2).unwrap();
        for (ai, alpha) in multi_indices(2).into_iter().enumerate() {
            let exact = field.eval_derivative(x, alpha);
            for c in 0..2 {
                assert!((off[ai][c] - exact[c] / alpha_factorial(alpha)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nyquist_interpolant_is_consistent() {
        let l = lat(8, DerivMode::Spectral);
        let f = l.sample(|x| (4.0 * x[0]).cos());
        let jets = JetField::from_samples(&l, &f, 1, 2).unwrap();
        let x = [0.37, 0.0, 0.0];
        let off = jets.at_position(&l, x, 2).unwrap();
        assert!((off[0][0] - (4.0 * x[0]).cos()).abs() < 1e-12);
        // second x-derivative of cos(4x) is -16 cos(4x); Taylor coefficient halves it
        let idx = multi_indices(2).iter().position(|a| *a == [2, 0, 0]).unwrap();
        assert!((off[idx][0] + 8.0 * (4.0 * x[0]).cos()).abs() < 1e-11);
    }

    #[test]
    fn random_fields() {
        let l = lat(16, DerivMode::Spectral);
        let a = random_gauge_modes(&l, 3, 42, 2, 0.3).unwrap();
        let b = random_gauge_modes(&l, 3, 42, 2, 0.3).unwrap();
        assert_eq!(a, b);
        let peak = a.samples(&l).chunks(9).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        assert!((peak - 0.3).abs() < 1e-14);
        let z = random_gauge_modes(&l, 3, 1, 2, 0.0).unwrap();
        assert!(z.samples(&l).iter().all(|x| *x == 0.0));
        assert!(matches!(random_modes(&l, 1, 0, 6, 1.0), Err(GeometryError::AliasingGuard { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = gauss_legendre(8, 0.0, 2.0);
        let s: f64 = q.iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 2f64.powi(8) / 8.0).abs() < 1e-12);
        let s: f64 = q.iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn snapshot_roundtrip() {
        let l = lat(8, DerivMode::Spectral);
        let data: Vec<f64> = (0..l.points() * 9).map(|i| (i as f64).sin()).collect();
        let header = SnapshotHeader::new("su2", 3, &l);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &header, &data).unwrap();
        let (h, d) = read_snapshot(&mut std::io::Cursor::new(buf)).unwrap();
        assert_eq!(h, header);
        assert_eq!(d, data);
        let text = serde_json::to_string(&header).unwrap();
        assert!(text.contains("\"N\":8"));
    }

    proptest::proptest! {
        #[test]
        fn discrete_divergence_theorem(seed in 0u64..500) {
            let l = lat(10, DerivMode::Spectral);
            let x = random_modes(&l, 3, seed, 3, 1.0).unwrap();
            let s = x.samples(&l);
            let mut div = vec![0.0; l.points()];
            for c in 0..3 {
                let comp: Vec<f64> = s.iter().skip(c).step_by(3).copied().collect();
                for (p, v) in l.derivative(&comp, c).into_iter().enumerate() {
                    div[p] += v;
                }
            }
            let norm = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            proptest::prop_assert!(l.integrate(&div).abs() <= 1e-12 * norm);
        }
    }
}
