//! Closed forms for the bubble family U_{μ,ξ}, its derivative modes and the
//! identities they satisfy.
//!
//! Scaling conventions: a field φ built at (μ, ξ) = (1, 0) is carried to
//! general parameters as φ_{;μ,ξ}(x) = μ^{-(N-2)/2} φ((x-ξ)/μ) (U, Z, Z̄) or
//! φ^μ_{;ξ}(x) = μ^{-(N+2)/2} φ((x-ξ)/μ) (H, H̃).
//!
//! ω_N denotes the volume of the unit ball, 2π^{N/2}/(N Γ(N/2)); the Newton
//! potential is normalised by N(N-2)ω_N.

use crate::error::{Error, Result};
use crate::special::{gamma, gauss_legendre, sphere_area};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Serialize)]
pub struct ProblemParams {
    pub n: usize,
    pub lambda: f64,
    pub p: f64,
    pub alpha: f64,
    /// Coefficient in I_λ[U^p] = A U^{λ/(N-2)}.
    pub a_const: f64,
    /// λ > min(N, 4): outside the range covered by the existence theorem.
    pub out_of_theorem: bool,
}

impl ProblemParams {
    pub fn new(n: usize, lambda: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain(format!("dimension N={n} must be at least 3")));
        }
        let nf = n as f64;
        if !(lambda > 0.0 && lambda < nf) {
            return Err(Error::Domain(format!("λ={lambda} must lie in (0, {n})")));
        }
        let half = nf / 2.0;
        let p = (2.0 * nf - lambda) / (nf - 2.0);
        let alpha = nf * (nf - 2.0) * gamma(nf - lambda / 2.0)
            / (PI.powf(half) * gamma((nf - lambda) / 2.0));
        let a_const = PI.powf(half) * gamma((nf - lambda) / 2.0) / gamma((2.0 * nf - lambda) / 2.0);
        Ok(ProblemParams {
            n,
            lambda,
            p,
            alpha,
            a_const,
            out_of_theorem: lambda > nf.min(4.0),
        })
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// Critical Sobolev power (N+2)/(N-2).
    pub fn crit(&self) -> f64 {
        (self.nf() + 2.0) / (self.nf() - 2.0)
    }

    /// Relative defect of α·A = N(N-2).
    pub fn alpha_a_defect(&self) -> f64 {
        let want = self.nf() * (self.nf() - 2.0);
        (self.alpha * self.a_const - want).abs() / want
    }

    /// λ ≥ N-1 puts a non-integrable-looking singularity on the kernel diagonal.
    pub fn singular_regime(&self) -> bool {
        self.lambda >= self.nf() - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleParams {
    pub mu: f64,
    pub xi: Vec<f64>,
}

impl BubbleParams {
    pub fn new(mu: f64, xi: Vec<f64>) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("μ={mu} must be positive")));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("ξ must be finite".into()));
        }
        Ok(BubbleParams { mu, xi })
    }

    pub fn unit(n: usize) -> Self {
        BubbleParams { mu: 1.0, xi: vec![0.0; n] }
    }

    pub fn radial(n: usize, mu: f64) -> Result<Self> {
        Self::new(mu, vec![0.0; n])
    }

    /// (x - ξ)/μ
    pub fn pullback(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.xi).map(|(a, b)| (a - b) / self.mu).collect()
    }

    pub fn is_centered(&self) -> bool {
        self.xi.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeIndex(usize);

impl ModeIndex {
    pub fn new(j: usize, n: usize) -> Result<Self> {
        if j > n {
            return Err(Error::Domain(format!("mode index {j} exceeds N={n}")));
        }
        Ok(ModeIndex(j))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// ⟨x⟩ = √(1+|x|²)
pub fn japanese(x: &[f64]) -> f64 {
    (1.0 + norm2(x)).sqrt()
}

/// Profiles at (μ, ξ) = (1, 0), as functions of the point y.
pub mod unit {
    use super::*;

    pub fn u(n: usize, y: &[f64]) -> f64 {
        japanese(y).powf(-(n as f64 - 2.0))
    }

    pub fn z(n: usize, j: usize, y: &[f64]) -> f64 {
        let nf = n as f64;
        let jp2 = 1.0 + norm2(y);
        if j == 0 {
            0.5 * (nf - 2.0) * (norm2(y) - 1.0) * jp2.powf(-nf / 2.0)
        } else {
            (nf - 2.0) * y[j - 1] * jp2.powf(-nf / 2.0)
        }
    }

    pub fn grad_z(n: usize, j: usize, y: &[f64]) -> Vec<f64> {
        let nf = n as f64;
        let s = norm2(y);
        let jp2 = 1.0 + s;
        let a = jp2.powf(-nf / 2.0);
        let b = jp2.powf(-nf / 2.0 - 1.0);
        (0..n)
            .map(|i| {
                if j == 0 {
                    0.5 * (nf - 2.0) * (2.0 * y[i] * a - nf * (s - 1.0) * y[i] * b)
                } else {
                    let d = if i == j - 1 { 1.0 } else { 0.0 };
                    (nf - 2.0) * (d * a - nf * y[j - 1] * y[i] * b)
                }
            })
            .collect()
    }

    pub fn h(n: usize, j: usize, y: &[f64]) -> f64 {
        (1.0 + norm2(y)).powi(-2) * z(n, j, y)
    }

    pub fn grad_h(n: usize, j: usize, y: &[f64]) -> Vec<f64> {
        let nf = n as f64;
        let s = norm2(y);
        let jp2 = 1.0 + s;
        let a = jp2.powf(-nf / 2.0 - 2.0);
        let b = jp2.powf(-nf / 2.0 - 3.0);
        (0..n)
            .map(|i| {
                if j == 0 {
                    0.5 * (nf - 2.0) * (2.0 * y[i] * a - (nf + 4.0) * (s - 1.0) * y[i] * b)
                } else {
                    let d = if i == j - 1 { 1.0 } else { 0.0 };
                    (nf - 2.0) * (d * a - (nf + 4.0) * y[j - 1] * y[i] * b)
                }
            })
            .collect()
    }

    /// Z̄_{m,j}: derivative of Z_{m;μ,ξ} in μ (j = 0) or ξ_j at (1, 0).
    pub fn zbar(n: usize, m: usize, j: usize, y: &[f64]) -> f64 {
        let nf = n as f64;
        let s = norm2(y);
        let jp2 = 1.0 + s;
        let c = nf * (nf - 2.0);
        match (m, j) {
            (0, 0) => {
                0.25 * c * (s - 1.0).powi(2) * jp2.powf(-nf / 2.0 - 1.0)
                    - 0.5 * (nf - 2.0) * jp2.powf(-(nf - 2.0) / 2.0)
            }
            (0, j) => {
                0.5 * c * (s - 1.0) * y[j - 1] * jp2.powf(-nf / 2.0 - 1.0)
                    - (nf - 2.0) * y[j - 1] * jp2.powf(-nf / 2.0)
            }
            (m, 0) => 0.5 * c * (s - 1.0) * y[m - 1] * jp2.powf(-nf / 2.0 - 1.0),
            (m, j) => {
                let d = if m == j { 1.0 } else { 0.0 };
                -(nf - 2.0) * d * jp2.powf(-nf / 2.0) + c * y[m - 1] * y[j - 1] * jp2.powf(-nf / 2.0 - 1.0)
            }
        }
    }

    /// H̃_{m,j}: derivative of H^μ_{m;ξ} in μ (j = 0) or ξ_j at (1, 0).
    pub fn htilde(n: usize, m: usize, j: usize, y: &[f64]) -> f64 {
        let g = grad_h(n, m, y);
        if j == 0 {
            let radial: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            -0.5 * (n as f64 + 2.0) * h(n, m, y) - radial
        } else {
            -g[j - 1]
        }
    }
}

fn x_scale(params: &ProblemParams, b: &BubbleParams) -> f64 {
    b.mu.powf(-(params.nf() - 2.0) / 2.0)
}

fn y_scale(params: &ProblemParams, b: &BubbleParams) -> f64 {
    b.mu.powf(-(params.nf() + 2.0) / 2.0)
}

pub fn bubble_value(params: &ProblemParams, b: &BubbleParams, x: &[f64]) -> f64 {
    x_scale(params, b) * unit::u(params.n, &b.pullback(x))
}

pub fn z_mode(params: &ProblemParams, j: ModeIndex, b: &BubbleParams, x: &[f64]) -> f64 {
    x_scale(params, b) * unit::z(params.n, j.get(), &b.pullback(x))
}

pub fn h_mode(params: &ProblemParams, j: ModeIndex, b: &BubbleParams, x: &[f64]) -> f64 {
    y_scale(params, b) * unit::h(params.n, j.get(), &b.pullback(x))
}

pub fn zbar_mode(params: &ProblemParams, m: ModeIndex, j: ModeIndex, x: &[f64]) -> f64 {
    unit::zbar(params.n, m.get(), j.get(), x)
}

pub fn htilde_mode(params: &ProblemParams, m: ModeIndex, j: ModeIndex, x: &[f64]) -> f64 {
    unit::htilde(params.n, m.get(), j.get(), x)
}

/// Z̄_{m,j;μ,ξ}
pub fn zbar_scaled(params: &ProblemParams, m: usize, j: usize, b: &BubbleParams, x: &[f64]) -> f64 {
    x_scale(params, b) * unit::zbar(params.n, m, j, &b.pullback(x))
}

/// H̃^μ_{m,j;ξ}
pub fn htilde_scaled(params: &ProblemParams, m: usize, j: usize, b: &BubbleParams, x: &[f64]) -> f64 {
    y_scale(params, b) * unit::htilde(params.n, m, j, &b.pullback(x))
}

/// I_λ[U^p_{μ,ξ}](x) = A U_{μ,ξ}(x)^{λ/(N-2)}
pub fn riesz_closed_form(params: &ProblemParams, b: &BubbleParams, x: &[f64]) -> f64 {
    params.a_const * bubble_value(params, b, x).powf(params.lambda / (params.nf() - 2.0))
}

/// ΔZ_j = -N(N+2) H_j at (μ, ξ) = (1, 0).
pub fn laplacian_z(params: &ProblemParams, j: ModeIndex, x: &[f64]) -> f64 {
    let nf = params.nf();
    -nf * (nf + 2.0) * unit::h(params.n, j.get(), x)
}

/// ∫_0^∞ f(r) dr by Gauss–Legendre in t with r = t/(1-t).
fn half_line(f: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_legendre(400).mapped(0.0, 1.0);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(t, w)| {
            let r = t / (1.0 - t);
            w * f(r) / ((1.0 - t) * (1.0 - t))
        })
        .sum()
}

/// ∫ Z_j H_j over R^N, reduced to a single radial integral.
pub fn mode_pairing(params: &ProblemParams, j: ModeIndex) -> f64 {
    let n = params.n;
    let nf = params.nf();
    let area = sphere_area(n);
    let e = -(2.0 * nf + 4.0) / 2.0;
    if j.get() == 0 {
        let c = 0.25 * (nf - 2.0).powi(2);
        c * area * half_line(|r| (r * r - 1.0).powi(2) * (1.0 + r * r).powf(e) * r.powf(nf - 1.0))
    } else {
        let c = (nf - 2.0).powi(2) / nf;
        c * area * half_line(|r| r * r * (1.0 + r * r).powf(e) * r.powf(nf - 1.0))
    }
}

/// ∫ Z_j H_m: the diagonal value for j = m, zero otherwise by parity.
pub fn mode_pairing_pair(params: &ProblemParams, j: ModeIndex, m: ModeIndex) -> f64 {
    if j == m {
        mode_pairing(params, j)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expansion {
    U,
    Z(usize),
    H(usize),
}

/// Deterministic probe points: a spiral through radii 0..8.
pub fn probe_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    (0..count)
        .map(|i| {
            let r = 8.0 * (i as f64 / count as f64).powi(2);
            let mut v: Vec<f64> = (0..n)
                .map(|d| ((i as f64 + 1.0) * golden * (d as f64 + 1.0) * 2.399).sin())
                .collect();
            let len = norm2(&v).sqrt().max(1e-12);
            v.iter_mut().for_each(|c| *c *= r / len);
            v
        })
        .collect()
}

/// Sup over the probe set of |exact − first-order expansion about b0| / weight.
pub fn bubble_expansion_error(
    params: &ProblemParams,
    b0: &BubbleParams,
    b: &BubbleParams,
    which: Expansion,
) -> Result<f64> {
    if b0.mu <= 0.0 {
        return Err(Error::Domain("base μ must be positive".into()));
    }
    let n = params.n;
    let dmu = (b.mu - b0.mu) / b0.mu;
    let dxi: Vec<f64> = b.xi.iter().zip(&b0.xi).map(|(a, c)| (a - c) / b0.mu).collect();
    let mut worst = 0.0f64;
    for x in probe_points(n, 64) {
        let x: Vec<f64> = x.iter().zip(&b0.xi).map(|(a, c)| a * b0.mu + c).collect();
        let u0 = bubble_value(params, b0, &x);
        let (exact, first, weight) = match which {
            Expansion::U => {
                let mut lin = u0 + z_mode(params, ModeIndex(0), b0, &x) * dmu;
                for (i, d) in dxi.iter().enumerate() {
                    lin += z_mode(params, ModeIndex(i + 1), b0, &x) * d;
                }
                (bubble_value(params, b, &x), lin, u0)
            }
            Expansion::Z(j) => {
                let mut lin = z_mode(params, ModeIndex(j), b0, &x) + zbar_scaled(params, j, 0, b0, &x) * dmu;
                for (i, d) in dxi.iter().enumerate() {
                    lin += zbar_scaled(params, j, i + 1, b0, &x) * d;
                }
                (z_mode(params, ModeIndex(j), b, &x), lin, u0)
            }
            Expansion::H(m) => {
                let mut lin = h_mode(params, ModeIndex(m), b0, &x) + htilde_scaled(params, m, 0, b0, &x) * dmu;
                for (i, d) in dxi.iter().enumerate() {
                    lin += htilde_scaled(params, m, i + 1, b0, &x) * d;
                }
                (h_mode(params, ModeIndex(m), b, &x), lin, u0.powf(params.crit()))
            }
        };
        worst = worst.max((exact - first).abs() / weight);
    }
    Ok(worst)
}
