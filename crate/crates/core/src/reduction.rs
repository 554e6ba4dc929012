//! Finite-dimensional reduction: the energy along perturbed bubbles, the
//! reduced function Υ(μ, ξ) = ((N−2)/(2N))∫k U_{μ,ξ}^{2N/(N−2)}, its
//! critical points and degree, and the final solve of c_ε(μ) = 0.

use crate::bubble::{unit, BubbleParams, ProblemParams};
use crate::error::{Error, Result};
use crate::grid::{build_sphere_rule, radial_sum, FullGrid, GridFunction, RadialGrid};
use crate::kcheck::{eval_k, PotentialSpec};
use crate::linop::LinearContext;
use crate::nonlinear::{
    contraction_solve, equation_rhs, phi_parameter_derivative, residual_check, ContractionOptions, PerturbedSolution,
    ResidualReport,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Max,
    Min,
    Saddle,
    Degenerate,
}

/// Eigenvalues within this distance of zero make a point degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

pub fn classify(hessian: &DMatrix<f64>) -> (Classification, Vec<f64>) {
    let eig = SymmetricEigen::new(hessian.clone());
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    let class = if ev.iter().any(|e| e.abs() <= DEGENERACY_TOL || !e.is_finite()) {
        Classification::Degenerate
    } else if ev.iter().all(|e| *e < 0.0) {
        Classification::Max
    } else if ev.iter().all(|e| *e > 0.0) {
        Classification::Min
    } else {
        Classification::Saddle
    };
    (class, ev)
}

/// J_ε(u) from u and −Δu on the grid (radial u).
pub fn energy_from_parts(ctx: &LinearContext, u: &[f64], neg_lap_u: &[f64], eps: f64, k: &PotentialSpec) -> Result<f64> {
    let pp = &ctx.params;
    let nf = pp.nf();
    let n = ctx.dim();
    let up: Vec<f64> = u.iter().map(|v| v.max(0.0).powf(pp.p)).collect();
    let iup = ctx.sector(0)?.riesz.apply(&up);
    let kp = crate::nonlinear::k_profile(&ctx.grid, k)?;
    let star = 2.0 * nf / (nf - 2.0);
    let grad: Vec<f64> = u.iter().zip(neg_lap_u).map(|(a, b)| a * b).collect();
    let hartree: Vec<f64> = iup.iter().zip(&up).map(|(a, b)| a * b).collect();
    let pert: Vec<f64> = u.iter().zip(&kp).map(|(v, kv)| kv * v.max(0.0).powf(star)).collect();
    Ok(0.5 * radial_sum(&ctx.grid, &grad, n) - pp.alpha / (2.0 * pp.p) * radial_sum(&ctx.grid, &hartree, n)
        - (nf - 2.0) / (2.0 * nf) * eps * radial_sum(&ctx.grid, &pert, n))
}

/// J_ε(U + φ). The gradient term is ∫u(−Δu) with −ΔU in closed form and −Δφ
/// read off the equation, −Δφ = N(φ) + εE(φ) − cH_0 + αpI_λ[W₁φ]W₁ + W₂φ.
pub fn energy(ctx: &LinearContext, sol: &PerturbedSolution, k: &PotentialSpec) -> Result<f64> {
    let b = sol.bubble();
    let nf = ctx.params.nf();
    let coef = ctx.coefficients(&b);
    let rhs = equation_rhs(ctx, sol, k)?;
    let pot = ctx.potential_term(&sol.phi, &coef)?;
    let crit = (nf + 2.0) / (nf - 2.0);
    let n = ctx.n();
    let u: Vec<f64> = (0..n).map(|i| coef.u[i] + sol.phi.values[i]).collect();
    let lap: Vec<f64> =
        (0..n).map(|i| nf * (nf - 2.0) * coef.u[i].powf(crit) + rhs.values[i] + pot.values[i]).collect();
    energy_from_parts(ctx, &u, &lap, sol.eps, k)
}

/// j̄₀ = N(N−2)(1/2 − 1/(2p))∫U^{2N/(N−2)} in closed form.
pub fn bubble_energy(params: &ProblemParams) -> f64 {
    let nf = params.nf();
    // ∫U^{2N/(N−2)} = ∫(1+|y|²)^{−N} dy = |S^{N−1}| B(N/2, N/2)/2
    let integral = crate::special::sphere_area(params.n) * 0.5 * crate::special::beta(nf / 2.0, nf / 2.0);
    nf * (nf - 2.0) * (0.5 - 0.5 / params.p) * integral
}

/// Quadrature for Υ and its derivatives, in the variable y with x = μy + ξ.
pub struct Upsilon {
    pub params: ProblemParams,
    pub k: PotentialSpec,
    pub radial: Arc<RadialGrid>,
    pub full: FullGrid,
}

impl Upsilon {
    pub fn new(params: ProblemParams, k: PotentialSpec, radial: Arc<RadialGrid>, sphere_degree: usize) -> Result<Self> {
        k.validate()?;
        if k.dim != params.n {
            return Err(Error::Config(format!("potential dimension {} does not match N = {}", k.dim, params.n)));
        }
        let sphere = build_sphere_rule(params.n, sphere_degree)?;
        let full = FullGrid::new(radial.clone(), sphere);
        Ok(Upsilon { params, k, radial, full })
    }

    pub fn dim(&self) -> usize {
        self.params.n
    }

    /// (N−2)/(2N)
    pub fn prefactor(&self) -> f64 {
        let nf = self.params.nf();
        (nf - 2.0) / (2.0 * nf)
    }

    fn star(&self) -> f64 {
        let nf = self.params.nf();
        2.0 * nf / (nf - 2.0)
    }

    fn radial_path(&self, b: &BubbleParams) -> bool {
        self.k.is_radial() && b.is_centered()
    }

    fn check(&self, b: &BubbleParams) -> Result<()> {
        if b.xi.len() != self.dim() || !(b.mu > 0.0) || !b.mu.is_finite() {
            return Err(Error::Domain(format!("bad bubble parameters μ = {}, |ξ| dim {}", b.mu, b.xi.len())));
        }
        Ok(())
    }

    fn along(&self, mu: f64, r: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        x[0] = mu * r;
        x
    }

    /// Sum of `f(y, out)` against the tensor rule, parallel over shells.
    fn full_sum(&self, m: usize, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Vec<f64> {
        let n = self.dim();
        let e = n as i32 - 1;
        let sphere = &self.full.sphere;
        let shells: Vec<Vec<f64>> = self
            .radial
            .nodes
            .par_iter()
            .zip(self.radial.weights.par_iter())
            .map(|(&r, &wr)| {
                let mut acc = vec![0.0; m];
                let mut tmp = vec![0.0; m];
                let mut y = vec![0.0; n];
                for (d, wd) in sphere.directions.iter().zip(&sphere.weights) {
                    for (yi, di) in y.iter_mut().zip(d) {
                        *yi = r * di;
                    }
                    tmp.iter_mut().for_each(|t| *t = 0.0);
                    f(&y, &mut tmp);
                    for (a, t) in acc.iter_mut().zip(&tmp) {
                        *a += wd * t;
                    }
                }
                let s = wr * r.powi(e);
                acc.iter().map(|a| a * s).collect()
            })
            .collect();
        let mut total = vec![0.0; m];
        for sh in shells {
            for (t, v) in total.iter_mut().zip(sh) {
                *t += v;
            }
        }
        total
    }

    fn x_of(&self, b: &BubbleParams, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&b.xi).map(|(yi, xi)| b.mu * yi + xi).collect()
    }

    pub fn value(&self, b: &BubbleParams) -> Result<f64> {
        self.check(b)?;
        let n = self.dim();
        let star = self.star();
        if self.radial_path(b) {
            let vals = self.radial.sample(|r| self.k.value(&self.along(b.mu, r)) * unit::u(n, &[r]).powf(star));
            return Ok(self.prefactor() * radial_sum(&self.radial, &vals, n));
        }
        let s = self.full_sum(1, |y, out| out[0] = self.k.value(&self.x_of(b, y)) * unit::u(n, y).powf(star));
        Ok(self.prefactor() * s[0])
    }

    /// (∂_μΥ, ∂_{ξ_1}Υ, …): (1/μ)∫k(μy+ξ)U^{(N+2)/(N−2)}Z_j dy. For radial k at
    /// ξ = 0 the ξ-components vanish by symmetry and only the μ-line is integrated.
    pub fn gradient(&self, b: &BubbleParams) -> Result<Vec<f64>> {
        self.check(b)?;
        if self.radial_path(b) {
            let n = self.dim();
            let crit = (self.params.nf() + 2.0) / (self.params.nf() - 2.0);
            let vals = self.radial.sample(|r| {
                let y = [r];
                self.k.value(&self.along(b.mu, r)) * unit::u(n, &y).powf(crit) * unit::z(n, 0, &y)
            });
            let mut g = vec![0.0; n + 1];
            g[0] = radial_sum(&self.radial, &vals, n) / b.mu;
            return Ok(g);
        }
        self.gradient_full(b)
    }

    /// The mode form of the gradient on the tensor grid, for any k and ξ.
    pub fn gradient_full(&self, b: &BubbleParams) -> Result<Vec<f64>> {
        self.check(b)?;
        let n = self.dim();
        let crit = (self.params.nf() + 2.0) / (self.params.nf() - 2.0);
        let s = self.full_sum(n + 1, |y, out| {
            let w = self.k.value(&self.x_of(b, y)) * unit::u(n, y).powf(crit);
            for (j, o) in out.iter_mut().enumerate() {
                *o = w * unit::z(n, j, y);
            }
        });
        Ok(s.into_iter().map(|v| v / b.mu).collect())
    }

    /// The same gradient from ∇k: c∫∇k(μy+ξ)·y U^{2*}, c∫∂_jk U^{2*}.
    pub fn gradient_from_k(&self, b: &BubbleParams) -> Result<Vec<f64>> {
        self.check(b)?;
        let n = self.dim();
        let star = self.star();
        let s = self.full_sum(n + 1, |y, out| {
            let g = self.k.gradient(&self.x_of(b, y));
            let w = unit::u(n, y).powf(star);
            out[0] = w * g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            for j in 0..n {
                out[j + 1] = w * g[j];
            }
        });
        Ok(s.into_iter().map(|v| v * self.prefactor()).collect())
    }

    /// Hessian in (μ, ξ) from the Hessian of k.
    pub fn hessian(&self, b: &BubbleParams) -> Result<DMatrix<f64>> {
        self.check(b)?;
        let n = self.dim();
        let star = self.star();
        let c = self.prefactor();
        if self.radial_path(b) {
            let mut h = DMatrix::zeros(n + 1, n + 1);
            let mut krr = Vec::with_capacity(self.radial.n);
            let mut lap = Vec::with_capacity(self.radial.n);
            for &r in &self.radial.nodes {
                let e = eval_k(&self.k, &self.along(b.mu, r));
                let w = unit::u(n, &[r]).powf(star);
                krr.push(e.hessian[(0, 0)] * r * r * w);
                lap.push(e.laplacian / n as f64 * w);
            }
            h[(0, 0)] = c * radial_sum(&self.radial, &krr, n);
            let t = c * radial_sum(&self.radial, &lap, n);
            for j in 1..=n {
                h[(j, j)] = t;
            }
            return Ok(h);
        }
        let m = (n + 1) * (n + 1);
        let s = self.full_sum(m, |y, out| {
            let e = eval_k(&self.k, &self.x_of(b, y));
            let w = unit::u(n, y).powf(star);
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| e.hessian[(i, j)] * y[j]).sum()).collect();
            out[0] = w * hy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                out[i + 1] = w * hy[i];
                out[(i + 1) * (n + 1)] = w * hy[i];
                for j in 0..n {
                    out[(i + 1) * (n + 1) + j + 1] = w * e.hessian[(i, j)];
                }
            }
        });
        Ok(DMatrix::from_row_slice(n + 1, n + 1, &s).scale(c))
    }

    /// c ∫U^{2N/(N−2)}, the value of Υ for k ≡ 1.
    pub fn unit_mass(&self) -> f64 {
        let n = self.dim();
        let star = self.star();
        let vals = self.radial.sample(|r| unit::u(n, &[r]).powf(star));
        self.prefactor() * radial_sum(&self.radial, &vals, n)
    }
}

/// A box in (μ, ξ). An empty `xi` means the μ-line with ξ = 0.
#[derive(Debug, Clone, Serialize)]
pub struct SearchBox {
    pub mu: (f64, f64),
    pub xi: Vec<(f64, f64)>,
}

impl SearchBox {
    pub fn mu_line(lo: f64, hi: f64) -> Self {
        SearchBox { mu: (lo, hi), xi: Vec::new() }
    }

    pub fn coords(&self) -> usize {
        1 + self.xi.len()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        std::iter::once(self.mu).chain(self.xi.iter().copied()).collect()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.mu.0 > 0.0) {
            return Err(Error::Config(format!("box must lie in μ > 0, got μ ∈ [{}, {}]", self.mu.0, self.mu.1)));
        }
        if !self.xi.is_empty() && self.xi.len() != dim {
            return Err(Error::Config(format!("box has {} ξ-ranges, expected 0 or {dim}", self.xi.len())));
        }
        if self.bounds().iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Config("box bounds must be finite with lo < hi".into()));
        }
        Ok(())
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.bounds().iter().zip(z).all(|((a, b), v)| *v >= *a && *v <= *b)
    }

    /// The box scaled about its centre, keeping μ > 0.
    pub fn enlarged(&self, factor: f64) -> Self {
        let grow = |(a, b): (f64, f64)| {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a) * factor;
            (c - h, c + h)
        };
        let mut mu = grow(self.mu);
        mu.0 = mu.0.max(0.5 * self.mu.0);
        SearchBox { mu, xi: self.xi.iter().copied().map(grow).collect() }
    }

    fn bubble(&self, z: &[f64], dim: usize) -> BubbleParams {
        let mut xi = vec![0.0; dim];
        if !self.xi.is_empty() {
            xi.copy_from_slice(&z[1..]);
        }
        BubbleParams { mu: z[0], xi }
    }
}

/// A zero of ∇Υ in the coordinates of a search box.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub upsilon: f64,
    pub grad_norm: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub classification: Classification,
    /// sign det D(∇Υ) restricted to the box coordinates, 0 when degenerate
    pub index: i32,
}

fn restrict(g: &[f64], m: usize) -> DVector<f64> {
    DVector::from_iterator(m, g.iter().take(m).copied())
}

fn restrict_h(h: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    h.view((0, 0), (m, m)).into_owned()
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub starts: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub dedup: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { starts: 24, seed: 7, grad_tol: 1e-10, max_iter: 60, dedup: 1e-6 }
    }
}

fn newton_from(ups: &Upsilon, bx: &SearchBox, z0: Vec<f64>, opts: &SearchOptions) -> Result<Option<Vec<f64>>> {
    let m = bx.coords();
    let n = ups.dim();
    let mut z = z0;
    let mut g = restrict(&ups.gradient(&bx.bubble(&z, n))?, m);
    for _ in 0..opts.max_iter {
        if g.norm() <= opts.grad_tol {
            return Ok(Some(z));
        }
        let h = restrict_h(&ups.hessian(&bx.bubble(&z, n))?, m);
        let step = match h.lu().solve(&g) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Ok(None),
        };
        // backtracking on |∇Υ| keeping μ > 0
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if cand[0] > 0.0 {
                let gc = restrict(&ups.gradient(&bx.bubble(&cand, n))?, m);
                if gc.norm() < g.norm() {
                    z = cand;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
        let span = bx.bounds();
        let far = span.iter().zip(&z).any(|((a, b), v)| *v < a - (b - a) || *v > b + (b - a));
        if far {
            return Ok(None);
        }
    }
    Ok(if g.norm() <= opts.grad_tol { Some(z) } else { None })
}

fn describe(ups: &Upsilon, bx: &SearchBox, z: &[f64]) -> Result<CriticalPoint> {
    let m = bx.coords();
    let b = bx.bubble(z, ups.dim());
    let h = restrict_h(&ups.hessian(&b)?, m);
    let (classification, ev) = classify(&h);
    let index = if classification == Classification::Degenerate {
        0
    } else if ev.iter().filter(|e| **e < 0.0).count() % 2 == 0 {
        1
    } else {
        -1
    };
    Ok(CriticalPoint {
        upsilon: ups.value(&b)?,
        grad_norm: restrict(&ups.gradient(&b)?, m).norm(),
        mu: b.mu,
        xi: b.xi,
        hessian_eigenvalues: ev,
        classification,
        index,
    })
}

/// Multistart Newton on ∇Υ inside the box; zeros are deduplicated, classified
/// by the Hessian and sorted by location.
pub fn find_critical_points(ups: &Upsilon, bx: &SearchBox, opts: &SearchOptions) -> Result<Vec<CriticalPoint>> {
    bx.validate(ups.dim())?;
    if bx.xi.is_empty() && !ups.k.is_radial() {
        return Err(Error::Config("the μ-line search needs a radial potential".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bounds = bx.bounds();
    let starts: Vec<Vec<f64>> =
        (0..opts.starts).map(|_| bounds.iter().map(|(a, b)| rng.gen_range(*a..=*b)).collect()).collect();
    let found: Vec<Option<Vec<f64>>> =
        starts.into_iter().map(|z| newton_from(ups, bx, z, opts)).collect::<Result<_>>()?;
    let mut zeros: Vec<Vec<f64>> = Vec::new();
    for z in found.into_iter().flatten() {
        if !bx.contains(&z) {
            continue;
        }
        let dup = zeros.iter().any(|w| w.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= opts.dedup);
        if !dup {
            zeros.push(z);
        }
    }
    zeros.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    zeros.iter().map(|z| describe(ups, bx, z)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DegreeReport {
    pub degree: i32,
    pub zeros: Vec<CriticalPoint>,
    /// inf of |∇Υ| over the sampled boundary
    pub boundary_inf: f64,
    pub boundary_samples: usize,
    pub search_box: SearchBox,
}

/// Smallest |∇Υ| accepted on the box boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Samples of the box boundary: both endpoints on the μ-line, a
/// `per_side`^{m−1} grid on every face otherwise.
fn boundary_points(bx: &SearchBox, per_side: usize) -> Vec<Vec<f64>> {
    let bounds = bx.bounds();
    let m = bounds.len();
    let mut out = Vec::new();
    let lin = |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / (per_side - 1) as f64;
    for face in 0..m {
        for side in [bounds[face].0, bounds[face].1] {
            let others = m - 1;
            let total = per_side.pow(others as u32);
            for mut idx in 0..total {
                let mut z = vec![0.0; m];
                for (c, zc) in z.iter_mut().enumerate() {
                    if c == face {
                        *zc = side;
                    } else {
                        *zc = lin(bounds[c], idx % per_side);
                        idx /= per_side;
                    }
                }
                out.push(z);
            }
        }
    }
    out
}

/// deg(∇Υ, box, 0) as the sum of signed Jacobians at the zeros, with a sampled
/// certificate that ∇Υ does not vanish on the boundary.
pub fn degree(ups: &Upsilon, bx: &SearchBox, opts: &SearchOptions, per_side: usize) -> Result<DegreeReport> {
    let zeros = find_critical_points(ups, bx, opts)?;
    if let Some(z) = zeros.iter().find(|z| z.classification == Classification::Degenerate) {
        return Err(Error::DegreeUndefined(format!(
            "degenerate zero at μ = {:.6}, ξ = {:?} (eigenvalues {:?})",
            z.mu, z.xi, z.hessian_eigenvalues
        )));
    }
    let m = bx.coords();
    let pts = boundary_points(bx, per_side.max(2));
    let norms: Vec<f64> = pts
        .iter()
        .map(|z| Ok(restrict(&ups.gradient(&bx.bubble(z, ups.dim()))?, m).norm()))
        .collect::<Result<_>>()?;
    let inf = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(inf > BOUNDARY_TOL) {
        return Err(Error::DegreeUndefined(format!("|∇Υ| = {inf:.3e} on the box boundary")));
    }
    Ok(DegreeReport {
        degree: zeros.iter().map(|z| z.index).sum(),
        zeros,
        boundary_inf: inf,
        boundary_samples: pts.len(),
        search_box: bx.clone(),
    })
}

/// One point of a Υ scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub upsilon: f64,
    pub grad: Vec<f64>,
    pub classification: Classification,
}

/// Υ, ∇Υ and the Hessian class on a tensor grid over the box, `per_axis`
/// points per coordinate, in lexicographic order with μ slowest.
pub fn upsilon_scan(ups: &Upsilon, bx: &SearchBox, per_axis: usize) -> Result<Vec<ScanRow>> {
    bx.validate(ups.dim())?;
    let bounds = bx.bounds();
    let m = bounds.len();
    let per = per_axis.max(2);
    let total = per.pow(m as u32);
    (0..total)
        .map(|mut idx| {
            let mut z = vec![0.0; m];
            for c in (0..m).rev() {
                let (a, b) = bounds[c];
                z[c] = a + (b - a) * (idx % per) as f64 / (per - 1) as f64;
                idx /= per;
            }
            let b = bx.bubble(&z, ups.dim());
            let (class, _) = classify(&restrict_h(&ups.hessian(&b)?, m));
            Ok(ScanRow { upsilon: ups.value(&b)?, grad: ups.gradient(&b)?, classification: class, mu: b.mu, xi: b.xi })
        })
        .collect()
}

/// One record of the reduction pipeline at a centred bubble.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedPoint {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub eps: f64,
    pub upsilon: f64,
    pub grad_upsilon: Vec<f64>,
    pub j_eps: f64,
    pub c: Vec<f64>,
    pub phi_norm: f64,
    pub classification: Classification,
}

/// Contraction solve at b, then the energy and the Υ data.
pub fn reduced_energy(
    ctx: &LinearContext,
    ups: &Upsilon,
    b: &BubbleParams,
    eps: f64,
    opts: &ContractionOptions,
) -> Result<(ReducedPoint, PerturbedSolution)> {
    let sol = contraction_solve(ctx, b, eps, &ups.k, opts)?;
    let j = energy(ctx, &sol, &ups.k)?;
    let (classification, _) = classify(&ups.hessian(b)?);
    let rp = ReducedPoint {
        mu: b.mu,
        xi: b.xi.clone(),
        eps,
        upsilon: ups.value(b)?,
        grad_upsilon: ups.gradient(b)?,
        j_eps: j,
        c: sol.c.clone(),
        phi_norm: sol.phi_norm,
        classification,
    };
    Ok((rp, sol))
}

/// Central difference of j_ε in μ.
pub fn energy_mu_derivative(
    ctx: &LinearContext,
    k: &PotentialSpec,
    mu: f64,
    eps: f64,
    h_rel: f64,
    opts: &ContractionOptions,
) -> Result<f64> {
    let h = h_rel * mu;
    let n = ctx.dim();
    let jp = energy(ctx, &contraction_solve(ctx, &BubbleParams::radial(n, mu + h)?, eps, k, opts)?, k)?;
    let jm = energy(ctx, &contraction_solve(ctx, &BubbleParams::radial(n, mu - h)?, eps, k, opts)?, k)?;
    Ok((jp - jm) / (2.0 * h))
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub c_tol: f64,
    pub max_iter: usize,
    /// relative step for the finite-difference derivative of c_0 in μ
    pub fd_rel: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { c_tol: 1e-10, max_iter: 30, fd_rel: 1e-5 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FullSolution {
    pub eps: f64,
    pub mu_star: f64,
    pub mu: f64,
    pub xi: Vec<f64>,
    pub iterations: usize,
    pub c_norm: f64,
    /// ∂c_0/∂μ at the solution (the 1×1 reduced Jacobian)
    pub c_jacobian: f64,
    /// sup over the grid of |φ_ε/U_{μ_ε}|
    pub phi_over_u: f64,
    pub min_omega_ratio: f64,
    pub residual: ResidualReport,
    pub j_eps: f64,
    pub solution: PerturbedSolution,
}

/// Newton on μ ↦ c_{ε,0}(μ) (ξ = 0, radial k) from the Υ-critical point μ*.
pub fn solve_full(
    ctx: &LinearContext,
    k: &PotentialSpec,
    eps: f64,
    mu_star: f64,
    copts: &ContractionOptions,
    nopts: &NewtonOptions,
) -> Result<FullSolution> {
    if !k.is_radial() {
        return Err(Error::Config("solve_full runs on the radial μ-line and needs a radial potential".into()));
    }
    let n = ctx.dim();
    let c_at = |mu: f64| -> Result<(f64, PerturbedSolution)> {
        let s = contraction_solve(ctx, &BubbleParams::radial(n, mu)?, eps, k, copts)?;
        Ok((s.c[0], s))
    };
    let mut mu = mu_star;
    let (mut c, mut sol) = c_at(mu)?;
    let mut jac = f64::NAN;
    let mut it = 0;
    while c.abs() > nopts.c_tol {
        if it >= nopts.max_iter {
            return Err(Error::Newton(format!("c_0 = {c:.3e} after {it} iterations at μ = {mu}")));
        }
        let h = nopts.fd_rel * mu;
        jac = (c_at(mu + h)?.0 - c_at(mu - h)?.0) / (2.0 * h);
        if !(jac.abs() > 0.0) || !jac.is_finite() {
            return Err(Error::Newton(format!("reduced Jacobian ∂c_0/∂μ = {jac:.3e} is singular at μ = {mu}")));
        }
        let mut step = c / jac;
        let mut accepted = false;
        for _ in 0..20 {
            let cand = mu - step;
            if cand > 0.0 {
                if let Ok((cc, ss)) = c_at(cand) {
                    if cc.abs() < c.abs() {
                        mu = cand;
                        c = cc;
                        sol = ss;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::Newton(format!("no decrease of |c_0| = {c:.3e} at μ = {mu}")));
        }
        it += 1;
    }
    if jac.is_nan() {
        let h = nopts.fd_rel * mu;
        jac = (c_at(mu + h)?.0 - c_at(mu - h)?.0) / (2.0 * h);
    }
    let residual = residual_check(ctx, &sol, k)?;
    let j = energy(ctx, &sol, k)?;
    let c_norm = sol.c.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FullSolution {
        eps,
        mu_star,
        mu,
        xi: vec![0.0; n],
        iterations: it,
        c_norm,
        c_jacobian: jac,
        phi_over_u: sol.phi_over_u,
        min_omega_ratio: sol.min_omega_ratio,
        residual,
        j_eps: j,
        solution: sol,
    })
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow {
    pub eps: f64,
    pub phi_norm: f64,
    pub dphi_dmu_norm: f64,
    /// |j_ε − j̄₀ + εΥ|
    pub energy_defect: f64,
    /// |∂_μ j_ε + ε∂_μΥ|
    pub energy_derivative_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub mu: f64,
    pub j0_numeric: f64,
    pub j0_closed_form: f64,
    pub upsilon: f64,
    pub d_mu_upsilon: f64,
    pub rows: Vec<ExpansionRow>,
    pub phi_bd_slope: f64,
    pub pd_phi_bd_slope: f64,
    pub expand_j_slope: f64,
    pub expand_pjmu_slope: f64,
}

/// The order fits of ‖φ‖, ‖∂_μφ‖, j_ε − j̄₀ + εΥ and ∂_μj_ε + ε∂_μΥ in ε at a
/// fixed centred bubble.
pub fn expansion_study(
    ctx: &LinearContext,
    ups: &Upsilon,
    mu: f64,
    eps_list: &[f64],
    copts: &ContractionOptions,
) -> Result<ExpansionReport> {
    let n = ctx.dim();
    let b = BubbleParams::radial(n, mu)?;
    let k = &ups.k;
    let j0 = energy(ctx, &contraction_solve(ctx, &b, 0.0, k, copts)?, k)?;
    let ups_v = ups.value(&b)?;
    let dups = ups.gradient(&b)?[0];
    let h_rel = 1e-3;
    let rows: Vec<ExpansionRow> = eps_list
        .iter()
        .map(|&eps| {
            let sol = contraction_solve(ctx, &b, eps, k, copts)?;
            let j = energy(ctx, &sol, k)?;
            let dphi = phi_parameter_derivative(ctx, &b, eps, k, 0, copts)?;
            let dphi_norm = crate::grid::weighted_sup_norm(&ctx.grid, &dphi, &ctx.params, &b, crate::grid::NormKind::X)?;
            let dj = energy_mu_derivative(ctx, k, mu, eps, h_rel, copts)?;
            Ok(ExpansionRow {
                eps,
                phi_norm: sol.phi_norm,
                dphi_dmu_norm: dphi_norm,
                energy_defect: (j - j0 + eps * ups_v).abs(),
                energy_derivative_defect: (dj + eps * dups).abs(),
            })
        })
        .collect::<Result<_>>()?;
    let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&ExpansionRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Ok(ExpansionReport {
        mu,
        j0_numeric: j0,
        j0_closed_form: bubble_energy(&ctx.params),
        upsilon: ups_v,
        d_mu_upsilon: dups,
        phi_bd_slope: loglog_slope(&e, &col(|r| r.phi_norm)),
        pd_phi_bd_slope: loglog_slope(&e, &col(|r| r.dphi_dmu_norm)),
        expand_j_slope: loglog_slope(&e, &col(|r| r.energy_defect)),
        expand_pjmu_slope: loglog_slope(&e, &col(|r| r.energy_derivative_defect)),
        rows,
    })
}

/// ω = U_μ + φ on the grid.
pub fn solution_fields(ctx: &LinearContext, sol: &PerturbedSolution) -> GridFunction {
    let coef = ctx.coefficients(&sol.bubble());
    let nf = ctx.params.nf();
    GridFunction::new(coef.u.iter().zip(&sol.phi.values).map(|(u, p)| u + p).collect(), nf - 2.0)
}
