//! The nonlinear projected problem at a centred bubble with radial k:
//! find φ with ∫φH_0 = 0 and 𝓛φ = N(φ) + εE(φ) − cH_0, by iterating
//! φ ↦ T[N(φ) + εE(φ)] from φ = 0.

use crate::bubble::BubbleParams;
use crate::error::{Error, Result};
use crate::grid::{pair_integral, weighted_sup_norm, GridFunction, NormKind, RadialGrid};
use crate::kcheck::PotentialSpec;
use crate::linop::{sector_profile, Coefficients, LinearContext, ProjectedSystem};
use crate::special::{pow_rem0, pow_rem1};
use serde::Serialize;
use std::io::{Read, Write};

#[derive(Debug, Clone)]
pub struct ContractionOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub eps_max: f64,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        ContractionOptions { tol: 1e-10, max_iter: 60, eps_max: 0.1 }
    }
}

/// Constants of the contraction argument measured on the discrete operators.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MeasuredConstants {
    /// ‖T g‖_X / ‖g‖_Y on the right-hand sides met during the iteration
    pub c0: f64,
    /// ‖N(φ)‖_Y / ‖φ‖²_X
    pub c1: f64,
    /// ‖E(φ)‖_Y / ‖k‖_∞
    pub c2: f64,
    /// ‖N(φ) − N(φ̃)‖_Y / ((‖φ‖ + ‖φ̃‖)‖φ − φ̃‖)
    pub c3: f64,
    /// ‖E(φ) − E(φ̃)‖_Y / (‖k‖_∞‖φ − φ̃‖)
    pub c4: f64,
    /// min{2C₀C₂ε‖k‖_∞, C₄ε‖k‖_∞/(2C₃)}
    pub rho0: f64,
    /// C₀(C₁ρ₀² + εC₂‖k‖_∞) < ρ₀
    pub maps_ball_into_itself: bool,
    /// C₀(2C₃ρ₀ + εC₄‖k‖_∞) < 1/2
    pub contracts_by_half: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbedSolution {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub eps: f64,
    #[serde(skip)]
    pub phi: GridFunction,
    pub c: Vec<f64>,
    pub iterations: usize,
    pub final_step: f64,
    pub phi_norm: f64,
    /// ‖φ_{n+1} − φ_n‖_X for every iteration
    pub trace: Vec<f64>,
    /// min over the grid of ω/U
    pub min_omega_ratio: f64,
    pub constants: MeasuredConstants,
    /// ‖φ_ε/U‖_∞ on the grid (equal to ‖φ‖_X for a centred bubble)
    pub phi_over_u: f64,
}

impl PerturbedSolution {
    pub fn bubble(&self) -> BubbleParams {
        BubbleParams { mu: self.mu, xi: self.xi.clone() }
    }
}

/// Samples a radial k on the grid.
pub fn k_profile(grid: &RadialGrid, k: &PotentialSpec) -> Result<Vec<f64>> {
    if !k.is_radial() {
        return Err(Error::Domain("the radial solver needs a radial potential (all bump centres at 0)".into()));
    }
    Ok(sector_profile(grid, k.dim, |x| k.value(x)))
}

fn xnorm(ctx: &LinearContext, f: &GridFunction, b: &BubbleParams) -> Result<f64> {
    weighted_sup_norm(&ctx.grid, f, &ctx.params, b, NormKind::X)
}

fn ynorm(ctx: &LinearContext, f: &GridFunction, b: &BubbleParams) -> Result<f64> {
    weighted_sup_norm(&ctx.grid, f, &ctx.params, b, NormKind::Y)
}

fn nonlinear_with(ctx: &LinearContext, phi: &GridFunction, c: &Coefficients) -> Result<GridFunction> {
    let pp = &ctx.params;
    let nf = pp.nf();
    let p = pp.p;
    let n = ctx.n();
    // N/α = I[U^p] R₂ + p I[U^{p−1}φ](ω^{p−1} − U^{p−1}) + I[R₁] ω^{p−1}, with
    // R₁ = ω^p − U^p − pU^{p−1}φ and R₂ = ω^{p−1} − U^{p−1} − (p−1)U^{p−2}φ.
    let mut r1 = vec![0.0; n];
    let mut lin = vec![0.0; n];
    for i in 0..n {
        let x = phi.values[i] / c.u[i];
        r1[i] = c.u[i].powf(p) * pow_rem1(p, x);
        lin[i] = c.w1[i] * phi.values[i];
    }
    let sec = ctx.sector(0)?;
    let ir1 = sec.riesz.apply(&r1);
    let ilin = sec.riesz.apply(&lin);
    let values = (0..n)
        .map(|i| {
            let x = phi.values[i] / c.u[i];
            let up = c.w1[i];
            let iup = pp.a_const * c.u[i].powf(pp.lambda / (nf - 2.0));
            let r2 = up * pow_rem1(p - 1.0, x);
            let dw = up * pow_rem0(p - 1.0, x);
            let wp = up + dw;
            pp.alpha * (iup * r2 + p * ilin[i] * dw + ir1[i] * wp)
        })
        .collect();
    Ok(GridFunction::new(values, nf + 2.0))
}

/// N(φ) = αI_λ[ω_+^p]ω_+^{p−1} − αI_λ[U^p]U^{p−1} − αpI_λ[U^{p−1}φ]U^{p−1} − α(p−1)I_λ[U^p]U^{p−2}φ,
/// ω = U + φ, evaluated without cancellation for small φ.
pub fn nonlinear_remainder(ctx: &LinearContext, phi: &GridFunction, b: &BubbleParams) -> Result<GridFunction> {
    let nx = xnorm(ctx, phi, b)?;
    if nx > 0.5 {
        return Err(Error::Domain(format!("‖φ‖_X = {nx:.3e} exceeds 1/2; U + φ may change sign")));
    }
    nonlinear_with(ctx, phi, &ctx.coefficients(b))
}

/// E(φ) = k (U + φ)_+^{(N+2)/(N−2)}
pub fn perturbation_term(ctx: &LinearContext, phi: &GridFunction, b: &BubbleParams, k: &PotentialSpec) -> Result<GridFunction> {
    let kp = k_profile(&ctx.grid, k)?;
    let c = ctx.coefficients(b);
    Ok(perturbation_with(ctx, phi, &c, &kp))
}

fn perturbation_with(ctx: &LinearContext, phi: &GridFunction, c: &Coefficients, kp: &[f64]) -> GridFunction {
    let nf = ctx.params.nf();
    let e = (nf + 2.0) / (nf - 2.0);
    let values = (0..ctx.n()).map(|i| kp[i] * (c.u[i] + phi.values[i]).max(0.0).powf(e)).collect();
    GridFunction::new(values, nf + 2.0)
}

fn check_eps(eps: f64, opts: &ContractionOptions) -> Result<()> {
    if !(0.0..=opts.eps_max).contains(&eps) {
        return Err(Error::Domain(format!("ε = {eps} is outside [0, ε_max = {}]", opts.eps_max)));
    }
    Ok(())
}

struct Iterate {
    phi: GridFunction,
    rhs: GridFunction,
    nl: GridFunction,
    pert: GridFunction,
}

fn rhs_at(ctx: &LinearContext, phi: &GridFunction, c: &Coefficients, kp: &[f64], eps: f64) -> Result<Iterate> {
    let nl = nonlinear_with(ctx, phi, c)?;
    let pert = perturbation_with(ctx, phi, c, kp);
    let rhs = nl.axpy(eps, &pert);
    Ok(Iterate { phi: phi.clone(), rhs, nl, pert })
}

/// Fixed point of φ ↦ T[N(φ) + εE(φ)] starting from φ = 0.
pub fn contraction_solve(
    ctx: &LinearContext,
    b: &BubbleParams,
    eps: f64,
    k: &PotentialSpec,
    opts: &ContractionOptions,
) -> Result<PerturbedSolution> {
    check_eps(eps, opts)?;
    let sys = ctx.assemble(b, 0)?;
    contraction_with(ctx, &sys, b, eps, k, opts)
}

/// As `contraction_solve`, reusing an assembled system.
pub fn contraction_with(
    ctx: &LinearContext,
    sys: &ProjectedSystem,
    b: &BubbleParams,
    eps: f64,
    k: &PotentialSpec,
    opts: &ContractionOptions,
) -> Result<PerturbedSolution> {
    let zero = GridFunction::zeros(ctx.n(), ctx.params.nf() - 2.0);
    contraction_from(ctx, sys, b, eps, k, opts, &zero)
}

/// As `contraction_with`, starting the iteration at `start`.
pub fn contraction_from(
    ctx: &LinearContext,
    sys: &ProjectedSystem,
    b: &BubbleParams,
    eps: f64,
    k: &PotentialSpec,
    opts: &ContractionOptions,
    start: &GridFunction,
) -> Result<PerturbedSolution> {
    check_eps(eps, opts)?;
    let n = ctx.n();
    if xnorm(ctx, start, b)? > 0.5 {
        return Err(Error::Domain("starting iterate lies outside ‖φ‖_X ≤ 1/2".into()));
    }
    let kp = k_profile(&ctx.grid, k)?;
    let kinf = k.sup_norm_bound();
    let coef = ctx.coefficients(b);
    let mut cur = rhs_at(ctx, start, &coef, &kp, eps)?;
    let mut prev: Option<Iterate> = None;
    let mut trace = Vec::new();
    let mut growth = 0;
    let mut c0: f64 = 0.0;
    let mut converged = false;
    for it in 0..opts.max_iter {
        let (next, _) = ctx.solve_with(sys, &cur.rhs)?;
        let step = xnorm(ctx, &next.axpy(-1.0, &cur.phi), b)?;
        let ry = ynorm(ctx, &cur.rhs, b)?;
        if ry > 0.0 {
            c0 = c0.max(xnorm(ctx, &next, b)? / ry);
        }
        if let Some(&last) = trace.last() {
            if step > last && step > opts.tol {
                growth += 1;
            } else {
                growth = 0;
            }
        }
        trace.push(step);
        let nx = xnorm(ctx, &next, b)?;
        if nx > 0.5 || !nx.is_finite() {
            return Err(Error::Contraction {
                iterations: it + 1,
                reason: format!("iterate left the ball ‖φ‖_X ≤ 1/2 (‖φ‖_X = {nx:.3e}); ε is too large"),
            });
        }
        if growth >= 3 {
            return Err(Error::Contraction {
                iterations: it + 1,
                reason: format!("step grew three times in a row (last step {step:.3e}, ‖φ‖_X = {nx:.3e})"),
            });
        }
        let nxt = rhs_at(ctx, &next, &coef, &kp, eps)?;
        prev = Some(std::mem::replace(&mut cur, nxt));
        if step <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Contraction {
            iterations: opts.max_iter,
            reason: format!("no convergence to {:.1e} (last step {:.3e})", opts.tol, trace.last().copied().unwrap_or(f64::NAN)),
        });
    }
    let phi = cur.phi.clone();
    let phi_norm = xnorm(ctx, &phi, b)?;
    let c0_coef = ctx.projection_coefficient(sys, &cur.rhs);
    let mut c = vec![0.0; ctx.dim() + 1];
    c[0] = c0_coef;
    // j ≥ 1: radial data against dipole modes, identically zero
    let min_ratio = (0..n).map(|i| (coef.u[i] + phi.values[i]) / coef.u[i]).fold(f64::INFINITY, f64::min);
    let constants = measure_constants(ctx, b, &cur, prev.as_ref(), c0, eps, kinf)?;
    Ok(PerturbedSolution {
        mu: b.mu,
        xi: b.xi.clone(),
        eps,
        c,
        iterations: trace.len(),
        final_step: trace.last().copied().unwrap_or(0.0),
        phi_norm,
        trace,
        min_omega_ratio: min_ratio,
        constants,
        phi_over_u: phi_norm,
        phi,
    })
}

fn measure_constants(
    ctx: &LinearContext,
    b: &BubbleParams,
    cur: &Iterate,
    prev: Option<&Iterate>,
    c0: f64,
    eps: f64,
    kinf: f64,
) -> Result<MeasuredConstants> {
    let px = xnorm(ctx, &cur.phi, b)?;
    let c1 = if px > 0.0 { ynorm(ctx, &cur.nl, b)? / (px * px) } else { 0.0 };
    let c2 = ynorm(ctx, &cur.pert, b)? / kinf;
    let (mut c3, mut c4) = (0.0, 0.0);
    if let Some(p) = prev {
        let d = xnorm(ctx, &cur.phi.axpy(-1.0, &p.phi), b)?;
        if d > 0.0 {
            let s = px + xnorm(ctx, &p.phi, b)?;
            c3 = ynorm(ctx, &cur.nl.axpy(-1.0, &p.nl), b)? / (s * d);
            c4 = ynorm(ctx, &cur.pert.axpy(-1.0, &p.pert), b)? / (kinf * d);
        }
    }
    let ek = eps * kinf;
    let first = 2.0 * c0 * c2 * ek;
    let rho0 = if c3 > 0.0 { first.min(c4 * ek / (2.0 * c3)) } else { first };
    Ok(MeasuredConstants {
        c0,
        c1,
        c2,
        c3,
        c4,
        rho0,
        maps_ball_into_itself: c0 * (c1 * rho0 * rho0 + eps * c2 * kinf) < rho0,
        contracts_by_half: c0 * (2.0 * c3 * rho0 + ek * c4) < 0.5,
    })
}

/// c_{ε,j} = (∫H_jZ_j)^{−1} ∫(N(φ) + εkω^{(N+2)/(N−2)})Z_j, recomputed from φ.
pub fn c_coefficients(ctx: &LinearContext, sol: &PerturbedSolution, k: &PotentialSpec) -> Result<Vec<f64>> {
    let b = sol.bubble();
    let coef = ctx.coefficients(&b);
    let kp = k_profile(&ctx.grid, k)?;
    let it = rhs_at(ctx, &sol.phi, &coef, &kp, sol.eps)?;
    let z = ctx.z_profile(0, &b)?;
    let pairing = crate::bubble::mode_pairing(&ctx.params, crate::bubble::ModeIndex::new(0, ctx.dim())?);
    let mut c = vec![0.0; ctx.dim() + 1];
    c[0] = pair_integral(&ctx.grid, &it.rhs, &z, ctx.dim()) / pairing;
    for j in 1..=ctx.dim() {
        let zj = ctx.z_profile(j, &b)?;
        c[j] = pair_integral(&ctx.grid, &it.rhs, &zj, ctx.dim()) / pairing;
    }
    Ok(c)
}

/// N(φ) + εE(φ) − c_0H_0, the right-hand side of 𝓛φ at a solution.
pub fn equation_rhs(ctx: &LinearContext, sol: &PerturbedSolution, k: &PotentialSpec) -> Result<GridFunction> {
    let b = sol.bubble();
    let coef = ctx.coefficients(&b);
    let kp = k_profile(&ctx.grid, k)?;
    let it = rhs_at(ctx, &sol.phi, &coef, &kp, sol.eps)?;
    let h0 = ctx.h_profile(0, &b)?;
    Ok(it.rhs.axpy(-sol.c[0], &h0))
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// ‖−Δω − αI_λ[ω^p]ω^{p−1} − εkω^{(N+2)/(N−2)} + cH_0‖_Y with −Δφ by
    /// spectral differentiation
    pub residual_y: f64,
    /// ‖φ − 𝓐φ − G[N + εE − cH_0]‖_X, the integral form of the same equation
    pub integral_residual_x: f64,
    /// ‖c H_0‖_Y, for scale
    pub c_term_y: f64,
    pub min_omega: f64,
}

/// Evaluate the full equation at ω = U + φ with the Riesz term computed
/// directly from ω^p.
pub fn residual_check(ctx: &LinearContext, sol: &PerturbedSolution, k: &PotentialSpec) -> Result<ResidualReport> {
    let b = sol.bubble();
    let pp = &ctx.params;
    let nf = pp.nf();
    let n = ctx.n();
    let coef = ctx.coefficients(&b);
    let kp = k_profile(&ctx.grid, k)?;
    let h0 = ctx.h_profile(0, &b)?;
    let crit = (nf + 2.0) / (nf - 2.0);
    let omega: Vec<f64> = (0..n).map(|i| (coef.u[i] + sol.phi.values[i]).max(0.0)).collect();
    let wp: Vec<f64> = omega.iter().map(|w| w.powf(pp.p)).collect();
    let iw = ctx.sector(0)?.riesz.apply(&wp);
    let lap_phi = ctx.diff.neg_laplacian(&ctx.grid, &sol.phi, ctx.dim());
    let c = sol.c[0];
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let lap_u = nf * (nf - 2.0) * coef.u[i].powf(crit);
            lap_u + lap_phi.values[i] - pp.alpha * iw[i] * omega[i].powf(pp.p - 1.0) - sol.eps * kp[i] * omega[i].powf(crit)
                + c * h0.values[i]
        })
        .collect();
    let res = GridFunction::new(values, nf + 2.0);
    let it = rhs_at(ctx, &sol.phi, &coef, &kp, sol.eps)?;
    let forcing = it.rhs.axpy(-c, &h0);
    let g = ctx.newton(&forcing)?;
    let a = ctx.apply_a(&sol.phi, &b)?;
    let integral = sol.phi.axpy(-1.0, &a).axpy(-1.0, &g);
    Ok(ResidualReport {
        residual_y: ynorm(ctx, &res, &b)?,
        integral_residual_x: xnorm(ctx, &integral, &b)?,
        c_term_y: ynorm(ctx, &h0.scaled(c), &b)?,
        min_omega: omega.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// Central difference of the fixed point in μ (m = 0). Translations would
/// leave the radial sector and are not supported here.
pub fn phi_parameter_derivative(
    ctx: &LinearContext,
    b: &BubbleParams,
    eps: f64,
    k: &PotentialSpec,
    m: usize,
    opts: &ContractionOptions,
) -> Result<GridFunction> {
    if m != 0 {
        return Err(Error::Domain("only the μ-derivative is available for the radial fixed point".into()));
    }
    let h = 1e-3 * b.mu;
    if h < 1e-12 {
        return Err(Error::Domain(format!("finite-difference step {h:.1e} underflows")));
    }
    let plus = contraction_solve(ctx, &BubbleParams::radial(ctx.dim(), b.mu + h)?, eps, k, opts)?;
    let minus = contraction_solve(ctx, &BubbleParams::radial(ctx.dim(), b.mu - h)?, eps, k, opts)?;
    Ok(plus.phi.axpy(-1.0, &minus.phi).scaled(0.5 / h))
}

const DUMP_MAGIC: &[u8; 4] = b"BRFD";
const DUMP_VERSION: u32 = 1;

/// Binary field dump: magic, version, grid hash, count, little-endian doubles.
pub fn write_field_dump(w: &mut impl Write, grid: &RadialGrid, values: &[f64]) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&grid.hash())?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a dump and checks that it belongs to `grid`.
pub fn read_field_dump(r: &mut impl Read, grid: &RadialGrid) -> Result<Vec<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Cache("not a field dump".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(Error::Cache("unsupported field dump version".into()));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if hash != grid.hash() {
        return Err(Error::Cache("field dump was written on a different grid".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        out.push(f64::from_le_bytes(b8));
    }
    Ok(out)
}
