//! Linearised operator at a bubble and the projected linear solver.
//!
//! 𝓛φ = −Δφ − αp I_λ[U^{p−1}φ]U^{p−1} − α(p−1)I_λ[U^p]U^{p−2}φ.
//! Since I_λ[U^p] = A U^{λ/(N−2)} the last coefficient is N(N−2)(p−1)U^{4/(N−2)}.
//! The solver works with the integral form φ = 𝓐φ + G[g] where G inverts −Δ,
//! on one harmonic sector of a centred bubble: ℓ = 0 carries Z_0, ℓ = 1 carries
//! Z_m (profiles along e_m). Nodal unknowns are scaled by ⟨r⟩^{N−2} so that
//! the discrete operator has O(1) entries across the whole grid.

use crate::bubble::{self, mode_pairing, BubbleParams, ModeIndex, ProblemParams};
use crate::error::{Error, Result};
use crate::grid::{pair_integral, weighted_sup_norm, GridFunction, NormKind, RadialDiff, RadialGrid};
use crate::riesz::{load_or_assemble, KernelOptions, NewtonPotential, RadialKernel};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

/// Kernels for one harmonic sector.
pub struct SectorKernels {
    pub riesz: RadialKernel,
    pub newton: NewtonPotential,
}

/// Everything needed to apply and invert 𝓛 on a fixed radial grid. Kernels do
/// not depend on (μ, ξ), so one context serves every bubble.
pub struct LinearContext {
    pub params: ProblemParams,
    pub grid: Arc<RadialGrid>,
    pub diff: RadialDiff,
    opts: KernelOptions,
    cache: Option<PathBuf>,
    sectors: [OnceLock<SectorKernels>; 2],
}

/// Pointwise coefficients of 𝓛 at a centred bubble, sampled on the grid.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub u: Vec<f64>,
    /// U^{p−1}
    pub w1: Vec<f64>,
    /// α(p−1) I_λ[U^p] U^{p−2}
    pub w2: Vec<f64>,
}

/// Samples F(r e_1) for r on the grid: the radial profile of a field in the
/// sector ℓ, with F = f(r) for ℓ = 0 and F = f(r) x_1/r for ℓ = 1.
pub fn sector_profile(grid: &RadialGrid, dim: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    profile_along(grid, dim, 0, f)
}

/// Samples F(r e_axis) for r on the grid.
pub fn profile_along(grid: &RadialGrid, dim: usize, axis: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    grid.nodes
        .iter()
        .map(|&r| {
            x[axis] = r;
            f(&x)
        })
        .collect()
}

fn check_centered(b: &BubbleParams) -> Result<()> {
    if b.is_centered() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "the radial solver needs ξ = 0 (got ξ = {:?}); translate the data first",
            b.xi
        )))
    }
}

impl LinearContext {
    pub fn new(params: ProblemParams, grid: Arc<RadialGrid>, opts: KernelOptions, cache: Option<PathBuf>) -> Self {
        let diff = RadialDiff::new(&grid);
        LinearContext { params, grid, diff, opts, cache, sectors: [OnceLock::new(), OnceLock::new()] }
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn dim(&self) -> usize {
        self.params.n
    }

    /// Kernels for sector ℓ ∈ {0, 1}, assembled (or read from cache) on first use.
    pub fn sector(&self, ell: usize) -> Result<&SectorKernels> {
        if ell > 1 {
            return Err(Error::Domain(format!("only sectors ℓ = 0, 1 are supported, got {ell}")));
        }
        if let Some(s) = self.sectors[ell].get() {
            return Ok(s);
        }
        let cache = self.cache.as_deref();
        let riesz = load_or_assemble(cache, &self.grid, self.params.n, self.params.lambda, ell, &self.opts)?;
        let newton = NewtonPotential::build(&self.grid, self.params.n, ell, &self.opts, cache)?;
        let _ = self.sectors[ell].set(SectorKernels { riesz, newton });
        Ok(self.sectors[ell].get().expect("sector just set"))
    }

    pub fn coefficients(&self, b: &BubbleParams) -> Coefficients {
        let nf = self.params.nf();
        let p = self.params.p;
        let u = sector_profile(&self.grid, self.dim(), |x| bubble::bubble_value(&self.params, b, x));
        let w1 = u.iter().map(|v| v.powf(p - 1.0)).collect();
        let w2 = u.iter().map(|v| nf * (nf - 2.0) * (p - 1.0) * v.powf(4.0 / (nf - 2.0))).collect();
        Coefficients { u, w1, w2 }
    }

    /// Profile of Z_{j;μ,0} in its own sector (j = 0 radial, j ≥ 1 dipole).
    pub fn z_profile(&self, j: usize, b: &BubbleParams) -> Result<GridFunction> {
        let nf = self.params.nf();
        let jj = ModeIndex::new(j.min(1), self.dim())?;
        let v = sector_profile(&self.grid, self.dim(), |x| bubble::z_mode(&self.params, jj, b, x));
        Ok(GridFunction { values: v, decay: nf - 2.0 + j.min(1) as f64, ell: j.min(1) })
    }

    /// Profile of H^μ_{j;0} in its own sector.
    pub fn h_profile(&self, j: usize, b: &BubbleParams) -> Result<GridFunction> {
        let nf = self.params.nf();
        let jj = ModeIndex::new(j.min(1), self.dim())?;
        let v = sector_profile(&self.grid, self.dim(), |x| bubble::h_mode(&self.params, jj, b, x));
        Ok(GridFunction { values: v, decay: nf + 2.0 + j.min(1) as f64, ell: j.min(1) })
    }

    fn riesz_raw(&self, ell: usize, f: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sector(ell)?.riesz.apply(f))
    }

    fn newton_raw(&self, ell: usize, f: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sector(ell)?.newton.apply(f))
    }

    /// G[g]: the decaying solution of −Δw = g.
    pub fn newton(&self, g: &GridFunction) -> Result<GridFunction> {
        crate::riesz::newton_potential(&self.sector(g.ell)?.newton, g)
    }

    /// The potential part W(φ) = αp I_λ[U^{p−1}φ]U^{p−1} + α(p−1)I_λ[U^p]U^{p−2}φ.
    pub fn potential_term(&self, phi: &GridFunction, c: &Coefficients) -> Result<GridFunction> {
        let ap = self.params.alpha * self.params.p;
        let prod: Vec<f64> = phi.values.iter().zip(&c.w1).map(|(a, b)| a * b).collect();
        let ir = self.riesz_raw(phi.ell, &prod)?;
        let values = (0..self.n()).map(|i| ap * ir[i] * c.w1[i] + c.w2[i] * phi.values[i]).collect();
        Ok(GridFunction { values, decay: (phi.decay + 4.0).min(self.params.nf() + 2.0), ell: phi.ell })
    }

    /// 𝓐φ = G[W(φ)]
    pub fn apply_a(&self, phi: &GridFunction, b: &BubbleParams) -> Result<GridFunction> {
        check_centered(b)?;
        let c = self.coefficients(b);
        let w = self.potential_term(phi, &c)?;
        Ok(GridFunction { values: self.newton_raw(phi.ell, &w.values)?, decay: self.params.nf() - 2.0, ell: phi.ell })
    }

    /// 𝓛φ with −Δ by spectral differentiation of the grid data.
    pub fn apply_l(&self, phi: &GridFunction, b: &BubbleParams) -> Result<GridFunction> {
        check_centered(b)?;
        let nf = self.params.nf();
        if phi.decay < nf - 2.0 - 1e-12 {
            return Err(Error::Divergence { decay: phi.decay, needed: nf - 2.0 });
        }
        let c = self.coefficients(b);
        let lap = self.diff.neg_laplacian(&self.grid, phi, self.dim());
        let w = self.potential_term(phi, &c)?;
        let values = lap.values.iter().zip(&w.values).map(|(a, b)| a - b).collect();
        Ok(GridFunction { values, decay: (phi.decay + 2.0).min(nf + 2.0), ell: phi.ell })
    }

    /// ⟨r⟩^{N−2} at the nodes: the scaling of the solver unknowns.
    fn unknown_scale(&self) -> Vec<f64> {
        let nf = self.params.nf();
        self.grid.nodes.iter().map(|r| (1.0 + r * r).powf((nf - 2.0) / 2.0)).collect()
    }

    /// D 𝓐 D^{−1} with D = diag(⟨r⟩^{N−2}), the discrete compact operator in
    /// scaled unknowns. `w2_factor` multiplies the local coefficient (1 for 𝓛).
    pub fn scaled_compact_matrix(&self, b: &BubbleParams, ell: usize, w2_factor: f64) -> Result<DMatrix<f64>> {
        check_centered(b)?;
        let n = self.n();
        let sec = self.sector(ell)?;
        let c = self.coefficients(b);
        let d = self.unknown_scale();
        let ap = self.params.alpha * self.params.p;
        let gs = sec.newton.scale();
        let cw_g = &sec.newton.kernel.col_weights;
        let cw_i = &sec.riesz.col_weights;
        let mut left = sec.newton.kernel.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                left[(i, j)] *= gs * d[i] * cw_g[j];
            }
        }
        let mut inner = sec.riesz.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                inner[(i, j)] *= ap * c.w1[i] * cw_i[j] * c.w1[j] / d[j];
            }
            inner[(i, i)] += w2_factor * c.w2[i] / d[i];
        }
        Ok(left * inner)
    }

    /// Assemble the bordered system for sector ℓ (constraint against H_ℓ).
    pub fn assemble(&self, b: &BubbleParams, ell: usize) -> Result<ProjectedSystem> {
        self.assemble_with(b, ell, 1.0)
    }

    fn assemble_with(&self, b: &BubbleParams, ell: usize, w2_factor: f64) -> Result<ProjectedSystem> {
        let n = self.n();
        let a = self.scaled_compact_matrix(b, ell, w2_factor)?;
        let d = self.unknown_scale();
        let h = self.h_profile(ell, b)?;
        let z = self.z_profile(ell, b)?;
        let gh = self.newton_raw(ell, &h.values)?;
        let col: Vec<f64> = gh.iter().zip(&d).map(|(a, b)| a * b).collect();
        let col_scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ang = if ell == 1 { 1.0 / self.params.nf() } else { 1.0 };
        let area = crate::special::sphere_area(self.dim()) * ang;
        let e = self.dim() as i32 - 1;
        let row: Vec<f64> = (0..n)
            .map(|j| area * self.grid.weights[j] * self.grid.nodes[j].powi(e) * h.values[j] / d[j])
            .collect();
        let row_scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut m = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = -a[(i, j)];
            }
            m[(i, i)] += 1.0;
            m[(i, n)] = col[i] / col_scale;
            m[(n, i)] = row[i] / row_scale;
        }
        let lu = m.clone().lu();
        if lu.u().diagonal().iter().any(|v| v.abs() < 1e-300 || !v.is_finite()) {
            return Err(Error::Degenerate("bordered system is singular; the kernel was not removed".into()));
        }
        let pairing = mode_pairing(&self.params, ModeIndex::new(ell, self.dim())?);
        Ok(ProjectedSystem { b: b.clone(), ell, matrix: m, lu, scale: d, h, z, pairing })
    }

    /// Coefficient ∫gZ_ℓ / ∫H_ℓZ_ℓ of the H-component removed from g.
    pub fn projection_coefficient(&self, sys: &ProjectedSystem, g: &GridFunction) -> f64 {
        pair_integral(&self.grid, g, &sys.z, self.dim()) / sys.pairing
    }

    /// Solve 𝓛φ = g − cH, ∫φH = 0 on an assembled system. Returns φ and the
    /// (normalised) multiplier, which only absorbs discretisation error.
    pub fn solve_with(&self, sys: &ProjectedSystem, g: &GridFunction) -> Result<(GridFunction, f64)> {
        if g.ell != sys.ell {
            return Err(Error::Domain(format!("right-hand side in sector ℓ={} for a system in ℓ={}", g.ell, sys.ell)));
        }
        let nf = self.params.nf();
        if g.decay <= nf {
            return Err(Error::Divergence { decay: g.decay, needed: nf });
        }
        let n = self.n();
        let c = self.projection_coefficient(sys, g);
        let gp: Vec<f64> = g.values.iter().zip(&sys.h.values).map(|(a, h)| a - c * h).collect();
        let ng = self.newton_raw(sys.ell, &gp)?;
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = ng[i] * sys.scale[i];
        }
        let x = sys.lu.solve(&rhs).ok_or_else(|| Error::Degenerate("bordered solve failed".into()))?;
        let values = (0..n).map(|i| x[i] / sys.scale[i]).collect();
        Ok((GridFunction { values, decay: nf - 2.0, ell: sys.ell }, x[n]))
    }

    /// The projected linear solve T[μ, 0]g with its stability diagnostics.
    pub fn solve_projected(&self, g: &GridFunction, b: &BubbleParams) -> Result<(GridFunction, SolveDiagnostics)> {
        let sys = self.assemble(b, g.ell)?;
        let (phi, mult) = self.solve_with(&sys, g)?;
        let sv = sys.matrix.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let gy = weighted_sup_norm(&self.grid, g, &self.params, b, NormKind::Y)?;
        let px = weighted_sup_norm(&self.grid, &phi, &self.params, b, NormKind::X)?;
        let diag = SolveDiagnostics {
            mu: b.mu,
            xi: b.xi.clone(),
            sector: g.ell,
            sigma_min: smin,
            sigma_max: smax,
            c0_ratio: if gy > 0.0 { px / gy } else { 0.0 },
            kernel_angle: None,
            multiplier: mult,
        };
        Ok((phi, diag))
    }

    /// Singular spectrum of the unconstrained I − 𝓐 and of the bordered system.
    pub fn kernel_diagnostic(&self, b: &BubbleParams, ell: usize) -> Result<KernelReport> {
        self.kernel_diagnostic_perturbed(b, ell, 0.0)
    }

    /// As `kernel_diagnostic`, with the local coefficient α(p−1)I_λ[U^p]U^{p−2}
    /// scaled by (1 + delta): the perturbed operator no longer has Z in its kernel.
    pub fn kernel_diagnostic_perturbed(&self, b: &BubbleParams, ell: usize, delta: f64) -> Result<KernelReport> {
        let n = self.n();
        let mut a = self.scaled_compact_matrix(b, ell, 1.0 + delta)?;
        a.neg_mut();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let svd = a.svd(true, true);
        let sv = svd.singular_values.clone();
        let smax = sv.max();
        let (kmin, smin) = sv.iter().enumerate().fold((0, f64::INFINITY), |m, (k, v)| if *v < m.1 { (k, *v) } else { m });
        let near_null = sv.iter().filter(|v| **v < 1e-4 * smax).count();
        let vt = svd.v_t.as_ref().expect("requested V");
        let v: Vec<f64> = vt.row(kmin).iter().copied().collect();
        let z = self.z_profile(ell, b)?;
        let d = self.unknown_scale();
        let zs: Vec<f64> = z.values.iter().zip(&d).map(|(a, b)| a * b).collect();
        let dot: f64 = v.iter().zip(&zs).map(|(a, b)| a * b).sum();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nz = zs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let sys = self.assemble_with(b, ell, 1.0 + delta)?;
        let bsv = sys.matrix.clone().singular_values();
        let mut smallest: Vec<f64> = sv.iter().copied().collect();
        smallest.sort_by(|a, b| a.partial_cmp(b).unwrap());
        smallest.truncate(4);
        Ok(KernelReport {
            mu: b.mu,
            xi: b.xi.clone(),
            sector: ell,
            sigma_max: smax,
            sigma_min: smin,
            smallest,
            near_null_count: near_null,
            kernel_angle: (dot / (nv * nz)).abs(),
            constrained_sigma_min: bsv.min(),
            constrained_sigma_max: bsv.max(),
        })
    }

    /// ∂_μ (m = 0) or ∂_{ξ_m} (m ≥ 1) of T[μ, ξ]g at a centred bubble, for a
    /// fixed radial g. The derivative of the projected equation gives
    /// 𝓛ψ̃ = (1/μ)(l_m − r_m + t_m) with ∫ψ̃H_m = 0, where μ l_m = −μ(∂𝓛)φ,
    /// r_m = Σ_j c_j H̃_{j,m} and t_m = Σ_j (∫gZ̄_{j,m}/∫H_jZ_j) H_j; then
    /// ψ_m = ψ̃ − Σ_j (1/μ)(∫φH̃_{j,m}/∫H_jZ_j) Z_j.
    /// For m ≥ 1 the result is the ℓ = 1 profile along e_m.
    pub fn solver_derivative(&self, g: &GridFunction, b: &BubbleParams, m: ModeIndex) -> Result<GridFunction> {
        check_centered(b)?;
        if g.ell != 0 {
            return Err(Error::Domain("solver_derivative takes a radial right-hand side".into()));
        }
        let m = m.get();
        let ell = m.min(1);
        let n = self.n();
        let mu = b.mu;
        let nf = self.params.nf();
        let p = self.params.p;
        let ap = self.params.alpha * p;
        let dim = self.dim();
        let (phi, _) = self.solve_with(&self.assemble(b, 0)?, g)?;
        let c = self.coefficients(b);
        let z = self.z_profile(ell, b)?;
        // μ-derivatives of the coefficients; for ξ_m the same formulas with Z_m
        let dw1: Vec<f64> = (0..n).map(|i| (p - 1.0) * c.u[i].powf(p - 2.0) * z.values[i]).collect();
        let dw2: Vec<f64> = (0..n)
            .map(|i| nf * (nf - 2.0) * (p - 1.0) * (4.0 / (nf - 2.0)) * c.u[i].powf(4.0 / (nf - 2.0) - 1.0) * z.values[i])
            .collect();
        let prod0: Vec<f64> = (0..n).map(|i| c.w1[i] * phi.values[i]).collect();
        let prod1: Vec<f64> = (0..n).map(|i| dw1[i] * phi.values[i]).collect();
        let i0 = self.riesz_raw(0, &prod0)?;
        let i1 = self.riesz_raw(ell, &prod1)?;
        // μ l_m: the four terms of −μ(∂𝓛)φ
        let l: Vec<f64> = (0..n).map(|i| ap * i1[i] * c.w1[i] + ap * i0[i] * dw1[i] + dw2[i] * phi.values[i]).collect();
        // r_m: only the radial projection of g is non-zero
        let sys0 = self.assemble(b, 0)?;
        let c0 = self.projection_coefficient(&sys0, g);
        let axis = m.max(1) - 1;
        let ht0 = profile_along(&self.grid, dim, axis, |x| bubble::htilde_scaled(&self.params, 0, m, b, x));
        let rhs: Vec<f64> = (0..n).map(|i| (l[i] - c0 * ht0[i]) / mu).collect();
        let rhs_f = GridFunction { values: rhs, decay: nf + 2.0, ell };
        let sys = if ell == 0 { sys0 } else { self.assemble(b, 1)? };
        let (mut psi, _) = self.solve_with(&sys, &rhs_f)?;
        // correction along Z_m
        let num = if m == 0 {
            let ht = GridFunction::new(ht0.clone(), nf + 2.0);
            pair_integral(&self.grid, &phi, &ht, dim)
        } else {
            // ∫φ H̃_{m,m} for radial φ: H̃_{m,m} averaged over the sphere
            let mut x = vec![0.0; dim];
            let avg: Vec<f64> = self
                .grid
                .nodes
                .iter()
                .map(|&r| {
                    x.iter_mut().for_each(|v| *v = 0.0);
                    x[m - 1] = r;
                    let along = bubble::htilde_scaled(&self.params, m, m, b, &x);
                    x[m - 1] = 0.0;
                    x[m % dim] = r;
                    let across = bubble::htilde_scaled(&self.params, m, m, b, &x);
                    (along + (nf - 1.0) * across) / nf
                })
                .collect();
            pair_integral(&self.grid, &phi, &GridFunction::new(avg, nf + 2.0), dim)
        };
        let coef = num / (mu * sys.pairing);
        for i in 0..n {
            psi.values[i] -= coef * z.values[i];
        }
        Ok(psi)
    }
}

/// Bordered (KKT) system for one sector at one bubble, LU-factorised once.
pub struct ProjectedSystem {
    pub b: BubbleParams,
    pub ell: usize,
    /// [[I − D𝓐D^{−1}, DG[H]], [∫·H D^{−1}, 0]] with the border normalised.
    pub matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    scale: Vec<f64>,
    pub h: GridFunction,
    pub z: GridFunction,
    /// ∫H_ℓZ_ℓ from the closed-form pairing.
    pub pairing: f64,
}

impl ProjectedSystem {
    pub fn condition_number(&self) -> f64 {
        let sv = self.matrix.clone().singular_values();
        sv.max() / sv.min()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub sector: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub c0_ratio: f64,
    pub kernel_angle: Option<f64>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub mu: f64,
    pub xi: Vec<f64>,
    pub sector: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub smallest: Vec<f64>,
    pub near_null_count: usize,
    /// |cos| of the angle between the weakest singular vector and Z.
    pub kernel_angle: f64,
    pub constrained_sigma_min: f64,
    pub constrained_sigma_max: f64,
}

/// Which covariance a transported field follows: X-class φ picks up
/// μ^{(N−2)/2}, Y-class g picks up μ^{(N+2)/2}.
pub fn scaling_transport(
    grid: &RadialGrid,
    params: &ProblemParams,
    f: &GridFunction,
    from: &BubbleParams,
    to: &BubbleParams,
    kind: NormKind,
) -> Result<GridFunction> {
    check_centered(from)?;
    check_centered(to)?;
    let nf = params.nf();
    let ratio = from.mu / to.mu;
    let e = match kind {
        NormKind::X => (nf - 2.0) / 2.0,
        NormKind::Y => (nf + 2.0) / 2.0,
    };
    let factor = ratio.powf(e);
    let q = f.decay;
    let psi: Vec<f64> = grid.nodes.iter().zip(&f.values).map(|(r, v)| v * (1.0 + r * r).powf(q / 2.0)).collect();
    let values = grid
        .nodes
        .iter()
        .map(|&r| {
            let s = r * ratio;
            factor * grid.interpolate(&psi, s) * (1.0 + s * s).powf(-q / 2.0)
        })
        .collect();
    Ok(GridFunction { values, decay: f.decay, ell: f.ell })
}
