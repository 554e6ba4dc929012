//! The bubble, grid and Riesz identity suite run by `verify-identities`.

use crate::bubble::{
    bubble_value, laplacian_z, mode_pairing, probe_points, unit, BubbleParams, ModeIndex, ProblemParams,
};
use crate::error::Result;
use crate::grid::{build_radial_grid, build_sphere_rule, integrate_fn, FullGrid, GridFunction};
use crate::linop::{sector_profile, LinearContext};
use crate::riesz::{riesz_radial, KernelOptions};
use crate::special::{beta, sphere_area};
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub anchor: String,
    pub n: usize,
    pub lambda: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub regime: &'static str,
}

#[derive(Debug, Clone)]
pub struct IdentityOptions {
    pub grid_n: usize,
    pub map: String,
    pub sphere_degree: usize,
    pub kernel: KernelOptions,
    pub cache: Option<PathBuf>,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        IdentityOptions { grid_n: 256, map: "rational".into(), sphere_degree: 8, kernel: KernelOptions::default(), cache: None }
    }
}

/// ∫_0^∞ r^{a−1}⟨r⟩^{−2b} dr
fn radial_beta(a: f64, b: f64) -> f64 {
    0.5 * beta(a / 2.0, b - a / 2.0)
}

/// ∫Z_jH_j from Beta functions.
pub fn mode_pairing_closed_form(n: usize, j: usize) -> f64 {
    let nf = n as f64;
    let b = nf + 2.0;
    let area = sphere_area(n);
    if j == 0 {
        0.25 * (nf - 2.0).powi(2)
            * area
            * (radial_beta(nf + 4.0, b) - 2.0 * radial_beta(nf + 2.0, b) + radial_beta(nf, b))
    } else {
        (nf - 2.0).powi(2) / nf * area * radial_beta(nf + 2.0, b)
    }
}

/// Sup over probes of |−ΔZ_j − N(N+2)H_j|, with −Δ by central differences,
/// relative to sup |N(N+2)H_j|.
fn laplacian_fd_error(params: &ProblemParams, j: usize) -> f64 {
    let n = params.n;
    let h = 1e-3;
    let mode = ModeIndex::new(j, n).expect("mode index in range");
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for y in probe_points(n, 48) {
        let z0 = unit::z(n, j, &y);
        let mut lap = 0.0;
        for d in 0..n {
            let mut a = y.clone();
            a[d] += h;
            let mut b = y.clone();
            b[d] -= h;
            lap += (unit::z(n, j, &a) - 2.0 * z0 + unit::z(n, j, &b)) / (h * h);
        }
        let want = -laplacian_z(params, mode, &y);
        err = err.max((-lap - want).abs());
        scale = scale.max(want.abs());
    }
    err / scale
}

fn check(anchor: &str, params: &ProblemParams, measured: f64, tolerance: f64) -> IdentityCheck {
    IdentityCheck {
        anchor: anchor.into(),
        n: params.n,
        lambda: params.lambda,
        measured,
        tolerance,
        pass: measured.is_finite() && measured <= tolerance,
        regime: if params.singular_regime() { "singular" } else { "regular" },
    }
}

/// Runs every identity for one (N, λ). `params.alpha` is used as given, so a
/// corrupted α shows up in the first check.
pub fn verify_identities(params: &ProblemParams, opts: &IdentityOptions) -> Result<Vec<IdentityCheck>> {
    let n = params.n;
    let nf = params.nf();
    let mut out = Vec::new();

    let want = nf * (nf - 2.0);
    out.push(check("alpha_a", params, (params.alpha * params.a_const - want).abs() / want, 1e-12));

    // Riesz potential of U^p against A U^{λ/(N−2)} on the grid
    let grid = Arc::new(build_radial_grid(opts.grid_n, &opts.map, 1.0)?);
    let ctx = LinearContext::new(params.clone(), grid.clone(), opts.kernel.clone(), opts.cache.clone());
    let b = BubbleParams::unit(n);
    let up = sector_profile(&grid, n, |x| bubble_value(params, &b, x).powf(params.p));
    let f = GridFunction::new(up, (nf - 2.0) * params.p);
    let got = riesz_radial(&ctx.sector(0)?.riesz, &f)?;
    let rel = got
        .values
        .iter()
        .zip(&grid.nodes)
        .map(|(v, r)| {
            let u = (1.0 + r * r).powf(-(nf - 2.0) / 2.0);
            let w = params.a_const * u.powf(params.lambda / (nf - 2.0));
            (v - w).abs() / w
        })
        .fold(0.0, f64::max);
    out.push(check("riesz_closed_form", params, rel, if params.singular_regime() { 1e-4 } else { 1e-6 }));

    // −ΔU = N(N−2)U^{(N+2)/(N−2)} with the grid Laplacian
    let u = GridFunction::new(sector_profile(&grid, n, |x| bubble_value(params, &b, x)), nf - 2.0);
    let lap = ctx.diff.neg_laplacian(&grid, &u, n);
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (l, v) in lap.values.iter().zip(&u.values) {
        let w = want * v.powf(params.crit());
        err = err.max((l - w).abs());
        scale = scale.max(w.abs());
    }
    out.push(check("bubble_equation", params, err / scale, 1e-6));

    for j in 0..=1 {
        out.push(check(&format!("laplacian_z{j}"), params, laplacian_fd_error(params, j), 1e-5));
        let m = ModeIndex::new(j, n)?;
        let q = mode_pairing(params, m);
        let c = mode_pairing_closed_form(n, j);
        out.push(check(&format!("pairing_z{j}h{j}"), params, (q - c).abs() / c, 1e-8));
    }

    // pairings on the tensor grid: orthogonality and the derivative-mode identity
    let fg = FullGrid::new(
        Arc::new(build_radial_grid(128, &opts.map, 1.0)?),
        build_sphere_rule(n, opts.sphere_degree)?,
    );
    let diag = mode_pairing(params, ModeIndex::new(0, n)?).min(mode_pairing(params, ModeIndex::new(1, n)?));
    let mut off = 0.0f64;
    let mut thbz = 0.0f64;
    for m in 0..=n {
        for j in 0..=n {
            if j != m {
                let v = integrate_fn(&fg, |y| unit::z(n, j, y) * unit::h(n, m, y));
                off = off.max(v.abs() / diag);
            }
            let lhs = integrate_fn(&fg, |y| unit::htilde(n, m, j, y) * unit::z(n, m, y));
            let rhs = -integrate_fn(&fg, |y| unit::h(n, m, y) * unit::zbar(n, m, j, y));
            thbz = thbz.max((lhs - rhs).abs() / diag);
        }
    }
    out.push(check("mode_orthogonality", params, off, 1e-10));
    out.push(check("htilde_zbar_pairing", params, thbz, 1e-6));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pairing_closed_form_in_three_dimensions() {
        for j in 0..2 {
            assert!((mode_pairing_closed_form(3, j) - PI * PI / 64.0).abs() < 1e-14);
        }
    }
}
