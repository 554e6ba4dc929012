use choquard::bubble::{BubbleParams, ModeIndex, ProblemParams};
use choquard::grid::{build_radial_grid, pair_integral, weighted_sup_norm, GridFunction, NormKind};
use choquard::linop::{scaling_transport, LinearContext};
use choquard::riesz::KernelOptions;
use choquard::special::beta;
use std::sync::Arc;

fn context(n: usize, lambda: f64, nodes: usize) -> LinearContext {
    let params = ProblemParams::new(n, lambda).unwrap();
    let grid = Arc::new(build_radial_grid(nodes, "rational", 1.0).unwrap());
    LinearContext::new(params, grid, KernelOptions::default(), None)
}

fn xnorm(ctx: &LinearContext, f: &GridFunction, b: &BubbleParams) -> f64 {
    weighted_sup_norm(&ctx.grid, f, &ctx.params, b, NormKind::X).unwrap()
}

fn ynorm(ctx: &LinearContext, f: &GridFunction, b: &BubbleParams) -> f64 {
    weighted_sup_norm(&ctx.grid, f, &ctx.params, b, NormKind::Y).unwrap()
}

/// A Y-class right-hand side that is not special for the operator.
fn test_rhs(ctx: &LinearContext, mu: f64) -> GridFunction {
    let nf = ctx.params.nf();
    let s = mu.powf(-(nf + 2.0) / 2.0);
    GridFunction::sample(&ctx.grid, nf + 2.0, |r| {
        let y = r / mu;
        s * (1.0 + y * y).powf(-(nf + 2.0) / 2.0) * (1.0 + 0.3 * y * y / (1.0 + y * y) - 0.2 / (1.0 + y * y))
    })
}

/// φ* = U − cZ_0 with ∫φ*H_0 = 0 and g = 𝓛φ* = 𝓛U = −2N(N−2)(p−1)U^{(N+2)/(N−2)}.
fn manufactured(ctx: &LinearContext, b: &BubbleParams) -> (GridFunction, GridFunction) {
    let n = ctx.dim();
    let nf = ctx.params.nf();
    let u = GridFunction::new(ctx.coefficients(b).u, nf - 2.0);
    let z0 = ctx.z_profile(0, b).unwrap();
    let h0 = ctx.h_profile(0, b).unwrap();
    let c = pair_integral(&ctx.grid, &u, &h0, n) / pair_integral(&ctx.grid, &z0, &h0, n);
    let coef = -2.0 * nf * (nf - 2.0) * (ctx.params.p - 1.0);
    let g = GridFunction::new(u.values.iter().map(|v| coef * v.powf((nf + 2.0) / (nf - 2.0))).collect(), nf + 2.0);
    (u.axpy(-c, &z0), g)
}

#[test]
fn operator_annihilates_the_modes() {
    for &(n, lambda) in &[(3, 1.0), (3, 2.0), (5, 3.0)] {
        let ctx = context(n, lambda, 256);
        let b = BubbleParams::unit(n);
        for j in 0..2 {
            let z = ctx.z_profile(j, &b).unwrap();
            let lz = ctx.apply_l(&z, &b).unwrap();
            let e = ynorm(&ctx, &lz, &b);
            assert!(e <= 1e-5, "N={n} λ={lambda} j={j}: ‖𝓛Z‖_Y = {e:.3e}");
        }
        let zero = GridFunction::zeros(ctx.n(), ctx.params.nf() - 2.0);
        assert_eq!(ctx.apply_l(&zero, &b).unwrap().max_abs(), 0.0);
    }
}

#[test]
fn operator_on_bubble_matches_termwise_value_at_origin() {
    let ctx = context(3, 1.0, 192);
    let pp = &ctx.params;
    let b = BubbleParams::unit(3);
    let u = GridFunction::new(ctx.coefficients(&b).u, 1.0);
    let lu = ctx.apply_l(&u, &b).unwrap();
    let nf = pp.nf();
    // I_λ[U^p](0) = |S^{N−1}| ∫ r^{N−1−λ}(1+r²)^{−(2N−λ)/2} dr
    let i0 = 4.0 * std::f64::consts::PI * 0.5 * beta((nf - pp.lambda) / 2.0, nf / 2.0);
    let want = nf * (nf - 2.0) - pp.alpha * (2.0 * pp.p - 1.0) * i0;
    let got = ctx.grid.interpolate(&lu.values, 0.0);
    assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
}

#[test]
fn potential_term_pairs_with_modes() {
    // ∫ W(φ) Z_j = N(N+2) ∫ φ H_j
    for &(n, lambda) in &[(3, 1.0), (4, 2.0), (5, 4.0)] {
        let ctx = context(n, lambda, 192);
        let nf = ctx.params.nf();
        let b = BubbleParams::unit(n);
        let c = ctx.coefficients(&b);
        for ell in 0..2 {
            let phi = GridFunction {
                values: ctx.grid.sample(|r| r.powi(ell as i32) * (1.0 + r * r).powf(-(nf - 2.0 + ell as f64) / 2.0) * (1.0 + 0.5 / (1.0 + r))),
                decay: nf - 2.0,
                ell,
            };
            let w = ctx.potential_term(&phi, &c).unwrap();
            let z = ctx.z_profile(ell, &b).unwrap();
            let h = ctx.h_profile(ell, &b).unwrap();
            let lhs = pair_integral(&ctx.grid, &w, &z, n);
            let rhs = nf * (nf + 2.0) * pair_integral(&ctx.grid, &phi, &h, n);
            assert!((lhs / rhs - 1.0).abs() <= 1e-6, "N={n} λ={lambda} ℓ={ell}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn manufactured_solution_is_recovered() {
    let ctx = context(3, 1.0, 256);
    for &mu in &[0.5, 1.0, 2.0] {
        let b = BubbleParams::radial(3, mu).unwrap();
        let (star, g) = manufactured(&ctx, &b);
        let (phi, d) = ctx.solve_projected(&g, &b).unwrap();
        let err = xnorm(&ctx, &phi.axpy(-1.0, &star), &b) / xnorm(&ctx, &star, &b);
        assert!(err <= 1e-4, "μ={mu}: rel X error {err:.3e}");
        assert!(d.multiplier.abs() < 1e-8);
    }
}

#[test]
fn pure_mode_right_hand_side_gives_zero() {
    let ctx = context(3, 1.0, 128);
    let b = BubbleParams::unit(3);
    let h0 = ctx.h_profile(0, &b).unwrap();
    let (phi, _) = ctx.solve_projected(&h0, &b).unwrap();
    assert!(xnorm(&ctx, &phi, &b) < 1e-10);
}

#[test]
fn stability_ratio_does_not_depend_on_scale() {
    let ctx = context(3, 1.0, 256);
    let ratios: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&mu| {
            let b = BubbleParams::radial(3, mu).unwrap();
            ctx.solve_projected(&test_rhs(&ctx, mu), &b).unwrap().1.c0_ratio
        })
        .collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(hi / lo - 1.0 < 0.05, "{ratios:?}");
}

#[test]
fn transport_round_trip_and_bubble() {
    let ctx = context(3, 1.0, 256);
    let b1 = BubbleParams::unit(3);
    let b2 = BubbleParams::radial(3, 1.7).unwrap();
    let g = test_rhs(&ctx, 1.0);
    let there = scaling_transport(&ctx.grid, &ctx.params, &g, &b1, &b2, NormKind::Y).unwrap();
    let back = scaling_transport(&ctx.grid, &ctx.params, &there, &b2, &b1, NormKind::Y).unwrap();
    let e = ynorm(&ctx, &back.axpy(-1.0, &g), &b1) / ynorm(&ctx, &g, &b1);
    assert!(e < 1e-10, "round trip {e:.3e}");
    let u2 = GridFunction::new(ctx.coefficients(&b2).u, 1.0);
    let u1 = GridFunction::new(ctx.coefficients(&b1).u, 1.0);
    let t = scaling_transport(&ctx.grid, &ctx.params, &u2, &b2, &b1, NormKind::X).unwrap();
    assert!(xnorm(&ctx, &t.axpy(-1.0, &u1), &b1) < 1e-10);
}

#[test]
fn solve_commutes_with_rescaling() {
    let ctx = context(3, 1.0, 256);
    let b1 = BubbleParams::unit(3);
    for &mu in &[0.5, 2.0] {
        let b = BubbleParams::radial(3, mu).unwrap();
        let g = test_rhs(&ctx, mu);
        let (phi, _) = ctx.solve_projected(&g, &b).unwrap();
        let g1 = scaling_transport(&ctx.grid, &ctx.params, &g, &b, &b1, NormKind::Y).unwrap();
        let (phi1, _) = ctx.solve_projected(&g1, &b1).unwrap();
        let back = scaling_transport(&ctx.grid, &ctx.params, &phi1, &b1, &b, NormKind::X).unwrap();
        let d = xnorm(&ctx, &phi.axpy(-1.0, &back), &b);
        assert!(d <= 1e-6, "μ={mu}: two-path distance {d:.3e}");
    }
}

#[test]
fn kernel_is_spanned_by_the_dilation_mode() {
    let ctx = context(3, 1.0, 256);
    let b = BubbleParams::unit(3);
    let rep = ctx.kernel_diagnostic(&b, 0).unwrap();
    assert_eq!(rep.near_null_count, 1, "{rep:?}");
    assert!(rep.kernel_angle >= 0.999);
    assert!(rep.constrained_sigma_min / rep.constrained_sigma_max >= 1e-6);
    let dipole = ctx.kernel_diagnostic(&b, 1).unwrap();
    assert_eq!(dipole.near_null_count, 1, "{dipole:?}");
    assert!(dipole.kernel_angle >= 0.999);
    let perturbed = ctx.kernel_diagnostic_perturbed(&b, 0, 0.05).unwrap();
    assert!(perturbed.sigma_min > 1e3 * rep.sigma_min.max(1e-14), "{perturbed:?}");
}

#[test]
fn repeated_solves_agree() {
    let ctx = context(3, 2.0, 128);
    let b = BubbleParams::radial(3, 1.3).unwrap();
    let g = test_rhs(&ctx, 1.3);
    let sys = ctx.assemble(&b, 0).unwrap();
    let (a, _) = ctx.solve_with(&sys, &g).unwrap();
    let _ = ctx.solve_with(&sys, &test_rhs(&ctx, 0.7)).unwrap();
    let (c, _) = ctx.solve_projected(&g, &b).unwrap();
    let d = xnorm(&ctx, &a.axpy(-1.0, &c), &b);
    assert!(d <= 1e-12, "{d:.3e}");
}

#[test]
fn derivative_matches_finite_differences() {
    let ctx = context(3, 1.0, 256);
    let g = test_rhs(&ctx, 1.0);
    for &mu in &[0.5, 1.0, 2.0] {
        let b = BubbleParams::radial(3, mu).unwrap();
        let psi = ctx.solver_derivative(&g, &b, ModeIndex::new(0, 3).unwrap()).unwrap();
        let h = 1e-4;
        let (p, _) = ctx.solve_projected(&g, &BubbleParams::radial(3, mu + h).unwrap()).unwrap();
        let (m, _) = ctx.solve_projected(&g, &BubbleParams::radial(3, mu - h).unwrap()).unwrap();
        let fd = p.axpy(-1.0, &m).scaled(0.5 / h);
        let e = xnorm(&ctx, &psi.axpy(-1.0, &fd), &b) / xnorm(&ctx, &fd, &b);
        assert!(e <= 1e-4, "μ={mu}: {e:.3e}");
    }
    let zero = GridFunction::zeros(ctx.n(), 5.0);
    let b = BubbleParams::unit(3);
    for m in 0..2 {
        let psi = ctx.solver_derivative(&zero, &b, ModeIndex::new(m, 3).unwrap()).unwrap();
        assert_eq!(psi.max_abs(), 0.0);
    }
}

#[test]
fn translation_derivative_matches_shifted_solve() {
    // With g fixed, T[μ,ξ]g(x) = T[μ,0][g(·+ξ)](x−ξ), so
    // ∂_{ξ_1}T g = −∂_1 φ + T[μ,0][∂_1 g].
    let ctx = context(3, 1.0, 256);
    let nf = ctx.params.nf();
    let b = BubbleParams::unit(3);
    // g = (1+r²)^{−(N+2)/2} + 0.3(1+r²)^{−(N+4)/2}
    let g = GridFunction::sample(&ctx.grid, nf + 2.0, |r| {
        (1.0 + r * r).powf(-(nf + 2.0) / 2.0) + 0.3 * (1.0 + r * r).powf(-(nf + 4.0) / 2.0)
    });
    let dg = GridFunction {
        values: ctx.grid.sample(|r| {
            let s = 1.0 + r * r;
            -(nf + 2.0) * r * s.powf(-(nf + 4.0) / 2.0) - 0.3 * (nf + 4.0) * r * s.powf(-(nf + 6.0) / 2.0)
        }),
        decay: nf + 2.0,
        ell: 1,
    };
    let (phi, _) = ctx.solve_projected(&g, &b).unwrap();
    let dphi = ctx.diff.derivative(&ctx.grid, &phi);
    let (t_dg, _) = ctx.solve_projected(&dg, &b).unwrap();
    let oracle = GridFunction { values: dphi.values.iter().map(|v| -v).collect(), decay: nf - 2.0, ell: 1 }.axpy(1.0, &t_dg);
    let psi = ctx.solver_derivative(&g, &b, ModeIndex::new(1, 3).unwrap()).unwrap();
    let e = xnorm(&ctx, &psi.axpy(-1.0, &oracle), &b) / xnorm(&ctx, &oracle, &b);
    assert!(e <= 1e-6, "{e:.3e}");
}

#[test]
fn derivative_bound_scales_like_inverse_mu() {
    let ctx = context(3, 1.0, 256);
    let cs: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&mu| {
            let b = BubbleParams::radial(3, mu).unwrap();
            let g = test_rhs(&ctx, mu);
            let psi = ctx.solver_derivative(&g, &b, ModeIndex::new(0, 3).unwrap()).unwrap();
            mu * xnorm(&ctx, &psi, &b) / ynorm(&ctx, &g, &b)
        })
        .collect();
    let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().cloned().fold(0.0, f64::max);
    assert!(hi / lo - 1.0 < 0.2, "{cs:?}");
}

#[test]
fn solve_is_lipschitz_in_mu() {
    let ctx = context(3, 1.0, 256);
    let g = test_rhs(&ctx, 1.0);
    let b0 = BubbleParams::unit(3);
    let (phi0, _) = ctx.solve_projected(&g, &b0).unwrap();
    let hs = [1e-3, 4e-3, 1.6e-2];
    let ds: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let (p, _) = ctx.solve_projected(&g, &BubbleParams::radial(3, 1.0 + h).unwrap()).unwrap();
            xnorm(&ctx, &p.axpy(-1.0, &phi0), &b0)
        })
        .collect();
    let slope = (ds[2] / ds[0]).ln() / (hs[2] / hs[0]).ln();
    assert!((slope - 1.0).abs() <= 0.1, "slope {slope}");
}

#[test]
fn rejects_off_centre_and_slow_decay() {
    let ctx = context(3, 1.0, 64);
    let off = BubbleParams::new(1.0, vec![0.1, 0.0, 0.0]).unwrap();
    let g = test_rhs(&ctx, 1.0);
    assert!(ctx.solve_projected(&g, &off).is_err());
    let slow = GridFunction::new(g.values.clone(), 2.5);
    assert!(ctx.solve_projected(&slow, &BubbleParams::unit(3)).is_err());
}
