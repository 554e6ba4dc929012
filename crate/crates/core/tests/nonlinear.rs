use choquard::bubble::{BubbleParams, ProblemParams};
use choquard::grid::{build_radial_grid, weighted_sup_norm, GridFunction, NormKind};
use choquard::kcheck::{Bump, PotentialSpec};
use choquard::linop::LinearContext;
use choquard::nonlinear::*;
use choquard::riesz::KernelOptions;
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

fn ring(n: usize) -> PotentialSpec {
    PotentialSpec {
        dim: n,
        baseline: 1.0,
        bumps: vec![Bump { kind: "ring".into(), amplitude: 1.0, center: vec![0.0; n], width: 1.0, power: 0.0, radius: 3.0 }],
    }
}

fn smooth(n: usize) -> PotentialSpec {
    PotentialSpec {
        dim: n,
        baseline: 1.0,
        bumps: vec![Bump { kind: "gaussian".into(), amplitude: 1.0, center: vec![0.0; n], width: 1.0, power: 0.0, radius: 0.0 }],
    }
}

/// Bounded by U and of the right decay, not aligned with any mode.
fn test_phi(ctx: &LinearContext, b: &BubbleParams) -> GridFunction {
    let nf = ctx.params.nf();
    let u = ctx.coefficients(b).u;
    let values = ctx.grid.nodes.iter().zip(&u).map(|(r, u)| u * (0.5 - 1.0 / (1.0 + r * r)) * (1.0 + 0.2 * r.sin())).collect();
    GridFunction::new(values, nf - 2.0)
}

#[test]
fn remainder_is_quadratic() {
    for &(n, lambda) in &[(3, 1.0), (3, 2.0), (5, 3.0)] {
        let ctx = context(n, lambda, 128);
        let b = BubbleParams::unit(n);
        let phi = test_phi(&ctx, &b);
        let zero = GridFunction::zeros(ctx.n(), ctx.params.nf() - 2.0);
        assert_eq!(nonlinear_remainder(&ctx, &zero, &b).unwrap().max_abs(), 0.0);
        let ratios: Vec<f64> = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
            .iter()
            .map(|t| ynorm(&ctx, &nonlinear_remainder(&ctx, &phi.scaled(*t), &b).unwrap(), &b) / (t * t))
            .collect();
        let last = *ratios.last().unwrap();
        for r in &ratios[1..] {
            assert!((r / last - 1.0).abs() < 0.1, "N={n} λ={lambda}: {ratios:?}");
        }
    }
}

#[test]
fn remainder_lipschitz_bound() {
    let ctx = context(3, 1.0, 128);
    let b = BubbleParams::unit(3);
    let phi = test_phi(&ctx, &b);
    let psi = GridFunction::sample(&ctx.grid, 1.0, |r| 0.7 * (1.0 + r * r).powf(-0.5) * (r / (1.0 + r)).cos());
    let mut consts = Vec::new();
    for t in [0.1, 0.01, 0.001] {
        let a = phi.scaled(t);
        let c = psi.scaled(t);
        let d = nonlinear_remainder(&ctx, &a, &b).unwrap().axpy(-1.0, &nonlinear_remainder(&ctx, &c, &b).unwrap());
        let scale = (xnorm(&ctx, &a, &b) + xnorm(&ctx, &c, &b)) * xnorm(&ctx, &a.axpy(-1.0, &c), &b);
        consts.push(ynorm(&ctx, &d, &b) / scale);
    }
    // the constant is bounded as the ball shrinks
    assert!(consts[2] < 1.2 * consts[0] + 1.0, "{consts:?}");
}

#[test]
fn remainder_rejects_large_phi() {
    let ctx = context(3, 1.0, 64);
    let b = BubbleParams::unit(3);
    let big = GridFunction::new(ctx.coefficients(&b).u.iter().map(|u| 0.6 * u).collect(), 1.0);
    assert!(nonlinear_remainder(&ctx, &big, &b).is_err());
}

#[test]
fn perturbation_term_examples() {
    let ctx = context(3, 1.0, 64);
    let b = BubbleParams::unit(3);
    let u = ctx.coefficients(&b).u;
    let zero = GridFunction::zeros(ctx.n(), 1.0);
    let c = PotentialSpec::constant(3, 2.0).unwrap();
    let e = perturbation_term(&ctx, &zero, &b, &c).unwrap();
    for (ei, ui) in e.values.iter().zip(&u) {
        assert!((ei - 2.0 * ui.powi(5)).abs() <= 1e-14 * ui.powi(5).max(1e-300));
    }
    // ω clipped at zero
    let neg = GridFunction::new(u.iter().map(|v| -2.0 * v).collect(), 1.0);
    assert_eq!(perturbation_term(&ctx, &neg, &b, &c).unwrap().max_abs(), 0.0);
    let off = PotentialSpec {
        dim: 3,
        baseline: 1.0,
        bumps: vec![Bump { kind: "gaussian".into(), amplitude: 1.0, center: vec![1.0, 0.0, 0.0], width: 1.0, power: 0.0, radius: 0.0 }],
    };
    assert!(perturbation_term(&ctx, &zero, &b, &off).is_err());
}

#[test]
fn zero_eps_gives_zero() {
    let ctx = context(3, 1.0, 128);
    let b = BubbleParams::unit(3);
    let s = contraction_solve(&ctx, &b, 0.0, &ring(3), &ContractionOptions::default()).unwrap();
    assert_eq!(s.phi.max_abs(), 0.0);
    assert!(s.c.iter().all(|c| *c == 0.0));
}

#[test]
fn phi_scales_linearly_in_eps() {
    let ctx = context(3, 1.0, 256);
    let b = BubbleParams::unit(3);
    let k = ring(3);
    let eps = [1e-3, 3e-3, 1e-2, 3e-2];
    let norms: Vec<f64> = eps
        .iter()
        .map(|e| contraction_solve(&ctx, &b, *e, &k, &ContractionOptions::default()).unwrap().phi_norm)
        .collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 4.0;
    let my = ly.iter().sum::<f64>() / 4.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() <= 0.05, "slope {slope}");
}

#[test]
fn iteration_contracts_and_solution_is_positive() {
    for &(n, lambda) in &[(3, 1.0), (4, 2.0), (5, 3.0)] {
        let ctx = context(n, lambda, 192);
        let b = BubbleParams::radial(n, 1.5).unwrap();
        let s = contraction_solve(&ctx, &b, 0.05, &ring(n), &ContractionOptions::default()).unwrap();
        assert!(s.final_step <= 1e-10);
        for w in s.trace.windows(2) {
            if w[0] > 1e-13 {
                assert!(w[1] / w[0] <= 0.5, "N={n}: trace {:?}", s.trace);
            }
        }
        assert!(s.phi_norm <= 0.5);
        assert!(s.min_omega_ratio >= 0.5);
        let bound = 2.0 * s.constants.c0 * s.constants.c2 * 0.05 * ring(n).sup_norm_bound();
        assert!(s.phi_norm <= bound, "‖φ‖ = {} > 2C₀C₂ε‖k‖ = {bound}", s.phi_norm);
        assert!(s.constants.contracts_by_half);
    }
}

#[test]
fn residual_of_the_full_equation() {
    let ctx = context(3, 1.0, 256);
    let b = BubbleParams::unit(3);
    let k = smooth(3);
    let s = contraction_solve(&ctx, &b, 1e-2, &k, &ContractionOptions::default()).unwrap();
    let r = residual_check(&ctx, &s, &k).unwrap();
    assert!(r.residual_y <= 1e-5, "{r:?}");
    assert!(r.integral_residual_x <= 1e-10, "{r:?}");
    assert!(r.min_omega > 0.0);
    let c = c_coefficients(&ctx, &s, &k).unwrap();
    assert!((c[0] - s.c[0]).abs() <= 1e-8 * s.c[0].abs(), "{c:?} vs {:?}", s.c);
    assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn fixed_point_is_unique_from_different_starts() {
    let ctx = context(3, 1.0, 192);
    let b = BubbleParams::unit(3);
    let k = ring(3);
    let opts = ContractionOptions::default();
    let sys = ctx.assemble(&b, 0).unwrap();
    let a = contraction_with(&ctx, &sys, &b, 0.02, &k, &opts).unwrap();
    let u = ctx.coefficients(&b).u;
    for (amp, freq) in [(0.1, 1.0), (-0.05, 3.0), (0.2, 0.3)] {
        let start = GridFunction::new(ctx.grid.nodes.iter().zip(&u).map(|(r, u)| amp * u * (freq * r).cos()).collect(), 1.0);
        let c = contraction_from(&ctx, &sys, &b, 0.02, &k, &opts, &start).unwrap();
        assert!(xnorm(&ctx, &a.phi.axpy(-1.0, &c.phi), &b) <= 1e-9, "start ({amp}, {freq})");
    }
}

#[test]
fn eps_out_of_range_and_derivative() {
    let ctx = context(3, 1.0, 128);
    let b = BubbleParams::unit(3);
    let k = ring(3);
    let opts = ContractionOptions::default();
    assert!(contraction_solve(&ctx, &b, 0.2, &k, &opts).is_err());
    assert!(contraction_solve(&ctx, &b, -1e-3, &k, &opts).is_err());
    assert!(phi_parameter_derivative(&ctx, &b, 1e-2, &k, 1, &opts).is_err());
    let d = phi_parameter_derivative(&ctx, &b, 1e-2, &k, 0, &opts).unwrap();
    // ∂_μφ is O(ε)
    let d2 = phi_parameter_derivative(&ctx, &b, 2e-2, &k, 0, &opts).unwrap();
    let ratio = xnorm(&ctx, &d2, &b) / xnorm(&ctx, &d, &b);
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
}

#[test]
fn field_dump_round_trip() {
    let ctx = context(3, 1.0, 64);
    let b = BubbleParams::unit(3);
    let s = contraction_solve(&ctx, &b, 1e-2, &ring(3), &ContractionOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_field_dump(&mut buf, &ctx.grid, &s.phi.values).unwrap();
    assert_eq!(&buf[..4], b"BRFD");
    let back = read_field_dump(&mut buf.as_slice(), &ctx.grid).unwrap();
    assert_eq!(back, s.phi.values);
    let other = build_radial_grid(65, "rational", 1.0).unwrap();
    assert!(read_field_dump(&mut buf.as_slice(), &other).is_err());
    let json = serde_json::to_value(&s).unwrap();
    assert!(json.get("phi").is_none());
    assert!(json["constants"]["c0"].as_f64().unwrap() > 0.0);
}

#[test]
fn lagrange_coefficient_is_linear_in_eps() {
    let ctx = context(3, 1.0, 192);
    let b = BubbleParams::radial(3, 1.5).unwrap();
    let k = ring(3);
    let eps = [1e-3, 3e-3, 1e-2];
    let c0: Vec<f64> = eps
        .iter()
        .map(|e| contraction_solve(&ctx, &b, *e, &k, &ContractionOptions::default()).unwrap().c[0].abs())
        .collect();
    let slope = choquard::reduction::loglog_slope(&eps, &c0);
    assert!((slope - 1.0).abs() <= 0.1, "{c0:?}");
}
