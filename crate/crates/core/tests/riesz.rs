use choquard::bubble::{bubble_value, riesz_closed_form, BubbleParams, ProblemParams};
use choquard::grid::{build_radial_grid, build_sphere_rule, radial_sum, FullGrid, GridFunction, RadialGrid};
use choquard::riesz::*;
use proptest::prelude::*;
use std::time::Instant;

fn sup_rel_error(n: usize, lambda: f64, grid: &RadialGrid, cache: Option<&std::path::Path>) -> f64 {
    let pp = ProblemParams::new(n, lambda).unwrap();
    let k = load_or_assemble(cache, grid, n, lambda, 0, &KernelOptions::default()).unwrap();
    let nf = n as f64;
    let f = GridFunction::sample(grid, (nf - 2.0) * pp.p, |r| (1.0 + r * r).powf(-(nf - 2.0) * pp.p / 2.0));
    let got = riesz_radial(&k, &f).unwrap();
    let b = BubbleParams::unit(n);
    got.values
        .iter()
        .zip(&grid.nodes)
        .map(|(v, r)| {
            let mut x = vec![0.0; n];
            x[0] = *r;
            let w = riesz_closed_form(&pp, &b, &x);
            (v - w).abs() / w
        })
        .fold(0.0, f64::max)
}

#[test]
fn riesz_of_bubble_power_matches_closed_form() {
    let grid = build_radial_grid(256, "rational", 1.0).unwrap();
    for &(n, lambda, tol) in &[(3, 1.0, 1e-6), (3, 2.0, 1e-4), (4, 2.0, 1e-6), (5, 3.0, 1e-6), (5, 4.0, 1e-4)] {
        let e = sup_rel_error(n, lambda, &grid, None);
        assert!(e <= tol, "N={n} λ={lambda}: {e:.3e}");
    }
}

#[test]
fn cached_kernel_is_identical_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let grid = build_radial_grid(256, "rational", 1.0).unwrap();
    let opts = KernelOptions::default();
    let t = Instant::now();
    let cold = load_or_assemble(Some(dir.path()), &grid, 3, 1.0, 0, &opts).unwrap();
    assert!(t.elapsed().as_secs_f64() <= 30.0);
    let t = Instant::now();
    let warm = load_or_assemble(Some(dir.path()), &grid, 3, 1.0, 0, &opts).unwrap();
    assert!(t.elapsed().as_secs_f64() <= 0.1, "{:?}", t.elapsed());
    assert_eq!(cold.matrix, warm.matrix);
    assert_eq!(cold.key, warm.key);
    // another grid must not pick up this file
    let other = build_radial_grid(255, "rational", 1.0).unwrap();
    let k = load_or_assemble(Some(dir.path()), &other, 3, 1.0, 0, &opts).unwrap();
    assert_eq!(k.n, 255);
}

#[test]
fn newton_potential_inverts_the_laplacian() {
    // −ΔU = N(N−2)U^{(N+2)/(N−2)}, so G[N(N−2)U^{(N+2)/(N−2)}] = U
    for n in [3usize, 4, 5] {
        let nf = n as f64;
        let grid = build_radial_grid(192, "rational", 1.0).unwrap();
        let np = NewtonPotential::build(&grid, n, 0, &KernelOptions::default(), None).unwrap();
        let crit = (nf + 2.0) / (nf - 2.0);
        let g = GridFunction::sample(&grid, nf + 2.0, |r| nf * (nf - 2.0) * (1.0 + r * r).powf(-(nf - 2.0) * crit / 2.0));
        let u = newton_potential(&np, &g).unwrap();
        let e = u
            .values
            .iter()
            .zip(&grid.nodes)
            .map(|(v, r)| (v / (1.0 + r * r).powf(-(nf - 2.0) / 2.0) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(e <= 1e-6, "N={n}: {e:.3e}");
    }
}

#[test]
fn kernel_is_symmetric_in_the_volume_pairing() {
    let grid = build_radial_grid(128, "rational", 1.0).unwrap();
    let k = assemble_kernel(&grid, 3, 1.5, 0, &KernelOptions::default()).unwrap();
    let f = GridFunction::sample(&grid, 4.0, |r| (1.0 + r * r).powi(-2));
    let g = GridFunction::sample(&grid, 5.0, |r| (1.0 + r * r).powf(-2.5) * (1.0 + 0.5 * (r / (1.0 + r)).sin()));
    let pair = |a: &GridFunction, b: &GridFunction| {
        let ib = riesz_radial(&k, b).unwrap();
        let prod: Vec<f64> = a.values.iter().zip(&ib.values).map(|(x, y)| x * y).collect();
        radial_sum(&grid, &prod, 3)
    };
    let (a, b) = (pair(&f, &g), pair(&g, &f));
    assert!((a / b - 1.0).abs() <= 1e-8, "{a} vs {b}");
}

#[test]
fn slow_decay_and_bad_arguments_are_rejected() {
    let grid = build_radial_grid(32, "rational", 1.0).unwrap();
    let k = assemble_kernel(&grid, 3, 1.0, 0, &KernelOptions::default()).unwrap();
    let slow = GridFunction::sample(&grid, 1.5, |r| (1.0 + r * r).powf(-0.75));
    assert!(matches!(riesz_radial(&k, &slow), Err(choquard::Error::Divergence { .. })));
    assert!(radial_kernel_entry(1.0, 3, 0.0, 1.0).is_err());
    assert!(radial_kernel_entry(3.0, 3, 1.0, 1.0).is_err());
    assert_eq!(riesz_decay(4.0, 1.0, 3), 1.0);
    assert_eq!(riesz_decay(2.5, 1.0, 3), 0.5);
}

#[test]
fn direct_full_sum_agrees_with_closed_form() {
    let pp = ProblemParams::new(3, 1.0).unwrap();
    let b = BubbleParams::unit(3);
    let f = |x: &[f64]| bubble_value(&pp, &b, x).powf(pp.p);
    let full = |deg: usize| FullGrid::new(std::sync::Arc::new(build_radial_grid(24, "rational", 1.0).unwrap()), build_sphere_rule(3, deg).unwrap());
    let near = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
    for (x, v) in near.iter().zip(riesz_full(&pp, &full(8), &f, &near).unwrap()) {
        let w = riesz_closed_form(&pp, &b, x);
        assert!((v / w - 1.0).abs() <= 1e-5, "{x:?}: {v} vs {w}");
    }
    // away from the origin the rule centred on x resolves U^p only in angle,
    // so the error falls with the sphere degree
    let far = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]];
    let err = |deg: usize| -> Vec<f64> {
        riesz_full(&pp, &full(deg), &f, &far)
            .unwrap()
            .iter()
            .zip(&far)
            .map(|(v, x)| (v / riesz_closed_form(&pp, &b, x) - 1.0).abs())
            .collect()
    };
    let (coarse, fine) = (err(4), err(8));
    for i in 0..far.len() {
        assert!(fine[i] < 0.5 * coarse[i] && fine[i] < 0.02, "{coarse:?} {fine:?}");
    }
    let big = FullGrid::new(std::sync::Arc::new(build_radial_grid(64, "rational", 1.0).unwrap()), build_sphere_rule(3, 8).unwrap());
    assert!(riesz_full(&pp, &big, &f, &near).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn riesz_is_linear_and_positive(a in -2.0f64..2.0, s in 0.3f64..3.0) {
        let grid = build_radial_grid(48, "rational", 1.0).unwrap();
        let k = assemble_kernel(&grid, 3, 1.0, 0, &KernelOptions::default()).unwrap();
        let f = GridFunction::sample(&grid, 4.0, |r| (1.0 + (r / s).powi(2)).powi(-2));
        let g = GridFunction::sample(&grid, 4.0, |r| (1.0 + r * r).powi(-2) * (1.0 + 0.1 * r.cos()));
        let lhs = riesz_radial(&k, &f.axpy(a, &g)).unwrap();
        let rf = riesz_radial(&k, &f).unwrap();
        let rhs = rf.axpy(a, &riesz_radial(&k, &g).unwrap());
        let scale = lhs.max_abs().max(rhs.max_abs());
        prop_assert!(lhs.axpy(-1.0, &rhs).max_abs() <= 1e-12 * scale);
        prop_assert!(rf.values.iter().all(|v| *v > 0.0));
    }
}
