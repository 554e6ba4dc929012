use choquard::bubble::*;
use choquard::grid::{build_radial_grid, build_sphere_rule, integrate_fn, radial_sum, FullGrid, GridFunction, RadialDiff};
use choquard::identities::mode_pairing_closed_form;
use choquard::special::{beta, sphere_area};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

proptest! {
    #[test]
    fn alpha_times_a_is_n_n_minus_2(n in 3usize..9, t in 0.02f64..0.98) {
        let p = ProblemParams::new(n, t * n as f64).unwrap();
        prop_assert!(p.alpha_a_defect() < 1e-12);
        prop_assert!((p.p - (2.0 * n as f64 - p.lambda) / (n as f64 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn modes_are_parameter_derivatives(
        mu in 0.3f64..3.0,
        xi in prop::collection::vec(-2.0f64..2.0, 3),
        x in prop::collection::vec(-4.0f64..4.0, 3),
    ) {
        let pp = ProblemParams::new(3, 1.0).unwrap();
        let b = BubbleParams::new(mu, xi.clone()).unwrap();
        let h = 1e-5 * mu;
        let at = |m: f64, s: &[f64]| bubble_value(&pp, &BubbleParams::new(m, s.to_vec()).unwrap(), &x);
        let scale = bubble_value(&pp, &b, &x);
        let d0 = mu * (at(mu + h, &xi) - at(mu - h, &xi)) / (2.0 * h);
        prop_assert!((z_mode(&pp, ModeIndex::new(0, 3).unwrap(), &b, &x) - d0).abs() <= 1e-7 * scale);
        for j in 0..3 {
            let mut a = xi.clone();
            a[j] += h;
            let mut c = xi.clone();
            c[j] -= h;
            let dj = mu * (at(mu, &a) - at(mu, &c)) / (2.0 * h);
            prop_assert!((z_mode(&pp, ModeIndex::new(j + 1, 3).unwrap(), &b, &x) - dj).abs() <= 1e-7 * scale);
        }
    }

    #[test]
    fn riesz_closed_form_scales_with_the_bubble(mu in 0.2f64..5.0, r in 0.0f64..10.0, lambda in 0.2f64..2.8) {
        let pp = ProblemParams::new(3, lambda).unwrap();
        let b = BubbleParams::radial(3, mu).unwrap();
        let x = [r, 0.0, 0.0];
        let v = riesz_closed_form(&pp, &b, &x);
        let u = bubble_value(&pp, &b, &x);
        prop_assert!((v / (pp.a_const * u.powf(lambda)) - 1.0).abs() < 1e-13);
    }
}

#[test]
fn pairings_against_beta_functions() {
    for &(n, lambda) in &[(3, 1.0), (4, 2.0), (5, 3.0), (6, 1.0)] {
        let pp = ProblemParams::new(n, lambda).unwrap();
        for j in 0..2 {
            let q = mode_pairing(&pp, ModeIndex::new(j, n).unwrap());
            let c = mode_pairing_closed_form(n, j);
            assert!((q / c - 1.0).abs() <= 1e-8, "N={n} j={j}: {q} vs {c}");
        }
    }
    let pp = ProblemParams::new(3, 1.0).unwrap();
    let z = |j| ModeIndex::new(j, 3).unwrap();
    assert!((mode_pairing(&pp, z(0)) - PI * PI / 64.0).abs() <= 1e-8 * PI * PI / 64.0);
    assert!((mode_pairing(&pp, z(1)) - PI * PI / 64.0).abs() <= 1e-8 * PI * PI / 64.0);
    assert_eq!(mode_pairing_pair(&pp, z(0), z(2)), 0.0);
}

#[test]
fn pairings_on_the_tensor_grid() {
    let n = 3;
    let fg = FullGrid::new(Arc::new(build_radial_grid(128, "rational", 1.0).unwrap()), build_sphere_rule(n, 8).unwrap());
    let want = PI * PI / 64.0;
    for j in 0..=n {
        for m in 0..=n {
            let v = integrate_fn(&fg, |y| unit::z(n, j, y) * unit::h(n, m, y));
            if j == m {
                assert!((v / want - 1.0).abs() <= 1e-8, "({j},{m}) {v}");
            } else {
                assert!(v.abs() <= 1e-10 * want, "({j},{m}) {v}");
            }
            let lhs = integrate_fn(&fg, |y| unit::htilde(n, m, j, y) * unit::z(n, m, y));
            let rhs = -integrate_fn(&fg, |y| unit::h(n, m, y) * unit::zbar(n, m, j, y));
            assert!((lhs - rhs).abs() <= 1e-6 * want, "({m},{j}) {lhs} vs {rhs}");
        }
    }
}

#[test]
fn first_order_expansion_has_quadratic_error() {
    let pp = ProblemParams::new(3, 1.0).unwrap();
    let b0 = BubbleParams::new(1.2, vec![0.3, -0.2, 0.1]).unwrap();
    for which in [Expansion::U, Expansion::Z(0), Expansion::Z(1), Expansion::H(0), Expansion::H(2)] {
        let err = |d: f64| {
            let b = BubbleParams::new(b0.mu * (1.0 + d), b0.xi.iter().map(|x| x + 0.5 * d).collect()).unwrap();
            bubble_expansion_error(&pp, &b0, &b, which).unwrap()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.2, "{which:?}: {ratio}");
    }
}

#[test]
fn grid_integrals_and_laplacian() {
    let pp = ProblemParams::new(3, 1.0).unwrap();
    let grid = build_radial_grid(256, "rational", 1.0).unwrap();
    // ∫U^6 over R^3 = |S²| ½B(3/2, 3/2)
    let u6 = grid.sample(|r| (1.0 + r * r).powi(-3));
    let want = sphere_area(3) * 0.5 * beta(1.5, 1.5);
    assert!((radial_sum(&grid, &u6, 3) / want - 1.0).abs() < 1e-10);
    let u = GridFunction::sample(&grid, 1.0, |r| (1.0 + r * r).powf(-0.5));
    let lap = RadialDiff::new(&grid).neg_laplacian(&grid, &u, 3);
    let err = lap
        .values
        .iter()
        .zip(&u.values)
        .map(|(l, v)| (l - 3.0 * v.powi(5)).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-6 * 3.0, "{err}");
    let rule = build_sphere_rule(4, 6).unwrap();
    assert!((rule.weights.iter().sum::<f64>() - sphere_area(4)).abs() < 1e-12);
    assert!(pp.crit() == 5.0);
}
