//! Gamma function and the Gauss rules used by every quadrature in the crate.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

// Lanczos approximation, g = 7, nine terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) for real x. Uses the reflection formula below 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// |S^{d-1}|, the surface measure of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Volume of the unit ball, ω_N = 2π^{N/2}/(N Γ(N/2)).
pub fn unit_ball_volume(n: usize) -> f64 {
    sphere_area(n) / n as f64
}

/// A 1-D quadrature rule: nodes in ascending order with matching weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Affine map from [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        Rule {
            nodes: self.nodes.iter().map(|x| c + h * x).collect(),
            weights: self.weights.iter().map(|w| h * w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    if n == 1 {
        return Rule { nodes: vec![0.0], weights: vec![2.0] };
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn jacobi_with_derivative(n: usize, a: f64, b: f64, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = 0.5 * (a - b + (a + b + 2.0) * x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let c1 = 2.0 * (kf + 1.0) * (kf + a + b + 1.0) * s;
        let c2 = (s + 1.0) * (s * (s + 2.0) * x + a * a - b * b);
        let c3 = 2.0 * (kf + a) * (kf + b) * (s + 2.0);
        let p2 = (c2 * p1 - c3 * p0) / c1;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let s = 2.0 * nf + a + b;
    let dp = (nf * (a - b - s * x) * p1 + 2.0 * (nf + a) * (nf + b) * p0) / (s * (1.0 - x * x));
    (p1, dp)
}

/// n-point Gauss–Jacobi rule for the weight (1-x)^a (1+x)^b on [-1, 1].
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Rule {
    assert!(n >= 1 && a > -1.0 && b > -1.0);
    if a == 0.0 && b == 0.0 {
        return gauss_legendre(n);
    }
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        jm[(k, k)] = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        if k + 1 < n {
            let k1 = kf + 1.0;
            let s1 = 2.0 * k1 + a + b;
            let b2 = if k == 0 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b))
            } else {
                4.0 * k1 * (k1 + a) * (k1 + b) * (k1 + a + b)
                    / (s1 * s1 * (s1 + 1.0) * (s1 - 1.0))
            };
            jm[(k, k + 1)] = b2.sqrt();
            jm[(k + 1, k)] = b2.sqrt();
        }
    }
    let eig = SymmetricEigen::new(jm);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut raw = vec![0.0; n];
    for (i, x) in nodes.iter_mut().enumerate() {
        for _ in 0..50 {
            let (p, dp) = jacobi_with_derivative(n, a, b, *x);
            let dx = p / dp;
            *x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = jacobi_with_derivative(n, a, b, *x);
        raw[i] = 1.0 / ((1.0 - *x * *x) * dp * dp);
    }
    let total = 2f64.powf(a + b + 1.0) * beta(a + 1.0, b + 1.0);
    let s: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w * total / s).collect();
    Rule { nodes, weights }
}

/// Barycentric Lagrange interpolation on a fixed node set.
#[derive(Debug, Clone)]
pub struct Barycentric {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        let mut logs = vec![0.0; n];
        let mut signs = vec![1.0; n];
        for j in 0..n {
            for k in 0..n {
                if k != j {
                    let d = nodes[j] - nodes[k];
                    logs[j] -= d.abs().ln();
                    if d < 0.0 {
                        signs[j] = -signs[j];
                    }
                }
            }
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = logs.iter().zip(&signs).map(|(l, s)| s * (l - top).exp()).collect();
        Barycentric { nodes: nodes.to_vec(), weights }
    }

    /// Gauss–Legendre nodes on [a, b] with the closed-form weights
    /// (−1)^j √((1−x_j²) λ_j), more accurate than products of differences.
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Self {
        let rule = gauss_legendre(n);
        let weights = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .enumerate()
            .map(|(j, (x, w))| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s * ((1.0 - x * x) * w).sqrt()
            })
            .collect();
        Barycentric { nodes: rule.mapped(a, b).nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Lagrange basis values ℓ_j(x) for every node j.
    pub fn basis(&self, x: f64, out: &mut [f64]) {
        for (j, &xj) in self.nodes.iter().enumerate() {
            if x == xj {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[j] = 1.0;
                return;
            }
        }
        let mut s = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.weights[j] / (x - self.nodes[j]);
            s += *o;
        }
        out.iter_mut().for_each(|o| *o /= s);
    }

    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, &xj) in self.nodes.iter().enumerate() {
            let d = x - xj;
            if d == 0.0 {
                return values[j];
            }
            let c = self.weights[j] / d;
            num += c * values[j];
            den += c;
        }
        num / den
    }

    /// First-derivative collocation matrix, row-major n×n.
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = self.weights[j] / self.weights[i] / (self.nodes[i] - self.nodes[j]);
                    d[(i, j)] = v;
                    diag -= v;
                }
            }
            d[(i, i)] = diag;
        }
        d
    }

    /// Second-derivative matrix built from the first-derivative entries
    /// directly, which is far more accurate near the ends than squaring D.
    pub fn diff2_matrix(&self) -> DMatrix<f64> {
        let d = self.diff_matrix();
        let n = self.nodes.len();
        let mut d2 = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = 2.0 * d[(i, j)] * (d[(i, i)] - 1.0 / (self.nodes[i] - self.nodes[j]));
                    d2[(i, j)] = v;
                    diag -= v;
                }
            }
            d2[(i, i)] = diag;
        }
        d2
    }
}

/// (1+x)^p − 1 − p x, accurate for small x.
pub fn pow_rem1(p: f64, x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let mut term = p * (p - 1.0) / 2.0 * x * x;
        let mut sum = term;
        for k in 3..12 {
            term *= (p - (k as f64 - 1.0)) / k as f64 * x;
            sum += term;
        }
        sum
    } else if x > -1.0 {
        (p * x.ln_1p()).exp_m1() - p * x
    } else {
        -1.0 - p * x
    }
}

/// (1+x)^p − 1, accurate for small x; (·)_+ applied to 1+x.
pub fn pow_rem0(p: f64, x: f64) -> f64 {
    if x > -1.0 {
        (p * x.ln_1p()).exp_m1()
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn gamma_integers_and_half_integers() {
        for n in 1..30u32 {
            let g = gamma(n as f64);
            let want = factorial(n - 1);
            assert!((g / want - 1.0).abs() < 1e-13, "n={n} {g} {want}");
        }
        for n in 0..25u32 {
            let want = factorial(2 * n) * PI.sqrt() / (4f64.powi(n as i32) * factorial(n));
            let g = gamma(n as f64 + 0.5);
            assert!((g / want - 1.0).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn ln_gamma_matches_gamma() {
        for i in 1..290 {
            let x = i as f64 * 0.1;
            assert!((ln_gamma(x) - gamma(x).ln()).abs() < 1e-12 * (1.0 + gamma(x).ln().abs()));
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(12);
        for k in 0..24 {
            let s: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum();
            let want = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert!((s - want).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn jacobi_integrates_weighted_moments() {
        let (a, b) = (0.5, -0.3);
        let r = gauss_jacobi(10, a, b);
        // ∫ (1-x)^a (1+x)^b (1+x)^k = 2^{a+b+k+1} B(a+1, b+k+1)
        for k in 0..19 {
            let s: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * (1.0 + x).powi(k)).sum();
            let want = 2f64.powf(a + b + k as f64 + 1.0) * beta(a + 1.0, b + k as f64 + 1.0);
            assert!((s / want - 1.0).abs() < 1e-12, "k={k} {s} {want}");
        }
    }

    #[test]
    fn barycentric_reproduces_polynomials() {
        let r = gauss_legendre(20);
        let bary = Barycentric::new(&r.nodes);
        let vals: Vec<f64> = r.nodes.iter().map(|x| x.powi(7) - 3.0 * x).collect();
        for &x in &[-0.93, -0.1, 0.37, 0.999] {
            let v = bary.eval(&vals, x);
            assert!((v - (x.powi(7) - 3.0 * x)).abs() < 1e-13);
        }
        let d = bary.diff_matrix();
        let dv = &d * nalgebra::DVector::from_vec(vals);
        for (i, x) in r.nodes.iter().enumerate() {
            assert!((dv[i] - (7.0 * x.powi(6) - 3.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn taylor_remainders() {
        for &p in &[4.0, 3.0, 2.5, 5.0 / 3.0] {
            for &x in &[1e-6, -2e-4, 5e-3, -0.3] {
                let direct = (1.0f64 + x).powf(p) - 1.0 - p * x;
                let r = pow_rem1(p, x);
                assert!((r - direct).abs() <= 1e-12 * direct.abs() + 1e-15);
            }
        }
    }
}
