//! Perturbation potentials k(x) = a₀ + Σ bumps, and a checker for the
//! hypotheses the reduction needs: positivity and boundedness, smoothness,
//! a finite non-degenerate critical set with the index condition, inward
//! pointing gradient at infinity and integrability of x·∇k.

use crate::error::{Error, Result};
use crate::special::{gamma, gauss_legendre, sphere_area};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One bump b·f(|x − c|) of a registered kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub kind: String,
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    /// Exponent q of the rational kind, (1 + d²/s²)^{−q}.
    #[serde(default)]
    pub power: f64,
    /// Ring radius r₀ of the ring kind, exp(−(d − r₀)²/s²).
    #[serde(default)]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub dim: usize,
    pub baseline: f64,
    pub bumps: Vec<Bump>,
}

/// Radial profile of a bump family as a function of d = |x − c|.
pub trait BumpKind: Send + Sync {
    fn name(&self) -> &'static str;
    fn validate(&self, b: &Bump, dim: usize) -> Result<()>;
    /// (f, f', f'/d, f'') at distance d; f'/d is the limit at d = 0 when it exists.
    fn profile(&self, b: &Bump, d: f64) -> (f64, f64, f64, f64);
    /// Sign and log-magnitude of f'(d), for tail tests far beyond underflow.
    fn log_fprime(&self, b: &Bump, d: f64) -> (f64, f64);
    /// Whether b·f(|x − c|) is C² on all of R^N.
    fn is_c2(&self, b: &Bump) -> bool;
    /// ∫_{R^N} f(|y|) dy, when a closed form exists.
    fn mass(&self, b: &Bump, dim: usize) -> Option<f64>;
    /// Radius beyond which f' < 0 (used for the analytic tail bound).
    fn decreasing_beyond(&self, b: &Bump) -> f64;
}

struct Gaussian;
struct Rational;
struct Ring;

impl BumpKind for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn validate(&self, _b: &Bump, _dim: usize) -> Result<()> {
        Ok(())
    }

    fn profile(&self, b: &Bump, d: f64) -> (f64, f64, f64, f64) {
        let s2 = b.width * b.width;
        let f = (-d * d / s2).exp();
        let fd = -2.0 / s2 * f;
        (f, fd * d, fd, (-2.0 / s2 + 4.0 * d * d / (s2 * s2)) * f)
    }

    fn log_fprime(&self, b: &Bump, d: f64) -> (f64, f64) {
        let s2 = b.width * b.width;
        (-1.0, (2.0 * d / s2).ln() - d * d / s2)
    }

    fn is_c2(&self, _b: &Bump) -> bool {
        true
    }

    fn mass(&self, b: &Bump, dim: usize) -> Option<f64> {
        Some(std::f64::consts::PI.powf(dim as f64 / 2.0) * b.width.powi(dim as i32))
    }

    fn decreasing_beyond(&self, _b: &Bump) -> f64 {
        0.0
    }
}

impl BumpKind for Rational {
    fn name(&self) -> &'static str {
        "rational"
    }

    fn validate(&self, b: &Bump, dim: usize) -> Result<()> {
        if b.power <= dim as f64 / 2.0 {
            return Err(Error::Config(format!(
                "rational bump needs power q > N/2 = {} (got {})",
                dim as f64 / 2.0,
                b.power
            )));
        }
        Ok(())
    }

    fn profile(&self, b: &Bump, d: f64) -> (f64, f64, f64, f64) {
        let s2 = b.width * b.width;
        let q = b.power;
        let z = 1.0 + d * d / s2;
        let f = z.powf(-q);
        let fd = -2.0 * q / s2 * z.powf(-q - 1.0);
        let f2 = fd + 4.0 * q * (q + 1.0) * d * d / (s2 * s2) * z.powf(-q - 2.0);
        (f, fd * d, fd, f2)
    }

    fn log_fprime(&self, b: &Bump, d: f64) -> (f64, f64) {
        let s2 = b.width * b.width;
        let q = b.power;
        (-1.0, (2.0 * q * d / s2).ln() - (q + 1.0) * (d * d / s2).ln_1p())
    }

    fn is_c2(&self, _b: &Bump) -> bool {
        true
    }

    fn mass(&self, b: &Bump, dim: usize) -> Option<f64> {
        let h = dim as f64 / 2.0;
        Some(b.width.powi(dim as i32) * std::f64::consts::PI.powf(h) * gamma(b.power - h) / gamma(b.power))
    }

    fn decreasing_beyond(&self, _b: &Bump) -> f64 {
        0.0
    }
}

impl BumpKind for Ring {
    fn name(&self) -> &'static str {
        "ring"
    }

    fn validate(&self, b: &Bump, _dim: usize) -> Result<()> {
        if !(b.radius >= 0.0) {
            return Err(Error::Config(format!("ring bump needs radius ≥ 0 (got {})", b.radius)));
        }
        Ok(())
    }

    fn profile(&self, b: &Bump, d: f64) -> (f64, f64, f64, f64) {
        let s2 = b.width * b.width;
        let e = d - b.radius;
        let f = (-e * e / s2).exp();
        let f1 = -2.0 * e / s2 * f;
        let over_d = if d > 0.0 {
            f1 / d
        } else if b.radius == 0.0 {
            -2.0 / s2
        } else {
            f64::INFINITY
        };
        (f, f1, over_d, (-2.0 / s2 + 4.0 * e * e / (s2 * s2)) * f)
    }

    fn log_fprime(&self, b: &Bump, d: f64) -> (f64, f64) {
        let s2 = b.width * b.width;
        let e = d - b.radius;
        (-e.signum(), (2.0 * e.abs() / s2).ln() - e * e / s2)
    }

    fn is_c2(&self, b: &Bump) -> bool {
        // a cone point at the centre unless r₀ = 0
        b.radius == 0.0
    }

    fn mass(&self, b: &Bump, dim: usize) -> Option<f64> {
        let s = b.width;
        let lo = (b.radius - 40.0 * s).max(0.0);
        let hi = b.radius + 40.0 * s;
        let rule = gauss_legendre(200).mapped(lo, hi);
        let m: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(r, w)| w * r.powi(dim as i32 - 1) * self.profile(b, *r).0)
            .sum();
        Some(sphere_area(dim) * m)
    }

    fn decreasing_beyond(&self, b: &Bump) -> f64 {
        b.radius
    }
}

type KindCtor = fn() -> Box<dyn BumpKind>;

const BUMP_KINDS: &[(&str, KindCtor)] = &[
    ("gaussian", || Box::new(Gaussian)),
    ("rational", || Box::new(Rational)),
    ("ring", || Box::new(Ring)),
];

pub fn bump_kind_names() -> Vec<&'static str> {
    BUMP_KINDS.iter().map(|(n, _)| *n).collect()
}

pub fn bump_kind(name: &str) -> Result<Box<dyn BumpKind>> {
    BUMP_KINDS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c())
        .ok_or_else(|| Error::Config(format!("unknown bump kind '{name}' (known: {:?})", bump_kind_names())))
}

/// Value, gradient, Hessian and Laplacian of k at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct KEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub laplacian: f64,
}

impl PotentialSpec {
    pub fn constant(dim: usize, a0: f64) -> Result<Self> {
        let s = PotentialSpec { dim, baseline: a0, bumps: vec![] };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(Error::Config(format!("dimension must be ≥ 3, got {}", self.dim)));
        }
        if !(self.baseline > 0.0) || !self.baseline.is_finite() {
            return Err(Error::Config(format!("baseline a₀ must be positive and finite, got {}", self.baseline)));
        }
        for b in &self.bumps {
            let kind = bump_kind(&b.kind)?;
            if b.center.len() != self.dim {
                return Err(Error::Config(format!(
                    "bump centre has {} coordinates, expected {}",
                    b.center.len(),
                    self.dim
                )));
            }
            if !(b.width > 0.0) || !b.width.is_finite() {
                return Err(Error::Config(format!("bump width must be positive, got {}", b.width)));
            }
            if !b.amplitude.is_finite() || b.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config("bump parameters must be finite".into()));
            }
            kind.validate(b, self.dim)?;
        }
        Ok(())
    }

    /// True when k is invariant under rotations about the origin.
    pub fn is_radial(&self) -> bool {
        self.bumps.iter().all(|b| b.center.iter().all(|c| *c == 0.0))
    }

    fn kinds(&self) -> Vec<Box<dyn BumpKind>> {
        self.bumps.iter().map(|b| bump_kind(&b.kind).expect("validated")).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.baseline;
        for (b, kind) in self.bumps.iter().zip(self.kinds()) {
            let d = dist(x, &b.center);
            v += b.amplitude * kind.profile(b, d).0;
        }
        v
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (b, kind) in self.bumps.iter().zip(self.kinds()) {
            let d = dist(x, &b.center);
            if d == 0.0 {
                continue;
            }
            let (_, _, over_d, _) = kind.profile(b, d);
            for i in 0..self.dim {
                g[i] += b.amplitude * over_d * (x[i] - b.center[i]);
            }
        }
        g
    }

    /// Sup of |k − a₀| is bounded by Σ|b| since every profile is ≤ 1.
    pub fn sup_bound(&self) -> f64 {
        self.baseline + self.bumps.iter().map(|b| b.amplitude.max(0.0)).sum::<f64>()
    }

    pub fn sup_norm_bound(&self) -> f64 {
        self.baseline + self.bumps.iter().map(|b| b.amplitude.abs()).sum::<f64>()
    }
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Closed-form value, gradient, Hessian and Laplacian of k at x.
pub fn eval_k(spec: &PotentialSpec, x: &[f64]) -> KEval {
    let n = spec.dim;
    let mut value = spec.baseline;
    let mut gradient = vec![0.0; n];
    let mut hessian = DMatrix::zeros(n, n);
    for (b, kind) in spec.bumps.iter().zip(spec.kinds()) {
        let d = dist(x, &b.center);
        let (f, _, over_d, f2) = kind.profile(b, d);
        value += b.amplitude * f;
        if d == 0.0 {
            for i in 0..n {
                hessian[(i, i)] += b.amplitude * f2;
            }
            continue;
        }
        let u: Vec<f64> = (0..n).map(|i| (x[i] - b.center[i]) / d).collect();
        for i in 0..n {
            gradient[i] += b.amplitude * over_d * d * u[i];
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                hessian[(i, j)] += b.amplitude * (f2 * u[i] * u[j] + over_d * (delta - u[i] * u[j]));
            }
        }
    }
    let laplacian = hessian.trace();
    KEval { value, gradient, hessian, laplacian }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisResult {
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub value: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub laplacian: f64,
    /// sign det Hessian, 0 when degenerate
    pub index: i32,
    /// Whether the point enters the index sum (Δk < 0).
    pub counted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub k0: HypothesisResult,
    pub k1: HypothesisResult,
    pub k2: HypothesisResult,
    pub k3: HypothesisResult,
    pub k4: HypothesisResult,
    pub inf_estimate: f64,
    pub sup_estimate: f64,
    pub critical_points: Vec<CriticalPoint>,
    pub index_sum: Option<i32>,
    pub target_excluded: i32,
    pub tail_radius: Option<f64>,
    pub tail_radius_analytic: Option<f64>,
    pub moment_integral: Option<f64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        [&self.k0, &self.k1, &self.k2, &self.k3, &self.k4].iter().all(|h| h.verdict == Verdict::Pass)
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Critical points are searched in [−half_width, half_width]^N.
    pub half_width: f64,
    pub starts: usize,
    pub seed: u64,
    pub tail_directions: usize,
}

impl CheckOptions {
    /// A box that contains every bump with a margin of several widths.
    pub fn for_spec(spec: &PotentialSpec) -> Self {
        let reach = spec
            .bumps
            .iter()
            .map(|b| b.center.iter().map(|c| c.abs()).fold(0.0, f64::max) + b.radius + 4.0 * b.width)
            .fold(1.0, f64::max);
        CheckOptions { half_width: reach + 1.0, starts: 200, seed: 7, tail_directions: 64 }
    }
}

const GRAD_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-10;
const DEDUP: f64 = 1e-6;
const DEGENERATE_DET: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Damped Newton on ∇k from one start; None if it stalls or leaves the box.
fn newton_critical(spec: &PotentialSpec, start: &[f64], half_width: f64) -> Option<Vec<f64>> {
    let n = spec.dim;
    let mut x = start.to_vec();
    for _ in 0..200 {
        let e = eval_k(spec, &x);
        let g = nalgebra::DVector::from_vec(e.gradient.clone());
        let gn = g.norm();
        let step = match e.hessian.clone().lu().solve(&g) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => g.clone(),
        };
        let sn = step.norm();
        if gn <= GRAD_TOL && sn <= STEP_TOL {
            return Some(x);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| x[i] - t * step[i]).collect();
            if norm(&spec.gradient(&trial)) < gn * (1.0 - 1e-4 * t) || gn < 1e-14 {
                x = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || x.iter().any(|v| v.abs() > 1.5 * half_width || !v.is_finite()) {
            return None;
        }
    }
    None
}

/// Multistart search for zeros of ∇k in the box, deduplicated and sorted.
pub fn find_k_critical_points(spec: &PotentialSpec, opts: &CheckOptions) -> Vec<Vec<f64>> {
    let n = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for b in &spec.bumps {
        starts.push(b.center.clone());
    }
    for _ in 0..opts.starts {
        starts.push((0..n).map(|_| rng.gen_range(-opts.half_width..opts.half_width)).collect());
    }
    let mut found: Vec<Vec<f64>> = Vec::new();
    for s in &starts {
        if let Some(x) = newton_critical(spec, s, opts.half_width) {
            if x.iter().all(|v| v.abs() <= opts.half_width + DEDUP)
                && !found.iter().any(|f| dist(f, &x) < DEDUP)
            {
                found.push(x);
            }
        }
    }
    found.sort_by(|a, b| a.partial_cmp(b).unwrap());
    found
}

/// Sign-reliable evaluation of x·∇k / max|term| in the far field.
fn radial_derivative_normalised(spec: &PotentialSpec, x: &[f64]) -> f64 {
    let mut terms: Vec<(f64, f64)> = Vec::new();
    for (b, kind) in spec.bumps.iter().zip(spec.kinds()) {
        let d = dist(x, &b.center);
        if d == 0.0 || b.amplitude == 0.0 {
            continue;
        }
        let proj: f64 = x.iter().zip(&b.center).map(|(xi, ci)| xi * (xi - ci)).sum::<f64>() / d;
        if proj == 0.0 {
            continue;
        }
        let (sgn, lf) = kind.log_fprime(b, d);
        if lf == f64::NEG_INFINITY {
            continue;
        }
        terms.push((sgn * b.amplitude.signum() * proj.signum(), lf + b.amplitude.abs().ln() + proj.abs().ln()));
    }
    let top = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return 0.0;
    }
    terms.iter().map(|(s, l)| s * (l - top).exp()).sum()
}

/// ∫ r f'(r) |S^{N−1}| r^{N−1} dr for one centred bump profile.
fn bump_moment(kind: &dyn BumpKind, b: &Bump, dim: usize) -> f64 {
    let rule = gauss_legendre(400).mapped(0.0, 1.0);
    let mut total = 0.0;
    let split = b.radius;
    // [0, r₀] directly, then [r₀, ∞) via r = r₀ + s t/(1−t)
    if split > 0.0 {
        let seg = gauss_legendre(200).mapped(0.0, split);
        for (r, w) in seg.nodes.iter().zip(&seg.weights) {
            total += w * r * kind.profile(b, *r).1 * r.powi(dim as i32 - 1);
        }
    }
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        let r = split + b.width * t / (1.0 - t);
        let dr = b.width / ((1.0 - t) * (1.0 - t));
        total += w * dr * r * kind.profile(b, r).1 * r.powi(dim as i32 - 1);
    }
    sphere_area(dim) * total
}

/// Verify the hypotheses on k. Failures are verdicts, not errors; the only
/// error is a critical point on the boundary of the search box.
pub fn check_assumptions(spec: &PotentialSpec, opts: &CheckOptions) -> Result<AssumptionReport> {
    spec.validate()?;
    let n = spec.dim;
    let kinds = spec.kinds();
    let nontrivial = spec.bumps.iter().any(|b| b.amplitude != 0.0);

    // (k.0) inf/sup over samples, plus the tail limit a₀
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut inf = spec.baseline;
    let mut sup = spec.baseline;
    let mut sample = |x: &[f64]| {
        let v = spec.value(x);
        inf = inf.min(v);
        sup = sup.max(v);
    };
    for b in &spec.bumps {
        sample(&b.center);
    }
    for _ in 0..20_000 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-opts.half_width..opts.half_width)).collect();
        sample(&x);
    }
    let crit = if nontrivial { find_k_critical_points(spec, opts) } else { vec![] };
    for c in &crit {
        sample(c);
    }
    let k0 = if inf > 0.0 && sup.is_finite() {
        HypothesisResult { verdict: Verdict::Pass, detail: format!("inf ≈ {inf:.6e}, sup ≈ {sup:.6e}, tail limit {}", spec.baseline) }
    } else {
        HypothesisResult { verdict: Verdict::Fail, detail: format!("sampled inf {inf:.6e} is not positive") }
    };

    // (k.1) structural
    let rough: Vec<usize> = spec.bumps.iter().zip(&kinds).enumerate().filter(|(_, (b, k))| !k.is_c2(b)).map(|(i, _)| i).collect();
    let k1 = if rough.is_empty() {
        HypothesisResult { verdict: Verdict::Pass, detail: "every bump family is C^∞".into() }
    } else {
        HypothesisResult {
            verdict: Verdict::Fail,
            detail: format!("bumps {rough:?} have a cone point at their centre (ring with r₀ > 0)"),
        }
    };

    // (k.2)
    let target = if n % 2 == 0 { 1 } else { -1 };
    let mut points = Vec::new();
    let mut degenerate = false;
    for c in &crit {
        if c.iter().any(|v| (v.abs() - opts.half_width).abs() < 1e-6) {
            return Err(Error::Config(format!("critical point {c:?} lies on the search box boundary; enlarge the box")));
        }
        let e = eval_k(spec, c);
        let eig = SymmetricEigen::new(e.hessian.clone());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let det: f64 = ev.iter().product();
        let index = if det.abs() < DEGENERATE_DET || !det.is_finite() {
            degenerate = true;
            0
        } else if det > 0.0 {
            1
        } else {
            -1
        };
        if e.laplacian.abs() < 1e-12 {
            degenerate = true;
        }
        points.push(CriticalPoint {
            location: c.clone(),
            value: e.value,
            hessian_eigenvalues: ev,
            laplacian: e.laplacian,
            index,
            counted: e.laplacian < 0.0,
        });
    }
    let sum: i32 = points.iter().filter(|p| p.counted).map(|p| p.index).sum();
    let (k2, index_sum) = if !nontrivial {
        (HypothesisResult { verdict: Verdict::Fail, detail: "k is constant: every point is critical".into() }, None)
    } else if !rough.is_empty() {
        (
            HypothesisResult {
                verdict: Verdict::Inconclusive,
                detail: "k is not C² everywhere, so indices at the cone points are undefined".into(),
            },
            Some(sum),
        )
    } else if degenerate {
        (
            HypothesisResult { verdict: Verdict::Inconclusive, detail: "a critical point is degenerate or has Δk = 0".into() },
            Some(sum),
        )
    } else if sum != target {
        (
            HypothesisResult {
                verdict: Verdict::Pass,
                detail: format!("{} critical points, index sum over Δk<0 is {sum} ≠ (−1)^N = {target}", points.len()),
            },
            Some(sum),
        )
    } else {
        (
            HypothesisResult {
                verdict: Verdict::Fail,
                detail: format!("index sum over Δk<0 equals (−1)^N = {target}"),
            },
            Some(sum),
        )
    };

    // (k.3) x·∇k < 0 beyond some radius
    let analytic = if spec.bumps.iter().all(|b| b.amplitude >= 0.0) {
        Some(spec.bumps.iter().zip(&kinds).map(|(b, k)| norm(&b.center) + k.decreasing_beyond(b)).fold(0.0, f64::max))
    } else {
        None
    };
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[i] = s;
            dirs.push(v);
        }
    }
    for _ in 0..opts.tail_directions {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = norm(&v).max(1e-12);
        dirs.push(v.iter().map(|a| a / l).collect());
    }
    let radii: Vec<f64> = (0..48).map(|i| 0.25 * 1.25f64.powi(i)).collect();
    let inward: Vec<bool> = radii
        .iter()
        .map(|&r| {
            !nontrivial
                || dirs.iter().all(|d| {
                    let x: Vec<f64> = d.iter().map(|a| a * r).collect();
                    radial_derivative_normalised(spec, &x) < -1e-12
                })
        })
        .collect();
    let mut rho = None;
    for i in (0..radii.len()).rev() {
        if inward[i] {
            rho = Some(radii[i]);
        } else {
            break;
        }
    }
    let k3 = if !nontrivial {
        HypothesisResult { verdict: Verdict::Fail, detail: "x·∇k ≡ 0 for constant k".into() }
    } else {
        match rho {
            Some(r) if inward[radii.len() - 1] => HypothesisResult {
                verdict: Verdict::Pass,
                detail: format!("x·∇k < 0 on all sampled spheres |x| ≥ {r:.4}"),
            },
            _ => HypothesisResult { verdict: Verdict::Fail, detail: "x·∇k ≥ 0 somewhere on the outermost sampled sphere".into() },
        }
    };

    // (k.4) ∫x·∇k = −N∫(k − a₀), with a 1-D quadrature cross-check per bump
    let mut analytic_int = 0.0;
    let mut numeric_int = 0.0;
    for (b, kind) in spec.bumps.iter().zip(&kinds) {
        let m = kind.mass(b, n).unwrap_or(f64::NAN);
        analytic_int += -(n as f64) * b.amplitude * m;
        numeric_int += b.amplitude * bump_moment(kind.as_ref(), b, n);
    }
    let scale = analytic_int.abs().max(numeric_int.abs()).max(1e-300);
    let agree = (analytic_int - numeric_int).abs() <= 1e-6 * scale || (analytic_int == 0.0 && numeric_int == 0.0);
    let k4 = if analytic_int.is_finite() && agree {
        HypothesisResult {
            verdict: Verdict::Pass,
            detail: format!("∫x·∇k = {analytic_int:.10e} (quadrature {numeric_int:.10e})"),
        }
    } else if analytic_int.is_finite() {
        HypothesisResult {
            verdict: Verdict::Inconclusive,
            detail: format!("closed form {analytic_int:.6e} and quadrature {numeric_int:.6e} disagree"),
        }
    } else {
        HypothesisResult { verdict: Verdict::Fail, detail: "x·∇k is not integrable".into() }
    };

    Ok(AssumptionReport {
        k0,
        k1,
        k2,
        k3,
        k4,
        inf_estimate: inf,
        sup_estimate: sup,
        critical_points: points,
        index_sum,
        target_excluded: target,
        tail_radius: rho,
        tail_radius_analytic: analytic,
        moment_integral: Some(analytic_int),
    })
}
