//! Riesz potentials I_λ[f](x) = ∫ f(y)|x−y|^{−λ} dy and the Newton potential
//! for radial fields (and single spherical-harmonic sectors).
//!
//! A field f(|x|)Y_ℓ(x/|x|) has I_λ[f] = (∫ K^ℓ_λ(r,s) f(s) s^{N−1} ds) Y_ℓ with
//! K^ℓ_λ(r,s) = |S^{N−2}| ∫_0^π (r²+s²−2rs cos θ)^{−λ/2} P_ℓ(cos θ) sin^{N−2}θ dθ,
//! P_ℓ the Gegenbauer polynomial C^{(N−2)/2}_ℓ normalised to P_ℓ(1) = 1.
//!
//! The s-integral is discretised by product integration: for each target node
//! it is split at s = r_i, each half gets its own (graded) Gauss rule, and f is
//! read off the grid by spectral interpolation in the mapped coordinate. What
//! gets interpolated is ⟨s⟩^N f(s), not f: tail values of f are tiny and their
//! absolute round-off would otherwise be multiplied by s^{N−1} ds/dt.

use crate::bubble::ProblemParams;
use crate::error::{Error, Result};
use crate::grid::{FullGrid, GridFunction, RadialGrid};
use crate::special::{gauss_jacobi, gauss_legendre, sphere_area, unit_ball_volume, Rule};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// One way of evaluating the angular kernel K^ℓ_λ(r, s).
pub trait KernelStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn applies(&self, lambda: f64, ell: usize) -> bool;
    fn entry(&self, lambda: f64, ell: usize, r: f64, s: f64) -> f64;
    /// True when the kernel is smooth on each side of r = s, so the product
    /// rule needs no grading toward the diagonal.
    fn piecewise_smooth(&self, lambda: f64) -> bool;
}

/// λ = N−2: |x−y|^{2−N} has the classical multipole expansion.
struct NewtonKernel {
    dim: usize,
}

impl KernelStrategy for NewtonKernel {
    fn name(&self) -> &'static str {
        "newton"
    }

    fn applies(&self, lambda: f64, _ell: usize) -> bool {
        lambda == self.dim as f64 - 2.0
    }

    fn entry(&self, _lambda: f64, ell: usize, r: f64, s: f64) -> f64 {
        let nf = self.dim as f64;
        let (lo, hi) = if r < s { (r, s) } else { (s, r) };
        let l = ell as f64;
        sphere_area(self.dim) * (nf - 2.0) / (2.0 * l + nf - 2.0) * (lo / hi).powf(l) * hi.powf(2.0 - nf)
    }

    fn piecewise_smooth(&self, _lambda: f64) -> bool {
        true
    }
}

/// N = 3, ℓ = 0: the cos θ integral is elementary.
struct ThreeDimKernel;

impl KernelStrategy for ThreeDimKernel {
    fn name(&self) -> &'static str {
        "three_dim"
    }

    fn applies(&self, _lambda: f64, ell: usize) -> bool {
        ell == 0
    }

    fn entry(&self, lambda: f64, _ell: usize, r: f64, s: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let sum = r + s;
        let diff = (r - s).abs();
        if (lambda - 2.0).abs() < 1e-14 {
            tau / (r * s) * (sum / diff).ln()
        } else {
            let e = 2.0 - lambda;
            tau / (r * s * e) * (sum.powf(e) - diff.powf(e))
        }
    }

    fn piecewise_smooth(&self, lambda: f64) -> bool {
        lambda == 1.0
    }
}

/// General N, λ, ℓ by Gauss–Jacobi quadrature in cos θ, with geometric
/// refinement toward θ = 0 when r and s are close.
struct GaussJacobiKernel {
    dim: usize,
    beta: f64,
    full: Rule,
    first: Rule,
    middle: Rule,
    last: Rule,
}

impl GaussJacobiKernel {
    fn new(dim: usize) -> Self {
        let beta = (dim as f64 - 3.0) / 2.0;
        GaussJacobiKernel {
            dim,
            beta,
            full: gauss_jacobi(40, beta, beta),
            first: gauss_jacobi(20, 0.0, beta),
            middle: gauss_legendre(20),
            last: gauss_jacobi(20, beta, 0.0),
        }
    }

    fn legendre_like(&self, ell: usize, c: f64) -> f64 {
        if ell == 0 {
            return 1.0;
        }
        let a = (self.dim as f64 - 2.0) / 2.0;
        let gegen = |x: f64| {
            let mut c0 = 1.0;
            let mut c1 = 2.0 * a * x;
            for k in 1..ell {
                let kf = k as f64;
                let c2 = (2.0 * x * (kf + a) * c1 - (kf + 2.0 * a - 1.0) * c0) / (kf + 1.0);
                c0 = c1;
                c1 = c2;
            }
            c1
        };
        gegen(c) / gegen(1.0)
    }
}

impl KernelStrategy for GaussJacobiKernel {
    fn name(&self) -> &'static str {
        "gauss_jacobi"
    }

    fn applies(&self, _lambda: f64, _ell: usize) -> bool {
        true
    }

    fn entry(&self, lambda: f64, ell: usize, r: f64, s: f64) -> f64 {
        let area = sphere_area(self.dim - 1);
        let d2 = (r - s) * (r - s);
        let rs4 = 4.0 * r * s;
        let delta = d2 / rs4;
        let hl = -lambda / 2.0;
        if delta >= 0.1 {
            let sum: f64 = self
                .full
                .nodes
                .iter()
                .zip(&self.full.weights)
                .map(|(c, w)| w * (r * r + s * s - 2.0 * r * s * c).powf(hl) * self.legendre_like(ell, *c))
                .sum();
            return area * sum;
        }
        // c = 1 − 2v; (1−c²)^β dc = 2^{2β+1} (v(1−v))^β dv
        let pref = area * 2f64.powf(2.0 * self.beta + 1.0);
        let b = self.beta;
        let g = |v: f64| (d2 + rs4 * v).powf(hl) * self.legendre_like(ell, 1.0 - 2.0 * v);
        let mut total = 0.0;
        let mut a;
        let mut hi = if delta > 0.0 { 4.0 * delta } else { 0.5 };
        if delta == 0.0 {
            if lambda >= self.dim as f64 - 1.0 {
                return f64::INFINITY;
            }
            let rule = gauss_jacobi(20, 0.0, b + hl);
            let h = 0.5 * hi;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let v = h * (1.0 + x);
                total += w * h.powf(1.0 + b + hl) * rs4.powf(hl) * (1.0 - v).powf(b)
                    * self.legendre_like(ell, 1.0 - 2.0 * v);
            }
            a = hi;
        } else {
            let h = 0.5 * hi;
            for (x, w) in self.first.nodes.iter().zip(&self.first.weights) {
                let v = h * (1.0 + x);
                total += w * h.powf(1.0 + b) * g(v) * (1.0 - v).powf(b);
            }
            a = hi;
            hi = (4.0 * hi).min(1.0);
            while hi < 0.5 {
                let h = 0.5 * (hi - a);
                let c = 0.5 * (hi + a);
                for (x, w) in self.middle.nodes.iter().zip(&self.middle.weights) {
                    let v = c + h * x;
                    total += w * h * g(v) * (v * (1.0 - v)).powf(b);
                }
                a = hi;
                hi *= 4.0;
            }
        }
        let h = 0.5 * (1.0 - a);
        for (x, w) in self.last.nodes.iter().zip(&self.last.weights) {
            let v = 1.0 - h * (1.0 - x);
            let gv = if delta == 0.0 {
                (rs4 * v).powf(hl) * self.legendre_like(ell, 1.0 - 2.0 * v)
            } else {
                g(v)
            };
            total += w * h.powf(1.0 + b) * gv * v.powf(b);
        }
        pref * total
    }

    fn piecewise_smooth(&self, _lambda: f64) -> bool {
        false
    }
}

type StrategyCtor = fn(usize) -> Option<Box<dyn KernelStrategy>>;

const KERNEL_STRATEGIES: &[(&str, StrategyCtor)] = &[
    ("newton", |dim| Some(Box::new(NewtonKernel { dim }))),
    ("three_dim", |dim| if dim == 3 { Some(Box::new(ThreeDimKernel)) } else { None }),
    ("gauss_jacobi", |dim| Some(Box::new(GaussJacobiKernel::new(dim)))),
];

pub fn kernel_strategy_names() -> Vec<&'static str> {
    KERNEL_STRATEGIES.iter().map(|(n, _)| *n).collect()
}

/// Look up a strategy by name, or with "auto" the first registered one that
/// applies to (N, λ, ℓ).
pub fn kernel_strategy(name: &str, dim: usize, lambda: f64, ell: usize) -> Result<Box<dyn KernelStrategy>> {
    if name == "auto" {
        for (_, ctor) in KERNEL_STRATEGIES {
            if let Some(s) = ctor(dim) {
                if s.applies(lambda, ell) {
                    return Ok(s);
                }
            }
        }
        return Err(Error::Kernel(format!("no kernel strategy for N={dim}, λ={lambda}, ℓ={ell}")));
    }
    let (_, ctor) = KERNEL_STRATEGIES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Kernel(format!("unknown kernel strategy '{name}' (known: {:?})", kernel_strategy_names())))?;
    let s = ctor(dim).ok_or_else(|| Error::Kernel(format!("strategy '{name}' is not available for N={dim}")))?;
    if !s.applies(lambda, ell) {
        return Err(Error::Kernel(format!("strategy '{name}' does not cover λ={lambda}, ℓ={ell}")));
    }
    Ok(s)
}

/// K_λ(r, s) for radial functions, using the automatic strategy.
pub fn radial_kernel_entry(lambda: f64, dim: usize, r: f64, s: f64) -> Result<f64> {
    if !(r > 0.0 && s > 0.0) {
        return Err(Error::Domain("kernel arguments must be positive".into()));
    }
    if !(lambda > 0.0 && lambda < dim as f64) {
        return Err(Error::Domain(format!("λ={lambda} outside (0, {dim})")));
    }
    let k = kernel_strategy("auto", dim, lambda, 0)?.entry(lambda, 0, r, s);
    if !k.is_finite() {
        return Err(Error::Kernel(format!("kernel diverges at r = s = {r}")));
    }
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct KernelOptions {
    pub strategy: String,
    pub sub_nodes: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { strategy: "auto".into(), sub_nodes: 64 }
    }
}

/// Product-integration operator for I_λ on one harmonic sector:
/// (I_λ f)(r_i) = Σ_j matrix[i][j] ⟨r_j⟩^N f(r_j).
#[derive(Debug, Clone)]
pub struct RadialKernel {
    pub dim: usize,
    pub lambda: f64,
    pub ell: usize,
    pub n: usize,
    pub strategy: String,
    pub matrix: DMatrix<f64>,
    pub key: [u8; 32],
    /// ⟨r_j⟩^N, the weight applied to f before the matrix.
    pub col_weights: Vec<f64>,
}

fn col_weights(grid: &RadialGrid, dim: usize) -> Vec<f64> {
    grid.nodes.iter().map(|r| (1.0 + r * r).powf(dim as f64 / 2.0)).collect()
}

fn cache_key(grid: &RadialGrid, dim: usize, lambda: f64, ell: usize, strategy: &str, opts: &KernelOptions) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(grid.hash());
    h.update((dim as u64).to_le_bytes());
    h.update(lambda.to_le_bytes());
    h.update((ell as u64).to_le_bytes());
    h.update(strategy.as_bytes());
    h.update((opts.sub_nodes as u64).to_le_bytes());
    h.update(b"colweight-bracket-N");
    h.finalize().into()
}

pub fn assemble_kernel(
    grid: &RadialGrid,
    dim: usize,
    lambda: f64,
    ell: usize,
    opts: &KernelOptions,
) -> Result<RadialKernel> {
    let strat = kernel_strategy(&opts.strategy, dim, lambda, ell)?;
    let n = grid.n;
    let m = opts.sub_nodes.max(8);
    let base = gauss_legendre(m).mapped(0.0, 1.0);
    let grade = if strat.piecewise_smooth(lambda) { 1 } else { 3 };
    let e = dim as i32 - 1;
    let bary = grid.barycentric();
    let map = grid.map();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ti = grid.t[i];
            let ri = grid.nodes[i];
            let mut row = vec![0.0; n];
            let mut basis = vec![0.0; n];
            for (lo, hi) in [(0.0, ti), (ti, 1.0)] {
                let len = hi - lo;
                for (u, w) in base.nodes.iter().zip(&base.weights) {
                    let ug = u.powi(grade);
                    let jac = len * grade as f64 * u.powi(grade - 1);
                    let t = if lo == 0.0 { ti - len * ug } else { ti + len * ug };
                    let (s, ds, _) = map.eval(t);
                    let k = strat.entry(lambda, ell, ri, s);
                    if !k.is_finite() {
                        return Err(Error::Kernel(format!("kernel not finite at r={ri}, s={s}")));
                    }
                    let c = w * jac * k * s.powi(e) * ds * (1.0 + s * s).powf(-(dim as f64) / 2.0);
                    bary.basis(t, &mut basis);
                    for (rj, bj) in row.iter_mut().zip(&basis) {
                        *rj += c * bj;
                    }
                }
            }
            Ok(row)
        })
        .collect();
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(RadialKernel {
        dim,
        lambda,
        ell,
        n,
        strategy: strat.name().to_string(),
        key: cache_key(grid, dim, lambda, ell, strat.name(), opts),
        matrix,
        col_weights: col_weights(grid, dim),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"RKRN";
const CACHE_VERSION: u32 = 1;

impl RadialKernel {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let psi: Vec<f64> = f.iter().zip(&self.col_weights).map(|(a, b)| a * b).collect();
        let v = &self.matrix * DVector::from_vec(psi);
        v.iter().copied().collect()
    }

    /// Layout: magic, version u32, N u32, λ f64, key (32 bytes), n u32, then
    /// n×n f64 row-major; everything little-endian. The key hashes the grid
    /// together with ℓ and the assembly options.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&self.key)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.n * self.n * 8);
        for i in 0..self.n {
            for j in 0..self.n {
                buf.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, grid: &RadialGrid, ell: usize, strategy: &str) -> Result<RadialKernel> {
        let mut head = [0u8; 4];
        r.read_exact(&mut head)?;
        if &head != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let mut u4 = [0u8; 4];
        let mut u8b = [0u8; 8];
        r.read_exact(&mut u4)?;
        if u32::from_le_bytes(u4) != CACHE_VERSION {
            return Err(Error::Cache("unsupported version".into()));
        }
        r.read_exact(&mut u4)?;
        let dim = u32::from_le_bytes(u4) as usize;
        r.read_exact(&mut u8b)?;
        let lambda = f64::from_le_bytes(u8b);
        let mut key = [0u8; 32];
        r.read_exact(&mut key)?;
        r.read_exact(&mut u4)?;
        let n = u32::from_le_bytes(u4) as usize;
        let mut buf = vec![0u8; n * n * 8];
        r.read_exact(&mut buf)?;
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            let k = (i * n + j) * 8;
            f64::from_le_bytes(buf[k..k + 8].try_into().unwrap())
        });
        if n != grid.n {
            return Err(Error::Cache(format!("cached kernel has n={n}, grid has {}", grid.n)));
        }
        Ok(RadialKernel {
            dim,
            lambda,
            ell,
            n,
            strategy: strategy.to_string(),
            matrix,
            key,
            col_weights: col_weights(grid, dim),
        })
    }
}

fn cache_path(dir: &Path, key: &[u8; 32], dim: usize, lambda: f64) -> PathBuf {
    let hex: String = key[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("rkrn-n{dim}-l{lambda}-{hex}.bin"))
}

/// Read the kernel from `cache_dir` if present, otherwise assemble and store it.
pub fn load_or_assemble(
    cache_dir: Option<&Path>,
    grid: &RadialGrid,
    dim: usize,
    lambda: f64,
    ell: usize,
    opts: &KernelOptions,
) -> Result<RadialKernel> {
    let Some(dir) = cache_dir else {
        return assemble_kernel(grid, dim, lambda, ell, opts);
    };
    let strat = kernel_strategy(&opts.strategy, dim, lambda, ell)?;
    let key = cache_key(grid, dim, lambda, ell, strat.name(), opts);
    let path = cache_path(dir, &key, dim, lambda);
    if let Ok(f) = std::fs::File::open(&path) {
        let k = RadialKernel::read_from(&mut std::io::BufReader::new(f), grid, ell, strat.name())?;
        if k.key == key && k.n == grid.n {
            return Ok(k);
        }
    }
    let k = assemble_kernel(grid, dim, lambda, ell, opts)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        k.write_to(&mut f)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok(k)
}

/// Output decay of I_λ f when f decays like ⟨x⟩^{−q}.
pub fn riesz_decay(q: f64, lambda: f64, dim: usize) -> f64 {
    let nf = dim as f64;
    if q > nf {
        lambda
    } else {
        q + lambda - nf
    }
}

pub fn riesz_radial(kernel: &RadialKernel, f: &GridFunction) -> Result<GridFunction> {
    let nf = kernel.dim as f64;
    if f.decay + kernel.lambda <= nf {
        return Err(Error::Divergence { decay: f.decay, needed: nf - kernel.lambda });
    }
    if f.ell != kernel.ell {
        return Err(Error::Domain(format!("field in sector ℓ={} applied to kernel ℓ={}", f.ell, kernel.ell)));
    }
    Ok(GridFunction {
        values: kernel.apply(&f.values),
        decay: riesz_decay(f.decay, kernel.lambda, kernel.dim),
        ell: f.ell,
    })
}

/// Newton potential φ = (1/(N(N−2)ω_N)) ∫ g(y)|x−y|^{2−N} dy, so that −Δφ = g.
pub struct NewtonPotential {
    pub kernel: RadialKernel,
    scale: f64,
}

impl NewtonPotential {
    pub fn new(kernel: RadialKernel) -> Result<Self> {
        let nf = kernel.dim as f64;
        if kernel.lambda != nf - 2.0 {
            return Err(Error::Kernel("Newton potential needs λ = N−2".into()));
        }
        let scale = 1.0 / (nf * (nf - 2.0) * unit_ball_volume(kernel.dim));
        Ok(NewtonPotential { kernel, scale })
    }

    pub fn build(grid: &RadialGrid, dim: usize, ell: usize, opts: &KernelOptions, cache: Option<&Path>) -> Result<Self> {
        let o = KernelOptions { strategy: "newton".into(), ..opts.clone() };
        Self::new(load_or_assemble(cache, grid, dim, dim as f64 - 2.0, ell, &o)?)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.kernel.apply(g).into_iter().map(|v| v * self.scale).collect()
    }
}

pub fn newton_potential(np: &NewtonPotential, g: &GridFunction) -> Result<GridFunction> {
    let nf = np.kernel.dim as f64;
    if g.decay <= nf {
        return Err(Error::Divergence { decay: g.decay, needed: nf });
    }
    Ok(GridFunction { values: np.apply(&g.values), decay: nf - 2.0, ell: g.ell })
}

pub const RIESZ_FULL_MAX_RADIAL: usize = 32;
pub const RIESZ_FULL_MAX_DIRECTIONS: usize = 50;

/// Direct tensor-sum evaluation of I_λ[f] at probe points, for cross-checks.
/// Each probe x gets polar coordinates centred on itself, with the polar axis
/// along x, so the |x−y|^{−λ} singularity becomes the smooth factor ρ^{N−1−λ}.
/// Cost O(probes · n_r · n_dir).
pub fn riesz_full(
    params: &ProblemParams,
    grid: &FullGrid,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    probes: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if grid.radial.n > RIESZ_FULL_MAX_RADIAL || grid.sphere.directions.len() > RIESZ_FULL_MAX_DIRECTIONS {
        return Err(Error::Grid(format!(
            "riesz_full is a direct O(n²m²) sum; use at most {RIESZ_FULL_MAX_RADIAL} radial nodes and \
             {RIESZ_FULL_MAX_DIRECTIONS} directions (got {} × {}), or riesz_radial for radial data",
            grid.radial.n,
            grid.sphere.directions.len()
        )));
    }
    let dim = params.n;
    let e = dim as f64 - 1.0 - params.lambda;
    Ok(probes
        .par_iter()
        .map(|x| {
            let frame = frame_along(x);
            let mut total = 0.0;
            let mut y = vec![0.0; dim];
            for (rho, wr) in grid.radial.nodes.iter().zip(&grid.radial.weights) {
                let mut shell = 0.0;
                for (d, wd) in grid.sphere.directions.iter().zip(&grid.sphere.weights) {
                    for (k, yk) in y.iter_mut().enumerate() {
                        let mut v = x[k];
                        for (a, da) in d.iter().enumerate() {
                            v += rho * da * frame[a][k];
                        }
                        *yk = v;
                    }
                    shell += wd * f(&y);
                }
                total += wr * rho.powf(e) * shell;
            }
            total
        })
        .collect())
}

/// Orthonormal frame whose first vector points along x (any frame if x = 0).
fn frame_along(x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let len = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    if len > 0.0 {
        vecs.push(x.iter().map(|v| v / len).collect());
    }
    for k in 0..n {
        if vecs.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let l = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if l > 1e-8 {
            vecs.push(v.iter().map(|a| a / l).collect());
        }
    }
    vecs
}
