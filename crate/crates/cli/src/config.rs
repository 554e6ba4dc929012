//! Flat `section.key = value` run configuration.
//!
//! ```text
//! problem.N = 3
//! problem.lambda = 1
//! potential.baseline = 1
//! potential.bump = ring amplitude=1 width=1 radius=3 center=0,0,0
//! eps.list = 1e-3, 2e-3, 5e-3, 1e-2
//! box.mu = 1.5, 4.5
//! box.xi = -10:10, -1.5:1.5, -1.5:1.5
//! ```
//!
//! `#` starts a comment. Every key may appear once except `potential.bump`.

use choquard::bubble::ProblemParams;
use choquard::kcheck::{Bump, PotentialSpec};
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub lambda: f64,
    /// Multiplies α after it is computed; anything but 1 is a deliberate fault.
    pub alpha_scale: f64,
    pub grid_n: usize,
    pub grid_map: String,
    pub grid_scale: f64,
    pub sphere_degree: usize,
    pub upsilon_n: usize,
    pub potential: PotentialSpec,
    pub eps: Vec<f64>,
    pub eps_max: f64,
    pub contraction_tol: f64,
    pub contraction_max_iter: usize,
    pub newton_c_tol: f64,
    pub box_mu: (f64, f64),
    /// None for the μ-line ξ = 0.
    pub box_xi: Option<Vec<(f64, f64)>>,
    pub search_starts: usize,
    pub seed: u64,
    pub scan_per_axis: usize,
    pub degree_per_side: usize,
    pub expansion_mu: Option<f64>,
    pub expansion_eps: Vec<f64>,
    /// Extra (N, λ) pairs for verify-identities.
    pub identity_pairs: Vec<(usize, f64)>,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 3,
            lambda: 1.0,
            alpha_scale: 1.0,
            grid_n: 256,
            grid_map: "rational".into(),
            grid_scale: 1.0,
            sphere_degree: 16,
            upsilon_n: 96,
            potential: ring_potential(3),
            eps: vec![1e-3, 2e-3, 5e-3, 1e-2],
            eps_max: 0.1,
            contraction_tol: 1e-10,
            contraction_max_iter: 60,
            newton_c_tol: 1e-10,
            box_mu: (1.0, 8.0),
            box_xi: None,
            search_starts: 24,
            seed: 7,
            scan_per_axis: 41,
            degree_per_side: 8,
            expansion_mu: None,
            expansion_eps: vec![1e-3, 3e-3, 1e-2, 3e-2],
            identity_pairs: vec![],
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            jobs: 1,
        }
    }
}

fn ring_potential(n: usize) -> PotentialSpec {
    PotentialSpec {
        dim: n,
        baseline: 1.0,
        bumps: vec![Bump { kind: "ring".into(), amplitude: 1.0, center: vec![0.0; n], width: 1.0, power: 0.0, radius: 3.0 }],
    }
}

fn num(key: &str, v: &str) -> Result<f64, String> {
    v.trim().parse::<f64>().map_err(|_| format!("{key}: '{v}' is not a number"))
}

fn int(key: &str, v: &str) -> Result<usize, String> {
    v.trim().parse::<usize>().map_err(|_| format!("{key}: '{v}' is not a non-negative integer"))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, String> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn range(key: &str, v: &str) -> Result<(f64, f64), String> {
    let (a, b) = v.split_once(':').ok_or_else(|| format!("{key}: expected lo:hi, got '{v}'"))?;
    Ok((num(key, a)?, num(key, b)?))
}

/// `kind key=value ...` with keys amplitude, width, center, power, radius.
pub fn parse_bump(v: &str) -> Result<Bump, String> {
    let mut parts = v.split_whitespace();
    let kind = parts.next().ok_or("potential.bump: empty bump")?;
    let mut b = Bump { kind: kind.into(), amplitude: 1.0, center: vec![], width: 1.0, power: 0.0, radius: 0.0 };
    for p in parts {
        let (k, val) = p.split_once('=').ok_or_else(|| format!("potential.bump: expected key=value, got '{p}'"))?;
        match k {
            "amplitude" => b.amplitude = num("potential.bump amplitude", val)?,
            "width" => b.width = num("potential.bump width", val)?,
            "power" => b.power = num("potential.bump power", val)?,
            "radius" => b.radius = num("potential.bump radius", val)?,
            "center" => b.center = list("potential.bump center", val)?,
            _ => return Err(format!("potential.bump: unknown field '{k}'")),
        }
    }
    Ok(b)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut c = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut bumps = Vec::new();
        let mut baseline = None;
        let mut dim_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            let (key, v) = (key.trim(), v.trim());
            if key != "potential.bump" && !seen.insert(key.to_string()) {
                return Err(format!("line {}: duplicate key {key}", lineno + 1));
            }
            match key {
                "problem.N" => {
                    c.n = int(key, v)?;
                    dim_set = true;
                }
                "problem.lambda" => c.lambda = num(key, v)?,
                "problem.alpha_scale" => c.alpha_scale = num(key, v)?,
                "grid.n" => c.grid_n = int(key, v)?,
                "grid.map" => c.grid_map = v.to_string(),
                "grid.scale" => c.grid_scale = num(key, v)?,
                "sphere.degree" => c.sphere_degree = int(key, v)?,
                "upsilon.n" => c.upsilon_n = int(key, v)?,
                "potential.baseline" => baseline = Some(num(key, v)?),
                "potential.bump" => bumps.push(parse_bump(v)?),
                "eps.list" => c.eps = list(key, v)?,
                "contraction.eps_max" => c.eps_max = num(key, v)?,
                "contraction.tol" => c.contraction_tol = num(key, v)?,
                "contraction.max_iter" => c.contraction_max_iter = int(key, v)?,
                "newton.c_tol" => c.newton_c_tol = num(key, v)?,
                "box.mu" => {
                    let l = list(key, v)?;
                    if l.len() != 2 {
                        return Err(format!("{key}: expected two numbers"));
                    }
                    c.box_mu = (l[0], l[1]);
                }
                "box.xi" => c.box_xi = Some(v.split(',').map(|s| range(key, s.trim())).collect::<Result<_, _>>()?),
                "search.starts" => c.search_starts = int(key, v)?,
                "search.seed" => c.seed = int(key, v)? as u64,
                "scan.per_axis" => c.scan_per_axis = int(key, v)?,
                "degree.per_side" => c.degree_per_side = int(key, v)?,
                "expansion.mu" => c.expansion_mu = Some(num(key, v)?),
                "expansion.eps" => c.expansion_eps = list(key, v)?,
                "identities.pairs" => {
                    c.identity_pairs = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            let (a, b) = s.split_once(':').ok_or_else(|| format!("{key}: expected N:λ, got '{s}'"))?;
                            Ok((int(key, a)?, num(key, b)?))
                        })
                        .collect::<Result<_, String>>()?
                }
                "output.dir" => c.out_dir = PathBuf::from(v),
                "cache.dir" => c.cache_dir = Some(PathBuf::from(v)),
                "run.jobs" => c.jobs = int(key, v)?,
                _ => return Err(format!("line {}: unknown key {key}", lineno + 1)),
            }
        }
        if dim_set || !bumps.is_empty() || baseline.is_some() {
            if bumps.is_empty() && baseline.is_none() {
                c.potential = ring_potential(c.n);
            } else {
                for b in &mut bumps {
                    if b.center.is_empty() {
                        b.center = vec![0.0; c.n];
                    }
                }
                c.potential = PotentialSpec { dim: c.n, baseline: baseline.unwrap_or(1.0), bumps };
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        ProblemParams::new(self.n, self.lambda).map_err(|e| e.to_string())?;
        for &(n, l) in &self.identity_pairs {
            ProblemParams::new(n, l).map_err(|e| format!("identities.pairs: {e}"))?;
        }
        if !(self.alpha_scale.is_finite() && self.alpha_scale > 0.0) {
            return Err("problem.alpha_scale must be positive".into());
        }
        if self.grid_n < 8 || self.upsilon_n < 8 {
            return Err("grid.n and upsilon.n must be at least 8".into());
        }
        if !choquard::grid::radial_map_names().contains(&self.grid_map.as_str()) {
            return Err(format!("grid.map '{}' unknown (known: {:?})", self.grid_map, choquard::grid::radial_map_names()));
        }
        if !(self.grid_scale > 0.0) {
            return Err("grid.scale must be positive".into());
        }
        self.potential.validate().map_err(|e| format!("potential: {e}"))?;
        if self.eps.iter().chain(&self.expansion_eps).any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err("eps values must be finite and non-negative".into());
        }
        if !(self.eps_max > 0.0) || !(self.contraction_tol > 0.0) || !(self.newton_c_tol > 0.0) {
            return Err("tolerances and eps_max must be positive".into());
        }
        if !(self.box_mu.0 > 0.0 && self.box_mu.1 > self.box_mu.0) {
            return Err(format!("box.mu must satisfy 0 < lo < hi, got {:?}", self.box_mu));
        }
        if let Some(xi) = &self.box_xi {
            if xi.len() != self.n {
                return Err(format!("box.xi needs {} ranges, got {}", self.n, xi.len()));
            }
            if xi.iter().any(|(a, b)| !(b > a)) {
                return Err("box.xi ranges must satisfy lo < hi".into());
            }
        }
        if self.scan_per_axis < 2 || self.degree_per_side < 1 || self.search_starts == 0 {
            return Err("scan.per_axis ≥ 2, degree.per_side ≥ 1 and search.starts ≥ 1 are required".into());
        }
        if self.jobs == 0 {
            return Err("run.jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn params(&self) -> ProblemParams {
        let mut p = ProblemParams::new(self.n, self.lambda).expect("validated");
        p.alpha *= self.alpha_scale;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!((c.n, c.lambda), (3, 1.0));
        assert!(c.potential.is_radial());
        let c = RunConfig::parse(
            "problem.N = 5 # dimension\nproblem.lambda = 4\npotential.bump = gaussian amplitude=2 width=0.5\n\
             potential.bump = gaussian center=1,0,0,0,0\nbox.xi = -1:1,-1:1,-1:1,-1:1,-1:1\n",
        )
        .unwrap();
        assert_eq!(c.potential.bumps.len(), 2);
        assert_eq!(c.potential.bumps[0].center, vec![0.0; 5]);
        assert_eq!(c.potential.bumps[0].amplitude, 2.0);
        assert_eq!(c.box_xi.as_ref().unwrap().len(), 5);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "problem.X = 1",
            "problem.N = 3\nproblem.N = 4",
            "problem.lambda = 3",
            "problem.N = 2",
            "grid.map = spline",
            "potential.bump = cube",
            "potential.bump = gaussian size=2",
            "box.mu = 2, 1",
            "box.xi = -1:1",
            "eps.list = 1e-3, x",
            "no equals sign",
            "problem.alpha_scale = 0",
        ] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn alpha_fault_injection() {
        let c = RunConfig::parse("problem.alpha_scale = 1.001").unwrap();
        assert!(c.params().alpha_a_defect() > 1e-4);
    }
}
