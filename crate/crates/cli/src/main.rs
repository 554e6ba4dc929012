mod config;

use choquard::bubble::ProblemParams;
use choquard::grid::build_radial_grid;
use choquard::identities::{verify_identities, IdentityOptions};
use choquard::kcheck::{check_assumptions, CheckOptions};
use choquard::linop::LinearContext;
use choquard::nonlinear::{write_field_dump, ContractionOptions};
use choquard::reduction::{
    degree, expansion_study, find_critical_points, loglog_slope, solve_full, upsilon_scan, Classification,
    CriticalPoint, NewtonOptions, SearchBox, SearchOptions, Upsilon,
};
use choquard::riesz::KernelOptions;
use clap::{Parser, Subcommand};
use config::RunConfig;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "choquard", version, about = "Bubble reduction workbench for the perturbed critical Choquard equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (flat `section.key = value` file); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Kernel cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed of the multistart searches.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the bubble, grid and Riesz identities.
    VerifyIdentities,
    /// Check the hypotheses on the potential k.
    CheckK,
    /// Scan the reduced energy over the box, find its critical points and the degree.
    UpsilonScan,
    /// Solve the perturbed equation for every ε in the list.
    Solve,
    /// Order fits of the energy expansion in ε at one bubble.
    ExpansionStudy,
}

const EXIT_FAIL: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

enum Failure {
    Config(String),
    Solver(String),
}

impl From<choquard::Error> for Failure {
    fn from(e: choquard::Error) -> Self {
        Failure::Solver(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("output: {e}"))
    }
}

type Outcome = Result<u8, Failure>;

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    if let Some(d) = &cli.cache {
        c.cache_dir = Some(d.clone());
    }
    if let Some(j) = cli.jobs {
        c.jobs = j;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

/// A JSON object carrying the anchor tag of the quantity it reports.
fn record(anchor: &str, body: &impl Serialize) -> Value {
    let mut v = serde_json::to_value(body).expect("serialisable record");
    match v.as_object_mut() {
        Some(m) => {
            m.insert("anchor".into(), json!(anchor));
            v
        }
        None => json!({ "anchor": anchor, "value": v }),
    }
}

fn write_lines(path: &Path, records: &[Value]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn context(c: &RunConfig) -> Result<LinearContext, Failure> {
    let grid = Arc::new(build_radial_grid(c.grid_n, &c.grid_map, c.grid_scale)?);
    Ok(LinearContext::new(c.params(), grid, KernelOptions::default(), c.cache_dir.clone()))
}

fn upsilon(c: &RunConfig) -> Result<Upsilon, Failure> {
    let radial = Arc::new(build_radial_grid(c.upsilon_n, &c.grid_map, c.grid_scale)?);
    Ok(Upsilon::new(c.params(), c.potential.clone(), radial, c.sphere_degree)?)
}

fn search_box(c: &RunConfig) -> SearchBox {
    SearchBox { mu: c.box_mu, xi: c.box_xi.clone().unwrap_or_default() }
}

fn search_options(c: &RunConfig) -> SearchOptions {
    SearchOptions { starts: c.search_starts, seed: c.seed, ..Default::default() }
}

fn contraction_options(c: &RunConfig) -> ContractionOptions {
    ContractionOptions { tol: c.contraction_tol, max_iter: c.contraction_max_iter, eps_max: c.eps_max }
}

/// The nondegenerate Υ critical points on the μ-line of the configured box.
fn mu_line_critical_points(c: &RunConfig, ups: &Upsilon) -> Result<Vec<CriticalPoint>, Failure> {
    if !c.potential.is_radial() {
        return Err(Failure::Config("solve and expansion-study run on the μ-line and need a radial potential".into()));
    }
    let cps = find_critical_points(ups, &SearchBox::mu_line(c.box_mu.0, c.box_mu.1), &search_options(c))?;
    Ok(cps.into_iter().filter(|p| p.classification != Classification::Degenerate).collect())
}

fn verify(c: &RunConfig) -> Outcome {
    let mut pairs = vec![(c.n, c.lambda)];
    pairs.extend(c.identity_pairs.iter().filter(|p| **p != (c.n, c.lambda)));
    let opts = IdentityOptions { grid_n: c.grid_n, map: c.grid_map.clone(), cache: c.cache_dir.clone(), ..Default::default() };
    let mut records = Vec::new();
    let mut all = true;
    for (n, lambda) in pairs {
        let mut params = ProblemParams::new(n, lambda)?;
        params.alpha *= c.alpha_scale;
        for chk in verify_identities(&params, &opts)? {
            println!(
                "{} N={} λ={} {:<22} {:.3e} (tol {:.0e}){}",
                if chk.pass { "PASS" } else { "FAIL" },
                chk.n,
                chk.lambda,
                chk.anchor,
                chk.measured,
                chk.tolerance,
                if chk.regime == "singular" { " [singular regime]" } else { "" }
            );
            all &= chk.pass;
            records.push(record(&chk.anchor.clone(), &chk));
        }
    }
    write_lines(&c.out_dir.join("identities.jsonl"), &records)?;
    Ok(if all { 0 } else { EXIT_FAIL })
}

fn check_k(c: &RunConfig) -> Outcome {
    let mut opts = CheckOptions::for_spec(&c.potential);
    opts.seed = c.seed;
    let rep = check_assumptions(&c.potential, &opts)?;
    for (name, h) in [("k0", &rep.k0), ("k1", &rep.k1), ("k2", &rep.k2), ("k3", &rep.k3), ("k4", &rep.k4)] {
        println!("{name}: {:?} {}", h.verdict, h.detail);
    }
    write_json(&c.out_dir.join("assumptions.json"), &record("k_hypotheses", &rep))?;
    Ok(if rep.all_pass() { 0 } else { EXIT_FAIL })
}

fn scan(c: &RunConfig) -> Outcome {
    let ups = upsilon(c)?;
    let bx = search_box(c);
    bx.validate(ups.dim())?;
    let rows = upsilon_scan(&ups, &bx, c.scan_per_axis)?;
    let n = ups.dim();
    let mut w = BufWriter::new(File::create(c.out_dir.join("upsilon_scan.csv"))?);
    let mut header = vec!["mu".to_string()];
    header.extend((1..=n).map(|i| format!("xi_{i}")));
    header.push("upsilon".into());
    header.push("grad_mu".into());
    header.extend((1..=n).map(|i| format!("grad_xi_{i}")));
    header.push("class".into());
    writeln!(w, "{}", header.join(","))?;
    for r in &rows {
        let mut f = vec![format!("{:e}", r.mu)];
        f.extend(r.xi.iter().map(|v| format!("{v:e}")));
        f.push(format!("{:e}", r.upsilon));
        f.extend(r.grad.iter().map(|v| format!("{v:e}")));
        f.push(serde_json::to_value(r.classification).expect("enum").as_str().unwrap_or("").to_string());
        writeln!(w, "{}", f.join(","))?;
    }
    w.flush()?;

    let opts = search_options(c);
    let all = find_critical_points(&ups, &bx, &opts)?;
    let (points, degenerate): (Vec<_>, Vec<_>) = all.into_iter().partition(|p| p.classification != Classification::Degenerate);
    let deg = degree(&ups, &bx, &opts, c.degree_per_side);
    let mut out = json!({
        "anchor": "upsilon_critical_points",
        "search_box": bx,
        "critical_points": points,
        "degenerate_points": degenerate.len(),
    });
    for p in &points {
        println!("critical point μ = {:.10} ξ = {:?} Υ = {:.8} {:?}", p.mu, p.xi, p.upsilon, p.classification);
    }
    let code = match &deg {
        Ok(d) => {
            println!("degree {} (boundary inf |∇Υ| = {:.3e})", d.degree, d.boundary_inf);
            out["degree"] = record("upsilon_degree", d);
            0
        }
        Err(e) => {
            println!("degree undefined: {e}");
            out["degree_error"] = json!(e.to_string());
            EXIT_SOLVER
        }
    };
    write_json(&c.out_dir.join("upsilon_critical.json"), &out)?;
    Ok(code)
}

fn solve(c: &RunConfig) -> Outcome {
    let ctx = context(c)?;
    let ups = upsilon(c)?;
    let cps = mu_line_critical_points(c, &ups)?;
    let Some(cp) = cps.first() else {
        return Err(Failure::Solver(format!("no nondegenerate critical point of Υ for μ in {:?}", c.box_mu)));
    };
    let mu_star = cp.mu;
    ctx.sector(0)?;
    ctx.sector(1)?;
    let copts = contraction_options(c);
    let nopts = NewtonOptions { c_tol: c.newton_c_tol, ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(c.jobs).build().map_err(|e| Failure::Solver(e.to_string()))?;
    let results: Vec<_> = pool.install(|| c.eps.par_iter().map(|&e| solve_full(&ctx, &c.potential, e, mu_star, &copts, &nopts)).collect());

    let mut records = Vec::new();
    let mut good = Vec::new();
    let mut failures = 0;
    for (i, (eps, res)) in c.eps.iter().zip(results).enumerate() {
        match res {
            Ok(s) => {
                let mut f = BufWriter::new(File::create(c.out_dir.join(format!("phi_{i:03}.brfd")))?);
                write_field_dump(&mut f, &ctx.grid, &s.solution.phi.values)?;
                f.flush()?;
                println!(
                    "ε = {eps:.3e}: μ_ε = {:.10} ‖c‖ = {:.2e} residual = {:.2e} ‖φ/U‖ = {:.3e}",
                    s.mu, s.c_norm, s.residual.residual_y, s.phi_over_u
                );
                let mut r = record("solution", &s);
                r["field_dump"] = json!(format!("phi_{i:03}.brfd"));
                records.push(r);
                good.push(s);
            }
            Err(e) => {
                failures += 1;
                println!("ε = {eps:.3e}: failed: {e}");
                records.push(json!({ "anchor": "solution", "eps": eps, "error": e.to_string() }));
            }
        }
    }
    let pos: Vec<_> = good.iter().filter(|s| s.eps > 0.0).collect();
    let eps: Vec<f64> = pos.iter().map(|s| s.eps).collect();
    let slope = |y: Vec<f64>| if eps.len() >= 2 { json!(loglog_slope(&eps, &y)) } else { Value::Null };
    let certified = pos.iter().filter(|s| s.solution.constants.contracts_by_half).map(|s| s.eps).fold(None, |a: Option<f64>, e| Some(a.map_or(e, |a| a.max(e))));
    let mut summary = json!({
        "anchor": "solve_summary",
        "mu_star": mu_star,
        "other_critical_points": cps.len() - 1,
        "solved": good.len(),
        "failed": failures,
        "phi_bd_slope": slope(pos.iter().map(|s| s.solution.phi_norm).collect()),
        "mu_shift_slope": slope(pos.iter().map(|s| (s.mu - mu_star).abs().max(1e-300)).collect()),
        "phi_over_u_slope": slope(pos.iter().map(|s| s.phi_over_u).collect()),
        "largest_certified_eps": certified,
    });
    if eps.len() >= 2 {
        let rep = expansion_study(&ctx, &ups, mu_star, &eps, &copts)?;
        summary["expand_j_slope"] = json!(rep.expand_j_slope);
        summary["expand_pjmu_slope"] = json!(rep.expand_pjmu_slope);
        summary["pd_phi_bd_slope"] = json!(rep.pd_phi_bd_slope);
    }
    println!("{}", serde_json::to_string(&summary).expect("json"));
    records.push(summary);
    write_lines(&c.out_dir.join("solve.jsonl"), &records)?;
    Ok(if failures == 0 { 0 } else { EXIT_SOLVER })
}

fn expansion(c: &RunConfig) -> Outcome {
    let ctx = context(c)?;
    let ups = upsilon(c)?;
    let mu = match c.expansion_mu {
        Some(m) => m,
        None => mu_line_critical_points(c, &ups)?
            .first()
            .map(|p| p.mu)
            .ok_or_else(|| Failure::Solver(format!("no nondegenerate critical point of Υ for μ in {:?}", c.box_mu)))?,
    };
    let rep = expansion_study(&ctx, &ups, mu, &c.expansion_eps, &contraction_options(c))?;
    let mut records: Vec<Value> = rep.rows.iter().map(|r| record("expansion_row", r)).collect();
    let mut summary = record("expansion_summary", &rep);
    summary.as_object_mut().expect("object").remove("rows");
    println!("{}", serde_json::to_string(&summary).expect("json"));
    records.push(summary);
    write_lines(&c.out_dir.join("expansion.jsonl"), &records)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&c.out_dir) {
        eprintln!("cannot create {}: {e}", c.out_dir.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    let outcome = match cli.command {
        Command::VerifyIdentities => verify(&c),
        Command::CheckK => check_k(&c),
        Command::UpsilonScan => scan(&c),
        Command::Solve => solve(&c),
        Command::ExpansionStudy => expansion(&c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
