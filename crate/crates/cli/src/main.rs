//! `msro`: batch driver for the multistage robust solver.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 solver failure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use msro_core::bundle::{self, BundleConfig};
use msro_core::inventory::{self, InventoryConfig, Method};
use msro_core::lowerbound::{self, optimality_gap, PREFIX_TOL};
use msro_core::model::MatrixDoc;
use msro_core::oracle::check_theorem3;
use msro_core::transform::{build_two_stage, solve_adr, PolicyDoc};
use msro_core::{validate, Instance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Bundle solve with a scenario-tree lower bound.
    Solve,
    /// Fully affine baseline.
    Adr,
    /// Harvested vs uniformly sampled lower bounds.
    Lb,
    /// Bound chain check, with enumeration on small instances.
    Oracle,
    /// Batch of random inventory instances, TPB against ADR.
    Study,
    /// Write an inventory instance.
    Gen,
}

#[derive(Debug, Parser)]
#[command(name = "msro", version, about = "Multistage adaptive robust LPs via affine state rules")]
struct Cli {
    /// Mode, given positionally or with --mode.
    #[arg(value_enum)]
    command: Option<Mode>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Instance JSON (solve, adr, lb, oracle).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Inventory configuration JSON (gen); random when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    delta_tol: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero the timing columns so CSV output is reproducible.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    scenario_cap: usize,
    /// Horizon for study and gen.
    #[arg(long = "T", default_value_t = 5)]
    horizon: usize,
    /// Number of study instances, seeds `seed..seed+seeds`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

impl Cli {
    fn bundle_config(&self) -> BundleConfig {
        let mut c = BundleConfig::default();
        if let Some(v) = self.delta_tol {
            c.delta_tol = v;
        }
        if let Some(v) = self.m {
            c.m = v;
        }
        if let Some(v) = self.t0 {
            c.t0 = v;
        }
        if let Some(v) = self.t_min {
            c.t_min = v;
        }
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        c
    }
}

/// Failure classes that map to exit codes.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Solver(anyhow::Error),
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn solver(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn solver(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Solver(e.into()))
    }
}

#[derive(Serialize)]
struct SolutionDoc {
    #[serde(rename = "F_star")]
    f_star: f64,
    x: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<MatrixDoc>,
    q: Vec<Vec<f64>>,
    #[serde(rename = "UB")]
    ub: f64,
    #[serde(rename = "LB")]
    lb: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct AdrDoc {
    value: f64,
    x: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<MatrixDoc>,
    q: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct LbDoc {
    scenarios: usize,
    harvested_lb: f64,
    sampled_lb: f64,
    #[serde(rename = "UB")]
    ub: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mode = match (cli.command, cli.mode) {
        (Some(a), Some(b)) if a != b => return Err(Failure::Input(anyhow::anyhow!("conflicting modes {a:?} and {b:?}"))),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(Failure::Input(anyhow::anyhow!("no mode given; see --help"))),
    };
    let cfg = cli.bundle_config();
    cfg.validate().input()?;
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("create {}", cli.out_dir.display())).input()?;
    match mode {
        Mode::Solve => solve(cli, &cfg),
        Mode::Adr => adr(cli),
        Mode::Lb => lb(cli, &cfg),
        Mode::Oracle => oracle(cli, &cfg),
        Mode::Study => study(cli, &cfg),
        Mode::Gen => gen(cli),
    }
}

fn load(cli: &Cli) -> Result<Instance, Failure> {
    let Some(path) = &cli.instance else {
        return Err(Failure::Input(anyhow::anyhow!("--instance is required for this mode")));
    };
    let inst = Instance::load(path).with_context(|| format!("load {}", path.display())).input()?;
    let report = validate(&inst);
    if !report.is_empty() {
        return Err(Failure::Input(anyhow::anyhow!("{} is invalid:\n{report}", path.display())));
    }
    Ok(inst)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serialize").solver()?;
    fs::write(path, text + "\n").with_context(|| format!("write {}", path.display())).solver()
}

fn solve(cli: &Cli, cfg: &BundleConfig) -> Result<(), Failure> {
    let inst = load(cli)?;
    let ts = build_two_stage(&inst);
    let sol = bundle::run(&ts, cfg).context("bundle").solver()?;
    if !sol.converged {
        warn!("stopped after {} iterations without meeting delta_tol", sol.iterations);
    }
    let scen = lowerbound::harvest_scenarios(&sol.harvested, &inst.u, cli.scenario_cap).solver()?;
    let tree = lowerbound::build_scenario_tree(&inst, &scen, PREFIX_TOL);
    let lb = lowerbound::solve_stmarmilp(&inst, &tree).context("lower bound").solver()?;
    // an undefined gap (UB + LB = 0) is reported as 0 when both bounds vanish
    let gap = optimality_gap(sol.ub, lb).unwrap_or(if sol.ub == lb { 0.0 } else { f64::NAN });
    let pol = PolicyDoc::new(&ts, &sol.xhat);
    let doc = SolutionDoc {
        f_star: sol.ub,
        x: pol.x,
        p: pol.p,
        q: pol.q,
        ub: sol.ub,
        lb,
        gap,
        iterations: sol.iterations,
        converged: sol.converged,
    };
    write_json(&cli.out_dir.join("solution.json"), &doc)?;
    let f = File::create(cli.out_dir.join("iters.csv")).context("create iters.csv").solver()?;
    bundle::write_log(&sol.log, BufWriter::new(f), cli.deterministic).solver()?;
    println!("UB {:.8}  LB {:.8}  gap {:.4}%  iterations {}", sol.ub, lb, 100.0 * gap, sol.iterations);
    Ok(())
}

fn adr(cli: &Cli) -> Result<(), Failure> {
    let inst = load(cli)?;
    let ts = build_two_stage(&inst);
    let a = solve_adr(&inst).context("affine baseline").solver()?;
    let pol = PolicyDoc::new(&ts, &a.xhat);
    write_json(&cli.out_dir.join("adr.json"), &AdrDoc { value: a.value, x: pol.x, p: pol.p, q: pol.q })?;
    println!("ADR {:.8}", a.value);
    Ok(())
}

fn lb(cli: &Cli, cfg: &BundleConfig) -> Result<(), Failure> {
    let inst = load(cli)?;
    let ts = build_two_stage(&inst);
    let sol = bundle::run(&ts, cfg).context("bundle").solver()?;
    let harvested = lowerbound::harvest_scenarios(&sol.harvested, &inst.u, cli.scenario_cap).solver()?;
    let sampled = lowerbound::sample_uniform_scenarios(&inst.u, harvested.len(), cli.seed).solver()?;
    let bound = |set: &lowerbound::ScenarioSet| {
        let tree = lowerbound::build_scenario_tree(&inst, set, PREFIX_TOL);
        lowerbound::solve_stmarmilp(&inst, &tree)
    };
    let h = bound(&harvested).context("harvested lower bound").solver()?;
    let s = bound(&sampled).context("sampled lower bound").solver()?;
    fs::write(cli.out_dir.join("scenarios.json"), harvested.to_json()).context("write scenarios.json").solver()?;
    write_json(&cli.out_dir.join("lb.json"), &LbDoc { scenarios: harvested.len(), harvested_lb: h, sampled_lb: s, ub: sol.ub })?;
    println!("{} scenarios: harvested LB {h:.8}, sampled LB {s:.8}, UB {:.8}", harvested.len(), sol.ub);
    Ok(())
}

fn oracle(cli: &Cli, cfg: &BundleConfig) -> Result<(), Failure> {
    let inst = load(cli)?;
    let rep = check_theorem3(&inst, cfg, cli.scenario_cap).context("bound chain").solver()?;
    write_json(&cli.out_dir.join("chain.json"), &rep)?;
    match rep.v_tpb_exact {
        Some(ex) => println!("v_S {:.8} <= v_TPB {:.8} (enumeration {ex:.8}) <= v_ADR {:.8}", rep.v_s, rep.v_tpb, rep.v_adr),
        None => println!("v_S {:.8} <= v_TPB {:.8} <= v_ADR {:.8}", rep.v_s, rep.v_tpb, rep.v_adr),
    }
    if !rep.holds {
        return Err(Failure::Solver(anyhow::anyhow!("bound chain violated")));
    }
    Ok(())
}

fn study(cli: &Cli, cfg: &BundleConfig) -> Result<(), Failure> {
    if cli.horizon == 0 || cli.seeds == 0 {
        return Err(Failure::Input(anyhow::anyhow!("--T and --seeds must be positive")));
    }
    let cases: Vec<(u64, InventoryConfig)> =
        (cli.seed..cli.seed + cli.seeds).map(|s| (s, inventory::random_config(cli.horizon, s))).collect();
    info!("running {} instances with T = {}", cases.len(), cli.horizon);
    let rep = inventory::study(&cases, &[Method::Tpb, Method::Adr], cfg, cli.scenario_cap);
    let f = File::create(cli.out_dir.join("study.csv")).context("create study.csv").solver()?;
    rep.write_csv(BufWriter::new(f), cli.deterministic).solver()?;
    for (seed, why) in &rep.failed {
        warn!("seed {seed} failed: {why}");
    }
    for m in [Method::Tpb, Method::Adr] {
        if let (Some(avg), Some(max)) = (rep.average_gap(m), rep.max_gap(m)) {
            println!("{:>3}: average gap {:.4}%, max gap {:.4}%", m.as_str(), 100.0 * avg, 100.0 * max);
        }
    }
    let worse = rep.tpb_worse(1e-6);
    if !worse.is_empty() {
        warn!("TPB gap above ADR gap on seeds {worse:?}");
    }
    if rep.rows.is_empty() {
        return Err(Failure::Solver(anyhow::anyhow!("every instance failed")));
    }
    Ok(())
}

fn gen(cli: &Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("read {}", path.display())).input()?;
            serde_json::from_str::<InventoryConfig>(&text).with_context(|| format!("parse {}", path.display())).input()?
        }
        None => inventory::random_config(cli.horizon, cli.seed),
    };
    let inst = inventory::generate(&cfg).input()?;
    let path = cli.out_dir.join("instance.json");
    inst.save(&path).with_context(|| format!("write {}", path.display())).solver()?;
    if cli.config.is_none() {
        write_json(&cli.out_dir.join("config.json"), &cfg)?;
    }
    println!("wrote {}", path.display());
    Ok(())
}
