//! Command-line driver: stochastic runs, deterministic grid reports, and the
//! tracking diagnostic that joins the two.
//!
//! Every invocation parses the configuration (file plus flag overrides),
//! writes the resolved echo to the output directory first, and only then does
//! any work, so a crashed run still leaves an exact record of what it was
//! asked to do. Exit codes: 0 success, 2 configuration problem, 3 numerical
//! failure, 4 a `--check` gate did not pass.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rescale::apt::{self, AptReport};
use rescale::config::{build, parse_config, render_config, BuiltConfig, KappaMode};
use rescale::engine::{self, RunConfig, VecSink};
use rescale::field::Field;
use rescale::measure::Mu0Kind;
use rescale::oracle::{
    build_generator, flow_integrate, fr_semigroup, qsd_fixed_point, resolvent, OracleGrid,
    ProbabilityVector,
};
use rescale::output;
use rescale::rng::Seeds;
use rescale::stats::median;
use rescale::torus::wrap_angle;
use rescale::{RescaleError, Result};

#[derive(Parser)]
#[command(
    name = "rescale",
    version,
    about = "Self-interacting diffusion on the flat torus: simulation, grid oracle, and tracking diagnostics"
)]
struct Cli {
    /// Configuration file (flat key = value lines); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, created if needed.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Seed triple overriding the config, as diffusion,killing,rebirth.
    #[arg(long, global = true, value_name = "D,K,R")]
    seed: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the killed-and-reborn diffusion; writes trace, histogram, and event tables.
    Simulate(SimArgs),
    /// Re-run a recorded configuration; identical seeds give byte-identical tables.
    Replay(SimArgs),
    /// Deterministic computations on the dense grid.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Run with the snapshot lattice and compare the mixture against the limit flow.
    AptCheck {
        /// Gate the report: exit 4 unless the per-base suprema are
        /// non-increasing and the last sits within twice the floor.
        #[arg(long)]
        check: bool,
    },
    /// Killing-rate inspection.
    #[command(subcommand)]
    Kappa(KappaCmd),
}

#[derive(Args)]
struct SimArgs {
    /// Override run.replicas from the config.
    #[arg(long, value_name = "R")]
    replicas: Option<usize>,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Solve for the quasi-stationary law; writes qsd.csv and beta.txt.
    Qsd,
    /// Integrate the measure flow from several initial laws; writes flow.csv.
    Flow,
    /// Check the rebirth-semigroup contraction bound; writes contraction.csv.
    Contraction,
}

#[derive(Subcommand)]
enum KappaCmd {
    /// Print certified bounds and the thinning envelope.
    Report,
}

fn main() {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let built = load(cli)?;
    match &cli.command {
        Command::Simulate(args) | Command::Replay(args) => {
            simulate(&built, &cli.out, args.replicas)
        }
        Command::Oracle(OracleCmd::Qsd) => oracle_qsd(&built, &cli.out),
        Command::Oracle(OracleCmd::Flow) => oracle_flow(&built, &cli.out),
        Command::Oracle(OracleCmd::Contraction) => oracle_contraction(&built, &cli.out),
        Command::AptCheck { check } => apt_cmd(&built, &cli.out, *check),
        Command::Kappa(KappaCmd::Report) => kappa_report(&built),
    }
}

/// Read the config, apply flag overrides, validate, and echo the resolved
/// form before doing anything else.
fn load(cli: &Cli) -> Result<BuiltConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut file = parse_config(&text)?;
    if let Some(triple) = &cli.seed {
        file.seeds = parse_seed_triple(triple)?;
    }
    let built = build(&file)?;
    std::fs::create_dir_all(&cli.out)?;
    output::write_resolved(&cli.out, &render_config(&built.resolved))?;
    Ok(built)
}

fn parse_seed_triple(triple: &str) -> Result<Seeds> {
    let parts: Vec<&str> = triple.split(',').collect();
    if parts.len() != 3 {
        return Err(RescaleError::Config(format!(
            "--seed wants three comma-separated integers, got {triple:?}"
        )));
    }
    let mut v = [0u64; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| {
            RescaleError::Config(format!("--seed component {part:?} is not an unsigned integer"))
        })?;
    }
    Ok(Seeds::new(v[0], v[1], v[2]))
}

/// One output directory per replica when fanning out, flat otherwise.
fn replica_dir(out: &Path, replicas: usize, index: usize) -> PathBuf {
    if replicas == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("replica_{index}"))
    }
}

fn simulate(built: &BuiltConfig, out: &Path, replicas: Option<usize>) -> Result<i32> {
    let n = replicas.unwrap_or(built.replicas);
    if n == 0 {
        return Err(RescaleError::Config("--replicas must be at least 1".into()));
    }
    for i in 0..n {
        let mut cfg = built.run.clone();
        cfg.seeds = built.run.seeds.replica(i as u64);
        let dir = replica_dir(out, n, i);
        std::fs::create_dir_all(&dir)?;
        let mut sink = VecSink(Vec::new());
        let trace = engine::run(&cfg, &mut sink)?;
        output::write_trace(&dir, &trace.checkpoints)?;
        output::write_histograms(&dir, &trace.checkpoints)?;
        output::write_events(&dir, &sink.0, cfg.dim)?;
        let tail = trace
            .checkpoints
            .last()
            .filter(|row| row.tv.is_finite())
            .map(|row| format!(", final tv {:.4}", row.tv))
            .unwrap_or_default();
        println!("replica {i}: {} steps, {} rebirths{tail}", trace.steps, trace.rebirths);
    }
    Ok(0)
}

/// Grid, generator, and resolvent for the configured rate and drift.
fn oracle_stack(built: &BuiltConfig) -> Result<(OracleGrid, rescale::oracle::ResolventMatrix)> {
    let grid = OracleGrid::new(built.run.dim, built.oracle_n)?;
    let gen = build_generator(built.run.drift.as_ref(), &built.run.rate.kappa, grid)?;
    let res = resolvent(&gen)?;
    Ok((grid, res))
}

/// The analytic target density, when the rate was derived from one.
fn target_field(built: &BuiltConfig) -> Result<Field> {
    Field::parse(&built.resolved.pi_name, built.resolved.dim)
}

fn oracle_qsd(built: &BuiltConfig, out: &Path) -> Result<i32> {
    if built.run.dim != 1 {
        return Err(RescaleError::UnsupportedDimension(
            built.run.dim,
            "qsd.csv uses a single angle column".into(),
        ));
    }
    let (grid, res) = oracle_stack(built)?;
    let q = qsd_fixed_point(&res, 1e-12)?;
    let dx = grid.dx();
    let mut centers = vec![0.0; grid.cells()];
    let mut x = [0.0];
    for (i, c) in centers.iter_mut().enumerate() {
        grid.center(i, &mut x);
        *c = x[0];
    }
    let pi_disc: Vec<f64> = q.pi.as_slice().iter().map(|m| m / dx).collect();
    let pi = target_field(built)?;
    let pi_analytic: Vec<f64> =
        grid.cell_integrals(&pi)?.iter().map(|m| m / dx).collect();
    output::write_qsd(out, &centers, &pi_disc, &pi_analytic)?;
    output::write_beta(out, q.beta)?;
    let l1: f64 = q
        .pi
        .as_slice()
        .iter()
        .zip(grid.cell_integrals(&pi)?.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    println!(
        "qsd on {} cells: {} iterations, residual {:.3e}, beta {:.6}, L1 to analytic target {:.3e}",
        grid.cells(),
        q.iterations,
        q.residual,
        q.beta,
        l1
    );
    Ok(0)
}

/// Flat cell index containing the wrapped point, axis 0 fastest.
fn point_cell(grid: &OracleGrid, x: &[f64]) -> usize {
    let dx = grid.dx();
    let mut flat = 0;
    let mut stride = 1;
    for &c in x {
        let idx = ((wrap_angle(c) / dx) as usize).min(grid.n - 1);
        flat += idx * stride;
        stride *= grid.n;
    }
    flat
}

/// The configured initial law binned onto the oracle grid.
fn mu0_on_grid(built: &BuiltConfig, grid: &OracleGrid) -> Result<ProbabilityVector> {
    match &built.run.mu0.kind {
        Mu0Kind::Uniform => Ok(ProbabilityVector::uniform(grid.cells())),
        Mu0Kind::Density(f) => ProbabilityVector::from_field(grid, f),
        Mu0Kind::Point(x) => ProbabilityVector::point(grid.cells(), point_cell(grid, x)),
    }
}

fn oracle_flow(built: &BuiltConfig, out: &Path) -> Result<i32> {
    let (grid, res) = oracle_stack(built)?;
    let pi_disc = qsd_fixed_point(&res, 1e-12)?.pi;
    let pi = target_field(built)?;
    let cells = grid.cells();
    let initials: Vec<ProbabilityVector> = vec![
        ProbabilityVector::uniform(cells),
        ProbabilityVector::point(cells, 0)?,
        ProbabilityVector::point(cells, point_cell(&grid, &vec![std::f64::consts::PI; grid.dim]))?,
        ProbabilityVector::from_field(&grid, &pi)?,
    ];
    let times: Vec<f64> = (0..10).map(|i| (1u64 << i) as f64).collect();
    let mut curves = Vec::with_capacity(initials.len());
    for nu0 in &initials {
        let states = flow_integrate(&res, nu0, &times, built.flow_dt)?;
        let mut curve = Vec::with_capacity(times.len());
        for s in &states {
            curve.push(s.tv_to(&pi_disc)?);
        }
        curves.push(curve);
    }
    output::write_flow(out, &times, &curves)?;
    let finals: Vec<String> = curves.iter().map(|c| format!("{:.3e}", c.last().unwrap())).collect();
    println!(
        "flow on {} cells over t = 1..{}: final tv to fixed point per initial: {}",
        cells,
        times.last().unwrap(),
        finals.join(", ")
    );
    Ok(0)
}

fn oracle_contraction(built: &BuiltConfig, out: &Path) -> Result<i32> {
    let grid = OracleGrid::new(built.run.dim, built.oracle_n)?;
    let gen = build_generator(built.run.drift.as_ref(), &built.run.rate.kappa, grid)?;
    let mu = mu0_on_grid(built, &grid)?;
    let cells = grid.cells();
    // doubling the half-unit matrix reaches each horizon with one transcendental
    let mut p = fr_semigroup(&gen, &mu, 0.5)?;
    let pairs: Vec<(usize, usize)> = vec![
        (0, cells / 2),
        (cells / 4, (3 * cells) / 4),
        (cells / 8, (5 * cells) / 8),
        (cells / 3, (5 * cells) / 6),
    ];
    let lower = built.run.rate.bounds.lower;
    let mut rows = Vec::new();
    let mut all_ok = true;
    for t in [0.5, 1.0, 2.0, 4.0] {
        if t > 0.5 {
            p = &p * &p;
        }
        let mut worst = 0.0f64;
        for &(a, b) in &pairs {
            let d: f64 = (p.row(a) - p.row(b)).abs().sum();
            worst = worst.max(d);
        }
        let bound = 2.0 * (-lower * t).exp();
        if worst > bound + 1e-8 {
            all_ok = false;
        }
        println!("t = {t}: max L1 over {} pairs = {:.6e}, bound 2 exp(-{lower:.6} t) = {bound:.6e}", pairs.len(), worst);
        rows.push((t, worst, bound));
    }
    output::write_contraction(out, &rows)?;
    if !all_ok {
        return Err(RescaleError::NonConvergence(
            "semigroup contraction exceeded the exponential bound".into(),
        ));
    }
    Ok(0)
}

fn apt_cmd(built: &BuiltConfig, out: &Path, check: bool) -> Result<i32> {
    let plan = apt::plan(built.run.schedule, built.apt.clone())?;
    let (_, res) = oracle_stack(built)?;
    let pi = target_field(built)?;

    let mut cfg: RunConfig = built.run.clone();
    cfg.snapshot_times = plan.snapshot_times();
    cfg.t_end = plan.horizon();
    cfg.checkpoints = vec![0.0];

    let n = built.replicas;
    let mut reports: Vec<AptReport> = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = cfg.clone();
        c.seeds = cfg.seeds.replica(i as u64);
        let trace = engine::run(&c, &mut engine::NullSink)?;
        let report = apt::apt_check(&plan, &trace.snapshots, &res, built.flow_dt, cfg.n_terms, &pi)?;
        let dir = replica_dir(out, n, i);
        std::fs::create_dir_all(&dir)?;
        output::write_apt(&dir, &report.rows)?;
        let sups: Vec<String> =
            report.sup_per_base.iter().map(|(b, s)| format!("t={b}: {s:.4e}")).collect();
        println!("replica {i}: sup per base {}", sups.join(", "));
        reports.push(report);
    }

    let floor = reports[0].floor;
    let bases: Vec<f64> = reports[0].sup_per_base.iter().map(|(b, _)| *b).collect();
    let medians: Vec<f64> = (0..bases.len())
        .map(|j| {
            let vals: Vec<f64> = reports.iter().map(|r| r.sup_per_base[j].1).collect();
            median(&vals)
        })
        .collect();
    println!("reporting floor (truncation + binning): {floor:.4e}");
    for (b, m) in bases.iter().zip(medians.iter()) {
        println!("median sup at base {b}: {m:.4e}");
    }

    if check {
        let monotone = medians.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let settled = *medians.last().unwrap() <= 2.0 * floor;
        if !monotone || !settled {
            eprintln!(
                "check FAILED: monotone = {monotone}, final median {:.4e} vs allowance {:.4e}",
                medians.last().unwrap(),
                2.0 * floor
            );
            return Ok(4);
        }
        println!("check passed");
    }
    Ok(0)
}

fn kappa_report(built: &BuiltConfig) -> Result<i32> {
    let rate = &built.run.rate;
    let resolved = &built.resolved;
    match resolved.kappa_mode {
        KappaMode::FromPi => println!(
            "killing rate derived from target `{}` with drift `{}`",
            resolved.pi_name, resolved.drift_name
        ),
        KappaMode::Explicit => {
            println!("explicit killing-rate field `{}`", resolved.kappa_field)
        }
    }
    println!("offset K = {}", output::fmt_f64(resolved_offset(built)));
    println!(
        "certified bounds over {} sweep points per dimension:",
        rate.bounds.points_per_dim
    );
    println!("  lower  = {}", output::fmt_f64(rate.bounds.lower));
    println!("  upper  = {}", output::fmt_f64(rate.bounds.upper));
    println!("  margin = {}", output::fmt_f64(rate.bounds.margin));
    println!("thinning envelope = {}", output::fmt_f64(rate.thinning_envelope()));
    Ok(0)
}

fn resolved_offset(built: &BuiltConfig) -> f64 {
    match built.resolved.kappa_k {
        rescale::config::KappaOffset::Fixed(v) => v,
        rescale::config::KappaOffset::Auto => f64::NAN,
    }
}
