//! Flat key = value configuration files.
//!
//! One assignment per line, `#` starts a comment, unknown keys and duplicate
//! keys are hard errors that name the offending line. Every run echoes its
//! fully resolved configuration (defaults applied, automatic values
//! computed) to `resolved.cfg`; feeding that file back reproduces the run
//! exactly, so the echo doubles as a reproducibility record.

use crate::engine::{Reference, RunConfig};
use crate::field::Field;
use crate::kappa::{calibrate_offset, KappaField, KillingRate};
use crate::measure::{HistogramMode, Mu0, Mu0Kind};
use crate::rng::Seeds;
use crate::sde::KillMethod;
use crate::weights::WeightSchedule;
use crate::{RescaleError, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaMode {
    FromPi,
    Explicit,
}

/// The constant K added to the killing rate: a number, or calibrated so the
/// certification sweep minimum lands on `kappa.target_lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaOffset {
    Auto,
    Fixed(f64),
}

/// Typed image of a configuration file, defaults applied. Field order
/// mirrors the canonical key order of the resolved echo.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub dim: usize,
    pub pi_name: String,
    pub drift_name: String,
    pub kappa_mode: KappaMode,
    pub kappa_field: String,
    pub kappa_k: KappaOffset,
    pub target_lower: f64,
    pub grid_n: usize,
    pub dt: f64,
    pub method: KillMethod,
    pub seeds: Seeds,
    pub weight_k: f64,
    pub weight_r: f64,
    pub mu0_kind: String,
    pub bins: usize,
    pub hist_mode: HistogramMode,
    pub n_terms: usize,
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    pub replicas: usize,
    pub oracle_n: usize,
    pub flow_dt: f64,
    pub apt_window: f64,
    pub apt_base_times: Vec<f64>,
    pub apt_s_samples: usize,
}

impl Default for FileConfig {
    /// The reference experiment: trimodal target, no drift, uniform initial
    /// law, r = 1000, k = 0, dt = 0.05, horizon 10⁶ with checkpoints at
    /// 25, 100, 1000 and 10⁶.
    fn default() -> FileConfig {
        FileConfig {
            dim: 1,
            pi_name: "trimodal".into(),
            drift_name: "zero".into(),
            kappa_mode: KappaMode::FromPi,
            kappa_field: "zero".into(),
            kappa_k: KappaOffset::Auto,
            target_lower: 0.02,
            grid_n: 10_000,
            dt: 0.05,
            method: KillMethod::Clock,
            seeds: Seeds::new(1, 2, 3),
            weight_k: 0.0,
            weight_r: 1000.0,
            mu0_kind: "uniform".into(),
            bins: 50,
            hist_mode: HistogramMode::PathOnly,
            n_terms: 12,
            t_end: 1e6,
            checkpoints: vec![25.0, 100.0, 1000.0, 1e6],
            replicas: 3,
            oracle_n: 200,
            flow_dt: 0.05,
            apt_window: 1.0,
            apt_base_times: vec![2.0, 4.0, 6.0, 8.0],
            apt_s_samples: 9,
        }
    }
}

struct RawMap {
    entries: HashMap<String, (String, usize)>,
}

impl RawMap {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let mut leftover: Vec<(&String, usize)> =
            self.entries.iter().map(|(k, (_, l))| (k, *l)).collect();
        leftover.sort_by_key(|(_, l)| *l);
        let (key, line) = leftover[0];
        Err(RescaleError::Config(format!("unknown key `{key}` (line {line})")))
    }
}

fn lex(text: &str) -> Result<RawMap> {
    let mut entries: HashMap<String, (String, usize)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| {
            RescaleError::Config(format!("expected `key = value` (line {line}): `{stripped}`"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(RescaleError::Config(format!("empty key (line {line})")));
        }
        if let Some((_, first)) = entries.get(&key) {
            return Err(RescaleError::Config(format!(
                "duplicate key `{key}` (line {line}, first set on line {first})"
            )));
        }
        entries.insert(key, (value, line));
    }
    Ok(RawMap { entries })
}

fn parse_f64(key: &str, raw: (String, usize)) -> Result<f64> {
    let (v, line) = raw;
    let x: f64 = v
        .parse()
        .map_err(|_| RescaleError::Config(format!("{key} (line {line}): invalid number `{v}`")))?;
    if !x.is_finite() {
        return Err(RescaleError::Config(format!("{key} (line {line}): non-finite value")));
    }
    Ok(x)
}

fn parse_usize(key: &str, raw: (String, usize)) -> Result<usize> {
    let (v, line) = raw;
    v.parse()
        .map_err(|_| RescaleError::Config(format!("{key} (line {line}): invalid integer `{v}`")))
}

fn parse_u64(key: &str, raw: (String, usize)) -> Result<u64> {
    let (v, line) = raw;
    v.parse()
        .map_err(|_| RescaleError::Config(format!("{key} (line {line}): invalid integer `{v}`")))
}

fn parse_list(key: &str, raw: (String, usize)) -> Result<Vec<f64>> {
    let (v, line) = raw;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                RescaleError::Config(format!("{key} (line {line}): invalid number `{s}`"))
            })
        })
        .collect()
}

/// Parse configuration text over the defaults.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut raw = lex(text)?;
    let mut cfg = FileConfig::default();
    if let Some(v) = raw.take("torus.dim") {
        cfg.dim = parse_usize("torus.dim", v)?;
    }
    if let Some((v, _)) = raw.take("field.pi") {
        cfg.pi_name = v;
    }
    if let Some((v, _)) = raw.take("field.a") {
        cfg.drift_name = v;
    }
    if let Some((v, line)) = raw.take("kappa.mode") {
        cfg.kappa_mode = match v.as_str() {
            "from_pi" => KappaMode::FromPi,
            "explicit" => KappaMode::Explicit,
            _ => {
                return Err(RescaleError::Config(format!(
                    "kappa.mode (line {line}): expected from_pi or explicit, got `{v}`"
                )))
            }
        };
    }
    if let Some((v, _)) = raw.take("kappa.field") {
        cfg.kappa_field = v;
    }
    if let Some((v, line)) = raw.take("kappa.K") {
        cfg.kappa_k = if v == "auto" {
            KappaOffset::Auto
        } else {
            KappaOffset::Fixed(parse_f64("kappa.K", (v, line))?)
        };
    }
    if let Some(v) = raw.take("kappa.target_lower") {
        cfg.target_lower = parse_f64("kappa.target_lower", v)?;
    }
    if let Some(v) = raw.take("kappa.grid_n") {
        cfg.grid_n = parse_usize("kappa.grid_n", v)?;
    }
    if let Some(v) = raw.take("sde.dt") {
        cfg.dt = parse_f64("sde.dt", v)?;
    }
    if let Some((v, line)) = raw.take("sde.method") {
        cfg.method = match v.as_str() {
            "clock" => KillMethod::Clock,
            "thinning" => KillMethod::Thinning,
            _ => {
                return Err(RescaleError::Config(format!(
                    "sde.method (line {line}): expected clock or thinning, got `{v}`"
                )))
            }
        };
    }
    if let Some(v) = raw.take("seed.diffusion") {
        cfg.seeds.diffusion = parse_u64("seed.diffusion", v)?;
    }
    if let Some(v) = raw.take("seed.killing") {
        cfg.seeds.killing = parse_u64("seed.killing", v)?;
    }
    if let Some(v) = raw.take("seed.rebirth") {
        cfg.seeds.rebirth = parse_u64("seed.rebirth", v)?;
    }
    if let Some(v) = raw.take("weights.k") {
        cfg.weight_k = parse_f64("weights.k", v)?;
    }
    if let Some(v) = raw.take("weights.r") {
        cfg.weight_r = parse_f64("weights.r", v)?;
    }
    if let Some((v, _)) = raw.take("mu0.kind") {
        cfg.mu0_kind = v;
    }
    if let Some(v) = raw.take("histogram.bins") {
        cfg.bins = parse_usize("histogram.bins", v)?;
    }
    if let Some((v, line)) = raw.take("histogram.mode") {
        cfg.hist_mode = match v.as_str() {
            "path_only" => HistogramMode::PathOnly,
            "full" => HistogramMode::Full,
            _ => {
                return Err(RescaleError::Config(format!(
                    "histogram.mode (line {line}): expected path_only or full, got `{v}`"
                )))
            }
        };
    }
    if let Some(v) = raw.take("dw.n_terms") {
        cfg.n_terms = parse_usize("dw.n_terms", v)?;
    }
    if let Some(v) = raw.take("run.t_end") {
        cfg.t_end = parse_f64("run.t_end", v)?;
    }
    if let Some(v) = raw.take("run.checkpoints") {
        cfg.checkpoints = parse_list("run.checkpoints", v)?;
    }
    if let Some(v) = raw.take("run.replicas") {
        cfg.replicas = parse_usize("run.replicas", v)?;
    }
    if let Some(v) = raw.take("oracle.n") {
        cfg.oracle_n = parse_usize("oracle.n", v)?;
    }
    if let Some(v) = raw.take("oracle.flow_dt") {
        cfg.flow_dt = parse_f64("oracle.flow_dt", v)?;
    }
    if let Some(v) = raw.take("apt.window") {
        cfg.apt_window = parse_f64("apt.window", v)?;
    }
    if let Some(v) = raw.take("apt.base_times") {
        cfg.apt_base_times = parse_list("apt.base_times", v)?;
    }
    if let Some(v) = raw.take("apt.s_samples") {
        cfg.apt_s_samples = parse_usize("apt.s_samples", v)?;
    }
    raw.finish()?;
    Ok(cfg)
}

/// Scheduling block for the pseudotrajectory diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct AptSettings {
    /// Window length T in intrinsic time.
    pub window: f64,
    /// Base times t at which windows open.
    pub base_times: Vec<f64>,
    /// Number of sample offsets per window, endpoints included.
    pub s_samples: usize,
}

/// A fully assembled run: the engine configuration plus everything the
/// orchestration layer needs (replica count, oracle resolution, diagnostic
/// schedule) and the configuration echo with automatic values resolved.
#[derive(Debug, Clone)]
pub struct BuiltConfig {
    pub run: RunConfig,
    pub replicas: usize,
    pub oracle_n: usize,
    pub flow_dt: f64,
    pub apt: AptSettings,
    /// The file image with kappa.K replaced by its resolved value.
    pub resolved: FileConfig,
}

fn parse_mu0(kind: &str, dim: usize) -> Result<Mu0> {
    if kind == "uniform" {
        return Mu0::new(Mu0Kind::Uniform, dim);
    }
    if let Some(list) = kind.strip_prefix("point:") {
        let coords: Vec<f64> = list
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    RescaleError::Config(format!("mu0.kind: invalid coordinate `{s}`"))
                })
            })
            .collect::<Result<_>>()?;
        return Mu0::new(Mu0Kind::Point(coords), dim);
    }
    if let Some(name) = kind.strip_prefix("field:") {
        return Mu0::new(Mu0Kind::Density(Field::parse(name, dim)?), dim);
    }
    Err(RescaleError::Config(format!(
        "mu0.kind: expected uniform, point:<coords> or field:<name>, got `{kind}`"
    )))
}

/// Resolve fields, calibrate and certify the killing rate, and validate
/// cross-key invariants. `resolved.kappa_k` always comes back `Fixed`.
pub fn build(file: &FileConfig) -> Result<BuiltConfig> {
    let pi = Field::parse(&file.pi_name, file.dim)?;
    let drift_field = Field::parse(&file.drift_name, file.dim)?;
    let offset = match (file.kappa_k, file.kappa_mode) {
        (KappaOffset::Fixed(v), _) => v,
        (KappaOffset::Auto, KappaMode::FromPi) => {
            calibrate_offset(&pi, &drift_field, file.target_lower, file.grid_n)?
        }
        (KappaOffset::Auto, KappaMode::Explicit) => {
            return Err(RescaleError::Config(
                "kappa.K = auto is only defined for kappa.mode = from_pi".into(),
            ))
        }
    };
    let kappa = match file.kappa_mode {
        KappaMode::FromPi => KappaField::from_pi(pi.clone(), drift_field.clone(), offset)?,
        KappaMode::Explicit => {
            KappaField::explicit(Field::parse(&file.kappa_field, file.dim)?, offset)
        }
    };
    let rate = KillingRate::certify(kappa, file.grid_n)?;
    let schedule = WeightSchedule::new(file.weight_k, file.weight_r)?;
    let mu0 = parse_mu0(&file.mu0_kind, file.dim)?;

    if !(file.t_end >= 0.0) || !file.t_end.is_finite() {
        return Err(RescaleError::Config(format!("run.t_end = {}", file.t_end)));
    }
    let mut prev = 0.0f64;
    for &c in &file.checkpoints {
        if !c.is_finite() || c <= prev {
            return Err(RescaleError::Config(format!(
                "run.checkpoints must be strictly increasing and positive, saw {c} after {prev}"
            )));
        }
        if c > file.t_end {
            return Err(RescaleError::Config(format!(
                "checkpoint {c} lies beyond run.t_end = {}",
                file.t_end
            )));
        }
        prev = c;
    }
    // the t = 0 state (pure μ₀) opens every trace
    let mut checkpoints = Vec::with_capacity(file.checkpoints.len() + 1);
    checkpoints.push(0.0);
    checkpoints.extend_from_slice(&file.checkpoints);

    if file.replicas == 0 {
        return Err(RescaleError::Config("run.replicas must be at least 1".into()));
    }
    if file.apt_s_samples < 2 {
        return Err(RescaleError::Config("apt.s_samples must be at least 2".into()));
    }
    if !(file.apt_window >= 0.0) || !file.apt_window.is_finite() {
        return Err(RescaleError::Config(format!("apt.window = {}", file.apt_window)));
    }

    let reference = Some(Reference::from_density(&pi, file.n_terms, file.bins)?);
    let run = RunConfig {
        dim: file.dim,
        dt: file.dt,
        t_end: file.t_end,
        method: file.method,
        seeds: file.seeds,
        // a constant potential has zero gradient and identical dynamics
        drift: if drift_field.is_constant() { None } else { Some(drift_field) },
        rate,
        mu0,
        schedule,
        bins: file.bins,
        hist_mode: file.hist_mode,
        n_terms: file.n_terms,
        fine_cells: if file.dim == 1 { Some(file.oracle_n) } else { None },
        checkpoints,
        snapshot_times: Vec::new(),
        reference,
    };
    let mut resolved = file.clone();
    resolved.kappa_k = KappaOffset::Fixed(offset);
    Ok(BuiltConfig {
        run,
        replicas: file.replicas,
        oracle_n: file.oracle_n,
        flow_dt: file.flow_dt,
        apt: AptSettings {
            window: file.apt_window,
            base_times: file.apt_base_times.clone(),
            s_samples: file.apt_s_samples,
        },
        resolved,
    })
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Render a configuration as a file that parses back to exactly the same
/// values. Floats use the shortest representation that round-trips, so
/// `sde.dt = 0.05` survives the echo bit for bit.
pub fn render_config(cfg: &FileConfig) -> String {
    let k = match cfg.kappa_k {
        KappaOffset::Auto => "auto".to_string(),
        KappaOffset::Fixed(v) => format!("{v}"),
    };
    let method = format!("{}", cfg.method);
    let mode = match cfg.kappa_mode {
        KappaMode::FromPi => "from_pi",
        KappaMode::Explicit => "explicit",
    };
    let hist = match cfg.hist_mode {
        HistogramMode::PathOnly => "path_only",
        HistogramMode::Full => "full",
    };
    format!(
        "# resolved configuration: every value below is in effect\n\
         torus.dim = {}\n\
         field.pi = {}\n\
         field.a = {}\n\
         kappa.mode = {}\n\
         kappa.field = {}\n\
         kappa.K = {}\n\
         kappa.target_lower = {}\n\
         kappa.grid_n = {}\n\
         sde.dt = {}\n\
         sde.method = {}\n\
         seed.diffusion = {}\n\
         seed.killing = {}\n\
         seed.rebirth = {}\n\
         weights.k = {}\n\
         weights.r = {}\n\
         mu0.kind = {}\n\
         histogram.bins = {}\n\
         histogram.mode = {}\n\
         dw.n_terms = {}\n\
         run.t_end = {}\n\
         run.checkpoints = {}\n\
         run.replicas = {}\n\
         oracle.n = {}\n\
         oracle.flow_dt = {}\n\
         apt.window = {}\n\
         apt.base_times = {}\n\
         apt.s_samples = {}\n",
        cfg.dim,
        cfg.pi_name,
        cfg.drift_name,
        mode,
        cfg.kappa_field,
        k,
        cfg.target_lower,
        cfg.grid_n,
        cfg.dt,
        method,
        cfg.seeds.diffusion,
        cfg.seeds.killing,
        cfg.seeds.rebirth,
        cfg.weight_k,
        cfg.weight_r,
        cfg.mu0_kind,
        cfg.bins,
        hist,
        cfg.n_terms,
        cfg.t_end,
        join(&cfg.checkpoints),
        cfg.replicas,
        cfg.oracle_n,
        cfg.flow_dt,
        cfg.apt_window,
        join(&cfg.apt_base_times),
        cfg.apt_s_samples,
    )
}
