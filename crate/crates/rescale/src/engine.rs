//! The rebirth engine: diffusion, killing and the occupation measure wired
//! into one reproducible loop.
//!
//! A run advances the Euler grid one step at a time. Each step proposes the
//! next state (consuming exactly d Gaussians from the diffusion stream),
//! asks the kill monitor whether the lifetime ends inside the step, and then
//! either records the proposal, or seals the segment at the kill time and
//! draws a rebirth location from the occupation measure. Checkpoints and
//! snapshots may fall anywhere in continuous time; they are evaluated
//! through the measure's partial-interval rule without disturbing the state,
//! so observation times never perturb the dynamics.
//!
//! Three independent random streams keep the runs comparable: the diffusion
//! stream drives the initial draw and the Brownian increments, the killing
//! stream drives exponential thresholds and thinning candidates, and the
//! rebirth stream drives branch choices and rebirth locations. Swapping the
//! kill detection method therefore leaves the underlying path unchanged.

use crate::field::Field;
use crate::kappa::KillingRate;
use crate::measure::{
    dw_from_moments, HistogramMode, Mu0, Mu0Kind, OccupationConfig, OccupationMeasure,
};
use crate::rng::{RngStreams, Seeds};
use crate::sde::{euler_step, KillMethod, KillMonitor};
use crate::stats::tv_distance;
use crate::weights::WeightSchedule;
use crate::{RescaleError, Result};
use std::time::Instant;

/// Analytic target the trace columns are measured against.
#[derive(Debug, Clone)]
pub struct Reference {
    pub moments: Vec<f64>,
    /// Binned masses at the trace histogram resolution (one dimension).
    pub histogram: Option<Vec<f64>>,
}

impl Reference {
    /// Build the reference from a target density.
    pub fn from_density(pi: &Field, n_terms: usize, bins: usize) -> Result<Reference> {
        let mu = Mu0::new(Mu0Kind::Density(pi.clone()), pi.dim())?;
        let moments = mu.moments(n_terms)?;
        // marginal bin masses are available one-dimensionally, or exactly
        // for a constant target in any dimension
        let histogram = if pi.dim() == 1 || pi.is_constant() {
            Some(mu.marginal_bin_masses(bins)?)
        } else {
            None
        };
        Ok(Reference { moments, histogram })
    }
}

/// One rebirth, as seen by an event sink.
#[derive(Debug, Clone)]
pub struct RebirthEvent {
    pub time: f64,
    /// Left limit of the path at the kill (the last grid state).
    pub pre_kill: Vec<f64>,
    /// Whether the location came from the path (true) or from μ₀.
    pub from_path: bool,
    pub location: Vec<f64>,
}

/// Consumer of the rebirth event stream.
pub trait EventSink {
    fn record(&mut self, event: &RebirthEvent) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _event: &RebirthEvent) -> Result<()> {
        Ok(())
    }
}

/// Keeps every event in memory.
#[derive(Default)]
pub struct VecSink(pub Vec<RebirthEvent>);

impl EventSink for VecSink {
    fn record(&mut self, event: &RebirthEvent) -> Result<()> {
        self.0.push(event.clone());
        Ok(())
    }
}

/// Everything a run needs, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dim: usize,
    pub dt: f64,
    pub t_end: f64,
    pub method: KillMethod,
    pub seeds: Seeds,
    pub drift: Option<Field>,
    pub rate: KillingRate,
    pub mu0: Mu0,
    pub schedule: WeightSchedule,
    pub bins: usize,
    pub hist_mode: HistogramMode,
    pub n_terms: usize,
    /// Fine histogram resolution for snapshots (required if any are asked).
    pub fine_cells: Option<usize>,
    /// Times at which trace rows are emitted.
    pub checkpoints: Vec<f64>,
    /// Times at which fine full-mixture snapshots are taken.
    pub snapshot_times: Vec<f64>,
    pub reference: Option<Reference>,
}

/// One trace row. The histogram follows the configured mode, except at
/// time zero where the path is empty and the mixture (= μ₀) is reported.
#[derive(Debug, Clone)]
pub struct CheckpointRow {
    pub time: f64,
    pub steps: u64,
    pub rebirths: u64,
    /// Total variation of the histogram against the reference (NaN without one).
    pub tv: f64,
    /// Moment metric against the reference (NaN without one).
    pub dw: f64,
    pub wall_ms: f64,
    pub moments: Vec<f64>,
    /// One histogram per coordinate.
    pub histograms: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    /// Full-mixture masses on the fine grid, summing to one.
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub checkpoints: Vec<CheckpointRow>,
    pub snapshots: Vec<Snapshot>,
    pub steps: u64,
    pub rebirths: u64,
    pub final_moments: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum EventKind {
    Checkpoint,
    Snapshot,
}

#[derive(Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
}

fn merge_events(cfg: &RunConfig) -> Result<Vec<Event>> {
    let mut evs: Vec<Event> = Vec::new();
    for &t in &cfg.checkpoints {
        evs.push(Event { time: t, kind: EventKind::Checkpoint });
    }
    for &t in &cfg.snapshot_times {
        evs.push(Event { time: t, kind: EventKind::Snapshot });
    }
    let bad: Vec<f64> = evs
        .iter()
        .map(|e| e.time)
        .filter(|t| !t.is_finite() || *t < 0.0 || *t > cfg.t_end)
        .collect();
    if !bad.is_empty() {
        return Err(RescaleError::MissingSnapshots(bad));
    }
    evs.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("times are finite"));
    evs.dedup_by(|a, b| a.time == b.time && a.kind == b.kind);
    Ok(evs)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.dim == 0 || cfg.dim > 4 {
        return Err(RescaleError::UnsupportedDimension(cfg.dim, "simulation".into()));
    }
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(RescaleError::InvalidInput(format!("step size dt = {}", cfg.dt)));
    }
    // a zero horizon is allowed: the trace then only reports μ₀ at t = 0
    if !(cfg.t_end >= 0.0) || !cfg.t_end.is_finite() {
        return Err(RescaleError::InvalidInput(format!("horizon t_end = {}", cfg.t_end)));
    }
    if let Some(a) = &cfg.drift {
        if a.dim() != cfg.dim {
            return Err(RescaleError::InvalidInput(format!(
                "drift potential is {}-dimensional, torus has {}",
                a.dim(),
                cfg.dim
            )));
        }
    }
    if cfg.rate.kappa.dim() != cfg.dim {
        return Err(RescaleError::InvalidInput(format!(
            "killing rate is {}-dimensional, torus has {}",
            cfg.rate.kappa.dim(),
            cfg.dim
        )));
    }
    if cfg.mu0.dim() != cfg.dim {
        return Err(RescaleError::InvalidInput("initial measure dimension mismatch".into()));
    }
    if !cfg.snapshot_times.is_empty() && (cfg.fine_cells.is_none() || cfg.dim != 1) {
        return Err(RescaleError::Config(
            "snapshots need fine_cells and a one-dimensional torus".into(),
        ));
    }
    if let Some(r) = &cfg.reference {
        if r.moments.len() != cfg.n_terms {
            return Err(RescaleError::Config(format!(
                "reference carries {} moments, trace uses {}",
                r.moments.len(),
                cfg.n_terms
            )));
        }
        if let Some(h) = &r.histogram {
            if h.len() != cfg.bins * cfg.dim {
                return Err(RescaleError::Config(format!(
                    "reference histogram has {} bins, trace uses {} per axis",
                    h.len(),
                    cfg.bins
                )));
            }
        }
    }
    Ok(())
}

fn eval_event(
    occ: &OccupationMeasure,
    cfg: &RunConfig,
    ev: Event,
    steps: u64,
    started: Instant,
    trace: &mut RunTrace,
) -> Result<()> {
    match ev.kind {
        EventKind::Snapshot => {
            trace
                .snapshots
                .push(Snapshot { time: ev.time, masses: occ.fine_snapshot_at(ev.time)? });
        }
        EventKind::Checkpoint => {
            let moments = occ.moments_at(ev.time)?;
            let mode = if occ.path_mass_at(ev.time)? > 0.0 {
                cfg.hist_mode
            } else {
                HistogramMode::Full
            };
            let histograms = occ.marginal_histograms_at(ev.time, mode)?;
            let (tv, dw) = match &cfg.reference {
                Some(r) => {
                    // worst marginal deviation across axes (a single axis in 1-d)
                    let tv = match &r.histogram {
                        Some(h) => {
                            let mut worst = 0.0f64;
                            for (axis, hist) in histograms.iter().enumerate() {
                                let slice = &h[axis * cfg.bins..(axis + 1) * cfg.bins];
                                worst = worst.max(tv_distance(hist, slice)?);
                            }
                            worst
                        }
                        None => f64::NAN,
                    };
                    (tv, dw_from_moments(&moments, &r.moments)?)
                }
                None => (f64::NAN, f64::NAN),
            };
            trace.checkpoints.push(CheckpointRow {
                time: ev.time,
                steps,
                rebirths: occ.kills(),
                tv,
                dw,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                moments,
                histograms,
            });
        }
    }
    Ok(())
}

/// Run the full algorithm to `t_end`, reporting rebirths to `sink`.
pub fn run(cfg: &RunConfig, sink: &mut dyn EventSink) -> Result<RunTrace> {
    validate(cfg)?;
    let events = merge_events(cfg)?;
    let mut occ = OccupationMeasure::new(OccupationConfig {
        dim: cfg.dim,
        dt: cfg.dt,
        schedule: cfg.schedule,
        mu0: cfg.mu0.clone(),
        n_terms: cfg.n_terms,
        bins: cfg.bins,
        fine_cells: cfg.fine_cells,
    })?;
    // grid states plus roughly one extra state per kill
    let kill_margin = (cfg.dt * cfg.rate.bounds.upper.min(4.0)).min(0.5);
    let est = (cfg.t_end / cfg.dt) * (1.0 + kill_margin) + 4096.0;
    occ.reserve_states(est as usize);

    let mut streams = RngStreams::new(cfg.seeds);
    let mut x = vec![0.0; cfg.dim];
    cfg.mu0.sample_into(&mut streams.diffusion, &mut x)?;
    occ.begin_segment(0.0, &x)?;
    let mut monitor = KillMonitor::begin(cfg.method, &cfg.rate, &mut streams.killing)?;
    let mut kappa_curr = cfg.rate.value(&x);

    let started = Instant::now();
    let mut trace = RunTrace {
        checkpoints: Vec::new(),
        snapshots: Vec::new(),
        steps: 0,
        rebirths: 0,
        final_moments: Vec::new(),
    };
    let mut idx = 0usize;
    while idx < events.len() && events[idx].time <= 0.0 {
        eval_event(&occ, cfg, events[idx], 0, started, &mut trace)?;
        idx += 1;
    }

    let mut t = 0.0f64; // wall time of the newest grid state
    let mut age = 0.0f64; // t minus the birth of the active segment
    let mut steps: u64 = 0;
    let cap = ((cfg.t_end / cfg.dt) * 4.0 + 1e6) as u64;
    let mut x_prop = vec![0.0; cfg.dim];

    while t < cfg.t_end {
        if steps >= cap {
            return Err(RescaleError::NonConvergence(format!(
                "step budget of {cap} exhausted at t = {t}"
            )));
        }
        steps += 1;
        x_prop.copy_from_slice(&x);
        euler_step(&mut x_prop, cfg.drift.as_ref(), cfg.dt, &mut streams.diffusion);
        if !x_prop.iter().all(|v| v.is_finite()) {
            return Err(RescaleError::Step(format!(
                "non-finite state {x_prop:?} proposed at t = {t} (step {steps})"
            )));
        }
        let kappa_next = cfg.rate.value(&x_prop);
        let kill = monitor.advance(age, cfg.dt, kappa_curr, kappa_next, &mut streams.killing);
        let tau = kill.map(|rel| t + (rel - age));
        match tau {
            Some(tau) if tau <= cfg.t_end => {
                while idx < events.len() && events[idx].time < tau {
                    eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                    idx += 1;
                }
                occ.seal_segment(tau, true)?;
                while idx < events.len() && events[idx].time <= tau {
                    eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                    idx += 1;
                }
                let pre_kill = x.clone();
                let from_path = occ.sample_rebirth(tau, &mut streams.rebirth, &mut x)?;
                sink.record(&RebirthEvent { time: tau, pre_kill, from_path, location: x.clone() })?;
                occ.begin_segment(tau, &x)?;
                monitor = KillMonitor::begin(cfg.method, &cfg.rate, &mut streams.killing)?;
                kappa_curr = cfg.rate.value(&x);
                t = tau;
                age = 0.0;
            }
            _ => {
                let t_next = t + cfg.dt;
                if t_next <= cfg.t_end {
                    while idx < events.len() && events[idx].time < t_next {
                        eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                        idx += 1;
                    }
                    occ.push_state(&x_prop);
                    x.copy_from_slice(&x_prop);
                    kappa_curr = kappa_next;
                    t = t_next;
                    age += cfg.dt;
                    while idx < events.len() && events[idx].time <= t {
                        eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                        idx += 1;
                    }
                } else {
                    // horizon falls inside this step: truncate, do not kill
                    while idx < events.len() && events[idx].time < cfg.t_end {
                        eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                        idx += 1;
                    }
                    occ.seal_segment(cfg.t_end, false)?;
                    while idx < events.len() {
                        eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
                        idx += 1;
                    }
                    break;
                }
            }
        }
    }
    // a run can also end on a grid point or a kill landing exactly on t_end
    while idx < events.len() {
        eval_event(&occ, cfg, events[idx], steps, started, &mut trace)?;
        idx += 1;
    }
    let end = occ.time();
    trace.final_moments = occ.moments_at(end)?;
    trace.steps = steps;
    trace.rebirths = occ.kills();
    Ok(trace)
}

/// Run `n` replicas sequentially with offset seed triples.
pub fn run_replicas(cfg: &RunConfig, n: usize) -> Result<Vec<RunTrace>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = cfg.clone();
        c.seeds = cfg.seeds.replica(i as u64);
        out.push(run(&c, &mut NullSink)?);
    }
    Ok(out)
}
