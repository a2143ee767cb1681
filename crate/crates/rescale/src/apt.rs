//! Pseudotrajectory diagnostic: does the reweighted occupation measure,
//! watched through the intrinsic clock, shadow the rebirth flow?
//!
//! Let ζ_t be the occupation mixture evaluated at wall time h(t), where h
//! is the schedule's intrinsic-to-wall map. Over a window [t, t + T] the
//! trajectory should track the flow started from its own beginning:
//! sup_{s ≤ T} d(ζ_{t+s}, Φ_s(ζ_t)) must shrink as the base time t grows.
//! The check compares engine snapshots on the h-lattice against the oracle
//! flow in the moment metric, and reports that supremum per base time
//! alongside the resolution floor below which the comparison carries no
//! information (metric truncation plus grid binning of the target).

use crate::config::AptSettings;
use crate::engine::Snapshot;
use crate::field::Field;
use crate::measure::{dw_from_moments, dw_truncation_floor, moments_of_density};
use crate::oracle::{flow_integrate, ProbabilityVector, ResolventMatrix};
use crate::weights::WeightSchedule;
use crate::{RescaleError, Result};

/// The snapshot lattice for one diagnostic run.
#[derive(Debug, Clone)]
pub struct AptPlan {
    pub schedule: WeightSchedule,
    pub settings: AptSettings,
    /// Intrinsic offsets within each window, from 0 to T inclusive.
    pub offsets: Vec<f64>,
    /// Wall times h(base + offset), one row per base time.
    pub wall_times: Vec<Vec<f64>>,
}

/// Lay out the snapshot lattice for the given schedule and settings.
pub fn plan(schedule: WeightSchedule, settings: AptSettings) -> Result<AptPlan> {
    if settings.base_times.is_empty() {
        return Err(RescaleError::Config("apt.base_times is empty".into()));
    }
    if settings.s_samples < 2 {
        return Err(RescaleError::Config("apt.s_samples must be at least 2".into()));
    }
    if !(settings.window >= 0.0) || !settings.window.is_finite() {
        return Err(RescaleError::Config(format!("apt.window = {}", settings.window)));
    }
    let mut prev = -1.0f64;
    for &b in &settings.base_times {
        if !b.is_finite() || b < 0.0 || b <= prev {
            return Err(RescaleError::Config(format!(
                "apt.base_times must be nonnegative and strictly increasing, saw {b}"
            )));
        }
        prev = b;
    }
    let m = settings.s_samples;
    let offsets: Vec<f64> =
        (0..m).map(|j| settings.window * j as f64 / (m - 1) as f64).collect();
    let wall_times: Vec<Vec<f64>> = settings
        .base_times
        .iter()
        .map(|&b| offsets.iter().map(|&s| schedule.h(b + s)).collect())
        .collect();
    Ok(AptPlan { schedule, settings, offsets, wall_times })
}

impl AptPlan {
    /// All wall times the engine must snapshot, sorted and deduplicated.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.wall_times.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).expect("wall times are finite"));
        all.dedup();
        all
    }

    /// Wall horizon a run needs to cover the whole lattice.
    pub fn horizon(&self) -> f64 {
        self.snapshot_times().last().copied().unwrap_or(0.0)
    }
}

/// One lattice point of the report.
#[derive(Debug, Clone, Copy)]
pub struct AptRow {
    pub base: f64,
    pub s: f64,
    pub wall_time: f64,
    /// Moment-metric distance between the snapshot and the flow image.
    pub discrepancy: f64,
}

#[derive(Debug, Clone)]
pub struct AptReport {
    pub rows: Vec<AptRow>,
    /// (base time, sup over the window) pairs, in base order.
    pub sup_per_base: Vec<(f64, f64)>,
    /// Metric truncation plus target binning: discrepancies at or below
    /// this level are indistinguishable from perfect tracking.
    pub floor: f64,
}

fn find_snapshot<'a>(snapshots: &'a [Snapshot], t: f64) -> Option<&'a Snapshot> {
    let tol = 1e-9 * t.abs().max(1.0);
    snapshots.iter().find(|s| (s.time - t).abs() <= tol)
}

/// Evaluate the diagnostic against recorded snapshots. The resolvent must
/// live on the same grid the snapshots were binned to.
pub fn apt_check(
    plan: &AptPlan,
    snapshots: &[Snapshot],
    res: &ResolventMatrix,
    flow_dt: f64,
    n_terms: usize,
    pi: &Field,
) -> Result<AptReport> {
    let grid = res.grid;
    let missing: Vec<f64> = plan
        .snapshot_times()
        .into_iter()
        .filter(|&t| find_snapshot(snapshots, t).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(RescaleError::MissingSnapshots(missing));
    }
    for s in snapshots {
        if s.masses.len() != grid.cells() {
            return Err(RescaleError::InvalidInput(format!(
                "snapshot at {} has {} cells, oracle grid has {}",
                s.time,
                s.masses.len(),
                grid.cells()
            )));
        }
    }

    let analytic = moments_of_density(pi, n_terms)?;
    let binned = grid.moments_of(ProbabilityVector::from_field(&grid, pi)?.as_slice(), n_terms)?;
    let floor = dw_truncation_floor(n_terms) + dw_from_moments(&analytic, &binned)?;

    let mut rows = Vec::new();
    let mut sup_per_base = Vec::new();
    for (bi, &base) in plan.settings.base_times.iter().enumerate() {
        let walls = &plan.wall_times[bi];
        let zeta0 = find_snapshot(snapshots, walls[0]).expect("checked above");
        let start = ProbabilityVector::from_masses(&zeta0.masses)?;
        let flowed = flow_integrate(res, &start, &plan.offsets, flow_dt)?;
        let mut sup = 0.0f64;
        for (j, (&s, state)) in plan.offsets.iter().zip(flowed.iter()).enumerate() {
            let snap = find_snapshot(snapshots, walls[j]).expect("checked above");
            let m_snap = grid.moments_of(&snap.masses, n_terms)?;
            let m_flow = grid.moments_of(state.as_slice(), n_terms)?;
            let discrepancy = dw_from_moments(&m_snap, &m_flow)?;
            sup = sup.max(discrepancy);
            rows.push(AptRow { base, s, wall_time: walls[j], discrepancy });
        }
        sup_per_base.push((base, sup));
    }
    Ok(AptReport { rows, sup_per_base, floor })
}
