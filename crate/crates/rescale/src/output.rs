//! File outputs: CSV tables and the resolved configuration echo.
//!
//! Every file is written whole to a temporary name in the target directory
//! and renamed into place, so a crash can leave stale temporaries but never
//! a half-written table. Each CSV opens with a schema comment line naming
//! the table and its version, followed by the column header. Floating-point
//! values are printed with 17 significant digits, enough to reproduce the
//! exact bit pattern on read-back.

use crate::apt::AptRow;
use crate::engine::{CheckpointRow, RebirthEvent};
use crate::Result;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// 17 significant digits, the round-trip guarantee for f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `content` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File name fragment for a checkpoint time: `25`, `1000000`, `2.5`.
pub fn time_tag(t: f64) -> String {
    format!("{t}")
}

/// trace.csv: one row per checkpoint.
pub fn write_trace(dir: &Path, rows: &[CheckpointRow]) -> Result<PathBuf> {
    let mut s = String::from("# trace v1\ntime,rebirths,tv,dw,wall_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(r.time),
            r.rebirths,
            fmt_f64(r.tv),
            fmt_f64(r.dw),
            fmt_f64(r.wall_ms)
        );
    }
    let path = dir.join("trace.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}

/// hist_<time>.csv per checkpoint (and per coordinate above one dimension).
pub fn write_histograms(dir: &Path, rows: &[CheckpointRow]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in rows {
        for (axis, h) in r.histograms.iter().enumerate() {
            let bins = h.len();
            let width = crate::TAU / bins as f64;
            let mut s = String::from("# histogram v1\nbin_lo,bin_hi,mass\n");
            for (b, m) in h.iter().enumerate() {
                let lo = b as f64 * width;
                let hi = (b + 1) as f64 * width;
                let _ = writeln!(s, "{},{},{}", fmt_f64(lo), fmt_f64(hi), fmt_f64(*m));
            }
            let name = if r.histograms.len() == 1 {
                format!("hist_{}.csv", time_tag(r.time))
            } else {
                format!("hist_{}_dim{axis}.csv", time_tag(r.time))
            };
            let path = dir.join(name);
            atomic_write(&path, &s)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// events.csv: one row per rebirth.
pub fn write_events(dir: &Path, events: &[RebirthEvent], dim: usize) -> Result<PathBuf> {
    let mut s = String::from("# events v1\n");
    s.push_str("kill_time");
    for a in 0..dim {
        let _ = write!(s, ",pre_theta_{a}");
    }
    for a in 0..dim {
        let _ = write!(s, ",rebirth_theta_{a}");
    }
    s.push('\n');
    for e in events {
        s.push_str(&fmt_f64(e.time));
        for v in &e.pre_kill {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        for v in &e.location {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    let path = dir.join("events.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}

/// qsd.csv: discrete fixed point against the analytic target, both as
/// cell-averaged densities over the oracle grid.
pub fn write_qsd(
    dir: &Path,
    centers: &[f64],
    pi_disc: &[f64],
    pi_analytic: &[f64],
) -> Result<PathBuf> {
    let mut s = String::from("# qsd v1\ntheta,pi_disc,pi_analytic\n");
    for ((c, d), a) in centers.iter().zip(pi_disc.iter()).zip(pi_analytic.iter()) {
        let _ = writeln!(s, "{},{},{}", fmt_f64(*c), fmt_f64(*d), fmt_f64(*a));
    }
    let path = dir.join("qsd.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}

/// beta.txt: the mean lifetime under the quasi-stationary law.
pub fn write_beta(dir: &Path, beta: f64) -> Result<PathBuf> {
    let path = dir.join("beta.txt");
    atomic_write(&path, &format!("{}\n", fmt_f64(beta)))?;
    Ok(path)
}

/// flow.csv: distance to the fixed point along the flow, one column per
/// initial law.
pub fn write_flow(dir: &Path, times: &[f64], curves: &[Vec<f64>]) -> Result<PathBuf> {
    let mut s = String::from("# flow v1\nt");
    for i in 0..curves.len() {
        let _ = write!(s, ",tv_to_pi_{i}");
    }
    s.push('\n');
    for (j, t) in times.iter().enumerate() {
        s.push_str(&fmt_f64(*t));
        for c in curves {
            let _ = write!(s, ",{}", fmt_f64(c[j]));
        }
        s.push('\n');
    }
    let path = dir.join("flow.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}

/// resolved.cfg: the configuration echo.
pub fn write_resolved(dir: &Path, text: &str) -> Result<PathBuf> {
    let path = dir.join("resolved.cfg");
    atomic_write(&path, text)?;
    Ok(path)
}

/// apt.csv: tracking discrepancy per (base time, offset) lattice point.
pub fn write_apt(dir: &Path, rows: &[AptRow]) -> Result<PathBuf> {
    let mut s = String::from("# apt v1\nbase_t,s,wall_time,dw\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(r.base),
            fmt_f64(r.s),
            fmt_f64(r.wall_time),
            fmt_f64(r.discrepancy)
        );
    }
    let path = dir.join("apt.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}

/// contraction.csv: worst observed pairwise L1 distance under the rebirth
/// semigroup against the exponential bound, one row per horizon.
pub fn write_contraction(dir: &Path, rows: &[(f64, f64, f64)]) -> Result<PathBuf> {
    let mut s = String::from("# contraction v1\nt,max_l1,bound\n");
    for (t, d, b) in rows {
        let _ = writeln!(s, "{},{},{}", fmt_f64(*t), fmt_f64(*d), fmt_f64(*b));
    }
    let path = dir.join("contraction.csv");
    atomic_write(&path, &s)?;
    Ok(path)
}
