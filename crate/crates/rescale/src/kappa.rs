//! The state-dependent killing rate and its certified bounds.
//!
//! Killing at rate
//!
//! κ(y) = ½ (Δπ/π − 2 ∇A·∇π/π − 2 ΔA)(y) + K
//!
//! makes π the quasi-stationary distribution of the diffusion with drift ∇A
//! killed at κ. The constant K only shifts the spectrum: it must be large
//! enough that κ stays strictly positive, and everything downstream (thinning
//! bounds, resolvent estimates, contraction rates) leans on certified grid
//! bounds κ̲ ≤ κ ≤ κ̄.

use crate::field::Field;
use crate::{RescaleError, Result, TAU};

/// A killing rate: either derived from a target density and drift potential,
/// or an explicit field, plus a constant offset.
#[derive(Debug, Clone)]
pub struct KappaField {
    pub base: KappaBase,
    /// The additive constant K.
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub enum KappaBase {
    /// ½(Δπ/π − 2∇A·∇π/π − 2ΔA), evaluated from analytic derivatives.
    FromPi { pi: Field, drift: Field },
    /// A field used directly as the rate (offset still applies).
    Explicit(Field),
}

impl KappaField {
    /// Rate derived from a target density `pi` and drift potential `a`.
    pub fn from_pi(pi: Field, drift: Field, offset: f64) -> Result<KappaField> {
        if pi.dim() != drift.dim() {
            return Err(RescaleError::InvalidInput(format!(
                "pi is {}-dimensional, drift is {}-dimensional",
                pi.dim(),
                drift.dim()
            )));
        }
        if !offset.is_finite() {
            return Err(RescaleError::InvalidInput(format!("non-finite offset {offset}")));
        }
        Ok(KappaField { base: KappaBase::FromPi { pi, drift }, offset })
    }

    pub fn explicit(field: Field, offset: f64) -> KappaField {
        KappaField { base: KappaBase::Explicit(field), offset }
    }

    pub fn dim(&self) -> usize {
        match &self.base {
            KappaBase::FromPi { pi, .. } => pi.dim(),
            KappaBase::Explicit(f) => f.dim(),
        }
    }

    /// κ(x). Assumes π > 0 at x; `value_checked` guards that during
    /// certification sweeps.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.base {
            KappaBase::FromPi { pi, drift } => {
                let p = pi.value(x);
                let mut half = 0.5 * pi.laplacian(x) / p - drift.laplacian(x);
                if !drift.is_constant() {
                    let gp = pi.gradient(x);
                    let ga = drift.gradient(x);
                    let dot: f64 = gp.iter().zip(ga.iter()).map(|(a, b)| a * b).sum();
                    half -= dot / p;
                }
                half + self.offset
            }
            KappaBase::Explicit(f) => f.value(x) + self.offset,
        }
    }

    pub fn value_checked(&self, x: &[f64]) -> Result<f64> {
        if let KappaBase::FromPi { pi, .. } = &self.base {
            let p = pi.value(x);
            if !(p > 0.0) {
                return Err(RescaleError::InvalidDensity(format!(
                    "pi = {p} at grid point {x:?}"
                )));
            }
        }
        let v = self.value(x);
        if !v.is_finite() {
            return Err(RescaleError::InvalidInput(format!("kappa non-finite at {x:?}")));
        }
        Ok(v)
    }
}

/// Grid resolution used for bound sweeps: `grid_n` points per dimension in
/// one dimension, capped at 256 per dimension above that.
pub fn sweep_points_per_dim(grid_n: usize, dim: usize) -> usize {
    if dim <= 1 {
        grid_n
    } else {
        grid_n.min(256)
    }
}

/// Result of a certification sweep.
#[derive(Debug, Clone, Copy)]
pub struct KappaBounds {
    pub lower: f64,
    pub upper: f64,
    /// One-cell Lipschitz allowance: max observed slope × half a grid cell.
    /// `upper + margin` is a safe thinning envelope.
    pub margin: f64,
    pub points_per_dim: usize,
}

/// Sweep κ over a regular lattice and report grid min/max plus a Lipschitz
/// margin. Non-positive lower bound is a violated standing assumption.
pub fn certify_bounds(kappa: &KappaField, grid_n: usize) -> Result<KappaBounds> {
    let (lower, upper, margin, n) = sweep(kappa, grid_n)?;
    if !(lower > 0.0) {
        return Err(RescaleError::Assumption(format!(
            "killing rate lower bound {lower} is not positive (grid of {n} per dim); raise K"
        )));
    }
    Ok(KappaBounds { lower, upper, margin, points_per_dim: n })
}

fn sweep(kappa: &KappaField, grid_n: usize) -> Result<(f64, f64, f64, usize)> {
    let d = kappa.dim();
    let n = sweep_points_per_dim(grid_n, d);
    if n < 8 {
        return Err(RescaleError::InvalidInput(format!("sweep grid {n} per dim is too coarse")));
    }
    let cell = TAU / n as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_slope = 0.0f64;
    let mut x = vec![0.0f64; d];
    let mut idx = vec![0usize; d];
    let total = n.checked_pow(d as u32).ok_or_else(|| {
        RescaleError::InvalidInput("sweep grid overflows".into())
    })?;
    let mut prev_along_dim0 = f64::NAN;
    for flat in 0..total {
        let mut rem = flat;
        for k in 0..d {
            idx[k] = rem % n;
            rem /= n;
            x[k] = idx[k] as f64 * cell;
        }
        let v = kappa.value_checked(&x)?;
        lo = lo.min(v);
        hi = hi.max(v);
        // slope estimate along the fastest-varying axis
        if idx[0] > 0 {
            max_slope = max_slope.max((v - prev_along_dim0).abs() / cell);
        }
        prev_along_dim0 = v;
    }
    Ok((lo, hi, max_slope * cell / 2.0, n))
}

/// Smallest offset K that lifts the K = 0 rate expression to `target_lower`
/// on the sweep grid.
pub fn calibrate_offset(pi: &Field, drift: &Field, target_lower: f64, grid_n: usize) -> Result<f64> {
    if !(target_lower > 0.0) {
        return Err(RescaleError::InvalidInput(format!(
            "target lower bound {target_lower} must be positive"
        )));
    }
    let base = KappaField::from_pi(pi.clone(), drift.clone(), 0.0)?;
    let (lo, _, _, _) = sweep(&base, grid_n)?;
    Ok(target_lower - lo)
}

/// A killing rate bundled with its certified bounds.
#[derive(Debug, Clone)]
pub struct KillingRate {
    pub kappa: KappaField,
    pub bounds: KappaBounds,
    /// False only for rates constructed with caller-supplied bounds;
    /// thinning refuses to run on those.
    pub certified: bool,
}

impl KillingRate {
    pub fn certify(kappa: KappaField, grid_n: usize) -> Result<KillingRate> {
        let bounds = certify_bounds(&kappa, grid_n)?;
        Ok(KillingRate { kappa, bounds, certified: true })
    }

    /// Trusts the caller's bounds without a sweep. Kept for exotic test
    /// setups; the thinning lifetime method rejects uncertified rates.
    pub fn unchecked(kappa: KappaField, lower: f64, upper: f64) -> KillingRate {
        KillingRate {
            kappa,
            bounds: KappaBounds { lower, upper, margin: 0.0, points_per_dim: 0 },
            certified: false,
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.kappa.value(x)
    }

    /// Envelope rate for thinning proposals: certified grid max plus the
    /// Lipschitz margin.
    pub fn thinning_envelope(&self) -> f64 {
        self.bounds.upper + self.bounds.margin
    }
}
