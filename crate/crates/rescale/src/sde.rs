//! Euler–Maruyama stepping and killed lifetimes.
//!
//! The diffusion dY = ∇A(Y) dt + dW is advanced on a fixed grid of width dt,
//! wrapped onto the torus after every step. A lifetime ends at
//! τ = inf{t : ∫₀ᵗ κ(X_s) ds > ξ}, ξ ~ Exp(1). Two interchangeable detection
//! methods are provided:
//!
//! * `Clock`: accumulate the trapezoidal rate integral along the grid; when
//!   it first exceeds ξ, place the kill inside the step by linear
//!   interpolation of the integral.
//! * `Thinning`: propose candidate times as an Exp(κ̄) renewal stream and
//!   accept a candidate with probability κ(X)/κ̄, evaluating κ at the grid
//!   state at or below the candidate. Requires a certified envelope κ̄.
//!
//! Both methods draw exactly d Gaussians from the diffusion stream per grid
//! step (including the step in which the kill lands), so the underlying path
//! is identical whichever method watches it.

use crate::field::Field;
use crate::kappa::KillingRate;
use crate::rng::RngStreams;
use crate::torus::{wrap_in_place, TorusPoint};
use crate::{RescaleError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillMethod {
    Clock,
    Thinning,
}

impl std::fmt::Display for KillMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KillMethod::Clock => write!(f, "clock"),
            KillMethod::Thinning => write!(f, "thinning"),
        }
    }
}

/// Deterministic part of one Euler step: ∇A(x)·dt.
pub fn drift_increment(a: &Field, x: &[f64], dt: f64) -> Vec<f64> {
    let mut g = a.gradient(x);
    for v in g.iter_mut() {
        *v *= dt;
    }
    g
}

/// One Euler–Maruyama step in place: x ← wrap(x + ∇A(x) dt + √dt Z).
/// Always consumes exactly `x.len()` Gaussians from `rng`.
#[inline]
pub fn euler_step(x: &mut [f64], drift: Option<&Field>, dt: f64, rng: &mut ChaCha8Rng) {
    let sqdt = dt.sqrt();
    if let Some(a) = drift {
        // gradient first: it reads x before the noise lands
        let mut g = [0.0f64; 4];
        debug_assert!(x.len() <= 4);
        a.gradient_into(x, &mut g[..x.len()]);
        for (i, c) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *c += g[i] * dt + sqdt * z;
        }
    } else {
        for c in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *c += sqdt * z;
        }
    }
    wrap_in_place(x);
}

/// Watches one lifetime for its kill, one Euler step at a time.
/// Times are relative to the birth of the lifetime.
pub enum KillMonitor {
    Clock { threshold: f64, acc: f64 },
    Thinning { envelope: f64, next_candidate: f64 },
}

impl KillMonitor {
    pub fn begin(method: KillMethod, rate: &KillingRate, kill_rng: &mut ChaCha8Rng) -> Result<KillMonitor> {
        match method {
            KillMethod::Clock => {
                let xi: f64 = kill_rng.sample(Exp1);
                Ok(KillMonitor::Clock { threshold: xi, acc: 0.0 })
            }
            KillMethod::Thinning => {
                if !rate.certified {
                    return Err(RescaleError::Config(
                        "thinning needs a certified upper bound on the killing rate".into(),
                    ));
                }
                let envelope = rate.thinning_envelope();
                if !(envelope > 0.0) {
                    return Err(RescaleError::Assumption(format!(
                        "thinning envelope {envelope} is not positive"
                    )));
                }
                let e: f64 = kill_rng.sample(Exp1);
                Ok(KillMonitor::Thinning { envelope, next_candidate: e / envelope })
            }
        }
    }

    /// Advance across the step [t, t+dt]. `kappa_curr` and `kappa_next` are
    /// the rate at the states bracketing the step; thinning only uses the
    /// left one (the grid state at or below any candidate in the step).
    /// Returns the kill time in (t, t+dt] if the lifetime ends here.
    #[inline]
    pub fn advance(
        &mut self,
        t: f64,
        dt: f64,
        kappa_curr: f64,
        kappa_next: f64,
        kill_rng: &mut ChaCha8Rng,
    ) -> Option<f64> {
        match self {
            KillMonitor::Clock { threshold, acc } => {
                let delta = 0.5 * dt * (kappa_curr + kappa_next);
                if *acc + delta > *threshold {
                    let frac = (*threshold - *acc) / delta;
                    Some(t + dt * frac)
                } else {
                    *acc += delta;
                    None
                }
            }
            KillMonitor::Thinning { envelope, next_candidate } => {
                while *next_candidate <= t + dt {
                    let cand = *next_candidate;
                    let e: f64 = kill_rng.sample(Exp1);
                    *next_candidate += e / *envelope;
                    let u: f64 = kill_rng.gen();
                    if u * *envelope < kappa_curr {
                        return Some(cand.max(t + f64::MIN_POSITIVE));
                    }
                }
                None
            }
        }
    }
}

/// A completed (or, inside the engine, truncated) lifetime on the Euler grid.
#[derive(Debug, Clone)]
pub struct LifetimeSegment {
    pub birth: f64,
    /// States at birth + j·dt, j = 0..len.
    pub states: Vec<TorusPoint>,
    /// Absolute kill time; lies in [last grid time, last grid time + dt).
    pub kill_time: f64,
    /// Left limit of the path at the kill, i.e. the last grid state.
    pub pre_kill: TorusPoint,
}

/// Simulate one lifetime from `x0` until the kill fires.
pub fn simulate_lifetime(
    birth: f64,
    x0: &TorusPoint,
    drift: Option<&Field>,
    rate: &KillingRate,
    dt: f64,
    method: KillMethod,
    streams: &mut RngStreams,
) -> Result<LifetimeSegment> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(RescaleError::InvalidInput(format!("step size dt = {dt}")));
    }
    let mut monitor = KillMonitor::begin(method, rate, &mut streams.killing)?;
    let mut states = vec![x0.clone()];
    let mut x: Vec<f64> = x0.coords().to_vec();
    let mut kappa_curr = rate.value(&x);
    // generous hard cap: certification guarantees an a.s. finite lifetime
    let max_steps: u64 = 4_000_000_000;
    for j in 0..max_steps {
        let t = j as f64 * dt;
        euler_step(&mut x, drift, dt, &mut streams.diffusion);
        let kappa_next = rate.value(&x);
        if let Some(tau) = monitor.advance(t, dt, kappa_curr, kappa_next, &mut streams.killing) {
            let pre = states.last().expect("states start non-empty").clone();
            return Ok(LifetimeSegment {
                birth,
                states,
                kill_time: birth + tau,
                pre_kill: pre,
            });
        }
        states.push(TorusPoint::wrap(&x)?);
        kappa_curr = kappa_next;
    }
    Err(RescaleError::NonConvergence(format!(
        "no kill within {max_steps} Euler steps; check the killing rate bounds"
    )))
}
