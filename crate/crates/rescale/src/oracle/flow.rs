//! The rebirth flow ν̇ = Π(ν) − ν and two independent ways to evaluate it.
//!
//! `flow_integrate` is the workhorse: a fixed-step fourth-order
//! Runge–Kutta march directly on the simplex. `flow_via_tilde` reaches the
//! same trajectory through a change of clock: the unnormalized linear flow
//! m_s = μ e^{sR} normalizes to a solution of u̇ = uR − (uR·1)u, and
//! running it at speed ds/dt = 1/(u_s R·1) reproduces the rebirth flow. The
//! two paths share no numerical machinery, so their agreement is a strong
//! consistency check. The tilde route costs one matrix-vector product per
//! fixed substep of s, so use it for moderate horizons only.

use super::ProbabilityVector;
use crate::oracle::resolvent::ResolventMatrix;
use crate::{RescaleError, Result};
use nalgebra::DVector;

fn check_times(times: &[f64]) -> Result<()> {
    let mut prev = 0.0f64;
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(RescaleError::InvalidInput(format!("bad flow time {t}")));
        }
        if t < prev {
            return Err(RescaleError::InvalidInput(format!(
                "flow times must be nondecreasing, saw {t} after {prev}"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// Π(ν) − ν for a raw (possibly mid-stage, slightly off-simplex) vector.
fn derivative(res: &ResolventMatrix, v: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
    let denom = v.dot(&res.r1);
    if !(denom > 1e-12) || !denom.is_finite() {
        return Err(RescaleError::Step(format!(
            "flow left the probability simplex (mean lifetime {denom})"
        )));
    }
    res.matrix.tr_mul_to(v, out);
    let total: f64 = out.iter().sum();
    // normalize by the simplex-consistent mass: (νR)·1 = ν·(R1)
    debug_assert!((total - denom).abs() <= 1e-8 * denom.abs().max(1.0));
    let _ = total;
    *out /= denom;
    *out -= v;
    Ok(())
}

/// After a completed step: reject real negativity, clean up dust, put the
/// total mass back to one.
fn settle(v: &mut DVector<f64>) -> Result<()> {
    let mut min = f64::INFINITY;
    for e in v.iter() {
        min = min.min(*e);
    }
    if min < -1e-10 {
        return Err(RescaleError::Step(format!(
            "flow produced mass {min}; the resolvent is not positivity preserving"
        )));
    }
    let mut total = 0.0;
    for e in v.iter_mut() {
        if *e < 0.0 {
            *e = 0.0;
        }
        total += *e;
    }
    if !(total > 0.0) {
        return Err(RescaleError::Step("flow lost all mass".into()));
    }
    *v /= total;
    Ok(())
}

/// Integrate the rebirth flow from `nu0`, reporting the law at each of the
/// nondecreasing `times` (which may start at zero).
pub fn flow_integrate(
    res: &ResolventMatrix,
    nu0: &ProbabilityVector,
    times: &[f64],
    dt: f64,
) -> Result<Vec<ProbabilityVector>> {
    if nu0.len() != res.cells() {
        return Err(RescaleError::InvalidInput(format!(
            "initial law over {} cells, resolvent over {}",
            nu0.len(),
            res.cells()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(RescaleError::InvalidInput(format!("flow step {dt}")));
    }
    check_times(times)?;
    let n = res.cells();
    let mut v = nu0.as_dvector().clone();
    let mut tau = 0.0f64;
    let mut out = Vec::with_capacity(times.len());
    let mut k1 = DVector::zeros(n);
    let mut k2 = DVector::zeros(n);
    let mut k3 = DVector::zeros(n);
    let mut k4 = DVector::zeros(n);
    let mut stage = DVector::zeros(n);
    for &target in times {
        while target - tau > 1e-12 {
            let h = dt.min(target - tau);
            derivative(res, &v, &mut k1)?;
            stage.copy_from(&v);
            stage.axpy(0.5 * h, &k1, 1.0);
            derivative(res, &stage, &mut k2)?;
            stage.copy_from(&v);
            stage.axpy(0.5 * h, &k2, 1.0);
            derivative(res, &stage, &mut k3)?;
            stage.copy_from(&v);
            stage.axpy(h, &k3, 1.0);
            derivative(res, &stage, &mut k4)?;
            v.axpy(h / 6.0, &k1, 1.0);
            v.axpy(h / 3.0, &k2, 1.0);
            v.axpy(h / 3.0, &k3, 1.0);
            v.axpy(h / 6.0, &k4, 1.0);
            settle(&mut v)?;
            tau += h;
        }
        out.push(ProbabilityVector::new(v.clone())?);
    }
    Ok(out)
}

/// The normalized linear flow μ e^{sR} / ‖μ e^{sR}‖ at internal time `s`,
/// marched in unit chunks so the exponential growth never overflows.
pub fn tilde_flow(res: &ResolventMatrix, mu: &ProbabilityVector, s: f64) -> Result<ProbabilityVector> {
    if mu.len() != res.cells() {
        return Err(RescaleError::InvalidInput(format!(
            "law over {} cells, resolvent over {}",
            mu.len(),
            res.cells()
        )));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(RescaleError::InvalidInput(format!("internal time {s}")));
    }
    let mut m = mu.as_dvector().clone();
    let chunks = s.floor() as usize;
    let rem = s - chunks as f64;
    if chunks > 0 {
        let e = res.matrix.exp();
        for _ in 0..chunks {
            m = e.tr_mul(&m);
            let total: f64 = m.iter().sum();
            m /= total;
        }
    }
    if rem > 0.0 {
        let e = (&res.matrix * rem).exp();
        m = e.tr_mul(&m);
    }
    ProbabilityVector::new(m)
}

/// Evaluate the rebirth flow at external time `t` through the time change,
/// without ever integrating the nonlinear equation. The clock map
/// t(s) = ∫₀ˢ (Φ̃_σ R·1) dσ is tabulated by Simpson panels on a fixed fine
/// mesh and inverted in the final panel.
pub fn flow_via_tilde(
    res: &ResolventMatrix,
    mu: &ProbabilityVector,
    t: f64,
) -> Result<ProbabilityVector> {
    if mu.len() != res.cells() {
        return Err(RescaleError::InvalidInput(format!(
            "law over {} cells, resolvent over {}",
            mu.len(),
            res.cells()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(RescaleError::InvalidInput(format!("flow time {t}")));
    }
    if t == 0.0 {
        return ProbabilityVector::new(mu.as_dvector().clone());
    }
    // march the linear flow at half-step resolution; each Simpson panel
    // spans two half-steps
    let half = 1.0 / 256.0;
    let e_half = (&res.matrix * half).exp();
    let advance = |m: &DVector<f64>| -> DVector<f64> {
        let mut next = e_half.tr_mul(m);
        let total: f64 = next.iter().sum();
        next /= total;
        next
    };
    let speed = |m: &DVector<f64>| -> f64 { m.dot(&res.r1) };

    let mut m0 = mu.as_dvector().clone();
    let total: f64 = m0.iter().sum();
    m0 /= total;
    let mut clock = 0.0f64;
    // generous cap: dt/ds ≥ min(R1), so the internal horizon s* is at most
    // t / min(R1)
    let max_panels = (t / res.min_lifetime() / (2.0 * half)).ceil() as usize + 2;
    for _ in 0..max_panels {
        let f0 = speed(&m0);
        let m1 = advance(&m0);
        let f1 = speed(&m1);
        let m2 = advance(&m1);
        let f2 = speed(&m2);
        let panel = (2.0 * half) / 6.0 * (f0 + 4.0 * f1 + f2);
        if clock + panel >= t {
            // invert within the panel: the speed is close to linear at this
            // resolution, so solve ∫₀^ρ (f0 + slope·σ) dσ = remaining gap
            let gap = t - clock;
            let slope = (f1 - f0) / half;
            let rho = if slope.abs() < 1e-12 * f0.abs().max(1e-12) {
                gap / f0
            } else {
                let disc = (f0 * f0 + 2.0 * slope * gap).max(0.0);
                (disc.sqrt() - f0) / slope
            };
            let rho = rho.clamp(0.0, 2.0 * half);
            let e = (&res.matrix * rho).exp();
            return ProbabilityVector::new(e.tr_mul(&m0));
        }
        clock += panel;
        m0 = m2;
    }
    Err(RescaleError::NonConvergence(format!(
        "clock map never reached t = {t}; mean lifetimes inconsistent"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::kappa::KappaField;
    use crate::oracle::{build_generator, qsd_fixed_point, resolvent, OracleGrid};

    fn trimodal_resolvent(n: usize) -> ResolventMatrix {
        let grid = OracleGrid::new(1, n).unwrap();
        let kap = KappaField::from_pi(Field::Trimodal, Field::zero(1), 1.75).unwrap();
        resolvent(&build_generator(None, &kap, grid).unwrap()).unwrap()
    }

    #[test]
    fn fixed_point_is_stationary() {
        let res = trimodal_resolvent(64);
        let pi = qsd_fixed_point(&res, 1e-13).unwrap().pi;
        let states = flow_integrate(&res, &pi, &[1.0, 10.0, 100.0], 0.05).unwrap();
        for (t, s) in [1.0, 10.0, 100.0].iter().zip(states.iter()) {
            let d = s.l1_to(&pi).unwrap();
            assert!(d < 1e-8, "drifted {d} from the fixed point by t = {t}");
        }
    }

    #[test]
    fn fixed_point_is_tilde_invariant() {
        // π is a left eigenvector of e^{sR}, so normalization returns it
        let res = trimodal_resolvent(64);
        let pi = qsd_fixed_point(&res, 1e-13).unwrap().pi;
        for s in [0.5, 3.7, 12.0] {
            let out = tilde_flow(&res, &pi, s).unwrap();
            assert!(out.l1_to(&pi).unwrap() < 1e-9, "s = {s}");
        }
        let out = flow_via_tilde(&res, &pi, 4.0).unwrap();
        assert!(out.l1_to(&pi).unwrap() < 1e-8);
    }

    #[test]
    fn nonlinear_march_matches_time_change() {
        // two numerically unrelated evaluations of the same flow
        let res = trimodal_resolvent(64);
        let nu0 = ProbabilityVector::point(64, 10).unwrap();
        let times = [0.5, 1.0, 2.0, 5.0, 10.0];
        let marched = flow_integrate(&res, &nu0, &times, 0.005).unwrap();
        for (t, m) in times.iter().zip(marched.iter()) {
            let via = flow_via_tilde(&res, &nu0, *t).unwrap();
            let d = m.l1_to(&via).unwrap();
            assert!(d < 1e-6, "t = {t}: routes disagree by {d}");
        }
    }

    #[test]
    fn reduced_equation_matches_exponential() {
        // RK4 on u̇ = uR − (uR·1)u against the normalized exponential
        let res = trimodal_resolvent(48);
        let n = 48;
        let mut u = DVector::from_element(n, 1.0 / n as f64);
        let h = 0.01;
        let steps = 500; // s = 5
        let f = |u: &DVector<f64>| -> DVector<f64> {
            let img = res.matrix.tr_mul(u);
            let mass = u.dot(&res.r1);
            &img - &(u * mass)
        };
        for _ in 0..steps {
            let k1 = f(&u);
            let k2 = f(&(&u + &(&k1 * (0.5 * h))));
            let k3 = f(&(&u + &(&k2 * (0.5 * h))));
            let k4 = f(&(&u + &(&k3 * h)));
            u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let total: f64 = u.iter().sum();
            u /= total;
        }
        let direct = tilde_flow(&res, &ProbabilityVector::uniform(n), 5.0).unwrap();
        let d: f64 = u.iter().zip(direct.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        assert!(d < 1e-9, "reduced equation off by {d}");
    }

    #[test]
    fn flow_attracts_everything_to_the_fixed_point() {
        // the three wells exchange mass slowly (decay rate near 0.11), so a
        // long horizon is needed before the distance reaches 1e-6
        let res = trimodal_resolvent(64);
        let pi = qsd_fixed_point(&res, 1e-13).unwrap().pi;
        let times: Vec<f64> = (0..9).map(|i| (1u64 << i) as f64).collect(); // 1..256
        for nu0 in [
            ProbabilityVector::point(64, 0).unwrap(),
            ProbabilityVector::point(64, 32).unwrap(),
            ProbabilityVector::uniform(64),
        ] {
            let states = flow_integrate(&res, &nu0, &times, 0.05).unwrap();
            let mut prev = f64::INFINITY;
            for (t, s) in times.iter().zip(states.iter()) {
                let d = s.tv_to(&pi).unwrap();
                assert!(d <= prev + 1e-10, "distance rose at t = {t}: {prev} -> {d}");
                prev = d;
            }
            assert!(prev < 1e-6, "still {prev} away at t = 256");
        }
    }

    #[test]
    fn negativity_is_detected_not_propagated() {
        // a resolvent with a negative entry pushes the flow off the simplex
        // within a step; the march must stop with a step error
        let grid = OracleGrid::new(1, 16).unwrap();
        let mut matrix = nalgebra::DMatrix::from_diagonal_element(16, 16, 0.5);
        matrix[(0, 1)] = -0.3;
        let r1 = &matrix * DVector::from_element(16, 1.0);
        let res = ResolventMatrix { matrix, r1, grid };
        let nu0 = ProbabilityVector::point(16, 0).unwrap();
        let err = flow_integrate(&res, &nu0, &[1.0], 0.05).unwrap_err();
        assert!(matches!(err, RescaleError::Step(_)), "{err}");
    }

    #[test]
    fn times_must_be_ordered_and_nonnegative() {
        let res = trimodal_resolvent(32);
        let nu0 = ProbabilityVector::uniform(32);
        assert!(flow_integrate(&res, &nu0, &[2.0, 1.0], 0.05).is_err());
        assert!(flow_integrate(&res, &nu0, &[-1.0], 0.05).is_err());
        assert!(flow_integrate(&res, &nu0, &[0.0, 0.5], 0.05).is_ok());
        assert!(flow_via_tilde(&res, &nu0, -0.5).is_err());
        assert!(tilde_flow(&res, &nu0, f64::NAN).is_err());
    }
}
