//! Mean semigroup of the diffusion reborn from a fixed law.
//!
//! Freeze the rebirth law at μ: the particle diffuses, dies at rate κ, and
//! restarts from a fresh μ-draw. On the grid this is a plain Markov jump
//! chain whose rate matrix is −G + κ·μᵀ (each row loses mass at rate κ and
//! routes it to μ). Its transition matrix over a horizon t is the matrix
//! exponential computed here. Two facts downstream tests certify:
//!
//! * Π(μ) is the stationary law of the chain,
//! * laws coalesce at least as fast as e^{−κ̲ t}, because a rebirth driven
//!   by the state-independent κ̲ portion of the rate lands both copies on
//!   the same μ-draw.

use super::ProbabilityVector;
use crate::oracle::generator::GeneratorMatrix;
use crate::{RescaleError, Result};
use nalgebra::DMatrix;

/// Transition matrix over horizon `t` of the chain killed at κ and reborn
/// from `mu`; row i is the time-t law started from cell i.
pub fn fr_semigroup(gen: &GeneratorMatrix, mu: &ProbabilityVector, t: f64) -> Result<DMatrix<f64>> {
    let n = gen.matrix.nrows();
    if mu.len() != n {
        return Err(RescaleError::InvalidInput(format!(
            "rebirth law over {} cells fed to a {n}-cell generator",
            mu.len()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(RescaleError::InvalidInput(format!("bad horizon t = {t}")));
    }
    let mut m = -gen.matrix.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += gen.kappa[i] * mu.as_slice()[j];
        }
    }
    let p = (m * t).exp();
    for v in p.iter() {
        if !v.is_finite() {
            return Err(RescaleError::Step(format!(
                "semigroup exponential produced non-finite entries at t = {t}"
            )));
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::kappa::KappaField;
    use crate::oracle::{build_generator, pi_map, resolvent, OracleGrid};
    use nalgebra::DVector;

    fn trimodal_gen(n: usize) -> GeneratorMatrix {
        let grid = OracleGrid::new(1, n).unwrap();
        let kap = KappaField::from_pi(Field::Trimodal, Field::zero(1), 1.75).unwrap();
        build_generator(None, &kap, grid).unwrap()
    }

    fn l1(a: &DVector<f64>, b: &[f64]) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn zero_horizon_is_identity() {
        let gen = trimodal_gen(64);
        let p = fr_semigroup(&gen, &ProbabilityVector::uniform(64), 0.0).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rows_are_probability_laws() {
        let gen = trimodal_gen(64);
        let mu = ProbabilityVector::point(64, 10).unwrap();
        for t in [0.25, 1.0, 4.0] {
            let p = fr_semigroup(&gen, &mu, t).unwrap();
            for i in 0..64 {
                let sum: f64 = p.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "t = {t}, row {i} sums to {sum}");
                for e in p.row(i).iter() {
                    assert!(*e > -1e-12, "negative mass {e} at t = {t}");
                }
            }
        }
    }

    #[test]
    fn stationary_law_is_pi_of_mu() {
        let gen = trimodal_gen(64);
        let res = resolvent(&gen).unwrap();
        for mu in [
            ProbabilityVector::uniform(64),
            ProbabilityVector::point(64, 3).unwrap(),
        ] {
            let target = pi_map(&res, &mu).unwrap();
            let p = fr_semigroup(&gen, &mu, 2.0).unwrap();
            let evolved = p.tr_mul(target.as_dvector());
            assert!(
                l1(&evolved, target.as_slice()) < 1e-8,
                "Π(μ) moved under its own semigroup"
            );
        }
    }

    #[test]
    fn long_horizon_forgets_the_start() {
        let gen = trimodal_gen(64);
        let res = resolvent(&gen).unwrap();
        let mu = ProbabilityVector::uniform(64);
        let target = pi_map(&res, &mu).unwrap();
        let p = fr_semigroup(&gen, &mu, 60.0).unwrap();
        for i in [0usize, 21, 47] {
            let row: Vec<f64> = p.row(i).iter().copied().collect();
            let d: f64 = row.iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).sum();
            assert!(d < 1e-3, "row {i} still {d} from stationarity");
        }
    }

    #[test]
    fn laws_contract_at_least_at_rate_kappa_min() {
        let gen = trimodal_gen(64);
        let kmin = gen.kappa_min();
        let mu = ProbabilityVector::uniform(64);
        let half = fr_semigroup(&gen, &mu, 0.5).unwrap();
        let mut p = half.clone();
        let mut t = 0.5;
        // squaring doubles the horizon: t = 0.5, 1, 2, 4
        for _ in 0..4 {
            for (a, b) in [(0usize, 32usize), (5, 20), (11, 55)] {
                let ra = p.row(a);
                let rb = p.row(b);
                let d: f64 = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y).abs()).sum();
                let bound = 2.0 * (-kmin * t).exp() + 1e-8;
                assert!(d <= bound, "t = {t}: distance {d} exceeds {bound}");
            }
            p = &p * &p;
            t *= 2.0;
        }
    }

    #[test]
    fn constant_rate_uniform_rebirth_has_explicit_mass_flow() {
        // with κ ≡ c and uniform rebirth, the deviation of the law from
        // uniform decays exactly through the diffusion semigroup times
        // e^{−ct}: test the first Fourier mode, whose diffusion decay is
        // the discrete eigenvalue λ = (1 − cos Δθ)/Δθ²
        let grid = OracleGrid::new(1, 64).unwrap();
        let c = 1.3;
        let kap = KappaField::explicit(Field::Constant { dim: 1, value: c }, 0.0);
        let gen = build_generator(None, &kap, grid).unwrap();
        let dx = grid.dx();
        let lam = (1.0 - dx.cos()) / (dx * dx);
        let t = 0.7;
        let p = fr_semigroup(&gen, &ProbabilityVector::uniform(64), t).unwrap();
        // initial law uniform + ε cos: the cos component is an eigenvector
        // of the rate matrix with eigenvalue −(λ + c)
        let eps = 1e-3;
        let init = DVector::from_fn(64, |i, _| (1.0 + eps * ((i as f64 + 0.5) * dx).cos()) / 64.0);
        let out = p.tr_mul(&init);
        let expect = DVector::from_fn(64, |i, _| {
            (1.0 + eps * (-(lam + c) * t).exp() * ((i as f64 + 0.5) * dx).cos()) / 64.0
        });
        assert!(l1(&out, expect.as_slice()) < 1e-10, "mode decay mismatch");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let gen = trimodal_gen(32);
        assert!(fr_semigroup(&gen, &ProbabilityVector::uniform(16), 1.0).is_err());
        assert!(fr_semigroup(&gen, &ProbabilityVector::uniform(32), -1.0).is_err());
        assert!(fr_semigroup(&gen, &ProbabilityVector::uniform(32), f64::NAN).is_err());
    }
}
