//! Resolvent of the killed generator, the rebirth map Π, and its fixed
//! point.
//!
//! R = G⁻¹ integrates the killed semigroup over all time, so entry (i, j)
//! is the expected occupation of cell j before the kill when started in
//! cell i. Consequences the tests lean on:
//!
//! * every entry of R is positive (inverse of an irreducible M-matrix),
//! * R·1 is the mean lifetime per starting cell, squeezed between the
//!   reciprocals of the grid extrema of κ,
//! * the rebirth map Π(μ) = μR / (μR·1) sends a law of kill locations to
//!   the normalized expected occupation, and its fixed point is the
//!   quasi-stationary law with mean lifetime β = πR·1.

use super::{OracleGrid, ProbabilityVector};
use crate::oracle::generator::GeneratorMatrix;
use crate::{RescaleError, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ResolventMatrix {
    pub matrix: DMatrix<f64>,
    /// R·1, the mean lifetime started from each cell.
    pub r1: DVector<f64>,
    pub grid: OracleGrid,
}

/// Invert the generator. Fails if the LU factorization breaks down or the
/// inverse is not entrywise positive, either of which means the generator
/// was not the M-matrix the discretization promises.
pub fn resolvent(gen: &GeneratorMatrix) -> Result<ResolventMatrix> {
    let m = gen
        .matrix
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| RescaleError::Singular("generator matrix is singular".into()))?;
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(RescaleError::Singular(format!(
            "resolvent has a non-positive entry ({min}); generator lost monotonicity"
        )));
    }
    let n = m.nrows();
    let r1 = &m * DVector::from_element(n, 1.0);
    Ok(ResolventMatrix { matrix: m, r1, grid: gen.grid })
}

impl ResolventMatrix {
    pub fn cells(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_lifetime(&self) -> f64 {
        self.r1.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_lifetime(&self) -> f64 {
        self.r1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One application of the rebirth map: μ ↦ μR, normalized.
pub fn pi_map(res: &ResolventMatrix, mu: &ProbabilityVector) -> Result<ProbabilityVector> {
    if mu.len() != res.cells() {
        return Err(RescaleError::InvalidInput(format!(
            "measure over {} cells fed to a {}-cell resolvent",
            mu.len(),
            res.cells()
        )));
    }
    let v = res.matrix.tr_mul(mu.as_dvector());
    ProbabilityVector::new(v)
}

/// Discrepancy between half-grid neighbors of the mean-lifetime vector:
/// twice the largest gap between the coarse value and the average of the
/// two fine cells it covers. An a posteriori error estimate for the coarse
/// resolvent, used to certify its reported lifetimes.
pub fn refinement_error(coarse: &ResolventMatrix, fine: &ResolventMatrix) -> Result<f64> {
    if coarse.grid.dim != 1 || fine.grid.dim != 1 {
        return Err(RescaleError::UnsupportedDimension(coarse.grid.dim, "refinement estimate".into()));
    }
    if fine.grid.n != 2 * coarse.grid.n {
        return Err(RescaleError::InvalidInput(format!(
            "refinement needs exactly doubled resolution, got {} and {}",
            coarse.grid.n, fine.grid.n
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..coarse.grid.n {
        // two fine centers straddle the coarse center symmetrically, so
        // their average is a second-order probe of the same point
        let avg = 0.5 * (fine.r1[2 * i] + fine.r1[2 * i + 1]);
        worst = worst.max((coarse.r1[i] - avg).abs());
    }
    Ok(2.0 * worst)
}

/// Fixed point of Π and associated data.
#[derive(Debug, Clone)]
pub struct QsdResult {
    pub pi: ProbabilityVector,
    /// Mean lifetime under the fixed point, πR·1; also the dominant
    /// eigenvalue of the transposed resolvent.
    pub beta: f64,
    /// ‖πR − βπ‖₁ at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration for the fixed point of Π, from the uniform law, stopping
/// when successive iterates are within `tol` in L¹.
pub fn qsd_fixed_point(res: &ResolventMatrix, tol: f64) -> Result<QsdResult> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(RescaleError::InvalidInput(format!("bad tolerance {tol}")));
    }
    let mut cur = ProbabilityVector::uniform(res.cells());
    let cap = 100_000usize;
    for it in 1..=cap {
        let next = pi_map(res, &cur)?;
        let moved = next.l1_to(&cur)?;
        cur = next;
        if moved < tol {
            let image = res.matrix.tr_mul(cur.as_dvector());
            let beta: f64 = image.iter().sum();
            let residual: f64 = image
                .iter()
                .zip(cur.as_slice())
                .map(|(a, p)| (a - beta * p).abs())
                .sum();
            return Ok(QsdResult { pi: cur, beta, residual, iterations: it });
        }
    }
    Err(RescaleError::NonConvergence(format!(
        "rebirth map not within {tol} after {cap} iterations"
    )))
}
