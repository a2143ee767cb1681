//! Finite-difference discretization of the killed generator.
//!
//! On the grid of cell centers the operator
//!
//! G f = −½ Δf − ∇A·∇f + κ f
//!
//! becomes a sparse-patterned dense matrix: central second differences for
//! the Laplacian, central first differences for the drift, κ on the
//! diagonal. Row sums equal κ at the cell center, so −G + diag(κ) is the
//! rate matrix of a continuous-time jump chain on the cells. That chain
//! interpretation is what makes the resolvent entrywise positive and the
//! rebirth semigroup stochastic, and it only holds while every off-diagonal
//! entry is nonpositive, i.e. while |∇A| Δθ ≤ 1. The builder enforces that
//! and tells the caller how fine a grid would restore it.

use super::OracleGrid;
use crate::field::Field;
use crate::kappa::KappaField;
use crate::{RescaleError, Result, TAU};
use nalgebra::DMatrix;

/// The discretized operator together with the grid and the killing rate
/// sampled at cell centers.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
    pub grid: OracleGrid,
    /// κ at each cell center, in flat-index order; also the row sums.
    pub kappa: Vec<f64>,
}

impl GeneratorMatrix {
    /// Grid minimum of the killing rate. At least the analytic lower bound
    /// by restriction, so any contraction estimate using it is the sharper
    /// one.
    pub fn kappa_min(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Assemble the matrix for drift potential `drift` (None for zero drift) and
/// killing rate `kappa` on `grid`.
pub fn build_generator(
    drift: Option<&Field>,
    kappa: &KappaField,
    grid: OracleGrid,
) -> Result<GeneratorMatrix> {
    let d = grid.dim;
    if kappa.dim() != d {
        return Err(RescaleError::InvalidInput(format!(
            "killing rate is {}-dimensional, grid is {d}-dimensional",
            kappa.dim()
        )));
    }
    if let Some(a) = drift {
        if a.dim() != d {
            return Err(RescaleError::InvalidInput(format!(
                "drift potential is {}-dimensional, grid is {d}-dimensional",
                a.dim()
            )));
        }
    }
    let cells = grid.cells();
    let dx = grid.dx();
    let lap = 0.5 / (dx * dx);
    let mut m = DMatrix::zeros(cells, cells);
    let mut k = vec![0.0; cells];
    let mut x = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut max_drift = 0.0f64;
    for i in 0..cells {
        grid.center(i, &mut x);
        k[i] = kappa.value_checked(&x)?;
        if let Some(a) = drift {
            a.gradient_into(&x, &mut grad);
        }
        m[(i, i)] = d as f64 * 2.0 * lap + k[i];
        for axis in 0..d {
            let a_i = grad[axis];
            max_drift = max_drift.max(a_i.abs());
            let up = grid.neighbor(i, axis, 1);
            let dn = grid.neighbor(i, axis, -1);
            m[(i, up)] += -lap - a_i / (2.0 * dx);
            m[(i, dn)] += -lap + a_i / (2.0 * dx);
        }
    }
    if max_drift * dx > 1.0 {
        let need = (TAU * max_drift).ceil() as usize + 1;
        return Err(RescaleError::InvalidInput(format!(
            "drift magnitude {max_drift:.3} breaks monotonicity at {} cells per \
             dimension; use n ≥ {need}",
            grid.n
        )));
    }
    Ok(GeneratorMatrix { matrix: m, grid, kappa: k })
}
