//! Deterministic verification stack on a discretized torus.
//!
//! Everything the stochastic engine claims statistically has a
//! finite-dimensional counterpart here: the killed generator becomes a
//! matrix over grid cells, its inverse is the resolvent, the fixed point of
//! the Π-map is the quasi-stationary law, the mean rebirth process is a
//! matrix exponential, and the measure flow ν̇ = −ν + Π(ν) is an ODE.
//! Agreement between the two stacks is what the test suite certifies.
//!
//! Grid cells are centered: cell i of a one-dimensional grid covers
//! [i·Δθ, (i+1)·Δθ) and is represented by its midpoint (i + ½)·Δθ. Centered
//! representatives keep the finite-difference operators second-order
//! accurate, which the refinement-ratio tests rely on.

mod flow;
mod generator;
mod resolvent;
mod semigroup;

pub use flow::{flow_integrate, flow_via_tilde, tilde_flow};
pub use generator::{build_generator, GeneratorMatrix};
pub use resolvent::{
    pi_map, qsd_fixed_point, refinement_error, resolvent, QsdResult, ResolventMatrix,
};
pub use semigroup::fr_semigroup;

use crate::field::Field;
use crate::measure::test_family_into;
use crate::{RescaleError, Result, TAU};
use nalgebra::DVector;

/// Cell layout of the discretized torus: n cells per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleGrid {
    pub dim: usize,
    /// Cells per dimension.
    pub n: usize,
}

impl OracleGrid {
    pub fn new(dim: usize, n: usize) -> Result<OracleGrid> {
        if dim == 0 || dim > 2 {
            return Err(RescaleError::UnsupportedDimension(dim, "dense grid oracle".into()));
        }
        if n < 16 {
            return Err(RescaleError::InvalidInput(format!("oracle grid needs n ≥ 16, got {n}")));
        }
        // dense linear algebra: keep the matrices comfortably in memory
        let cap = if dim == 1 { 4096 } else { 64 };
        if n > cap {
            return Err(RescaleError::InvalidInput(format!(
                "oracle grid capped at {cap} cells per dimension for d = {dim}, got {n}"
            )));
        }
        Ok(OracleGrid { dim, n })
    }

    /// Total number of cells, n^dim.
    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Uniform spacing per dimension.
    pub fn dx(&self) -> f64 {
        TAU / self.n as f64
    }

    /// Center coordinates of a flat cell index (dimension 0 varies fastest).
    pub fn center(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for c in out.iter_mut() {
            *c = (rem % self.n) as f64 * self.dx() + 0.5 * self.dx();
            rem /= self.n;
        }
    }

    /// Neighbor of `flat` one cell over along `axis` (+1 or −1), periodic.
    pub fn neighbor(&self, flat: usize, axis: usize, step: isize) -> usize {
        let stride = self.n.pow(axis as u32);
        let coord = (flat / stride) % self.n;
        let next = (coord as isize + step).rem_euclid(self.n as isize) as usize;
        flat - coord * stride + next * stride
    }

    /// ∫_cell f for every cell, by composite Simpson per cell (d = 1) or a
    /// midpoint tensor rule (d = 2); second order or better throughout.
    pub fn cell_integrals(&self, f: &Field) -> Result<Vec<f64>> {
        if f.dim() != self.dim {
            return Err(RescaleError::InvalidInput(format!(
                "field is {}-dimensional, grid is {}-dimensional",
                f.dim(),
                self.dim
            )));
        }
        let mut out = vec![0.0; self.cells()];
        match self.dim {
            1 => {
                let sub = 8usize;
                let h = self.dx() / sub as f64;
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for s in 0..sub {
                        let a = i as f64 * self.dx() + s as f64 * h;
                        acc += h / 6.0
                            * (f.value(&[a])
                                + 4.0 * f.value(&[crate::torus::wrap_angle(a + 0.5 * h)])
                                + f.value(&[crate::torus::wrap_angle(a + h)]));
                    }
                    *o = acc;
                }
            }
            _ => {
                let sub = 8usize;
                let h = self.dx() / sub as f64;
                let mut x = [0.0f64; 2];
                for (flat, o) in out.iter_mut().enumerate() {
                    let i = flat % self.n;
                    let j = flat / self.n;
                    let mut acc = 0.0;
                    for a in 0..sub {
                        for b in 0..sub {
                            x[0] = i as f64 * self.dx() + (a as f64 + 0.5) * h;
                            x[1] = j as f64 * self.dx() + (b as f64 + 0.5) * h;
                            acc += f.value(&x) * h * h;
                        }
                    }
                    *o = acc;
                }
            }
        }
        Ok(out)
    }

    /// Aggregate fine masses onto `bins` coarse bins per dimension; the
    /// coarse grid must divide the fine one so aggregation is exact.
    pub fn aggregate(&self, masses: &[f64], bins: usize) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(RescaleError::UnsupportedDimension(self.dim, "bin aggregation".into()));
        }
        if masses.len() != self.n {
            return Err(RescaleError::InvalidInput(format!(
                "expected {} masses, got {}",
                self.n,
                masses.len()
            )));
        }
        if bins == 0 || self.n % bins != 0 {
            return Err(RescaleError::InvalidInput(format!(
                "{} cells do not aggregate evenly into {bins} bins",
                self.n
            )));
        }
        let factor = self.n / bins;
        let mut out = vec![0.0; bins];
        for (i, m) in masses.iter().enumerate() {
            out[i / factor] += m;
        }
        Ok(out)
    }

    /// Test-family moments of a mass vector, treating each cell's mass as an
    /// atom at the cell center (the convention shared with the engine's
    /// snapshot histograms).
    pub fn moments_of(&self, masses: &[f64], n_terms: usize) -> Result<Vec<f64>> {
        if masses.len() != self.cells() {
            return Err(RescaleError::InvalidInput(format!(
                "expected {} masses, got {}",
                self.cells(),
                masses.len()
            )));
        }
        let mut out = vec![0.0; n_terms];
        let mut fam = vec![0.0; n_terms];
        let mut x = vec![0.0; self.dim];
        for (flat, &m) in masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            self.center(flat, &mut x);
            test_family_into(&x, self.dim, &mut fam);
            for (o, f) in out.iter_mut().zip(fam.iter()) {
                *o += m * f;
            }
        }
        Ok(out)
    }
}

/// A discrete probability measure over grid cells: nonnegative entries
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(DVector<f64>);

impl ProbabilityVector {
    /// Validate and normalize a raw mass vector. Entries may carry numerical
    /// dust down to −10⁻¹² (clamped to zero); anything more negative is an
    /// error rather than silently truncated.
    pub fn new(mut v: DVector<f64>) -> Result<ProbabilityVector> {
        for e in v.iter_mut() {
            if !e.is_finite() {
                return Err(RescaleError::InvalidInput("non-finite probability entry".into()));
            }
            if *e < 0.0 {
                if *e < -1e-12 {
                    return Err(RescaleError::InvalidInput(format!(
                        "probability entry {e} below tolerance"
                    )));
                }
                *e = 0.0;
            }
        }
        let total: f64 = v.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(RescaleError::InvalidInput(format!("total mass {total}")));
        }
        v /= total;
        Ok(ProbabilityVector(v))
    }

    pub fn uniform(cells: usize) -> ProbabilityVector {
        ProbabilityVector(DVector::from_element(cells, 1.0 / cells as f64))
    }

    pub fn point(cells: usize, index: usize) -> Result<ProbabilityVector> {
        if index >= cells {
            return Err(RescaleError::InvalidInput(format!(
                "point mass at cell {index} of {cells}"
            )));
        }
        let mut v = DVector::zeros(cells);
        v[index] = 1.0;
        Ok(ProbabilityVector(v))
    }

    pub fn from_masses(masses: &[f64]) -> Result<ProbabilityVector> {
        ProbabilityVector::new(DVector::from_column_slice(masses))
    }

    /// Cell-averaged projection of a density field onto the grid.
    pub fn from_field(grid: &OracleGrid, f: &Field) -> Result<ProbabilityVector> {
        let cells = grid.cell_integrals(f)?;
        if cells.iter().any(|&c| c < 0.0) {
            return Err(RescaleError::InvalidDensity(
                "density integrates negatively over a cell".into(),
            ));
        }
        ProbabilityVector::from_masses(&cells)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn l1_to(&self, other: &ProbabilityVector) -> Result<f64> {
        crate::stats::l1_distance(self.as_slice(), other.as_slice())
    }

    pub fn tv_to(&self, other: &ProbabilityVector) -> Result<f64> {
        crate::stats::tv_distance(self.as_slice(), other.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::dw_from_moments;

    #[test]
    fn grid_bounds_and_layout() {
        assert!(OracleGrid::new(1, 8).is_err());
        assert!(OracleGrid::new(1, 5000).is_err());
        assert!(OracleGrid::new(2, 65).is_err());
        assert!(OracleGrid::new(3, 16).is_err());
        let g = OracleGrid::new(1, 200).unwrap();
        assert_eq!(g.cells(), 200);
        let mut x = [0.0];
        g.center(0, &mut x);
        assert!((x[0] - 0.5 * g.dx()).abs() < 1e-15);
        g.center(199, &mut x);
        assert!((x[0] - (199.5 * g.dx())).abs() < 1e-12);

        let g2 = OracleGrid::new(2, 16).unwrap();
        assert_eq!(g2.cells(), 256);
        let mut y = [0.0, 0.0];
        g2.center(17, &mut y); // i = 1, j = 1
        assert!((y[0] - 1.5 * g2.dx()).abs() < 1e-15);
        assert!((y[1] - 1.5 * g2.dx()).abs() < 1e-15);
        assert_eq!(g2.neighbor(0, 0, -1), 15);
        assert_eq!(g2.neighbor(0, 1, -1), 240);
        assert_eq!(g2.neighbor(15, 0, 1), 0);
    }

    #[test]
    fn cell_integrals_sum_to_total_mass() {
        let g = OracleGrid::new(1, 200).unwrap();
        let cells = g.cell_integrals(&Field::Trimodal).unwrap();
        let total: f64 = cells.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "trimodal mass {total}");
        // the analytic antiderivative of the trimodal density gives each
        // cell mass in closed form
        let anti = |t: f64| (0.8 * t - 0.5 / 3.0 * (3.0 * t).sin()) / (1.6 * std::f64::consts::PI);
        for (i, &c) in cells.iter().enumerate() {
            let lo = i as f64 * g.dx();
            let exact = anti(lo + g.dx()) - anti(lo);
            assert!((c - exact).abs() < 1e-12, "cell {i}: {c} vs {exact}");
        }
    }

    #[test]
    fn aggregation_is_exact() {
        let g = OracleGrid::new(1, 200).unwrap();
        let fine = g.cell_integrals(&Field::Trimodal).unwrap();
        let coarse = g.aggregate(&fine, 50).unwrap();
        assert_eq!(coarse.len(), 50);
        let total: f64 = coarse.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // group sums reproduce the analytic coarse cell masses
        let gc = OracleGrid::new(1, 50).unwrap();
        let anti = |t: f64| (0.8 * t - 0.5 / 3.0 * (3.0 * t).sin()) / (1.6 * std::f64::consts::PI);
        for (i, a) in coarse.iter().enumerate() {
            let lo = i as f64 * gc.dx();
            let exact = anti(lo + gc.dx()) - anti(lo);
            assert!((a - exact).abs() < 1e-12, "bin {i}: {a} vs {exact}");
        }
        assert!(g.aggregate(&fine, 3).is_err());
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::from_masses(&[0.5, 0.5]).is_ok());
        assert!(ProbabilityVector::from_masses(&[2.0, 6.0]).is_ok()); // normalized
        assert!(ProbabilityVector::from_masses(&[1.0, -1e-6]).is_err());
        assert!(ProbabilityVector::from_masses(&[0.0, 0.0]).is_err());
        let p = ProbabilityVector::from_masses(&[1.0, -1e-14, 3.0]).unwrap();
        assert_eq!(p.as_slice()[1], 0.0);
        let s: f64 = p.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let d = ProbabilityVector::point(4, 1).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(ProbabilityVector::point(4, 4).is_err());
    }

    #[test]
    fn grid_moments_match_analytic_within_binning_error() {
        // binned trimodal vs analytic moments: the only sizable discrepancy
        // sits in the cos 3θ term and shrinks as O(Δθ²)
        let g = OracleGrid::new(1, 200).unwrap();
        let pi = ProbabilityVector::from_field(&g, &Field::Trimodal).unwrap();
        let binned = g.moments_of(pi.as_slice(), 12).unwrap();
        let analytic = crate::measure::moments_of_density(&Field::Trimodal, 12).unwrap();
        let d = dw_from_moments(&binned, &analytic).unwrap();
        assert!(d < 5e-5, "binning floor {d}");
        let g2 = OracleGrid::new(1, 400).unwrap();
        let pi2 = ProbabilityVector::from_field(&g2, &Field::Trimodal).unwrap();
        let binned2 = g2.moments_of(pi2.as_slice(), 12).unwrap();
        let d2 = dw_from_moments(&binned2, &analytic).unwrap();
        assert!(d2 < 0.3 * d, "no refinement: {d} vs {d2}");
    }

    #[test]
    fn uniform_moments_vanish() {
        let g = OracleGrid::new(1, 64).unwrap();
        let u = ProbabilityVector::uniform(64);
        let m = g.moments_of(u.as_slice(), 9).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12);
        for v in &m[1..] {
            assert!(v.abs() < 1e-12);
        }
    }
}
