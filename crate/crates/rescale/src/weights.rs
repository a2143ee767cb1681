//! Polynomial weight schedule for the occupation measure.
//!
//! The past is weighted by η_t = t^k, giving the occupation measure
//!
//! μ_t = (r μ₀ + ∫₀ᵗ η_s δ_{X_{s−}} ds) / (r + g(t)),   g(t) = ∫₀ᵗ η = t^{k+1}/(k+1).
//!
//! On the exponential clock t ↦ h(t) with g(h(t)) = r(e^t − 1) the measure
//! trajectory tracks a deterministic semiflow; h has the closed form below.

use crate::{RescaleError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSchedule {
    /// Polynomial exponent, k ≥ 0. k = 0 weights all of the past equally.
    pub k: f64,
    /// Mass of the initial measure, r > 0.
    pub r: f64,
}

impl WeightSchedule {
    pub fn new(k: f64, r: f64) -> Result<WeightSchedule> {
        if !k.is_finite() || k < 0.0 {
            return Err(RescaleError::InvalidInput(format!("weight exponent k = {k}")));
        }
        if !r.is_finite() || r <= 0.0 {
            return Err(RescaleError::InvalidInput(format!("initial mass r = {r}")));
        }
        Ok(WeightSchedule { k, r })
    }

    /// η_t = t^k (with 0^0 = 1).
    #[inline]
    pub fn eta(&self, t: f64) -> f64 {
        if self.k == 0.0 {
            1.0
        } else {
            t.powf(self.k)
        }
    }

    /// g(t) = t^{k+1}/(k+1), the accumulated past weight.
    #[inline]
    pub fn g(&self, t: f64) -> f64 {
        if self.k == 0.0 {
            t
        } else {
            t.powf(self.k + 1.0) / (self.k + 1.0)
        }
    }

    /// Inverse of g.
    #[inline]
    pub fn g_inv(&self, u: f64) -> f64 {
        if self.k == 0.0 {
            u
        } else {
            ((self.k + 1.0) * u).powf(1.0 / (self.k + 1.0))
        }
    }

    /// Instantaneous relative weight α_t = η_t / (r + g(t)).
    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        self.eta(t) / (self.r + self.g(t))
    }

    /// Wall time reached by the exponential reparametrization,
    /// h(t) = ((k+1) r (e^t − 1))^{1/(k+1)}.
    pub fn h(&self, t: f64) -> f64 {
        self.g_inv(self.r * (t.exp() - 1.0))
    }

    /// Inverse of h: the flow time at wall time w.
    pub fn h_inv(&self, w: f64) -> f64 {
        (1.0 + self.g(w) / self.r).ln()
    }

    /// A draw from the η-weighted time distribution on [0, t]: with V uniform
    /// on (0,1), S = t V^{1/(k+1)} has density η_s / g(t), the Beta(k+1, 1)
    /// law scaled to [0, t].
    #[inline]
    pub fn sample_path_time(&self, t: f64, v: f64) -> f64 {
        t * v.powf(1.0 / (self.k + 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms_for_equal_weighting() {
        let w = WeightSchedule::new(0.0, 1000.0).unwrap();
        assert_eq!(w.eta(0.0), 1.0);
        assert_eq!(w.g(5.0), 5.0);
        // h(ln 1001) = 1000·(1001 − 1) = 10⁶
        let t = 1001f64.ln();
        assert!((w.h(t) - 1e6).abs() < 1e-6);
        assert!((w.h_inv(1e6) - t).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(WeightSchedule::new(-1.0, 1.0).is_err());
        assert!(WeightSchedule::new(0.0, 0.0).is_err());
        assert!(WeightSchedule::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn alpha_decays_and_is_square_integrable() {
        // α = η/(r+g) behaves like (k+1)/t once g(t) dominates r, so past
        // that turnover the ∫α² decade integrals must shrink geometrically
        // (they scale as 1/t); before it α can still be growing
        for &k in &[0.0, 1.0, 10.0] {
            let w = WeightSchedule::new(k, 1000.0).unwrap();
            let mut decade_integrals = Vec::new();
            let mut lo = 1e4f64;
            while lo < 1e7 {
                let hi = lo * 10.0;
                let n = 2000;
                let h = (hi - lo) / n as f64;
                let mut s = 0.0;
                for i in 0..=n {
                    let t = lo + i as f64 * h;
                    let a = w.alpha(t);
                    let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
                    s += wt * a * a * h;
                }
                decade_integrals.push(s);
                lo = hi;
            }
            for pair in decade_integrals.windows(2) {
                assert!(
                    pair[1] < 0.2 * pair[0],
                    "tail of ∫α² is not integrable for k = {k}: {decade_integrals:?}"
                );
            }
            assert!(w.alpha(1e6) < w.alpha(1e4) && w.alpha(1e6) < 1e-4);
        }
        // closed form for k = 0: ∫_a^b α² dt = 1/(r+a) − 1/(r+b)
        let w = WeightSchedule::new(0.0, 1000.0).unwrap();
        let (a, b) = (10.0, 500.0);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let t: f64 = a + i as f64 * h;
            let al = w.alpha(t);
            s += if i == 0 || i == n { 0.5 } else { 1.0 } * al * al * h;
        }
        let exact = 1.0 / 1010.0 - 1.0 / 1500.0;
        assert!((s - exact).abs() < 1e-10, "{s} vs {exact}");
    }

    proptest! {
        #[test]
        fn g_round_trips(k in 0.0..12.0f64, u in 0.0..1e6f64) {
            let w = WeightSchedule::new(k, 1.0).unwrap();
            let t = w.g_inv(u);
            prop_assert!((w.g(t) - u).abs() <= 1e-9 * u.max(1.0));
        }

        #[test]
        fn h_round_trips(k in 0.0..6.0f64, t in 0.0..14.0f64) {
            let w = WeightSchedule::new(k, 1000.0).unwrap();
            let wall = w.h(t);
            prop_assert!((w.h_inv(wall) - t).abs() <= 1e-9 * t.max(1.0));
        }

        #[test]
        fn eta_nonnegative_nondecreasing(k in 0.0..12.0f64, a in 0.0..1e5f64, b in 0.0..1e5f64) {
            let w = WeightSchedule::new(k, 1.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(w.eta(lo) >= 0.0);
            prop_assert!(w.eta(lo) <= w.eta(hi) + 1e-12);
        }

        #[test]
        fn path_time_has_beta_law_shape(k in 0.0..12.0f64, v in 0.0001..0.9999f64) {
            let w = WeightSchedule::new(k, 1.0).unwrap();
            let s = w.sample_path_time(10.0, v);
            prop_assert!((0.0..=10.0).contains(&s));
            // inverse-CDF property: g(S)/g(t) = V
            prop_assert!((w.g(s) / w.g(10.0) - v).abs() < 1e-9);
        }
    }
}
