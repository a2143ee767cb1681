//! Smooth scalar fields on the torus with analytic first and second
//! derivatives.
//!
//! The builtin family covers everything the configuration file can name:
//!
//! * `uniform`   constant density (2π)^{−d}
//! * `zero`      constant 0, the default drift potential
//! * `trimodal`  (0.3 + sin²(1.5θ)) / (1.6π) = (0.8 − 0.5 cos 3θ) / (1.6π)
//! * `cosexp`    e^{cos θ} / (2π I₀(1))
//! * `fourier:c0,a1,b1,a2,b2,…`  truncated Fourier series
//!               c0 + Σ_m a_m cos(mθ) + b_m sin(mθ)
//!
//! All non-constant builtins are one-dimensional.

use crate::{RescaleError, Result, TAU};
use rand::Rng;

/// I₀(1), the normalizer of the cosine-exponential density. Matches the
/// modified Bessel series Σ (1/4)^k / (k!)² to full precision.
const BESSEL_I0_1: f64 = 1.266_065_877_752_008_4;

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Constant { dim: usize, value: f64 },
    Trimodal,
    CosExp,
    Fourier { c0: f64, cos: Vec<f64>, sin: Vec<f64> },
}

impl Field {
    pub fn uniform(dim: usize) -> Field {
        Field::Constant { dim, value: TAU.powi(-(dim as i32)) }
    }

    pub fn zero(dim: usize) -> Field {
        Field::Constant { dim, value: 0.0 }
    }

    /// cos θ as a one-term Fourier field (handy as a drift potential in tests).
    pub fn cosine() -> Field {
        Field::Fourier { c0: 0.0, cos: vec![1.0], sin: vec![] }
    }

    /// Parse a config-file field name for a torus of dimension `dim`.
    pub fn parse(name: &str, dim: usize) -> Result<Field> {
        let f = match name {
            "uniform" => Field::uniform(dim),
            "zero" => Field::zero(dim),
            "trimodal" => Field::Trimodal,
            "cosexp" => Field::CosExp,
            _ => {
                if let Some(list) = name.strip_prefix("fourier:") {
                    parse_fourier(list)?
                } else {
                    return Err(RescaleError::Config(format!("unknown field name `{name}`")));
                }
            }
        };
        if f.dim() != dim {
            return Err(RescaleError::Config(format!(
                "field `{name}` is {}-dimensional but torus.dim = {dim}",
                f.dim()
            )));
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        match self {
            Field::Constant { dim, .. } => *dim,
            _ => 1,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Field::Constant { .. })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Field::Constant { value, .. } => *value,
            Field::Trimodal => (0.8 - 0.5 * (3.0 * x[0]).cos()) / (1.6 * std::f64::consts::PI),
            Field::CosExp => (x[0].cos()).exp() / (TAU * BESSEL_I0_1),
            Field::Fourier { c0, cos, sin } => {
                let mut v = *c0;
                for (m, &a) in cos.iter().enumerate() {
                    v += a * ((m + 1) as f64 * x[0]).cos();
                }
                for (m, &b) in sin.iter().enumerate() {
                    v += b * ((m + 1) as f64 * x[0]).sin();
                }
                v
            }
        }
    }

    /// Analytic gradient written into `out` (length d).
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Field::Constant { .. } => out.fill(0.0),
            Field::Trimodal => {
                out[0] = 1.5 * (3.0 * x[0]).sin() / (1.6 * std::f64::consts::PI);
            }
            Field::CosExp => out[0] = -x[0].sin() * self.value(x),
            Field::Fourier { cos, sin, .. } => {
                let mut v = 0.0;
                for (m, &a) in cos.iter().enumerate() {
                    let k = (m + 1) as f64;
                    v -= a * k * (k * x[0]).sin();
                }
                for (m, &b) in sin.iter().enumerate() {
                    let k = (m + 1) as f64;
                    v += b * k * (k * x[0]).cos();
                }
                out[0] = v;
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    /// Analytic Laplacian (sum of second derivatives).
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match self {
            Field::Constant { .. } => 0.0,
            Field::Trimodal => 4.5 * (3.0 * x[0]).cos() / (1.6 * std::f64::consts::PI),
            Field::CosExp => {
                let s = x[0].sin();
                (s * s - x[0].cos()) * self.value(x)
            }
            Field::Fourier { cos, sin, .. } => {
                let mut v = 0.0;
                for (m, &a) in cos.iter().enumerate() {
                    let k = (m + 1) as f64;
                    v -= a * k * k * (k * x[0]).cos();
                }
                for (m, &b) in sin.iter().enumerate() {
                    let k = (m + 1) as f64;
                    v -= b * k * k * (k * x[0]).sin();
                }
                v
            }
        }
    }
}

fn parse_fourier(list: &str) -> Result<Field> {
    let vals: Vec<f64> = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| RescaleError::Config(format!("bad fourier coefficient `{s}`")))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(RescaleError::Config("empty fourier coefficient list".into()));
    }
    let c0 = vals[0];
    let mut cos = Vec::new();
    let mut sin = Vec::new();
    for (i, &v) in vals[1..].iter().enumerate() {
        if i % 2 == 0 {
            cos.push(v);
        } else {
            sin.push(v);
        }
    }
    Ok(Field::Fourier { c0, cos, sin })
}

/// Worst-case discrepancy between analytic derivatives and central
/// differences of `value`, over `n_points` random torus points.
#[derive(Debug, Clone, Copy)]
pub struct FieldCheck {
    pub max_gradient_err: f64,
    pub max_laplacian_err: f64,
}

/// Second-order finite-difference audit of a field's own derivatives.
/// Discrepancies decay as O(step²) when the analytic formulas are right.
pub fn field_check<R: Rng>(f: &Field, n_points: usize, step: f64, rng: &mut R) -> Result<FieldCheck> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(RescaleError::InvalidInput(format!("bad differencing step {step}")));
    }
    let d = f.dim();
    let mut grad_err = 0.0f64;
    let mut lap_err = 0.0f64;
    let mut x = vec![0.0; d];
    let mut xp = vec![0.0; d];
    let mut xm = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..n_points {
        for c in x.iter_mut() {
            *c = rng.gen::<f64>() * TAU;
        }
        f.gradient_into(&x, &mut grad);
        let v0 = f.value(&x);
        let mut lap_fd = 0.0;
        for k in 0..d {
            xp.copy_from_slice(&x);
            xm.copy_from_slice(&x);
            xp[k] = crate::torus::wrap_angle(x[k] + step);
            xm[k] = crate::torus::wrap_angle(x[k] - step);
            let vp = f.value(&xp);
            let vm = f.value(&xm);
            let g_fd = (vp - vm) / (2.0 * step);
            grad_err = grad_err.max((g_fd - grad[k]).abs());
            lap_fd += (vp - 2.0 * v0 + vm) / (step * step);
        }
        lap_err = lap_err.max((lap_fd - f.laplacian(&x)).abs());
    }
    Ok(FieldCheck { max_gradient_err: grad_err, max_laplacian_err: lap_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trimodal_is_a_normalized_density() {
        // Simpson quadrature of the density over one period.
        let f = Field::Trimodal;
        let n = 1 << 12;
        let h = TAU / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            s += h / 6.0 * (f.value(&[a]) + 4.0 * f.value(&[a + 0.5 * h]) + f.value(&[a + h]));
        }
        assert!((s - 1.0).abs() < 1e-12, "integral = {s}");
        // the two algebraic forms of the density agree
        for i in 0..100 {
            let t = i as f64 * 0.0628;
            let alt = (0.3 + (1.5 * t).sin().powi(2)) / (1.6 * std::f64::consts::PI);
            assert!((f.value(&[t]) - alt).abs() < 1e-15);
        }
    }

    #[test]
    fn cosexp_is_a_normalized_density() {
        let f = Field::CosExp;
        let n = 1 << 12;
        let h = TAU / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            s += h / 6.0 * (f.value(&[a]) + 4.0 * f.value(&[a + 0.5 * h]) + f.value(&[a + h]));
        }
        assert!((s - 1.0).abs() < 1e-12, "integral = {s}");
    }

    #[test]
    fn check_constant_field_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rep = field_check(&Field::uniform(2), 50, 1e-3, &mut rng).unwrap();
        assert_eq!(rep.max_gradient_err, 0.0);
        assert_eq!(rep.max_laplacian_err, 0.0);
    }

    #[test]
    fn check_cosine_field_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-3;
        let rep = field_check(&Field::cosine(), 200, h, &mut rng).unwrap();
        // |f'''| ≤ 1 and |f''''| ≤ 1 for cos θ, so the central-difference
        // remainders are h²/6 and h²/12 up to roundoff
        assert!(rep.max_gradient_err <= h * h / 6.0 * 1.1 + 1e-10, "{rep:?}");
        assert!(rep.max_laplacian_err <= h * h / 12.0 * 1.1 + 1e-6, "{rep:?}");
    }

    #[test]
    fn check_trimodal_and_cosexp_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-3;
        // trimodal: third derivative bounded by 13.5/(1.6π), fourth by 40.5/(1.6π)
        let rep = field_check(&Field::Trimodal, 200, h, &mut rng).unwrap();
        let c3 = 13.5 / (1.6 * std::f64::consts::PI);
        let c4 = 40.5 / (1.6 * std::f64::consts::PI);
        assert!(rep.max_gradient_err <= h * h / 6.0 * c3 * 1.1 + 1e-10, "{rep:?}");
        assert!(rep.max_laplacian_err <= h * h / 12.0 * c4 * 1.1 + 1e-6, "{rep:?}");
        // cosexp derivatives stay below e/(2π I₀(1)) times small polynomials;
        // a loose factor-5 envelope still certifies the O(h²) decay
        let rep = field_check(&Field::CosExp, 200, h, &mut rng).unwrap();
        let scale = std::f64::consts::E / (TAU * BESSEL_I0_1);
        assert!(rep.max_gradient_err <= 5.0 * scale * h * h, "{rep:?}");
        assert!(rep.max_laplacian_err <= 10.0 * scale * h * h + 1e-6, "{rep:?}");
    }

    #[test]
    fn fourier_parse_and_derivatives() {
        let f = Field::parse("fourier:0.5,1,0,0,2", 1).unwrap();
        // 0.5 + cos θ + 2 sin 2θ
        let t = 0.713f64;
        let expect = 0.5 + t.cos() + 2.0 * (2.0 * t).sin();
        assert!((f.value(&[t]) - expect).abs() < 1e-14);
        let g = -t.sin() + 4.0 * (2.0 * t).cos();
        assert!((f.gradient(&[t])[0] - g).abs() < 1e-14);
        let l = -t.cos() - 8.0 * (2.0 * t).sin();
        assert!((f.laplacian(&[t]) - l).abs() < 1e-13);
    }

    #[test]
    fn parse_rejects_unknown_and_mismatched() {
        assert!(Field::parse("blancmange", 1).is_err());
        assert!(Field::parse("trimodal", 2).is_err());
        assert!(Field::parse("uniform", 2).is_ok());
        assert!(Field::parse("fourier:1,oops", 1).is_err());
    }

    #[test]
    fn bessel_constant_matches_series() {
        // Σ_k (1/4)^k / (k!)²
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for k in 1..25 {
            term *= 0.25 / ((k * k) as f64);
            sum += term;
        }
        assert!((sum - BESSEL_I0_1).abs() < 1e-15);
    }
}
