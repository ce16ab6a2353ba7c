//! Coefficient providers and the trigonometric data used on the torus.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type SpatialFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type GeneralFn = dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync;

/// A real-valued coefficient evaluated at `(t, x, h)`.
///
/// Coefficients are immutable and may be evaluated concurrently. The variant
/// records how much of the argument list actually matters, which lets the
/// integrator assemble a time-independent operator once.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// Depends on position and mesh width only.
    Spatial(Arc<SpatialFn>),
    General(Arc<GeneralFn>),
}

impl Coefficient {
    pub fn zero() -> Self {
        Coefficient::Constant(0.0)
    }

    pub fn spatial(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Spatial(Arc::new(f))
    }

    pub fn general(f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::General(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], h: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Spatial(f) => f(x, h),
            Coefficient::General(f) => f(t, x, h),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(v) if *v == 0.0)
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        !matches!(self, Coefficient::General(_))
    }

    /// Pointwise `g(self)`, keeping the narrowest variant.
    pub fn map(&self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        match self {
            Coefficient::Constant(v) => Coefficient::Constant(g(*v)),
            Coefficient::Spatial(f) => {
                let f = Arc::clone(f);
                Coefficient::spatial(move |x, h| g(f(x, h)))
            }
            Coefficient::General(f) => {
                let f = Arc::clone(f);
                Coefficient::general(move |t, x, h| g(f(t, x, h)))
            }
        }
    }

    /// Pointwise `g(self, other)`.
    pub fn zip(
        &self,
        other: &Coefficient,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        match (self, other) {
            (Coefficient::Constant(a), Coefficient::Constant(b)) => {
                Coefficient::Constant(g(*a, *b))
            }
            _ if self.is_time_independent() && other.is_time_independent() => {
                let (a, b) = (self.clone(), other.clone());
                Coefficient::spatial(move |x, h| g(a.eval(0.0, x, h), b.eval(0.0, x, h)))
            }
            _ => {
                let (a, b) = (self.clone(), other.clone());
                Coefficient::general(move |t, x, h| g(a.eval(t, x, h), b.eval(t, x, h)))
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(move |v| s * v)
    }

    pub fn shifted(&self, s: f64) -> Self {
        self.map(move |v| v + s)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "Constant({v})"),
            Coefficient::Spatial(_) => f.write_str("Spatial(..)"),
            Coefficient::General(_) => f.write_str("General(..)"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

/// Maps a coordinate onto `[-period/2, period/2)`.
#[inline]
pub fn centered(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

/// Named coefficient presets as they appear in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Shaped(ShapedField),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapedField {
    /// `mean + amp * sin(2 pi k.x / L + phase)`.
    Trig {
        #[serde(default)]
        mean: f64,
        amp: f64,
        wavevector: Vec<i64>,
        #[serde(default)]
        phase: f64,
    },
    /// `scale * (1 + |x|^2)^(order/2)` with `x` taken in centered torus
    /// coordinates.
    PolyGrowth { scale: f64, order: f64 },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Constant(0.0)
    }
}

impl From<f64> for FieldSpec {
    fn from(v: f64) -> Self {
        FieldSpec::Constant(v)
    }
}

impl FieldSpec {
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            FieldSpec::Constant(v) => Some(*v),
            FieldSpec::Shaped(ShapedField::Trig { mean, amp, .. }) if *amp == 0.0 => Some(*mean),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    /// Realizes the preset on a `dim`-dimensional torus of side `period`.
    pub fn to_coefficient(&self, dim: usize, period: f64) -> Result<Coefficient> {
        match self {
            FieldSpec::Constant(v) => Ok(Coefficient::Constant(*v)),
            FieldSpec::Shaped(ShapedField::Trig {
                mean,
                amp,
                wavevector,
                phase,
            }) => {
                if wavevector.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: wavevector.len(),
                    });
                }
                let omega: Vec<f64> = wavevector
                    .iter()
                    .map(|&k| 2.0 * PI * k as f64 / period)
                    .collect();
                let (mean, amp, phase) = (*mean, *amp, *phase);
                Ok(Coefficient::spatial(move |x, _h| {
                    let arg: f64 = omega.iter().zip(x).map(|(w, xi)| w * xi).sum();
                    mean + amp * (arg + phase).sin()
                }))
            }
            FieldSpec::Shaped(ShapedField::PolyGrowth { scale, order }) => {
                let (scale, order) = (*scale, *order);
                Ok(Coefficient::spatial(move |x, _h| {
                    let r2: f64 = x.iter().map(|&xi| centered(xi, period).powi(2)).sum();
                    scale * (1.0 + r2).powf(order / 2.0)
                }))
            }
        }
    }

    /// Bound on `|field|`, used for CFL and stencil shift defaults.
    pub fn sup_abs(&self) -> f64 {
        match self {
            FieldSpec::Constant(v) => v.abs(),
            FieldSpec::Shaped(ShapedField::Trig { mean, amp, .. }) => mean.abs() + amp.abs(),
            FieldSpec::Shaped(ShapedField::PolyGrowth { .. }) => f64::INFINITY,
        }
    }
}

/// One term `cos * cos(2 pi k.x / L) + sin * sin(2 pi k.x / L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub wavevector: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl TrigTerm {
    pub fn sine(wavevector: Vec<i64>, amp: f64) -> Self {
        TrigTerm {
            wavevector,
            cos: 0.0,
            sin: amp,
        }
    }

    pub fn cosine(wavevector: Vec<i64>, amp: f64) -> Self {
        TrigTerm {
            wavevector,
            cos: amp,
            sin: 0.0,
        }
    }

    /// Angular wavevector `2 pi k / L`.
    pub fn omega(&self, period: f64) -> Vec<f64> {
        self.wavevector
            .iter()
            .map(|&k| 2.0 * PI * k as f64 / period)
            .collect()
    }
}

/// A finite Fourier sum on the torus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPolynomial {
    pub modes: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(modes: Vec<TrigTerm>) -> Self {
        TrigPolynomial { modes }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        TrigPolynomial::new(vec![TrigTerm::cosine(vec![0; dim], value)])
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        for m in &self.modes {
            if m.wavevector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.wavevector.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, period: f64, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let arg: f64 = m.omega(period).iter().zip(x).map(|(w, xi)| w * xi).sum();
                m.cos * arg.cos() + m.sin * arg.sin()
            })
            .sum()
    }

    pub fn to_coefficient(&self, period: f64) -> Coefficient {
        let poly = self.clone();
        Coefficient::spatial(move |x, _h| poly.eval(period, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_constants_constant() {
        let c = Coefficient::Constant(2.0).map(|v| v * 3.0);
        assert_eq!(c.constant_value(), Some(6.0));
        let s = Coefficient::spatial(|x, _| x[0]).shifted(1.0);
        assert!(s.is_time_independent());
        assert_eq!(s.eval(5.0, &[2.0], 0.1), 3.0);
    }

    #[test]
    fn centered_wraps_to_half_open_interval() {
        assert_eq!(centered(0.75, 1.0), -0.25);
        assert_eq!(centered(0.25, 1.0), 0.25);
        assert_eq!(centered(-0.75, 1.0), 0.25);
    }

    #[test]
    fn field_spec_parses_number_and_table() {
        #[derive(Deserialize)]
        struct W {
            a: FieldSpec,
            b: FieldSpec,
        }
        let w: W = toml::from_str(
            "a = 1.5\nb = { kind = \"trig\", mean = 1.0, amp = 0.5, wavevector = [1] }",
        )
        .unwrap();
        assert_eq!(w.a, FieldSpec::Constant(1.5));
        let b = w.b.to_coefficient(1, 1.0).unwrap();
        assert!((b.eval(0.0, &[0.25], 0.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn trig_polynomial_matches_direct_formula() {
        let p = TrigPolynomial::new(vec![
            TrigTerm::sine(vec![1], 1.0),
            TrigTerm::cosine(vec![3], 0.25),
        ]);
        let x = 0.3;
        let want = (2.0 * PI * x).sin() + 0.25 * (6.0 * PI * x).cos();
        assert!((p.eval(1.0, &[x]) - want).abs() < 1e-14);
    }
}
