//! Reference solutions that do not go through the grid operator.
//!
//! For constant coefficients every Fourier mode `e^{i w.x}` evolves on its
//! own with the symbol `s(w) = -w.a w + i b.w + c`, so trigonometric initial
//! data give closed-form solutions. A constant multiplicative noise `nu`
//! commutes with the deterministic flow and contributes the scalar factor
//! `exp(nu w_t - nu^2 t / 2)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::TrigPolynomial;
use crate::grid::{GridFunction, TorusGrid};
use crate::integrator::{integrate, Method, ProblemData, SchemeConfig, Trajectory};
use crate::noise::{coarsen_path, BrownianPath};
use crate::stencil::StencilSpec;

/// Constant continuum coefficients `(a, b, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantCoefficients {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ConstantCoefficients {
    pub fn diffusion(a: Vec<Vec<f64>>) -> Self {
        let d = a.len();
        ConstantCoefficients {
            a,
            b: vec![0.0; d],
            c: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `-w.a w + i b.w + c`.
    pub fn symbol(&self, omega: &[f64]) -> Complex64 {
        let mut quad = 0.0;
        for (i, wi) in omega.iter().enumerate() {
            for (j, wj) in omega.iter().enumerate() {
                quad += wi * self.a[i][j] * wj;
            }
        }
        let drift: f64 = self.b.iter().zip(omega).map(|(b, w)| b * w).sum();
        Complex64::new(self.c - quad, drift)
    }
}

/// A real field `sum_m Re(amp_m e^{i w_m.x})`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    modes: Vec<(Vec<f64>, Complex64)>,
}

impl FourierField {
    /// The initial datum: `cos cos(w.x) + sin sin(w.x) = Re((cos - i sin) e^{i w.x})`.
    pub fn from_trig(psi: &TrigPolynomial, period: f64) -> Self {
        FourierField {
            modes: psi
                .modes
                .iter()
                .map(|m| (m.omega(period), Complex64::new(m.cos, -m.sin)))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(w, amp)| {
                let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                (amp * Complex64::from_polar(1.0, arg)).re
            })
            .sum()
    }

    pub fn on_grid(&self, grid: &TorusGrid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Each mode multiplied by `factor(w)`.
    fn evolve(&self, factor: impl Fn(&[f64]) -> Complex64) -> Self {
        FourierField {
            modes: self
                .modes
                .iter()
                .map(|(w, amp)| (w.clone(), amp * factor(w)))
                .collect(),
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        for (_, amp) in &mut self.modes {
            *amp *= s;
        }
        self
    }
}

fn check_psi(psi: &TrigPolynomial, dim: usize) -> Result<()> {
    psi.check_dim(dim)
}

/// The deterministic solution at time `t`.
pub fn deterministic_field(
    coeffs: &ConstantCoefficients,
    psi: &TrigPolynomial,
    period: f64,
    t: f64,
) -> Result<FourierField> {
    check_psi(psi, coeffs.dim())?;
    Ok(FourierField::from_trig(psi, period).evolve(|w| (coeffs.symbol(w) * t).exp()))
}

/// `u(t, x)` for `du = D_i(a^{ij} D_j u) dt` with constant `a`.
pub fn heat_solution(
    a: &[Vec<f64>],
    psi: &TrigPolynomial,
    period: f64,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let coeffs = ConstantCoefficients::diffusion(a.to_vec());
    Ok(deterministic_field(&coeffs, psi, period, t)?.eval(x))
}

fn single_process(path: &BrownianPath) -> Result<()> {
    if path.processes() != 1 {
        return Err(Error::OracleUnavailable(format!(
            "the exponential factor needs exactly one Wiener process, the path has {}",
            path.processes()
        )));
    }
    Ok(())
}

/// `exp(nu w_t - nu^2 t / 2)` times the deterministic solution, at `t_step`
/// of `path`.
pub fn geometric_field(
    coeffs: &ConstantCoefficients,
    nu: f64,
    path: &BrownianPath,
    step: usize,
    psi: &TrigPolynomial,
    period: f64,
) -> Result<FourierField> {
    single_process(path)?;
    let t = path.time(step);
    let factor = (nu * path.value(step, 0) - 0.5 * nu * nu * t).exp();
    Ok(deterministic_field(coeffs, psi, period, t)?.scaled(factor))
}

/// Pointwise form of [`geometric_field`].
pub fn geometric_solution(
    coeffs: &ConstantCoefficients,
    nu: f64,
    path: &BrownianPath,
    step: usize,
    psi: &TrigPolynomial,
    period: f64,
    x: &[f64],
) -> Result<f64> {
    Ok(geometric_field(coeffs, nu, path, step, psi, period)?.eval(x))
}

/// The exact-in-space, Euler-in-time solution: every mode follows
/// `z <- z (1 + dt s + nu dw)` (explicit) or `z <- z (1 + nu dw) / (1 - dt s)`
/// (drift implicit) along `path`, which must already be on the scheme's
/// time grid. Subtracting it from a numerical solution driven by the same
/// path leaves only the spatial error.
pub fn time_discrete_field(
    coeffs: &ConstantCoefficients,
    nu: f64,
    path: &BrownianPath,
    step: usize,
    method: Method,
    psi: &TrigPolynomial,
    period: f64,
) -> Result<FourierField> {
    check_psi(psi, coeffs.dim())?;
    if nu != 0.0 {
        single_process(path)?;
    }
    let dt = path.dt();
    let noise: Vec<f64> = (0..step)
        .map(|n| {
            if nu == 0.0 {
                1.0
            } else {
                1.0 + nu * path.step(n)[0]
            }
        })
        .collect();
    Ok(FourierField::from_trig(psi, period).evolve(|w| {
        let s = coeffs.symbol(w);
        let mut z = Complex64::new(1.0, 0.0);
        for m in &noise {
            z = match method {
                Method::ExplicitEuler => z * (1.0 + dt * s + (m - 1.0)),
                Method::DriftImplicitEuler => z * *m / (1.0 - dt * s),
            };
        }
        z
    }))
}

/// The same semidiscrete system integrated with the finer step `dt_fine`,
/// driven by the same Brownian realization.
pub fn fine_reference(
    spec: &StencilSpec,
    problem: &ProblemData,
    grid: &TorusGrid,
    path: &BrownianPath,
    config: &SchemeConfig,
    dt_fine: f64,
) -> Result<Trajectory> {
    let ratio = config.dt / dt_fine;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fine step {dt_fine} does not divide the study step {}",
            config.dt
        )));
    }
    let fine_steps = crate::integrator::step_count(path.horizon(), dt_fine)?;
    let path = if path.steps() == fine_steps {
        path.clone()
    } else if path.steps().is_multiple_of(fine_steps) {
        coarsen_path(path, path.steps() / fine_steps)?
    } else {
        return Err(Error::InvalidArgument(format!(
            "path with {} steps cannot be coarsened to {fine_steps}",
            path.steps()
        )));
    };
    let mut fine = config.clone();
    fine.dt = dt_fine;
    integrate(spec, problem, grid, &path, &fine)
}
