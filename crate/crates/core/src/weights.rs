//! Conjugation of `L^h` by the decay weight `rho(x) = (1 + |eps x|^2)^{-s/2}`.
//!
//! The hatted operator satisfies `L^h_hat (u rho) = rho L^h u` at every grid
//! point, so `v = u rho` solves the transformed system with data
//! `(psi rho, f rho, g rho)` exactly when `u` solves the original one. On the
//! torus `rho` is evaluated in centred coordinates, which makes it a positive
//! periodic grid weight; the identity is purely algebraic and holds for any
//! such weight.
//!
//! `a_hat = a` and `p_hat` follows the closed form
//!
//! ```text
//! p_hat^g = p^g + [(T_{-g} a^g) d_{h,-g} rho - (T_g a^{-g}) d_{h,g} rho] / rho
//! ```
//!
//! with `a^l = 0` for `l` outside `L0`. The zero-order weights `c_hat^g` are
//! then fixed by matching the coefficient of every `u(x + h g)` on both sides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{centered, Coefficient};
use crate::grid::TorusGrid;
use crate::stencil::{check_lower_bound_p, Sample, StencilSpec, StencilVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Growth order `s`.
    pub s_bar: f64,
    /// Spatial scaling; `0` gives `rho = 1`.
    pub epsilon: f64,
}

impl WeightSpec {
    pub fn new(s_bar: f64, epsilon: f64) -> Result<Self> {
        if !(s_bar >= 0.0 && epsilon >= 0.0 && s_bar.is_finite() && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight needs s >= 0 and eps >= 0, got s={s_bar}, eps={epsilon}"
            )));
        }
        Ok(WeightSpec { s_bar, epsilon })
    }

    /// `rho` at a point of `R^d`.
    pub fn rho(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| (self.epsilon * v).powi(2)).sum();
        (1.0 + r2).powf(-0.5 * self.s_bar)
    }

    /// `rho` on the torus of side `period`, through centred coordinates.
    pub fn rho_periodic(&self, x: &[f64], period: f64) -> f64 {
        let r2: f64 = x
            .iter()
            .map(|v| (self.epsilon * centered(*v, period)).powi(2))
            .sum();
        (1.0 + r2).powf(-0.5 * self.s_bar)
    }
}

/// `rho(x) = (1 + |eps x|^2)^{-s/2}`.
pub fn rho(spec: &WeightSpec, x: &[f64]) -> f64 {
    spec.rho(x)
}

/// Lattice bookkeeping shared by the hatted coefficient closures: snaps a
/// point to its grid index so that neighbours are evaluated at exactly the
/// coordinates the operator assembly uses.
#[derive(Clone, Debug)]
struct Lattice {
    n: i64,
    h: f64,
    period: f64,
}

impl Lattice {
    fn neighbour(&self, x: &[f64], offset: &[i64]) -> Vec<f64> {
        x.iter()
            .zip(offset)
            .map(|(xi, o)| {
                let k = (xi / self.h).round() as i64;
                self.h * (k + o).rem_euclid(self.n) as f64
            })
            .collect()
    }
}

/// Evaluation context for one hatted coefficient.
#[derive(Clone)]
struct Hatting {
    spec: StencilSpec,
    weight: WeightSpec,
    lattice: Lattice,
}

impl Hatting {
    fn rho_at(&self, x: &[f64], offset: &[i64]) -> f64 {
        self.weight
            .rho_periodic(&self.lattice.neighbour(x, offset), self.lattice.period)
    }

    fn a_at(&self, lambda: &StencilVector, t: f64, x: &[f64], offset: &[i64]) -> f64 {
        match self.spec.a_coeff(lambda) {
            Some(a) => a.eval(t, &self.lattice.neighbour(x, offset), self.lattice.h),
            None => 0.0,
        }
    }

    /// `p_hat^g(t, x)`.
    fn p_hat(&self, gamma: &StencilVector, t: f64, x: &[f64]) -> f64 {
        let h = self.lattice.h;
        let g = gamma.coords();
        let neg: Vec<i64> = g.iter().map(|v| -v).collect();
        let p = self.spec.p_coeff(gamma).map_or(0.0, |p| p.eval(t, x, h));
        if gamma.is_zero() {
            return p;
        }
        let rho = self.rho_at(x, &vec![0; g.len()]);
        let back = (self.rho_at(x, &neg) - rho) / (-h);
        let fwd = (self.rho_at(x, g) - rho) / h;
        let a_back = self.a_at(gamma, t, x, &neg);
        let a_fwd = self.a_at(&-gamma, t, x, g);
        p + (a_back * back - a_fwd * fwd) / rho
    }

    /// Second-order weight of `u(x + h g)` for `g != 0`.
    fn second_order_weight(&self, gamma: &StencilVector, t: f64, x: &[f64]) -> f64 {
        let h2 = self.lattice.h * self.lattice.h;
        let zero = vec![0; gamma.dim()];
        (self.a_at(gamma, t, x, &zero) + self.a_at(&-gamma, t, x, gamma.coords())) / h2
    }

    /// Total weight of `u(x + h g)`, `g != 0`, in the original operator.
    fn original_weight(&self, gamma: &StencilVector, t: f64, x: &[f64]) -> f64 {
        let h = self.lattice.h;
        let p = self.spec.p_coeff(gamma).map_or(0.0, |p| p.eval(t, x, h));
        let c = self.spec.c_coeff(gamma).map_or(0.0, |c| c.eval(t, x, h));
        self.second_order_weight(gamma, t, x) + p / h + c
    }

    /// `c_hat^g(t, x)` from weight matching. The second-order part of the
    /// diagonal is unchanged, so only the first-order shifts enter `c_hat^0`.
    fn c_hat(&self, gamma: &StencilVector, t: f64, x: &[f64]) -> f64 {
        let h = self.lattice.h;
        if gamma.is_zero() {
            let mut w = self.spec.c_coeff(gamma).map_or(0.0, |c| c.eval(t, x, h));
            for (g, p, _) in self.spec.first_and_zero_order() {
                if !g.is_zero() {
                    w += (self.p_hat(g, t, x) - p.eval(t, x, h)) / h;
                }
            }
            w
        } else {
            let ratio = self.rho_at(x, &vec![0; gamma.dim()]) / self.rho_at(x, gamma.coords());
            self.original_weight(gamma, t, x) * ratio
                - self.second_order_weight(gamma, t, x)
                - self.p_hat(gamma, t, x) / h
        }
    }
}

/// The zero-order weight as printed in closed form,
///
/// ```text
/// c^g rho / T_g rho - [(d_{h,-g} a^g) d_{h,-g} rho - a^g d_{h,-g} d_{h,g} rho + p_hat^g d_{h,g} rho] / T_g rho
/// ```
///
/// kept for comparison with the weight-matched value used by
/// [`transform_stencil`].
pub fn printed_c_hat(
    spec: &StencilSpec,
    w: &WeightSpec,
    grid: &TorusGrid,
    gamma: &StencilVector,
    t: f64,
    x: &[f64],
) -> f64 {
    let ctx = Hatting {
        spec: spec.clone(),
        weight: *w,
        lattice: Lattice {
            n: grid.n() as i64,
            h: grid.h(),
            period: grid.period(),
        },
    };
    let h = grid.h();
    let g = gamma.coords();
    let neg: Vec<i64> = g.iter().map(|v| -v).collect();
    let zero = vec![0; g.len()];
    let rho = ctx.rho_at(x, &zero);
    let rho_f = ctx.rho_at(x, g);
    let rho_b = ctx.rho_at(x, &neg);
    let c = spec.c_coeff(gamma).map_or(0.0, |c| c.eval(t, x, h));
    let a = ctx.a_at(gamma, t, x, &zero);
    let a_b = ctx.a_at(gamma, t, x, &neg);
    let da_back = (a_b - a) / h;
    let drho_back = (rho_b - rho) / h;
    let drho_fwd = (rho_f - rho) / h;
    // d_{h,-g} d_{h,g} rho
    let dd_rho = -(rho_f - 2.0 * rho + rho_b) / (h * h);
    c * rho / rho_f - (da_back * drho_back - a * dd_rho + ctx.p_hat(gamma, t, x) * drho_fwd) / rho_f
}

fn bound(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static, autonomous: bool) -> Coefficient {
    if autonomous {
        Coefficient::spatial(move |x, _| f(0.0, x))
    } else {
        Coefficient::general(move |t, x, _| f(t, x))
    }
}

/// The hatted stencil on `grid`. Its coefficients are only meaningful at the
/// points of `grid`; the `h` argument they receive is ignored.
pub fn transform_stencil(
    spec: &StencilSpec,
    w: &WeightSpec,
    grid: &TorusGrid,
) -> Result<StencilSpec> {
    if spec.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: spec.dim(),
        });
    }
    for lambda in spec.lambda0() {
        for v in [lambda.clone(), -lambda] {
            if !spec.lambda1().contains(&v) {
                return Err(Error::InvalidStencil(format!(
                    "{v} is a second-order offset but not a first-order one"
                )));
            }
        }
    }
    let ctx = Hatting {
        spec: spec.clone(),
        weight: *w,
        lattice: Lattice {
            n: grid.n() as i64,
            h: grid.h(),
            period: grid.period(),
        },
    };
    let autonomous = spec.is_autonomous();
    let mut builder = StencilSpec::builder(spec.dim());
    for (lambda, a) in spec.second_order() {
        let a = a.clone();
        let h = grid.h();
        builder = builder.second_order(
            lambda.clone(),
            bound(move |t, x| a.eval(t, x, h), autonomous),
        );
    }
    for gamma in spec.lambda1() {
        let p = if gamma.is_zero() {
            Coefficient::zero()
        } else {
            let (ctx, g) = (ctx.clone(), gamma.clone());
            bound(move |t, x| ctx.p_hat(&g, t, x), autonomous)
        };
        let (ctx, g) = (ctx.clone(), gamma.clone());
        let c = bound(move |t, x| ctx.c_hat(&g, t, x), autonomous);
        builder = builder.first_order(gamma.clone(), p, c);
    }
    for nu in spec.nu() {
        builder = builder.noise(nu.clone());
    }
    builder.build()
}

/// Result of [`choose_epsilon`]: the scaling and the points at which the
/// hatted `p` was certified nonnegative.
#[derive(Clone, Debug)]
pub struct EpsilonChoice {
    pub epsilon: f64,
    pub certificate: Vec<Sample>,
}

/// Halvings tried by [`choose_epsilon`] before giving up.
const MAX_HALVINGS: u32 = 40;

/// Largest `eps` in `1, 1/2, 1/4, ...` for which every hatted `p^g` is
/// nonnegative at all points of `grid` and of its refinements by 2 and 4,
/// at the given times.
pub fn choose_epsilon(
    spec: &StencilSpec,
    s_bar: f64,
    kappa: f64,
    grid: &TorusGrid,
    times: &[f64],
) -> Result<EpsilonChoice> {
    if kappa <= 0.0 {
        return Err(Error::NoMargin(format!(
            "lower bound kappa = {kappa} leaves no room for the weight perturbation"
        )));
    }
    let grids = [grid.clone(), grid.refined(2)?, grid.refined(4)?];
    let mut samples = Vec::new();
    for g in &grids {
        for &t in times {
            for i in 0..g.len() {
                samples.push(Sample::new(t, g.point(i), g.h()));
            }
        }
    }
    if !check_lower_bound_p(spec, kappa, &samples) {
        return Err(Error::NoMargin(format!(
            "first-order weights drop below kappa = {kappa} on the sample"
        )));
    }
    let mut epsilon = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let w = WeightSpec::new(s_bar, epsilon)?;
        let ok = grids.iter().all(|g| {
            transform_stencil(spec, &w, g).is_ok_and(|hat| {
                hat.first_and_zero_order()
                    .filter(|(gamma, _, _)| !gamma.is_zero())
                    .all(|(_, p, _)| {
                        times
                            .iter()
                            .all(|&t| (0..g.len()).all(|i| p.eval(t, &g.point(i), g.h()) >= 0.0))
                    })
            })
        });
        if ok {
            return Ok(EpsilonChoice {
                epsilon,
                certificate: samples,
            });
        }
        epsilon *= 0.5;
    }
    Err(Error::NoMargin(format!(
        "no eps >= 2^-{MAX_HALVINGS} keeps the hatted first-order weights nonnegative"
    )))
}
