//! Richardson extrapolation in the mesh width.
//!
//! With solutions `u^{h/n_i}`, `i = 0..=k`, and weights solving
//! `sum_i c_i n_i^{-j} = [j == 0]` for `j = 0..=k`, the combination
//! `v^h = sum_i c_i u^{h/n_i}` cancels the first `k` terms of an expansion
//! `u^h = u + h e_1 + ... + h^k e_k + O(h^{k+1})`.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Weights for a `k + 1` level extrapolation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationPlan {
    ratios: Vec<u64>,
    exact: Vec<BigRational>,
    weights: Vec<f64>,
}

impl ExtrapolationPlan {
    /// Number of cancelled expansion terms.
    pub fn k(&self) -> usize {
        self.ratios.len() - 1
    }

    pub fn levels(&self) -> usize {
        self.ratios.len()
    }

    pub fn ratios(&self) -> &[u64] {
        &self.ratios
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exact_weights(&self) -> &[BigRational] {
        &self.exact
    }

    /// `sum_i c_i n_i^{-j}` in floating point.
    pub fn moment(&self, j: u32) -> f64 {
        self.weights
            .iter()
            .zip(&self.ratios)
            .map(|(c, &n)| c * (n as f64).powi(-(j as i32)))
            .sum()
    }
}

impl fmt::Display for ExtrapolationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} ratios=(", self.k())?;
        for (i, n) in self.ratios.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}")?;
        }
        f.write_str(") weights=(")?;
        for (i, c) in self.exact.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

fn rational_to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Solves `M x = rhs` exactly; `M` must be square and nonsingular.
fn solve_exact(
    mut m: Vec<Vec<BigRational>>,
    mut rhs: Vec<BigRational>,
) -> Option<Vec<BigRational>> {
    let size = rhs.len();
    for col in 0..size {
        let pivot = (col..size).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in (col + 1)..size {
            if m[r][col].is_zero() {
                continue;
            }
            let factor = &m[r][col] / &m[col][col];
            for c in col..size {
                let delta = &factor * &m[col][c];
                m[r][c] -= delta;
            }
            let delta = &factor * &rhs[col];
            rhs[r] -= delta;
        }
    }
    let mut x = vec![BigRational::zero(); size];
    for r in (0..size).rev() {
        let mut acc = rhs[r].clone();
        for c in (r + 1)..size {
            acc -= &m[r][c] * &x[c];
        }
        x[r] = acc / &m[r][r];
    }
    Some(x)
}

fn check_ratios(ratios: &[u64]) -> Result<()> {
    if ratios.first() != Some(&1) {
        return Err(Error::InvalidArgument("ratios must start at 1".into()));
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "ratios must be strictly increasing, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Exact weights `x` with `sum_i x_i n_i^{-m} = [m == target]` for
/// `m = 0..ratios.len()`.
fn moment_weights(ratios: &[u64], target: usize) -> Result<Vec<BigRational>> {
    check_ratios(ratios)?;
    let size = ratios.len();
    let m: Vec<Vec<BigRational>> = (0..size)
        .map(|j| {
            ratios
                .iter()
                .map(|&n| BigRational::new(BigInt::one(), BigInt::from(n).pow(j as u32)))
                .collect()
        })
        .collect();
    let rhs = (0..size)
        .map(|j| {
            if j == target {
                BigRational::one()
            } else {
                BigRational::zero()
            }
        })
        .collect();
    solve_exact(m, rhs).ok_or_else(|| Error::InvalidArgument("singular Vandermonde system".into()))
}

/// Extrapolation weights for `k + 1` levels; `ratios` default to `2^i`.
pub fn vandermonde_weights(k: usize, ratios: Option<&[u64]>) -> Result<ExtrapolationPlan> {
    let ratios: Vec<u64> = match ratios {
        Some(r) => {
            if r.len() != k + 1 {
                return Err(Error::DimensionMismatch {
                    expected: k + 1,
                    found: r.len(),
                });
            }
            r.to_vec()
        }
        None => (0..=k).map(|i| 1u64 << i).collect(),
    };
    let exact = moment_weights(&ratios, 0)?;
    let weights = exact.iter().map(rational_to_f64).collect();
    Ok(ExtrapolationPlan {
        ratios,
        exact,
        weights,
    })
}

/// `v^h = sum_i c_i u^{h/n_i}` on the coarsest grid.
///
/// `solutions[i]` lives on the grid with `n_i` times as many points per axis
/// as `solutions[0]`, on the same torus.
pub fn extrapolate(plan: &ExtrapolationPlan, solutions: &[GridFunction]) -> Result<GridFunction> {
    if solutions.len() != plan.levels() {
        return Err(Error::DimensionMismatch {
            expected: plan.levels(),
            found: solutions.len(),
        });
    }
    let coarse = solutions[0].grid();
    let mut out = GridFunction::zeros(coarse);
    for ((u, &ratio), &c) in solutions.iter().zip(&plan.ratios).zip(&plan.weights) {
        let g = u.grid();
        if g.dim() != coarse.dim()
            || g.n() != coarse.n() * ratio as usize
            || (g.period() - coarse.period()).abs() > 1e-12 * coarse.period()
        {
            return Err(Error::GridMismatch(format!(
                "level with ratio {ratio} has n={} (expected {}) and period {} (expected {})",
                g.n(),
                coarse.n() * ratio as usize,
                g.period(),
                coarse.period()
            )));
        }
        out.axpy(c, &u.restrict(ratio as usize)?)?;
    }
    Ok(out)
}

/// Estimates the coefficient of `h^j` in the expansion of `u^h` from
/// solutions on the grids `h, h/2, h/4, ...` (`h` taken from the first).
///
/// The result is the raw coefficient, i.e. the `j`-th expansion field divided
/// by `j!`. All levels are used, so the estimate is exact for expansions of
/// degree below `solutions.len()`.
pub fn estimate_expansion_term(solutions: &[GridFunction], j: usize) -> Result<GridFunction> {
    if solutions.len() <= j {
        return Err(Error::InvalidArgument(format!(
            "the h^{j} term needs at least {} levels",
            j + 1
        )));
    }
    let ratios: Vec<u64> = (0..solutions.len()).map(|i| 1u64 << i).collect();
    let exact = moment_weights(&ratios, j)?;
    let h = solutions[0].grid().h();
    let plan = ExtrapolationPlan {
        weights: exact
            .iter()
            .map(|q| rational_to_f64(q) / h.powi(j as i32))
            .collect(),
        ratios,
        exact,
    };
    extrapolate(&plan, solutions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Lagrange form of the same weights: `c_i = L_i(0)` for nodes `1/n_i`.
    fn lagrange_oracle(ratios: &[u64]) -> Vec<BigRational> {
        let x: Vec<BigRational> = ratios.iter().map(|&n| q(1, n as i64)).collect();
        (0..x.len())
            .map(|i| {
                let mut c = BigRational::one();
                for m in 0..x.len() {
                    if m != i {
                        c *= -x[m].clone() / (&x[i] - &x[m]);
                    }
                }
                c
            })
            .collect()
    }

    #[test]
    fn small_cases() {
        assert_eq!(
            vandermonde_weights(0, None).unwrap().exact_weights(),
            &[q(1, 1)]
        );
        assert_eq!(
            vandermonde_weights(1, None).unwrap().exact_weights(),
            &[q(-1, 1), q(2, 1)]
        );
        assert_eq!(
            vandermonde_weights(2, None).unwrap().exact_weights(),
            &[q(1, 3), q(-2, 1), q(8, 3)]
        );
        let plan = vandermonde_weights(2, None).unwrap();
        assert_eq!(
            plan.to_string(),
            "k=2 ratios=(1,2,4) weights=(1/3, -2, 8/3)"
        );
    }

    #[test]
    fn matches_lagrange_oracle_up_to_k6() {
        for k in 0..=6 {
            let default: Vec<u64> = (0..=k).map(|i| 1 << i).collect();
            let consecutive: Vec<u64> = (1..=k as u64 + 1).collect();
            for ratios in [default, consecutive] {
                let plan = vandermonde_weights(k, Some(&ratios)).unwrap();
                assert_eq!(plan.exact_weights(), lagrange_oracle(&ratios).as_slice());
                let sum: BigRational = plan.exact_weights().iter().sum();
                assert!(sum.is_one());
                for j in 1..=k as u32 {
                    assert!(plan.moment(j).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(vandermonde_weights(1, Some(&[1, 1])).is_err());
        assert!(vandermonde_weights(1, Some(&[2, 3])).is_err());
        assert!(vandermonde_weights(2, Some(&[1, 2])).is_err());
    }

    fn level(n: usize, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let g = TorusGrid::new(1, n, 1.0).unwrap();
        let h = g.h();
        GridFunction::from_fn(&g, |x| f(x[0], h))
    }

    fn smooth(x: f64) -> f64 {
        (std::f64::consts::TAU * x).sin()
    }

    fn wfield(x: f64) -> f64 {
        (std::f64::consts::TAU * x).cos() + 0.5
    }

    fn zfield(x: f64) -> f64 {
        x * x
    }

    #[test]
    fn extrapolation_cancels_first_order_term() {
        let plan = vandermonde_weights(0, None).unwrap();
        let u = level(8, |x, _| smooth(x));
        assert_eq!(extrapolate(&plan, std::slice::from_ref(&u)).unwrap(), u);

        let plan = vandermonde_weights(1, None).unwrap();
        let same = [level(8, |x, _| smooth(x)), level(16, |x, _| smooth(x))];
        assert!(
            extrapolate(&plan, &same)
                .unwrap()
                .max_abs_diff(&same[0])
                .unwrap()
                < 1e-15
        );

        let sols = [8, 16].map(|n| level(n, |x, h| smooth(x) + h * wfield(x)));
        let v = extrapolate(&plan, &sols).unwrap();
        assert!(v.max_abs_diff(&level(8, |x, _| smooth(x))).unwrap() < 1e-12);
    }

    #[test]
    fn extrapolation_rejects_mismatched_grids() {
        let plan = vandermonde_weights(1, None).unwrap();
        let sols = [level(8, |x, _| x), level(12, |x, _| x)];
        assert!(extrapolate(&plan, &sols).is_err());
        assert!(extrapolate(&plan, &sols[..1]).is_err());
    }

    #[test]
    fn expansion_terms_from_synthetic_hierarchy() {
        let sols = [8, 16, 32].map(|n| level(n, |x, h| smooth(x) + h * wfield(x)));
        let w = estimate_expansion_term(&sols, 1).unwrap();
        assert!(w.max_abs_diff(&level(8, |x, _| wfield(x))).unwrap() < 1e-10);

        let flat = [8, 16, 32].map(|n| level(n, |x, _| smooth(x)));
        assert!(estimate_expansion_term(&flat, 1).unwrap().sup_norm() < 1e-12);

        let quad =
            [8, 16, 32].map(|n| level(n, |x, h| smooth(x) + h * wfield(x) + h * h * zfield(x)));
        let w = estimate_expansion_term(&quad, 1).unwrap();
        assert!(w.max_abs_diff(&level(8, |x, _| wfield(x))).unwrap() < 1e-10);
        let z = estimate_expansion_term(&quad, 2).unwrap();
        assert!(z.max_abs_diff(&level(8, |x, _| zfield(x))).unwrap() < 1e-9);

        // with a cubic term present the two-term estimate is off by O(h^2)
        let h = 1.0 / 8.0;
        let cubic = [8, 16, 32].map(|n| level(n, |x, h| smooth(x) + h * wfield(x) + h.powi(3)));
        let err = estimate_expansion_term(&cubic, 1)
            .unwrap()
            .max_abs_diff(&level(8, |x, _| wfield(x)))
            .unwrap();
        assert!(err > 0.0 && err < 2.0 * h * h, "{err}");
    }

    #[test]
    fn first_term_weights_are_explicit() {
        let exact = moment_weights(&[1, 2, 4], 1).unwrap();
        assert_eq!(exact, vec![q(-2, 1), q(10, 1), q(-8, 1)]);
        let exact = moment_weights(&[1, 2, 4], 2).unwrap();
        assert_eq!(exact, vec![q(8, 3), q(-8, 1), q(16, 3)]);
    }

    proptest! {
        #[test]
        fn extrapolation_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            u in proptest::collection::vec(-1.0f64..1.0, 24),
            w in proptest::collection::vec(-1.0f64..1.0, 24),
        ) {
            let plan = vandermonde_weights(2, None).unwrap();
            let field = |vals: &[f64], n: usize| {
                let g = TorusGrid::new(1, n, 1.0).unwrap();
                GridFunction::from_values(&g, vals.iter().cycle().take(n).copied().collect()).unwrap()
            };
            let us: Vec<_> = [4, 8, 16].iter().map(|&n| field(&u, n)).collect();
            let ws: Vec<_> = [4, 8, 16].iter().map(|&n| field(&w, n)).collect();
            let combo: Vec<_> = us.iter().zip(&ws).map(|(x, y)| &x.scale(a) + &y.scale(b)).collect();
            let lhs = extrapolate(&plan, &combo).unwrap();
            let rhs = &extrapolate(&plan, &us).unwrap().scale(a) + &extrapolate(&plan, &ws).unwrap().scale(b);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * 20.0);
        }
    }
}
