//! Taylor expansions of the difference and shift operators in `h`:
//!
//! ```text
//! d_{h,l} f        = sum_i h^i A_i D_l^{i+1} f,   A_i = 1/(i+1)!
//! d_{-h,l} d_{h,l} f = sum_i h^i B_i D_l^{i+2} f, B_i = 2/(i+2)! (i even), 0 (i odd)
//! T_{h,l} f        = sum_i h^i S_i D_l^i f,       S_i = 1/i!
//! ```
//!
//! and an empirical check of the remainder orders on trigonometric data,
//! whose directional derivatives are known in closed form.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::harness::fit_order;
use crate::stencil::StencilVector;

/// The three coefficient sequences up to a common index.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionCoeffs {
    pub first: Vec<BigRational>,
    pub second: Vec<BigRational>,
    pub shift: Vec<BigRational>,
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn inverse_factorial(n: usize) -> BigRational {
    BigRational::new(BigInt::one(), factorial(n))
}

/// Coefficients with indices `0..=n`.
pub fn expansion_coeffs(n: usize) -> ExpansionCoeffs {
    ExpansionCoeffs {
        first: (0..=n).map(|i| inverse_factorial(i + 1)).collect(),
        second: (0..=n)
            .map(|i| {
                if i % 2 == 1 {
                    BigRational::zero()
                } else {
                    BigRational::new(BigInt::from(2), factorial(i + 2))
                }
            })
            .collect(),
        shift: (0..=n).map(inverse_factorial).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceOp {
    /// `d_{h,l}`
    Delta,
    /// `d_{-h,l} d_{h,l}`
    SecondDelta,
    /// `T_{h,l}`
    Shift,
}

impl DifferenceOp {
    pub fn name(self) -> &'static str {
        match self {
            DifferenceOp::Delta => "delta",
            DifferenceOp::SecondDelta => "second_delta",
            DifferenceOp::Shift => "shift",
        }
    }

    /// `(coefficient, derivative order)` of the `h^i` term.
    fn term(self, coeffs: &ExpansionCoeffs, i: usize) -> (f64, usize) {
        let (seq, offset) = match self {
            DifferenceOp::Delta => (&coeffs.first, 1),
            DifferenceOp::SecondDelta => (&coeffs.second, 2),
            DifferenceOp::Shift => (&coeffs.shift, 0),
        };
        (seq[i].to_f64().unwrap_or(f64::NAN), i + offset)
    }

    fn apply(self, u: &GridFunction, lambda: &StencilVector) -> Result<GridFunction> {
        let h = u.grid().h();
        match self {
            DifferenceOp::Delta => u.delta(lambda, h),
            DifferenceOp::SecondDelta => u.delta(lambda, h)?.delta(lambda, -h),
            DifferenceOp::Shift => u.shift(lambda),
        }
    }
}

/// Smooth periodic test data with analytic derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `amp * sin(2 pi k.x / L + phase)`.
    Sine {
        amp: f64,
        wavevector: Vec<i64>,
        phase: f64,
    },
}

impl TestFunction {
    fn frequency(wavevector: &[i64], period: f64, x: &[f64]) -> f64 {
        let w = std::f64::consts::TAU / period;
        wavevector
            .iter()
            .zip(x)
            .map(|(k, xi)| w * *k as f64 * xi)
            .sum()
    }

    pub fn eval(&self, period: f64, x: &[f64]) -> f64 {
        self.derivative(period, &StencilVector::zero(x.len()), 0, x)
    }

    /// `D_l^m f(x)`, the `m`-th derivative along `l`.
    pub fn derivative(&self, period: f64, lambda: &StencilVector, m: usize, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(c) => {
                if m == 0 {
                    *c
                } else {
                    0.0
                }
            }
            TestFunction::Sine {
                amp,
                wavevector,
                phase,
            } => {
                let rate = Self::frequency(wavevector, period, &lambda.as_f64());
                let arg = Self::frequency(wavevector, period, x) + phase + m as f64 * FRAC_PI_2;
                amp * rate.powi(m as i32) * arg.sin()
            }
        }
    }
}

/// Residual of the `n`-term expansion at one mesh width.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub h: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionCheck {
    pub op: DifferenceOp,
    pub terms: usize,
    pub rows: Vec<ResidualRow>,
    /// Fitted `log residual` vs `log h` slope; `None` when some residual is 0.
    pub slope: Option<f64>,
}

impl ExpansionCheck {
    /// The contract `slope >= n + 1 - 0.2`; exact agreement also passes.
    pub fn meets_contract(&self) -> bool {
        match self.slope {
            Some(s) => s >= self.terms as f64 + 1.0 - 0.2,
            None => self.rows.iter().all(|r| r.residual == 0.0),
        }
    }

    /// Rows `(op, n, h, residual, slope)`.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        if header {
            w.write_record(["op", "n", "h", "residual", "slope"])?;
        }
        let slope = self.slope.map(|s| s.to_string()).unwrap_or_default();
        for row in &self.rows {
            w.write_record([
                self.op.name().to_string(),
                self.terms.to_string(),
                row.h.to_string(),
                row.residual.to_string(),
                slope.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Signed remainders `op_h f - sum_{i <= n} h^i coeff_i D_l^{order_i} f` on
/// the torus with `cells` points per axis.
fn remainder(
    op: DifferenceOp,
    f: &TestFunction,
    lambda: &StencilVector,
    terms: usize,
    cells: usize,
    period: f64,
) -> Result<GridFunction> {
    let grid = TorusGrid::new(lambda.dim(), cells, period)?;
    let h = grid.h();
    let coeffs = expansion_coeffs(terms);
    let u = GridFunction::from_fn(&grid, |x| f.eval(period, x));
    let applied = op.apply(&u, lambda)?;
    let series = GridFunction::from_fn(&grid, |x| {
        (0..=terms)
            .map(|i| {
                let (c, order) = op.term(&coeffs, i);
                if c == 0.0 {
                    0.0
                } else {
                    h.powi(i as i32) * c * f.derivative(period, lambda, order, x)
                }
            })
            .sum()
    });
    Ok(&applied - &series)
}

/// Measures the remainder after `terms + 1` expansion terms on the tori with
/// `cells[j]` points per axis. Residuals are sup norms over the points of the
/// coarsest torus, which all finer ones contain.
pub fn verify_expansion(
    op: DifferenceOp,
    f: &TestFunction,
    lambda: &StencilVector,
    terms: usize,
    cells: &[usize],
    period: f64,
) -> Result<ExpansionCheck> {
    let coarsest = *cells
        .iter()
        .min()
        .ok_or_else(|| Error::InvalidArgument("no mesh widths given".into()))?;
    let mut rows = Vec::with_capacity(cells.len());
    for &n in cells {
        if n % coarsest != 0 {
            return Err(Error::GridMismatch(format!(
                "{n} cells do not refine {coarsest}"
            )));
        }
        let r = remainder(op, f, lambda, terms, n, period)?.restrict(n / coarsest)?;
        rows.push(ResidualRow {
            h: period / n as f64,
            residual: r.sup_norm(),
        });
    }
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.residual > 0.0) {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.residual)).collect();
        Some(fit_order(&pts)?.slope)
    } else {
        None
    };
    Ok(ExpansionCheck {
        op,
        terms,
        rows,
        slope,
    })
}

/// Least-squares fit of signed remainders at `x` to
/// `sum_m coef_m h^{powers[m]}`; returns the coefficients.
#[allow(clippy::too_many_arguments)]
pub fn fit_remainder_powers(
    op: DifferenceOp,
    f: &TestFunction,
    lambda: &StencilVector,
    terms: usize,
    cells: &[usize],
    period: f64,
    point: &[usize],
    powers: &[i32],
) -> Result<Vec<f64>> {
    if cells.len() < powers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mesh widths cannot determine {} coefficients",
            cells.len(),
            powers.len()
        )));
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut rhs = Vec::with_capacity(cells.len());
    let coarsest = *cells.iter().min().unwrap();
    for &n in cells {
        let r = remainder(op, f, lambda, terms, n, period)?;
        let k: Vec<usize> = point.iter().map(|p| p * (n / coarsest)).collect();
        let h = period / n as f64;
        rows.push(powers.iter().map(|&p| h.powi(p)).collect::<Vec<f64>>());
        rhs.push(r.at(r.grid().index(&k)));
    }
    Ok(least_squares(&rows, &rhs))
}

/// Column-scaled normal equations solved by Gaussian elimination.
fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = rows[0].len();
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            rows.iter()
                .map(|r| r[j].abs())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, y) in rows.iter().zip(rhs) {
        for i in 0..m {
            let ri = r[i] / scale[i];
            for j in 0..m {
                a[i][j] += ri * r[j] / scale[j];
            }
            a[i][m] += ri * y;
        }
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in (col + 1)..m {
            let factor = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= factor * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let mut acc = a[r][m];
        for c in (r + 1)..m {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    x.iter().zip(&scale).map(|(v, s)| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn sine() -> TestFunction {
        TestFunction::Sine {
            amp: 1.0,
            wavevector: vec![1],
            phase: 0.4,
        }
    }

    const CELLS: [usize; 5] = [16, 32, 64, 128, 256];

    #[test]
    fn coefficient_values() {
        let c = expansion_coeffs(4);
        assert_eq!(&c.first[..3], &[q(1, 1), q(1, 2), q(1, 6)]);
        assert_eq!(&c.second[..4], &[q(1, 1), q(0, 1), q(1, 12), q(0, 1)]);
        assert_eq!(c.second[4], q(1, 360));
        assert_eq!(&c.shift[..4], &[q(1, 1), q(1, 1), q(1, 2), q(1, 6)]);
    }

    #[test]
    fn derivatives_of_sine() {
        let f = sine();
        let l = StencilVector::unit(1, 0);
        let x = [0.3];
        let w = std::f64::consts::TAU;
        let arg = w * 0.3 + 0.4;
        assert!((f.derivative(1.0, &l, 1, &x) - w * arg.cos()).abs() < 1e-12);
        assert!((f.derivative(1.0, &l, 2, &x) + w * w * arg.sin()).abs() < 1e-10);
        let diag = StencilVector::new(vec![1, -2]).unwrap();
        let f2 = TestFunction::Sine {
            amp: 2.0,
            wavevector: vec![1, 1],
            phase: 0.0,
        };
        // rate along (1,-2) is 2 pi (1 - 2)
        let d1 = f2.derivative(1.0, &diag, 1, &[0.0, 0.0]);
        assert!((d1 - 2.0 * (-w)).abs() < 1e-12);
    }

    #[test]
    fn first_difference_orders() {
        for n in 0..=2 {
            let check = verify_expansion(
                DifferenceOp::Delta,
                &sine(),
                &StencilVector::unit(1, 0),
                n,
                &CELLS,
                1.0,
            )
            .unwrap();
            let s = check.slope.unwrap();
            assert!((s - (n as f64 + 1.0)).abs() <= 0.1, "n={n} slope={s}");
            assert!(check.meets_contract());
        }
    }

    #[test]
    fn second_difference_skips_odd_powers() {
        let l = StencilVector::unit(1, 0);
        let s0 = verify_expansion(DifferenceOp::SecondDelta, &sine(), &l, 0, &CELLS, 1.0)
            .unwrap()
            .slope
            .unwrap();
        let s1 = verify_expansion(DifferenceOp::SecondDelta, &sine(), &l, 1, &CELLS, 1.0)
            .unwrap()
            .slope
            .unwrap();
        assert!((s0 - 2.0).abs() <= 0.1, "{s0}");
        assert!((s1 - 2.0).abs() <= 0.1, "{s1}");
    }

    #[test]
    fn shift_orders() {
        let l = StencilVector::new(vec![1, 1]).unwrap();
        let f = TestFunction::Sine {
            amp: 1.0,
            wavevector: vec![1, 2],
            phase: 0.1,
        };
        let check =
            verify_expansion(DifferenceOp::Shift, &f, &l, 1, &[16, 32, 64, 128], 1.0).unwrap();
        assert!((check.slope.unwrap() - 2.0).abs() <= 0.15);
    }

    #[test]
    fn constants_have_no_remainder() {
        for op in [DifferenceOp::Delta, DifferenceOp::SecondDelta] {
            let check = verify_expansion(
                op,
                &TestFunction::Constant(3.0),
                &StencilVector::unit(1, 0),
                1,
                &CELLS,
                1.0,
            )
            .unwrap();
            assert!(check.rows.iter().all(|r| r.residual == 0.0));
            assert_eq!(check.slope, None);
            assert!(check.meets_contract());
        }
    }

    #[test]
    fn no_linear_term_in_second_difference() {
        let coef = fit_remainder_powers(
            DifferenceOp::SecondDelta,
            &sine(),
            &StencilVector::unit(1, 0),
            0,
            &[8, 16, 32, 64],
            1.0,
            &[1],
            &[1, 2, 4, 6],
        )
        .unwrap();
        assert!(coef[0].abs() <= 1e-8 * coef[1].abs(), "{coef:?}");
        // the h^2 coefficient is B_2 D^4 f at x = 1/8
        let want = sine().derivative(1.0, &StencilVector::unit(1, 0), 4, &[0.125]) / 12.0;
        assert!(
            (coef[1] - want).abs() < 1e-4 * want.abs(),
            "{} vs {want}",
            coef[1]
        );
    }

    #[test]
    fn report_csv() {
        let check = verify_expansion(
            DifferenceOp::Delta,
            &sine(),
            &StencilVector::unit(1, 0),
            0,
            &[8, 16],
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        check.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("op,n,h,residual,slope\ndelta,0,0.125,"));
    }
}
