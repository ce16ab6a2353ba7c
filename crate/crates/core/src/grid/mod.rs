//! The periodic lattice `G_h = h Z^d / n Z^d`, grid functions on it, and the
//! shift and difference operators out of which `L^h` is built.

mod operator;

pub use operator::{apply_lh, sample_coefficient, AssembledOperator};

use std::io::Write;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::stencil::StencilVector;

/// A `d`-dimensional torus with `n` points per axis and spacing `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    h: f64,
}

impl TorusGrid {
    /// A torus of side `period` split into `n` cells per axis.
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "grid needs dim >= 1 and n >= 1".into(),
            ));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "period must be positive, got {period}"
            )));
        }
        Ok(TorusGrid {
            dim,
            n,
            h: period / n as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn period(&self) -> f64 {
        self.h * self.n as f64
    }

    /// Number of lattice points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Row-major flat index of the multi-index `k`.
    pub fn index(&self, k: &[usize]) -> usize {
        k.iter().fold(0, |acc, &ki| acc * self.n + ki)
    }

    /// Inverse of [`TorusGrid::index`].
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut k = vec![0; self.dim];
        for ki in k.iter_mut().rev() {
            *ki = idx % self.n;
            idx /= self.n;
        }
        k
    }

    /// Coordinates `h k` of the point with flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .into_iter()
            .map(|k| self.h * k as f64)
            .collect()
    }

    /// Writes the coordinates of `idx` into `out` without allocating.
    pub fn point_into(&self, mut idx: usize, out: &mut [f64]) {
        for xi in out.iter_mut().rev() {
            *xi = self.h * (idx % self.n) as f64;
            idx /= self.n;
        }
    }

    /// Flat index of `idx + offset`, wrapped around the torus.
    pub fn neighbor(&self, idx: usize, offset: &[i64]) -> usize {
        let n = self.n as i64;
        let mut rem = idx;
        let mut stride = 1usize;
        let mut out = 0usize;
        for &o in offset.iter().rev() {
            let k = (rem % self.n) as i64;
            rem /= self.n;
            let shifted = (k + o).rem_euclid(n) as usize;
            out += shifted * stride;
            stride *= self.n;
        }
        out
    }

    /// Requires `n >= 2 |offset|_max + 1`, so no stencil wraps onto itself.
    pub fn check_reach(&self, offset: &StencilVector) -> Result<()> {
        if offset.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: offset.dim(),
            });
        }
        if (self.n as i64) < 2 * offset.reach() + 1 {
            return Err(Error::ReachExceeded {
                offset: offset.coords().to_vec(),
                n: self.n,
            });
        }
        Ok(())
    }

    /// The grid with `n / ratio` points on the same torus.
    pub fn coarsened(&self, ratio: usize) -> Result<TorusGrid> {
        if ratio == 0 || !self.n.is_multiple_of(ratio) {
            return Err(Error::GridMismatch(format!(
                "{} points per axis are not divisible by {ratio}",
                self.n
            )));
        }
        TorusGrid::new(self.dim, self.n / ratio, self.period())
    }

    /// The grid with `n * ratio` points on the same torus.
    pub fn refined(&self, ratio: usize) -> Result<TorusGrid> {
        if ratio == 0 {
            return Err(Error::InvalidArgument(
                "refinement ratio must be positive".into(),
            ));
        }
        TorusGrid::new(self.dim, self.n * ratio, self.period())
    }
}

/// Values on a [`TorusGrid`], `components` per point, stored point-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: TorusGrid,
    components: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        GridFunction {
            grid: grid.clone(),
            components: 1,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::from_components(grid, 1, values)
    }

    /// A vector-valued grid function; `values[i * components + r]` is
    /// component `r` at point `i`.
    pub fn from_components(grid: &TorusGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.len() * components {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * components.max(1),
                found: values.len(),
            });
        }
        Ok(GridFunction {
            grid: grid.clone(),
            components,
            values,
        })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut x);
                f(&x)
            })
            .collect();
        GridFunction {
            grid: grid.clone(),
            components: 1,
            values,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at the point `idx` (first component).
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx * self.components]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        GridFunction {
            grid: self.grid.clone(),
            components: self.components,
            values,
        }
    }

    fn check_same(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::GridMismatch(format!(
                "n={} h={} x{} vs n={} h={} x{}",
                self.grid.n,
                self.grid.h,
                self.components,
                other.grid.n,
                other.grid.h,
                other.components
            )));
        }
        Ok(())
    }

    /// `T_{h,l} u(x) = u(x + h l)`.
    pub fn shift(&self, lambda: &StencilVector) -> Result<GridFunction> {
        self.grid.check_reach(lambda)?;
        if lambda.is_zero() {
            return Ok(self.clone());
        }
        let m = self.components;
        let mut out = vec![0.0; self.values.len()];
        for (i, chunk) in out.chunks_mut(m).enumerate() {
            let j = self.grid.neighbor(i, lambda.coords());
            chunk.copy_from_slice(&self.values[j * m..(j + 1) * m]);
        }
        Ok(self.with_values(out))
    }

    /// `d_{s,l} u = (u(x + s l) - u(x)) / s` with `s = +-h`; the sign selects
    /// the forward or backward difference.
    pub fn delta(&self, lambda: &StencilVector, h_signed: f64) -> Result<GridFunction> {
        if h_signed == 0.0 {
            return Err(Error::InvalidArgument(
                "difference step must be nonzero".into(),
            ));
        }
        let h = self.grid.h;
        if ((h_signed.abs() - h) / h).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "difference step {h_signed} does not match mesh width {h}"
            )));
        }
        let target = if h_signed > 0.0 {
            lambda.clone()
        } else {
            -lambda
        };
        let shifted = self.shift(&target)?;
        let values = shifted
            .values
            .iter()
            .zip(&self.values)
            .map(|(s, u)| (s - u) / h_signed)
            .collect();
        Ok(self.with_values(values))
    }

    /// Pointwise magnitude, the l2 norm over components.
    fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.chunks(self.components).map(|c| {
            if c.len() == 1 {
                c[0].abs()
            } else {
                c.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        })
    }

    /// `(sum_x |u(x)|^p h^d)^{1/p}`; `p = inf` gives the sup norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup_norm();
        }
        let vol = self.grid.cell_volume();
        if p == 2.0 {
            return (self.magnitudes().map(|m| m * m).sum::<f64>() * vol).sqrt();
        }
        (self.magnitudes().map(|m| m.powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.magnitudes().fold(0.0, f64::max)
    }

    /// Subsamples every `ratio`-th point per axis onto the coarse grid.
    pub fn restrict(&self, ratio: usize) -> Result<GridFunction> {
        let coarse = self.grid.coarsened(ratio)?;
        if ratio == 1 {
            return Ok(self.clone());
        }
        let m = self.components;
        let mut values = Vec::with_capacity(coarse.len() * m);
        let mut fine_k = vec![0; self.grid.dim];
        for i in 0..coarse.len() {
            for (fk, ck) in fine_k.iter_mut().zip(coarse.multi_index(i)) {
                *fk = ck * ratio;
            }
            let j = self.grid.index(&fine_k);
            values.extend_from_slice(&self.values[j * m..(j + 1) * m]);
        }
        Ok(GridFunction {
            grid: coarse,
            components: m,
            values,
        })
    }

    /// `sum_x u(x) h^d`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `sum_x u(x) v(x) h^d`.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    pub fn zip_with(
        &self,
        other: &GridFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<GridFunction> {
        self.check_same(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        self.with_values(self.values.iter().map(|v| f(*v)).collect())
    }

    pub fn scale(&self, s: f64) -> GridFunction {
        self.map(|v| s * v)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &GridFunction) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Largest pointwise absolute difference.
    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// One row per point: coordinates then values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.grid.dim).map(|i| format!("x_{i}")).collect();
        if self.components == 1 {
            header.push("value".into());
        } else {
            header.extend((1..=self.components).map(|r| format!("value_{r}")));
        }
        w.write_record(&header)?;
        let mut x = vec![0.0; self.grid.dim];
        for (i, chunk) in self.values.chunks(self.components).enumerate() {
            self.grid.point_into(i, &mut x);
            let row: Vec<String> = x.iter().chain(chunk).map(|v| v.to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    /// Panics on grid mismatch; use [`GridFunction::zip_with`] for a checked sum.
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a + b)
            .expect("grid mismatch in +")
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a - b)
            .expect("grid mismatch in -")
    }
}

impl Mul for &GridFunction {
    type Output = GridFunction;
    /// Pointwise product.
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a * b)
            .expect("grid mismatch in *")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, period: f64, v: &[f64]) -> GridFunction {
        GridFunction::from_values(&TorusGrid::new(1, n, period).unwrap(), v.to_vec()).unwrap()
    }

    fn e(d: usize, i: usize) -> StencilVector {
        StencilVector::unit(d, i)
    }

    #[test]
    fn indexing_round_trips() {
        let g = TorusGrid::new(3, 5, 1.0).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.index(&g.multi_index(i)), i);
        }
        assert_eq!(
            g.neighbor(g.index(&[4, 0, 2]), &[1, -1, 0]),
            g.index(&[0, 4, 2])
        );
    }

    #[test]
    fn shift_constant_and_rotation() {
        let g = TorusGrid::new(2, 6, 1.0).unwrap();
        let c = GridFunction::constant(&g, 7.0);
        assert_eq!(
            c.shift(&StencilVector::new(vec![2, -1]).unwrap()).unwrap(),
            c
        );

        let u = line(4, 1.0, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u.shift(&e(1, 0)).unwrap().values(), &[2.0, 3.0, 4.0, 1.0]);
        assert_eq!(u.shift(&StencilVector::zero(1)).unwrap(), u);
        let back = u.shift(&e(1, 0)).unwrap().shift(&-e(1, 0)).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn shift_rejects_long_offsets() {
        let u = line(4, 1.0, &[1.0, 2.0, 3.0, 4.0]);
        let err = u.shift(&StencilVector::new(vec![2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ReachExceeded { .. }));
    }

    #[test]
    fn delta_basics() {
        let g = TorusGrid::new(1, 8, 4.0).unwrap();
        let c = GridFunction::constant(&g, 3.0);
        assert!(c.delta(&e(1, 0), 0.5).unwrap().sup_norm() == 0.0);
        let u = GridFunction::from_fn(&g, |x| x[0]);
        let d = u.delta(&e(1, 0), 0.5).unwrap();
        assert_eq!(d.at(3), 1.0);
        let back = u.delta(&e(1, 0), -0.5).unwrap();
        assert_eq!(back.at(3), 1.0);
        assert!(u.delta(&e(1, 0), 0.0).is_err());
        assert!(u.delta(&e(1, 0), 0.25).is_err());
        assert_eq!(
            u.delta(&StencilVector::zero(1), 0.5).unwrap().sup_norm(),
            0.0
        );
    }

    #[test]
    fn second_difference_by_composition() {
        let g = TorusGrid::new(1, 16, 1.0).unwrap();
        let h = g.h();
        let u = GridFunction::from_fn(&g, |x| {
            (2.0 * std::f64::consts::PI * x[0]).sin() + x[0] * x[0]
        });
        let dd = u.delta(&e(1, 0), h).unwrap().delta(&e(1, 0), -h).unwrap();
        for i in 0..g.len() {
            let up = u.at(g.neighbor(i, &[1]));
            let dn = u.at(g.neighbor(i, &[-1]));
            let want = (up - 2.0 * u.at(i) + dn) / (h * h);
            assert!((dd.at(i) - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn norms() {
        let g = TorusGrid::new(1, 2, 2.0).unwrap();
        assert_eq!(GridFunction::zeros(&g).lp_norm(2.0), 0.0);
        let u = GridFunction::constant(&g, 1.0);
        assert!((u.lp_norm(2.0) - 2f64.sqrt()).abs() < 1e-15);
        let mut spike = GridFunction::zeros(&TorusGrid::new(2, 4, 1.0).unwrap());
        spike.values_mut()[5] = -3.5;
        assert_eq!(spike.sup_norm(), 3.5);
        assert_eq!(spike.lp_norm(f64::INFINITY), 3.5);
    }

    #[test]
    fn vector_valued_norm_uses_pointwise_magnitude() {
        let g = TorusGrid::new(1, 2, 2.0).unwrap();
        let u = GridFunction::from_components(&g, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(u.sup_norm(), 5.0);
        assert!((u.lp_norm(1.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn restriction() {
        let u = line(4, 1.0, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u.restrict(1).unwrap(), u);
        assert_eq!(u.restrict(2).unwrap().values(), &[1.0, 3.0]);
        assert!(u.restrict(3).is_err());

        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let v = GridFunction::from_fn(&g, |x| x[0] * 10.0 + x[1]);
        assert_eq!(
            v.restrict(2).unwrap().restrict(2).unwrap(),
            v.restrict(4).unwrap()
        );
        let r = v.restrict(4).unwrap();
        assert_eq!(r.grid().n(), 4);
        assert_eq!(r.at(r.grid().index(&[1, 2])), v.at(g.index(&[4, 8])));
    }

    #[test]
    fn csv_export() {
        let g = TorusGrid::new(2, 2, 1.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0] + 2.0 * x[1]);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x_1,x_2,value"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("0.5,0.5,1.5"));
    }

    fn random_field(g: &TorusGrid, seed: &[f64]) -> GridFunction {
        GridFunction::from_values(g, seed.iter().cycle().take(g.len()).copied().collect()).unwrap()
    }

    fn offset() -> impl Strategy<Value = StencilVector> {
        (-3i64..=3, -3i64..=3).prop_map(|(a, b)| StencilVector::new(vec![a, b]).unwrap())
    }

    fn scale(vals: &[f64]) -> f64 {
        vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn summation_by_parts(
            uv in proptest::collection::vec(-1.0f64..1.0, 97),
            vv in proptest::collection::vec(-1.0f64..1.0, 89),
            lambda in offset(),
            n in 8usize..14,
        ) {
            let g = TorusGrid::new(2, n, 1.3).unwrap();
            let h = g.h();
            let (u, v) = (random_field(&g, &uv), random_field(&g, &vv));
            let lhs = v.inner(&u.delta(&lambda, h).unwrap()).unwrap();
            let mid = v.delta(&-&lambda, h).unwrap().inner(&u).unwrap();
            let rhs = -v.delta(&lambda, -h).unwrap().inner(&u).unwrap();
            let tol = 1e-12 * u.lp_norm(2.0) * v.lp_norm(2.0) / h;
            prop_assert!((lhs - mid).abs() <= tol);
            prop_assert!((lhs - rhs).abs() <= tol);
        }

        #[test]
        fn leibniz(
            uv in proptest::collection::vec(-1.0f64..1.0, 53),
            vv in proptest::collection::vec(-1.0f64..1.0, 61),
            lambda in offset(),
        ) {
            let g = TorusGrid::new(2, 9, 1.0).unwrap();
            let h = g.h();
            let (u, v) = (random_field(&g, &uv), random_field(&g, &vv));
            let lhs = (&u * &v).delta(&lambda, h).unwrap();
            let rhs = &(&u * &v.delta(&lambda, h).unwrap())
                + &(&u.delta(&lambda, h).unwrap() * &v.shift(&lambda).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * scale(lhs.values()).max(1.0 / h));
        }

        #[test]
        fn squared_difference_identity(
            vv in proptest::collection::vec(-1.0f64..1.0, 71),
            lambda in offset(),
        ) {
            let g = TorusGrid::new(2, 10, 1.0).unwrap();
            let h = g.h();
            let v = random_field(&g, &vv);
            let dv = v.delta(&lambda, h).unwrap();
            let lhs = &v * &dv;
            let rhs = (&v * &v).delta(&lambda, h).unwrap().zip_with(&dv, |a, b| 0.5 * (a - h * b * b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * (1.0 / h) * 4.0);
        }

        #[test]
        fn shifted_difference_composition(
            uv in proptest::collection::vec(-1.0f64..1.0, 67),
            alpha in offset(),
            beta in offset(),
        ) {
            let g = TorusGrid::new(2, 15, 1.0).unwrap();
            let h = g.h();
            let u = random_field(&g, &uv);
            let lhs = u.delta(&beta, h).unwrap().shift(&alpha).unwrap();
            let rhs = &u.delta(&(&alpha + &beta), h).unwrap() - &u.delta(&alpha, h).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * 4.0 / h);
        }

        #[test]
        fn homogeneity_and_embedding(
            uv in proptest::collection::vec(-5.0f64..5.0, 41),
            alpha in -3.0f64..3.0,
            p in 1.0f64..6.0,
        ) {
            let g = TorusGrid::new(2, 8, 0.7).unwrap();
            let u = random_field(&g, &uv);
            let lhs = u.scale(alpha).lp_norm(p);
            prop_assert!((lhs - alpha.abs() * u.lp_norm(p)).abs() <= 1e-12 * lhs.max(1e-300));
            let bound = g.h().powf(-(g.dim() as f64) / p) * u.lp_norm(p);
            prop_assert!(u.sup_norm() <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn difference_bounded_by_w1_norm(
            k1 in -3i64..=3,
            k2 in -3i64..=3,
            lambda in offset(),
            p in prop_oneof![Just(1.0), Just(2.0), Just(4.0), Just(f64::INFINITY)],
        ) {
            let g = TorusGrid::new(2, 32, 1.0).unwrap();
            let h = g.h();
            let w = 2.0 * std::f64::consts::PI;
            let v = GridFunction::from_fn(&g, |x| (w * (k1 as f64 * x[0] + k2 as f64 * x[1])).sin());
            let w1 = v.lp_norm(p)
                + (0..2).map(|i| v.delta(&e(2, i), h).unwrap().lp_norm(p)).sum::<f64>();
            let lhs = v.delta(&lambda, h).unwrap().lp_norm(p);
            prop_assert!(lhs <= lambda.norm() * w1 * (1.0 + 1e-12) + 1e-12);
        }
    }
}
