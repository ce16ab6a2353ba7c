use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{GridFunction, TorusGrid};
use crate::error::{Error, Result};
use crate::field::Coefficient;
use crate::stencil::{StencilSpec, StencilVector};

/// Grids at least this large are swept in parallel.
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// `coeff(t, x, h)` at every point of `grid`.
pub fn sample_coefficient(coeff: &Coefficient, grid: &TorusGrid, t: f64) -> GridFunction {
    match coeff.constant_value() {
        Some(v) => GridFunction::constant(grid, v),
        None => GridFunction::from_fn(grid, |x| coeff.eval(t, x, grid.h())),
    }
}

fn check_spec(spec: &StencilSpec, grid: &TorusGrid) -> Result<()> {
    if spec.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: spec.dim(),
        });
    }
    for v in spec.lambda0().iter().chain(spec.lambda1()) {
        grid.check_reach(v)?;
    }
    Ok(())
}

/// `L^h u` at time `t`, composed literally from shifts and differences.
///
/// This is the reference path; [`AssembledOperator`] computes the same sum
/// from precomputed weights and is the one used for time stepping.
pub fn apply_lh(spec: &StencilSpec, t: f64, u: &GridFunction) -> Result<GridFunction> {
    let grid = u.grid();
    check_spec(spec, grid)?;
    let h = grid.h();
    let mut out = GridFunction::zeros(grid);
    for (lambda, a) in spec.second_order() {
        if a.is_zero() {
            continue;
        }
        let flux = &sample_coefficient(a, grid, t) * &u.delta(lambda, h)?;
        out.axpy(1.0, &flux.delta(lambda, -h)?)?;
    }
    for (gamma, p, c) in spec.first_and_zero_order() {
        if !p.is_zero() {
            out.axpy(
                1.0,
                &(&sample_coefficient(p, grid, t) * &u.delta(gamma, h)?),
            )?;
        }
        if !c.is_zero() {
            out.axpy(1.0, &(&sample_coefficient(c, grid, t) * &u.shift(gamma)?))?;
        }
    }
    Ok(out)
}

/// `L^h` on a fixed grid as a sparse matrix: for each stencil offset a
/// neighbour table and a weight field, so that
/// `(L^h u)(x) = sum_o w_o(x) u(x + h o)`.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    grid: TorusGrid,
    offsets: Vec<StencilVector>,
    /// `neighbors[o][i]` is the flat index of `x_i + h o`.
    neighbors: Vec<Vec<u32>>,
    /// `weights[o][i]` multiplies `u(x_i + h o)`.
    weights: Vec<Vec<f64>>,
    time: f64,
}

impl AssembledOperator {
    pub fn assemble(spec: &StencilSpec, grid: &TorusGrid, t: f64) -> Result<Self> {
        check_spec(spec, grid)?;
        if grid.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("grid too large to assemble".into()));
        }
        let mut offsets: BTreeMap<StencilVector, ()> = BTreeMap::new();
        offsets.insert(StencilVector::zero(grid.dim()), ());
        for l in spec.lambda0() {
            offsets.insert(l.clone(), ());
            offsets.insert(-l, ());
        }
        for g in spec.lambda1() {
            offsets.insert(g.clone(), ());
        }
        let offsets: Vec<StencilVector> = offsets.into_keys().collect();
        let neighbors = offsets
            .iter()
            .map(|o| {
                (0..grid.len())
                    .map(|i| grid.neighbor(i, o.coords()) as u32)
                    .collect()
            })
            .collect();
        let mut op = AssembledOperator {
            grid: grid.clone(),
            weights: vec![Vec::new(); offsets.len()],
            offsets,
            neighbors,
            time: t,
        };
        op.reweight(spec, t);
        Ok(op)
    }

    fn slot(&self, offset: &StencilVector) -> usize {
        self.offsets
            .binary_search(offset)
            .expect("offset registered at assembly")
    }

    /// Recomputes the weights at time `t`, keeping the neighbour tables.
    pub fn reweight(&mut self, spec: &StencilSpec, t: f64) {
        let n = self.grid.len();
        let h = self.grid.h();
        let inv_h2 = 1.0 / (h * h);
        let mut weights = vec![vec![0.0; n]; self.offsets.len()];
        let zero = self.slot(&StencilVector::zero(self.grid.dim()));
        for (lambda, a) in spec.second_order() {
            if a.is_zero() {
                continue;
            }
            let field = sample_coefficient(a, &self.grid, t);
            let back = &self.neighbors[self.slot(&-lambda)];
            let (fw, bw) = (self.slot(lambda), self.slot(&-lambda));
            for i in 0..n {
                let here = field.at(i) * inv_h2;
                let there = field.at(back[i] as usize) * inv_h2;
                weights[fw][i] += here;
                weights[bw][i] += there;
                weights[zero][i] -= here + there;
            }
        }
        for (gamma, p, c) in spec.first_and_zero_order() {
            let s = self.slot(gamma);
            if !p.is_zero() {
                let field = sample_coefficient(p, &self.grid, t);
                for i in 0..n {
                    let w = field.at(i) / h;
                    weights[s][i] += w;
                    weights[zero][i] -= w;
                }
            }
            if !c.is_zero() {
                let field = sample_coefficient(c, &self.grid, t);
                for i in 0..n {
                    weights[s][i] += field.at(i);
                }
            }
        }
        self.weights = weights;
        self.time = t;
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn offsets(&self) -> &[StencilVector] {
        &self.offsets
    }

    /// Weight field attached to `offset`, if it is part of the stencil.
    pub fn weight_field(&self, offset: &StencilVector) -> Option<&[f64]> {
        self.offsets
            .binary_search(offset)
            .ok()
            .map(|s| self.weights[s].as_slice())
    }

    /// `out = L^h u`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.grid.len());
        debug_assert_eq!(out.len(), self.grid.len());
        let row = |i: usize| -> f64 {
            let mut acc = 0.0;
            for (nb, w) in self.neighbors.iter().zip(&self.weights) {
                acc += w[i] * u[nb[i] as usize];
            }
            acc
        };
        if out.len() >= PARALLEL_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = row(i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = row(i);
            }
        }
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.grid() != &self.grid || u.components() != 1 {
            return Err(Error::GridMismatch(
                "operator assembled on a different grid".into(),
            ));
        }
        let mut out = vec![0.0; self.grid.len()];
        self.apply_into(u.values(), &mut out);
        GridFunction::from_values(&self.grid, out)
    }

    /// Largest `sum_{o != 0} |w_o(x)|`, the off-diagonal row mass.
    pub fn max_offdiagonal_mass(&self) -> f64 {
        let zero = self.slot(&StencilVector::zero(self.grid.dim()));
        (0..self.grid.len())
            .map(|i| {
                self.weights
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| *s != zero)
                    .map(|(_, w)| w[i].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::{build_diagdom_stencil, lattice_samples, DiagDomShifts};
    use std::f64::consts::PI;

    fn e(d: usize, i: usize) -> StencilVector {
        StencilVector::unit(d, i)
    }

    fn heat_1d(a: f64) -> StencilSpec {
        StencilSpec::builder(1)
            .second_order(e(1, 0), a)
            .first_order(StencilVector::zero(1), 0.0, 0.0)
            .first_order(e(1, 0), 0.0, 0.0)
            .first_order(-e(1, 0), 0.0, 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let g = TorusGrid::new(1, 10, 1.0).unwrap();
        let u = GridFunction::constant(&g, 2.5);
        assert_eq!(apply_lh(&heat_1d(1.3), 0.0, &u).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn central_second_difference() {
        let g = TorusGrid::new(1, 20, 1.0).unwrap();
        let h = g.h();
        let u = GridFunction::from_fn(&g, |x| {
            (2.0 * PI * x[0]).cos() + 0.3 * (6.0 * PI * x[0]).sin()
        });
        let lu = apply_lh(&heat_1d(1.0), 0.0, &u).unwrap();
        for i in 0..g.len() {
            let want =
                (u.at(g.neighbor(i, &[1])) - 2.0 * u.at(i) + u.at(g.neighbor(i, &[-1]))) / (h * h);
            assert!((lu.at(i) - want).abs() < 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn pure_zero_order_term() {
        let spec = StencilSpec::builder(1)
            .first_order(StencilVector::zero(1), 0.0, -1.7)
            .build()
            .unwrap();
        let g = TorusGrid::new(1, 7, 1.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0].exp());
        let lu = apply_lh(&spec, 0.0, &u).unwrap();
        assert_eq!(lu, u.scale(-1.7));
    }

    #[test]
    fn assembled_matches_reference_variable_coefficients() {
        let d = 2;
        let a12 = Coefficient::spatial(|x, _| 0.3 * (2.0 * PI * x[0]).sin());
        let a = vec![
            vec![
                Coefficient::spatial(|x, _| 1.0 + 0.2 * (2.0 * PI * x[1]).cos()),
                a12.clone(),
            ],
            vec![a12, Coefficient::Constant(1.5)],
        ];
        let b = vec![
            Coefficient::spatial(|x, _| (2.0 * PI * x[1]).sin()),
            Coefficient::Constant(-0.4),
        ];
        let c = Coefficient::general(|t, x, _| t * x[0] - 0.5);
        let samples = lattice_samples(d, 1.0, 5, &[0.0], &[0.0]);
        let spec =
            build_diagdom_stencil(a, b, c, &DiagDomShifts::minimal(0.1, &[1.0, 0.4]), &samples)
                .unwrap();
        let g = TorusGrid::new(2, 12, 1.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| {
            (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos() + x[0]
        });
        let t = 0.37;
        let reference = apply_lh(&spec, t, &u).unwrap();
        let op = AssembledOperator::assemble(&spec, &g, t).unwrap();
        let fast = op.apply(&u).unwrap();
        let tol = 1e-12 * reference.sup_norm();
        assert!(fast.max_abs_diff(&reference).unwrap() <= tol);

        let mut op = op;
        op.reweight(&spec, 0.9);
        let reference = apply_lh(&spec, 0.9, &u).unwrap();
        assert!(op.apply(&u).unwrap().max_abs_diff(&reference).unwrap() <= tol);
    }

    #[test]
    fn rows_sum_to_zero_order_weight() {
        let g = TorusGrid::new(1, 9, 1.0).unwrap();
        let op = AssembledOperator::assemble(&heat_1d(2.0), &g, 0.0).unwrap();
        let ones = GridFunction::constant(&g, 1.0);
        assert_eq!(op.apply(&ones).unwrap().sup_norm(), 0.0);
        assert!((op.max_offdiagonal_mass() - 4.0 / (g.h() * g.h())).abs() < 1e-9);
    }

    #[test]
    fn reach_is_checked() {
        let g = TorusGrid::new(1, 2, 1.0).unwrap();
        assert!(AssembledOperator::assemble(&heat_1d(1.0), &g, 0.0).is_err());
        let u = GridFunction::zeros(&g);
        assert!(apply_lh(&heat_1d(1.0), 0.0, &u).is_err());
    }
}
