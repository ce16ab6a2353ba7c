//! Stencil sets `L0`, `L1` and the coefficient fields that define `L^h`.
//!
//! Offsets are integer lattice vectors, so any linearly dependent subset of
//! `L = L0 u -L0 u L1` is automatically dependent over the rationals and the
//! grids `h Z^d` nest exactly under mesh refinement.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Coefficient;

/// An integer lattice offset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StencilVector(Vec<i64>);

impl StencilVector {
    pub fn new(coords: Vec<i64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument(
                "stencil vectors need at least one coordinate".into(),
            ));
        }
        Ok(StencilVector(coords))
    }

    pub fn zero(dim: usize) -> Self {
        StencilVector(vec![0; dim])
    }

    /// The standard basis vector `e_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut v = vec![0; dim];
        v[i] = 1;
        StencilVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Squared Euclidean length.
    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Largest coordinate magnitude.
    pub fn reach(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

impl Neg for &StencilVector {
    type Output = StencilVector;
    fn neg(self) -> StencilVector {
        StencilVector(self.0.iter().map(|c| -c).collect())
    }
}

impl Neg for StencilVector {
    type Output = StencilVector;
    fn neg(self) -> StencilVector {
        -&self
    }
}

impl Add for &StencilVector {
    type Output = StencilVector;
    fn add(self, rhs: &StencilVector) -> StencilVector {
        StencilVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &StencilVector {
    type Output = StencilVector;
    fn sub(self, rhs: &StencilVector) -> StencilVector {
        StencilVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl fmt::Display for StencilVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The data of `L^h`: second-order offsets `L0` with weights `a^l`,
/// first/zero-order offsets `L1` with weights `p^g` and `c^g`, and the noise
/// multipliers `nu^r`.
#[derive(Clone, Debug)]
pub struct StencilSpec {
    dim: usize,
    lambda0: Vec<StencilVector>,
    a: Vec<Coefficient>,
    lambda1: Vec<StencilVector>,
    p: Vec<Coefficient>,
    c: Vec<Coefficient>,
    nu: Vec<Coefficient>,
}

impl StencilSpec {
    pub fn builder(dim: usize) -> StencilBuilder {
        StencilBuilder {
            dim,
            lambda0: Vec::new(),
            a: Vec::new(),
            lambda1: Vec::new(),
            p: Vec::new(),
            c: Vec::new(),
            nu: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda0(&self) -> &[StencilVector] {
        &self.lambda0
    }

    pub fn lambda1(&self) -> &[StencilVector] {
        &self.lambda1
    }

    /// `(l, a^l)` pairs.
    pub fn second_order(&self) -> impl Iterator<Item = (&StencilVector, &Coefficient)> {
        self.lambda0.iter().zip(&self.a)
    }

    /// `(g, p^g, c^g)` triples.
    pub fn first_and_zero_order(
        &self,
    ) -> impl Iterator<Item = (&StencilVector, &Coefficient, &Coefficient)> {
        self.lambda1
            .iter()
            .zip(&self.p)
            .zip(&self.c)
            .map(|((g, p), c)| (g, p, c))
    }

    pub fn a_coeff(&self, lambda: &StencilVector) -> Option<&Coefficient> {
        self.lambda0
            .iter()
            .position(|l| l == lambda)
            .map(|i| &self.a[i])
    }

    pub fn p_coeff(&self, gamma: &StencilVector) -> Option<&Coefficient> {
        self.lambda1
            .iter()
            .position(|g| g == gamma)
            .map(|i| &self.p[i])
    }

    pub fn c_coeff(&self, gamma: &StencilVector) -> Option<&Coefficient> {
        self.lambda1
            .iter()
            .position(|g| g == gamma)
            .map(|i| &self.c[i])
    }

    pub fn nu(&self) -> &[Coefficient] {
        &self.nu
    }

    pub fn noise_count(&self) -> usize {
        self.nu.len()
    }

    pub fn with_noise(mut self, nu: Vec<Coefficient>) -> Self {
        self.nu = nu;
        self
    }

    /// True when no coefficient depends on time.
    pub fn is_autonomous(&self) -> bool {
        self.a
            .iter()
            .chain(&self.p)
            .chain(&self.c)
            .chain(&self.nu)
            .all(Coefficient::is_time_independent)
    }

    /// Largest coordinate magnitude over `L0 u L1`.
    pub fn reach(&self) -> i64 {
        self.lambda0
            .iter()
            .chain(&self.lambda1)
            .map(StencilVector::reach)
            .max()
            .unwrap_or(0)
    }
}

pub struct StencilBuilder {
    dim: usize,
    lambda0: Vec<StencilVector>,
    a: Vec<Coefficient>,
    lambda1: Vec<StencilVector>,
    p: Vec<Coefficient>,
    c: Vec<Coefficient>,
    nu: Vec<Coefficient>,
}

impl StencilBuilder {
    pub fn second_order(mut self, lambda: StencilVector, a: impl Into<Coefficient>) -> Self {
        self.lambda0.push(lambda);
        self.a.push(a.into());
        self
    }

    pub fn first_order(
        mut self,
        gamma: StencilVector,
        p: impl Into<Coefficient>,
        c: impl Into<Coefficient>,
    ) -> Self {
        self.lambda1.push(gamma);
        self.p.push(p.into());
        self.c.push(c.into());
        self
    }

    pub fn noise(mut self, nu: impl Into<Coefficient>) -> Self {
        self.nu.push(nu.into());
        self
    }

    /// Checks dimensions and duplicates. The membership and symmetry rules
    /// are reported by [`validate_stencil`] instead of rejected here.
    pub fn build(self) -> Result<StencilSpec> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        for v in self.lambda0.iter().chain(&self.lambda1) {
            if v.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: v.dim(),
                });
            }
        }
        let unique0: BTreeSet<_> = self.lambda0.iter().collect();
        let unique1: BTreeSet<_> = self.lambda1.iter().collect();
        if unique0.len() != self.lambda0.len() || unique1.len() != self.lambda1.len() {
            return Err(Error::InvalidStencil("duplicate stencil offsets".into()));
        }
        Ok(StencilSpec {
            dim: self.dim,
            lambda0: self.lambda0,
            a: self.a,
            lambda1: self.lambda1,
            p: self.p,
            c: self.c,
            nu: self.nu,
        })
    }
}

/// A point at which coefficient providers are sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub h: f64,
}

impl Sample {
    pub fn new(t: f64, x: Vec<f64>, h: f64) -> Self {
        Sample { t, x, h }
    }
}

/// A deterministic sample of the cube `[0, period)^dim`: a lattice with
/// `per_axis` points per axis, crossed with the given times and mesh widths.
pub fn lattice_samples(
    dim: usize,
    period: f64,
    per_axis: usize,
    times: &[f64],
    hs: &[f64],
) -> Vec<Sample> {
    let per_axis = per_axis.max(1);
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total * times.len() * hs.len());
    for &t in times {
        for &h in hs {
            for idx in 0..total {
                let mut rem = idx;
                let mut x = vec![0.0; dim];
                for xi in x.iter_mut().rev() {
                    *xi = period * (rem % per_axis) as f64 / per_axis as f64;
                    rem /= per_axis;
                }
                out.push(Sample::new(t, x, h));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        vector: StencilVector,
        dim: usize,
    },
    ZeroInLambda0,
    ZeroNotInLambda1,
    Lambda1NotSymmetric {
        missing: StencilVector,
    },
    NonzeroP0 {
        sample: Sample,
        value: f64,
    },
    NegativeA {
        lambda: StencilVector,
        sample: Sample,
        value: f64,
    },
    NegativeP {
        gamma: StencilVector,
        sample: Sample,
        value: f64,
    },
    Reconstruction {
        residual: f64,
        sample: Sample,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { vector, dim } => {
                write!(f, "offset {vector} does not have dimension {dim}")
            }
            Violation::ZeroInLambda0 => f.write_str("0 \u{2208} \u{039b}_0"),
            Violation::ZeroNotInLambda1 => f.write_str("0 \u{2209} \u{039b}_1"),
            Violation::Lambda1NotSymmetric { missing } => {
                write!(f, "\u{039b}_1 not symmetric: {missing} missing")
            }
            Violation::NonzeroP0 { sample, value } => {
                write!(
                    f,
                    "p^0 = {value} \u{2260} 0 at t={} x={:?}",
                    sample.t, sample.x
                )
            }
            Violation::NegativeA {
                lambda,
                sample,
                value,
            } => write!(
                f,
                "a^{lambda} = {value} < 0 at t={} x={:?} h={}",
                sample.t, sample.x, sample.h
            ),
            Violation::NegativeP {
                gamma,
                sample,
                value,
            } => write!(
                f,
                "p^{gamma} = {value} < 0 at t={} x={:?} h={}",
                sample.t, sample.x, sample.h
            ),
            Violation::Reconstruction { residual, sample } => write!(
                f,
                "reconstructed coefficients differ by {residual:e} at t={} x={:?}",
                sample.t, sample.x
            ),
        }
    }
}

/// Outcome of a stencil check; empty `violations` means the stencil passed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
        self.notes.extend(other.notes);
    }
}

/// Structural checks: `0 in L1 \ L0`, `L1 = -L1`, and `p^0 = 0` on `samples`.
pub fn validate_stencil(spec: &StencilSpec, samples: &[Sample]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for v in spec.lambda0.iter().chain(&spec.lambda1) {
        if v.dim() != spec.dim {
            report.violations.push(Violation::DimensionMismatch {
                vector: v.clone(),
                dim: spec.dim,
            });
        }
    }
    if spec.lambda0.iter().any(StencilVector::is_zero) {
        report.violations.push(Violation::ZeroInLambda0);
    }
    let set1: BTreeSet<_> = spec.lambda1.iter().cloned().collect();
    if !set1.iter().any(StencilVector::is_zero) {
        report.violations.push(Violation::ZeroNotInLambda1);
    }
    for g in &spec.lambda1 {
        let neg = -g;
        if !set1.contains(&neg) {
            report
                .violations
                .push(Violation::Lambda1NotSymmetric { missing: neg });
        }
    }
    if let Some(p0) = spec.p_coeff(&StencilVector::zero(spec.dim)) {
        if !p0.is_zero() {
            for s in samples {
                let v = p0.eval(s.t, &s.x, s.h);
                if v != 0.0 {
                    report.violations.push(Violation::NonzeroP0 {
                        sample: s.clone(),
                        value: v,
                    });
                    break;
                }
            }
        }
    }
    report.notes.push(
        "linear dependence over the rationals: satisfied by construction (integer offsets)".into(),
    );
    report
}

/// Nonnegativity of every `a^l` and `p^g` on `samples`.
pub fn check_nonnegativity(spec: &StencilSpec, samples: &[Sample]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (lambda, a) in spec.second_order() {
        if let Some(s) = samples.iter().find(|s| a.eval(s.t, &s.x, s.h) < 0.0) {
            report.violations.push(Violation::NegativeA {
                lambda: lambda.clone(),
                sample: s.clone(),
                value: a.eval(s.t, &s.x, s.h),
            });
        }
    }
    for (gamma, p, _) in spec.first_and_zero_order() {
        if let Some(s) = samples.iter().find(|s| p.eval(s.t, &s.x, s.h) < 0.0) {
            report.violations.push(Violation::NegativeP {
                gamma: gamma.clone(),
                sample: s.clone(),
                value: p.eval(s.t, &s.x, s.h),
            });
        }
    }
    report
}

/// Continuum coefficients `(a, b, c)` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuumCoefficients {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ContinuumCoefficients {
    /// Max-norm distance between two coefficient triples.
    pub fn max_difference(&self, other: &ContinuumCoefficients) -> f64 {
        let da = self
            .a
            .iter()
            .flatten()
            .zip(other.a.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let db = self
            .b
            .iter()
            .zip(&other.b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        da.max(db).max((self.c - other.c).abs())
    }
}

/// The continuum operator induced by the `h = 0` stencil weights:
/// `a^{ij} = sum_l a_0^l l^i l^j`, `b^i = sum_g p_0^g g^i`, `c = sum_g c_0^g`.
pub fn reconstruct_pde(spec: &StencilSpec, t: f64, x: &[f64]) -> ContinuumCoefficients {
    let d = spec.dim;
    let mut a = vec![vec![0.0; d]; d];
    for (lambda, coeff) in spec.second_order() {
        let w = coeff.eval(t, x, 0.0);
        let l = lambda.coords();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += w * (l[i] * l[j]) as f64;
            }
        }
    }
    let mut b = vec![0.0; d];
    let mut c = 0.0;
    for (gamma, p, cc) in spec.first_and_zero_order() {
        let w = p.eval(t, x, 0.0);
        for (bi, gi) in b.iter_mut().zip(gamma.coords()) {
            *bi += w * *gi as f64;
        }
        c += cc.eval(t, x, 0.0);
    }
    ContinuumCoefficients { a, b, c }
}

fn min_over(coeff: &Coefficient, samples: &[Sample]) -> f64 {
    if let Some(v) = coeff.constant_value() {
        return v;
    }
    samples
        .iter()
        .map(|s| coeff.eval(s.t, &s.x, s.h))
        .fold(f64::INFINITY, f64::min)
}

/// Example-2.1 style decomposition for a diagonal diffusion matrix:
/// `L0 = {e_i}`, `L1 = {0, +-e_i}`, `a^{e_i} = a^{ii}`, `p^{e_i} = b^i + theta^i`,
/// `p^{-e_i} = theta^i`, `c^0 = c`.
///
/// `theta^i >= max(0, -b^i)` is checked on `samples`.
pub fn build_diagonal_stencil(
    a_diag: Vec<Coefficient>,
    b: Vec<Coefficient>,
    c: Coefficient,
    theta: &[f64],
    samples: &[Sample],
) -> Result<StencilSpec> {
    let d = a_diag.len();
    if b.len() != d || theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if b.len() != d { b.len() } else { theta.len() },
        });
    }
    for i in 0..d {
        let need = (-min_over(&b[i], samples)).max(0.0);
        if theta[i] < need || theta[i] < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "theta[{i}] = {} is below max(0, -b^{i}) = {need}",
                theta[i]
            )));
        }
    }
    let mut builder = StencilSpec::builder(d).first_order(StencilVector::zero(d), 0.0, c);
    for (i, a) in a_diag.into_iter().enumerate() {
        builder = builder.second_order(StencilVector::unit(d, i), a);
    }
    for i in 0..d {
        let e = StencilVector::unit(d, i);
        builder = builder
            .first_order(e.clone(), b[i].shifted(theta[i]), 0.0)
            .first_order(-e, theta[i], 0.0);
    }
    builder.build()
}

/// First-order shifts for [`build_diagdom_stencil`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiagDomShifts {
    /// Added to `p^{+-e_i} = +-b^i/2`.
    pub theta_axis: Vec<f64>,
    /// Used for `p^{+-(e_i+-e_j)}`.
    pub theta_cross: f64,
}

impl DiagDomShifts {
    /// Smallest shifts giving `p^g >= kappa` for `g != 0`, given bounds on `|b^i|`.
    pub fn minimal(kappa: f64, b_sup: &[f64]) -> Self {
        DiagDomShifts {
            theta_axis: b_sup.iter().map(|b| kappa + 0.5 * b.abs()).collect(),
            theta_cross: kappa,
        }
    }
}

/// Example-2.2 style decomposition of a diagonally dominant symmetric matrix
/// (`a^{ii} >= sum_{j != i} |a^{ij}|`) with
///
/// ```text
/// a^{e_i}       = a^{ii} - sum_{j != i} |a^{ij}|
/// a^{e_i + e_j} = (a^{ij})^+                       (i < j)
/// a^{e_i - e_j} = a^{e_j - e_i} = (a^{ij})^- / 2   (i < j)
/// ```
///
/// which reproduces `sum_l a^l l l^T = a` exactly. First and zero order
/// weights: `p^{+-e_i} = +-b^i/2 + theta^i`, `p^{+-(e_i+-e_j)} = theta^{ij}`,
/// `c^0 = c`.
///
/// Symmetry and dominance are checked on `samples`; shifts that leave a
/// negative `p` on the samples are rejected.
pub fn build_diagdom_stencil(
    a: Vec<Vec<Coefficient>>,
    b: Vec<Coefficient>,
    c: Coefficient,
    shifts: &DiagDomShifts,
    samples: &[Sample],
) -> Result<StencilSpec> {
    let d = a.len();
    if a.iter().any(|row| row.len() != d) || b.len() != d || shifts.theta_axis.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: b.len(),
        });
    }
    for s in samples {
        for i in 0..d {
            let aii = a[i][i].eval(s.t, &s.x, s.h);
            let mut off = 0.0;
            for j in 0..d {
                let aij = a[i][j].eval(s.t, &s.x, s.h);
                let aji = a[j][i].eval(s.t, &s.x, s.h);
                if (aij - aji).abs() > 1e-14 * (1.0 + aij.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "diffusion matrix not symmetric at x={:?}: a[{i}][{j}]={aij}, a[{j}][{i}]={aji}",
                        s.x
                    )));
                }
                if j != i {
                    off += aij.abs();
                }
            }
            if aii < off {
                return Err(Error::InvalidArgument(format!(
                    "diffusion matrix not diagonally dominant in row {i} at x={:?}: {aii} < {off}",
                    s.x
                )));
            }
        }
    }

    let zero = StencilVector::zero(d);
    let mut builder = StencilSpec::builder(d);
    let mut lambda1: Vec<(StencilVector, Coefficient)> = vec![(zero.clone(), Coefficient::zero())];

    for i in 0..d {
        let row: Vec<Coefficient> = (0..d)
            .filter(|&j| j != i)
            .map(|j| a[i][j].clone())
            .collect();
        let diag = a[i][i].clone();
        let weight = if row.iter().all(|r| r.constant_value().is_some())
            && diag.constant_value().is_some()
        {
            let off: f64 = row.iter().map(|r| r.constant_value().unwrap().abs()).sum();
            Coefficient::Constant(diag.constant_value().unwrap() - off)
        } else if row
            .iter()
            .chain(std::iter::once(&diag))
            .all(Coefficient::is_time_independent)
        {
            Coefficient::spatial(move |x, h| {
                diag.eval(0.0, x, h) - row.iter().map(|r| r.eval(0.0, x, h).abs()).sum::<f64>()
            })
        } else {
            Coefficient::general(move |t, x, h| {
                diag.eval(t, x, h) - row.iter().map(|r| r.eval(t, x, h).abs()).sum::<f64>()
            })
        };
        let e = StencilVector::unit(d, i);
        builder = builder.second_order(e.clone(), weight);
        let theta = shifts.theta_axis[i];
        lambda1.push((e.clone(), b[i].scaled(0.5).shifted(theta)));
        lambda1.push((-&e, b[i].scaled(-0.5).shifted(theta)));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let (ei, ej) = (StencilVector::unit(d, i), StencilVector::unit(d, j));
            let plus = &ei + &ej;
            let minus = &ei - &ej;
            builder = builder
                .second_order(plus.clone(), a[i][j].map(|v| v.max(0.0)))
                .second_order(minus.clone(), a[i][j].map(|v| 0.5 * (-v).max(0.0)))
                .second_order(-&minus, a[i][j].map(|v| 0.5 * (-v).max(0.0)));
            for g in [plus.clone(), -&plus, minus.clone(), -&minus] {
                lambda1.push((g, Coefficient::Constant(shifts.theta_cross)));
            }
        }
    }
    let c0 = c;
    let mut c0 = Some(c0);
    for (g, p) in lambda1 {
        let cc = if g.is_zero() {
            c0.take().unwrap_or_else(Coefficient::zero)
        } else {
            Coefficient::zero()
        };
        builder = builder.first_order(g, p, cc);
    }
    let spec = builder.build()?;
    let neg = check_nonnegativity(&spec, samples);
    if let Some(v) = neg.violations.first() {
        return Err(Error::InvalidArgument(format!(
            "shifts too small for a monotone stencil: {v}"
        )));
    }
    Ok(spec)
}

/// True iff `p^g >= kappa` for every `g in L1 \ {0}` on `samples`.
pub fn check_lower_bound_p(spec: &StencilSpec, kappa: f64, samples: &[Sample]) -> bool {
    spec.first_and_zero_order()
        .filter(|(g, _, _)| !g.is_zero())
        .all(|(_, p, _)| samples.iter().all(|s| p.eval(s.t, &s.x, s.h) >= kappa))
}
