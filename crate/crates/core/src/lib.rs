//! Finite difference semidiscretization of parabolic, possibly degenerate,
//! stochastic PDEs
//!
//! ```text
//! du = (D_i(a^{ij} D_j u) + b^i D_i u + c u + f) dt + (nu^r u + g^r) dw^r
//! ```
//!
//! on a periodic lattice, together with the machinery to time-step the
//! resulting SDE system, accelerate it with Richardson extrapolation in the
//! mesh width `h`, and measure convergence orders against exact references.
//!
//! The spatial operator is
//!
//! ```text
//! L^h u = sum_{l in L0} d_{-h,l}(a^l d_{h,l} u) + sum_{g in L1} p^g d_{h,g} u + sum_{g in L1} c^g T_{h,g} u
//! ```
//!
//! with `d_{h,l} u(x) = (u(x + h l) - u(x)) / h` and `T_{h,g} u(x) = u(x + h g)`.

// `!(x > 0.0)` is used throughout to reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix and stencil formulas.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod field;
pub mod grid;
pub mod harness;
pub mod integrator;
pub mod noise;
pub mod oracle;
pub mod richardson;
pub mod stencil;
pub mod taylor;
pub mod weights;

pub use error::{Error, Result};
pub use field::{Coefficient, FieldSpec, TrigPolynomial, TrigTerm};
pub use grid::{apply_lh, AssembledOperator, GridFunction, TorusGrid};
pub use harness::{fit_order, OrderFit, StudyConfig, StudyReport};
pub use integrator::{integrate, Method, ProblemData, SchemeConfig, Trajectory};
pub use noise::{coarsen_path, sample_path, BrownianPath};
pub use richardson::{extrapolate, vandermonde_weights, ExtrapolationPlan};
pub use stencil::{StencilSpec, StencilVector};
