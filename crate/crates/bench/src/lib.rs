//! Fixtures shared by the criterion benchmarks.

use fdspde::config::RunConfig;
use fdspde::{GridFunction, ProblemData, StencilSpec, TorusGrid};

/// Stencil, data and grid of a preset, with `n` points per axis.
pub fn preset_problem(name: &str, n: usize) -> (StencilSpec, ProblemData, TorusGrid) {
    let text = format!("[problem]\npreset = {name:?}\n[grid]\nn = {n}\n");
    let config = RunConfig::from_toml_str(&text).expect("preset loads");
    (
        config.build_stencil().expect("stencil builds"),
        config.problem_data().expect("data builds"),
        config.grid().expect("grid builds"),
    )
}

/// A smooth field to apply operators to.
pub fn smooth_field(grid: &TorusGrid) -> GridFunction {
    let period = grid.period();
    GridFunction::from_fn(grid, |x| {
        x.iter()
            .map(|xi| (std::f64::consts::TAU * xi / period).sin())
            .product()
    })
}
