//! Time stepping of the semidiscrete system
//!
//! ```text
//! du = (L^h u + f) dt + (nu^r u + g^r) dw^r,   u_0 = psi on the grid
//! ```
//!
//! by Euler-Maruyama, optionally with the drift taken implicitly. The noise
//! is always evaluated at the left end of the step (Ito).

mod bicgstab;

pub use bicgstab::{bicgstab, SolveStats};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Coefficient;
use crate::grid::{sample_coefficient, AssembledOperator, GridFunction, TorusGrid};
use crate::noise::{coarsen_path, BrownianPath};
use crate::stencil::StencilSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExplicitEuler,
    DriftImplicitEuler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ExplicitEuler => "explicit-euler",
            Method::DriftImplicitEuler => "drift-implicit-euler",
        }
    }
}

/// Relative residual at which the implicit solve stops.
pub const DEFAULT_SOLVER_TOLERANCE: f64 = 1e-12;
const DEFAULT_MAX_ITERATIONS: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub method: Method,
    pub dt: f64,
    /// Reject explicit runs whose CFL number exceeds 1.
    pub cfl_check: bool,
    pub solver_tolerance: f64,
    pub max_iterations: usize,
    /// Times at which states are recorded besides `t = 0`; empty records
    /// only the final state.
    pub record_times: Vec<f64>,
}

impl SchemeConfig {
    pub fn new(method: Method, dt: f64) -> Self {
        SchemeConfig {
            method,
            dt,
            cfl_check: true,
            solver_tolerance: DEFAULT_SOLVER_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            record_times: Vec::new(),
        }
    }

    pub fn explicit(dt: f64) -> Self {
        Self::new(Method::ExplicitEuler, dt)
    }

    pub fn implicit(dt: f64) -> Self {
        Self::new(Method::DriftImplicitEuler, dt)
    }

    pub fn without_cfl_check(mut self) -> Self {
        self.cfl_check = false;
        self
    }

    pub fn recording(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }
}

/// Initial datum and free terms.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub psi: Coefficient,
    pub f: Coefficient,
    /// One additive noise term per Wiener process; missing entries are zero.
    pub g: Vec<Coefficient>,
}

impl ProblemData {
    pub fn new(psi: impl Into<Coefficient>) -> Self {
        ProblemData {
            psi: psi.into(),
            f: Coefficient::zero(),
            g: Vec::new(),
        }
    }

    pub fn with_forcing(mut self, f: impl Into<Coefficient>) -> Self {
        self.f = f.into();
        self
    }

    pub fn with_additive_noise(mut self, g: Vec<Coefficient>) -> Self {
        self.g = g;
        self
    }

    /// Every datum multiplied by `weight`.
    pub fn weighted(&self, weight: &Coefficient) -> Self {
        let mul = |c: &Coefficient| c.zip(weight, |a, b| a * b);
        ProblemData {
            psi: mul(&self.psi),
            f: mul(&self.f),
            g: self.g.iter().map(mul).collect(),
        }
    }

    fn g_or_zero(&self, r: usize) -> Coefficient {
        self.g.get(r).cloned().unwrap_or_else(Coefficient::zero)
    }
}

/// Recorded states of one integration.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
}

impl Trajectory {
    pub fn final_state(&self) -> &GridFunction {
        self.states
            .last()
            .expect("trajectories hold at least one state")
    }

    pub fn grid(&self) -> &TorusGrid {
        self.states[0].grid()
    }

    /// Rows `(t, x_1..x_d, value)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.grid().dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x_{i}")));
        header.push("value".into());
        w.write_record(&header)?;
        let mut x = vec![0.0; dim];
        for (t, state) in self.times.iter().zip(&self.states) {
            for i in 0..state.grid().len() {
                state.grid().point_into(i, &mut x);
                let mut row = Vec::with_capacity(dim + 2);
                row.push(t.to_string());
                row.extend(x.iter().map(|v| v.to_string()));
                row.push(state.at(i).to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameters of one run, for reproducibility records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub method: Method,
    pub dt: f64,
    pub steps: usize,
    pub h: f64,
    pub n: usize,
    pub dim: usize,
    pub processes: usize,
    pub cfl_number: f64,
    pub cfl_margin: f64,
    pub max_solver_iterations: usize,
}

/// `dt (sum_l 2 sup a^l |l|^2 / h^2 + sum_g sup p^g / h + sum_g sup |c^g|)`
/// with suprema over the grid points at the given times.
pub fn cfl_number(spec: &StencilSpec, grid: &TorusGrid, dt: f64, times: &[f64]) -> f64 {
    let sup = |c: &Coefficient, abs: bool| -> f64 {
        times
            .iter()
            .map(|&t| {
                sample_coefficient(c, grid, t)
                    .values()
                    .iter()
                    .map(|v| if abs { v.abs() } else { v.max(0.0) })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    let h = grid.h();
    let mut rate = 0.0;
    for (lambda, a) in spec.second_order() {
        rate += 2.0 * sup(a, false) * lambda.norm_sq() as f64 / (h * h);
    }
    for (_, p, c) in spec.first_and_zero_order() {
        rate += sup(p, false) / h + sup(c, true);
    }
    dt * rate
}

fn sample_all(cs: &[Coefficient], grid: &TorusGrid, t: f64) -> Vec<GridFunction> {
    cs.iter().map(|c| sample_coefficient(c, grid, t)).collect()
}

/// Cached operator and coefficient fields for repeated steps on one grid.
struct Stepper<'a> {
    spec: &'a StencilSpec,
    problem: &'a ProblemData,
    grid: TorusGrid,
    op: AssembledOperator,
    f: GridFunction,
    g: Vec<GridFunction>,
    nu: Vec<GridFunction>,
    processes: usize,
    config: &'a SchemeConfig,
    work: Vec<f64>,
    max_iterations_seen: usize,
}

impl<'a> Stepper<'a> {
    fn new(
        spec: &'a StencilSpec,
        problem: &'a ProblemData,
        grid: &TorusGrid,
        processes: usize,
        config: &'a SchemeConfig,
    ) -> Result<Self> {
        if spec.noise_count() > processes {
            return Err(Error::InvalidArgument(format!(
                "stencil has {} noise multipliers but the path drives {processes} processes",
                spec.noise_count()
            )));
        }
        if problem.g.len() > processes {
            return Err(Error::InvalidArgument(format!(
                "{} additive noise terms but the path drives {processes} processes",
                problem.g.len()
            )));
        }
        let t0 = 0.0;
        let op_time = match config.method {
            Method::ExplicitEuler => t0,
            Method::DriftImplicitEuler => t0 + config.dt,
        };
        let op = AssembledOperator::assemble(spec, grid, op_time)?;
        let g: Vec<Coefficient> = (0..processes).map(|r| problem.g_or_zero(r)).collect();
        let nu: Vec<Coefficient> = (0..processes)
            .map(|r| spec.nu().get(r).cloned().unwrap_or_else(Coefficient::zero))
            .collect();
        Ok(Stepper {
            spec,
            problem,
            grid: grid.clone(),
            op,
            f: sample_coefficient(&problem.f, grid, t0),
            g: sample_all(&g, grid, t0),
            nu: sample_all(&nu, grid, t0),
            processes,
            config,
            work: vec![0.0; grid.len()],
            max_iterations_seen: 0,
        })
    }

    fn refresh(&mut self, t: f64) {
        if !self.problem.f.is_time_independent() {
            self.f = sample_coefficient(&self.problem.f, &self.grid, t);
        }
        for r in 0..self.processes {
            let g = self.problem.g_or_zero(r);
            if !g.is_time_independent() {
                self.g[r] = sample_coefficient(&g, &self.grid, t);
            }
            if let Some(nu) = self.spec.nu().get(r) {
                if !nu.is_time_independent() {
                    self.nu[r] = sample_coefficient(nu, &self.grid, t);
                }
            }
        }
        let op_time = match self.config.method {
            Method::ExplicitEuler => t,
            Method::DriftImplicitEuler => t + self.config.dt,
        };
        if !self.spec.is_autonomous() && self.op.time() != op_time {
            self.op.reweight(self.spec, op_time);
        }
    }

    /// `u + dt f + sum_r dw^r (nu^r u + g^r)`, the explicit part of a step.
    fn explicit_part(&self, u: &[f64], dt: f64, dw: &[f64], out: &mut [f64]) {
        let f = self.f.values();
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = u[i] + dt * f[i];
            for r in 0..self.processes {
                v += dw[r] * (self.nu[r].values()[i] * u[i] + self.g[r].values()[i]);
            }
            *o = v;
        }
    }

    fn step(&mut self, step: usize, t: f64, dt: f64, dw: &[f64], u: &mut Vec<f64>) -> Result<()> {
        self.refresh(t);
        let mut next = vec![0.0; u.len()];
        self.explicit_part(u, dt, dw, &mut next);
        match self.config.method {
            Method::ExplicitEuler => {
                self.op.apply_into(u, &mut self.work);
                for (n, l) in next.iter_mut().zip(&self.work) {
                    *n += dt * l;
                }
            }
            Method::DriftImplicitEuler => {
                let rhs = next.clone();
                let op = &self.op;
                let stats = bicgstab(
                    |x, y| {
                        op.apply_into(x, y);
                        for (yi, xi) in y.iter_mut().zip(x) {
                            *yi = xi - dt * *yi;
                        }
                    },
                    &rhs,
                    &mut next,
                    self.config.solver_tolerance,
                    self.config.max_iterations,
                );
                self.max_iterations_seen = self.max_iterations_seen.max(stats.iterations);
                if !stats.converged {
                    return Err(Error::SolverDiverged {
                        step,
                        iterations: stats.iterations,
                        residual: stats.residual,
                    });
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { step, time: t + dt });
        }
        *u = next;
        Ok(())
    }
}

/// One explicit Euler-Maruyama step from `(t, u)`.
pub fn step_explicit(
    spec: &StencilSpec,
    t: f64,
    u: &GridFunction,
    dt: f64,
    dw: &[f64],
    problem: &ProblemData,
) -> Result<GridFunction> {
    single_step(spec, t, u, dt, dw, problem, Method::ExplicitEuler)
}

/// One step with the drift implicit, `(I - dt L^h_{t+dt}) u' = u + dt f_t +
/// sum_r dw^r (nu^r_t u + g^r_t)`.
pub fn step_drift_implicit(
    spec: &StencilSpec,
    t: f64,
    u: &GridFunction,
    dt: f64,
    dw: &[f64],
    problem: &ProblemData,
) -> Result<GridFunction> {
    single_step(spec, t, u, dt, dw, problem, Method::DriftImplicitEuler)
}

fn single_step(
    spec: &StencilSpec,
    t: f64,
    u: &GridFunction,
    dt: f64,
    dw: &[f64],
    problem: &ProblemData,
    method: Method,
) -> Result<GridFunction> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let config = SchemeConfig::new(method, dt);
    let mut stepper = Stepper::new(spec, problem, u.grid(), dw.len(), &config)?;
    let mut values = u.values().to_vec();
    stepper.step(0, t, dt, dw, &mut values)?;
    GridFunction::from_values(u.grid(), values)
}

/// Number of steps of size `dt` in `[0, horizon]`, if `dt` divides it.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} does not divide T = {horizon}"
        )));
    }
    Ok(steps as usize)
}

/// Integrates from `psi` over the horizon of `path`, coarsening the path to
/// the configured step. Returns the trajectory and its run manifest.
pub fn integrate_with_manifest(
    spec: &StencilSpec,
    problem: &ProblemData,
    grid: &TorusGrid,
    path: &BrownianPath,
    config: &SchemeConfig,
) -> Result<(Trajectory, RunManifest)> {
    let horizon = path.horizon();
    let steps = step_count(horizon, config.dt)?;
    if !path.steps().is_multiple_of(steps) {
        return Err(Error::InvalidArgument(format!(
            "path with {} steps cannot drive {steps} steps",
            path.steps()
        )));
    }
    let path = coarsen_path(path, path.steps() / steps)?;
    let dt = path.dt();
    let mut record: Vec<usize> = config
        .record_times
        .iter()
        .map(|&t| {
            let n = (t / dt).round();
            if n < 0.0 || n > steps as f64 || (n * dt - t).abs() > 1e-9 * horizon.max(t) {
                Err(Error::InvalidArgument(format!(
                    "record time {t} is not on the time grid of step {dt}"
                )))
            } else {
                Ok(n as usize)
            }
        })
        .collect::<Result<_>>()?;
    record.push(steps);
    record.sort_unstable();
    record.dedup();

    let sample_times = [0.0, 0.5 * horizon, horizon];
    let cfl = cfl_number(spec, grid, dt, &sample_times);
    if config.cfl_check && config.method == Method::ExplicitEuler && cfl > 1.0 + 1e-12 {
        return Err(Error::CflViolation { number: cfl });
    }

    let mut stepper = Stepper::new(spec, problem, grid, path.processes(), config)?;
    let mut u = sample_coefficient(&problem.psi, grid, 0.0).into_values();
    let mut times = vec![0.0];
    let mut states = vec![GridFunction::from_values(grid, u.clone())?];
    let mut next_record = record.iter().copied().filter(|&n| n > 0).peekable();
    for n in 0..steps {
        stepper.step(n, path.time(n), dt, path.step(n), &mut u)?;
        if next_record.peek() == Some(&(n + 1)) {
            next_record.next();
            times.push(path.time(n + 1));
            states.push(GridFunction::from_values(grid, u.clone())?);
        }
    }
    let manifest = RunManifest {
        seed: path.seed(),
        method: config.method,
        dt,
        steps,
        h: grid.h(),
        n: grid.n(),
        dim: grid.dim(),
        processes: path.processes(),
        cfl_number: cfl,
        cfl_margin: 1.0 - cfl,
        max_solver_iterations: stepper.max_iterations_seen,
    };
    Ok((Trajectory { times, states }, manifest))
}

/// [`integrate_with_manifest`] without the manifest.
pub fn integrate(
    spec: &StencilSpec,
    problem: &ProblemData,
    grid: &TorusGrid,
    path: &BrownianPath,
    config: &SchemeConfig,
) -> Result<Trajectory> {
    integrate_with_manifest(spec, problem, grid, path, config).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_path;
    use crate::stencil::StencilVector;
    use std::f64::consts::TAU;

    fn e() -> StencilVector {
        StencilVector::unit(1, 0)
    }

    fn heat(a: f64) -> StencilSpec {
        StencilSpec::builder(1)
            .second_order(e(), a)
            .first_order(StencilVector::zero(1), 0.0, 0.0)
            .first_order(e(), 0.0, 0.0)
            .first_order(-e(), 0.0, 0.0)
            .build()
            .unwrap()
    }

    fn reaction(c: f64) -> StencilSpec {
        StencilSpec::builder(1)
            .first_order(StencilVector::zero(1), 0.0, c)
            .build()
            .unwrap()
    }

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(1, n, 1.0).unwrap()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = grid(8);
        let u = GridFunction::zeros(&g);
        let out = step_explicit(&heat(1.0), 0.0, &u, 1e-3, &[0.3], &ProblemData::new(0.0)).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn pure_quadrature() {
        let g = grid(8);
        let u = GridFunction::from_fn(&g, |x| x[0]);
        let zero = reaction(0.0);
        let data = ProblemData::new(0.0).with_forcing(1.0);
        let ex = step_explicit(&zero, 0.0, &u, 0.1, &[], &data).unwrap();
        let im = step_drift_implicit(&zero, 0.0, &u, 0.1, &[], &data).unwrap();
        assert_eq!(ex, u.map(|v| v + 0.1));
        assert_eq!(im, ex);
    }

    #[test]
    fn scalar_growth_recursions() {
        let g = grid(5);
        let path = sample_path(0, 1.0, 10, 0).unwrap();
        let data = ProblemData::new(Coefficient::spatial(|x, _| 1.0 + x[0]));
        let (c, dt) = (0.7, 0.1);
        let ex = integrate(&reaction(c), &data, &g, &path, &SchemeConfig::explicit(dt)).unwrap();
        let im = integrate(&reaction(-c), &data, &g, &path, &SchemeConfig::implicit(dt)).unwrap();
        for i in 0..g.len() {
            let u0 = 1.0 + g.point(i)[0];
            let want_ex = u0 * (1.0 + c * dt).powi(10);
            let want_im = u0 * (1.0 + c * dt).powi(-10);
            assert!((ex.final_state().at(i) - want_ex).abs() < 1e-13 * want_ex);
            assert!((im.final_state().at(i) - want_im).abs() < 1e-12 * want_im);
        }
    }

    #[test]
    fn implicit_survives_stiff_steps() {
        let g = grid(32);
        let psi = Coefficient::spatial(|x, _| (TAU * x[0]).sin() + 0.5 * (5.0 * TAU * x[0]).cos());
        let data = ProblemData::new(psi);
        let dt = 0.01; // CFL number 2 dt n^2 = 20
        let path = sample_path(0, 0.2, 20, 0).unwrap();
        let blown = integrate(
            &heat(1.0),
            &data,
            &g,
            &path,
            &SchemeConfig::explicit(dt).without_cfl_check(),
        );
        let exploded = match blown {
            Err(Error::Unstable { .. }) => true,
            Ok(t) => t.final_state().sup_norm() > 1e3,
            Err(e) => panic!("{e}"),
        };
        assert!(exploded);
        assert!(matches!(
            integrate(&heat(1.0), &data, &g, &path, &SchemeConfig::explicit(dt)),
            Err(Error::CflViolation { .. })
        ));
        let im = integrate(&heat(1.0), &data, &g, &path, &SchemeConfig::implicit(dt)).unwrap();
        let initial = sample_coefficient(&data.psi, &g, 0.0).sup_norm();
        for s in &im.states {
            assert!(s.sup_norm() <= initial);
        }
    }

    #[test]
    fn mass_is_conserved() {
        let g = grid(40);
        let spec = StencilSpec::builder(1)
            .second_order(
                e(),
                Coefficient::spatial(|x, _| 1.0 + 0.5 * (TAU * x[0]).sin()),
            )
            .first_order(StencilVector::zero(1), 0.0, 0.0)
            .first_order(e(), 2.0, 0.0)
            .first_order(-e(), 0.5, 0.0)
            .build()
            .unwrap();
        let data = ProblemData::new(Coefficient::spatial(|x, _| {
            (-20.0 * (x[0] - 0.5).powi(2)).exp()
        }));
        let path = sample_path(0, 0.01, 100, 0).unwrap();
        let traj = integrate(
            &spec,
            &data,
            &g,
            &path,
            &SchemeConfig::explicit(1e-4).recording((1..=10).map(|k| k as f64 * 1e-3).collect()),
        )
        .unwrap();
        assert_eq!(traj.states.len(), 11);
        let m0 = traj.states[0].integral();
        for s in &traj.states {
            assert!((s.integral() - m0).abs() <= 1e-12 * m0.abs());
            assert!(s.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_data_stays_zero_with_noise() {
        let g = grid(16);
        let spec = heat(1.0).with_noise(vec![0.5.into()]);
        let path = sample_path(3, 0.1, 100, 1).unwrap();
        for config in [SchemeConfig::explicit(1e-3), SchemeConfig::implicit(1e-3)] {
            let traj = integrate(&spec, &ProblemData::new(0.0), &g, &path, &config).unwrap();
            assert!(traj.states.iter().all(|s| s.sup_norm() == 0.0));
        }
    }

    #[test]
    fn path_is_coarsened_to_the_step() {
        let g = grid(4);
        let spec = reaction(0.0).with_noise(vec![1.0.into()]);
        let path = sample_path(9, 1.0, 8, 1).unwrap();
        let data = ProblemData::new(1.0);
        // u' = u (1 + dw): the product over the coarse increments
        let traj = integrate(&spec, &data, &g, &path, &SchemeConfig::explicit(0.25)).unwrap();
        let coarse = coarsen_path(&path, 2).unwrap();
        let want: f64 = (0..4).map(|n| 1.0 + coarse.step(n)[0]).product();
        assert!((traj.final_state().at(0) - want).abs() < 1e-14);
        assert!(integrate(&spec, &data, &g, &path, &SchemeConfig::explicit(0.3)).is_err());
        assert!(integrate(&spec, &data, &g, &path, &SchemeConfig::explicit(1.0 / 3.0)).is_err());
    }

    #[test]
    fn manifest_and_csv() {
        let g = grid(4);
        let path = sample_path(5, 0.5, 4, 0).unwrap();
        let (traj, manifest) = integrate_with_manifest(
            &heat(0.01),
            &ProblemData::new(1.0),
            &g,
            &path,
            &SchemeConfig::explicit(0.125),
        )
        .unwrap();
        assert_eq!(manifest.seed, 5);
        assert_eq!(manifest.steps, 4);
        assert!((manifest.cfl_number - 0.125 * 2.0 * 0.01 * 16.0).abs() < 1e-15);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,value\n0,0,1\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 4);
    }

    #[test]
    fn time_dependent_coefficients_are_refreshed() {
        // c(t) = t: u' = u (1 + t_n dt)
        let g = grid(3);
        let spec = StencilSpec::builder(1)
            .first_order(
                StencilVector::zero(1),
                0.0,
                Coefficient::general(|t, _, _| t),
            )
            .build()
            .unwrap();
        let path = sample_path(0, 1.0, 4, 0).unwrap();
        let ex = integrate(
            &spec,
            &ProblemData::new(1.0),
            &g,
            &path,
            &SchemeConfig::explicit(0.25),
        )
        .unwrap();
        let want: f64 = (0..4).map(|n| 1.0 + 0.25 * (n as f64 * 0.25)).product();
        assert!((ex.final_state().at(1) - want).abs() < 1e-14);
        let im = integrate(
            &spec,
            &ProblemData::new(1.0),
            &g,
            &path,
            &SchemeConfig::implicit(0.25),
        )
        .unwrap();
        let want: f64 = (1..=4)
            .map(|n| 1.0 / (1.0 - 0.25 * (n as f64 * 0.25)))
            .product();
        assert!((im.final_state().at(1) - want).abs() < 1e-12);
    }
}
