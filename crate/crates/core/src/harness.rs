//! Convergence and extrapolation studies.
//!
//! A study solves one problem on the grids `n_j = n0 2^j` (and, for
//! extrapolation, on `n_j r_i` for the plan's ratios `r_i`), all driven by
//! coarsenings of one master Brownian path per replicate, and compares with a
//! reference on the coarsest grid `n0`. Errors are maximised over the
//! snapshot times and reported per level, replicate and norm; orders are
//! least-squares slopes of `log error` against `log h`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::TrigPolynomial;
use crate::grid::{GridFunction, TorusGrid};
use crate::integrator::{integrate_with_manifest, Method, ProblemData, RunManifest, SchemeConfig};
use crate::noise::{coarsen_path, replicate_seed, sample_path, BrownianPath};
use crate::oracle::{
    deterministic_field, geometric_field, time_discrete_field, ConstantCoefficients,
};
use crate::richardson::{extrapolate, vandermonde_weights, ExtrapolationPlan};
use crate::stencil::StencilSpec;

/// Two-sided normal quantile for 95% bands.
const Z95: f64 = 1.959_963_984_540_054;

/// Least-squares fit of `log err = slope log h + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
    /// Standard error of the slope; zero for two points.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

/// Fits `err ~ C h^slope` to `(h, err)` pairs.
pub fn fit_order(points: &[(f64, f64)]) -> Result<OrderFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an order fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(h, _)| !(h > 0.0)) {
        return Err(Error::InvalidArgument(
            "mesh widths must be positive".into(),
        ));
    }
    if points.iter().any(|&(_, e)| !(e > 0.0)) {
        return Err(Error::BelowFloor);
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all mesh widths are equal".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let std_error = if points.len() > 2 {
        (ssr / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(OrderFit {
        slope,
        intercept,
        residual: (ssr / m).sqrt(),
        std_error,
        ci_low: slope - Z95 * std_error,
        ci_high: slope + Z95 * std_error,
        points: points.len(),
    })
}

/// `log2(e_j / e_{j+1})` for consecutive levels.
pub fn local_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// An error functional on the coarse grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Norm {
    Sup,
    Lp(f64),
}

impl Norm {
    pub fn apply(self, u: &GridFunction) -> f64 {
        match self {
            Norm::Sup => u.sup_norm(),
            Norm::Lp(p) => u.lp_norm(p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Sup => "sup",
            Norm::Lp(_) => "lp",
        }
    }

    /// Exponent, `inf` for the sup norm.
    pub fn p(self) -> f64 {
        match self {
            Norm::Sup => f64::INFINITY,
            Norm::Lp(p) => p,
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Sup => f.write_str("sup"),
            Norm::Lp(p) => write!(f, "l{p}"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "sup" || s == "linf" {
            return Ok(Norm::Sup);
        }
        let p: f64 = s
            .strip_prefix('l')
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Config(format!("unknown norm {s:?}; use \"sup\" or \"l<p>\"")))?;
        if !(p >= 1.0) {
            return Err(Error::Config(format!(
                "norm exponent must be >= 1, got {p}"
            )));
        }
        Ok(Norm::Lp(p))
    }
}

impl TryFrom<String> for Norm {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Norm> for String {
    fn from(n: Norm) -> String {
        n.to_string()
    }
}

/// How the time step depends on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DtPolicy {
    /// The same `T / steps` on every grid.
    Fixed { steps: usize },
    /// `dt <= c h^2`: `N0 = ceil(T / (c h0^2))` steps on the coarsest grid
    /// and `N0 (n / n0)^2` on the others.
    Diffusive { c: f64 },
}

/// Constant-coefficient data with a closed-form reference.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    pub coeffs: ConstantCoefficients,
    pub nu: f64,
    pub psi: TrigPolynomial,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// The continuum solution.
    Oracle(OracleSpec),
    /// The continuum-in-space solution of the same time stepping; needs a
    /// fixed time step.
    TimeDiscrete(OracleSpec),
    /// The scheme itself on `extra_refinements` further halvings of the
    /// finest grid in the study.
    SelfReference { extra_refinements: usize },
}

impl Reference {
    pub fn label(&self) -> &'static str {
        match self {
            Reference::Oracle(_) => "oracle",
            Reference::TimeDiscrete(_) => "time-discrete oracle",
            Reference::SelfReference { .. } => "self-reference",
        }
    }
}

/// The problem a study solves.
#[derive(Clone, Debug)]
pub struct StudyProblem {
    pub dim: usize,
    pub period: f64,
    pub spec: StencilSpec,
    pub data: ProblemData,
    /// Number of Wiener processes.
    pub processes: usize,
    pub reference: Reference,
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub id: String,
    pub problem: StudyProblem,
    /// Points per axis on the coarsest grid.
    pub n0: usize,
    pub levels: usize,
    /// Number of cancelled expansion terms; `0` is a plain refinement study.
    pub k: usize,
    pub ratios: Option<Vec<u64>>,
    pub replicates: usize,
    pub seed: u64,
    pub norms: Vec<Norm>,
    /// Moment exponent of the aggregated errors.
    pub q: f64,
    pub horizon: f64,
    pub method: Method,
    pub dt: DtPolicy,
    /// Errors are maximised over `t = T m / snapshots`, `m = 1..=snapshots`.
    pub snapshots: usize,
    pub cfl_check: bool,
}

impl StudyConfig {
    pub fn plan(&self) -> Result<ExtrapolationPlan> {
        vandermonde_weights(self.k, self.ratios.as_deref())
    }

    /// Points per axis at level `j`.
    pub fn level_n(&self, j: usize) -> usize {
        self.n0 << j
    }

    fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.levels == 0 || self.replicates == 0 || self.snapshots == 0 {
            return Err(Error::Config(
                "n0, levels, replicates and snapshots must be positive".into(),
            ));
        }
        if self.norms.is_empty() {
            return Err(Error::Config("at least one norm is required".into()));
        }
        if !(self.horizon > 0.0) || !(self.q >= 1.0) {
            return Err(Error::Config(format!(
                "need T > 0 and q >= 1, got T={} q={}",
                self.horizon, self.q
            )));
        }
        if self.q > 8.0 {
            return Err(Error::Config(format!(
                "moment exponent q = {} exceeds 8",
                self.q
            )));
        }
        match self.dt {
            DtPolicy::Fixed { steps } if steps == 0 || steps % self.snapshots != 0 => {
                return Err(Error::Config(format!(
                    "{steps} fixed steps are not a positive multiple of {} snapshots",
                    self.snapshots
                )))
            }
            DtPolicy::Diffusive { c } if !(c > 0.0) => {
                return Err(Error::Config(format!(
                    "diffusive factor must be positive, got {c}"
                )))
            }
            _ => {}
        }
        if matches!(self.problem.reference, Reference::TimeDiscrete(_))
            && !matches!(self.dt, DtPolicy::Fixed { .. })
        {
            return Err(Error::Config(
                "the time-discrete reference needs a fixed time step".into(),
            ));
        }
        if let Reference::Oracle(o) | Reference::TimeDiscrete(o) = &self.problem.reference {
            if o.nu != 0.0 && self.problem.processes != 1 {
                return Err(Error::OracleUnavailable(
                    "multiplicative-noise oracles need exactly one Wiener process".into(),
                ));
            }
        }
        Ok(())
    }

    /// Steps on the grid with `n` points per axis.
    pub fn steps_for(&self, n: usize) -> usize {
        match self.dt {
            DtPolicy::Fixed { steps } => steps,
            DtPolicy::Diffusive { c } => {
                let h0 = self.problem.period / self.n0 as f64;
                let raw = (self.horizon / (c * h0 * h0) * (1.0 - 1e-12)).ceil() as usize;
                let base = raw.max(1).div_ceil(self.snapshots) * self.snapshots;
                let ratio = n as f64 / self.n0 as f64;
                (base as f64 * ratio * ratio).round() as usize
            }
        }
    }

    fn grid(&self, n: usize) -> Result<TorusGrid> {
        TorusGrid::new(self.problem.dim, n, self.problem.period)
    }

    /// Every grid size the study solves on, ascending.
    pub fn grid_sizes(&self) -> Result<Vec<usize>> {
        let plan = self.plan()?;
        let mut sizes: Vec<usize> = (0..self.levels)
            .flat_map(|j| plan.ratios().iter().map(move |&r| (j, r)))
            .map(|(j, r)| self.level_n(j) * r as usize)
            .collect();
        if let Some(n) = self.reference_n()? {
            sizes.push(n);
        }
        sizes.sort_unstable();
        sizes.dedup();
        Ok(sizes)
    }

    fn reference_n(&self) -> Result<Option<usize>> {
        Ok(match self.problem.reference {
            Reference::SelfReference { extra_refinements } => {
                let plan = self.plan()?;
                let finest =
                    self.level_n(self.levels - 1) * *plan.ratios().last().unwrap() as usize;
                Some(finest << extra_refinements)
            }
            _ => None,
        })
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Error of one replicate at one level in one norm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub level: usize,
    pub h: f64,
    pub replicate: usize,
    pub norm: Norm,
    pub raw: f64,
    pub accelerated: f64,
}

/// `(E err^q)^{1/q}` over replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentError {
    pub level: usize,
    pub h: f64,
    pub norm: Norm,
    pub raw: f64,
    pub accelerated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormOrders {
    pub norm: Norm,
    pub raw: Option<OrderFit>,
    pub accelerated: Option<OrderFit>,
    pub raw_local: Vec<f64>,
    pub accelerated_local: Vec<f64>,
}

/// Sup-norm slopes of a single path across the levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSlope {
    pub replicate: usize,
    pub raw: Option<f64>,
    pub accelerated: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub id: String,
    pub k: usize,
    pub plan: String,
    pub reference: String,
    pub q: f64,
    pub hs: Vec<f64>,
    pub records: Vec<ErrorRecord>,
    pub moments: Vec<MomentError>,
    pub orders: Vec<NormOrders>,
    pub pathwise: Vec<PathSlope>,
    /// Largest `h` below which the accelerated sup error beats the raw one
    /// at every level.
    pub improvement_threshold: Option<f64>,
    pub manifests: Vec<RunManifest>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn orders_for(&self, norm: Norm) -> Option<&NormOrders> {
        self.orders.iter().find(|o| o.norm == norm)
    }

    pub fn moments_for(&self, norm: Norm) -> Vec<&MomentError> {
        self.moments.iter().filter(|m| m.norm == norm).collect()
    }

    /// Long-format rows `(study_id, level, h, replicate, norm, p, error)`;
    /// accelerated errors use the id suffix `/accelerated` and are written
    /// only when `k >= 1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["study_id", "level", "h", "replicate", "norm", "p", "error"])?;
        let accel_id = format!("{}/accelerated", self.id);
        let mut emit = |id: &str, r: &ErrorRecord, e: f64| -> Result<()> {
            w.write_record([
                id.to_string(),
                r.level.to_string(),
                r.h.to_string(),
                r.replicate.to_string(),
                r.norm.name().to_string(),
                r.norm.p().to_string(),
                e.to_string(),
            ])?;
            Ok(())
        };
        for r in &self.records {
            emit(&self.id, r, r.raw)?;
        }
        if self.k > 0 {
            for r in &self.records {
                emit(&accel_id, r, r.accelerated)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rows `(study_id, norm, raw_order, accel_order, ci_low, ci_high)`; the
    /// band belongs to the accelerated order (the raw one when `k = 0`).
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "study_id",
            "norm",
            "raw_order",
            "accel_order",
            "ci_low",
            "ci_high",
        ])?;
        let fmt = |v: Option<f64>| {
            v.map(|x| x.to_string())
                .unwrap_or_else(|| "below-floor".into())
        };
        for o in &self.orders {
            let band = if self.k > 0 { &o.accelerated } else { &o.raw };
            w.write_record([
                self.id.clone(),
                o.norm.to_string(),
                fmt(o.raw.as_ref().map(|f| f.slope)),
                fmt(o.accelerated.as_ref().map(|f| f.slope)),
                fmt(band.as_ref().map(|f| f.ci_low)),
                fmt(band.as_ref().map(|f| f.ci_high)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "study {} ({}), reference: {}",
            self.id, self.plan, self.reference
        )?;
        let show = |o: &Option<OrderFit>| match o {
            Some(fit) => format!("{:.3} [{:.3}, {:.3}]", fit.slope, fit.ci_low, fit.ci_high),
            None => "below floor".into(),
        };
        for o in &self.orders {
            write!(f, "  {:>5}: raw order {}", o.norm.to_string(), show(&o.raw))?;
            if self.k > 0 {
                write!(f, ", accelerated order {}", show(&o.accelerated))?;
            }
            writeln!(f)?;
        }
        for m in &self.moments {
            if m.norm == self.orders[0].norm {
                write!(f, "  h = {:.6e}: raw {:.6e}", m.h, m.raw)?;
                if self.k > 0 {
                    write!(f, ", accelerated {:.6e}", m.accelerated)?;
                }
                writeln!(f)?;
            }
        }
        if let Some(h) = self.improvement_threshold {
            writeln!(f, "  extrapolation improves the sup error for h <= {h:.6e}")?;
        }
        for note in &self.notes {
            writeln!(f, "  note: {note}")?;
        }
        Ok(())
    }
}

/// Per-snapshot reference fields on the coarsest grid.
fn reference_fields(
    config: &StudyConfig,
    master: &BrownianPath,
    solutions: &BTreeMap<usize, Vec<GridFunction>>,
) -> Result<Vec<GridFunction>> {
    let coarse = config.grid(config.n0)?;
    let snaps = config.snapshots;
    match &config.problem.reference {
        Reference::Oracle(o) => (1..=snaps)
            .map(|m| {
                let step = m * master.steps() / snaps;
                let field = if o.nu == 0.0 {
                    deterministic_field(
                        &o.coeffs,
                        &o.psi,
                        config.problem.period,
                        master.time(step),
                    )?
                } else {
                    geometric_field(&o.coeffs, o.nu, master, step, &o.psi, config.problem.period)?
                };
                Ok(field.on_grid(&coarse))
            })
            .collect(),
        Reference::TimeDiscrete(o) => {
            let steps = config.steps_for(config.n0);
            let path = coarsen_path(master, master.steps() / steps)?;
            (1..=snaps)
                .map(|m| {
                    let field = time_discrete_field(
                        &o.coeffs,
                        o.nu,
                        &path,
                        m * steps / snaps,
                        config.method,
                        &o.psi,
                        config.problem.period,
                    )?;
                    Ok(field.on_grid(&coarse))
                })
                .collect()
        }
        Reference::SelfReference { .. } => {
            let n = config.reference_n()?.expect("self-reference grid");
            solutions[&n]
                .iter()
                .map(|u| u.restrict(n / config.n0))
                .collect()
        }
    }
}

/// Snapshot states of one grid and the manifest of its run.
type Solved = (Vec<GridFunction>, RunManifest);

struct ReplicateResult {
    records: Vec<ErrorRecord>,
    manifests: Vec<RunManifest>,
}

fn run_replicate(
    config: &StudyConfig,
    plan: &ExtrapolationPlan,
    sizes: &[usize],
    replicate: usize,
    level_order: &[usize],
) -> Result<ReplicateResult> {
    let seed = replicate_seed(config.seed, replicate);
    let master_steps = sizes.iter().map(|&n| config.steps_for(n)).fold(1, lcm);
    let master = sample_path(seed, config.horizon, master_steps, config.problem.processes)?;
    let record_times: Vec<f64> = (1..=config.snapshots)
        .map(|m| config.horizon * m as f64 / config.snapshots as f64)
        .collect();

    let solve = |n: usize| -> Result<Solved> {
        let grid = config.grid(n)?;
        let steps = config.steps_for(n);
        let mut scheme = SchemeConfig::new(config.method, config.horizon / steps as f64)
            .recording(record_times.clone());
        scheme.cfl_check = config.cfl_check;
        let (traj, manifest) = integrate_with_manifest(
            &config.problem.spec,
            &config.problem.data,
            &grid,
            &master,
            &scheme,
        )?;
        // drop the initial state
        Ok((traj.states.into_iter().skip(1).collect(), manifest))
    };

    // grids in the order their levels are visited; results keyed by size
    let mut order: Vec<usize> = Vec::new();
    for &j in level_order {
        for &r in plan.ratios() {
            let n = config.level_n(j) * r as usize;
            if !order.contains(&n) {
                order.push(n);
            }
        }
    }
    for &n in sizes {
        if !order.contains(&n) {
            order.push(n);
        }
    }
    let solved: Vec<(usize, Result<Solved>)> = order.par_iter().map(|&n| (n, solve(n))).collect();
    let mut solutions = BTreeMap::new();
    let mut manifests = Vec::new();
    for (n, res) in solved {
        let (states, manifest) = res?;
        solutions.insert(n, states);
        manifests.push(manifest);
    }
    manifests.sort_by_key(|m| m.n);

    let reference = reference_fields(config, &master, &solutions)?;
    let mut records = Vec::new();
    for j in 0..config.levels {
        let nj = config.level_n(j);
        let h = config.problem.period / nj as f64;
        let mut raw = vec![0.0f64; config.norms.len()];
        let mut accel = vec![0.0f64; config.norms.len()];
        for (m, reference) in reference.iter().enumerate() {
            let level: Vec<GridFunction> = plan
                .ratios()
                .iter()
                .map(|&r| solutions[&(nj * r as usize)][m].clone())
                .collect();
            let raw_err = &level[0].restrict(nj / config.n0)? - reference;
            let acc_err = &extrapolate(plan, &level)?.restrict(nj / config.n0)? - reference;
            for (i, norm) in config.norms.iter().enumerate() {
                raw[i] = raw[i].max(norm.apply(&raw_err));
                accel[i] = accel[i].max(norm.apply(&acc_err));
            }
        }
        for (i, norm) in config.norms.iter().enumerate() {
            records.push(ErrorRecord {
                level: j,
                h,
                replicate,
                norm: *norm,
                raw: raw[i],
                accelerated: accel[i],
            });
        }
    }
    Ok(ReplicateResult { records, manifests })
}

fn optional_fit(points: &[(f64, f64)]) -> Result<Option<OrderFit>> {
    if points.len() < 3 {
        return Ok(None);
    }
    match fit_order(points) {
        Ok(fit) => Ok(Some(fit)),
        Err(Error::BelowFloor) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the study, visiting levels in `level_order` (a permutation of
/// `0..levels`). The report does not depend on the order.
pub fn run_study_ordered(config: &StudyConfig, level_order: &[usize]) -> Result<StudyReport> {
    config.validate()?;
    let mut sorted = level_order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..config.levels).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!(
            "level order {level_order:?} is not a permutation of 0..{}",
            config.levels
        )));
    }
    let plan = config.plan()?;
    let sizes = config.grid_sizes()?;
    let results: Vec<Result<ReplicateResult>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &plan, &sizes, r, level_order))
        .collect();
    let mut records = Vec::new();
    let mut manifests = Vec::new();
    for res in results {
        let res = res?;
        records.extend(res.records);
        manifests.extend(res.manifests);
    }

    let hs: Vec<f64> = (0..config.levels)
        .map(|j| config.problem.period / config.level_n(j) as f64)
        .collect();
    let q = config.q;
    let mut moments = Vec::new();
    let mut orders = Vec::new();
    for &norm in &config.norms {
        let mut raw_pts = Vec::new();
        let mut acc_pts = Vec::new();
        for (j, &h) in hs.iter().enumerate() {
            let rows: Vec<&ErrorRecord> = records
                .iter()
                .filter(|r| r.level == j && r.norm == norm)
                .collect();
            let moment = |f: fn(&ErrorRecord) -> f64| {
                (rows.iter().map(|r| f(r).powf(q)).sum::<f64>() / rows.len() as f64).powf(1.0 / q)
            };
            let (raw, accelerated) = (moment(|r| r.raw), moment(|r| r.accelerated));
            raw_pts.push((h, raw));
            acc_pts.push((h, accelerated));
            moments.push(MomentError {
                level: j,
                h,
                norm,
                raw,
                accelerated,
            });
        }
        orders.push(NormOrders {
            norm,
            raw: optional_fit(&raw_pts)?,
            accelerated: optional_fit(&acc_pts)?,
            raw_local: local_orders(&raw_pts.iter().map(|p| p.1).collect::<Vec<_>>()),
            accelerated_local: local_orders(&acc_pts.iter().map(|p| p.1).collect::<Vec<_>>()),
        });
    }

    let path_norm = if config.norms.contains(&Norm::Sup) {
        Norm::Sup
    } else {
        config.norms[0]
    };
    let pathwise = (0..config.replicates)
        .map(|rep| {
            let rows: Vec<&ErrorRecord> = records
                .iter()
                .filter(|r| r.replicate == rep && r.norm == path_norm)
                .collect();
            let raw: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.raw)).collect();
            let acc: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.accelerated)).collect();
            Ok(PathSlope {
                replicate: rep,
                raw: optional_fit(&raw)?.map(|f| f.slope),
                accelerated: optional_fit(&acc)?.map(|f| f.slope),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let improvement_threshold = if config.k == 0 {
        None
    } else {
        let sup: Vec<&MomentError> = moments.iter().filter(|m| m.norm == path_norm).collect();
        let mut threshold = None;
        for m in sup.iter().rev() {
            if m.accelerated < m.raw {
                threshold = Some(m.h);
            } else {
                break;
            }
        }
        threshold
    };

    let mut notes = vec![format!(
        "pathwise slopes over decreasing h are a qualitative illustration of almost sure rates ({} norm)",
        path_norm
    )];
    if matches!(config.problem.reference, Reference::SelfReference { .. }) {
        notes.push("orders are measured against a finer solution of the same scheme".into());
    }
    if orders
        .iter()
        .any(|o| o.raw.is_none() || o.accelerated.is_none())
    {
        notes.push(
            "some errors are at the floating point floor or fewer than 3 levels were run".into(),
        );
    }
    if config.q > 4.0 && config.replicates < 100 {
        notes.push(format!(
            "moment exponent {} with {} replicates gives high-variance estimates",
            config.q, config.replicates
        ));
    }

    Ok(StudyReport {
        id: config.id.clone(),
        k: config.k,
        plan: plan.to_string(),
        reference: config.problem.reference.label().into(),
        q,
        hs,
        records,
        moments,
        orders,
        pathwise,
        improvement_threshold,
        manifests,
        notes,
    })
}

/// A plain refinement study (`k = 0`).
pub fn run_refinement_study(config: &StudyConfig) -> Result<StudyReport> {
    let mut c = config.clone();
    c.k = 0;
    c.ratios = None;
    run_study_ordered(&c, &(0..c.levels).collect::<Vec<_>>())
}

/// Refinement plus Richardson extrapolation with the configured `k`.
pub fn run_extrapolation_study(config: &StudyConfig) -> Result<StudyReport> {
    run_study_ordered(config, &(0..config.levels).collect::<Vec<_>>())
}
