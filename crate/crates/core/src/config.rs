//! TOML run configurations and named presets.
//!
//! A document has the sections `[problem]`, `[stencil]`, `[grid]`, `[time]`,
//! `[noise]`, `[study]`, `[weights]` and `[output]`; unknown keys are
//! rejected. `problem.preset = "<name>"` starts from one of [`PRESETS`] and
//! overlays every key the document sets, table by table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Coefficient, FieldSpec, TrigPolynomial};
use crate::grid::{GridFunction, TorusGrid};
use crate::harness::{DtPolicy, Norm, OracleSpec, Reference, StudyConfig, StudyProblem};
use crate::integrator::{
    cfl_number, integrate_with_manifest, Method, ProblemData, RunManifest, SchemeConfig, Trajectory,
};
use crate::noise::{replicate_seed, sample_path};
use crate::oracle::ConstantCoefficients;
use crate::stencil::{
    build_diagdom_stencil, build_diagonal_stencil, check_nonnegativity, lattice_samples,
    reconstruct_pde, validate_stencil, DiagDomShifts, Sample, StencilSpec, StencilVector,
    ValidationReport, Violation,
};
use crate::weights::{choose_epsilon, transform_stencil, WeightSpec};

/// Residual above which declared and reconstructed coefficients disagree.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;

/// Built-in presets as TOML documents.
pub const PRESETS: &[(&str, &str)] = &[
    ("heat", HEAT),
    ("upwind", UPWIND),
    ("geometric", GEOMETRIC),
    ("degenerate", DEGENERATE),
    ("zero", ZERO),
    ("variable", VARIABLE),
];

const HEAT: &str = r#"
[problem]
a = [[1.0]]
psi = { modes = [{ wavevector = [1], sin = 1.0 }] }
reference = "oracle"
[stencil]
constructor = "diagonal"
[grid]
d = 1
n = 32
L = 1.0
[time]
T = 0.1
method = "explicit-euler"
dt = { kind = "diffusive", c = 0.25 }
[study]
id = "heat"
levels = 5
"#;

const UPWIND: &str = r#"
[problem]
a = [[0.05]]
b = [1.0]
psi = { modes = [{ wavevector = [1], sin = 1.0 }] }
nu = [0.5]
reference = "time-discrete"
[stencil]
constructor = "diagonal"
theta = [0.5]
[grid]
d = 1
n = 16
L = 1.0
[time]
T = 0.25
method = "explicit-euler"
dt = { kind = "fixed", steps = 2000 }
[noise]
R = 1
replicates = 4
[study]
id = "upwind"
levels = 4
k = 1
"#;

const GEOMETRIC: &str = r#"
[problem]
a = [[1.0]]
psi = { modes = [{ wavevector = [1], sin = 1.0 }] }
nu = [0.5]
reference = "oracle"
[stencil]
constructor = "diagonal"
[grid]
d = 1
n = 16
L = 1.0
[time]
T = 0.0125
method = "explicit-euler"
dt = { kind = "diffusive", c = 0.01 }
[noise]
R = 1
replicates = 8
[study]
id = "geometric"
levels = 4
"#;

const DEGENERATE: &str = r#"
[problem]
a = [[0.0]]
psi = { modes = [{ wavevector = [1], sin = 1.0 }] }
nu = [0.5]
reference = "oracle"
[stencil]
constructor = "diagonal"
[grid]
d = 1
n = 16
L = 1.0
[time]
T = 0.5
method = "explicit-euler"
dt = { kind = "fixed", steps = 64 }
[noise]
R = 1
"#;

const ZERO: &str = r#"
[problem]
a = [[1.0]]
nu = [0.5]
reference = "oracle"
[stencil]
constructor = "diagonal"
[grid]
d = 1
n = 16
L = 1.0
[time]
T = 0.05
method = "explicit-euler"
dt = { kind = "diffusive", c = 0.25 }
[noise]
R = 1
replicates = 2
[study]
id = "zero"
levels = 3
"#;

const VARIABLE: &str = r#"
[problem]
a = [[0.6, { kind = "trig", amp = 0.1, wavevector = [1, 0] }], [{ kind = "trig", amp = 0.1, wavevector = [1, 0] }, 0.5]]
b = [{ kind = "trig", amp = 0.5, wavevector = [0, 1] }, 0.25]
c = -0.5
psi = { modes = [{ wavevector = [1, 1], sin = 1.0 }, { wavevector = [0, 2], cos = 0.5 }] }
nu = [{ kind = "trig", mean = 0.3, amp = 0.1, wavevector = [1, 0] }]
g = [0.1]
reference = "self"
[stencil]
constructor = "diagdom"
kappa = 0.1
[grid]
d = 2
n = 8
L = 1.0
[time]
T = 0.02
method = "drift-implicit-euler"
dt = { kind = "fixed", steps = 40 }
[noise]
R = 1
replicates = 2
[study]
id = "variable"
levels = 3
reference_refinements = 1
"#;

/// Initial datum: a trigonometric polynomial (usable by the oracles) or a
/// coefficient preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialData {
    Trig(TrigPolynomial),
    Field(FieldSpec),
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Field(FieldSpec::Constant(0.0))
    }
}

impl InitialData {
    fn to_coefficient(&self, dim: usize, period: f64) -> Result<Coefficient> {
        match self {
            InitialData::Trig(t) => {
                t.check_dim(dim)?;
                Ok(t.to_coefficient(period))
            }
            InitialData::Field(f) => f.to_coefficient(dim, period),
        }
    }

    /// The datum as a trigonometric polynomial, when it is one.
    fn as_trig(&self, dim: usize) -> Option<TrigPolynomial> {
        match self {
            InitialData::Trig(t) => Some(t.clone()),
            InitialData::Field(f) if f.is_zero() => Some(TrigPolynomial::new(vec![])),
            InitialData::Field(f) => f.constant_value().map(|v| TrigPolynomial::constant(dim, v)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// Oracle when the data allow one, self-reference otherwise.
    #[default]
    Auto,
    Oracle,
    TimeDiscrete,
    #[serde(rename = "self")]
    SelfReference,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Diffusion matrix; empty means zero.
    #[serde(default)]
    pub a: Vec<Vec<FieldSpec>>,
    #[serde(default)]
    pub b: Vec<FieldSpec>,
    #[serde(default)]
    pub c: FieldSpec,
    #[serde(default)]
    pub f: FieldSpec,
    #[serde(default)]
    pub psi: InitialData,
    /// Multiplicative noise coefficients, one per Wiener process.
    #[serde(default)]
    pub nu: Vec<FieldSpec>,
    /// Additive noise coefficients, one per Wiener process.
    #[serde(default)]
    pub g: Vec<FieldSpec>,
    #[serde(default)]
    pub reference: ReferenceChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderTerm {
    pub offset: Vec<i64>,
    pub a: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderTerm {
    pub offset: Vec<i64>,
    #[serde(default)]
    pub p: FieldSpec,
    #[serde(default)]
    pub c: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constructor", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StencilSection {
    /// Axis stencil for a diagonal `a`; `theta` defaults to `sup |b^i|`.
    Diagonal {
        #[serde(default)]
        theta: Option<Vec<f64>>,
    },
    /// Diagonally dominant `a`; shifts default to the smallest ones giving
    /// `p >= kappa`.
    Diagdom {
        #[serde(default)]
        kappa: f64,
        #[serde(default)]
        theta_axis: Option<Vec<f64>>,
        #[serde(default)]
        theta_cross: Option<f64>,
    },
    /// Offsets and weights given directly; `problem.a/b/c` are then the
    /// coefficients the stencil is checked against.
    Explicit {
        #[serde(default)]
        second_order: Vec<SecondOrderTerm>,
        first_order: Vec<FirstOrderTerm>,
    },
}

impl Default for StencilSection {
    fn default() -> Self {
        StencilSection::Diagonal { theta: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L", default = "one")]
    pub length: f64,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_method")]
    pub method: Method,
    pub dt: DtPolicy,
    #[serde(default = "one_usize")]
    pub snapshots: usize,
    #[serde(default = "yes")]
    pub cfl_check: bool,
}

fn default_method() -> Method {
    Method::ExplicitEuler
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Number of Wiener processes; defaults to the length of `problem.nu`
    /// and `problem.g`.
    #[serde(rename = "R", default)]
    pub processes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub replicates: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            processes: None,
            seed: 0,
            replicates: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub ratios: Option<Vec<u64>>,
    #[serde(default = "default_norms")]
    pub norms: Vec<Norm>,
    #[serde(default = "default_q")]
    pub q: f64,
    /// Halvings beyond the finest study grid for a self-reference.
    #[serde(default = "default_refinements")]
    pub reference_refinements: usize,
}

fn default_levels() -> usize {
    3
}

fn default_norms() -> Vec<Norm> {
    vec![Norm::Sup, Norm::Lp(2.0)]
}

fn default_q() -> f64 {
    2.0
}

fn default_refinements() -> usize {
    2
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            id: None,
            levels: default_levels(),
            k: 0,
            ratios: None,
            norms: default_norms(),
            q: default_q(),
            reference_refinements: default_refinements(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub s_bar: f64,
    /// Lower bound on the first-order weights, used to search for `epsilon`.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Largest sup error accepted by `oracle-check`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_tolerance() -> f64 {
    1e-3
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub stencil: StencilSection,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if key != "dt" && key != "psi" => {
                overlay(b, t)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "unknown preset {name:?}; available: {}",
                names.join(", ")
            ))
        })?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let preset = table
            .get("problem")
            .and_then(|p| p.get("preset"))
            .map(|p| {
                p.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Config("problem.preset must be a string".into()))
            })
            .transpose()?;
        let merged = match preset {
            Some(name) => {
                let mut base = preset_table(&name)?;
                overlay(&mut base, table);
                base
            }
            None => table,
        };
        let config: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("[problem]\npreset = {name:?}\n"))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        let d = self.grid.d;
        if d == 0 || self.grid.n == 0 || !(self.grid.length > 0.0) {
            return Err(Error::Config(format!(
                "grid needs d > 0, n > 0, L > 0; got d={d} n={} L={}",
                self.grid.n, self.grid.length
            )));
        }
        if !(self.time.horizon > 0.0) || self.time.snapshots == 0 {
            return Err(Error::Config(format!(
                "time needs T > 0 and snapshots > 0; got T={} snapshots={}",
                self.time.horizon, self.time.snapshots
            )));
        }
        match self.time.dt {
            DtPolicy::Fixed { steps: 0 } => {
                return Err(Error::Config("time.dt.steps must be positive".into()))
            }
            DtPolicy::Diffusive { c } if !(c > 0.0) => {
                return Err(Error::Config(format!(
                    "time.dt.c must be positive, got {c}"
                )))
            }
            _ => {}
        }
        if self.noise.replicates == 0 {
            return Err(Error::Config("noise.replicates must be positive".into()));
        }
        if !self.problem.a.is_empty()
            && (self.problem.a.len() != d || self.problem.a.iter().any(|r| r.len() != d))
        {
            return Err(Error::Config(format!("problem.a must be {d}x{d}")));
        }
        if !self.problem.b.is_empty() && self.problem.b.len() != d {
            return Err(Error::Config(format!("problem.b must have {d} entries")));
        }
        let r = self.processes();
        if self.problem.nu.len() > r || self.problem.g.len() > r {
            return Err(Error::Config(format!(
                "{} nu and {} g terms exceed R = {r}",
                self.problem.nu.len(),
                self.problem.g.len()
            )));
        }
        if let Some(w) = &self.weights {
            if !(w.s_bar >= 0.0)
                || w.kappa.is_some_and(|k| !(k > 0.0))
                || w.epsilon.is_some_and(|e| !(e > 0.0))
            {
                return Err(Error::Config(
                    "weights need s_bar >= 0 and positive kappa, epsilon".into(),
                ));
            }
            if w.kappa.is_none() && w.epsilon.is_none() {
                return Err(Error::Config("weights need kappa or epsilon".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.grid.d
    }

    pub fn period(&self) -> f64 {
        self.grid.length
    }

    pub fn processes(&self) -> usize {
        self.noise
            .processes
            .unwrap_or_else(|| self.problem.nu.len().max(self.problem.g.len()))
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.d, self.grid.n, self.grid.length)
    }

    fn coeff(&self, f: &FieldSpec) -> Result<Coefficient> {
        f.to_coefficient(self.dim(), self.period())
    }

    fn a_entry(&self, i: usize, j: usize) -> FieldSpec {
        self.problem
            .a
            .get(i)
            .and_then(|r| r.get(j))
            .cloned()
            .unwrap_or_default()
    }

    fn b_entry(&self, i: usize) -> FieldSpec {
        self.problem.b.get(i).cloned().unwrap_or_default()
    }

    /// Points at which coefficients are checked: a lattice of 8 points per
    /// axis at `t = 0, T/2, T` and the widths `h, h/2, h/4`.
    pub fn samples(&self) -> Vec<Sample> {
        let h = self.grid.length / self.grid.n as f64;
        let per_axis = if self.dim() <= 3 { 8 } else { 4 };
        lattice_samples(
            self.dim(),
            self.period(),
            per_axis,
            &[0.0, 0.5 * self.time.horizon, self.time.horizon],
            &[h, h / 2.0, h / 4.0],
        )
    }

    /// The stencil with its noise coefficients attached.
    pub fn build_stencil(&self) -> Result<StencilSpec> {
        let d = self.dim();
        let samples = self.samples();
        let b: Vec<Coefficient> = (0..d)
            .map(|i| self.coeff(&self.b_entry(i)))
            .collect::<Result<_>>()?;
        let c = self.coeff(&self.problem.c)?;
        let spec = match &self.stencil {
            StencilSection::Diagonal { theta } => {
                for i in 0..d {
                    for j in 0..d {
                        if i != j && !self.a_entry(i, j).is_zero() {
                            return Err(Error::Config(format!(
                                "the diagonal constructor needs a diagonal a; a[{i}][{j}] is nonzero"
                            )));
                        }
                    }
                }
                let theta = match theta {
                    Some(t) => t.clone(),
                    None => (0..d).map(|i| self.b_entry(i).sup_abs()).collect(),
                };
                let a = (0..d)
                    .map(|i| self.coeff(&self.a_entry(i, i)))
                    .collect::<Result<_>>()?;
                build_diagonal_stencil(a, b, c, &theta, &samples)?
            }
            StencilSection::Diagdom {
                kappa,
                theta_axis,
                theta_cross,
            } => {
                let b_sup: Vec<f64> = (0..d).map(|i| self.b_entry(i).sup_abs()).collect();
                let minimal = DiagDomShifts::minimal(*kappa, &b_sup);
                let shifts = DiagDomShifts {
                    theta_axis: theta_axis.clone().unwrap_or(minimal.theta_axis),
                    theta_cross: theta_cross.unwrap_or(minimal.theta_cross),
                };
                let a = (0..d)
                    .map(|i| (0..d).map(|j| self.coeff(&self.a_entry(i, j))).collect())
                    .collect::<Result<_>>()?;
                build_diagdom_stencil(a, b, c, &shifts, &samples)?
            }
            StencilSection::Explicit {
                second_order,
                first_order,
            } => {
                let mut builder = StencilSpec::builder(d);
                for t in second_order {
                    builder = builder
                        .second_order(StencilVector::new(t.offset.clone())?, self.coeff(&t.a)?);
                }
                for t in first_order {
                    builder = builder.first_order(
                        StencilVector::new(t.offset.clone())?,
                        self.coeff(&t.p)?,
                        self.coeff(&t.c)?,
                    );
                }
                builder.build()?
            }
        };
        let mut nu: Vec<Coefficient> = self
            .problem
            .nu
            .iter()
            .map(|n| self.coeff(n))
            .collect::<Result<_>>()?;
        nu.resize(self.processes(), Coefficient::zero());
        Ok(spec.with_noise(nu))
    }

    pub fn problem_data(&self) -> Result<ProblemData> {
        let psi = self.problem.psi.to_coefficient(self.dim(), self.period())?;
        let g = self
            .problem
            .g
            .iter()
            .map(|g| self.coeff(g))
            .collect::<Result<_>>()?;
        Ok(ProblemData::new(psi)
            .with_forcing(self.coeff(&self.problem.f)?)
            .with_additive_noise(g))
    }

    /// Constant coefficients, trigonometric datum, no free terms, and at
    /// most one constant multiplicative noise.
    pub fn oracle_spec(&self) -> Result<OracleSpec> {
        let d = self.dim();
        let unavailable = |why: &str| Error::OracleUnavailable(why.to_string());
        let constant = |f: &FieldSpec| f.constant_value();
        let a = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| constant(&self.a_entry(i, j)))
                    .collect::<Option<Vec<_>>>()
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| unavailable("a is not constant"))?;
        let b = (0..d)
            .map(|i| constant(&self.b_entry(i)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| unavailable("b is not constant"))?;
        let c = constant(&self.problem.c).ok_or_else(|| unavailable("c is not constant"))?;
        if !self.problem.f.is_zero() || self.problem.g.iter().any(|g| !g.is_zero()) {
            return Err(unavailable("free terms f, g must vanish"));
        }
        let nus: Vec<f64> = self
            .problem
            .nu
            .iter()
            .map(constant)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| unavailable("nu is not constant"))?;
        let active: Vec<f64> = nus.into_iter().filter(|&v| v != 0.0).collect();
        let nu = match active.as_slice() {
            [] => 0.0,
            [v] if self.processes() == 1 => *v,
            _ => return Err(unavailable("the oracle handles one Wiener process")),
        };
        let psi = self
            .problem
            .psi
            .as_trig(d)
            .ok_or_else(|| unavailable("psi is not a trigonometric polynomial"))?;
        psi.check_dim(d)?;
        Ok(OracleSpec {
            coeffs: ConstantCoefficients { a, b, c },
            nu,
            psi,
        })
    }

    pub fn reference(&self) -> Result<Reference> {
        let self_ref = Reference::SelfReference {
            extra_refinements: self.study.reference_refinements,
        };
        Ok(match self.problem.reference {
            ReferenceChoice::Auto => self
                .oracle_spec()
                .map(Reference::Oracle)
                .unwrap_or(self_ref),
            ReferenceChoice::Oracle => Reference::Oracle(self.oracle_spec()?),
            ReferenceChoice::TimeDiscrete => Reference::TimeDiscrete(self.oracle_spec()?),
            ReferenceChoice::SelfReference => self_ref,
        })
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        if self.weights.is_some() {
            return Err(Error::Config(
                "studies run on the unweighted scheme; drop [weights]".into(),
            ));
        }
        Ok(StudyConfig {
            id: self
                .study
                .id
                .clone()
                .or_else(|| self.problem.preset.clone())
                .unwrap_or_else(|| "study".into()),
            problem: StudyProblem {
                dim: self.dim(),
                period: self.period(),
                spec: self.build_stencil()?,
                data: self.problem_data()?,
                processes: self.processes(),
                reference: self.reference()?,
            },
            n0: self.grid.n,
            levels: self.study.levels,
            k: self.study.k,
            ratios: self.study.ratios.clone(),
            replicates: self.noise.replicates,
            seed: self.noise.seed,
            norms: self.study.norms.clone(),
            q: self.study.q,
            horizon: self.time.horizon,
            method: self.time.method,
            dt: self.time.dt,
            snapshots: self.time.snapshots,
            cfl_check: self.time.cfl_check,
        })
    }

    /// Steps on the configured grid.
    pub fn steps(&self) -> usize {
        match self.time.dt {
            DtPolicy::Fixed { steps } => steps,
            DtPolicy::Diffusive { c } => {
                let h = self.grid.length / self.grid.n as f64;
                (self.time.horizon / (c * h * h) * (1.0 - 1e-12))
                    .ceil()
                    .max(1.0) as usize
            }
        }
        .div_ceil(self.time.snapshots)
            * self.time.snapshots
    }

    fn scheme(&self) -> SchemeConfig {
        let steps = self.steps();
        let times = (1..=self.time.snapshots)
            .map(|m| self.time.horizon * m as f64 / self.time.snapshots as f64)
            .collect();
        let mut scheme =
            SchemeConfig::new(self.time.method, self.time.horizon / steps as f64).recording(times);
        scheme.cfl_check = self.time.cfl_check;
        scheme
    }

    /// Structure, nonnegativity, reconstruction of the declared coefficients,
    /// and (for explicit stepping) the CFL condition.
    pub fn validate(&self) -> Result<ValidationReport> {
        let spec = self.build_stencil()?;
        let samples = self.samples();
        let mut report = validate_stencil(&spec, &samples);
        report.merge(check_nonnegativity(&spec, &samples));
        let d = self.dim();
        for s in samples.iter().filter(|s| s.h == samples[0].h) {
            let got = reconstruct_pde(&spec, s.t, &s.x);
            let want = crate::stencil::ContinuumCoefficients {
                a: (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                self.coeff(&self.a_entry(i, j))
                                    .map(|c| c.eval(s.t, &s.x, 0.0))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?,
                b: (0..d)
                    .map(|i| self.coeff(&self.b_entry(i)).map(|c| c.eval(s.t, &s.x, 0.0)))
                    .collect::<Result<_>>()?,
                c: self.coeff(&self.problem.c)?.eval(s.t, &s.x, 0.0),
            };
            let residual = got.max_difference(&want);
            if residual > RECONSTRUCTION_TOLERANCE {
                report.violations.push(Violation::Reconstruction {
                    residual,
                    sample: s.clone(),
                });
                break;
            }
        }
        let grid = self.grid()?;
        if (grid.n() as i64) < 2 * spec.reach() + 1 {
            report.notes.push(format!(
                "grid with n = {} is too coarse for stencil reach {}",
                grid.n(),
                spec.reach()
            ));
        }
        let steps = self.steps();
        let horizon = self.time.horizon;
        let cfl = cfl_number(
            &spec,
            &grid,
            horizon / steps as f64,
            &[0.0, 0.5 * horizon, horizon],
        );
        if self.time.method == Method::ExplicitEuler {
            report.notes.push(format!("CFL number {cfl:.4}"));
            if cfl > 1.0 + 1e-12 {
                report.notes.push("CFL condition violated".into());
            }
        }
        Ok(report)
    }

    /// True when `validate` found no violation and the explicit step is
    /// admissible.
    pub fn cfl_ok(&self) -> Result<bool> {
        if self.time.method != Method::ExplicitEuler || !self.time.cfl_check {
            return Ok(true);
        }
        let spec = self.build_stencil()?;
        let horizon = self.time.horizon;
        let cfl = cfl_number(
            &spec,
            &self.grid()?,
            horizon / self.steps() as f64,
            &[0.0, 0.5 * horizon, horizon],
        );
        Ok(cfl <= 1.0 + 1e-12)
    }

    /// One integration on the configured grid for replicate `replicate`.
    /// With `[weights]` the conjugated scheme is solved for `u rho` and the
    /// recorded states are divided by `rho`.
    pub fn solve_replicate(
        &self,
        replicate: usize,
    ) -> Result<(Trajectory, RunManifest, Option<f64>)> {
        let grid = self.grid()?;
        let spec = self.build_stencil()?;
        let data = self.problem_data()?;
        let steps = self.steps();
        let path = sample_path(
            replicate_seed(self.noise.seed, replicate),
            self.time.horizon,
            steps,
            self.processes(),
        )?;
        let scheme = self.scheme();
        let Some(w) = &self.weights else {
            let (traj, manifest) = integrate_with_manifest(&spec, &data, &grid, &path, &scheme)?;
            return Ok((traj, manifest, None));
        };
        let epsilon = match (w.epsilon, w.kappa) {
            (Some(e), _) => e,
            (None, Some(kappa)) => {
                choose_epsilon(
                    &spec,
                    w.s_bar,
                    kappa,
                    &grid,
                    &[0.0, 0.5 * self.time.horizon, self.time.horizon],
                )?
                .epsilon
            }
            (None, None) => unreachable!("checked at load time"),
        };
        let weight = WeightSpec::new(w.s_bar, epsilon)?;
        let period = self.period();
        let rho = Coefficient::spatial(move |x, _| weight.rho_periodic(x, period));
        let hat = transform_stencil(&spec, &weight, &grid)?;
        let (traj, manifest) =
            integrate_with_manifest(&hat, &data.weighted(&rho), &grid, &path, &scheme)?;
        let rho_grid = GridFunction::from_fn(&grid, |x| weight.rho_periodic(x, period));
        let states = traj
            .states
            .iter()
            .map(|v| v.zip_with(&rho_grid, |a, r| a / r))
            .collect::<Result<_>>()?;
        Ok((
            Trajectory {
                times: traj.times,
                states,
            },
            manifest,
            Some(epsilon),
        ))
    }
}
