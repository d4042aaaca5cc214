//! Job files: TOML documents with a `.cfg` extension.

use std::path::Path;
use std::time::Duration;

use qbarrier_core::grover::GroverInstance;
use qbarrier_core::quantum::{grover_iterate, standard_gate, Dynamics, Op, StepMap, UncertainGate};
use qbarrier_core::regions::Region;
use qbarrier_core::smt::SolverConfig;
use qbarrier_core::synth::{FlavorSpec, OnUnknown, SampleCounts, SynthesisConfig};
use qbarrier_core::system::SafetyProblem;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the solver executable; replaces the first
/// token of the configured command.
pub const SOLVER_ENV: &str = "QBARRIER_SOLVER";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Infinite,
    Finite,
    Grover,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Infinite => "infinite",
            Suite::Finite => "finite",
            Suite::Grover => "grover",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "infinite" => Ok(Suite::Infinite),
            "finite" => Ok(Suite::Finite),
            "grover" => Ok(Suite::Grover),
            _ => Err(format!("unknown suite `{s}` (infinite, finite, grover)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub name: String,
    #[serde(default)]
    pub suite: Option<Suite>,
    /// Status label the job is expected to reach; informational only.
    #[serde(default)]
    pub expected: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub circuit: Option<CircuitConfig>,
    #[serde(default)]
    pub grover: Option<GroverConfig>,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    pub qubits: usize,
    /// Step maps; each is the ordered composition of its ops.
    pub step: Vec<StepConfig>,
    /// `schedule[t mod len]` picks the map for step `t`; defaults to rotating
    /// through `step` in order.
    #[serde(default)]
    pub schedule: Option<Vec<usize>>,
    pub init: Vec<String>,
    #[serde(rename = "unsafe")]
    pub unsafe_set: Vec<String>,
    #[serde(default)]
    pub global: Vec<String>,
    pub flavor: FlavorSpec,
    pub degree: u32,
    pub samples: Samples,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub coef_bound: Option<f64>,
    #[serde(default)]
    pub param_points: Option<usize>,
    #[serde(default)]
    pub cegis_rounds: Option<usize>,
    #[serde(default)]
    pub start_terms: Option<usize>,
    #[serde(default)]
    pub max_terms: Option<usize>,
    #[serde(default)]
    pub on_unknown: Option<OnUnknown>,
    #[serde(default)]
    pub sparsify: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub ops: Vec<OpConfig>,
}

/// A gate application. One-qubit gates with `each = true` act on every
/// qubit; `grover` is the full-width iterate with the `marked` states; `H_eps`
/// is the Hadamard with an uncertain scale parameter `param` over `domain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpConfig {
    pub gate: String,
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
    #[serde(default)]
    pub each: bool,
    #[serde(default)]
    pub marked: Option<Vec<usize>>,
    #[serde(default)]
    pub param: Option<u16>,
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Samples {
    Uniform(usize),
    PerRegion(RegionSamples),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSamples {
    pub init: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_set: usize,
    pub global: usize,
}

impl Samples {
    pub fn counts(&self) -> SampleCounts {
        match *self {
            Samples::Uniform(n) => SampleCounts::uniform(n),
            Samples::PerRegion(r) => SampleCounts {
                init: r.init,
                unsafe_set: r.unsafe_set,
                global: r.global,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroverConfig {
    pub qubits: u32,
    /// Number of marked states.
    pub m: f64,
    /// Uncertainty in `M`.
    pub err: f64,
    /// Per-step rotation noise bound.
    pub eta: f64,
    #[serde(default)]
    pub steps: Option<usize>,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub command: Option<String>,
    /// Seconds per query.
    #[serde(default)]
    pub timeout: Option<f64>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

/// Command-line settings that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub solver_cmd: Option<String>,
    pub timeout: Option<f64>,
    pub jobs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut JobConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.solver_cmd {
            cfg.solver.command = Some(c.clone());
        }
        if let Some(t) = self.timeout {
            cfg.solver.timeout = Some(t);
        }
        if let Some(j) = self.jobs {
            cfg.solver.jobs = Some(j);
        }
    }
}

pub fn parse_config(text: &str) -> Result<JobConfig, CliError> {
    let cfg: JobConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates and test-builds a job file.
pub fn load_config(path: &Path) -> Result<JobConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let located = |e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    };
    let cfg = parse_config(&text).map_err(located)?;
    cfg.build().map_err(located)?;
    Ok(cfg)
}

/// A job ready to run.
pub enum Job {
    Circuit {
        problem: Box<SafetyProblem>,
        synth: SynthesisConfig,
    },
    Grover {
        instance: GroverInstance,
        samples: usize,
        seed: u64,
    },
}

impl JobConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.circuit, &self.grover) {
            (Some(_), Some(_)) => return bad("give either [circuit] or [grover], not both".into()),
            (None, None) => return bad("missing [circuit] or [grover] section".into()),
            _ => {}
        }
        if let Some(t) = self.solver.timeout {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("solver timeout must be positive, got {t}"));
            }
        }
        if self.solver.jobs == Some(0) {
            return bad("solver jobs must be at least 1".into());
        }
        if let Some(c) = &self.circuit {
            if c.samples.counts().total() == 0 {
                return bad("sample count must be positive".into());
            }
            if c.step.is_empty() {
                return bad("circuit needs at least one [[circuit.step]]".into());
            }
        }
        if let Some(g) = &self.grover {
            if g.samples == 0 {
                return bad("sample count must be positive".into());
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        let mut s = SolverConfig::default();
        if let Some(c) = &self.solver.command {
            s.command = c.clone();
        }
        if let Ok(exe) = std::env::var(SOLVER_ENV) {
            if !exe.trim().is_empty() {
                let rest: Vec<&str> = s.command.split_whitespace().skip(1).collect();
                s.command = std::iter::once(exe.trim())
                    .chain(rest)
                    .collect::<Vec<_>>()
                    .join(" ");
            }
        }
        if let Some(t) = self.solver.timeout {
            s.timeout = Duration::from_secs_f64(t);
        }
        if let Some(j) = self.solver.jobs {
            s.jobs = j;
        }
        s
    }

    pub fn qubits(&self) -> usize {
        match (&self.circuit, &self.grover) {
            (Some(c), _) => c.qubits,
            (_, Some(g)) => g.qubits as usize,
            _ => 0,
        }
    }

    pub fn build(&self) -> Result<Job, CliError> {
        if let Some(g) = &self.grover {
            let instance = GroverInstance::new(g.qubits, g.m, g.err, g.eta, g.steps)
                .map_err(|e| CliError::Config(e.to_string()))?;
            instance
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            return Ok(Job::Grover {
                instance,
                samples: g.samples,
                seed: self.seed,
            });
        }
        let c = self
            .circuit
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [circuit]".into()))?;
        let problem = c.problem()?;
        let synth = c.synthesis(self.seed);
        synth
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Job::Circuit {
            problem: Box::new(problem),
            synth,
        })
    }
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl CircuitConfig {
    pub fn dynamics(&self) -> Result<Dynamics, CliError> {
        let n = self.qubits;
        if n == 0 || n > 12 {
            return Err(CliError::Config(format!(
                "qubits must be in 1..=12, got {n}"
            )));
        }
        let mut maps = Vec::with_capacity(self.step.len());
        for (i, step) in self.step.iter().enumerate() {
            let mut ops = Vec::new();
            for op in &step.ops {
                ops.extend(op.lower(n).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("step {i}: {m}")),
                    other => other,
                })?);
            }
            maps.push(StepMap::new(n, &ops).map_err(cfg_err)?);
        }
        let schedule = self
            .schedule
            .clone()
            .unwrap_or_else(|| (0..maps.len()).collect());
        Dynamics::new(n, maps, schedule).map_err(cfg_err)
    }

    pub fn problem(&self) -> Result<SafetyProblem, CliError> {
        let dynamics = self.dynamics()?;
        let dim = dynamics.dim();
        let init = Region::parse("init", dim, &self.init).map_err(cfg_err)?;
        let unsafe_set = Region::parse("unsafe", dim, &self.unsafe_set).map_err(cfg_err)?;
        let global = Region::parse("global", dim, &self.global).map_err(cfg_err)?;
        SafetyProblem::new(dynamics, init, unsafe_set, global).map_err(cfg_err)
    }

    pub fn synthesis(&self, seed: u64) -> SynthesisConfig {
        let mut s = SynthesisConfig::new(self.flavor.clone(), self.degree, 0);
        s.samples = self.samples.counts();
        s.seed = seed;
        if let Some(v) = self.rho {
            s.rho = v;
        }
        if let Some(v) = self.coef_bound {
            s.coef_bound = v;
        }
        if let Some(v) = self.param_points {
            s.param_points = v;
        }
        if let Some(v) = self.cegis_rounds {
            s.cegis_rounds = v;
        }
        if self.start_terms.is_some() {
            s.start_terms = self.start_terms;
        }
        if let Some(v) = self.max_terms {
            s.max_terms = v;
        }
        if let Some(v) = self.on_unknown {
            s.on_unknown = v;
        }
        if let Some(v) = self.sparsify {
            s.sparsify = v;
        }
        s
    }
}

impl OpConfig {
    fn lower(&self, qubits: usize) -> Result<Vec<Op>, CliError> {
        let name = self.gate.to_ascii_uppercase();
        if name == "GROVER" {
            let marked = self
                .marked
                .clone()
                .ok_or_else(|| CliError::Config("grover gate needs `marked`".into()))?;
            let gate = grover_iterate(qubits, &marked).map_err(cfg_err)?;
            return Ok(vec![Op::Fixed {
                gate,
                targets: (0..qubits).collect(),
            }]);
        }
        let placements = |arity: usize| -> Result<Vec<Vec<usize>>, CliError> {
            match (&self.targets, self.each) {
                (Some(_), true) => Err(CliError::Config(format!(
                    "{}: give `targets` or `each`, not both",
                    self.gate
                ))),
                (Some(t), false) => Ok(vec![t.clone()]),
                (None, true) if arity == 1 => Ok((0..qubits).map(|q| vec![q]).collect()),
                (None, true) => Err(CliError::Config(format!(
                    "{}: `each` needs a one-qubit gate",
                    self.gate
                ))),
                (None, false) if arity == qubits => Ok(vec![(0..qubits).collect()]),
                (None, false) => Err(CliError::Config(format!(
                    "{}: missing `targets`",
                    self.gate
                ))),
            }
        };
        if name == "H_EPS" {
            let id = self.param.unwrap_or(0);
            let [lo, hi] = self.domain.unwrap_or([0.9, 1.1]);
            let gate = UncertainGate::hadamard_eps(id, lo, hi).map_err(cfg_err)?;
            return Ok(placements(1)?
                .into_iter()
                .map(|targets| Op::Uncertain {
                    gate: gate.clone(),
                    targets,
                })
                .collect());
        }
        if self.param.is_some() || self.domain.is_some() || self.marked.is_some() {
            return Err(CliError::Config(format!(
                "{}: `param`, `domain` and `marked` do not apply",
                self.gate
            )));
        }
        let gate = standard_gate(&self.gate).map_err(cfg_err)?;
        Ok(placements(gate.arity())?
            .into_iter()
            .map(|targets| Op::Fixed {
                gate: gate.clone(),
                targets,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const Z3: &str = r#"
name = "z"
seed = 4

[circuit]
qubits = 3
init = ["prob(0) >= 0.9"]
unsafe = ["prob(1) >= 0.2"]
flavor = { kind = "finite-horizon", horizon = 6 }
degree = 2
samples = 100

[[circuit.step]]
ops = [{ gate = "Z", each = true }]
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = parse_config(Z3).unwrap();
        assert_eq!(cfg.seed, 4);
        match cfg.build().unwrap() {
            Job::Circuit { problem, synth } => {
                assert_eq!(problem.dim(), 8);
                assert_eq!(synth.samples.total(), 300);
                assert_eq!(synth.flavor, FlavorSpec::FiniteHorizon { horizon: 6 });
            }
            Job::Grover { .. } => panic!("expected a circuit job"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_zero_samples() {
        assert!(parse_config(&Z3.replace("seed = 4", "seed = 4\ncolour = 1")).is_err());
        assert!(parse_config(&Z3.replace("samples = 100", "samples = 0")).is_err());
        assert!(parse_config(&Z3.replace("horizon = 6", "horizon = 6, extra = 1")).is_err());
    }

    #[test]
    fn bad_gate_is_a_config_error() {
        let cfg = parse_config(&Z3.replace("\"Z\"", "\"Q\"")).unwrap();
        assert!(matches!(cfg.build(), Err(CliError::Config(_))));
        let cfg =
            parse_config(&Z3.replace("gate = \"Z\", each = true", "gate = \"CX\", each = true"))
                .unwrap();
        assert!(matches!(cfg.build(), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = parse_config(Z3).unwrap();
        Overrides {
            seed: Some(9),
            solver_cmd: Some("z3 {file}".into()),
            timeout: Some(2.0),
            jobs: Some(1),
        }
        .apply(&mut cfg);
        assert_eq!(cfg.seed, 9);
        let s = cfg.solver();
        assert_eq!(s.timeout, Duration::from_secs(2));
        assert_eq!(s.jobs, 1);
    }
}
