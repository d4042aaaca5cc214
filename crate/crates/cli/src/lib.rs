//! Front end for `qbarrier`: job files, run reports and the subcommands.

pub mod bench;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use qbarrier_core::grover::{synth_angle_certificate, verify_angle_certificate, AngleCertificate};
use qbarrier_core::regions::sample_states;
use qbarrier_core::smt::{SmtError, Verdict, Verification};
use qbarrier_core::synth::{synthesis_loop, Iteration, Status, SynthError};
use qbarrier_core::templates::{Certificate, Flavor};
use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, Job, JobConfig, Overrides, Suite};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Tool(String),
    #[error("synthesis error: {0}")]
    Synthesis(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Exit codes above 2; 0..=2 are reserved for run outcomes.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Tool(_) => 4,
            CliError::Synthesis(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<SmtError> for CliError {
    fn from(e: SmtError) -> Self {
        match e {
            SmtError::Invalid(m) => CliError::Config(m),
            SmtError::NotApplicable(m) => CliError::Config(m),
            other => CliError::Tool(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Smt(s) => s.into(),
            SynthError::Config(m) => CliError::Config(m),
            other => CliError::Synthesis(other.to_string()),
        }
    }
}

impl From<qbarrier_core::grover::GroverError> for CliError {
    fn from(e: qbarrier_core::grover::GroverError) -> Self {
        use qbarrier_core::grover::GroverError;
        match e {
            GroverError::Smt(s) => s.into(),
            GroverError::Domain(m) => CliError::Config(m),
            other => CliError::Synthesis(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Exit code for a run status.
pub fn status_code(s: Status) -> u8 {
    match s {
        Status::Solved => 0,
        Status::Unsolved => 1,
        Status::Unknown => 2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    /// `verified`, `refuted`, `unknown`, or `skipped` after an earlier refutation.
    pub verdict: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub marginal: bool,
}

fn condition_reports(v: &Verification) -> Vec<ConditionReport> {
    v.checks
        .iter()
        .map(|c| {
            let (verdict, violation, reason, marginal) = match &c.verdict {
                None => ("skipped".to_string(), None, None, false),
                Some(Verdict::Verified) => ("verified".into(), None, None, false),
                Some(Verdict::Refuted(cex)) => {
                    ("refuted".into(), Some(cex.violation), None, cex.marginal)
                }
                Some(Verdict::Unknown { reason }) => {
                    ("unknown".into(), None, Some(reason.clone()), false)
                }
            };
            ConditionReport {
                condition: c.condition.clone(),
                verdict,
                seconds: c.seconds,
                violation,
                reason,
                marginal,
            }
        })
        .collect()
}

/// Either kind of certificate, as stored in reports and certificate files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyCertificate {
    Polynomial(Certificate),
    Angle(AngleCertificate),
}

impl AnyCertificate {
    pub fn describe(&self) -> String {
        match self {
            AnyCertificate::Angle(a) => format!(
                "B(phi) = {}*phi; gamma = {}, lambda = {}, delta = {}, T = {}",
                a.c, a.gamma, a.lambda, a.delta, a.horizon
            ),
            AnyCertificate::Polynomial(c) => {
                let members: Vec<String> = (0..c.coefficients.len())
                    .map(|j| {
                        let p = c.poly_string(j);
                        let p = if p.is_empty() { "0".to_string() } else { p };
                        if c.coefficients.len() == 1 {
                            format!("B = {p}")
                        } else {
                            format!("B_{j} = {p}")
                        }
                    })
                    .collect();
                let consts = match c.flavor {
                    Flavor::Invariant => String::new(),
                    Flavor::KInductive { k, epsilon, d } => {
                        format!("; k = {k}, epsilon = {epsilon}, d = {d}")
                    }
                    Flavor::Hybrid {
                        k,
                        epsilon,
                        gamma,
                        d,
                    } => format!("; k = {k}, epsilon = {epsilon}, gamma = {gamma}, d = {d}"),
                    Flavor::FiniteHorizon {
                        horizon,
                        gamma,
                        lambda,
                        delta,
                    } => format!(
                        "; T = {horizon}, gamma = {gamma}, lambda = {lambda}, delta = {delta}"
                    ),
                };
                format!("{}{consts}", members.join("; "))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub job: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<AnyCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_text: Option<String>,
    pub qubits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    /// Template size of the last candidate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<usize>,
    /// Nonzero terms of the last candidate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_terms: Option<usize>,
    /// Samples drawn per region.
    pub samples: usize,
    /// Scenarios in the final LP, counterexamples included.
    pub scenarios: usize,
    pub counterexamples: usize,
    pub generation_seconds: f64,
    pub verification_seconds: f64,
    pub total_seconds: f64,
    pub conditions: Vec<ConditionReport>,
    #[serde(default)]
    pub iterations: Vec<Iteration>,
    pub config: JobConfig,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        status_code(self.status)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "{}: {} (generation {:.3} s, verification {:.3} s)\n",
            self.job,
            self.status.label(),
            self.generation_seconds,
            self.verification_seconds
        );
        if let Some(text) = &self.certificate_text {
            out.push_str(&format!("  certificate: {text}\n"));
        }
        for c in &self.conditions {
            out.push_str(&format!(
                "  {:<10} {:<9} {:.3} s",
                c.condition, c.verdict, c.seconds
            ));
            if let Some(v) = c.violation {
                out.push_str(&format!("  violation {v:.3e}"));
            }
            if c.marginal {
                out.push_str("  (marginal)");
            }
            if let Some(r) = &c.reason {
                out.push_str(&format!("  ({r})"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs one job, writing solver queries under `dir`.
pub fn run_job(cfg: &JobConfig, dir: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let solver = cfg.solver();
    match cfg.build()? {
        Job::Circuit { problem, synth } => {
            let out = synthesis_loop(&problem, &synth, &solver, dir)?;
            let last = out.iterations.last();
            Ok(RunReport {
                job: cfg.name.clone(),
                status: out.status,
                certificate_text: out
                    .certificate
                    .clone()
                    .map(|c| AnyCertificate::Polynomial(c).describe()),
                terms: last.map(|i| i.terms),
                active_terms: out.certificate.as_ref().map(|c| c.active_terms()),
                certificate: out.certificate.map(AnyCertificate::Polynomial),
                qubits: cfg.qubits(),
                degree: Some(synth.degree),
                samples: synth.samples.init,
                scenarios: out.scenarios,
                counterexamples: out.counterexamples,
                generation_seconds: out.timings.generation(),
                verification_seconds: out.timings.smt,
                total_seconds: out.timings.total,
                conditions: out
                    .verification
                    .as_ref()
                    .map(condition_reports)
                    .unwrap_or_default(),
                iterations: out.iterations,
                config: cfg.clone(),
            })
        }
        Job::Grover {
            instance,
            samples,
            seed,
        } => {
            let out = synth_angle_certificate(&instance, samples, seed, &solver, dir)?;
            Ok(RunReport {
                job: cfg.name.clone(),
                status: out.status,
                certificate_text: out.certificate.map(|c| AnyCertificate::Angle(c).describe()),
                certificate: out.certificate.map(AnyCertificate::Angle),
                qubits: cfg.qubits(),
                degree: Some(1),
                terms: out.certificate.map(|_| 1),
                active_terms: out.certificate.map(|_| 1),
                samples,
                scenarios: 2 * (samples + 2),
                counterexamples: 0,
                generation_seconds: out.timings.generation(),
                verification_seconds: out.timings.smt,
                total_seconds: out.timings.total,
                conditions: out
                    .verification
                    .as_ref()
                    .map(condition_reports)
                    .unwrap_or_default(),
                iterations: Vec::new(),
                config: cfg.clone(),
            })
        }
    }
}

fn default_out(cfg: &JobConfig) -> PathBuf {
    PathBuf::from("qbarrier-out").join(&cfg.name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// `synth`: runs the job and writes `report.json` and the queries (under
/// `smt/`) into the output directory.
pub fn cmd_synth(
    config: &Path,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<RunReport, CliError> {
    let mut cfg = load_config(config)?;
    overrides.apply(&mut cfg);
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_out(&cfg));
    let report = run_job(&cfg, &out.join("smt"))?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub job: String,
    pub verdict: String,
    pub seconds: f64,
    pub conditions: Vec<ConditionReport>,
}

impl VerifyReport {
    /// 0 iff every condition is unsat.
    pub fn exit_code(&self) -> u8 {
        match self.verdict.as_str() {
            "verified" => 0,
            "refuted" => 1,
            _ => 2,
        }
    }
}

/// Reads a certificate from a bare certificate file or a run report.
pub fn read_certificate(path: &Path) -> Result<AnyCertificate, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let inner = match value.get("certificate") {
        Some(c) if value.get("status").is_some() => c.clone(),
        _ => value,
    };
    if inner.is_null() {
        return Err(CliError::Config(format!(
            "{}: report has no certificate",
            path.display()
        )));
    }
    serde_json::from_value(inner)
        .map_err(|e| CliError::Config(format!("{}: not a certificate: {e}", path.display())))
}

/// Checks `cert` against the job in `cfg`, writing queries under `dir`.
pub fn verify_with(
    cfg: &JobConfig,
    cert: &AnyCertificate,
    dir: &Path,
) -> Result<VerifyReport, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let solver = cfg.solver();
    let v = match (cfg.build()?, cert) {
        (Job::Circuit { problem, .. }, AnyCertificate::Polynomial(c)) => {
            qbarrier_core::smt::verify_certificate(&problem, c, &solver, dir)?
        }
        (Job::Grover { instance, .. }, AnyCertificate::Angle(a)) => {
            verify_angle_certificate(&instance, a, &solver, dir)?
        }
        _ => {
            return Err(CliError::Config(
                "certificate kind does not match the job".into(),
            ))
        }
    };
    Ok(VerifyReport {
        job: cfg.name.clone(),
        verdict: v.verdict.label().to_string(),
        seconds: v.seconds,
        conditions: condition_reports(&v),
    })
}

/// `verify`: checks a certificate file against a job.
pub fn cmd_verify(
    config: &Path,
    certificate: &Path,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<VerifyReport, CliError> {
    let mut cfg = load_config(config)?;
    overrides.apply(&mut cfg);
    let cert = read_certificate(certificate)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_out(&cfg));
    let report = verify_with(&cfg, &cert, &out.join("verify"))?;
    write_json(&out.join("verify.json"), &report)?;
    Ok(report)
}

/// `sample`: writes `count` states of a region as CSV rows
/// `region,re0,im0,re1,im1,...`.
pub fn cmd_sample(
    config: &Path,
    region: &str,
    count: usize,
    overrides: &Overrides,
    out: &Path,
) -> Result<usize, CliError> {
    if count == 0 {
        return Err(CliError::Config("sample count must be positive".into()));
    }
    let mut cfg = load_config(config)?;
    overrides.apply(&mut cfg);
    let Job::Circuit { problem, .. } = cfg.build()? else {
        return Err(CliError::Config("sampling applies to circuit jobs".into()));
    };
    let r = match region {
        "init" => &problem.init,
        "unsafe" => &problem.unsafe_set,
        "global" => &problem.global,
        other => {
            return Err(CliError::Config(format!(
                "unknown region `{other}` (init, unsafe, global)"
            )))
        }
    };
    let set = sample_states(r, count, cfg.seed).map_err(|e| CliError::Synthesis(e.to_string()))?;
    let file = std::fs::File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = std::io::BufWriter::new(file);
    let dim = problem.dim();
    let header: Vec<String> = std::iter::once("region".to_string())
        .chain((0..dim).flat_map(|j| [format!("re{j}"), format!("im{j}")]))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| io_err(out, e))?;
    for s in set.states() {
        let row: Vec<String> = std::iter::once(region.to_string())
            .chain(
                s.amps()
                    .iter()
                    .flat_map(|a| [format!("{:e}", a.re), format!("{:e}", a.im)]),
            )
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| io_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(set.len())
}

/// The corpus shipped with the crate.
pub fn bundled_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}
