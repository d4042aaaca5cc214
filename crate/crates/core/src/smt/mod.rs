//! Certificate checking by an external SMT solver.
//!
//! Each condition is negated and written to its own SMT-LIB2 file
//! (`<job>/<condition>.smt2`); the solver's `unsat` means the condition
//! holds everywhere. Models returned with `sat` are parsed back into a state
//! and parameter point and re-evaluated in floating point before a
//! refutation is reported.

mod encode;
pub mod sexpr;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::quantum::QuantumState;
use crate::symbolic::rational_from_decimal;
use crate::system::{conditions, violation, Condition, SafetyProblem};
use crate::templates::Certificate;

pub use encode::{certificate_poly, encode_condition, SmtSym};

/// Violations at or below this are treated as rounding noise.
pub const RECHECK_SLACK: f64 = 1e-9;
/// Margin used when re-asking for a clearer violator.
pub const REQUERY_MARGIN: &str = "0.000001";

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("condition `{0}` does not apply to this certificate")]
    NotApplicable(String),
    #[error("invalid query input: {0}")]
    Invalid(String),
    #[error("cannot start solver `{cmd}`: {msg}")]
    Spawn { cmd: String, msg: String },
    #[error("solver produced unusable output for {file}: {msg}")]
    Tool { file: PathBuf, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

/// How to invoke the solver. `{file}` and `{timeout}` (whole seconds) are
/// substituted in each whitespace-separated token of `command`; without a
/// `{file}` token the path is appended.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub command: String,
    pub timeout: Duration,
    /// Queries run concurrently.
    pub jobs: usize,
    /// Extra wall time granted before the process is killed.
    pub grace: Duration,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            command: "z3 -T:{timeout} {file}".into(),
            timeout: Duration::from_secs(300),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            grace: Duration::from_secs(5),
        }
    }
}

/// Raw solver answer.
#[derive(Clone, Debug, PartialEq)]
pub enum Answer {
    Sat(BTreeMap<String, f64>),
    Unsat,
    Unknown(String),
}

/// Runs the solver on a query file.
pub fn run_solver(file: &Path, cfg: &SolverConfig) -> Result<Answer, SmtError> {
    let secs = cfg.timeout.as_secs_f64().ceil().max(1.0) as u64;
    let path = file.display().to_string();
    let mut tokens: Vec<String> = cfg
        .command
        .split_whitespace()
        .map(|t| {
            t.replace("{timeout}", &secs.to_string())
                .replace("{file}", &path)
        })
        .collect();
    if !cfg.command.contains("{file}") {
        tokens.push(path.clone());
    }
    let (prog, args) = tokens.split_first().ok_or_else(|| SmtError::Spawn {
        cmd: cfg.command.clone(),
        msg: "empty command".into(),
    })?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SmtError::Spawn {
            cmd: cfg.command.clone(),
            msg: e.to_string(),
        })?;
    // drain pipes on threads so a chatty solver cannot block on a full pipe
    let mut out = child.stdout.take().unwrap();
    let mut err = child.stderr.take().unwrap();
    let out_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = out.read_to_string(&mut s);
        s
    });
    let err_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = err.read_to_string(&mut s);
        s
    });
    let io = |e: std::io::Error| SmtError::Io {
        path: file.to_path_buf(),
        msg: e.to_string(),
    };
    let limit = Duration::from_secs(secs) + cfg.grace;
    let status = child.wait_timeout(limit).map_err(io)?;
    if status.is_none() {
        let _ = child.kill();
        let _ = child.wait();
        let _ = out_t.join();
        let _ = err_t.join();
        return Ok(Answer::Unknown("timeout".into()));
    }
    let stdout = out_t.join().unwrap_or_default();
    let stderr = err_t.join().unwrap_or_default();
    interpret(&stdout, &stderr, file)
}

fn interpret(stdout: &str, stderr: &str, file: &Path) -> Result<Answer, SmtError> {
    let tool = |msg: String| SmtError::Tool {
        file: file.to_path_buf(),
        msg,
    };
    let items = sexpr::parse_all(stdout).map_err(|e| tool(format!("{e}: {stdout:.200}")))?;
    // the exit status is not consulted: `(get-model)` after unsat is an error
    // for some solvers even though the verdict is fine
    match items.first().and_then(|s| s.atom()) {
        Some("unsat") => Ok(Answer::Unsat),
        Some("sat") => sexpr::parse_model(&items[1..])
            .map(Answer::Sat)
            .map_err(|e| tool(format!("model: {e}"))),
        Some("unknown") => Ok(Answer::Unknown("solver returned unknown".into())),
        Some("timeout") => Ok(Answer::Unknown("timeout".into())),
        _ => Err(tool(format!(
            "unexpected output `{}` (stderr: `{}`)",
            stdout.trim().chars().take(200).collect::<String>(),
            stderr.trim().chars().take(200).collect::<String>()
        ))),
    }
}

/// A solver model that violates a condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub condition: String,
    pub state: Option<QuantumState>,
    /// Parameter point per dynamics step, indexed by parameter id.
    pub params: Vec<Vec<f64>>,
    /// Floating-point violation of the condition at the model.
    pub violation: f64,
    /// The float re-check could not confirm a violation above the slack.
    pub marginal: bool,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Verified,
    Refuted(Box<Counterexample>),
    Unknown { reason: String },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Verified => "verified",
            Verdict::Refuted(_) => "refuted",
            Verdict::Unknown { .. } => "unknown",
        }
    }
}

/// Outcome of one condition; `verdict` is `None` when skipped after an
/// earlier refutation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub verdict: Option<Verdict>,
    pub seconds: f64,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verification {
    pub verdict: Verdict,
    pub checks: Vec<ConditionCheck>,
    pub seconds: f64,
}

/// Runs `check(i)` for `i in 0..n`, `jobs` at a time, in index order. Stops
/// after the first batch containing a refutation; the overall verdict is the
/// first refutation by index, else unknown if any, else verified.
pub(crate) fn run_checks<F>(ids: &[String], jobs: usize, check: F) -> Result<Verification, SmtError>
where
    F: Fn(usize) -> Result<(Verdict, Option<PathBuf>), SmtError> + Sync,
{
    let start = Instant::now();
    let jobs = jobs.max(1);
    let mut checks: Vec<ConditionCheck> = Vec::with_capacity(ids.len());
    let mut refuted = None;
    for chunk_start in (0..ids.len()).step_by(jobs) {
        let end = (chunk_start + jobs).min(ids.len());
        let results: Vec<Result<(Verdict, Option<PathBuf>, f64), SmtError>> =
            std::thread::scope(|s| {
                let handles: Vec<_> = (chunk_start..end)
                    .map(|i| {
                        let check = &check;
                        s.spawn(move || {
                            let t = Instant::now();
                            check(i).map(|(v, f)| (v, f, t.elapsed().as_secs_f64()))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("condition check panicked"))
                    .collect()
            });
        for (i, r) in (chunk_start..end).zip(results) {
            let (verdict, file, seconds) = r?;
            if refuted.is_none() && matches!(verdict, Verdict::Refuted(_)) {
                refuted = Some(verdict.clone());
            }
            checks.push(ConditionCheck {
                condition: ids[i].clone(),
                verdict: Some(verdict),
                seconds,
                file,
            });
        }
        if refuted.is_some() {
            break;
        }
    }
    for id in &ids[checks.len()..] {
        checks.push(ConditionCheck {
            condition: id.clone(),
            verdict: None,
            seconds: 0.0,
            file: None,
        });
    }
    let verdict = match refuted {
        Some(v) => v,
        None => checks
            .iter()
            .filter_map(|c| c.verdict.as_ref())
            .find(|v| matches!(v, Verdict::Unknown { .. }))
            .cloned()
            .unwrap_or(Verdict::Verified),
    };
    Ok(Verification {
        verdict,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub(crate) fn write_query(dir: &Path, id: &str, text: &str) -> Result<PathBuf, SmtError> {
    std::fs::create_dir_all(dir).map_err(|e| SmtError::Io {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    })?;
    let path = dir.join(format!("{id}.smt2"));
    std::fs::write(&path, text).map_err(|e| SmtError::Io {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    Ok(path)
}

/// State and per-step parameter point encoded by a model.
fn decode_model(
    problem: &SafetyProblem,
    cond: &Condition,
    steps: usize,
    values: &BTreeMap<String, f64>,
) -> (Option<QuantumState>, Vec<Vec<f64>>) {
    let d = problem.dim();
    let get = |n: String| values.get(&n).copied().unwrap_or(0.0);
    let state = match cond {
        Condition::Side | Condition::Drift => None,
        _ => {
            let amps: Vec<Complex64> = (0..d)
                .map(|j| Complex64::new(get(format!("x{j}")), get(format!("y{j}"))))
                .collect();
            QuantumState::normalized(amps).ok()
        }
    };
    let specs = problem.dynamics.params();
    let params = (1..=steps)
        .map(|s| {
            specs
                .iter()
                .map(|p| {
                    values
                        .get(&format!("e{}_{s}", p.id))
                        .copied()
                        .unwrap_or(p.lo)
                        .clamp(p.lo, p.hi)
                })
                .collect()
        })
        .collect();
    (state, params)
}

fn check_condition(
    problem: &SafetyProblem,
    cert: &Certificate,
    cond: &Condition,
    dir: &Path,
    solver: &SolverConfig,
) -> Result<(Verdict, Option<PathBuf>), SmtError> {
    let id = cond.id();
    let text = encode_condition(problem, cert, cond, None)?;
    let file = write_query(dir, &id, &text)?;
    let steps = cond.steps(&cert.flavor);
    let recheck = |values: BTreeMap<String, f64>| -> Counterexample {
        let (state, params) = decode_model(problem, cond, steps, &values);
        let v = match (&state, cond) {
            (None, Condition::Side | Condition::Drift) => {
                let dummy = QuantumState::basis(problem.dynamics.qubits(), 0);
                violation(problem, cert, cond, &dummy, &params).unwrap_or(f64::NAN)
            }
            (Some(s), _) => violation(problem, cert, cond, s, &params).unwrap_or(f64::NAN),
            (None, _) => f64::NAN,
        };
        Counterexample {
            condition: id.clone(),
            state,
            params,
            violation: v,
            marginal: !(v > RECHECK_SLACK),
            values,
        }
    };
    match run_solver(&file, solver)? {
        Answer::Unsat => Ok((Verdict::Verified, Some(file))),
        Answer::Unknown(reason) => Ok((Verdict::Unknown { reason }, Some(file))),
        Answer::Sat(values) => {
            let cex = recheck(values);
            if !cex.marginal {
                return Ok((Verdict::Refuted(Box::new(cex)), Some(file)));
            }
            log::debug!(
                "{id}: borderline model (violation {:e}); asking for margin",
                cex.violation
            );
            let margin = rational_from_decimal(REQUERY_MARGIN).expect("literal");
            let text = encode_condition(problem, cert, cond, Some(&margin))?;
            let f2 = write_query(dir, &format!("{id}.margin"), &text)?;
            match run_solver(&f2, solver)? {
                Answer::Sat(values) => {
                    let c2 = recheck(values);
                    let best = if c2.violation > cex.violation || cex.violation.is_nan() {
                        c2
                    } else {
                        cex
                    };
                    Ok((Verdict::Refuted(Box::new(best)), Some(file)))
                }
                // the exact solver found a violation, however small
                _ => Ok((Verdict::Refuted(Box::new(cex)), Some(file))),
            }
        }
    }
}

/// Checks every condition of the certificate's flavor, writing queries under
/// `dir`. Verified iff every query is unsat.
pub fn verify_certificate(
    problem: &SafetyProblem,
    cert: &Certificate,
    solver: &SolverConfig,
    dir: &Path,
) -> Result<Verification, SmtError> {
    problem
        .check_certificate(cert)
        .map_err(|e| SmtError::Invalid(e.to_string()))?;
    let conds = conditions(&cert.flavor, &problem.dynamics);
    let ids: Vec<String> = conds.iter().map(|c| c.id()).collect();
    run_checks(&ids, solver.jobs, |i| {
        check_condition(problem, cert, &conds[i], dir, solver)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interprets_first_token() {
        let f = Path::new("q.smt2");
        assert_eq!(
            interpret("unsat\n(error \"model is not available\")\n", "", f).unwrap(),
            Answer::Unsat
        );
        assert!(matches!(
            interpret("unknown\n", "", f).unwrap(),
            Answer::Unknown(_)
        ));
        assert!(matches!(
            interpret("timeout\n", "", f).unwrap(),
            Answer::Unknown(_)
        ));
        match interpret("sat\n((define-fun x0 () Real 1.0))", "", f).unwrap() {
            Answer::Sat(m) => assert_eq!(m["x0"], 1.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            interpret("", "segfault", f),
            Err(SmtError::Tool { .. })
        ));
        assert!(matches!(
            interpret("(error \"x\")", "", f),
            Err(SmtError::Tool { .. })
        ));
    }

    #[test]
    fn missing_solver_is_a_spawn_error() {
        let cfg = SolverConfig {
            command: "definitely-not-a-solver-binary {file}".into(),
            ..SolverConfig::default()
        };
        let err = run_solver(Path::new("/nonexistent.smt2"), &cfg).unwrap_err();
        assert!(matches!(err, SmtError::Spawn { .. }));
    }

    #[test]
    fn batches_stop_after_first_refutation() {
        let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let cex = Counterexample {
            condition: "c3".into(),
            state: None,
            params: vec![],
            violation: 1.0,
            marginal: false,
            values: BTreeMap::new(),
        };
        let v = run_checks(&ids, 2, |i| {
            Ok((
                match i {
                    1 => Verdict::Unknown { reason: "t".into() },
                    3 => Verdict::Refuted(Box::new(cex.clone())),
                    _ => Verdict::Verified,
                },
                None,
            ))
        })
        .unwrap();
        assert_eq!(v.verdict.label(), "refuted");
        assert!(v.checks[4].verdict.is_none() && v.checks[5].verdict.is_none());
        let all = run_checks(&ids[..3], 4, |i| {
            Ok((
                if i == 2 {
                    Verdict::Unknown { reason: "t".into() }
                } else {
                    Verdict::Verified
                },
                None,
            ))
        })
        .unwrap();
        assert_eq!(all.verdict.label(), "unknown");
    }
}
