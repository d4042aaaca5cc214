//! Angle-space model of Grover search with an uncertain solution count and
//! noisy rotation, and the linear finite-horizon certificate `B(φ) = c·φ`.
//!
//! The state `cos φ |α⟩ + sin φ |β⟩` is tracked by its angle. One iteration
//! adds `θ̃ ∈ [θ − η, θ + η]` with `θ = 2·asin √(M/K)`. Certificate arithmetic
//! uses the un-wrapped angle; the extra `nowrap` condition rules out
//! trajectories that run backwards past `−π/6` (equivalently, into the unsafe
//! arc from above after wrapping), which the un-wrapped reading cannot see.

use std::f64::consts::{PI, TAU};
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LpError, LpOutcome, LpProblem, Sense};
use crate::par;
use crate::regions::mix_seed;
use crate::smt::{
    run_checks, run_solver, write_query, Answer, Counterexample, SmtError, SolverConfig, Verdict,
    Verification, RECHECK_SLACK,
};
use crate::sobol::Sobol;
use crate::symbolic::{
    rational_from_decimal, rational_from_display, rational_from_f64, round_sig, round_sig_directed,
    smt_rational,
};
use crate::synth::{Status, Timings};

/// Rational enclosure of π.
const PI_LO: &str = "3.14159265358979";
const PI_HI: &str = "3.14159265358980";
/// Relative widening applied to floating-point angles before emission.
const WIDEN: f64 = 1e-12;
/// Literal enumeration of noise sequences is used up to this many.
const ENUMERATE_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum GroverError {
    #[error("invalid Grover instance: {0}")]
    Domain(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Smt(#[from] SmtError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroverInstance {
    pub qubits: u32,
    /// Solution count; real to admit perturbation.
    pub m: f64,
    pub err: f64,
    pub eta: f64,
    /// Horizon; `None` uses [`horizon`].
    pub steps: Option<usize>,
}

impl GroverInstance {
    pub fn new(
        qubits: u32,
        m: f64,
        err: f64,
        eta: f64,
        steps: Option<usize>,
    ) -> Result<Self, GroverError> {
        let g = GroverInstance {
            qubits,
            m,
            err,
            eta,
            steps,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn k(&self) -> f64 {
        2f64.powi(self.qubits as i32)
    }

    pub fn validate(&self) -> Result<(), GroverError> {
        let bad = |m: String| Err(GroverError::Domain(m));
        if self.qubits == 0 || self.qubits > 62 {
            return bad(format!("qubit count {} out of range", self.qubits));
        }
        if !(self.err >= 0.0 && self.m - self.err > 0.0 && self.m + self.err < self.k()) {
            return bad(format!(
                "need 0 < M - err and M + err < K (M = {}, err = {}, K = {})",
                self.m,
                self.err,
                self.k()
            ));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        if self.steps == Some(0) {
            return bad("horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.steps.unwrap_or_else(|| horizon(self))
    }
}

/// `θ = 2·asin √(M/K)`.
pub fn theta(g: &GroverInstance) -> f64 {
    2.0 * (g.m / g.k()).sqrt().asin()
}

/// Initial angles `[θ′_min/2, θ′_max/2]` for `M′ ∈ [M − err, M + err]`.
pub fn initial_interval(g: &GroverInstance) -> (f64, f64) {
    let k = g.k();
    (
        ((g.m - g.err) / k).sqrt().asin(),
        ((g.m + g.err) / k).sqrt().asin(),
    )
}

pub fn unsafe_interval() -> (f64, f64) {
    (9.0 * PI / 6.0, 11.0 * PI / 6.0)
}

/// `⌈(π/4)·√(K/M)⌉`.
pub fn horizon(g: &GroverInstance) -> usize {
    ((PI / 4.0) * (g.k() / g.m).sqrt()).ceil().max(1.0) as usize
}

/// Un-wrapped successor angle.
pub fn grover_step(phi: f64, theta_tilde: f64) -> f64 {
    phi + theta_tilde
}

/// Representative in `[0, 2π)`.
pub fn wrap(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn grover_step_wrapped(phi: f64, theta_tilde: f64) -> f64 {
    wrap(phi + theta_tilde)
}

/// `B(φ) = c·φ` with finite-horizon constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleCertificate {
    pub c: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub horizon: usize,
}

impl AngleCertificate {
    pub fn eval(&self, phi: f64) -> f64 {
        self.c * phi
    }

    pub fn side_condition_holds(&self) -> bool {
        self.delta >= 0.0 && self.gamma + self.delta * (self.horizon as f64) < self.lambda
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AngleOutcome {
    pub status: Status,
    pub certificate: Option<AngleCertificate>,
    pub verification: Option<Verification>,
    pub objective: Option<f64>,
    pub timings: Timings,
}

fn sobol_angles(lo: f64, hi: f64, n: usize, seed: u64) -> Vec<f64> {
    let s = Sobol::shifted(1, seed).expect("one dimension");
    (0..n as u32)
        .map(|i| lo + (hi - lo) * s.point(i)[0])
        .chain([lo, hi])
        .collect()
}

/// Angle LP: rows `cφ ≤ γ` (initial), `cφ ≥ λ` (unsafe), `c(θ+η) ≤ δ`, and
/// `λ − γ − δT ≥ ρ`; maximizes `λ − γ − δT`.
pub fn build_angle_lp(
    g: &GroverInstance,
    init: &[f64],
    unsafe_angles: &[f64],
    rho: f64,
    bound: f64,
) -> LpProblem {
    let t = g.horizon() as f64;
    let mut p = LpProblem::new();
    let c = p.add_var("c", 0.0, bound, 0.0);
    let gamma = p.add_var("gamma", -bound, bound, -1.0);
    let lambda = p.add_var("lambda", -bound, bound, 1.0);
    let delta = p.add_var("delta", 0.0, bound, -t);
    let fi = p.family("init");
    for &phi in init {
        p.add_row(fi, vec![(c, phi), (gamma, -1.0)], Sense::Le, 0.0);
    }
    let fu = p.family("unsafe");
    for &phi in unsafe_angles {
        p.add_row(fu, vec![(c, phi), (lambda, -1.0)], Sense::Ge, 0.0);
    }
    // c ≥ 0, so μ = η is the worst case of c·(θ + μ)
    let fs = p.family("step");
    p.add_row(
        fs,
        vec![(c, theta(g) + g.eta), (delta, -1.0)],
        Sense::Le,
        0.0,
    );
    let fside = p.family("side");
    p.add_row(
        fside,
        vec![(lambda, 1.0), (gamma, -1.0), (delta, -t)],
        Sense::Ge,
        rho,
    );
    p
}

fn widen_lo(x: f64) -> BigRational {
    rational_from_f64(x - WIDEN * x.abs().max(1.0))
}

fn widen_hi(x: f64) -> BigRational {
    rational_from_f64(x + WIDEN * x.abs().max(1.0))
}

fn r(x: &BigRational) -> String {
    smt_rational(x)
}

pub const ANGLE_CONDITIONS: [&str; 6] = ["init", "unsafe", "step", "side", "drift", "nowrap"];

/// Query text for one angle condition (negated).
pub fn encode_angle_condition(
    g: &GroverInstance,
    cert: &AngleCertificate,
    condition: &str,
) -> Result<String, GroverError> {
    let (ilo, ihi) = initial_interval(g);
    let th = theta(g);
    let pi_lo = rational_from_decimal(PI_LO).unwrap();
    let pi_hi = rational_from_decimal(PI_HI).unwrap();
    let six = BigRational::from_integer(6.into());
    let u_lo = &pi_lo * BigRational::from_integer(9.into()) / &six;
    let u_hi = &pi_hi * BigRational::from_integer(11.into()) / &six;
    let eta = rational_from_display(g.eta);
    let tt_lo = widen_lo(th) - &eta;
    let tt_hi = widen_hi(th) + &eta;
    let c = r(&rational_from_display(cert.c));
    let gamma = r(&rational_from_display(cert.gamma));
    let lambda = r(&rational_from_display(cert.lambda));
    let delta = r(&rational_from_display(cert.delta));
    let horizon = cert.horizon;
    let mut q = String::new();
    let _ = writeln!(q, "; condition {condition}");
    q.push_str("(set-logic QF_NRA)\n(set-option :produce-models true)\n");
    q.push_str("(declare-fun phi () Real)\n(declare-fun tt () Real)\n");
    let init_box = format!(
        "(assert (and (>= phi {}) (<= phi {})))\n",
        r(&widen_lo(ilo)),
        r(&widen_hi(ihi))
    );
    let tt_box = format!(
        "(assert (and (>= tt {}) (<= tt {})))\n",
        r(&tt_lo),
        r(&tt_hi)
    );
    match condition {
        "init" => {
            q.push_str(&init_box);
            let _ = writeln!(q, "(assert (> (* {c} phi) {gamma}))");
        }
        "unsafe" => {
            let _ = writeln!(
                q,
                "(assert (and (>= phi {}) (<= phi {})))",
                r(&u_lo),
                r(&u_hi)
            );
            let _ = writeln!(q, "(assert (< (* {c} phi) {lambda}))");
        }
        "step" => {
            q.push_str(&tt_box);
            let _ = writeln!(q, "(assert (> (- (* {c} (+ phi tt)) (* {c} phi)) {delta}))");
        }
        "side" => {
            let _ = writeln!(
                q,
                "(assert (>= (+ {gamma} (* {horizon}.0 {delta})) {lambda}))"
            );
        }
        "drift" => {
            let _ = writeln!(q, "(assert (< {delta} 0.0))");
        }
        "nowrap" => {
            q.push_str(&init_box);
            q.push_str(&tt_box);
            let _ = writeln!(
                q,
                "(assert (<= (+ phi (* {horizon}.0 tt)) (- {})))",
                r(&(&pi_lo / &six))
            );
        }
        other => return Err(SmtError::NotApplicable(other.to_string()).into()),
    }
    q.push_str("(check-sat)\n(get-model)\n(exit)\n");
    Ok(q)
}

/// Floating-point violation of an angle condition at `(φ, θ̃)`.
pub fn angle_violation(cert: &AngleCertificate, condition: &str, phi: f64, tt: f64) -> f64 {
    match condition {
        "init" => cert.eval(phi) - cert.gamma,
        "unsafe" => cert.lambda - cert.eval(phi),
        "step" => cert.eval(grover_step(phi, tt)) - cert.eval(phi) - cert.delta,
        "side" => cert.gamma + cert.delta * cert.horizon as f64 - cert.lambda,
        "drift" => -cert.delta,
        "nowrap" => -PI / 6.0 - (phi + cert.horizon as f64 * tt),
        _ => f64::NAN,
    }
}

/// Checks all angle conditions with the external solver.
pub fn verify_angle_certificate(
    g: &GroverInstance,
    cert: &AngleCertificate,
    solver: &SolverConfig,
    dir: &Path,
) -> Result<Verification, GroverError> {
    let ids: Vec<String> = ANGLE_CONDITIONS.iter().map(|s| s.to_string()).collect();
    let check = |i: usize| -> Result<(Verdict, Option<PathBuf>), SmtError> {
        let id = ANGLE_CONDITIONS[i];
        let text = encode_angle_condition(g, cert, id).map_err(|e| match e {
            GroverError::Smt(s) => s,
            other => SmtError::Invalid(other.to_string()),
        })?;
        let file = write_query(dir, id, &text)?;
        let verdict = match run_solver(&file, solver)? {
            Answer::Unsat => Verdict::Verified,
            Answer::Unknown(reason) => Verdict::Unknown { reason },
            Answer::Sat(values) => {
                let phi = values.get("phi").copied().unwrap_or(0.0);
                let tt = values.get("tt").copied().unwrap_or(0.0);
                let v = angle_violation(cert, id, phi, tt);
                Verdict::Refuted(Box::new(Counterexample {
                    condition: id.to_string(),
                    state: None,
                    params: vec![vec![tt]],
                    violation: v,
                    marginal: !(v > RECHECK_SLACK),
                    values,
                }))
            }
        };
        Ok((verdict, Some(file)))
    };
    Ok(run_checks(&ids, solver.jobs, check)?)
}

/// Relaxes an LP optimum by a quarter of its slack and rounds to 6
/// significant digits in the safe direction.
fn extract(x: &[f64], s: f64, t: usize) -> AngleCertificate {
    let c = round_sig(x[0], 6);
    AngleCertificate {
        c,
        gamma: round_sig_directed(x[1] + s / 4.0, 6, true),
        lambda: round_sig_directed(x[2] - s / 4.0, 6, false),
        delta: round_sig_directed(x[3] + s / (4.0 * t as f64), 6, true),
        horizon: t,
    }
}

/// Samples the angle sets, solves the LP and verifies the result.
pub fn synth_angle_certificate(
    g: &GroverInstance,
    samples: usize,
    seed: u64,
    solver: &SolverConfig,
    dir: &Path,
) -> Result<AngleOutcome, GroverError> {
    g.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let t0 = Instant::now();
    let (ilo, ihi) = initial_interval(g);
    let (ulo, uhi) = unsafe_interval();
    let init = sobol_angles(ilo, ihi, samples, mix_seed(seed, 1));
    let unsafe_angles = sobol_angles(ulo, uhi, samples, mix_seed(seed, 2));
    timings.sampling = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let lp = build_angle_lp(g, &init, &unsafe_angles, 1e-4, 100.0);
    let outcome = solve_lp(&lp)?;
    timings.lp = t0.elapsed().as_secs_f64();
    let done = |status, certificate, verification, objective, mut timings: Timings| {
        timings.total = start.elapsed().as_secs_f64();
        AngleOutcome {
            status,
            certificate,
            verification,
            objective,
            timings,
        }
    };
    let sol = match outcome {
        LpOutcome::Optimal(s) if s.objective > 0.0 => s,
        LpOutcome::Optimal(s) => {
            return Ok(done(
                Status::Unsolved,
                None,
                None,
                Some(s.objective),
                timings,
            ));
        }
        _ => return Ok(done(Status::Unsolved, None, None, None, timings)),
    };
    let cert = extract(&sol.x, sol.objective, g.horizon());
    let t0 = Instant::now();
    let v = verify_angle_certificate(g, &cert, solver, dir)?;
    timings.smt = t0.elapsed().as_secs_f64();
    let status = match v.verdict {
        Verdict::Verified => Status::Solved,
        Verdict::Refuted(_) => Status::Unsolved,
        Verdict::Unknown { .. } => Status::Unknown,
    };
    Ok(done(
        status,
        Some(cert),
        Some(v),
        Some(sol.objective),
        timings,
    ))
}

/// Result of the brute-force safety simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub initial_angles: usize,
    pub horizon: usize,
    /// `(φ_0, t, net noise)` of the first unsafe visit found, if any.
    pub first_unsafe: Option<(f64, usize, f64)>,
    pub enumerated: bool,
}

fn in_unsafe(phi: f64) -> bool {
    let (lo, hi) = unsafe_interval();
    let w = wrap(phi);
    w >= lo && w <= hi
}

/// First unsafe visit from `phi0` when every sequence in `{−η, 0, η}^T` is
/// enumerated explicitly.
fn enumerate_sequences(phi0: f64, th: f64, eta: f64, t: usize) -> Option<(usize, f64)> {
    let total = 3usize.pow(t as u32);
    for code in 0..total {
        let mut phi = phi0;
        let mut c = code;
        let mut net = 0.0;
        for step in 1..=t {
            let mu = [-eta, 0.0, eta][c % 3];
            c /= 3;
            net += mu;
            phi = grover_step(phi, th + mu);
            if in_unsafe(phi) {
                return Some((step, net));
            }
        }
    }
    None
}

/// Same question via reachable sums: after `t` steps the net noise is
/// `jη` for `j ∈ [−t, t]`, all attainable.
fn reachable_sums(phi0: f64, th: f64, eta: f64, t: usize) -> Option<(usize, f64)> {
    let (lo, hi) = unsafe_interval();
    for step in 1..=t {
        let centre = phi0 + step as f64 * th;
        let span = step as f64 * eta;
        if eta == 0.0 {
            if in_unsafe(centre) {
                return Some((step, 0.0));
            }
            continue;
        }
        let first = ((centre - span - hi) / TAU).floor() as i64;
        let last = ((centre + span - lo) / TAU).ceil() as i64;
        for m in first..=last {
            let (a, b) = (lo + TAU * m as f64, hi + TAU * m as f64);
            let j = ((a - centre) / eta).ceil().max(-(step as f64));
            if j <= step as f64 {
                let x = centre + j * eta;
                if x >= a && x <= b {
                    return Some((step, j * eta));
                }
            }
        }
    }
    None
}

/// Simulates a grid of `grid` initial angles under all noise sequences in
/// `{−η, 0, η}^T`; enumerates sequences literally when there are at most
/// 10^5 of them.
pub fn simulate(g: &GroverInstance, grid: usize, horizon: usize) -> Simulation {
    let (ilo, ihi) = initial_interval(g);
    let th = theta(g);
    let grid = grid.max(2);
    let enumerate = 3f64.powi(horizon as i32) <= ENUMERATE_LIMIT as f64;
    let hits = par::map_range(0, grid, |i| {
        let phi0 = ilo + (ihi - ilo) * i as f64 / (grid - 1) as f64;
        let hit = if enumerate {
            enumerate_sequences(phi0, th, g.eta, horizon)
        } else {
            reachable_sums(phi0, th, g.eta, horizon)
        };
        hit.map(|(t, net)| (phi0, t, net))
    });
    Simulation {
        initial_angles: grid,
        horizon,
        first_unsafe: hits.into_iter().flatten().next(),
        enumerated: enumerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(n: u32, m: f64, err: f64, eta: f64) -> GroverInstance {
        GroverInstance::new(n, m, err, eta, None).unwrap()
    }

    #[test]
    fn theta_values() {
        assert!((theta(&inst(5, 8.0, 0.0, 0.0)) - PI / 3.0).abs() < 1e-15);
        assert!((theta(&inst(2, 1.0, 0.0, 0.0)) - PI / 3.0).abs() < 1e-15);
        let big = theta(&inst(30, 1000.0, 50.0, 0.003));
        let oracle = 2.0 * (1000.0f64 / 1073741824.0).sqrt().asin();
        assert_eq!(big, oracle);
        assert!((big - 0.0019301).abs() < 1e-7);
    }

    #[test]
    fn horizons() {
        assert_eq!(horizon(&inst(30, 1000.0, 50.0, 0.003)), 814);
        assert_eq!(horizon(&inst(2, 1.0, 0.0, 0.0)), 2);
        let g = GroverInstance {
            qubits: 2,
            m: 4.0,
            err: 0.0,
            eta: 0.0,
            steps: None,
        };
        assert_eq!(horizon(&g), 1);
    }

    #[test]
    fn intervals() {
        let (a, b) = initial_interval(&inst(5, 8.0, 0.0, 0.3));
        assert_eq!(a, b);
        let (a, b) = initial_interval(&inst(5, 8.0, 0.5, 0.3));
        assert_eq!(a, (7.5f64 / 32.0).sqrt().asin());
        assert_eq!(b, (8.5f64 / 32.0).sqrt().asin());
        let (c, d) = initial_interval(&inst(5, 8.0, 1.0, 0.3));
        assert!(c <= a && d >= b);
        let (lo, hi) = unsafe_interval();
        assert!(lo <= 5.0 * PI / 3.0 && 5.0 * PI / 3.0 <= hi);
        assert!((hi - lo - PI / 3.0).abs() < 1e-15);
        assert!(lo > PI / 2.0);
    }

    #[test]
    fn domain_checks() {
        assert!(GroverInstance::new(5, 0.5, 0.5, 0.1, None).is_err());
        assert!(GroverInstance::new(2, 3.5, 0.5, 0.1, None).is_err());
        assert!(GroverInstance::new(5, 1.0, 0.5, -0.1, None).is_err());
    }

    #[test]
    fn noiseless_steps_match_closed_form() {
        let g = inst(5, 8.0, 0.0, 0.0);
        let th = theta(&g);
        let mut phi = th / 2.0;
        for k in 1..=7 {
            phi = grover_step(phi, th);
            assert!((phi - (2 * k + 1) as f64 * th / 2.0).abs() < 1e-12);
        }
        assert!(grover_step_wrapped(phi, th) < TAU);
    }

    #[test]
    fn oracle_routes_agree() {
        for (g, t) in [
            (inst(5, 1.0, 0.5, 0.3), 5),
            (inst(5, 8.0, 0.5, 0.3), 2),
            (inst(5, 8.0, 0.5, 0.3), 6),
            (inst(10, 128.0, 5.0, 0.3), 3),
            (inst(6, 1.0, 0.2, 0.5), 8),
        ] {
            let (lo, hi) = initial_interval(&g);
            let th = theta(&g);
            for i in 0..25 {
                let phi0 = lo + (hi - lo) * i as f64 / 24.0;
                let a = enumerate_sequences(phi0, th, g.eta, t).map(|x| x.0);
                let b = reachable_sums(phi0, th, g.eta, t).map(|x| x.0);
                // the first step at which some sequence is unsafe agrees
                let first_a = (1..=t).find(|&s| enumerate_sequences(phi0, th, g.eta, s).is_some());
                assert_eq!(a.is_some(), b.is_some(), "{g:?} t={t} phi0={phi0}");
                assert_eq!(first_a, b);
            }
        }
    }

    #[test]
    fn row4_lp_structure() {
        let g = GroverInstance::new(5, 8.0, 0.5, 0.3, Some(2)).unwrap();
        let init = sobol_angles(initial_interval(&g).0, initial_interval(&g).1, 3000, 1);
        let (ulo, uhi) = unsafe_interval();
        let un = sobol_angles(ulo, uhi, 3000, 2);
        let lp = build_angle_lp(&g, &init, &un, 1e-4, 100.0);
        let LpOutcome::Optimal(s) = solve_lp(&lp).unwrap() else {
            panic!()
        };
        // λ hits the box at the unsafe lower end: c = 100 / (9π/6)
        assert!((s.x[0] - 100.0 / (9.0 * PI / 6.0)).abs() < 1e-6);
        assert!((s.x[2] - 100.0).abs() < 1e-6);
        assert!((s.x[3] - s.x[0] * (PI / 3.0 + 0.3)).abs() < 1e-6);
        assert!((s.x[1] - s.x[0] * initial_interval(&g).1).abs() < 1e-6);
    }
}
