//! Scenario-LP synthesis of barrier certificates.
//!
//! Each certificate condition is imposed at sampled states, giving linear
//! rows in the real and imaginary parts of the template coefficients and the
//! flavor constants. The LP maximizes the flavor's separation slack `s`; a
//! positive optimum is relaxed so every sampled condition holds with margin
//! proportional to `s`, rounded, and handed to the SMT checker. Refuting
//! models are fed back as extra scenarios; the template grows when the LP
//! runs out of slack or the counterexample rounds are exhausted.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{CuttingPlane, LpError, LpOutcome, LpProblem, LpSolution, LpSolver, Row, Sense};
use crate::par;
use crate::quantum::{Dynamics, QuantumError, QuantumState};
use crate::regions::{mix_seed, sample_states, RegionError};
use crate::smt::{SmtError, SolverConfig, Verdict, Verification};
use crate::symbolic::{round_sig, round_sig_directed};
use crate::system::{conditions, violation, Condition, SafetyProblem, SystemError};
use crate::templates::{enumerate_terms, BarrierTemplate, Certificate, Flavor, Monomial};

/// Tolerance of the independent scenario re-check after rounding.
pub const RECHECK_TOL: f64 = 1e-6;
/// Coefficients below this are dropped by the sparsity pass.
const SPARSE_ZERO: f64 = 1e-7;
/// Numerical noise cut-off for row coefficients.
const COEF_ZERO: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis configuration: {0}")]
    Config(String),
    #[error("{0} scenario set is empty")]
    EmptyScenarios(&'static str),
    #[error("scenario has dimension {got}, template expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no candidate at this template size (objective {0:e})")]
    NoCandidate(f64),
    #[error("rounded certificate fails the scenario re-check (worst violation {0:e})")]
    Rounding(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Smt(#[from] SmtError),
}

/// Requested certificate kind; `None` for `epsilon`/`gamma` makes them LP
/// variables in `[0, C]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlavorSpec {
    Invariant,
    KInductive {
        k: usize,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Hybrid {
        k: usize,
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    FiniteHorizon {
        horizon: usize,
    },
}

impl FlavorSpec {
    pub fn k(&self) -> usize {
        match self {
            FlavorSpec::KInductive { k, .. } | FlavorSpec::Hybrid { k, .. } => *k,
            _ => 1,
        }
    }

    pub fn family_size(&self) -> usize {
        match self {
            FlavorSpec::Hybrid { k, .. } => *k,
            _ => 1,
        }
    }

    /// A flavor with placeholder constants, used to enumerate conditions.
    fn shape(&self) -> Flavor {
        match *self {
            FlavorSpec::Invariant => Flavor::Invariant,
            FlavorSpec::KInductive { k, .. } => Flavor::KInductive {
                k,
                epsilon: 0.0,
                d: 0.0,
            },
            FlavorSpec::Hybrid { k, .. } => Flavor::Hybrid {
                k,
                epsilon: 0.0,
                gamma: 0.0,
                d: 0.0,
            },
            FlavorSpec::FiniteHorizon { horizon } => Flavor::FiniteHorizon {
                horizon,
                gamma: 0.0,
                lambda: 0.0,
                delta: 0.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnUnknown {
    /// Report `unknown` with the undecided candidate.
    Stop,
    /// Keep growing the template; report `unknown` only if nothing verifies.
    Continue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleCounts {
    pub init: usize,
    pub unsafe_set: usize,
    pub global: usize,
}

impl SampleCounts {
    pub fn uniform(n: usize) -> Self {
        SampleCounts {
            init: n,
            unsafe_set: n,
            global: n,
        }
    }

    pub fn total(&self) -> usize {
        self.init + self.unsafe_set + self.global
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub flavor: FlavorSpec,
    pub degree: u32,
    pub samples: SampleCounts,
    pub seed: u64,
    /// Margin for strict inequalities.
    pub rho: f64,
    /// Box bound on coefficient parts and flavor constants.
    pub coef_bound: f64,
    /// Parameter points drawn per global state for uncertain dynamics.
    pub param_points: usize,
    /// Counterexample-guided re-solves per template size.
    pub cegis_rounds: usize,
    /// First template size (`None`: constant plus all probabilities).
    pub start_terms: Option<usize>,
    /// Largest template size tried.
    pub max_terms: usize,
    pub on_unknown: OnUnknown,
    /// L1 pass that trades half the slack for fewer nonzero coefficients.
    pub sparsify: bool,
}

impl SynthesisConfig {
    pub fn new(flavor: FlavorSpec, degree: u32, samples: usize) -> Self {
        SynthesisConfig {
            flavor,
            degree,
            samples: SampleCounts::uniform(samples),
            seed: 0,
            rho: 1e-4,
            coef_bound: 100.0,
            param_points: 5,
            cegis_rounds: 10,
            start_terms: None,
            max_terms: 64,
            on_unknown: OnUnknown::Stop,
            sparsify: false,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.flavor.k() == 0 {
            return bad("k must be at least 1");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.coef_bound > 0.0) {
            return bad("coefficient bound must be positive");
        }
        if self.degree == 0 {
            return bad("degree must be at least 1");
        }
        if self.param_points == 0 {
            return bad("param_points must be at least 1");
        }
        if self.max_terms == 0 {
            return bad("max_terms must be at least 1");
        }
        if let FlavorSpec::FiniteHorizon { horizon: 0 } = self.flavor {
            return bad("horizon must be at least 1");
        }
        let fixed_ok = |v: Option<f64>| v.is_none_or(|x| x >= 0.0 && x <= self.coef_bound);
        match self.flavor {
            FlavorSpec::KInductive { epsilon, .. } if !fixed_ok(epsilon) => {
                bad("epsilon must lie in [0, C]")
            }
            FlavorSpec::Hybrid { epsilon, gamma, .. } if !fixed_ok(epsilon) || !fixed_ok(gamma) => {
                bad("epsilon and gamma must lie in [0, C]")
            }
            _ => Ok(()),
        }
    }
}

/// A global-region scenario: a state plus one parameter point per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalSample {
    pub state: QuantumState,
    pub params: Vec<Vec<f64>>,
}

/// States the LP is built from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenarios {
    pub init: Vec<QuantumState>,
    pub unsafe_set: Vec<QuantumState>,
    pub global: Vec<GlobalSample>,
}

fn draw_params(dynamics: &Dynamics, steps: usize, seed: u64) -> Vec<Vec<f64>> {
    if !dynamics.is_uncertain() {
        return vec![Vec::new(); steps];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| {
            dynamics
                .params()
                .iter()
                .map(|p| p.lo + (p.hi - p.lo) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

const PARAM_SALT: u64 = 0x5eed_0f_9a7a;

impl Scenarios {
    /// Samples every region; uncertain dynamics get `param_points` parameter
    /// points per global state.
    pub fn sample(problem: &SafetyProblem, cfg: &SynthesisConfig) -> Result<Self, SynthError> {
        let init = sample_states(&problem.init, cfg.samples.init, mix_seed(cfg.seed, 1))?;
        let unsafe_set = sample_states(
            &problem.unsafe_set,
            cfg.samples.unsafe_set,
            mix_seed(cfg.seed, 2),
        )?;
        let global = sample_states(&problem.global, cfg.samples.global, mix_seed(cfg.seed, 3))?;
        let steps = cfg.flavor.k().max(1);
        let u = if problem.dynamics.is_uncertain() {
            cfg.param_points
        } else {
            1
        };
        let salt = mix_seed(cfg.seed, PARAM_SALT);
        let expanded = par::map_range(0, global.len() * u, |i| GlobalSample {
            state: global.states()[i / u].clone(),
            params: draw_params(&problem.dynamics, steps, mix_seed(salt, i as u64)),
        });
        Ok(Scenarios {
            init: init.states().to_vec(),
            unsafe_set: unsafe_set.states().to_vec(),
            global: expanded,
        })
    }

    pub fn len(&self) -> usize {
        self.init.len() + self.unsafe_set.len() + self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where each coefficient part and flavor constant lives in the LP.
#[derive(Clone, Debug, PartialEq)]
pub struct VarLayout {
    pub re: Vec<Vec<usize>>,
    /// `None` for self-conjugate terms, whose value is always real.
    pub im: Vec<Vec<Option<usize>>>,
    pub gamma: Option<usize>,
    pub d: Option<usize>,
    pub epsilon: Option<usize>,
    pub lambda: Option<usize>,
    pub delta: Option<usize>,
}

/// The scenario LP together with its variable layout.
#[derive(Clone, Debug)]
pub struct SynthLp {
    pub problem: LpProblem,
    pub layout: VarLayout,
    pub flavor: FlavorSpec,
}

/// Row coefficients of `Σ_m sign_m·B_m` given term values per member.
fn b_coeffs(layout: &VarLayout, parts: &[(usize, f64, &[Complex64])]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for &(m, sign, vals) in parts {
        for (i, v) in vals.iter().enumerate() {
            let re = sign * v.re;
            if re.abs() > COEF_ZERO {
                out.push((layout.re[m][i], re));
            }
            if let Some(idx) = layout.im[m][i] {
                let im = -sign * v.im;
                if im.abs() > COEF_ZERO {
                    out.push((idx, im));
                }
            }
        }
    }
    out
}

fn advance(
    dynamics: &Dynamics,
    s: &QuantumState,
    t0: usize,
    steps: usize,
    params: &[Vec<f64>],
) -> Result<QuantumState, SynthError> {
    let mut cur = s.clone();
    for i in 0..steps {
        let point = params.get(i).or(params.last()).map(|v| v.as_slice());
        cur = dynamics.step(t0 + i, &cur, point)?;
    }
    Ok(cur)
}

fn check_dims(template: &BarrierTemplate, sc: &Scenarios) -> Result<(), SynthError> {
    let d = template.dim();
    let all = sc
        .init
        .iter()
        .chain(&sc.unsafe_set)
        .chain(sc.global.iter().map(|g| &g.state));
    for s in all {
        if s.dim() != d {
            return Err(SynthError::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
    }
    if sc.init.is_empty() {
        return Err(SynthError::EmptyScenarios("init"));
    }
    if sc.unsafe_set.is_empty() {
        return Err(SynthError::EmptyScenarios("unsafe"));
    }
    if sc.global.is_empty() {
        return Err(SynthError::EmptyScenarios("global"));
    }
    Ok(())
}

/// Assembles the scenario LP for `cfg.flavor`.
pub fn build_lp(
    template: &BarrierTemplate,
    scenarios: &Scenarios,
    dynamics: &Dynamics,
    cfg: &SynthesisConfig,
) -> Result<SynthLp, SynthError> {
    cfg.validate()?;
    check_dims(template, scenarios)?;
    if template.dim() != dynamics.dim() {
        return Err(SynthError::DimensionMismatch {
            expected: template.dim(),
            got: dynamics.dim(),
        });
    }
    let c = cfg.coef_bound;
    let fam = cfg.flavor.family_size();
    let mut p = LpProblem::new();
    let mut re = Vec::with_capacity(fam);
    let mut im = Vec::with_capacity(fam);
    for m in 0..fam {
        let mut r = Vec::with_capacity(template.len());
        let mut ii = Vec::with_capacity(template.len());
        for (i, t) in template.terms().iter().enumerate() {
            r.push(p.add_var(&format!("re_{m}_{i}"), -c, c, 0.0));
            ii.push(if t.is_self_conjugate() {
                None
            } else {
                Some(p.add_var(&format!("im_{m}_{i}"), -c, c, 0.0))
            });
        }
        re.push(r);
        im.push(ii);
    }
    let mut layout = VarLayout {
        re,
        im,
        gamma: None,
        d: None,
        epsilon: None,
        lambda: None,
        delta: None,
    };
    let k = cfg.flavor.k();
    // (variable, fixed value) for ε and γ of k-inductive / hybrid
    let mut eps_fixed = 0.0;
    let mut gam_fixed = 0.0;
    match cfg.flavor {
        FlavorSpec::Invariant => layout.gamma = Some(p.add_var("gamma", -c, c, 1.0)),
        FlavorSpec::KInductive { epsilon, .. } => {
            layout.d = Some(p.add_var("d", -c, c, 1.0));
            match epsilon {
                Some(e) => eps_fixed = e,
                None => layout.epsilon = Some(p.add_var("epsilon", 0.0, c, -(k as f64))),
            }
        }
        FlavorSpec::Hybrid { epsilon, gamma, .. } => {
            layout.d = Some(p.add_var("d", -c, c, 1.0));
            match epsilon {
                Some(e) => eps_fixed = e,
                None => layout.epsilon = Some(p.add_var("epsilon", 0.0, c, -(k as f64))),
            }
            match gamma {
                Some(g) => gam_fixed = g,
                None => layout.gamma = Some(p.add_var("gamma", 0.0, c, -(k as f64))),
            }
        }
        FlavorSpec::FiniteHorizon { horizon } => {
            layout.gamma = Some(p.add_var("gamma", -c, c, -1.0));
            layout.lambda = Some(p.add_var("lambda", -c, c, 1.0));
            layout.delta = Some(p.add_var("delta", 0.0, c, -(horizon as f64)));
        }
    }

    let shape = cfg.flavor.shape();
    let conds = conditions(&shape, dynamics);
    let init_vals = par::map_slice(&scenarios.init, |s| template.eval_terms(s.amps()));
    let unsafe_vals = par::map_slice(&scenarios.unsafe_set, |s| template.eval_terms(s.amps()));
    let global_vals = par::map_slice(&scenarios.global, |g| template.eval_terms(g.state.amps()));

    for cond in &conds {
        let f = p.family(&cond.id());
        let rows: Vec<Row> = match (&cfg.flavor, cond) {
            (_, Condition::Init) => {
                let (rhs, extra) = match layout.gamma {
                    Some(g) if matches!(cfg.flavor, FlavorSpec::FiniteHorizon { .. }) => {
                        (0.0, Some((g, -1.0)))
                    }
                    _ => (0.0, None),
                };
                init_vals
                    .iter()
                    .map(|v| {
                        let mut co = b_coeffs(&layout, &[(0, 1.0, v)]);
                        co.extend(extra);
                        Row {
                            coeffs: co,
                            sense: Sense::Le,
                            rhs,
                            family: f,
                        }
                    })
                    .collect()
            }
            (_, Condition::Unsafe { member }) => {
                let m = member.unwrap_or(0);
                let sep = layout
                    .gamma
                    .filter(|_| matches!(cfg.flavor, FlavorSpec::Invariant));
                let sep = sep
                    .or(layout.d)
                    .or(layout.lambda)
                    .expect("separation variable");
                unsafe_vals
                    .iter()
                    .map(|v| {
                        let mut co = b_coeffs(&layout, &[(m, 1.0, v)]);
                        co.push((sep, -1.0));
                        Row {
                            coeffs: co,
                            sense: Sense::Ge,
                            rhs: 0.0,
                            family: f,
                        }
                    })
                    .collect()
            }
            (_, Condition::Step { t }) => {
                let m = t % cfg.flavor.family_size();
                let (slack_var, slack_fixed) = match cfg.flavor {
                    FlavorSpec::Invariant => (None, 0.0),
                    FlavorSpec::FiniteHorizon { .. } => (layout.delta, 0.0),
                    _ => (layout.epsilon, eps_fixed),
                };
                let rows = par::map_range(0, scenarios.global.len(), |i| {
                    let g = &scenarios.global[i];
                    let next = advance(dynamics, &g.state, *t, 1, &g.params)?;
                    let nv = template.eval_terms(next.amps());
                    let diff: Vec<Complex64> =
                        nv.iter().zip(&global_vals[i]).map(|(a, b)| a - b).collect();
                    let mut co = b_coeffs(&layout, &[(m, 1.0, &diff)]);
                    if let Some(sv) = slack_var {
                        co.push((sv, -1.0));
                    }
                    Ok(Row {
                        coeffs: co,
                        sense: Sense::Le,
                        rhs: slack_fixed,
                        family: f,
                    })
                });
                rows.into_iter().collect::<Result<Vec<_>, SynthError>>()?
            }
            (_, Condition::Shift { j }) => {
                let next = (j + 1) % k;
                global_vals
                    .iter()
                    .map(|v| {
                        let mut co = b_coeffs(&layout, &[(next, 1.0, v), (*j, -1.0, v)]);
                        merge(&mut co);
                        if let Some(g) = layout.gamma {
                            co.push((g, -1.0));
                        }
                        Row {
                            coeffs: co,
                            sense: Sense::Le,
                            rhs: gam_fixed,
                            family: f,
                        }
                    })
                    .collect()
            }
            (_, Condition::KStep { t }) => {
                let rows = par::map_range(0, scenarios.global.len(), |i| {
                    let g = &scenarios.global[i];
                    let next = advance(dynamics, &g.state, *t, k, &g.params)?;
                    let nv = template.eval_terms(next.amps());
                    let diff: Vec<Complex64> =
                        nv.iter().zip(&global_vals[i]).map(|(a, b)| a - b).collect();
                    Ok(Row {
                        coeffs: b_coeffs(&layout, &[(0, 1.0, &diff)]),
                        sense: Sense::Le,
                        rhs: 0.0,
                        family: f,
                    })
                });
                rows.into_iter().collect::<Result<Vec<_>, SynthError>>()?
            }
            (FlavorSpec::KInductive { .. } | FlavorSpec::Hybrid { .. }, Condition::Side) => {
                // d − k(ε + γ) ≥ ρ, fixed parts moved to the right-hand side
                let mut co = vec![(layout.d.unwrap(), 1.0)];
                if let Some(e) = layout.epsilon {
                    co.push((e, -(k as f64)));
                }
                if let (FlavorSpec::Hybrid { .. }, Some(g)) = (&cfg.flavor, layout.gamma) {
                    co.push((g, -(k as f64)));
                }
                let fixed = k as f64 * (eps_fixed + gam_fixed);
                vec![Row {
                    coeffs: co,
                    sense: Sense::Ge,
                    rhs: cfg.rho + fixed,
                    family: f,
                }]
            }
            (FlavorSpec::FiniteHorizon { horizon }, Condition::Side) => vec![Row {
                coeffs: vec![
                    (layout.lambda.unwrap(), 1.0),
                    (layout.gamma.unwrap(), -1.0),
                    (layout.delta.unwrap(), -(*horizon as f64)),
                ],
                sense: Sense::Ge,
                rhs: cfg.rho,
                family: f,
            }],
            // δ ≥ 0 is a variable bound
            (_, Condition::Drift) => Vec::new(),
            _ => Vec::new(),
        };
        p.extend_rows(rows);
    }
    Ok(SynthLp {
        problem: p,
        layout,
        flavor: cfg.flavor.clone(),
    })
}

fn merge(co: &mut Vec<(usize, f64)>) {
    co.sort_by_key(|&(i, _)| i);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(co.len());
    for &(i, c) in co.iter() {
        match out.last_mut() {
            Some((j, acc)) if *j == i => *acc += c,
            _ => out.push((i, c)),
        }
    }
    out.retain(|(_, c)| c.abs() > COEF_ZERO);
    *co = out;
}

/// Solves the scenario LP, optionally followed by the sparsity pass.
pub fn solve_synth_lp(lp: &SynthLp, cfg: &SynthesisConfig) -> Result<LpOutcome, SynthError> {
    let solver = CuttingPlane::default();
    let out = solver.solve(&lp.problem)?;
    if !cfg.sparsify {
        return Ok(out);
    }
    let LpOutcome::Optimal(first) = &out else {
        return Ok(out);
    };
    if first.objective <= 0.0 {
        return Ok(out);
    }
    // min Σ t_i  s.t. |α_i| ≤ t_i, original rows, objective ≥ s*/2
    let mut p = lp.problem.clone();
    let obj_row: Vec<(usize, f64)> = p
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.obj != 0.0)
        .map(|(i, v)| (i, v.obj))
        .collect();
    let n_orig = p.vars().len();
    let coef_vars: Vec<usize> = lp
        .layout
        .re
        .iter()
        .flatten()
        .copied()
        .chain(lp.layout.im.iter().flatten().flatten().copied())
        .collect();
    let mut p2 = LpProblem::new();
    for v in p.vars() {
        p2.add_var(&v.name, v.lo, v.hi, 0.0);
    }
    for fname in p.families().to_vec() {
        p2.family(&fname);
    }
    p2.extend_rows(p.rows().iter().cloned());
    let fam = p2.family("sparsity");
    for (n, &a) in coef_vars.iter().enumerate() {
        let t = p2.add_var(&format!("abs_{n}"), 0.0, cfg.coef_bound, -1.0);
        p2.add_row(fam, vec![(t, 1.0), (a, -1.0)], Sense::Ge, 0.0);
        p2.add_row(fam, vec![(t, 1.0), (a, 1.0)], Sense::Ge, 0.0);
    }
    p2.add_row(fam, obj_row.clone(), Sense::Ge, 0.5 * first.objective);
    p = p2;
    match solver.solve(&p)? {
        LpOutcome::Optimal(mut s) => {
            s.x.truncate(n_orig);
            for &a in &coef_vars {
                if s.x[a].abs() < SPARSE_ZERO {
                    s.x[a] = 0.0;
                }
            }
            s.objective = obj_row.iter().map(|&(i, c)| c * s.x[i]).sum();
            s.max_violation = lp.problem.max_violation(&s.x);
            Ok(LpOutcome::Optimal(s))
        }
        _ => Ok(out),
    }
}

fn constant_index(template: &BarrierTemplate) -> Option<usize> {
    template.terms().iter().position(Monomial::is_constant)
}

/// Relaxed, unrounded certificate read from an LP point.
fn relaxed(lp: &SynthLp, sol: &LpSolution, template: &BarrierTemplate) -> Certificate {
    let x = &sol.x;
    let s = sol.objective;
    let mut coefs: Vec<Vec<Complex64>> = lp
        .layout
        .re
        .iter()
        .zip(&lp.layout.im)
        .map(|(r, i)| {
            r.iter()
                .zip(i)
                .map(|(&a, b)| Complex64::new(x[a], b.map_or(0.0, |b| x[b])))
                .collect()
        })
        .collect();
    let get = |v: Option<usize>| v.map(|i| x[i]);
    let shift_constant = |coefs: &mut Vec<Vec<Complex64>>, by: f64| -> bool {
        match constant_index(template) {
            Some(c) => {
                for m in coefs.iter_mut() {
                    m[c].re -= by;
                }
                true
            }
            None => false,
        }
    };
    let flavor = match lp.flavor {
        FlavorSpec::Invariant => {
            shift_constant(&mut coefs, s / 2.0);
            Flavor::Invariant
        }
        FlavorSpec::KInductive { k, epsilon } => {
            let eps = epsilon.or(get(lp.layout.epsilon)).unwrap_or(0.0);
            let d = get(lp.layout.d).unwrap();
            let d = if shift_constant(&mut coefs, s / 3.0) {
                d - 2.0 * s / 3.0
            } else {
                d - s / 2.0
            };
            Flavor::KInductive { k, epsilon: eps, d }
        }
        FlavorSpec::Hybrid { k, epsilon, gamma } => {
            let eps = epsilon.or(get(lp.layout.epsilon)).unwrap_or(0.0);
            let gam = gamma.or(get(lp.layout.gamma)).unwrap_or(0.0);
            let d = get(lp.layout.d).unwrap();
            let d = if shift_constant(&mut coefs, s / 3.0) {
                d - 2.0 * s / 3.0
            } else {
                d - s / 2.0
            };
            Flavor::Hybrid {
                k,
                epsilon: eps,
                gamma: gam,
                d,
            }
        }
        FlavorSpec::FiniteHorizon { horizon } => {
            let mut gamma = get(lp.layout.gamma).unwrap() + s / 4.0;
            let mut lambda = get(lp.layout.lambda).unwrap() - s / 4.0;
            // The conditions are invariant under a common shift of the
            // constant, γ and λ; normalize to γ = 0.
            if shift_constant(&mut coefs, gamma) {
                lambda -= gamma;
                gamma = 0.0;
            }
            Flavor::FiniteHorizon {
                horizon,
                gamma,
                lambda,
                delta: get(lp.layout.delta).unwrap() + s / (4.0 * horizon as f64),
            }
        }
    };
    Certificate {
        template: template.clone(),
        coefficients: coefs,
        flavor,
    }
}

/// Rounds coefficients to `digits` significant digits and the constants in
/// the direction that keeps the side condition.
fn rounded(c: &Certificate, digits: u32) -> Certificate {
    let scale = c
        .coefficients
        .iter()
        .flatten()
        .map(|a| a.re.abs().max(a.im.abs()))
        .fold(0.0, f64::max);
    let tiny = scale * 10f64.powi(-(digits as i32) - 2);
    let r = |x: f64| {
        if x.abs() <= tiny {
            0.0
        } else {
            round_sig(x, digits)
        }
    };
    let coefficients = c
        .coefficients
        .iter()
        .map(|m| m.iter().map(|a| Complex64::new(r(a.re), r(a.im))).collect())
        .collect();
    let up = |x: f64| round_sig_directed(x, digits, true);
    let down = |x: f64| round_sig_directed(x, digits, false);
    let flavor = match c.flavor {
        Flavor::Invariant => Flavor::Invariant,
        Flavor::KInductive { k, epsilon, d } => Flavor::KInductive {
            k,
            epsilon: up(epsilon),
            d: down(d),
        },
        Flavor::Hybrid {
            k,
            epsilon,
            gamma,
            d,
        } => Flavor::Hybrid {
            k,
            epsilon: up(epsilon),
            gamma: up(gamma),
            d: down(d),
        },
        Flavor::FiniteHorizon {
            horizon,
            gamma,
            lambda,
            delta,
        } => Flavor::FiniteHorizon {
            horizon,
            gamma: up(gamma),
            lambda: down(lambda),
            delta: up(delta.max(0.0)),
        },
    };
    Certificate {
        template: c.template.clone(),
        coefficients,
        flavor,
    }
}

/// Worst violation of any sampled condition, evaluated directly on the
/// certificate (independently of the LP matrix).
pub fn scenario_violation(
    cert: &Certificate,
    scenarios: &Scenarios,
    problem: &SafetyProblem,
) -> Result<f64, SynthError> {
    let conds = conditions(&cert.flavor, &problem.dynamics);
    let mut worst = f64::NEG_INFINITY;
    for c in &conds {
        let v = match c {
            Condition::Init => par::max_by_key(&scenarios.init, |s| {
                violation(problem, cert, c, s, &[]).unwrap_or(f64::INFINITY)
            }),
            Condition::Unsafe { .. } => par::max_by_key(&scenarios.unsafe_set, |s| {
                violation(problem, cert, c, s, &[]).unwrap_or(f64::INFINITY)
            }),
            Condition::Side | Condition::Drift => {
                let s = QuantumState::basis(problem.dynamics.qubits(), 0);
                Some((0, violation(problem, cert, c, &s, &[])?))
            }
            _ => par::max_by_key(&scenarios.global, |g| {
                violation(problem, cert, c, &g.state, &g.params).unwrap_or(f64::INFINITY)
            }),
        };
        if let Some((_, v)) = v {
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Builds the SMT candidate from an LP optimum: relaxes the constants so
/// every sampled condition holds with margin, then rounds to the fewest
/// digits (6 to 12) that survive the scenario re-check at `1e−6`.
pub fn extract_certificate(
    lp: &SynthLp,
    sol: &LpSolution,
    template: &BarrierTemplate,
    scenarios: &Scenarios,
    problem: &SafetyProblem,
) -> Result<Certificate, SynthError> {
    if !(sol.objective > 0.0) {
        return Err(SynthError::NoCandidate(sol.objective));
    }
    let base = relaxed(lp, sol, template);
    let mut worst = f64::INFINITY;
    for digits in 6..=12 {
        let c = rounded(&base, digits);
        if !c.flavor.side_condition_holds() {
            continue;
        }
        let v = scenario_violation(&c, scenarios, problem)?;
        if v <= RECHECK_TOL {
            return Ok(c);
        }
        worst = worst.min(v);
    }
    Err(SynthError::Rounding(worst))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Solved,
    Unsolved,
    Unknown,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Solved => "solved",
            Status::Unsolved => "unsolved",
            Status::Unknown => "unknown",
        }
    }
}

/// One LP solve and its SMT check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Iteration {
    pub terms: usize,
    pub round: usize,
    pub rows: usize,
    pub objective: Option<f64>,
    pub outcome: String,
    pub counterexample: Option<String>,
    pub lp_seconds: f64,
    pub smt_seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub sampling: f64,
    pub lp: f64,
    pub smt: f64,
    pub total: f64,
}

impl Timings {
    /// Candidate generation time (sampling included).
    pub fn generation(&self) -> f64 {
        self.sampling + self.lp
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub status: Status,
    /// The verified certificate when solved, else the last candidate.
    pub certificate: Option<Certificate>,
    pub verification: Option<Verification>,
    pub iterations: Vec<Iteration>,
    pub timings: Timings,
    pub scenarios: usize,
    pub counterexamples: usize,
}

/// Decides candidates. Implemented by [`SolverConfig`]; tests may substitute
/// their own.
pub trait Verifier: Sync {
    fn verify(
        &self,
        problem: &SafetyProblem,
        cert: &Certificate,
        dir: &Path,
    ) -> Result<Verification, SmtError>;
}

impl Verifier for SolverConfig {
    fn verify(
        &self,
        problem: &SafetyProblem,
        cert: &Certificate,
        dir: &Path,
    ) -> Result<Verification, SmtError> {
        crate::smt::verify_certificate(problem, cert, self, dir)
    }
}

/// Template sizes tried: the start size, then doubling up to the cap.
pub fn term_schedule(dim: usize, cfg: &SynthesisConfig) -> Vec<usize> {
    let total = crate::templates::term_count(dim, cfg.degree);
    let cap = (cfg.max_terms as u128).min(total) as usize;
    let start = cfg.start_terms.unwrap_or(1 + dim).clamp(1, cap);
    let mut out = vec![start];
    while *out.last().unwrap() < cap {
        let next = (out.last().unwrap() * 2).min(cap);
        out.push(next);
    }
    out
}

fn add_counterexample(sc: &mut Scenarios, cex: &crate::smt::Counterexample, steps: usize) -> bool {
    let Some(state) = cex.state.clone() else {
        return false;
    };
    match Condition::parse(&cex.condition) {
        Some(Condition::Init) => sc.init.push(state),
        Some(Condition::Unsafe { .. }) => sc.unsafe_set.push(state),
        Some(_) => {
            let mut params = cex.params.clone();
            while params.len() < steps {
                params.push(params.last().cloned().unwrap_or_default());
            }
            sc.global.push(GlobalSample { state, params });
        }
        None => return false,
    }
    true
}

/// The synthesis loop: grow the template, solve, verify, learn from
/// refutations.
pub fn synthesis_loop(
    problem: &SafetyProblem,
    cfg: &SynthesisConfig,
    verifier: &dyn Verifier,
    job_dir: &Path,
) -> Result<SynthesisOutcome, SynthError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let t = Instant::now();
    let mut scenarios = Scenarios::sample(problem, cfg)?;
    timings.sampling = t.elapsed().as_secs_f64();
    let steps = cfg.flavor.k().max(1);
    let dim = problem.dim();

    let mut iterations = Vec::new();
    let mut last: Option<(Certificate, Verification)> = None;
    let mut saw_unknown = false;
    let mut counterexamples = 0;
    let finish = |status: Status,
                  last: Option<(Certificate, Verification)>,
                  iterations: Vec<Iteration>,
                  mut timings: Timings,
                  scenarios: usize,
                  counterexamples: usize| {
        timings.total = start.elapsed().as_secs_f64();
        let (certificate, verification) = match last {
            Some((c, v)) => (Some(c), Some(v)),
            None => (None, None),
        };
        SynthesisOutcome {
            status,
            certificate,
            verification,
            iterations,
            timings,
            scenarios,
            counterexamples,
        }
    };

    let mut terms: Vec<Monomial> = Vec::new();
    let mut source = enumerate_terms(dim, cfg.degree);
    for size in term_schedule(dim, cfg) {
        while terms.len() < size {
            match source.next() {
                Some(m) => terms.push(m),
                None => break,
            }
        }
        let template = BarrierTemplate::new(dim, terms.clone())
            .map_err(|e| SynthError::Config(e.to_string()))?;
        for round in 0..=cfg.cegis_rounds {
            let t = Instant::now();
            let lp = build_lp(&template, &scenarios, &problem.dynamics, cfg)?;
            let rows = lp.problem.rows().len();
            let outcome = solve_synth_lp(&lp, cfg)?;
            let candidate = match &outcome {
                LpOutcome::Optimal(sol) => {
                    extract_certificate(&lp, sol, &template, &scenarios, problem)
                        .map(|c| (c, sol.objective))
                }
                LpOutcome::Infeasible => Err(SynthError::NoCandidate(f64::NEG_INFINITY)),
                LpOutcome::Unbounded => Err(SynthError::Config("LP unbounded".into())),
            };
            let lp_seconds = t.elapsed().as_secs_f64();
            timings.lp += lp_seconds;
            let (cert, objective) = match candidate {
                Ok(c) => c,
                Err(SynthError::NoCandidate(obj)) | Err(SynthError::Rounding(obj)) => {
                    log::info!("{} terms: no candidate ({obj:e})", template.len());
                    iterations.push(Iteration {
                        terms: template.len(),
                        round,
                        rows,
                        objective: Some(obj).filter(|o| o.is_finite()),
                        outcome: "no-candidate".into(),
                        counterexample: None,
                        lp_seconds,
                        smt_seconds: 0.0,
                    });
                    break;
                }
                Err(e) => return Err(e),
            };
            let t = Instant::now();
            let v = verifier.verify(problem, &cert, job_dir)?;
            let smt_seconds = t.elapsed().as_secs_f64();
            timings.smt += smt_seconds;
            let mut it = Iteration {
                terms: template.len(),
                round,
                rows,
                objective: Some(objective),
                outcome: v.verdict.label().into(),
                counterexample: None,
                lp_seconds,
                smt_seconds,
            };
            match &v.verdict {
                Verdict::Verified => {
                    iterations.push(it);
                    let n = scenarios.len();
                    return Ok(finish(
                        Status::Solved,
                        Some((cert, v)),
                        iterations,
                        timings,
                        n,
                        counterexamples,
                    ));
                }
                Verdict::Unknown { reason } => {
                    log::info!("{} terms: solver undecided ({reason})", template.len());
                    iterations.push(it);
                    saw_unknown = true;
                    last = Some((cert, v));
                    if cfg.on_unknown == OnUnknown::Stop {
                        let n = scenarios.len();
                        return Ok(finish(
                            Status::Unknown,
                            last,
                            iterations,
                            timings,
                            n,
                            counterexamples,
                        ));
                    }
                    break;
                }
                Verdict::Refuted(cex) => {
                    log::info!(
                        "{} terms, round {round}: refuted on {} (violation {:e}{}) at {:?}",
                        template.len(),
                        cex.condition,
                        cex.violation,
                        if cex.marginal { ", marginal" } else { "" },
                        cex.state.as_ref().map(|s| s.amps().to_vec())
                    );
                    it.counterexample = Some(cex.condition.clone());
                    iterations.push(it);
                    let learned = add_counterexample(&mut scenarios, cex, steps);
                    if learned {
                        counterexamples += 1;
                    }
                    if !saw_unknown {
                        last = Some((cert, v.clone()));
                    }
                    if !learned {
                        break;
                    }
                }
            }
        }
    }
    let status = if saw_unknown {
        Status::Unknown
    } else {
        Status::Unsolved
    };
    let n = scenarios.len();
    Ok(finish(
        status,
        last,
        iterations,
        timings,
        n,
        counterexamples,
    ))
}
