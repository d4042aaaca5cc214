//! A safety problem (dynamics plus regions) and the certificate conditions
//! that must hold on it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{Dynamics, QuantumError, QuantumState};
use crate::regions::Region;
use crate::templates::{Certificate, Flavor, TemplateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("condition `{0}` does not apply to this certificate")]
    NotApplicable(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// `𝒵_0`, `𝒵_u`, the global set `𝒵` and the circuit dynamics.
#[derive(Clone, Debug)]
pub struct SafetyProblem {
    pub dynamics: Dynamics,
    pub init: Region,
    pub unsafe_set: Region,
    pub global: Region,
}

impl SafetyProblem {
    pub fn new(
        dynamics: Dynamics,
        init: Region,
        unsafe_set: Region,
        global: Region,
    ) -> Result<Self, SystemError> {
        let dim = dynamics.dim();
        for (what, r) in [
            ("init", &init),
            ("unsafe", &unsafe_set),
            ("global", &global),
        ] {
            if r.dim() != dim {
                return Err(SystemError::DimensionMismatch {
                    what: format!("{what} region"),
                    expected: dim,
                    got: r.dim(),
                });
            }
        }
        Ok(SafetyProblem {
            dynamics,
            init,
            unsafe_set,
            global,
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn check_certificate(&self, c: &Certificate) -> Result<(), SystemError> {
        if c.dim() != self.dim() {
            return Err(SystemError::DimensionMismatch {
                what: "certificate".into(),
                expected: self.dim(),
                got: c.dim(),
            });
        }
        Ok(())
    }
}

/// One universally quantified certificate condition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `B_0(z) ≤ 0` (or `≤ γ`) on the initial set.
    Init,
    /// `B_j(z) ≥ d` (or `> 0`, `≥ λ`) on the unsafe set; `member` is `Some`
    /// for hybrid families.
    Unsafe { member: Option<usize> },
    /// One-step change under `f_t` for time residue `t`.
    Step { t: usize },
    /// `B_{j+1}(z) − B_j(z) ≤ γ` (hybrid only).
    Shift { j: usize },
    /// `k`-step change from time `t = rk` (mod the combined period).
    KStep { t: usize },
    /// Separation between the flavor constants.
    Side,
    /// `δ ≥ 0` (finite horizon).
    Drift,
}

impl Condition {
    pub fn id(&self) -> String {
        match self {
            Condition::Init => "init".into(),
            Condition::Unsafe { member: None } => "unsafe".into(),
            Condition::Unsafe { member: Some(j) } => format!("unsafe_{j}"),
            Condition::Step { t } => format!("step_{t}"),
            Condition::Shift { j } => format!("shift_{j}"),
            Condition::KStep { t } => format!("kstep_{t}"),
            Condition::Side => "side".into(),
            Condition::Drift => "drift".into(),
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        let num = |p: &str| id.strip_prefix(p).and_then(|s| s.parse::<usize>().ok());
        match id {
            "init" => Some(Condition::Init),
            "unsafe" => Some(Condition::Unsafe { member: None }),
            "side" => Some(Condition::Side),
            "drift" => Some(Condition::Drift),
            _ => num("unsafe_")
                .map(|j| Condition::Unsafe { member: Some(j) })
                .or_else(|| num("step_").map(|t| Condition::Step { t }))
                .or_else(|| num("shift_").map(|j| Condition::Shift { j }))
                .or_else(|| num("kstep_").map(|t| Condition::KStep { t })),
        }
    }

    /// Number of dynamics steps the condition looks ahead.
    pub fn steps(&self, flavor: &Flavor) -> usize {
        match self {
            Condition::Step { .. } => 1,
            Condition::KStep { .. } => flavor.k(),
            _ => 0,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Every condition the flavor requires, in checking order.
///
/// Time-indexed conditions are enumerated per residue: with period-`k`
/// families and a schedule of period `P`, all conditions repeat with period
/// `lcm(k, P)`.
pub fn conditions(flavor: &Flavor, dynamics: &Dynamics) -> Vec<Condition> {
    let p = dynamics.period();
    let mut out = vec![Condition::Init];
    match *flavor {
        Flavor::Invariant => {
            out.push(Condition::Unsafe { member: None });
            out.extend((0..p).map(|t| Condition::Step { t }));
        }
        Flavor::KInductive { k, .. } => {
            let l = lcm(k, p);
            out.push(Condition::Unsafe { member: None });
            out.extend((0..p).map(|t| Condition::Step { t }));
            out.extend((0..l).step_by(k).map(|t| Condition::KStep { t }));
            out.push(Condition::Side);
        }
        Flavor::Hybrid { k, .. } => {
            let l = lcm(k, p);
            out.extend((0..k).map(|j| Condition::Unsafe { member: Some(j) }));
            out.extend((0..l).map(|t| Condition::Step { t }));
            out.extend((0..k).map(|j| Condition::Shift { j }));
            out.extend((0..l).step_by(k).map(|t| Condition::KStep { t }));
            out.push(Condition::Side);
        }
        Flavor::FiniteHorizon { horizon, .. } => {
            out.push(Condition::Unsafe { member: None });
            out.extend((0..p.min(horizon.max(1))).map(|t| Condition::Step { t }));
            out.push(Condition::Side);
            out.push(Condition::Drift);
        }
    }
    out
}

/// Which region a condition quantifies over.
pub fn condition_region<'a>(p: &'a SafetyProblem, c: &Condition) -> &'a Region {
    match c {
        Condition::Init => &p.init,
        Condition::Unsafe { .. } => &p.unsafe_set,
        _ => &p.global,
    }
}

/// Amount by which `(state, params)` violates condition `c` (positive means
/// violated). `params[s]` instantiates the uncertain gates of step `s`.
pub fn violation(
    p: &SafetyProblem,
    cert: &Certificate,
    c: &Condition,
    state: &QuantumState,
    params: &[Vec<f64>],
) -> Result<f64, SystemError> {
    p.check_certificate(cert)?;
    let b = |s: &QuantumState, j: usize| cert.eval_real(s, j);
    let k = cert.flavor.k();
    let member = |t: usize| match cert.flavor {
        Flavor::Hybrid { k, .. } => t % k,
        _ => 0,
    };
    let advance = |t0: usize, n: usize| -> Result<QuantumState, SystemError> {
        let mut s = state.clone();
        for i in 0..n {
            let point = params.get(i).map(|v| v.as_slice());
            s = p.dynamics.step(t0 + i, &s, point)?;
        }
        Ok(s)
    };
    let v = match (&cert.flavor, c) {
        (Flavor::Invariant, Condition::Init) => b(state, 0)?,
        (Flavor::Invariant, Condition::Unsafe { member: None }) => -b(state, 0)?,
        (Flavor::Invariant, Condition::Step { t }) => b(&advance(*t, 1)?, 0)? - b(state, 0)?,
        (Flavor::KInductive { .. } | Flavor::Hybrid { .. }, Condition::Init) => b(state, 0)?,
        (Flavor::KInductive { d, .. }, Condition::Unsafe { member: None }) => d - b(state, 0)?,
        (Flavor::Hybrid { d, k, .. }, Condition::Unsafe { member: Some(j) }) if *j < *k => {
            d - b(state, *j)?
        }
        (
            Flavor::KInductive { epsilon, .. } | Flavor::Hybrid { epsilon, .. },
            Condition::Step { t },
        ) => {
            let j = member(*t);
            b(&advance(*t, 1)?, j)? - b(state, j)? - epsilon
        }
        (Flavor::Hybrid { gamma, k, .. }, Condition::Shift { j }) if *j < *k => {
            b(state, (j + 1) % k)? - b(state, *j)? - gamma
        }
        (Flavor::KInductive { .. } | Flavor::Hybrid { .. }, Condition::KStep { t })
            if t % k == 0 =>
        {
            b(&advance(*t, k)?, 0)? - b(state, 0)?
        }
        (Flavor::KInductive { k, epsilon, d }, Condition::Side) => *k as f64 * epsilon - d,
        (
            Flavor::Hybrid {
                k,
                epsilon,
                gamma,
                d,
            },
            Condition::Side,
        ) => *k as f64 * (epsilon + gamma) - d,
        (Flavor::FiniteHorizon { gamma, .. }, Condition::Init) => b(state, 0)? - gamma,
        (Flavor::FiniteHorizon { lambda, .. }, Condition::Unsafe { member: None }) => {
            lambda - b(state, 0)?
        }
        (Flavor::FiniteHorizon { delta, .. }, Condition::Step { t }) => {
            b(&advance(*t, 1)?, 0)? - b(state, 0)? - delta
        }
        (
            Flavor::FiniteHorizon {
                horizon,
                gamma,
                lambda,
                delta,
            },
            Condition::Side,
        ) => gamma + delta * (*horizon as f64) - lambda,
        (Flavor::FiniteHorizon { delta, .. }, Condition::Drift) => -delta,
        _ => return Err(SystemError::NotApplicable(c.id())),
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{standard_gate, tensor, StepMap};

    fn zzz() -> Dynamics {
        let z = standard_gate("Z").unwrap();
        Dynamics::constant(StepMap::from_gate(
            &tensor(&[z.clone(), z.clone(), z]).unwrap(),
        ))
        .unwrap()
    }

    #[test]
    fn finite_horizon_has_five_conditions() {
        let f = Flavor::FiniteHorizon {
            horizon: 5,
            gamma: 0.0,
            lambda: 1.0,
            delta: 0.0,
        };
        let ids: Vec<String> = conditions(&f, &zzz()).iter().map(|c| c.id()).collect();
        assert_eq!(ids, ["init", "unsafe", "step_0", "side", "drift"]);
    }

    #[test]
    fn hybrid_conditions_cover_residues() {
        let cx = StepMap::from_gate(&standard_gate("CX").unwrap());
        let cz = StepMap::from_gate(&standard_gate("CZ").unwrap());
        let d = Dynamics::periodic(vec![cx, cz]).unwrap();
        let f = Flavor::Hybrid {
            k: 2,
            epsilon: 0.01,
            gamma: 0.01,
            d: 1.0,
        };
        let ids: Vec<String> = conditions(&f, &d).iter().map(|c| c.id()).collect();
        assert_eq!(
            ids,
            [
                "init", "unsafe_0", "unsafe_1", "step_0", "step_1", "shift_0", "shift_1",
                "kstep_0", "side"
            ]
        );
        for id in &ids {
            assert_eq!(Condition::parse(id).unwrap().id(), *id);
        }
    }

    #[test]
    fn k_inductive_kstep_residues() {
        let cx = StepMap::from_gate(&standard_gate("CX").unwrap());
        let cz = StepMap::from_gate(&standard_gate("CZ").unwrap());
        let id = standard_gate("I").unwrap();
        let i = StepMap::from_gate(&tensor(&[id.clone(), id]).unwrap());
        let d = Dynamics::periodic(vec![cx, cz, i]).unwrap();
        let f = Flavor::KInductive {
            k: 2,
            epsilon: 0.1,
            d: 1.0,
        };
        let ks: Vec<String> = conditions(&f, &d)
            .iter()
            .filter(|c| matches!(c, Condition::KStep { .. }))
            .map(|c| c.id())
            .collect();
        assert_eq!(ks, ["kstep_0", "kstep_2", "kstep_4"]);
    }
}
