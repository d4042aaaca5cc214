//! SMT-LIB2 text for one negated certificate condition.

use std::collections::BTreeSet;
use std::fmt::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::quantum::{Dynamics, GateSym, ParamSpec};
use crate::regions::{Cmp, Quantity, Region};
use crate::symbolic::{rational_from_display, smt_rational, ComplexPoly, Poly, Symbol};
use crate::system::{condition_region, Condition, SafetyProblem};
use crate::templates::{Certificate, Flavor, Monomial};

use super::SmtError;

/// Symbols of emitted polynomials: `1/√2` or a named real.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SmtSym {
    S2,
    Name(String),
}

impl Symbol for SmtSym {
    fn square(&self) -> Option<BigRational> {
        match self {
            SmtSym::S2 => Some(BigRational::new(BigInt::from(1), BigInt::from(2))),
            SmtSym::Name(_) => None,
        }
    }
}

fn sym_name(s: &SmtSym) -> String {
    match s {
        SmtSym::S2 => "s2".into(),
        SmtSym::Name(n) => n.clone(),
    }
}

fn name(n: String) -> Poly<SmtSym> {
    Poly::var(SmtSym::Name(n))
}

fn amp(prefix: &str, j: usize) -> ComplexPoly<SmtSym> {
    ComplexPoly::new(name(format!("{prefix}x{j}")), name(format!("{prefix}y{j}")))
}

fn lit(x: f64) -> String {
    smt_rational(&rational_from_display(x))
}

/// `t(z)` for a template term over amplitudes named `u{j}`, `v{j}`.
fn term_poly(m: &Monomial) -> ComplexPoly<SmtSym> {
    let mut acc = ComplexPoly::one();
    let z = |j: usize| ComplexPoly::new(name(format!("u{j}")), name(format!("v{j}")));
    for &(j, e) in &m.z {
        for _ in 0..e {
            acc = acc.mul(&z(j));
        }
    }
    for &(j, e) in &m.zbar {
        for _ in 0..e {
            acc = acc.mul(&z(j).conj());
        }
    }
    acc
}

/// Exact real polynomial of member `j` of the certificate, over `u*`, `v*`.
pub fn certificate_poly(c: &Certificate, j: usize) -> Poly<SmtSym> {
    let mut out = Poly::zero();
    for (m, a) in c.template.terms().iter().zip(&c.coefficients[j]) {
        if a.re == 0.0 && a.im == 0.0 {
            continue;
        }
        let t = term_poly(m);
        if a.re != 0.0 {
            out = &out + &t.re.scale(&rational_from_display(a.re));
        }
        if a.im != 0.0 {
            out = &out - &t.im.scale(&rational_from_display(a.im));
        }
    }
    out
}

fn quantity_smt(q: &Quantity) -> String {
    match *q {
        Quantity::Prob(j) => format!("(+ (* x{j} x{j}) (* y{j} y{j}))"),
        Quantity::Re(j) => format!("x{j}"),
        Quantity::Im(j) => format!("y{j}"),
    }
}

fn region_asserts(r: &Region, out: &mut String) {
    for a in r.atoms() {
        let lhs = if a.terms.is_empty() {
            "0.0".to_string()
        } else {
            let parts: Vec<String> = a
                .terms
                .iter()
                .map(|(c, q)| {
                    if *c == BigRational::from_integer(1.into()) {
                        quantity_smt(q)
                    } else {
                        format!("(* {} {})", smt_rational(c), quantity_smt(q))
                    }
                })
                .collect();
            if parts.len() == 1 {
                parts.into_iter().next().unwrap()
            } else {
                format!("(+ {})", parts.join(" "))
            }
        };
        let op = match a.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        };
        let _ = writeln!(out, "(assert ({op} {lhs} {}))", smt_rational(&a.bound));
    }
}

/// The amplitudes of `f_{t}` applied to amplitudes `prev`, with uncertain
/// parameters renamed for step `step`.
fn apply_map(
    dynamics: &Dynamics,
    t: usize,
    step: usize,
    prev: &[ComplexPoly<SmtSym>],
) -> Vec<ComplexPoly<SmtSym>> {
    let m = dynamics.map_at(t).exact();
    let d = m.dim();
    let sub = |s: &GateSym| -> Poly<SmtSym> {
        match s {
            GateSym::InvSqrt2 => Poly::var(SmtSym::S2),
            GateSym::Param(id) => name(format!("e{id}_{step}")),
            GateSym::ParamNorm(id) => name(format!("h{id}_{step}")),
        }
    };
    (0..d)
        .map(|i| {
            let mut acc = ComplexPoly::zero();
            for (j, z) in prev.iter().enumerate() {
                let e = m.entry(i, j);
                if e.is_zero() {
                    continue;
                }
                let entry = ComplexPoly::new(e.re.substitute(sub), e.im.substitute(sub));
                acc = acc.add(&entry.mul(z));
            }
            acc
        })
        .collect()
}

struct Chain {
    defs: String,
    params: Vec<(usize, ParamSpec, bool)>,
    uses_s2: bool,
}

/// Defines `n{s}_x{i}`, `n{s}_y{i}` for `s = 1..=steps` starting at time `t`.
fn chain(dynamics: &Dynamics, t: usize, steps: usize) -> Chain {
    let d = dynamics.dim();
    let mut defs = String::new();
    let mut params = Vec::new();
    let mut uses_s2 = false;
    let mut prev: Vec<ComplexPoly<SmtSym>> = (0..d).map(|j| amp("", j)).collect();
    for s in 1..=steps {
        let map = dynamics.map_at(t + s - 1);
        let syms: BTreeSet<GateSym> = (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .flat_map(|(r, c)| map.exact().entry(r, c).symbols())
            .collect();
        uses_s2 |= syms.contains(&GateSym::InvSqrt2);
        for spec in map.params() {
            params.push((s, *spec, syms.contains(&GateSym::ParamNorm(spec.id))));
        }
        let next = apply_map(dynamics, t + s - 1, s, &prev);
        for (i, z) in next.iter().enumerate() {
            let _ = writeln!(
                defs,
                "(define-fun n{s}_x{i} () Real {})",
                z.re.to_smt(sym_name)
            );
            let _ = writeln!(
                defs,
                "(define-fun n{s}_y{i} () Real {})",
                z.im.to_smt(sym_name)
            );
        }
        prev = (0..d).map(|j| amp(&format!("n{s}_"), j)).collect();
    }
    Chain {
        defs,
        params,
        uses_s2,
    }
}

fn b_call(j: usize, prefix: &str, d: usize) -> String {
    let xs: Vec<String> = (0..d).map(|i| format!("{prefix}x{i}")).collect();
    let ys: Vec<String> = (0..d).map(|i| format!("{prefix}y{i}")).collect();
    format!("(B{j} {} {})", xs.join(" "), ys.join(" "))
}

/// Negated condition: `(lhs, op, rhs)` with `op` one of `>`, `<`, `<=`.
fn negation(
    flavor: &Flavor,
    c: &Condition,
    d: usize,
) -> Result<(String, &'static str, String), SmtError> {
    let na = || SmtError::NotApplicable(c.id());
    let b = |j: usize| b_call(j, "", d);
    let diff =
        |j: usize, steps: usize| format!("(- {} {})", b_call(j, &format!("n{steps}_"), d), b(j));
    let zero = "0.0".to_string();
    Ok(match (flavor, c) {
        (Flavor::Invariant, Condition::Init) => (b(0), ">", zero),
        (Flavor::Invariant, Condition::Unsafe { member: None }) => (b(0), "<=", zero),
        (Flavor::Invariant, Condition::Step { .. }) => (diff(0, 1), ">", zero),
        (Flavor::KInductive { .. } | Flavor::Hybrid { .. }, Condition::Init) => (b(0), ">", zero),
        (Flavor::KInductive { d: dd, .. }, Condition::Unsafe { member: None }) => {
            (b(0), "<", lit(*dd))
        }
        (Flavor::Hybrid { k, d: dd, .. }, Condition::Unsafe { member: Some(j) }) if j < k => {
            (b(*j), "<", lit(*dd))
        }
        (Flavor::KInductive { epsilon, .. }, Condition::Step { .. }) => {
            (diff(0, 1), ">", lit(*epsilon))
        }
        (Flavor::Hybrid { k, epsilon, .. }, Condition::Step { t }) => {
            (diff(t % k, 1), ">", lit(*epsilon))
        }
        (Flavor::Hybrid { k, gamma, .. }, Condition::Shift { j }) if j < k => (
            format!("(- {} {})", b((j + 1) % k), b(*j)),
            ">",
            lit(*gamma),
        ),
        (Flavor::KInductive { k, .. } | Flavor::Hybrid { k, .. }, Condition::KStep { t })
            if t % k == 0 =>
        {
            (diff(0, *k), ">", zero)
        }
        (Flavor::KInductive { k, epsilon, d: dd }, Condition::Side) => {
            (lit(*dd), "<=", format!("(* {}.0 {})", k, lit(*epsilon)))
        }
        (
            Flavor::Hybrid {
                k,
                epsilon,
                gamma,
                d: dd,
            },
            Condition::Side,
        ) => (
            lit(*dd),
            "<=",
            format!("(* {}.0 (+ {} {}))", k, lit(*epsilon), lit(*gamma)),
        ),
        (Flavor::FiniteHorizon { gamma, .. }, Condition::Init) => (b(0), ">", lit(*gamma)),
        (Flavor::FiniteHorizon { lambda, .. }, Condition::Unsafe { member: None }) => {
            (b(0), "<", lit(*lambda))
        }
        (Flavor::FiniteHorizon { delta, .. }, Condition::Step { .. }) => {
            (diff(0, 1), ">", lit(*delta))
        }
        (
            Flavor::FiniteHorizon {
                horizon,
                gamma,
                lambda,
                delta,
            },
            Condition::Side,
        ) => (
            format!("(+ {} (* {}.0 {}))", lit(*gamma), horizon, lit(*delta)),
            ">=",
            lit(*lambda),
        ),
        (Flavor::FiniteHorizon { delta, .. }, Condition::Drift) => (lit(*delta), "<", zero),
        _ => return Err(na()),
    })
}

/// Self-contained query for `∃z. region(z) ∧ |z| = 1 ∧ ¬condition(z)`.
///
/// With `margin = Some(m)` the negated inequality must hold by more than `m`
/// (used to look for a clearer violator after a borderline model).
pub fn encode_condition(
    problem: &SafetyProblem,
    cert: &Certificate,
    c: &Condition,
    margin: Option<&BigRational>,
) -> Result<String, SmtError> {
    problem
        .check_certificate(cert)
        .map_err(|e| SmtError::Invalid(e.to_string()))?;
    let d = problem.dim();
    let (lhs, op, rhs) = negation(&cert.flavor, c, d)?;
    let t0 = match c {
        Condition::Step { t } | Condition::KStep { t } => *t,
        _ => 0,
    };
    let ch = chain(&problem.dynamics, t0, c.steps(&cert.flavor));
    let members: Vec<usize> = match (&cert.flavor, c) {
        (_, Condition::Side | Condition::Drift) => Vec::new(),
        (Flavor::Hybrid { k, .. }, Condition::Step { t }) => vec![t % k],
        (Flavor::Hybrid { k, .. }, Condition::Shift { j }) => vec![*j, (j + 1) % k],
        (Flavor::Hybrid { .. }, Condition::Unsafe { member: Some(j) }) => vec![*j],
        _ => vec![0],
    };

    let mut q = String::new();
    let _ = writeln!(q, "; condition {}", c.id());
    q.push_str("(set-logic QF_NRA)\n(set-option :produce-models true)\n");
    for prefix in ["x", "y"] {
        for j in 0..d {
            let _ = writeln!(q, "(declare-fun {prefix}{j} () Real)");
        }
    }
    if ch.uses_s2 {
        q.push_str(
            "(declare-fun s2 () Real)\n(assert (= (* s2 s2) (/ 1.0 2.0)))\n(assert (> s2 0.0))\n",
        );
    }
    for (s, spec, norm) in &ch.params {
        let e = format!("e{}_{s}", spec.id);
        let _ = writeln!(q, "(declare-fun {e} () Real)");
        let _ = writeln!(
            q,
            "(assert (and (>= {e} {}) (<= {e} {})))",
            lit(spec.lo),
            lit(spec.hi)
        );
        if *norm {
            let h = format!("h{}_{s}", spec.id);
            let _ = writeln!(q, "(declare-fun {h} () Real)");
            let _ = writeln!(q, "(assert (= (* {h} {h} (+ 1.0 (* {e} {e}))) 1.0))");
            let _ = writeln!(q, "(assert (> {h} 0.0))");
        }
    }
    let args: Vec<String> = (0..d)
        .map(|i| format!("(u{i} Real)"))
        .chain((0..d).map(|i| format!("(v{i} Real)")))
        .collect();
    let args = args.join(" ");
    for j in members {
        let _ = writeln!(
            q,
            "(define-fun B{j} ({args}) Real {})",
            certificate_poly(cert, j).to_smt(sym_name)
        );
    }
    q.push_str(&ch.defs);
    let sphere: Vec<String> = (0..d)
        .map(|j| format!("(* x{j} x{j}) (* y{j} y{j})"))
        .collect();
    let _ = writeln!(q, "(assert (= (+ {}) 1.0))", sphere.join(" "));
    region_asserts(condition_region(problem, c), &mut q);
    let neg = match margin {
        Some(m) if !m.is_zero() => {
            let m = smt_rational(m);
            match op {
                ">" => format!("(> {lhs} (+ {rhs} {m}))"),
                ">=" => format!("(>= {lhs} (+ {rhs} {m}))"),
                "<" => format!("(< {lhs} (- {rhs} {m}))"),
                _ => format!("(<= {lhs} (- {rhs} {m}))"),
            }
        }
        _ => format!("({op} {lhs} {rhs})"),
    };
    let _ = writeln!(q, "(assert {neg})");
    q.push_str("(check-sat)\n(get-model)\n(exit)\n");
    Ok(q)
}
