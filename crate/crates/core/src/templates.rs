//! Polynomial certificate templates over `z_j` and `z̄_j`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::QuantumState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("time offset {offset} out of range for a family of {family} certificate(s)")]
    OffsetOutOfRange { offset: usize, family: usize },
    #[error("state dimension {got} does not match certificate dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid template: {0}")]
    Invalid(String),
}

/// `Π z_j^a_j · Π z̄_j^b_j`, exponent lists sorted by index, exponents ≥ 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Monomial {
    pub z: Vec<(usize, u32)>,
    pub zbar: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn constant() -> Self {
        Monomial {
            z: Vec::new(),
            zbar: Vec::new(),
        }
    }

    /// `z_j z̄_j = |z_j|²`.
    pub fn prob(j: usize) -> Self {
        Monomial {
            z: vec![(j, 1)],
            zbar: vec![(j, 1)],
        }
    }

    /// From a non-decreasing list of variable indices over `2·dim` variables
    /// (`v < dim` is `z_v`, otherwise `z̄_{v−dim}`).
    pub fn from_vars(dim: usize, vars: &[usize]) -> Self {
        let mut m = Monomial::constant();
        for &v in vars {
            let (list, j) = if v < dim {
                (&mut m.z, v)
            } else {
                (&mut m.zbar, v - dim)
            };
            match list.iter_mut().find(|(i, _)| *i == j) {
                Some(e) => e.1 += 1,
                None => list.push((j, 1)),
            }
        }
        m.z.sort_unstable();
        m.zbar.sort_unstable();
        m
    }

    pub fn degree(&self) -> u32 {
        self.z.iter().chain(&self.zbar).map(|(_, e)| e).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.z.is_empty() && self.zbar.is_empty()
    }

    /// Real-valued for every state (`z` and `z̄` exponents agree).
    pub fn is_self_conjugate(&self) -> bool {
        self.z == self.zbar
    }

    pub fn max_index(&self) -> Option<usize> {
        self.z.iter().chain(&self.zbar).map(|(j, _)| *j).max()
    }

    pub fn eval(&self, amps: &[Complex64]) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for &(j, e) in &self.z {
            v *= amps[j].powu(e);
        }
        for &(j, e) in &self.zbar {
            v *= amps[j].conj().powu(e);
        }
        v
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut parts = Vec::new();
        for &(j, e) in &self.z {
            parts.push(if e == 1 {
                format!("z{j}")
            } else {
                format!("z{j}^{e}")
            });
        }
        for &(j, e) in &self.zbar {
            parts.push(if e == 1 {
                format!("conj(z{j})")
            } else {
                format!("conj(z{j})^{e}")
            });
        }
        write!(f, "{}", parts.join("*"))
    }
}

/// Number of monomials of total degree ≤ `deg` in `2·dim` variables.
pub fn term_count(dim: usize, deg: u32) -> u128 {
    let n = 2 * dim as u128 + deg as u128;
    let k = deg as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// Lazy term enumeration: the constant, then `z_j z̄_j` for each `j`, then
/// products of probabilities (`|z_i|²|z_j|²`, ...) by degree, then the
/// remaining monomials by degree, lexicographically (higher exponent of an
/// earlier variable first) within a degree.
pub fn enumerate_terms(dim: usize, deg: u32) -> TermIter {
    TermIter {
        dim,
        deg,
        stage: Stage::Constant,
    }
}

#[derive(Clone, Debug)]
enum Stage {
    Constant,
    Probs(usize),
    ProbProducts(Vec<usize>),
    Rest(Vec<usize>),
    Done,
}

#[derive(Clone, Debug)]
pub struct TermIter {
    dim: usize,
    deg: u32,
    stage: Stage,
}

impl TermIter {
    fn advance(&mut self, vars: &mut Vec<usize>) -> bool {
        let top = 2 * self.dim - 1;
        match vars.iter().rposition(|&v| v < top) {
            Some(i) => {
                let v = vars[i] + 1;
                for x in &mut vars[i..] {
                    *x = v;
                }
                true
            }
            None if (vars.len() as u32) < self.deg => {
                let n = vars.len() + 1;
                vars.clear();
                vars.resize(n, 0);
                true
            }
            None => false,
        }
    }
}

impl Iterator for TermIter {
    type Item = Monomial;

    fn next(&mut self) -> Option<Monomial> {
        loop {
            match &mut self.stage {
                Stage::Constant => {
                    self.stage = if self.deg >= 2 {
                        Stage::Probs(0)
                    } else if self.deg == 1 {
                        Stage::Rest(vec![0])
                    } else {
                        Stage::Done
                    };
                    return Some(Monomial::constant());
                }
                Stage::Probs(j) => {
                    let jj = *j;
                    self.stage = if jj + 1 < self.dim {
                        Stage::Probs(jj + 1)
                    } else if self.deg >= 4 {
                        Stage::ProbProducts(vec![0, 0])
                    } else {
                        Stage::Rest(vec![0])
                    };
                    return Some(Monomial::prob(jj));
                }
                Stage::ProbProducts(idx) => {
                    let mut v = std::mem::take(idx);
                    let vars: Vec<usize> = v
                        .iter()
                        .copied()
                        .chain(v.iter().map(|i| i + self.dim))
                        .collect();
                    let m = Monomial::from_vars(self.dim, &vars);
                    self.stage = match v.iter().rposition(|&i| i + 1 < self.dim) {
                        Some(i) => {
                            let x = v[i] + 1;
                            for e in &mut v[i..] {
                                *e = x;
                            }
                            Stage::ProbProducts(v)
                        }
                        None if 2 * (v.len() as u32 + 1) <= self.deg => {
                            Stage::ProbProducts(vec![0; v.len() + 1])
                        }
                        None => Stage::Rest(vec![0]),
                    };
                    return Some(m);
                }
                Stage::Rest(vars) => {
                    let mut v = std::mem::take(vars);
                    let m = Monomial::from_vars(self.dim, &v);
                    let alive = self.advance(&mut v);
                    self.stage = if alive { Stage::Rest(v) } else { Stage::Done };
                    if m.z != m.zbar {
                        return Some(m);
                    }
                }
                Stage::Done => return None,
            }
        }
    }
}

/// Ordered list of distinct monomials beginning with the constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierTemplate {
    dim: usize,
    terms: Vec<Monomial>,
}

impl BarrierTemplate {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self, TemplateError> {
        if terms.first().map(|t| !t.is_constant()).unwrap_or(true) {
            return Err(TemplateError::Invalid(
                "first term must be the constant".into(),
            ));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(TemplateError::Invalid(format!("duplicate term {t}")));
            }
            if t.max_index().is_some_and(|j| j >= dim) {
                return Err(TemplateError::Invalid(format!(
                    "term {t} exceeds dimension {dim}"
                )));
            }
        }
        Ok(BarrierTemplate { dim, terms })
    }

    /// The first `n` terms of [`enumerate_terms`].
    pub fn first(dim: usize, deg: u32, n: usize) -> Self {
        BarrierTemplate {
            dim,
            terms: enumerate_terms(dim, deg).take(n).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, m: Monomial) -> Result<(), TemplateError> {
        if self.terms.contains(&m) {
            return Err(TemplateError::Invalid(format!("duplicate term {m}")));
        }
        self.terms.push(m);
        Ok(())
    }

    /// Values of every term at `amps`.
    pub fn eval_terms(&self, amps: &[Complex64]) -> Vec<Complex64> {
        self.terms.iter().map(|t| t.eval(amps)).collect()
    }
}

/// Certificate kind together with its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Flavor {
    /// `B ≤ 0` on init, `B > 0` on unsafe, `B(f z) − B(z) ≤ 0`.
    Invariant,
    /// `B ≤ 0`, `B ≥ d`, one-step increase `≤ ε`, k-step change `≤ 0`, `d > kε`.
    KInductive { k: usize, epsilon: f64, d: f64 },
    /// Period-k family `B_0..B_{k−1}` with `d > k(ε + γ)`.
    Hybrid {
        k: usize,
        epsilon: f64,
        gamma: f64,
        d: f64,
    },
    /// `B ≤ γ`, `B ≥ λ`, step increase `≤ δ`, `γ + δT < λ`.
    FiniteHorizon {
        horizon: usize,
        gamma: f64,
        lambda: f64,
        delta: f64,
    },
}

impl Flavor {
    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Invariant => "invariant",
            Flavor::KInductive { .. } => "k-inductive",
            Flavor::Hybrid { .. } => "hybrid",
            Flavor::FiniteHorizon { .. } => "finite-horizon",
        }
    }

    /// Number of coefficient vectors a certificate of this flavor carries.
    pub fn family_size(&self) -> usize {
        match self {
            Flavor::Hybrid { k, .. } => *k,
            _ => 1,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Flavor::KInductive { k, .. } | Flavor::Hybrid { k, .. } => *k,
            _ => 1,
        }
    }

    /// Strict separation: `d > kε`, `d > k(ε+γ)` or `γ + δT < λ` (with
    /// `ε, γ, δ ≥ 0` where the definitions require it).
    pub fn side_condition_holds(&self) -> bool {
        match *self {
            Flavor::Invariant => true,
            Flavor::KInductive { k, epsilon, d } => {
                k >= 1 && epsilon >= 0.0 && d > k as f64 * epsilon
            }
            Flavor::Hybrid {
                k,
                epsilon,
                gamma,
                d,
            } => k >= 1 && epsilon >= 0.0 && gamma >= 0.0 && d > k as f64 * (epsilon + gamma),
            Flavor::FiniteHorizon {
                horizon,
                gamma,
                lambda,
                delta,
            } => delta >= 0.0 && gamma + delta * (horizon as f64) < lambda,
        }
    }
}

/// A template with concrete complex coefficients; `coefficients[j]` is `B_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub template: BarrierTemplate,
    pub coefficients: Vec<Vec<Complex64>>,
    pub flavor: Flavor,
}

impl Certificate {
    pub fn new(
        template: BarrierTemplate,
        coefficients: Vec<Vec<Complex64>>,
        flavor: Flavor,
    ) -> Result<Self, TemplateError> {
        if coefficients.len() != flavor.family_size() {
            return Err(TemplateError::Invalid(format!(
                "{} coefficient vector(s) for a {} certificate",
                coefficients.len(),
                flavor.name()
            )));
        }
        if coefficients.iter().any(|c| c.len() != template.len()) {
            return Err(TemplateError::Invalid(
                "coefficient count does not match term count".into(),
            ));
        }
        Ok(Certificate {
            template,
            coefficients,
            flavor,
        })
    }

    pub fn dim(&self) -> usize {
        self.template.dim
    }

    /// Terms with a nonzero coefficient in some member of the family.
    pub fn active_terms(&self) -> usize {
        (0..self.template.len())
            .filter(|&i| {
                self.coefficients
                    .iter()
                    .any(|c| c[i] != Complex64::new(0.0, 0.0))
            })
            .count()
    }

    /// `Σ Re(α_i)·Re(t_i(z)) − Im(α_i)·Im(t_i(z))` for member `offset`.
    pub fn eval_real(&self, s: &QuantumState, offset: usize) -> Result<f64, TemplateError> {
        if s.dim() != self.dim() {
            return Err(TemplateError::DimensionMismatch {
                expected: self.dim(),
                got: s.dim(),
            });
        }
        self.eval_amps(s.amps(), offset)
    }

    pub fn eval_amps(&self, amps: &[Complex64], offset: usize) -> Result<f64, TemplateError> {
        let coefs = self
            .coefficients
            .get(offset)
            .ok_or(TemplateError::OffsetOutOfRange {
                offset,
                family: self.coefficients.len(),
            })?;
        Ok(self
            .template
            .terms
            .iter()
            .zip(coefs)
            .map(|(t, a)| {
                if *a == Complex64::new(0.0, 0.0) {
                    return 0.0;
                }
                let c = t.eval(amps);
                a.re * c.re - a.im * c.im
            })
            .sum())
    }

    /// Polynomial text for member `offset` with 5-decimal coefficients.
    pub fn poly_string(&self, offset: usize) -> String {
        let mut out = String::new();
        for (t, a) in self.template.terms.iter().zip(&self.coefficients[offset]) {
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let coef = if a.im == 0.0 {
                format!("{:.5}", a.re)
            } else {
                format!("({:.5}{:+.5}i)", a.re, a.im)
            };
            let piece = if t.is_constant() {
                coef
            } else {
                format!("{coef}*{t}")
            };
            if out.is_empty() {
                out = piece;
            } else if let Some(rest) = piece.strip_prefix('-') {
                out.push_str(" - ");
                out.push_str(rest);
            } else {
                out.push_str(" + ");
                out.push_str(&piece);
            }
        }
        if out.is_empty() {
            "0".into()
        } else {
            out
        }
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.coefficients.len() {
            writeln!(f, "B_{j}(z) = {}", self.poly_string(j))?;
        }
        match &self.flavor {
            Flavor::Invariant => write!(f, "invariant"),
            Flavor::KInductive { k, epsilon, d } => {
                write!(f, "k-inductive: k = {k}, epsilon = {epsilon:.5}, d = {d:.5}")
            }
            Flavor::Hybrid {
                k,
                epsilon,
                gamma,
                d,
            } => write!(
                f,
                "hybrid: k = {k}, epsilon = {epsilon:.5}, gamma = {gamma:.5}, d = {d:.5}"
            ),
            Flavor::FiniteHorizon {
                horizon,
                gamma,
                lambda,
                delta,
            } => write!(
                f,
                "finite-horizon: T = {horizon}, gamma = {gamma:.5}, lambda = {lambda:.5}, delta = {delta:.5}"
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn degree_one_two_dims() {
        let terms: Vec<String> = enumerate_terms(2, 1).map(|m| m.to_string()).collect();
        assert_eq!(terms, ["1", "z0", "z1", "conj(z0)", "conj(z1)"]);
    }

    #[test]
    fn probability_terms_come_first() {
        let terms: Vec<Monomial> = enumerate_terms(8, 2).take(3).collect();
        assert_eq!(
            terms,
            [Monomial::constant(), Monomial::prob(0), Monomial::prob(1)]
        );
        let after: Vec<Monomial> = enumerate_terms(2, 2).skip(3).take(2).collect();
        assert_eq!(after[0].to_string(), "z0");
        assert_eq!(after[1].to_string(), "z1");
    }

    #[test]
    fn probability_products_follow_probabilities() {
        let terms: Vec<String> = enumerate_terms(2, 4)
            .take(7)
            .map(|m| m.to_string())
            .collect();
        assert_eq!(terms[3], "z0^2*conj(z0)^2");
        assert_eq!(terms[4], "z0*z1*conj(z0)*conj(z1)");
        assert_eq!(terms[5], "z1^2*conj(z1)^2");
        assert_eq!(terms[6], "z0");
        let all: Vec<Monomial> = enumerate_terms(2, 4).collect();
        assert_eq!(all.len() as u128, term_count(2, 4));
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), all.len());
        let six: Vec<Monomial> = enumerate_terms(3, 6).collect();
        assert_eq!(six.len() as u128, term_count(3, 6));
    }

    #[test]
    fn counts_for_large_dimensions_are_lazy() {
        assert_eq!(term_count(64, 4), 12_082_785);
        let first: Vec<Monomial> = enumerate_terms(64, 4).take(70).collect();
        assert_eq!(first.len(), 70);
        assert_eq!(first[64], Monomial::prob(63));
    }

    #[test]
    fn worked_z_gate_value() {
        let t = BarrierTemplate::first(8, 2, 2);
        let cert = Certificate::new(
            t,
            vec![vec![c(12.99994, 0.0), c(-9.99934, 0.0)]],
            Flavor::FiniteHorizon {
                horizon: 5,
                gamma: 4.0,
                lambda: 5.0,
                delta: 0.0,
            },
        )
        .unwrap();
        let v = cert.eval_real(&QuantumState::basis(3, 0), 0).unwrap();
        assert!((v - 3.0006).abs() < 1e-12);
        assert_eq!(cert.poly_string(0), "12.99994 - 9.99934*z0*conj(z0)");
        assert!(cert.eval_real(&QuantumState::basis(3, 0), 1).is_err());
    }

    #[test]
    fn imaginary_coefficient_on_real_term_vanishes() {
        let t = BarrierTemplate::first(2, 2, 2);
        let cert =
            Certificate::new(t, vec![vec![c(0.0, 0.0), c(0.0, 3.0)]], Flavor::Invariant).unwrap();
        assert_eq!(cert.eval_real(&QuantumState::uniform(1), 0).unwrap(), 0.0);
    }

    #[test]
    fn template_validation() {
        assert!(BarrierTemplate::new(2, vec![Monomial::prob(0)]).is_err());
        assert!(BarrierTemplate::new(
            2,
            vec![Monomial::constant(), Monomial::prob(0), Monomial::prob(0)]
        )
        .is_err());
        assert!(BarrierTemplate::new(2, vec![Monomial::constant(), Monomial::prob(2)]).is_err());
        let t = BarrierTemplate::first(2, 2, 3);
        assert!(Certificate::new(t, vec![vec![c(1.0, 0.0); 2]], Flavor::Invariant).is_err());
    }

    #[test]
    fn side_conditions() {
        assert!(Flavor::KInductive {
            k: 2,
            epsilon: 0.01,
            d: 0.03
        }
        .side_condition_holds());
        assert!(!Flavor::KInductive {
            k: 2,
            epsilon: 0.01,
            d: 0.02
        }
        .side_condition_holds());
        assert!(Flavor::Hybrid {
            k: 2,
            epsilon: 0.01,
            gamma: 0.01,
            d: 4.7079
        }
        .side_condition_holds());
        assert!(!Flavor::FiniteHorizon {
            horizon: 5,
            gamma: 4.0,
            lambda: 5.0,
            delta: 0.2
        }
        .side_condition_holds());
    }
}
