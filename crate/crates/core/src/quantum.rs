//! Quantum states, gates and time-indexed circuit dynamics.
//!
//! Basis convention: qubit 0 is the most significant bit, so for two qubits
//! `|10⟩` is amplitude index 2.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{rational_from_f64, ComplexPoly, NumPoly, Poly, Symbol};

/// Tolerance for unit norm and unitarity checks.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("state length {0} is not a power of two ≥ 2")]
    BadLength(usize),
    #[error("state is not normalized (squared norm {0})")]
    NotNormalized(f64),
    #[error("gate matrix is not unitary")]
    NotUnitary,
    #[error("matrix has {got} entries, expected {expected}")]
    BadMatrixSize { expected: usize, got: usize },
    #[error("tensor of an empty gate list")]
    EmptyTensor,
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("qubit target {target} out of range for {qubits} qubits")]
    BadTarget { target: usize, qubits: usize },
    #[error("gate on {arity} qubit(s) given {targets} target(s)")]
    TargetCount { arity: usize, targets: usize },
    #[error("repeated qubit target {0}")]
    DuplicateTarget(usize),
    #[error("uncertain map needs a parameter point")]
    ParamMissing,
    #[error("parameter {id} = {value} outside domain [{lo}, {hi}]")]
    ParamOutOfDomain {
        id: u16,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid dynamics: {0}")]
    InvalidDynamics(String),
}

/// Unit-norm complex amplitude vector over the computational basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    amps: Vec<Complex64>,
}

impl QuantumState {
    pub fn new(amps: Vec<Complex64>) -> Result<Self, QuantumError> {
        check_len(amps.len())?;
        let ns: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (ns - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized(ns));
        }
        Ok(QuantumState { amps })
    }

    /// Rescales `amps` to unit norm.
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self, QuantumError> {
        check_len(amps.len())?;
        let ns: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !(ns > 0.0) || !ns.is_finite() {
            return Err(QuantumError::NotNormalized(ns));
        }
        let inv = 1.0 / ns.sqrt();
        for a in &mut amps {
            *a *= inv;
        }
        Ok(QuantumState { amps })
    }

    pub(crate) fn from_unchecked(amps: Vec<Complex64>) -> Self {
        QuantumState { amps }
    }

    pub fn basis(qubits: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << qubits];
        amps[index] = Complex64::new(1.0, 0.0);
        QuantumState { amps }
    }

    /// Equal superposition over all basis states.
    pub fn uniform(qubits: usize) -> Self {
        let d = 1usize << qubits;
        let a = 1.0 / (d as f64).sqrt();
        QuantumState {
            amps: vec![Complex64::new(a, 0.0); d],
        }
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn qubits(&self) -> usize {
        self.amps.len().trailing_zeros() as usize
    }

    pub fn prob(&self, j: usize) -> f64 {
        self.amps[j].norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn with_global_phase(&self, phi: f64) -> Self {
        let w = Complex64::from_polar(1.0, phi);
        QuantumState {
            amps: self.amps.iter().map(|a| a * w).collect(),
        }
    }
}

fn check_len(len: usize) -> Result<(), QuantumError> {
    if len < 2 || !len.is_power_of_two() {
        return Err(QuantumError::BadLength(len));
    }
    Ok(())
}

/// Symbols that may appear in exact gate entries.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GateSym {
    /// The constant `1/√2`.
    InvSqrt2,
    /// Uncertainty parameter with the given id.
    Param(u16),
    /// `1/√(1 + p²)` for parameter `p` with the given id.
    ParamNorm(u16),
}

impl Symbol for GateSym {
    fn square(&self) -> Option<BigRational> {
        match self {
            GateSym::InvSqrt2 => Some(BigRational::new(BigInt::from(1), BigInt::from(2))),
            _ => None,
        }
    }
}

impl GateSym {
    fn value(&self, point: &dyn Fn(u16) -> f64) -> f64 {
        match self {
            GateSym::InvSqrt2 => FRAC_1_SQRT_2,
            GateSym::Param(id) => point(*id),
            GateSym::ParamNorm(id) => {
                let p = point(*id);
                1.0 / (1.0 + p * p).sqrt()
            }
        }
    }
}

pub type SymEntry = ComplexPoly<GateSym>;

/// Dense square matrix with exact symbolic entries, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<SymEntry>,
}

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![SymEntry::zero(); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = SymEntry::one();
        }
        SymMatrix { dim, entries }
    }

    pub fn from_entries(dim: usize, entries: Vec<SymEntry>) -> Result<Self, QuantumError> {
        if entries.len() != dim * dim {
            return Err(QuantumError::BadMatrixSize {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(SymMatrix { dim, entries })
    }

    /// Exact copy of a numeric matrix (each `f64` becomes its exact rational).
    pub fn from_numeric(dim: usize, m: &[Complex64]) -> Result<Self, QuantumError> {
        let entries = m
            .iter()
            .map(|z| {
                SymEntry::new(
                    Poly::constant(rational_from_f64(z.re)),
                    Poly::constant(rational_from_f64(z.im)),
                )
            })
            .collect();
        Self::from_entries(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, r: usize, c: usize) -> &SymEntry {
        &self.entries[r * self.dim + c]
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &SymMatrix) -> SymMatrix {
        let n = self.dim;
        let mut entries = vec![SymEntry::zero(); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entry(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let b = rhs.entry(k, j);
                    if b.is_zero() {
                        continue;
                    }
                    let e = &mut entries[i * n + j];
                    *e = e.add(&a.mul(b));
                }
            }
        }
        SymMatrix { dim: n, entries }
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &SymMatrix) -> SymMatrix {
        let (a, b) = (self.dim, rhs.dim);
        let n = a * b;
        let mut entries = vec![SymEntry::zero(); n * n];
        for i in 0..a {
            for j in 0..a {
                let x = self.entry(i, j);
                if x.is_zero() {
                    continue;
                }
                for k in 0..b {
                    for l in 0..b {
                        let y = rhs.entry(k, l);
                        if y.is_zero() {
                            continue;
                        }
                        entries[(i * b + k) * n + (j * b + l)] = x.mul(y);
                    }
                }
            }
        }
        SymMatrix { dim: n, entries }
    }

    /// Lifts a gate on `targets` (in gate-local bit order) to `qubits` qubits.
    pub fn embed(&self, qubits: usize, targets: &[usize]) -> Result<SymMatrix, QuantumError> {
        let arity = self.dim.trailing_zeros() as usize;
        if targets.len() != arity {
            return Err(QuantumError::TargetCount {
                arity,
                targets: targets.len(),
            });
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= qubits {
                return Err(QuantumError::BadTarget { target: t, qubits });
            }
            if targets[..i].contains(&t) {
                return Err(QuantumError::DuplicateTarget(t));
            }
        }
        let n = 1usize << qubits;
        let bit = |r: usize, q: usize| (r >> (qubits - 1 - q)) & 1;
        let mask: usize = targets.iter().map(|&q| 1usize << (qubits - 1 - q)).sum();
        let sub = |r: usize| {
            targets
                .iter()
                .enumerate()
                .map(|(i, &q)| bit(r, q) << (arity - 1 - i))
                .sum::<usize>()
        };
        let mut entries = vec![SymEntry::zero(); n * n];
        for r in 0..n {
            for c in 0..n {
                if r & !mask == c & !mask {
                    entries[r * n + c] = self.entry(sub(r), sub(c)).clone();
                }
            }
        }
        Ok(SymMatrix { dim: n, entries })
    }

    /// Parameter ids referenced by any entry.
    pub fn params(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self
            .entries
            .iter()
            .flat_map(|e| e.symbols())
            .filter_map(|s| match s {
                GateSym::Param(id) | GateSym::ParamNorm(id) => Some(id),
                GateSym::InvSqrt2 => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Numeric matrix with parameters supplied by `point(id)`.
    pub fn eval(&self, point: &dyn Fn(u16) -> f64) -> Vec<Complex64> {
        self.entries
            .iter()
            .map(|e| Complex64::new(e.re.eval(|s| s.value(point)), e.im.eval(|s| s.value(point))))
            .collect()
    }

    fn compile(&self) -> Vec<(NumPoly<GateSym>, NumPoly<GateSym>)> {
        self.entries
            .iter()
            .map(|e| (e.re.compile(), e.im.compile()))
            .collect()
    }
}

/// Checks `U·U† = I` entrywise within [`NORM_TOL`].
pub fn is_unitary(m: &[Complex64], dim: usize) -> bool {
    if m.len() != dim * dim {
        return false;
    }
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                acc += m[i * dim + k] * m[j * dim + k].conj();
            }
            let target = if i == j { 1.0 } else { 0.0 };
            if (acc.re - target).abs() > NORM_TOL || acc.im.abs() > NORM_TOL {
                return false;
            }
        }
    }
    true
}

fn apply_matrix(m: &[Complex64], amps: &[Complex64]) -> Vec<Complex64> {
    let d = amps.len();
    (0..d)
        .map(|i| {
            let row = &m[i * d..(i + 1) * d];
            row.iter().zip(amps).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// A unitary on `arity` qubits, held both exactly and numerically.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    arity: usize,
    exact: SymMatrix,
    matrix: Vec<Complex64>,
}

impl Gate {
    /// Builds a gate from exact entries; rejects parameters and non-unitary
    /// matrices.
    pub fn from_exact(arity: usize, exact: SymMatrix) -> Result<Self, QuantumError> {
        let dim = 1usize << arity;
        if exact.dim() != dim {
            return Err(QuantumError::DimensionMismatch {
                expected: dim,
                got: exact.dim(),
            });
        }
        if !exact.params().is_empty() {
            return Err(QuantumError::InvalidDynamics(
                "fixed gate references uncertainty parameters".into(),
            ));
        }
        let matrix = exact.eval(&|_| f64::NAN);
        if !is_unitary(&matrix, dim) {
            return Err(QuantumError::NotUnitary);
        }
        Ok(Gate {
            arity,
            exact,
            matrix,
        })
    }

    pub fn from_matrix(arity: usize, matrix: Vec<Complex64>) -> Result<Self, QuantumError> {
        let dim = 1usize << arity;
        let exact = SymMatrix::from_numeric(dim, &matrix)?;
        if !is_unitary(&matrix, dim) {
            return Err(QuantumError::NotUnitary);
        }
        Ok(Gate {
            arity,
            exact,
            matrix,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn dim(&self) -> usize {
        1 << self.arity
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }

    pub fn exact(&self) -> &SymMatrix {
        &self.exact
    }

    pub fn apply(&self, s: &QuantumState) -> Result<QuantumState, QuantumError> {
        if s.dim() != self.dim() {
            return Err(QuantumError::DimensionMismatch {
                expected: self.dim(),
                got: s.dim(),
            });
        }
        Ok(QuantumState::from_unchecked(apply_matrix(
            &self.matrix,
            s.amps(),
        )))
    }

    /// The gate that applies `self` and then `next`, i.e. `next · self`.
    pub fn then(&self, next: &Gate) -> Result<Gate, QuantumError> {
        if next.arity != self.arity {
            return Err(QuantumError::DimensionMismatch {
                expected: self.dim(),
                got: next.dim(),
            });
        }
        Gate::from_exact(self.arity, next.exact.matmul(&self.exact))
    }
}

/// Kronecker product of `gates` in list order.
pub fn tensor(gates: &[Gate]) -> Result<Gate, QuantumError> {
    let (first, rest) = gates.split_first().ok_or(QuantumError::EmptyTensor)?;
    let mut exact = first.exact.clone();
    let mut arity = first.arity;
    for g in rest {
        exact = exact.kron(&g.exact);
        arity += g.arity;
    }
    Gate::from_exact(arity, exact)
}

fn int(v: i64) -> SymEntry {
    SymEntry::real(Poly::from_i64(v))
}

fn inv_sqrt2(sign: i64) -> Poly<GateSym> {
    Poly::var(GateSym::InvSqrt2).scale(&BigRational::from_integer(BigInt::from(sign)))
}

/// One of the standard gates `I X Y Z H T S CX CZ SWAP` (`CNOT` is accepted
/// for `CX`). Two-qubit gates take the first qubit as control.
pub fn standard_gate(name: &str) -> Result<Gate, QuantumError> {
    let z = SymEntry::zero;
    let (arity, entries) = match name.to_ascii_uppercase().as_str() {
        "I" | "ID" => (1, vec![int(1), z(), z(), int(1)]),
        "X" => (1, vec![z(), int(1), int(1), z()]),
        "Y" => (
            1,
            vec![
                z(),
                SymEntry::new(Poly::zero(), Poly::from_i64(-1)),
                SymEntry::new(Poly::zero(), Poly::from_i64(1)),
                z(),
            ],
        ),
        "Z" => (1, vec![int(1), z(), z(), int(-1)]),
        "H" => {
            let p = SymEntry::real(inv_sqrt2(1));
            let m = SymEntry::real(inv_sqrt2(-1));
            (1, vec![p.clone(), p.clone(), p, m])
        }
        "T" => (
            1,
            vec![int(1), z(), z(), SymEntry::new(inv_sqrt2(1), inv_sqrt2(1))],
        ),
        "S" => (
            1,
            vec![
                int(1),
                z(),
                z(),
                SymEntry::new(Poly::zero(), Poly::from_i64(1)),
            ],
        ),
        "CX" | "CNOT" => (2, permutation(4, &[0, 1, 3, 2])),
        "SWAP" => (2, permutation(4, &[0, 2, 1, 3])),
        "CZ" => {
            let mut e = permutation(4, &[0, 1, 2, 3]);
            e[15] = int(-1);
            (2, e)
        }
        _ => return Err(QuantumError::UnknownGate(name.to_string())),
    };
    Gate::from_exact(arity, SymMatrix::from_entries(1 << arity, entries)?)
}

/// Permutation matrix sending basis state `j` to `perm[j]`.
fn permutation(dim: usize, perm: &[usize]) -> Vec<SymEntry> {
    let mut e = vec![SymEntry::zero(); dim * dim];
    for (j, &i) in perm.iter().enumerate() {
        e[i * dim + j] = int(1);
    }
    e
}

/// One Grover iteration `D·O` on `qubits` qubits: the oracle flips the sign of
/// the `marked` basis states, then the diffusion `2|s⟩⟨s| − I` is applied.
pub fn grover_iterate(qubits: usize, marked: &[usize]) -> Result<Gate, QuantumError> {
    let k = 1usize << qubits;
    if let Some(&bad) = marked.iter().find(|&&m| m >= k) {
        return Err(QuantumError::BadTarget {
            target: bad,
            qubits,
        });
    }
    let two_over_k = BigRational::new(BigInt::from(2), BigInt::from(k as u64));
    let mut entries = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let mut v = two_over_k.clone();
            if i == j {
                v -= BigRational::from_integer(BigInt::from(1));
            }
            if marked.contains(&j) {
                v = -v;
            }
            entries.push(SymEntry::real(Poly::constant(v)));
        }
    }
    Gate::from_exact(qubits, SymMatrix::from_entries(k, entries)?)
}

/// Closed interval domain of one uncertainty parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub id: u16,
    pub lo: f64,
    pub hi: f64,
}

impl ParamSpec {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// A family of unitaries indexed by a box of real parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainGate {
    nominal: Gate,
    family: SymMatrix,
    params: Vec<ParamSpec>,
}

impl UncertainGate {
    /// `H_ε = (1/√(1+ε²))·[[1, ε], [ε, −1]]` with `ε ∈ [lo, hi]`; `H_1 = H`.
    pub fn hadamard_eps(id: u16, lo: f64, hi: f64) -> Result<Self, QuantumError> {
        if !(lo <= hi) {
            return Err(QuantumError::InvalidDynamics(format!(
                "empty parameter domain [{lo}, {hi}]"
            )));
        }
        let h = Poly::var(GateSym::ParamNorm(id));
        let he = &h * &Poly::var(GateSym::Param(id));
        let family = SymMatrix::from_entries(
            2,
            vec![
                SymEntry::real(h.clone()),
                SymEntry::real(he.clone()),
                SymEntry::real(he),
                SymEntry::real(-&h),
            ],
        )?;
        let g = UncertainGate {
            nominal: standard_gate("H")?,
            family,
            params: vec![ParamSpec { id, lo, hi }],
        };
        g.spot_check(9)?;
        Ok(g)
    }

    pub fn nominal(&self) -> &Gate {
        &self.nominal
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn family(&self) -> &SymMatrix {
        &self.family
    }

    pub fn arity(&self) -> usize {
        self.nominal.arity
    }

    /// Instantiates the member at `values` (one per parameter, in order).
    pub fn instantiate(&self, values: &[f64]) -> Result<Gate, QuantumError> {
        if values.len() != self.params.len() {
            return Err(QuantumError::ParamMissing);
        }
        let mut by_id = BTreeMap::new();
        for (spec, &v) in self.params.iter().zip(values) {
            if !spec.contains(v) {
                return Err(QuantumError::ParamOutOfDomain {
                    id: spec.id,
                    value: v,
                    lo: spec.lo,
                    hi: spec.hi,
                });
            }
            by_id.insert(spec.id, v);
        }
        let m = self.family.eval(&|id| by_id[&id]);
        Gate::from_matrix(self.arity(), m)
    }

    /// Checks unitarity on a grid of `per_axis` points per parameter axis.
    fn spot_check(&self, per_axis: usize) -> Result<(), QuantumError> {
        let n = per_axis.max(2);
        for spec in &self.params {
            for i in 0..n {
                let v = spec.lo + (spec.hi - spec.lo) * i as f64 / (n - 1) as f64;
                let m = self.family.eval(&|id| if id == spec.id { v } else { 1.0 });
                if !is_unitary(&m, self.nominal.dim()) {
                    return Err(QuantumError::NotUnitary);
                }
            }
        }
        Ok(())
    }
}

/// One element of a step map, acting on the listed qubits.
#[derive(Clone, Debug)]
pub enum Op {
    Fixed {
        gate: Gate,
        targets: Vec<usize>,
    },
    Uncertain {
        gate: UncertainGate,
        targets: Vec<usize>,
    },
}

/// A full-width transition map: the ordered composition of its ops.
#[derive(Clone, Debug)]
pub struct StepMap {
    qubits: usize,
    matrix: SymMatrix,
    params: Vec<ParamSpec>,
    fixed: Option<Vec<Complex64>>,
    compiled: Vec<(NumPoly<GateSym>, NumPoly<GateSym>)>,
}

impl StepMap {
    /// Composes `ops` in order (the first op is applied first).
    pub fn new(qubits: usize, ops: &[Op]) -> Result<Self, QuantumError> {
        let dim = 1usize << qubits;
        let mut matrix = SymMatrix::identity(dim);
        let mut params: Vec<ParamSpec> = Vec::new();
        for op in ops {
            let lifted = match op {
                Op::Fixed { gate, targets } => gate.exact.embed(qubits, targets)?,
                Op::Uncertain { gate, targets } => {
                    for p in &gate.params {
                        if params.iter().any(|q| q.id == p.id) {
                            return Err(QuantumError::InvalidDynamics(format!(
                                "parameter id {} used twice",
                                p.id
                            )));
                        }
                        params.push(*p);
                    }
                    gate.family.embed(qubits, targets)?
                }
            };
            matrix = lifted.matmul(&matrix);
        }
        params.sort_by_key(|p| p.id);
        Self::from_matrix(qubits, matrix, params)
    }

    pub fn from_gate(gate: &Gate) -> Self {
        StepMap {
            qubits: gate.arity,
            matrix: gate.exact.clone(),
            params: Vec::new(),
            fixed: Some(gate.matrix.clone()),
            compiled: Vec::new(),
        }
    }

    fn from_matrix(
        qubits: usize,
        matrix: SymMatrix,
        params: Vec<ParamSpec>,
    ) -> Result<Self, QuantumError> {
        if params.is_empty() {
            let m = matrix.eval(&|_| f64::NAN);
            if !is_unitary(&m, matrix.dim()) {
                return Err(QuantumError::NotUnitary);
            }
            return Ok(StepMap {
                qubits,
                matrix,
                params,
                fixed: Some(m),
                compiled: Vec::new(),
            });
        }
        let compiled = matrix.compile();
        Ok(StepMap {
            qubits,
            matrix,
            params,
            fixed: None,
            compiled,
        })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn exact(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn is_uncertain(&self) -> bool {
        !self.params.is_empty()
    }

    /// Numeric matrix; `point[id]` supplies parameter `id` when uncertain.
    pub fn matrix_at(&self, point: Option<&[f64]>) -> Result<Vec<Complex64>, QuantumError> {
        if let Some(m) = &self.fixed {
            return Ok(m.clone());
        }
        let point = point.ok_or(QuantumError::ParamMissing)?;
        self.check_point(point)?;
        let value = |s: &GateSym| s.value(&|id| point[id as usize]);
        Ok(self
            .compiled
            .iter()
            .map(|(re, im)| Complex64::new(re.eval(value), im.eval(value)))
            .collect())
    }

    fn check_point(&self, point: &[f64]) -> Result<(), QuantumError> {
        for spec in &self.params {
            let v = *point
                .get(spec.id as usize)
                .ok_or(QuantumError::ParamMissing)?;
            if !spec.contains(v) {
                return Err(QuantumError::ParamOutOfDomain {
                    id: spec.id,
                    value: v,
                    lo: spec.lo,
                    hi: spec.hi,
                });
            }
        }
        Ok(())
    }

    pub fn apply(
        &self,
        s: &QuantumState,
        point: Option<&[f64]>,
    ) -> Result<QuantumState, QuantumError> {
        let dim = 1usize << self.qubits;
        if s.dim() != dim {
            return Err(QuantumError::DimensionMismatch {
                expected: dim,
                got: s.dim(),
            });
        }
        let out = match &self.fixed {
            Some(m) => apply_matrix(m, s.amps()),
            None => apply_matrix(&self.matrix_at(point)?, s.amps()),
        };
        Ok(QuantumState::from_unchecked(out))
    }
}

/// Discrete-time complex-space system: a finite set of step maps and a
/// periodic schedule choosing the map applied at each time step.
#[derive(Clone, Debug)]
pub struct Dynamics {
    qubits: usize,
    maps: Vec<StepMap>,
    schedule: Vec<usize>,
    params: Vec<ParamSpec>,
}

impl Dynamics {
    /// `schedule[t mod len]` is the map used at time `t`.
    pub fn new(
        qubits: usize,
        maps: Vec<StepMap>,
        schedule: Vec<usize>,
    ) -> Result<Self, QuantumError> {
        if maps.is_empty() {
            return Err(QuantumError::InvalidDynamics("no step maps".into()));
        }
        if schedule.is_empty() {
            return Err(QuantumError::InvalidDynamics(
                "schedule period must be at least 1".into(),
            ));
        }
        if let Some(&bad) = schedule.iter().find(|&&i| i >= maps.len()) {
            return Err(QuantumError::InvalidDynamics(format!(
                "schedule references map {bad} of {}",
                maps.len()
            )));
        }
        for m in &maps {
            if m.qubits != qubits {
                return Err(QuantumError::DimensionMismatch {
                    expected: 1 << qubits,
                    got: 1 << m.qubits,
                });
            }
        }
        let mut params: Vec<ParamSpec> = Vec::new();
        for m in &maps {
            for p in &m.params {
                match params.iter().find(|q| q.id == p.id) {
                    Some(q) if q != p => {
                        return Err(QuantumError::InvalidDynamics(format!(
                            "parameter {} declared with two domains",
                            p.id
                        )))
                    }
                    Some(_) => {}
                    None => params.push(*p),
                }
            }
        }
        params.sort_by_key(|p| p.id);
        if params.iter().enumerate().any(|(i, p)| p.id as usize != i) {
            return Err(QuantumError::InvalidDynamics(
                "parameter ids must be 0..P without gaps".into(),
            ));
        }
        Ok(Dynamics {
            qubits,
            maps,
            schedule,
            params,
        })
    }

    /// The same map at every step.
    pub fn constant(map: StepMap) -> Result<Self, QuantumError> {
        let q = map.qubits;
        Self::new(q, vec![map], vec![0])
    }

    /// Maps applied in rotation: `maps[t mod len]`.
    pub fn periodic(maps: Vec<StepMap>) -> Result<Self, QuantumError> {
        let q = maps.first().map(|m| m.qubits).unwrap_or(0);
        let schedule = (0..maps.len()).collect();
        Self::new(q, maps, schedule)
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn maps(&self) -> &[StepMap] {
        &self.maps
    }

    pub fn period(&self) -> usize {
        self.schedule.len()
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// Index into `maps()` used at time `t`.
    pub fn map_index(&self, t: usize) -> usize {
        self.schedule[t % self.schedule.len()]
    }

    pub fn map_at(&self, t: usize) -> &StepMap {
        &self.maps[self.map_index(t)]
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn is_uncertain(&self) -> bool {
        !self.params.is_empty()
    }

    /// `z_{t+1} = f_t(z_t)`; `point[id]` instantiates uncertain gates.
    pub fn step(
        &self,
        t: usize,
        s: &QuantumState,
        point: Option<&[f64]>,
    ) -> Result<QuantumState, QuantumError> {
        self.map_at(t).apply(s, point)
    }
}

/// `e^{iπ/4}`, the nontrivial entry of the T gate.
pub fn t_phase() -> Complex64 {
    Complex64::from_polar(1.0, FRAC_PI_4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &QuantumState, b: &[Complex64], tol: f64) -> bool {
        a.amps().iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    fn full(q: usize, gate: &str, targets: &[usize]) -> StepMap {
        StepMap::new(
            q,
            &[Op::Fixed {
                gate: standard_gate(gate).unwrap(),
                targets: targets.to_vec(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn tensor_of_single_gate_is_identity_op() {
        let z = standard_gate("Z").unwrap();
        assert_eq!(tensor(&[z.clone()]).unwrap(), z);
        assert_eq!(tensor(&[]), Err(QuantumError::EmptyTensor));
    }

    #[test]
    fn tensor_zzz_fixes_000() {
        let z = standard_gate("Z").unwrap();
        let zzz = tensor(&[z.clone(), z.clone(), z]).unwrap();
        assert_eq!(zzz.arity(), 3);
        let out = zzz.apply(&QuantumState::basis(3, 0)).unwrap();
        assert!(close(&out, QuantumState::basis(3, 0).amps(), 0.0));
    }

    #[test]
    fn tensor_xi_flips_first_qubit() {
        let g = tensor(&[standard_gate("X").unwrap(), standard_gate("I").unwrap()]).unwrap();
        let out = g.apply(&QuantumState::basis(2, 0)).unwrap();
        assert!(close(&out, QuantumState::basis(2, 2).amps(), 0.0));
    }

    #[test]
    fn standard_gate_actions() {
        let h = standard_gate("H").unwrap();
        let out = h.apply(&QuantumState::basis(1, 0)).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!(close(&out, &[c(r, 0.0), c(r, 0.0)], 1e-15));

        let t = standard_gate("T").unwrap();
        let out = t.apply(&QuantumState::basis(1, 1)).unwrap();
        assert!(close(&out, &[c(0.0, 0.0), t_phase()], 1e-15));

        let cz = standard_gate("CZ").unwrap();
        let out = cz.apply(&QuantumState::basis(2, 3)).unwrap();
        assert!(close(
            &out,
            &[c(0., 0.), c(0., 0.), c(0., 0.), c(-1.0, 0.0)],
            0.0
        ));

        assert!(matches!(
            standard_gate("FOO"),
            Err(QuantumError::UnknownGate(_))
        ));
        for name in ["I", "X", "Y", "Z", "H", "T", "S", "CX", "CZ", "SWAP"] {
            let g = standard_gate(name).unwrap();
            assert!(is_unitary(g.matrix(), g.dim()), "{name}");
        }
    }

    #[test]
    fn non_unitary_rejected() {
        let m = vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        assert_eq!(Gate::from_matrix(1, m), Err(QuantumError::NotUnitary));
    }

    #[test]
    fn alternating_cx_cz_first_step() {
        let d = Dynamics::periodic(vec![full(2, "CX", &[0, 1]), full(2, "CZ", &[0, 1])]).unwrap();
        let out = d.step(0, &QuantumState::basis(2, 2), None).unwrap();
        assert!(close(&out, QuantumState::basis(2, 3).amps(), 0.0));
        assert_eq!(d.map_index(0), 0);
        assert_eq!(d.map_index(1), 1);
        assert_eq!(d.map_index(7), 1);
    }

    #[test]
    fn z_dynamics_fixes_zero() {
        let d = Dynamics::constant(full(1, "Z", &[0])).unwrap();
        let out = d.step(0, &QuantumState::basis(1, 0), None).unwrap();
        assert!(close(&out, QuantumState::basis(1, 0).amps(), 0.0));
    }

    #[test]
    fn uncertain_hadamard_at_one_is_h() {
        let he = UncertainGate::hadamard_eps(0, 0.9, 1.1).unwrap();
        let map = StepMap::new(
            1,
            &[Op::Uncertain {
                gate: he.clone(),
                targets: vec![0],
            }],
        )
        .unwrap();
        let d = Dynamics::constant(map).unwrap();
        let out = d.step(0, &QuantumState::basis(1, 0), Some(&[1.0])).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!(close(&out, &[c(r, 0.0), c(r, 0.0)], 1e-15));
        assert_eq!(
            d.step(0, &QuantumState::basis(1, 0), None),
            Err(QuantumError::ParamMissing)
        );
        assert!(matches!(
            d.step(0, &QuantumState::basis(1, 0), Some(&[1.5])),
            Err(QuantumError::ParamOutOfDomain { .. })
        ));
        assert!(he.instantiate(&[0.95]).is_ok());
        assert!(he.instantiate(&[2.0]).is_err());
    }

    #[test]
    fn embedding_respects_targets() {
        // CX with control 1, target 0 on two qubits: |01⟩ → |11⟩
        let m = full(2, "CX", &[1, 0]);
        let out = m.apply(&QuantumState::basis(2, 1), None).unwrap();
        assert!(close(&out, QuantumState::basis(2, 3).amps(), 0.0));
        // X on qubit 2 of 3: |000⟩ → |001⟩
        let m = full(3, "X", &[2]);
        let out = m.apply(&QuantumState::basis(3, 0), None).unwrap();
        assert!(close(&out, QuantumState::basis(3, 1).amps(), 0.0));
        assert!(StepMap::new(
            2,
            &[Op::Fixed {
                gate: standard_gate("CX").unwrap(),
                targets: vec![0, 0]
            }]
        )
        .is_err());
    }

    #[test]
    fn composition_matches_sequential_steps() {
        let cx = standard_gate("CX").unwrap();
        let cz = standard_gate("CZ").unwrap();
        let product = cx.then(&cz).unwrap();
        let s =
            QuantumState::normalized(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0), c(0.1, -0.4)])
                .unwrap();
        let a = product.apply(&s).unwrap();
        let b = cz.apply(&cx.apply(&s).unwrap()).unwrap();
        assert!(close(&a, b.amps(), 1e-12));
    }

    #[test]
    fn grover_iterate_maps_uniform_to_marked_for_two_qubits() {
        let g = grover_iterate(2, &[3]).unwrap();
        let out = g.apply(&QuantumState::uniform(2)).unwrap();
        assert!((out.prob(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_validation() {
        assert_eq!(
            QuantumState::new(vec![c(1.0, 0.0)]),
            Err(QuantumError::BadLength(1))
        );
        assert!(matches!(
            QuantumState::new(vec![c(1.0, 0.0), c(1.0, 0.0)]),
            Err(QuantumError::NotNormalized(_))
        ));
        let s = QuantumState::normalized(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        assert_eq!(s.qubits(), 1);
    }
}
