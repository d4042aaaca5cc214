//! Semi-algebraic state regions and quasi-Monte Carlo scenario sampling.
//!
//! A region is a conjunction of atoms `Σ c·q ⋈ b` where each `q` is one of
//! `prob(j) = |z_j|²`, `re(j)` or `im(j)`, `⋈ ∈ {<=, >=}`, intersected with the
//! unit sphere. Coefficients and bounds are decimal literals kept as exact
//! rationals so the same atoms can be emitted to the SMT layer verbatim.
//!
//! Sampling maps Sobol points to the probability simplex by sorted
//! stick-breaking (sort the coordinates `u`, then `p_0 = u_(1)`,
//! `p_j = u_(j+1) − u_(j)`, `p_{D−1} = 1 − u_(D−1)`), and draws phases from a
//! seeded ChaCha stream. Atoms that bound the total probability of a set of
//! coordinates are sampled directly; everything else is handled by rejection.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::quantum::{QuantumState, NORM_TOL};
use crate::sobol::Sobol;
use crate::symbolic::rational_from_decimal;

/// Consecutive rejections allowed per requested sample.
pub const REJECT_FACTOR: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("cannot parse region atom `{atom}`: {msg}")]
    Parse { atom: String, msg: String },
    #[error("amplitude index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension {0} is not a power of two ≥ 2")]
    BadDimension(usize),
    #[error("state dimension {got} does not match region dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("region `{0}` appears empty or thin")]
    Empty(String),
    #[error("region `{region}` needs {dims} sampler dimensions (max 128)")]
    TooManyDims { region: String, dims: usize },
    #[error("state violates region `{0}`")]
    NotMember(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    Prob(usize),
    Re(usize),
    Im(usize),
}

impl Quantity {
    pub fn index(&self) -> usize {
        match *self {
            Quantity::Prob(j) | Quantity::Re(j) | Quantity::Im(j) => j,
        }
    }

    pub fn eval(&self, amps: &[Complex64]) -> f64 {
        match *self {
            Quantity::Prob(j) => amps[j].norm_sqr(),
            Quantity::Re(j) => amps[j].re,
            Quantity::Im(j) => amps[j].im,
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Prob(j) => write!(f, "prob({j})"),
            Quantity::Re(j) => write!(f, "re({j})"),
            Quantity::Im(j) => write!(f, "im({j})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
}

/// One linear predicate `Σ coef·q ⋈ bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub terms: Vec<(BigRational, Quantity)>,
    pub cmp: Cmp,
    pub bound: BigRational,
    coefs: Vec<f64>,
    bound_f: f64,
}

impl Atom {
    pub fn new(terms: Vec<(BigRational, Quantity)>, cmp: Cmp, bound: BigRational) -> Self {
        let coefs = terms
            .iter()
            .map(|(c, _)| c.to_f64().unwrap_or(f64::NAN))
            .collect();
        let bound_f = bound.to_f64().unwrap_or(f64::NAN);
        Atom {
            terms,
            cmp,
            bound,
            coefs,
            bound_f,
        }
    }

    pub fn lhs(&self, amps: &[Complex64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefs)
            .map(|((_, q), c)| c * q.eval(amps))
            .sum()
    }

    pub fn holds(&self, amps: &[Complex64]) -> bool {
        let v = self.lhs(amps);
        match self.cmp {
            Cmp::Le => v <= self.bound_f,
            Cmp::Ge => v >= self.bound_f,
        }
    }

    pub fn bound_f64(&self) -> f64 {
        self.bound_f
    }

    /// `Some((coefficient, coordinates))` when every term is `c·prob(j)` with
    /// one shared coefficient and distinct `j`.
    fn prob_group(&self) -> Option<(f64, Vec<usize>)> {
        let first = self.terms.first()?;
        let mut coords = Vec::new();
        for (c, q) in &self.terms {
            match q {
                Quantity::Prob(j) if *c == first.0 && !coords.contains(j) => coords.push(*j),
                _ => return None,
            }
        }
        Some((self.coefs[0], coords))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            write!(f, "0")?;
        }
        for (i, (c, q)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            match (i, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            if mag == BigRational::from_integer(1.into()) {
                write!(f, "{q}")?;
            } else {
                write!(f, "{}*{q}", mag.to_f64().unwrap_or(f64::NAN))?;
            }
        }
        let op = match self.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        };
        write!(f, " {op} {}", self.bound_f)
    }
}

/// Semi-algebraic set of states on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    name: String,
    dim: usize,
    atoms: Vec<Atom>,
}

impl Region {
    /// The whole unit sphere.
    pub fn full(name: &str, dim: usize) -> Result<Self, RegionError> {
        Self::new(name, dim, Vec::new())
    }

    pub fn new(name: &str, dim: usize, atoms: Vec<Atom>) -> Result<Self, RegionError> {
        if dim < 2 || !dim.is_power_of_two() {
            return Err(RegionError::BadDimension(dim));
        }
        for a in &atoms {
            for (_, q) in &a.terms {
                if q.index() >= dim {
                    return Err(RegionError::IndexOutOfRange {
                        index: q.index(),
                        dim,
                    });
                }
            }
        }
        Ok(Region {
            name: name.to_string(),
            dim,
            atoms,
        })
    }

    /// Parses atoms such as `prob(0) >= 0.9`, `prob(1)+prob(2) >= 0.5`,
    /// `-0.5*re(3) <= 0.01` or `false`.
    pub fn parse<S: AsRef<str>>(name: &str, dim: usize, atoms: &[S]) -> Result<Self, RegionError> {
        let parsed = atoms
            .iter()
            .map(|a| parse_atom(a.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, dim, parsed)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// True iff the state is normalized within 1e−9 and every atom holds.
    pub fn contains(&self, s: &QuantumState) -> bool {
        s.dim() == self.dim
            && (s.norm_sqr() - 1.0).abs() <= NORM_TOL
            && self.atoms.iter().all(|a| a.holds(s.amps()))
    }

    pub fn membership(&self, s: &QuantumState) -> Result<bool, RegionError> {
        if s.dim() != self.dim {
            return Err(RegionError::DimensionMismatch {
                expected: self.dim,
                got: s.dim(),
            });
        }
        Ok(self.contains(s))
    }
}

pub fn membership(r: &Region, s: &QuantumState) -> Result<bool, RegionError> {
    r.membership(s)
}

fn parse_atom(text: &str) -> Result<Atom, RegionError> {
    let err = |msg: &str| RegionError::Parse {
        atom: text.to_string(),
        msg: msg.to_string(),
    };
    let t = text.trim();
    match t {
        "false" => {
            return Ok(Atom::new(
                Vec::new(),
                Cmp::Ge,
                BigRational::from_integer(1.into()),
            ));
        }
        "true" => return Ok(Atom::new(Vec::new(), Cmp::Ge, BigRational::zero())),
        _ => {}
    }
    let (lhs, cmp, rhs) = if let Some(i) = t.find(">=") {
        (&t[..i], Cmp::Ge, &t[i + 2..])
    } else if let Some(i) = t.find("<=") {
        (&t[..i], Cmp::Le, &t[i + 2..])
    } else {
        return Err(err("expected `>=` or `<=`"));
    };
    let bound =
        rational_from_decimal(rhs).ok_or_else(|| err("right-hand side must be a number"))?;
    let mut terms: Vec<(BigRational, Quantity)> = Vec::new();
    let mut constant = BigRational::zero();
    let compact: String = lhs.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(err("empty left-hand side"));
    }
    let bytes = compact.as_bytes();
    let mut start = 0;
    let mut pieces = Vec::new();
    for i in 1..=bytes.len() {
        let boundary = i == bytes.len()
            || ((bytes[i] == b'+' || bytes[i] == b'-')
                && !matches!(bytes[i - 1], b'e' | b'E' | b'*' | b'+' | b'-'));
        if boundary {
            pieces.push(&compact[start..i]);
            start = i;
        }
    }
    for piece in pieces {
        let (sign, body) = match piece.as_bytes()[0] {
            b'+' => (1, &piece[1..]),
            b'-' => (-1, &piece[1..]),
            _ => (1, piece),
        };
        let sign = BigRational::from_integer(sign.into());
        let (coef, qty) = match body.rfind('*') {
            Some(i) => (
                rational_from_decimal(&body[..i]).ok_or_else(|| err("bad coefficient"))?,
                &body[i + 1..],
            ),
            None => (BigRational::from_integer(1.into()), body),
        };
        match parse_quantity(qty) {
            Some(q) => terms.push((sign * coef, q)),
            None => match rational_from_decimal(qty) {
                Some(c) if body.rfind('*').is_none() => constant += sign * c,
                _ => return Err(err(&format!("unknown term `{body}`"))),
            },
        }
    }
    Ok(Atom::new(terms, cmp, bound - constant))
}

fn parse_quantity(s: &str) -> Option<Quantity> {
    let open = s.find('(')?;
    let inner = s[open + 1..].strip_suffix(')')?;
    let j: usize = inner.parse().ok()?;
    match &s[..open] {
        "prob" => Some(Quantity::Prob(j)),
        "re" => Some(Quantity::Re(j)),
        "im" => Some(Quantity::Im(j)),
        _ => None,
    }
}

/// Sampled states from one region. Every state is a member of its region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    region: String,
    seed: u64,
    states: Vec<QuantumState>,
}

impl ScenarioSet {
    /// Wraps existing states after checking membership of each.
    pub fn from_states(
        region: &Region,
        seed: u64,
        states: Vec<QuantumState>,
    ) -> Result<Self, RegionError> {
        if states.iter().any(|s| !region.contains(s)) {
            return Err(RegionError::NotMember(region.name.clone()));
        }
        Ok(ScenarioSet {
            region: region.name.clone(),
            seed,
            states,
        })
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> &[QuantumState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Maps a point of `[0,1)^(2D−1)` to a state with `D = 2^n` amplitudes: the
/// first `D − 1` coordinates go through sorted stick-breaking, the last `D`
/// give phases `θ_j = 2π·u`.
pub fn sobol_to_state(point: &[f64], qubits: usize) -> Result<QuantumState, RegionError> {
    let d = 1usize << qubits;
    if qubits == 0 || point.len() != 2 * d - 1 {
        return Err(RegionError::BadDimension(point.len()));
    }
    let p = stick_break(1.0, &point[..d - 1]);
    let amps = p
        .iter()
        .zip(&point[d - 1..])
        .map(|(pj, u)| Complex64::from_polar(pj.sqrt(), TAU * u))
        .collect();
    Ok(QuantumState::from_unchecked(amps))
}

/// Splits `mass` into `us.len() + 1` parts at the sorted cut points `us`.
fn stick_break(mass: f64, us: &[f64]) -> Vec<f64> {
    let mut cuts: Vec<f64> = us.to_vec();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0.0;
    for c in cuts {
        out.push((c - prev) * mass);
        prev = c;
    }
    out.push((1.0 - prev) * mass);
    out
}

#[derive(Clone, Debug)]
struct Group {
    coords: Vec<usize>,
    lo: f64,
    hi: f64,
}

/// Precomputed direct-sampling structure for one region.
#[derive(Clone, Debug)]
struct Plan {
    groups: Vec<Group>,
    free: Vec<usize>,
    re_bounds: Vec<(f64, f64)>,
    im_bounds: Vec<(f64, f64)>,
    dims: usize,
}

impl Plan {
    fn new(r: &Region) -> Result<Self, RegionError> {
        let d = r.dim;
        let mut groups: Vec<Group> = Vec::new();
        let mut re_bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); d];
        let mut im_bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); d];
        for a in &r.atoms {
            if a.terms.is_empty() {
                let ok = match a.cmp {
                    Cmp::Le => 0.0 <= a.bound_f,
                    Cmp::Ge => 0.0 >= a.bound_f,
                };
                if !ok {
                    return Err(RegionError::Empty(r.name.clone()));
                }
                continue;
            }
            if a.terms.len() == 1 {
                let (c, q) = (a.coefs[0], a.terms[0].1);
                let bounds = match q {
                    Quantity::Re(j) => Some(&mut re_bounds[j]),
                    Quantity::Im(j) => Some(&mut im_bounds[j]),
                    Quantity::Prob(_) => None,
                };
                if let Some(b) = bounds {
                    tighten(b, c, a.cmp, a.bound_f);
                    continue;
                }
            }
            let Some((c, mut coords)) = a.prob_group() else {
                continue;
            };
            coords.sort_unstable();
            let mut range = (f64::NEG_INFINITY, f64::INFINITY);
            tighten(&mut range, c, a.cmp, a.bound_f);
            if let Some(g) = groups.iter_mut().find(|g| g.coords == coords) {
                g.lo = g.lo.max(range.0);
                g.hi = g.hi.min(range.1);
            } else if groups
                .iter()
                .all(|g| g.coords.iter().all(|j| !coords.contains(j)))
            {
                groups.push(Group {
                    coords,
                    lo: range.0,
                    hi: range.1,
                });
            }
        }
        for g in &mut groups {
            g.lo = g.lo.max(0.0);
            g.hi = g.hi.min(1.0);
            if g.lo > g.hi {
                return Err(RegionError::Empty(r.name.clone()));
            }
        }
        let free: Vec<usize> = (0..d)
            .filter(|j| groups.iter().all(|g| !g.coords.contains(j)))
            .collect();
        let lo_sum: f64 = groups.iter().map(|g| g.lo).sum();
        let hi_sum: f64 = groups.iter().map(|g| g.hi).sum();
        if lo_sum > 1.0 || (free.is_empty() && hi_sum < 1.0) {
            return Err(RegionError::Empty(r.name.clone()));
        }
        for j in 0..d {
            let (rb, ib) = (re_bounds[j], im_bounds[j]);
            if rb.0 > rb.1 || ib.0 > ib.1 || rb.0 > 1.0 || rb.1 < -1.0 || ib.0 > 1.0 || ib.1 < -1.0
            {
                return Err(RegionError::Empty(r.name.clone()));
            }
        }
        let mut dims: usize = groups.iter().map(|g| g.coords.len() - 1).sum();
        dims += groups.len();
        if free.is_empty() {
            dims -= 1;
        } else {
            dims += free.len() - 1;
        }
        Ok(Plan {
            groups,
            free,
            re_bounds,
            im_bounds,
            dims: dims.max(1),
        })
    }

    /// Candidate state from Sobol coordinates `u` and phase stream `rng`.
    fn candidate(&self, u: &[f64], rng: &mut ChaCha8Rng, d: usize) -> Option<QuantumState> {
        let mut p = vec![0.0; d];
        let mut k = 0;
        let mut rem = 1.0;
        let n_groups = self.groups.len();
        for (gi, g) in self.groups.iter().enumerate() {
            let rest = &self.groups[gi + 1..];
            let rest_lo: f64 = rest.iter().map(|g| g.lo).sum();
            let mass = if gi + 1 == n_groups && self.free.is_empty() {
                rem
            } else {
                let rest_hi = if self.free.is_empty() {
                    rest.iter().map(|g| g.hi).sum()
                } else {
                    f64::INFINITY
                };
                let lo = g.lo.max(rem - rest_hi);
                let hi = g.hi.min(rem - rest_lo);
                if lo > hi {
                    return None;
                }
                let m = lo + u[k] * (hi - lo);
                k += 1;
                m
            };
            if mass < g.lo || mass > g.hi {
                return None;
            }
            let n = g.coords.len();
            let parts = stick_break(mass, &u[k..k + n - 1]);
            k += n - 1;
            for (j, v) in g.coords.iter().zip(parts) {
                p[*j] = v;
            }
            rem -= mass;
        }
        if !self.free.is_empty() {
            let n = self.free.len();
            let parts = stick_break(rem.max(0.0), &u[k..k + n - 1]);
            for (j, v) in self.free.iter().zip(parts) {
                p[*j] = v;
            }
        }
        let mut amps = Vec::with_capacity(d);
        for j in 0..d {
            let r = p[j].max(0.0).sqrt();
            let theta = sample_phase(r, self.re_bounds[j], self.im_bounds[j], rng)?;
            amps.push(Complex64::from_polar(r, theta));
        }
        Some(QuantumState::from_unchecked(amps))
    }
}

/// Intersects `range` with `{x : c·x ⋈ b}`.
fn tighten(range: &mut (f64, f64), c: f64, cmp: Cmp, b: f64) {
    if c == 0.0 {
        return;
    }
    let v = b / c;
    let lower = matches!((cmp, c > 0.0), (Cmp::Ge, true) | (Cmp::Le, false));
    if lower {
        range.0 = range.0.max(v);
    } else {
        range.1 = range.1.min(v);
    }
}

/// Arcs of `[0, 2π)` where `r·cos θ ∈ re` and `r·sin θ ∈ im`, then a uniform
/// draw from their union. `None` when the set is empty.
fn sample_phase(r: f64, re: (f64, f64), im: (f64, f64), rng: &mut ChaCha8Rng) -> Option<f64> {
    let unconstrained = re.0 <= -r && re.1 >= r && im.0 <= -r && im.1 >= r;
    if unconstrained {
        return Some(TAU * rng.random::<f64>());
    }
    if r == 0.0 {
        let ok = re.0 <= 0.0 && re.1 >= 0.0 && im.0 <= 0.0 && im.1 >= 0.0;
        return ok.then_some(0.0);
    }
    let arcs = intersect(&cos_arcs(re.0 / r, re.1 / r), &sin_arcs(im.0 / r, im.1 / r));
    let total: f64 = arcs.iter().map(|(a, b)| b - a).sum();
    if total <= 0.0 {
        return None;
    }
    let mut t = rng.random::<f64>() * total;
    for (a, b) in &arcs {
        if t <= b - a {
            return Some(a + t);
        }
        t -= b - a;
    }
    arcs.last().map(|(_, b)| *b)
}

fn wrap_arc(a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
    // [a, b] with a ≤ b, a ∈ [−2π, 2π), split into pieces within [0, 2π)
    if b - a >= TAU {
        out.push((0.0, TAU));
        return;
    }
    let len = b - a;
    let a = a.rem_euclid(TAU);
    let b = a + len;
    if b <= TAU {
        out.push((a, b));
    } else {
        out.push((a, TAU));
        out.push((0.0, b - TAU));
    }
}

fn sin_arcs(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
    if lo > hi {
        return Vec::new();
    }
    if lo <= -1.0 && hi >= 1.0 {
        return vec![(0.0, TAU)];
    }
    let (a, b) = (lo.asin(), hi.asin());
    let mut out = Vec::new();
    wrap_arc(a, b, &mut out);
    wrap_arc(PI - b, PI - a, &mut out);
    normalize(out)
}

fn cos_arcs(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
    if lo > hi {
        return Vec::new();
    }
    if lo <= -1.0 && hi >= 1.0 {
        return vec![(0.0, TAU)];
    }
    let (a, b) = (hi.acos(), lo.acos());
    let mut out = Vec::new();
    wrap_arc(a, b, &mut out);
    wrap_arc(-b, -a, &mut out);
    normalize(out)
}

fn normalize(mut arcs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    arcs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in arcs {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn intersect(x: &[(f64, f64)], y: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (a, b) in x {
        for (c, d) in y {
            let (lo, hi) = (a.max(*c), b.min(*d));
            if lo < hi {
                out.push((lo, hi));
            }
        }
    }
    normalize(out)
}

/// SplitMix64 finalizer; decorrelates per-candidate RNG seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `count` member states of `r`, deterministic in `seed`.
pub fn sample_states(r: &Region, count: usize, seed: u64) -> Result<ScenarioSet, RegionError> {
    if count == 0 {
        return Err(RegionError::ZeroCount);
    }
    let plan = Plan::new(r)?;
    if plan.dims > 128 {
        return Err(RegionError::TooManyDims {
            region: r.name.clone(),
            dims: plan.dims,
        });
    }
    let sobol = Sobol::shifted(plan.dims, seed).map_err(|_| RegionError::TooManyDims {
        region: r.name.clone(),
        dims: plan.dims,
    })?;
    let budget = REJECT_FACTOR.saturating_mul(count as u64);
    let mut states = Vec::with_capacity(count);
    let mut rejects: u64 = 0;
    let mut next: u64 = 0;
    while states.len() < count {
        let need = count - states.len();
        let batch = (need * 2).clamp(256, 1 << 16) as u64;
        if next + batch > u32::MAX as u64 {
            return Err(RegionError::Empty(r.name.clone()));
        }
        let found = par::map_range(next as usize, (next + batch) as usize, |i| {
            let u = sobol.point(i as u32);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            plan.candidate(&u, &mut rng, r.dim)
                .filter(|s| r.contains(s))
        });
        next += batch;
        for s in found {
            match s {
                Some(s) => {
                    rejects = 0;
                    states.push(s);
                    if states.len() == count {
                        break;
                    }
                }
                None => {
                    rejects += 1;
                    if rejects >= budget {
                        return Err(RegionError::Empty(r.name.clone()));
                    }
                }
            }
        }
    }
    Ok(ScenarioSet {
        region: r.name.clone(),
        seed,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(dim: usize, atoms: &[&str]) -> Region {
        Region::parse("r", dim, atoms).unwrap()
    }

    #[test]
    fn parse_forms() {
        let r = region(
            8,
            &[
                "prob(1)+prob(2) + prob(3) >= 0.5",
                "-0.5*re(3) <= 0.01",
                "im(7) - 2 >= -3",
            ],
        );
        assert_eq!(r.atoms()[0].terms.len(), 3);
        assert_eq!(r.atoms()[1].terms[0].1, Quantity::Re(3));
        assert_eq!(r.atoms()[2].bound, BigRational::from_integer((-1).into()));
        assert!(Region::parse("r", 2, &["prob(0) > 0.5"]).is_err());
        assert!(Region::parse("r", 2, &["foo(0) >= 0.5"]).is_err());
        assert!(matches!(
            Region::parse("r", 2, &["prob(2) >= 0.5"]),
            Err(RegionError::IndexOutOfRange { index: 2, dim: 2 })
        ));
        assert!(Region::parse("r", 2, &["prob(0) >= 1e-3"]).is_ok());
    }

    #[test]
    fn membership_examples() {
        let s001 = QuantumState::basis(3, 1);
        assert!(region(8, &["prob(1) >= 0.2"]).contains(&s001));
        let uni = QuantumState::uniform(3);
        assert!(!region(8, &["prob(0) >= 0.9"]).contains(&uni));
        assert!(Region::full("z", 8).unwrap().contains(&uni));
        assert!(Region::full("z", 4).unwrap().membership(&uni).is_err());
    }

    #[test]
    fn degenerate_stick_breaking() {
        let s = sobol_to_state(&[0.0, 0.0, 0.5], 1).unwrap();
        assert_eq!(s.prob(0), 0.0);
        assert_eq!(s.prob(1), 1.0);
        // phase 0.5 → θ = π
        assert!((s.amps()[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sampled_states_are_members() {
        let r = region(2, &["prob(0) >= 0.9"]);
        let set = sample_states(&r, 3, 7).unwrap();
        assert_eq!(set.len(), 3);
        for s in set.states() {
            assert!(s.prob(0) >= 0.9);
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn contradictory_region_is_empty() {
        let r = region(2, &["prob(0) >= 0.9", "prob(0) <= 0.1"]);
        assert!(matches!(
            sample_states(&r, 1, 0),
            Err(RegionError::Empty(_))
        ));
        let r = region(4, &["false"]);
        assert!(matches!(
            sample_states(&r, 1, 0),
            Err(RegionError::Empty(_))
        ));
        assert_eq!(
            sample_states(&Region::full("z", 2).unwrap(), 0, 0),
            Err(RegionError::ZeroCount)
        );
    }

    #[test]
    fn thin_region_exhausts_budget() {
        // multi-coordinate atom: rejection only; acceptance probability is 0
        let r = region(2, &["prob(0) - prob(1) >= 1.5"]);
        assert!(matches!(
            sample_states(&r, 1, 0),
            Err(RegionError::Empty(_))
        ));
    }

    #[test]
    fn all_coordinates_bounded() {
        let err: f64 = 0.001;
        let d = 4;
        let mut atoms = Vec::new();
        for j in 0..d {
            atoms.push(format!("prob({j}) >= {}", 0.25 - err));
            atoms.push(format!("prob({j}) <= {}", 0.25 + err));
            atoms.push(format!("im({j}) <= {}", err.sqrt()));
            atoms.push(format!("im({j}) >= {}", -err.sqrt()));
        }
        let r = Region::parse("init", d, &atoms).unwrap();
        let set = sample_states(&r, 50, 3).unwrap();
        assert!(set.states().iter().all(|s| r.contains(s)));
    }

    #[test]
    fn phase_arcs() {
        let arcs = sin_arcs(-0.1, 0.1);
        let total: f64 = arcs.iter().map(|(a, b)| b - a).sum();
        assert!((total - 4.0 * 0.1f64.asin()).abs() < 1e-12);
        let both = intersect(&cos_arcs(0.0, 1.0), &sin_arcs(0.0, 1.0));
        assert_eq!(both.len(), 1);
        assert!((both[0].0 - 0.0).abs() < 1e-12 && (both[0].1 - PI / 2.0).abs() < 1e-12);
    }
}
