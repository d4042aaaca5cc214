//! Exact multivariate polynomials with rational coefficients.
//!
//! Gate entries (`1/√2`, uncertain-gate parameters) and certificate bodies are
//! kept in this form so SMT queries can be emitted without floating-point
//! approximation.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// A polynomial variable.
pub trait Symbol: Clone + Ord + fmt::Debug {
    /// `Some(q)` when `s * s` is the rational constant `q`; used to keep
    /// products of algebraic constants such as `1/√2` reduced.
    fn square(&self) -> Option<BigRational> {
        None
    }
}

/// Monomial key: sorted `(symbol, exponent)` pairs, exponents ≥ 1.
pub type MonoKey<S> = Vec<(S, u32)>;

#[derive(Clone, PartialEq, Eq)]
pub struct Poly<S: Symbol> {
    terms: BTreeMap<MonoKey<S>, BigRational>,
}

impl<S: Symbol> fmt::Debug for Poly<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(k, c)| {
                let vars: Vec<String> = k.iter().map(|(s, e)| format!("{s:?}^{e}")).collect();
                format!("{c}*{}", vars.join("*"))
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl<S: Symbol> Default for Poly<S> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<S: Symbol> Poly<S> {
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        if !c.is_zero() {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    pub fn from_i64(c: i64) -> Self {
        Self::constant(BigRational::from_integer(BigInt::from(c)))
    }

    pub fn var(s: S) -> Self {
        let mut p = Self::zero();
        p.terms.insert(vec![(s, 1)], BigRational::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The constant value, if the polynomial has no variable terms.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MonoKey<S>, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|k| k.iter().map(|(_, e)| *e).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn symbols(&self) -> Vec<S> {
        let mut out: Vec<S> = self
            .terms
            .keys()
            .flat_map(|k| k.iter().map(|(s, _)| s.clone()))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn add_term(&mut self, key: MonoKey<S>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
        }
    }

    fn mul_keys(a: &MonoKey<S>, b: &MonoKey<S>) -> (MonoKey<S>, BigRational) {
        let mut merged: BTreeMap<S, u32> = BTreeMap::new();
        for (s, e) in a.iter().chain(b.iter()) {
            *merged.entry(s.clone()).or_insert(0) += e;
        }
        let mut coef = BigRational::one();
        let mut key = Vec::with_capacity(merged.len());
        for (s, e) in merged {
            match s.square() {
                Some(q) => {
                    for _ in 0..e / 2 {
                        coef *= &q;
                    }
                    if e % 2 == 1 {
                        key.push((s, 1));
                    }
                }
                None => key.push((s, e)),
            }
        }
        (key, coef)
    }

    /// Evaluates with `value(s)` supplying each symbol.
    pub fn eval<F: Fn(&S) -> f64>(&self, value: F) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                let mut v = c.to_f64().unwrap_or(f64::NAN);
                for (s, e) in k {
                    v *= value(s).powi(*e as i32);
                }
                v
            })
            .sum()
    }

    /// Exact evaluation at rational symbol values.
    pub fn eval_exact<F: Fn(&S) -> BigRational>(&self, value: F) -> BigRational {
        let mut acc = BigRational::zero();
        for (k, c) in &self.terms {
            let mut v = c.clone();
            for (s, e) in k {
                let x = value(s);
                for _ in 0..*e {
                    v *= &x;
                }
            }
            acc += v;
        }
        acc
    }

    /// Pre-converts the coefficients to `f64` for repeated evaluation.
    pub fn compile(&self) -> NumPoly<S> {
        NumPoly {
            terms: self
                .terms
                .iter()
                .map(|(k, c)| (c.to_f64().unwrap_or(f64::NAN), k.clone()))
                .collect(),
        }
    }

    /// Replaces every symbol `s` by the polynomial `f(s)`.
    pub fn substitute<T: Symbol, F: Fn(&S) -> Poly<T>>(&self, f: F) -> Poly<T> {
        let mut out = Poly::<T>::zero();
        for (k, c) in &self.terms {
            let mut term = Poly::<T>::constant(c.clone());
            for (s, e) in k {
                let base = f(s);
                for _ in 0..*e {
                    term = &term * &base;
                }
            }
            out = &out + &term;
        }
        out
    }

    /// Renders the polynomial as an SMT-LIB2 term.
    pub fn to_smt<F: Fn(&S) -> String>(&self, name: F) -> String {
        if self.terms.is_empty() {
            return "0.0".to_string();
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(k, c)| {
                let mut factors: Vec<String> = Vec::new();
                let is_unit = c.is_one();
                let is_neg_unit = (-c).is_one();
                if !(is_unit || is_neg_unit) || k.is_empty() {
                    factors.push(smt_rational(c));
                }
                for (s, e) in k {
                    let n = name(s);
                    for _ in 0..*e {
                        factors.push(n.clone());
                    }
                }
                let body = if factors.len() == 1 {
                    factors.pop().unwrap()
                } else {
                    format!("(* {})", factors.join(" "))
                };
                if is_neg_unit && !k.is_empty() {
                    format!("(- {body})")
                } else {
                    body
                }
            })
            .collect();
        if parts.len() == 1 {
            parts.into_iter().next().unwrap()
        } else {
            format!("(+ {})", parts.join(" "))
        }
    }
}

impl<S: Symbol> Add for &Poly<S> {
    type Output = Poly<S>;
    fn add(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.add_term(k.clone(), c.clone());
        }
        out
    }
}

impl<S: Symbol> Sub for &Poly<S> {
    type Output = Poly<S>;
    fn sub(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = self.clone();
        for (k, c) in &rhs.terms {
            out.add_term(k.clone(), -c.clone());
        }
        out
    }
}

impl<S: Symbol> Neg for &Poly<S> {
    type Output = Poly<S>;
    fn neg(self) -> Poly<S> {
        Poly {
            terms: self.terms.iter().map(|(k, v)| (k.clone(), -v)).collect(),
        }
    }
}

impl<S: Symbol> Mul for &Poly<S> {
    type Output = Poly<S>;
    fn mul(self, rhs: &Poly<S>) -> Poly<S> {
        let mut out = Poly::zero();
        for (ka, ca) in &self.terms {
            for (kb, cb) in &rhs.terms {
                let (key, extra) = Poly::mul_keys(ka, kb);
                out.add_term(key, ca * cb * extra);
            }
        }
        out
    }
}

/// `f64`-coefficient copy of a [`Poly`] for fast repeated evaluation.
#[derive(Clone, Debug)]
pub struct NumPoly<S> {
    terms: Vec<(f64, MonoKey<S>)>,
}

impl<S> NumPoly<S> {
    pub fn eval<F: Fn(&S) -> f64>(&self, value: F) -> f64 {
        self.terms
            .iter()
            .map(|(c, k)| {
                let mut v = *c;
                for (s, e) in k {
                    v *= value(s).powi(*e as i32);
                }
                v
            })
            .sum()
    }
}

/// A complex value `re + i·im` with polynomial parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexPoly<S: Symbol> {
    pub re: Poly<S>,
    pub im: Poly<S>,
}

impl<S: Symbol> ComplexPoly<S> {
    pub fn zero() -> Self {
        ComplexPoly {
            re: Poly::zero(),
            im: Poly::zero(),
        }
    }

    pub fn one() -> Self {
        Self::real(Poly::one())
    }

    pub fn real(re: Poly<S>) -> Self {
        ComplexPoly {
            re,
            im: Poly::zero(),
        }
    }

    pub fn new(re: Poly<S>, im: Poly<S>) -> Self {
        ComplexPoly { re, im }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        ComplexPoly {
            re: self.re.clone(),
            im: -&self.im,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        ComplexPoly {
            re: &self.re + &o.re,
            im: &self.im + &o.im,
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        ComplexPoly {
            re: &self.re - &o.re,
            im: &self.im - &o.im,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        if self.is_zero() || o.is_zero() {
            return Self::zero();
        }
        ComplexPoly {
            re: &(&self.re * &o.re) - &(&self.im * &o.im),
            im: &(&self.re * &o.im) + &(&self.im * &o.re),
        }
    }

    pub fn symbols(&self) -> Vec<S> {
        let mut s = self.re.symbols();
        s.extend(self.im.symbols());
        s.sort();
        s.dedup();
        s
    }
}

/// Exact rational value of a finite `f64`.
pub fn rational_from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

/// Parses a decimal literal (`-12.5`, `3e-4`, `0.9`) into an exact rational.
pub fn rational_from_decimal(text: &str) -> Option<BigRational> {
    let t = text.trim();
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
        None => (t, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().ok()?
    };
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(numer);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -r } else { r })
}

/// Exact rational of the shortest decimal that round-trips `x`.
///
/// Values that were rounded to a few significant digits come back as that
/// short decimal (e.g. `-9.99934` → `-999934/100000`).
pub fn rational_from_display(x: f64) -> BigRational {
    rational_from_decimal(&format!("{x:e}")).unwrap_or_else(|| rational_from_f64(x))
}

/// SMT-LIB2 real literal for an exact rational.
pub fn smt_rational(r: &BigRational) -> String {
    let numer = r.numer().abs();
    let denom = r.denom().clone();
    let body = if denom.is_one() {
        format!("{numer}.0")
    } else {
        format!("(/ {numer}.0 {denom}.0)")
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1) as usize, x);
    s.parse().unwrap_or(x)
}

/// Rounds away from zero-bias in the given direction at `digits` significant
/// digits: the result is `≥ x` when `up`, `≤ x` otherwise.
pub fn round_sig_directed(x: f64, digits: u32, up: bool) -> f64 {
    let r = round_sig(x, digits);
    if (up && r >= x) || (!up && r <= x) {
        return r;
    }
    let mag = if x == 0.0 {
        0
    } else {
        x.abs().log10().floor() as i32
    };
    let ulp = 10f64.powi(mag - digits as i32 + 1);
    let adjusted = if up { r + ulp } else { r - ulp };
    round_sig(adjusted, digits + 1)
}
