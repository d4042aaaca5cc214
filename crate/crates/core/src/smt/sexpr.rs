//! S-expression reader for solver output, and numeric evaluation of the
//! arithmetic subset used in models (`+ - * / ^`, decimals, `root-obj`).

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SexprError {
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("unterminated string or quoted symbol")]
    Unterminated,
    #[error("cannot evaluate `{0}`")]
    Eval(String),
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("root-obj has no real root #{index} ({found} real roots)")]
    NoRoot { index: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sexpr {
    Atom(String),
    Str(String),
    List(Vec<Sexpr>),
}

impl Sexpr {
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::List(l) => Some(l),
            _ => None,
        }
    }

    /// `(head ...)` when the list starts with atom `head`.
    pub fn is_call(&self, head: &str) -> bool {
        matches!(self.list(), Some([Sexpr::Atom(h), ..]) if h == head)
    }
}

impl fmt::Display for Sexpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexpr::Atom(a) => f.write_str(a),
            Sexpr::Str(s) => write!(f, "\"{s}\""),
            Sexpr::List(items) => {
                f.write_str("(")?;
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses every top-level expression in `text`.
pub fn parse_all(text: &str) -> Result<Vec<Sexpr>, SexprError> {
    let mut stack: Vec<Vec<Sexpr>> = vec![Vec::new()];
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '(' => {
                stack.push(Vec::new());
                i += 1;
            }
            ')' => {
                let done = stack.pop().ok_or(SexprError::Unbalanced)?;
                stack
                    .last_mut()
                    .ok_or(SexprError::Unbalanced)?
                    .push(Sexpr::List(done));
                i += 1;
            }
            ';' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(SexprError::Unterminated),
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                stack.last_mut().unwrap().push(Sexpr::Str(s));
            }
            '|' => {
                let start = i + 1;
                let end = chars[start..]
                    .iter()
                    .position(|&ch| ch == '|')
                    .ok_or(SexprError::Unterminated)?;
                let s: String = chars[start..start + end].iter().collect();
                stack.last_mut().unwrap().push(Sexpr::Atom(s));
                i = start + end + 1;
            }
            c if c.is_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '(' | ')' | ';' | '"')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                stack.last_mut().unwrap().push(Sexpr::Atom(s));
            }
        }
    }
    if stack.len() != 1 {
        return Err(SexprError::Unbalanced);
    }
    Ok(stack.pop().unwrap())
}

fn number(a: &str) -> Option<f64> {
    // z3 marks truncated decimals with a trailing `?`
    let a = a.strip_suffix('?').unwrap_or(a);
    if a.starts_with(|c: char| c.is_ascii_digit()) {
        a.parse().ok()
    } else {
        None
    }
}

/// Evaluates an arithmetic term; `env` resolves free symbols.
pub fn eval(e: &Sexpr, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64, SexprError> {
    match e {
        Sexpr::Atom(a) => match number(a) {
            Some(v) => Ok(v),
            None => env(a).ok_or_else(|| SexprError::Unbound(a.clone())),
        },
        Sexpr::Str(_) => Err(SexprError::Eval(e.to_string())),
        Sexpr::List(items) => {
            let (head, args) = match items.split_first() {
                Some((Sexpr::Atom(h), rest)) => (h.as_str(), rest),
                _ => return Err(SexprError::Eval(e.to_string())),
            };
            if head == "root-obj" {
                return root_obj(args).map_err(|err| match err {
                    SexprError::Eval(_) => SexprError::Eval(e.to_string()),
                    other => other,
                });
            }
            let vals = args
                .iter()
                .map(|a| eval(a, env))
                .collect::<Result<Vec<f64>, _>>()?;
            let bad = || SexprError::Eval(e.to_string());
            match (head, vals.as_slice()) {
                ("+", v) => Ok(v.iter().sum()),
                ("*", v) => Ok(v.iter().product()),
                ("-", [x]) => Ok(-x),
                ("-", [x, rest @ ..]) => Ok(rest.iter().fold(*x, |a, b| a - b)),
                ("/", [x, rest @ ..]) if !rest.is_empty() => Ok(rest.iter().fold(*x, |a, b| a / b)),
                ("^", [x, n]) => Ok(x.powf(*n)),
                ("to_real", [x]) => Ok(*x),
                _ => Err(bad()),
            }
        }
    }
}

/// Coefficients (constant first) of a univariate polynomial term in `var`.
fn univariate(e: &Sexpr, var: &str) -> Result<Vec<f64>, SexprError> {
    let bad = || SexprError::Eval(e.to_string());
    match e {
        Sexpr::Atom(a) if a == var => Ok(vec![0.0, 1.0]),
        Sexpr::Atom(a) => number(a).map(|v| vec![v]).ok_or_else(bad),
        Sexpr::Str(_) => Err(bad()),
        Sexpr::List(items) => {
            let (head, args) = match items.split_first() {
                Some((Sexpr::Atom(h), rest)) => (h.as_str(), rest),
                _ => return Err(bad()),
            };
            if head == "^" {
                let [base, exp] = args else { return Err(bad()) };
                let n = exp
                    .atom()
                    .and_then(|a| a.parse::<usize>().ok())
                    .ok_or_else(bad)?;
                let b = univariate(base, var)?;
                return Ok((0..n).fold(vec![1.0], |acc, _| poly_mul(&acc, &b)));
            }
            let polys = args
                .iter()
                .map(|a| univariate(a, var))
                .collect::<Result<Vec<_>, _>>()?;
            match (head, polys.as_slice()) {
                ("+", ps) => Ok(ps.iter().fold(vec![0.0], |a, b| poly_add(&a, b, 1.0))),
                ("*", ps) => Ok(ps.iter().fold(vec![1.0], |a, b| poly_mul(&a, b))),
                ("-", [p]) => Ok(p.iter().map(|c| -c).collect()),
                ("-", [p, rest @ ..]) => {
                    Ok(rest.iter().fold(p.clone(), |a, b| poly_add(&a, b, -1.0)))
                }
                ("/", [p, q]) if q.len() == 1 => Ok(p.iter().map(|c| c / q[0]).collect()),
                _ => Err(bad()),
            }
        }
    }
}

fn poly_add(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, c) in a.iter().enumerate() {
        out[i] += c;
    }
    for (i, c) in b.iter().enumerate() {
        out[i] += sign * c;
    }
    out
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn horner(p: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for c in p.iter().rev() {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Real roots in ascending order: companion-matrix eigenvalues polished by
/// Newton's method.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = coeffs.to_vec();
    while p.len() > 1 && p.last() == Some(&0.0) {
        p.pop();
    }
    let n = p.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = p[n];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(i, n - 1)] = -p[i] / lead;
    }
    let eig = companion.complex_eigenvalues();
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..50 {
                let (v, d) = horner(&p, x);
                if d == 0.0 {
                    break;
                }
                let step = v / d;
                x -= step;
                if step.abs() <= 1e-17 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    roots
}

/// `(root-obj p i)`: the `i`-th (1-based) smallest real root of `p(x)`.
fn root_obj(args: &[Sexpr]) -> Result<f64, SexprError> {
    let [poly, idx] = args else {
        return Err(SexprError::Eval("root-obj".into()));
    };
    let index: usize = idx
        .atom()
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| SexprError::Eval(idx.to_string()))?;
    let var = poly_var(poly).unwrap_or_else(|| "x".into());
    let coeffs = univariate(poly, &var)?;
    let roots = real_roots(&coeffs);
    roots
        .get(index.wrapping_sub(1))
        .copied()
        .ok_or(SexprError::NoRoot {
            index,
            found: roots.len(),
        })
}

fn poly_var(e: &Sexpr) -> Option<String> {
    match e {
        Sexpr::Atom(a) if number(a).is_none() => Some(a.clone()),
        Sexpr::List(items) => items.iter().skip(1).find_map(poly_var),
        _ => None,
    }
}

/// Nullary real constants from a `(get-model)` response, which may be a bare
/// list of `define-fun`s or wrapped in `(model ...)`.
///
/// Bodies may refer to other entries of the same model (z3 echoes
/// `define-fun`s from the query as `n1_x1 = x2`); those are resolved in
/// dependency order.
pub fn parse_model(items: &[Sexpr]) -> Result<BTreeMap<String, f64>, SexprError> {
    let lists = items.iter().filter_map(|item| match item {
        Sexpr::List(l) if item.is_call("model") => Some(&l[1..]),
        Sexpr::List(l) if l.iter().any(|d| d.is_call("define-fun")) => Some(&l[..]),
        _ => None,
    });
    let mut pending: Vec<(&String, &Sexpr)> = Vec::new();
    for d in lists.flatten() {
        let Some([Sexpr::Atom(kw), Sexpr::Atom(name), Sexpr::List(params), _sort, body]) = d.list()
        else {
            continue;
        };
        if kw == "define-fun" && params.is_empty() {
            pending.push((name, body));
        }
    }
    let mut out = BTreeMap::new();
    while !pending.is_empty() {
        let mut next = Vec::new();
        let mut first_err = None;
        for (name, body) in pending.iter().copied() {
            match eval(body, &|s| out.get(s).copied()) {
                Ok(v) => {
                    out.insert(name.clone(), v);
                }
                Err(e @ SexprError::Unbound(_)) => {
                    first_err.get_or_insert(e);
                    next.push((name, body));
                }
                Err(e) => return Err(e),
            }
        }
        if next.len() == pending.len() {
            return Err(first_err.unwrap());
        }
        pending = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> Sexpr {
        parse_all(text).unwrap().remove(0)
    }

    #[test]
    fn parses_nested_lists_and_strings() {
        let v =
            parse_all("sat ((define-fun x () Real 1.5)) (error \"a \"\"b\"\"\") ; c\n|odd name|")
                .unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], Sexpr::Atom("sat".into()));
        assert_eq!(v[2].list().unwrap()[1], Sexpr::Str("a \"b\"".into()));
        assert_eq!(v[3], Sexpr::Atom("odd name".into()));
        assert_eq!(parse_all("(a (b)").unwrap_err(), SexprError::Unbalanced);
        assert_eq!(parse_all("a)").unwrap_err(), SexprError::Unbalanced);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn evaluates_arithmetic() {
        let env = |s: &str| (s == "x").then_some(2.0);
        assert_eq!(eval(&one("(+ 1.0 (* x 3.0) (- 0.5))"), &env).unwrap(), 6.5);
        assert_eq!(eval(&one("(/ 1.0 4.0)"), &env).unwrap(), 0.25);
        assert_eq!(eval(&one("(- 5.0 1.0 1.0)"), &env).unwrap(), 3.0);
        assert_eq!(eval(&one("0.70710678?"), &env).unwrap(), 0.70710678);
        assert!(matches!(eval(&one("y"), &env), Err(SexprError::Unbound(_))));
    }

    #[test]
    fn root_obj_picks_indexed_real_root() {
        // 2x^2 - 1: roots ±1/√2
        let r1 = eval(&one("(root-obj (+ (* 2 (^ x 2)) (- 1)) 1)"), &|_| None).unwrap();
        let r2 = eval(&one("(root-obj (+ (* 2 (^ x 2)) (- 1)) 2)"), &|_| None).unwrap();
        assert!((r1 + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((r2 - 0.5f64.sqrt()).abs() < 1e-15);
        // x^3 - 2 has one real root
        let c = eval(&one("(root-obj (+ (^ x 3) (- 2)) 1)"), &|_| None).unwrap();
        assert!((c - 2f64.cbrt()).abs() < 1e-14);
        assert!(matches!(
            eval(&one("(root-obj (+ (^ x 3) (- 2)) 2)"), &|_| None),
            Err(SexprError::NoRoot { .. })
        ));
    }

    #[test]
    fn reads_both_model_layouts() {
        let bare = parse_all(
            "sat\n(\n  (define-fun y0 () Real\n    (- (/ 1.0 2.0)))\n  (define-fun x0 () Real\n    (root-obj (+ (* 2 (^ x 2)) (- 1)) 2))\n  (define-fun B0 ((a Real)) Real a)\n)",
        )
        .unwrap();
        let m = parse_model(&bare).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["y0"], -0.5);
        let wrapped = parse_all("sat (model (define-fun x0 () Real 0.25))").unwrap();
        assert_eq!(parse_model(&wrapped).unwrap()["x0"], 0.25);
    }

    #[test]
    fn resolves_entries_that_name_other_entries() {
        let items = parse_all(
            "sat ((define-fun n1_x1 () Real x2) (define-fun y1 () Real (- 1.0)) \
             (define-fun n1_y2 () Real (* 2.0 n1_x1)) (define-fun x2 () Real 0.5))",
        )
        .unwrap();
        let m = parse_model(&items).unwrap();
        assert_eq!((m["n1_x1"], m["n1_y2"], m["y1"]), (0.5, 1.0, -1.0));
        let dangling =
            parse_all("sat ((define-fun a () Real b) (define-fun c () Real 1.0))").unwrap();
        assert!(matches!(
            parse_model(&dangling),
            Err(SexprError::Unbound(_))
        ));
    }
}
