//! Bounded-horizon temporal formulas over linear state predicates.
//!
//! Robustness uses the usual min/max semantics: a predicate scores
//! `b - a.x`, conjunction takes the minimum, `always` the minimum over its
//! window and `eventually` the maximum. Signals are evaluated bottom-up with
//! sliding-window extrema, so a whole trace costs `O(n)` per node.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ScenarioId, StateSequence};

/// Which state space a formula's predicates read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Sim,
    Model,
}

/// `b - a.x >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Predicate {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.b - self.a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Pred(Predicate),
    And(Vec<Formula>),
    Always(usize, usize, Box<Formula>),
    Eventually(usize, usize, Box<Formula>),
}

impl Formula {
    pub fn always(lo: usize, hi: usize, f: Formula) -> Formula {
        Formula::Always(lo, hi, Box::new(f))
    }

    pub fn eventually(lo: usize, hi: usize, f: Formula) -> Formula {
        Formula::Eventually(lo, hi, Box::new(f))
    }

    /// Number of steps past the evaluation index the formula looks ahead.
    pub fn lookahead(&self) -> usize {
        match self {
            Formula::Pred(_) => 0,
            Formula::And(fs) => fs.iter().map(Formula::lookahead).max().unwrap_or(0),
            Formula::Always(_, hi, f) | Formula::Eventually(_, hi, f) => hi + f.lookahead(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Pred(_) => 0,
            Formula::And(fs) => 1 + fs.iter().map(Formula::depth).max().unwrap_or(0),
            Formula::Always(_, _, f) | Formula::Eventually(_, _, f) => 1 + f.depth(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            Formula::Pred(p) => {
                if p.a.len() != dim {
                    return Err(Error::Validation(format!(
                        "predicate has {} coefficients for a {dim}-dimensional state",
                        p.a.len()
                    )));
                }
                if !p.b.is_finite() || p.a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite predicate coefficient".into()));
                }
                Ok(())
            }
            Formula::And(fs) => fs.iter().try_for_each(|f| f.check(dim)),
            Formula::Always(lo, hi, f) | Formula::Eventually(lo, hi, f) => {
                if lo > hi {
                    return Err(Error::Validation(format!(
                        "temporal window [{lo}, {hi}] is empty"
                    )));
                }
                f.check(dim)
            }
        }
    }

    /// Robustness at every index `t` whose look-ahead fits in `n` states.
    fn signal(&self, trace: &(impl StateSequence + ?Sized)) -> Vec<f64> {
        let n = trace.num_states();
        match self {
            Formula::Pred(p) => (0..n).map(|i| p.value(trace.state(i))).collect(),
            Formula::And(fs) => {
                let len = n.saturating_sub(self.lookahead());
                let mut out = vec![f64::INFINITY; len];
                for f in fs {
                    let s = f.signal(trace);
                    for (o, v) in out.iter_mut().zip(&s) {
                        *o = o.min(*v);
                    }
                }
                out
            }
            Formula::Always(lo, hi, f) => {
                window_extremum(&f.signal(trace), *lo, *hi, |a, b| a <= b)
            }
            Formula::Eventually(lo, hi, f) => {
                window_extremum(&f.signal(trace), *lo, *hi, |a, b| a >= b)
            }
        }
    }
}

/// `out[t] = ext(s[t+lo..=t+hi])` where `better(a, b)` means `a` is at
/// least as extreme as `b`.
fn window_extremum(s: &[f64], lo: usize, hi: usize, better: fn(f64, f64) -> bool) -> Vec<f64> {
    let len = s.len().saturating_sub(hi);
    let mut out = Vec::with_capacity(len);
    let mut q: VecDeque<usize> = VecDeque::new();
    let mut next = lo;
    for t in 0..len {
        while next <= t + hi {
            while q.back().is_some_and(|&j| better(s[next], s[j])) {
                q.pop_back();
            }
            q.push_back(next);
            next += 1;
        }
        while q.front().is_some_and(|&j| j < t + lo) {
            q.pop_front();
        }
        out.push(s[*q.front().expect("window is nonempty")]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyFormula {
    pub target: Target,
    pub root: Formula,
}

impl SafetyFormula {
    pub fn new(target: Target, root: Formula) -> Self {
        SafetyFormula { target, root }
    }

    /// Robustness at step `at`.
    pub fn robustness(&self, trace: &(impl StateSequence + ?Sized), at: usize) -> Result<f64> {
        let n = trace.num_states();
        if n == 0 {
            return Err(Error::Validation("cannot evaluate a formula on an empty trace".into()));
        }
        let dim = trace.state(0).len();
        self.root.check(dim)?;
        let need = at + self.root.lookahead();
        if need >= n {
            return Err(Error::Validation(format!(
                "formula window reaches step {need} but the trace ends at step {}",
                n - 1
            )));
        }
        Ok(self.root.signal(trace)[at])
    }

    /// True iff robustness at step 0 is non-negative.
    pub fn evaluate_bool(&self, trace: &(impl StateSequence + ?Sized)) -> Result<bool> {
        Ok(self.robustness(trace, 0)? >= 0.0)
    }

    pub fn to_sexpr(&self, names: &[&str]) -> String {
        let mut s = String::new();
        write_sexpr(&self.root, names, &mut s);
        s
    }
}

fn write_sexpr(f: &Formula, names: &[&str], out: &mut String) {
    use std::fmt::Write;
    match f {
        Formula::Pred(p) => {
            let _ = write!(out, "(le (+");
            for (c, name) in p.a.iter().zip(names) {
                if *c != 0.0 {
                    let _ = write!(out, " (* {c:?} {name})");
                }
            }
            let _ = write!(out, ") {:?})", p.b);
        }
        Formula::And(fs) => {
            out.push_str("(and");
            for g in fs {
                out.push(' ');
                write_sexpr(g, names, out);
            }
            out.push(')');
        }
        Formula::Always(lo, hi, g) | Formula::Eventually(lo, hi, g) => {
            let op = if matches!(f, Formula::Always(..)) { "always" } else { "eventually" };
            let _ = write!(out, "({op} {lo} {hi} ");
            write_sexpr(g, names, out);
            out.push(')');
        }
    }
}

/// Parameters for the built-in specifications.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecParams {
    pub dt: f64,
    pub horizon: usize,
    pub lane_deviation_max: f64,
    pub lane_target_deviation: f64,
    pub lane_target_heading: f64,
    pub lane_reach_seconds: f64,
    /// Stay in the target set after reaching it, rather than just visit it.
    pub lane_reach_and_stay: bool,
    pub eps1: f64,
    pub eps2: f64,
    /// Optional reach clause on the braking surrogate spec: the ego must get
    /// within `d <= reach_distance` by `reach_seconds`.
    pub brake_reach: Option<(f64, f64)>,
}

impl SpecParams {
    pub fn steps(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

fn le(dim: usize, idx: usize, coef: f64, bound: f64) -> Formula {
    let mut a = vec![0.0; dim];
    a[idx] = coef;
    Formula::Pred(Predicate { a, b: bound })
}

fn abs_le(dim: usize, idx: usize, bound: f64) -> Formula {
    Formula::And(vec![le(dim, idx, 1.0, bound), le(dim, idx, -1.0, bound)])
}

/// Returns `(phi_s, phi_m)` for a scenario.
pub fn builtin_specs(scenario: ScenarioId, p: &SpecParams) -> (SafetyFormula, SafetyFormula) {
    let h = p.horizon;
    match scenario {
        ScenarioId::LaneKeeping => {
            let reach = p.steps(p.lane_reach_seconds).min(h);
            let build = |dim: usize, d: usize, heading: Formula| {
                let target = Formula::And(vec![heading, abs_le(dim, d, p.lane_target_deviation)]);
                let goal = if p.lane_reach_and_stay {
                    Formula::eventually(0, reach, Formula::always(0, h - reach, target))
                } else {
                    Formula::eventually(0, reach, target)
                };
                Formula::And(vec![
                    Formula::always(0, h, abs_le(dim, d, p.lane_deviation_max)),
                    goal,
                ])
            };
            // Sim state: [x, y, theta_av, theta_r, v, d].
            let sim_heading = Formula::And(vec![
                Formula::Pred(Predicate {
                    a: vec![0.0, 0.0, 1.0, -1.0, 0.0, 0.0],
                    b: p.lane_target_heading,
                }),
                Formula::Pred(Predicate {
                    a: vec![0.0, 0.0, -1.0, 1.0, 0.0, 0.0],
                    b: p.lane_target_heading,
                }),
            ]);
            let phi_s = build(6, 5, sim_heading);
            // Model state: [d, theta_delta, v].
            let phi_m = build(3, 0, abs_le(3, 1, p.lane_target_heading));
            (
                SafetyFormula::new(Target::Sim, phi_s),
                SafetyFormula::new(Target::Model, phi_m),
            )
        }
        ScenarioId::Braking => {
            // Sim state: [d, v, d_car, v_rear]; model state: [d, v].
            let phi_s = Formula::always(
                0,
                h,
                Formula::And(vec![le(4, 0, -1.0, -p.eps1), le(4, 2, -1.0, -p.eps2)]),
            );
            let mut m = Formula::always(0, h, le(2, 0, -1.0, -p.eps1));
            if let Some((dist, secs)) = p.brake_reach {
                let k = p.steps(secs).min(h);
                m = Formula::And(vec![m, Formula::eventually(0, k, le(2, 0, 1.0, dist))]);
            }
            (
                SafetyFormula::new(Target::Sim, phi_s),
                SafetyFormula::new(Target::Model, m),
            )
        }
    }
}

/// Variable names accepted by the parser for a scenario and target, each
/// mapped to a coefficient vector over the state.
pub fn variables(scenario: ScenarioId, target: Target) -> Vec<(&'static str, Vec<f64>)> {
    let names = match target {
        Target::Sim => scenario.sim_state_names(),
        Target::Model => scenario.model_state_names(),
    };
    let dim = names.len();
    let mut vars: Vec<(&'static str, Vec<f64>)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut a = vec![0.0; dim];
            a[i] = 1.0;
            (*n, a)
        })
        .collect();
    if scenario == ScenarioId::LaneKeeping && target == Target::Sim {
        vars.push(("theta_delta", vec![0.0, 0.0, 1.0, -1.0, 0.0, 0.0]));
    }
    vars
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn pos(&self) -> usize {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom(a, _) => f.write_str(a),
            Sexp::List(items, _) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn tokenize(src: &str) -> Vec<(String, usize)> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, c) in src.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !cur.is_empty() {
                toks.push((std::mem::take(&mut cur), start));
            }
            if !c.is_whitespace() {
                toks.push((c.to_string(), i));
            }
        } else {
            if cur.is_empty() {
                start = i;
            }
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        toks.push((cur, start));
    }
    toks
}

fn parse_sexp(toks: &[(String, usize)], i: &mut usize) -> Result<Sexp> {
    let (tok, pos) = toks
        .get(*i)
        .ok_or_else(|| Error::Config("formula ends unexpectedly".into()))?;
    *i += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match toks.get(*i) {
                    None => {
                        return Err(Error::Config(format!("unclosed `(` at offset {pos}")))
                    }
                    Some((t, _)) if t == ")" => {
                        *i += 1;
                        return Ok(Sexp::List(items, *pos));
                    }
                    Some(_) => items.push(parse_sexp(toks, i)?),
                }
            }
        }
        ")" => Err(Error::Config(format!("unexpected `)` at offset {pos}"))),
        _ => Ok(Sexp::Atom(tok.clone(), *pos)),
    }
}

/// Affine expression `coef.x + constant`.
#[derive(Debug, Clone)]
struct Affine {
    coef: Vec<f64>,
    constant: f64,
}

impl Affine {
    fn scaled(mut self, k: f64) -> Affine {
        self.coef.iter_mut().for_each(|c| *c *= k);
        self.constant *= k;
        self
    }

    fn add(mut self, other: &Affine) -> Affine {
        for (c, o) in self.coef.iter_mut().zip(&other.coef) {
            *c += o;
        }
        self.constant += other.constant;
        self
    }

    fn is_constant(&self) -> bool {
        self.coef.iter().all(|c| *c == 0.0)
    }
}

struct Parser<'a> {
    vars: &'a [(&'static str, Vec<f64>)],
    dim: usize,
}

impl Parser<'_> {
    fn err(&self, s: &Sexp, msg: &str) -> Error {
        Error::Config(format!("{msg} at offset {}: `{s}`", s.pos()))
    }

    fn number(&self, s: &Sexp) -> Result<f64> {
        match s {
            Sexp::Atom(a, _) => a
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.err(s, "expected a number")),
            _ => Err(self.err(s, "expected a number")),
        }
    }

    fn index(&self, s: &Sexp) -> Result<usize> {
        match s {
            Sexp::Atom(a, _) => a
                .parse::<usize>()
                .map_err(|_| self.err(s, "expected a non-negative step index")),
            _ => Err(self.err(s, "expected a non-negative step index")),
        }
    }

    fn expr(&self, s: &Sexp) -> Result<Affine> {
        match s {
            Sexp::Atom(a, _) => {
                if let Ok(v) = a.parse::<f64>() {
                    if v.is_finite() {
                        return Ok(Affine { coef: vec![0.0; self.dim], constant: v });
                    }
                }
                self.vars
                    .iter()
                    .find(|(n, _)| n == a)
                    .map(|(_, c)| Affine { coef: c.clone(), constant: 0.0 })
                    .ok_or_else(|| self.err(s, "unknown variable"))
            }
            Sexp::List(items, _) => {
                let head = match items.first() {
                    Some(Sexp::Atom(h, _)) => h.as_str(),
                    _ => return Err(self.err(s, "expected an operator")),
                };
                let args = &items[1..];
                match head {
                    "+" => {
                        let mut acc = Affine { coef: vec![0.0; self.dim], constant: 0.0 };
                        for a in args {
                            acc = acc.add(&self.expr(a)?);
                        }
                        Ok(acc)
                    }
                    "-" => match args {
                        [x] => Ok(self.expr(x)?.scaled(-1.0)),
                        [x, rest @ ..] if !rest.is_empty() => {
                            let mut acc = self.expr(x)?;
                            for r in rest {
                                acc = acc.add(&self.expr(r)?.scaled(-1.0));
                            }
                            Ok(acc)
                        }
                        _ => Err(self.err(s, "`-` needs at least one argument")),
                    },
                    "*" => match args {
                        [k, x] => Ok(self.expr(x)?.scaled(self.number(k)?)),
                        _ => Err(self.err(s, "`*` takes a constant and an expression")),
                    },
                    _ => Err(self.err(s, "unknown expression operator")),
                }
            }
        }
    }

    /// Predicate `rhs - lhs >= 0`.
    fn pred(&self, lhs: Affine, rhs: Affine) -> Formula {
        let diff = rhs.add(&lhs.scaled(-1.0));
        // diff = -a.x + b  ==>  a = -coef, b = constant
        Formula::Pred(Predicate {
            a: diff.coef.iter().map(|c| -c).collect(),
            b: diff.constant,
        })
    }

    fn formula(&self, s: &Sexp) -> Result<Formula> {
        let items = match s {
            Sexp::List(items, _) => items,
            Sexp::Atom(a, _) if a == "true" => return Ok(Formula::And(vec![])),
            _ => return Err(self.err(s, "expected a formula")),
        };
        let head = match items.first() {
            Some(Sexp::Atom(h, _)) => h.as_str(),
            _ => return Err(self.err(s, "expected an operator")),
        };
        let args = &items[1..];
        match head {
            "and" => Ok(Formula::And(
                args.iter().map(|a| self.formula(a)).collect::<Result<_>>()?,
            )),
            "always" | "eventually" => {
                let [lo, hi, body] = args else {
                    return Err(self.err(s, "temporal operators take `lo hi formula`"));
                };
                let (lo, hi) = (self.index(lo)?, self.index(hi)?);
                if lo > hi {
                    return Err(self.err(s, "temporal window has lo > hi"));
                }
                let body = Box::new(self.formula(body)?);
                Ok(if head == "always" {
                    Formula::Always(lo, hi, body)
                } else {
                    Formula::Eventually(lo, hi, body)
                })
            }
            "le" | "ge" => {
                let [l, r] = args else {
                    return Err(self.err(s, "comparisons take two operands"));
                };
                let (l, r) = if head == "le" { (l, r) } else { (r, l) };
                // `(le (abs e) r)` expands to a conjunction of two predicates.
                if let Sexp::List(inner, _) = l {
                    if matches!(inner.first(), Some(Sexp::Atom(h, _)) if h == "abs") {
                        let [_, e] = inner.as_slice() else {
                            return Err(self.err(l, "`abs` takes one argument"));
                        };
                        let e = self.expr(e)?;
                        let r = self.expr(r)?;
                        return Ok(Formula::And(vec![
                            self.pred(e.clone(), r.clone()),
                            self.pred(e.scaled(-1.0), r),
                        ]));
                    }
                }
                if let Sexp::List(inner, _) = r {
                    if matches!(inner.first(), Some(Sexp::Atom(h, _)) if h == "abs") {
                        return Err(self.err(s, "`abs` is only allowed on the smaller side"));
                    }
                }
                let (l, r) = (self.expr(l)?, self.expr(r)?);
                if l.is_constant() && r.is_constant() && l.constant > r.constant {
                    log::debug!("constant-false predicate in formula");
                }
                Ok(self.pred(l, r))
            }
            _ => Err(self.err(s, "unknown formula operator")),
        }
    }
}

/// Parse a prefix s-expression formula such as
/// `(always 0 160 (le (abs d) 1))`.
///
/// Operators: `and`, `always lo hi f`, `eventually lo hi f`, `le a b`,
/// `ge a b`, and `true`. Expressions are linear: numbers, state variable
/// names, `+`, `-`, `(* k e)`, plus `(abs e)` on the smaller side of a
/// comparison.
pub fn parse_formula(src: &str, scenario: ScenarioId, target: Target) -> Result<SafetyFormula> {
    let toks = tokenize(src);
    let mut i = 0;
    let sexp = parse_sexp(&toks, &mut i)?;
    if i != toks.len() {
        return Err(Error::Config(format!(
            "trailing input after formula at offset {}",
            toks[i].1
        )));
    }
    let vars = variables(scenario, target);
    let dim = match target {
        Target::Sim => scenario.sim_state_names().len(),
        Target::Model => scenario.model_state_names().len(),
    };
    let parser = Parser { vars: &vars, dim };
    Ok(SafetyFormula::new(target, parser.formula(&sexp)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d_trace(ds: &[f64]) -> Vec<Vec<f64>> {
        ds.iter().map(|d| vec![*d]).collect()
    }

    fn d_le(c: f64) -> Formula {
        Formula::Pred(Predicate { a: vec![1.0], b: c })
    }

    #[test]
    fn always_takes_window_min() {
        let f = SafetyFormula::new(Target::Model, Formula::always(0, 2, d_le(1.0)));
        let r = f.robustness(&d_trace(&[0.5, 0.9, 1.3]), 0).unwrap();
        assert!((r + 0.3).abs() < 1e-12);
    }

    #[test]
    fn eventually_takes_window_max() {
        let f = SafetyFormula::new(Target::Model, Formula::eventually(0, 2, d_le(1.0)));
        let r = f.robustness(&d_trace(&[0.5, 0.9, 1.3]), 0).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_conjunction_is_true() {
        let f = SafetyFormula::new(Target::Model, Formula::And(vec![]));
        assert!(f.evaluate_bool(&d_trace(&[3.0])).unwrap());
    }

    #[test]
    fn window_past_trace_end_is_rejected() {
        let f = SafetyFormula::new(Target::Model, Formula::always(0, 5, d_le(1.0)));
        assert!(matches!(
            f.robustness(&d_trace(&[0.0, 0.0]), 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_robustness_counts_as_satisfied() {
        let f = SafetyFormula::new(Target::Model, d_le(1.0));
        assert!(f.evaluate_bool(&d_trace(&[1.0])).unwrap());
    }

    fn params() -> SpecParams {
        SpecParams {
            dt: 0.05,
            horizon: 160,
            lane_deviation_max: 1.0,
            lane_target_deviation: 0.3,
            lane_target_heading: 0.1,
            lane_reach_seconds: 4.0,
            lane_reach_and_stay: true,
            eps1: 0.5,
            eps2: 0.5,
            brake_reach: None,
        }
    }

    #[test]
    fn lane_spec_reach_window_is_80_steps() {
        let (phi_s, phi_m) = builtin_specs(ScenarioId::LaneKeeping, &params());
        for f in [phi_s, phi_m] {
            let Formula::And(parts) = &f.root else { panic!() };
            let Formula::Eventually(lo, hi, inner) = &parts[1] else { panic!() };
            assert_eq!((*lo, *hi), (0, 80));
            assert!(matches!(**inner, Formula::Always(0, 80, _)));
        }
    }

    #[test]
    fn lane_spec_accepts_settling_trace() {
        let (_, phi_m) = builtin_specs(ScenarioId::LaneKeeping, &params());
        let trace: Vec<Vec<f64>> = (0..=160)
            .map(|i| {
                let d = if i < 60 { 0.8 } else { 0.1 };
                let th = if i < 60 { -0.2 } else { 0.0 };
                vec![d, th, 5.0]
            })
            .collect();
        assert!(phi_m.evaluate_bool(&trace).unwrap());
        let mut late = trace.clone();
        for s in &mut late[100..=145] {
            s[0] = 0.5;
        }
        assert!(!phi_m.evaluate_bool(&late).unwrap());
    }

    #[test]
    fn braking_specs() {
        let (phi_s, phi_m) = builtin_specs(ScenarioId::Braking, &params());
        let Formula::Always(0, 160, body) = &phi_m.root else { panic!() };
        let Formula::Pred(p) = body.as_ref() else { panic!() };
        assert_eq!(p.a, vec![-1.0, 0.0]);
        assert_eq!(p.b, -0.5);
        assert_eq!(p.value(&[30.0, 1.0]), 29.5);
        // Reaching the cones violates the simulator spec.
        let trace: Vec<Vec<f64>> = (0..=160)
            .map(|i| vec![(10.0 - i as f64 * 0.1).max(0.0), 1.0, 10.0, 1.0])
            .collect();
        assert!(!phi_s.evaluate_bool(&trace).unwrap());
    }

    #[test]
    fn braking_model_spec_has_no_rear_car_predicate() {
        let (_, phi_m) = builtin_specs(ScenarioId::Braking, &params());
        assert_eq!(phi_m.target, Target::Model);
        fn dims(f: &Formula) -> Vec<usize> {
            match f {
                Formula::Pred(p) => vec![p.a.len()],
                Formula::And(fs) => fs.iter().flat_map(dims).collect(),
                Formula::Always(_, _, g) | Formula::Eventually(_, _, g) => dims(g),
            }
        }
        assert!(dims(&phi_m.root).iter().all(|&d| d == 2));
    }

    #[test]
    fn parse_abs_formula() {
        let f = parse_formula(
            "(always 0 160 (le (abs d) 1))",
            ScenarioId::LaneKeeping,
            Target::Model,
        )
        .unwrap();
        let Formula::Always(0, 160, body) = &f.root else { panic!() };
        let Formula::And(parts) = body.as_ref() else { panic!() };
        assert_eq!(parts.len(), 2);
        let mut trace = vec![vec![0.0, 0.0, 5.0]; 161];
        assert!(f.evaluate_bool(&trace).unwrap());
        trace[100][0] = -1.5;
        assert!((f.robustness(&trace, 0).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn parse_sim_theta_delta_alias() {
        let f = parse_formula(
            "(ge (+ theta_delta 0.1) 0)",
            ScenarioId::LaneKeeping,
            Target::Sim,
        )
        .unwrap();
        let x = vec![vec![0.0, 0.0, 0.3, 0.5, 5.0, 0.0]];
        assert!((f.robustness(&x, 0).unwrap() + 0.1).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_are_reported() {
        for bad in [
            "(always 0 10 (le q 1))",
            "(always 5 1 (le d 1))",
            "(le d 1",
            "(le d 1))",
            "(frob d)",
        ] {
            assert!(
                matches!(
                    parse_formula(bad, ScenarioId::LaneKeeping, Target::Model),
                    Err(Error::Config(_))
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn sexpr_round_trip() {
        let (phi_s, _) = builtin_specs(ScenarioId::Braking, &params());
        let text = phi_s.to_sexpr(ScenarioId::Braking.sim_state_names());
        let back = parse_formula(&text, ScenarioId::Braking, Target::Sim).unwrap();
        let trace: Vec<Vec<f64>> =
            (0..=160).map(|i| vec![20.0 - 0.1 * i as f64, 3.0, 4.0 - 0.02 * i as f64, 3.0]).collect();
        assert_eq!(
            phi_s.robustness(&trace, 0).unwrap(),
            back.robustness(&trace, 0).unwrap()
        );
    }

    fn naive(f: &Formula, tr: &[Vec<f64>], t: usize) -> f64 {
        match f {
            Formula::Pred(p) => p.value(&tr[t]),
            Formula::And(fs) => fs.iter().map(|g| naive(g, tr, t)).fold(f64::INFINITY, f64::min),
            Formula::Always(lo, hi, g) => {
                (t + lo..=t + hi).map(|s| naive(g, tr, s)).fold(f64::INFINITY, f64::min)
            }
            Formula::Eventually(lo, hi, g) => (t + lo..=t + hi)
                .map(|s| naive(g, tr, s))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn arb_formula() -> impl Strategy<Value = Formula> {
        let leaf = (prop::collection::vec(-2.0..2.0f64, 2), -2.0..2.0f64)
            .prop_map(|(a, b)| Formula::Pred(Predicate { a, b }));
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(Formula::And),
                (0usize..3, 0usize..3, inner.clone())
                    .prop_map(|(a, w, f)| Formula::always(a, a + w, f)),
                (0usize..3, 0usize..3, inner).prop_map(|(a, w, f)| Formula::eventually(a, a + w, f)),
            ]
        })
    }

    proptest! {
        #[test]
        fn matches_naive_and_sign(
            f in arb_formula(),
            tr in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 20),
        ) {
            let sf = SafetyFormula::new(Target::Model, f.clone());
            let n = f.lookahead();
            prop_assume!(n < tr.len());
            for t in 0..tr.len() - n {
                let r = sf.robustness(&tr, t).unwrap();
                prop_assert!((r - naive(&f, &tr, t)).abs() <= 1e-12);
            }
            let r0 = sf.robustness(&tr, 0).unwrap();
            prop_assert_eq!(r0 >= 0.0, sf.evaluate_bool(&tr).unwrap());
        }

        #[test]
        fn raising_margins_never_lowers_robustness(
            f in arb_formula(),
            tr in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 16),
            bump in 0.0..1.0f64,
        ) {
            fn raise(f: &Formula, k: f64) -> Formula {
                match f {
                    Formula::Pred(p) => Formula::Pred(Predicate { a: p.a.clone(), b: p.b + k }),
                    Formula::And(fs) => Formula::And(fs.iter().map(|g| raise(g, k)).collect()),
                    Formula::Always(a, b, g) => Formula::always(*a, *b, raise(g, k)),
                    Formula::Eventually(a, b, g) => Formula::eventually(*a, *b, raise(g, k)),
                }
            }
            prop_assume!(f.lookahead() < tr.len());
            let lo = SafetyFormula::new(Target::Model, f.clone()).robustness(&tr, 0).unwrap();
            let hi = SafetyFormula::new(Target::Model, raise(&f, bump)).robustness(&tr, 0).unwrap();
            prop_assert!(hi >= lo);
        }
    }
}
