//! Discrete-time STL with quantitative (robustness) semantics.
//!
//! Robustness of a predicate `expr >= 0` at step `t` is the value of `expr`
//! at `t`. `Not` negates, `And` takes the minimum, `Or` the maximum, and
//! `Always[a,b]` evaluated at `t` takes the minimum over steps
//! `t+a-1 ..= t+b-1`, so at `t = 1` the window is exactly `[a, b]`. An upper
//! bound of `T'` runs to the last step of the trace.
//!
//! Evaluation works on whole robustness traces: each node is computed once
//! for every step where it is defined, and `Always` is a sliding-window
//! minimum.

mod parse;
mod properties;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::signal::{InferenceSignal, SignalBundle};

pub use parse::{parse_formula, parse_spec};
pub use properties::{
    build_phi1, build_phi2, build_phi3, build_phi4, check_feasibility, evaluate_properties,
    PredicateThresholds, PropertySpec, RhoThreshold, RobustnessResult, RobustnessThresholds,
    BUILTIN_NAMES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("formula needs steps up to {needed} (evaluated at t={at}) but the signal horizon is {horizon}")]
    OutOfHorizon {
        at: usize,
        needed: usize,
        horizon: usize,
    },
    #[error("invalid interval [{0},{1}]: bounds must satisfy 1 <= a <= b")]
    InvalidInterval(usize, usize),
    #[error("bundle has no signals")]
    EmptyBundle,
    #[error("property count mismatch: {got} robustness values for {expected} thresholds")]
    IndexMismatch { expected: usize, got: usize },
    #[error("`{field}` = {value} is outside {range}")]
    ThresholdRange {
        field: String,
        value: f64,
        range: &'static str,
    },
    #[error("{line}:{col}: {message}")]
    Grammar {
        line: usize,
        col: usize,
        message: String,
    },
}

pub type Result<T, E = StlError> = std::result::Result<T, E>;

/// `constant + sum(coef * channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(String, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn channel(name: impl Into<String>) -> Self {
        Self {
            terms: vec![(name.into(), 1.0)],
            constant: 0.0,
        }
    }

    /// `coef * channel + constant`.
    pub fn scaled(name: impl Into<String>, coef: f64, constant: f64) -> Self {
        Self {
            terms: vec![(name.into(), coef)],
            constant,
        }
    }

    pub fn eval(&self, signal: &InferenceSignal, step: usize) -> Result<f64> {
        let mut acc = self.constant;
        for (name, coef) in &self.terms {
            let j = signal
                .channel_index(name)
                .ok_or_else(|| StlError::UnknownChannel(name.clone()))?;
            acc += coef * signal.value(step, j);
        }
        Ok(acc)
    }

    fn resolve(&self, signal: &InferenceSignal) -> Result<Vec<(usize, f64)>> {
        self.terms
            .iter()
            .map(|(name, coef)| {
                signal
                    .channel_index(name)
                    .map(|j| (j, *coef))
                    .ok_or_else(|| StlError::UnknownChannel(name.clone()))
            })
            .collect()
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, coef) in &self.terms {
            let (sign, mag) = if *coef < 0.0 { ("-", -coef) } else { ("+", *coef) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag == 1.0 {
                write!(f, "{name}")?;
            } else {
                write!(f, "{mag}*{name}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant != 0.0 {
            let sign = if self.constant < 0.0 { "-" } else { "+" };
            write!(f, " {sign} {}", self.constant.abs())
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Step(usize),
    /// The last step of the trace (`T'`).
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    start: usize,
    end: Bound,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start < 1 || start > end {
            return Err(StlError::InvalidInterval(start, end));
        }
        Ok(Self {
            start,
            end: Bound::Step(end),
        })
    }

    pub fn to_horizon(start: usize) -> Result<Self> {
        if start < 1 {
            return Err(StlError::InvalidInterval(start, start));
        }
        Ok(Self {
            start,
            end: Bound::Horizon,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> Bound {
        self.end
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Bound::Step(b) => write!(f, "[{},{}]", self.start, b),
            Bound::Horizon => write!(f, "[{},T']", self.start),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    /// `expr >= 0`.
    Predicate(AffineExpr),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Always(Interval, Box<Formula>),
}

impl Formula {
    pub fn predicate(expr: AffineExpr) -> Self {
        Formula::Predicate(expr)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Formula::Not(Box::new(self))
    }

    pub fn and(self, rhs: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Formula) -> Self {
        Formula::Or(Box::new(self), Box::new(rhs))
    }

    pub fn always(interval: Interval, inner: Formula) -> Self {
        Formula::Always(interval, Box::new(inner))
    }

    /// Left-nested conjunction; `None` for an empty iterator.
    pub fn conjunction(parts: impl IntoIterator<Item = Formula>) -> Option<Self> {
        parts.into_iter().reduce(Formula::and)
    }

    /// Every channel referenced anywhere in the formula.
    pub fn channels(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_channels(&mut out);
        out
    }

    fn collect_channels(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::Predicate(e) => out.extend(e.terms.iter().map(|(n, _)| n.clone())),
            Formula::Not(a) | Formula::Always(_, a) => a.collect_channels(out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.collect_channels(out);
                b.collect_channels(out);
            }
        }
    }

    /// Fails on the first channel the signal does not carry.
    pub fn check_channels(&self, channels: &[String]) -> Result<()> {
        match self.channels().into_iter().find(|c| !channels.contains(c)) {
            Some(missing) => Err(StlError::UnknownChannel(missing)),
            None => Ok(()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Predicate(_) => 1,
            Formula::Not(a) | Formula::Always(_, a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Robustness trace of this formula: entry `i` holds `(rho, witness)` at
    /// step `i + 1`, where `witness` is the step whose predicate value fixed
    /// `rho` (earliest on ties). The trace covers exactly the steps where the
    /// formula is defined.
    pub fn robustness_trace(&self, signal: &InferenceSignal) -> Result<Vec<(f64, usize)>> {
        match self {
            Formula::Predicate(expr) => {
                let terms = expr.resolve(signal)?;
                Ok((1..=signal.horizon())
                    .map(|t| {
                        let row = signal.row(t);
                        let v = terms
                            .iter()
                            .fold(expr.constant, |acc, (j, c)| acc + c * row[*j]);
                        (v, t)
                    })
                    .collect())
            }
            Formula::Not(a) => Ok(a
                .robustness_trace(signal)?
                .into_iter()
                .map(|(v, s)| (-v, s))
                .collect()),
            Formula::And(a, b) => {
                let (ra, rb) = (a.robustness_trace(signal)?, b.robustness_trace(signal)?);
                Ok(ra.into_iter().zip(rb).map(|(x, y)| pick_min(x, y)).collect())
            }
            Formula::Or(a, b) => {
                let (ra, rb) = (a.robustness_trace(signal)?, b.robustness_trace(signal)?);
                Ok(ra.into_iter().zip(rb).map(|(x, y)| pick_max(x, y)).collect())
            }
            Formula::Always(iv, a) => {
                let inner = a.robustness_trace(signal)?;
                Ok(match iv.end {
                    Bound::Step(b) => sliding_min(&inner, iv.start, b),
                    Bound::Horizon => suffix_min(&inner, iv.start),
                })
            }
        }
    }

    /// Largest step a formula evaluated at step `t` reads, for error reports.
    fn reach(&self, t: usize, horizon: usize) -> usize {
        match self {
            Formula::Predicate(_) => t,
            Formula::Not(a) => a.reach(t, horizon),
            Formula::And(a, b) | Formula::Or(a, b) => a.reach(t, horizon).max(b.reach(t, horizon)),
            Formula::Always(iv, a) => {
                let last = match iv.end {
                    Bound::Step(b) => t + b - 1,
                    Bound::Horizon => horizon.max(t + iv.start - 1),
                };
                a.reach(last, horizon)
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Predicate(e) => write!(f, "{e} >= 0"),
            Formula::Not(a) => write!(f, "not ({a})"),
            Formula::And(a, b) => write!(f, "({a}) and ({b})"),
            Formula::Or(a, b) => write!(f, "({a}) or ({b})"),
            Formula::Always(iv, a) => write!(f, "always{iv}({a})"),
        }
    }
}

fn pick_min(x: (f64, usize), y: (f64, usize)) -> (f64, usize) {
    if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) {
        y
    } else {
        x
    }
}

fn pick_max(x: (f64, usize), y: (f64, usize)) -> (f64, usize) {
    if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
        y
    } else {
        x
    }
}

fn lex_less(x: (f64, usize), y: (f64, usize)) -> bool {
    x.0 < y.0 || (x.0 == y.0 && x.1 < y.1)
}

/// `out[t] = min(inner[t+a-1 ..= t+b-1])` (1-based), via a monotone deque.
fn sliding_min(inner: &[(f64, usize)], a: usize, b: usize) -> Vec<(f64, usize)> {
    let n = inner.len();
    if n < b {
        return Vec::new();
    }
    let len = n - b + 1;
    let width = b - a + 1;
    let mut out = Vec::with_capacity(len);
    let mut deque: VecDeque<usize> = VecDeque::new();
    // window for output t (0-based) is inner[t + a - 1 .. t + b - 1] (0-based, inclusive)
    let mut next = a - 1;
    for t in 0..len {
        let hi = t + b - 1;
        while next <= hi {
            while let Some(&back) = deque.back() {
                if lex_less(inner[next], inner[back]) {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = t + a - 1;
        while let Some(&front) = deque.front() {
            if front < lo {
                deque.pop_front();
            } else {
                break;
            }
        }
        debug_assert!(hi + 1 - lo == width);
        out.push(inner[*deque.front().expect("window is non-empty")]);
    }
    out
}

/// `out[t] = min(inner[t+a-1 ..])`.
fn suffix_min(inner: &[(f64, usize)], a: usize) -> Vec<(f64, usize)> {
    let n = inner.len();
    if n < a {
        return Vec::new();
    }
    let mut suffix = inner.to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        suffix[i] = pick_min(suffix[i], suffix[i + 1]);
    }
    suffix.drain(..a - 1);
    suffix
}

/// Robustness of `phi` on `signal` at 1-based step `t`, with the witness step.
pub fn robustness_with_witness(
    phi: &Formula,
    signal: &InferenceSignal,
    t: usize,
) -> Result<(f64, usize)> {
    phi.check_channels(signal.channels())?;
    let trace = phi.robustness_trace(signal)?;
    if t < 1 || t > trace.len() {
        return Err(StlError::OutOfHorizon {
            at: t,
            needed: phi.reach(t.max(1), signal.horizon()),
            horizon: signal.horizon(),
        });
    }
    Ok(trace[t - 1])
}

/// Robustness of `phi` on `signal` at 1-based step `t`.
pub fn robustness(phi: &Formula, signal: &InferenceSignal, t: usize) -> Result<f64> {
    robustness_with_witness(phi, signal, t).map(|(v, _)| v)
}

/// Worst case over the dataset of the robustness at step 1.
///
/// Returns `(rho, prompt index, witness step)`. Channels are checked against
/// the bundle schema before any evaluation.
pub fn min_robustness_with_witness(
    phi: &Formula,
    bundle: &SignalBundle,
) -> Result<(f64, usize, usize)> {
    if bundle.is_empty() {
        return Err(StlError::EmptyBundle);
    }
    phi.check_channels(bundle.channels())?;
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, sig) in bundle.signals().iter().enumerate() {
        let (v, step) = robustness_with_witness(phi, sig, 1)?;
        if best.is_none_or(|(b, _, _)| v < b) {
            best = Some((v, i, step));
        }
    }
    Ok(best.expect("bundle is non-empty"))
}

pub fn min_robustness_over_dataset(phi: &Formula, bundle: &SignalBundle) -> Result<f64> {
    min_robustness_with_witness(phi, bundle).map(|(v, _, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(cols: &[(&str, &[f64])]) -> InferenceSignal {
        let channels: Vec<String> = cols.iter().map(|(n, _)| n.to_string()).collect();
        let len = cols[0].1.len();
        let rows = (0..len)
            .map(|t| cols.iter().map(|(_, v)| v[t]).collect())
            .collect();
        InferenceSignal::new("p", channels, rows).unwrap()
    }

    fn x_ge_0() -> Formula {
        Formula::predicate(AffineExpr::channel("x"))
    }

    #[test]
    fn always_takes_window_minimum() {
        let s = sig(&[("x", &[0.5, 0.2, 0.7])]);
        let phi = Formula::always(Interval::new(1, 3).unwrap(), x_ge_0());
        assert_eq!(robustness_with_witness(&phi, &s, 1).unwrap(), (0.2, 2));
    }

    #[test]
    fn marginal_predicate_is_zero() {
        let s = sig(&[("x", &[0.0])]);
        assert_eq!(robustness(&x_ge_0(), &s, 1).unwrap(), 0.0);
    }

    #[test]
    fn conjunction_of_always() {
        let s = sig(&[("x", &[0.4, 0.1]), ("y", &[0.3, 0.5])]);
        let iv = Interval::new(1, 2).unwrap();
        let y = Formula::predicate(AffineExpr::channel("y"));
        let phi = Formula::always(iv, x_ge_0()).and(Formula::always(iv, y));
        assert_eq!(robustness(&phi, &s, 1).unwrap(), 0.1);
    }

    #[test]
    fn not_and_or() {
        let s = sig(&[("x", &[0.4]), ("y", &[-0.3])]);
        let y = Formula::predicate(AffineExpr::channel("y"));
        assert_eq!(robustness(&x_ge_0().or(y.clone()), &s, 1).unwrap(), 0.4);
        assert_eq!(robustness(&y.not(), &s, 1).unwrap(), 0.3);
    }

    #[test]
    fn window_past_horizon_is_an_error() {
        let s = sig(&[("x", &[0.5, 0.2])]);
        let phi = Formula::always(Interval::new(1, 3).unwrap(), x_ge_0());
        assert!(matches!(
            robustness(&phi, &s, 1),
            Err(StlError::OutOfHorizon { needed: 3, horizon: 2, .. })
        ));
        let phi = Formula::always(Interval::new(1, 2).unwrap(), x_ge_0());
        assert!(robustness(&phi, &s, 2).is_err());
    }

    #[test]
    fn unknown_channel_is_an_error() {
        let s = sig(&[("x", &[0.5])]);
        let phi = Formula::predicate(AffineExpr::channel("nope"));
        assert_eq!(
            robustness(&phi, &s, 1),
            Err(StlError::UnknownChannel("nope".into()))
        );
    }

    #[test]
    fn horizon_bound_runs_to_trace_end() {
        let s = sig(&[("x", &[0.9, 0.5, 0.3, 0.8])]);
        let phi = Formula::always(Interval::to_horizon(2).unwrap(), x_ge_0());
        assert_eq!(robustness_with_witness(&phi, &s, 1).unwrap(), (0.3, 3));
        assert_eq!(robustness_with_witness(&phi, &s, 3).unwrap(), (0.8, 4));
    }

    #[test]
    fn argmin_ties_resolve_to_earliest_step() {
        let s = sig(&[("x", &[0.4, 0.1, 0.1, 0.1])]);
        let phi = Formula::always(Interval::new(1, 4).unwrap(), x_ge_0());
        assert_eq!(robustness_with_witness(&phi, &s, 1).unwrap().1, 2);
    }

    #[test]
    fn interval_validation() {
        assert!(Interval::new(0, 2).is_err());
        assert!(Interval::new(3, 2).is_err());
        assert!(Interval::new(2, 2).is_ok());
    }

    #[test]
    fn dataset_minimum() {
        let a = sig(&[("x", &[0.2])]);
        let b = InferenceSignal::new("q", vec!["x".into()], vec![vec![-0.1]]).unwrap();
        let bundle = SignalBundle::new("d", 4, vec!["x".into()], vec![a.clone(), b]).unwrap();
        assert_eq!(min_robustness_over_dataset(&x_ge_0(), &bundle).unwrap(), -0.1);
        let single = SignalBundle::new("d", 4, vec!["x".into()], vec![a]).unwrap();
        assert_eq!(min_robustness_over_dataset(&x_ge_0(), &single).unwrap(), 0.2);
        let empty = SignalBundle::new("d", 4, vec!["x".into()], vec![]).unwrap();
        assert_eq!(
            min_robustness_over_dataset(&x_ge_0(), &empty),
            Err(StlError::EmptyBundle)
        );
    }
}
