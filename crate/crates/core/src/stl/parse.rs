//! Text grammar for property files.
//!
//! ```text
//! # comments run to end of line
//! thresholds { epsilon=0.25 delta=0.70 gamma=0.70 tau=0.70 rho_th=0 }
//! property "calm" = always[1,T'](0.5 - jsd >= 0)
//! ```
//!
//! Formulas: `always[a,b](f)`, `not f`, `f and f`, `f or f`, `(f)` and
//! predicates `lhs >= rhs` / `lhs <= rhs` where both sides are affine in the
//! channels (`+`, `-`, `*` by a numeric literal). `rho_th` is a single value
//! or a bracketed list with one entry per property (built-ins first).

use super::properties::{PredicateThresholds, PropertySpec, RhoThreshold};
use super::{AffineExpr, Formula, Interval, Result, StlError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Horizon,
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, message: String| StlError::Grammar { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' | '}' | '[' | ']' | '(' | ')' | '=' | ',' | '+' | '-' | '*' => {
                let s = match c {
                    '{' => "{",
                    '}' => "}",
                    '[' => "[",
                    ']' => "]",
                    '(' => "(",
                    ')' => ")",
                    '=' => "=",
                    ',' => ",",
                    '+' => "+",
                    '-' => "-",
                    _ => "*",
                };
                out.push(Token {
                    tok: Tok::Sym(s),
                    line: tl,
                    col: tc,
                });
                advance(1, &mut i, &mut col);
            }
            '>' | '<' => {
                if chars.get(i + 1) != Some(&'=') {
                    return Err(err(tl, tc, format!("expected `{c}=`")));
                }
                out.push(Token {
                    tok: Tok::Sym(if c == '>' { ">=" } else { "<=" }),
                    line: tl,
                    col: tc,
                });
                advance(2, &mut i, &mut col);
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != '"' {
                    return Err(err(tl, tc, "unterminated string".into()));
                }
                out.push(Token {
                    tok: Tok::Str(chars[start..j].iter().collect()),
                    line: tl,
                    col: tc,
                });
                advance(j + 1 - i, &mut i, &mut col);
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_ascii_digit()
                        || chars[j] == '.'
                        || chars[j] == 'e'
                        || chars[j] == 'E'
                        || ((chars[j] == '-' || chars[j] == '+')
                            && matches!(chars[j - 1], 'e' | 'E')))
                {
                    j += 1;
                }
                let s: String = chars[start..j].iter().collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| err(tl, tc, format!("malformed number `{s}`")))?;
                out.push(Token {
                    tok: Tok::Num(v),
                    line: tl,
                    col: tc,
                });
                advance(j - i, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let s: String = chars[start..j].iter().collect();
                if s == "T" && chars.get(j) == Some(&'\'') {
                    out.push(Token {
                        tok: Tok::Horizon,
                        line: tl,
                        col: tc,
                    });
                    j += 1;
                } else {
                    out.push(Token {
                        tok: Tok::Ident(s),
                        line: tl,
                        col: tc,
                    });
                }
                advance(j - i, &mut i, &mut col);
            }
            other => return Err(err(tl, tc, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const KEYWORDS: [&str; 4] = ["always", "and", "or", "not"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let t = self.peek();
        Err(StlError::Grammar {
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn at_ident(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == s)
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.at_sym(s) {
            self.next();
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", describe(&self.peek().tok)))
        }
    }

    fn expect_number(&mut self) -> Result<f64> {
        let neg = if self.at_sym("-") {
            self.next();
            true
        } else {
            false
        };
        match self.peek().tok {
            Tok::Num(v) => {
                self.next();
                Ok(if neg { -v } else { v })
            }
            ref other => self.error(format!("expected a number, found {}", describe(other))),
        }
    }

    fn expect_step(&mut self) -> Result<usize> {
        let t = self.peek().clone();
        let v = self.expect_number()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(StlError::Grammar {
                line: t.line,
                col: t.col,
                message: format!("step bound must be a non-negative integer, found {v}"),
            });
        }
        Ok(v as usize)
    }

    fn formula(&mut self) -> Result<Formula> {
        let mut lhs = self.conj()?;
        while self.at_ident("or") {
            self.next();
            lhs = lhs.or(self.conj()?);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Formula> {
        let mut lhs = self.unary()?;
        while self.at_ident("and") {
            self.next();
            lhs = lhs.and(self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula> {
        if self.at_ident("not") {
            self.next();
            return Ok(self.unary()?.not());
        }
        if self.at_ident("always") {
            self.next();
            let open = self.peek().clone();
            self.expect_sym("[")?;
            let a = self.expect_step()?;
            self.expect_sym(",")?;
            let interval = if matches!(self.peek().tok, Tok::Horizon) {
                self.next();
                Interval::to_horizon(a)
            } else {
                let b = self.expect_step()?;
                Interval::new(a, b)
            }
            .map_err(|e| StlError::Grammar {
                line: open.line,
                col: open.col,
                message: e.to_string(),
            })?;
            self.expect_sym("]")?;
            self.expect_sym("(")?;
            let inner = self.formula()?;
            self.expect_sym(")")?;
            return Ok(Formula::always(interval, inner));
        }
        if self.at_sym("(") {
            self.next();
            let inner = self.formula()?;
            self.expect_sym(")")?;
            return Ok(inner);
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Formula> {
        let lhs = self.affine()?;
        let ge = if self.at_sym(">=") {
            true
        } else if self.at_sym("<=") {
            false
        } else {
            return self.error(format!(
                "expected `>=` or `<=`, found {}",
                describe(&self.peek().tok)
            ));
        };
        self.next();
        let rhs = self.affine()?;
        let (pos, neg) = if ge { (lhs, rhs) } else { (rhs, lhs) };
        Ok(Formula::predicate(subtract(pos, neg)))
    }

    fn affine(&mut self) -> Result<AffineExpr> {
        let mut expr = AffineExpr::constant(0.0);
        let mut sign = 1.0;
        if self.at_sym("-") {
            self.next();
            sign = -1.0;
        } else if self.at_sym("+") {
            self.next();
        }
        loop {
            self.term(sign, &mut expr)?;
            if self.at_sym("+") {
                sign = 1.0;
            } else if self.at_sym("-") {
                sign = -1.0;
            } else {
                break;
            }
            self.next();
        }
        Ok(expr)
    }

    fn term(&mut self, sign: f64, expr: &mut AffineExpr) -> Result<()> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.next();
                if self.at_sym("*") {
                    self.next();
                    let name = self.channel_name()?;
                    add_term(expr, name, sign * v);
                } else {
                    expr.constant += sign * v;
                }
                Ok(())
            }
            Tok::Ident(_) => {
                let name = self.channel_name()?;
                let mut coef = sign;
                if self.at_sym("*") {
                    self.next();
                    coef *= self.expect_number()?;
                }
                add_term(expr, name, coef);
                Ok(())
            }
            other => self.error(format!(
                "expected a channel or number, found {}",
                describe(&other)
            )),
        }
    }

    fn channel_name(&mut self) -> Result<String> {
        match self.peek().tok.clone() {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.next();
                Ok(name)
            }
            other => self.error(format!("expected a channel name, found {}", describe(&other))),
        }
    }
}

fn add_term(expr: &mut AffineExpr, name: String, coef: f64) {
    if let Some(t) = expr.terms.iter_mut().find(|(n, _)| *n == name) {
        t.1 += coef;
    } else {
        expr.terms.push((name, coef));
    }
}

fn subtract(mut a: AffineExpr, b: AffineExpr) -> AffineExpr {
    a.constant -= b.constant;
    for (name, coef) in b.terms {
        add_term(&mut a, name, -coef);
    }
    a
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v) => format!("`{v}`"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::Horizon => "`T'`".into(),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a single formula.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = p.formula()?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return p.error(format!("unexpected {}", describe(&p.peek().tok)));
    }
    Ok(f)
}

/// Parses a property file. Missing threshold keys keep their defaults.
pub fn parse_spec(text: &str) -> Result<PropertySpec> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let defaults = PredicateThresholds::default();
    let (mut eps, mut delta, mut gamma, mut tau) =
        (defaults.epsilon, defaults.delta, defaults.gamma, defaults.tau);
    let mut rho_th = RhoThreshold::default();
    let mut seen_thresholds = false;
    let mut extras: Vec<(String, Formula)> = Vec::new();

    loop {
        let tok = p.peek().clone();
        match &tok.tok {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "thresholds" => {
                if seen_thresholds {
                    return p.error("duplicate `thresholds` block");
                }
                seen_thresholds = true;
                p.next();
                p.expect_sym("{")?;
                while !p.at_sym("}") {
                    let key_tok = p.peek().clone();
                    let key = match key_tok.tok {
                        Tok::Ident(k) => k,
                        ref other => {
                            return p.error(format!("expected a key, found {}", describe(other)))
                        }
                    };
                    p.next();
                    p.expect_sym("=")?;
                    match key.as_str() {
                        "epsilon" => eps = p.expect_number()?,
                        "delta" => delta = p.expect_number()?,
                        "gamma" => gamma = p.expect_number()?,
                        "tau" => tau = p.expect_number()?,
                        "rho_th" => {
                            rho_th = if p.at_sym("[") {
                                p.next();
                                let mut vals = vec![p.expect_number()?];
                                while p.at_sym(",") {
                                    p.next();
                                    vals.push(p.expect_number()?);
                                }
                                p.expect_sym("]")?;
                                RhoThreshold::PerProperty(vals)
                            } else {
                                RhoThreshold::Uniform(p.expect_number()?)
                            };
                            let vals = match &rho_th {
                                RhoThreshold::Uniform(v) => vec![*v],
                                RhoThreshold::PerProperty(v) => v.clone(),
                            };
                            super::RobustnessThresholds::new(vals)?;
                        }
                        other => {
                            return Err(StlError::Grammar {
                                line: key_tok.line,
                                col: key_tok.col,
                                message: format!("unknown threshold `{other}`"),
                            })
                        }
                    }
                    if key != "rho_th" {
                        let v = match key.as_str() {
                            "epsilon" => eps,
                            "delta" => delta,
                            "gamma" => gamma,
                            _ => tau,
                        };
                        if !(v > 0.0 && v <= 1.0) {
                            return Err(StlError::ThresholdRange {
                                field: key,
                                value: v,
                                range: "(0, 1]",
                            });
                        }
                    }
                }
                p.expect_sym("}")?;
            }
            Tok::Ident(kw) if kw == "property" => {
                p.next();
                let name = match p.peek().tok.clone() {
                    Tok::Str(s) if !s.is_empty() => s,
                    other => {
                        return p.error(format!(
                            "expected a quoted property name, found {}",
                            describe(&other)
                        ))
                    }
                };
                if extras.iter().any(|(n, _)| *n == name)
                    || super::BUILTIN_NAMES.contains(&name.as_str())
                {
                    return p.error(format!("duplicate property name \"{name}\""));
                }
                p.next();
                p.expect_sym("=")?;
                let f = p.formula()?;
                extras.push((name, f));
            }
            other => {
                return p.error(format!(
                    "expected `thresholds` or `property`, found {}",
                    describe(other)
                ))
            }
        }
    }
    if !seen_thresholds {
        return Err(StlError::Grammar {
            line: 1,
            col: 1,
            message: "missing `thresholds { ... }` block".into(),
        });
    }
    let spec = PropertySpec {
        thresholds: PredicateThresholds::new(eps, delta, gamma, tau)?,
        rho_th,
        extras,
    };
    spec.robustness_thresholds()?;
    Ok(spec)
}
