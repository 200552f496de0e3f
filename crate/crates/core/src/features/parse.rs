//! Small arithmetic expression language used for feature formulas and
//! closed-form relations.
//!
//! Grammar (usual precedence, `^` binds tighter than unary minus and is
//! right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Exponents must fold to a constant. `pi` is a constant; `sin`, `cos` and
//! `exp` are the only functions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::autodiff::{Expr, Graph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at column {col}")]
    BadChar { ch: char, col: usize },
    #[error("unexpected {found} at column {col}, expected {expected}")]
    Unexpected {
        found: String,
        expected: &'static str,
        col: usize,
    },
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("exponent must be a constant")]
    NonConstantExponent,
    #[error("malformed number '{0}'")]
    BadNumber(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ast {
    Num(f64),
    Ident(String),
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, f64),
    Call(Func, Box<Ast>),
}

impl Ast {
    pub fn parse(src: &str) -> Result<Ast, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let ast = p.expr()?;
        match p.peek() {
            Tok::End => Ok(ast),
            t => Err(p.unexpected(t.clone(), "end of expression")),
        }
    }

    /// Identifiers the expression refers to, sorted.
    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_idents(&mut out);
        out
    }

    fn collect_idents(&self, out: &mut BTreeSet<String>) {
        match self {
            Ast::Num(_) => {}
            Ast::Ident(s) => {
                out.insert(s.clone());
            }
            Ast::Neg(a) | Ast::Pow(a, _) | Ast::Call(_, a) => a.collect_idents(out),
            Ast::Bin(_, a, b) => {
                a.collect_idents(out);
                b.collect_idents(out);
            }
        }
    }

    /// Builds the expression into `g`. Every identifier must be in `env`.
    pub fn build(&self, g: &mut Graph, env: &HashMap<String, Expr>) -> Result<Expr, String> {
        Ok(match self {
            Ast::Num(x) => g.constant(*x),
            Ast::Ident(s) => *env.get(s).ok_or_else(|| s.clone())?,
            Ast::Neg(a) => {
                let a = a.build(g, env)?;
                g.neg(a)
            }
            Ast::Bin(op, a, b) => {
                let a = a.build(g, env)?;
                let b = b.build(g, env)?;
                match op {
                    BinOp::Add => g.add(a, b),
                    BinOp::Sub => g.sub(a, b),
                    BinOp::Mul => g.mul(a, b),
                    BinOp::Div => g.div(a, b),
                }
            }
            Ast::Pow(a, p) => {
                let a = a.build(g, env)?;
                g.powf(a, *p)
            }
            Ast::Call(f, a) => {
                let a = a.build(g, env)?;
                match f {
                    Func::Sin => g.sin(a),
                    Func::Cos => g.cos(a),
                    Func::Exp => g.exp(a),
                }
            }
        })
    }

    fn fold(&self) -> Option<f64> {
        match self {
            Ast::Num(x) => Some(*x),
            Ast::Ident(_) => None,
            Ast::Neg(a) => a.fold().map(|x| -x),
            Ast::Bin(op, a, b) => {
                let (a, b) = (a.fold()?, b.fold()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
            Ast::Pow(a, p) => a.fold().map(|x| x.powf(*p)),
            Ast::Call(f, a) => a.fold().map(|x| match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
            }),
        }
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Num(x) => write!(f, "{x}"),
            Ast::Ident(s) => write!(f, "{s}"),
            Ast::Neg(a) => write!(f, "(-{a})"),
            Ast::Bin(op, a, b) => {
                let c = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                };
                write!(f, "({a}{c}{b})")
            }
            Ast::Pow(a, p) => write!(f, "({a}^{p})"),
            Ast::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(x) => write!(f, "number {x}"),
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Sym(c) => write!(f, "'{c}'"),
            Tok::End => write!(f, "end of expression"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let x = text
                .parse::<f64>()
                .map_err(|_| ParseError::BadNumber(text.clone()))?;
            out.push((Tok::Num(x), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Sym(c), col));
            i += 1;
        } else {
            return Err(ParseError::BadChar { ch: c, col });
        }
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn col(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, found: Tok, expected: &'static str) -> ParseError {
        ParseError::Unexpected {
            found: found.to_string(),
            expected,
            col: self.col(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Sym(s) if *s == c => {
                self.bump();
                Ok(())
            }
            t => Err(self.unexpected(t.clone(), if c == ')' { "')'" } else { "'('" })),
        }
    }

    fn expr(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if *self.peek() == Tok::Sym('-') {
            self.bump();
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Sym('^') {
            return Ok(base);
        }
        self.bump();
        let exp = self
            .unary()?
            .fold()
            .ok_or(ParseError::NonConstantExponent)?;
        Ok(Ast::Pow(Box::new(base), exp))
    }

    fn atom(&mut self) -> Result<Ast, ParseError> {
        let col = self.col();
        match self.bump() {
            Tok::Num(x) => Ok(Ast::Num(x)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('(') {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        _ => return Err(ParseError::UnknownFunction(name)),
                    };
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(')')?;
                    Ok(Ast::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Ast::Num(std::f64::consts::PI))
                } else {
                    Ok(Ast::Ident(name))
                }
            }
            t => Err(ParseError::Unexpected {
                found: t.to_string(),
                expected: "a number, name or '('",
                col,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Bindings, VarId};
    use proptest::prelude::*;

    fn eval(src: &str, vars: &[(&str, f64)]) -> f64 {
        let ast = Ast::parse(src).unwrap();
        let mut g = Graph::new();
        let mut env = HashMap::new();
        let mut b = Bindings::new();
        for (name, x) in vars {
            let (v, e) = g.new_var();
            env.insert(name.to_string(), e);
            b.set(v, *x);
        }
        let e = ast.build(&mut g, &env).unwrap();
        g.evaluate(e, &b).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1+2*3", &[]), 7.0);
        assert_eq!(eval("(1+2)*3", &[]), 9.0);
        assert_eq!(eval("8/4/2", &[]), 1.0);
        assert_eq!(eval("10-4-3", &[]), 3.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
        assert_eq!(eval("1.5e2 + 2.5E-1", &[]), 150.25);
    }

    #[test]
    fn functions_and_variables() {
        let v = eval("sin(pi*x0)*sin(pi*x1)", &[("x0", 0.5), ("x1", 0.5)]);
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(eval("exp(0)", &[]), 1.0);
        assert_eq!(eval("(1-x0^2)*(1-x1^2)", &[("x0", 1.0), ("x1", 0.3)]), 0.0);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            Ast::parse("1 +"),
            Err(ParseError::Unexpected { .. })
        ));
        assert!(matches!(
            Ast::parse("tan(x0)"),
            Err(ParseError::UnknownFunction(_))
        ));
        assert!(matches!(
            Ast::parse("x0^x1"),
            Err(ParseError::NonConstantExponent)
        ));
        assert!(matches!(
            Ast::parse("x0 # 1"),
            Err(ParseError::BadChar { ch: '#', col: 4 })
        ));
        assert!(matches!(
            Ast::parse("(x0"),
            Err(ParseError::Unexpected { .. })
        ));
        assert!(matches!(
            Ast::parse("1 2"),
            Err(ParseError::Unexpected { .. })
        ));
    }

    #[test]
    fn unknown_identifier_is_named_on_build() {
        let ast = Ast::parse("x0 + mu3").unwrap();
        let mut g = Graph::new();
        let mut env = HashMap::new();
        env.insert("x0".to_string(), g.var(VarId::fresh()));
        assert_eq!(ast.build(&mut g, &env), Err("mu3".to_string()));
        let ids: Vec<String> = ast.identifiers().into_iter().collect();
        assert_eq!(ids, vec!["mu3", "x0"]);
    }

    proptest! {
        #[test]
        fn display_round_trips(a in -5.0f64..5.0, b in 0.1f64..5.0, x in -2.0f64..2.0) {
            let src = format!("{a}*sin(x0)-{b}/(x0^2+1)+exp(-{b}*x0)");
            let ast = Ast::parse(&src).unwrap();
            let again = Ast::parse(&ast.to_string()).unwrap();
            prop_assert_eq!(&ast, &again);
            let direct = a * x.sin() - b / (x * x + 1.0) + (-b * x).exp();
            prop_assert!((eval(&src, &[("x0", x)]) - direct).abs() < 1e-12);
        }
    }
}
