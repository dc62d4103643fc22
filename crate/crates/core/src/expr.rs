//! Small arithmetic expression language for function-valued scenario fields.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter than unary minus):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x1, x2` (aliases `y1, y2`), `t` and `u`; constants `pi` and `e`.
//! Functions: `sin cos tan exp ln sqrt abs tanh min max`, and the indicators
//! `ball(cx, cy, r)` (closed disk) and `rect(x0, x1, y0, y1)` (closed rectangle) at
//! the point `(x1, x2)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values bound to the free variables of an expression.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vars {
    pub x: [f64; 2],
    pub t: f64,
    pub u: f64,
}

impl Vars {
    pub fn at(x: [f64; 2]) -> Self {
        Vars { x, ..Vars::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X1,
    X2,
    T,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
    Ball,
    Rect,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "tanh" => (Func::Tanh, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "ball" => (Func::Ball, 3),
            "rect" => (Func::Rect, 4),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, v: &Vars) -> f64 {
        match self {
            Node::Num(c) => *c,
            Node::Var(Var::X1) => v.x[0],
            Node::Var(Var::X2) => v.x[1],
            Node::Var(Var::T) => v.t,
            Node::Var(Var::U) => v.u,
            Node::Neg(a) => -a.eval(v),
            Node::Add(a, b) => a.eval(v) + b.eval(v),
            Node::Sub(a, b) => a.eval(v) - b.eval(v),
            Node::Mul(a, b) => a.eval(v) * b.eval(v),
            Node::Div(a, b) => a.eval(v) / b.eval(v),
            Node::Pow(a, b) => {
                let (a, b) = (a.eval(v), b.eval(v));
                if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                    a.powi(b as i32)
                } else {
                    a.powf(b)
                }
            }
            Node::Call(f, args) => {
                let a: Vec<f64> = args.iter().map(|n| n.eval(v)).collect();
                match f {
                    Func::Sin => a[0].sin(),
                    Func::Cos => a[0].cos(),
                    Func::Tan => a[0].tan(),
                    Func::Exp => a[0].exp(),
                    Func::Ln => a[0].ln(),
                    Func::Sqrt => a[0].sqrt(),
                    Func::Abs => a[0].abs(),
                    Func::Tanh => a[0].tanh(),
                    Func::Min => a[0].min(a[1]),
                    Func::Max => a[0].max(a[1]),
                    Func::Ball => {
                        let d = (v.x[0] - a[0]).hypot(v.x[1] - a[1]);
                        indicator(d <= a[2])
                    }
                    Func::Rect => indicator(
                        v.x[0] >= a[0] && v.x[0] <= a[1] && v.x[1] >= a[2] && v.x[1] <= a[3],
                    ),
                }
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) => a.uses(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses(var) || b.uses(var)
            }
            // indicators read the position implicitly
            Node::Call(f, args) => {
                (matches!(f, Func::Ball | Func::Rect) && matches!(var, Var::X1 | Var::X2))
                    || args.iter().any(|n| n.uses(var))
            }
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Name(String),
    Op(char),
}

fn tokenize(src: &str) -> std::result::Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
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
            let v = text.parse::<f64>().map_err(|_| format!("bad number `{text}`"))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Name(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> std::result::Result<(), String> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(format!("expected `{op}`"))
        }
    }

    fn expr(&mut self) -> std::result::Result<Node, String> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> std::result::Result<Node, String> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> std::result::Result<Node, String> {
        if self.eat('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> std::result::Result<Node, String> {
        let base = self.atom()?;
        if self.eat('^') {
            Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> std::result::Result<Node, String> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Token::Name(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let (f, arity) = Func::lookup(&name).ok_or_else(|| format!("unknown function `{name}`"))?;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(format!("`{name}` takes {arity} argument(s), got {}", args.len()));
                    }
                    return Ok(Node::Call(f, args));
                }
                Ok(match name.as_str() {
                    "x1" | "y1" => Node::Var(Var::X1),
                    "x2" | "y2" => Node::Var(Var::X2),
                    "t" => Node::Var(Var::T),
                    "u" => Node::Var(Var::U),
                    "pi" => Node::Num(std::f64::consts::PI),
                    "e" => Node::Num(std::f64::consts::E),
                    _ => return Err(format!("unknown name `{name}`")),
                })
            }
            Some(Token::Op(c)) => Err(format!("unexpected `{c}`")),
            None => Err("unexpected end of input".into()),
        }
    }
}

/// Parsed expression; serialises as its source text.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    src: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let err = |message: String| Error::Expression {
            expr: src.to_string(),
            message,
        };
        let tokens = tokenize(src).map_err(err)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr().map_err(err)?;
        if p.pos != p.tokens.len() {
            return Err(err(format!("trailing input at token {}", p.pos + 1)));
        }
        Ok(Expr {
            src: src.trim().to_string(),
            root,
        })
    }

    pub fn constant(c: f64) -> Expr {
        Expr {
            src: format!("{c:?}"),
            root: Node::Num(c),
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, vars: &Vars) -> f64 {
        self.root.eval(vars)
    }

    pub fn at(&self, x: [f64; 2]) -> f64 {
        self.eval(&Vars::at(x))
    }

    pub fn uses(&self, var: Var) -> bool {
        self.root.uses(var)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;

    fn try_from(s: String) -> Result<Expr> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.src
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.src)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: [f64; 2]) -> f64 {
        Expr::parse(s).unwrap().at(x)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", [0.0; 2]), 7.0);
        assert_eq!(ev("-2^2", [0.0; 2]), -4.0);
        assert_eq!(ev("2^3^2", [0.0; 2]), 512.0);
        assert_eq!(ev("(1 + 2) * 3", [0.0; 2]), 9.0);
        assert_eq!(ev("7 / 2", [0.0; 2]), 3.5);
        assert_eq!(ev("1e-4 + 2.5E1", [0.0; 2]), 25.0001);
    }

    #[test]
    fn reference_initial_datum() {
        let g = "exp(-10*((x1-0.5)^2 + (x2-0.5)^2)) * ball(0.5, 0.5, 0.25)";
        assert!((ev(g, [0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert_eq!(ev(g, [0.5, 0.8]), 0.0);
        let expected = (-10.0f64 * 0.01).exp();
        assert!((ev(g, [0.6, 0.5]) - expected).abs() < 1e-15);
    }

    #[test]
    fn indicators_and_vars() {
        assert_eq!(ev("rect(0, 1, 1, 2)", [0.5, 1.0]), 1.0);
        assert_eq!(ev("rect(0, 1, 1, 2)", [0.5, 0.99]), 0.0);
        let e = Expr::parse("1/(0.0001 + abs(1 - 2*u))").unwrap();
        assert!(e.uses(Var::U) && !e.uses(Var::X1));
        let v = Vars { u: 0.5, ..Vars::default() };
        assert!((e.eval(&v) - 1e4).abs() < 1e-9);
        assert!(Expr::parse("ball(0,0,1)").unwrap().uses(Var::X2));
    }

    #[test]
    fn errors() {
        for bad in ["", "1 +", "foo(1)", "sin(1, 2)", "2 $ 3", "(1", "1 2", "q"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn serde_as_string() {
        let e = Expr::parse("sin(pi*y1)").unwrap();
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, "\"sin(pi*y1)\"");
        let back: Expr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    proptest! {
        #[test]
        fn polynomial_matches_direct_evaluation(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -2.0f64..2.0) {
            let e = Expr::parse(&format!("{a:?}*x1^2 - {b:?}*x1 + 3")).unwrap();
            let direct = a * x * x - b * x + 3.0;
            prop_assert!((e.at([x, 0.0]) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
