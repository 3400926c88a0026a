//! A small arithmetic expression language for model right-hand sides.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('^' unary)?          right associative
//! atom    := number | name | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! `x` and `y` are the state variables, `sin cos exp sqrt` are the only
//! functions, every other name is a model parameter.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Exp => a.exp(),
            Func::Sqrt => a.sqrt(),
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let mut p = Parser { src: text.as_bytes(), pos: 0 };
        let e = p.sum()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates with `x`, `y` and parameters all looked up in `bindings`.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64> {
        let v = self.eval_raw(&|name: &str| bindings.get(name).copied())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite)
        }
    }

    fn eval_raw(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => lookup("x").ok_or_else(|| Error::Unbound("x".into()))?,
            Expr::Var(Var::Y) => lookup("y").ok_or_else(|| Error::Unbound("y".into()))?,
            Expr::Param(name) => lookup(name).ok_or_else(|| Error::Unbound(name.clone()))?,
            Expr::Neg(a) => -a.eval_raw(lookup)?,
            Expr::Binary(op, a, b) => op.apply(a.eval_raw(lookup)?, b.eval_raw(lookup)?),
            Expr::Call(f, a) => f.apply(a.eval_raw(lookup)?),
        })
    }

    /// Parameter names referenced by the expression, in first-use order.
    pub fn parameters(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        });
        out
    }

    fn is_state_free(&self) -> bool {
        let mut free = true;
        self.visit(&mut |e| {
            if matches!(e, Expr::Var(_) | Expr::Param(_)) {
                free = false;
            }
        });
        free
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(a) | Expr::Call(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    /// Substitutes parameters and lowers the tree to a stack program in `x, y`.
    pub fn compile(&self, params: &HashMap<String, f64>) -> Result<Compiled> {
        let mut ops = Vec::new();
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        self.lower(params, &mut ops, &mut depth, &mut max_depth)?;
        if max_depth > STACK {
            return Err(Error::InvalidModel(format!(
                "expression nests too deeply ({max_depth} > {STACK})"
            )));
        }
        let state_free = !ops.iter().any(|op| matches!(op, Op::X | Op::Y));
        let mut c = Compiled { ops, constant: None };
        if state_free {
            c.constant = Some(c.eval(0.0, 0.0));
        }
        Ok(c)
    }

    fn lower(
        &self,
        params: &HashMap<String, f64>,
        ops: &mut Vec<Op>,
        depth: &mut usize,
        max_depth: &mut usize,
    ) -> Result<()> {
        let mut push = |ops: &mut Vec<Op>, op: Op, depth: &mut usize| {
            ops.push(op);
            *depth += 1;
            *max_depth = (*max_depth).max(*depth);
        };
        match self {
            Expr::Const(c) => push(ops, Op::Const(*c), depth),
            Expr::Var(Var::X) => push(ops, Op::X, depth),
            Expr::Var(Var::Y) => push(ops, Op::Y, depth),
            Expr::Param(name) => {
                let v = *params.get(name).ok_or_else(|| Error::Unbound(name.clone()))?;
                push(ops, Op::Const(v), depth)
            }
            Expr::Neg(a) => {
                a.lower(params, ops, depth, max_depth)?;
                ops.push(Op::Neg);
            }
            Expr::Call(f, a) => {
                a.lower(params, ops, depth, max_depth)?;
                ops.push(Op::Call(*f));
            }
            Expr::Binary(op, a, b) => {
                a.lower(params, ops, depth, max_depth)?;
                b.lower(params, ops, depth, max_depth)?;
                ops.push(Op::Bin(*op));
                *depth -= 1;
            }
        }
        Ok(())
    }
}

/// Fully parenthesised form; reparses to a structurally equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::Y) => f.write_str("y"),
            Expr::Param(p) => f.write_str(p),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let at = self.pos;
            let rhs = self.unary()?;
            if op == BinOp::Div && rhs.is_state_free() && rhs.eval_raw(&|_: &str| None).ok() == Some(0.0) {
                return Err(Error::Syntax { pos: at, msg: "division by constant zero".into() });
            }
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(name)
                        .ok_or_else(|| Error::UnknownFunction(name.to_string()))?;
                    self.pos += 1;
                    let arg = self.sum()?;
                    if !self.eat(b')') {
                        return Err(self.error("expected `)` after function argument"));
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                Ok(match name {
                    "x" => Expr::Var(Var::X),
                    "y" => Expr::Var(Var::Y),
                    _ => Expr::Param(name.to_string()),
                })
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                digits(&mut p);
                self.pos = p;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Syntax { pos: start, msg: format!("malformed number `{text}`") })
    }
}

const STACK: usize = 64;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    X,
    Y,
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// Stack program with parameters already substituted.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    constant: Option<f64>,
}

impl Compiled {
    /// Value when the expression does not depend on the state.
    pub fn constant(&self) -> Option<f64> {
        self.constant
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::X => {
                    stack[sp] = x;
                    sp += 1;
                }
                Op::Y => {
                    stack[sp] = y;
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = b.apply(stack[sp - 1], stack[sp]);
                }
            }
        }
        stack[0]
    }
}
