//! A small arithmetic expression language for config files.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! cmp   := sum (("<" | "<=" | ">" | ">=" | "==" | "!=") sum)?
//! sum   := prod (("+" | "-") prod)*
//! prod  := unary (("*" | "/") unary)*
//! unary := "-" unary | pow
//! pow   := atom ("^" unary)?
//! atom  := number | name | name "(" cmp ("," cmp)* ")" | "(" cmp ")"
//! ```
//!
//! Comparisons evaluate to 1 or 0. Constants `pi` and `e` are predefined;
//! functions are `abs exp log sqrt sin cos tan min max if`, where
//! `if(c, a, b)` picks `a` when `c ≠ 0`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Min,
    Max,
    If,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "abs" => (Func::Abs, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "if" => (Func::If, 3),
            _ => return None,
        })
    }
}

/// A parsed expression over a fixed list of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    arity: usize,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Sym(&'static str),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {text:?} at {start}")))?;
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Name(src[start..i].to_string())));
            continue;
        }
        let two = if i + 1 < bytes.len() { &src[i..i + 2] } else { "" };
        let sym = match two {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "==" => Some("=="),
            "!=" => Some("!="),
            _ => None,
        };
        if let Some(s) = sym {
            out.push((start, Tok::Sym(s)));
            i += 2;
            continue;
        }
        let s = match c {
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '^' => "^",
            '(' => "(",
            ')' => ")",
            ',' => ",",
            '<' => "<",
            '>' => ">",
            _ => return Err(Error::invalid(format!("unexpected character {c:?} at {start}"))),
        };
        out.push((start, Tok::Sym(s)));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek_sym(&self) -> Option<&'static str> {
        match self.toks.get(self.pos) {
            Some((_, Tok::Sym(s))) => Some(s),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(usize::MAX, |t| t.0)
    }

    fn expect(&mut self, sym: &str) -> Result<()> {
        if self.peek_sym() == Some(sym) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected {sym:?}")))
        }
    }

    fn error(&self, msg: &str) -> Error {
        match self.toks.get(self.pos) {
            Some((at, _)) => Error::invalid(format!("{msg} at {at}")),
            None => Error::invalid(format!("{msg} at end of input")),
        }
    }

    fn cmp(&mut self) -> Result<Node> {
        let lhs = self.sum()?;
        let op = match self.peek_sym() {
            Some("<") => Op::Lt,
            Some("<=") => Op::Le,
            Some(">") => Op::Gt,
            Some(">=") => Op::Ge,
            Some("==") => Op::Eq,
            Some("!=") => Op::Ne,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.sum()?;
        Ok(Node::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.prod()?;
        loop {
            let op = match self.peek_sym() {
                Some("+") => Op::Add,
                Some("-") => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.prod()?));
        }
    }

    fn prod(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_sym() {
                Some("*") => Op::Mul,
                Some("/") => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_sym() == Some("-") {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.pow()
    }

    fn pow(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_sym() == Some("^") {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let at = self.offset();
        match self.toks.get(self.pos).cloned() {
            Some((_, Tok::Num(v))) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some((_, Tok::Sym("("))) => {
                self.pos += 1;
                let inner = self.cmp()?;
                self.expect(")")?;
                Ok(inner)
            }
            Some((_, Tok::Name(name))) => {
                self.pos += 1;
                if self.peek_sym() == Some("(") {
                    let (func, arity) =
                        Func::lookup(&name).ok_or_else(|| Error::invalid(format!("unknown function {name:?} at {at}")))?;
                    self.pos += 1;
                    let mut args = vec![self.cmp()?];
                    while self.peek_sym() == Some(",") {
                        self.pos += 1;
                        args.push(self.cmp()?);
                    }
                    self.expect(")")?;
                    if args.len() != arity {
                        return Err(Error::invalid(format!(
                            "{name} takes {arity} argument(s), got {} at {at}",
                            args.len()
                        )));
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(Error::invalid(format!(
                        "unknown variable {name:?} at {at} (allowed: {})",
                        self.vars.join(", ")
                    ))),
                }
            }
            _ => Err(self.error("expected a value")),
        }
    }
}

impl Expr {
    /// Parse `src` with variables named in `vars`, bound by position in
    /// [`Expr::eval`].
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0, vars };
        let root = p.cmp()?;
        if p.pos != p.toks.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: src.to_string(),
            root,
            arity: vars.len(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.arity);
        eval(&self.root, values)
    }
}

fn eval(node: &Node, v: &[f64]) -> f64 {
    let b = |c: bool| if c { 1.0 } else { 0.0 };
    match node {
        Node::Num(x) => *x,
        Node::Var(i) => v[*i],
        Node::Neg(a) => -eval(a, v),
        Node::Bin(op, l, r) => {
            let (a, c) = (eval(l, v), eval(r, v));
            match op {
                Op::Add => a + c,
                Op::Sub => a - c,
                Op::Mul => a * c,
                Op::Div => a / c,
                Op::Pow => a.powf(c),
                Op::Lt => b(a < c),
                Op::Le => b(a <= c),
                Op::Gt => b(a > c),
                Op::Ge => b(a >= c),
                Op::Eq => b(a == c),
                Op::Ne => b(a != c),
            }
        }
        Node::Call(f, args) => {
            if *f == Func::If {
                return if eval(&args[0], v) != 0.0 {
                    eval(&args[1], v)
                } else {
                    eval(&args[2], v)
                };
            }
            let a = eval(&args[0], v);
            match f {
                Func::Abs => a.abs(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Min => a.min(eval(&args[1], v)),
                Func::Max => a.max(eval(&args[1], v)),
                Func::If => unreachable!(),
            }
        }
    }
}
