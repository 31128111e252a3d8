use std::fmt;
use std::sync::Arc;

use crate::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

/// Immutable expression tree. Cloning is cheap for variable names.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Arc<str>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(Arc::from(name))
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.constant_value() == Some(1.0)
    }

    /// Names of all variables, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.iter().any(|o| o.as_str() == &**v) {
                    out.push(v.to_string());
                }
            }
        });
        out
    }

    fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.walk(f),
            Expr::Bin(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }

    pub(crate) fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => lookup(v).ok_or_else(|| ExprError::Unbound(v.to_string()))?,
            Expr::Neg(a) => -a.eval_with(lookup)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval_with(lookup)?, b.eval_with(lookup)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                }
            }
            Expr::Pow(a, n) => a.eval_with(lookup)?.powi(*n),
            Expr::Call(f, a) => f.apply(a.eval_with(lookup)?),
        })
    }

    // Folding constructors. Only trivial identities are applied.

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.constant_value(), b.constant_value()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.constant_value(), b.constant_value()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.constant_value(), b.constant_value()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 0.0 => Expr::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.constant_value(), b.constant_value()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn powi(a: Expr, n: i32) -> Expr {
        match (a.constant_value(), n) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => a,
            (Some(x), _) if x.powi(n).is_finite() => Expr::Const(x.powi(n)),
            _ => Expr::Pow(Box::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(c) if *c < 0.0 => 3,
        _ => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    /// Prints a form that parses back to an expression with identical values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_operand(f, a, 4)
            }
            Expr::Bin(op, a, b) => {
                let (p, sym) = match op {
                    BinOp::Add => (1, " + "),
                    BinOp::Sub => (1, " - "),
                    BinOp::Mul => (2, "*"),
                    BinOp::Div => (2, "/"),
                };
                write_operand(f, a, p)?;
                write!(f, "{sym}")?;
                write_operand(f, b, p + 1)
            }
            Expr::Pow(a, n) => {
                write_operand(f, a, 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
