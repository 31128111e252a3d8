//! Small arithmetic expression language used for vector-field coefficients.
//!
//! Grammar: `+ - * / ^`, unary minus, `sin`, `cos`, `exp`, parentheses,
//! named variables and decimal literals. Exponents must fold to an integer
//! constant at parse time, which keeps differentiation closed over the
//! language.

mod ast;
mod compile;
mod diff;
mod parse;

pub use ast::{BinOp, Expr, Func};
pub use compile::Program;
pub use parse::parse;

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbalanced parentheses at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("exponent at byte {offset} is not an integer constant")]
    NonIntegerExponent { offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("non-finite result ({0})")]
    NonFinite(f64),
}

/// Evaluates `e` with variables looked up in `point`.
pub fn evaluate(e: &Expr, point: &HashMap<String, f64>) -> Result<f64, ExprError> {
    let v = e.eval_with(&|name| point.get(name).copied())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite(v))
    }
}

/// Exact partial derivative of `e` with respect to `var`.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    diff::derivative(e, var)
}
