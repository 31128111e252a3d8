use crate::ast::{BinOp, Expr, Func};
use crate::ExprError;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Call(Func),
}

/// Stack program for fast repeated evaluation at positional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    max_stack: usize,
}

const INLINE_STACK: usize = 32;

impl Program {
    /// Compiles `e`, resolving variables against the positional `coords`.
    pub fn compile(e: &Expr, coords: &[String]) -> Result<Program, ExprError> {
        let mut ops = Vec::new();
        emit(e, coords, &mut ops)?;
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                _ => {}
            }
            max_stack = max_stack.max(depth);
        }
        Ok(Program { ops, max_stack })
    }

    /// True when the program is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(c)] if *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if let [Op::Const(c)] = self.ops.as_slice() {
            return *c;
        }
        if self.max_stack <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, x, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.max_stack];
            run(&self.ops, x, &mut stack)
        }
    }
}

fn run(ops: &[Op], x: &[f64], stack: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(c) => {
                stack[sp] = c;
                sp += 1;
            }
            Op::Var(i) => {
                stack[sp] = x[i];
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::Powi(n) => stack[sp - 1] = stack[sp - 1].powi(n),
            Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                sp -= 1;
                let (a, b) = (stack[sp - 1], stack[sp]);
                stack[sp - 1] = match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    _ => a / b,
                };
            }
        }
    }
    stack[0]
}

fn emit(e: &Expr, coords: &[String], ops: &mut Vec<Op>) -> Result<(), ExprError> {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(v) => {
            let i = coords
                .iter()
                .position(|c| c.as_str() == &**v)
                .ok_or_else(|| ExprError::Unbound(v.to_string()))?;
            ops.push(Op::Var(i));
        }
        Expr::Neg(a) => {
            emit(a, coords, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Pow(a, n) => {
            emit(a, coords, ops)?;
            ops.push(Op::Powi(*n));
        }
        Expr::Call(f, a) => {
            emit(a, coords, ops)?;
            ops.push(Op::Call(*f));
        }
        Expr::Bin(op, a, b) => {
            emit(a, coords, ops)?;
            emit(b, coords, ops)?;
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
        }
    }
    Ok(())
}
