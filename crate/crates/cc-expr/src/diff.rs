use crate::ast::{BinOp, Expr, Func};

pub(crate) fn derivative(e: &Expr, var: &str) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if &**v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => Expr::neg(derivative(a, var)),
        Expr::Bin(op, a, b) => {
            let (da, db) = (derivative(a, var), derivative(b, var));
            match op {
                BinOp::Add => Expr::add(da, db),
                BinOp::Sub => Expr::sub(da, db),
                BinOp::Mul => Expr::add(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                ),
                BinOp::Div => {
                    // (a'b - ab') / b^2
                    let num = Expr::sub(
                        Expr::mul(da, (**b).clone()),
                        Expr::mul((**a).clone(), db),
                    );
                    Expr::div(num, Expr::powi((**b).clone(), 2))
                }
            }
        }
        Expr::Pow(a, n) => {
            let da = derivative(a, var);
            if *n == 0 || da.is_zero() {
                return Expr::Const(0.0);
            }
            Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::powi((**a).clone(), n - 1)),
                da,
            )
        }
        Expr::Call(f, a) => {
            let da = derivative(a, var);
            if da.is_zero() {
                return Expr::Const(0.0);
            }
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, (**a).clone()),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, (**a).clone())),
                Func::Exp => e.clone(),
            };
            Expr::mul(outer, da)
        }
    }
}
