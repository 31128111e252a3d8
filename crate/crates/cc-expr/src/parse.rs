use crate::ast::{BinOp, Expr, Func};
use crate::ExprError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(u8),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Tok::Op(c)
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.number(start)?,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ExprError> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ExprError::Syntax { offset: start, message: "malformed number".into() });
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ExprError::Syntax { offset: start, message: "malformed number".into() })
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    at: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ExprError> {
        let (t, at) = self.lex.next()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ (b'+' | b'-')) = self.tok {
            self.bump()?;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ (b'*' | b'/')) = self.tok {
            self.bump()?;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.tok {
            Tok::Op(b'-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op(b'+') => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.tok != Tok::Op(b'^') {
            return Ok(base);
        }
        self.bump()?;
        let at = self.at;
        // right-associative: the exponent may itself contain ^
        let exponent = self.unary()?;
        let value = exponent
            .eval_with(&|_| None)
            .map_err(|_| ExprError::NonIntegerExponent { offset: at })?;
        if value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
            return Err(ExprError::NonIntegerExponent { offset: at });
        }
        Ok(Expr::Pow(Box::new(base), value as i32))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let at = self.at;
        match std::mem::replace(&mut self.tok, Tok::End) {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                self.bump()?;
                if self.tok == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownFunction { name, offset: at })?;
                    let arg = self.parenthesized()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::var(&name))
                }
            }
            Tok::LParen => {
                self.tok = Tok::LParen;
                self.parenthesized()
            }
            Tok::RParen => Err(ExprError::Unbalanced { offset: at }),
            Tok::End => Err(ExprError::Syntax { offset: at, message: "unexpected end of input".into() }),
            Tok::Op(c) => Err(ExprError::Syntax {
                offset: at,
                message: format!("unexpected operator `{}`", c as char),
            }),
        }
    }

    fn parenthesized(&mut self) -> Result<Expr, ExprError> {
        let open = self.at;
        self.depth += 1;
        if self.depth > 200 {
            return Err(ExprError::Syntax { offset: open, message: "nesting too deep".into() });
        }
        self.bump()?;
        let inner = self.expr()?;
        if self.tok != Tok::RParen {
            return Err(ExprError::Unbalanced { offset: open });
        }
        self.depth -= 1;
        self.bump()?;
        Ok(inner)
    }
}

/// Parses `text` into an expression tree.
///
/// ```
/// let e = cc_expr::parse("2^3^2").unwrap();
/// assert_eq!(e.to_string(), "2.0^9");
/// ```
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    if let Some(p) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(ExprError::Syntax { offset: p, message: "non-ASCII input".into() });
    }
    let mut p = Parser { lex: Lexer { src: text.as_bytes(), pos: 0 }, tok: Tok::End, at: 0, depth: 0 };
    p.bump()?;
    let e = p.expr()?;
    match p.tok {
        Tok::End => Ok(e),
        Tok::RParen => Err(ExprError::Unbalanced { offset: p.at }),
        _ => Err(ExprError::Syntax { offset: p.at, message: "trailing input".into() }),
    }
}
