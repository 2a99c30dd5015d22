//! Parser for kernel configuration expressions such as
//! `sum(rbf(ard=true), white())` or `matern32(dims=0:2)`.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Rbf,
    Matern32,
    Linear,
    White,
    Constant,
}

impl LeafKind {
    pub fn name(&self) -> &'static str {
        match self {
            LeafKind::Rbf => "rbf",
            LeafKind::Matern32 => "matern32",
            LeafKind::Linear => "linear",
            LeafKind::White => "white",
            LeafKind::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelExpr {
    Leaf {
        kind: LeafKind,
        ard: bool,
        active_dims: Option<Vec<usize>>,
    },
    Sum(Vec<KernelExpr>),
    Product(Vec<KernelExpr>),
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelExpr::Leaf {
                kind,
                ard,
                active_dims,
            } => {
                write!(f, "{}(", kind.name())?;
                let mut first = true;
                if *ard {
                    write!(f, "ard=true")?;
                    first = false;
                }
                if let Some(dims) = active_dims {
                    if !first {
                        write!(f, ",")?;
                    }
                    let joined = dims
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join(":");
                    write!(f, "dims={joined}")?;
                }
                write!(f, ")")
            }
            KernelExpr::Sum(cs) | KernelExpr::Product(cs) => {
                let name = if matches!(self, KernelExpr::Sum(_)) {
                    "sum"
                } else {
                    "product"
                };
                write!(f, "{name}(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

pub fn parse_kernel(text: &str) -> Result<KernelExpr> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Parse(format!(
            "unexpected trailing input at byte {} in kernel expression {text:?}",
            p.pos
        )));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse(format!(
                "expected identifier at byte {start} in kernel expression"
            )));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "expected {:?} at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<KernelExpr> {
        let name = self.ident()?;
        match name.as_str() {
            "sum" | "product" => {
                self.expect(b'(')?;
                let mut children = Vec::new();
                if !self.eat(b')') {
                    loop {
                        children.push(self.expr()?);
                        if self.eat(b')') {
                            break;
                        }
                        self.expect(b',')?;
                    }
                }
                if children.len() < 2 {
                    return Err(Error::Parse(format!(
                        "{name} kernel needs at least 2 children"
                    )));
                }
                Ok(if name == "sum" {
                    KernelExpr::Sum(children)
                } else {
                    KernelExpr::Product(children)
                })
            }
            _ => {
                let kind = match name.as_str() {
                    "rbf" => LeafKind::Rbf,
                    "matern32" => LeafKind::Matern32,
                    "linear" => LeafKind::Linear,
                    "white" => LeafKind::White,
                    "constant" => LeafKind::Constant,
                    other => {
                        return Err(Error::Parse(format!("unknown kernel {other:?}")));
                    }
                };
                let mut ard = false;
                let mut active_dims = None;
                if self.eat(b'(') && !self.eat(b')') {
                    loop {
                        let key = self.ident()?;
                        self.expect(b'=')?;
                        let val = self.flag_value()?;
                        match key.as_str() {
                            "ard" => {
                                ard = match val.as_str() {
                                    "true" => true,
                                    "false" => false,
                                    other => {
                                        return Err(Error::Parse(format!(
                                            "ard must be true or false, got {other:?}"
                                        )))
                                    }
                                }
                            }
                            "dims" => {
                                let dims: Result<Vec<usize>> = val
                                    .split(':')
                                    .map(|s| {
                                        s.parse::<usize>().map_err(|_| {
                                            Error::Parse(format!("bad dim index {s:?}"))
                                        })
                                    })
                                    .collect();
                                active_dims = Some(dims?);
                            }
                            other => {
                                return Err(Error::Parse(format!(
                                    "unknown kernel flag {other:?}"
                                )))
                            }
                        }
                        if self.eat(b')') {
                            break;
                        }
                        self.expect(b',')?;
                    }
                }
                Ok(KernelExpr::Leaf {
                    kind,
                    ard,
                    active_dims,
                })
            }
        }
    }

    fn flag_value(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b':' || c == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse(format!("expected value at byte {start}")));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_leaves_and_composites() {
        assert_eq!(
            parse_kernel("rbf").unwrap(),
            KernelExpr::Leaf {
                kind: LeafKind::Rbf,
                ard: false,
                active_dims: None
            }
        );
        let k = parse_kernel("sum( rbf(ard=true), white() )").unwrap();
        match &k {
            KernelExpr::Sum(cs) => {
                assert_eq!(cs.len(), 2);
                assert!(matches!(
                    cs[0],
                    KernelExpr::Leaf {
                        kind: LeafKind::Rbf,
                        ard: true,
                        ..
                    }
                ));
            }
            other => panic!("unexpected {other:?}"),
        }
        let nested = parse_kernel("product(constant(), sum(matern32(dims=0:2), linear()))");
        assert!(nested.is_ok());
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "rbf()",
            "rbf(ard=true)",
            "matern32(dims=0:2:5)",
            "sum(rbf(),white())",
            "product(constant(),sum(rbf(ard=true,dims=1:3),linear()))",
        ] {
            let parsed = parse_kernel(text).unwrap();
            let printed = parsed.to_string();
            assert_eq!(parse_kernel(&printed).unwrap(), parsed, "{text}");
            assert_eq!(printed, text);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_kernel("rbf(").is_err());
        assert!(parse_kernel("nope()").is_err());
        assert!(parse_kernel("sum(rbf())").is_err());
        assert!(parse_kernel("rbf() trailing").is_err());
        assert!(parse_kernel("rbf(ard=banana)").is_err());
    }
}
