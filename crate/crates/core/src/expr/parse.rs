use super::{BinOp, ExprError, Func, Node, RESERVED};

const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Number(&'a str),
    Ident(&'a str),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    End,
}

fn describe(tok: &Tok<'_>) -> String {
    match tok {
        Tok::Number(s) => format!("number `{s}`"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::End => "end of input".into(),
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok<'_>, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                if text == "." || text.starts_with("..") {
                    return Err(syntax(start, "malformed number"));
                }
                out.push((Tok::Number(text), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(&src[start..i]), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        i += 1;
        out.push((tok, start));
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a, 'n> {
    toks: Vec<(Tok<'a>, usize)>,
    pos: usize,
    depth: usize,
    dimension: usize,
    allowed: &'n [&'n str],
    used: Vec<String>,
}

impl<'a> Parser<'a, '_> {
    fn peek(&self) -> &Tok<'a> {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok<'a>, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok<'static>) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!(
                    "expected {}, found {}",
                    describe(&want),
                    describe(self.peek())
                ),
            ))
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(syntax(self.offset(), "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if *self.peek() == Tok::Minus {
            self.enter()?;
            self.bump();
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let k = self.exponent()?;
            return Ok(Node::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    /// `-`? integer (`^` exponent)?; towers fold right to left.
    fn exponent(&mut self) -> Result<i32, ExprError> {
        self.enter()?;
        let start = self.offset();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let (tok, at) = self.bump();
        let magnitude = match tok {
            Tok::Number(text) if text.bytes().all(|b| b.is_ascii_digit()) => text
                .parse::<i32>()
                .map_err(|_| syntax(at, "exponent too large"))?,
            other => {
                return Err(syntax(
                    at,
                    format!(
                        "exponent must be an integer literal, found {}",
                        describe(&other)
                    ),
                ))
            }
        };
        let mut k = if negative { -magnitude } else { magnitude };
        if *self.peek() == Tok::Caret {
            self.bump();
            let outer = self.exponent()?;
            k = u32::try_from(outer)
                .ok()
                .and_then(|e| k.checked_pow(e))
                .ok_or_else(|| syntax(start, "exponent tower is not a representable integer"))?;
        }
        self.depth -= 1;
        Ok(k)
    }

    fn index(&mut self) -> Result<(usize, usize), ExprError> {
        self.expect(Tok::LBracket)?;
        let (tok, at) = self.bump();
        let index = match tok {
            Tok::Number(text) if text.bytes().all(|b| b.is_ascii_digit()) => text
                .parse::<usize>()
                .map_err(|_| syntax(at, "index too large"))?,
            other => {
                return Err(syntax(
                    at,
                    format!("expected an integer index, found {}", describe(&other)),
                ))
            }
        };
        self.expect(Tok::RBracket)?;
        Ok((index, at))
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Number(text) => text
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Node::Literal)
                .ok_or_else(|| syntax(at, format!("invalid number `{text}`"))),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name @ ("q" | "v")) => {
                let (index, _) = self.index()?;
                if index >= self.dimension {
                    return Err(ExprError::IndexOutOfRange {
                        index,
                        dimension: self.dimension,
                        offset: at,
                    });
                }
                Ok(if name == "q" {
                    Node::Q(index)
                } else {
                    Node::V(index)
                })
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    self.enter()?;
                    self.expect(Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    self.depth -= 1;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if RESERVED.contains(&name) || !self.allowed.contains(&name) {
                    return Err(ExprError::UnknownIdentifier {
                        name: name.to_string(),
                        offset: at,
                    });
                }
                let slot = match self.used.iter().position(|p| p == name) {
                    Some(k) => k,
                    None => {
                        self.used.push(name.to_string());
                        self.used.len() - 1
                    }
                };
                Ok(Node::Param(slot))
            }
            other => Err(syntax(at, format!("unexpected {}", describe(&other)))),
        }
    }
}

pub(super) fn parse(
    src: &str,
    dimension: usize,
    allowed: &[&str],
) -> Result<(Node, Vec<String>), ExprError> {
    let toks = lex(src)?;
    if toks.len() == 1 {
        return Err(syntax(0, "empty expression"));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        depth: 0,
        dimension,
        allowed,
        used: Vec::new(),
    };
    let root = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(
            p.offset(),
            format!("unexpected {} after expression", describe(p.peek())),
        ));
    }
    Ok((root, p.used))
}
