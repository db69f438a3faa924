use super::{Expr, Func, Node, ParseError, ParseErrorKind, Span};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn error(kind: ParseErrorKind, span: Span, message: impl Into<String>) -> ParseError {
    ParseError {
        kind,
        column: span.column(),
        message: message.into(),
    }
}

fn lex(source: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // exponent only when a digit follows, so `2e` stays a syntax error
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
                let span = Span::new(start, i);
                let value: f64 = text
                    .parse()
                    .map_err(|_| error(ParseErrorKind::Syntax, span, format!("malformed number `{text}`")))?;
                out.push(Token {
                    tok: Tok::Num(value),
                    span,
                });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    span: Span::new(start, i),
                });
                continue;
            }
            other => {
                return Err(error(
                    ParseErrorKind::Syntax,
                    Span::new(start, start + 1),
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        i += 1;
        out.push(Token {
            tok,
            span: Span::new(start, i),
        });
    }
    out.push(Token {
        tok: Tok::End,
        span: Span::new(chars.len(), chars.len()),
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(error(
                ParseErrorKind::Syntax,
                t.span,
                format!("expected {what}, found {}", describe(&t.tok)),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => Expr::add as fn(Expr, Expr) -> Expr,
                Tok::Minus => Expr::sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.term()?;
            lhs = op(lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.power()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => Expr::mul as fn(Expr, Expr) -> Expr,
                Tok::Slash => Expr::div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.power()?;
            lhs = op(lhs, rhs);
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if self.peek().tok == Tok::Caret {
            self.next();
            let exponent = self.power()?;
            return Ok(Expr::pow(base, exponent));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                let start = self.next().span;
                let inner = self.unary()?;
                let mut e = Expr::neg(inner);
                e.span = start.join(e.span);
                Ok(e)
            }
            Tok::Plus => {
                self.next();
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(Expr::new(Node::Const(v), t.span)),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "`)`")?;
                let mut e = inner;
                e.span = t.span.join(close.span);
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, t.span),
            other => Err(error(
                ParseErrorKind::Syntax,
                t.span,
                format!("expected an operand, found {}", describe(&other)),
            )),
        }
    }

    fn identifier(&mut self, name: String, span: Span) -> Result<Expr, ParseError> {
        if let Some(func) = Func::from_name(&name) {
            self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
            let mut args = vec![self.expr()?];
            while self.peek().tok == Tok::Comma {
                self.next();
                args.push(self.expr()?);
            }
            let close = self.expect(Tok::RParen, "`)` or `,`")?;
            let span = span.join(close.span);
            if args.len() != func.arity() {
                return Err(error(
                    ParseErrorKind::Arity,
                    span,
                    format!("`{name}` takes {} argument(s), got {}", func.arity(), args.len()),
                ));
            }
            let mut e = Expr::call(func, args);
            e.span = span;
            return Ok(e);
        }
        match name.as_str() {
            "pi" => return Ok(Expr::new(Node::Const(std::f64::consts::PI), span)),
            "e" => return Ok(Expr::new(Node::Const(std::f64::consts::E), span)),
            _ => {}
        }
        let index = match name.as_str() {
            "x" | "y" | "z" if self.dim <= 3 => Some(match name.as_str() {
                "x" => 1,
                "y" => 2,
                _ => 3,
            }),
            _ => name
                .strip_prefix('x')
                .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
                .map(|d| d.parse::<usize>().unwrap_or(usize::MAX)),
        };
        match index {
            Some(k) if k >= 1 && k <= self.dim => Ok(Expr::new(Node::Var(k - 1), span)),
            Some(_) => Err(error(
                ParseErrorKind::VariableOutOfRange,
                span,
                format!("variable `{name}` out of range for dimension {}", self.dim),
            )),
            None => Err(error(
                ParseErrorKind::UnknownIdentifier,
                span,
                format!("unknown identifier `{name}`"),
            )),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::End => "end of input".into(),
    }
}

pub(super) fn parse(source: &str, dim: usize) -> Result<Expr, ParseError> {
    if source.trim().is_empty() {
        return Err(error(ParseErrorKind::Empty, Span::new(0, 0), "empty expression"));
    }
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0, dim };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return Err(error(
            ParseErrorKind::Syntax,
            t.span,
            format!("unexpected {}", describe(&t.tok)),
        ));
    }
    Ok(e)
}
