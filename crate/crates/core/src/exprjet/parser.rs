use std::fmt;

use super::ast::{Expr, Func, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum ParseErrorKind {
    Syntax { expected: Vec<&'static str>, found: String },
    UnknownIdentifier(String),
    Arity { func: &'static str, found: usize },
    InvalidNumber(String),
    VariableOutOfRange { var: String, limit: usize },
    FiberVariableNotAllowed(String),
}

/// Positioned diagnostic. Line and column are one-based; the column counts
/// characters, and end of input sits one past the last character.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: ", self.line, self.column)?;
        match &self.kind {
            ParseErrorKind::Syntax { expected, found } => {
                write!(f, "found {found}, expected one of: {}", expected.join(", "))
            }
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier `{s}`"),
            ParseErrorKind::Arity { func, found } => {
                write!(f, "`{func}` takes 1 argument, found {found}")
            }
            ParseErrorKind::InvalidNumber(s) => write!(f, "invalid number `{s}`"),
            ParseErrorKind::VariableOutOfRange { var, limit } => {
                write!(f, "variable `{var}` out of range (dimension {limit})")
            }
            ParseErrorKind::FiberVariableNotAllowed(s) => {
                write!(f, "fiber variable `{s}` not allowed here")
            }
        }
    }
}

impl std::error::Error for ParseError {}

/// Dimension limits applied while parsing.
#[derive(Clone, Copy, Debug)]
pub struct Scope {
    pub n: usize,
    pub k: usize,
    pub fiber: bool,
}

impl Scope {
    pub fn base(n: usize) -> Scope {
        Scope { n, k: 0, fiber: false }
    }

    pub fn full(n: usize, k: usize) -> Scope {
        Scope { n, k, fiber: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(_, s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start_col = col;
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, line, column: start_col });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let begin = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[begin..i].iter().collect();
            col += i - begin;
            let value = match text.parse::<f64>() {
                Ok(v) if v.is_finite() && text != "." => v,
                _ => {
                    return Err(ParseError {
                        line,
                        column: start_col,
                        kind: ParseErrorKind::InvalidNumber(text),
                    })
                }
            };
            out.push(Spanned { tok: Tok::Num(value, text), line, column: start_col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let begin = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[begin..i].iter().collect();
            col += i - begin;
            out.push(Spanned { tok: Tok::Ident(text), line, column: start_col });
            continue;
        }
        return Err(ParseError {
            line,
            column: start_col,
            kind: ParseErrorKind::Syntax {
                expected: vec!["number", "identifier", "operator", "`(`", "`)`"],
                found: format!("character `{c}`"),
            },
        });
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

const ATOM_START: [&str; 4] = ["number", "variable", "function", "`(`"];
const UNARY_START: [&str; 5] = ["`-`", "number", "variable", "function", "`(`"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    scope: Option<Scope>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail(&self, at: &Spanned, kind: ParseErrorKind) -> ParseError {
        ParseError { line: at.line, column: at.column, kind }
    }

    fn unexpected(&self, expected: &[&'static str]) -> ParseError {
        let at = self.peek();
        self.fail(
            at,
            ParseErrorKind::Syntax { expected: expected.to_vec(), found: at.tok.describe() },
        )
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.factor()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.peek().clone();
        match &at.tok {
            Tok::Num(_, text) if text.chars().all(|c| c.is_ascii_digit()) => {
                let n: u32 = text
                    .parse()
                    .map_err(|_| self.fail(&at, ParseErrorKind::InvalidNumber(text.clone())))?;
                self.bump();
                Ok(Expr::pow(base, n))
            }
            _ => Err(self.unexpected(&["integer exponent"])),
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            if self.peek().tok == Tok::Minus {
                return Err(self.unexpected(&ATOM_START));
            }
            return Ok(Expr::neg(self.atom(&ATOM_START)?));
        }
        self.atom(&UNARY_START)
    }

    fn atom(&mut self, expected: &[&'static str]) -> Result<Expr, ParseError> {
        let at = self.peek().clone();
        match &at.tok {
            Tok::Num(v, _) => {
                self.bump();
                Ok(Expr::Num(*v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(func) = Func::from_name(name) {
                    return self.call(func);
                }
                let var = self.variable(&at, name)?;
                Ok(Expr::Var(var))
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn close_paren(&mut self) -> Result<(), ParseError> {
        if self.peek().tok == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&["`+`", "`-`", "`*`", "`/`", "`^`", "`)`"]))
        }
    }

    fn call(&mut self, func: Func) -> Result<Expr, ParseError> {
        if self.peek().tok != Tok::LParen {
            return Err(self.unexpected(&["`(`"]));
        }
        let open = self.bump();
        if self.peek().tok == Tok::RParen {
            return Err(self.fail(&open, ParseErrorKind::Arity { func: func.name(), found: 0 }));
        }
        let arg = self.expr()?;
        if self.peek().tok == Tok::Comma {
            let mut found = 1;
            while self.peek().tok == Tok::Comma {
                self.bump();
                self.expr()?;
                found += 1;
            }
            return Err(self.fail(&open, ParseErrorKind::Arity { func: func.name(), found }));
        }
        self.close_paren()?;
        Ok(Expr::call(func, arg))
    }

    fn variable(&self, at: &Spanned, name: &str) -> Result<Var, ParseError> {
        let mut chars = name.chars();
        let head = chars.next();
        let digits: String = chars.collect();
        let is_var = matches!(head, Some('x') | Some('y'))
            && !digits.is_empty()
            && digits.chars().all(|c| c.is_ascii_digit());
        if !is_var {
            return Err(self.fail(at, ParseErrorKind::UnknownIdentifier(name.to_string())));
        }
        let index: usize = digits
            .parse()
            .map_err(|_| self.fail(at, ParseErrorKind::UnknownIdentifier(name.to_string())))?;
        let out_of_range = |limit| {
            self.fail(at, ParseErrorKind::VariableOutOfRange { var: name.to_string(), limit })
        };
        let fiber = head == Some('y');
        if let Some(scope) = self.scope {
            if fiber && !scope.fiber {
                return Err(
                    self.fail(at, ParseErrorKind::FiberVariableNotAllowed(name.to_string()))
                );
            }
            let limit = if fiber { scope.k } else { scope.n };
            if index == 0 || index > limit {
                return Err(out_of_range(limit));
            }
        } else if index == 0 {
            return Err(out_of_range(0));
        }
        Ok(if fiber { Var::Y(index - 1) } else { Var::X(index - 1) })
    }
}

fn run(source: &str, scope: Option<Scope>) -> Result<Expr, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0, scope };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.unexpected(&["`+`", "`-`", "`*`", "`/`", "`^`", "end of input"]));
    }
    Ok(e)
}

/// Parse without dimension limits (indices must still be at least one).
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    run(source, None)
}

/// Parse and reject variables outside the given dimensions.
pub fn parse_in(source: &str, scope: Scope) -> Result<Expr, ParseError> {
    run(source, Some(scope))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let e = parse("y1^2 + y2^2").unwrap();
        assert_eq!(e, Expr::add(Expr::pow(Expr::y(0), 2), Expr::pow(Expr::y(1), 2)));
    }

    #[test]
    fn randers_shape() {
        let e = parse("sqrt(y1^2+y2^2) + 0.5*y1").unwrap();
        let q = Expr::add(Expr::pow(Expr::y(0), 2), Expr::pow(Expr::y(1), 2));
        let expect =
            Expr::add(Expr::call(Func::Sqrt, q), Expr::mul(Expr::num(0.5), Expr::y(0)));
        assert_eq!(e, expect);
    }

    #[test]
    fn trailing_operator_points_past_end() {
        let err = parse("y1 +").unwrap_err();
        assert_eq!((err.line, err.column), (1, 5));
        match err.kind {
            ParseErrorKind::Syntax { expected, found } => {
                assert!(expected.contains(&"variable"));
                assert_eq!(found, "end of input");
            }
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn unary_minus_binds_inside_power() {
        assert_eq!(parse("-x1^2").unwrap(), Expr::pow(Expr::neg(Expr::x(0)), 2));
        assert_eq!(parse("-(x1^2)").unwrap(), Expr::neg(Expr::pow(Expr::x(0), 2)));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("x1 - x2 - x3 / x1 * 2").unwrap();
        let expect = Expr::sub(
            Expr::sub(Expr::x(0), Expr::x(1)),
            Expr::mul(Expr::div(Expr::x(2), Expr::x(0)), Expr::num(2.0)),
        );
        assert_eq!(e, expect);
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::num(1.5e-3));
        assert_eq!(parse(".25").unwrap(), Expr::num(0.25));
        assert_eq!(parse("2.").unwrap(), Expr::num(2.0));
        assert!(matches!(parse("1e999").unwrap_err().kind, ParseErrorKind::InvalidNumber(_)));
    }

    #[test]
    fn unknown_identifier_and_abs() {
        let err = parse("abs(y1)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("abs".into()));
        assert_eq!(err.column, 1);
        let err = parse("x1 + z2").unwrap_err();
        assert_eq!(err.column, 6);
    }

    #[test]
    fn arity_is_checked() {
        let err = parse("sqrt(x1, x2)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Arity { func: "sqrt", found: 2 });
        let err = parse("exp()").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Arity { func: "exp", found: 0 });
    }

    #[test]
    fn scoped_ranges() {
        let err = parse_in("x3 + y1", Scope::full(2, 2)).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::VariableOutOfRange { limit: 2, .. }));
        let err = parse_in("x1 * y1", Scope::base(2)).unwrap_err();
        assert_eq!(err.column, 6);
        assert!(matches!(err.kind, ParseErrorKind::FiberVariableNotAllowed(_)));
        assert!(parse("x0").is_err());
    }

    #[test]
    fn multiline_positions() {
        let err = parse("x1 +\n  * x2").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
    }

    #[test]
    fn power_needs_plain_integer() {
        assert!(parse("x1^2.5").is_err());
        assert!(parse("x1^-1").is_err());
        assert!(parse("x1^y1").is_err());
    }
}
