//! Shared tokenizer and literal parser for the three text grammars
//! (interface signatures, sheet rows, study scripts).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::value::{decode_base64, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, serde::Serialize)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at {pos}: {message}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Self { pos, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    TripleStr(String),
    Number(String),
    Bytes(String),
    Punct(char),
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Str(_) => f.write_str("string"),
            Tok::TripleStr(_) => f.write_str("triple-quoted string"),
            Tok::Number(n) => write!(f, "number `{n}`"),
            Tok::Bytes(_) => f.write_str("bytes literal"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub fn is_ident(text: &str) -> bool {
    let mut chars = text.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `^[A-Z][0-9]+$`
pub fn is_cell_ref(text: &str) -> bool {
    let bytes = text.as_bytes();
    bytes.len() >= 2 && bytes[0].is_ascii_uppercase() && bytes[1..].iter().all(u8::is_ascii_digit)
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn pos(&self) -> Pos {
        Pos { line: self.line, column: self.column }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn rest_starts_with(&mut self, pat: &str) -> bool {
        match self.chars.peek() {
            Some(&(i, _)) => self.src[i..].starts_with(pat),
            None => false,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn string(&mut self, quote: char, start: Pos) -> Result<String, SyntaxError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(SyntaxError::new(start, "unterminated string")),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => {
                    let esc_pos = self.pos();
                    match self.bump() {
                        Some('n') => out.push('\n'),
                        Some('t') => out.push('\t'),
                        Some('r') => out.push('\r'),
                        Some('0') => out.push('\0'),
                        Some('/') => out.push('/'),
                        Some('b') => out.push('\u{8}'),
                        Some('f') => out.push('\u{c}'),
                        Some('u') => {
                            let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                            let c = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| SyntaxError::new(esc_pos, "invalid \\u escape"))?;
                            out.push(c);
                        }
                        Some(c @ ('\\' | '"' | '\'')) => out.push(c),
                        _ => return Err(SyntaxError::new(esc_pos, "invalid escape sequence")),
                    }
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn triple_string(&mut self, start: Pos) -> Result<String, SyntaxError> {
        let mut out = String::new();
        loop {
            if self.rest_starts_with("\"\"\"") {
                for _ in 0..3 {
                    self.bump();
                }
                return Ok(out);
            }
            match self.bump() {
                Some(c) => out.push(c),
                None => return Err(SyntaxError::new(start, "unterminated triple-quoted string")),
            }
        }
    }

    fn number(&mut self, first: char) -> String {
        let mut out = String::from(first);
        let mut prev = first;
        while let Some(c) = self.peek() {
            let sign_after_exp = matches!(c, '+' | '-') && matches!(prev, 'e' | 'E');
            if c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E') || sign_after_exp {
                out.push(c);
                prev = c;
                self.bump();
            } else {
                break;
            }
        }
        out
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut lx = Lexer { chars: src.char_indices().peekable(), src, line: 1, column: 1 };
    let mut out = Vec::new();
    while let Some(c) = lx.peek() {
        let pos = lx.pos();
        if c.is_whitespace() {
            lx.bump();
            continue;
        }
        if c == '#' {
            while let Some(c) = lx.peek() {
                if c == '\n' {
                    break;
                }
                lx.bump();
            }
            continue;
        }
        let tok = if lx.rest_starts_with("\"\"\"") {
            for _ in 0..3 {
                lx.bump();
            }
            Tok::TripleStr(lx.triple_string(pos)?)
        } else if c == '"' || c == '\'' {
            lx.bump();
            Tok::Str(lx.string(c, pos)?)
        } else if lx.rest_starts_with("b\"") {
            lx.bump();
            lx.bump();
            Tok::Bytes(lx.string('"', pos)?)
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(c) = lx.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(c);
                    lx.bump();
                } else {
                    break;
                }
            }
            Tok::Ident(ident)
        } else if lx.rest_starts_with("->") {
            lx.bump();
            lx.bump();
            Tok::Arrow
        } else if c.is_ascii_digit() || c == '-' {
            lx.bump();
            Tok::Number(lx.number(c))
        } else if "{}()[],=:?.<>".contains(c) {
            lx.bump();
            Tok::Punct(c)
        } else {
            return Err(SyntaxError::new(pos, format!("unexpected character `{c}`")));
        };
        out.push(Token { tok, pos });
    }
    out.push(Token { tok: Tok::Eof, pos: lx.pos() });
    Ok(out)
}

/// Recursive-descent cursor over a token vector.
pub struct Cursor {
    toks: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Self { toks: tokenize(src)?, at: 0 })
    }

    pub fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    pub fn peek_nth(&self, n: usize) -> &Token {
        &self.toks[(self.at + n).min(self.toks.len() - 1)]
    }

    pub fn pos(&self) -> Pos {
        self.peek().pos
    }

    pub fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    pub fn is_punct(&self, c: char) -> bool {
        self.peek().tok == Tok::Punct(c)
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    pub fn eat_punct(&mut self, c: char) -> bool {
        if self.is_punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.pos(), message)
    }

    pub fn unexpected(&self, wanted: &str) -> SyntaxError {
        self.error(format!("expected {wanted}, found {}", self.peek().tok))
    }

    pub fn expect_punct(&mut self, c: char) -> Result<(), SyntaxError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{c}`")))
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    pub fn expect_ident(&mut self) -> Result<String, SyntaxError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    pub fn expect_string(&mut self) -> Result<String, SyntaxError> {
        match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("string")),
        }
    }

    pub fn expect_triple_string(&mut self) -> Result<String, SyntaxError> {
        match &self.peek().tok {
            Tok::TripleStr(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("triple-quoted string")),
        }
    }

    /// True when the next token starts a literal value.
    pub fn at_value(&self) -> bool {
        match &self.peek().tok {
            Tok::Str(_) | Tok::Number(_) | Tok::Bytes(_) | Tok::Punct('[') | Tok::Punct('{') => true,
            Tok::Ident(s) => matches!(s.as_str(), "null" | "true" | "false"),
            _ => false,
        }
    }

    /// JSON-style literal, plus `b"<base64>"` for bytes.
    pub fn value(&mut self) -> Result<Value, SyntaxError> {
        let Token { tok, pos } = self.peek().clone();
        let v = match tok {
            Tok::Ident(s) if s == "null" => Value::Null,
            Tok::Ident(s) if s == "true" => Value::Bool(true),
            Tok::Ident(s) if s == "false" => Value::Bool(false),
            Tok::Str(s) => Value::Str(s),
            Tok::Number(n) => parse_number(&n).ok_or_else(|| SyntaxError::new(pos, format!("invalid number `{n}`")))?,
            Tok::Bytes(b) => Value::Bytes(decode_base64(&b).map_err(|e| SyntaxError::new(pos, e.to_string()))?),
            Tok::Punct('[') => {
                self.bump();
                let mut items = Vec::new();
                if !self.eat_punct(']') {
                    loop {
                        items.push(self.value()?);
                        if self.eat_punct(']') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                return Ok(Value::List(items));
            }
            Tok::Punct('{') => {
                self.bump();
                let mut map = BTreeMap::new();
                if !self.eat_punct('}') {
                    loop {
                        let key_pos = self.pos();
                        let key = match self.bump().tok {
                            Tok::Str(s) | Tok::Ident(s) => s,
                            _ => return Err(SyntaxError::new(key_pos, "expected map key")),
                        };
                        self.expect_punct(':')?;
                        let v = self.value()?;
                        if map.insert(key.clone(), v).is_some() {
                            return Err(SyntaxError::new(key_pos, format!("duplicate map key `{key}`")));
                        }
                        if self.eat_punct('}') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                return Ok(Value::Map(map));
            }
            _ => return Err(self.unexpected("value")),
        };
        self.bump();
        Ok(v)
    }
}

pub fn parse_number(text: &str) -> Option<Value> {
    if text.contains(['.', 'e', 'E']) {
        text.parse::<f64>().ok().map(Value::Float)
    } else {
        text.parse::<i64>().ok().map(Value::Int)
    }
}

/// Parse a standalone literal (used for `--set key=value` overrides).
pub fn parse_value(text: &str) -> Result<Value, SyntaxError> {
    let mut cur = Cursor::new(text)?;
    let v = cur.value()?;
    if !cur.at_eof() {
        return Err(cur.unexpected("end of input"));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_carry_positions() {
        let toks = tokenize("X {\n  f()->int\n}").unwrap();
        assert_eq!(toks[2].tok, Tok::Ident("f".into()));
        assert_eq!(toks[2].pos, Pos { line: 2, column: 3 });
        assert!(toks.iter().any(|t| t.tok == Tok::Arrow));
    }

    #[test]
    fn comments_and_triple_strings() {
        let toks = tokenize("# c\nlql \"\"\"A { f()->int } # not a comment\"\"\"").unwrap();
        assert_eq!(toks[1].tok, Tok::TripleStr("A { f()->int } # not a comment".into()));
    }

    #[test]
    fn values() {
        assert_eq!(parse_value("b\"SGk=\"").unwrap(), Value::bytes("Hi"));
        assert_eq!(parse_value("-3").unwrap(), Value::Int(-3));
        assert_eq!(parse_value("2.5e-1").unwrap(), Value::Float(0.25));
        assert_eq!(
            parse_value("[1, \"a\", {\"k\": null}]").unwrap(),
            Value::List(vec![
                Value::Int(1),
                Value::Str("a".into()),
                Value::Map([("k".to_string(), Value::Null)].into()),
            ])
        );
        assert!(parse_value("b\"@@\"").is_err());
        assert!(parse_value("1 2").is_err());
    }

    #[test]
    fn unterminated_string_reports_start() {
        let err = tokenize("x = \"abc").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, column: 5 });
    }

    #[test]
    fn cell_refs() {
        assert!(is_cell_ref("A1"));
        assert!(is_cell_ref("B12"));
        assert!(!is_cell_ref("A"));
        assert!(!is_cell_ref("a1"));
        assert!(!is_cell_ref("AB1"));
    }
}
