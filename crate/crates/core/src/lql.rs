//! Interface signatures: a named unit with typed operations.
//!
//! ```text
//! interface := NAME '{' method+ '}'
//! method    := NAME '(' [type (',' type)*] ')' '->' type
//! type      := IDENT ('.' IDENT)* ('[]')*
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syntax::{is_ident, Cursor, Pos, SyntaxError, Tok};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeName(String);

impl TypeName {
    pub fn new(text: impl Into<String>) -> Result<Self, LqlError> {
        let text = text.into();
        if Self::is_valid(&text) {
            Ok(Self(text))
        } else {
            Err(LqlError::InvalidTypeName(text))
        }
    }

    fn is_valid(text: &str) -> bool {
        let base = text.trim_end_matches("[]");
        base.split('.').all(is_ident)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_void(&self) -> bool {
        self.0 == "void"
    }
}

impl fmt::Display for TypeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationSig {
    pub name: String,
    pub inputs: Vec<TypeName>,
    pub output: TypeName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceSignature {
    pub name: String,
    pub operations: Vec<OperationSig>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LqlError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("interface `{0}` declares no operations")]
    EmptyInterface(String),
    #[error("operation `{name}` with {arity} input(s) is declared twice")]
    DuplicateOperation { name: String, arity: usize },
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("invalid type name `{0}`")]
    InvalidTypeName(String),
}

impl InterfaceSignature {
    pub fn new(name: impl Into<String>, operations: Vec<OperationSig>) -> Result<Self, LqlError> {
        let name = name.into();
        if !is_ident(&name) {
            return Err(LqlError::InvalidName(name));
        }
        if operations.is_empty() {
            return Err(LqlError::EmptyInterface(name));
        }
        let mut seen = HashSet::new();
        for op in &operations {
            if !is_ident(&op.name) {
                return Err(LqlError::InvalidName(op.name.clone()));
            }
            if !seen.insert((op.name.as_str(), op.inputs.len())) {
                return Err(LqlError::DuplicateOperation { name: op.name.clone(), arity: op.inputs.len() });
            }
        }
        Ok(Self { name, operations })
    }

    /// All declared overloads of `name`.
    pub fn operations_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a OperationSig> + 'a {
        self.operations.iter().filter(move |op| op.name == name)
    }
}

pub fn parse_lql(text: &str) -> Result<InterfaceSignature, LqlError> {
    let mut cur = Cursor::new(text)?;
    if cur.at_eof() {
        return Err(SyntaxError::new(cur.pos(), "empty interface text").into());
    }
    let sig = parse_interface(&mut cur)?;
    if !cur.at_eof() {
        return Err(cur.unexpected("end of input").into());
    }
    Ok(sig)
}

pub(crate) fn parse_interface(cur: &mut Cursor) -> Result<InterfaceSignature, LqlError> {
    let name = cur.expect_ident()?;
    let open = cur.pos();
    cur.expect_punct('{')?;
    let mut operations = Vec::new();
    while !cur.is_punct('}') {
        if cur.at_eof() {
            return Err(SyntaxError::new(open, "unclosed `{`").into());
        }
        operations.push(parse_method(cur)?);
    }
    cur.expect_punct('}')?;
    InterfaceSignature::new(name, operations)
}

fn parse_method(cur: &mut Cursor) -> Result<OperationSig, SyntaxError> {
    let name = cur.expect_ident()?;
    cur.expect_punct('(')?;
    let mut inputs = Vec::new();
    if !cur.eat_punct(')') {
        loop {
            inputs.push(parse_type(cur)?);
            if cur.eat_punct(')') {
                break;
            }
            cur.expect_punct(',')?;
        }
    }
    if cur.peek().tok != Tok::Arrow {
        return Err(cur.unexpected("`->`"));
    }
    cur.bump();
    let output = parse_type(cur)?;
    Ok(OperationSig { name, inputs, output })
}

fn parse_type(cur: &mut Cursor) -> Result<TypeName, SyntaxError> {
    let mut text = cur.expect_ident()?;
    while cur.is_punct('.') {
        cur.bump();
        text.push('.');
        text.push_str(&cur.expect_ident()?);
    }
    if cur.is_punct('<') {
        return Err(cur.error(format!("generic type parameters are not supported (on `{text}`)")));
    }
    while cur.is_punct('[') {
        cur.bump();
        cur.expect_punct(']')?;
        text.push_str("[]");
    }
    Ok(TypeName(text))
}

/// Canonical form: one method per line, four-space indent.
pub fn render_lql(sig: &InterfaceSignature) -> String {
    let mut out = format!("{} {{\n", sig.name);
    for op in &sig.operations {
        let inputs: Vec<&str> = op.inputs.iter().map(TypeName::as_str).collect();
        out.push_str(&format!("    {}({})->{}\n", op.name, inputs.join(", "), op.output));
    }
    out.push('}');
    out
}

impl fmt::Display for InterfaceSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_lql(self))
    }
}

impl LqlError {
    pub fn pos(&self) -> Option<Pos> {
        match self {
            LqlError::Syntax(e) => Some(e.pos),
            _ => None,
        }
    }
}
