//! Nested `key = value` configuration text.
//!
//! ```text
//! family "ImageMLP" {
//!   static {
//!     hidden_sizes = [32]
//!     batch_size = 64
//!   }
//!   augmentation "GradNormalize" {}
//! }
//! ```
//!
//! Blocks are `ident ["label"] { ... }`; entries are assignments or nested
//! blocks. `#` starts a comment. Emission is canonical: two-space indent,
//! shortest round-tripping float text, entries in stored order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    List(Vec<Value>),
    Map(Map),
}

pub type Map = BTreeMap<String, Value>;

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::Bool(_) => "bool",
            Value::List(_) => "list",
            Value::Map(_) => "block",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub kind: String,
    pub label: Option<String>,
    pub entries: Vec<Entry>,
    pub line: usize,
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Assign {
        key: String,
        value: Value,
        line: usize,
        column: usize,
    },
    Block(Block),
}

impl Block {
    pub fn new(kind: &str, label: Option<&str>) -> Self {
        Self {
            kind: kind.to_string(),
            label: label.map(str::to_string),
            entries: Vec::new(),
            line: 0,
            column: 0,
        }
    }

    pub fn assign(mut self, key: &str, value: Value) -> Self {
        self.entries.push(Entry::Assign {
            key: key.to_string(),
            value,
            line: 0,
            column: 0,
        });
        self
    }

    pub fn child(mut self, block: Block) -> Self {
        self.entries.push(Entry::Block(block));
        self
    }

    pub fn blocks<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Block> + 'a {
        self.entries.iter().filter_map(move |e| match e {
            Entry::Block(b) if b.kind == kind => Some(b),
            _ => None,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find_map(|e| match e {
            Entry::Assign { key: k, value, .. } if k == key => Some(value),
            _ => None,
        })
    }

    pub fn syntax_error(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    /// Convert an unlabeled block into a key/value map. Nested unlabeled
    /// blocks become nested maps; labeled blocks are rejected.
    pub fn to_map(&self) -> Result<Map> {
        let mut map = Map::new();
        for entry in &self.entries {
            let (key, value, line, column) = match entry {
                Entry::Assign {
                    key,
                    value,
                    line,
                    column,
                } => (key.clone(), value.clone(), *line, *column),
                Entry::Block(b) => {
                    if b.label.is_some() {
                        return Err(b.syntax_error(format!(
                            "labeled block `{}` not allowed inside `{}`",
                            b.kind, self.kind
                        )));
                    }
                    (b.kind.clone(), Value::Map(b.to_map()?), b.line, b.column)
                }
            };
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Syntax {
                    line,
                    column,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(map)
    }

    pub fn from_map(kind: &str, label: Option<&str>, map: &Map) -> Block {
        let mut b = Block::new(kind, label);
        for (k, v) in map {
            b = match v {
                Value::Map(inner) => b.child(Block::from_map(k, None, inner)),
                other => b.assign(k, other.clone()),
            };
        }
        b
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Comma,
    Eof,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, usize, usize)>> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c == '#' {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, column) = (self.line, self.column);
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, line, column));
                return Ok(out);
            };
            let tok = match c {
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                '[' => {
                    self.bump();
                    Tok::LBracket
                }
                ']' => {
                    self.bump();
                    Tok::RBracket
                }
                '=' => {
                    self.bump();
                    Tok::Eq
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => return Err(self.err(line, column, "unterminated string")),
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some('\\') => s.push('\\'),
                                Some('"') => s.push('"'),
                                other => {
                                    return Err(self.err(
                                        self.line,
                                        self.column,
                                        format!("bad escape {other:?}"),
                                    ))
                                }
                            },
                            Some(ch) => s.push(ch),
                        }
                    }
                    Tok::Str(s)
                }
                c if c == '-' || c == '+' || c.is_ascii_digit() || c == '.' => {
                    let mut s = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_') {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let is_float = s.contains(['.', 'e', 'E']);
                    if is_float {
                        match s.parse::<f64>() {
                            Ok(f) if f.is_finite() => Tok::Float(f),
                            _ => return Err(self.err(line, column, format!("bad number `{s}`"))),
                        }
                    } else {
                        match s.parse::<i64>() {
                            Ok(i) => Tok::Int(i),
                            Err(_) => {
                                return Err(self.err(line, column, format!("bad number `{s}`")))
                            }
                        }
                    }
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(self.err(line, column, format!("unexpected character `{other}`")))
                }
            };
            out.push((tok, line, column));
        }
    }
}

// ---------------------------------------------------------------- parsing

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> (usize, usize) {
        (self.toks[self.pos].1, self.toks[self.pos].2)
    }

    fn next(&mut self) -> (Tok, usize, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> Error {
        let (line, column) = self.at();
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(self.err_here(format!("expected {what}, found {:?}", self.peek())))
        }
    }

    fn document(&mut self) -> Result<Vec<Block>> {
        let mut blocks = Vec::new();
        while *self.peek() != Tok::Eof {
            let (tok, line, column) = self.next();
            let Tok::Ident(kind) = tok else {
                return Err(Error::Syntax {
                    line,
                    column,
                    message: format!("expected block name, found {tok:?}"),
                });
            };
            blocks.push(self.block_after_name(kind, line, column)?);
        }
        Ok(blocks)
    }

    fn block_after_name(&mut self, kind: String, line: usize, column: usize) -> Result<Block> {
        let label = if let Tok::Str(s) = self.peek().clone() {
            self.next();
            Some(s)
        } else {
            None
        };
        self.expect(Tok::LBrace, "`{`")?;
        let mut entries = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::RBrace => {
                    self.next();
                    break;
                }
                Tok::Ident(key) => {
                    let (_, l, c) = self.next();
                    if *self.peek() == Tok::Eq {
                        self.next();
                        let value = self.value()?;
                        entries.push(Entry::Assign {
                            key,
                            value,
                            line: l,
                            column: c,
                        });
                    } else {
                        entries.push(Entry::Block(self.block_after_name(key, l, c)?));
                    }
                }
                Tok::Eof => return Err(self.err_here("unexpected end of input, missing `}`")),
                other => return Err(self.err_here(format!("expected key or `}}`, found {other:?}"))),
            }
        }
        Ok(Block {
            kind,
            label,
            entries,
            line,
            column,
        })
    }

    fn value(&mut self) -> Result<Value> {
        let (tok, line, column) = self.next();
        Ok(match tok {
            Tok::Int(i) => Value::Int(i),
            Tok::Float(f) => Value::Float(f),
            Tok::Str(s) => Value::Str(s),
            Tok::Ident(id) if id == "true" => Value::Bool(true),
            Tok::Ident(id) if id == "false" => Value::Bool(false),
            Tok::LBracket => {
                let mut items = Vec::new();
                loop {
                    if *self.peek() == Tok::RBracket {
                        self.next();
                        break;
                    }
                    items.push(self.value()?);
                    match self.peek() {
                        Tok::Comma => {
                            self.next();
                        }
                        Tok::RBracket => {}
                        other => {
                            return Err(self.err_here(format!("expected `,` or `]`, found {other:?}")))
                        }
                    }
                }
                Value::List(items)
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    column,
                    message: format!("expected value, found {other:?}"),
                })
            }
        })
    }
}

pub fn parse_document(text: &str) -> Result<Vec<Block>> {
    let toks = Lexer::new(text).tokenize()?;
    Parser { toks, pos: 0 }.document()
}

// ---------------------------------------------------------------- emission

fn format_float(f: f64) -> String {
    // Debug output is the shortest text that parses back to the same bits and
    // always carries a `.` or exponent, so it re-lexes as a float.
    let s = format!("{f:?}");
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) => out.push_str(&format_float(*f)),
        Value::Str(s) => write_str(out, s),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Map(m) => {
            // maps are emitted as nested blocks by write_block; inline form
            // only occurs inside lists
            out.push_str("{\n");
            for (k, v) in m {
                let _ = write!(out, "{:width$}{k} = ", "", width = indent + 2);
                write_value(out, v, indent + 2);
                out.push('\n');
            }
            let _ = write!(out, "{:width$}}}", "", width = indent);
        }
    }
}

fn write_block(out: &mut String, b: &Block, indent: usize) {
    let _ = write!(out, "{:width$}{}", "", b.kind, width = indent);
    if let Some(label) = &b.label {
        out.push(' ');
        write_str(out, label);
    }
    if b.entries.is_empty() {
        out.push_str(" {}\n");
        return;
    }
    out.push_str(" {\n");
    for e in &b.entries {
        match e {
            Entry::Assign { key, value, .. } => match value {
                Value::Map(m) => write_block(out, &Block::from_map(key, None, m), indent + 2),
                _ => {
                    let _ = write!(out, "{:width$}{key} = ", "", width = indent + 2);
                    write_value(out, value, indent + 2);
                    out.push('\n');
                }
            },
            Entry::Block(inner) => write_block(out, inner, indent + 2),
        }
    }
    let _ = writeln!(out, "{:width$}}}", "", width = indent);
}

pub fn emit_document(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        write_block(&mut out, b, 0);
    }
    out
}

/// Typed lookups on a map with range checking and consumed-key tracking.
pub struct MapReader<'a> {
    map: &'a Map,
    context: String,
    used: std::cell::RefCell<Vec<&'a str>>,
}

impl<'a> MapReader<'a> {
    pub fn new(map: &'a Map, context: impl Into<String>) -> Self {
        Self {
            map,
            context: context.into(),
            used: Default::default(),
        }
    }

    fn raw(&self, key: &'a str) -> Option<&'a Value> {
        self.used.borrow_mut().push(key);
        self.map.get(key)
    }

    fn type_err(&self, key: &str, want: &str, got: &Value) -> Error {
        Error::Config(format!(
            "{}: `{key}` must be {want}, got {}",
            self.context,
            got.type_name()
        ))
    }

    fn missing(&self, key: &str) -> Error {
        Error::Config(format!("{}: missing required key `{key}`", self.context))
    }

    pub fn opt_f64(&self, key: &'a str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.type_err(key, "a number", v)),
        }
    }

    pub fn f64(&self, key: &'a str) -> Result<f64> {
        self.opt_f64(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn f64_in(&self, key: &'a str, lo: f64, hi: f64) -> Result<f64> {
        let v = self.f64(key)?;
        self.check_range(key, v, lo, hi)?;
        Ok(v)
    }

    pub fn check_range(&self, key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
        if !(lo..=hi).contains(&v) {
            return Err(Error::Range(format!(
                "{}: `{key}` = {v} outside [{lo}, {hi}]",
                self.context
            )));
        }
        Ok(())
    }

    pub fn opt_i64(&self, key: &'a str) -> Result<Option<i64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.as_i64().map(Some).ok_or_else(|| self.type_err(key, "an integer", v)),
        }
    }

    pub fn usize_in(&self, key: &'a str, lo: usize, hi: usize) -> Result<usize> {
        let v = self.opt_i64(key)?.ok_or_else(|| self.missing(key))?;
        if v < lo as i64 || v > hi as i64 {
            return Err(Error::Range(format!(
                "{}: `{key}` = {v} outside [{lo}, {hi}]",
                self.context
            )));
        }
        Ok(v as usize)
    }

    pub fn opt_usize_in(&self, key: &'a str, lo: usize, hi: usize) -> Result<Option<usize>> {
        if self.map.contains_key(key) {
            self.usize_in(key, lo, hi).map(Some)
        } else {
            self.used.borrow_mut().push(key);
            Ok(None)
        }
    }

    pub fn usize_list(&self, key: &'a str, lo: usize, hi: usize) -> Result<Vec<usize>> {
        let v = self.raw(key).ok_or_else(|| self.missing(key))?;
        let items = v.as_list().ok_or_else(|| self.type_err(key, "a list", v))?;
        items
            .iter()
            .map(|item| {
                let i = item
                    .as_i64()
                    .ok_or_else(|| self.type_err(key, "a list of integers", item))?;
                if i < lo as i64 || i > hi as i64 {
                    return Err(Error::Range(format!(
                        "{}: `{key}` entry {i} outside [{lo}, {hi}]",
                        self.context
                    )));
                }
                Ok(i as usize)
            })
            .collect()
    }

    pub fn opt_f64_list(&self, key: &'a str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let items = v.as_list().ok_or_else(|| self.type_err(key, "a list", v))?;
        items
            .iter()
            .map(|item| item.as_f64().ok_or_else(|| self.type_err(key, "a list of numbers", item)))
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    pub fn opt_str_list(&self, key: &'a str) -> Result<Option<Vec<String>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let items = v.as_list().ok_or_else(|| self.type_err(key, "a list", v))?;
        items
            .iter()
            .map(|item| {
                item.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| self.type_err(key, "a list of strings", item))
            })
            .collect::<Result<Vec<String>>>()
            .map(Some)
    }

    pub fn opt_str(&self, key: &'a str) -> Result<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.type_err(key, "a string", v)),
        }
    }

    pub fn str(&self, key: &'a str) -> Result<&'a str> {
        self.opt_str(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn choice(&self, key: &'a str, allowed: &[&str]) -> Result<&'a str> {
        let s = self.str(key)?;
        if !allowed.contains(&s) {
            return Err(Error::Range(format!(
                "{}: `{key}` = {s:?} not one of {allowed:?}",
                self.context
            )));
        }
        Ok(s)
    }

    pub fn opt_bool(&self, key: &'a str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| self.type_err(key, "a bool", v)),
        }
    }

    /// Reject any key that was never looked up.
    pub fn finish(self) -> Result<()> {
        let used = self.used.into_inner();
        for key in self.map.keys() {
            if !used.contains(&key.as_str()) {
                return Err(Error::UnknownKey {
                    key: key.clone(),
                    context: self.context,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_blocks() {
        let text = r#"
            # a comment
            family "ImageMLP" {
              static {
                hidden_sizes = [32, 16]
                rate = 1e-3
                name = "x\"y"
              }
              augmentation "GradNormalize" {}
            }
        "#;
        let doc = parse_document(text).unwrap();
        assert_eq!(doc.len(), 1);
        let fam = &doc[0];
        assert_eq!(fam.label.as_deref(), Some("ImageMLP"));
        let st = fam.blocks("static").next().unwrap().to_map().unwrap();
        assert_eq!(st["rate"], Value::Float(1e-3));
        assert_eq!(st["name"], Value::Str("x\"y".into()));
        assert_eq!(fam.blocks("augmentation").count(), 1);
    }

    #[test]
    fn emit_round_trip() {
        let text = "a \"b\" {\n  x = -3\n  y = [1.5, 2.0]\n  z {\n    w = true\n  }\n}\n";
        let doc = parse_document(text).unwrap();
        let emitted = emit_document(&doc);
        assert_eq!(emitted, text);
    }

    #[test]
    fn syntax_error_location() {
        let err = parse_document("a {\n  x = ]\n}").unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (2, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn float_formatting_reparses() {
        for f in [0.1, 1e-5, 100.0, 3.0e21, -2.5e-300, 0.0] {
            let s = format_float(f);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), f.to_bits(), "{s}");
            assert!(s.contains(['.', 'e']));
        }
    }
}
