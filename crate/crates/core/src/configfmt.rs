//! Parser and canonical serializer for the libconfig-shaped configuration
//! dialect used by gNB config files:
//!
//! ```text
//! # comment
//! gNBs = (
//!   {
//!     do_CSIRS = 1;
//!     servingCellConfigCommon = (
//!       {
//!         absoluteFrequencySSB = 641280;
//!       }
//!     );
//!   }
//! );
//! ```
//!
//! Parameters are addressed with [`ParamPath`]s such as
//! `gNBs[0].servingCellConfigCommon[0].absoluteFrequencySSB`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate setting name {name:?} at {line}:{column}")]
    DuplicateName {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("path not found: {0}")]
    PathNotFound(String),
    #[error("not a scalar: {0}")]
    NotAScalar(String),
    #[error("invalid parameter path {0:?}")]
    BadPath(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
}

impl Scalar {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            // Debug formatting is the shortest round-tripping form and always
            // carries a '.' or an exponent.
            Scalar::Real(v) => write!(f, "{v:?}"),
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                            write!(f, "\\x{:02x}", c as u32)?
                        }
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(Scalar),
    Group(Group),
    List(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub name: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Group {
    pub settings: Vec<Setting>,
}

impl Group {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.settings
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.value)
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut Value> {
        self.settings
            .iter_mut()
            .find(|s| s.name == name)
            .map(|s| &mut s.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDocument {
    pub root: Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Name(String),
    Index(usize),
}

/// Dotted path to a setting; list elements are addressed as `[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamPath {
    segments: Vec<Segment>,
}

impl ParamPath {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ConfigError> {
        if segments.is_empty() {
            return Err(ConfigError::BadPath(String::new()));
        }
        Ok(ParamPath { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Name of the last named segment.
    pub fn leaf_name(&self) -> Option<&str> {
        self.segments.iter().rev().find_map(|s| match s {
            Segment::Name(n) => Some(n.as_str()),
            Segment::Index(_) => None,
        })
    }

    fn child(&self, segment: Segment) -> ParamPath {
        let mut segments = self.segments.clone();
        segments.push(segment);
        ParamPath { segments }
    }
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Name(n) if i == 0 => f.write_str(n)?,
                Segment::Name(n) => write!(f, ".{n}")?,
                Segment::Index(k) => write!(f, "[{k}]")?,
            }
        }
        Ok(())
    }
}

impl FromStr for ParamPath {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::BadPath(s.to_string());
        let mut segments = Vec::new();
        for (i, part) in s.split('.').enumerate() {
            let (name, mut rest) = match part.find('[') {
                Some(at) => part.split_at(at),
                None => (part, ""),
            };
            if name.is_empty() {
                // `[0].x` is only meaningful at the start or directly after a name.
                if i > 0 || rest.is_empty() {
                    return Err(bad());
                }
            } else if is_identifier(name) {
                segments.push(Segment::Name(name.to_string()));
            } else {
                return Err(bad());
            }
            while !rest.is_empty() {
                let close = rest.find(']').ok_or_else(bad)?;
                let index = rest[1..close].parse().map_err(|_| bad())?;
                segments.push(Segment::Index(index));
                rest = &rest[close + 1..];
                if !rest.is_empty() && !rest.starts_with('[') {
                    return Err(bad());
                }
            }
        }
        ParamPath::new(segments).map_err(|_| bad())
    }
}

impl Serialize for ParamPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut root = Group::default();
    loop {
        p.skip_trivia();
        if p.at_end() {
            break;
        }
        p.parse_setting_into(&mut root)?;
    }
    Ok(ConfigDocument { root })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn location(&self, offset: usize) -> (usize, usize) {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
        let line_start = before
            .iter()
            .rposition(|&b| b == b'\n')
            .map_or(0, |i| i + 1);
        let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
        (line, column)
    }

    fn error_at(&self, offset: usize, message: impl Into<String>) -> ConfigError {
        let (line, column) = self.location(offset);
        ConfigError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn describe_here(&self) -> String {
        match self.peek() {
            None => "end of input".to_string(),
            Some(_) => {
                let rest = String::from_utf8_lossy(&self.src[self.pos..]);
                format!("{:?}", rest.chars().next().unwrap_or('?'))
            }
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' || self.src[self.pos..].starts_with(b"//") {
                while let Some(b) = self.peek() {
                    if b == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, byte: u8) -> Result<(), ConfigError> {
        self.skip_trivia();
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_at(
                self.pos,
                format!("expected '{}', found {}", byte as char, self.describe_here()),
            ))
        }
    }

    fn parse_identifier(&mut self) -> Result<String, ConfigError> {
        self.skip_trivia();
        let start = self.pos;
        match self.peek() {
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.pos += 1,
            _ => {
                return Err(self.error_at(
                    start,
                    format!("expected setting name, found {}", self.describe_here()),
                ))
            }
        }
        while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || b == b'_') {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn parse_setting_into(&mut self, group: &mut Group) -> Result<(), ConfigError> {
        self.skip_trivia();
        let name_at = self.pos;
        let name = self.parse_identifier()?;
        if group.get(&name).is_some() {
            let (line, column) = self.location(name_at);
            return Err(ConfigError::DuplicateName { name, line, column });
        }
        self.expect(b'=')?;
        let value = self.parse_value()?;
        self.expect(b';')?;
        group.settings.push(Setting { name, value });
        Ok(())
    }

    fn parse_group_body(&mut self) -> Result<Group, ConfigError> {
        let mut group = Group::default();
        loop {
            self.skip_trivia();
            match self.peek() {
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(group);
                }
                None => return Err(self.error_at(self.pos, "unterminated group, expected '}'")),
                Some(_) => self.parse_setting_into(&mut group)?,
            }
        }
    }

    fn parse_list_body(&mut self) -> Result<Vec<Value>, ConfigError> {
        let mut items = Vec::new();
        self.skip_trivia();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(items);
        }
        loop {
            items.push(self.parse_value()?);
            self.skip_trivia();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(items);
                }
                _ => {
                    return Err(self.error_at(
                        self.pos,
                        format!("expected ',' or ')', found {}", self.describe_here()),
                    ))
                }
            }
        }
    }

    fn parse_value(&mut self) -> Result<Value, ConfigError> {
        self.skip_trivia();
        match self.peek() {
            Some(b'{') => {
                self.pos += 1;
                Ok(Value::Group(self.parse_group_body()?))
            }
            Some(b'(') => {
                self.pos += 1;
                Ok(Value::List(self.parse_list_body()?))
            }
            Some(b'"') => Ok(Value::Scalar(Scalar::Str(self.parse_string()?))),
            Some(b) if b == b'-' || b == b'+' || b.is_ascii_digit() => {
                Ok(Value::Scalar(self.parse_number()?))
            }
            Some(b) if b.is_ascii_alphabetic() => {
                let at = self.pos;
                let word = self.parse_identifier()?;
                if word.eq_ignore_ascii_case("true") {
                    Ok(Value::Scalar(Scalar::Bool(true)))
                } else if word.eq_ignore_ascii_case("false") {
                    Ok(Value::Scalar(Scalar::Bool(false)))
                } else {
                    Err(self.error_at(at, format!("unexpected word {word:?}, expected a value")))
                }
            }
            _ => Err(self.error_at(
                self.pos,
                format!("expected a value, found {}", self.describe_here()),
            )),
        }
    }

    fn parse_number(&mut self) -> Result<Scalar, ConfigError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'-' | b'+')) {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.error_at(start, "expected digits"));
        }
        let mut real = false;
        if self.peek() == Some(b'.') {
            real = true;
            self.pos += 1;
            let frac_start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == frac_start {
                return Err(self.error_at(self.pos, "expected digits after '.'"));
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            real = true;
            self.pos += 1;
            if matches!(self.peek(), Some(b'-' | b'+')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                return Err(self.error_at(self.pos, "expected exponent digits"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ASCII number");
        if real {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Scalar::Real(v)),
                _ => Err(self.error_at(start, format!("real {text} out of range"))),
            }
        } else {
            text.parse::<i64>()
                .map(Scalar::Int)
                .map_err(|_| self.error_at(start, format!("integer {text} overflows 64 bits")))
        }
    }

    fn parse_string(&mut self) -> Result<String, ConfigError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.error_at(start, "unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    let esc_at = self.pos;
                    self.pos += 1;
                    let c = self.peek();
                    self.pos += 1;
                    match c {
                        Some(b'"') => out.push(b'"'),
                        Some(b'\\') => out.push(b'\\'),
                        Some(b'n') => out.push(b'\n'),
                        Some(b'r') => out.push(b'\r'),
                        Some(b't') => out.push(b'\t'),
                        Some(b'f') => out.push(0x0c),
                        Some(b'x') => {
                            let hex = self
                                .src
                                .get(self.pos..self.pos + 2)
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u8::from_str_radix(h, 16).ok())
                                .filter(|b| b.is_ascii())
                                .ok_or_else(|| self.error_at(esc_at, "bad \\x escape"))?;
                            self.pos += 2;
                            out.push(hex);
                        }
                        _ => return Err(self.error_at(esc_at, "unknown escape sequence")),
                    }
                }
                Some(b) => {
                    out.push(b);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(out).map_err(|_| self.error_at(start, "string is not valid UTF-8"))
    }
}

/// Canonical text: one setting per line, two-space indent per nesting
/// level, `;` terminators. Scalar-only lists are written inline.
pub fn serialize_config(d: &ConfigDocument) -> String {
    let mut out = String::new();
    write_settings(&d.root, 0, &mut out);
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_settings(group: &Group, level: usize, out: &mut String) {
    for setting in &group.settings {
        indent(level, out);
        out.push_str(&setting.name);
        out.push_str(" = ");
        write_value(&setting.value, level, out);
        out.push_str(";\n");
    }
}

fn write_value(value: &Value, level: usize, out: &mut String) {
    match value {
        Value::Scalar(s) => out.push_str(&s.to_string()),
        Value::Group(g) if g.settings.is_empty() => out.push_str("{}"),
        Value::Group(g) => {
            out.push_str("{\n");
            write_settings(g, level + 1, out);
            indent(level, out);
            out.push('}');
        }
        Value::List(items) if items.is_empty() => out.push_str("()"),
        Value::List(items) if items.iter().all(|v| matches!(v, Value::Scalar(_))) => {
            out.push('(');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(item, level, out);
            }
            out.push(')');
        }
        Value::List(items) => {
            out.push_str("(\n");
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(",\n");
                }
                indent(level + 1, out);
                write_value(item, level + 1, out);
            }
            out.push('\n');
            indent(level, out);
            out.push(')');
        }
    }
}

fn lookup<'a>(d: &'a ConfigDocument, p: &ParamPath) -> Option<&'a Value> {
    let mut segments = p.segments().iter();
    let mut current = match segments.next()? {
        Segment::Name(n) => d.root.get(n)?,
        Segment::Index(_) => return None,
    };
    for seg in segments {
        current = match (seg, current) {
            (Segment::Name(n), Value::Group(g)) => g.get(n)?,
            (Segment::Index(k), Value::List(items)) => items.get(*k)?,
            _ => return None,
        };
    }
    Some(current)
}

fn lookup_mut<'a>(d: &'a mut ConfigDocument, p: &ParamPath) -> Option<&'a mut Value> {
    let mut segments = p.segments().iter();
    let mut current = match segments.next()? {
        Segment::Name(n) => d.root.get_mut(n)?,
        Segment::Index(_) => return None,
    };
    for seg in segments {
        current = match (seg, current) {
            (Segment::Name(n), Value::Group(g)) => g.get_mut(n)?,
            (Segment::Index(k), Value::List(items)) => items.get_mut(*k)?,
            _ => return None,
        };
    }
    Some(current)
}

pub fn get_param<'a>(d: &'a ConfigDocument, p: &ParamPath) -> Result<&'a Scalar, ConfigError> {
    match lookup(d, p) {
        Some(Value::Scalar(s)) => Ok(s),
        Some(_) => Err(ConfigError::NotAScalar(p.to_string())),
        None => Err(ConfigError::PathNotFound(p.to_string())),
    }
}

/// Returns a copy of `d` with the scalar at `p` replaced by `v`.
pub fn set_param(d: &ConfigDocument, p: &ParamPath, v: Scalar) -> Result<ConfigDocument, ConfigError> {
    let mut out = d.clone();
    match lookup_mut(&mut out, p) {
        Some(Value::Scalar(slot)) => *slot = v,
        Some(_) => return Err(ConfigError::NotAScalar(p.to_string())),
        None => return Err(ConfigError::PathNotFound(p.to_string())),
    }
    Ok(out)
}

/// Every scalar in the document with its path, in document order.
pub fn scalar_paths(d: &ConfigDocument) -> Vec<(ParamPath, &Scalar)> {
    fn walk<'a>(path: &ParamPath, value: &'a Value, out: &mut Vec<(ParamPath, &'a Scalar)>) {
        match value {
            Value::Scalar(s) => out.push((path.clone(), s)),
            Value::Group(g) => {
                for setting in &g.settings {
                    walk(&path.child(Segment::Name(setting.name.clone())), &setting.value, out);
                }
            }
            Value::List(items) => {
                for (k, item) in items.iter().enumerate() {
                    walk(&path.child(Segment::Index(k)), item, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    for setting in &d.root.settings {
        let path = ParamPath {
            segments: vec![Segment::Name(setting.name.clone())],
        };
        walk(&path, &setting.value, &mut out);
    }
    out
}

/// Scalar paths present in both documents whose values differ, in `a`'s
/// document order, as `(path, value in a, value in b)`.
pub fn diff_params(a: &ConfigDocument, b: &ConfigDocument) -> Vec<(ParamPath, Scalar, Scalar)> {
    scalar_paths(a)
        .into_iter()
        .filter_map(|(path, left)| match get_param(b, &path) {
            Ok(right) if right != left => Some((path, left.clone(), right.clone())),
            _ => None,
        })
        .collect()
}
