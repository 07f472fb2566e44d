//! Virtual Data Language: transformation (`TR`) and derivation (`DV`)
//! declarations.
//!
//! A transformation is a typed schema of an application's formal arguments;
//! a derivation invokes one transformation with actual values and is the
//! unit of virtual data. `input`/`output` arguments carry logical file
//! names, `none` arguments are opaque parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dependency class of a formal or actual argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArgClass {
    Input,
    Output,
    None,
}

impl ArgClass {
    pub fn keyword(self) -> &'static str {
        match self {
            ArgClass::Input => "input",
            ArgClass::Output => "output",
            ArgClass::None => "none",
        }
    }

    pub fn from_keyword(word: &str) -> Option<ArgClass> {
        match word {
            "input" => Some(ArgClass::Input),
            "output" => Some(ArgClass::Output),
            "none" => Some(ArgClass::None),
            _ => None,
        }
    }
}

impl fmt::Display for ArgClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Global identity of a data product. Nonempty, no whitespace; compared by
/// exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct LogicalFileName(String);

impl LogicalFileName {
    pub fn new(value: impl Into<String>) -> Result<Self, InvalidName> {
        let value = value.into();
        if value.is_empty() {
            return Err(InvalidName("logical file name is empty".into()));
        }
        if value.chars().any(char::is_whitespace) {
            return Err(InvalidName(format!(
                "logical file name `{value}` contains whitespace"
            )));
        }
        Ok(LogicalFileName(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LogicalFileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LogicalFileName {
    type Err = InvalidName;

    fn from_str(s: &str) -> Result<Self, InvalidName> {
        LogicalFileName::new(s)
    }
}

impl<'de> Deserialize<'de> for LogicalFileName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        LogicalFileName::new(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct InvalidName(pub String);

/// A declared formal argument of a transformation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalArg {
    pub name: String,
    pub class: ArgClass,
}

/// One `argument = ${class:name};` line of a transformation body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRef {
    pub class: ArgClass,
    pub name: String,
}

/// Schema of an application invocation: ordered formals plus the argument
/// template mapping them onto a command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformation {
    pub name: String,
    pub formals: Vec<FormalArg>,
    pub argument_template: Vec<TemplateRef>,
}

impl Transformation {
    pub fn formal(&self, name: &str) -> Option<&FormalArg> {
        self.formals.iter().find(|f| f.name == name)
    }
}

/// Value bound to one formal by a derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActualValue {
    Literal(String),
    FileRef {
        class: ArgClass,
        lfn: LogicalFileName,
    },
}

/// A concrete invocation of a transformation; actuals are keyed by formal
/// name and order-insensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub name: String,
    pub transformation_name: String,
    pub actuals: BTreeMap<String, ActualValue>,
}

impl Derivation {
    /// Output logical files declared by this derivation, readable without
    /// resolving the transformation.
    pub fn output_lfns(&self) -> BTreeSet<LogicalFileName> {
        self.file_refs(ArgClass::Output)
    }

    /// Input logical files declared by this derivation.
    pub fn input_lfns(&self) -> BTreeSet<LogicalFileName> {
        self.file_refs(ArgClass::Input)
    }

    fn file_refs(&self, want: ArgClass) -> BTreeSet<LogicalFileName> {
        self.actuals
            .values()
            .filter_map(|v| match v {
                ActualValue::FileRef { class, lfn } if *class == want => Some(lfn.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Either kind of top-level VDL declaration, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VdlObject {
    Transformation(Transformation),
    Derivation(Derivation),
}

impl VdlObject {
    pub fn name(&self) -> &str {
        match self {
            VdlObject::Transformation(tr) => &tr.name,
            VdlObject::Derivation(dv) => &dv.name,
        }
    }
}

/// Fully resolved argument binding of a derivation against its
/// transformation, partitioned by argument class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Binding {
    pub inputs: BTreeSet<LogicalFileName>,
    pub outputs: BTreeSet<LogicalFileName>,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VdlError {
    #[error("SyntaxError at {line}:{col}: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error(
        "DuplicateFormal at {line}:{col}: transformation `{transformation}` repeats formal `{formal}`"
    )]
    DuplicateFormal {
        transformation: String,
        formal: String,
        line: u32,
        col: u32,
    },
}

impl VdlError {
    pub fn line(&self) -> u32 {
        match self {
            VdlError::Syntax { line, .. } | VdlError::DuplicateFormal { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("MissingActual: derivation `{derivation}` binds no value for formal `{formal}`")]
    MissingActual { derivation: String, formal: String },
    #[error(
        "UnknownActual: derivation `{derivation}` names `{name}`, which is not a formal of `{transformation}`"
    )]
    UnknownActual {
        derivation: String,
        transformation: String,
        name: String,
    },
    #[error(
        "ClassMismatch: actual bound to `{formal}` of `{transformation}` has the wrong argument class"
    )]
    ClassMismatch {
        transformation: String,
        formal: String,
    },
    #[error(
        "TransformationMismatch: derivation `{derivation}` invokes `{expected}`, was given `{found}`"
    )]
    TransformationMismatch {
        derivation: String,
        expected: String,
        found: String,
    },
}

/// Resolve a derivation's actuals against its transformation's formals.
///
/// Every formal must be bound exactly once with a class-compatible value;
/// the result partitions the binding into input files, output files, and
/// plain parameters.
pub fn bind_derivation(dv: &Derivation, tr: &Transformation) -> Result<Binding, BindError> {
    if dv.transformation_name != tr.name {
        return Err(BindError::TransformationMismatch {
            derivation: dv.name.clone(),
            expected: dv.transformation_name.clone(),
            found: tr.name.clone(),
        });
    }
    for name in dv.actuals.keys() {
        if tr.formal(name).is_none() {
            return Err(BindError::UnknownActual {
                derivation: dv.name.clone(),
                transformation: tr.name.clone(),
                name: name.clone(),
            });
        }
    }
    let mut binding = Binding::default();
    for formal in &tr.formals {
        let value = dv
            .actuals
            .get(&formal.name)
            .ok_or_else(|| BindError::MissingActual {
                derivation: dv.name.clone(),
                formal: formal.name.clone(),
            })?;
        match (formal.class, value) {
            (ArgClass::None, ActualValue::Literal(text)) => {
                binding.params.insert(formal.name.clone(), text.clone());
            }
            (ArgClass::Input, ActualValue::FileRef { class: ArgClass::Input, lfn }) => {
                binding.inputs.insert(lfn.clone());
            }
            (ArgClass::Output, ActualValue::FileRef { class: ArgClass::Output, lfn }) => {
                binding.outputs.insert(lfn.clone());
            }
            _ => {
                return Err(BindError::ClassMismatch {
                    transformation: tr.name.clone(),
                    formal: formal.name.clone(),
                })
            }
        }
    }
    Ok(binding)
}

/// Parse VDL text into declarations in file order.
pub fn parse_vdl(text: &str) -> Result<Vec<VdlObject>, VdlError> {
    let mut parser = Parser::new(text);
    let mut objects = Vec::new();
    loop {
        parser.skip_trivia();
        if parser.peek().is_none() {
            return Ok(objects);
        }
        let at = parser.pos();
        let keyword = parser.ident("`TR` or `DV`")?;
        match keyword.as_str() {
            "TR" => objects.push(VdlObject::Transformation(parser.transformation()?)),
            "DV" => objects.push(VdlObject::Derivation(parser.derivation()?)),
            other => {
                return Err(VdlError::Syntax {
                    line: at.0,
                    col: at.1,
                    message: format!("expected `TR` or `DV`, found `{other}`"),
                })
            }
        }
    }
}

/// Render declarations back to VDL text. Output re-parses to structurally
/// equal objects.
pub fn serialize_vdl(objects: &[VdlObject]) -> String {
    let mut out = String::new();
    for object in objects {
        if !out.is_empty() {
            out.push('\n');
        }
        match object {
            VdlObject::Transformation(tr) => write_transformation(&mut out, tr),
            VdlObject::Derivation(dv) => write_derivation(&mut out, dv),
        }
    }
    out
}

fn write_transformation(out: &mut String, tr: &Transformation) {
    out.push_str("TR ");
    out.push_str(&tr.name);
    out.push_str("( ");
    for (i, formal) in tr.formals.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(formal.class.keyword());
        out.push(' ');
        out.push_str(&formal.name);
    }
    out.push_str(" )\n{\n");
    for entry in &tr.argument_template {
        out.push_str("  argument = ${");
        out.push_str(entry.class.keyword());
        out.push(':');
        out.push_str(&entry.name);
        out.push_str("};\n");
    }
    out.push_str("}\n");
}

fn write_derivation(out: &mut String, dv: &Derivation) {
    out.push_str("DV ");
    out.push_str(&dv.name);
    out.push_str("->");
    out.push_str(&dv.transformation_name);
    out.push_str("(\n");
    let last = dv.actuals.len().saturating_sub(1);
    for (i, (name, value)) in dv.actuals.iter().enumerate() {
        out.push_str("  ");
        out.push_str(name);
        out.push('=');
        match value {
            ActualValue::Literal(text) => {
                out.push('"');
                out.push_str(&escape(text));
                out.push('"');
            }
            ActualValue::FileRef { class, lfn } => {
                out.push_str("@{");
                out.push_str(class.keyword());
                out.push_str(":\"");
                out.push_str(&escape(lfn.as_str()));
                out.push_str("\"}");
            }
        }
        if i != last {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str(");\n");
}

fn escape(raw: &str) -> String {
    raw.replace('\\', "\\\\").replace('"', "\\\"")
}

struct Parser {
    chars: Vec<char>,
    idx: usize,
    line: u32,
    col: u32,
}

impl Parser {
    fn new(text: &str) -> Self {
        Parser {
            chars: text.chars().collect(),
            idx: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.idx += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> (u32, u32) {
        (self.line, self.col)
    }

    fn syntax(&self, message: impl Into<String>) -> VdlError {
        VdlError::Syntax {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn syntax_at(&self, at: (u32, u32), message: impl Into<String>) -> VdlError {
        VdlError::Syntax {
            line: at.0,
            col: at.1,
            message: message.into(),
        }
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), VdlError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.syntax(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.syntax(format!("expected `{want}`, found end of input"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, VdlError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                word.push(c);
                self.bump();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Ok(word)
            }
            Some(c) => Err(self.syntax(format!("expected {what}, found `{c}`"))),
            None => Err(self.syntax(format!("expected {what}, found end of input"))),
        }
    }

    fn arg_class(&mut self) -> Result<ArgClass, VdlError> {
        self.skip_trivia();
        let at = self.pos();
        let word = self.ident("argument class")?;
        ArgClass::from_keyword(&word).ok_or_else(|| {
            self.syntax_at(
                at,
                format!("expected `input`, `output`, or `none`, found `{word}`"),
            )
        })
    }

    fn string(&mut self) -> Result<String, VdlError> {
        self.expect('"')?;
        let mut value = String::new();
        loop {
            match self.bump() {
                Some('"') => return Ok(value),
                Some('\\') => match self.bump() {
                    Some('"') => value.push('"'),
                    Some('\\') => value.push('\\'),
                    Some(c) => return Err(self.syntax(format!("unsupported escape `\\{c}`"))),
                    None => return Err(self.syntax("unterminated string")),
                },
                Some(c) => value.push(c),
                None => return Err(self.syntax("unterminated string")),
            }
        }
    }

    fn transformation(&mut self) -> Result<Transformation, VdlError> {
        let name = self.ident("transformation name")?;
        self.expect('(')?;
        let mut formals: Vec<FormalArg> = Vec::new();
        loop {
            let class = self.arg_class()?;
            self.skip_trivia();
            let at = self.pos();
            let formal_name = self.ident("formal name")?;
            if formals.iter().any(|f| f.name == formal_name) {
                return Err(VdlError::DuplicateFormal {
                    transformation: name,
                    formal: formal_name,
                    line: at.0,
                    col: at.1,
                });
            }
            formals.push(FormalArg {
                name: formal_name,
                class,
            });
            self.skip_trivia();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(')') => {
                    self.bump();
                    break;
                }
                Some(c) => return Err(self.syntax(format!("expected `,` or `)`, found `{c}`"))),
                None => return Err(self.syntax("expected `,` or `)`, found end of input")),
            }
        }
        self.expect('{')?;
        let mut template = Vec::new();
        loop {
            self.skip_trivia();
            if self.peek() == Some('}') {
                self.bump();
                break;
            }
            let at = self.pos();
            let keyword = self.ident("`argument` or `}`")?;
            if keyword != "argument" {
                return Err(self.syntax_at(
                    at,
                    format!("expected `argument` or `}}`, found `{keyword}`"),
                ));
            }
            self.expect('=')?;
            self.expect('$')?;
            self.expect('{')?;
            let ref_at = self.pos();
            let class = self.arg_class()?;
            self.expect(':')?;
            let ref_name = self.ident("formal name")?;
            self.expect('}')?;
            self.expect(';')?;
            match formals.iter().find(|f| f.name == ref_name) {
                None => {
                    return Err(self.syntax_at(
                        ref_at,
                        format!("template references undeclared formal `{ref_name}`"),
                    ))
                }
                Some(f) if f.class != class => {
                    return Err(self.syntax_at(
                        ref_at,
                        format!(
                            "template class `{class}` does not match formal `{ref_name}` declared `{}`",
                            f.class
                        ),
                    ))
                }
                Some(_) => template.push(TemplateRef {
                    class,
                    name: ref_name,
                }),
            }
        }
        Ok(Transformation {
            name,
            formals,
            argument_template: template,
        })
    }

    fn derivation(&mut self) -> Result<Derivation, VdlError> {
        let name = self.ident("derivation name")?;
        self.expect('-')?;
        match self.peek() {
            Some('>') => {
                self.bump();
            }
            Some(c) => return Err(self.syntax(format!("expected `->`, found `-{c}`"))),
            None => return Err(self.syntax("expected `->`, found end of input")),
        }
        let transformation_name = self.ident("transformation name")?;
        self.expect('(')?;
        let mut actuals = BTreeMap::new();
        loop {
            self.skip_trivia();
            let at = self.pos();
            let formal_name = self.ident("actual name")?;
            self.expect('=')?;
            self.skip_trivia();
            let value = match self.peek() {
                Some('"') => ActualValue::Literal(self.string()?),
                Some('@') => {
                    self.bump();
                    self.expect('{')?;
                    let class_at = self.pos();
                    let class = self.arg_class()?;
                    if class == ArgClass::None {
                        return Err(self.syntax_at(
                            class_at,
                            "file reference class must be `input` or `output`",
                        ));
                    }
                    self.expect(':')?;
                    self.skip_trivia();
                    let lfn_at = self.pos();
                    let raw = self.string()?;
                    let lfn = LogicalFileName::new(raw)
                        .map_err(|e| self.syntax_at(lfn_at, format!("invalid file reference: {e}")))?;
                    self.expect('}')?;
                    ActualValue::FileRef { class, lfn }
                }
                Some(c) => {
                    return Err(self.syntax(format!("expected string or `@{{`, found `{c}`")))
                }
                None => return Err(self.syntax("expected string or `@{`, found end of input")),
            };
            if actuals.insert(formal_name.clone(), value).is_some() {
                return Err(self.syntax_at(at, format!("duplicate actual `{formal_name}`")));
            }
            self.skip_trivia();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(')') => {
                    self.bump();
                    break;
                }
                Some(c) => return Err(self.syntax(format!("expected `,` or `)`, found `{c}`"))),
                None => return Err(self.syntax("expected `,` or `)`, found end of input")),
            }
        }
        self.expect(';')?;
        Ok(Derivation {
            name,
            transformation_name,
            actuals,
        })
    }
}
