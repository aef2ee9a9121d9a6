//! Colon-part permission strings with hierarchical path tails.
//!
//! A permission is a `:`-separated list of parts. Each part is either the
//! wildcard `*` or a `,`-separated set of literals. Schemas registered with a
//! path part index treat everything from that index onward as a single
//! absolute path, and a granted path covers the whole subtree beneath it.
//!
//! Matching is case-sensitive. A granted permission that is shorter than the
//! required one implies it (missing trailing parts match anything); a granted
//! permission that is longer implies a shorter required one only when every
//! extra part is `*` (or the root path).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Characters that would turn a literal into a pattern language we do not support.
const PATTERN_CHARS: &[char] = &['*', '?', '[', ']', '(', ')', '{', '}', '|', '^', '$', '+', '\\'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PermError {
    #[error("malformed permission: {0}")]
    Malformed(String),
    #[error("unknown permission schema `{0}`")]
    UnknownSchema(String),
    #[error("permissions `{granted}` and `{required}` disagree on path semantics")]
    SchemaMismatch { granted: String, required: String },
}

/// One `:`-delimited part of a permission.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PartSet {
    Wildcard,
    Literals(BTreeSet<String>),
}

impl PartSet {
    fn covers(&self, other: &PartSet) -> bool {
        match (self, other) {
            (PartSet::Wildcard, _) => true,
            (PartSet::Literals(_), PartSet::Wildcard) => false,
            (PartSet::Literals(mine), PartSet::Literals(theirs)) => theirs.is_subset(mine),
        }
    }

    pub fn is_wildcard(&self) -> bool {
        matches!(self, PartSet::Wildcard)
    }

    /// The single literal of a concrete part.
    pub fn single(&self) -> Option<&str> {
        match self {
            PartSet::Literals(set) if set.len() == 1 => set.iter().next().map(String::as_str),
            _ => None,
        }
    }
}

impl fmt::Display for PartSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartSet::Wildcard => f.write_str("*"),
            PartSet::Literals(set) => {
                let mut first = true;
                for lit in set {
                    if !first {
                        f.write_str(",")?;
                    }
                    f.write_str(lit)?;
                    first = false;
                }
                Ok(())
            }
        }
    }
}

/// Declares that permissions whose first part is `schema` carry a path
/// starting at part `path_part_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaRule {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_part_index: Option<usize>,
}

impl SchemaRule {
    pub fn new(schema: impl Into<String>) -> Self {
        SchemaRule { schema: schema.into(), path_part_index: None }
    }

    pub fn with_path(schema: impl Into<String>, index: usize) -> Result<Self, PermError> {
        if index < 2 {
            return Err(PermError::Malformed(format!(
                "path part index {index} would overlap the schema or tenant part"
            )));
        }
        Ok(SchemaRule { schema: schema.into(), path_part_index: Some(index) })
    }
}

/// The set of agreed-upon permission schemas.
#[derive(Debug, Clone, Default)]
pub struct SchemaRegistry {
    rules: HashMap<String, SchemaRule>,
    strict: bool,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `systems:tenant:op:system` and `files:tenant:op:system:/path`.
    pub fn standard() -> Self {
        let mut reg = SchemaRegistry::new();
        reg.insert(SchemaRule::new("systems")).expect("valid rule");
        reg.insert(SchemaRule::with_path("files", 4).expect("valid rule")).expect("valid rule");
        reg
    }

    pub fn from_rules(rules: impl IntoIterator<Item = SchemaRule>) -> Result<Self, PermError> {
        let mut reg = SchemaRegistry::new();
        for rule in rules {
            reg.insert(rule)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, rule: SchemaRule) -> Result<(), PermError> {
        if rule.schema.is_empty() {
            return Err(PermError::Malformed("empty schema name".into()));
        }
        if matches!(rule.path_part_index, Some(i) if i < 2) {
            return Err(PermError::Malformed(format!(
                "schema `{}` places its path before part 2",
                rule.schema
            )));
        }
        self.rules.insert(rule.schema.clone(), rule);
        Ok(())
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn rule(&self, schema: &str) -> Option<&SchemaRule> {
        self.rules.get(schema)
    }

    pub fn rules(&self) -> impl Iterator<Item = &SchemaRule> {
        self.rules.values()
    }

    /// Parses a permission string; see the module docs for the grammar.
    pub fn parse(&self, raw: &str) -> Result<PermissionSpec, PermError> {
        parse_permission(raw, self)
    }
}

/// A parsed permission.
#[derive(Debug, Clone)]
pub struct PermissionSpec {
    raw: String,
    parts: Vec<PartSet>,
    path_tail: Option<String>,
    /// Path part index of the schema this spec was parsed under, if any.
    path_index: Option<usize>,
}

impl PartialEq for PermissionSpec {
    fn eq(&self, other: &Self) -> bool {
        self.parts == other.parts
            && self.path_tail == other.path_tail
            && self.path_index == other.path_index
    }
}

impl Eq for PermissionSpec {}

impl PermissionSpec {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn parts(&self) -> &[PartSet] {
        &self.parts
    }

    pub fn path_tail(&self) -> Option<&str> {
        self.path_tail.as_deref()
    }

    /// True when every part is a single literal (a concrete request).
    pub fn is_concrete(&self) -> bool {
        self.parts.iter().all(|p| p.single().is_some())
    }

    /// Deterministic rendering with sorted sub-parts and a normalized path.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (i, part) in self.parts.iter().enumerate() {
            if i > 0 {
                out.push(':');
            }
            out.push_str(&part.to_string());
        }
        if let Some(path) = &self.path_tail {
            out.push(':');
            out.push_str(path);
        }
        out
    }

    /// Returns true iff `self`, as a grant, covers everything `required` names.
    pub fn implies(&self, required: &PermissionSpec) -> Result<bool, PermError> {
        implies(self, required)
    }
}

impl fmt::Display for PermissionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn malformed(raw: &str, why: &str) -> PermError {
    PermError::Malformed(format!("`{raw}`: {why}"))
}

/// Parses `raw` under the schema rules in `rules`.
pub fn parse_permission(raw: &str, rules: &SchemaRegistry) -> Result<PermissionSpec, PermError> {
    if raw.is_empty() {
        return Err(malformed(raw, "empty permission"));
    }
    let schema = raw.split(':').next().unwrap_or_default();
    let rule = rules.rule(schema);
    if rule.is_none() && rules.strict {
        return Err(PermError::UnknownSchema(schema.to_string()));
    }
    let path_index = rule.and_then(|r| r.path_part_index);

    let (part_strs, path_raw): (Vec<&str>, Option<&str>) = match path_index {
        Some(k) => {
            let mut pieces: Vec<&str> = raw.splitn(k + 1, ':').collect();
            if pieces.len() == k + 1 {
                let path = pieces.pop();
                (pieces, path)
            } else {
                (pieces, None)
            }
        }
        None => (raw.split(':').collect(), None),
    };

    let mut parts = Vec::with_capacity(part_strs.len());
    for part in part_strs {
        parts.push(parse_part(raw, part)?);
    }

    let path_tail = path_raw.map(|p| normalize_path(raw, p)).transpose()?;

    Ok(PermissionSpec { raw: raw.to_string(), parts, path_tail, path_index })
}

fn parse_part(raw: &str, part: &str) -> Result<PartSet, PermError> {
    if part.is_empty() {
        return Err(malformed(raw, "empty part"));
    }
    if part == "*" {
        return Ok(PartSet::Wildcard);
    }
    let mut literals = BTreeSet::new();
    for lit in part.split(',') {
        if lit.is_empty() {
            return Err(malformed(raw, "empty sub-part"));
        }
        if lit.contains(PATTERN_CHARS) {
            return Err(malformed(raw, "wildcards must occupy a whole part"));
        }
        literals.insert(lit.to_string());
    }
    Ok(PartSet::Literals(literals))
}

fn normalize_path(raw: &str, path: &str) -> Result<String, PermError> {
    if !path.starts_with('/') {
        return Err(malformed(raw, "path must be absolute"));
    }
    let mut out = String::with_capacity(path.len());
    for segment in path.split('/').filter(|s| !s.is_empty()) {
        if segment == "." || segment == ".." {
            return Err(malformed(raw, "relative path segment"));
        }
        out.push('/');
        out.push_str(segment);
    }
    if out.is_empty() {
        out.push('/');
    }
    Ok(out)
}

/// Renders `spec` canonically.
pub fn canonicalize(spec: &PermissionSpec) -> String {
    spec.canonical()
}

/// `granted` covers `required` on the path dimension.
fn path_covers(granted: &str, required: &str) -> bool {
    if granted == "/" {
        return true;
    }
    match required.strip_prefix(granted) {
        Some(rest) => rest.is_empty() || rest.starts_with('/'),
        None => false,
    }
}

/// Decides whether `granted` implies `required`.
pub fn implies(granted: &PermissionSpec, required: &PermissionSpec) -> Result<bool, PermError> {
    if granted.path_index != required.path_index {
        // The only way to reach a path part without sharing a schema is a
        // wildcard or multi-literal first part that runs past the path index.
        let deep = match (granted.path_index, required.path_index) {
            (None, Some(k)) => granted.parts.len() > k && granted.parts[0].covers(&required.parts[0]),
            (Some(k), None) => required.parts.len() > k && granted.parts[0].covers(&required.parts[0]),
            _ => false,
        };
        if deep {
            return Err(PermError::SchemaMismatch {
                granted: granted.canonical(),
                required: required.canonical(),
            });
        }
    }

    let shared = granted.parts.len().min(required.parts.len());
    if !granted.parts[..shared]
        .iter()
        .zip(&required.parts[..shared])
        .all(|(g, r)| g.covers(r))
    {
        return Ok(false);
    }

    if granted.parts.len() > required.parts.len() {
        // Extra granted parts must be unrestricted, including any path.
        let extra_ok = granted.parts[shared..].iter().all(PartSet::is_wildcard);
        let path_ok = granted.path_tail.as_deref().is_none_or(|p| p == "/");
        return Ok(extra_ok && path_ok);
    }

    match (&granted.path_tail, &required.path_tail) {
        (Some(g), Some(r)) => Ok(path_covers(g, r)),
        (Some(g), None) => Ok(g == "/"),
        (None, _) => Ok(true),
    }
}
