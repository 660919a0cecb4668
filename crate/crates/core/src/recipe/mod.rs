//! Directive-level model of package recipes.
//!
//! A recipe is a single class written in a constrained subset of Python.
//! [`parse_recipe`] reads the class header, the `version`, `variant`,
//! `depends_on` and `conflicts` directives at class scope, string class
//! attributes, and the configuration-argument keys set inside argument
//! methods such as `cmake_args`. [`render_recipe`] writes a model back out
//! as canonical recipe text.

mod lexer;
mod parser;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use parser::parse_recipe;
pub(crate) use parser::{parse_with_layout, ItemKind};
pub use render::render_recipe;

/// Error raised for text outside the recipe grammar.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Parses raw bytes, rejecting invalid UTF-8 as a parse error.
pub fn parse_recipe_bytes(bytes: &[u8]) -> Result<Recipe, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_recipe(text),
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
            Err(ParseError::new(line, "source is not valid UTF-8"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionDecl {
    pub version_string: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantDefault {
    Bool(bool),
    Str(String),
    /// A non-literal default, kept as its source text.
    Expr { expr: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<VariantDefault>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepType {
    Build,
    Link,
    Run,
    Test,
}

impl DepType {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "build" => Some(Self::Build),
            "link" => Some(Self::Link),
            "run" => Some(Self::Run),
            "test" => Some(Self::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Build => "build",
            Self::Link => "link",
            Self::Run => "run",
            Self::Test => "test",
        }
    }
}

/// One `depends_on` directive as the tuple (name, spec, condition, types).
///
/// `spec` holds the constraint text following the package name (for
/// `depends_on("mpi@3")` it is `@3`). `spec` and `condition` are stored
/// whitespace-normalized. An empty `types` set means the ecosystem default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub name: String,
    #[serde(default)]
    pub spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(default)]
    pub types: BTreeSet<DepType>,
}

impl Dependency {
    pub fn new(name: &str, spec: &str) -> Self {
        Self {
            name: name.to_string(),
            spec: normalize_constraint(spec),
            condition: None,
            types: BTreeSet::new(),
        }
    }

    pub fn with_types(mut self, types: &[DepType]) -> Self {
        self.types = types.iter().copied().collect();
        self
    }

    pub fn when(mut self, condition: &str) -> Self {
        let c = normalize_constraint(condition);
        self.condition = (!c.is_empty()).then_some(c);
        self
    }

    /// Splits a dependency spec such as `cmake@3.5:` or `kokkos +cuda` into
    /// the package name and the remaining normalized constraint.
    pub fn from_spec(spec: &str) -> Self {
        let spec = spec.trim();
        let end = spec
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'))
            .unwrap_or(spec.len());
        // a trailing '.' would belong to a version, never a name
        let name = spec[..end].trim_end_matches('.');
        Self::new(name, &spec[name.len()..])
    }

    /// The spec text as written in a directive (`name` followed by constraint).
    pub fn full_spec(&self) -> String {
        if self.spec.is_empty() {
            self.name.clone()
        } else if self.spec.starts_with(['@', '+', '~', '%', '^']) {
            format!("{}{}", self.name, self.spec)
        } else {
            format!("{} {}", self.name, self.spec)
        }
    }
}

impl fmt::Display for Dependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.full_spec())?;
        if !self.types.is_empty() {
            let t: Vec<_> = self.types.iter().map(|t| t.as_str()).collect();
            write!(f, " ({})", t.join(","))?;
        }
        if let Some(c) = &self.condition {
            write!(f, " when {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictDecl {
    pub spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
}

/// Configuration argument keys (e.g. `ENABLE_MPI`), case-preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigKeySet(pub BTreeSet<String>);

impl ConfigKeySet {
    pub fn insert(&mut self, key: &str) -> bool {
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return false;
        }
        self.0.insert(key.to_string())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

impl<S: AsRef<str>> FromIterator<S> for ConfigKeySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = Self::default();
        for k in iter {
            set.insert(k.as_ref());
        }
        set
    }
}

/// A directive the grammar cannot interpret, e.g. one inside a loop or with
/// a computed first argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpaqueDirective {
    pub line: usize,
    pub directive: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub opaque_directives: Vec<OpaqueDirective>,
    /// Build-argument keys that could not be resolved statically.
    #[serde(default)]
    pub dynamic_config_args: usize,
    /// Directives captured inside `with when(...)` blocks; their condition
    /// is not attached to the directive.
    #[serde(default)]
    pub when_context_directives: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Parsed recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub class_name: String,
    pub base_classes: Vec<String>,
    #[serde(default)]
    pub versions: Vec<VersionDecl>,
    #[serde(default)]
    pub variants: Vec<VariantDecl>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default)]
    pub conflicts: Vec<ConflictDecl>,
    #[serde(default)]
    pub config_keys: ConfigKeySet,
    /// String-valued class attributes such as `homepage`, `url`, `git`.
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub raw_text: String,
}

impl Recipe {
    /// Compares the directive content only, ignoring source text, attributes
    /// and diagnostics.
    pub fn same_directives(&self, other: &Recipe) -> bool {
        self.class_name == other.class_name
            && self.base_classes == other.base_classes
            && self.versions == other.versions
            && self.variants == other.variants
            && self.dependencies == other.dependencies
            && self.conflicts == other.conflicts
            && self.config_keys == other.config_keys
    }

    pub fn dependency_names(&self) -> BTreeSet<String> {
        self.dependencies.iter().map(|d| d.name.clone()).collect()
    }

    pub fn variant_names(&self) -> BTreeSet<String> {
        self.variants.iter().map(|v| v.name.clone()).collect()
    }

    /// Build systems implied by the base classes (`CMakePackage` -> `cmake`).
    pub fn build_systems(&self) -> BTreeSet<String> {
        self.base_classes
            .iter()
            .filter(|b| is_build_system_class(b))
            .map(|b| build_system_of_class(b))
            .collect()
    }

    /// Whether some version directive or class attribute names a source.
    pub fn has_download_directive(&self) -> bool {
        ["url", "git", "hg", "svn", "list_url", "pypi", "gitlab", "cran"]
            .iter()
            .any(|k| self.attributes.contains_key(*k))
            || self.versions.iter().any(|v| v.source_url.is_some())
    }
}

/// Returns the set of configuration-argument keys of a parsed recipe.
pub fn extract_config_keys(recipe: &Recipe) -> ConfigKeySet {
    recipe.config_keys.clone()
}

/// Returns the recipe's dependencies minus those inherent to its package
/// class, in source order.
pub fn extract_dependencies(recipe: &Recipe, class_inherent: &BTreeSet<String>) -> Vec<Dependency> {
    recipe
        .dependencies
        .iter()
        .filter(|d| !class_inherent.contains(&d.name))
        .cloned()
        .collect()
}

/// Trims, and collapses internal whitespace runs to a single space.
pub fn normalize_constraint(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const MIXIN_CLASSES: [&str; 9] = [
    "CudaPackage",
    "ROCmPackage",
    "SourceforgePackage",
    "SourcewarePackage",
    "GNUMirrorPackage",
    "XorgPackage",
    "PythonExtension",
    "CompilerPackage",
    "SYCLPackage",
];

/// Build-system base classes end in `Package`; accelerator and mirror
/// mixins do not count.
pub fn is_build_system_class(name: &str) -> bool {
    name.ends_with("Package") && !MIXIN_CLASSES.contains(&name)
}

/// `CMakePackage` -> `cmake`, `Package` -> `generic`.
pub fn build_system_of_class(name: &str) -> String {
    let stem = name.strip_suffix("Package").unwrap_or(name);
    if stem.is_empty() {
        "generic".to_string()
    } else {
        stem.to_ascii_lowercase()
    }
}

/// Class name for a package name: `cabana-pd` -> `CabanaPd`.
pub fn class_name_for(package: &str) -> String {
    let mut out = String::new();
    for part in package.split(['-', '_']).filter(|p| !p.is_empty()) {
        let mut chars = part.chars();
        if let Some(first) = chars.next() {
            out.extend(first.to_uppercase());
            out.push_str(chars.as_str());
        }
    }
    if out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}
