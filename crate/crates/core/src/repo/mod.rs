//! Repository inspection: CMake build metadata, directory structure, and a
//! compact summary for prompt context.
//!
//! Files read: every `CMakeLists.txt` and `*.cmake` file outside excluded
//! vendor/build directories, plus the top-level README.

pub mod cmake;
mod distill;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::llm::GatewayError;
use crate::recipe::VersionDecl;

pub use distill::{distill, DistillMode, DistilledMetadata};
pub use tree::{map_tree, OverflowMarker, TreeMap};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("no recognized build file under {0}")]
    NoBuildSystem(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("version sidecar {0}")]
    Sidecar(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalyzeError + '_ {
    move |source| AnalyzeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildSystem {
    #[default]
    Cmake,
}

impl BuildSystem {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cmake => "cmake",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageRequirement {
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub path: String,
    pub excerpt: String,
}

/// Normalized description of a target repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoMetadata {
    pub package_name: String,
    pub build_system: BuildSystem,
    pub dependency_hints: BTreeSet<String>,
    pub build_options: BTreeSet<String>,
    pub feature_hints: BTreeSet<String>,
    #[serde(default)]
    pub language_requirements: Vec<LanguageRequirement>,
    #[serde(default)]
    pub version_info: Option<VersionDecl>,
    #[serde(default)]
    pub tree: TreeMap,
    #[serde(default)]
    pub raw_fragments: Vec<Fragment>,
    /// Hint -> identifier as written in the build files.
    #[serde(default)]
    pub hint_evidence: BTreeMap<String, String>,
    /// Option -> identifier as written in the build files.
    #[serde(default)]
    pub option_evidence: BTreeMap<String, String>,
    #[serde(default)]
    pub cmake_minimum: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RepoMetadata {
    /// Minimal metadata with the given name and no hints.
    pub fn named(package_name: &str) -> Self {
        Self {
            package_name: package_name.to_string(),
            build_system: BuildSystem::Cmake,
            dependency_hints: BTreeSet::new(),
            build_options: BTreeSet::new(),
            feature_hints: BTreeSet::new(),
            language_requirements: Vec::new(),
            version_info: None,
            tree: TreeMap::default(),
            raw_fragments: Vec::new(),
            hint_evidence: BTreeMap::new(),
            option_evidence: BTreeMap::new(),
            cmake_minimum: None,
            warnings: Vec::new(),
        }
    }
}

/// Build-file package names mapped to ecosystem package names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    pub aliases: BTreeMap<String, String>,
}

impl Default for AliasTable {
    fn default() -> Self {
        Self::shared().clone()
    }
}

impl AliasTable {
    /// The shipped table.
    pub fn shared() -> &'static AliasTable {
        static TABLE: OnceLock<AliasTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            toml::from_str(include_str!("../../assets/cmake_aliases.toml")).expect("shipped alias table parses")
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Lowercases and applies the alias mapping.
    pub fn resolve(&self, raw: &str) -> String {
        let lower = raw.trim().to_ascii_lowercase();
        self.aliases.get(&lower).cloned().unwrap_or(lower)
    }
}

/// Externally supplied version information.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionSidecar {
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub checksum: Option<String>,
    #[serde(default)]
    pub releases: Vec<String>,
}

impl VersionSidecar {
    pub fn load(path: &Path) -> Result<Self, AnalyzeError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| AnalyzeError::Sidecar(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub package_name: Option<String>,
    pub max_depth: usize,
    pub max_entries: usize,
    pub per_dir_cap: usize,
    pub version_override: Option<VersionDecl>,
    pub release_tags: Vec<String>,
    pub archive_url: Option<String>,
    pub sidecar: Option<PathBuf>,
    pub aliases: AliasTable,
    pub exclude_dirs: Vec<String>,
    pub fragment_cap: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            package_name: None,
            max_depth: 4,
            max_entries: 400,
            per_dir_cap: 64,
            version_override: None,
            release_tags: Vec::new(),
            archive_url: None,
            sidecar: None,
            aliases: AliasTable::default(),
            exclude_dirs: [
                ".git",
                ".svn",
                "build",
                "_build",
                "third_party",
                "thirdparty",
                "3rdparty",
                "extern",
                "external",
                "vendor",
                "node_modules",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            fragment_cap: 400,
        }
    }
}

const BUILD_FILE_DEPTH: usize = 8;
const EXCERPT_CAP: usize = 600;
const README_CAP: usize = 2000;

fn collect_build_files(root: &Path, opts: &AnalyzeOptions) -> Result<Vec<PathBuf>, AnalyzeError> {
    let mut out = Vec::new();
    let mut stack = vec![(root.to_path_buf(), 0usize)];
    while let Some((dir, depth)) = stack.pop() {
        let mut entries: Vec<_> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().to_string();
            let Ok(ft) = e.file_type() else { continue };
            let path = e.path();
            if ft.is_dir() {
                if depth + 1 < BUILD_FILE_DEPTH && !opts.exclude_dirs.iter().any(|x| x == &name) {
                    stack.push((path, depth + 1));
                }
            } else if ft.is_file() && (name == "CMakeLists.txt" || name.ends_with(".cmake")) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn excerpt(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

const CMAKE_KEYWORDS: [&str; 12] = [
    "REQUIRED",
    "QUIET",
    "CONFIG",
    "MODULE",
    "NO_MODULE",
    "COMPONENTS",
    "OPTIONAL_COMPONENTS",
    "IMPORTED_TARGET",
    "GLOBAL",
    "EXACT",
    "NO_DEFAULT_PATH",
    "NO_POLICY_SCOPE",
];

/// Variant-style name of a CMake option: `CabanaPD_ENABLE_TESTING` -> `tests`.
pub fn normalize_option(raw: &str, project: Option<&str>) -> String {
    let mut s = raw.trim().to_ascii_lowercase();
    if let Some(p) = project {
        let prefix = format!("{}_", p.to_ascii_lowercase());
        if s.len() > prefix.len() && s.starts_with(&prefix) {
            s = s[prefix.len()..].to_string();
        }
    }
    for prefix in ["enable_", "use_", "with_", "build_", "have_"] {
        if s.len() > prefix.len() && s.starts_with(prefix) {
            s = s[prefix.len()..].to_string();
            break;
        }
    }
    match s.as_str() {
        "test" | "testing" | "tests" | "unit_tests" => "tests".into(),
        "benchmark" | "benchmarking" | "benchmarks" | "bench" => "benchmarks".into(),
        "example" | "examples" => "examples".into(),
        "shared_libs" | "shared" => "shared".into(),
        "doc" | "docs" | "documentation" => "docs".into(),
        _ => s,
    }
}

fn feature_for_package(name: &str) -> Option<&'static str> {
    match name {
        "mpi" => Some("mpi"),
        "openmp" => Some("openmp"),
        "python" | "py-pybind11" => Some("python"),
        "cuda" => Some("cuda"),
        "hip" => Some("rocm"),
        _ => None,
    }
}

fn feature_for_language(lang: &str) -> Option<&'static str> {
    match lang {
        "cuda" => Some("cuda"),
        "hip" => Some("rocm"),
        "fortran" => Some("fortran"),
        _ => None,
    }
}

fn features_for_option(name: &str) -> Vec<&'static str> {
    let n = name.to_ascii_lowercase();
    let mut out = Vec::new();
    for (needle, feature) in [
        ("test", "tests"),
        ("bench", "benchmarks"),
        ("cuda", "cuda"),
        ("hip", "rocm"),
        ("rocm", "rocm"),
        ("mpi", "mpi"),
        ("openmp", "openmp"),
        ("python", "python"),
        ("fortran", "fortran"),
    ] {
        if n.contains(needle) {
            out.push(feature);
        }
    }
    out
}

fn language_hint(lang: &str) -> Option<String> {
    match lang {
        "c" => Some("c".into()),
        "cxx" => Some("cxx".into()),
        "fortran" => Some("fortran".into()),
        "cuda" => Some("cuda".into()),
        "hip" => Some("hip".into()),
        _ => None,
    }
}

fn normalize_language(raw: &str) -> Option<String> {
    let l = raw.to_ascii_lowercase();
    match l.as_str() {
        "c" | "cxx" | "cuda" | "hip" | "fortran" | "objc" | "objcxx" | "ispc" | "swift" | "asm" => Some(l),
        "none" => None,
        _ => None,
    }
}

/// Parses a release tag such as `v1.2.3` into its numeric components.
fn tag_version(tag: &str) -> Option<(Vec<u64>, String)> {
    let start = tag.find(|c: char| c.is_ascii_digit())?;
    let v = &tag[start..];
    let end = v.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(v.len());
    let v = v[..end].trim_end_matches('.');
    let parts: Option<Vec<u64>> = v.split('.').map(|p| p.parse().ok()).collect();
    Some((parts?, v.to_string()))
}

/// Highest version among release tags.
pub fn latest_release(tags: &[String]) -> Option<String> {
    tags.iter().filter_map(|t| tag_version(t)).max_by(|a, b| a.0.cmp(&b.0)).map(|(_, v)| v)
}

#[derive(Default)]
struct Collector {
    hints: BTreeMap<String, String>,
    options: BTreeMap<String, String>,
    features: BTreeSet<String>,
    languages: BTreeMap<String, Option<String>>,
    fragments: Vec<Fragment>,
    project_name: Option<String>,
    project_version: Option<String>,
    cmake_minimum: Option<String>,
    warnings: Vec<String>,
}

impl Collector {
    fn hint(&mut self, name: String, evidence: &str) {
        self.hints.entry(name).or_insert_with(|| evidence.to_string());
    }

    fn language(&mut self, raw: &str) {
        if let Some(lang) = normalize_language(raw) {
            if let Some(h) = language_hint(&lang) {
                self.hint(h, raw);
            }
            if let Some(f) = feature_for_language(&lang) {
                self.features.insert(f.into());
            }
            self.languages.entry(lang).or_insert(None);
        }
    }

    fn option(&mut self, raw: &str) {
        if raw.contains("${") || raw.is_empty() {
            return;
        }
        let lower = raw.to_ascii_lowercase();
        self.options.entry(lower).or_insert_with(|| raw.to_string());
        let normalized = normalize_option(raw, self.project_name.as_deref());
        if !normalized.is_empty() {
            self.options.entry(normalized).or_insert_with(|| raw.to_string());
        }
        for f in features_for_option(raw) {
            self.features.insert(f.into());
        }
    }

    fn command(&mut self, c: &cmake::CMakeCommand, path: &str, top_level: bool, aliases: &AliasTable) {
        let relevant = match c.name.as_str() {
            "project" => {
                let Some(name) = c.arg(0) else { return };
                let rest: Vec<&str> = c.values().skip(1).collect();
                if top_level && self.project_name.is_none() {
                    self.project_name = Some(name.to_string());
                    if let Some(i) = rest.iter().position(|a| *a == "VERSION") {
                        self.project_version = rest.get(i + 1).map(|v| v.to_string());
                    }
                }
                let keywords = ["VERSION", "DESCRIPTION", "HOMEPAGE_URL", "LANGUAGES"];
                let langs: Vec<&str> = match rest.iter().position(|a| *a == "LANGUAGES") {
                    Some(i) => rest[i + 1..].iter().take_while(|a| !keywords.contains(a)).copied().collect(),
                    None if !rest.iter().any(|a| keywords.contains(a)) => rest.clone(),
                    None => Vec::new(),
                };
                if langs.is_empty() {
                    // CMake enables C and CXX when no language is named
                    for lang in ["c", "cxx"] {
                        self.hint(lang.into(), "project");
                        self.languages.entry(lang.into()).or_insert(None);
                    }
                } else {
                    for l in langs {
                        self.language(l);
                    }
                }
                true
            }
            "enable_language" => {
                for l in c.values().filter(|v| *v != "OPTIONAL") {
                    self.language(l);
                }
                true
            }
            "cmake_minimum_required" => {
                let vals: Vec<&str> = c.values().collect();
                if let Some(i) = vals.iter().position(|a| *a == "VERSION") {
                    if let Some(v) = vals.get(i + 1) {
                        let v = v.split("...").next().unwrap_or(v);
                        self.cmake_minimum.get_or_insert(v.to_string());
                    }
                }
                true
            }
            "find_package" | "find_dependency" => {
                let Some(name) = c.arg(0) else { return };
                if name.contains("${") {
                    self.warnings.push(format!("{path}:{}: unresolved package name {name}", c.line));
                } else {
                    let resolved = aliases.resolve(name);
                    if let Some(f) = feature_for_package(&resolved) {
                        self.features.insert(f.into());
                    }
                    self.hint(resolved, name);
                }
                true
            }
            "pkg_check_modules" | "pkg_search_module" => {
                for m in c.values().skip(1).filter(|v| !CMAKE_KEYWORDS.contains(v) && !v.contains("${")) {
                    let module = m.split(['<', '>', '=']).next().unwrap_or(m).trim();
                    if !module.is_empty() {
                        self.hint(aliases.resolve(module), module);
                    }
                }
                true
            }
            "option" | "cmake_dependent_option" => {
                if let Some(name) = c.arg(0) {
                    self.option(name);
                }
                true
            }
            "set" => {
                let vals: Vec<&str> = c.values().collect();
                let Some(name) = vals.first().copied() else { return };
                if let Some(i) = vals.iter().position(|a| *a == "CACHE") {
                    if vals.get(i + 1) == Some(&"BOOL") {
                        self.option(name);
                    }
                    true
                } else if let Some(lang) = name.strip_prefix("CMAKE_").and_then(|n| n.strip_suffix("_STANDARD")) {
                    if let (Some(l), Some(std)) = (normalize_language(lang), vals.get(1)) {
                        self.languages.insert(l, Some(std.to_string()));
                    }
                    true
                } else {
                    false
                }
            }
            "target_compile_features" => {
                for v in c.values() {
                    for (prefix, lang) in [("cxx_std_", "cxx"), ("c_std_", "c"), ("cuda_std_", "cuda")] {
                        if let Some(std) = v.strip_prefix(prefix) {
                            let entry = self.languages.entry(lang.into()).or_insert(None);
                            if entry.is_none() {
                                *entry = Some(std.to_string());
                            }
                        }
                    }
                }
                true
            }
            "enable_testing" => {
                self.features.insert("tests".into());
                true
            }
            "include" => {
                if c.arg(0) == Some("CTest") {
                    self.features.insert("tests".into());
                }
                c.arg(0).is_some_and(|a| a == "CTest" || a.starts_with("Find") || a == "FetchContent")
            }
            "fetchcontent_declare" | "add_subdirectory" | "check_language" => true,
            _ => c.text.contains("$<") && c.name.starts_with("target_"),
        };
        if relevant && self.fragments.len() < usize::MAX {
            self.fragments.push(Fragment {
                path: path.to_string(),
                excerpt: excerpt(&c.text, EXCERPT_CAP),
            });
        }
    }
}

/// Extracts build metadata from a repository checkout.
pub fn extract_metadata(repo_root: &Path, opts: &AnalyzeOptions) -> Result<RepoMetadata, AnalyzeError> {
    let meta = fs::metadata(repo_root).map_err(io_err(repo_root))?;
    if !meta.is_dir() {
        return Err(AnalyzeError::NoBuildSystem(repo_root.to_path_buf()));
    }
    let files = collect_build_files(repo_root, opts)?;
    if !files.iter().any(|f| f.file_name().is_some_and(|n| n == "CMakeLists.txt")) {
        return Err(AnalyzeError::NoBuildSystem(repo_root.to_path_buf()));
    }
    let top = repo_root.join("CMakeLists.txt");
    // the top-level file goes first so its project() names the package
    let mut ordered: Vec<&PathBuf> = files.iter().filter(|f| **f == top).collect();
    ordered.extend(files.iter().filter(|f| **f != top));

    let mut col = Collector::default();
    for (n, path) in ordered.iter().enumerate() {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let text = String::from_utf8_lossy(&bytes);
        let relpath = rel(repo_root, path);
        let (cmds, warnings) = cmake::parse_cmake(&text);
        col.warnings.extend(warnings.into_iter().map(|w| format!("{relpath}: {w}")));
        let top_level = n == 0 && **path == top || (n == 0 && !top.exists());
        for c in &cmds {
            col.command(c, &relpath, top_level, &opts.aliases);
        }
    }
    col.hint("cmake".into(), "CMakeLists.txt");
    if col.fragments.len() > opts.fragment_cap {
        col.warnings.push(format!(
            "{} fragments dropped past cap {}",
            col.fragments.len() - opts.fragment_cap,
            opts.fragment_cap
        ));
        col.fragments.truncate(opts.fragment_cap);
    }
    if !col.fragments.iter().any(|f| f.path == "CMakeLists.txt") {
        col.fragments.insert(
            0,
            Fragment {
                path: rel(repo_root, ordered[0]),
                excerpt: String::new(),
            },
        );
    }
    if let Some(readme) = find_readme(repo_root) {
        if let Ok(text) = fs::read(&readme) {
            col.fragments.push(Fragment {
                path: rel(repo_root, &readme),
                excerpt: excerpt(&String::from_utf8_lossy(&text), README_CAP),
            });
        }
    }

    let package_name = opts.package_name.clone().unwrap_or_else(|| {
        col.project_name
            .clone()
            .filter(|p| !p.contains("${"))
            .unwrap_or_else(|| {
                repo_root
                    .canonicalize()
                    .ok()
                    .and_then(|p| p.file_name().map(|n| n.to_string_lossy().to_string()))
                    .unwrap_or_else(|| "package".into())
            })
            .to_ascii_lowercase()
            .replace('_', "-")
    });

    let version_info = resolve_version(opts, col.project_version.as_deref())?;
    let tree = map_tree(repo_root, opts.max_depth, opts.max_entries, opts.per_dir_cap)?;

    Ok(RepoMetadata {
        package_name,
        build_system: BuildSystem::Cmake,
        dependency_hints: col.hints.keys().cloned().collect(),
        build_options: col.options.keys().cloned().collect(),
        feature_hints: col.features,
        language_requirements: col
            .languages
            .into_iter()
            .map(|(language, standard)| LanguageRequirement { language, standard })
            .collect(),
        version_info,
        tree,
        raw_fragments: col.fragments,
        hint_evidence: col.hints,
        option_evidence: col.options,
        cmake_minimum: col.cmake_minimum,
        warnings: col.warnings,
    })
}

fn find_readme(root: &Path) -> Option<PathBuf> {
    let mut entries: Vec<_> = fs::read_dir(root).ok()?.filter_map(Result::ok).map(|e| e.path()).collect();
    entries.sort();
    entries.into_iter().find(|p| {
        p.is_file()
            && p.file_name()
                .map(|n| n.to_string_lossy().to_ascii_lowercase().starts_with("readme"))
                .unwrap_or(false)
    })
}

/// Version precedence: manual override or sidecar, then the latest release
/// tag, then `project(... VERSION x)`.
fn resolve_version(opts: &AnalyzeOptions, project_version: Option<&str>) -> Result<Option<VersionDecl>, AnalyzeError> {
    let sidecar = match &opts.sidecar {
        Some(p) => Some(VersionSidecar::load(p)?),
        None => None,
    };
    let mut tags = opts.release_tags.clone();
    if let Some(s) = &sidecar {
        tags.extend(s.releases.iter().cloned());
    }
    let mut decl = if let Some(v) = &opts.version_override {
        Some(v.clone())
    } else if let Some(v) = sidecar.as_ref().and_then(|s| s.version.clone()) {
        Some(VersionDecl {
            version_string: v,
            source_url: sidecar.as_ref().and_then(|s| s.url.clone()),
            checksum: sidecar.as_ref().and_then(|s| s.checksum.clone()),
        })
    } else if let Some(v) = latest_release(&tags) {
        Some(VersionDecl {
            version_string: v,
            source_url: None,
            checksum: None,
        })
    } else {
        project_version.filter(|v| !v.contains("${")).map(|v| VersionDecl {
            version_string: v.to_string(),
            source_url: None,
            checksum: None,
        })
    };
    if let (Some(d), Some(url)) = (decl.as_mut(), &opts.archive_url) {
        if d.source_url.is_none() {
            d.source_url = Some(url.clone());
        }
    }
    if decl.is_none() {
        if let Some(url) = &opts.archive_url {
            let version = url
                .rsplit('/')
                .next()
                .and_then(tag_version)
                .map(|(_, v)| v)
                .unwrap_or_else(|| "main".into());
            decl = Some(VersionDecl {
                version_string: version,
                source_url: Some(url.clone()),
                checksum: None,
            });
        }
    }
    Ok(decl)
}
