//! Package knowledge base: parsed reference recipes as a dependency graph,
//! plus the reference-selection strategies used to build prompts.

mod chunk;
mod cypher;
mod embed;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llm::GatewayError;
use crate::recipe::{parse_recipe, Recipe};
use crate::repo::{AliasTable, RepoMetadata};
use crate::text::sha256_hex;

pub use chunk::{chunk_recipe, ChunkKind, RecipeChunk};
pub use cypher::{export_cypher, similar_query};
pub use embed::{
    build_embedding_index, cosine, feature_card, query_string, retrieve_by_embedding, EmbeddingIndex, EntryKind,
    FeatureCard, IndexEntry, DEFAULT_CHUNKS_PER_PACKAGE,
};

pub const SIMILAR_PREAMBLE: &str =
    "the recipe was found to be one of the most \"similar\" to the target package, based on the supplied metadata";
pub const RANDOM_PREAMBLE: &str =
    "this recipe was randomly selected. it will provide useful heuristics to you about spack packages.";

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("package {0:?} appears more than once")]
    DuplicateName(String),
    #[error("knowledge base is empty")]
    EmptyStore,
    #[error("reference count must be at least 1")]
    InvalidCount,
    #[error("affinity weights must be nonnegative and finite")]
    InvalidWeights,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("stored content hash does not match the package data")]
    HashMismatch,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageNode {
    pub name: String,
    pub build_systems: BTreeSet<String>,
    pub dependencies: BTreeSet<String>,
    pub variants: BTreeSet<String>,
    pub recipe_text: String,
    pub recipe: Recipe,
}

/// One corpus input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub source: String,
    /// Taken from the recipe's base classes when absent.
    #[serde(default)]
    pub build_systems: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ingested: usize,
    /// (package, parse error) for recipes left out.
    pub skipped: Vec<(String, String)>,
    /// Package -> dependency names with no node in the store.
    pub dangling: BTreeMap<String, BTreeSet<String>>,
}

/// Package store keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub packages: BTreeMap<String, PackageNode>,
    pub content_hash: String,
}

#[derive(Serialize)]
struct HashView<'a> {
    name: &'a str,
    build_systems: &'a BTreeSet<String>,
    recipe_text: &'a str,
}

fn hash_packages(packages: &BTreeMap<String, PackageNode>) -> String {
    let view: Vec<HashView<'_>> = packages
        .values()
        .map(|p| HashView {
            name: &p.name,
            build_systems: &p.build_systems,
            recipe_text: &p.recipe_text,
        })
        .collect();
    sha256_hex(&serde_json::to_vec(&view).expect("serializable"))
}

/// Parses every corpus recipe into a package node.
pub fn ingest(recipes: Vec<CorpusEntry>) -> Result<(Store, IngestReport), KbError> {
    let mut seen = BTreeSet::new();
    for r in &recipes {
        if !seen.insert(r.name.clone()) {
            return Err(KbError::DuplicateName(r.name.clone()));
        }
    }
    let mut report = IngestReport::default();
    let mut packages = BTreeMap::new();
    for entry in recipes {
        let recipe = match parse_recipe(&entry.source) {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push((entry.name, e.to_string()));
                continue;
            }
        };
        let build_systems = entry.build_systems.unwrap_or_else(|| recipe.build_systems());
        packages.insert(
            entry.name.clone(),
            PackageNode {
                build_systems: build_systems.iter().map(|b| b.to_ascii_lowercase()).collect(),
                dependencies: recipe.dependency_names(),
                variants: recipe.variant_names(),
                name: entry.name,
                recipe_text: entry.source,
                recipe,
            },
        );
    }
    for p in packages.values() {
        let missing: BTreeSet<String> = p
            .dependencies
            .iter()
            .filter(|d| !packages.contains_key(*d))
            .cloned()
            .collect();
        if !missing.is_empty() {
            report.dangling.insert(p.name.clone(), missing);
        }
    }
    report.ingested = packages.len();
    let content_hash = hash_packages(&packages);
    Ok((
        Store {
            packages,
            content_hash,
        },
        report,
    ))
}

#[derive(Debug, Deserialize)]
struct Manifest {
    #[serde(default, rename = "package")]
    packages: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    name: String,
    file: PathBuf,
    #[serde(default)]
    build_systems: Option<BTreeSet<String>>,
}

/// Reads a corpus directory. With a `manifest.toml` (`[[package]]` tables
/// with `name`, `file`, optional `build_systems`) the listed files are used;
/// otherwise every `<name>/package.py` and `<name>.py` is taken.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, KbError> {
    let manifest_path = dir.join("manifest.toml");
    let read = |p: &Path| -> Result<String, KbError> {
        let bytes = fs::read(p).map_err(io_err(p))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    };
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| KbError::Format(format!("manifest: {e}")))?;
        return m
            .packages
            .into_iter()
            .map(|e| {
                Ok(CorpusEntry {
                    source: read(&dir.join(&e.file))?,
                    name: e.name,
                    build_systems: e.build_systems,
                })
            })
            .collect();
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .collect();
    entries.sort();
    for p in entries {
        let name = p.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        let file = if p.is_dir() {
            p.join("package.py")
        } else if p.extension().is_some_and(|e| e == "py") {
            p.clone()
        } else {
            continue;
        };
        if file.is_file() {
            out.push(CorpusEntry {
                name: name.replace('_', "-"),
                source: read(&file)?,
                build_systems: None,
            });
        }
    }
    Ok(out)
}

impl Store {
    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&PackageNode> {
        self.packages.get(name)
    }

    /// Edges as (package, dependency) pairs.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.packages
            .values()
            .flat_map(|p| p.dependencies.iter().map(move |d| (p.name.as_str(), d.as_str())))
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let json = serde_json::to_string(self).map_err(|e| KbError::Format(e.to_string()))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let store: Store = serde_json::from_str(&text).map_err(|e| KbError::Format(format!("{}: {e}", path.display())))?;
        if hash_packages(&store.packages) != store.content_hash {
            return Err(KbError::HashMismatch);
        }
        Ok(store)
    }

    /// Names of the target's own entries: exact match, or a store name
    /// containing the target name case-insensitively.
    pub fn exclusions(&self, target: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.packages.keys().filter(|n| is_excluded(n, target)).cloned().collect();
        out.insert(target.to_string());
        out
    }
}

pub(crate) fn is_excluded(candidate: &str, target: &str) -> bool {
    candidate == target || candidate.to_lowercase().contains(&target.to_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityWeights {
    pub w_d: f64,
    pub w_b: f64,
}

impl Default for AffinityWeights {
    fn default() -> Self {
        Self { w_d: 0.6, w_b: 0.4 }
    }
}

impl AffinityWeights {
    pub fn validate(&self) -> Result<(), KbError> {
        if [self.w_d, self.w_b].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(KbError::InvalidWeights)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityScore {
    pub candidate: String,
    pub score: f64,
    pub dep_overlap: usize,
    pub opt_overlap: usize,
    pub weights: AffinityWeights,
}

/// Target identifier sets: dependency hints (lowercased, aliased) and build
/// options (lowercased).
pub fn target_sets(target: &RepoMetadata) -> (BTreeSet<String>, BTreeSet<String>) {
    let aliases = AliasTable::shared();
    let deps = target.dependency_hints.iter().map(|h| aliases.resolve(h)).collect();
    let opts = target.build_options.iter().map(|o| o.to_lowercase()).collect();
    (deps, opts)
}

fn lower_set(s: &BTreeSet<String>) -> BTreeSet<String> {
    s.iter().map(|x| x.to_lowercase()).collect()
}

fn affinity_from_sets(
    deps: &BTreeSet<String>,
    opts: &BTreeSet<String>,
    candidate: &PackageNode,
    weights: AffinityWeights,
) -> AffinityScore {
    let dep_overlap = lower_set(&candidate.dependencies).intersection(deps).count();
    let opt_overlap = lower_set(&candidate.variants).intersection(opts).count();
    AffinityScore {
        candidate: candidate.name.clone(),
        score: weights.w_d * dep_overlap as f64 + weights.w_b * opt_overlap as f64,
        dep_overlap,
        opt_overlap,
        weights,
    }
}

/// Weighted overlap of dependencies and build options between a target and
/// a stored package.
pub fn affinity(target: &RepoMetadata, candidate: &PackageNode, weights: AffinityWeights) -> AffinityScore {
    let (deps, opts) = target_sets(target);
    affinity_from_sets(&deps, &opts, candidate, weights)
}

/// Sort key for affinity ranking. Scores are compared at 1e-9 resolution so
/// that mathematically equal sums with different rounding tie.
pub fn rank_key(score: f64) -> i64 {
    (score * 1e9).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    None,
    Similar,
    Random,
    RandomSameBuildSystem,
    Embedding,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Similar => "similar",
            Self::Random => "random",
            Self::RandomSameBuildSystem => "random_same_build_system",
            Self::Embedding => "embedding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Self::None,
            "similar" => Self::Similar,
            "random" => Self::Random,
            "random_same_build_system" | "random-same-build-system" => Self::RandomSameBuildSystem,
            "embedding" => Self::Embedding,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceItem {
    pub package: String,
    /// Full recipe, or the selected chunks joined by blank lines.
    pub text: String,
    pub role_preamble: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBundle {
    pub strategy: Strategy,
    pub items: Vec<ReferenceItem>,
    pub exclusions: BTreeSet<String>,
    /// Fewer eligible candidates than requested.
    #[serde(default)]
    pub insufficient: bool,
}

impl ReferenceBundle {
    pub fn none() -> Self {
        Self {
            strategy: Strategy::None,
            items: Vec::new(),
            exclusions: BTreeSet::new(),
            insufficient: false,
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.package.as_str()).collect()
    }
}

/// All eligible candidates ranked by affinity, best first, ties by name.
pub fn rank_similar(store: &Store, target: &RepoMetadata, weights: AffinityWeights) -> Vec<AffinityScore> {
    let (deps, opts) = target_sets(target);
    let build = target.build_system.as_str();
    let mut scored: Vec<AffinityScore> = store
        .packages
        .values()
        .filter(|p| p.build_systems.contains(build) && !is_excluded(&p.name, &target.package_name))
        .map(|p| affinity_from_sets(&deps, &opts, p, weights))
        .collect();
    scored.sort_by(|a, b| {
        rank_key(b.score)
            .cmp(&rank_key(a.score))
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    scored
}

/// Top-`count` packages by affinity among those sharing the target's build
/// system, the target itself excluded.
pub fn retrieve_similar(
    store: &Store,
    target: &RepoMetadata,
    count: usize,
    weights: AffinityWeights,
) -> Result<ReferenceBundle, KbError> {
    if store.is_empty() {
        return Err(KbError::EmptyStore);
    }
    if count == 0 {
        return Err(KbError::InvalidCount);
    }
    weights.validate()?;
    let ranked = rank_similar(store, target, weights);
    let items: Vec<ReferenceItem> = ranked
        .into_iter()
        .take(count)
        .map(|s| ReferenceItem {
            text: store.packages[&s.candidate].recipe_text.clone(),
            package: s.candidate,
            role_preamble: SIMILAR_PREAMBLE.into(),
            score: Some(s.score),
        })
        .collect();
    Ok(ReferenceBundle {
        strategy: Strategy::Similar,
        insufficient: items.len() < count,
        items,
        exclusions: store.exclusions(&target.package_name),
    })
}

/// Uniform sample without replacement, seeded.
pub fn retrieve_random(
    store: &Store,
    target: &RepoMetadata,
    count: usize,
    same_build_system: bool,
    rng_seed: u64,
) -> Result<ReferenceBundle, KbError> {
    if store.is_empty() {
        return Err(KbError::EmptyStore);
    }
    if count == 0 {
        return Err(KbError::InvalidCount);
    }
    let build = target.build_system.as_str();
    let eligible: Vec<&PackageNode> = store
        .packages
        .values()
        .filter(|p| !is_excluded(&p.name, &target.package_name))
        .filter(|p| !same_build_system || p.build_systems.contains(build))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), count.min(eligible.len()));
    let items: Vec<ReferenceItem> = picked
        .into_iter()
        .map(|i| ReferenceItem {
            package: eligible[i].name.clone(),
            text: eligible[i].recipe_text.clone(),
            role_preamble: RANDOM_PREAMBLE.into(),
            score: None,
        })
        .collect();
    Ok(ReferenceBundle {
        strategy: if same_build_system {
            Strategy::RandomSameBuildSystem
        } else {
            Strategy::Random
        },
        insufficient: items.len() < count,
        items,
        exclusions: store.exclusions(&target.package_name),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn recipe(name: &str, base: &str, deps: &[&str], variants: &[&str]) -> CorpusEntry {
        let mut s = format!("class {}({base}):\n    version(\"1.0\", url=\"https://x.org/{name}.tgz\")\n", crate::recipe::class_name_for(name));
        for v in variants {
            s.push_str(&format!("    variant(\"{v}\", default=False)\n"));
        }
        for d in deps {
            s.push_str(&format!("    depends_on(\"{d}\")\n"));
        }
        CorpusEntry {
            name: name.into(),
            source: s,
            build_systems: None,
        }
    }

    fn target() -> RepoMetadata {
        let mut m = RepoMetadata::named("cabana-pd");
        m.dependency_hints = ["cmake", "cabana", "nlohmann-json", "googletest", "cxx", "c"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        m.build_options = ["hdf5", "silo", "tests"].iter().map(|s| s.to_string()).collect();
        m
    }

    #[test]
    fn ingest_builds_edges_and_reports() {
        let mut corpus = vec![recipe("a", "CMakePackage", &["b"], &[]), recipe("b", "CMakePackage", &["zlib"], &[])];
        corpus.push(CorpusEntry {
            name: "broken".into(),
            source: "class X(".into(),
            build_systems: None,
        });
        let (store, report) = ingest(corpus.clone()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert!(store.edges().any(|e| e == ("a", "b")));
        assert!(report.dangling["b"].contains("zlib"));
        assert_eq!(ingest(corpus.clone()).unwrap().0.content_hash, store.content_hash);
        corpus.push(recipe("a", "CMakePackage", &[], &[]));
        assert!(matches!(ingest(corpus), Err(KbError::DuplicateName(_))));
    }

    #[test]
    fn affinity_examples() {
        let (store, _) = ingest(vec![recipe("cand", "CMakePackage", &["cmake", "cxx", "c"], &["tests"])]).unwrap();
        let s = affinity(&target(), store.get("cand").unwrap(), AffinityWeights::default());
        assert_eq!((s.dep_overlap, s.opt_overlap), (3, 1));
        assert!((s.score - 2.2).abs() < 1e-12);
    }

    #[test]
    fn similar_excludes_target_and_breaks_ties_by_name() {
        let (store, _) = ingest(vec![
            recipe("cabana-pd", "CMakePackage", &["cmake", "cabana", "cxx", "c"], &["tests"]),
            recipe("zeta", "CMakePackage", &["cmake"], &[]),
            recipe("alpha", "CMakePackage", &["cmake"], &[]),
            recipe("best", "CMakePackage", &["cabana", "cxx"], &["hdf5"]),
            recipe("pyonly", "PythonPackage", &["cabana", "cxx", "c"], &[]),
        ])
        .unwrap();
        let b = retrieve_similar(&store, &target(), 3, AffinityWeights::default()).unwrap();
        assert_eq!(b.names(), ["best", "alpha", "zeta"]);
        assert!(b.exclusions.contains("cabana-pd"));
        assert!(!b.insufficient);
        let b = retrieve_similar(&store, &target(), 10, AffinityWeights::default()).unwrap();
        assert!(b.insufficient);
        assert!(matches!(
            retrieve_similar(&Store::default(), &target(), 1, AffinityWeights::default()),
            Err(KbError::EmptyStore)
        ));
    }

    #[test]
    fn random_is_seeded_and_filtered() {
        let mut corpus: Vec<_> = (0..5).map(|i| recipe(&format!("cm{i}"), "CMakePackage", &[], &[])).collect();
        corpus.extend((0..3).map(|i| recipe(&format!("mk{i}"), "MakefilePackage", &[], &[])));
        let (store, _) = ingest(corpus).unwrap();
        let t = target();
        let a = retrieve_random(&store, &t, 3, true, 7).unwrap();
        assert_eq!(a, retrieve_random(&store, &t, 3, true, 7).unwrap());
        assert!(a.items.iter().all(|i| store.get(&i.package).unwrap().build_systems.contains("cmake")));
        assert!(a.items.iter().all(|i| i.role_preamble == RANDOM_PREAMBLE));
        let (small, _) = ingest(vec![recipe("only", "CMakePackage", &[], &[])]).unwrap();
        let b = retrieve_random(&small, &t, 2, false, 1).unwrap();
        assert_eq!(b.items.len(), 1);
        assert!(b.insufficient);
    }

    #[test]
    fn save_load_round_trip() {
        let (store, _) = ingest(vec![recipe("a", "CMakePackage", &["b"], &["x"])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        store.save(&path).unwrap();
        assert_eq!(Store::load(&path).unwrap(), store);
    }
}
