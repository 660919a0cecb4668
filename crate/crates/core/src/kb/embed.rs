use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{chunk_recipe, io_err, is_excluded, ChunkKind, KbError, PackageNode, ReferenceBundle, ReferenceItem, Store, Strategy, SIMILAR_PREAMBLE};
use crate::llm::{embed, ModelHandle};
use crate::repo::RepoMetadata;
use crate::text::{sha256_hex, truncate_chars};

pub const DEFAULT_CHUNKS_PER_PACKAGE: usize = 2;
const BATCH: usize = 32;
const INDEX_FORMAT: &str = "index-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCard {
    pub package: String,
    pub text: String,
}

fn list<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items.into_iter().map(String::as_str).collect::<Vec<_>>().join(", ")
}

pub fn feature_card(p: &PackageNode) -> FeatureCard {
    FeatureCard {
        package: p.name.clone(),
        text: format!(
            "package: {}; deps: {}; build: {}; flags: {}",
            p.name,
            list(&p.dependencies),
            list(&p.build_systems),
            list(&p.variants)
        ),
    }
}

/// `deps: …; build: …; flags: …` with each list sorted.
pub fn query_string(target: &RepoMetadata) -> String {
    let (deps, opts) = super::target_sets(target);
    let mut flags = opts;
    flags.extend(target.feature_hints.iter().map(|f| f.to_lowercase()));
    format!(
        "deps: {}; build: {}; flags: {}",
        list(&deps),
        target.build_system.as_str(),
        list(&flags)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "chunk")]
pub enum EntryKind {
    Card,
    Chunk(ChunkKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub package: String,
    pub kind: EntryKind,
    pub text: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub key: String,
    pub embedder_id: String,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
    /// True when loaded from the cache rather than built.
    #[serde(skip)]
    pub cache_hit: bool,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        dot += f64::from(*x) * f64::from(*y);
        na += f64::from(*x) * f64::from(*x);
        nb += f64::from(*y) * f64::from(*y);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Embeds every feature card and recipe chunk. With a cache directory the
/// index is stored as `<key>.json`, where the key hashes the corpus content
/// and the embedder identity; an existing file is reused without calls.
pub fn build_embedding_index(store: &Store, embedder: &ModelHandle, cache_dir: Option<&Path>) -> Result<EmbeddingIndex, KbError> {
    let embedder_id = embedder.embedder_id();
    let key = sha256_hex(format!("{INDEX_FORMAT}|{}|{embedder_id}", store.content_hash).as_bytes());
    let cache_file = cache_dir.map(|d| d.join(format!("{key}.json")));
    if let Some(path) = &cache_file {
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(mut idx) = serde_json::from_str::<EmbeddingIndex>(&text) {
                if idx.key == key {
                    idx.cache_hit = true;
                    return Ok(idx);
                }
            }
        }
    }
    let mut pending: Vec<(String, EntryKind, String)> = Vec::new();
    for p in store.packages.values() {
        pending.push((p.name.clone(), EntryKind::Card, feature_card(p).text));
        // ingested recipes parsed once already, so chunking succeeds
        if let Ok(chunks) = chunk_recipe(&p.name, &p.recipe_text) {
            for c in chunks {
                pending.push((p.name.clone(), EntryKind::Chunk(c.kind), c.embed_text()));
            }
        }
    }
    let mut entries = Vec::with_capacity(pending.len());
    let mut dim = 0;
    for batch in pending.chunks(BATCH) {
        let texts: Vec<String> = batch.iter().map(|(_, _, t)| t.clone()).collect();
        let result = embed(embedder, &texts)?;
        for ((package, kind, text), vector) in batch.iter().cloned().zip(result.vectors) {
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(crate::llm::GatewayError::DimensionMismatch {
                    expected: dim,
                    got: vector.len(),
                }
                .into());
            }
            entries.push(IndexEntry {
                package,
                kind,
                text,
                vector,
            });
        }
    }
    let idx = EmbeddingIndex {
        key,
        embedder_id,
        dim,
        entries,
        cache_hit: false,
    };
    if let Some(path) = &cache_file {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let json = serde_json::to_string(&idx).map_err(|e| KbError::Format(e.to_string()))?;
        fs::write(path, json).map_err(io_err(path))?;
    }
    Ok(idx)
}

/// Ranks packages by their best-matching card or chunk against the target
/// query and returns the `top_k` best, each with its most similar chunks
/// (at most `chunks_per_package`, within `char_budget` characters).
pub fn retrieve_by_embedding(
    index: &EmbeddingIndex,
    target: &RepoMetadata,
    embedder: &ModelHandle,
    top_k: usize,
    chunks_per_package: usize,
    char_budget: usize,
) -> Result<ReferenceBundle, KbError> {
    if top_k == 0 {
        return Err(KbError::InvalidCount);
    }
    if index.entries.is_empty() {
        return Err(KbError::EmptyStore);
    }
    let query = embed(embedder, &[query_string(target)])?.vectors.remove(0);
    if query.len() != index.dim {
        return Err(crate::llm::GatewayError::DimensionMismatch {
            expected: index.dim,
            got: query.len(),
        }
        .into());
    }
    let mut exclusions = std::collections::BTreeSet::from([target.package_name.clone()]);
    let mut per_package: BTreeMap<&str, Vec<(f64, &IndexEntry)>> = BTreeMap::new();
    for e in &index.entries {
        if is_excluded(&e.package, &target.package_name) {
            exclusions.insert(e.package.clone());
            continue;
        }
        per_package.entry(&e.package).or_default().push((cosine(&query, &e.vector), e));
    }
    let mut ranked: Vec<(&str, f64)> = per_package
        .iter()
        .map(|(name, hits)| (*name, hits.iter().map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let items: Vec<ReferenceItem> = ranked
        .iter()
        .take(top_k)
        .map(|(name, best)| {
            let mut hits: Vec<&(f64, &IndexEntry)> = per_package[name]
                .iter()
                .filter(|(_, e)| matches!(e.kind, EntryKind::Chunk(_)))
                .collect();
            hits.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut text = hits
                .iter()
                .take(chunks_per_package.max(1))
                .map(|(_, e)| e.text.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            if text.is_empty() {
                text = per_package[name][0].1.text.clone();
            }
            ReferenceItem {
                package: name.to_string(),
                text: truncate_chars(&text, char_budget),
                role_preamble: SIMILAR_PREAMBLE.into(),
                score: Some(*best),
            }
        })
        .collect();
    Ok(ReferenceBundle {
        strategy: Strategy::Embedding,
        insufficient: items.len() < top_k,
        items,
        exclusions,
    })
}
