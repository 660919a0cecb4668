use serde::{Deserialize, Serialize};

use super::{AnalyzeError, RepoMetadata};
use crate::kb::ReferenceBundle;
use crate::llm::{assemble_prompt, complete, estimate_tokens, GatewayError, ModelHandle, PromptConfig, PromptMode};
use crate::text::truncate_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    #[default]
    RuleBased,
    LlmAssisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistilledMetadata {
    pub text: String,
    pub token_estimate: u64,
    pub source: DistillMode,
}

fn join<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items.into_iter().map(String::as_str).collect::<Vec<_>>().join(", ")
}

/// Options as written in the build files, each followed by its variant-style
/// name when that differs; bare names when no evidence was recorded.
fn options(meta: &RepoMetadata) -> String {
    if meta.option_evidence.is_empty() {
        return join(&meta.build_options);
    }
    let mut by_raw: std::collections::BTreeMap<&str, Vec<&str>> = std::collections::BTreeMap::new();
    for (name, raw) in &meta.option_evidence {
        let names = by_raw.entry(raw.as_str()).or_default();
        if *name != raw.to_ascii_lowercase() {
            names.push(name);
        }
    }
    by_raw
        .into_iter()
        .map(|(raw, names)| match names.as_slice() {
            [] => raw.to_string(),
            _ => format!("{raw} ({})", names.join(", ")),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn outline(meta: &RepoMetadata) -> String {
    let mut lines = vec![
        format!("package: {}", meta.package_name),
        format!("build_system: {}", meta.build_system.as_str()),
    ];
    if let Some(v) = &meta.cmake_minimum {
        lines.push(format!("cmake_minimum: {v}"));
    }
    if let Some(v) = &meta.version_info {
        lines.push(format!("version: {}", v.version_string));
    }
    lines.push(format!("dependencies: {}", join(&meta.dependency_hints)));
    lines.push(format!("options: {}", options(meta)));
    if !meta.feature_hints.is_empty() {
        lines.push(format!("features: {}", join(&meta.feature_hints)));
    }
    if !meta.language_requirements.is_empty() {
        let langs: Vec<String> = meta
            .language_requirements
            .iter()
            .map(|l| match &l.standard {
                Some(s) => format!("{} ({s})", l.language),
                None => l.language.clone(),
            })
            .collect();
        lines.push(format!("languages: {}", langs.join(", ")));
    }
    let mut paths: Vec<&str> = meta.raw_fragments.iter().map(|f| f.path.as_str()).collect();
    paths.dedup();
    if !paths.is_empty() {
        lines.push(format!("files: {}", paths.join(", ")));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

/// Compresses metadata for the prompt. `budget` bounds the text in bytes.
pub fn distill(
    meta: &RepoMetadata,
    mode: DistillMode,
    llm: Option<&ModelHandle>,
    budget: usize,
) -> Result<DistilledMetadata, AnalyzeError> {
    let text = match mode {
        DistillMode::RuleBased => truncate_bytes(&outline(meta), budget),
        DistillMode::LlmAssisted => {
            let handle = llm.ok_or_else(|| GatewayError::Config("llm-assisted distillation needs a model".into()))?;
            let cfg = PromptConfig {
                metadata_budget: budget.saturating_mul(8),
                ..PromptConfig::default()
            };
            let prompt = assemble_prompt(meta, None, &ReferenceBundle::none(), PromptMode::Distill, false, &cfg)?;
            let reply = complete(handle, &prompt)?;
            truncate_bytes(reply.text.trim(), budget)
        }
    };
    Ok(DistilledMetadata {
        token_estimate: estimate_tokens(&text).max(1),
        text,
        source: mode,
    })
}
