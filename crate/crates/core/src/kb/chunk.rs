use serde::{Deserialize, Serialize};

use crate::recipe::{parse_with_layout, ItemKind, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Header,
    Variants,
    Dependencies,
    MethodOverride,
}

/// Contiguous excerpt of a recipe covering one directive region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeChunk {
    pub package: String,
    pub kind: ChunkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Exact substring of the recipe text.
    pub text: String,
    /// Class header line(s), repeated so the chunk stands alone.
    pub context: String,
    pub start_line: usize,
    pub end_line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

impl RecipeChunk {
    /// Text used for embedding and for reference bundles.
    pub fn embed_text(&self) -> String {
        if self.kind == ChunkKind::Header {
            self.text.clone()
        } else {
            format!("{}\n{}", self.context, self.text)
        }
    }
}

fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
    starts
}

/// Byte range of lines `first..=last` (1-based), without the final newline.
fn span<'a>(text: &'a str, starts: &[usize], first: usize, last: usize) -> &'a str {
    let s = starts[first - 1];
    let e = starts.get(last).copied().unwrap_or(text.len());
    text[s..e].trim_end_matches(['\n', '\r'])
}

struct Run {
    kind: ChunkKind,
    method: Option<String>,
    start: usize,
    end: usize,
}

/// Splits a recipe into a header chunk, one chunk per contiguous run of
/// variant or dependency directives, and one chunk per method.
///
/// Statements that are neither (attributes, conflicts, other directives)
/// join the preceding chunk; the header chunk starts at the class line.
pub fn chunk_recipe(package: &str, recipe_text: &str) -> Result<Vec<RecipeChunk>, ParseError> {
    let (_, layout) = parse_with_layout(recipe_text)?;
    let starts = line_starts(recipe_text);
    let mut runs: Vec<Run> = vec![Run {
        kind: ChunkKind::Header,
        method: None,
        start: layout.class_line,
        end: layout.class_end_line,
    }];
    for item in &layout.items {
        let (kind, method) = match &item.kind {
            ItemKind::Header => (ChunkKind::Header, None),
            ItemKind::Variants => (ChunkKind::Variants, None),
            ItemKind::Dependencies => (ChunkKind::Dependencies, None),
            ItemKind::Method(m) => (ChunkKind::MethodOverride, Some(m.clone())),
            ItemKind::Neutral => {
                let last = runs.last_mut().expect("header run");
                last.end = last.end.max(item.end_line);
                continue;
            }
        };
        let last = runs.last_mut().expect("header run");
        if kind == last.kind && kind != ChunkKind::MethodOverride {
            last.end = last.end.max(item.end_line);
        } else {
            runs.push(Run {
                kind,
                method,
                start: item.start_line,
                end: item.end_line,
            });
        }
    }
    let context = span(recipe_text, &starts, layout.class_line, layout.class_end_line).to_string();
    Ok(runs
        .into_iter()
        .map(|r| RecipeChunk {
            package: package.to_string(),
            kind: r.kind,
            method: r.method,
            text: span(recipe_text, &starts, r.start, r.end).to_string(),
            context: context.clone(),
            start_line: r.start,
            end_line: r.end,
            vector: None,
        })
        .collect())
}
