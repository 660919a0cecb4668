use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::kb::ReferenceBundle;
use crate::repo::{DistilledMetadata, RepoMetadata};
use crate::text::truncate_chars;

pub const DEFAULT_TEMPLATE: &str = include_str!("../../assets/prompt_template.txt");

const TEMPLATE_SPLIT: &str = "\n------\n";

const DISTILL_INSTRUCTION: &str = "Summarize the build-system fragments below for a Spack packager. \
List the dependencies, build options with their defaults, language standards, and accelerator or \
Python support. Relate each option to a likely Spack variant or dependency constraint. Do not add \
anything that the fragments do not state.";

const REPAIR_INSTRUCTION: &str = "The previous Spack recipe failed validation. Produce a corrected, \
complete recipe as plain text. Keep what worked and fix the reported problems.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Generate,
    Repair,
    Distill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptReference {
    pub package: String,
    pub role_preamble: String,
    pub text: String,
}

/// Context added for a repair attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairContext {
    pub condensed_original: String,
    pub previous_recipe: String,
    pub failure_class: String,
    pub error_log: String,
    /// `None` when audit feedback is off or no audit ran.
    pub audit_findings: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub preamble: String,
    pub package_name: String,
    pub build_system: String,
    pub feature_hints: Vec<String>,
    pub metadata: String,
    pub version_block: String,
    pub tree_block: String,
    pub references: Vec<PromptReference>,
    #[serde(default)]
    pub repair: Option<RepairContext>,
    /// Blocks removed to fit the context limit, in drop order.
    #[serde(default)]
    pub dropped: Vec<String>,
    #[serde(default)]
    pub body_template: String,
}

/// Settings for prompt layout. Budgets count characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub template: String,
    pub context_limit: usize,
    pub metadata_budget: usize,
    pub condensed_fraction: f64,
    pub tree_budget: usize,
    pub reference_budget: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
            context_limit: 200_000,
            metadata_budget: 16_000,
            condensed_fraction: 0.25,
            tree_budget: 12_000,
            reference_budget: 40_000,
        }
    }
}

impl PromptConfig {
    pub fn load_template(&mut self, path: &std::path::Path) -> std::io::Result<()> {
        self.template = std::fs::read_to_string(path)?;
        Ok(())
    }
}

/// Expands `{{ name }}` placeholders and `{{#name}}…{{/name}}` sections; a
/// section is kept only when its value is nonempty.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let lookup = |k: &str| vars.iter().find(|(n, _)| *n == k).map(|(_, v)| *v).unwrap_or("");
    let mut text = template.to_string();
    for (name, value) in vars {
        let open = format!("{{{{#{name}}}}}");
        let close = format!("{{{{/{name}}}}}");
        while let Some(s) = text.find(&open) {
            let Some(rel) = text[s..].find(&close) else { break };
            let e = s + rel;
            let inner = if value.trim().is_empty() {
                String::new()
            } else {
                text[s + open.len()..e].to_string()
            };
            text.replace_range(s..e + close.len(), &inner);
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text.as_str();
    while let Some(s) = rest.find("{{") {
        out.push_str(&rest[..s]);
        match rest[s..].find("}}") {
            Some(rel) => {
                let key = rest[s + 2..s + rel].trim();
                out.push_str(lookup(key));
                rest = &rest[s + rel + 2..];
            }
            None => {
                out.push_str(&rest[s..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn reference_text(refs: &[PromptReference]) -> String {
    refs.iter()
        .map(|r| format!("{}\n{}", r.role_preamble, r.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

impl PromptSpec {
    /// A prompt carrying only the given text.
    pub fn raw(text: &str) -> Self {
        Self {
            mode: PromptMode::Distill,
            preamble: text.to_string(),
            package_name: String::new(),
            build_system: String::new(),
            feature_hints: Vec::new(),
            metadata: String::new(),
            version_block: String::new(),
            tree_block: String::new(),
            references: Vec::new(),
            repair: None,
            dropped: Vec::new(),
            body_template: String::new(),
        }
    }

    pub fn system_text(&self, default: &str) -> String {
        default.to_string()
    }

    fn render_generate(&self) -> String {
        let features = self.feature_hints.join(", ");
        let refs = reference_text(&self.references);
        let body = fill(
            &self.body_template,
            &[
                ("pkg_name", &self.package_name),
                ("build_sys", &self.build_system),
                ("features", &features),
                ("cmake_distilled", &self.metadata),
                ("version", &self.version_block),
                ("tree", &self.tree_block),
                ("references", &refs),
            ],
        );
        let mut out = self.preamble.clone();
        if !body.is_empty() {
            out.push_str(TEMPLATE_SPLIT);
            out.push_str(&body);
        }
        for d in &self.dropped {
            out.push_str(&format!("\n[omitted to fit context: {d}]"));
        }
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out
    }

    fn render_repair(&self, r: &RepairContext) -> String {
        let mut out = format!("{}\n\n", self.preamble);
        out.push_str(&format!("## ORIGINAL TASK (CONDENSED)\n{}\n\n", r.condensed_original.trim_end()));
        out.push_str(&format!("## PREVIOUS RECIPE\n{}\n\n", r.previous_recipe.trim_end()));
        out.push_str(&format!("## FAILURE CLASS\n{}\n\n", r.failure_class));
        out.push_str("## ERROR LOG\n");
        if !r.error_log.is_empty() {
            out.push_str(&format!("{}\n", r.error_log.trim_end()));
        }
        if self.dropped.iter().any(|d| d == "log") {
            out.push_str("[omitted to fit context: log]\n");
        }
        out.push('\n');
        if let Some(findings) = &r.audit_findings {
            out.push_str("## AUDIT FINDINGS\n");
            if findings.is_empty() {
                out.push_str("(none)\n");
            }
            for f in findings {
                out.push_str(&format!("- {f}\n"));
            }
            out.push('\n');
        }
        let refs_dropped = self.dropped.iter().any(|d| d == "references");
        if !self.references.is_empty() || refs_dropped {
            out.push_str("## REFERENCES\n");
            if !self.references.is_empty() {
                out.push_str(&format!("{}\n", reference_text(&self.references)));
            }
            if refs_dropped {
                out.push_str("[omitted to fit context: references]\n");
            }
            out.push('\n');
        }
        out
    }

    /// Full user-message text.
    pub fn render(&self) -> String {
        match (self.mode, &self.repair) {
            (PromptMode::Repair, Some(r)) => self.render_repair(r),
            (PromptMode::Distill, _) => {
                if self.metadata.is_empty() {
                    self.preamble.clone()
                } else {
                    format!("{}\n\n{}\n", self.preamble, self.metadata)
                }
            }
            _ => self.render_generate(),
        }
    }

    /// Builds a repair-mode prompt around an existing context.
    pub fn repair(package_name: &str, build_system: &str, references: Vec<PromptReference>, ctx: RepairContext) -> Self {
        Self {
            mode: PromptMode::Repair,
            preamble: REPAIR_INSTRUCTION.to_string(),
            package_name: package_name.to_string(),
            build_system: build_system.to_string(),
            references,
            repair: Some(ctx),
            ..Self::raw("")
        }
    }
}

/// Raw metadata text: build-file fragments with their paths.
pub fn raw_metadata_text(meta: &RepoMetadata) -> String {
    let mut out = String::new();
    for f in &meta.raw_fragments {
        if f.excerpt.is_empty() {
            continue;
        }
        out.push_str(&format!("[{}]\n{}\n", f.path, f.excerpt.trim_end()));
    }
    out
}

fn version_block(meta: &RepoMetadata) -> String {
    match &meta.version_info {
        Some(v) => {
            let mut s = format!("version: {}", v.version_string);
            if let Some(u) = &v.source_url {
                s.push_str(&format!("\nurl: {u}"));
            }
            if let Some(c) = &v.checksum {
                s.push_str(&format!("\nsha256: {c}"));
            }
            s
        }
        None => "no version information available".to_string(),
    }
}

/// Lays out a generation prompt (or the distillation request) for a target.
///
/// `condensed` drops the tree and cuts metadata to `condensed_fraction` of
/// its budget. `Repair` mode yields the condensed generation layout, which
/// repair prompts embed. When the text exceeds `context_limit`, the tree is
/// dropped first, then references from last to first, then metadata is
/// shortened.
pub fn assemble_prompt(
    meta: &RepoMetadata,
    distilled: Option<&DistilledMetadata>,
    refs: &ReferenceBundle,
    mode: PromptMode,
    condensed: bool,
    cfg: &PromptConfig,
) -> Result<PromptSpec, GatewayError> {
    if mode == PromptMode::Distill {
        let mut p = PromptSpec::raw(DISTILL_INSTRUCTION);
        p.package_name = meta.package_name.clone();
        p.build_system = meta.build_system.as_str().to_string();
        p.metadata = truncate_chars(&raw_metadata_text(meta), cfg.metadata_budget);
        return Ok(p);
    }
    let condensed = condensed || mode == PromptMode::Repair;
    let (preamble, body_template) = match cfg.template.split_once(TEMPLATE_SPLIT) {
        Some((a, b)) => (a.trim_end().to_string(), b.to_string()),
        None => (String::new(), cfg.template.clone()),
    };
    let metadata_full = match distilled {
        Some(d) => d.text.clone(),
        None => raw_metadata_text(meta),
    };
    let metadata_budget = if condensed {
        ((cfg.metadata_budget as f64) * cfg.condensed_fraction).floor() as usize
    } else {
        cfg.metadata_budget
    };
    let tree_block = if condensed {
        String::new()
    } else {
        truncate_chars(&meta.tree.render(), cfg.tree_budget)
    };
    let references = refs
        .items
        .iter()
        .map(|i| PromptReference {
            package: i.package.clone(),
            role_preamble: i.role_preamble.clone(),
            text: truncate_chars(&i.text, cfg.reference_budget),
        })
        .collect();
    let mut p = PromptSpec {
        mode,
        preamble,
        package_name: meta.package_name.clone(),
        build_system: meta.build_system.as_str().to_string(),
        feature_hints: meta.feature_hints.iter().cloned().collect(),
        metadata: truncate_chars(&metadata_full, metadata_budget),
        version_block: version_block(meta),
        tree_block,
        references,
        repair: None,
        dropped: Vec::new(),
        body_template,
    };
    fit(&mut p, cfg.context_limit)?;
    Ok(p)
}

fn fit(p: &mut PromptSpec, limit: usize) -> Result<(), GatewayError> {
    let len = |p: &PromptSpec| p.render().chars().count();
    if len(p) <= limit {
        return Ok(());
    }
    let mut mandatory = p.clone();
    mandatory.tree_block.clear();
    mandatory.references.clear();
    mandatory.metadata.clear();
    mandatory.dropped = vec!["tree".into(), "references".into(), "metadata".into()];
    let needed = len(&mandatory);
    if needed > limit {
        return Err(GatewayError::BudgetExceeded { needed, limit });
    }
    if !p.tree_block.is_empty() {
        p.tree_block.clear();
        p.dropped.push("tree".into());
        if len(p) <= limit {
            return Ok(());
        }
    }
    if !p.references.is_empty() {
        p.dropped.push("references".into());
        while !p.references.is_empty() && len(p) > limit {
            p.references.pop();
        }
        if len(p) <= limit {
            return Ok(());
        }
    }
    p.dropped.push("metadata".into());
    let over = len(p) - limit;
    let keep = p.metadata.chars().count().saturating_sub(over + 32);
    p.metadata = truncate_chars(&p.metadata, keep);
    while len(p) > limit && !p.metadata.is_empty() {
        let n = p.metadata.chars().count();
        p.metadata = p.metadata.chars().take(n.saturating_sub(64)).collect();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{ReferenceBundle, ReferenceItem, Strategy, RANDOM_PREAMBLE, SIMILAR_PREAMBLE};

    fn meta() -> RepoMetadata {
        let mut m = RepoMetadata::named("cabana-pd");
        m.dependency_hints = ["cmake", "cabana"].iter().map(|s| s.to_string()).collect();
        m.feature_hints = ["tests"].iter().map(|s| s.to_string()).collect();
        m.raw_fragments.push(crate::repo::Fragment {
            path: "CMakeLists.txt".into(),
            excerpt: "find_package(Cabana REQUIRED)".into(),
        });
        m.tree.entries = vec!["CMakeLists.txt".into(), "src/".into()];
        m
    }

    fn bundle(strategy: Strategy, preamble: &str) -> ReferenceBundle {
        ReferenceBundle {
            strategy,
            items: vec![ReferenceItem {
                package: "cabana".into(),
                text: "class Cabana(CMakePackage):\n    pass\n".into(),
                role_preamble: preamble.into(),
                score: None,
            }],
            exclusions: Default::default(),
            insufficient: false,
        }
    }

    #[test]
    fn generate_layout() {
        let p = assemble_prompt(
            &meta(),
            None,
            &bundle(Strategy::Similar, SIMILAR_PREAMBLE),
            PromptMode::Generate,
            false,
            &PromptConfig::default(),
        )
        .unwrap();
        let text = p.render();
        assert!(text.starts_with("# OBJECTIVE\nGiven the metadata, output a Spack package recipe."));
        assert!(text.contains("PACKAGE NAME: cabana-pd\nBUILD SYSTEM: cmake\nFEATURE HINTS: tests\n"));
        assert!(text.contains("most \"similar\" to the target package"));
        assert!(text.contains("directory structure for this repo"));
        assert!(text.contains("src/"));
        let order = ["# OBJECTIVE", "# GUIDELINES", "# HEURISTICS", "# Naming", "# Import", "PACKAGE NAME", "VERSION INFORMATION", "directory structure", "class Cabana"];
        let pos: Vec<usize> = order.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let again = assemble_prompt(
            &meta(),
            None,
            &bundle(Strategy::Similar, SIMILAR_PREAMBLE),
            PromptMode::Generate,
            false,
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(again.render(), text);
    }

    #[test]
    fn random_preamble_and_no_references() {
        let cfg = PromptConfig::default();
        let p = assemble_prompt(&meta(), None, &bundle(Strategy::Random, RANDOM_PREAMBLE), PromptMode::Generate, false, &cfg).unwrap();
        assert!(p.render().contains("this recipe was randomly selected"));
        let none = assemble_prompt(&meta(), None, &ReferenceBundle::none(), PromptMode::Generate, false, &cfg).unwrap();
        let text = none.render();
        assert!(!text.contains("similar\" to the target"));
        assert!(!text.contains("randomly selected"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn condensed_drops_tree_and_cuts_metadata() {
        let mut m = meta();
        m.raw_fragments[0].excerpt = "x".repeat(10_000);
        let cfg = PromptConfig {
            metadata_budget: 4000,
            ..PromptConfig::default()
        };
        let p = assemble_prompt(&m, None, &ReferenceBundle::none(), PromptMode::Generate, true, &cfg).unwrap();
        assert!(p.tree_block.is_empty());
        assert!(p.metadata.chars().count() <= 1000);
        assert!(!p.render().contains("directory structure"));
    }

    #[test]
    fn over_limit_drops_in_order() {
        let mut m = meta();
        m.tree.entries = (0..500).map(|i| format!("file{i:04}.cpp")).collect();
        let cfg = PromptConfig {
            context_limit: 3500,
            ..PromptConfig::default()
        };
        let p = assemble_prompt(&m, None, &bundle(Strategy::Similar, SIMILAR_PREAMBLE), PromptMode::Generate, false, &cfg).unwrap();
        assert!(p.render().chars().count() <= 3500);
        assert_eq!(p.dropped.first().map(String::as_str), Some("tree"));

        let tiny = PromptConfig {
            context_limit: 100,
            ..PromptConfig::default()
        };
        assert!(matches!(
            assemble_prompt(&m, None, &ReferenceBundle::none(), PromptMode::Generate, false, &tiny),
            Err(GatewayError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn fill_sections() {
        assert_eq!(fill("a{{#x}}[{{ x }}]{{/x}}b", &[("x", "1")]), "a[1]b");
        assert_eq!(fill("a{{#x}}[{{ x }}]{{/x}}b", &[("x", "")]), "ab");
        assert_eq!(fill("{{ missing }}!", &[]), "!");
    }
}
