//! The generation session: analyze, retrieve, prompt, generate, evaluate,
//! and repair until the recipe installs or the attempt budget runs out.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::eval::{condense_log, evaluate, EvalConfig, EvalError, EvaluationReport, FailureKind, RuleTable, Sandbox};
use crate::kb::{
    retrieve_by_embedding, retrieve_random, retrieve_similar, AffinityWeights, EmbeddingIndex, ReferenceBundle, Store,
    Strategy, DEFAULT_CHUNKS_PER_PACKAGE,
};
use crate::llm::{assemble_prompt, complete, GatewayError, ModelHandle, PromptConfig, PromptMode, PromptReference, PromptSpec, RepairContext, TokenUsage};
use crate::metrics::{score_recipes, score_unparseable, MatchWeights, MetricReport};
use crate::recipe::parse_recipe;
use crate::repo::{distill, extract_metadata, AnalyzeOptions, DistillMode, RepoMetadata};
use crate::text::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

/// Attempt budget of the extended convergence mode.
pub const EXTENDED_K_MAX: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataMode {
    Raw,
    #[default]
    Distilled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Names the configuration in results and reports.
    pub label: String,
    pub k_max: usize,
    pub reference_strategy: Strategy,
    pub reference_count: usize,
    pub metadata_mode: MetadataMode,
    pub distill_mode: DistillMode,
    /// Byte budget of distilled metadata.
    pub distill_budget: usize,
    pub audit_feedback: bool,
    pub rng_seed: u64,
    /// Retrieve references again before every repair attempt.
    pub reretrieve: bool,
    pub oscillation_window: usize,
    pub affinity: AffinityWeights,
    pub match_weights: MatchWeights,
    /// Dependencies left out of S_d on both sides.
    pub class_inherent: BTreeSet<String>,
    pub prompt: PromptConfig,
    /// Byte budget of the error log in repair prompts.
    pub repair_log_budget: usize,
    pub eval: EvalConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            label: "default".into(),
            k_max: 5,
            reference_strategy: Strategy::Similar,
            reference_count: 1,
            metadata_mode: MetadataMode::Distilled,
            distill_mode: DistillMode::RuleBased,
            distill_budget: 8192,
            audit_feedback: false,
            rng_seed: 0,
            reretrieve: false,
            oscillation_window: 4,
            affinity: AffinityWeights::default(),
            match_weights: MatchWeights::default(),
            class_inherent: BTreeSet::new(),
            prompt: PromptConfig::default(),
            repair_log_budget: 8192,
            eval: EvalConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.k_max == 0 {
            return Err(SessionError::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.reference_strategy != Strategy::None && self.reference_count == 0 {
            return Err(SessionError::InvalidConfig(format!(
                "reference_count is 0 under strategy {}",
                self.reference_strategy.as_str()
            )));
        }
        self.match_weights
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        self.affinity
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("strategy {0} needs a knowledge base")]
    MissingKnowledgeBase(String),
}

/// Shared resources a session runs against.
pub struct SessionEnv<'a> {
    pub model: &'a ModelHandle,
    pub sandbox: &'a dyn Sandbox,
    pub rules: &'a RuleTable,
    pub store: Option<&'a Store>,
    /// Needed by the embedding strategy; it embeds queries with `model`.
    pub index: Option<&'a EmbeddingIndex>,
    pub analyze: AnalyzeOptions,
    /// Per-session prompts, recipes and reports go below this directory.
    pub artifact_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub index: usize,
    pub prompt: PromptSpec,
    pub recipe_text: String,
    pub report: EvaluationReport,
    pub token_usage: TokenUsage,
    #[serde(with = "crate::llm::duration_secs")]
    pub duration: Duration,
    /// Failure class, first matched rule and hashed last error line.
    pub signature: String,
    #[serde(default)]
    pub timed_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Installed,
    Exhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub package_name: String,
    pub config: SessionConfig,
    pub model_id: String,
    pub references: Vec<String>,
    pub attempts: Vec<AttemptRecord>,
    pub status: SessionStatus,
    pub successful_attempt: Option<usize>,
    pub metrics: Option<MetricReport>,
    pub total_tokens: u64,
    /// Tokens spent on model-assisted distillation, outside the attempts.
    #[serde(default)]
    pub distill_tokens: u64,
    /// Whether the final attempts alternated between two error states.
    #[serde(default)]
    pub oscillation: bool,
    #[serde(default)]
    pub abort_reason: Option<String>,
}

impl SessionRecord {
    pub fn key(&self) -> (String, String) {
        (self.package_name.clone(), self.config.label.clone())
    }

    fn aborted(package: &str, cfg: &SessionConfig, model: &ModelHandle, reason: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            package_name: package.to_string(),
            config: cfg.clone(),
            model_id: model.config.model_id.clone(),
            references: Vec::new(),
            attempts: Vec::new(),
            status: SessionStatus::Aborted,
            successful_attempt: None,
            metrics: None,
            total_tokens: 0,
            distill_tokens: 0,
            oscillation: false,
            abort_reason: Some(reason),
        }
    }
}

fn retrieve(meta: &RepoMetadata, cfg: &SessionConfig, env: &SessionEnv, seed: u64) -> Result<ReferenceBundle, String> {
    retrieve_references(meta, cfg, env.model, env.store, env.index, seed)
}

/// References for `meta` under the configured strategy and count.
pub fn retrieve_references(
    meta: &RepoMetadata,
    cfg: &SessionConfig,
    model: &ModelHandle,
    store: Option<&Store>,
    index: Option<&EmbeddingIndex>,
    seed: u64,
) -> Result<ReferenceBundle, String> {
    let need_store = || {
        store.ok_or_else(|| SessionError::MissingKnowledgeBase(cfg.reference_strategy.as_str().into()).to_string())
    };
    let n = cfg.reference_count;
    let r = match cfg.reference_strategy {
        Strategy::None => return Ok(ReferenceBundle::none()),
        Strategy::Similar => retrieve_similar(need_store()?, meta, n, cfg.affinity),
        Strategy::Random => retrieve_random(need_store()?, meta, n, false, seed),
        Strategy::RandomSameBuildSystem => retrieve_random(need_store()?, meta, n, true, seed),
        Strategy::Embedding => {
            let index = index.ok_or_else(|| SessionError::MissingKnowledgeBase("embedding".into()).to_string())?;
            retrieve_by_embedding(index, meta, model, n, DEFAULT_CHUNKS_PER_PACKAGE, cfg.prompt.reference_budget)
        }
    };
    r.map_err(|e| format!("retrieval failed: {e}"))
}

fn prompt_refs(refs: &ReferenceBundle) -> Vec<PromptReference> {
    refs.items
        .iter()
        .map(|i| PromptReference {
            package: i.package.clone(),
            role_preamble: i.role_preamble.clone(),
            text: i.text.clone(),
        })
        .collect()
}

fn write_artifacts(dir: &Path, a: &AttemptRecord) -> std::io::Result<()> {
    let d = dir.join(format!("attempt-{}", a.index));
    fs::create_dir_all(&d)?;
    fs::write(d.join("prompt.txt"), a.prompt.render())?;
    fs::write(d.join("recipe.py"), &a.recipe_text)?;
    for s in &a.report.stages {
        fs::write(d.join(format!("{}.log", s.stage)), &s.log_excerpt)?;
    }
    let json = serde_json::to_string_pretty(&a.report).map_err(std::io::Error::other)?;
    fs::write(d.join("report.json"), json)
}

fn session_dir(env: &SessionEnv, package: &str, label: &str) -> Option<PathBuf> {
    let safe = |s: &str| s.replace(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'), "_");
    env.artifact_dir.as_ref().map(|d| d.join(safe(package)).join(safe(label)))
}

/// Runs one generation session for the repository at `repo_root`.
///
/// Infrastructure failures (analysis, retrieval, model gateway, sandbox)
/// end the session with status `aborted`, keeping the attempts made so far.
/// Stage timeouts count as failed attempts.
pub fn run_session(
    repo_root: &Path,
    ground_truth: Option<&str>,
    cfg: &SessionConfig,
    env: &SessionEnv,
) -> Result<SessionRecord, SessionError> {
    cfg.validate()?;
    let package_hint = env
        .analyze
        .package_name
        .clone()
        .unwrap_or_else(|| repo_root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let meta = match extract_metadata(repo_root, &env.analyze) {
        Ok(m) => m,
        Err(e) => return Ok(SessionRecord::aborted(&package_hint, cfg, env.model, format!("analysis failed: {e}"))),
    };
    let package = meta.package_name.clone();
    let abort = |reason: String| SessionRecord::aborted(&package, cfg, env.model, reason);

    let mut distill_tokens = 0;
    let distilled = match cfg.metadata_mode {
        MetadataMode::Raw => None,
        MetadataMode::Distilled => match distill(&meta, cfg.distill_mode, Some(env.model), cfg.distill_budget) {
            Ok(d) => {
                if cfg.distill_mode == DistillMode::LlmAssisted {
                    distill_tokens = d.token_estimate;
                }
                Some(d)
            }
            Err(e) => return Ok(abort(format!("distillation failed: {e}"))),
        },
    };
    let mut refs = match retrieve(&meta, cfg, env, cfg.rng_seed) {
        Ok(r) => r,
        Err(e) => return Ok(abort(e)),
    };
    let generation = assemble_prompt(&meta, distilled.as_ref(), &refs, PromptMode::Generate, false, &cfg.prompt);
    let condensed = assemble_prompt(&meta, distilled.as_ref(), &ReferenceBundle::none(), PromptMode::Generate, true, &cfg.prompt);
    let (generation, condensed) = match (generation, condensed) {
        (Ok(g), Ok(c)) => (g, c.render()),
        (Err(e), _) | (_, Err(e)) => return Ok(abort(format!("prompt assembly failed: {e}"))),
    };

    let artifacts = session_dir(env, &package, &cfg.label);
    let model = env.model.for_session();
    let mut record = SessionRecord {
        references: refs.names().iter().map(|s| s.to_string()).collect(),
        distill_tokens,
        abort_reason: None,
        status: SessionStatus::Exhausted,
        ..abort(String::new())
    };

    for index in 1..=cfg.k_max {
        let prompt = if index == 1 {
            generation.clone()
        } else {
            if cfg.reretrieve {
                match retrieve(&meta, cfg, env, cfg.rng_seed.wrapping_add(index as u64)) {
                    Ok(r) => refs = r,
                    Err(e) => {
                        record.status = SessionStatus::Aborted;
                        record.abort_reason = Some(e);
                        break;
                    }
                }
            }
            let prev = record.attempts.last().expect("attempt 1 recorded");
            match build_repair_prompt(prev, &refs, &condensed, cfg.audit_feedback, cfg.repair_log_budget, cfg.prompt.context_limit) {
                Ok(p) => p,
                Err(e) => {
                    record.status = SessionStatus::Aborted;
                    record.abort_reason = Some(format!("repair prompt: {e}"));
                    break;
                }
            }
        };
        let start = Instant::now();
        let completion = match complete(&model, &prompt) {
            Ok(c) => c,
            Err(e) => {
                record.status = SessionStatus::Aborted;
                record.abort_reason = Some(format!("model gateway: {e}"));
                break;
            }
        };
        let (report, timed_out) = match evaluate(&completion.text, &package, env.sandbox, &cfg.eval, env.rules) {
            Ok(r) => (r, false),
            Err(EvalError::Timeout { report, .. }) => (*report, true),
            Err(e) => {
                record.status = SessionStatus::Aborted;
                record.abort_reason = Some(e.to_string());
                break;
            }
        };
        let attempt = AttemptRecord {
            index,
            signature: error_signature(&report),
            prompt,
            recipe_text: completion.text,
            token_usage: completion.token_usage,
            duration: start.elapsed(),
            timed_out,
            report,
        };
        if let Some(dir) = &artifacts {
            if let Err(e) = write_artifacts(dir, &attempt) {
                record.attempts.push(attempt);
                record.status = SessionStatus::Aborted;
                record.abort_reason = Some(format!("artifact write failed: {e}"));
                break;
            }
        }
        let installed = attempt.report.installed();
        record.attempts.push(attempt);
        if installed {
            record.status = SessionStatus::Installed;
            record.successful_attempt = Some(index);
            break;
        }
    }

    record.total_tokens = record.attempts.iter().map(|a| a.token_usage.total()).sum();
    record.oscillation = record.attempts.len() >= 2 && detect_oscillation(&record.attempts, cfg.oscillation_window);
    if let (Some(gt), Some(last)) = (ground_truth, record.attempts.last()) {
        let chosen = record
            .successful_attempt
            .and_then(|i| record.attempts.get(i - 1))
            .unwrap_or(last);
        record.metrics = match parse_recipe(gt) {
            Ok(gt) => Some(match parse_recipe(&chosen.recipe_text) {
                Ok(generated) => score_recipes(&gt, &generated, &cfg.match_weights, &cfg.class_inherent),
                Err(_) => score_unparseable(&gt, &cfg.match_weights, &cfg.class_inherent),
            }),
            Err(_) => None,
        };
    }
    if let Some(dir) = &artifacts {
        if let Ok(json) = serde_json::to_string_pretty(&record) {
            let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("session.json"), json));
        }
    }
    Ok(record)
}

/// Builds the prompt for the attempt after `prev`: the condensed original
/// prompt, the previous recipe, its failure class and condensed error log,
/// audit findings when `include_audit` and present, and the references.
///
/// Beyond `context_limit` characters, references are dropped from last to
/// first, then the log is shrunk; each drop leaves a marker.
pub fn build_repair_prompt(
    prev: &AttemptRecord,
    refs: &ReferenceBundle,
    condensed_original: &str,
    include_audit: bool,
    log_budget: usize,
    context_limit: usize,
) -> Result<PromptSpec, GatewayError> {
    let report = &prev.report;
    let raw_log = report
        .first_failure()
        .map(|s| format!("[{} stage, exit code {}]\n{}", s.stage, s.exit_code, s.log_excerpt))
        .unwrap_or_default();
    let audit_findings = match (&report.audit, include_audit) {
        (Some(a), true) => Some(a.findings.iter().map(|f| f.to_string()).collect()),
        _ => None,
    };
    let ctx = RepairContext {
        condensed_original: condensed_original.to_string(),
        previous_recipe: prev.recipe_text.clone(),
        failure_class: report.failure.value.as_str().to_string(),
        error_log: condense_log(&raw_log, log_budget.max(1)),
        audit_findings,
    };
    let build_system = crate::recipe::parse_recipe(&prev.recipe_text)
        .ok()
        .and_then(|r| r.build_systems().into_iter().next())
        .unwrap_or_else(|| "cmake".into());
    let mut p = PromptSpec::repair(&report.package_name, &build_system, prompt_refs(refs), ctx);
    let len = |p: &PromptSpec| p.render().chars().count();
    if len(&p) <= context_limit {
        return Ok(p);
    }
    // repair prompts carry no tree block, so references go first
    if !p.references.is_empty() {
        p.dropped.push("references".into());
        while !p.references.is_empty() && len(&p) > context_limit {
            p.references.pop();
        }
    }
    if len(&p) > context_limit {
        p.dropped.push("log".into());
        let mut budget = raw_log.len();
        while len(&p) > context_limit {
            budget /= 2;
            let ctx = p.repair.as_mut().expect("repair context");
            ctx.error_log = if budget < 64 { String::new() } else { condense_log(&raw_log, budget) };
            if budget < 64 {
                break;
            }
        }
    }
    let needed = len(&p);
    if needed > context_limit {
        return Err(GatewayError::BudgetExceeded {
            needed,
            limit: context_limit,
        });
    }
    Ok(p)
}

fn normalize_error_line(line: &str) -> String {
    static NUM: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let num = NUM.get_or_init(|| Regex::new(r"0x[0-9a-fA-F]+|\d+").unwrap());
    num.replace_all(line.trim(), "#").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `class|pattern-hash|line-hash`. The line is the last error line of the
/// failing stage, with numbers masked so line numbers and ids do not split
/// otherwise identical errors.
pub fn error_signature(report: &EvaluationReport) -> String {
    if report.failure.value == FailureKind::None {
        return "none".into();
    }
    let pattern = report.failure.evidence.as_ref().map_or("", |e| e.pattern.as_str());
    let log = report.first_failure().map_or("", |s| s.log_excerpt.as_str());
    let error_line = log
        .lines()
        .rev()
        .find(|l| l.to_ascii_lowercase().contains("error"))
        .or_else(|| log.lines().rev().find(|l| !l.trim().is_empty()))
        .unwrap_or("");
    format!(
        "{}|{}|{}",
        report.failure.value.as_str(),
        &sha256_hex(pattern.as_bytes())[..8],
        &sha256_hex(normalize_error_line(error_line).as_bytes())[..12]
    )
}

/// True when the signatures of the last `window` attempts contain an ABAB run
/// of two distinct error states.
pub fn detect_oscillation(attempts: &[AttemptRecord], window: usize) -> bool {
    let sigs: Vec<&str> = attempts.iter().map(|a| a.signature.as_str()).collect();
    oscillates(&sigs, window)
}

/// [`detect_oscillation`] over bare signatures.
pub fn oscillates<S: AsRef<str>>(signatures: &[S], window: usize) -> bool {
    let tail = &signatures[signatures.len().saturating_sub(window)..];
    tail.windows(4).any(|w| {
        let (a, b, c, d) = (w[0].as_ref(), w[1].as_ref(), w[2].as_ref(), w[3].as_ref());
        a == c && b == d && a != b
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillation_cases() {
        assert!(oscillates(&["constraint", "cmake", "constraint", "cmake"], 4));
        assert!(!oscillates(&["syntax", "constraint", "missing_dependency"], 4));
        assert!(!oscillates(&["c|a|1", "c|a|2", "c|a|3", "c|a|4"], 4));
        assert!(!oscillates(&["a", "a", "a", "a"], 4));
        // the pair must fall inside the window
        assert!(!oscillates(&["a", "b", "a", "b", "c", "d", "e"], 4));
        assert!(oscillates(&["x", "a", "b", "a", "b"], 4));
    }

    #[test]
    fn signature_masks_numbers() {
        assert_eq!(
            normalize_error_line("  main.c:12:10: fatal   error 0xdead"),
            normalize_error_line("main.c:99:3: fatal error 0xbeef")
        );
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::default().validate().is_ok());
        let bad = SessionConfig {
            k_max: 0,
            ..SessionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SessionConfig {
            reference_count: 0,
            ..SessionConfig::default()
        };
        assert!(bad.validate().is_err());
        let ok = SessionConfig {
            reference_count: 0,
            reference_strategy: Strategy::None,
            ..SessionConfig::default()
        };
        assert!(ok.validate().is_ok());
    }
}
