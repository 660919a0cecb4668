use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::{EvalError, Evidence, FailureClass, FailureKind, Stage, StageResult};
use crate::text::truncate_chars;

pub const DEFAULT_RULES: &str = include_str!("../../assets/failure_rules.toml");

const EVIDENCE_LINE_CAP: usize = 300;

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Deserialize)]
struct RawRule {
    class: String,
    #[serde(default)]
    stage: Option<Stage>,
    pattern: String,
}

#[derive(Debug, Clone)]
pub struct FailureRule {
    pub class: FailureKind,
    pub stage: Option<Stage>,
    pub pattern: String,
    regex: Regex,
}

/// Ordered (pattern -> class) rules; the first match wins.
#[derive(Debug, Clone)]
pub struct RuleTable {
    pub rules: Vec<FailureRule>,
}

impl RuleTable {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| EvalError::Rules(e.to_string()))?;
        let mut rules = Vec::with_capacity(file.rule.len());
        for (i, r) in file.rule.into_iter().enumerate() {
            let class = FailureKind::parse(&r.class)
                .filter(|k| *k != FailureKind::None)
                .ok_or_else(|| EvalError::Rules(format!("rule {}: unknown class '{}'", i + 1, r.class)))?;
            let regex = Regex::new(&r.pattern).map_err(|e| EvalError::Rules(format!("rule {}: {e}", i + 1)))?;
            rules.push(FailureRule {
                class,
                stage: r.stage,
                pattern: r.pattern,
                regex,
            });
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Rules(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The shipped table.
    pub fn shared() -> &'static RuleTable {
        static TABLE: OnceLock<RuleTable> = OnceLock::new();
        TABLE.get_or_init(|| RuleTable::from_toml(DEFAULT_RULES).expect("shipped failure rules are valid"))
    }
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::shared().clone()
    }
}

/// Classifies the log of a failed stage. Logs matching no rule fall into the
/// residual `compilation` class without evidence.
pub fn classify_log(stage: Stage, log: &str, rules: &RuleTable) -> FailureClass {
    for r in &rules.rules {
        if r.stage.is_some_and(|s| s != stage) {
            continue;
        }
        if let Some(m) = r.regex.find(log) {
            let line_start = log[..m.start()].rfind('\n').map_or(0, |i| i + 1);
            let line_end = log[m.start()..].find('\n').map_or(log.len(), |i| m.start() + i);
            return FailureClass {
                value: r.class,
                evidence: Some(Evidence {
                    stage,
                    pattern: r.pattern.clone(),
                    line: truncate_chars(log[line_start..line_end].trim(), EVIDENCE_LINE_CAP),
                }),
            };
        }
    }
    FailureClass {
        value: FailureKind::Compilation,
        evidence: None,
    }
}

/// Classifies a staged run by its first failing stage; `none` when every
/// recorded stage passed.
pub fn classify_failure(stages: &[StageResult], rules: &RuleTable) -> FailureClass {
    match stages.iter().find(|s| !s.passed) {
        Some(s) => classify_log(s.stage, &s.log_excerpt, rules),
        None => FailureClass::none(),
    }
}
