//! Staged validation of candidate recipes.
//!
//! A recipe is placed into a package repository inside a sandbox and taken
//! through load, concretize and install, stopping at the first failure.
//! Failing runs can be followed by an audit, and the first failing stage's
//! log is classified with an ordered rule table ([`RuleTable`]).
//!
//! Three sandboxes are provided: [`ContainerSandbox`] runs the package manager
//! in a container image, [`ProcessSandbox`] runs it as a host process (no
//! isolation), and [`HermeticSandbox`] simulates the stages in-process with a
//! stubbed network, for tests and offline runs.

mod classify;
mod hermetic;
mod sandbox;

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use classify::{classify_failure, classify_log, FailureRule, RuleTable, DEFAULT_RULES};
pub use hermetic::{HermeticConfig, HermeticSandbox};
pub use sandbox::{CommandTemplates, ContainerSandbox, ProcessSandbox, SandboxConfig, SandboxKind};

use crate::text::{truncate_bytes, TRUNCATION_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Concretize,
    Install,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Load, Stage::Concretize, Stage::Install];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Concretize => "concretize",
            Stage::Install => "install",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A package-manager invocation inside a sandbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Stage(Stage),
    Audit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub exit_code: i32,
    /// Interleaved stdout and stderr.
    pub output: String,
    pub timed_out: bool,
    pub duration: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    /// The sandbox itself failed (runtime missing, work dir not writable).
    /// Distinct from a recipe failing a stage.
    #[error("sandbox error: {0}")]
    Sandbox(String),
    #[error("{stage} stage timed out")]
    Timeout { stage: String, report: Box<EvaluationReport> },
    #[error("invalid failure rules: {0}")]
    Rules(String),
}

/// The environment a recipe is evaluated in.
pub trait Sandbox: Send + Sync {
    fn id(&self) -> String;

    /// Places the recipe into a fresh package repository.
    fn prepare(&self, package: &str, recipe_text: &str) -> Result<Box<dyn Workspace>, EvalError>;
}

/// One prepared evaluation. Dropping it removes its work directory.
pub trait Workspace {
    fn id(&self) -> String;
    fn run(&mut self, step: Step, timeout: Duration) -> Result<CommandOutput, EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub passed: bool,
    pub log_excerpt: String,
    #[serde(with = "crate::llm::duration_secs")]
    pub duration: Duration,
    pub exit_code: i32,
    #[serde(default)]
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub check_id: String,
    pub message: String,
}

impl std::fmt::Display for AuditFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.check_id, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    pub passed: bool,
}

impl AuditReport {
    pub fn new(findings: Vec<AuditFinding>) -> Self {
        Self {
            passed: findings.is_empty(),
            findings,
        }
    }

    fn load_failed() -> Self {
        Self::new(vec![AuditFinding {
            check_id: "AUDIT".into(),
            message: "audit skipped: load failed".into(),
        }])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Web,
    Constraint,
    MissingDependency,
    Cmake,
    Syntax,
    Compilation,
    None,
}

impl FailureKind {
    /// The six failure classes, without `None`.
    pub const CLASSES: [FailureKind; 6] = [
        FailureKind::Web,
        FailureKind::Constraint,
        FailureKind::MissingDependency,
        FailureKind::Cmake,
        FailureKind::Syntax,
        FailureKind::Compilation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Web => "web",
            FailureKind::Constraint => "constraint",
            FailureKind::MissingDependency => "missing_dependency",
            FailureKind::Cmake => "cmake",
            FailureKind::Syntax => "syntax",
            FailureKind::Compilation => "compilation",
            FailureKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::CLASSES
            .into_iter()
            .chain([FailureKind::None])
            .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub stage: Stage,
    pub pattern: String,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureClass {
    pub value: FailureKind,
    /// Absent for `none` and for residual compilation failures.
    pub evidence: Option<Evidence>,
}

impl FailureClass {
    pub fn none() -> Self {
        Self {
            value: FailureKind::None,
            evidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub package_name: String,
    pub stages: Vec<StageResult>,
    pub audit: Option<AuditReport>,
    pub failure: FailureClass,
    pub recipe_text: String,
    pub sandbox_id: String,
}

impl EvaluationReport {
    pub fn passed(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage && s.passed)
    }

    pub fn installed(&self) -> bool {
        self.passed(Stage::Install)
    }

    pub fn first_failure(&self) -> Option<&StageResult> {
        self.stages.iter().find(|s| !s.passed)
    }

    /// Pass flags form a prefix of (load, concretize, install).
    pub fn is_monotone(&self) -> bool {
        let flags: Vec<bool> = Stage::ALL.iter().map(|s| self.passed(*s)).collect();
        flags.windows(2).all(|w| w[0] || !w[1])
            && self.stages.iter().zip(Stage::ALL).all(|(r, s)| r.stage == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageTimeouts {
    pub load_secs: u64,
    pub concretize_secs: u64,
    pub install_secs: u64,
    pub audit_secs: u64,
}

impl Default for StageTimeouts {
    fn default() -> Self {
        Self {
            load_secs: 60,
            concretize_secs: 300,
            install_secs: 3600,
            audit_secs: 120,
        }
    }
}

impl StageTimeouts {
    pub fn for_step(&self, step: Step) -> Duration {
        Duration::from_secs(match step {
            Step::Stage(Stage::Load) => self.load_secs,
            Step::Stage(Stage::Concretize) => self.concretize_secs,
            Step::Stage(Stage::Install) => self.install_secs,
            Step::Audit => self.audit_secs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub timeouts: StageTimeouts,
    /// Byte cap for each stage's log excerpt.
    pub log_cap: usize,
    pub audit_on_failure: bool,
    pub audit_always: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            timeouts: StageTimeouts::default(),
            log_cap: 16_384,
            audit_on_failure: true,
            audit_always: false,
        }
    }
}

/// Runs load, concretize and install in order, stopping at the first failure,
/// then audits when configured and classifies the outcome.
///
/// A stage timeout returns [`EvalError::Timeout`] carrying the report built
/// so far, with the timed-out stage recorded as failed.
pub fn evaluate(
    recipe_text: &str,
    package_name: &str,
    sandbox: &dyn Sandbox,
    cfg: &EvalConfig,
    rules: &RuleTable,
) -> Result<EvaluationReport, EvalError> {
    let mut ws = sandbox.prepare(package_name, recipe_text)?;
    let mut stages = Vec::new();
    let mut timed_out = None;
    for stage in Stage::ALL {
        let out = ws.run(Step::Stage(stage), cfg.timeouts.for_step(Step::Stage(stage)))?;
        let passed = out.exit_code == 0 && !out.timed_out;
        let mut log = out.output;
        if out.timed_out {
            log.push_str(&format!(
                "\n==> Error: {stage} stage timed out after {} s\n",
                cfg.timeouts.for_step(Step::Stage(stage)).as_secs()
            ));
            timed_out = Some(stage);
        }
        stages.push(StageResult {
            stage,
            passed,
            log_excerpt: condense_log(&log, cfg.log_cap),
            duration: out.duration,
            exit_code: out.exit_code,
            timed_out: out.timed_out,
        });
        if !passed {
            break;
        }
    }
    let failed = stages.iter().any(|s| !s.passed);
    let audit = if timed_out.is_none() && (cfg.audit_always || (failed && cfg.audit_on_failure)) {
        let loaded = stages.first().is_some_and(|s| s.passed);
        Some(audit_in(ws.as_mut(), loaded, cfg)?)
    } else {
        None
    };
    let report = EvaluationReport {
        package_name: package_name.to_string(),
        failure: classify_failure(&stages, rules),
        stages,
        audit,
        recipe_text: recipe_text.to_string(),
        sandbox_id: ws.id(),
    };
    match timed_out {
        Some(stage) => Err(EvalError::Timeout {
            stage: stage.as_str().to_string(),
            report: Box::new(report),
        }),
        None => Ok(report),
    }
}

/// Runs the package manager's static checks on a recipe. An unloadable
/// recipe yields the single finding "audit skipped: load failed".
pub fn audit(recipe_text: &str, package_name: &str, sandbox: &dyn Sandbox, cfg: &EvalConfig) -> Result<AuditReport, EvalError> {
    let mut ws = sandbox.prepare(package_name, recipe_text)?;
    let load = ws.run(Step::Stage(Stage::Load), cfg.timeouts.for_step(Step::Stage(Stage::Load)))?;
    if load.timed_out {
        return Err(timeout_without_report("load", package_name, recipe_text, ws.id()));
    }
    audit_in(ws.as_mut(), load.exit_code == 0, cfg)
}

fn timeout_without_report(stage: &str, package_name: &str, recipe_text: &str, sandbox_id: String) -> EvalError {
    EvalError::Timeout {
        stage: stage.to_string(),
        report: Box::new(EvaluationReport {
            package_name: package_name.to_string(),
            stages: Vec::new(),
            audit: None,
            failure: FailureClass::none(),
            recipe_text: recipe_text.to_string(),
            sandbox_id,
        }),
    }
}

fn audit_in(ws: &mut dyn Workspace, loaded: bool, cfg: &EvalConfig) -> Result<AuditReport, EvalError> {
    if !loaded {
        return Ok(AuditReport::load_failed());
    }
    let out = ws.run(Step::Audit, cfg.timeouts.for_step(Step::Audit))?;
    if out.timed_out {
        return Err(EvalError::Timeout {
            stage: "audit".into(),
            report: Box::new(EvaluationReport {
                package_name: String::new(),
                stages: Vec::new(),
                audit: None,
                failure: FailureClass::none(),
                recipe_text: String::new(),
                sandbox_id: ws.id(),
            }),
        });
    }
    let mut findings = parse_audit_output(&out.output);
    if findings.is_empty() && out.exit_code != 0 {
        let last = out.output.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("audit command failed");
        findings.push(AuditFinding {
            check_id: "AUDIT".into(),
            message: last.trim().to_string(),
        });
    }
    Ok(AuditReport::new(findings))
}

/// Parses audit output of the form
///
/// ```text
/// PKG-DIRECTIVES: 2 issues found
/// 1. first message
///     detail
/// 2. second message
/// ```
///
/// into one finding per numbered item. Indented detail lines are appended to
/// the item's message after a space.
pub fn parse_audit_output(text: &str) -> Vec<AuditFinding> {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    static ITEM: OnceLock<Regex> = OnceLock::new();
    let header = HEADER.get_or_init(|| Regex::new(r"^([A-Z][A-Z0-9_-]*): \d+ issues? found").unwrap());
    let item = ITEM.get_or_init(|| Regex::new(r"^\s*\d+\.\s+(.+?)\s*$").unwrap());
    let mut findings: Vec<AuditFinding> = Vec::new();
    let mut group: Option<String> = None;
    let mut open = false;
    for line in text.lines() {
        if let Some(c) = header.captures(line) {
            group = Some(c[1].to_string());
            open = false;
        } else if let (Some(g), Some(c)) = (&group, item.captures(line)) {
            findings.push(AuditFinding {
                check_id: g.clone(),
                message: c[1].to_string(),
            });
            open = true;
        } else if open && line.starts_with(char::is_whitespace) && !line.trim().is_empty() {
            let last = findings.last_mut().expect("open item");
            last.message.push(' ');
            last.message.push_str(line.trim());
        } else {
            open = false;
        }
    }
    findings
}

/// Renders findings in the format [`parse_audit_output`] reads.
pub fn render_audit_output(findings: &[AuditFinding]) -> String {
    let mut groups: Vec<(&str, Vec<&str>)> = Vec::new();
    for f in findings {
        match groups.iter_mut().find(|(g, _)| *g == f.check_id) {
            Some((_, items)) => items.push(&f.message),
            None => groups.push((&f.check_id, vec![&f.message])),
        }
    }
    let mut out = String::new();
    for (g, items) in groups {
        let noun = if items.len() == 1 { "issue" } else { "issues" };
        out.push_str(&format!("{g}: {} {noun} found\n", items.len()));
        for (i, m) in items.iter().enumerate() {
            out.push_str(&format!("{}. {m}\n", i + 1));
        }
    }
    out
}

fn error_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(==> Error|^\s*error:|CMake Error|Traceback \(most recent call last\)|fatal error|\bError:)").unwrap()
    })
}

fn error_signal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(error|fatal|unsatisfiable|cannot|could not|not found|no such file|failed|traceback|warning: .*deprecated|\b40[34]\b|undefined reference)",
        )
        .unwrap()
    })
}

const SIGNAL_LINE_CAP: usize = 512;

/// Shrinks a log to at most `budget` bytes, keeping the final error block and
/// earlier error-signal lines. Logs within budget are returned unchanged;
/// shortened output starts with a truncation marker line.
pub fn condense_log(raw: &str, budget: usize) -> String {
    if raw.len() <= budget {
        return raw.to_string();
    }
    let header = format!("{TRUNCATION_MARKER}\n");
    if budget <= header.len() {
        return truncate_bytes(raw, budget);
    }
    let avail = budget - header.len();
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines.iter().rposition(|l| error_start().is_match(l)).unwrap_or_else(|| {
        // no error line: keep the tail
        let mut size = 0;
        let mut i = lines.len();
        while i > 0 && size + lines[i - 1].len() + 1 <= avail {
            size += lines[i - 1].len() + 1;
            i -= 1;
        }
        i
    });
    let block = lines[start..].join("\n");
    let block = truncate_bytes(&block, avail);
    let mut remaining = avail.saturating_sub(block.len() + 1);
    let mut picked: Vec<String> = Vec::new();
    for line in lines[..start].iter().rev() {
        if !error_signal().is_match(line) {
            continue;
        }
        let l = truncate_bytes(line.trim_end(), SIGNAL_LINE_CAP);
        if picked.contains(&l) || block.contains(l.as_str()) {
            continue;
        }
        if l.len() + 1 > remaining {
            break;
        }
        remaining -= l.len() + 1;
        picked.push(l);
    }
    picked.reverse();
    let mut out = header;
    for l in picked {
        out.push_str(&l);
        out.push('\n');
    }
    out.push_str(&block);
    debug_assert!(out.len() <= budget);
    out
}
