//! Batch runs over a task set: resumable JSONL results, aggregate reports,
//! and the layered configuration file.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{FailureKind, RuleTable, SandboxConfig, Stage};
use crate::kb::{EmbeddingIndex, Store};
use crate::llm::{ModelConfig, ModelHandle};
use crate::repair::{run_session, SessionConfig, SessionEnv, SessionRecord, SessionStatus, SCHEMA_VERSION};
use crate::repo::AnalyzeOptions;
use crate::text::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid task set: {0}")]
    TaskSet(String),
    #[error("task {package}: {reason}")]
    Unresolvable { package: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("results file {path}, line {line}: {message}")]
    Results { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub package: String,
    /// Local directory, local archive, or http(s) archive URL.
    pub repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    /// Hash of the task list.
    pub id: String,
}

#[derive(Deserialize)]
struct TaskManifest {
    #[serde(default)]
    task: Vec<Task>,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>) -> Result<Self, BenchError> {
        let mut seen = BTreeSet::new();
        for t in &tasks {
            if t.package.is_empty() {
                return Err(BenchError::TaskSet("empty package name".into()));
            }
            if !seen.insert(&t.package) {
                return Err(BenchError::TaskSet(format!("duplicate package '{}'", t.package)));
            }
        }
        let json = serde_json::to_string(&tasks).expect("tasks serialize");
        Ok(Self {
            id: sha256_hex(json.as_bytes()),
            tasks,
        })
    }

    /// Reads a TOML manifest of `[[task]]` tables. Relative paths are taken
    /// relative to the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: TaskManifest = toml::from_str(&text).map_err(|e| BenchError::TaskSet(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let abs = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let tasks = manifest
            .task
            .into_iter()
            .map(|mut t| {
                if !is_url(&t.repo) && Path::new(&t.repo).is_relative() {
                    t.repo = base.join(&t.repo).to_string_lossy().into_owned();
                }
                t.ground_truth = t.ground_truth.map(abs);
                t.version_sidecar = t.version_sidecar.map(abs);
                t
            })
            .collect();
        Self::new(tasks)
    }

    /// Seeded sample of `n` tasks without replacement, in task-set order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self, BenchError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, self.tasks.len(), n.min(self.tasks.len())).into_vec();
        picked.sort_unstable();
        Self::new(picked.into_iter().map(|i| self.tasks[i].clone()).collect())
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

fn is_archive(s: &str) -> bool {
    [".tar.gz", ".tgz", ".tar.bz2", ".tar.xz", ".tar", ".zip"].iter().any(|e| s.ends_with(e))
}

/// Returns a local directory for the task's repository, downloading and
/// unpacking archives into `cache_dir`.
pub fn resolve_task(task: &Task, cache_dir: &Path) -> Result<PathBuf, BenchError> {
    let fail = |reason: String| BenchError::Unresolvable {
        package: task.package.clone(),
        reason,
    };
    let local = Path::new(&task.repo);
    if !is_url(&task.repo) && local.is_dir() {
        return Ok(local.to_path_buf());
    }
    if !is_archive(&task.repo) {
        return Err(fail(format!("'{}' is neither a directory nor an archive", task.repo)));
    }
    let key = &sha256_hex(task.repo.as_bytes())[..16];
    let dest = cache_dir.join(format!("{}-{key}", task.package));
    if dest.is_dir() {
        return unpacked_root(&dest).ok_or_else(|| fail("empty archive".into()));
    }
    fs::create_dir_all(cache_dir).map_err(io_err(cache_dir))?;
    let file_name = task.repo.rsplit('/').next().unwrap_or("archive");
    let archive = if is_url(&task.repo) {
        let path = cache_dir.join(format!("{key}-{file_name}"));
        let mut resp = ureq::get(&task.repo).call().map_err(|e| fail(format!("download failed: {e}")))?;
        let mut reader = resp.body_mut().as_reader();
        let mut out = fs::File::create(&path).map_err(io_err(&path))?;
        std::io::copy(&mut reader, &mut out).map_err(io_err(&path))?;
        path
    } else if local.is_file() {
        local.to_path_buf()
    } else {
        return Err(fail(format!("'{}' does not exist", task.repo)));
    };
    let staging = cache_dir.join(format!(".{key}.partial"));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;
    let status = if task.repo.ends_with(".zip") {
        std::process::Command::new("unzip").arg("-q").arg(&archive).arg("-d").arg(&staging).status()
    } else {
        std::process::Command::new("tar").arg("-xf").arg(&archive).arg("-C").arg(&staging).status()
    };
    match status {
        Ok(s) if s.success() => {}
        Ok(s) => return Err(fail(format!("unpacking failed with {s}"))),
        Err(e) => return Err(fail(format!("cannot run unpacker: {e}"))),
    }
    fs::rename(&staging, &dest).map_err(io_err(&dest))?;
    unpacked_root(&dest).ok_or_else(|| fail("empty archive".into()))
}

/// Archives usually hold one top-level directory; use it when present.
fn unpacked_root(dir: &Path) -> Option<PathBuf> {
    let entries: Vec<PathBuf> = fs::read_dir(dir).ok()?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    match entries.as_slice() {
        [] => None,
        [only] if only.is_dir() => Some(only.clone()),
        _ => Some(dir.to_path_buf()),
    }
}

/// Reads a results stream. A malformed final line (an interrupted write) is
/// ignored and reported through the returned byte offset of the last
/// complete record; malformed lines elsewhere are errors.
pub fn read_results(path: &Path) -> Result<(Vec<SessionRecord>, u64), BenchError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut records = Vec::new();
    let mut good_end = 0u64;
    let mut offset = 0u64;
    let mut pending_error: Option<(usize, String)> = None;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io_err(path))?;
        if read == 0 {
            break;
        }
        n += 1;
        offset += read as u64;
        if let Some((l, m)) = pending_error.take() {
            return Err(BenchError::Results {
                path: path.to_path_buf(),
                line: l,
                message: m,
            });
        }
        if line.trim().is_empty() {
            good_end = offset;
            continue;
        }
        match serde_json::from_str::<SessionRecord>(line.trim_end()) {
            Ok(r) if r.schema_version == SCHEMA_VERSION && line.ends_with('\n') => {
                records.push(r);
                good_end = offset;
            }
            Ok(r) if r.schema_version != SCHEMA_VERSION => {
                return Err(BenchError::Results {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("schema version {} (expected {SCHEMA_VERSION})", r.schema_version),
                })
            }
            Ok(_) => {}
            Err(e) => pending_error = Some((n, e.to_string())),
        }
    }
    Ok((records, good_end))
}

/// Appends records, one JSON object per line, dropping any partial tail.
pub struct ResultsWriter {
    file: fs::File,
    path: PathBuf,
}

impl ResultsWriter {
    pub fn open(path: &Path, keep_bytes: u64) -> Result<Self, BenchError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() > keep_bytes {
            file.set_len(keep_bytes).map_err(io_err(path))?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &SessionRecord) -> Result<(), BenchError> {
        let mut line = serde_json::to_string(record).map_err(|e| BenchError::Config(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Shared resources for a batch.
pub struct BenchEnv<'a> {
    pub model: &'a ModelHandle,
    pub sandbox: &'a dyn crate::eval::Sandbox,
    pub rules: &'a RuleTable,
    pub store: Option<&'a Store>,
    pub index: Option<&'a EmbeddingIndex>,
    pub analyze: AnalyzeOptions,
    pub results: PathBuf,
    pub artifact_dir: Option<PathBuf>,
    pub archive_cache: PathBuf,
    pub parallelism: usize,
    /// Stop after this many new sessions (the rest stay pending for resume).
    pub max_sessions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutcome {
    pub task_set_id: String,
    pub skipped: usize,
    pub ran: usize,
    pub pending: usize,
    pub report: BenchReport,
}

/// Runs one session per (task, config) pair not already in the results file
/// and reports over the whole file. Sessions run on a bounded worker pool and
/// a single writer appends each record as it completes.
pub fn run_bench(task_set: &TaskSet, configs: &[SessionConfig], env: &BenchEnv) -> Result<BenchOutcome, BenchError> {
    let mut labels = BTreeSet::new();
    for c in configs {
        c.validate().map_err(|e| BenchError::Config(format!("{}: {e}", c.label)))?;
        if !labels.insert(&c.label) {
            return Err(BenchError::Config(format!("duplicate config label '{}'", c.label)));
        }
    }
    let (existing, keep) = read_results(&env.results)?;
    let done: BTreeSet<(String, String)> = existing.iter().map(|r| r.key()).collect();
    let mut work: VecDeque<(&crate::bench::Task, &SessionConfig)> = VecDeque::new();
    let mut skipped = 0;
    for t in &task_set.tasks {
        for c in configs {
            if done.contains(&(t.package.clone(), c.label.clone())) {
                skipped += 1;
            } else {
                work.push_back((t, c));
            }
        }
    }
    let total_pending = work.len();
    if let Some(m) = env.max_sessions {
        work.truncate(m);
    }
    let mut resolved: BTreeMap<&str, PathBuf> = BTreeMap::new();
    for (t, _) in &work {
        if !resolved.contains_key(t.package.as_str()) {
            resolved.insert(&t.package, resolve_task(t, &env.archive_cache)?);
        }
    }
    let mut ground_truth: BTreeMap<&str, String> = BTreeMap::new();
    for (t, _) in &work {
        if let Some(p) = &t.ground_truth {
            ground_truth.insert(&t.package, fs::read_to_string(p).map_err(io_err(p))?);
        }
    }

    let mut writer = ResultsWriter::open(&env.results, keep)?;
    let ran = work.len();
    let queue = Mutex::new(work);
    let (tx, rx) = mpsc::channel::<SessionRecord>();
    let workers = env.parallelism.max(1).min(ran.max(1));
    let write_result = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let resolved = &resolved;
            let ground_truth = &ground_truth;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").pop_front();
                let Some((task, cfg)) = next else { break };
                let mut analyze = env.analyze.clone();
                analyze.package_name = Some(task.package.clone());
                analyze.sidecar = task.version_sidecar.clone();
                let senv = SessionEnv {
                    model: env.model,
                    sandbox: env.sandbox,
                    rules: env.rules,
                    store: env.store,
                    index: env.index,
                    analyze,
                    artifact_dir: env.artifact_dir.clone(),
                };
                let repo = &resolved[task.package.as_str()];
                let gt = ground_truth.get(task.package.as_str()).map(String::as_str);
                let mut record = match run_session(repo, gt, cfg, &senv) {
                    Ok(r) => r,
                    Err(e) => {
                        let mut r = run_session_failed(&task.package, cfg, env.model);
                        r.abort_reason = Some(e.to_string());
                        r
                    }
                };
                // key by the task's name even when analysis derived another
                record.package_name = task.package.clone();
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut first_err = None;
        for record in rx {
            if first_err.is_none() {
                if let Err(e) = writer.append(&record) {
                    first_err = Some(e);
                    queue.lock().expect("queue lock").clear();
                }
            }
        }
        first_err
    });
    if let Some(e) = write_result {
        return Err(e);
    }
    let (records, _) = read_results(&env.results)?;
    Ok(BenchOutcome {
        task_set_id: task_set.id.clone(),
        skipped,
        ran,
        pending: total_pending - ran,
        report: report(&records),
    })
}

fn run_session_failed(package: &str, cfg: &SessionConfig, model: &ModelHandle) -> SessionRecord {
    SessionRecord {
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
        abort_reason: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub package: String,
    pub config: String,
    pub status: SessionStatus,
    pub successful_attempt: Option<usize>,
    pub attempts: usize,
    pub variant_score: Option<f64>,
    pub dependency_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub config: String,
    pub sessions: usize,
    /// Sessions aborted before any attempt; left out of the fractions.
    pub aborted: usize,
    /// Share of sessions where the stage passed in some attempt.
    pub load: f64,
    pub concretize: f64,
    pub install: f64,
    pub mean_variant_score: Option<f64>,
    pub mean_dependency_score: Option<f64>,
    pub mean_attempts_to_success: Option<f64>,
    /// Entry `a-1` is the share of sessions installed by attempt `a`.
    pub cumulative_success: Vec<f64>,
    pub failed_attempts: usize,
    /// Share of failed attempts per class; all zero without failures.
    pub failure_incidence: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub sessions: Vec<SessionSummary>,
    pub rows: Vec<ConfigRow>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Aggregates records per configuration label, in first-seen order.
pub fn report(records: &[SessionRecord]) -> BenchReport {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&SessionRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(r.config.label.as_str()) {
            order.push(&r.config.label);
        }
        groups.entry(&r.config.label).or_default().push(r);
    }
    let rows = order.iter().map(|label| config_row(label, &groups[label])).collect();
    let sessions = records
        .iter()
        .map(|r| SessionSummary {
            package: r.package_name.clone(),
            config: r.config.label.clone(),
            status: r.status,
            successful_attempt: r.successful_attempt,
            attempts: r.attempts.len(),
            variant_score: r.metrics.as_ref().and_then(|m| m.variant_score),
            dependency_score: r.metrics.as_ref().map(|m| m.dependency_score),
        })
        .collect();
    BenchReport { sessions, rows }
}

fn config_row(label: &str, records: &[&SessionRecord]) -> ConfigRow {
    let live: Vec<&&SessionRecord> = records.iter().filter(|r| !r.attempts.is_empty()).collect();
    let n = live.len();
    let passed_any = |stage: Stage| live.iter().filter(|r| r.attempts.iter().any(|a| a.report.passed(stage))).count();
    let k = records.iter().map(|r| r.config.k_max.max(r.attempts.len())).max().unwrap_or(0);
    let cumulative_success = (1..=k)
        .map(|a| frac(live.iter().filter(|r| r.successful_attempt.is_some_and(|s| s <= a)).count(), n))
        .collect();
    let successes: Vec<f64> = live.iter().filter_map(|r| r.successful_attempt.map(|s| s as f64)).collect();
    let sv: Vec<f64> = live.iter().filter_map(|r| r.metrics.as_ref().and_then(|m| m.variant_score)).collect();
    let sd: Vec<f64> = live.iter().filter_map(|r| r.metrics.as_ref().map(|m| m.dependency_score)).collect();
    let mut counts: BTreeMap<FailureKind, usize> = BTreeMap::new();
    for r in &live {
        for a in &r.attempts {
            if a.report.failure.value != FailureKind::None {
                *counts.entry(a.report.failure.value).or_default() += 1;
            }
        }
    }
    let failed_attempts: usize = counts.values().sum();
    let failure_incidence = FailureKind::CLASSES
        .iter()
        .map(|c| (c.as_str().to_string(), frac(counts.get(c).copied().unwrap_or(0), failed_attempts)))
        .collect();
    ConfigRow {
        config: label.to_string(),
        sessions: records.len(),
        aborted: records.len() - n,
        load: frac(passed_any(Stage::Load), n),
        concretize: frac(passed_any(Stage::Concretize), n),
        install: frac(passed_any(Stage::Install), n),
        mean_variant_score: mean(&sv),
        mean_dependency_score: mean(&sd),
        mean_attempts_to_success: mean(&successes),
        cumulative_success,
        failed_attempts,
        failure_incidence,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

impl BenchReport {
    /// Stage fractions, score means and attempts per configuration.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>5} {:>6} {:>10} {:>8} {:>6} {:>6} {:>9} {:>7}\n",
            "config", "n", "load", "concretize", "install", "S_v", "S_d", "attempts", "aborted"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>5} {:>6.3} {:>10.3} {:>8.3} {:>6} {:>6} {:>9} {:>7}\n",
                r.config,
                r.sessions - r.aborted,
                r.load,
                r.concretize,
                r.install,
                opt(r.mean_variant_score),
                opt(r.mean_dependency_score),
                opt(r.mean_attempts_to_success),
                r.aborted
            ));
        }
        out
    }

    /// Share of failed attempts per failure class and configuration.
    pub fn failure_table(&self) -> String {
        let mut out = format!("{:<24}", "config");
        for c in FailureKind::CLASSES {
            out.push_str(&format!(" {:>18}", c.as_str()));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<24}", r.config));
            for c in FailureKind::CLASSES {
                out.push_str(&format!(" {:>18.3}", r.failure_incidence[c.as_str()]));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("config,sessions,aborted,load,concretize,install,mean_sv,mean_sd,mean_attempts");
        for c in FailureKind::CLASSES {
            out.push_str(&format!(",fail_{}", c.as_str()));
        }
        out.push('\n');
        let cell = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&r.config),
                r.sessions,
                r.aborted,
                r.load,
                r.concretize,
                r.install,
                cell(r.mean_variant_score),
                cell(r.mean_dependency_score),
                cell(r.mean_attempts_to_success)
            ));
            for c in FailureKind::CLASSES {
                out.push_str(&format!(",{}", r.failure_incidence[c.as_str()]));
            }
            out.push('\n');
        }
        out
    }

    /// `config,attempt,cumulative_success` rows for plotting.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("config,attempt,cumulative_success\n");
        for r in &self.rows {
            for (i, v) in r.cumulative_success.iter().enumerate() {
                out.push_str(&format!("{},{},{v}\n", csv_field(&r.config), i + 1));
            }
        }
        out
    }

    /// Writes `summary.txt`, `summary.csv`, `curve.csv` and `report.json`.
    pub fn write_files(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| BenchError::Config(e.to_string()))?;
        let files = [
            ("summary.txt", format!("{}\n{}", self.summary_table(), self.failure_table())),
            ("summary.csv", self.summary_csv()),
            ("curve.csv", self.curve_csv()),
            ("report.json", json),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// The configuration file. Every section is optional; missing values take
/// their defaults, and command-line flags override what the file sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub session: SessionConfig,
    pub sandbox: SandboxConfig,
    pub paths: PathsConfig,
    pub bench: BenchSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            session: SessionConfig::default(),
            sandbox: SandboxConfig::default(),
            paths: PathsConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Saved knowledge base (from `ingest`).
    pub knowledge_base: Option<PathBuf>,
    pub embedding_cache: Option<PathBuf>,
    pub failure_rules: Option<PathBuf>,
    pub prompt_template: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
    pub archive_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub parallelism: usize,
    /// Seeded subsample size; all tasks when unset.
    pub sample: Option<usize>,
    pub sample_seed: u64,
    /// Ablation cells: tables of session settings layered over `[session]`.
    pub configs: Vec<toml::Table>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            parallelism: 1,
            sample: None,
            sample_seed: 0,
            configs: Vec::new(),
        }
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// The session settings of each ablation cell, or the base session alone
    /// when none are listed.
    pub fn session_configs(&self) -> Result<Vec<SessionConfig>, BenchError> {
        if self.bench.configs.is_empty() {
            return Ok(vec![self.session.clone()]);
        }
        let base = toml::Table::try_from(&self.session).map_err(|e| BenchError::Config(e.to_string()))?;
        self.bench
            .configs
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let mut t = base.clone();
                merge(&mut t, cell);
                if !cell.contains_key("label") {
                    t.insert("label".into(), toml::Value::String(format!("config-{}", i + 1)));
                }
                t.try_into::<SessionConfig>()
                    .map_err(|e| BenchError::Config(format!("bench config {}: {e}", i + 1)))
            })
            .collect()
    }
}
