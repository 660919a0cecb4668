//! `recipesynth` command-line front end.
//!
//! Exit status: 0 on success, 1 when the task itself fails (a recipe does not
//! install, a session aborts), 2 for usage and configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use recipesynth::bench::{read_results, report, run_bench, BenchEnv, FileConfig, TaskSet};
use recipesynth::eval::{evaluate, EvalError, RuleTable, SandboxKind};
use recipesynth::kb::{build_embedding_index, export_cypher, ingest, load_corpus, EmbeddingIndex, Store, Strategy};
use recipesynth::llm::{assemble_prompt, complete, ModelHandle, PromptMode};
use recipesynth::metrics::{score_recipes, score_unparseable};
use recipesynth::recipe::parse_recipe;
use recipesynth::repair::{retrieve_references, run_session, MetadataMode, SessionEnv, SessionStatus};
use recipesynth::repo::{distill, extract_metadata, AnalyzeOptions, DistillMode};

#[derive(Parser)]
#[command(name = "recipesynth", version, about = "Synthesize and evaluate Spack package recipes")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the session RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RepoArgs {
    /// Source repository directory.
    repo: PathBuf,
    /// Package name; the directory name when omitted.
    #[arg(long)]
    package: Option<String>,
    /// JSON file with version, checksum and URL.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct SessionArgs {
    /// Reference strategy: none, similar, random, random_same_build_system, embedding.
    #[arg(long)]
    strategy: Option<String>,
    /// Number of reference recipes.
    #[arg(long)]
    count: Option<usize>,
    /// Attempt budget.
    #[arg(long = "k")]
    k_max: Option<usize>,
    /// Saved knowledge base.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Sandbox kind: container, process, hermetic.
    #[arg(long)]
    sandbox: Option<String>,
    /// Feed audit findings into repair prompts.
    #[arg(long)]
    audit_feedback: bool,
    /// Use raw rather than distilled metadata.
    #[arg(long)]
    raw_metadata: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print extracted repository metadata as JSON.
    Extract {
        #[command(flatten)]
        repo: RepoArgs,
        /// Print the distilled outline instead.
        #[arg(long)]
        distill: bool,
    },
    /// Build a knowledge base from a recipe corpus.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the graph as Cypher statements.
        #[arg(long)]
        cypher: Option<PathBuf>,
        /// Also build the embedding index (cached under this directory).
        #[arg(long)]
        embed_cache: Option<PathBuf>,
    },
    /// Show the references a repository would receive.
    Retrieve {
        #[command(flatten)]
        repo: RepoArgs,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Produce one recipe without evaluating it.
    Generate {
        #[command(flatten)]
        repo: RepoArgs,
        #[command(flatten)]
        session: SessionArgs,
        /// Print the prompt instead of calling the model.
        #[arg(long)]
        prompt_only: bool,
    },
    /// Run load, concretize and install on a recipe file.
    Evaluate {
        recipe: PathBuf,
        #[arg(long)]
        package: String,
        #[arg(long)]
        sandbox: Option<String>,
    },
    /// Compare a generated recipe with a reference recipe.
    Score { reference: PathBuf, generated: PathBuf },
    /// One full generation session.
    Run {
        #[command(flatten)]
        repo: RepoArgs,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Directory for per-attempt prompts, recipes and logs.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Sessions over a task manifest for every configured cell.
    Bench {
        tasks: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        /// Directory for summary tables and the curve.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Seeded subsample size.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Stop after this many new sessions.
        #[arg(long)]
        max_sessions: Option<usize>,
    },
    /// Summarize a results file.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Task(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Task(e)
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Task(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    cfg: FileConfig,
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn apply_session(&mut self, a: &SessionArgs) -> Result<(), Failure> {
        let s = &mut self.cfg.session;
        if let Some(name) = &a.strategy {
            s.reference_strategy = Strategy::parse(name).ok_or_else(|| usage(anyhow!("unknown strategy '{name}'")))?;
            if s.reference_strategy == Strategy::None && a.count.is_none() {
                s.reference_count = 0;
            }
        }
        if let Some(c) = a.count {
            s.reference_count = c;
        }
        if let Some(k) = a.k_max {
            s.k_max = k;
        }
        if a.audit_feedback {
            s.audit_feedback = true;
        }
        if a.raw_metadata {
            s.metadata_mode = MetadataMode::Raw;
        }
        if let Some(kb) = &a.kb {
            self.cfg.paths.knowledge_base = Some(kb.clone());
        }
        if let Some(kind) = &a.sandbox {
            self.set_sandbox(kind)?;
        }
        s_validate(&self.cfg)
    }

    fn set_sandbox(&mut self, kind: &str) -> Result<(), Failure> {
        self.cfg.sandbox.kind = match kind {
            "container" => SandboxKind::Container,
            "process" => SandboxKind::Process,
            "hermetic" => SandboxKind::Hermetic,
            other => return Err(usage(anyhow!("unknown sandbox '{other}'"))),
        };
        Ok(())
    }

    fn model(&self) -> Result<ModelHandle, Failure> {
        ModelHandle::new(self.cfg.model.clone()).map_err(usage)
    }

    fn rules(&self) -> Result<RuleTable, Failure> {
        match &self.cfg.paths.failure_rules {
            Some(p) => RuleTable::load(p).map_err(usage),
            None => Ok(RuleTable::default()),
        }
    }

    fn store(&self) -> Result<Option<Store>, Failure> {
        let Some(path) = &self.cfg.paths.knowledge_base else {
            return Ok(None);
        };
        let store = Store::load(path).map_err(usage)?;
        self.log(format!("knowledge base: {} packages", store.len()));
        Ok(Some(store))
    }

    fn index(&self, store: Option<&Store>, model: &ModelHandle) -> Result<Option<EmbeddingIndex>, Failure> {
        match (self.cfg.session.reference_strategy, store) {
            (Strategy::Embedding, Some(store)) => Ok(Some(
                build_embedding_index(store, model, self.cfg.paths.embedding_cache.as_deref())
                    .context("building embedding index")?,
            )),
            _ => Ok(None),
        }
    }

    /// Hermetic evaluation also accepts every knowledge-base package.
    fn sandbox(&self, store: Option<&Store>) -> Box<dyn recipesynth::eval::Sandbox> {
        let mut sc = self.cfg.sandbox.clone();
        if let Some(store) = store {
            sc.hermetic.known_packages.extend(store.packages.keys().cloned());
        }
        sc.build()
    }

    fn analyze(&self, repo: &RepoArgs) -> AnalyzeOptions {
        AnalyzeOptions {
            package_name: repo.package.clone(),
            sidecar: repo.sidecar.clone(),
            ..AnalyzeOptions::default()
        }
    }
}

fn s_validate(cfg: &FileConfig) -> Result<(), Failure> {
    cfg.session.validate().map_err(usage)
}

fn load_config(cli: &Cli) -> Result<FileConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(usage)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.session.rng_seed = seed;
        cfg.bench.sample_seed = seed;
    }
    if let Some(t) = cfg.paths.prompt_template.clone() {
        cfg.session
            .prompt
            .load_template(&t)
            .with_context(|| format!("reading {}", t.display()))
            .map_err(usage)?;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v).context("serializing output")?);
    Ok(())
}

fn read_text(p: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(p)
        .with_context(|| format!("reading {}", p.display()))
        .map_err(usage)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let mut ctx = Ctx {
        cfg,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Extract { repo, distill: d } => {
            let meta = extract_metadata(&repo.repo, &ctx.analyze(&repo)).context("analysis failed")?;
            if d {
                let s = &ctx.cfg.session;
                let model = match s.distill_mode {
                    DistillMode::LlmAssisted => Some(ctx.model()?),
                    DistillMode::RuleBased => None,
                };
                let out = distill(&meta, s.distill_mode, model.as_ref(), s.distill_budget).context("distillation failed")?;
                print!("{}", out.text);
            } else {
                print_json(&meta)?;
            }
        }
        Command::Ingest {
            corpus,
            out,
            cypher,
            embed_cache,
        } => {
            let entries = load_corpus(&corpus).map_err(usage)?;
            let (store, rep) = ingest(entries).context("ingest failed")?;
            for (pkg, err) in &rep.skipped {
                eprintln!("skipped {pkg}: {err}");
            }
            store.save(&out).context("saving knowledge base")?;
            if let Some(c) = cypher {
                std::fs::write(&c, export_cypher(&store)).with_context(|| format!("writing {}", c.display()))?;
            }
            if let Some(dir) = embed_cache {
                let idx = build_embedding_index(&store, &ctx.model()?, Some(&dir)).context("embedding index")?;
                ctx.log(format!("embedding index: {} entries", idx.entries.len()));
            }
            println!("ingested {} packages ({} skipped)", rep.ingested, rep.skipped.len());
        }
        Command::Retrieve { repo, session } => {
            ctx.apply_session(&session)?;
            let meta = extract_metadata(&repo.repo, &ctx.analyze(&repo)).context("analysis failed")?;
            let model = ctx.model()?;
            let store = ctx.store()?;
            let index = ctx.index(store.as_ref(), &model)?;
            let s = &ctx.cfg.session;
            let bundle = retrieve_references(&meta, s, &model, store.as_ref(), index.as_ref(), s.rng_seed).map_err(|e| anyhow!(e))?;
            for item in &bundle.items {
                match item.score {
                    Some(score) => println!("{}\t{score:.6}", item.package),
                    None => println!("{}", item.package),
                }
            }
            if bundle.insufficient {
                eprintln!("fewer than {} references available", s.reference_count);
            }
        }
        Command::Generate {
            repo,
            session,
            prompt_only,
        } => {
            ctx.apply_session(&session)?;
            let meta = extract_metadata(&repo.repo, &ctx.analyze(&repo)).context("analysis failed")?;
            let model = ctx.model()?;
            let store = ctx.store()?;
            let index = ctx.index(store.as_ref(), &model)?;
            let s = &ctx.cfg.session;
            let distilled = match s.metadata_mode {
                MetadataMode::Raw => None,
                MetadataMode::Distilled => {
                    Some(distill(&meta, s.distill_mode, Some(&model), s.distill_budget).context("distillation failed")?)
                }
            };
            let refs = retrieve_references(&meta, s, &model, store.as_ref(), index.as_ref(), s.rng_seed).map_err(|e| anyhow!(e))?;
            let prompt = assemble_prompt(&meta, distilled.as_ref(), &refs, PromptMode::Generate, false, &s.prompt)
                .context("prompt assembly failed")?;
            if prompt_only {
                print!("{}", prompt.render());
            } else {
                let reply = complete(&model, &prompt).context("model call failed")?;
                print!("{}", reply.text);
                ctx.log(format!("tokens: {}", reply.token_usage.total()));
            }
        }
        Command::Evaluate { recipe, package, sandbox } => {
            if let Some(kind) = &sandbox {
                ctx.set_sandbox(kind)?;
            }
            let text = read_text(&recipe)?;
            let store = ctx.store()?;
            let rules = ctx.rules()?;
            let sb = ctx.sandbox(store.as_ref());
            let report = match evaluate(&text, &package, sb.as_ref(), &ctx.cfg.session.eval, &rules) {
                Ok(r) => r,
                Err(EvalError::Timeout { report, .. }) => *report,
                Err(e) => return Err(anyhow!(e).into()),
            };
            print_json(&report)?;
            if !report.installed() {
                return Err(anyhow!("recipe failed: {}", report.failure.value.as_str()).into());
            }
        }
        Command::Score { reference, generated } => {
            let gt = parse_recipe(&read_text(&reference)?)
                .map_err(|e| usage(anyhow!("{}: {e}", reference.display())))?;
            let s = &ctx.cfg.session;
            let rep = match parse_recipe(&read_text(&generated)?) {
                Ok(g) => score_recipes(&gt, &g, &s.match_weights, &s.class_inherent),
                Err(e) => {
                    eprintln!("{}: {e}; scoring as unparseable", generated.display());
                    score_unparseable(&gt, &s.match_weights, &s.class_inherent)
                }
            };
            match rep.variant_score {
                Some(v) => println!("S_v = {v:?}"),
                None => println!("S_v = n/a (reference has no configuration keys)"),
            }
            println!("S_d = {:?}", rep.dependency_score);
            for m in &rep.per_dependency {
                ctx.log(format!("{m:?}"));
            }
            for n in &rep.notes {
                eprintln!("note: {n}");
            }
        }
        Command::Run {
            repo,
            session,
            ground_truth,
            artifacts,
        } => {
            ctx.apply_session(&session)?;
            let model = ctx.model()?;
            let store = ctx.store()?;
            let index = ctx.index(store.as_ref(), &model)?;
            let rules = ctx.rules()?;
            let sb = ctx.sandbox(store.as_ref());
            let gt = ground_truth.as_deref().map(read_text).transpose()?;
            let env = SessionEnv {
                model: &model,
                sandbox: sb.as_ref(),
                rules: &rules,
                store: store.as_ref(),
                index: index.as_ref(),
                analyze: ctx.analyze(&repo),
                artifact_dir: artifacts.or_else(|| ctx.cfg.paths.artifacts.clone()),
            };
            let record = run_session(&repo.repo, gt.as_deref(), &ctx.cfg.session, &env).map_err(usage)?;
            for a in &record.attempts {
                ctx.log(format!("attempt {}: {}", a.index, a.report.failure.value.as_str()));
            }
            print_json(&record)?;
            match record.status {
                SessionStatus::Installed => {}
                SessionStatus::Exhausted => return Err(anyhow!("no attempt installed").into()),
                SessionStatus::Aborted => {
                    return Err(anyhow!("aborted: {}", record.abort_reason.unwrap_or_default()).into())
                }
            }
        }
        Command::Bench {
            tasks,
            results,
            session,
            report_dir,
            parallelism,
            sample,
            artifacts,
            max_sessions,
        } => {
            ctx.apply_session(&session)?;
            let mut set = TaskSet::load(&tasks).map_err(usage)?;
            if let Some(n) = sample.or(ctx.cfg.bench.sample) {
                set = set.subsample(n, ctx.cfg.bench.sample_seed).map_err(usage)?;
                ctx.log(format!(
                    "sampled: {}",
                    set.tasks.iter().map(|t| t.package.as_str()).collect::<Vec<_>>().join(", ")
                ));
            }
            let configs = ctx.cfg.session_configs().map_err(usage)?;
            let model = ctx.model()?;
            let store = ctx.store()?;
            let index = ctx.index(store.as_ref(), &model)?;
            let rules = ctx.rules()?;
            let sb = ctx.sandbox(store.as_ref());
            let results_dir = results.parent().map(Path::to_path_buf).unwrap_or_default();
            let env = BenchEnv {
                model: &model,
                sandbox: sb.as_ref(),
                rules: &rules,
                store: store.as_ref(),
                index: index.as_ref(),
                analyze: AnalyzeOptions::default(),
                results: results.clone(),
                artifact_dir: artifacts.or_else(|| ctx.cfg.paths.artifacts.clone()),
                archive_cache: ctx.cfg.paths.archive_cache.clone().unwrap_or_else(|| results_dir.join("archives")),
                parallelism: parallelism
                    .unwrap_or(ctx.cfg.bench.parallelism)
                    .min(ctx.cfg.sandbox.max_parallel.max(1)),
                max_sessions,
            };
            let outcome = run_bench(&set, &configs, &env).map_err(|e| match e {
                recipesynth::bench::BenchError::Config(_) | recipesynth::bench::BenchError::TaskSet(_) => usage(e),
                other => Failure::Task(other.into()),
            })?;
            ctx.log(format!(
                "task set {}: ran {}, skipped {}, pending {}",
                &outcome.task_set_id[..12],
                outcome.ran,
                outcome.skipped,
                outcome.pending
            ));
            print!("{}\n{}", outcome.report.summary_table(), outcome.report.failure_table());
            if let Some(dir) = report_dir {
                outcome.report.write_files(&dir).context("writing report")?;
            }
        }
        Command::Report { results, out } => {
            if !results.exists() {
                return Err(usage(anyhow!("{} does not exist", results.display())));
            }
            let (records, _) = read_results(&results).context("reading results")?;
            let rep = report(&records);
            print!("{}\n{}", rep.summary_table(), rep.failure_table());
            if let Some(dir) = out {
                rep.write_files(&dir).context("writing report")?;
            }
        }
    }
    Ok(())
}
