//! One function per acceptance criterion. Each returns a description of the
//! first disagreement found.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

use recipesynth::bench::{run_bench, BenchEnv, Task, TaskSet};
use recipesynth::eval::{classify_log, AuditFinding, FailureKind, RuleTable, Stage};
use recipesynth::kb::{affinity, ingest, rank_similar, retrieve_similar, AffinityWeights, CorpusEntry, PackageNode};
use recipesynth::llm::{ModelHandle, Script, ScriptRule};
use recipesynth::metrics::{dependency_similarity, score_recipes, MatchWeights};
use recipesynth::recipe::{parse_recipe, render_recipe};
use recipesynth::repair::{detect_oscillation, SessionStatus};
use recipesynth::repo::{AnalyzeOptions, BuildSystem, RepoMetadata};

use super::*;

pub type Check = Result<(), String>;

fn within(start: Instant, limit: Duration) -> Check {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

pub fn fxdiv_golden() -> Check {
    let start = Instant::now();
    let reference = parse_recipe(&recipe("fxdiv_reference")).map_err(|e| e.to_string())?;
    let generated = parse_recipe(&recipe("fxdiv_generated")).map_err(|e| e.to_string())?;
    let rep = score_recipes(&reference, &generated, &MatchWeights::default(), &BTreeSet::new());
    if rep.variant_score != Some(1.0) {
        return Err(format!("S_v = {:?}", rep.variant_score));
    }
    if rep.dependency_score != 0.75 {
        return Err(format!("S_d = {:?}", rep.dependency_score));
    }
    within(start, Duration::from_secs(1))
}

const POOL: usize = 24;

fn pool(prefix: &str) -> Vec<String> {
    (0..POOL).map(|i| format!("{prefix}{i}")).collect()
}

fn pick(rng: &mut ChaCha8Rng, from: &[String], max: usize) -> Vec<String> {
    let n = rng.random_range(0..=max);
    let mut v: Vec<String> = from.choose_multiple(rng, n).cloned().collect();
    v.sort();
    v
}

fn target(name: &str, deps: &[String], opts: &[String]) -> RepoMetadata {
    let mut t = RepoMetadata::named(name);
    t.build_system = BuildSystem::Cmake;
    t.dependency_hints = deps.iter().cloned().collect();
    t.build_options = opts.iter().cloned().collect();
    t
}

pub fn affinity_oracle() -> Check {
    let start = Instant::now();
    let mut rng = rng(11);
    let (dp, op) = (pool("dep"), pool("opt"));
    let template = parse_recipe("class Cand(CMakePackage):\n    version(\"1.0\")\n").unwrap();
    for i in 0..1000 {
        let (td, to) = (pick(&mut rng, &dp, 10), pick(&mut rng, &op, 10));
        let (cd, co) = (pick(&mut rng, &dp, 10), pick(&mut rng, &op, 10));
        let w = if i % 2 == 0 {
            AffinityWeights::default()
        } else {
            AffinityWeights {
                w_d: rng.random_range(0.0..2.0),
                w_b: rng.random_range(0.0..2.0),
            }
        };
        let node = PackageNode {
            name: "cand".into(),
            build_systems: ["cmake".to_string()].into(),
            dependencies: cd.iter().cloned().collect(),
            variants: co.iter().cloned().collect(),
            recipe_text: String::new(),
            recipe: template.clone(),
        };
        let got = affinity(&target("tgt", &td, &to), &node, w).score;
        let want = oracle_affinity(w.w_d, w.w_b, &td, &to, &cd, &co);
        if got != want {
            return Err(format!("pair {i}: affinity {got} != oracle {want}"));
        }
    }
    for (round, size) in [5usize, 40, 120, 200].into_iter().enumerate() {
        let mut entries = Vec::new();
        let mut truth = Vec::new();
        for j in 0..size {
            let name = format!("pkg{j:03}");
            let base = if rng.random_bool(0.8) { "CMakePackage" } else { "AutotoolsPackage" };
            let (d, v) = (pick(&mut rng, &dp, 8), pick(&mut rng, &op, 8));
            entries.push(CorpusEntry {
                name: name.clone(),
                source: synthetic_recipe(&format!("Pkg{j:03}"), base, &d, &v),
                build_systems: None,
            });
            truth.push((name, base == "CMakePackage", d, v));
        }
        let (store, _) = ingest(entries).map_err(|e| e.to_string())?;
        let (td, to) = (pick(&mut rng, &dp, 10), pick(&mut rng, &op, 10));
        let t = target("target", &td, &to);
        let mut brute: Vec<(usize, String)> = truth
            .iter()
            .filter(|(_, cmake, _, _)| *cmake)
            .map(|(n, _, d, v)| (affinity_units(&td, &to, d, v), n.clone()))
            .collect();
        brute.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let ranked: Vec<String> = rank_similar(&store, &t, AffinityWeights::default())
            .into_iter()
            .map(|s| s.candidate)
            .collect();
        let want: Vec<String> = brute.iter().map(|b| b.1.clone()).collect();
        if ranked != want {
            return Err(format!("store {round} ({size} packages): ranking differs from brute force"));
        }
        for count in [1, 2, 5] {
            let got = retrieve_similar(&store, &t, count, AffinityWeights::default()).map_err(|e| e.to_string())?;
            let names: Vec<&str> = got.names();
            let expect: Vec<&str> = want.iter().take(count).map(String::as_str).collect();
            if names != expect {
                return Err(format!("store {round}: top-{count} {names:?} != {expect:?}"));
            }
        }
    }
    within(start, Duration::from_secs(10))
}

pub fn dependency_oracle() -> Check {
    let start = Instant::now();
    let mut rng = rng(23);
    for i in 0..500 {
        let w = if i % 3 == 0 {
            MatchWeights::default()
        } else {
            let raw: [f64; 4] = [rng.random_range(0.0..1.0), rng.random(), rng.random(), rng.random()];
            let s: f64 = raw.iter().sum();
            MatchWeights::new(raw[0] / s, raw[1] / s, raw[2] / s, 1.0 - (raw[0] + raw[1] + raw[2]) / s)
                .unwrap_or_default()
        };
        let (a, b) = (random_deps(&mut rng, 6), random_deps(&mut rng, 6));
        let (got, _) = dependency_similarity(&a, &b, &w);
        let want = oracle_sd(&a, &b, [w.alpha, w.beta, w.gamma, w.lambda]);
        if (got - want).abs() > 1e-12 {
            return Err(format!("instance {i}: S_d {got} != oracle {want}"));
        }
    }
    within(start, Duration::from_secs(5))
}

pub fn parser_corpus() -> Check {
    let corpus = recipe_corpus();
    if corpus.len() < 20 {
        return Err(format!("only {} recipes", corpus.len()));
    }
    for required in ["example", "fxdiv_reference", "fxdiv_generated"] {
        if !corpus.iter().any(|(n, _, _)| n == required) {
            return Err(format!("{required} missing from corpus"));
        }
    }
    for (name, text, golden) in &corpus {
        let r = parse_recipe(text).map_err(|e| format!("{name}: {e}"))?;
        let got = Counts {
            versions: r.versions.len(),
            variants: r.variants.len(),
            dependencies: r.dependencies.len(),
            conflicts: r.conflicts.len(),
            config_keys: r.config_keys.len(),
        };
        if &got != golden {
            return Err(format!("{name}: counts {got:?}, golden {golden:?}"));
        }
        let again = parse_recipe(&render_recipe(&r)).map_err(|e| format!("{name} re-parse: {e}"))?;
        if !r.same_directives(&again) {
            return Err(format!("{name}: round trip changed directives"));
        }
    }
    Ok(())
}

pub fn failure_taxonomy() -> Check {
    let suite = log_suite();
    if suite.len() < 18 {
        return Err(format!("only {} logs", suite.len()));
    }
    for class in FailureKind::CLASSES {
        let n = suite.iter().filter(|(_, _, c, _)| c == class.as_str()).count();
        if n < 3 {
            return Err(format!("{} has {n} logs", class.as_str()));
        }
    }
    if !suite.iter().any(|(_, _, _, t)| t.contains("==> Error: pexsi is unsatisfiable")) {
        return Err("pexsi excerpt missing".into());
    }
    let rules = RuleTable::default();
    let wrong: Vec<String> = suite
        .iter()
        .filter_map(|(file, stage, class, text)| {
            let got = classify_log(*stage, text, &rules).value;
            (got.as_str() != class).then(|| format!("{file}: {} (golden {class})", got.as_str()))
        })
        .collect();
    if wrong.is_empty() {
        Ok(())
    } else {
        Err(wrong.join("; "))
    }
}

pub fn repair_state_machine() -> Check {
    let start = Instant::now();
    let sandbox = hermetic();
    let cfg = session_config("repair");
    // (a) broken, then fixed
    let rec = scripted_session(&[unknown_dep_recipe(PACKAGE), good_recipe(PACKAGE)], &sandbox, &cfg);
    if rec.status != SessionStatus::Installed || rec.successful_attempt != Some(2) {
        return Err(format!("(a) status {:?}, success at {:?}", rec.status, rec.successful_attempt));
    }
    let excerpt = "Package 'libnotreal' not found (required by 'fxdemo')";
    if !rec.attempts[1].prompt.render().contains(excerpt) {
        return Err("(a) attempt 2 prompt lacks the error excerpt".into());
    }
    // (b) never fixed
    let rec = scripted_session(&[unknown_dep_recipe(PACKAGE)], &sandbox, &cfg);
    if rec.status != SessionStatus::Exhausted || rec.attempts.len() != 5 {
        return Err(format!("(b) status {:?} after {} attempts", rec.status, rec.attempts.len()));
    }
    // (c) two errors alternating
    let (a, b) = (unknown_dep_recipe(PACKAGE), syntax_error_recipe(PACKAGE));
    let rec = scripted_session(&[a.clone(), b.clone(), a.clone(), b, a], &sandbox, &cfg);
    if !detect_oscillation(&rec.attempts, cfg.oscillation_window) || !rec.oscillation {
        let sigs: Vec<&str> = rec.attempts.iter().map(|a| a.signature.as_str()).collect();
        return Err(format!("(c) no oscillation detected over {sigs:?}"));
    }
    within(start, Duration::from_secs(5))
}

/// Every report of a small batch keeps stage order, and every cumulative
/// success curve is non-decreasing within [0, 1].
pub fn monotonicity() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let plans: [(&str, Vec<String>); 4] = [
        ("aardvark", vec![good_recipe("aardvark")]),
        ("bison", vec![syntax_error_recipe("bison"), unknown_dep_recipe("bison"), good_recipe("bison")]),
        ("cobra", vec![missing_dep_recipe("cobra"), good_recipe("cobra")]),
        ("dingo", vec![unknown_dep_recipe("dingo")]),
    ];
    let mut tasks = Vec::new();
    let mut rules = Vec::new();
    for (pkg, responses) in &plans {
        let repo = fixture_repo(tmp.path(), pkg);
        tasks.push(Task {
            package: pkg.to_string(),
            repo: repo.to_string_lossy().into_owned(),
            ground_truth: None,
            version_sidecar: None,
        });
        rules.push(ScriptRule {
            pattern: format!("\\b{pkg}\\b"),
            responses: responses.clone(),
            error: None,
        });
    }
    let script = Script {
        rules,
        ..Script::default()
    };
    let model = ModelHandle::scripted(script);
    let sandbox = hermetic();
    let table = RuleTable::default();
    let set = TaskSet::new(tasks).map_err(|e| e.to_string())?;
    let configs = [session_config("k3"), session_config("k5")].map(|mut c| {
        c.k_max = if c.label == "k3" { 3 } else { 5 };
        c
    });
    let env = BenchEnv {
        model: &model,
        sandbox: &sandbox,
        rules: &table,
        store: None,
        index: None,
        analyze: AnalyzeOptions::default(),
        results: tmp.path().join("results.jsonl"),
        artifact_dir: None,
        archive_cache: tmp.path().join("archives"),
        parallelism: 2,
        max_sessions: None,
    };
    let outcome = run_bench(&set, &configs, &env).map_err(|e| e.to_string())?;
    let (records, _) = recipesynth::bench::read_results(&env.results).map_err(|e| e.to_string())?;
    if records.len() != 8 {
        return Err(format!("{} records", records.len()));
    }
    let mut reports = 0;
    for r in &records {
        if r.status == SessionStatus::Aborted {
            return Err(format!("{} aborted: {:?}", r.package_name, r.abort_reason));
        }
        for a in &r.attempts {
            reports += 1;
            if !a.report.is_monotone() {
                return Err(format!("{} attempt {}: stage flags not monotone", r.package_name, a.index));
            }
            let passed: Vec<bool> = Stage::ALL.iter().map(|s| a.report.passed(*s)).collect();
            if a.report.installed() != passed[2] {
                return Err("installed() disagrees with the install stage".into());
            }
        }
    }
    if reports < 10 {
        return Err(format!("only {reports} reports generated"));
    }
    for row in &outcome.report.rows {
        let c = &row.cumulative_success;
        if c.windows(2).any(|w| w[1] < w[0]) || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("{}: curve {c:?}", row.config));
        }
        if !(row.load >= row.concretize && row.concretize >= row.install) {
            return Err(format!("{}: stage fractions not ordered", row.config));
        }
    }
    Ok(())
}

pub fn audit_plumbing() -> Check {
    let findings = vec![
        AuditFinding {
            check_id: "PKG-DIRECTIVES".into(),
            message: "'fxdemo' depends on nonexistent package 'libnotreal'".into(),
        },
        AuditFinding {
            check_id: "PKG-ATTRIBUTES".into(),
            message: "Package 'fxdemo' has no 'homepage' attribute".into(),
        },
    ];
    let sandbox = hermetic_with_audit(findings.clone());
    let mut cfg = session_config("audit");
    cfg.audit_feedback = true;
    let rec = scripted_session(&[unknown_dep_recipe(PACKAGE), good_recipe(PACKAGE)], &sandbox, &cfg);
    if rec.attempts.len() < 2 {
        return Err(format!("only {} attempts", rec.attempts.len()));
    }
    let prompt = rec.attempts[1].prompt.render();
    for f in &findings {
        if !prompt.contains(&f.message) {
            return Err(format!("finding missing from repair prompt: {}", f.message));
        }
    }
    // disabled feedback leaves them out
    cfg.audit_feedback = false;
    let rec = scripted_session(&[unknown_dep_recipe(PACKAGE), good_recipe(PACKAGE)], &sandbox, &cfg);
    if rec.attempts[1].prompt.render().contains(&findings[1].message) {
        return Err("findings present with audit feedback disabled".into());
    }
    Ok(())
}
