//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use recipesynth::eval::{AuditFinding, HermeticConfig, HermeticSandbox, RuleTable, Stage};
use recipesynth::kb::Strategy;
use recipesynth::llm::{ModelHandle, Script};
use recipesynth::recipe::{DepType, Dependency};
use recipesynth::repair::{run_session, SessionConfig, SessionEnv, SessionRecord};
use recipesynth::repo::AnalyzeOptions;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Counts {
    pub versions: usize,
    pub variants: usize,
    pub dependencies: usize,
    pub conflicts: usize,
    pub config_keys: usize,
}

/// (name, text, golden counts) for every recipe under `tests/data/recipes`.
pub fn recipe_corpus() -> Vec<(String, String, Counts)> {
    let dir = data_dir().join("recipes");
    let mut out = Vec::new();
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "py"))
        .collect();
    names.sort();
    for p in names {
        let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
        let counts: Counts =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.counts.json"))).unwrap()).unwrap();
        out.push((stem, fs::read_to_string(&p).unwrap(), counts));
    }
    out
}

pub fn recipe(name: &str) -> String {
    fs::read_to_string(data_dir().join("recipes").join(format!("{name}.py"))).unwrap()
}

#[derive(Deserialize)]
struct LabelFile {
    log: Vec<LogLabel>,
}

#[derive(Deserialize)]
struct LogLabel {
    file: String,
    stage: Stage,
    class: String,
}

/// (file, stage, golden class, log text) for the canned log suite.
pub fn log_suite() -> Vec<(String, Stage, String, String)> {
    let dir = data_dir().join("logs");
    let labels: LabelFile = toml::from_str(&fs::read_to_string(dir.join("labels.toml")).unwrap()).unwrap();
    labels
        .log
        .into_iter()
        .map(|l| {
            let text = fs::read_to_string(dir.join(&l.file)).unwrap();
            (l.file, l.stage, l.class, text)
        })
        .collect()
}

/// Distinct elements of `a` that also occur in `b`.
pub fn overlap(a: &[String], b: &[String]) -> usize {
    a.iter().enumerate().filter(|(i, x)| !a[..*i].contains(x) && b.contains(x)).count()
}

/// Affinity under weights (w_d, w_b).
pub fn oracle_affinity(w_d: f64, w_b: f64, td: &[String], to: &[String], d: &[String], o: &[String]) -> f64 {
    w_d * overlap(td, d) as f64 + w_b * overlap(to, o) as f64
}

/// Default-weight affinity in units of 0.2 (0.6 -> 3, 0.4 -> 2), so that
/// mathematically equal scores compare equal.
pub fn affinity_units(td: &[String], to: &[String], d: &[String], o: &[String]) -> usize {
    3 * overlap(td, d) + 2 * overlap(to, o)
}

/// Dependency match computed from the definition.
pub fn oracle_match(a: &Dependency, b: &Dependency, w: [f64; 4]) -> f64 {
    if a.name != b.name {
        return 0.0;
    }
    let ta: Vec<DepType> = a.types.iter().copied().collect();
    let tb: Vec<DepType> = b.types.iter().copied().collect();
    let t = if ta.is_empty() && tb.is_empty() {
        1.0
    } else if ta.is_empty() {
        0.0
    } else {
        ta.iter().filter(|x| tb.contains(x)).count() as f64 / ta.len() as f64
    };
    w[0] + w[1] * t + w[2] * f64::from(u8::from(a.spec == b.spec)) + w[3] * f64::from(u8::from(a.condition == b.condition))
}

/// Dependency similarity by enumerating every assignment of each reference
/// dependency to a generated dependency or to nothing, keeping the best mean.
pub fn oracle_sd(d_a: &[Dependency], d_b: &[Dependency], w: [f64; 4]) -> f64 {
    if d_a.is_empty() {
        return 0.0;
    }
    let choices = d_b.len() + 1;
    let total = choices.pow(d_a.len() as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut c = code;
        let mut sum = 0.0;
        for a in d_a {
            let pick = c % choices;
            c /= choices;
            if pick < d_b.len() {
                sum += oracle_match(a, &d_b[pick], w);
            }
        }
        best = best.max(sum / d_a.len() as f64);
    }
    best
}

const NAMES: [&str; 4] = ["mpi", "zlib", "cmake", "hdf5"];
const SPECS: [&str; 3] = ["", "@3:", "@1.2"];
const CONDS: [Option<&str>; 3] = [None, Some("+mpi"), Some("@2:")];
const TYPES: [DepType; 3] = [DepType::Build, DepType::Link, DepType::Run];

pub fn random_dep(rng: &mut ChaCha8Rng) -> Dependency {
    let mut d = Dependency::new(NAMES[rng.random_range(0..NAMES.len())], SPECS[rng.random_range(0..SPECS.len())]);
    if let Some(c) = CONDS[rng.random_range(0..CONDS.len())] {
        d = d.when(c);
    }
    let types: Vec<DepType> = TYPES.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
    d.with_types(&types)
}

pub fn random_deps(rng: &mut ChaCha8Rng, max: usize) -> Vec<Dependency> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| random_dep(rng)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Renders a synthetic recipe with the given dependencies and variants.
pub fn synthetic_recipe(class_name: &str, base: &str, deps: &[String], variants: &[String]) -> String {
    let mut s = format!("class {class_name}({base}):\n    version(\"1.0\")\n");
    for v in variants {
        s.push_str(&format!("    variant(\"{v}\", default=False)\n"));
    }
    for d in deps {
        s.push_str(&format!("    depends_on(\"{d}\")\n"));
    }
    s
}

pub const PACKAGE: &str = "fxdemo";

/// A small CMake project directory named after the package.
pub fn fixture_repo(root: &Path, package: &str) -> PathBuf {
    let dir = root.join(package);
    fs::create_dir_all(dir.join("src")).unwrap();
    fs::write(
        dir.join("CMakeLists.txt"),
        format!(
            "cmake_minimum_required(VERSION 3.5)\nproject({package} C)\noption(FXDEMO_BUILD_TESTS \"Build tests\" OFF)\nfind_package(ZLIB REQUIRED)\nadd_library({package} src/lib.c)\ntarget_link_libraries({package} ZLIB::ZLIB)\n"
        ),
    )
    .unwrap();
    fs::write(dir.join("src/lib.c"), "#include <zlib.h>\nint f(void) { return 0; }\n").unwrap();
    dir
}

pub fn class_for(package: &str) -> String {
    recipesynth::recipe::class_name_for(package)
}

pub fn good_recipe(package: &str) -> String {
    format!(
        "class {}(CMakePackage):\n    url = \"https://example.org/{package}-1.0.tar.gz\"\n\n    version(\"1.0\", sha256=\"{}\")\n\n    variant(\"tests\", default=False)\n\n    depends_on(\"c\", type=\"build\")\n    depends_on(\"cmake@3.5:\", type=\"build\")\n    depends_on(\"zlib\")\n\n    def cmake_args(self):\n        return [self.define_from_variant(\"FXDEMO_BUILD_TESTS\", \"tests\")]\n",
        class_for(package),
        "0".repeat(64)
    )
}

/// Concretization fails: unknown dependency.
pub fn unknown_dep_recipe(package: &str) -> String {
    good_recipe(package).replace("depends_on(\"zlib\")", "depends_on(\"libnotreal\")")
}

/// Load fails: unbalanced parenthesis.
pub fn syntax_error_recipe(package: &str) -> String {
    good_recipe(package).replace("depends_on(\"zlib\")", "depends_on(\"zlib\"")
}

/// Install fails: the build needs zlib.h.
pub fn missing_dep_recipe(package: &str) -> String {
    good_recipe(package).replace("    depends_on(\"zlib\")\n", "")
}

pub fn hermetic() -> HermeticSandbox {
    let mut cfg = HermeticConfig::default();
    cfg.required_deps.insert("zlib".into(), "zlib.h".into());
    HermeticSandbox::new(cfg)
}

pub fn hermetic_with_audit(findings: Vec<AuditFinding>) -> HermeticSandbox {
    let mut s = hermetic();
    s.config.audit_findings = Some(findings);
    s
}

pub fn session_config(label: &str) -> SessionConfig {
    SessionConfig {
        label: label.into(),
        reference_strategy: Strategy::None,
        reference_count: 0,
        ..SessionConfig::default()
    }
}

/// One session against the fixture repository.
pub fn scripted_session(responses: &[String], sandbox: &HermeticSandbox, cfg: &SessionConfig) -> SessionRecord {
    let tmp = tempfile::tempdir().unwrap();
    let repo = fixture_repo(tmp.path(), PACKAGE);
    let model = ModelHandle::scripted(Script::sequence(responses.iter().cloned()));
    let rules = RuleTable::default();
    let env = SessionEnv {
        model: &model,
        sandbox,
        rules: &rules,
        store: None,
        index: None,
        analyze: AnalyzeOptions {
            package_name: Some(PACKAGE.into()),
            ..AnalyzeOptions::default()
        },
        artifact_dir: None,
    };
    run_session(&repo, Some(&recipe_gt()), cfg, &env).unwrap()
}

pub fn recipe_gt() -> String {
    good_recipe(PACKAGE)
}
pub mod checks;
