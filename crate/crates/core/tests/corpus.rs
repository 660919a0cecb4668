mod common;

use common::checks;
use recipesynth::eval::{classify_log, FailureKind, RuleTable};
use recipesynth::recipe::{parse_recipe, DepType, VariantDefault};

#[test]
fn parser_corpus_matches_goldens() {
    checks::parser_corpus().unwrap();
}

#[test]
fn log_suite_matches_labels() {
    checks::failure_taxonomy().unwrap();
}

#[test]
fn every_log_has_evidence_unless_residual() {
    let rules = RuleTable::default();
    for (file, stage, _, text) in common::log_suite() {
        let c = classify_log(stage, &text, &rules);
        if let Some(ev) = &c.evidence {
            assert!(text.contains(&ev.line), "{file}: evidence not from the log");
        } else {
            assert_eq!(c.value, FailureKind::Compilation, "{file}");
        }
    }
}

#[test]
fn example_recipe_structure() {
    let r = parse_recipe(&common::recipe("example")).unwrap();
    assert_eq!(r.class_name, "Example");
    assert_eq!(r.base_classes, ["CMakePackage", "ROCmPackage", "CudaPackage"]);
    assert_eq!(r.versions[0].version_string, "1.0");
    let names: Vec<&str> = r.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["openmp", "hip", "cuda"]);
    assert!(r.variants.iter().all(|v| v.default == Some(VariantDefault::Bool(false))));
    assert_eq!(r.conflicts[0].spec, "+cuda");
    assert_eq!(r.conflicts[0].when.as_deref(), Some("+hip"));
    let deps: Vec<String> = r.dependencies.iter().map(|d| d.full_spec()).collect();
    assert_eq!(deps, ["c", "mpi@3"]);
    assert!(r.config_keys.contains("ENABLE_OPENMP"));
}

#[test]
fn fxdiv_reference_dependency_details() {
    let r = parse_recipe(&common::recipe("fxdiv_reference")).unwrap();
    let cmake = r.dependencies.iter().find(|d| d.name == "cmake").unwrap();
    assert_eq!(cmake.spec, "@3.5:");
    assert_eq!(cmake.types.iter().copied().collect::<Vec<_>>(), [DepType::Build]);
    assert!(r.variants.is_empty());
}
