mod common;

use std::collections::BTreeSet;

use common::checks;
use recipesynth::metrics::{score_recipes, MatchWeights};
use recipesynth::recipe::parse_recipe;

#[test]
fn fxdiv_golden_scores() {
    checks::fxdiv_golden().unwrap();
}

#[test]
fn fxdiv_missing_python_is_the_only_loss() {
    let a = parse_recipe(&common::recipe("fxdiv_reference")).unwrap();
    let b = parse_recipe(&common::recipe("fxdiv_generated")).unwrap();
    let rep = score_recipes(&a, &b, &MatchWeights::default(), &BTreeSet::new());
    let zero: Vec<&str> = rep
        .per_dependency
        .iter()
        .filter(|m| m.score == 0.0)
        .map(|m| m.original.name.as_str())
        .collect();
    assert_eq!(zero, ["python"]);
    assert!(rep.per_dependency.iter().filter(|m| m.score > 0.0).all(|m| m.score == 1.0));
}

#[test]
fn fxdiv_reversed_direction() {
    // generated as reference: the reference sets only two of three keys
    let a = parse_recipe(&common::recipe("fxdiv_generated")).unwrap();
    let b = parse_recipe(&common::recipe("fxdiv_reference")).unwrap();
    let rep = score_recipes(&a, &b, &MatchWeights::default(), &BTreeSet::new());
    assert_eq!(rep.variant_score, Some(2.0 / 3.0));
    assert_eq!(rep.dependency_score, 1.0);
}

#[test]
fn class_inherent_dependencies_are_ignored() {
    let a = parse_recipe(&common::recipe("fxdiv_reference")).unwrap();
    let b = parse_recipe(&common::recipe("fxdiv_generated")).unwrap();
    let inherent: BTreeSet<String> = ["python".to_string()].into();
    let rep = score_recipes(&a, &b, &MatchWeights::default(), &inherent);
    assert_eq!(rep.dependency_score, 1.0);
}

#[test]
fn affinity_matches_brute_force() {
    checks::affinity_oracle().unwrap();
}

#[test]
fn dependency_similarity_matches_enumeration() {
    checks::dependency_oracle().unwrap();
}
