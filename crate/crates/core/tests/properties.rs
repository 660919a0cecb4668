mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use recipesynth::eval::{classify_log, condense_log, parse_audit_output, render_audit_output, AuditFinding, FailureKind, RuleTable, Stage};
use recipesynth::kb::{affinity, AffinityWeights, PackageNode};
use recipesynth::metrics::{dependency_match, dependency_similarity, variant_similarity, MatchWeights};
use recipesynth::recipe::{parse_recipe, render_recipe, ConfigKeySet, DepType, Dependency};
use recipesynth::repair::oscillates;
use recipesynth::repo::{BuildSystem, RepoMetadata};

fn key_set() -> impl Strategy<Value = ConfigKeySet> {
    prop::collection::btree_set("[A-Z]{1,3}_[A-Z]{1,4}", 0..12).prop_map(ConfigKeySet)
}

fn dep() -> impl Strategy<Value = Dependency> {
    (
        prop::sample::select(vec!["mpi", "zlib", "cmake", "hdf5"]),
        prop::sample::select(vec!["", "@3:", "@1.2"]),
        prop::option::of(prop::sample::select(vec!["+mpi", "@2:"])),
        prop::collection::btree_set(prop::sample::select(vec![DepType::Build, DepType::Link, DepType::Run]), 0..3),
    )
        .prop_map(|(n, s, c, t)| {
            let d = Dependency::new(n, s).with_types(&t.into_iter().collect::<Vec<_>>());
            match c {
                Some(c) => d.when(c),
                None => d,
            }
        })
}

fn weights() -> impl Strategy<Value = MatchWeights> {
    prop::array::uniform4(0.0f64..1.0)
        .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| {
            let s: f64 = w.iter().sum();
            MatchWeights {
                alpha: w[0] / s,
                beta: w[1] / s,
                gamma: w[2] / s,
                lambda: w[3] / s,
            }
        })
}

proptest! {
    #[test]
    fn variant_score_is_bounded(a in key_set(), b in key_set()) {
        match variant_similarity(&a, &b) {
            None => prop_assert!(a.is_empty()),
            Some(s) => prop_assert!((0.0..=1.0).contains(&s)),
        }
        if !a.is_empty() {
            prop_assert_eq!(variant_similarity(&a, &a), Some(1.0));
        }
    }

    #[test]
    fn match_lies_between_alpha_and_one(a in dep(), b in dep(), w in weights()) {
        if a.name == b.name {
            let m = dependency_match(&a, &b, &w).unwrap();
            prop_assert!(m >= w.alpha - 1e-12 && m <= 1.0 + 1e-12, "{m}");
            prop_assert!((dependency_match(&a, &a, &w).unwrap() - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(dependency_match(&a, &b, &w).is_err());
        }
    }

    #[test]
    fn dependency_score_is_bounded(a in prop::collection::vec(dep(), 0..6), b in prop::collection::vec(dep(), 0..6)) {
        let w = MatchWeights::default();
        let (s, detail) = dependency_similarity(&a, &b, &w);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert_eq!(detail.len(), a.len());
        if !a.is_empty() {
            prop_assert!((dependency_similarity(&a, &a, &w).0 - 1.0).abs() < 1e-12);
        }
        // adding candidates never lowers the score
        let mut more = b.clone();
        more.extend(a.iter().cloned());
        prop_assert!(dependency_similarity(&a, &more, &w).0 >= s - 1e-12);
    }

    #[test]
    fn condensed_log_fits_budget(lines in prop::collection::vec("[ -~]{0,80}", 0..60), budget in 0usize..2000) {
        let raw = lines.join("\n");
        let out = condense_log(&raw, budget);
        prop_assert!(out.len() <= budget.max(0));
        if raw.len() <= budget {
            prop_assert_eq!(out, raw);
        }
    }

    #[test]
    fn classification_is_total_and_deterministic(log in "(error|CMake Error|==> Error|fatal|[ -~]){0,200}", st in 0usize..3) {
        let rules = RuleTable::default();
        let stage = Stage::ALL[st];
        let a = classify_log(stage, &log, &rules);
        let b = classify_log(stage, &log, &rules);
        prop_assert_ne!(a.value, FailureKind::None);
        prop_assert_eq!(a.value, b.value);
        if let Some(ev) = &a.evidence {
            // long lines are capped and end with the truncation marker
            let kept = ev.line.trim_end_matches(recipesynth::text::TRUNCATION_MARKER).trim();
            prop_assert!(log.contains(kept));
        }
    }

    #[test]
    fn constant_signatures_never_oscillate(s in "[a-z]{1,5}", n in 0usize..10, window in 4usize..8) {
        prop_assert!(!oscillates(&vec![s; n], window));
    }

    #[test]
    fn alternating_pair_oscillates(a in "[a-z]{1,5}", b in "[a-z]{1,5}", extra in 0usize..4) {
        prop_assume!(a != b);
        let seq: Vec<&str> = (0..4 + extra).map(|i| if i % 2 == 0 { a.as_str() } else { b.as_str() }).collect();
        prop_assert!(oscillates(&seq, 4));
    }

    #[test]
    fn audit_output_round_trips(items in prop::collection::vec(("[A-Z]{2,6}(-[A-Z]{2,6})?", "[a-z][a-z ]{0,30}[a-z]"), 0..8)) {
        let findings: Vec<AuditFinding> = items
            .into_iter()
            .map(|(c, m)| AuditFinding { check_id: c, message: m })
            .collect();
        let mut parsed = parse_audit_output(&render_audit_output(&findings));
        let mut expect = findings.clone();
        let key = |f: &AuditFinding| (f.check_id.clone(), f.message.clone());
        parsed.sort_by_key(key);
        expect.sort_by_key(key);
        prop_assert_eq!(parsed, expect);
    }

    #[test]
    fn synthetic_recipes_round_trip(
        deps in prop::collection::btree_set("[a-z]{2,8}", 0..6),
        vars in prop::collection::btree_set("[a-z]{2,8}", 0..6),
    ) {
        let deps: Vec<String> = deps.into_iter().collect();
        let vars: Vec<String> = vars.into_iter().collect();
        let text = synthetic_recipe("Synth", "CMakePackage", &deps, &vars);
        let r = parse_recipe(&text).unwrap();
        prop_assert_eq!(r.dependencies.len(), deps.len());
        prop_assert_eq!(r.variants.len(), vars.len());
        let again = parse_recipe(&render_recipe(&r)).unwrap();
        prop_assert!(r.same_directives(&again));
    }

    #[test]
    fn affinity_is_nonnegative_and_matches_oracle(
        td in prop::collection::btree_set("[a-f]", 0..6),
        to in prop::collection::btree_set("[a-f]", 0..6),
        cd in prop::collection::btree_set("[a-f]", 0..6),
        co in prop::collection::btree_set("[a-f]", 0..6),
    ) {
        let v = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>();
        let mut t = RepoMetadata::named("tgt");
        t.build_system = BuildSystem::Cmake;
        t.dependency_hints = td.clone();
        t.build_options = to.clone();
        let node = PackageNode {
            name: "cand".into(),
            build_systems: ["cmake".to_string()].into(),
            dependencies: cd.clone(),
            variants: co.clone(),
            recipe_text: String::new(),
            recipe: parse_recipe("class Cand(CMakePackage):\n    pass\n").unwrap(),
        };
        let w = AffinityWeights::default();
        let got = affinity(&t, &node, w).score;
        prop_assert!(got >= 0.0);
        prop_assert_eq!(got, oracle_affinity(w.w_d, w.w_b, &v(&td), &v(&to), &v(&cd), &v(&co)));
    }
}
