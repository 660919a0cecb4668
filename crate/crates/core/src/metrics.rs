//! Structural similarity between a generated recipe and a reference recipe.
//!
//! * variant similarity: fraction of the reference's configuration keys that
//!   the generated recipe also sets;
//! * dependency match: weighted agreement of two same-name dependencies on
//!   name, types, spec and condition;
//! * dependency similarity: mean over reference dependencies of the best
//!   same-name match in the generated recipe (non-exclusive matching).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::recipe::{extract_config_keys, extract_dependencies, ConfigKeySet, Dependency, Recipe};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("dependency names differ: {0:?} vs {1:?}")]
    NameMismatch(String, String),
    #[error("match weights must be nonnegative and sum to 1 (got {0})")]
    InvalidWeights(f64),
}

/// Weights of the dependency match score: name, types, spec, condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.2,
            gamma: 0.1,
            lambda: 0.1,
        }
    }
}

impl MatchWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, lambda: f64) -> Result<Self, MetricsError> {
        let w = Self {
            alpha,
            beta,
            gamma,
            lambda,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let parts = [self.alpha, self.beta, self.gamma, self.lambda];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::InvalidWeights(sum));
        }
        Ok(())
    }
}

/// `|A ∩ B| / |A|`, or `None` when the reference sets no keys (the sample is
/// excluded from scoring).
pub fn variant_similarity(ground_truth: &ConfigKeySet, generated: &ConfigKeySet) -> Option<f64> {
    if ground_truth.is_empty() {
        return None;
    }
    let shared = ground_truth.iter().filter(|k| generated.contains(k)).count();
    Some(shared as f64 / ground_truth.len() as f64)
}

fn delta<T: PartialEq>(a: &T, b: &T) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Composite match score of two same-name dependencies, in `[alpha, 1]`.
///
/// Absent conditions compare equal to each other, and so do two empty type
/// sets. An empty original type set against a nonempty one shares nothing.
pub fn dependency_match(original: &Dependency, candidate: &Dependency, w: &MatchWeights) -> Result<f64, MetricsError> {
    if original.name != candidate.name {
        return Err(MetricsError::NameMismatch(original.name.clone(), candidate.name.clone()));
    }
    // two unspecified type sets both mean the ecosystem default
    let type_overlap = if original.types.is_empty() && candidate.types.is_empty() {
        1.0
    } else {
        let shared_types = original.types.intersection(&candidate.types).count() as f64;
        shared_types / original.types.len().max(1) as f64
    };
    Ok(w.alpha
        + w.beta * type_overlap
        + w.gamma * delta(&original.spec, &candidate.spec)
        + w.lambda * delta(&original.condition, &candidate.condition))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyMatch {
    pub original: Dependency,
    /// First best-scoring candidate in generated order.
    pub best: Option<Dependency>,
    pub score: f64,
    /// Number of candidates sharing the best score.
    pub ties: usize,
}

/// Mean best-match score of `d_a` (reference) against `d_b` (generated).
///
/// Originals without a same-name candidate contribute 0; an empty reference
/// list scores 0.
pub fn dependency_similarity(d_a: &[Dependency], d_b: &[Dependency], w: &MatchWeights) -> (f64, Vec<DependencyMatch>) {
    let mut total = 0.0;
    let mut detail = Vec::with_capacity(d_a.len());
    for original in d_a {
        let mut best: Option<(&Dependency, f64)> = None;
        let mut ties = 0;
        for candidate in d_b.iter().filter(|c| c.name == original.name) {
            let m = dependency_match(original, candidate, w).expect("name-gated");
            match best {
                Some((_, s)) if m > s => {
                    best = Some((candidate, m));
                    ties = 1;
                }
                Some((_, s)) if m == s => ties += 1,
                Some(_) => {}
                None => {
                    best = Some((candidate, m));
                    ties = 1;
                }
            }
        }
        let score = best.map(|(_, s)| s).unwrap_or(0.0);
        total += score;
        detail.push(DependencyMatch {
            original: original.clone(),
            best: best.map(|(d, _)| d.clone()),
            score,
            ties,
        });
    }
    (total / d_a.len().max(1) as f64, detail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant_score: Option<f64>,
    pub dependency_score: f64,
    pub per_dependency: Vec<DependencyMatch>,
    pub excluded_variant_sample: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Scores a generated recipe against a reference recipe.
pub fn score_recipes(
    ground_truth: &Recipe,
    generated: &Recipe,
    weights: &MatchWeights,
    class_inherent: &BTreeSet<String>,
) -> MetricReport {
    let variant_score = variant_similarity(&extract_config_keys(ground_truth), &extract_config_keys(generated));
    let d_a = extract_dependencies(ground_truth, class_inherent);
    let d_b = extract_dependencies(generated, class_inherent);
    let (dependency_score, per_dependency) = dependency_similarity(&d_a, &d_b, weights);
    let mut notes = Vec::new();
    for (label, r) in [("reference", ground_truth), ("generated", generated)] {
        if r.diagnostics.when_context_directives > 0 {
            notes.push(format!(
                "{label}: {} directive(s) inside when-blocks counted with empty condition",
                r.diagnostics.when_context_directives
            ));
        }
        if !r.diagnostics.opaque_directives.is_empty() {
            notes.push(format!(
                "{label}: {} opaque directive(s) not scored",
                r.diagnostics.opaque_directives.len()
            ));
        }
    }
    MetricReport {
        excluded_variant_sample: variant_score.is_none(),
        variant_score,
        dependency_score,
        per_dependency,
        notes,
    }
}

/// Report for a generated recipe that could not be parsed: no key or
/// dependency of the reference is reproduced.
pub fn score_unparseable(ground_truth: &Recipe, weights: &MatchWeights, class_inherent: &BTreeSet<String>) -> MetricReport {
    let variant_score = variant_similarity(&extract_config_keys(ground_truth), &ConfigKeySet::default());
    let d_a = extract_dependencies(ground_truth, class_inherent);
    let (dependency_score, per_dependency) = dependency_similarity(&d_a, &[], weights);
    MetricReport {
        excluded_variant_sample: variant_score.is_none(),
        variant_score,
        dependency_score,
        per_dependency,
        notes: vec!["generated recipe did not parse".into()],
    }
}
