//! Cypher text for an external graph database holding the same corpus.

use super::{target_sets, AffinityWeights, Store};
use crate::repo::RepoMetadata;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn list<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    format!("[{}]", items.into_iter().map(|s| quote(s)).collect::<Vec<_>>().join(","))
}

fn num(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Affinity-ranking query over a graph loaded by [`export_cypher`].
pub fn similar_query(target: &RepoMetadata, count: usize, weights: AffinityWeights) -> String {
    let (deps, opts) = target_sets(target);
    let name = quote(&target.package_name);
    format!(
        r#"MATCH (p:Package)
WHERE p.name <> {name}
  AND NOT toLower(p.name) CONTAINS toLower({name})
  AND {build} IN p.build_systems
OPTIONAL MATCH (p)-[:DEPENDS_ON]->(d:Package)
OPTIONAL MATCH (p)-[:HAS_VARIANT]->(v:Variant)
WITH p,
     size(apoc.coll.intersection(
         {deps},
         collect(d.name))) AS dep_score,
     size(apoc.coll.intersection(
         {opts},
         collect(v.name))) AS var_score
WITH p, dep_score, var_score,
     ({wd} * dep_score + {wb} * var_score) AS total_score
ORDER BY total_score DESC, p.name ASC
LIMIT {count}
RETURN p.name AS match_name, p.recipe AS recipe, total_score
"#,
        build = quote(target.build_system.as_str()),
        deps = list(&deps),
        opts = list(&opts),
        wd = num(weights.w_d),
        wb = num(weights.w_b),
    )
}

/// `MERGE` statements creating package, variant and dependency nodes.
pub fn export_cypher(store: &Store) -> String {
    let mut out = String::new();
    for p in store.packages.values() {
        out.push_str(&format!(
            "MERGE (p:Package {{name: {}}}) SET p.build_systems = {}, p.recipe = {};\n",
            quote(&p.name),
            list(&p.build_systems),
            quote(&p.recipe_text)
        ));
        for v in &p.variants {
            out.push_str(&format!(
                "MATCH (p:Package {{name: {}}}) MERGE (v:Variant {{name: {}}}) MERGE (p)-[:HAS_VARIANT]->(v);\n",
                quote(&p.name),
                quote(v)
            ));
        }
        for d in &p.dependencies {
            out.push_str(&format!(
                "MATCH (p:Package {{name: {}}}) MERGE (d:Package {{name: {}}}) MERGE (p)-[:DEPENDS_ON]->(d);\n",
                quote(&p.name),
                quote(d)
            ));
        }
    }
    out
}
