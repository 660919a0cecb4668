use std::fmt::Write;

use super::{Recipe, VariantDefault};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes a recipe model as canonical recipe text.
///
/// Directive order is versions, variants, dependencies, conflicts, then a
/// `cmake_args` method carrying the configuration keys. Parsing the output
/// yields a directive-identical model.
pub fn render_recipe(recipe: &Recipe) -> String {
    let mut out = String::from("from spack.package import *\n\n\n");
    let _ = writeln!(out, "class {}({}):", recipe.class_name, recipe.base_classes.join(", "));
    let mut body = String::new();
    for (k, v) in &recipe.attributes {
        let _ = writeln!(body, "    {k} = {}", quote(v));
    }
    let section = |body: &mut String, lines: Vec<String>| {
        if lines.is_empty() {
            return;
        }
        if !body.is_empty() {
            body.push('\n');
        }
        for l in lines {
            body.push_str("    ");
            body.push_str(&l);
            body.push('\n');
        }
    };
    section(
        &mut body,
        recipe
            .versions
            .iter()
            .map(|v| {
                let mut s = format!("version({}", quote(&v.version_string));
                if let Some(c) = &v.checksum {
                    let _ = write!(s, ", sha256={}", quote(c));
                }
                if let Some(u) = &v.source_url {
                    let _ = write!(s, ", url={}", quote(u));
                }
                s.push(')');
                s
            })
            .collect(),
    );
    section(
        &mut body,
        recipe
            .variants
            .iter()
            .map(|v| {
                let mut s = format!("variant({}", quote(&v.name));
                match &v.default {
                    Some(VariantDefault::Bool(b)) => {
                        let _ = write!(s, ", default={}", if *b { "True" } else { "False" });
                    }
                    Some(VariantDefault::Str(d)) => {
                        let _ = write!(s, ", default={}", quote(d));
                    }
                    Some(VariantDefault::Expr { expr }) => {
                        let _ = write!(s, ", default={expr}");
                    }
                    None => {}
                }
                if let Some(d) = &v.description {
                    let _ = write!(s, ", description={}", quote(d));
                }
                s.push(')');
                s
            })
            .collect(),
    );
    section(
        &mut body,
        recipe
            .dependencies
            .iter()
            .map(|d| {
                let mut s = format!("depends_on({}", quote(&d.full_spec()));
                match d.types.len() {
                    0 => {}
                    1 => {
                        let t = d.types.iter().next().expect("one type");
                        let _ = write!(s, ", type={}", quote(t.as_str()));
                    }
                    _ => {
                        let ts: Vec<_> = d.types.iter().map(|t| quote(t.as_str())).collect();
                        let _ = write!(s, ", type=({})", ts.join(", "));
                    }
                }
                if let Some(c) = &d.condition {
                    let _ = write!(s, ", when={}", quote(c));
                }
                s.push(')');
                s
            })
            .collect(),
    );
    section(
        &mut body,
        recipe
            .conflicts
            .iter()
            .map(|c| match &c.when {
                Some(w) => format!("conflicts({}, when={})", quote(&c.spec), quote(w)),
                None => format!("conflicts({})", quote(&c.spec)),
            })
            .collect(),
    );
    if !recipe.config_keys.is_empty() {
        if !body.is_empty() {
            body.push('\n');
        }
        body.push_str("    def cmake_args(self):\n        return [\n");
        for k in recipe.config_keys.iter() {
            let _ = writeln!(body, "            self.define({}, True),", quote(k));
        }
        body.push_str("        ]\n");
    }
    if body.is_empty() {
        body.push_str("    pass\n");
    }
    out.push_str(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::parse_recipe;

    #[test]
    fn round_trip_preserves_directives() {
        let src = r#"class Foo(CMakePackage, CudaPackage):
    homepage = "https://x.org"
    version("2.0", sha256="abc", url="https://x.org/foo-2.0.tar.gz")
    version("1.0", "deadbeef")
    variant("mode", default="fast", description='say "hi"\n')
    variant("shared", default=True)
    variant("arch", default=sys.platform == "x")
    depends_on("kokkos +cuda cuda_arch=70", type=("build", "link"), when="+cuda")
    depends_on("mpi@3:")
    conflicts("%gcc@:4", when="@2:")
    conflicts("+cuda")

    def cmake_args(self):
        return [self.define("A", 1), "-DB:BOOL=ON"]
"#;
        let a = parse_recipe(src).unwrap();
        let text = render_recipe(&a);
        let b = parse_recipe(&text).unwrap();
        assert!(a.same_directives(&b), "{text}");
        assert_eq!(a.attributes, b.attributes);
    }

    #[test]
    fn empty_body_renders_pass() {
        let a = parse_recipe("class Foo(Package):\n    pass\n").unwrap();
        let b = parse_recipe(&render_recipe(&a)).unwrap();
        assert!(a.same_directives(&b));
    }
}
