use std::collections::BTreeMap;

use super::lexer::{logical_lines, LogicalLine, TokKind, Token};
use super::{
    is_build_system_class, normalize_constraint, ConfigKeySet, ConflictDecl, DepType, Dependency, Diagnostics,
    OpaqueDirective, ParseError, Recipe, VariantDecl, VariantDefault, VersionDecl,
};

const MODELED_DIRECTIVES: [&str; 4] = ["version", "variant", "depends_on", "conflicts"];
const OTHER_DIRECTIVES: [&str; 11] = [
    "requires",
    "provides",
    "patch",
    "resource",
    "extends",
    "license",
    "maintainers",
    "build_system",
    "can_splice",
    "redistribute",
    "requires_license",
];
const DEFINE_CALLS: [&str; 6] = [
    "define",
    "define_from_variant",
    "cmake_cache_option",
    "cmake_cache_string",
    "cmake_cache_path",
    "cmake_cache_filepath",
];
const COMPOUND: [&str; 12] = [
    "if", "elif", "else", "for", "while", "with", "def", "class", "try", "except", "finally", "async",
];
const CHECKSUM_KEYS: [&str; 7] = ["sha256", "md5", "sha1", "sha224", "sha384", "sha512", "checksum"];

/// Region kinds of class-body statements, used by the chunker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ItemKind {
    Header,
    Variants,
    Dependencies,
    Method(String),
    Neutral,
}

#[derive(Debug, Clone)]
pub(crate) struct LayoutItem {
    pub kind: ItemKind,
    pub start_line: usize,
    pub end_line: usize,
}

/// Line spans of the class header and each class-body statement.
#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub class_line: usize,
    pub class_end_line: usize,
    pub items: Vec<LayoutItem>,
}

/// Parses recipe source text into its directive model.
pub fn parse_recipe(text: &str) -> Result<Recipe, ParseError> {
    parse_with_layout(text).map(|(r, _)| r)
}

pub(crate) fn parse_with_layout(text: &str) -> Result<(Recipe, Layout), ParseError> {
    let lines = logical_lines(text)?;
    let mut first_class: Option<(usize, String)> = None;
    // (header index, body end) of every top-level class
    let mut classes = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let end = block_end(&lines, i);
        if lines[i].indent == 0 && lines[i].tokens[0].name() == Some("class") {
            classes.push((i, end));
        }
        i = end.max(i + 1);
    }
    for &(i, end) in &classes {
        let line = &lines[i];
        let (name, bases, inline) = class_header(text, line)?;
        if bases.iter().any(|b| is_build_system_class(b)) {
            let body = &lines[i + 1..end];
            if body.is_empty() && !inline {
                return Err(ParseError::new(line.line, "expected an indented class body"));
            }
            let mut p = ClassParser::new(text);
            p.recipe.class_name = name;
            p.recipe.base_classes = bases;
            p.layout.class_line = line.line;
            p.layout.class_end_line = line.end_line;
            if !body.is_empty() {
                p.class_body(body)?;
            }
            // builder classes elsewhere in the file carry the argument methods
            for &(j, other_end) in classes.iter().filter(|(j, _)| *j != i) {
                p.builder_body(&lines[j + 1..other_end])?;
            }
            p.recipe.raw_text = text.to_string();
            return Ok((p.recipe, p.layout));
        }
        first_class.get_or_insert((line.line, name));
    }
    match first_class {
        Some((line, name)) => Err(ParseError::new(
            line,
            format!("class {name} has no build-system base class"),
        )),
        None => Err(ParseError::new(
            lines.last().map(|l| l.end_line).unwrap_or(1),
            "no package class found",
        )),
    }
}

/// Index one past the block headed by `lines[i]` (all following lines with
/// greater indentation).
fn block_end(lines: &[LogicalLine], i: usize) -> usize {
    let indent = lines[i].indent;
    let mut j = i + 1;
    while j < lines.len() && lines[j].indent > indent {
        j += 1;
    }
    j
}

fn class_header(src: &str, line: &LogicalLine) -> Result<(String, Vec<String>, bool), ParseError> {
    let toks = &line.tokens;
    let bad = |msg: &str| ParseError::new(line.line, msg);
    let name = toks.get(1).and_then(|t| t.name()).ok_or_else(|| bad("malformed class header"))?;
    let mut bases = Vec::new();
    let mut k = 2;
    if toks.get(k).is_some_and(|t| t.is_open('(')) {
        let close = matching_close(toks, k).ok_or_else(|| bad("malformed class header"))?;
        for seg in split_commas(&toks[k + 1..close]) {
            if seg.is_empty() {
                continue;
            }
            if seg.len() >= 2 && seg[1].kind == TokKind::Assign {
                continue;
            }
            let dotted_ok = seg.iter().enumerate().all(|(n, t)| {
                if n % 2 == 0 {
                    t.name().is_some()
                } else {
                    t.kind == TokKind::Op(".".into())
                }
            });
            if !dotted_ok || seg.len() % 2 == 0 {
                return Err(bad(&format!("invalid base class expression {:?}", raw(src, seg))));
            }
            bases.push(seg.last().and_then(|t| t.name()).unwrap_or_default().to_string());
        }
        k = close + 1;
    }
    match toks.get(k) {
        Some(t) if t.kind == TokKind::Colon => Ok((name.to_string(), bases, k + 1 < toks.len())),
        _ => Err(bad("class header must end with ':'")),
    }
}

/// Finds the token closing the bracket opened at `open`.
fn matching_close(toks: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (k, t) in toks.iter().enumerate().skip(open) {
        match t.kind {
            TokKind::Open(_) => depth += 1,
            TokKind::Close(_) => {
                depth -= 1;
                if depth == 0 {
                    return Some(k);
                }
            }
            _ => {}
        }
    }
    None
}

fn split_commas(toks: &[Token]) -> Vec<&[Token]> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (k, t) in toks.iter().enumerate() {
        match t.kind {
            TokKind::Open(_) => depth += 1,
            TokKind::Close(_) => depth = depth.saturating_sub(1),
            TokKind::Comma if depth == 0 => {
                out.push(&toks[start..k]);
                start = k + 1;
            }
            _ => {}
        }
    }
    out.push(&toks[start..]);
    out
}

fn raw<'a>(src: &'a str, toks: &[Token]) -> &'a str {
    match (toks.first(), toks.last()) {
        (Some(a), Some(b)) => &src[a.start..b.end],
        _ => "",
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    None,
    Num(String),
    StrList(Vec<String>),
    Expr(String),
}

fn classify_value(src: &str, toks: &[Token]) -> Value {
    if toks.iter().all(|t| matches!(t.kind, TokKind::Str { .. })) {
        let mut s = String::new();
        for t in toks {
            if let TokKind::Str { value, fstring } = &t.kind {
                if *fstring {
                    return Value::Expr(raw(src, toks).to_string());
                }
                s.push_str(value);
            }
        }
        return Value::Str(s);
    }
    if toks.len() == 1 {
        match &toks[0].kind {
            TokKind::Name(n) if n == "True" => return Value::Bool(true),
            TokKind::Name(n) if n == "False" => return Value::Bool(false),
            TokKind::Name(n) if n == "None" => return Value::None,
            TokKind::Number => return Value::Num(raw(src, toks).to_string()),
            _ => {}
        }
    }
    if toks.len() >= 2
        && (toks[0].is_open('(') || toks[0].is_open('['))
        && matching_close(toks, 0) == Some(toks.len() - 1)
    {
        let inner = &toks[1..toks.len() - 1];
        let mut items = Vec::new();
        let segs = split_commas(inner);
        let n = segs.len();
        for (k, seg) in segs.into_iter().enumerate() {
            if seg.is_empty() && k + 1 == n {
                continue;
            }
            match classify_value(src, seg) {
                Value::Str(s) => items.push(s),
                _ => return Value::Expr(raw(src, toks).to_string()),
            }
        }
        return Value::StrList(items);
    }
    Value::Expr(raw(src, toks).to_string())
}

#[derive(Debug, Default)]
struct CallArgs {
    positional: Vec<Value>,
    keyword: Vec<(String, Value)>,
}

impl CallArgs {
    fn kw(&self, key: &str) -> Option<&Value> {
        self.keyword.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

fn parse_args(src: &str, toks: &[Token]) -> Result<CallArgs, String> {
    let mut args = CallArgs::default();
    if toks.is_empty() {
        return Ok(args);
    }
    let segs = split_commas(toks);
    let n = segs.len();
    for (k, seg) in segs.into_iter().enumerate() {
        if seg.is_empty() {
            if k + 1 == n && k > 0 {
                continue;
            }
            return Err("empty argument".into());
        }
        if seg.len() >= 2 && seg[0].name().is_some() && seg[1].kind == TokKind::Assign {
            let key = seg[0].name().unwrap_or_default().to_string();
            if seg.len() == 2 {
                return Err(format!("keyword argument {key} has no value"));
            }
            if args.keyword.iter().any(|(k, _)| *k == key) {
                return Err(format!("repeated keyword argument {key}"));
            }
            if seg[2..].iter().any(|t| t.kind == TokKind::Assign) {
                return Err("invalid keyword argument".into());
            }
            args.keyword.push((key, classify_value(src, &seg[2..])));
        } else {
            if seg.iter().any(|t| t.kind == TokKind::Assign) {
                return Err("invalid assignment inside call".into());
            }
            if !args.keyword.is_empty() && !seg[0].kind.eq(&TokKind::Op("**".into())) {
                return Err("positional argument follows keyword argument".into());
            }
            args.positional.push(classify_value(src, seg));
        }
    }
    Ok(args)
}

fn condition_of(v: Option<&Value>) -> Option<String> {
    let text = match v? {
        Value::Str(s) => s.clone(),
        Value::Expr(e) => e.clone(),
        Value::Num(n) => n.clone(),
        Value::Bool(b) => b.to_string(),
        Value::StrList(l) => l.join(" "),
        Value::None => return None,
    };
    let c = normalize_constraint(&text);
    (!c.is_empty()).then_some(c)
}

#[derive(Clone, Copy, Default)]
struct Ctx {
    in_when: bool,
    in_loop: bool,
}

#[derive(Default, Clone, Copy)]
struct KindCount {
    versions: usize,
    variants: usize,
    dependencies: usize,
}

struct ClassParser<'a> {
    src: &'a str,
    recipe: Recipe,
    layout: Layout,
}

struct Stmt<'l> {
    start_line: usize,
    head: &'l LogicalLine,
    body: &'l [LogicalLine],
}

impl<'l> Stmt<'l> {
    fn end_line(&self) -> usize {
        self.body.last().map(|l| l.end_line).unwrap_or(self.head.end_line)
    }
}

/// Groups a block of lines into statements (head + indented body).
fn statements(lines: &[LogicalLine]) -> Result<Vec<Stmt<'_>>, ParseError> {
    let base = lines[0].indent;
    let mut out = Vec::new();
    let mut pending_decorator: Option<usize> = None;
    let mut i = 0;
    while i < lines.len() {
        let head = &lines[i];
        if head.indent < base {
            return Err(ParseError::new(
                head.line,
                "unindent does not match any outer indentation level",
            ));
        }
        if head.indent > base {
            return Err(ParseError::new(head.line, "unexpected indent"));
        }
        let end = block_end(lines, i);
        let body = &lines[i + 1..end];
        let compound = head.tokens[0].name().is_some_and(|n| COMPOUND.contains(&n));
        let ends_with_colon = head.tokens.last().is_some_and(|t| t.kind == TokKind::Colon);
        if !body.is_empty() && !(compound && ends_with_colon) {
            return Err(ParseError::new(body[0].line, "unexpected indent"));
        }
        if compound && ends_with_colon && body.is_empty() {
            return Err(ParseError::new(head.line, "expected an indented block"));
        }
        if head.tokens[0].kind == TokKind::Op("@".into()) {
            pending_decorator.get_or_insert(head.line);
            i = end;
            continue;
        }
        let start_line = pending_decorator.take().unwrap_or(head.line);
        out.push(Stmt { start_line, head, body });
        i = end;
    }
    if let Some(line) = pending_decorator {
        return Err(ParseError::new(line, "decorator without a following definition"));
    }
    Ok(out)
}

/// Position of the first depth-0 colon in a compound statement header.
fn header_colon(toks: &[Token]) -> Option<usize> {
    let mut depth = 0usize;
    for (k, t) in toks.iter().enumerate() {
        match t.kind {
            TokKind::Open(_) => depth += 1,
            TokKind::Close(_) => depth = depth.saturating_sub(1),
            TokKind::Colon if depth == 0 => return Some(k),
            _ => {}
        }
    }
    None
}

impl<'a> ClassParser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            recipe: Recipe {
                class_name: String::new(),
                base_classes: Vec::new(),
                versions: Vec::new(),
                variants: Vec::new(),
                dependencies: Vec::new(),
                conflicts: Vec::new(),
                config_keys: ConfigKeySet::default(),
                attributes: BTreeMap::new(),
                diagnostics: Diagnostics::default(),
                raw_text: String::new(),
            },
            layout: Layout::default(),
        }
    }

    fn class_body(&mut self, body: &[LogicalLine]) -> Result<(), ParseError> {
        for stmt in statements(body)? {
            let before = self.counts();
            let kind = self.statement(&stmt, Ctx::default(), true)?;
            let after = self.counts();
            let delta = KindCount {
                versions: after.versions - before.versions,
                variants: after.variants - before.variants,
                dependencies: after.dependencies - before.dependencies,
            };
            let kind = match kind {
                Some(k) => k,
                None => region_kind(delta),
            };
            self.layout.items.push(LayoutItem {
                kind,
                start_line: stmt.start_line,
                end_line: stmt.end_line(),
            });
        }
        Ok(())
    }

    /// Collects configuration keys from the argument methods of a class
    /// other than the package class.
    fn builder_body(&mut self, body: &[LogicalLine]) -> Result<(), ParseError> {
        for stmt in statements(body)? {
            let toks = &stmt.head.tokens;
            if toks[0].name() == Some("def") && toks.get(1).and_then(|t| t.name()).is_some_and(is_argument_method) {
                self.scan_config_keys(&stmt);
            }
        }
        Ok(())
    }

    fn counts(&self) -> KindCount {
        let opaque = |name: &str| {
            self.recipe
                .diagnostics
                .opaque_directives
                .iter()
                .filter(|o| o.directive == name)
                .count()
        };
        KindCount {
            versions: self.recipe.versions.len() + opaque("version"),
            variants: self.recipe.variants.len() + opaque("variant"),
            dependencies: self.recipe.dependencies.len() + opaque("depends_on"),
        }
    }

    /// Handles one statement; returns a layout kind for definitions.
    fn statement(&mut self, stmt: &Stmt<'_>, ctx: Ctx, class_level: bool) -> Result<Option<ItemKind>, ParseError> {
        let toks = &stmt.head.tokens;
        let first = toks[0].name().unwrap_or("");
        if COMPOUND.contains(&first) {
            let colon = header_colon(toks).ok_or_else(|| ParseError::new(stmt.head.line, "expected ':'"))?;
            let inline = &toks[colon + 1..];
            match first {
                "def" | "async" => {
                    let name = toks
                        .iter()
                        .skip_while(|t| t.name() != Some("def"))
                        .nth(1)
                        .and_then(|t| t.name())
                        .ok_or_else(|| ParseError::new(stmt.head.line, "malformed def"))?
                        .to_string();
                    if class_level && is_argument_method(&name) {
                        self.scan_config_keys(stmt);
                    }
                    return Ok(Some(ItemKind::Method(name)));
                }
                "class" => return Ok(Some(ItemKind::Neutral)),
                _ => {}
            }
            let inner = match first {
                "with" => {
                    let is_when = toks.get(1).and_then(|t| t.name()) == Some("when");
                    Ctx {
                        in_when: ctx.in_when || is_when,
                        ..ctx
                    }
                }
                "for" | "while" => Ctx { in_loop: true, ..ctx },
                _ => ctx,
            };
            if !inline.is_empty() {
                let synthetic = LogicalLine {
                    indent: stmt.head.indent,
                    line: inline[0].line,
                    end_line: stmt.head.end_line,
                    tokens: inline.to_vec(),
                };
                let s = Stmt {
                    start_line: synthetic.line,
                    head: &synthetic,
                    body: &[],
                };
                self.statement(&s, inner, false)?;
            }
            if !stmt.body.is_empty() {
                for s in statements(stmt.body)? {
                    self.statement(&s, inner, false)?;
                }
            }
            return Ok(None);
        }
        self.simple(stmt.head, ctx, class_level)?;
        Ok(None)
    }

    fn opaque(&mut self, line: usize, directive: &str, reason: impl Into<String>) {
        self.recipe.diagnostics.opaque_directives.push(OpaqueDirective {
            line,
            directive: directive.to_string(),
            reason: reason.into(),
        });
    }

    fn simple(&mut self, line: &LogicalLine, ctx: Ctx, class_level: bool) -> Result<(), ParseError> {
        let toks = &line.tokens;
        let Some(name) = toks[0].name() else { return Ok(()) };
        if class_level && toks.len() >= 3 && toks[1].kind == TokKind::Assign {
            if let Value::Str(s) = classify_value(self.src, &toks[2..]) {
                self.recipe.attributes.insert(name.to_string(), s);
            }
            return Ok(());
        }
        let modeled = MODELED_DIRECTIVES.contains(&name);
        if !modeled && !OTHER_DIRECTIVES.contains(&name) {
            return Ok(());
        }
        if !toks.get(1).is_some_and(|t| t.is_open('(')) {
            return Ok(());
        }
        if !modeled {
            return Ok(());
        }
        let close = matching_close(toks, 1).unwrap_or(toks.len() - 1);
        if close != toks.len() - 1 {
            self.opaque(line.line, name, "directive used inside a larger expression");
            return Ok(());
        }
        let args = parse_args(self.src, &toks[2..close])
            .map_err(|m| ParseError::new(line.line, format!("malformed {name} directive: {m}")))?;
        if ctx.in_loop {
            self.opaque(line.line, name, "directive inside a loop");
            return Ok(());
        }
        let before = self.counts();
        match name {
            "version" => self.version(line, &args)?,
            "variant" => self.variant(line, &args)?,
            "depends_on" => self.depends_on(line, &args)?,
            "conflicts" => self.conflicts(line, &args)?,
            _ => unreachable!("modeled directive"),
        }
        let after = self.counts();
        let captured = after.versions + after.variants + after.dependencies
            > before.versions + before.variants + before.dependencies
            || name == "conflicts";
        if ctx.in_when && captured {
            self.recipe.diagnostics.when_context_directives += 1;
        }
        Ok(())
    }

    fn first_str<'v>(
        &mut self,
        line: &LogicalLine,
        name: &str,
        args: &'v CallArgs,
    ) -> Result<Option<&'v str>, ParseError> {
        match args.positional.first() {
            None => Err(ParseError::new(
                line.line,
                format!("malformed {name} directive: missing first argument"),
            )),
            Some(Value::Str(s)) if s.trim().is_empty() => Err(ParseError::new(
                line.line,
                format!("malformed {name} directive: empty first argument"),
            )),
            Some(Value::Str(s)) => Ok(Some(s.as_str())),
            Some(Value::Expr(_)) => {
                self.opaque(line.line, name, "first argument is not a string literal");
                Ok(None)
            }
            Some(_) => Err(ParseError::new(
                line.line,
                format!("malformed {name} directive: first argument must be a string"),
            )),
        }
    }

    fn version(&mut self, line: &LogicalLine, args: &CallArgs) -> Result<(), ParseError> {
        let Some(v) = self.first_str(line, "version", args)? else { return Ok(()) };
        let version_string = v.trim().to_string();
        let source_url = match args.kw("url") {
            Some(Value::Str(s)) => Some(s.clone()),
            _ => None,
        };
        let checksum = CHECKSUM_KEYS
            .iter()
            .find_map(|k| match args.kw(k) {
                Some(Value::Str(s)) => Some(s.clone()),
                _ => None,
            })
            .or_else(|| match args.positional.get(1) {
                Some(Value::Str(s)) => Some(s.clone()),
                _ => None,
            });
        self.recipe.versions.push(VersionDecl {
            version_string,
            source_url,
            checksum,
        });
        Ok(())
    }

    fn variant(&mut self, line: &LogicalLine, args: &CallArgs) -> Result<(), ParseError> {
        let Some(name) = self.first_str(line, "variant", args)? else { return Ok(()) };
        let name = name.trim().to_string();
        let default = args.kw("default").or(args.positional.get(1)).map(|v| match v {
            Value::Bool(b) => VariantDefault::Bool(*b),
            Value::Str(s) => VariantDefault::Str(s.clone()),
            Value::None => VariantDefault::Expr { expr: "None".into() },
            Value::Num(n) => VariantDefault::Expr { expr: n.clone() },
            Value::Expr(e) => VariantDefault::Expr { expr: e.clone() },
            Value::StrList(l) => VariantDefault::Expr {
                expr: format!("({})", l.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(", ")),
            },
        });
        let description = match args.kw("description").or(args.positional.get(2)) {
            Some(Value::Str(s)) => Some(s.clone()),
            _ => None,
        };
        if self.recipe.variants.iter().any(|v| v.name == name) {
            self.recipe
                .diagnostics
                .notes
                .push(format!("line {}: duplicate variant {name:?} ignored", line.line));
            return Ok(());
        }
        self.recipe.variants.push(VariantDecl {
            name,
            default,
            description,
        });
        Ok(())
    }

    fn depends_on(&mut self, line: &LogicalLine, args: &CallArgs) -> Result<(), ParseError> {
        let Some(spec) = self.first_str(line, "depends_on", args)? else { return Ok(()) };
        let mut dep = Dependency::from_spec(spec);
        if dep.name.is_empty() {
            return Err(ParseError::new(
                line.line,
                format!("malformed depends_on directive: no package name in {spec:?}"),
            ));
        }
        dep.condition = condition_of(args.kw("when"));
        match args.kw("type") {
            None | Some(Value::None) => {}
            Some(Value::Str(s)) => self.dep_types(line, &mut dep, std::slice::from_ref(s)),
            Some(Value::StrList(l)) => self.dep_types(line, &mut dep, l),
            Some(other) => self
                .recipe
                .diagnostics
                .notes
                .push(format!("line {}: unresolved dependency type {other:?}", line.line)),
        }
        self.recipe.dependencies.push(dep);
        Ok(())
    }

    fn dep_types(&mut self, line: &LogicalLine, dep: &mut Dependency, names: &[String]) {
        for n in names {
            match DepType::parse(n.trim()) {
                Some(t) => {
                    dep.types.insert(t);
                }
                None => self
                    .recipe
                    .diagnostics
                    .notes
                    .push(format!("line {}: unknown dependency type {n:?}", line.line)),
            }
        }
    }

    fn conflicts(&mut self, line: &LogicalLine, args: &CallArgs) -> Result<(), ParseError> {
        let Some(spec) = self.first_str(line, "conflicts", args)? else { return Ok(()) };
        let spec = normalize_constraint(spec);
        let when = condition_of(args.kw("when").or(args.positional.get(1)));
        self.recipe.conflicts.push(ConflictDecl { spec, when });
        Ok(())
    }

    fn add_key(&mut self, key: Option<&str>) {
        match key.map(str::trim) {
            Some(k) if !k.is_empty() && !k.contains(char::is_whitespace) => {
                self.recipe.config_keys.insert(k);
            }
            _ => self.recipe.diagnostics.dynamic_config_args += 1,
        }
    }

    fn scan_config_keys(&mut self, stmt: &Stmt<'_>) {
        let toks: Vec<&Token> = std::iter::once(stmt.head)
            .chain(stmt.body.iter())
            .flat_map(|l| l.tokens.iter())
            .collect();
        for (k, t) in toks.iter().enumerate() {
            if let Some(n) = t.name() {
                if DEFINE_CALLS.contains(&n) && toks.get(k + 1).is_some_and(|t| t.is_open('(')) {
                    let mut depth = 0usize;
                    let mut arg: Vec<Token> = Vec::new();
                    for t in &toks[k + 2..] {
                        match t.kind {
                            TokKind::Open(_) => depth += 1,
                            TokKind::Close(_) if depth == 0 => break,
                            TokKind::Close(_) => depth -= 1,
                            TokKind::Comma if depth == 0 => break,
                            _ => {}
                        }
                        arg.push((*t).clone());
                    }
                    let key = match classify_value(self.src, &arg) {
                        Value::Str(s) if !arg.is_empty() => Some(s),
                        _ => None,
                    };
                    self.add_key(key.as_deref());
                }
            }
            if let TokKind::Str { value, .. } = &t.kind {
                if let Some(rest) = value.trim_start().strip_prefix("-D") {
                    let key = rest.split(['=', ':']).next().unwrap_or("");
                    let dynamic = key.contains(['{', '}', '%']);
                    self.add_key((!dynamic).then_some(key));
                }
            }
        }
    }
}

fn is_argument_method(name: &str) -> bool {
    name.ends_with("_args") || name.contains("initconfig") || name.ends_with("_entries")
}

fn region_kind(delta: KindCount) -> ItemKind {
    if delta.dependencies == 0 && delta.variants == 0 && delta.versions == 0 {
        ItemKind::Neutral
    } else if delta.dependencies >= delta.variants && delta.dependencies >= delta.versions {
        ItemKind::Dependencies
    } else if delta.variants >= delta.versions {
        ItemKind::Variants
    } else {
        ItemKind::Header
    }
}
