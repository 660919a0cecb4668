//! Lexical reader for CMake command invocations.
//!
//! Handles quoted and bracket arguments, line and bracket comments, and
//! backslash line continuations. Variables and generator expressions are
//! left as written.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CMakeArg {
    pub value: String,
    pub quoted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CMakeCommand {
    /// Lowercased command name.
    pub name: String,
    pub args: Vec<CMakeArg>,
    pub line: usize,
    /// Source text of the whole invocation.
    pub text: String,
}

impl CMakeCommand {
    pub fn arg(&self, i: usize) -> Option<&str> {
        self.args.get(i).map(|a| a.value.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.args.iter().map(|a| a.value.as_str())
    }
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl Reader<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    /// `[=*[` opener at the current position; returns the `=` count.
    fn bracket_open(&self) -> Option<usize> {
        let rest = self.src[self.pos..].strip_prefix('[')?;
        let eq = rest.chars().take_while(|c| *c == '=').count();
        rest[eq..].starts_with('[').then_some(eq)
    }

    fn bracket_body(&mut self, eq: usize) -> Option<String> {
        for _ in 0..eq + 2 {
            self.bump();
        }
        let close = format!("]{}]", "=".repeat(eq));
        let rel = self.src[self.pos..].find(&close)?;
        let end = self.pos + rel;
        let mut body = self.src[self.pos..end].to_string();
        while self.pos < end {
            self.bump();
        }
        for _ in 0..close.len() {
            self.bump();
        }
        if body.starts_with('\n') {
            body.remove(0);
        }
        Some(body)
    }

    fn skip_comment(&mut self) {
        self.bump();
        if let Some(eq) = self.bracket_open() {
            if self.bracket_body(eq).is_none() {
                self.pos = self.src.len();
            }
            return;
        }
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }
}

/// Reads every command invocation in a CMake file. Malformed trailing
/// content is reported in the returned warnings and otherwise skipped.
pub fn parse_cmake(src: &str) -> (Vec<CMakeCommand>, Vec<String>) {
    let mut r = Reader { src, pos: 0, line: 1 };
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    while let Some(c) = r.peek() {
        if c == '#' {
            r.skip_comment();
            continue;
        }
        if !(c.is_ascii_alphabetic() || c == '_') {
            r.bump();
            continue;
        }
        let start = r.pos;
        let line = r.line;
        while r.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            r.bump();
        }
        let name = src[start..r.pos].to_ascii_lowercase();
        while r.peek().is_some_and(|c| c == ' ' || c == '\t') {
            r.bump();
        }
        if r.peek() != Some('(') {
            continue;
        }
        r.bump();
        match read_args(&mut r) {
            Some(args) => out.push(CMakeCommand {
                name,
                args,
                line,
                text: src[start..r.pos].to_string(),
            }),
            None => {
                warnings.push(format!("line {line}: unterminated {name}( invocation"));
                break;
            }
        }
    }
    (out, warnings)
}

fn read_args(r: &mut Reader<'_>) -> Option<Vec<CMakeArg>> {
    let mut args = Vec::new();
    let mut depth = 0usize;
    loop {
        let c = r.peek()?;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                r.bump();
            }
            '#' => r.skip_comment(),
            ')' => {
                r.bump();
                if depth == 0 {
                    return Some(args);
                }
                depth -= 1;
                args.push(CMakeArg {
                    value: ")".into(),
                    quoted: false,
                });
            }
            '(' => {
                r.bump();
                depth += 1;
                args.push(CMakeArg {
                    value: "(".into(),
                    quoted: false,
                });
            }
            '"' => {
                r.bump();
                let mut value = String::new();
                loop {
                    let c = r.bump()?;
                    match c {
                        '"' => break,
                        '\\' => {
                            let n = r.bump()?;
                            match n {
                                '\n' => {}
                                'n' => value.push('\n'),
                                't' => value.push('\t'),
                                '"' | '\\' => value.push(n),
                                other => {
                                    value.push('\\');
                                    value.push(other);
                                }
                            }
                        }
                        c => value.push(c),
                    }
                }
                args.push(CMakeArg { value, quoted: true });
            }
            '[' if r.bracket_open().is_some() => {
                let eq = r.bracket_open().expect("checked");
                let value = r.bracket_body(eq)?;
                args.push(CMakeArg { value, quoted: true });
            }
            _ => {
                let mut value = String::new();
                while let Some(c) = r.peek() {
                    match c {
                        ' ' | '\t' | '\n' | '\r' | '(' | ')' | '#' => break,
                        '"' => {
                            // legacy unquoted argument with embedded quotes
                            r.bump();
                            value.push('"');
                            while let Some(q) = r.bump() {
                                value.push(q);
                                if q == '"' {
                                    break;
                                }
                            }
                        }
                        '\\' => {
                            r.bump();
                            if let Some(n) = r.bump() {
                                value.push('\\');
                                value.push(n);
                            }
                        }
                        c => {
                            value.push(c);
                            r.bump();
                        }
                    }
                }
                args.push(CMakeArg { value, quoted: false });
            }
        }
    }
}
