//! Tokenizer for the recipe dialect.
//!
//! Produces logical lines (physical lines joined across open brackets and
//! backslash continuations) with their indentation, which is all the class
//! and directive parser needs.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokKind {
    Name(String),
    Str { value: String, fstring: bool },
    Number,
    Open(char),
    Close(char),
    Comma,
    Colon,
    Assign,
    Op(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub line: usize,
    pub end_line: usize,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            TokKind::Name(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_open(&self, c: char) -> bool {
        self.kind == TokKind::Open(c)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LogicalLine {
    pub indent: usize,
    pub line: usize,
    pub end_line: usize,
    pub tokens: Vec<Token>,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

const TWO_CHAR_OPS: [&str; 16] = [
    "==", "!=", "<=", ">=", "**", "//", "->", "+=", "-=", "*=", "/=", "|=", "&=", "<<", ">>", ":=",
];

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(off)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> ParseError {
        ParseError::new(line, msg)
    }

    /// Measures indentation at the start of a physical line and returns
    /// `None` when the line is blank or comment-only (the line is consumed).
    fn indentation(&mut self) -> Option<usize> {
        let mut width = 0;
        loop {
            match self.peek() {
                Some(' ') => width += 1,
                Some('\t') => width = (width / 8 + 1) * 8,
                Some('\x0c') => width = 0,
                _ => break,
            }
            self.bump();
        }
        match self.peek() {
            None => None,
            Some('\n') => {
                self.bump();
                None
            }
            Some('\r') if self.peek_at(1) == Some('\n') => {
                self.bump();
                self.bump();
                None
            }
            Some('#') => {
                self.skip_comment();
                if self.peek() == Some('\n') {
                    self.bump();
                }
                None
            }
            _ => Some(width),
        }
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn string(&mut self, prefix_len: usize) -> Result<Token, ParseError> {
        let start = self.pos;
        let line = self.line;
        let prefix: String = self.src[start..start + prefix_len].to_ascii_lowercase();
        let raw = prefix.contains('r');
        let fstring = prefix.contains('f');
        for _ in 0..prefix_len {
            self.bump();
        }
        let quote = self.bump().expect("caller checked quote");
        let triple = self.peek() == Some(quote) && self.peek_at(1) == Some(quote);
        if triple {
            self.bump();
            self.bump();
        }
        let mut value = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.err(line, "unterminated string literal"));
            };
            if c == '\\' {
                let Some(next) = self.bump() else {
                    return Err(self.err(line, "unterminated string literal"));
                };
                if raw {
                    value.push('\\');
                    value.push(next);
                    continue;
                }
                match next {
                    'n' => value.push('\n'),
                    't' => value.push('\t'),
                    'r' => value.push('\r'),
                    '0' => value.push('\0'),
                    '\n' => {}
                    '\\' | '\'' | '"' => value.push(next),
                    other => {
                        value.push('\\');
                        value.push(other);
                    }
                }
                continue;
            }
            if c == quote {
                if !triple {
                    break;
                }
                if self.peek() == Some(quote) && self.peek_at(1) == Some(quote) {
                    self.bump();
                    self.bump();
                    break;
                }
            }
            if c == '\n' && !triple {
                return Err(self.err(line, "unterminated string literal"));
            }
            value.push(c);
        }
        Ok(Token {
            kind: TokKind::Str { value, fstring },
            line,
            end_line: self.line,
            start,
            end: self.pos,
        })
    }

    fn string_prefix_len(&self) -> Option<usize> {
        let mut n = 0;
        while n < 3 {
            match self.peek_at(n) {
                Some('r' | 'R' | 'b' | 'B' | 'u' | 'U' | 'f' | 'F') => n += 1,
                Some('"' | '\'') => return Some(n),
                _ => return None,
            }
        }
        None
    }
}

/// Splits source text into logical lines of tokens.
pub(crate) fn logical_lines(src: &str) -> Result<Vec<LogicalLine>, ParseError> {
    let mut lx = Lexer {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        line: 1,
    };
    let mut out = Vec::new();
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut current: Option<LogicalLine> = None;

    loop {
        if current.is_none() {
            let line = lx.line;
            match lx.indentation() {
                Some(indent) => {
                    current = Some(LogicalLine {
                        indent,
                        line,
                        end_line: line,
                        tokens: Vec::new(),
                    })
                }
                None => {
                    if lx.pos >= lx.bytes.len() {
                        break;
                    }
                    continue;
                }
            }
        }
        let Some(c) = lx.peek() else { break };
        let start = lx.pos;
        let line = lx.line;
        let cur = current.as_mut().expect("line open");
        match c {
            '\n' => {
                lx.bump();
                if stack.is_empty() {
                    out.push(current.take().expect("line open"));
                }
            }
            ' ' | '\t' | '\r' | '\x0c' => {
                lx.bump();
            }
            '#' => lx.skip_comment(),
            '\\' => {
                lx.bump();
                match lx.peek() {
                    Some('\n') => {
                        lx.bump();
                    }
                    Some('\r') if lx.peek_at(1) == Some('\n') => {
                        lx.bump();
                        lx.bump();
                    }
                    _ => return Err(lx.err(line, "unexpected character after line continuation")),
                }
            }
            _ => {
                let kind = if let Some(plen) = lx.string_prefix_len() {
                    let tok = lx.string(plen)?;
                    cur.end_line = tok.end_line;
                    cur.tokens.push(tok);
                    continue;
                } else if c.is_ascii_digit() || (c == '.' && lx.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
                    while let Some(d) = lx.peek() {
                        if d.is_alphanumeric() || d == '_' || d == '.' {
                            lx.bump();
                        } else {
                            break;
                        }
                    }
                    TokKind::Number
                } else if c.is_alphabetic() || c == '_' {
                    while let Some(d) = lx.peek() {
                        if d.is_alphanumeric() || d == '_' {
                            lx.bump();
                        } else {
                            break;
                        }
                    }
                    TokKind::Name(src[start..lx.pos].to_string())
                } else if matches!(c, '(' | '[' | '{') {
                    lx.bump();
                    stack.push((c, line));
                    TokKind::Open(c)
                } else if matches!(c, ')' | ']' | '}') {
                    lx.bump();
                    let want = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    match stack.pop() {
                        Some((open, _)) if open == want => {}
                        Some((open, open_line)) => {
                            return Err(lx.err(
                                line,
                                format!("closing '{c}' does not match '{open}' opened on line {open_line}"),
                            ))
                        }
                        None => return Err(lx.err(line, format!("unmatched '{c}'"))),
                    }
                    TokKind::Close(c)
                } else {
                    let two: String = src[start..].chars().take(2).collect();
                    if two.chars().count() == 2 && TWO_CHAR_OPS.contains(&two.as_str()) {
                        lx.bump();
                        lx.bump();
                        TokKind::Op(two)
                    } else {
                        lx.bump();
                        match c {
                            ',' => TokKind::Comma,
                            ':' => TokKind::Colon,
                            '=' => TokKind::Assign,
                            '.' | '+' | '-' | '*' | '/' | '%' | '<' | '>' | '&' | '|' | '^' | '~' | '@' | ';'
                            | '!' => TokKind::Op(c.to_string()),
                            other => {
                                return Err(lx.err(line, format!("unexpected character {other:?}")));
                            }
                        }
                    }
                };
                cur.end_line = lx.line;
                cur.tokens.push(Token {
                    kind,
                    line,
                    end_line: lx.line,
                    start,
                    end: lx.pos,
                });
            }
        }
    }
    if let Some((open, open_line)) = stack.pop() {
        return Err(ParseError::new(open_line, format!("'{open}' was never closed")));
    }
    if let Some(line) = current.take() {
        if !line.tokens.is_empty() {
            out.push(line);
        }
    }
    out.retain(|l| !l.tokens.is_empty());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joins_bracketed_lines() {
        let lines = logical_lines("x = [\n  1,\n  2,\n]\ny = 3\n").unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].line, 1);
        assert_eq!(lines[0].end_line, 4);
        assert_eq!(lines[1].line, 5);
    }

    #[test]
    fn indentation_and_comments() {
        let lines = logical_lines("class A:\n    # note\n\n    a = 1  # trailing\n").unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].indent, 4);
        assert_eq!(lines[1].tokens.len(), 3);
    }

    #[test]
    fn strings_with_prefixes_and_triples() {
        let lines = logical_lines("a = f\"x{y}\" r'\\d' \"\"\"multi\nline\"\"\"\n").unwrap();
        let toks = &lines[0].tokens;
        assert!(matches!(&toks[2].kind, TokKind::Str { fstring: true, .. }));
        assert!(matches!(&toks[3].kind, TokKind::Str { value, .. } if value == "\\d"));
        assert!(matches!(&toks[4].kind, TokKind::Str { value, .. } if value == "multi\nline"));
    }

    #[test]
    fn unclosed_paren_reports_opening_line() {
        let err = logical_lines("class X(").unwrap_err();
        assert_eq!(err.line, 1);
        let err = logical_lines("a = 1\nb = (\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn unterminated_string() {
        let err = logical_lines("a = 'abc\nb = 1\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn mismatched_close() {
        let err = logical_lines("a = (1]\n").unwrap_err();
        assert_eq!(err.line, 1);
    }
}
