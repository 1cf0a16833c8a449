//! Token-level sanity checks for source code.
//!
//! This is not a parser. It only verifies that string literals and comments
//! terminate and that brackets nest, which is enough to reject truncated or
//! mangled solutions during ingestion.

use crate::language::Language;
use regex::Regex;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexIssue {
    #[error("unterminated string literal starting on line {0}")]
    UnterminatedString(usize),
    #[error("unterminated block comment starting on line {0}")]
    UnterminatedComment(usize),
    #[error("unexpected closing '{found}' on line {line}")]
    UnexpectedClose { found: char, line: usize },
    #[error("mismatched '{found}' on line {line}, expected '{expected}'")]
    Mismatched {
        found: char,
        expected: char,
        line: usize,
    },
    #[error("{0} unclosed bracket(s) at end of input")]
    Unclosed(usize),
    #[error("no code tokens")]
    Empty,
}

/// Checks that `src` lexes as code in `language`.
pub fn check_lexes(language: Language, src: &str) -> Result<(), LexIssue> {
    let chars: Vec<char> = src.chars().collect();
    let mut lx = Lexer {
        chars: &chars,
        pos: 0,
        line: 1,
        stack: Vec::new(),
        tokens: 0,
    };
    match language {
        Language::Python => lx.run_python()?,
        _ => lx.run_c_family(language)?,
    }
    if !lx.stack.is_empty() {
        return Err(LexIssue::Unclosed(lx.stack.len()));
    }
    if lx.tokens == 0 {
        return Err(LexIssue::Empty);
    }
    Ok(())
}

struct Lexer<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
    stack: Vec<char>,
    tokens: usize,
}

impl Lexer<'_> {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    fn bracket(&mut self, c: char) -> Result<(), LexIssue> {
        self.tokens += 1;
        match c {
            '(' | '[' | '{' => self.stack.push(c),
            ')' | ']' | '}' => {
                let expected = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match self.stack.pop() {
                    None => {
                        return Err(LexIssue::UnexpectedClose {
                            found: c,
                            line: self.line,
                        })
                    }
                    Some(open) if open != expected => {
                        let closer = match open {
                            '(' => ')',
                            '[' => ']',
                            _ => '}',
                        };
                        return Err(LexIssue::Mismatched {
                            found: c,
                            expected: closer,
                            line: self.line,
                        });
                    }
                    Some(_) => {}
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Consumes a quoted literal whose opening quote has already been eaten.
    fn quoted(&mut self, quote: char, multiline: bool, escapes: bool) -> Result<(), LexIssue> {
        let start = self.line;
        loop {
            match self.bump() {
                None => return Err(LexIssue::UnterminatedString(start)),
                Some('\\') if escapes => {
                    self.bump();
                }
                Some('\n') if !multiline => return Err(LexIssue::UnterminatedString(start)),
                Some(c) if c == quote => return Ok(()),
                Some(_) => {}
            }
        }
    }

    fn until(&mut self, terminator: &str, issue: LexIssue) -> Result<(), LexIssue> {
        while self.pos < self.chars.len() {
            if self.starts_with(terminator) {
                for _ in 0..terminator.chars().count() {
                    self.bump();
                }
                return Ok(());
            }
            if self.peek(0) == Some('\\') && terminator.starts_with(['"', '\'']) {
                self.bump();
            }
            self.bump();
        }
        Err(issue)
    }

    fn run_python(&mut self) -> Result<(), LexIssue> {
        while let Some(c) = self.peek(0) {
            match c {
                '#' => {
                    while !matches!(self.peek(0), None | Some('\n')) {
                        self.bump();
                    }
                }
                '\'' | '"' => {
                    self.tokens += 1;
                    self.python_string(c)?;
                }
                '(' | ')' | '[' | ']' | '{' | '}' => {
                    self.bump();
                    self.bracket(c)?;
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut ident = String::new();
                    while let Some(c) = self.peek(0).filter(|c| c.is_alphanumeric() || *c == '_') {
                        ident.push(c);
                        self.bump();
                    }
                    let is_prefix = ident.len() <= 2
                        && ident
                            .chars()
                            .all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'u' | 'f'));
                    match self.peek(0) {
                        Some(q @ ('\'' | '"')) if is_prefix => {
                            self.tokens += 1;
                            self.python_string(q)?;
                        }
                        _ => self.tokens += 1,
                    }
                }
                c if c.is_whitespace() => {
                    self.bump();
                }
                _ => {
                    self.tokens += 1;
                    self.bump();
                }
            }
        }
        Ok(())
    }

    fn python_string(&mut self, quote: char) -> Result<(), LexIssue> {
        let start = self.line;
        let triple: String = std::iter::repeat_n(quote, 3).collect();
        if self.starts_with(&triple) {
            for _ in 0..3 {
                self.bump();
            }
            self.until(&triple, LexIssue::UnterminatedString(start))
        } else {
            self.bump();
            self.quoted(quote, false, true)
        }
    }

    fn run_c_family(&mut self, language: Language) -> Result<(), LexIssue> {
        while let Some(c) = self.peek(0) {
            if self.starts_with("//") {
                while !matches!(self.peek(0), None | Some('\n')) {
                    self.bump();
                }
                continue;
            }
            if self.starts_with("/*") {
                let start = self.line;
                self.bump();
                self.bump();
                self.block_comment(language == Language::Rust, start)?;
                continue;
            }
            match c {
                '"' => {
                    self.tokens += 1;
                    let start = self.line;
                    if language == Language::Java && self.starts_with("\"\"\"") {
                        for _ in 0..3 {
                            self.bump();
                        }
                        self.until("\"\"\"", LexIssue::UnterminatedString(start))?;
                    } else {
                        self.bump();
                        self.quoted('"', language == Language::Rust, true)?;
                    }
                }
                '`' if language == Language::Go => {
                    self.tokens += 1;
                    self.bump();
                    self.quoted('`', true, false)?;
                }
                '\'' => {
                    self.tokens += 1;
                    if language == Language::Rust && self.is_rust_lifetime() {
                        self.bump();
                    } else {
                        self.bump();
                        self.quoted('\'', false, true)?;
                    }
                }
                '(' | ')' | '[' | ']' | '{' | '}' => {
                    self.bump();
                    self.bracket(c)?;
                }
                'r' if language == Language::Rust && self.rust_raw_string()? => {}
                'R' if language == Language::Cpp && self.peek(1) == Some('"') => {
                    self.cpp_raw_string()?;
                }
                c if c.is_whitespace() => {
                    self.bump();
                }
                c if c.is_alphanumeric() || c == '_' => {
                    self.tokens += 1;
                    while self
                        .peek(0)
                        .is_some_and(|c| c.is_alphanumeric() || c == '_')
                    {
                        self.bump();
                    }
                }
                _ => {
                    self.tokens += 1;
                    self.bump();
                }
            }
        }
        Ok(())
    }

    fn block_comment(&mut self, nested: bool, start: usize) -> Result<(), LexIssue> {
        let mut depth = 1usize;
        while self.pos < self.chars.len() {
            if self.starts_with("*/") {
                self.bump();
                self.bump();
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            } else if nested && self.starts_with("/*") {
                self.bump();
                self.bump();
                depth += 1;
            } else {
                self.bump();
            }
        }
        Err(LexIssue::UnterminatedComment(start))
    }

    // 'a (lifetime or label) vs 'a' (char literal)
    fn is_rust_lifetime(&self) -> bool {
        match self.peek(1) {
            Some(c) if c.is_alphabetic() || c == '_' => self.peek(2) != Some('\''),
            _ => false,
        }
    }

    /// Handles r"..." and r#"..."#; returns false when this `r` starts an identifier.
    fn rust_raw_string(&mut self) -> Result<bool, LexIssue> {
        let mut hashes = 0;
        while self.peek(1 + hashes) == Some('#') {
            hashes += 1;
        }
        if self.peek(1 + hashes) != Some('"') {
            return Ok(false);
        }
        if self.pos > 0 {
            let prev = self.chars[self.pos - 1];
            if prev.is_alphanumeric() || prev == '_' {
                return Ok(false);
            }
        }
        let start = self.line;
        for _ in 0..(2 + hashes) {
            self.bump();
        }
        let terminator: String = std::iter::once('"')
            .chain(std::iter::repeat_n('#', hashes))
            .collect();
        self.tokens += 1;
        self.until_raw(&terminator, start)?;
        Ok(true)
    }

    fn until_raw(&mut self, terminator: &str, start: usize) -> Result<(), LexIssue> {
        while self.pos < self.chars.len() {
            if self.starts_with(terminator) {
                for _ in 0..terminator.chars().count() {
                    self.bump();
                }
                return Ok(());
            }
            self.bump();
        }
        Err(LexIssue::UnterminatedString(start))
    }

    fn cpp_raw_string(&mut self) -> Result<(), LexIssue> {
        let start = self.line;
        self.bump();
        self.bump();
        let mut delim = String::new();
        while let Some(c) = self.peek(0) {
            if c == '(' {
                break;
            }
            if c == '\n' || delim.len() > 16 {
                return Err(LexIssue::UnterminatedString(start));
            }
            delim.push(c);
            self.bump();
        }
        self.bump();
        self.tokens += 1;
        let terminator = format!("){delim}\"");
        self.until_raw(&terminator, start)
    }
}

fn entry_patterns(language: Language) -> &'static [Regex] {
    static PY: OnceLock<Vec<Regex>> = OnceLock::new();
    static CPP: OnceLock<Vec<Regex>> = OnceLock::new();
    static JAVA: OnceLock<Vec<Regex>> = OnceLock::new();
    static RUST: OnceLock<Vec<Regex>> = OnceLock::new();
    static GO: OnceLock<Vec<Regex>> = OnceLock::new();
    let build = |pats: &[&str]| pats.iter().map(|p| Regex::new(p).unwrap()).collect::<Vec<_>>();
    match language {
        Language::Python => PY.get_or_init(|| {
            build(&[
                r"(?m)^def\s+([A-Za-z_]\w*)\s*\(",
                r"(?m)^\s+def\s+([A-Za-z_]\w*)\s*\(",
            ])
        }),
        Language::Cpp => CPP.get_or_init(|| {
            build(&[
                r"(?m)^\s*(?:[\w:<>\*&,]+\s+)+[\*&]?([A-Za-z_]\w*)\s*\([^;{)]*\)\s*(?:const\s*)?(?:\{|$)",
            ])
        }),
        Language::Java => JAVA.get_or_init(|| {
            build(&[
                r"(?m)^\s*(?:(?:public|private|protected|static|final|synchronized)\s+)*[\w<>\[\],]+\s+([A-Za-z_]\w*)\s*\([^)]*\)\s*(?:throws\s+[\w., ]+)?\s*\{",
            ])
        }),
        Language::Rust => RUST.get_or_init(|| {
            build(&[r"(?m)^\s*(?:pub(?:\([^)]*\))?\s+)?(?:const\s+)?(?:async\s+)?fn\s+([A-Za-z_]\w*)"])
        }),
        Language::Go => GO.get_or_init(|| {
            build(&[r"(?m)^func\s+(?:\([^)]*\)\s*)?([A-Za-z_]\w*)\s*\("])
        }),
    }
}

const NOT_ENTRY_POINTS: &[&str] = &[
    "main", "if", "for", "while", "switch", "return", "catch", "sizeof", "new",
];

/// Finds the name of the first user-facing function defined in `src`.
pub fn detect_entry_point(language: Language, src: &str) -> Option<String> {
    for pattern in entry_patterns(language) {
        for caps in pattern.captures_iter(src) {
            let name = &caps[1];
            if NOT_ENTRY_POINTS.contains(&name) || (name.starts_with("__") && name.ends_with("__")) {
                continue;
            }
            return Some(name.to_string());
        }
    }
    None
}
