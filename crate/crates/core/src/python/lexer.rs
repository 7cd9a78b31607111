//! Tokenizer for Python 3 source, including the INDENT/DEDENT layout
//! tokens and implicit line joining inside brackets.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    /// Integer literal too large for `i64`.
    BigInt,
    Float(f64),
    Imaginary,
    Str { value: String, formatted: bool, bytes: bool },
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Name(n) => write!(f, "name `{n}`"),
            Tok::Int(v) => write!(f, "number {v}"),
            Tok::BigInt | Tok::Float(_) | Tok::Imaginary => write!(f, "a number"),
            Tok::Str { value, .. } => write!(f, "string {value:?}"),
            Tok::Op(op) => write!(f, "`{op}`"),
            Tok::Newline => write!(f, "end of line"),
            Tok::Indent => write!(f, "an indent"),
            Tok::Dedent => write!(f, "a dedent"),
            Tok::Eof => write!(f, "end of file"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&", "|",
    "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=", "!",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(src).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    indents: Vec<usize>,
    depth: usize,
    out: Vec<Token>,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            indents: vec![0],
            depth: 0,
            out: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, message: msg.into() }
    }

    fn push(&mut self, tok: Tok) {
        self.out.push(Token { tok, line: self.line });
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                if !self.handle_indentation()? {
                    break;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek(0) else { break };
            match c {
                '\n' => {
                    self.pos += 1;
                    if self.depth == 0 {
                        self.push(Tok::Newline);
                        at_line_start = true;
                    }
                    self.line += 1;
                }
                '\r' => self.pos += 1,
                ' ' | '\t' | '\x0c' => self.pos += 1,
                '#' => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                '\\' => {
                    // explicit line joining
                    let mut k = 1;
                    while self.peek(k) == Some('\r') {
                        k += 1;
                    }
                    if self.peek(k) == Some('\n') {
                        self.pos += k + 1;
                        self.line += 1;
                    } else {
                        return Err(self.err("unexpected backslash"));
                    }
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    self.number()?
                }
                c if is_ident_start(c) => {
                    if let Some((prefix_len, quote)) = self.string_prefix() {
                        self.string(prefix_len, quote)?;
                    } else {
                        let start = self.pos;
                        while self.peek(0).is_some_and(is_ident_char) {
                            self.pos += 1;
                        }
                        let name: String = self.chars[start..self.pos].iter().collect();
                        self.push(Tok::Name(name));
                    }
                }
                '\'' | '"' => self.string(0, c)?,
                _ => self.operator()?,
            }
        }
        if !matches!(self.out.last().map(|t| &t.tok), None | Some(Tok::Newline)) {
            self.push(Tok::Newline);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(Tok::Dedent);
        }
        self.push(Tok::Eof);
        Ok(self.out)
    }

    /// Consumes leading whitespace of a logical line, skipping blank and
    /// comment-only lines. Returns false at end of input.
    fn handle_indentation(&mut self) -> Result<bool, ParseError> {
        loop {
            let mut width = 0usize;
            while let Some(c) = self.peek(0) {
                match c {
                    ' ' => width += 1,
                    '\t' => width = (width / 8 + 1) * 8,
                    '\x0c' => width = 0,
                    _ => break,
                }
                self.pos += 1;
            }
            match self.peek(0) {
                None => return Ok(false),
                Some('\n') => {
                    self.pos += 1;
                    self.line += 1;
                }
                Some('\r') => self.pos += 1,
                Some('#') => {
                    while self.peek(0).is_some_and(|c| c != '\n') {
                        self.pos += 1;
                    }
                }
                Some('\\') if matches!(self.peek(1), Some('\n')) => {
                    self.pos += 2;
                    self.line += 1;
                }
                Some(_) => {
                    let current = *self.indents.last().unwrap();
                    if width > current {
                        self.indents.push(width);
                        self.push(Tok::Indent);
                    } else {
                        while width < *self.indents.last().unwrap() {
                            self.indents.pop();
                            self.push(Tok::Dedent);
                        }
                        if width != *self.indents.last().unwrap() {
                            return Err(self.err("unindent does not match any outer level"));
                        }
                    }
                    return Ok(true);
                }
            }
        }
    }

    fn string_prefix(&self) -> Option<(usize, char)> {
        let mut k = 0;
        while k < 2 && self.peek(k).is_some_and(|c| "rRbBuUfF".contains(c)) {
            k += 1;
        }
        if k == 0 {
            return None;
        }
        match self.peek(k) {
            Some(q @ ('\'' | '"')) => Some((k, q)),
            _ => None,
        }
    }

    fn string(&mut self, prefix_len: usize, quote: char) -> Result<(), ParseError> {
        let prefix: String = self.chars[self.pos..self.pos + prefix_len].iter().collect::<String>().to_ascii_lowercase();
        let raw = prefix.contains('r');
        let formatted = prefix.contains('f');
        let bytes = prefix.contains('b');
        self.pos += prefix_len;
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        self.pos += if triple { 3 } else { 1 };
        let start_line = self.line;
        let mut value = String::new();
        loop {
            let Some(c) = self.peek(0) else {
                return Err(ParseError { line: start_line, message: "unterminated string".into() });
            };
            if c == quote {
                if !triple {
                    self.pos += 1;
                    break;
                }
                if self.peek(1) == Some(quote) && self.peek(2) == Some(quote) {
                    self.pos += 3;
                    break;
                }
            }
            if c == '\n' {
                if !triple {
                    return Err(ParseError { line: start_line, message: "newline in string".into() });
                }
                self.line += 1;
            }
            if c == '\\' {
                let next = self.peek(1);
                if raw {
                    value.push('\\');
                    if let Some(n) = next {
                        if n == '\n' {
                            self.line += 1;
                        }
                        value.push(n);
                    }
                    self.pos += 2;
                    continue;
                }
                self.pos += 2;
                match next {
                    Some('n') => value.push('\n'),
                    Some('t') => value.push('\t'),
                    Some('r') => value.push('\r'),
                    Some('0') => value.push('\0'),
                    Some('\\') => value.push('\\'),
                    Some('\'') => value.push('\''),
                    Some('"') => value.push('"'),
                    Some('\n') => self.line += 1,
                    Some('x') => {
                        let hex: String = (0..2).filter_map(|i| self.peek(i)).collect();
                        if let Some(ch) = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            value.push(ch);
                            self.pos += 2;
                        }
                    }
                    Some(other) => {
                        value.push('\\');
                        value.push(other);
                    }
                    None => return Err(self.err("unterminated string")),
                }
                continue;
            }
            value.push(c);
            self.pos += 1;
        }
        self.push(Tok::Str { value, formatted, bytes });
        Ok(())
    }

    fn number(&mut self) -> Result<(), ParseError> {
        let start = self.pos;
        if self.peek(0) == Some('0') && self.peek(1).is_some_and(|c| "xXoObB".contains(c)) {
            let radix = match self.peek(1).unwrap().to_ascii_lowercase() {
                'x' => 16,
                'o' => 8,
                _ => 2,
            };
            self.pos += 2;
            let ds = self.pos;
            while self.peek(0).is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            let digits: String = self.chars[ds..self.pos].iter().filter(|c| **c != '_').collect();
            let tok = match i64::from_str_radix(&digits, radix) {
                Ok(v) => Tok::Int(v),
                Err(_) if digits.chars().all(|c| c.is_digit(radix)) && !digits.is_empty() => Tok::BigInt,
                Err(_) => return Err(self.err("malformed number")),
            };
            self.push(tok);
            return Ok(());
        }
        let mut is_float = false;
        while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
            self.pos += 1;
        }
        if self.peek(0) == Some('.') {
            is_float = true;
            self.pos += 1;
            while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
                self.pos += 1;
            }
        }
        if self.peek(0).is_some_and(|c| c == 'e' || c == 'E') {
            let sign = usize::from(self.peek(1).is_some_and(|c| c == '+' || c == '-'));
            if self.peek(1 + sign).is_some_and(|c| c.is_ascii_digit()) {
                is_float = true;
                self.pos += 1 + sign;
                while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
                    self.pos += 1;
                }
            }
        }
        let text: String = self.chars[start..self.pos].iter().filter(|c| **c != '_').collect();
        if self.peek(0).is_some_and(|c| c == 'j' || c == 'J') {
            self.pos += 1;
            self.push(Tok::Imaginary);
            return Ok(());
        }
        if self.peek(0).is_some_and(|c| c == 'l' || c == 'L') {
            return Err(self.err("python 2 long literal"));
        }
        let tok = if is_float {
            Tok::Float(text.parse().map_err(|_| self.err("malformed float"))?)
        } else {
            match text.parse::<i64>() {
                Ok(v) => Tok::Int(v),
                Err(_) => Tok::BigInt,
            }
        };
        self.push(tok);
        Ok(())
    }

    fn operator(&mut self) -> Result<(), ParseError> {
        for op in OPERATORS {
            let n = op.len();
            if self.pos + n <= self.chars.len() && self.chars[self.pos..self.pos + n].iter().copied().eq(op.chars()) {
                self.pos += n;
                match *op {
                    "(" | "[" | "{" => self.depth += 1,
                    ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                    _ => {}
                }
                self.push(Tok::Op(op));
                return Ok(());
            }
        }
        Err(self.err(format!("unexpected character {:?}", self.chars[self.pos])))
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn layout_tokens() {
        let t = toks("if x:\n    y = 1\n\n    # c\nz\n");
        assert_eq!(
            t,
            vec![
                Tok::Name("if".into()),
                Tok::Name("x".into()),
                Tok::Op(":"),
                Tok::Newline,
                Tok::Indent,
                Tok::Name("y".into()),
                Tok::Op("="),
                Tok::Int(1),
                Tok::Newline,
                Tok::Dedent,
                Tok::Name("z".into()),
                Tok::Newline,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn brackets_join_lines() {
        let t = toks("f(1,\n  2)\n");
        assert!(!t[..t.len() - 2].contains(&Tok::Newline));
    }

    #[test]
    fn numbers_and_strings() {
        assert_eq!(toks("1e-6")[0], Tok::Float(1e-6));
        assert_eq!(toks("0.25")[0], Tok::Float(0.25));
        assert_eq!(toks("1_000")[0], Tok::Int(1000));
        assert_eq!(toks("0x1F")[0], Tok::Int(31));
        assert_eq!(toks(".5")[0], Tok::Float(0.5));
        assert_eq!(
            toks("r'a\\n'")[0],
            Tok::Str { value: "a\\n".into(), formatted: false, bytes: false }
        );
        assert_eq!(
            toks("'''a\nb'''")[0],
            Tok::Str { value: "a\nb".into(), formatted: false, bytes: false }
        );
        assert!(matches!(toks("f'{x}'")[0], Tok::Str { formatted: true, .. }));
    }

    #[test]
    fn bad_dedent_is_error() {
        assert!(tokenize("if x:\n    a\n  b\n").is_err());
    }
}
