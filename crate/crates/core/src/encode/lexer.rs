//! A small Java lexer producing surface tokens.
//!
//! Comments and whitespace are dropped, string/char literals and text blocks
//! stay single tokens (quotes included), and operators use maximal munch.

use crate::error::{Error, Result};

const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=",
    "+=", "-=", "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>",
];

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, message: &str) -> Error {
        Error::Lex {
            line,
            column,
            message: message.to_string(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize_java(source: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = source.chars().collect();
    let mut cur = Cursor {
        chars: &chars,
        pos: 0,
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();

    while let Some(c) = cur.peek(0) {
        let (line, column) = (cur.line, cur.column);
        let start = cur.pos;

        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if cur.starts_with("//") {
            while cur.peek(0).is_some_and(|c| c != '\n') {
                cur.bump();
            }
            continue;
        }
        if cur.starts_with("/*") {
            cur.bump();
            cur.bump();
            loop {
                if cur.starts_with("*/") {
                    cur.bump();
                    cur.bump();
                    break;
                }
                if cur.bump().is_none() {
                    return Err(cur.error(line, column, "unterminated comment"));
                }
            }
            continue;
        }

        if is_ident_start(c) {
            while cur.peek(0).is_some_and(is_ident_part) {
                cur.bump();
            }
        } else if c.is_ascii_digit() || (c == '.' && cur.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut cur);
        } else if cur.starts_with("\"\"\"") {
            for _ in 0..3 {
                cur.bump();
            }
            loop {
                if cur.starts_with("\"\"\"") {
                    for _ in 0..3 {
                        cur.bump();
                    }
                    break;
                }
                match cur.bump() {
                    None => return Err(cur.error(line, column, "unterminated text block")),
                    Some('\\') => {
                        cur.bump();
                    }
                    Some(_) => {}
                }
            }
        } else if c == '"' || c == '\'' {
            cur.bump();
            let what = if c == '"' { "string literal" } else { "char literal" };
            loop {
                match cur.bump() {
                    None | Some('\n') => {
                        return Err(cur.error(line, column, &format!("unterminated {what}")))
                    }
                    Some('\\') => {
                        if cur.bump().is_none() {
                            return Err(cur.error(line, column, &format!("unterminated {what}")));
                        }
                    }
                    Some(q) if q == c => break,
                    Some(_) => {}
                }
            }
        } else if let Some(op) = OPERATORS.iter().find(|op| cur.starts_with(op)) {
            for _ in 0..op.chars().count() {
                cur.bump();
            }
        } else {
            // Single-character operator, separator, or stray symbol.
            cur.bump();
        }
        tokens.push(chars[start..cur.pos].iter().collect());
    }
    Ok(tokens)
}

fn lex_number(cur: &mut Cursor<'_>) {
    let hex = cur.starts_with("0x") || cur.starts_with("0X");
    let mut prev = '\0';
    while let Some(c) = cur.peek(0) {
        let exponent_sign = (c == '+' || c == '-')
            && if hex {
                matches!(prev, 'p' | 'P')
            } else {
                matches!(prev, 'e' | 'E')
            };
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' || exponent_sign {
            // `1..` would only appear in broken code; stop before a second dot run.
            if c == '.' && cur.peek(1) == Some('.') {
                break;
            }
            prev = c;
            cur.bump();
        } else {
            break;
        }
    }
}
