//! Token stream shared by the `.dm`, `.cb`, and `.cs` parsers.
//!
//! Keywords are contextual: the lexer only produces identifiers, literals,
//! and punctuation; each parser matches keyword identifiers where its
//! grammar expects them. `//` comments run to end of line.

use crate::diag::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(&'static str),
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Float(x) => format!("number `{x:?}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Punct(p) => format!("`{p}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
    /// Byte offsets into the source, used to detect adjacency (e.g. the
    /// hyphenated names allowed inside `pddl goal` literals).
    pub start: usize,
    pub end: usize,
}

const PUNCTS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "{", "}", "(", ")", "[", "]", ":", ";", ",", ".", "=",
    "<", ">", "!", "+", "-", "*", "/", "@",
];

pub fn lex(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! advance {
        ($n:expr) => {{
            for _ in 0..$n {
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
        }};
    }

    'outer: while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            advance!(1);
            continue;
        }
        if c == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
            while i < bytes.len() && bytes[i] != b'\n' {
                advance!(1);
            }
            continue;
        }
        let pos = Pos::new(line, col);
        if c == b'"' {
            let start = i;
            advance!(1);
            let mut s = String::new();
            while i < bytes.len() {
                match bytes[i] {
                    b'"' => {
                        advance!(1);
                        toks.push(Token {
                            tok: Tok::Str(s),
                            pos,
                            start,
                            end: i,
                        });
                        continue 'outer;
                    }
                    b'\\' => {
                        if i + 1 >= bytes.len() {
                            break;
                        }
                        let esc = bytes[i + 1];
                        advance!(2);
                        match esc {
                            b'"' => s.push('"'),
                            b'\\' => s.push('\\'),
                            b'n' => s.push('\n'),
                            b't' => s.push('\t'),
                            other => {
                                return Err(ParseError::new(
                                    pos,
                                    format!("unknown escape `\\{}` in string", other as char),
                                ))
                            }
                        }
                    }
                    b'\n' => {
                        return Err(ParseError::new(pos, "unterminated string literal"));
                    }
                    _ => {
                        let ch_len = utf8_len(bytes[i]);
                        s.push_str(std::str::from_utf8(&bytes[i..i + ch_len]).unwrap());
                        advance!(ch_len);
                    }
                }
            }
            return Err(ParseError::new(pos, "unterminated string literal"));
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut end = i;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            let mut is_float = false;
            if end < bytes.len() && bytes[end] == b'.' && end + 1 < bytes.len() && bytes[end + 1].is_ascii_digit() {
                is_float = true;
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut j = end + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    end = j;
                    while end < bytes.len() && bytes[end].is_ascii_digit() {
                        end += 1;
                    }
                }
            }
            let text = std::str::from_utf8(&bytes[start..end]).unwrap();
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| {
                    ParseError::new(pos, format!("malformed number `{text}`"))
                })?)
            } else {
                Tok::Int(text.parse().map_err(|_| {
                    ParseError::new(pos, format!("integer `{text}` out of range"))
                })?)
            };
            advance!(end - start);
            toks.push(Token {
                tok,
                pos,
                start,
                end,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            let mut end = i;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            let text = std::str::from_utf8(&bytes[start..end]).unwrap().to_string();
            advance!(end - start);
            toks.push(Token {
                tok: Tok::Ident(text),
                pos,
                start,
                end,
            });
            continue;
        }
        for p in PUNCTS {
            if bytes[i..].starts_with(p.as_bytes()) {
                let start = i;
                advance!(p.len());
                toks.push(Token {
                    tok: Tok::Punct(p),
                    pos,
                    start,
                    end: i,
                });
                continue 'outer;
            }
        }
        return Err(ParseError::new(
            pos,
            format!("unexpected character `{}`", c as char),
        ));
    }
    Ok(toks)
}

fn utf8_len(first: u8) -> usize {
    match first {
        b if b < 0x80 => 1,
        b if b >> 5 == 0b110 => 2,
        b if b >> 4 == 0b1110 => 3,
        _ => 4,
    }
}

/// Peekable cursor over a token stream with the expect/accept helpers the
/// recursive-descent parsers share.
pub struct Cursor {
    toks: Vec<Token>,
    idx: usize,
    eof_pos: Pos,
}

impl Cursor {
    pub fn new(source: &str) -> Result<Self, ParseError> {
        let toks = lex(source)?;
        let eof_pos = toks
            .last()
            .map(|t| t.pos)
            .unwrap_or_else(|| Pos::new(1, 1));
        Ok(Self {
            toks,
            idx: 0,
            eof_pos,
        })
    }

    pub fn peek(&self) -> Option<&Token> {
        self.toks.get(self.idx)
    }

    pub fn peek2(&self) -> Option<&Token> {
        self.toks.get(self.idx + 1)
    }

    pub fn pos(&self) -> Pos {
        self.peek().map(|t| t.pos).unwrap_or(self.eof_pos)
    }

    pub fn at_end(&self) -> bool {
        self.idx >= self.toks.len()
    }

    pub fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    pub fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(self.pos(), message)
    }

    pub fn expected(&self, what: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::new(t.pos, format!("expected {what}, found {}", t.tok.describe())),
            None => ParseError::new(self.eof_pos, format!("expected {what}, found end of file")),
        }
    }

    /// Consumes the next token if it is the given punctuation.
    pub fn accept_punct(&mut self, p: &str) -> bool {
        if let Some(t) = self.peek() {
            if t.tok == Tok::Punct(match_punct(p)) {
                self.idx += 1;
                return true;
            }
        }
        false
    }

    pub fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.accept_punct(p) {
            Ok(())
        } else {
            Err(self.expected(&format!("`{p}`")))
        }
    }

    /// Consumes the next token if it is the identifier `kw`.
    pub fn accept_kw(&mut self, kw: &str) -> bool {
        if let Some(Token {
            tok: Tok::Ident(s), ..
        }) = self.peek()
        {
            if s == kw {
                self.idx += 1;
                return true;
            }
        }
        false
    }

    pub fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.accept_kw(kw) {
            Ok(())
        } else {
            Err(self.expected(&format!("keyword `{kw}`")))
        }
    }

    pub fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s == kw)
    }

    pub fn expect_ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Ident(s),
                pos,
                ..
            }) => {
                let out = (s.clone(), *pos);
                self.idx += 1;
                Ok(out)
            }
            _ => Err(self.expected(what)),
        }
    }

    pub fn expect_string(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Str(s),
                pos,
                ..
            }) => {
                let out = (s.clone(), *pos);
                self.idx += 1;
                Ok(out)
            }
            _ => Err(self.expected(what)),
        }
    }

    /// Parses a possibly signed numeric literal. Returns (is_float, value).
    pub fn expect_number(&mut self, what: &str) -> Result<(bool, f64, Pos), ParseError> {
        let neg = self.accept_punct("-");
        match self.peek() {
            Some(Token {
                tok: Tok::Int(n),
                pos,
                ..
            }) => {
                let out = (false, if neg { -(*n as f64) } else { *n as f64 }, *pos);
                self.idx += 1;
                Ok(out)
            }
            Some(Token {
                tok: Tok::Float(x),
                pos,
                ..
            }) => {
                let out = (true, if neg { -*x } else { *x }, *pos);
                self.idx += 1;
                Ok(out)
            }
            _ => Err(self.expected(what)),
        }
    }
}

fn match_punct(p: &str) -> &'static str {
    PUNCTS
        .iter()
        .find(|q| **q == p)
        .copied()
        .unwrap_or_else(|| panic!("unknown punct `{p}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_idents_numbers_puncts() {
        let toks = lex("model M { x: float range [0, 600.5]; }").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert!(kinds.contains(&Tok::Ident("model".into())));
        assert!(kinds.contains(&Tok::Float(600.5)));
        assert!(kinds.contains(&Tok::Int(0)));
        assert!(kinds.contains(&Tok::Punct("[")));
    }

    #[test]
    fn comments_are_skipped() {
        let toks = lex("a // rest of line\nb").unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[1].pos.line, 2);
    }

    #[test]
    fn two_char_puncts_win_over_one_char() {
        let toks = lex("a <= b == c").unwrap();
        assert_eq!(toks[1].tok, Tok::Punct("<="));
        assert_eq!(toks[3].tok, Tok::Punct("=="));
    }

    #[test]
    fn string_escapes() {
        let toks = lex(r#""a\"b\\c\n""#).unwrap();
        assert_eq!(toks[0].tok, Tok::Str("a\"b\\c\n".into()));
    }

    #[test]
    fn unterminated_string_reports_position() {
        let err = lex("  \"oops").unwrap_err();
        assert_eq!(err.pos.col, 3);
    }

    #[test]
    fn positions_track_lines() {
        let toks = lex("a\n  b").unwrap();
        assert_eq!(toks[0].pos, Pos::new(1, 1));
        assert_eq!(toks[1].pos, Pos::new(2, 3));
    }
}
