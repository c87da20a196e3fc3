use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    /// Unquoted words, lower-cased; keywords are recognized by the parser.
    Word(String),
    /// Double-quoted identifier, case preserved.
    QuotedIdent(String),
    /// Numeric literal text as written.
    Number(String),
    Str(String),
    Symbol(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub col: usize,
    pub offset: usize,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Word(w) => w.to_uppercase(),
            TokenKind::QuotedIdent(s) => format!("\"{s}\""),
            TokenKind::Number(n) => n.clone(),
            TokenKind::Str(s) => format!("'{s}'"),
            TokenKind::Symbol(s) => (*s).to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

const SYMBOLS: [&str; 16] = ["<>", "!=", "<=", ">=", "=", "<", ">", "(", ")", ",", ";", "*", "+", "-", "/", "."];

pub fn tokenize(src: &str) -> Result<Vec<Token>, SqlError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let offset_at = |i: usize| chars.get(i).map_or(src.len(), |c| c.0);
    macro_rules! bump {
        () => {{
            if chars[i].1 == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '-' && chars.get(i + 1).map(|c| c.1) == Some('-') {
            while i < chars.len() && chars[i].1 != '\n' {
                bump!();
            }
            continue;
        }
        let (tl, tc, to) = (line, col, offset_at(i));
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            let mut w = String::new();
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                w.push(chars[i].1.to_ascii_lowercase());
                bump!();
            }
            TokenKind::Word(w)
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|c| c.1.is_ascii_digit())) {
            let mut n = String::new();
            let mut seen_dot = false;
            let mut seen_exp = false;
            while i < chars.len() {
                let d = chars[i].1;
                if d.is_ascii_digit() {
                    n.push(d);
                } else if d == '.' && !seen_dot && !seen_exp {
                    seen_dot = true;
                    n.push(d);
                } else if (d == 'e' || d == 'E') && !seen_exp {
                    let next = chars.get(i + 1).map(|c| c.1);
                    let after = chars.get(i + 2).map(|c| c.1);
                    let ok = next.is_some_and(|c| c.is_ascii_digit())
                        || (matches!(next, Some('+') | Some('-')) && after.is_some_and(|c| c.is_ascii_digit()));
                    if !ok {
                        break;
                    }
                    seen_exp = true;
                    n.push('e');
                    bump!();
                    if matches!(chars[i].1, '+' | '-') {
                        n.push(chars[i].1);
                        bump!();
                    }
                    continue;
                } else {
                    break;
                }
                bump!();
            }
            TokenKind::Number(n)
        } else if c == '\'' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(SqlError::syntax("unterminated string literal", tl, tc, to));
                }
                let d = chars[i].1;
                bump!();
                if d == '\'' {
                    if i < chars.len() && chars[i].1 == '\'' {
                        s.push('\'');
                        bump!();
                    } else {
                        break;
                    }
                } else {
                    s.push(d);
                }
            }
            TokenKind::Str(s)
        } else if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(SqlError::syntax("unterminated quoted identifier", tl, tc, to));
                }
                let d = chars[i].1;
                bump!();
                if d == '"' {
                    if i < chars.len() && chars[i].1 == '"' {
                        s.push('"');
                        bump!();
                    } else {
                        break;
                    }
                } else {
                    s.push(d);
                }
            }
            if s.is_empty() {
                return Err(SqlError::syntax("empty quoted identifier", tl, tc, to));
            }
            TokenKind::QuotedIdent(s)
        } else {
            let rest = &src[to..];
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(sym) => {
                    for _ in 0..sym.len() {
                        bump!();
                    }
                    TokenKind::Symbol(sym)
                }
                None => return Err(SqlError::syntax(format!("unexpected character '{c}'"), tl, tc, to)),
            }
        };
        out.push(Token { kind, line: tl, col: tc, offset: to });
    }
    out.push(Token { kind: TokenKind::Eof, line, col, offset: src.len() });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn basic_tokens() {
        assert_eq!(
            kinds("SELECT a<>'it''s' -- c\n 1.5e-3"),
            vec![
                TokenKind::Word("select".into()),
                TokenKind::Word("a".into()),
                TokenKind::Symbol("<>"),
                TokenKind::Str("it's".into()),
                TokenKind::Number("1.5e-3".into()),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn positions() {
        let toks = tokenize("a\n  bc").unwrap();
        assert_eq!((toks[1].line, toks[1].col, toks[1].offset), (2, 3, 4));
        assert_eq!(toks[2].offset, 6);
    }

    #[test]
    fn errors() {
        assert!(tokenize("'abc").is_err());
        assert!(tokenize("a # b").is_err());
    }
}
