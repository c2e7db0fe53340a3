use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Int(usize),
    LParen,
    RParen,
    Comma,
    Eq,
    Dot,
    Colon,
    Semi,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let single = |t: Tok| Token { tok: t, line: start_line, col: start_col };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => out.push(single(Tok::LParen)),
            ')' => out.push(single(Tok::RParen)),
            ',' => out.push(single(Tok::Comma)),
            '=' => out.push(single(Tok::Eq)),
            '.' => out.push(single(Tok::Dot)),
            ':' => out.push(single(Tok::Colon)),
            ';' => out.push(single(Tok::Semi)),
            '\'' | '"' => {
                let quote = c;
                let mut j = i + 1;
                let mut s = String::new();
                while j < chars.len() && chars[j] != quote {
                    if chars[j] == '\n' {
                        return Err(ParseError::syntax(line, col, "unterminated string"));
                    }
                    s.push(chars[j]);
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(ParseError::syntax(line, col, "unterminated string"));
                }
                out.push(single(Tok::Str(s)));
                col += j + 1 - i;
                i = j + 1;
                continue;
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                if j < chars.len() && (chars[j].is_ascii_alphabetic() || chars[j] == '_') {
                    return Err(ParseError::syntax(line, col, format!("malformed token starting with `{text}`")));
                }
                let n = text
                    .parse()
                    .map_err(|_| ParseError::syntax(line, col, format!("integer `{text}` is too large")))?;
                out.push(single(Tok::Int(n)));
                col += j - i;
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                out.push(single(Tok::Ident(chars[i..j].iter().collect())));
                col += j - i;
                i = j;
                continue;
            }
            other => {
                return Err(ParseError::syntax(line, col, format!("unexpected character `{other}`")));
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_and_comments() {
        let toks = tokenize("# header\nconcept  word;\n  ifL('x')").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| (t.tok.clone(), t.line, t.col)).collect();
        assert_eq!(kinds[0], (Tok::Ident("concept".into()), 2, 1));
        assert_eq!(kinds[1], (Tok::Ident("word".into()), 2, 10));
        assert_eq!(kinds[2], (Tok::Semi, 2, 14));
        assert_eq!(kinds[3], (Tok::Ident("ifL".into()), 3, 3));
        assert_eq!(kinds[5], (Tok::Str("x".into()), 3, 7));
        assert_eq!(kinds[6], (Tok::RParen, 3, 10));
    }

    #[test]
    fn rejects_garbage() {
        let err = tokenize("concept a$").unwrap_err();
        assert_eq!(err.position(), Some((1, 10)));
        assert!(tokenize("'open").is_err());
        assert!(tokenize("12ab").is_err());
    }
}
