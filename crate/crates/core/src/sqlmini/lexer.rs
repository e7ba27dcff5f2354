use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Semi,
    Op(&'static str),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Star => "`*`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Op(o) => format!("`{o}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

/// Token with its byte offset in the source.
pub(crate) type Spanned = (Tok, usize);

pub(crate) fn lex(src: &str) -> Result<Vec<Spanned>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => push(&mut out, Tok::LParen, &mut i, start),
            b')' => push(&mut out, Tok::RParen, &mut i, start),
            b',' => push(&mut out, Tok::Comma, &mut i, start),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                push(&mut out, Tok::Dot, &mut i, start)
            }
            b'*' => push(&mut out, Tok::Star, &mut i, start),
            b';' => push(&mut out, Tok::Semi, &mut i, start),
            b'=' => push(&mut out, Tok::Op("="), &mut i, start),
            b'<' | b'>' | b'!' => {
                let next = bytes.get(i + 1).copied();
                let op = match (c, next) {
                    (b'<', Some(b'=')) => "<=",
                    (b'<', Some(b'>')) => "<>",
                    (b'>', Some(b'=')) => ">=",
                    (b'!', Some(b'=')) => "<>",
                    (b'<', _) => "<",
                    (b'>', _) => ">",
                    _ => return Err(SqlError::syntax(start, "operator", "`!`")),
                };
                i += if op.len() == 2 || c == b'!' { 2 } else { 1 };
                out.push((Tok::Op(op), start));
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match src[i..].find('"') {
                        None => {
                            return Err(SqlError::syntax(start, "closing `\"`", "end of input"))
                        }
                        Some(off) => {
                            s.push_str(&src[i..i + off]);
                            i += off + 1;
                            if bytes.get(i) == Some(&b'"') {
                                s.push('"');
                                i += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push((Tok::Str(s), start));
            }
            b'0'..=b'9' | b'-' | b'.' => {
                i += 1;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E')
                {
                    i += 1;
                }
                let text = &src[start..i];
                let n: f64 = text
                    .parse()
                    .ok()
                    .filter(|n: &f64| n.is_finite())
                    .ok_or_else(|| SqlError::syntax(start, "number", &format!("`{text}`")))?;
                out.push((Tok::Number(n), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            b'\'' => {
                return Err(SqlError::Unsupported(
                    "single-quoted string literals".into(),
                ))
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(SqlError::syntax(start, "token", &format!("`{ch}`")));
            }
        }
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

fn push(out: &mut Vec<Spanned>, t: Tok, i: &mut usize, start: usize) {
    out.push((t, start));
    *i += 1;
}
