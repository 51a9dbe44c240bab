//! Forgiving parser for the JSON-like payloads language models emit.
//!
//! Accepts strict JSON plus the usual deviations: single-quoted strings,
//! Python literals (`True`, `None`), bare dictionary keys, trailing commas,
//! raw newlines and stray apostrophes inside strings. [`find_value`] scans
//! free text for the first bracketed value of the requested shape, so prose
//! around the payload is ignored.

use serde_json::{Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at byte {offset}")]
pub struct LenientError {
    pub offset: usize,
    pub message: String,
}

const MAX_DEPTH: usize = 64;

struct Parser<'a> {
    s: &'a str,
    pos: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, LenientError> {
        Err(LenientError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn value(&mut self) -> Result<Value, LenientError> {
        self.skip_ws();
        match self.peek() {
            Some('[') => self.nested(Self::list),
            Some('{') => self.nested(Self::dict),
            Some(q @ ('"' | '\'' | '“' | '‘')) => Ok(Value::String(self.string(q)?)),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_alphabetic() => self.literal(),
            Some(c) => self.err(format!("unexpected character '{c}'")),
            None => self.err("unexpected end of input"),
        }
    }

    fn nested(
        &mut self,
        f: fn(&mut Self) -> Result<Value, LenientError>,
    ) -> Result<Value, LenientError> {
        if self.depth >= MAX_DEPTH {
            return self.err("nesting too deep");
        }
        self.depth += 1;
        let v = f(self);
        self.depth -= 1;
        v
    }

    fn list(&mut self) -> Result<Value, LenientError> {
        self.bump(); // '['
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.bump();
                return Ok(Value::Array(items));
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some(']') => return Ok(Value::Array(items)),
                Some(c) => return self.err(format!("expected ',' or ']' but found '{c}'")),
                None => return self.err("unterminated list"),
            }
        }
    }

    fn dict(&mut self) -> Result<Value, LenientError> {
        self.bump(); // '{'
        let mut map = Map::new();
        loop {
            self.skip_ws();
            let key = match self.peek() {
                Some('}') => {
                    self.bump();
                    return Ok(Value::Object(map));
                }
                Some(q @ ('"' | '\'' | '“' | '‘')) => self.string(q)?,
                Some(c) if c.is_alphanumeric() || c == '_' => self.bare_word(),
                Some(c) => return self.err(format!("expected key but found '{c}'")),
                None => return self.err("unterminated dictionary"),
            };
            self.skip_ws();
            if self.bump() != Some(':') {
                return self.err(format!("expected ':' after key '{key}'"));
            }
            let v = self.value()?;
            map.insert(key, v);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some('}') => return Ok(Value::Object(map)),
                Some(c) => return self.err(format!("expected ',' or '}}' but found '{c}'")),
                None => return self.err("unterminated dictionary"),
            }
        }
    }

    fn bare_word(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        self.s[start..self.pos].to_string()
    }

    /// A closing quote only ends the string when followed by structure;
    /// otherwise it is taken as an apostrophe or inner quote.
    fn closes_here(&self) -> bool {
        let rest = self.s[self.pos..].trim_start_matches([' ', '\t']);
        match rest.chars().next() {
            None => true,
            Some(c) => matches!(c, ',' | ':' | ']' | '}' | '\n' | '\r'),
        }
    }

    fn string(&mut self, open: char) -> Result<String, LenientError> {
        let close = match open {
            '“' => '”',
            '‘' => '’',
            q => q,
        };
        let start = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                self.pos = start;
                return self.err("unterminated string");
            };
            if c == '\\' {
                let Some(e) = self.bump() else {
                    return self.err("dangling escape");
                };
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    'u' => out.push(self.unicode_escape()?),
                    other => out.push(other),
                }
            } else if c == close && self.closes_here() {
                return Ok(out);
            } else {
                out.push(c);
            }
        }
    }

    fn unicode_escape(&mut self) -> Result<char, LenientError> {
        let hex4 = |p: &mut Self| -> Result<u32, LenientError> {
            let end = p.pos + 4;
            let digits = p.s.get(p.pos..end).unwrap_or("");
            let v = u32::from_str_radix(digits, 16).or_else(|_| p.err("bad \\u escape"))?;
            p.pos = end;
            Ok(v)
        };
        let hi = hex4(self)?;
        if (0xD800..0xDC00).contains(&hi) && self.s[self.pos..].starts_with("\\u") {
            self.pos += 2;
            let lo = hex4(self)?;
            let code = 0x10000 + ((hi - 0xD800) << 10) + (lo.wrapping_sub(0xDC00) & 0x3FF);
            return char::from_u32(code).map_or_else(|| self.err("bad surrogate pair"), Ok);
        }
        Ok(char::from_u32(hi).unwrap_or('\u{FFFD}'))
    }

    fn number(&mut self) -> Result<Value, LenientError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.s[start..self.pos];
        if let Ok(i) = text.parse::<i64>() {
            return Ok(Value::Number(i.into()));
        }
        match text.parse::<f64>().ok().and_then(Number::from_f64) {
            Some(n) => Ok(Value::Number(n)),
            None => {
                self.pos = start;
                self.err(format!("bad number '{text}'"))
            }
        }
    }

    fn literal(&mut self) -> Result<Value, LenientError> {
        let start = self.pos;
        let word = self.bare_word();
        match word.as_str() {
            "true" | "True" => Ok(Value::Bool(true)),
            "false" | "False" => Ok(Value::Bool(false)),
            "null" | "None" => Ok(Value::Null),
            _ => {
                self.pos = start;
                self.err(format!("unexpected word '{word}'"))
            }
        }
    }
}

/// Parses one value at the start of `text` (after whitespace). Returns the
/// value and the number of bytes consumed.
pub fn parse_prefix(text: &str) -> Result<(Value, usize), LenientError> {
    let mut p = Parser {
        s: text,
        pos: 0,
        depth: 0,
    };
    let v = p.value()?;
    Ok((v, p.pos))
}

/// Parses `text` as exactly one value, allowing surrounding whitespace.
pub fn parse(text: &str) -> Result<Value, LenientError> {
    let (v, used) = parse_prefix(text)?;
    let rest = &text[used..];
    if !rest.trim().is_empty() {
        return Err(LenientError {
            offset: used,
            message: "trailing content after value".into(),
        });
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    List,
    Dict,
}

/// Finds the first bracketed value of `shape` in free text that parses and
/// satisfies `accept`.
pub fn find_value(raw: &str, shape: Shape, accept: impl Fn(&Value) -> bool) -> Option<Value> {
    let open = match shape {
        Shape::List => '[',
        Shape::Dict => '{',
    };
    for (i, _) in raw.match_indices(open) {
        if let Ok((v, _)) = parse_prefix(&raw[i..]) {
            if accept(&v) {
                return Some(v);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn strict_json_is_accepted() {
        assert_eq!(
            parse(r#"{"a": [1, 2.5, "x"], "b": null}"#).unwrap(),
            json!({"a": [1, 2.5, "x"], "b": null})
        );
    }

    #[test]
    fn python_style_literals() {
        assert_eq!(
            parse("[{'question': 'q', 'answer': 'a', 'ok': True, 'n': None},]").unwrap(),
            json!([{"question": "q", "answer": "a", "ok": true, "n": null}])
        );
    }

    #[test]
    fn apostrophes_inside_single_quotes() {
        assert_eq!(
            parse("['it's fine', 'b']").unwrap(),
            json!(["it's fine", "b"])
        );
    }

    #[test]
    fn bare_keys_and_smart_quotes() {
        assert_eq!(
            parse("{summary: “s”, instruction: 'i'}").unwrap(),
            json!({"summary": "s", "instruction": "i"})
        );
    }

    #[test]
    fn raw_newlines_and_escapes() {
        assert_eq!(
            parse("[\"a\nb\", \"c\\nd\", \"\\u0e01\"]").unwrap(),
            json!(["a\nb", "c\nd", "ก"])
        );
    }

    #[test]
    fn finds_payload_inside_prose() {
        let raw = "Sure [note] here you go: [\"ก\", \"ข\"] hope that helps";
        let v = find_value(raw, Shape::List, |v| {
            v.as_array().is_some_and(|a| a.len() == 2)
        })
        .unwrap();
        assert_eq!(v, json!(["ก", "ข"]));
    }

    #[test]
    fn truncated_input_is_an_error() {
        assert!(parse("[\"a\", \"b").is_err());
        assert!(parse("{\"question\": }").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let deep = "[".repeat(10_000);
        assert!(parse(&deep).is_err());
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,80}") {
            let _ = parse(&s);
            let _ = find_value(&s, Shape::List, |_| true);
            let _ = find_value(&s, Shape::Dict, |_| true);
        }

        #[test]
        fn strict_json_string_lists_round_trip(items in proptest::collection::vec("[a-zก-ฮ ]{1,12}", 0..6)) {
            let text = serde_json::to_string(&items).unwrap();
            let v = parse(&text).unwrap();
            prop_assert_eq!(v, json!(items));
        }
    }
}
