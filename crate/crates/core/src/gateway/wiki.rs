//! MediaWiki Action API client and wikitext section splitting.

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::http::{check_status, HttpTransport};
use super::{ProviderError, WikiArticleRef, WikiSource};

/// One section of an article. Index 0 is the lead; heading indices follow
/// the API's section numbering (every heading level counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WikiSection {
    pub page_id: u64,
    pub title: String,
    pub index: u32,
    pub heading: Option<String>,
    pub body: String,
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(={1,6})\s*(.+?)\s*(={1,6})\s*$").expect("valid regex"))
}

/// Splits raw wikitext into sections, strips markup, and drops sections
/// whose body is empty after stripping.
pub fn split_sections(page_id: u64, title: &str, wikitext: &str) -> Vec<WikiSection> {
    let mut raw: Vec<(u32, Option<String>, String)> = vec![(0, None, String::new())];
    for line in wikitext.lines() {
        let heading = heading_re()
            .captures(line.trim_end())
            .filter(|c| c[1].len() == c[3].len() && c[1].len() >= 2);
        match heading {
            Some(c) => {
                let idx = raw.len() as u32;
                raw.push((
                    idx,
                    Some(strip_markup(&c[2]).trim().to_string()),
                    String::new(),
                ));
            }
            None => {
                let body = &mut raw.last_mut().expect("lead present").2;
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    raw.into_iter()
        .filter_map(|(index, heading, body)| {
            let body = strip_markup(&body);
            (!body.is_empty()).then(|| WikiSection {
                page_id,
                title: title.to_string(),
                index,
                heading,
                body,
            })
        })
        .collect()
}

/// Removes nested `open`..`close` spans (templates, tables).
fn remove_nested(text: &str, open: &str, close: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    let mut rest = text;
    while !rest.is_empty() {
        if rest.starts_with(open) {
            depth += 1;
            rest = &rest[open.len()..];
        } else if depth > 0 && rest.starts_with(close) {
            depth -= 1;
            rest = &rest[close.len()..];
        } else {
            let ch = rest.chars().next().expect("non-empty");
            if depth == 0 {
                out.push(ch);
            }
            rest = &rest[ch.len_utf8()..];
        }
    }
    out
}

/// Rewrites `[[...]]` links: media and category links vanish, piped links
/// keep their label, plain links keep their target.
fn rewrite_links(text: &str) -> String {
    const DROP_PREFIXES: [&str; 6] = ["file:", "image:", "category:", "ไฟล์:", "ภาพ:", "หมวดหมู่:"];
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[[") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        // find the matching close, allowing one level of nesting in captions
        let mut depth = 1usize;
        let mut end = None;
        let mut i = 0;
        let bytes = after.as_bytes();
        while i + 1 < bytes.len() {
            if &bytes[i..i + 2] == b"[[" {
                depth += 1;
                i += 2;
            } else if &bytes[i..i + 2] == b"]]" {
                depth -= 1;
                if depth == 0 {
                    end = Some(i);
                    break;
                }
                i += 2;
            } else {
                i += 1;
            }
        }
        let Some(end) = end else {
            out.push_str(&rest[start..]);
            return out;
        };
        let inner = &after[..end];
        let lower = inner.trim_start().to_lowercase();
        if !DROP_PREFIXES.iter().any(|p| lower.starts_with(p)) {
            let shown = inner.rsplit_once('|').map_or(inner, |(_, label)| label);
            out.push_str(shown);
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

fn markup_res() -> &'static [(Regex, &'static str)] {
    static RES: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    RES.get_or_init(|| {
        [
            (r"(?s)<!--.*?-->", ""),
            (r"(?is)<ref[^>/]*/>", ""),
            (r"(?is)<ref[^>]*>.*?</ref>", ""),
            (r"\[(?:https?:)?//[^\s\]]+\s+([^\]]+)\]", "$1"),
            (r"\[(?:https?:)?//[^\s\]]+\]", ""),
            (r"(?s)<[^>]+>", ""),
            (r"'{2,}", ""),
            (r"(?m)^[ \t]*__[A-Z]+__[ \t]*$", ""),
            (r"[ \t]+\n", "\n"),
            (r"\n{3,}", "\n\n"),
        ]
        .into_iter()
        .map(|(p, r)| (Regex::new(p).expect("valid regex"), r))
        .collect()
    })
}

/// Strips wikitext markup down to plain prose.
pub fn strip_markup(text: &str) -> String {
    let mut s = remove_nested(text, "{{", "}}");
    s = remove_nested(&s, "{|", "|}");
    s = rewrite_links(&s);
    for (re, rep) in markup_res() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.trim().to_string()
}

/// Client for the MediaWiki Action API (`list=search` and `action=parse`).
pub struct MediaWikiClient {
    api_url: String,
    transport: Arc<dyn HttpTransport>,
}

impl MediaWikiClient {
    pub fn new(api_url: impl Into<String>, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            api_url: api_url.into(),
            transport,
        }
    }
}

fn api_error(v: &Value) -> Option<ProviderError> {
    let err = v.get("error")?;
    let code = err.get("code").and_then(Value::as_str).unwrap_or("unknown");
    let info = err.get("info").and_then(Value::as_str).unwrap_or("");
    Some(match code {
        "missingtitle" | "nosuchpageid" | "missingpage" => {
            ProviderError::NotFound(format!("{code}: {info}"))
        }
        "ratelimited" | "maxlag" | "readonly" => {
            ProviderError::Transport(format!("{code}: {info}"))
        }
        _ => ProviderError::Protocol(format!("{code}: {info}")),
    })
}

fn parse_body(body: &str) -> Result<Value, ProviderError> {
    serde_json::from_str(body).map_err(|e| ProviderError::Protocol(format!("invalid JSON: {e}")))
}

/// Parses a `list=search` response into ranked references.
pub fn parse_search_response(body: &str, limit: u32) -> Result<Vec<WikiArticleRef>, ProviderError> {
    let v = parse_body(body)?;
    if let Some(e) = api_error(&v) {
        return Err(e);
    }
    let Some(hits) = v.pointer("/query/search").and_then(Value::as_array) else {
        return Err(ProviderError::Protocol(
            "response lacks query.search".into(),
        ));
    };
    hits.iter()
        .take(limit as usize)
        .enumerate()
        .map(|(i, hit)| {
            let title = hit.get("title").and_then(Value::as_str);
            let page_id = hit.get("pageid").and_then(Value::as_u64);
            match (title, page_id) {
                (Some(t), Some(p)) => Ok(WikiArticleRef {
                    title: t.to_string(),
                    page_id: p,
                    relevance_rank: i as u32 + 1,
                }),
                _ => Err(ProviderError::Protocol(
                    "search hit lacks title or pageid".into(),
                )),
            }
        })
        .collect()
}

/// Parses an `action=parse&prop=wikitext` response (either format version).
pub fn parse_wikitext_response(body: &str) -> Result<(u64, String, String), ProviderError> {
    let v = parse_body(body)?;
    if let Some(e) = api_error(&v) {
        return Err(e);
    }
    let parse = v
        .get("parse")
        .ok_or_else(|| ProviderError::Protocol("response lacks parse".into()))?;
    let title = parse
        .get("title")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let page_id = parse
        .get("pageid")
        .and_then(Value::as_u64)
        .unwrap_or_default();
    let text = match parse.get("wikitext") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Object(o)) => o
            .get("*")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Protocol("wikitext object lacks '*'".into()))?
            .to_string(),
        _ => return Err(ProviderError::Protocol("response lacks wikitext".into())),
    };
    Ok((page_id, title.to_string(), text))
}

impl WikiSource for MediaWikiClient {
    fn id(&self) -> &str {
        &self.api_url
    }

    fn search(&self, query: &str, limit: u32) -> Result<Vec<WikiArticleRef>, ProviderError> {
        let params = [
            ("action", "query".to_string()),
            ("list", "search".to_string()),
            ("srsearch", query.to_string()),
            ("srlimit", limit.to_string()),
            ("format", "json".to_string()),
            ("formatversion", "2".to_string()),
        ];
        let resp = self.transport.get(&self.api_url, &params)?;
        parse_search_response(&check_status(resp)?, limit)
    }

    fn sections(&self, article: &WikiArticleRef) -> Result<Vec<WikiSection>, ProviderError> {
        let params = [
            ("action", "parse".to_string()),
            ("pageid", article.page_id.to_string()),
            ("prop", "wikitext".to_string()),
            ("format", "json".to_string()),
            ("formatversion", "2".to_string()),
        ];
        let resp = self.transport.get(&self.api_url, &params)?;
        let (page_id, title, text) = parse_wikitext_response(&check_status(resp)?)?;
        let title = if title.is_empty() {
            article.title.clone()
        } else {
            title
        };
        let page_id = if page_id == 0 {
            article.page_id
        } else {
            page_id
        };
        Ok(split_sections(page_id, &title, &text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARTICLE: &str = "\
'''Songkran''' is the [[Thai New Year|new year]] festival.{{Infobox holiday|name=x}}
[[File:Water.jpg|thumb|A [[splash]] of water]]

== History ==
Celebrated since the [[Ayutthaya Kingdom]].<ref>Some source</ref>

== Customs ==
People pour water.

=== Regional ===
Northern provinces hold parades.
";

    #[test]
    fn three_headings_give_four_sections() {
        let secs = split_sections(7, "Songkran", ARTICLE);
        assert_eq!(secs.len(), 4);
        assert_eq!(secs[0].index, 0);
        assert_eq!(secs[0].heading, None);
        assert_eq!(secs[0].body, "Songkran is the new year festival.");
        assert_eq!(secs[1].heading.as_deref(), Some("History"));
        assert_eq!(secs[1].body, "Celebrated since the Ayutthaya Kingdom.");
        assert_eq!(secs[3].index, 3);
        assert_eq!(secs[3].heading.as_deref(), Some("Regional"));
    }

    #[test]
    fn no_headings_gives_one_section() {
        let secs = split_sections(1, "Stub", "Just a sentence.");
        assert_eq!(secs.len(), 1);
        assert_eq!(secs[0].body, "Just a sentence.");
    }

    #[test]
    fn empty_section_bodies_are_dropped_but_indices_kept() {
        let text = "Lead.\n== Empty ==\n{{citation needed}}\n\n== Full ==\nBody.\n";
        let secs = split_sections(1, "T", text);
        let idx: Vec<u32> = secs.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn markup_stripping() {
        assert_eq!(strip_markup("a {{t|{{nested}}}} b"), "a  b");
        assert_eq!(strip_markup("[[A|b]] [[c]]"), "b c");
        assert_eq!(strip_markup("[https://x.org site] x"), "site x");
        assert_eq!(strip_markup("'''bold''' <b>t</b>"), "bold t");
        assert_eq!(strip_markup("{| class=x\n|cell\n|}\nafter"), "after");
        assert_eq!(strip_markup("[[หมวดหมู่:ประเพณี]]ข้อความ"), "ข้อความ");
    }

    #[test]
    fn search_fixture_ranking() {
        let body = r#"{"batchcomplete":true,"query":{"searchinfo":{"totalhits":3},"search":[
            {"ns":0,"title":"สงกรานต์","pageid":1001,"size":100},
            {"ns":0,"title":"ปีใหม่ไทย","pageid":2002,"size":50},
            {"ns":0,"title":"ลอยกระทง","pageid":3003,"size":10}]}}"#;
        let refs = parse_search_response(body, 10).unwrap();
        let got: Vec<(&str, u64, u32)> = refs
            .iter()
            .map(|r| (r.title.as_str(), r.page_id, r.relevance_rank))
            .collect();
        assert_eq!(
            got,
            vec![
                ("สงกรานต์", 1001, 1),
                ("ปีใหม่ไทย", 2002, 2),
                ("ลอยกระทง", 3003, 3)
            ]
        );
        assert_eq!(parse_search_response(body, 2).unwrap().len(), 2);
    }

    #[test]
    fn empty_search_is_not_an_error() {
        let body = r#"{"query":{"searchinfo":{"totalhits":0},"search":[]}}"#;
        assert!(parse_search_response(body, 10).unwrap().is_empty());
    }

    #[test]
    fn missing_page_maps_to_not_found() {
        let body = r#"{"error":{"code":"nosuchpageid","info":"There is no page with ID 5."}}"#;
        assert!(matches!(
            parse_wikitext_response(body),
            Err(ProviderError::NotFound(_))
        ));
    }

    #[test]
    fn both_wikitext_format_versions_parse() {
        let v1 = r#"{"parse":{"title":"T","pageid":3,"wikitext":{"*":"x"}}}"#;
        let v2 = r#"{"parse":{"title":"T","pageid":3,"wikitext":"x"}}"#;
        assert_eq!(
            parse_wikitext_response(v1).unwrap(),
            (3, "T".into(), "x".into())
        );
        assert_eq!(
            parse_wikitext_response(v2).unwrap(),
            (3, "T".into(), "x".into())
        );
    }
}
