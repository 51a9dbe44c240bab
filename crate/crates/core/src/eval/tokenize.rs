//! Tokenizers for metric computation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use unicode_segmentation::UnicodeSegmentation;

/// Hook for external word segmenters (dictionary-based Thai segmenters and
/// the like).
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, text: &str) -> Vec<String>;
}

#[derive(Clone)]
pub enum Tokenizer {
    /// Unicode default word boundaries, punctuation dropped. Thai runs
    /// without spaces stay whole.
    UnicodeWords,
    /// Grapheme clusters, whitespace dropped.
    Characters,
    Whitespace,
    Custom(Arc<dyn Segmenter>),
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Tokenizer {
    pub fn name(&self) -> String {
        match self {
            Tokenizer::UnicodeWords => "unicode_words".into(),
            Tokenizer::Characters => "characters".into(),
            Tokenizer::Whitespace => "whitespace".into(),
            Tokenizer::Custom(s) => format!("custom:{}", s.name()),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::UnicodeWords => text.unicode_words().map(str::to_string).collect(),
            Tokenizer::Characters => text
                .graphemes(true)
                .filter(|g| !g.chars().all(char::is_whitespace))
                .map(str::to_string)
                .collect(),
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            Tokenizer::Custom(s) => s.segment(text),
        }
    }
}

impl FromStr for Tokenizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "unicode_words" | "words" => Ok(Tokenizer::UnicodeWords),
            "characters" | "chars" => Ok(Tokenizer::Characters),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(format!(
                "unknown tokenizer '{other}' (expected unicode_words, characters or whitespace)"
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MODES: [Tokenizer; 3] = [
        Tokenizer::UnicodeWords,
        Tokenizer::Characters,
        Tokenizer::Whitespace,
    ];

    #[test]
    fn empty_text_has_no_tokens() {
        for t in MODES {
            assert!(t.tokenize("").is_empty());
        }
    }

    #[test]
    fn modes_split_as_documented() {
        assert_eq!(
            Tokenizer::Whitespace.tokenize(" a  b\tc "),
            vec!["a", "b", "c"]
        );
        assert_eq!(
            Tokenizer::UnicodeWords.tokenize("Hello, world!"),
            vec!["Hello", "world"]
        );
        // combining marks stay with their base consonant
        assert_eq!(
            Tokenizer::Characters.tokenize("กิน ข้าว"),
            vec!["กิ", "น", "ข้", "า", "ว"]
        );
    }

    proptest! {
        #[test]
        fn tokens_keep_source_order(s in "\\PC{0,60}") {
            for t in MODES {
                let mut rest = s.as_str();
                for tok in t.tokenize(&s) {
                    let at = rest.find(&tok);
                    prop_assert!(at.is_some(), "{} lost token {:?}", t.name(), tok);
                    rest = &rest[at.unwrap() + tok.len()..];
                }
            }
        }
    }
}
