//! Component and version-number recognition within a paragraph.
//!
//! Component names match whole token sequences case-insensitively, so
//! `numpy` never fires inside `numpydoc`. Versions match three shapes:
//!
//! 1. dotted numbers with two or three segments (`3.7`, `v1.13.5`);
//! 2. wildcard forms (`3.x`, `v2.2.x`);
//! 3. a bare integer directly after a component, separated by `-`, `_` or a
//!    single space (`cuda-8`, `python v3`, `Windows 64`).
//!
//! Bare integers anywhere else are ignored.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

use crate::lexicon::Lexicon;
use crate::matching::MatchedPair;
use crate::model::{parse_version, StackLayer, Version};

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+(?:\.[\p{L}\p{N}]+)*|\S").unwrap());
static DOTTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[vV]?\d+(?:\.\d+){1,2}$").unwrap());
static WILDCARD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[vV]?\d+(?:\.\d+)?\.[xX]$").unwrap());
static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[vV]?\d+$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte offsets into the source text.
    pub span: Range<usize>,
}

/// Splits text into word tokens (letters/digits joined by inner dots) and
/// single punctuation characters.
pub fn tokenize(text: &str) -> Vec<Token> {
    TOKEN.find_iter(text).map(|m| Token { text: m.as_str().to_string(), span: m.range() }).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMention {
    pub component: String,
    pub layer: StackLayer,
    pub token_span: Range<usize>,
    pub char_span: Range<usize>,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionMention {
    pub version: Version,
    pub token_span: Range<usize>,
    pub char_span: Range<usize>,
    pub surface: String,
}

#[derive(Debug, Clone, Default)]
pub struct Recognition {
    pub tokens: Vec<Token>,
    pub components: Vec<ComponentMention>,
    pub versions: Vec<VersionMention>,
}

pub fn recognize(text: &str, lexicon: &Lexicon) -> Recognition {
    let tokens = tokenize(text);
    let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();

    let mut components = Vec::new();
    let mut covered = vec![false; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        let hit = lexicon
            .phrases()
            .iter()
            .find(|(phrase, _)| i + phrase.len() <= lower.len() && phrase.iter().zip(&lower[i..]).all(|(p, t)| p == t));
        match hit {
            Some((phrase, idx)) => {
                let end = i + phrase.len();
                let spec = lexicon.component(*idx);
                let char_span = tokens[i].span.start..tokens[end - 1].span.end;
                components.push(ComponentMention {
                    component: spec.canonical_name().to_string(),
                    layer: spec.layer(),
                    token_span: i..end,
                    surface: text[char_span.clone()].to_string(),
                    char_span,
                });
                covered[i..end].iter_mut().for_each(|c| *c = true);
                i = end;
            }
            None => i += 1,
        }
    }

    let mut versions = Vec::new();
    let mut taken = BTreeSet::new();
    for (i, tok) in tokens.iter().enumerate() {
        if covered[i] {
            continue;
        }
        if DOTTED.is_match(&tok.text) || WILDCARD.is_match(&tok.text) {
            if let Ok(version) = parse_version(&tok.text) {
                versions.push(version_mention(version, i, tok));
                taken.insert(i);
            }
        }
    }
    // Bare integers only count right after a component mention.
    for c in &components {
        let end = c.token_span.end;
        let number_at = match tokens.get(end) {
            Some(t) if (t.text == "-" || t.text == "_") && t.span.start == c.char_span.end => end + 1,
            Some(_) => end,
            None => continue,
        };
        let Some(num) = tokens.get(number_at) else { continue };
        let gap = &text[c.char_span.end..num.span.start];
        if !matches!(gap, "-" | "_" | " ") || covered[number_at] || taken.contains(&number_at) {
            continue;
        }
        if BARE.is_match(&num.text) {
            if let Ok(version) = parse_version(&num.text) {
                versions.push(version_mention(version, number_at, num));
                taken.insert(number_at);
            }
        }
    }
    versions.sort_by_key(|v| v.token_span.start);

    Recognition { tokens, components, versions }
}

fn version_mention(version: Version, index: usize, tok: &Token) -> VersionMention {
    VersionMention { version, token_span: index..index + 1, char_span: tok.span.clone(), surface: tok.text.clone() }
}

/// A paragraph qualifies when at least two distinct components are usable:
/// matched with a version, or hardware (which may stay versionless).
pub fn paragraph_qualifies(matches: &[MatchedPair]) -> bool {
    let usable: BTreeSet<&str> = matches
        .iter()
        .filter(|m| m.version.is_some() || m.component.layer == StackLayer::Hardware)
        .map(|m| m.component.component.as_str())
        .collect();
    usable.len() >= 2
}
