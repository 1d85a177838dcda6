//! The component lexicon: canonical names, aliases, layers and probe commands.
//!
//! Loaded from a JSON array of
//! `{"canonical", "aliases": [...], "layer", "probes": [{"command", "args", "pattern"}]}`.
//! The built-in default ships with the crate and can be replaced without code
//! changes.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{ComponentSpec, ModelError, StackLayer};
use crate::recognize::tokenize;

const BUILTIN_COMPONENTS: &str = include_str!("../data/components.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("reading lexicon {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("lexicon JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("name `{name}` is claimed by both `{first}` and `{second}`")]
    Ambiguous { name: String, first: String, second: String },
    #[error("probe pattern for `{component}`: {source}")]
    Pattern { component: String, source: regex::Error },
}

/// A command whose output reveals a component's version. The first capture
/// group of `pattern` is the version; a pattern without groups only detects
/// presence (hardware).
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    pub command: String,
    pub args: Vec<String>,
    pub pattern: Regex,
}

#[derive(Deserialize)]
struct ProbeRow {
    command: String,
    #[serde(default)]
    args: Vec<String>,
    pattern: String,
}

#[derive(Deserialize)]
struct ComponentRow {
    canonical: String,
    #[serde(default)]
    aliases: Vec<String>,
    layer: StackLayer,
    #[serde(default)]
    probes: Vec<ProbeRow>,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    components: Vec<ComponentSpec>,
    probes: Vec<Vec<ProbeSpec>>,
    by_name: HashMap<String, usize>,
    /// Token sequences of every name and alias, longest first.
    phrases: Vec<(Vec<String>, usize)>,
}

impl Lexicon {
    pub fn new(components: Vec<ComponentSpec>) -> Result<Self, LexiconError> {
        let probes = vec![Vec::new(); components.len()];
        Self::with_probes(components, probes)
    }

    fn with_probes(components: Vec<ComponentSpec>, probes: Vec<Vec<ProbeSpec>>) -> Result<Self, LexiconError> {
        let mut by_name = HashMap::new();
        let mut phrases = Vec::new();
        for (idx, spec) in components.iter().enumerate() {
            for name in spec.names() {
                if let Some(&prev) = by_name.get(name) {
                    let prev: &ComponentSpec = &components[prev];
                    return Err(LexiconError::Ambiguous {
                        name: name.to_string(),
                        first: prev.canonical_name().to_string(),
                        second: spec.canonical_name().to_string(),
                    });
                }
                by_name.insert(name.to_string(), idx);
                let toks: Vec<String> = tokenize(name).into_iter().map(|t| t.text).collect();
                if !toks.is_empty() {
                    phrases.push((toks, idx));
                }
            }
        }
        // Longest phrase first; ties keep lexicon order.
        phrases.sort_by_key(|p| std::cmp::Reverse(p.0.len()));
        Ok(Self { components, probes, by_name, phrases })
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let rows: Vec<ComponentRow> = serde_json::from_str(text)?;
        let mut components = Vec::with_capacity(rows.len());
        let mut probes = Vec::with_capacity(rows.len());
        for row in rows {
            let spec = ComponentSpec::new(&row.canonical, &row.aliases, row.layer)?;
            let compiled = row
                .probes
                .into_iter()
                .map(|p| {
                    Ok(ProbeSpec {
                        command: p.command,
                        args: p.args,
                        pattern: Regex::new(&p.pattern).map_err(|source| LexiconError::Pattern {
                            component: spec.canonical_name().to_string(),
                            source,
                        })?,
                    })
                })
                .collect::<Result<Vec<_>, LexiconError>>()?;
            components.push(spec);
            probes.push(compiled);
        }
        Self::with_probes(components, probes)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LexiconError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// The 48-component default lexicon.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_COMPONENTS).expect("built-in lexicon is valid")
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    /// Case-insensitive lookup by canonical name or alias. Package-style
    /// names also match with `_` and `-` interchanged.
    pub fn lookup(&self, name: &str) -> Option<&ComponentSpec> {
        let lower = name.trim().to_lowercase();
        self.by_name
            .get(&lower)
            .or_else(|| self.by_name.get(&lower.replace('_', "-")))
            .or_else(|| self.by_name.get(&lower.replace('-', "_")))
            .map(|&i| &self.components[i])
    }

    /// Canonical name when known, otherwise the lowercased input.
    pub fn canonicalize(&self, name: &str) -> String {
        self.lookup(name).map(|c| c.canonical_name().to_string()).unwrap_or_else(|| name.trim().to_lowercase())
    }

    pub fn layer_of(&self, name: &str) -> Option<StackLayer> {
        self.lookup(name).map(ComponentSpec::layer)
    }

    pub fn probes(&self, canonical: &str) -> &[ProbeSpec] {
        self.by_name.get(canonical).map(|&i| self.probes[i].as_slice()).unwrap_or(&[])
    }

    pub(crate) fn phrases(&self) -> &[(Vec<String>, usize)] {
        &self.phrases
    }

    pub(crate) fn component(&self, idx: usize) -> &ComponentSpec {
        &self.components[idx]
    }
}
