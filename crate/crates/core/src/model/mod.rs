//! Domain types shared across the pipeline.

mod graph;
mod version;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{ConsolidationStrategy, EdgeEvidence, KgEdge, KnowledgeGraph, NodeKey};
pub use version::{
    compare_versions, parse_version, version_satisfies, version_unifies, Bound, Version, VersionConstraint,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed version `{0}`")]
    BadVersion(String),
    #[error("a version has 1 to 3 segments, got {0}")]
    SegmentCount(usize),
    #[error("wildcard version `{0}` cannot be tested against a constraint")]
    WildcardVersion(String),
    #[error("wildcard `{0}` cannot bound a constraint")]
    WildcardBound(String),
    #[error("constraint bounds are inverted: {0}")]
    InvertedBounds(String),
    #[error("unknown stack layer `{0}`")]
    UnknownLayer(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("component `{0}` needs a version (only hardware may be versionless)")]
    MissingVersion(String),
    #[error("invalid component spec `{name}`: {reason}")]
    BadComponent { name: String, reason: String },
    #[error("invalid edge {a} -- {b}: {reason}")]
    BadEdge { a: String, b: String, reason: String },
}

/// The five layers of a deep-learning stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StackLayer {
    Library,
    Runtime,
    Driver,
    OsContainer,
    Hardware,
}

impl StackLayer {
    pub const ALL: [StackLayer; 5] =
        [StackLayer::Library, StackLayer::Runtime, StackLayer::Driver, StackLayer::OsContainer, StackLayer::Hardware];

    pub fn as_str(self) -> &'static str {
        match self {
            StackLayer::Library => "library",
            StackLayer::Runtime => "runtime",
            StackLayer::Driver => "driver",
            StackLayer::OsContainer => "os-container",
            StackLayer::Hardware => "hardware",
        }
    }
}

impl fmt::Display for StackLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StackLayer {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StackLayer::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| ModelError::UnknownLayer(s.to_string()))
    }
}

/// A recognizable stack component with its lowercase aliases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSpec {
    canonical_name: String,
    aliases: Vec<String>,
    layer: StackLayer,
}

impl ComponentSpec {
    pub fn new(
        canonical_name: &str,
        aliases: impl IntoIterator<Item = impl AsRef<str>>,
        layer: StackLayer,
    ) -> Result<Self, ModelError> {
        let canonical_name = canonical_name.trim().to_lowercase();
        let bad = |reason: &str| ModelError::BadComponent { name: canonical_name.clone(), reason: reason.to_string() };
        if canonical_name.is_empty() {
            return Err(bad("empty canonical name"));
        }
        let mut out: Vec<String> = Vec::new();
        for alias in aliases {
            let alias = alias.as_ref().trim().to_lowercase();
            if alias.is_empty() {
                return Err(bad("empty alias"));
            }
            if alias == canonical_name {
                return Err(bad("alias repeats the canonical name"));
            }
            if !out.contains(&alias) {
                out.push(alias);
            }
        }
        Ok(Self { canonical_name, aliases: out, layer })
    }

    pub fn canonical_name(&self) -> &str {
        &self.canonical_name
    }

    pub fn aliases(&self) -> &[String] {
        &self.aliases
    }

    pub fn layer(&self) -> StackLayer {
        self.layer
    }

    /// Canonical name followed by aliases.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

/// A component (by canonical name) with an optional version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionedComponent {
    pub component: String,
    pub version: Option<Version>,
}

impl VersionedComponent {
    pub fn new(component: impl Into<String>, version: Option<Version>) -> Self {
        Self { component: component.into(), version }
    }

    pub fn versioned(component: impl Into<String>, version: Version) -> Self {
        Self::new(component, Some(version))
    }

    /// Checks the hardware-only versionless rule.
    pub fn check_layer(&self, layer: StackLayer) -> Result<(), ModelError> {
        if self.version.is_none() && layer != StackLayer::Hardware {
            return Err(ModelError::MissingVersion(self.component.clone()));
        }
        Ok(())
    }

    pub fn key(&self) -> NodeKey {
        NodeKey::of(self)
    }

    /// Total order used to orient pairs: by name, then version text.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for VersionedComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.version {
            Some(v) => write!(f, "{} {}", self.component, v),
            None => f.write_str(&self.component),
        }
    }
}

impl FromStr for VersionedComponent {
    type Err = ModelError;

    /// Parses `"name version"` or a bare `"name"`; the last whitespace token is
    /// taken as the version when it parses as one.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((name, last)) = s.rsplit_once(char::is_whitespace) {
            if let Ok(v) = parse_version(last) {
                return Ok(Self::versioned(name.trim().to_lowercase(), v));
            }
        }
        if s.is_empty() {
            return Err(ModelError::BadComponent { name: String::new(), reason: "empty component".into() });
        }
        Ok(Self::new(s.to_lowercase(), None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Compatible,
    Incompatible,
}

impl Relation {
    pub fn flip(self) -> Self {
        match self {
            Relation::Compatible => Relation::Incompatible,
            Relation::Incompatible => Relation::Compatible,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Compatible => "compatible",
            Relation::Incompatible => "incompatible",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Compatible => "Compatible",
            Relation::Incompatible => "Incompatible",
        })
    }
}

impl FromStr for Relation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "compatible" => Ok(Relation::Compatible),
            "incompatible" => Ok(Relation::Incompatible),
            _ => Err(ModelError::UnknownRelation(s.to_string())),
        }
    }
}
