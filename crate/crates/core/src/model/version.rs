//! Dotted numeric versions, wildcard patterns and interval constraints.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

const MAX_SEGMENTS: usize = 3;

/// A plain numeric version such as `2.4.3`, or a wildcard pattern such as
/// `1.3.x`.
///
/// Only the concrete segments are stored: `1.3.x` holds `[1, 3]` with the
/// wildcard flag set. Structural equality (`==`) is textual; use
/// [`compare_versions`] for numeric ordering where `2.0` and `2.0.0` are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Version {
    segments: Vec<u64>,
    wildcard: bool,
}

impl Version {
    pub fn new(segments: Vec<u64>, wildcard: bool) -> Result<Self, ModelError> {
        if segments.is_empty() || segments.len() > MAX_SEGMENTS {
            return Err(ModelError::SegmentCount(segments.len()));
        }
        Ok(Self { segments, wildcard })
    }

    pub fn segments(&self) -> &[u64] {
        &self.segments
    }

    pub fn is_wildcard(&self) -> bool {
        self.wildcard
    }

    /// Numeric comparison with zero padding; the wildcard flag is ignored.
    pub fn cmp_numeric(&self, other: &Version) -> Ordering {
        let len = self.segments.len().max(other.segments.len());
        for i in 0..len {
            let a = self.segments.get(i).copied().unwrap_or(0);
            let b = other.segments.get(i).copied().unwrap_or(0);
            match a.cmp(&b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }

    /// Ordering used for candidate lists: a wildcard sorts after every
    /// concrete version that shares its prefix (`1.3 < 1.3.7 < 1.3.x < 1.4`).
    pub fn cmp_candidate(&self, other: &Version) -> Ordering {
        let key = |v: &Version, i: usize| -> u128 {
            match v.segments.get(i) {
                Some(&s) => u128::from(s),
                None if v.wildcard => u128::MAX,
                None => 0,
            }
        };
        for i in 0..MAX_SEGMENTS {
            match key(self, i).cmp(&key(other, i)) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        // Equal under padding: break ties on the textual form so the order is total.
        self.wildcard.cmp(&other.wildcard).then(self.segments.len().cmp(&other.segments.len()))
    }
}

/// Parses the text of a version mention: optional leading `v`, one to three
/// dot-separated integers, optional trailing `.x`.
pub fn parse_version(text: &str) -> Result<Version, ModelError> {
    let bad = || ModelError::BadVersion(text.to_string());
    let trimmed = text.trim();
    let body = trimmed.strip_prefix('v').or_else(|| trimmed.strip_prefix('V')).unwrap_or(trimmed);
    let (body, wildcard) = match body.strip_suffix(".x").or_else(|| body.strip_suffix(".X")) {
        Some(rest) => (rest, true),
        None => (body, false),
    };
    if body.is_empty() {
        return Err(bad());
    }
    let segments = body
        .split('.')
        .map(|s| {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            s.parse::<u64>().map_err(|_| bad())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Version::new(segments, wildcard).map_err(|_| bad())
}

pub fn compare_versions(a: &Version, b: &Version) -> Ordering {
    a.cmp_numeric(b)
}

/// True when `concrete` is an instance of `pattern`: a prefix match for
/// wildcard patterns, numeric equality otherwise.
pub fn version_unifies(concrete: &Version, pattern: &Version) -> bool {
    if pattern.wildcard {
        pattern.segments.iter().enumerate().all(|(i, &s)| concrete.segments.get(i).copied().unwrap_or(0) == s)
    } else {
        concrete.cmp_numeric(pattern) == Ordering::Equal
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
        }
        if self.wildcard {
            f.write_str(".x")?;
        }
        Ok(())
    }
}

impl FromStr for Version {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_version(s)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_version(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bound {
    pub version: Version,
    pub inclusive: bool,
}

impl Bound {
    pub fn inclusive(version: Version) -> Self {
        Self { version, inclusive: true }
    }

    pub fn exclusive(version: Version) -> Self {
        Self { version, inclusive: false }
    }
}

/// An interval of acceptable versions. Absent bounds are unbounded; an empty
/// constraint admits nothing (conflicting specifiers).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VersionConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Bound>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    empty: bool,
}

impl VersionConstraint {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn empty() -> Self {
        Self { lower: None, upper: None, empty: true }
    }

    /// Fails when the bounds are inverted, or meet at a point that one side excludes.
    pub fn new(lower: Option<Bound>, upper: Option<Bound>) -> Result<Self, ModelError> {
        let c = Self { lower, upper, empty: false };
        if c.bounds_cross() {
            return Err(ModelError::InvertedBounds(c.to_string()));
        }
        for b in c.lower.iter().chain(c.upper.iter()) {
            if b.version.is_wildcard() {
                return Err(ModelError::WildcardBound(b.version.to_string()));
            }
        }
        Ok(c)
    }

    /// The inclusive range `[min, max]`.
    pub fn range(min: Version, max: Version) -> Result<Self, ModelError> {
        Self::new(Some(Bound::inclusive(min)), Some(Bound::inclusive(max)))
    }

    pub fn exact(v: Version) -> Self {
        Self { lower: Some(Bound::inclusive(v.clone())), upper: Some(Bound::inclusive(v)), empty: false }
    }

    pub fn lower(&self) -> Option<&Bound> {
        self.lower.as_ref()
    }

    pub fn upper(&self) -> Option<&Bound> {
        self.upper.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_unbounded(&self) -> bool {
        !self.empty && self.lower.is_none() && self.upper.is_none()
    }

    /// The pinned version when the constraint admits exactly one point.
    pub fn point(&self) -> Option<&Version> {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u))
                if !self.empty
                    && l.inclusive
                    && u.inclusive
                    && l.version.cmp_numeric(&u.version) == Ordering::Equal =>
            {
                Some(&l.version)
            }
            _ => None,
        }
    }

    fn bounds_cross(&self) -> bool {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => match l.version.cmp_numeric(&u.version) {
                Ordering::Greater => true,
                Ordering::Equal => !(l.inclusive && u.inclusive),
                Ordering::Less => false,
            },
            _ => false,
        }
    }

    /// Tightest constraint admitting only versions admitted by both.
    pub fn intersect(&self, other: &VersionConstraint) -> VersionConstraint {
        if self.empty || other.empty {
            return Self::empty();
        }
        let lower = tighter(self.lower.as_ref(), other.lower.as_ref(), Ordering::Greater);
        let upper = tighter(self.upper.as_ref(), other.upper.as_ref(), Ordering::Less);
        let c = Self { lower, upper, empty: false };
        if c.bounds_cross() {
            Self::empty()
        } else {
            c
        }
    }

    fn admits(&self, v: &Version) -> bool {
        if self.empty {
            return false;
        }
        if let Some(l) = &self.lower {
            match v.cmp_numeric(&l.version) {
                Ordering::Less => return false,
                Ordering::Equal if !l.inclusive => return false,
                _ => {}
            }
        }
        if let Some(u) = &self.upper {
            match v.cmp_numeric(&u.version) {
                Ordering::Greater => return false,
                Ordering::Equal if !u.inclusive => return false,
                _ => {}
            }
        }
        true
    }
}

/// Picks the stricter of two bounds; `want` is the ordering that makes a
/// bound stricter (greater for lower bounds, less for upper bounds).
fn tighter(a: Option<&Bound>, b: Option<&Bound>, want: Ordering) -> Option<Bound> {
    match (a, b) {
        (None, None) => None,
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (Some(x), Some(y)) => match x.version.cmp_numeric(&y.version) {
            Ordering::Equal => Some(Bound { version: x.version.clone(), inclusive: x.inclusive && y.inclusive }),
            ord if ord == want => Some(x.clone()),
            _ => Some(y.clone()),
        },
    }
}

/// Whether a concrete version lies within the constraint, honoring
/// inclusivity. Wildcard versions are rejected.
pub fn version_satisfies(v: &Version, c: &VersionConstraint) -> Result<bool, ModelError> {
    if v.is_wildcard() {
        return Err(ModelError::WildcardVersion(v.to_string()));
    }
    Ok(c.admits(v))
}

impl fmt::Display for VersionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.empty {
            return f.write_str("<empty>");
        }
        if let Some(p) = self.point() {
            return write!(f, "=={p}");
        }
        let mut parts = Vec::new();
        if let Some(l) = &self.lower {
            parts.push(format!("{}{}", if l.inclusive { ">=" } else { ">" }, l.version));
        }
        if let Some(u) = &self.upper {
            parts.push(format!("{}{}", if u.inclusive { "<=" } else { "<" }, u.version));
        }
        if parts.is_empty() {
            f.write_str("*")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}
