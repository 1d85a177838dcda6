//! The required stack of a project: requirement specifiers plus packages
//! imported by its Python sources.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::lexicon::Lexicon;
use crate::model::{parse_version, Bound, Version, VersionConstraint};

const STDLIB_MODULES: &str = include_str!("../data/stdlib_modules.txt");

/// Directory names never scanned for imports.
const SKIPPED_DIRS: &[&str] = &["__pycache__", "venv", "env", "site-packages", "node_modules", "build", "dist"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryOrigin {
    RequirementsFile,
    ImportScan,
    /// An installed component pulled in because the graph relates it to a
    /// required one.
    Installed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredEntry {
    pub component: String,
    pub constraint: VersionConstraint,
    pub origin: EntryOrigin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequiredStack {
    pub entries: Vec<RequiredEntry>,
}

impl RequiredStack {
    pub fn get(&self, component: &str) -> Option<&RequiredEntry> {
        self.entries.iter().find(|e| e.component == component)
    }
}

static REQ_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z0-9](?:[A-Za-z0-9._-]*[A-Za-z0-9])?)\s*(?:\[[^\]]*\])?\s*(.*)$").unwrap());
static SPECIFIER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(===|==|~=|!=|>=|<=|>|<)\s*([^\s,]+)$").unwrap());
static NUMERIC_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[vV]?(\d+(?:\.\d+){0,2})").unwrap());

/// Normalizes a distribution name: lowercase, `_` and `.` become `-`.
pub fn normalize_package(name: &str) -> String {
    name.trim().to_lowercase().replace(['_', '.'], "-")
}

fn bump(v: &Version, index: usize) -> Version {
    let mut segs: Vec<u64> = v.segments()[..=index].to_vec();
    segs[index] += 1;
    Version::new(segs, false).expect("1 to 3 segments")
}

/// Parses a specifier's version, stripping local suffixes and anything after
/// the numeric release part (with a warning).
fn spec_version(text: &str, warnings: &mut Vec<String>, line_no: usize) -> Option<Version> {
    let text = match text.split_once('+') {
        Some((base, local)) => {
            warnings.push(format!("line {line_no}: stripped local version suffix `+{local}`"));
            base
        }
        None => text,
    };
    if let Ok(v) = parse_version(text) {
        return Some(v);
    }
    let m = NUMERIC_PREFIX.captures(text)?;
    let prefix = m.get(1)?.as_str();
    warnings.push(format!("line {line_no}: using `{prefix}` for version `{text}`"));
    parse_version(prefix).ok()
}

fn specifier_constraint(
    op: &str,
    raw: &str,
    warnings: &mut Vec<String>,
    line_no: usize,
) -> Result<Option<VersionConstraint>, String> {
    if op == "!=" {
        warnings.push(format!("line {line_no}: exclusion `!={raw}` ignored"));
        return Ok(None);
    }
    if let Some(prefix) = raw.strip_suffix(".*") {
        if op != "==" {
            return Err(format!("wildcard only allowed with ==, got `{op}{raw}`"));
        }
        let v = parse_version(prefix).map_err(|e| e.to_string())?;
        let upper = bump(&v, v.segments().len() - 1);
        return VersionConstraint::new(Some(Bound::inclusive(v)), Some(Bound::exclusive(upper)))
            .map(Some)
            .map_err(|e| e.to_string());
    }
    let v = spec_version(raw, warnings, line_no).ok_or_else(|| format!("bad version `{raw}`"))?;
    let c = match op {
        "==" | "===" => VersionConstraint::exact(v),
        ">=" => VersionConstraint::new(Some(Bound::inclusive(v)), None).map_err(|e| e.to_string())?,
        ">" => VersionConstraint::new(Some(Bound::exclusive(v)), None).map_err(|e| e.to_string())?,
        "<=" => VersionConstraint::new(None, Some(Bound::inclusive(v))).map_err(|e| e.to_string())?,
        "<" => VersionConstraint::new(None, Some(Bound::exclusive(v))).map_err(|e| e.to_string())?,
        "~=" => {
            let n = v.segments().len();
            if n < 2 {
                return Err(format!("`~={raw}` needs at least two segments"));
            }
            let upper = bump(&v, n - 2);
            VersionConstraint::new(Some(Bound::inclusive(v)), Some(Bound::exclusive(upper)))
                .map_err(|e| e.to_string())?
        }
        _ => unreachable!("operator matched by the specifier regex"),
    };
    Ok(Some(c))
}

/// Parses requirements text into entries (in file order, one per package)
/// and warnings. Bad lines are skipped with a warning, never fatal.
pub fn parse_requirements(text: &str) -> (Vec<RequiredEntry>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut entries: Vec<RequiredEntry> = Vec::new();
    for (n, raw_line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = match raw_line.find('#') {
            Some(i) if i == 0 || raw_line[..i].ends_with(char::is_whitespace) => &raw_line[..i],
            _ => raw_line,
        };
        let line = line.split(';').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('-') {
            warnings.push(format!("line {line_no}: option `{line}` ignored"));
            continue;
        }
        let Some(caps) = REQ_LINE.captures(line) else {
            warnings.push(format!("line {line_no}: cannot parse `{line}`"));
            continue;
        };
        let name = normalize_package(&caps[1]);
        let rest = caps[2].trim();
        let mut constraint = VersionConstraint::unbounded();
        if rest.starts_with('@') {
            warnings.push(format!("line {line_no}: direct reference for `{name}` has no version range"));
        } else if !rest.is_empty() {
            let mut ok = true;
            for spec in rest.split(',') {
                let spec = spec.trim();
                let parsed = SPECIFIER
                    .captures(spec)
                    .ok_or_else(|| format!("bad specifier `{spec}`"))
                    .and_then(|c| specifier_constraint(&c[1], &c[2], &mut warnings, line_no));
                match parsed {
                    Ok(Some(c)) => constraint = constraint.intersect(&c),
                    Ok(None) => {}
                    Err(e) => {
                        warnings.push(format!("line {line_no}: {e}; line skipped"));
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
        }
        match entries.iter_mut().find(|e| e.component == name) {
            Some(existing) => existing.constraint = existing.constraint.intersect(&constraint),
            None => entries.push(RequiredEntry {
                component: name.clone(),
                constraint,
                origin: EntryOrigin::RequirementsFile,
            }),
        }
        if let Some(e) = entries.iter().find(|e| e.component == name) {
            if e.constraint.is_empty() {
                warnings.push(format!("line {line_no}: specifiers for `{name}` admit no version"));
            }
        }
    }
    (entries, warnings)
}

/// Removes comments and string contents from one physical line. `in_triple`
/// carries an open triple-quoted string across lines.
fn code_part(line: &str, in_triple: &mut Option<&'static str>) -> String {
    let mut out = String::new();
    let mut rest = line;
    loop {
        if let Some(delim) = *in_triple {
            match rest.find(delim) {
                Some(i) => {
                    rest = &rest[i + 3..];
                    *in_triple = None;
                    out.push_str("\"\"");
                }
                None => return out,
            }
        }
        let Some(i) = rest.find(['#', '"', '\'']) else {
            out.push_str(rest);
            return out;
        };
        out.push_str(&rest[..i]);
        let c = rest.as_bytes()[i];
        if c == b'#' {
            return out;
        }
        let tail = &rest[i..];
        if tail.starts_with("\"\"\"") || tail.starts_with("'''") {
            *in_triple = Some(if c == b'"' { "\"\"\"" } else { "'''" });
            rest = &tail[3..];
            continue;
        }
        // Single-line string: skip to the closing quote, honoring escapes.
        let mut end = None;
        let mut escaped = false;
        for (j, ch) in tail.char_indices().skip(1) {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch as u32 == u32::from(c) {
                end = Some(j);
                break;
            }
        }
        out.push_str("\"\"");
        match end {
            Some(j) => rest = &tail[j + 1..],
            None => return out,
        }
    }
}

/// Logical statements of a source file: comments and strings removed,
/// backslash and bracket continuations joined.
fn statements(source: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_triple = None;
    let mut current = String::new();
    let mut depth: i32 = 0;
    for line in source.lines() {
        let was_in_string = in_triple.is_some();
        let code = code_part(line, &mut in_triple);
        if was_in_string && current.is_empty() && depth == 0 && in_triple.is_some() {
            continue;
        }
        let (code, continued) = match code.trim_end().strip_suffix('\\') {
            Some(c) => (c.to_string(), true),
            None => (code, false),
        };
        for ch in code.chars() {
            match ch {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth = (depth - 1).max(0),
                _ => {}
            }
        }
        current.push(' ');
        current.push_str(&code);
        if !continued && depth == 0 && in_triple.is_none() {
            out.extend(current.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        out.push(current.trim().to_string());
    }
    out
}

static IMPORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^import\s+(.+)$").unwrap());
static FROM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^from\s+(\S+)\s+import\b").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());

/// Root package names imported by one source text (relative imports excluded).
pub fn imports_in_source(source: &str) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    for stmt in statements(source) {
        let stmt = stmt.trim_start_matches(|c: char| c.is_whitespace()).trim_start_matches("try:").trim_start();
        if let Some(c) = FROM.captures(stmt) {
            let module = &c[1];
            if !module.starts_with('.') {
                let root = module.split('.').next().unwrap_or("");
                if IDENT.is_match(root) {
                    found.insert(root.to_string());
                }
            }
        } else if let Some(c) = IMPORT.captures(stmt) {
            for part in c[1].split(',') {
                let module = part.split_whitespace().next().unwrap_or("");
                let root = module.trim_matches(['(', ')']).split('.').next().unwrap_or("");
                if IDENT.is_match(root) {
                    found.insert(root.to_string());
                }
            }
        }
    }
    found
}

pub fn stdlib_modules() -> HashSet<&'static str> {
    STDLIB_MODULES.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Third-party packages imported anywhere under `root`. Local modules (file
/// stems and package directories in the tree) and standard-library modules
/// are excluded. Unreadable files produce warnings.
pub fn scan_imports(root: &Path) -> (BTreeSet<String>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut imports = BTreeSet::new();
    let mut local = HashSet::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        let name = e.file_name().to_string_lossy();
        e.depth() == 0 || !(name.starts_with('.') || (e.file_type().is_dir() && SKIPPED_DIRS.contains(&name.as_ref())))
    });
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("walking {}: {e}", root.display()));
                continue;
            }
        };
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().is_none_or(|x| x != "py") {
            continue;
        }
        if let Some(stem) = path.file_stem() {
            local.insert(stem.to_string_lossy().into_owned());
        }
        for dir in path.ancestors().skip(1) {
            if dir == root || !dir.starts_with(root) {
                break;
            }
            if let Some(name) = dir.file_name() {
                local.insert(name.to_string_lossy().into_owned());
            }
        }
        match std::fs::read(path) {
            Ok(bytes) => imports.extend(imports_in_source(&String::from_utf8_lossy(&bytes))),
            Err(e) => warnings.push(format!("skipping {}: {e}", path.display())),
        }
    }
    let stdlib = stdlib_modules();
    imports.retain(|m| !local.contains(m) && !stdlib.contains(m.as_str()));
    (imports, warnings)
}

/// Union of requirement entries (in file order) and imported packages (in
/// alphabetical order), keyed by canonical component name. Requirement
/// constraints take precedence; several requirement lines naming the same
/// component are intersected.
pub fn build_required_stack(reqs: &[RequiredEntry], imports: &BTreeSet<String>, lexicon: &Lexicon) -> RequiredStack {
    let mut entries: Vec<RequiredEntry> = Vec::new();
    for r in reqs {
        let name = lexicon.canonicalize(&r.component);
        match entries.iter_mut().find(|e| e.component == name) {
            Some(e) => e.constraint = e.constraint.intersect(&r.constraint),
            None => entries.push(RequiredEntry { component: name, ..r.clone() }),
        }
    }
    let scanned: BTreeMap<String, ()> =
        imports.iter().map(|i| (lexicon.canonicalize(&normalize_package(i)), ())).collect();
    for name in scanned.into_keys() {
        if !entries.iter().any(|e| e.component == name) {
            entries.push(RequiredEntry {
                component: name,
                constraint: VersionConstraint::unbounded(),
                origin: EntryOrigin::ImportScan,
            });
        }
    }
    RequiredStack { entries }
}
