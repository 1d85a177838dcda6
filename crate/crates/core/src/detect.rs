//! Finding version incompatibilities between a required stack and a local
//! stack, and inferring fix versions by backtracking search over the
//! knowledge graph.
//!
//! Every required entry gets a candidate list: the installed version first
//! when it meets the constraint, then the graph's concrete versions inside the
//! constraint, latest first. Entries are assigned in order; a candidate is
//! admissible when no incompatible edge links it to an installed component
//! outside the search or to an earlier assignment. When an entry has no
//! admissible candidate the search pops the most recent assignment and moves
//! it to its next candidate. Missing edges never block.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::EnvSnapshot;
use crate::kg::{candidate_versions, relation_between};
use crate::model::{version_satisfies, KnowledgeGraph, Relation, Version, VersionConstraint, VersionedComponent};
use crate::project::{EntryOrigin, RequiredEntry, RequiredStack};

pub const POST_URL_PREFIX: &str = "https://stackoverflow.com/questions/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntryOrder {
    /// Requirements-file order, then imported packages alphabetically.
    #[default]
    File,
    Alpha,
}

impl FromStr for EntryOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file" => Ok(EntryOrder::File),
            "alpha" => Ok(EntryOrder::Alpha),
            _ => Err(format!("unknown order `{s}` (expected file or alpha)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    ConstraintViolation,
    GraphIncompatibility,
    Unsatisfiable,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::ConstraintViolation => "constraint-violation",
            IssueKind::GraphIncompatibility => "graph-incompatibility",
            IssueKind::Unsatisfiable => "unsatisfiable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub subject: RequiredEntry,
    /// The locally installed version of the subject, if any.
    pub installed: Option<VersionedComponent>,
    /// Components whose graph edges rule out the installed version.
    pub conflicts_with: Vec<VersionedComponent>,
    pub suggested_version: Option<Version>,
    pub evidence_posts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub component: String,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Resolution {
    Satisfiable { assignments: Vec<Assignment> },
    NoSolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompatibilityReport {
    pub issues: Vec<Issue>,
    pub resolution: Resolution,
}

impl IncompatibilityReport {
    /// 0 without issues, 2 with issues, 3 when no assignment exists.
    pub fn exit_code(&self) -> i32 {
        match (&self.resolution, self.issues.is_empty()) {
            (Resolution::NoSolution, _) => 3,
            (_, false) => 2,
            (_, true) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DetectOptions {
    pub order: EntryOrder,
}

/// A required entry prepared for the search.
#[derive(Debug, Clone)]
pub struct SearchEntry {
    pub entry: RequiredEntry,
    pub installed: Option<VersionedComponent>,
    /// Latest-first, installed version (when admissible by constraint) first.
    pub candidates: Vec<Version>,
}

/// The search problem derived from the inputs: ordered entries and the
/// installed components that stay fixed.
#[derive(Debug, Clone)]
pub struct SearchProblem {
    pub entries: Vec<SearchEntry>,
    pub fixed: Vec<VersionedComponent>,
}

fn shares_edge(kg: &KnowledgeGraph, x: &str, y: &str) -> bool {
    kg.edges().any(|e| {
        let (a, b) = e.endpoints();
        (a.name == x && b.name == y) || (a.name == y && b.name == x)
    })
}

fn satisfies(v: &Version, c: &VersionConstraint) -> bool {
    version_satisfies(v, c).unwrap_or(false)
}

/// Orders the entries, promotes installed components that the graph relates
/// to a required one, and builds candidate lists.
pub fn build_problem(
    required: &RequiredStack,
    local: &EnvSnapshot,
    kg: &KnowledgeGraph,
    options: DetectOptions,
) -> SearchProblem {
    let mut entries: Vec<RequiredEntry> = required.entries.clone();
    if options.order == EntryOrder::Alpha {
        entries.sort_by(|a, b| a.component.cmp(&b.component));
    }
    let required_names: BTreeSet<&str> = entries.iter().map(|e| e.component.as_str()).collect();
    let mut promoted = Vec::new();
    let mut fixed = Vec::new();
    for c in &local.components {
        if required_names.contains(c.name.as_str()) {
            continue;
        }
        if c.version.is_some() && required_names.iter().any(|r| shares_edge(kg, &c.name, r)) {
            promoted.push(RequiredEntry {
                component: c.name.clone(),
                constraint: VersionConstraint::unbounded(),
                origin: EntryOrigin::Installed,
            });
        } else {
            fixed.push(c.versioned());
        }
    }
    // Snapshot components are sorted, so promoted entries are alphabetical.
    entries.extend(promoted);

    let entries = entries
        .into_iter()
        .map(|entry| {
            let installed = local.get(&entry.component).map(|c| c.versioned());
            let c = &entry.constraint;
            let mut graph: Vec<Version> = candidate_versions(kg, &entry.component)
                .into_iter()
                .filter(|v| !v.is_wildcard() && satisfies(v, c))
                .collect();
            graph.reverse();
            let mut candidates = Vec::new();
            match installed.as_ref().and_then(|i| i.version.clone()) {
                Some(v) if satisfies(&v, c) => candidates.push(v),
                _ => {
                    if let Some(p) = c.point() {
                        if !graph.iter().any(|g| g.cmp_numeric(p).is_eq()) {
                            candidates.push(p.clone());
                        }
                    }
                }
            }
            for g in graph {
                if !candidates.iter().any(|x| x.cmp_numeric(&g).is_eq()) {
                    candidates.push(g);
                }
            }
            if c.is_empty() {
                candidates.clear();
            }
            SearchEntry { entry, installed, candidates }
        })
        .collect();
    SearchProblem { entries, fixed }
}

fn with_version(name: &str, v: &Version) -> VersionedComponent {
    VersionedComponent::versioned(name, v.clone())
}

/// Incompatible edges between `x` and the given components, with their posts.
fn blockers<'a>(
    kg: &KnowledgeGraph,
    x: &VersionedComponent,
    others: impl Iterator<Item = &'a VersionedComponent>,
) -> Vec<(VersionedComponent, Vec<u64>)> {
    others
        .filter(|o| o.component != x.component)
        .filter_map(|o| {
            relation_between(kg, x, o)
                .filter(|r| r.relation == Relation::Incompatible)
                .map(|r| (o.clone(), r.evidence_posts))
        })
        .collect()
}

/// Posts of compatible edges between `x` and the given components.
fn support<'a>(
    kg: &KnowledgeGraph,
    x: &VersionedComponent,
    others: impl Iterator<Item = &'a VersionedComponent>,
) -> Vec<u64> {
    others
        .filter(|o| o.component != x.component)
        .filter_map(|o| relation_between(kg, x, o).filter(|r| r.relation == Relation::Compatible))
        .flat_map(|r| r.evidence_posts)
        .collect()
}

/// Chronological backtracking. Returns the assignment per entry (`None` for
/// entries without candidates) or `None` when no assignment exists, plus the
/// context (assigned components) seen at each entry's first visit.
fn search(problem: &SearchProblem, kg: &KnowledgeGraph) -> (Option<Vec<Option<Version>>>, Vec<Option<FirstVisit>>) {
    let n = problem.entries.len();
    let mut assigned: Vec<Option<Version>> = vec![None; n];
    let mut cursor = vec![0usize; n];
    let mut first: Vec<Option<FirstVisit>> = vec![None; n];

    let context = |assigned: &[Option<Version>], upto: usize| -> Vec<VersionedComponent> {
        let mut ctx = problem.fixed.clone();
        for (e, v) in problem.entries[..upto].iter().zip(assigned) {
            if let Some(v) = v {
                ctx.push(with_version(&e.entry.component, v));
            }
        }
        ctx
    };

    let mut i = 0;
    while i < n {
        let entry = &problem.entries[i];
        if entry.candidates.is_empty() {
            assigned[i] = None;
            i += 1;
            continue;
        }
        let ctx = context(&assigned, i);
        let name = &entry.entry.component;
        let pick = (cursor[i]..entry.candidates.len())
            .find(|&k| blockers(kg, &with_version(name, &entry.candidates[k]), ctx.iter()).is_empty());
        if first[i].is_none() {
            first[i] = Some(FirstVisit { context: ctx.clone(), pick: pick.map(|k| entry.candidates[k].clone()) });
        }
        match pick {
            Some(k) => {
                assigned[i] = Some(entry.candidates[k].clone());
                cursor[i] = k + 1;
                i += 1;
            }
            None => {
                cursor[i] = 0;
                assigned[i] = None;
                let back = (0..i).rev().find(|&j| !problem.entries[j].candidates.is_empty());
                match back {
                    Some(j) => {
                        for a in &mut assigned[j..i] {
                            *a = None;
                        }
                        i = j;
                    }
                    None => return (None, first),
                }
            }
        }
    }
    (Some(assigned), first)
}

#[derive(Debug, Clone)]
struct FirstVisit {
    context: Vec<VersionedComponent>,
    pick: Option<Version>,
}

/// Builds the issue for one entry given the components it must coexist with
/// and the version chosen for it.
fn issue_for(
    kg: &KnowledgeGraph,
    se: &SearchEntry,
    context: &[VersionedComponent],
    chosen: Option<&Version>,
) -> Option<Issue> {
    let installed = se.installed.as_ref()?;
    let iv = installed.version.as_ref()?;
    let c = &se.entry.constraint;
    let name = &se.entry.component;
    let suggestion = chosen.filter(|v| !v.cmp_numeric(iv).is_eq()).cloned();
    let support_posts = |s: &Option<Version>| -> Vec<u64> {
        s.as_ref().map(|v| support(kg, &with_version(name, v), context.iter())).unwrap_or_default()
    };
    if !satisfies(iv, c) {
        let mut posts = support_posts(&suggestion);
        posts.sort_unstable();
        posts.dedup();
        return Some(Issue {
            kind: IssueKind::ConstraintViolation,
            subject: se.entry.clone(),
            installed: Some(installed.clone()),
            conflicts_with: Vec::new(),
            suggested_version: suggestion,
            evidence_posts: posts,
        });
    }
    let blocks = blockers(kg, installed, context.iter());
    if blocks.is_empty() {
        return None;
    }
    let mut posts: Vec<u64> = blocks.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    posts.extend(support_posts(&suggestion));
    posts.sort_unstable();
    posts.dedup();
    Some(Issue {
        kind: IssueKind::GraphIncompatibility,
        subject: se.entry.clone(),
        installed: Some(installed.clone()),
        conflicts_with: blocks.into_iter().map(|(o, _)| o).collect(),
        suggested_version: suggestion,
        evidence_posts: posts,
    })
}

/// Runs detection on a prepared problem.
pub fn solve(problem: &SearchProblem, kg: &KnowledgeGraph) -> IncompatibilityReport {
    let mut issues = Vec::new();
    let mut unsatisfiable = false;
    for se in &problem.entries {
        if se.entry.constraint.is_empty() {
            unsatisfiable = true;
            issues.push(Issue {
                kind: IssueKind::Unsatisfiable,
                subject: se.entry.clone(),
                installed: se.installed.clone(),
                conflicts_with: Vec::new(),
                suggested_version: None,
                evidence_posts: Vec::new(),
            });
        }
    }
    let (result, first) = search(problem, kg);
    let resolution = match (&result, unsatisfiable) {
        (Some(assigned), false) => {
            for (i, se) in problem.entries.iter().enumerate() {
                // Everything else in the final assignment plus the fixed set.
                let mut ctx = problem.fixed.clone();
                for (j, (other, v)) in problem.entries.iter().zip(assigned).enumerate() {
                    if let (true, Some(v)) = (j != i, v) {
                        ctx.push(with_version(&other.entry.component, v));
                    }
                }
                if se.candidates.is_empty() {
                    issues.extend(issue_for(kg, se, &problem.fixed, None));
                } else {
                    issues.extend(issue_for(kg, se, &ctx, assigned[i].as_ref()));
                }
            }
            Resolution::Satisfiable {
                assignments: problem
                    .entries
                    .iter()
                    .zip(assigned)
                    .filter_map(|(se, v)| {
                        v.as_ref().map(|v| Assignment { component: se.entry.component.clone(), version: v.clone() })
                    })
                    .collect(),
            }
        }
        _ => {
            for (se, visit) in problem.entries.iter().zip(&first) {
                if se.entry.constraint.is_empty() {
                    continue;
                }
                match visit {
                    Some(v) => issues.extend(issue_for(kg, se, &v.context, v.pick.as_ref())),
                    None if se.candidates.is_empty() => issues.extend(issue_for(kg, se, &problem.fixed, None)),
                    None => {}
                }
            }
            Resolution::NoSolution
        }
    };
    IncompatibilityReport { issues, resolution }
}

pub fn detect(
    required: &RequiredStack,
    local: &EnvSnapshot,
    kg: &KnowledgeGraph,
    options: DetectOptions,
) -> IncompatibilityReport {
    solve(&build_problem(required, local, kg, options), kg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected text or json)")),
        }
    }
}

pub fn render_report(report: &IncompatibilityReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(report),
    }
}

fn origin_text(o: EntryOrigin) -> &'static str {
    match o {
        EntryOrigin::RequirementsFile => "requirements file",
        EntryOrigin::ImportScan => "imports",
        EntryOrigin::Installed => "installed stack",
    }
}

fn render_text(report: &IncompatibilityReport) -> String {
    let mut out = String::new();
    if report.issues.is_empty() && report.resolution != Resolution::NoSolution {
        out.push_str("No version incompatibilities detected.\n");
        return out;
    }
    for issue in &report.issues {
        let s = &issue.subject;
        let _ = writeln!(
            out,
            "[{}] {} (required {}, from {})",
            issue.kind.as_str(),
            s.component,
            s.constraint,
            origin_text(s.origin)
        );
        if let Some(i) = &issue.installed {
            let _ = writeln!(out, "  installed: {i}");
        }
        if !issue.conflicts_with.is_empty() {
            let list: Vec<String> = issue.conflicts_with.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "  incompatible with: {}", list.join(", "));
        }
        match &issue.suggested_version {
            Some(v) => {
                let _ = writeln!(out, "  suggested: {} {v}", s.component);
            }
            None => {
                let _ = writeln!(out, "  suggested: none found");
            }
        }
        if !issue.evidence_posts.is_empty() {
            let _ = writeln!(out, "  evidence:");
            for p in &issue.evidence_posts {
                let _ = writeln!(out, "    {POST_URL_PREFIX}{p}");
            }
        }
        out.push('\n');
    }
    match &report.resolution {
        Resolution::NoSolution => out.push_str("No compatible assignment of versions could be found.\n"),
        Resolution::Satisfiable { .. } => {
            let _ = writeln!(out, "{} issue(s) found.", report.issues.len());
        }
    }
    out
}
