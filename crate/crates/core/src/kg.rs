//! Knowledge consolidation, persistence and queries.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::model::{
    version_unifies, ConsolidationStrategy, EdgeEvidence, KgEdge, KnowledgeGraph, ModelError, NodeKey, Relation,
    StackLayer, Version, VersionedComponent,
};
use crate::qa::Evidence;

pub const KG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("knowledge graph JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("knowledge graph schema version {found} is not supported (expected {expected})")]
    Schema { expected: u32, found: u64 },
    #[error("knowledge graph file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Bookkeeping for one consolidation run. Every input evidence item ends up
/// on an edge, as a duplicate, or in a neutral (zero-confidence) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConsolidationSummary {
    pub input: usize,
    pub duplicates: usize,
    pub neutral: usize,
    pub on_edges: usize,
    pub edges: usize,
    pub nodes: usize,
}

impl ConsolidationSummary {
    pub fn discarded(&self) -> usize {
        self.duplicates + self.neutral
    }
}

fn ordered_pair(e: &Evidence) -> (NodeKey, NodeKey) {
    let (a, b) = (e.a.key(), e.b.key());
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Weight of a post under weighted majority vote; posts with a score below
/// one still count once.
fn score_weight(post_scores: &HashMap<u64, i64>, post_id: u64) -> i64 {
    post_scores.get(&post_id).copied().unwrap_or(1).max(1)
}

/// Folds evidence into a knowledge graph. Evidence repeated for the same
/// (post, pair, template) is counted once. Pairs with zero confidence get no
/// edge, but their nodes are still created.
pub fn consolidate(
    evidence: &[Evidence],
    post_scores: &HashMap<u64, i64>,
    strategy: ConsolidationStrategy,
    lexicon: &Lexicon,
) -> Result<(KnowledgeGraph, ConsolidationSummary), ModelError> {
    let mut summary = ConsolidationSummary { input: evidence.len(), ..Default::default() };

    // Sort so the survivor among duplicates does not depend on input order.
    let mut sorted: Vec<&Evidence> = evidence.iter().collect();
    sorted.sort_by(|x, y| {
        (x.post_id, ordered_pair(x), x.template)
            .cmp(&(y.post_id, ordered_pair(y), y.template))
            .then(x.relation.cmp(&y.relation))
            .then(x.loss.total_cmp(&y.loss))
    });

    let mut kg = KnowledgeGraph::new(strategy);
    let mut groups: BTreeMap<(NodeKey, NodeKey), Vec<&Evidence>> = BTreeMap::new();
    let mut last_key = None;
    for e in sorted {
        let pair = ordered_pair(e);
        let key = (e.post_id, pair.clone(), e.template);
        if last_key.as_ref() == Some(&key) {
            summary.duplicates += 1;
            continue;
        }
        last_key = Some(key);
        for vc in [&e.a, &e.b] {
            let layer = lexicon.layer_of(&vc.component).unwrap_or(StackLayer::Library);
            kg.add_node(vc, layer)?;
        }
        groups.entry(pair).or_default().push(e);
    }

    for ((a, b), items) in groups {
        let compatible = items.iter().filter(|e| e.relation == Relation::Compatible).count() as u32;
        let incompatible = items.len() as u32 - compatible;
        let conf = match strategy {
            ConsolidationStrategy::MajorityVote => KgEdge::vote_conf(compatible, incompatible),
            ConsolidationStrategy::WeightedMajorityVote => {
                let (mut wc, mut wi) = (0i64, 0i64);
                for e in &items {
                    let w = score_weight(post_scores, e.post_id);
                    match e.relation {
                        Relation::Compatible => wc += w,
                        Relation::Incompatible => wi += w,
                    }
                }
                (wc - wi) as f64 / (wc + wi) as f64
            }
            ConsolidationStrategy::VoteByLoss => {
                let best = items
                    .iter()
                    .min_by(|x, y| {
                        x.loss.total_cmp(&y.loss).then(x.post_id.cmp(&y.post_id)).then(x.relation.cmp(&y.relation))
                    })
                    .expect("non-empty group");
                match best.relation {
                    Relation::Compatible => 1.0,
                    Relation::Incompatible => -1.0,
                }
            }
        };
        if conf == 0.0 {
            log::debug!("discarding neutral pair {a} -- {b} ({} evidence)", items.len());
            summary.neutral += items.len();
            continue;
        }
        let ev =
            items.iter().map(|e| EdgeEvidence { post_id: e.post_id, relation: e.relation, loss: e.loss }).collect();
        summary.on_edges += items.len();
        kg.insert_edge(KgEdge::new(a, b, compatible, incompatible, conf, ev)?)?;
    }
    summary.edges = kg.edge_count();
    summary.nodes = kg.node_count();
    Ok((kg, summary))
}

#[derive(Serialize, Deserialize)]
struct KgFile {
    schema_version: u32,
    consolidation: ConsolidationStrategy,
    components: Vec<ComponentRow>,
    nodes: Vec<NodeRow>,
    edges: Vec<EdgeRow>,
}

#[derive(Serialize, Deserialize)]
struct ComponentRow {
    name: String,
    layer: StackLayer,
}

#[derive(Serialize, Deserialize)]
struct NodeRow {
    id: String,
    name: String,
    version: Option<Version>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    a: String,
    b: String,
    relation: Relation,
    conf: f64,
    compatible_count: u32,
    incompatible_count: u32,
    evidence: Vec<EdgeEvidence>,
}

/// Stable node identifier used in the file: `name@version`, or the bare name
/// for versionless nodes.
pub fn node_id(key: &NodeKey) -> String {
    match &key.version {
        Some(v) => format!("{}@{v}", key.name),
        None => key.name.clone(),
    }
}

/// Canonical JSON text of a graph: sorted components, nodes and edges,
/// pretty-printed with a trailing newline.
pub fn to_json(kg: &KnowledgeGraph) -> String {
    let file = KgFile {
        schema_version: KG_SCHEMA_VERSION,
        consolidation: kg.strategy(),
        components: kg.components().map(|(name, layer)| ComponentRow { name: name.to_string(), layer }).collect(),
        nodes: kg
            .nodes()
            .map(|(k, vc)| NodeRow { id: node_id(k), name: vc.component.clone(), version: vc.version.clone() })
            .collect(),
        edges: kg
            .edges()
            .map(|e| {
                let (a, b) = e.endpoints();
                EdgeRow {
                    a: node_id(a),
                    b: node_id(b),
                    relation: e.relation(),
                    conf: e.conf(),
                    compatible_count: e.compatible_count(),
                    incompatible_count: e.incompatible_count(),
                    evidence: e.evidence().to_vec(),
                }
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("graph serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<KnowledgeGraph, KgError> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| KgError::Invalid("missing schema_version".into()))?;
    if found != u64::from(KG_SCHEMA_VERSION) {
        return Err(KgError::Schema { expected: KG_SCHEMA_VERSION, found });
    }
    let file: KgFile = serde_json::from_value(raw)?;
    let layers: HashMap<&str, StackLayer> = file.components.iter().map(|c| (c.name.as_str(), c.layer)).collect();
    let mut kg = KnowledgeGraph::new(file.consolidation);
    let mut ids = HashMap::new();
    for n in &file.nodes {
        let vc = VersionedComponent::new(n.name.clone(), n.version.clone());
        let layer = *layers
            .get(n.name.as_str())
            .ok_or_else(|| KgError::Invalid(format!("node `{}` has no component row", n.id)))?;
        let key = kg.add_node(&vc, layer)?;
        if node_id(&key) != n.id {
            return Err(KgError::Invalid(format!("node id `{}` does not match its content", n.id)));
        }
        if ids.insert(n.id.clone(), key).is_some() {
            return Err(KgError::Invalid(format!("duplicate node id `{}`", n.id)));
        }
    }
    for e in file.edges {
        let lookup = |id: &str| {
            ids.get(id).cloned().ok_or_else(|| KgError::Invalid(format!("edge endpoint `{id}` is not a node")))
        };
        let edge =
            KgEdge::new(lookup(&e.a)?, lookup(&e.b)?, e.compatible_count, e.incompatible_count, e.conf, e.evidence)?;
        if edge.relation() != e.relation {
            return Err(KgError::Invalid(format!("edge {} -- {}: relation disagrees with conf", e.a, e.b)));
        }
        kg.insert_edge(edge)?;
    }
    kg.validate()?;
    Ok(kg)
}

pub fn save_kg(kg: &KnowledgeGraph, path: &Path) -> Result<(), KgError> {
    std::fs::write(path, to_json(kg)).map_err(|source| KgError::Io { path: path.display().to_string(), source })
}

pub fn load_kg(path: &Path) -> Result<KnowledgeGraph, KgError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| KgError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}

/// An edge found for a queried pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationInfo {
    pub relation: Relation,
    pub conf: f64,
    pub evidence_posts: Vec<u64>,
    pub evidence_count: usize,
    /// The stored endpoints that matched the query, in query order.
    pub matched: (NodeKey, NodeKey),
}

/// Nodes of `vc`'s component that stand for it: the exact node, or wildcard
/// nodes (and numerically equal spellings) that unify with a concrete query.
/// Each comes with a flag telling whether it is the exact node.
fn matching_nodes(kg: &KnowledgeGraph, vc: &VersionedComponent) -> Vec<(NodeKey, bool)> {
    let exact = vc.key();
    kg.nodes_of(&vc.component)
        .filter_map(|n| {
            let key = n.key();
            if key == exact {
                return Some((key, true));
            }
            match (&vc.version, &n.version) {
                (Some(q), Some(p)) if !q.is_wildcard() && version_unifies(q, p) => Some((key, false)),
                _ => None,
            }
        })
        .collect()
}

/// Looks up the relation between two versioned components. An exact node
/// pair wins; otherwise concrete query versions unify with stored wildcard
/// nodes, preferring the most exact match, then the strongest confidence,
/// then the smallest node keys. `None` means unknown.
pub fn relation_between(kg: &KnowledgeGraph, a: &VersionedComponent, b: &VersionedComponent) -> Option<RelationInfo> {
    let info = |e: &KgEdge, x: &NodeKey, y: &NodeKey| RelationInfo {
        relation: e.relation(),
        conf: e.conf(),
        evidence_posts: e.evidence_posts(),
        evidence_count: e.evidence().len(),
        matched: (x.clone(), y.clone()),
    };
    let (ka, kb) = (a.key(), b.key());
    if let Some(e) = kg.edge(&ka, &kb) {
        return Some(info(e, &ka, &kb));
    }
    let mut best: Option<(usize, &KgEdge, NodeKey, NodeKey)> = None;
    for (x, ex) in matching_nodes(kg, a) {
        for (y, ey) in matching_nodes(kg, b) {
            let Some(e) = kg.edge(&x, &y) else { continue };
            let exactness = usize::from(ex) + usize::from(ey);
            let better = match &best {
                None => true,
                Some((bx, be, bka, bkb)) => {
                    exactness
                        .cmp(bx)
                        .then(e.conf().abs().total_cmp(&be.conf().abs()))
                        .then_with(|| (bka, bkb).cmp(&(&x, &y)))
                        == Ordering::Greater
                }
            };
            if better {
                best = Some((exactness, e, x.clone(), y.clone()));
            }
        }
    }
    best.map(|(_, e, x, y)| info(e, &x, &y))
}

/// Distinct versions stored for a component, ascending; wildcards sort after
/// the concrete versions sharing their prefix.
pub fn candidate_versions(kg: &KnowledgeGraph, component: &str) -> Vec<Version> {
    let mut out: Vec<Version> = kg.nodes_of(component).filter_map(|n| n.version.clone()).collect();
    out.sort_by(Version::cmp_candidate);
    out.dedup();
    out
}

/// Edges touching any node of `component`.
pub fn edges_of<'a>(kg: &'a KnowledgeGraph, component: &'a str) -> impl Iterator<Item = &'a KgEdge> + 'a {
    kg.edges().filter(move |e| {
        let (a, b) = e.endpoints();
        a.name == component || b.name == component
    })
}
