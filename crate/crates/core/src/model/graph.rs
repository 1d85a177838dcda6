use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Relation, StackLayer, VersionedComponent};

/// Node identity: canonical name plus normalized version text. `None` is the
/// versionless sentinel used by hardware nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub name: String,
    pub version: Option<String>,
}

impl NodeKey {
    pub fn of(vc: &VersionedComponent) -> Self {
        Self { name: vc.component.clone(), version: vc.version.as_ref().map(ToString::to_string) }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.version {
            Some(v) => write!(f, "{} {}", self.name, v),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsolidationStrategy {
    #[default]
    MajorityVote,
    WeightedMajorityVote,
    VoteByLoss,
}

impl ConsolidationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsolidationStrategy::MajorityVote => "majority-vote",
            ConsolidationStrategy::WeightedMajorityVote => "weighted-majority-vote",
            ConsolidationStrategy::VoteByLoss => "vote-by-loss",
        }
    }
}

impl FromStr for ConsolidationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" | "majority-vote" => Ok(Self::MajorityVote),
            "weighted" | "weighted-majority-vote" => Ok(Self::WeightedMajorityVote),
            "loss" | "vote-by-loss" => Ok(Self::VoteByLoss),
            _ => Err(format!("unknown consolidation strategy `{s}` (expected majority, weighted or loss)")),
        }
    }
}

impl fmt::Display for ConsolidationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvidence {
    pub post_id: u64,
    pub relation: Relation,
    pub loss: f64,
}

/// A weighted, undirected (in)compatibility relation.
#[derive(Debug, Clone, PartialEq)]
pub struct KgEdge {
    a: NodeKey,
    b: NodeKey,
    compatible_count: u32,
    incompatible_count: u32,
    conf: f64,
    evidence: Vec<EdgeEvidence>,
}

impl KgEdge {
    /// Endpoints are reordered so that `a < b`; evidence is sorted.
    pub fn new(
        a: NodeKey,
        b: NodeKey,
        compatible_count: u32,
        incompatible_count: u32,
        conf: f64,
        mut evidence: Vec<EdgeEvidence>,
    ) -> Result<Self, ModelError> {
        let bad = |reason: String| ModelError::BadEdge { a: a.to_string(), b: b.to_string(), reason };
        if a == b {
            return Err(bad("self loop".into()));
        }
        if compatible_count + incompatible_count == 0 {
            return Err(bad("no supporting evidence counts".into()));
        }
        if !conf.is_finite() || conf == 0.0 || conf.abs() > 1.0 {
            return Err(bad(format!("conf {conf} outside [-1, 0) U (0, 1]")));
        }
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        evidence.sort_by(|x, y| {
            x.post_id.cmp(&y.post_id).then(x.relation.cmp(&y.relation)).then(x.loss.total_cmp(&y.loss))
        });
        Ok(Self { a, b, compatible_count, incompatible_count, conf, evidence })
    }

    /// Confidence from vote counts: `(compatible - incompatible) / (compatible + incompatible)`.
    pub fn vote_conf(compatible: u32, incompatible: u32) -> f64 {
        (f64::from(compatible) - f64::from(incompatible)) / (f64::from(compatible) + f64::from(incompatible))
    }

    pub fn endpoints(&self) -> (&NodeKey, &NodeKey) {
        (&self.a, &self.b)
    }

    pub fn compatible_count(&self) -> u32 {
        self.compatible_count
    }

    pub fn incompatible_count(&self) -> u32 {
        self.incompatible_count
    }

    pub fn conf(&self) -> f64 {
        self.conf
    }

    pub fn relation(&self) -> Relation {
        if self.conf > 0.0 {
            Relation::Compatible
        } else {
            Relation::Incompatible
        }
    }

    pub fn evidence(&self) -> &[EdgeEvidence] {
        &self.evidence
    }

    /// Distinct post IDs, ascending.
    pub fn evidence_posts(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.evidence.iter().map(|e| e.post_id).collect();
        ids.dedup();
        ids
    }

    pub fn other(&self, key: &NodeKey) -> Option<&NodeKey> {
        if &self.a == key {
            Some(&self.b)
        } else if &self.b == key {
            Some(&self.a)
        } else {
            None
        }
    }
}

/// Nodes are versioned components; edges are keyed by their ordered endpoint pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeGraph {
    strategy: ConsolidationStrategy,
    layers: BTreeMap<String, StackLayer>,
    nodes: BTreeMap<NodeKey, VersionedComponent>,
    edges: BTreeMap<(NodeKey, NodeKey), KgEdge>,
}

impl KnowledgeGraph {
    pub fn new(strategy: ConsolidationStrategy) -> Self {
        Self { strategy, ..Self::default() }
    }

    pub fn strategy(&self) -> ConsolidationStrategy {
        self.strategy
    }

    /// Inserts a node (idempotent) and records the component's layer.
    pub fn add_node(&mut self, vc: &VersionedComponent, layer: StackLayer) -> Result<NodeKey, ModelError> {
        vc.check_layer(layer)?;
        if let Some(existing) = self.layers.get(&vc.component) {
            if *existing != layer {
                return Err(ModelError::BadComponent {
                    name: vc.component.clone(),
                    reason: format!("layer {layer} conflicts with recorded {existing}"),
                });
            }
        }
        self.layers.insert(vc.component.clone(), layer);
        let key = vc.key();
        self.nodes.entry(key.clone()).or_insert_with(|| vc.clone());
        Ok(key)
    }

    /// Inserts or replaces the edge between the two endpoints.
    pub fn insert_edge(&mut self, edge: KgEdge) -> Result<(), ModelError> {
        for end in [&edge.a, &edge.b] {
            if !self.nodes.contains_key(end) {
                return Err(ModelError::BadEdge {
                    a: edge.a.to_string(),
                    b: edge.b.to_string(),
                    reason: format!("endpoint {end} is not a node"),
                });
            }
        }
        self.edges.insert((edge.a.clone(), edge.b.clone()), edge);
        Ok(())
    }

    pub fn layer_of(&self, component: &str) -> Option<StackLayer> {
        self.layers.get(component).copied()
    }

    pub fn components(&self) -> impl Iterator<Item = (&str, StackLayer)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), *l))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeKey, &VersionedComponent)> {
        self.nodes.iter()
    }

    pub fn node(&self, key: &NodeKey) -> Option<&VersionedComponent> {
        self.nodes.get(key)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &KgEdge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All nodes of one component, in key order.
    pub fn nodes_of<'a>(&'a self, component: &'a str) -> impl Iterator<Item = &'a VersionedComponent> + 'a {
        let start = NodeKey { name: component.to_string(), version: None };
        self.nodes.range(start..).take_while(move |(k, _)| k.name == component).map(|(_, v)| v)
    }

    pub fn edge(&self, x: &NodeKey, y: &NodeKey) -> Option<&KgEdge> {
        let key = if x < y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) };
        self.edges.get(&key)
    }

    /// Checks every structural and weight invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (key, vc) in &self.nodes {
            let layer = self.layers.get(&vc.component).ok_or_else(|| ModelError::BadComponent {
                name: vc.component.clone(),
                reason: "node without a recorded layer".into(),
            })?;
            vc.check_layer(*layer)?;
            if key != &vc.key() {
                return Err(ModelError::BadComponent {
                    name: vc.component.clone(),
                    reason: format!("node key {key} does not match its component"),
                });
            }
        }
        for edge in self.edges.values() {
            let bad = |reason: String| ModelError::BadEdge { a: edge.a.to_string(), b: edge.b.to_string(), reason };
            if !self.nodes.contains_key(&edge.a) || !self.nodes.contains_key(&edge.b) {
                return Err(bad("dangling endpoint".into()));
            }
            if edge.conf == 0.0 || edge.conf.abs() > 1.0 || !edge.conf.is_finite() {
                return Err(bad(format!("conf {} out of range", edge.conf)));
            }
            match self.strategy {
                ConsolidationStrategy::MajorityVote => {
                    let expect = KgEdge::vote_conf(edge.compatible_count, edge.incompatible_count);
                    if expect != edge.conf {
                        return Err(bad(format!("conf {} but counts give {expect}", edge.conf)));
                    }
                }
                ConsolidationStrategy::VoteByLoss => {
                    if edge.conf.abs() != 1.0 {
                        return Err(bad(format!("vote-by-loss conf must be +-1, got {}", edge.conf)));
                    }
                }
                ConsolidationStrategy::WeightedMajorityVote => {}
            }
        }
        Ok(())
    }
}
