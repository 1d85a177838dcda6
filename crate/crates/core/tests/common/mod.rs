//! Random instance generators and brute-force reference solvers shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decide_core::conllu::{DepToken, DepTree};
use decide_core::env::{EnvSnapshot, EnvironmentKind, LocalComponent};
use decide_core::kg::consolidate;
use decide_core::lexicon::Lexicon;
use decide_core::model::{ConsolidationStrategy, EdgeEvidence, KgEdge};
use decide_core::project::{EntryOrigin, RequiredEntry, RequiredStack};
use decide_core::qa::Evidence;
use decide_core::recognize::{ComponentMention, VersionMention};
use decide_core::{KnowledgeGraph, Relation, StackLayer, Version, VersionConstraint, VersionedComponent};

static LEXICON: std::sync::LazyLock<Lexicon> = std::sync::LazyLock::new(Lexicon::builtin);

/// The built-in lexicon, built once per test binary.
pub fn lexicon() -> &'static Lexicon {
    &LEXICON
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random dependency tree over `len` tokens: tokens join in a random
/// order, each attaching to a token already in the tree.
pub fn random_tree(rng: &mut ChaCha8Rng, len: usize) -> DepTree {
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![None; len];
    for k in 1..len {
        heads[order[k]] = Some(order[rng.random_range(0..k)]);
    }
    let tokens = heads
        .into_iter()
        .enumerate()
        .map(|(i, head)| DepToken { form: format!("w{i}"), head, deprel: "dep".into() })
        .collect();
    DepTree::new(tokens).expect("generated tree is valid")
}

/// Depth of each token, computed by walking to the root.
pub fn depths(tree: &DepTree) -> Vec<usize> {
    (0..tree.len())
        .map(|mut i| {
            let mut d = 0;
            while let Some(h) = tree.tokens()[i].head {
                i = h;
                d += 1;
            }
            d
        })
        .collect()
}

/// LCA depth by comparing ancestor chains.
pub fn naive_lca_depth(tree: &DepTree, a: usize, b: usize) -> usize {
    let chain = |mut i: usize| {
        let mut c = vec![i];
        while let Some(h) = tree.tokens()[i].head {
            i = h;
            c.push(h);
        }
        c
    };
    let ca = chain(a);
    let cb: BTreeSet<usize> = chain(b).into_iter().collect();
    let lca = *ca.iter().find(|x| cb.contains(x)).expect("common root");
    depths(tree)[lca]
}

pub struct MatchingInstance {
    pub tree: DepTree,
    pub components: Vec<ComponentMention>,
    pub versions: Vec<VersionMention>,
    /// Identity alignment: paragraph token i is tree token i.
    pub positions: Vec<Option<usize>>,
}

/// Single-token mentions at distinct random positions.
pub fn random_matching_instance(
    rng: &mut ChaCha8Rng,
    max_len: usize,
    max_comps: usize,
    max_vers: usize,
) -> MatchingInstance {
    let n = rng.random_range(1..=max_comps);
    let m = rng.random_range(1..=max_vers);
    let len = rng.random_range((n + m).max(2)..=max_len.max(n + m));
    let tree = random_tree(rng, len);
    let mut slots: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        slots.swap(i, rng.random_range(0..=i));
    }
    let mut comp_pos = slots[..n].to_vec();
    let mut ver_pos = slots[n..n + m].to_vec();
    comp_pos.sort_unstable();
    ver_pos.sort_unstable();
    let components = comp_pos
        .iter()
        .enumerate()
        .map(|(k, &p)| ComponentMention {
            component: format!("comp{k}"),
            layer: StackLayer::Library,
            token_span: p..p + 1,
            char_span: 0..0,
            surface: format!("comp{k}"),
        })
        .collect();
    let versions = ver_pos
        .iter()
        .enumerate()
        .map(|(k, &p)| VersionMention {
            version: Version::new(vec![1, k as u64], false).unwrap(),
            token_span: p..p + 1,
            char_span: 0..0,
            surface: format!("1.{k}"),
        })
        .collect();
    MatchingInstance { tree, components, versions, positions: (0..len).map(Some).collect() }
}

/// Every injective assignment of min(n, m) components to versions, as
/// `(component, version)` index lists.
pub fn full_assignments(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(
        i: usize,
        n: usize,
        m: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let k = n.min(m);
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        if i == n || n - i < k - cur.len() {
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, n, m, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
        go(i + 1, n, m, used, cur, out);
    }
    let mut out = Vec::new();
    go(0, n, m, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

/// The best total of `score` over all full-cardinality assignments.
pub fn brute_force_best(n: usize, m: usize, score: impl Fn(usize, usize) -> i64) -> i64 {
    full_assignments(n, m).iter().map(|a| a.iter().map(|&(i, j)| score(i, j)).sum::<i64>()).max().unwrap_or(0)
}

pub fn token_gap(c: &ComponentMention, v: &VersionMention) -> i64 {
    let (a, b) = (c.token_span.start as i64, v.token_span.start as i64);
    (a - b).abs()
}

/// A random detection problem over components c0..c3, versions 1..=4.
#[derive(Debug, Clone)]
pub struct DetectInstance {
    pub required: Vec<(String, VersionConstraint)>,
    pub installed: BTreeMap<String, u64>,
    /// Incompatible pairs of (component, version).
    pub incompatible: Vec<((String, u64), (String, u64))>,
    /// Versions the graph knows per component.
    pub known: BTreeMap<String, Vec<u64>>,
}

fn ver(n: u64) -> Version {
    Version::new(vec![n], false).unwrap()
}

pub fn random_detect_instance(rng: &mut ChaCha8Rng) -> DetectInstance {
    let k = rng.random_range(1..=4);
    let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    let mut known = BTreeMap::new();
    for n in &names {
        let count = rng.random_range(1..=4u64);
        known.insert(n.clone(), (1..=count).collect::<Vec<_>>());
    }
    // An extra installed component outside the requirements.
    let extra = rng.random_bool(0.5);
    if extra {
        known.insert("x".to_string(), vec![1, 2]);
    }
    let required = names
        .iter()
        .map(|n| {
            let c = match rng.random_range(0..4) {
                0 => VersionConstraint::exact(ver(rng.random_range(1..=5))),
                1 => VersionConstraint::new(
                    Some(decide_core::model::Bound::inclusive(ver(rng.random_range(1..=4)))),
                    None,
                )
                .unwrap(),
                _ => VersionConstraint::unbounded(),
            };
            (n.clone(), c)
        })
        .collect();
    let mut installed = BTreeMap::new();
    for n in known.keys() {
        if n == "x" || rng.random_bool(0.4) {
            installed.insert(n.clone(), rng.random_range(1..=4));
        }
    }
    let mut incompatible = Vec::new();
    let nodes: Vec<(String, u64)> = known.iter().flat_map(|(n, vs)| vs.iter().map(move |v| (n.clone(), *v))).collect();
    let p = rng.random_range(0.1..0.6);
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if a.0 != b.0 && rng.random_bool(p) {
                incompatible.push((a.clone(), b.clone()));
            }
        }
    }
    DetectInstance { required, installed, incompatible, known }
}

impl DetectInstance {
    /// The graph: every known version gets a compatible edge to an unrelated
    /// anchor node so it exists; the incompatible pairs become edges.
    pub fn graph(&self) -> KnowledgeGraph {
        let mut ev = Vec::new();
        let mut post = 1;
        for (n, vs) in &self.known {
            for v in vs {
                ev.push(Evidence {
                    post_id: post,
                    a: VersionedComponent::versioned(n.as_str(), ver(*v)),
                    b: VersionedComponent::versioned("anchor", ver(1)),
                    relation: Relation::Compatible,
                    loss: 0.1,
                    template: 1,
                });
                post += 1;
            }
        }
        for ((an, av), (bn, bv)) in &self.incompatible {
            ev.push(Evidence {
                post_id: post,
                a: VersionedComponent::versioned(an.as_str(), ver(*av)),
                b: VersionedComponent::versioned(bn.as_str(), ver(*bv)),
                relation: Relation::Incompatible,
                loss: 0.1,
                template: 1,
            });
            post += 1;
        }
        consolidate(&ev, &HashMap::new(), ConsolidationStrategy::MajorityVote, lexicon()).unwrap().0
    }

    pub fn stack(&self) -> RequiredStack {
        RequiredStack {
            entries: self
                .required
                .iter()
                .map(|(n, c)| RequiredEntry {
                    component: n.clone(),
                    constraint: c.clone(),
                    origin: EntryOrigin::RequirementsFile,
                })
                .collect(),
        }
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        let comps = self
            .installed
            .iter()
            .map(|(n, v)| LocalComponent { name: n.clone(), version: Some(ver(*v)), layer: StackLayer::Library })
            .collect();
        EnvSnapshot::new(EnvironmentKind::Native, comps).unwrap()
    }

    fn clash(&self, a: (&str, u64), b: (&str, u64)) -> bool {
        self.incompatible.iter().any(|((an, av), (bn, bv))| {
            (an == a.0 && *av == a.1 && bn == b.0 && *bv == b.1) || (an == b.0 && *av == b.1 && bn == a.0 && *bv == a.1)
        })
    }

    /// Exhaustive cross-product search. Required components, plus installed
    /// ones that share an edge with a required component, are free to take
    /// any candidate; other installed components stay fixed.
    pub fn exhaustive_satisfiable(&self) -> bool {
        if self.required.iter().any(|(_, c)| c.is_empty()) {
            return false;
        }
        let req: BTreeSet<&str> = self.required.iter().map(|(n, _)| n.as_str()).collect();
        let related = |x: &str| {
            self.incompatible
                .iter()
                .any(|((a, _), (b, _))| (a == x && req.contains(b.as_str())) || (b == x && req.contains(a.as_str())))
        };
        let mut free: Vec<(String, VersionConstraint)> = self.required.clone();
        let mut fixed: Vec<(String, u64)> = Vec::new();
        for (n, v) in &self.installed {
            if req.contains(n.as_str()) {
                continue;
            }
            if related(n) {
                free.push((n.clone(), VersionConstraint::unbounded()));
            } else {
                fixed.push((n.clone(), *v));
            }
        }
        let ok = |v: u64, c: &VersionConstraint| decide_core::version_satisfies(&ver(v), c).unwrap();
        let domains: Vec<(String, Vec<u64>)> = free
            .iter()
            .map(|(n, c)| {
                let mut d: BTreeSet<u64> =
                    self.known.get(n).into_iter().flatten().copied().filter(|&v| ok(v, c)).collect();
                match self.installed.get(n) {
                    Some(&v) if ok(v, c) => {
                        d.insert(v);
                    }
                    _ => {
                        if let Some(p) = c.point() {
                            d.insert(p.segments()[0]);
                        }
                    }
                }
                (n.clone(), d.into_iter().collect())
            })
            .filter(|(_, d): &(String, Vec<u64>)| !d.is_empty())
            .collect();

        let mut idx = vec![0usize; domains.len()];
        loop {
            let pick: Vec<(&str, u64)> = domains.iter().zip(&idx).map(|((n, d), &i)| (n.as_str(), d[i])).collect();
            let pairwise = pick.iter().enumerate().all(|(i, a)| pick[i + 1..].iter().all(|b| !self.clash(*a, *b)));
            let with_fixed = pick.iter().all(|a| fixed.iter().all(|(fnm, fv)| !self.clash(*a, (fnm, *fv))));
            if pairwise && with_fixed {
                return true;
            }
            // Next combination.
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return false;
                }
                idx[k] += 1;
                if idx[k] < domains[k].1.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Checks an assignment against the instance (no clashes among assigned
    /// versions or with fixed components).
    pub fn assignment_is_valid(&self, assigned: &[(String, u64)]) -> bool {
        let mut names: BTreeSet<&str> = assigned.iter().map(|(n, _)| n.as_str()).collect();
        names.extend(self.required.iter().map(|(n, _)| n.as_str()));
        let fixed: Vec<(&str, u64)> =
            self.installed.iter().filter(|(n, _)| !names.contains(n.as_str())).map(|(n, v)| (n.as_str(), *v)).collect();
        assigned.iter().enumerate().all(|(i, (an, av))| {
            assigned[i + 1..].iter().all(|(bn, bv)| !self.clash((an, *av), (bn, *bv)))
                && fixed.iter().all(|f| !self.clash((an, *av), *f))
        })
    }
}

/// A graph of 1,000 edges over 50 components with mixed layers, version
/// shapes and consolidation strategy.
pub fn random_graph(seed: u64) -> KnowledgeGraph {
    let mut r = rng(seed);
    let strategy = [
        ConsolidationStrategy::MajorityVote,
        ConsolidationStrategy::WeightedMajorityVote,
        ConsolidationStrategy::VoteByLoss,
    ][r.random_range(0..3)];
    let mut kg = KnowledgeGraph::new(strategy);
    let layers =
        [StackLayer::Library, StackLayer::Runtime, StackLayer::Driver, StackLayer::OsContainer, StackLayer::Hardware];
    let comps: Vec<(String, StackLayer)> =
        (0..50).map(|i| (format!("comp-{i:02}"), layers[r.random_range(0..layers.len())])).collect();
    let mut pairs = BTreeSet::new();
    while pairs.len() < 1000 {
        let node = |r: &mut ChaCha8Rng| {
            let (name, layer) = &comps[r.random_range(0..comps.len())];
            let version = if *layer == StackLayer::Hardware && r.random_bool(0.5) {
                None
            } else if r.random_bool(0.2) {
                Some(Version::new(vec![r.random_range(0..5), r.random_range(0..12)], true).unwrap())
            } else {
                let len = r.random_range(1..=3);
                Some(Version::new((0..len).map(|_| r.random_range(0..20)).collect(), false).unwrap())
            };
            (VersionedComponent::new(name.as_str(), version), *layer)
        };
        let (a, la) = node(&mut r);
        let (b, lb) = node(&mut r);
        if a.component == b.component || !pairs.insert((a.key().min(b.key()), a.key().max(b.key()))) {
            continue;
        }
        let ka = kg.add_node(&a, la).unwrap();
        let kb = kg.add_node(&b, lb).unwrap();
        let c = r.random_range(0..5u32);
        let i = r.random_range(0..5u32);
        if c == i {
            pairs.remove(&(ka.clone().min(kb.clone()), ka.max(kb)));
            continue;
        }
        let evidence = (0..c + i)
            .map(|k| EdgeEvidence {
                post_id: r.random_range(1..100_000),
                relation: if k < c { Relation::Compatible } else { Relation::Incompatible },
                loss: r.random_range(0..10_000) as f64 / 997.0,
            })
            .collect();
        let conf = match strategy {
            ConsolidationStrategy::VoteByLoss => KgEdge::vote_conf(c, i).signum(),
            _ => KgEdge::vote_conf(c, i),
        };
        kg.insert_edge(KgEdge::new(ka, kb, c, i, conf, evidence).unwrap()).unwrap();
    }
    kg
}

/// A valid snapshot of up to 20 lexicon components.
pub fn random_snapshot(seed: u64) -> EnvSnapshot {
    let mut r = rng(seed);
    let specs = lexicon().components();
    let mut names = BTreeSet::new();
    let mut components = Vec::new();
    for _ in 0..r.random_range(0..20) {
        let spec = &specs[r.random_range(0..specs.len())];
        if !names.insert(spec.canonical_name().to_string()) {
            continue;
        }
        let version = if spec.layer() == StackLayer::Hardware {
            None
        } else {
            let len = r.random_range(1..=3);
            Some(Version::new((0..len).map(|_| r.random_range(0..40)).collect(), false).unwrap())
        };
        components.push(LocalComponent { name: spec.canonical_name().to_string(), version, layer: spec.layer() });
    }
    let kind = if r.random_bool(0.5) { EnvironmentKind::Conda } else { EnvironmentKind::Native };
    EnvSnapshot::new(kind, components).unwrap()
}
