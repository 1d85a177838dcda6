//! One-to-one assignment of version mentions to component mentions.
//!
//! With a dependency parse, the weight of a (component, version) pair is the
//! depth of the lowest common ancestor of their head tokens, and the
//! assignment maximizes the total weight. Without a parse, the weight is the
//! negated token distance. Ties go to the smaller total token distance, then
//! to the assignment that gives earlier components earlier versions.

use crate::conllu::DepTree;
use crate::recognize::{ComponentMention, Recognition, Token, VersionMention};

/// Exhaustive search is used while both sides have at most this many mentions.
const EXHAUSTIVE_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Tree,
    TokenDistance,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Tree => "tree",
            MatchMode::TokenDistance => "token-distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchedPair {
    pub component: ComponentMention,
    pub version: Option<VersionMention>,
    /// LCA depth of the matched pair; `None` in token-distance mode or when
    /// no version was assigned.
    pub lca_depth: Option<usize>,
    pub mode: MatchMode,
}

/// A sentence parse together with the position of each paragraph token in
/// it (`None` for tokens of other sentences).
#[derive(Debug, Clone, Copy)]
pub struct AlignedTree<'a> {
    pub tree: &'a DepTree,
    pub positions: &'a [Option<usize>],
}

impl AlignedTree<'_> {
    /// The mention token closest to the root; leftmost on ties.
    fn head(&self, span: &std::ops::Range<usize>) -> Option<usize> {
        span.clone()
            .filter_map(|i| self.positions.get(i).copied().flatten())
            .min_by_key(|&t| (self.tree.depth(t).unwrap_or(usize::MAX), t))
    }
}

/// Where each paragraph token lands in a post's parse: `(sentence, token)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub positions: Vec<Option<(usize, usize)>>,
}

impl Alignment {
    /// Positions within one sentence, indexed by paragraph token.
    pub fn sentence_positions(&self, sentence: usize) -> Vec<Option<usize>> {
        self.positions.iter().map(|p| p.and_then(|(s, t)| (s == sentence).then_some(t))).collect()
    }

    pub fn sentences(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.positions.iter().flatten().map(|&(s, _)| s).collect();
        out.dedup();
        out
    }
}

/// Aligns the paragraphs of a post to its parsed sentences by comparing the
/// non-whitespace characters of both. Sentences must be in paragraph order
/// and may not straddle paragraphs. Returns one alignment (with sentence
/// indices into `trees`) per paragraph, or `None` when the texts disagree.
pub fn align_post(paragraphs: &[(&str, &[Token])], trees: &[DepTree]) -> Option<Vec<Alignment>> {
    let squash = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    let sentence_text: Vec<String> =
        trees.iter().map(|t| t.tokens().iter().map(|tok| squash(&tok.form)).collect()).collect();

    let mut out = Vec::with_capacity(paragraphs.len());
    let mut next = 0;
    for (text, tokens) in paragraphs {
        let para = squash(text);
        let first = next;
        let mut joined = String::new();
        while joined.len() < para.len() && next < trees.len() {
            joined.push_str(&sentence_text[next]);
            next += 1;
        }
        if joined != para {
            return None;
        }

        // Offset (in squashed bytes) where each tree token starts.
        let mut starts = Vec::new();
        let mut offset = 0;
        for (s, tree) in trees.iter().enumerate().take(next).skip(first) {
            for (t, tok) in tree.tokens().iter().enumerate() {
                starts.push((offset, s, t));
                offset += squash(&tok.form).len();
            }
        }
        let positions = tokens
            .iter()
            .map(|tok| {
                let at =
                    text[..tok.span.start].chars().filter(|c| !c.is_whitespace()).map(char::len_utf8).sum::<usize>();
                let idx = starts.partition_point(|&(o, _, _)| o <= at);
                idx.checked_sub(1).map(|i| (starts[i].1, starts[i].2))
            })
            .collect();
        out.push(Alignment { positions });
    }
    (next == trees.len()).then_some(out)
}

fn token_distance(c: &ComponentMention, v: &VersionMention) -> i64 {
    let (c, v) = (&c.token_span, &v.token_span);
    let d = if v.start >= c.end {
        v.start - c.end + 1
    } else if c.start >= v.end {
        c.start - v.end + 1
    } else {
        0
    };
    d as i64
}

/// Matches components with versions. Every component appears once in the
/// output, in input order; components left without a version carry `None`.
pub fn match_pairs(
    components: &[ComponentMention],
    versions: &[VersionMention],
    tree: Option<AlignedTree<'_>>,
) -> Vec<MatchedPair> {
    let n = components.len();
    let m = versions.len();
    let mut weight = vec![vec![0i64; m]; n];
    let mut dist = vec![vec![0i64; m]; n];
    let mut depth = vec![vec![None; m]; n];
    for (i, c) in components.iter().enumerate() {
        for (j, v) in versions.iter().enumerate() {
            dist[i][j] = token_distance(c, v);
            weight[i][j] = match tree {
                Some(t) => {
                    let d = match (t.head(&c.token_span), t.head(&v.token_span)) {
                        (Some(a), Some(b)) => t.tree.lca_depth(a, b).ok(),
                        _ => None,
                    };
                    depth[i][j] = d;
                    d.map_or(0, |d| d as i64)
                }
                None => -dist[i][j],
            };
        }
    }

    let assignment = if n <= EXHAUSTIVE_LIMIT && m <= EXHAUSTIVE_LIMIT {
        exhaustive(&weight, &dist, m)
    } else {
        hungarian_assign(&weight, &dist, n, m)
    };

    let mode = if tree.is_some() { MatchMode::Tree } else { MatchMode::TokenDistance };
    components
        .iter()
        .zip(&assignment)
        .enumerate()
        .map(|(i, (c, a))| MatchedPair {
            component: c.clone(),
            version: a.map(|j| versions[j].clone()),
            lca_depth: a.and_then(|j| depth[i][j]),
            mode,
        })
        .collect()
}

type Score = (i64, i64);

/// Enumerates every full-cardinality assignment; keeps the best by
/// (weight desc, distance asc, lexicographic assignment asc).
fn exhaustive(weight: &[Vec<i64>], dist: &[Vec<i64>], m: usize) -> Vec<Option<usize>> {
    let n = weight.len();
    let target = n.min(m);
    let mut best: Option<(Score, Vec<Option<usize>>)> = None;
    let mut cur = Vec::with_capacity(n);
    let mut used = vec![false; m];

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        assigned: usize,
        target: usize,
        weight: &[Vec<i64>],
        dist: &[Vec<i64>],
        cur: &mut Vec<Option<usize>>,
        used: &mut [bool],
        best: &mut Option<(Score, Vec<Option<usize>>)>,
    ) {
        let n = weight.len();
        if assigned + (n - i) < target {
            return;
        }
        if i == n {
            let (w, d) = cur.iter().enumerate().fold((0, 0), |(w, d), (i, a)| match a {
                Some(j) => (w + weight[i][*j], d + dist[i][*j]),
                None => (w, d),
            });
            let better = match best {
                None => true,
                Some(((bw, bd), ba)) => (w, -d) > (*bw, -*bd) || ((w, d) == (*bw, *bd) && lex_less(cur, ba)),
            };
            if better {
                *best = Some(((w, d), cur.clone()));
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                go(i + 1, assigned + 1, target, weight, dist, cur, used, best);
                cur.pop();
                used[j] = false;
            }
        }
        cur.push(None);
        go(i + 1, assigned, target, weight, dist, cur, used, best);
        cur.pop();
    }

    go(0, 0, target, weight, dist, &mut cur, &mut used, &mut best);
    best.map(|(_, a)| a).unwrap_or_else(|| vec![None; n])
}

fn lex_less(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    let key = |x: &Option<usize>| x.unwrap_or(usize::MAX);
    a.iter().map(key).lt(b.iter().map(key))
}

/// Hungarian assignment on a combined score that ranks weight first and
/// distance second.
fn hungarian_assign(weight: &[Vec<i64>], dist: &[Vec<i64>], n: usize, m: usize) -> Vec<Option<usize>> {
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    let max_total_dist: i64 = dist.iter().flatten().copied().max().unwrap_or(0) * n.min(m) as i64 + 1;
    let score = |i: usize, j: usize| weight[i][j] * max_total_dist - dist[i][j];
    let mut out = vec![None; n];
    if n <= m {
        let cost: Vec<Vec<i64>> = (0..n).map(|i| (0..m).map(|j| -score(i, j)).collect()).collect();
        for (i, j) in hungarian(&cost).into_iter().enumerate() {
            out[i] = Some(j);
        }
    } else {
        let cost: Vec<Vec<i64>> = (0..m).map(|j| (0..n).map(|i| -score(i, j)).collect()).collect();
        for (j, i) in hungarian(&cost).into_iter().enumerate() {
            out[i] = Some(j);
        }
    }
    out
}

/// Minimum-cost assignment of every row to a distinct column
/// (rows <= columns). Returns the column for each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row[p[j] - 1] = j - 1;
        }
    }
    row
}

/// Matches a whole paragraph: per sentence when an alignment is given,
/// otherwise over the paragraph as one unit by token distance. Output is in
/// component order.
pub fn match_paragraph(rec: &Recognition, parse: Option<(&[DepTree], &Alignment)>) -> Vec<MatchedPair> {
    let Some((trees, alignment)) = parse else {
        return match_pairs(&rec.components, &rec.versions, None);
    };
    let sentence_of = |span: &std::ops::Range<usize>| {
        span.clone().find_map(|i| alignment.positions.get(i).copied().flatten()).map(|(s, _)| s)
    };
    let mut out = Vec::new();
    for s in alignment.sentences() {
        let comps: Vec<_> = rec.components.iter().filter(|c| sentence_of(&c.token_span) == Some(s)).cloned().collect();
        let vers: Vec<_> = rec.versions.iter().filter(|v| sentence_of(&v.token_span) == Some(s)).cloned().collect();
        let positions = alignment.sentence_positions(s);
        let tree = AlignedTree { tree: &trees[s], positions: &positions };
        out.extend(match_pairs(&comps, &vers, Some(tree)));
    }
    out.sort_by_key(|p| p.component.token_span.start);
    out
}
