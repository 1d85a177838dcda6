//! The extraction pipeline: posts in, consolidated knowledge graph out.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::PathBuf;

use rayon::prelude::*;
use regex::Regex;
use thiserror::Error;

use crate::conllu::{parse_conllu, DepTree};
use crate::ingest::{extract_paragraphs, filter_relevant, IngestError, PostStream, PostType, RawPost};
use crate::kg::{consolidate, ConsolidationSummary};
use crate::lexicon::Lexicon;
use crate::matching::{align_post, match_paragraph, Alignment};
use crate::model::{ConsolidationStrategy, KnowledgeGraph, ModelError};
use crate::qa::{enumerate_pairs, infer_relation, CompatibilityOracle, Evidence, TemplateStrategy};
use crate::recognize::{paragraph_qualifies, recognize, Recognition};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("building the knowledge graph: {0}")]
    Model(#[from] ModelError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub dl_tags: BTreeSet<String>,
    pub patterns: Vec<Regex>,
    pub strategy: TemplateStrategy,
    pub max_loss: Option<f64>,
    pub consolidation: ConsolidationStrategy,
    /// Directory of `<post_id>.conllu` dependency parses. Posts without a
    /// parse are matched by token distance.
    pub parses_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl ExtractConfig {
    pub fn new(lexicon: &Lexicon) -> Self {
        ExtractConfig {
            dl_tags: crate::ingest::builtin_tags(),
            patterns: crate::ingest::builtin_patterns(lexicon),
            strategy: TemplateStrategy::default(),
            max_loss: None,
            consolidation: ConsolidationStrategy::MajorityVote,
            parses_dir: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub rows: usize,
    pub malformed: usize,
    pub orphans: usize,
    pub answers: usize,
    pub relevant: usize,
    pub paragraphs: usize,
    pub qualifying: usize,
    pub tree_posts: usize,
    pub fallback_posts: usize,
    pub pairs: usize,
    pub oracle_errors: usize,
    pub above_max_loss: usize,
    pub consolidation: ConsolidationSummary,
}

impl ExtractStats {
    pub fn render(&self) -> String {
        let c = &self.consolidation;
        format!(
            "rows read: {}\nmalformed rows: {}\norphan answers: {}\nanswer posts: {}\nrelevant posts: {}\n\
             paragraphs: {}\nqualifying paragraphs: {}\nposts matched by tree: {}\nposts matched by token distance: {}\n\
             pairs asked: {}\noracle errors: {}\nanswers above max loss: {}\nevidence: {}\nduplicates: {}\n\
             neutral pairs: {}\nedges: {}\nnodes: {}\n",
            self.rows,
            self.malformed,
            self.orphans,
            self.answers,
            self.relevant,
            self.paragraphs,
            self.qualifying,
            self.tree_posts,
            self.fallback_posts,
            self.pairs,
            self.oracle_errors,
            self.above_max_loss,
            c.input,
            c.duplicates,
            c.neutral,
            c.edges,
            c.nodes,
        )
    }
}

pub struct ExtractOutput {
    pub kg: KnowledgeGraph,
    pub evidence: Vec<Evidence>,
    pub stats: ExtractStats,
}

#[derive(Default)]
struct PostOutcome {
    evidence: Vec<Evidence>,
    paragraphs: usize,
    qualifying: usize,
    used_tree: bool,
    pairs: usize,
    oracle_errors: usize,
    above_max_loss: usize,
}

fn load_parse(config: &ExtractConfig, post_id: u64) -> Option<Vec<DepTree>> {
    let dir = config.parses_dir.as_ref()?;
    let path = dir.join(format!("{post_id}.conllu"));
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            return None;
        }
    };
    match parse_conllu(&text) {
        Ok(trees) => Some(trees),
        Err(e) => {
            log::warn!("{}: {e}; using token distance", path.display());
            None
        }
    }
}

fn process_post(
    post: &RawPost,
    lexicon: &Lexicon,
    oracle: &dyn CompatibilityOracle,
    config: &ExtractConfig,
) -> PostOutcome {
    let paragraphs = extract_paragraphs(post);
    let recs: Vec<Recognition> = paragraphs.iter().map(|p| recognize(&p.text, lexicon)).collect();
    let trees = load_parse(config, post.post_id);
    let alignments: Option<Vec<Alignment>> = trees.as_ref().and_then(|trees| {
        let input: Vec<(&str, &[crate::recognize::Token])> =
            paragraphs.iter().zip(&recs).map(|(p, r)| (p.text.as_str(), r.tokens.as_slice())).collect();
        let aligned = align_post(&input, trees);
        if aligned.is_none() {
            log::warn!("post {}: parse does not match the post text; using token distance", post.post_id);
        }
        aligned
    });

    let mut out = PostOutcome { paragraphs: paragraphs.len(), used_tree: alignments.is_some(), ..Default::default() };
    for (i, (para, rec)) in paragraphs.iter().zip(&recs).enumerate() {
        let parse = match (&trees, &alignments) {
            (Some(t), Some(a)) => Some((t.as_slice(), &a[i])),
            _ => None,
        };
        let matches = match_paragraph(rec, parse);
        if !paragraph_qualifies(&matches) {
            continue;
        }
        out.qualifying += 1;
        for (a, b) in enumerate_pairs(&matches) {
            out.pairs += 1;
            match infer_relation(post.post_id, &para.text, &a, &b, oracle, &config.strategy, config.max_loss) {
                Ok(Some(ev)) => out.evidence.push(ev),
                Ok(None) => out.above_max_loss += 1,
                Err(e) => {
                    log::warn!("post {}: skipping pair ({a}, {b}): {e}", post.post_id);
                    out.oracle_errors += 1;
                }
            }
        }
    }
    out
}

/// Runs the whole extraction over a post stream.
pub fn extract<R: BufRead>(
    mut posts: PostStream<R>,
    lexicon: &Lexicon,
    oracle: &dyn CompatibilityOracle,
    config: &ExtractConfig,
) -> Result<ExtractOutput, PipelineError> {
    let mut stats = ExtractStats::default();
    let mut relevant = Vec::new();
    for post in posts.by_ref() {
        let post = post?;
        if post.post_type != PostType::Answer {
            continue;
        }
        stats.answers += 1;
        if filter_relevant(&post, &config.dl_tags, &config.patterns) {
            relevant.push(post);
        }
    }
    let ingest = posts.stats();
    stats.rows = ingest.rows;
    stats.malformed = ingest.malformed;
    stats.orphans = ingest.orphans;
    stats.relevant = relevant.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outcomes: Vec<PostOutcome> =
        pool.install(|| relevant.par_iter().map(|p| process_post(p, lexicon, oracle, config)).collect());

    let mut evidence = Vec::new();
    for o in outcomes {
        stats.paragraphs += o.paragraphs;
        stats.qualifying += o.qualifying;
        if o.used_tree {
            stats.tree_posts += 1;
        } else {
            stats.fallback_posts += 1;
        }
        stats.pairs += o.pairs;
        stats.oracle_errors += o.oracle_errors;
        stats.above_max_loss += o.above_max_loss;
        evidence.extend(o.evidence);
    }

    let scores: HashMap<u64, i64> = relevant.iter().map(|p| (p.post_id, p.score)).collect();
    let (kg, summary) = consolidate(&evidence, &scores, config.consolidation, lexicon)?;
    stats.consolidation = summary;
    Ok(ExtractOutput { kg, evidence, stats })
}
