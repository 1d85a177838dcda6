//! Question-answering based relation inference.
//!
//! For every pair of versioned components in a qualifying paragraph, a set of
//! yes/no question templates is instantiated and put to a compatibility
//! oracle together with the paragraph. Each answer maps to a relation through
//! the template polarity, and the answer with the lowest loss decides.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::MatchedPair;
use crate::model::{Relation, StackLayer, VersionedComponent};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("no scripted answer for post {post_id}, {a} / {b}, Q{template}")]
    Unscripted { post_id: u64, a: String, b: String, template: u8 },
    #[error("oracle fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error("reading oracle fixture {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    /// Lowercases the reply and requires it to start with `yes` or `no`.
    pub fn parse(text: &str) -> Result<Answer, OracleError> {
        let t = text.trim().to_lowercase();
        if t.starts_with("yes") {
            Ok(Answer::Yes)
        } else if t.starts_with("no") {
            Ok(Answer::No)
        } else {
            Err(OracleError::Protocol(format!("answer `{text}` is neither yes nor no")))
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuestionTemplate {
    pub id: u8,
    pub polarity: Polarity,
    before: &'static str,
    middle: &'static str,
}

impl QuestionTemplate {
    pub fn instantiate(&self, a: &VersionedComponent, b: &VersionedComponent) -> String {
        format!("{}{a}{}{b}?", self.before, self.middle)
    }

    /// Relation implied by an answer to this template.
    pub fn relation_for(&self, answer: Answer) -> Relation {
        match (self.polarity, answer) {
            (Polarity::Positive, Answer::Yes) | (Polarity::Negative, Answer::No) => Relation::Compatible,
            (Polarity::Positive, Answer::No) | (Polarity::Negative, Answer::Yes) => Relation::Incompatible,
        }
    }

    /// The answer that expresses `relation` under this template.
    pub fn answer_for(&self, relation: Relation) -> Answer {
        if self.relation_for(Answer::Yes) == relation {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

const fn tpl(id: u8, polarity: Polarity, before: &'static str, middle: &'static str) -> QuestionTemplate {
    QuestionTemplate { id, polarity, before, middle }
}

pub const TEMPLATES: [QuestionTemplate; 8] = [
    tpl(1, Polarity::Positive, "Is ", " compatible with "),
    tpl(2, Polarity::Negative, "Is ", " not compatible with "),
    tpl(3, Polarity::Positive, "Does ", " support "),
    tpl(4, Polarity::Negative, "Does ", " not support "),
    tpl(5, Polarity::Positive, "Does ", " require "),
    tpl(6, Polarity::Negative, "Does ", " not require "),
    tpl(7, Polarity::Positive, "Does ", " work with "),
    tpl(8, Polarity::Negative, "Does ", " not work with "),
];

pub fn template(id: u8) -> Option<&'static QuestionTemplate> {
    TEMPLATES.iter().find(|t| t.id == id)
}

/// A non-empty set of templates, kept in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateStrategy {
    ids: Vec<u8>,
}

impl TemplateStrategy {
    pub fn new(ids: impl IntoIterator<Item = u8>) -> Result<Self, String> {
        let ids: BTreeSet<u8> = ids.into_iter().collect();
        if ids.is_empty() {
            return Err("empty template set".into());
        }
        if let Some(bad) = ids.iter().find(|&&i| template(i).is_none()) {
            return Err(format!("no template Q{bad}"));
        }
        Ok(Self { ids: ids.into_iter().collect() })
    }

    pub fn templates(&self) -> impl Iterator<Item = &'static QuestionTemplate> + '_ {
        self.ids.iter().map(|&i| template(i).expect("validated"))
    }
}

impl Default for TemplateStrategy {
    fn default() -> Self {
        Self { ids: vec![1, 2] }
    }
}

impl FromStr for TemplateStrategy {
    type Err = String;

    /// Accepts `Q1`, `Q1+Q2`, `positive`, `negative` or `all`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let by_polarity = |p: Polarity| TEMPLATES.iter().filter(move |t| t.polarity == p).map(|t| t.id);
        match s.trim().to_lowercase().as_str() {
            "all" => Self::new(1..=8),
            "positive" => Self::new(by_polarity(Polarity::Positive)),
            "negative" => Self::new(by_polarity(Polarity::Negative)),
            other => {
                let ids = other
                    .split('+')
                    .map(|part| {
                        part.trim()
                            .strip_prefix('q')
                            .and_then(|n| n.parse::<u8>().ok())
                            .ok_or_else(|| format!("bad template selector `{part}`"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Self::new(ids)
            }
        }
    }
}

impl fmt::Display for TemplateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ids.iter().map(|i| format!("Q{i}")).collect();
        f.write_str(&parts.join("+"))
    }
}

#[derive(Debug, Clone)]
pub struct OracleRequest<'a> {
    pub post_id: u64,
    pub a: &'a VersionedComponent,
    pub b: &'a VersionedComponent,
    pub template: u8,
    pub context: &'a str,
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResponse {
    pub answer: Answer,
    pub loss: f64,
}

impl OracleResponse {
    fn checked(answer: Answer, loss: f64) -> Result<Self, OracleError> {
        if !loss.is_finite() || loss < 0.0 {
            return Err(OracleError::Protocol(format!("loss {loss} is not a finite non-negative number")));
        }
        Ok(Self { answer, loss })
    }
}

pub trait CompatibilityOracle: Send + Sync {
    fn ask(&self, request: &OracleRequest<'_>) -> Result<OracleResponse, OracleError>;
}

/// One relation prediction for a component pair, drawn from one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub post_id: u64,
    pub a: VersionedComponent,
    pub b: VersionedComponent,
    pub relation: Relation,
    pub loss: f64,
    pub template: u8,
}

/// Asks every template of `strategy` once and keeps the lowest-loss answer
/// (ties go to the lower template id). Returns `None` when `max_loss` is set
/// and the winning loss exceeds it.
pub fn infer_relation(
    post_id: u64,
    context: &str,
    a: &VersionedComponent,
    b: &VersionedComponent,
    oracle: &dyn CompatibilityOracle,
    strategy: &TemplateStrategy,
    max_loss: Option<f64>,
) -> Result<Option<Evidence>, OracleError> {
    let mut best: Option<(f64, &QuestionTemplate, Answer)> = None;
    for t in strategy.templates() {
        let request = OracleRequest { post_id, a, b, template: t.id, context, question: t.instantiate(a, b) };
        let r = oracle.ask(&request)?;
        if best.is_none_or(|(loss, _, _)| r.loss < loss) {
            best = Some((r.loss, t, r.answer));
        }
    }
    let (loss, t, answer) = best.expect("strategy is non-empty");
    if max_loss.is_some_and(|max| loss > max) {
        return Ok(None);
    }
    Ok(Some(Evidence { post_id, a: a.clone(), b: b.clone(), relation: t.relation_for(answer), loss, template: t.id }))
}

/// The usable versioned components of a paragraph (matched with a version,
/// or hardware), deduplicated, paired in canonical order. Pairs of the same
/// component are skipped.
pub fn enumerate_pairs(matches: &[MatchedPair]) -> Vec<(VersionedComponent, VersionedComponent)> {
    let usable: BTreeMap<_, _> = matches
        .iter()
        .filter(|m| m.version.is_some() || m.component.layer == StackLayer::Hardware)
        .map(|m| {
            let vc =
                VersionedComponent::new(m.component.component.clone(), m.version.as_ref().map(|v| v.version.clone()));
            (vc.key(), vc)
        })
        .collect();
    let items: Vec<_> = usable.into_values().collect();
    let mut pairs = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if items[i].component != items[j].component {
                pairs.push((items[i].clone(), items[j].clone()));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ScriptKey {
    post_id: Option<u64>,
    a: String,
    b: String,
    template: Option<u8>,
}

#[derive(Debug, Clone, Copy)]
enum Scripted {
    Answer(Answer),
    Relation(Relation),
}

/// A deterministic oracle driven by a tab-separated script:
///
/// ```text
/// post_id  component_a  component_b  template  answer  loss
/// 101      python 3.7   tensorflow 1.5.0   Q1  yes  0.12
/// 102      cuda 10.1    tensorflow 1.13    *   incompatible  0.2
/// ```
///
/// `template` is `Q1`..`Q8` (the answer column holds yes/no) or `*` (the
/// answer column holds a relation and each template gets the answer that
/// expresses it). `post_id` may also be `*`. Component order in a row does
/// not matter. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default)]
pub struct FixtureOracle {
    script: HashMap<ScriptKey, (Scripted, f64)>,
}

impl FixtureOracle {
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let mut script = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |message: String| OracleError::Fixture { line: n + 1, message };
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 6 {
                return Err(bad(format!("expected 6 tab-separated columns, found {}", cols.len())));
            }
            let post_id = match cols[0] {
                "*" => None,
                p => Some(p.parse().map_err(|_| bad(format!("bad post id `{p}`")))?),
            };
            let a: VersionedComponent = cols[1].parse().map_err(|e| bad(format!("{e}")))?;
            let b: VersionedComponent = cols[2].parse().map_err(|e| bad(format!("{e}")))?;
            let (template, scripted) = match cols[3] {
                "*" => {
                    let r: Relation = cols[4].parse().map_err(|e| bad(format!("{e}")))?;
                    (None, Scripted::Relation(r))
                }
                t => {
                    let id = t
                        .strip_prefix(['Q', 'q'])
                        .and_then(|n| n.parse::<u8>().ok())
                        .filter(|&i| template(i).is_some())
                        .ok_or_else(|| bad(format!("bad template `{t}`")))?;
                    (Some(id), Scripted::Answer(Answer::parse(cols[4]).map_err(|e| bad(e.to_string()))?))
                }
            };
            let loss: f64 = cols[5].parse().map_err(|_| bad(format!("bad loss `{}`", cols[5])))?;
            if !loss.is_finite() || loss < 0.0 {
                return Err(bad(format!("loss {loss} must be finite and non-negative")));
            }
            let key = Self::key(post_id, &a, &b, template);
            script.insert(key, (scripted, loss));
        }
        Ok(Self { script })
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| OracleError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    fn key(post_id: Option<u64>, a: &VersionedComponent, b: &VersionedComponent, template: Option<u8>) -> ScriptKey {
        let (a, b) = if a.canonical_cmp(b).is_le() { (a, b) } else { (b, a) };
        ScriptKey { post_id, a: a.to_string(), b: b.to_string(), template }
    }
}

impl CompatibilityOracle for FixtureOracle {
    fn ask(&self, req: &OracleRequest<'_>) -> Result<OracleResponse, OracleError> {
        let candidates = [
            (Some(req.post_id), Some(req.template)),
            (Some(req.post_id), None),
            (None, Some(req.template)),
            (None, None),
        ];
        let hit = candidates.iter().find_map(|&(p, t)| self.script.get(&Self::key(p, req.a, req.b, t)));
        let Some(&(scripted, loss)) = hit else {
            return Err(OracleError::Unscripted {
                post_id: req.post_id,
                a: req.a.to_string(),
                b: req.b.to_string(),
                template: req.template,
            });
        };
        let answer = match scripted {
            Scripted::Answer(a) => a,
            Scripted::Relation(r) => template(req.template).expect("valid template").answer_for(r),
        };
        OracleResponse::checked(answer, loss)
    }
}

#[derive(Serialize)]
struct AnswerRequestBody<'a> {
    context: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct AnswerReplyBody {
    answer: String,
    loss: f64,
}

#[derive(Deserialize)]
struct ErrorReplyBody {
    error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

/// Client for a QA service speaking `POST /v1/answer` and `GET /v1/health`.
pub struct HttpOracle {
    base: String,
    agent: ureq::Agent,
}

impl HttpOracle {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().new_agent();
        Self { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn health(&self) -> Result<Health, OracleError> {
        let mut resp = self
            .agent
            .get(&format!("{}/v1/health", self.base))
            .call()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(OracleError::Rejected { status, message: "health check failed".into() });
        }
        resp.body_mut().read_json::<Health>().map_err(|e| OracleError::Protocol(e.to_string()))
    }
}

impl CompatibilityOracle for HttpOracle {
    fn ask(&self, req: &OracleRequest<'_>) -> Result<OracleResponse, OracleError> {
        let body = AnswerRequestBody { context: req.context, question: &req.question };
        let mut resp = self
            .agent
            .post(&format!("{}/v1/answer", self.base))
            .send_json(&body)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200 => {
                let reply: AnswerReplyBody =
                    resp.body_mut().read_json().map_err(|e| OracleError::Protocol(format!("bad answer body: {e}")))?;
                OracleResponse::checked(Answer::parse(&reply.answer)?, reply.loss)
            }
            400..=499 => {
                let message = resp
                    .body_mut()
                    .read_json::<ErrorReplyBody>()
                    .map(|e| e.error)
                    .unwrap_or_else(|_| "no error body".into());
                Err(OracleError::Rejected { status, message })
            }
            _ => Err(OracleError::Transport(format!("unexpected HTTP status {status}"))),
        }
    }
}
