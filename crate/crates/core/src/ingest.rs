//! Reading Q&A dumps, keeping relevant answer posts, and splitting post
//! bodies into plain-text paragraphs.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use regex::{Regex, RegexBuilder};
use serde::Deserialize;
use thiserror::Error;

use crate::lexicon::Lexicon;

const BUILTIN_TAGS: &str = include_str!("../data/dl_tags.txt");
const BUILTIN_PATTERNS: &str = include_str!("../data/patterns.txt");

/// Placeholder in pattern files, replaced by an alternation of lexicon names.
pub const COMPONENT_PLACEHOLDER: &str = "COMPONENT_NAME";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("reading posts: {0}")]
    Read(#[from] std::io::Error),
    #[error("XML error at byte {position}: {message}")]
    Xml { position: u64, message: String },
    #[error("unknown post format `{0}` (expected xml or jsonl)")]
    UnknownFormat(String),
    #[error("pattern line {line}: {source}")]
    Pattern { line: usize, source: regex::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostFormat {
    Xml,
    Jsonl,
}

impl FromStr for PostFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Ok(PostFormat::Xml),
            "jsonl" => Ok(PostFormat::Jsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostType {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub post_id: u64,
    pub post_type: PostType,
    pub parent_id: Option<u64>,
    pub score: i64,
    pub accepted: bool,
    pub body_html: String,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub post_id: u64,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows: usize,
    pub malformed: usize,
    /// Answers whose question never appeared and that carry no tags.
    pub orphans: usize,
}

/// One row as read, before answers are joined with their questions.
struct Row {
    post: RawPost,
    accepted_answer: Option<u64>,
}

struct QuestionInfo {
    tags: BTreeSet<String>,
    accepted_answer: Option<u64>,
}

/// Splits `<a><b>` or `|a|b|` tag strings.
fn parse_tags(text: &str) -> BTreeSet<String> {
    text.split(['<', '>', '|']).map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect()
}

enum Source<R> {
    Xml(Reader<R>, Vec<u8>),
    Jsonl(R, String),
}

/// Streams posts in input order. Answers get their question's tags and
/// acceptance; an answer seen before its question is held back (together with
/// everything after it) until the question arrives or the input ends.
pub struct PostStream<R: BufRead> {
    source: Source<R>,
    questions: HashMap<u64, QuestionInfo>,
    queue: VecDeque<Row>,
    done: bool,
    stats: IngestStats,
}

impl<R: BufRead> PostStream<R> {
    pub fn new(reader: R, format: PostFormat) -> Self {
        let source = match format {
            PostFormat::Xml => Source::Xml(Reader::from_reader(reader), Vec::new()),
            PostFormat::Jsonl => Source::Jsonl(reader, String::new()),
        };
        Self { source, questions: HashMap::new(), queue: VecDeque::new(), done: false, stats: IngestStats::default() }
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Reads the next well-formed row; `None` at end of input.
    fn read_row(&mut self) -> Result<Option<Row>, IngestError> {
        loop {
            let parsed = match &mut self.source {
                Source::Xml(reader, buf) => {
                    buf.clear();
                    let event = reader
                        .read_event_into(buf)
                        .map_err(|e| IngestError::Xml { position: reader.buffer_position(), message: e.to_string() })?;
                    match event {
                        Event::Eof => return Ok(None),
                        Event::Empty(e) | Event::Start(e) if e.local_name().as_ref() == "row" => xml_row(&e),
                        _ => continue,
                    }
                }
                Source::Jsonl(reader, line) => {
                    line.clear();
                    if reader.read_line(line)? == 0 {
                        return Ok(None);
                    }
                    if line.trim().is_empty() {
                        continue;
                    }
                    json_row(line)
                }
            };
            self.stats.rows += 1;
            match parsed {
                Some(row) => return Ok(Some(row)),
                None => {
                    self.stats.malformed += 1;
                    log::warn!("skipping malformed post row {}", self.stats.rows);
                }
            }
        }
    }

    fn resolvable(questions: &HashMap<u64, QuestionInfo>, done: bool, row: &Row) -> bool {
        match row.post.post_type {
            PostType::Question => true,
            PostType::Answer => done || row.post.parent_id.is_some_and(|p| questions.contains_key(&p)),
        }
    }

    /// Joins an answer with its question; `None` drops an unresolvable orphan.
    fn finish(&mut self, row: Row) -> Option<RawPost> {
        let mut post = row.post;
        if post.post_type == PostType::Answer {
            match post.parent_id.and_then(|p| self.questions.get(&p)) {
                Some(q) => {
                    post.tags.extend(q.tags.iter().cloned());
                    post.accepted |= q.accepted_answer == Some(post.post_id);
                }
                None if post.tags.is_empty() => {
                    self.stats.orphans += 1;
                    log::warn!("dropping answer {} without a question or tags", post.post_id);
                    return None;
                }
                None => {}
            }
        }
        Some(post)
    }
}

impl<R: BufRead> Iterator for PostStream<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (questions, done) = (&self.questions, self.done);
            if let Some(row) = self.queue.pop_front_if(|row| Self::resolvable(questions, done, row)) {
                match self.finish(row) {
                    Some(post) => return Some(Ok(post)),
                    None => continue,
                }
            }
            if self.done {
                return None;
            }
            match self.read_row() {
                Ok(Some(row)) => {
                    if row.post.post_type == PostType::Question {
                        self.questions.insert(
                            row.post.post_id,
                            QuestionInfo { tags: row.post.tags.clone(), accepted_answer: row.accepted_answer },
                        );
                    }
                    self.queue.push_back(row);
                }
                Ok(None) => self.done = true,
                Err(e) => {
                    self.done = true;
                    self.queue.clear();
                    return Some(Err(e));
                }
            }
        }
    }
}

fn xml_row(e: &BytesStart<'_>) -> Option<Row> {
    let mut fields: HashMap<String, String> = HashMap::new();
    for attr in e.attributes() {
        let attr = attr.ok()?;
        let key = attr.key.as_ref().to_string();
        let value = attr.normalized_value(XmlVersion::Implicit1_0).ok()?.into_owned();
        fields.insert(key, value);
    }
    let num = |k: &str| fields.get(k).map(|v| v.trim().parse::<i64>());
    let post_id = u64::try_from(num("Id")?.ok()?).ok()?;
    let post_type = match num("PostTypeId")?.ok()? {
        1 => PostType::Question,
        2 => PostType::Answer,
        _ => return None,
    };
    let parent_id = match num("ParentId") {
        Some(p) => Some(u64::try_from(p.ok()?).ok()?),
        None => None,
    };
    if post_type == PostType::Answer && parent_id.is_none() {
        return None;
    }
    let accepted_answer = match num("AcceptedAnswerId") {
        Some(p) => Some(u64::try_from(p.ok()?).ok()?),
        None => None,
    };
    let score = match num("Score") {
        Some(s) => s.ok()?,
        None => 0,
    };
    let body_html = fields.remove("Body")?;
    let tags = fields.get("Tags").map(|t| parse_tags(t)).unwrap_or_default();
    Some(Row {
        post: RawPost { post_id, post_type, parent_id, score, accepted: false, body_html, tags },
        accepted_answer,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonTags {
    List(Vec<String>),
    Text(String),
}

#[derive(Deserialize)]
struct JsonPost {
    post_id: u64,
    post_type: String,
    parent_id: Option<u64>,
    #[serde(default)]
    score: i64,
    #[serde(default)]
    accepted: bool,
    #[serde(default)]
    accepted_answer_id: Option<u64>,
    body_html: String,
    #[serde(default)]
    tags: Option<JsonTags>,
}

fn json_row(line: &str) -> Option<Row> {
    let p: JsonPost = serde_json::from_str(line).ok()?;
    let post_type = match p.post_type.to_ascii_lowercase().as_str() {
        "question" | "1" => PostType::Question,
        "answer" | "2" => PostType::Answer,
        _ => return None,
    };
    if post_type == PostType::Answer && p.parent_id.is_none() {
        return None;
    }
    let tags = match p.tags {
        Some(JsonTags::List(list)) => list.iter().map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect(),
        Some(JsonTags::Text(t)) => parse_tags(&t),
        None => BTreeSet::new(),
    };
    Some(Row {
        post: RawPost {
            post_id: p.post_id,
            post_type,
            parent_id: p.parent_id,
            score: p.score,
            accepted: p.accepted,
            body_html: p.body_html,
            tags,
        },
        accepted_answer: p.accepted_answer_id,
    })
}

/// Opens a post file and streams it.
pub fn open_posts(
    path: &Path,
    format: PostFormat,
) -> Result<PostStream<std::io::BufReader<std::fs::File>>, IngestError> {
    let file =
        std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    Ok(PostStream::new(std::io::BufReader::new(file), format))
}

static PRE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<pre\b.*?(?:</pre\s*>|\z)").unwrap());
static COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?(?:-->|\z)").unwrap());
static BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)</?(?:p|li|br|div|h[1-6]|blockquote|ul|ol|hr|table|tr)\b[^>]*>").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").unwrap());
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t\r\f\u{a0}]+").unwrap());

/// Body text with block code removed, inline code kept, one paragraph per line.
fn plain_lines(body_html: &str) -> Vec<String> {
    let text = PRE.replace_all(body_html, "\n");
    let text = COMMENT.replace_all(&text, "");
    let text = BLOCK.replace_all(&text, "\n");
    let text = TAG.replace_all(&text, "");
    let text = html_escape::decode_html_entities(&text);
    text.split('\n')
        .map(|line| SPACES.replace_all(line, " ").trim().to_string())
        .filter(|line| !line.is_empty())
        .collect()
}

pub fn extract_paragraphs(post: &RawPost) -> Vec<Paragraph> {
    plain_lines(&post.body_html)
        .into_iter()
        .enumerate()
        .map(|(index, text)| Paragraph { post_id: post.post_id, index, text })
        .collect()
}

/// Plain text of a post body (paragraphs joined by newlines).
pub fn plain_text(body_html: &str) -> String {
    plain_lines(body_html).join("\n")
}

/// Tag gate, pattern gate and quality gate (accepted, or score above one).
pub fn filter_relevant(post: &RawPost, dl_tags: &BTreeSet<String>, patterns: &[Regex]) -> bool {
    if post.tags.is_disjoint(dl_tags) || !(post.accepted || post.score > 1) {
        return false;
    }
    let text = plain_text(&post.body_html);
    patterns.iter().any(|p| p.is_match(&text))
}

/// One lowercase tag per line; blank lines and `#` comments are skipped.
pub fn parse_tag_list(text: &str) -> BTreeSet<String> {
    text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

pub fn builtin_tags() -> BTreeSet<String> {
    parse_tag_list(BUILTIN_TAGS)
}

pub fn load_tags(path: &Path) -> Result<BTreeSet<String>, IngestError> {
    std::fs::read_to_string(path)
        .map(|t| parse_tag_list(&t))
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

/// Compiles one case-insensitive regex per non-comment line, expanding the
/// component placeholder from the lexicon.
pub fn parse_patterns(text: &str, lexicon: &Lexicon) -> Result<Vec<Regex>, IngestError> {
    let mut names: Vec<String> = lexicon.components().iter().flat_map(|c| c.names().map(str::to_string)).collect();
    names.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alternation = format!("(?:{})", names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|"));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            RegexBuilder::new(&l.trim().replace(COMPONENT_PLACEHOLDER, &alternation))
                .case_insensitive(true)
                .build()
                .map_err(|source| IngestError::Pattern { line: n + 1, source })
        })
        .collect()
}

pub fn builtin_patterns(lexicon: &Lexicon) -> Vec<Regex> {
    parse_patterns(BUILTIN_PATTERNS, lexicon).expect("built-in patterns compile")
}

pub fn load_patterns(path: &Path, lexicon: &Lexicon) -> Result<Vec<Regex>, IngestError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    parse_patterns(&text, lexicon)
}
