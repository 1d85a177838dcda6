//! Reading dependency parses in CoNLL-U form and computing lowest-common-
//! ancestor depths over them.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConlluError {
    #[error("sentence {sentence}, line {line}: {message}")]
    Format { sentence: usize, line: usize, message: String },
    #[error("sentence {sentence}: {message}")]
    Tree { sentence: usize, message: String },
    #[error("token index {index} out of range for a {len}-token sentence")]
    OutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepToken {
    pub form: String,
    /// Zero-based index of the head token; `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

/// One parsed sentence. Token indices are zero-based (CoNLL-U ID minus one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    tokens: Vec<DepToken>,
    depth: Vec<usize>,
    root: usize,
}

impl DepTree {
    /// Builds a tree from tokens, checking for a single root and no cycles.
    pub fn new(tokens: Vec<DepToken>) -> Result<Self, String> {
        if tokens.is_empty() {
            return Err("empty sentence".into());
        }
        let roots: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].head.is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err("no root token".into()),
            _ => return Err(format!("{} root tokens", roots.len())),
        };
        let mut depth = vec![usize::MAX; tokens.len()];
        depth[root] = 0;
        for start in 0..tokens.len() {
            let mut path = Vec::new();
            let mut cur = start;
            while depth[cur] == usize::MAX {
                if path.len() > tokens.len() {
                    return Err(format!("cycle through token {}", start + 1));
                }
                path.push(cur);
                cur = match tokens[cur].head {
                    Some(h) if h < tokens.len() => h,
                    Some(h) => return Err(format!("head {} out of range", h + 1)),
                    None => unreachable!("only the root has no head"),
                };
            }
            let mut d = depth[cur];
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = d;
            }
        }
        Ok(Self { tokens, depth, root })
    }

    pub fn tokens(&self) -> &[DepToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn depth(&self, i: usize) -> Result<usize, ConlluError> {
        self.depth.get(i).copied().ok_or(ConlluError::OutOfRange { index: i, len: self.len() })
    }

    /// Depth (root = 0) of the deepest node on both root paths.
    pub fn lca_depth(&self, i: usize, j: usize) -> Result<usize, ConlluError> {
        let (mut a, mut b) = (i, j);
        let (mut da, mut db) = (self.depth(a)?, self.depth(b)?);
        while da > db {
            a = self.tokens[a].head.expect("non-root has a head");
            da -= 1;
        }
        while db > da {
            b = self.tokens[b].head.expect("non-root has a head");
            db -= 1;
        }
        while a != b {
            a = self.tokens[a].head.expect("non-root has a head");
            b = self.tokens[b].head.expect("non-root has a head");
            da -= 1;
        }
        Ok(da)
    }
}

/// Parses CoNLL-U text into one tree per sentence. Multiword ranges (`3-4`)
/// and empty nodes (`5.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<DepTree>, ConlluError> {
    let mut trees = Vec::new();
    let mut rows: Vec<DepToken> = Vec::new();
    let mut sentence = 0;

    let finish = |rows: &mut Vec<DepToken>, trees: &mut Vec<DepTree>, sentence: usize| {
        if rows.is_empty() {
            return Ok(());
        }
        let tree = DepTree::new(std::mem::take(rows)).map_err(|message| ConlluError::Tree { sentence, message })?;
        trees.push(tree);
        Ok(())
    };

    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut rows, &mut trees, sentence)?;
            sentence = trees.len();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let bad = |message: String| ConlluError::Format { sentence, line: n + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(bad(format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| bad(format!("bad token id `{id}`")))?;
        if id != rows.len() + 1 {
            return Err(bad(format!("token id {id} out of sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| bad(format!("bad head `{}`", cols[6])))?;
        if head == id {
            return Err(ConlluError::Tree { sentence, message: format!("token {id} is its own head") });
        }
        rows.push(DepToken { form: cols[1].to_string(), head: head.checked_sub(1), deprel: cols[7].to_string() });
    }
    finish(&mut rows, &mut trees, sentence)?;
    Ok(trees)
}
