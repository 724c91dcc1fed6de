//! JSON-lines dataset files and conversion into model-ready examples.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, LabelSet, TaskMode};
use crate::model::{Encoded, Example};
use crate::perception::PerceptionExtractor;
use crate::preprocess::{clean_text, tokenize, RawPost, Tokenizer};

/// Parses JSON lines, skipping blank lines and `#` comment lines.
pub fn parse_posts(path: &Path, contents: &str) -> Result<Vec<(usize, RawPost)>> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let post: RawPost = serde_json::from_str(trimmed)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if post.id.is_empty() {
            return Err(Error::malformed(path, line_no, "empty id"));
        }
        if !seen.insert(post.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.into(),
                line: line_no,
                id: post.id,
            });
        }
        posts.push((line_no, post));
    }
    Ok(posts)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset against a label map: unknown labels and
/// duplicate ids are rejected, as are multi-label rows in multiclass mode.
pub fn load_dataset(path: &Path, label_map: &LabelMap) -> Result<Vec<RawPost>> {
    let posts = parse_posts(path, &read(path)?)?;
    for (line, post) in &posts {
        if let Err(label) = label_map.encode(&post.labels) {
            return Err(Error::UnknownLabel {
                path: path.into(),
                line: *line,
                label,
            });
        }
        if label_map.mode == TaskMode::Multiclass && post.labels.len() > 1 {
            return Err(Error::malformed(
                path,
                *line,
                format!(
                    "multiclass rows carry at most one label, found {}",
                    post.labels.len()
                ),
            ));
        }
    }
    Ok(posts.into_iter().map(|(_, p)| p).collect())
}

/// Label map made of every label seen in the file, sorted.
pub fn infer_label_map(path: &Path, mode: TaskMode) -> Result<LabelMap> {
    let posts = parse_posts(path, &read(path)?)?;
    let names: BTreeSet<String> = posts.into_iter().flat_map(|(_, p)| p.labels).collect();
    LabelMap::new(mode, names).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidData(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_jsonl(posts: &[RawPost]) -> String {
    let mut out = String::new();
    for p in posts {
        out.push_str(&serde_json::to_string(p).expect("posts serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, posts: &[RawPost]) -> Result<()> {
    fs::write(path, to_jsonl(posts)).map_err(|e| Error::io(path, e))
}

/// Cleans, tokenizes and featurizes posts. Every post must carry labels
/// valid for the map (exactly one in multiclass mode).
pub fn prepare_examples(
    posts: &[RawPost],
    tokenizer: &impl Tokenizer,
    max_len: usize,
    extractor: &PerceptionExtractor,
    label_map: &LabelMap,
) -> Result<Vec<Example>> {
    posts
        .iter()
        .map(|post| {
            let labels = label_map.encode(&post.labels).map_err(|label| {
                Error::InvalidData(format!("post `{}` has unknown label `{label}`", post.id))
            })?;
            if label_map.mode == TaskMode::Multiclass && labels.len() != 1 {
                return Err(Error::InvalidData(format!(
                    "post `{}` needs exactly one label in multiclass mode",
                    post.id
                )));
            }
            let tokens = tokenize(&clean_text(&post.text), tokenizer, max_len)?;
            let features = extractor.perception_vector(post)?.to_vec();
            Ok(Example {
                id: post.id.clone(),
                input: Encoded::Tokens(tokens),
                perception: features
                    .try_into()
                    .expect("perception vector has fixed length"),
                labels,
            })
        })
        .collect()
}

/// Most frequent label set in the data (ties broken by ordering); the
/// majority-class baseline predicts it for every sample.
pub fn majority_labels(examples: &[Example]) -> Option<LabelSet> {
    let mut counts: Vec<(LabelSet, usize)> = Vec::new();
    for ex in examples {
        match counts.iter_mut().find(|(l, _)| *l == ex.labels) {
            Some((_, c)) => *c += 1,
            None => counts.push((ex.labels.clone(), 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts.into_iter().next().map(|(l, _)| l)
}
