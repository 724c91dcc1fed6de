//! Label identifiers, label sets and the string ↔ id mapping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Exactly one label per post.
    #[default]
    Multiclass,
    /// Any subset of labels per post.
    Multilabel,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(TaskMode::Multiclass),
            "multilabel" | "multi-label" => Ok(TaskMode::Multilabel),
            other => Err(Error::InvalidArgument(format!(
                "unknown task mode `{other}`"
            ))),
        }
    }
}

/// Sorted, duplicate-free label ids of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    pub fn single(id: usize) -> Self {
        Self(vec![id])
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// |A ∩ B| / |A ∪ B|; two empty sets count as identical.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let inter = self.0.iter().filter(|id| other.contains(**id)).count();
        let union = self.0.len() + other.0.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Bijection between label strings and dense ids `0..C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub mode: TaskMode,
    names: Vec<String>,
}

impl LabelMap {
    pub fn new<S: Into<String>>(
        mode: TaskMode,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::InvalidArgument("empty label name".into()));
            }
            if seen.insert(n.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("label `{n}` listed twice")));
            }
        }
        if names.is_empty() {
            return Err(Error::InvalidArgument(
                "label map needs at least one label".into(),
            ));
        }
        Ok(Self { mode, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Maps label strings to a [`LabelSet`]; the first unknown name is returned as the error.
    pub fn encode(&self, labels: &[String]) -> std::result::Result<LabelSet, String> {
        labels
            .iter()
            .map(|l| self.id(l).ok_or_else(|| l.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(LabelSet::new)
    }

    pub fn decode(&self, set: &LabelSet) -> Vec<String> {
        set.ids()
            .iter()
            .filter_map(|&i| self.name(i))
            .map(str::to_string)
            .collect()
    }
}
