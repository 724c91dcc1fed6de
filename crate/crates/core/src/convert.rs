//! Converters from the public EXIST 2021 and MLSC layouts to the JSON-lines
//! dataset schema. The corpora themselves are not bundled.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::RawPost;

pub const EXIST_TASK1_LABELS: [&str; 2] = ["non-sexist", "sexist"];
pub const EXIST_TASK2_LABELS: [&str; 6] = [
    "non-sexist",
    "ideological-inequality",
    "stereotyping-dominance",
    "misogyny-non-sexual-violence",
    "sexual-violence",
    "objectification",
];

/// The 14 MLSC categories, used verbatim as label strings.
pub const MLSC_CATEGORIES: [&str; 14] = [
    "Sexual harassment (excluding assault)",
    "Attribute stereotyping",
    "Hostile work environment",
    "Role stereotyping",
    "Hyper-sexualization (excluding body shaming)",
    "Other",
    "Sexual assault",
    "Denial or trivialization of sexist misconduct",
    "Moral policing and victim blaming",
    "Internalized sexism",
    "Body shaming",
    "Motherhood and menstruation-related discrimination",
    "Threats",
    "Slut shaming",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExistTask {
    Identification,
    Categorization,
}

fn column(header: &[&str], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidData(format!("missing `{name}` column")))
}

/// Converts an EXIST tab-separated export (header with at least `id`,
/// `text`, `task1`, `task2`; optionally `language`) into posts for one task.
/// `language` filters rows when the column exists.
pub fn convert_exist(tsv: &str, task: ExistTask, language: Option<&str>) -> Result<Vec<RawPost>> {
    let mut lines = tsv
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty EXIST export".into()))?;
    let header: Vec<&str> = header.split('\t').collect();
    let (id_col, text_col) = (column(&header, "id")?, column(&header, "text")?);
    let label_col = column(
        &header,
        match task {
            ExistTask::Identification => "task1",
            ExistTask::Categorization => "task2",
        },
    )?;
    let lang_col = column(&header, "language").ok();
    let allowed: &[&str] = match task {
        ExistTask::Identification => &EXIST_TASK1_LABELS,
        ExistTask::Categorization => &EXIST_TASK2_LABELS,
    };

    let mut posts = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(Error::InvalidData(format!(
                "line {}: expected {} fields, found {}",
                i + 1,
                header.len(),
                fields.len()
            )));
        }
        if let (Some(lang), Some(col)) = (language, lang_col) {
            if !fields[col].trim().eq_ignore_ascii_case(lang) {
                continue;
            }
        }
        let label = fields[label_col].trim().to_lowercase();
        if !allowed.contains(&label.as_str()) {
            return Err(Error::InvalidData(format!(
                "line {}: unknown label `{label}`",
                i + 1
            )));
        }
        posts.push(RawPost {
            id: fields[id_col].trim().to_string(),
            text: fields[text_col].to_string(),
            labels: vec![label],
        });
    }
    Ok(posts)
}

/// Output of [`convert_mlsc`]: both splits plus the header line recording the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MlscSplit {
    pub seed: u64,
    pub train: Vec<RawPost>,
    pub test: Vec<RawPost>,
}

impl MlscSplit {
    pub fn header(&self, split: &str) -> String {
        format!("# mlsc split={split} seed={} train_fraction=0.8", self.seed)
    }
}

/// Converts MLSC rows `text<TAB>category;category;…` (optional header
/// starting with `text`) and splits them 80/20 under `seed`.
pub fn convert_mlsc(tsv: &str, seed: u64) -> Result<MlscSplit> {
    let mut posts = Vec::new();
    for (i, line) in tsv.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.to_lowercase().starts_with("text\t")) {
            continue;
        }
        let (text, cats) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidData(format!("line {}: expected `text<TAB>labels`", i + 1))
        })?;
        let mut labels = Vec::new();
        for cat in cats.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let name = MLSC_CATEGORIES
                .iter()
                .find(|c| c.eq_ignore_ascii_case(cat))
                .ok_or_else(|| {
                    Error::InvalidData(format!("line {}: unknown category `{cat}`", i + 1))
                })?;
            if !labels.iter().any(|l| l == name) {
                labels.push(name.to_string());
            }
        }
        if labels.is_empty() {
            return Err(Error::InvalidData(format!("line {}: no category", i + 1)));
        }
        posts.push(RawPost {
            id: format!("mlsc-{:05}", posts.len()),
            text: text.to_string(),
            labels,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    posts.shuffle(&mut rng);
    let n_train = (posts.len() as f64 * 0.8).round() as usize;
    let test = posts.split_off(n_train);
    Ok(MlscSplit {
        seed,
        train: posts,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXIST: &str = "test_case\tid\tsource\tlanguage\ttext\ttask1\ttask2\n\
        EXIST2021\t1\ttwitter\ten\tShe should stay home\tsexist\tideological-inequality\n\
        EXIST2021\t2\tgab\tes\tHola\tnon-sexist\tnon-sexist\n\
        EXIST2021\t3\ttwitter\ten\tNice weather @bob\tnon-sexist\tnon-sexist\n";

    #[test]
    fn exist_tasks() {
        let t1 = convert_exist(EXIST, ExistTask::Identification, Some("en")).unwrap();
        assert_eq!(t1.len(), 2);
        assert_eq!(t1[0].labels, vec!["sexist"]);
        let t2 = convert_exist(EXIST, ExistTask::Categorization, None).unwrap();
        assert_eq!(t2.len(), 3);
        assert_eq!(t2[0].labels, vec!["ideological-inequality"]);
    }

    #[test]
    fn exist_rejects_unknown_labels() {
        let bad = "id\ttext\ttask1\ttask2\n1\thi\tmaybe\tnon-sexist\n";
        assert!(convert_exist(bad, ExistTask::Identification, None).is_err());
    }

    #[test]
    fn mlsc_split_is_seeded() {
        let rows: String = (0..10)
            .map(|i| format!("account {i}\tThreats; Other\n"))
            .collect();
        let a = convert_mlsc(&rows, 11).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (8, 2));
        assert_eq!(a, convert_mlsc(&rows, 11).unwrap());
        assert_eq!(a.train[0].labels, vec!["Threats", "Other"]);
        assert!(a.header("train").contains("seed=11"));
        assert!(convert_mlsc("x\tNot a category\n", 1).is_err());
    }
}
