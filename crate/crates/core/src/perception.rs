//! Sentiment, emotion and toxicity "perception" features.
//!
//! All three extractors operate on cleaned text. Tokens are lowercased,
//! whitespace split, and stripped of surrounding punctuation before lexicon
//! lookup.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{clean_text, RawPost};

pub const SENTIMENT_DIM: usize = 4;
pub const EMOTION_DIM: usize = 10;
pub const TOXICITY_DIM: usize = 6;
pub const PERCEPTION_DIM: usize = SENTIMENT_DIM + EMOTION_DIM + TOXICITY_DIM;

pub const SENTIMENT_NAMES: [&str; SENTIMENT_DIM] = ["neg", "neu", "pos", "compound"];
pub const EMOTION_NAMES: [&str; EMOTION_DIM] = [
    "fear",
    "anger",
    "anticipation",
    "trust",
    "surprise",
    "positive",
    "negative",
    "sadness",
    "disgust",
    "joy",
];
pub const TOXICITY_NAMES: [&str; TOXICITY_DIM] = [
    "toxic",
    "severe_toxic",
    "obscene",
    "threat",
    "insult",
    "identity_hate",
];

/// Normalization constant of the compound score `x / sqrt(x² + α)`.
pub const COMPOUND_ALPHA: f64 = 15.0;

/// Lowercased word tokens with leading/trailing punctuation removed.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| matches!(c, '.' | ',' | '!' | '?' | '\'' | '"'))
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn read_tsv(path: &Path, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() != columns {
            return Err(Error::malformed(
                path,
                line_no,
                format!(
                    "expected {columns} tab-separated fields, found {}",
                    fields.len()
                ),
            ));
        }
        rows.push((line_no, fields));
    }
    Ok(rows)
}

fn parse_finite(path: &Path, line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::malformed(
            path,
            line,
            format!("`{s}` is not a finite number"),
        )),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    valences: HashMap<String, f64>,
}

impl SentimentLexicon {
    pub fn from_entries<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Self> {
        let mut valences = HashMap::new();
        for (tok, v) in entries {
            let tok = tok.into();
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "valence of `{tok}` is not finite"
                )));
            }
            valences.insert(tok.to_lowercase(), v);
        }
        Ok(Self { valences })
    }

    /// TSV rows `token<TAB>valence`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut valences = HashMap::new();
        for (line, fields) in read_tsv(path, 2)? {
            let v = parse_finite(path, line, &fields[1])?;
            valences.insert(fields[0].to_lowercase(), v);
        }
        Ok(Self { valences })
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmotionLexicon {
    flags: HashMap<String, [bool; EMOTION_DIM]>,
}

impl EmotionLexicon {
    pub fn category_index(name: &str) -> Option<usize> {
        EMOTION_NAMES.iter().position(|&c| c == name)
    }

    pub fn from_entries<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, &'static str)>,
    ) -> Result<Self> {
        let mut lex = Self::default();
        for (tok, cat) in entries {
            let idx = Self::category_index(cat).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown emotion category `{cat}`"))
            })?;
            lex.flags.entry(tok.into().to_lowercase()).or_default()[idx] = true;
        }
        Ok(lex)
    }

    /// TSV rows `token<TAB>category`, one row per token–category pair.
    pub fn load(path: &Path) -> Result<Self> {
        let mut lex = Self::default();
        for (line, fields) in read_tsv(path, 2)? {
            let idx = Self::category_index(&fields[1].to_lowercase()).ok_or_else(|| {
                Error::malformed(
                    path,
                    line,
                    format!("unknown emotion category `{}`", fields[1]),
                )
            })?;
            lex.flags.entry(fields[0].to_lowercase()).or_default()[idx] = true;
        }
        Ok(lex)
    }

    pub fn categories(&self, token: &str) -> Option<&[bool; EMOTION_DIM]> {
        self.flags.get(token)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToxicityLexicon {
    weights: HashMap<String, [f64; TOXICITY_DIM]>,
}

impl ToxicityLexicon {
    pub fn category_index(name: &str) -> Option<usize> {
        TOXICITY_NAMES.iter().position(|&c| c == name)
    }

    pub fn from_entries<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, &'static str, f64)>,
    ) -> Result<Self> {
        let mut lex = Self::default();
        for (tok, cat, w) in entries {
            let idx = Self::category_index(cat).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown toxicity category `{cat}`"))
            })?;
            if !w.is_finite() {
                return Err(Error::InvalidArgument(
                    "toxicity weight is not finite".into(),
                ));
            }
            lex.weights.entry(tok.into().to_lowercase()).or_default()[idx] += w;
        }
        Ok(lex)
    }

    /// TSV rows `token<TAB>category<TAB>weight`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut lex = Self::default();
        for (line, fields) in read_tsv(path, 3)? {
            let idx = Self::category_index(&fields[1].to_lowercase()).ok_or_else(|| {
                Error::malformed(
                    path,
                    line,
                    format!("unknown toxicity category `{}`", fields[1]),
                )
            })?;
            let w = parse_finite(path, line, &fields[2])?;
            lex.weights.entry(fields[0].to_lowercase()).or_default()[idx] += w;
        }
        Ok(lex)
    }
}

/// One precomputed toxicity row, as produced by an external scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRow {
    id: String,
    toxic: f64,
    severe_toxic: f64,
    obscene: f64,
    threat: f64,
    insult: f64,
    identity_hate: f64,
}

/// Toxicity scores keyed by post id, loaded from JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToxicitySidecar {
    scores: BTreeMap<String, [f64; TOXICITY_DIM]>,
}

impl ToxicitySidecar {
    pub fn insert(&mut self, id: impl Into<String>, scores: [f64; TOXICITY_DIM]) -> Result<()> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument(
                "toxicity scores must lie in [0, 1]".into(),
            ));
        }
        self.scores.insert(id.into(), scores);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64; TOXICITY_DIM]> {
        self.scores.get(id)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn parse(path: &Path, contents: &str) -> Result<Self> {
        let mut sidecar = Self::default();
        for (i, line) in contents.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: SidecarRow = serde_json::from_str(line)
                .map_err(|e| Error::malformed(path, i + 1, e.to_string()))?;
            let scores = [
                row.toxic,
                row.severe_toxic,
                row.obscene,
                row.threat,
                row.insult,
                row.identity_hate,
            ];
            if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(Error::malformed(
                    path,
                    i + 1,
                    "toxicity scores must lie in [0, 1]",
                ));
            }
            sidecar.scores.insert(row.id, scores);
        }
        Ok(sidecar)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &contents)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.scores {
            let row = SidecarRow {
                id: id.clone(),
                toxic: s[0],
                severe_toxic: s[1],
                obscene: s[2],
                threat: s[3],
                insult: s[4],
                identity_hate: s[5],
            };
            out.push_str(&serde_json::to_string(&row).expect("sidecar row serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToxicitySource {
    Lexicon(ToxicityLexicon),
    Sidecar(ToxicitySidecar),
}

impl Default for ToxicitySource {
    fn default() -> Self {
        ToxicitySource::Lexicon(ToxicityLexicon::default())
    }
}

/// The 20-dimensional perception vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionFeatures {
    /// `neg, neu, pos, compound`
    pub sentiment: [f64; SENTIMENT_DIM],
    pub emotion: [f64; EMOTION_DIM],
    pub toxicity: [f64; TOXICITY_DIM],
}

impl PerceptionFeatures {
    /// `sentiment ‖ emotion ‖ toxicity`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PERCEPTION_DIM);
        v.extend_from_slice(&self.sentiment);
        v.extend_from_slice(&self.emotion);
        v.extend_from_slice(&self.toxicity);
        v
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        SENTIMENT_NAMES
            .iter()
            .chain(EMOTION_NAMES.iter())
            .chain(TOXICITY_NAMES.iter())
            .copied()
    }

    /// True when every component lies in its documented range.
    pub fn in_range(&self) -> bool {
        let unit = |v: &f64| v.is_finite() && (0.0..=1.0).contains(v);
        self.sentiment[..3].iter().all(unit)
            && (-1.0..=1.0).contains(&self.sentiment[3])
            && self.emotion.iter().all(unit)
            && self.toxicity.iter().all(unit)
    }
}

/// `x / sqrt(x² + 15)`.
pub fn compound_score(valence_sum: f64) -> f64 {
    valence_sum / (valence_sum * valence_sum + COMPOUND_ALPHA).sqrt()
}

/// Valence-sum sentiment scores `(neg, neu, pos, compound)`.
///
/// `neu` is the fraction of tokens without a nonzero valence; the remaining
/// mass is split between `neg` and `pos` in proportion to the absolute
/// negative and positive valence sums, so the three shares sum to 1.
pub fn sentiment_features(text: &str, lexicon: &SentimentLexicon) -> [f64; SENTIMENT_DIM] {
    let tokens = lexical_tokens(text);
    let (mut pos_sum, mut neg_sum, mut total, mut hits) = (0.0, 0.0, 0.0, 0usize);
    for tok in &tokens {
        match lexicon.valence(tok) {
            Some(v) if v > 0.0 => {
                pos_sum += v;
                total += v;
                hits += 1;
            }
            Some(v) if v < 0.0 => {
                neg_sum += -v;
                total += v;
                hits += 1;
            }
            _ => {}
        }
    }
    if hits == 0 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let n = tokens.len() as f64;
    let matched = hits as f64 / n;
    let neu = (tokens.len() - hits) as f64 / n;
    let polar = pos_sum + neg_sum;
    let pos = matched * pos_sum / polar;
    let neg = matched * neg_sum / polar;
    [neg, neu, pos, compound_score(total)]
}

/// Per-category share of tokens flagged in the emotion lexicon.
pub fn emotion_features(text: &str, lexicon: &EmotionLexicon) -> [f64; EMOTION_DIM] {
    let tokens = lexical_tokens(text);
    let mut counts = [0usize; EMOTION_DIM];
    for tok in &tokens {
        if let Some(flags) = lexicon.categories(tok) {
            for (c, &f) in counts.iter_mut().zip(flags) {
                *c += usize::from(f);
            }
        }
    }
    let mut out = [0.0; EMOTION_DIM];
    if tokens.is_empty() {
        return out;
    }
    let n = tokens.len() as f64;
    for (o, &c) in out.iter_mut().zip(&counts) {
        *o = c as f64 / n;
    }
    out
}

pub fn toxicity_features(post: &RawPost, source: &ToxicitySource) -> Result<[f64; TOXICITY_DIM]> {
    match source {
        ToxicitySource::Sidecar(sidecar) => sidecar
            .get(&post.id)
            .copied()
            .ok_or_else(|| Error::MissingId(post.id.clone())),
        ToxicitySource::Lexicon(lex) => {
            let tokens = lexical_tokens(&clean_text(&post.text));
            let mut out = [0.0; TOXICITY_DIM];
            if tokens.is_empty() {
                return Ok(out);
            }
            for tok in &tokens {
                if let Some(w) = lex.weights.get(tok) {
                    for (o, &wv) in out.iter_mut().zip(w) {
                        *o += wv;
                    }
                }
            }
            let n = tokens.len() as f64;
            for o in &mut out {
                *o = (*o / n).clamp(0.0, 1.0);
            }
            Ok(out)
        }
    }
}

/// Bundles the three feature sources.
#[derive(Debug, Clone, Default)]
pub struct PerceptionExtractor {
    pub sentiment: SentimentLexicon,
    pub emotion: EmotionLexicon,
    pub toxicity: ToxicitySource,
}

impl PerceptionExtractor {
    pub fn perception_vector(&self, post: &RawPost) -> Result<PerceptionFeatures> {
        let text = clean_text(&post.text);
        Ok(PerceptionFeatures {
            sentiment: sentiment_features(&text, &self.sentiment),
            emotion: emotion_features(&text, &self.emotion),
            toxicity: toxicity_features(post, &self.toxicity)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, text: &str) -> RawPost {
        RawPost {
            id: id.into(),
            text: text.into(),
            labels: vec![],
        }
    }

    #[test]
    fn sentiment_without_hits_is_neutral() {
        let lex = SentimentLexicon::from_entries([("good", 2.0)]).unwrap();
        assert_eq!(
            sentiment_features("nothing here", &lex),
            [0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(sentiment_features("", &lex), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sentiment_single_positive_token() {
        let lex = SentimentLexicon::from_entries([("good", 2.0)]).unwrap();
        let s = sentiment_features("good", &lex);
        assert!((s[3] - 2.0 / 19f64.sqrt()).abs() < 1e-15);
        assert!((s[3] - 0.4588).abs() < 1e-4);
        assert_eq!(&s[..3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sentiment_opposite_tokens_cancel() {
        let lex = SentimentLexicon::from_entries([("good", 2.0), ("bad", -2.0)]).unwrap();
        let s = sentiment_features("good bad okay okay", &lex);
        assert_eq!(s, [0.25, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn emotion_scores_are_hit_fractions() {
        let lex =
            EmotionLexicon::from_entries([("happy", "joy"), ("glad", "joy"), ("glad", "positive")])
                .unwrap();
        let e = emotion_features("happy glad and so", &lex);
        assert_eq!(e[9], 0.5);
        assert_eq!(e[5], 0.25);
        assert_eq!(emotion_features("", &lex), [0.0; EMOTION_DIM]);
    }

    #[test]
    fn emotion_one_in_thirty() {
        let lex = EmotionLexicon::from_entries([("afraid", "fear")]).unwrap();
        let mut words = vec!["w"; 29];
        words.push("afraid");
        let e = emotion_features(&words.join(" "), &lex);
        assert!((e[0] - 0.0333).abs() < 5e-5);
        assert_eq!(e[0], 1.0 / 30.0);
    }

    #[test]
    fn toxicity_lexicon_mode() {
        let lex = ToxicityLexicon::from_entries([("jerk", "toxic", 1.0)]).unwrap();
        let src = ToxicitySource::Lexicon(lex);
        let t = toxicity_features(&post("p", "you jerk"), &src).unwrap();
        assert_eq!(t, [0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(toxicity_features(&post("p", ""), &src).unwrap(), [0.0; 6]);
    }

    #[test]
    fn toxicity_sidecar_mode_is_verbatim() {
        let line = r#"{"id": "42", "toxic": 0.9567, "severe_toxic": 0.03366, "obscene": 0.1949, "threat": 0.0165, "insult": 0.2927, "identity_hate": 0.5879}"#;
        let sidecar = ToxicitySidecar::parse(Path::new("side.jsonl"), line).unwrap();
        let src = ToxicitySource::Sidecar(sidecar.clone());
        let t = toxicity_features(&post("42", "whatever"), &src).unwrap();
        assert_eq!(t, [0.9567, 0.03366, 0.1949, 0.0165, 0.2927, 0.5879]);
        assert!(matches!(
            toxicity_features(&post("7", ""), &src),
            Err(Error::MissingId(id)) if id == "7"
        ));
        let again = ToxicitySidecar::parse(Path::new("x"), &sidecar.to_jsonl()).unwrap();
        assert_eq!(again, sidecar);
    }

    #[test]
    fn malformed_sidecar_rows_are_rejected() {
        let p = Path::new("s.jsonl");
        assert!(matches!(
            ToxicitySidecar::parse(p, r#"{"id": "1", "toxic": 0.5}"#),
            Err(Error::Malformed { line: 1, .. })
        ));
        let out_of_range = r#"{"id":"1","toxic":1.5,"severe_toxic":0,"obscene":0,"threat":0,"insult":0,"identity_hate":0}"#;
        assert!(ToxicitySidecar::parse(p, out_of_range).is_err());
    }

    #[test]
    fn perception_vector_concatenates_in_order() {
        let ex = PerceptionExtractor::default();
        let v = ex
            .perception_vector(&post("1", "anything at all"))
            .unwrap()
            .to_vec();
        assert_eq!(v.len(), PERCEPTION_DIM);
        let mut expected = vec![0.0; PERCEPTION_DIM];
        expected[1] = 1.0;
        assert_eq!(v, expected);
        assert_eq!(PerceptionFeatures::names().count(), PERCEPTION_DIM);
    }

    #[test]
    fn composed_vector_matches_parts() {
        let ex = PerceptionExtractor {
            sentiment: SentimentLexicon::from_entries([("good", 2.0)]).unwrap(),
            emotion: EmotionLexicon::from_entries([("good", "joy")]).unwrap(),
            toxicity: ToxicitySource::Lexicon(
                ToxicityLexicon::from_entries([("jerk", "toxic", 1.0)]).unwrap(),
            ),
        };
        let p = post("1", "good jerk");
        let f = ex.perception_vector(&p).unwrap();
        assert_eq!(f.sentiment, sentiment_features("good jerk", &ex.sentiment));
        assert_eq!(f.emotion[9], 0.5);
        assert_eq!(f.toxicity[0], 0.5);
    }

    #[test]
    fn lexicon_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.tsv");
        fs::write(&s, "good\t2.0\nbad\t-1.5\n").unwrap();
        let e = dir.path().join("e.tsv");
        fs::write(&e, "happy\tjoy\nhappy\tpositive\n").unwrap();
        let t = dir.path().join("t.tsv");
        fs::write(&t, "jerk\tinsult\t0.8\n").unwrap();
        assert_eq!(
            SentimentLexicon::load(&s).unwrap().valence("bad"),
            Some(-1.5)
        );
        assert!(
            EmotionLexicon::load(&e)
                .unwrap()
                .categories("happy")
                .unwrap()[5]
        );
        assert!(ToxicityLexicon::load(&t).is_ok());
        fs::write(&e, "happy\tglee\n").unwrap();
        assert!(matches!(
            EmotionLexicon::load(&e),
            Err(Error::Malformed { line: 1, .. })
        ));
    }
}
