//! Reference implementations shared by the integration and acceptance tests.
//! Each one is written directly from the definitions, without the library's
//! helpers.
#![allow(dead_code)]

use ascend_core::{LabelSet, MaskMode};
use num_rational::Ratio;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Triple loop over anchors, positives and denominators.
pub fn supcon_oracle(
    z: &[Vec<f64>],
    labels: &[LabelSet],
    tau: f64,
    theta: f64,
    beta: f64,
    mode: MaskMode,
) -> f64 {
    let b = z.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut weight_sum = 0.0;
        let mut acc = 0.0;
        for p in 0..b {
            if p == i || labels[p] != labels[i] {
                continue;
            }
            let s = plain_cosine(&z[i], &z[p]);
            let w = match mode {
                MaskMode::Hard => {
                    if s > theta {
                        1.0
                    } else {
                        0.0
                    }
                }
                MaskMode::Soft => 1.0 / (1.0 + (-(s - theta) / beta).exp()),
            };
            if w == 0.0 {
                continue;
            }
            let mut denom = 0.0;
            for a in 0..b {
                if a != i {
                    denom += (plain_cosine(&z[i], &z[a]) / tau).exp();
                }
            }
            acc += w * ((s / tau).exp() / denom).ln();
            weight_sum += w;
        }
        if weight_sum > 0.0 {
            total += -acc / weight_sum;
        }
    }
    total
}

/// Random batch: `b` vectors of width `d` and labels drawn from `classes`.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    b: usize,
    d: usize,
    classes: usize,
) -> (Vec<Vec<f64>>, Vec<LabelSet>) {
    let z = (0..b)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..b)
        .map(|_| LabelSet::single(rng.gen_range(0..classes)))
        .collect();
    (z, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalReport {
    pub accuracy: Ratio<i64>,
    pub precision: Vec<Ratio<i64>>,
    pub recall: Vec<Ratio<i64>>,
    pub f1: Vec<Ratio<i64>>,
    pub macro_precision: Ratio<i64>,
    pub macro_recall: Ratio<i64>,
    pub macro_f1: Ratio<i64>,
}

fn ratio_or_zero(num: i64, den: i64) -> Ratio<i64> {
    if den == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(num, den)
    }
}

/// Per-class confusion matrix in rational arithmetic.
pub fn metrics_oracle(
    truth: &[LabelSet],
    predicted: &[LabelSet],
    classes: usize,
) -> RationalReport {
    let n = truth.len() as i64;
    let exact = truth
        .iter()
        .zip(predicted)
        .filter(|(t, p)| t.ids() == p.ids())
        .count() as i64;
    let (mut precision, mut recall, mut f1) = (vec![], vec![], vec![]);
    for c in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0i64, 0i64, 0i64);
        for (t, p) in truth.iter().zip(predicted) {
            let (in_t, in_p) = (t.ids().contains(&c), p.ids().contains(&c));
            tp += (in_t && in_p) as i64;
            fp += (!in_t && in_p) as i64;
            fn_ += (in_t && !in_p) as i64;
        }
        let p = ratio_or_zero(tp, tp + fp);
        let r = ratio_or_zero(tp, tp + fn_);
        let f = if p + r == Ratio::from_integer(0) {
            Ratio::from_integer(0)
        } else {
            Ratio::from_integer(2) * p * r / (p + r)
        };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let k = Ratio::from_integer(classes as i64);
    let mean = |v: &[Ratio<i64>]| v.iter().copied().sum::<Ratio<i64>>() / k;
    RationalReport {
        accuracy: ratio_or_zero(exact, n),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

pub fn to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

const FUZZ_WORDS: [&str; 16] = [
    "good", "bad", "awful", "great", "hate", "love", "woman", "kitchen", "angry", "calm", "stupid",
    "smart", "scared", "happy", "idiot", "fine",
];
const FUZZ_JUNK: [&str; 12] = [
    "@user",
    "#tag",
    "https://t.co/x",
    "www.Example.com",
    "¡olé!",
    "naïve",
    "😀",
    "...",
    "\"quoted\"",
    "it's",
    "\t",
    "ÅNGSTRÖM",
];

/// Lexicons over a fixed vocabulary with seeded random weights.
pub fn fuzz_extractor(rng: &mut ChaCha8Rng) -> ascend_core::PerceptionExtractor {
    use ascend_core::perception::{
        EmotionLexicon, SentimentLexicon, ToxicityLexicon, EMOTION_NAMES, TOXICITY_NAMES,
    };
    let sentiment =
        SentimentLexicon::from_entries(FUZZ_WORDS.iter().map(|w| (*w, rng.gen_range(-4.0..4.0))))
            .unwrap();
    let emotion = EmotionLexicon::from_entries(
        FUZZ_WORDS
            .iter()
            .flat_map(|w| EMOTION_NAMES.iter().map(move |c| (*w, *c)))
            .filter(|_| rng.gen_bool(0.3))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let toxicity = ToxicityLexicon::from_entries(
        FUZZ_WORDS
            .iter()
            .flat_map(|w| TOXICITY_NAMES.iter().map(move |c| (*w, *c)))
            .map(|(w, c)| (w, c, rng.gen_range(0.0..1.5)))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    ascend_core::PerceptionExtractor {
        sentiment,
        emotion,
        toxicity: ascend_core::ToxicitySource::Lexicon(toxicity),
    }
}

/// A post of mixed lexicon words, junk tokens and random characters.
pub fn fuzz_post(rng: &mut ChaCha8Rng, id: usize) -> ascend_core::RawPost {
    let n = rng.gen_range(0..25);
    let words: Vec<String> = (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0..=5 => {
                let w = FUZZ_WORDS[rng.gen_range(0..FUZZ_WORDS.len())];
                if rng.gen_bool(0.3) {
                    format!("{}!", w.to_uppercase())
                } else {
                    w.to_string()
                }
            }
            6..=7 => FUZZ_JUNK[rng.gen_range(0..FUZZ_JUNK.len())].to_string(),
            _ => (0..rng.gen_range(1..6))
                .map(|_| rng.gen_range(' '..='\u{2FF}'))
                .collect(),
        })
        .collect();
    ascend_core::RawPost {
        id: format!("f{id}"),
        text: words.join(" "),
        labels: vec![],
    }
}
