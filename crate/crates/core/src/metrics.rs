//! Accuracy and per-class / macro precision, recall and F1.
//!
//! Scores are computed as exact fractions of counts and rounded to `f64`
//! once, so the macro averages are the correctly rounded rational values
//! whenever the intermediate integers fit in `u128`.

use serde::{Deserialize, Serialize};

use crate::labels::{LabelSet, TaskMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskMode,
    pub samples: usize,
    /// Fraction of samples whose predicted label set equals the truth
    /// (plain accuracy in multiclass mode).
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Nonnegative fraction; `None` once the arithmetic would overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    /// `num / den`, with `0/0` read as 0.
    fn new(num: u64, den: u64) -> Self {
        if den == 0 {
            return Self { num: 0, den: 1 };
        }
        let g = gcd(num as u128, den as u128);
        Self {
            num: num as u128 / g,
            den: den as u128 / g,
        }
    }

    fn checked_add(self, other: Self) -> Option<Self> {
        let g = gcd(self.den, other.den);
        let den = (self.den / g).checked_mul(other.den)?;
        let num = self
            .num
            .checked_mul(other.den / g)?
            .checked_add(other.num.checked_mul(self.den / g)?)?;
        let r = gcd(num, den).max(1);
        Some(Self {
            num: num / r,
            den: den / r,
        })
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Mean of fractions, exact where possible.
fn mean(values: &[Fraction]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let exact = values
        .iter()
        .try_fold(Fraction { num: 0, den: 1 }, |acc, f| acc.checked_add(*f))
        .and_then(|sum| {
            let den = sum.den.checked_mul(values.len() as u128)?;
            let g = gcd(sum.num, den).max(1);
            Some(Fraction {
                num: sum.num / g,
                den: den / g,
            })
        });
    match exact {
        Some(f) => f.to_f64(),
        None => values.iter().map(|f| f.to_f64()).sum::<f64>() / values.len() as f64,
    }
}

pub fn confusion_counts(
    truth: &[LabelSet],
    predicted: &[LabelSet],
    num_labels: usize,
) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); num_labels];
    for (t, p) in truth.iter().zip(predicted) {
        for (c, k) in counts.iter_mut().enumerate() {
            match (t.contains(c), p.contains(c)) {
                (true, true) => k.tp += 1,
                (false, true) => k.fp += 1,
                (true, false) => k.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

/// Scores predictions against the truth. Classes with an empty denominator
/// get precision / recall / F1 of 0 and still count towards macro averages.
pub fn evaluate_predictions(
    truth: &[LabelSet],
    predicted: &[LabelSet],
    label_names: &[String],
    task: TaskMode,
) -> MetricsReport {
    assert_eq!(
        truth.len(),
        predicted.len(),
        "truth and predictions differ in length"
    );
    let n = truth.len();
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    let counts = confusion_counts(truth, predicted, label_names.len());

    let mut precisions = Vec::with_capacity(counts.len());
    let mut recalls = Vec::with_capacity(counts.len());
    let mut f1s = Vec::with_capacity(counts.len());
    let mut per_class = Vec::with_capacity(counts.len());
    for (c, k) in counts.iter().enumerate() {
        let p = Fraction::new(k.tp, k.tp + k.fp);
        let r = Fraction::new(k.tp, k.tp + k.fn_);
        let f = Fraction::new(2 * k.tp, 2 * k.tp + k.fp + k.fn_);
        per_class.push(ClassMetrics {
            label: label_names[c].clone(),
            precision: p.to_f64(),
            recall: r.to_f64(),
            f1: f.to_f64(),
            support: (k.tp + k.fn_) as usize,
        });
        precisions.push(p);
        recalls.push(r);
        f1s.push(f);
    }

    MetricsReport {
        task,
        samples: n,
        accuracy: Fraction::new(correct as u64, n as u64).to_f64(),
        macro_precision: mean(&precisions),
        macro_recall: mean(&recalls),
        macro_f1: mean(&f1s),
        per_class,
    }
}
