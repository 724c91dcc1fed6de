//! Linear classifier over fused features and the cross-entropy objectives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelSet, TaskMode};
use crate::linalg::{sigmoid, softmax_in_place, Matrix};
use crate::params::Parameters;

/// Probabilities below this are clamped before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Decision threshold for each label in multi-label mode.
pub const MULTILABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub mode: TaskMode,
    pub outputs: usize,
    pub input_dim: usize,
    /// `outputs × input_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn new(mode: TaskMode, outputs: usize, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let weight = draw(outputs * input_dim);
        let bias = draw(outputs);
        Self {
            mode,
            outputs,
            input_dim,
            weight,
            bias,
        }
    }

    pub fn zeros(mode: TaskMode, outputs: usize, input_dim: usize) -> Self {
        Self {
            mode,
            outputs,
            input_dim,
            weight: vec![0.0; outputs * input_dim],
            bias: vec![0.0; outputs],
        }
    }
}

impl Parameters for ClassifierParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("weight".into(), &self.weight[..]),
            ("bias".into(), &self.bias[..]),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("weight".into(), &mut self.weight[..]),
            ("bias".into(), &mut self.bias[..]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// The argmax class (multiclass) or every label with `p > 0.5` (multi-label).
    pub labels: LabelSet,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Probabilities and decisions from raw logits.
pub fn predict_from_logits(logits: Vec<f64>, mode: TaskMode) -> Prediction {
    let mut probabilities = logits.clone();
    let labels = match mode {
        TaskMode::Multiclass => {
            softmax_in_place(&mut probabilities);
            LabelSet::single(argmax(&logits))
        }
        TaskMode::Multilabel => {
            for p in &mut probabilities {
                *p = sigmoid(*p);
            }
            LabelSet::new(
                probabilities
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > MULTILABEL_THRESHOLD)
                    .map(|(k, _)| k)
                    .collect(),
            )
        }
    };
    Prediction {
        logits,
        probabilities,
        labels,
    }
}

pub fn forward(features: &[f64], params: &ClassifierParams) -> Result<Prediction> {
    if features.len() != params.input_dim {
        return Err(Error::Shape(format!(
            "classifier expects {} features, got {}",
            params.input_dim,
            features.len()
        )));
    }
    let logits = (0..params.outputs)
        .map(|c| {
            let row = &params.weight[c * params.input_dim..(c + 1) * params.input_dim];
            params.bias[c] + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect();
    Ok(predict_from_logits(logits, params.mode))
}

/// Accumulates head gradients for one sample and returns `d(loss)/d(features)`.
pub fn backward(
    features: &[f64],
    params: &ClassifierParams,
    dlogits: &[f64],
    grads: &mut ClassifierParams,
) -> Vec<f64> {
    let f = params.input_dim;
    let mut dfeatures = vec![0.0; f];
    for (c, &g) in dlogits.iter().enumerate() {
        grads.bias[c] += g;
        let row = &params.weight[c * f..(c + 1) * f];
        let grow = &mut grads.weight[c * f..(c + 1) * f];
        for k in 0..f {
            grow[k] += g * features[k];
            dfeatures[k] += g * row[k];
        }
    }
    dfeatures
}

fn check_targets(preds: &[Prediction], targets: &[LabelSet], mode: TaskMode) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument(
            "cross-entropy over an empty batch".into(),
        ));
    }
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (p, t) in preds.iter().zip(targets) {
        let k = p.probabilities.len();
        if t.ids().iter().any(|&id| id >= k) {
            return Err(Error::InvalidArgument(format!(
                "target label outside 0..{k}"
            )));
        }
        if mode == TaskMode::Multiclass && t.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "multiclass targets need exactly one label, got {}",
                t.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: f64,
    /// Per-sample `d(loss)/d(logits)`.
    pub grad_logits: Matrix,
}

pub fn ce_loss(preds: &[Prediction], targets: &[LabelSet], mode: TaskMode) -> Result<f64> {
    ce_loss_with_grad(preds, targets, mode).map(|o| o.loss)
}

/// Multiclass: mean over samples of `-ln p_y`. Multi-label: mean over samples
/// and labels of the binary cross-entropy. Logs are clamped at `1e-12`.
pub fn ce_loss_with_grad(
    preds: &[Prediction],
    targets: &[LabelSet],
    mode: TaskMode,
) -> Result<CrossEntropyOutput> {
    check_targets(preds, targets, mode)?;
    let n = preds.len();
    let k = preds[0].probabilities.len();
    let mut grad_logits = Matrix::zeros(n, k);
    let mut loss = 0.0;
    match mode {
        TaskMode::Multiclass => {
            let scale = 1.0 / n as f64;
            for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
                let y = t.ids()[0];
                let py = p.probabilities[y];
                loss -= py.max(LOG_CLAMP).ln();
                if py >= LOG_CLAMP {
                    let row = grad_logits.row_mut(i);
                    for (c, (g, &pc)) in row.iter_mut().zip(&p.probabilities).enumerate() {
                        *g = scale * (pc - f64::from(u8::from(c == y)));
                    }
                }
            }
            loss *= scale;
        }
        TaskMode::Multilabel => {
            let scale = 1.0 / (n * k) as f64;
            for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
                let row = grad_logits.row_mut(i);
                for (c, &pc) in p.probabilities.iter().enumerate() {
                    if t.contains(c) {
                        loss -= pc.max(LOG_CLAMP).ln();
                        if pc >= LOG_CLAMP {
                            row[c] = scale * (pc - 1.0);
                        }
                    } else {
                        loss -= (1.0 - pc).max(LOG_CLAMP).ln();
                        if 1.0 - pc >= LOG_CLAMP {
                            row[c] = scale * pc;
                        }
                    }
                }
            }
            loss *= scale;
        }
    }
    Ok(CrossEntropyOutput { loss, grad_logits })
}

/// `cl + ce`, unweighted.
pub fn total_loss(contrastive: f64, cross_entropy: f64) -> Result<f64> {
    if !contrastive.is_finite() || !cross_entropy.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite loss term (contrastive {contrastive}, cross-entropy {cross_entropy})"
        )));
    }
    Ok(contrastive + cross_entropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(probabilities: Vec<f64>) -> Prediction {
        Prediction {
            logits: probabilities.iter().map(|p| p.ln()).collect(),
            labels: LabelSet::single(argmax(&probabilities)),
            probabilities,
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let params = ClassifierParams::zeros(TaskMode::Multiclass, 2, 3);
        let p = forward(&[1.0, -2.0, 0.5], &params).unwrap();
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        assert!(forward(&[1.0], &params).is_err());
    }

    #[test]
    fn argmax_picks_large_logit() {
        let p = predict_from_logits(vec![800.0, -3.0], TaskMode::Multiclass);
        assert_eq!(p.labels, LabelSet::single(0));
        assert!(p.probabilities.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hand_computed_head() {
        // W = [[1, 0], [0, 2]], b = [0, -1], f = [0.5, 1] → logits (0.5, 1.0).
        let params = ClassifierParams {
            mode: TaskMode::Multiclass,
            outputs: 2,
            input_dim: 2,
            weight: vec![1.0, 0.0, 0.0, 2.0],
            bias: vec![0.0, -1.0],
        };
        let p = forward(&[0.5, 1.0], &params).unwrap();
        assert_eq!(p.logits, vec![0.5, 1.0]);
        let expected0 = 1.0 / (1.0 + 0.5f64.exp());
        assert!((p.probabilities[0] - expected0).abs() < 1e-15);
        assert_eq!(p.labels, LabelSet::single(1));
    }

    #[test]
    fn multilabel_decisions_use_half() {
        let p = predict_from_logits(vec![2.0, -2.0, 0.1], TaskMode::Multilabel);
        assert_eq!(p.labels, LabelSet::new(vec![0, 2]));
    }

    #[test]
    fn ce_examples() {
        let perfect = vec![pred(vec![1.0, 0.0]), pred(vec![0.0, 1.0])];
        let y = vec![LabelSet::single(0), LabelSet::single(1)];
        assert_eq!(ce_loss(&perfect, &y, TaskMode::Multiclass).unwrap(), 0.0);

        let uniform = vec![pred(vec![0.25; 4])];
        let l = ce_loss(&uniform, &[LabelSet::single(2)], TaskMode::Multiclass).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);

        let preds = vec![pred(vec![0.8, 0.2]), pred(vec![0.4, 0.6])];
        let l = ce_loss(&preds, &y, TaskMode::Multiclass).unwrap();
        assert!((l - 0.36701).abs() < 5e-5);
        assert!((l + 0.5 * (0.8f64.ln() + 0.6f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn ce_rejects_empty_batch() {
        assert!(ce_loss(&[], &[], TaskMode::Multiclass).is_err());
    }

    #[test]
    fn saturated_predictions_stay_finite() {
        let p = vec![pred(vec![1.0, 0.0])];
        let l = ce_loss(&p, &[LabelSet::single(1)], TaskMode::Multiclass).unwrap();
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn multilabel_ce_averages_over_labels() {
        let p = predict_from_logits(vec![0.0, 0.0], TaskMode::Multilabel);
        let l = ce_loss(&[p], &[LabelSet::new(vec![0])], TaskMode::Multilabel).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_sums() {
        assert_eq!(total_loss(0.0, 0.0).unwrap(), 0.0);
        assert!((total_loss(0.5, 0.3).unwrap() - 0.8).abs() < 1e-15);
        assert!(total_loss(f64::NAN, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(logits in proptest::collection::vec(-20.0f64..20.0, 2..6), c in -50.0f64..50.0) {
            let a = predict_from_logits(logits.clone(), TaskMode::Multiclass);
            let b = predict_from_logits(logits.iter().map(|l| l + c).collect(), TaskMode::Multiclass);
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn ce_is_nonnegative(logits in proptest::collection::vec(-30.0f64..30.0, 3), y in 0usize..3) {
            let p = predict_from_logits(logits, TaskMode::Multiclass);
            prop_assert!(ce_loss(&[p], &[LabelSet::single(y)], TaskMode::Multiclass).unwrap() >= 0.0);
        }
    }
}
