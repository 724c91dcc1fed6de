//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{wla, wla_backward, Projection, WlaParams};
use crate::classifier::{ce_loss, ce_loss_with_grad, predict_from_logits};
use crate::contrastive::{
    cosine_similarity, supcon_loss, supcon_loss_with_grad, ContrastiveConfig, MaskMode,
    SimilarityMatrix,
};
use crate::encoder::{Encoder, EncoderConfig, HiddenStates};
use crate::error::Result;
use crate::labels::{LabelSet, TaskMode};
use crate::linalg::Matrix;
use crate::model::{Encoded, Example, Model, ModelConfig};
use crate::params::Parameters;
use crate::perception::PERCEPTION_DIM;
use crate::preprocess::{TokenSequence, CLS_ID, PAD_ID, SEP_ID};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Comparison of one named tensor's analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub len: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`; the plain
    /// difference norm when both gradients are below [`ABSOLUTE_SCALE`].
    pub relative_error: f64,
    pub max_abs_error: f64,
}

/// Relative error between two gradient vectors, as reported in [`GroupError`].
/// Gradient norm below which the absolute error is reported.
pub const ABSOLUTE_SCALE: f64 = 1e-7;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < ABSOLUTE_SCALE {
        diff
    } else {
        diff / scale
    }
}

/// `(f(x + h) − f(x − h)) / 2h` for every coordinate of `x`.
pub fn central_differences(x: &mut [f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(x);
            x[i] = orig - step;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Checks every tensor of `params` whose name passes `select` against
/// central differences of `loss`.
pub fn check_parameters<P: Parameters + Clone>(
    params: &P,
    analytic: &P,
    step: f64,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&P) -> f64,
) -> Vec<GroupError> {
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .tensors()
        .into_iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    let mut out = Vec::new();
    let mut probe = params.clone();
    for (ti, name) in names.iter().enumerate() {
        if !select(name) {
            continue;
        }
        let len = grads[ti].len();
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let orig = probe.tensors()[ti].1[k];
            let mut eval = |v: f64| {
                probe.tensors_mut()[ti].1[k] = v;
                loss(&probe)
            };
            let plus = eval(orig + step);
            let minus = eval(orig - step);
            probe.tensors_mut()[ti].1[k] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let max_abs_error = grads[ti]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        out.push(GroupError {
            name: name.clone(),
            len,
            relative_error: relative_error(&grads[ti], &numeric),
            max_abs_error,
        });
    }
    out
}

/// Results of one finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub groups: Vec<GroupError>,
}

impl SuiteReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.relative_error)
            .fold(0.0, f64::max)
    }
}

/// Flat tensors under test for the component-level suites.
#[derive(Debug, Clone)]
struct Probe {
    tensors: Vec<(&'static str, Vec<f64>)>,
}

impl Parameters for Probe {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.tensors
            .iter()
            .map(|(n, t)| (n.to_string(), &t[..]))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.tensors
            .iter_mut()
            .map(|(n, t)| (n.to_string(), &mut t[..]))
            .collect()
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(a, b)| a * b).sum()
}

fn encoder_suite(rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let cfg = EncoderConfig {
        vocab_size: 7,
        hidden_dim: 6,
        layers: 2,
        heads: 2,
        ffn_dim: 5,
        max_len: 6,
        dropout: 0.0,
    };
    let encoder = Encoder::new(cfg, rng)?;
    let tokens = TokenSequence::from_parts(
        vec![CLS_ID, 4, 6, 5, SEP_ID, PAD_ID],
        vec![1, 1, 1, 1, 1, 0],
    )?;
    let weights = random_vec(rng, 6 * 6, 1.0);
    let (_, cache) = encoder.forward(&tokens, None)?;
    let mut grads = encoder.clone();
    grads.zero();
    encoder.backward(&cache, &Matrix::from_vec(6, 6, weights.clone()), &mut grads);
    let groups = check_parameters(
        &encoder,
        &grads,
        DEFAULT_STEP,
        |_| true,
        |e| {
            let h = e.encode(&tokens).expect("valid tokens");
            weighted_sum(&weights, &h.states.data)
        },
    );
    Ok(SuiteReport {
        suite: "encoder",
        groups,
    })
}

fn wla_suite(rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let (n, d) = (5, 4);
    let params = WlaParams::new(d, true, rng);
    let mask = vec![1, 1, 1, 1, 0];
    let hidden = random_vec(rng, n * d, 1.0);
    let weights = random_vec(rng, d, 1.0);
    let proj = params.projection.clone().expect("projection enabled");
    let probe = Probe {
        tensors: vec![
            ("context", params.context.clone()),
            ("proj_weight", proj.weight),
            ("proj_bias", proj.bias),
            ("hidden", hidden.clone()),
        ],
    };
    let unpack = |p: &Probe| -> (WlaParams, HiddenStates) {
        let t = &p.tensors;
        let wp = WlaParams {
            context: t[0].1.clone(),
            projection: Some(Projection {
                weight: t[1].1.clone(),
                bias: t[2].1.clone(),
            }),
        };
        let h =
            HiddenStates::new(Matrix::from_vec(n, d, t[3].1.clone()), mask.clone()).expect("shape");
        (wp, h)
    };
    let (wp, h) = unpack(&probe);
    let out = wla(&h, &wp)?;
    let mut g = wp.clone();
    g.zero();
    let dh = wla_backward(&h, &wp, &out, &weights, &mut g);
    let gp = g.projection.expect("projection enabled");
    let analytic = Probe {
        tensors: vec![
            ("context", g.context),
            ("proj_weight", gp.weight),
            ("proj_bias", gp.bias),
            ("hidden", dh.data),
        ],
    };
    let groups = check_parameters(
        &probe,
        &analytic,
        DEFAULT_STEP,
        |_| true,
        |p| {
            let (wp, h) = unpack(p);
            weighted_sum(&weights, &wla(&h, &wp).expect("unmasked rows").features)
        },
    );
    Ok(SuiteReport {
        suite: "word-attention",
        groups,
    })
}

fn contrastive_suite(rng: &mut ChaCha8Rng, mode: MaskMode) -> Result<SuiteReport> {
    let (b, dim) = (5, 6);
    let labels: Vec<LabelSet> = [0, 0, 1, 1, 0]
        .iter()
        .map(|&l| LabelSet::single(l))
        .collect();
    let z = random_vec(rng, b * dim, 1.0);
    let rows = |flat: &[f64]| -> Vec<Vec<f64>> { flat.chunks(dim).map(<[f64]>::to_vec).collect() };
    // Centre the threshold on the same-label similarities so the soft mask
    // has a non-trivial slope.
    let sim = SimilarityMatrix::compute(&rows(&z));
    let threshold = (sim.get(0, 1) + sim.get(0, 4) + sim.get(2, 3)) / 3.0;
    let cfg = ContrastiveConfig {
        temperature: 0.5,
        threshold: threshold.clamp(-0.95, 0.95),
        soft_width: 0.2,
        mode,
        ..Default::default()
    };
    let out = supcon_loss_with_grad(&rows(&z), &labels, &cfg)?;
    let probe = Probe {
        tensors: vec![("z", z), ("threshold", vec![cfg.threshold])],
    };
    let analytic = Probe {
        tensors: vec![
            ("z", out.grad_z.data),
            ("threshold", vec![out.grad_threshold]),
        ],
    };
    let select = |n: &str| n == "z" || mode == MaskMode::Soft;
    let groups = check_parameters(&probe, &analytic, DEFAULT_STEP, select, |p| {
        let c = ContrastiveConfig {
            threshold: p.tensors[1].1[0],
            ..cfg
        };
        supcon_loss(&rows(&p.tensors[0].1), &labels, &c).expect("valid batch")
    });
    Ok(SuiteReport {
        suite: match mode {
            MaskMode::Hard => "contrastive-hard",
            MaskMode::Soft => "contrastive-soft",
        },
        groups,
    })
}

fn cross_entropy_suite(rng: &mut ChaCha8Rng, mode: TaskMode) -> Result<SuiteReport> {
    let (n, k) = (4, 3);
    let logits = random_vec(rng, n * k, 2.0);
    let targets: Vec<LabelSet> = match mode {
        TaskMode::Multiclass => (0..n).map(|i| LabelSet::single(i % k)).collect(),
        TaskMode::Multilabel => vec![
            LabelSet::new(vec![0, 2]),
            LabelSet::new(vec![1]),
            LabelSet::new(vec![]),
            LabelSet::new(vec![0, 1, 2]),
        ],
    };
    let preds = |flat: &[f64]| -> Vec<_> {
        flat.chunks(k)
            .map(|l| predict_from_logits(l.to_vec(), mode))
            .collect()
    };
    let out = ce_loss_with_grad(&preds(&logits), &targets, mode)?;
    let probe = Probe {
        tensors: vec![("logits", logits)],
    };
    let analytic = Probe {
        tensors: vec![("logits", out.grad_logits.data)],
    };
    let groups = check_parameters(
        &probe,
        &analytic,
        DEFAULT_STEP,
        |_| true,
        |p| ce_loss(&preds(&p.tensors[0].1), &targets, mode).expect("valid batch"),
    );
    Ok(SuiteReport {
        suite: match mode {
            TaskMode::Multiclass => "cross-entropy",
            TaskMode::Multilabel => "binary-cross-entropy",
        },
        groups,
    })
}

/// The tiny end-to-end model used by the joint-loss check: d = 4, X = 4, B = 3.
pub fn tiny_model_batch(seed: u64, projection: bool) -> Result<(Model, Vec<Example>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        encoder: EncoderConfig {
            vocab_size: 8,
            hidden_dim: 4,
            layers: 2,
            heads: 2,
            ffn_dim: 6,
            max_len: 4,
            dropout: 0.0,
        },
        task: TaskMode::Multiclass,
        num_labels: 2,
        contrastive: ContrastiveConfig {
            temperature: 0.5,
            soft_width: 0.2,
            ..Default::default()
        },
        use_contrastive: true,
        use_wla: true,
        wla_projection: projection,
    };
    let mut model = Model::new(config, seed)?;
    let inputs = [
        (vec![CLS_ID, 4, 5, SEP_ID], vec![1, 1, 1, 1], 0),
        (vec![CLS_ID, 6, SEP_ID, PAD_ID], vec![1, 1, 1, 0], 0),
        (vec![CLS_ID, 7, 4, SEP_ID], vec![1, 1, 1, 1], 0),
    ];
    let examples = inputs
        .into_iter()
        .enumerate()
        .map(|(i, (ids, mask, label))| {
            let mut perception = [0.0; PERCEPTION_DIM];
            for p in perception.iter_mut() {
                *p = rng.gen_range(0.0..1.0);
            }
            Ok(Example {
                id: format!("g{i}"),
                input: Encoded::Tokens(TokenSequence::from_parts(ids, mask)?),
                perception,
                labels: LabelSet::single(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Shared label: every anchor has two positives. θ sits at their mean similarity.
    let z = examples
        .iter()
        .map(|e| model.representation(e))
        .collect::<Result<Vec<_>>>()?;
    let mean_sim = (cosine_similarity(&z[0], &z[1])
        + cosine_similarity(&z[0], &z[2])
        + cosine_similarity(&z[1], &z[2]))
        / 3.0;
    model.params.threshold[0] = mean_sim.clamp(-0.95, 0.95);
    Ok((model, examples))
}

fn end_to_end_suite(seed: u64, projection: bool) -> Result<SuiteReport> {
    let (model, examples) = tiny_model_batch(seed, projection)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let out = model.batch_loss_and_grad(&batch, None)?;
    let groups = check_parameters(
        &model.params,
        &out.grads,
        DEFAULT_STEP,
        |_| true,
        |p| {
            let m = Model {
                params: p.clone(),
                ..model.clone()
            };
            m.batch_loss(&batch).expect("valid batch")
        },
    );
    Ok(SuiteReport {
        suite: if projection {
            "end-to-end-projected"
        } else {
            "end-to-end"
        },
        groups,
    })
}

/// Every finite-difference suite, on small fixed-seed configurations.
pub fn run_default_suite(seed: u64) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        encoder_suite(&mut rng)?,
        wla_suite(&mut rng)?,
        contrastive_suite(&mut rng, MaskMode::Hard)?,
        contrastive_suite(&mut rng, MaskMode::Soft)?,
        cross_entropy_suite(&mut rng, TaskMode::Multiclass)?,
        cross_entropy_suite(&mut rng, TaskMode::Multilabel)?,
        end_to_end_suite(seed, false)?,
        end_to_end_suite(seed, true)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_of_a_cubic() {
        let mut x = vec![1.0, -2.0];
        let g = central_differences(&mut x, 1e-5, |v| v[0].powi(3) + 2.0 * v[1]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn default_suite_passes() {
        for report in run_default_suite(7).unwrap() {
            for g in &report.groups {
                assert!(
                    g.relative_error < DEFAULT_TOLERANCE,
                    "{}: {} relative error {:e}",
                    report.suite,
                    g.name,
                    g.relative_error
                );
            }
        }
    }

    #[test]
    fn relative_error_handles_zero_gradients() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-12);
    }
}
