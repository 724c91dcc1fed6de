//! The full classifier: encoder, word-level attention, `[CLS]` fusion,
//! perception features and the linear head, trained on the joint loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{augment, wla, wla_backward, WlaOutput, WlaParams};
use crate::classifier::{self, ce_loss_with_grad, total_loss, ClassifierParams, Prediction};
use crate::contrastive::{supcon_loss_with_grad, ContrastiveConfig, MaskMode};
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, HiddenStates};
use crate::error::{Error, Result};
use crate::labels::{LabelSet, TaskMode};
use crate::linalg::Matrix;
use crate::params::{prefixed, prefixed_mut, Parameters};
use crate::perception::PERCEPTION_DIM;
use crate::preprocess::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub task: TaskMode,
    pub num_labels: usize,
    pub contrastive: ContrastiveConfig,
    /// Include the contrastive term in the objective.
    pub use_contrastive: bool,
    /// Concatenate the word-level attention vector to `[CLS]`.
    pub use_wla: bool,
    /// Score positions through `tanh(W·h + b)` before the context vector.
    pub wla_projection: bool,
}

impl ModelConfig {
    pub fn representation_dim(&self) -> usize {
        let d = self.encoder.hidden_dim;
        if self.use_wla {
            2 * d
        } else {
            d
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.representation_dim() + PERCEPTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.contrastive.validate()?;
        if self.num_labels == 0 {
            return Err(Error::InvalidArgument(
                "at least one label is required".into(),
            ));
        }
        if self.task == TaskMode::Multiclass && self.num_labels < 2 {
            return Err(Error::InvalidArgument(
                "multiclass needs at least two classes".into(),
            ));
        }
        Ok(())
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub wla: WlaParams,
    pub head: ClassifierParams,
    /// Similarity threshold θ, stored as a one-element tensor.
    pub threshold: Vec<f64>,
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = prefixed("encoder", self.encoder.tensors());
        out.extend(prefixed("wla", self.wla.tensors()));
        out.extend(prefixed("head", self.head.tensors()));
        out.push(("threshold".into(), &self.threshold[..]));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut("encoder", self.encoder.tensors_mut());
        out.extend(prefixed_mut("wla", self.wla.tensors_mut()));
        out.extend(prefixed_mut("head", self.head.tensors_mut()));
        out.push(("threshold".into(), &mut self.threshold[..]));
        out
    }
}

/// What feeds the representation: token ids for the encoder, or hidden
/// states computed elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Tokens(TokenSequence),
    Hidden(HiddenStates),
}

/// One fully prepared sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: Encoded,
    pub perception: [f64; PERCEPTION_DIM],
    pub labels: LabelSet,
}

struct SampleForward {
    hidden: HiddenStates,
    encoder_cache: Option<EncoderCache>,
    wla: Option<WlaOutput>,
    representation: Vec<f64>,
    fused: Vec<f64>,
    prediction: Prediction,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub ce_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub predictions: Vec<Prediction>,
    pub grads: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Optional per-feature `(mean, std)` applied to the perception vector.
    pub feature_scaling: Option<Vec<(f64, f64)>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config.encoder.clone(), &mut rng)?;
        let wla = WlaParams::new(config.encoder.hidden_dim, config.wla_projection, &mut rng);
        let head =
            ClassifierParams::new(config.task, config.num_labels, config.fused_dim(), &mut rng);
        let threshold = vec![config.contrastive.threshold];
        Ok(Self {
            config,
            params: ModelParams {
                encoder,
                wla,
                head,
                threshold,
            },
            feature_scaling: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.params.threshold[0]
    }

    /// Contrastive settings with the current (possibly learned) threshold.
    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            threshold: self.threshold(),
            ..self.config.contrastive
        }
    }

    pub fn zero_grads(&self) -> ModelParams {
        let mut g = self.params.clone();
        g.zero();
        g
    }

    fn scaled_perception(&self, raw: &[f64; PERCEPTION_DIM]) -> Vec<f64> {
        match &self.feature_scaling {
            None => raw.to_vec(),
            Some(stats) => raw
                .iter()
                .zip(stats)
                .map(|(x, (mean, std))| (x - mean) / std)
                .collect(),
        }
    }

    fn forward_sample(&self, ex: &Example, rng: Option<&mut ChaCha8Rng>) -> Result<SampleForward> {
        let (hidden, encoder_cache) = match &ex.input {
            Encoded::Tokens(t) => {
                let (h, c) = self.params.encoder.forward(t, rng)?;
                (h, Some(c))
            }
            Encoded::Hidden(h) => {
                let d = self.config.encoder.hidden_dim;
                if h.hidden_dim() != d {
                    return Err(Error::Shape(format!(
                        "precomputed states have dim {} but the model expects {d}",
                        h.hidden_dim()
                    )));
                }
                (h.clone(), None)
            }
        };
        let cls = hidden.cls().to_vec();
        let (wla_out, representation) = if self.config.use_wla {
            let out = wla(&hidden, &self.params.wla)?;
            let z = augment(&cls, &out.features)?.0;
            (Some(out), z)
        } else {
            (None, cls)
        };
        let mut fused = representation.clone();
        fused.extend(self.scaled_perception(&ex.perception));
        let prediction = classifier::forward(&fused, &self.params.head)?;
        Ok(SampleForward {
            hidden,
            encoder_cache,
            wla: wla_out,
            representation,
            fused,
            prediction,
        })
    }

    /// Evaluation-mode prediction for one sample.
    pub fn predict(&self, ex: &Example) -> Result<Prediction> {
        self.forward_sample(ex, None).map(|f| f.prediction)
    }

    /// The representation used by the contrastive loss (`cls ‖ wla`).
    pub fn representation(&self, ex: &Example) -> Result<Vec<f64>> {
        self.forward_sample(ex, None).map(|f| f.representation)
    }

    /// Joint loss and gradients of every parameter for one batch.
    ///
    /// Passing an RNG enables dropout (when configured). The threshold
    /// receives a gradient only in soft mode.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[&Example],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchOutput> {
        let forwards = batch
            .iter()
            .map(|ex| self.forward_sample(ex, rng.as_deref_mut()))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<LabelSet> = batch.iter().map(|ex| ex.labels.clone()).collect();
        let predictions: Vec<Prediction> = forwards.iter().map(|f| f.prediction.clone()).collect();
        let ce = ce_loss_with_grad(&predictions, &labels, self.config.task)?;

        let zdim = self.config.representation_dim();
        let cl = if self.config.use_contrastive {
            let z: Vec<Vec<f64>> = forwards.iter().map(|f| f.representation.clone()).collect();
            Some(supcon_loss_with_grad(
                &z,
                &labels,
                &self.contrastive_config(),
            )?)
        } else {
            None
        };
        let cl_loss = cl.as_ref().map_or(0.0, |c| c.loss);
        let total = total_loss(cl_loss, ce.loss)?;

        let mut grads = self.zero_grads();
        let d = self.config.encoder.hidden_dim;
        for (i, f) in forwards.iter().enumerate() {
            let dfused = classifier::backward(
                &f.fused,
                &self.params.head,
                ce.grad_logits.row(i),
                &mut grads.head,
            );
            let mut dz = dfused[..zdim].to_vec();
            if let Some(cl) = &cl {
                for (a, b) in dz.iter_mut().zip(cl.grad_z.row(i)) {
                    *a += b;
                }
            }
            let mut dh = match &f.wla {
                Some(out) => {
                    wla_backward(&f.hidden, &self.params.wla, out, &dz[d..], &mut grads.wla)
                }
                None => Matrix::zeros(f.hidden.len(), d),
            };
            for (a, b) in dh.row_mut(0).iter_mut().zip(&dz[..d]) {
                *a += b;
            }
            if let Some(cache) = &f.encoder_cache {
                self.params.encoder.backward(cache, &dh, &mut grads.encoder);
            }
        }
        if let (Some(cl), MaskMode::Soft) = (&cl, self.config.contrastive.mode) {
            grads.threshold[0] = cl.grad_threshold;
        }

        Ok(BatchOutput {
            ce_loss: ce.loss,
            cl_loss,
            total_loss: total,
            predictions,
            grads,
        })
    }

    /// Evaluation-mode joint loss, without gradients.
    pub fn batch_loss(&self, batch: &[&Example]) -> Result<f64> {
        self.batch_loss_and_grad(batch, None).map(|o| o.total_loss)
    }
}
