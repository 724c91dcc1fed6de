//! Training loop, optimizers, evaluation and the threshold sweep.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{ContrastiveConfig, MaskMode};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, TaskMode};
use crate::metrics::{evaluate_predictions, MetricsReport};
use crate::model::{Example, Model, ModelConfig, ModelParams};
use crate::params::Parameters;
use crate::perception::PERCEPTION_DIM;
use crate::preprocess::DEFAULT_MAX_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub task: TaskMode,
    pub contrastive: ContrastiveConfig,
    pub use_contrastive: bool,
    pub use_wla: bool,
    pub wla_projection: bool,
    pub standardize_features: bool,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            task: TaskMode::Multiclass,
            contrastive: ContrastiveConfig::default(),
            use_contrastive: true,
            use_wla: true,
            wla_projection: false,
            standardize_features: false,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            max_len: DEFAULT_MAX_LEN,
            dropout: 0.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "invalid boolean `{value}` for `{key}`"
        ))),
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are ignored.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("config line {}: expected `key = value`", i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        out.push((k.to_string(), v.trim_matches('"').to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    /// Recognized configuration keys.
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "batch_size",
        "learning_rate",
        "seed",
        "optimizer",
        "task",
        "temperature",
        "threshold",
        "soft_width",
        "mode",
        "use_contrastive",
        "use_wla",
        "wla_projection",
        "standardize_features",
        "hidden_dim",
        "layers",
        "heads",
        "ffn_dim",
        "max_len",
        "dropout",
    ];

    /// Sets one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "task" => self.task = value.parse()?,
            "temperature" | "tau" => self.contrastive.temperature = parse(key, value)?,
            "threshold" | "theta" => self.contrastive.threshold = parse(key, value)?,
            "soft_width" | "beta" => self.contrastive.soft_width = parse(key, value)?,
            "mode" => self.contrastive.mode = value.parse()?,
            "use_contrastive" => self.use_contrastive = parse_bool(key, value)?,
            "use_wla" => self.use_wla = parse_bool(key, value)?,
            "wla_projection" => self.wla_projection = parse_bool(key, value)?,
            "standardize_features" => self.standardize_features = parse_bool(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("invalid learning rate {}", self.learning_rate));
        }
        self.contrastive.validate()
    }

    pub fn model_config(&self, vocab_size: usize, num_labels: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                hidden_dim: self.hidden_dim,
                layers: self.layers,
                heads: self.heads,
                ffn_dim: self.ffn_dim,
                max_len: self.max_len,
                dropout: self.dropout,
            },
            task: self.task,
            num_labels,
            contrastive: self.contrastive,
            use_contrastive: self.use_contrastive,
            use_wla: self.use_wla,
            wla_projection: self.wla_projection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub batch_size: usize,
    pub ce_loss: f64,
    pub cl_loss: f64,
    pub total_loss: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// CSV with header `epoch,ce_loss,cl_loss,total_loss,train_acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,ce_loss,cl_loss,total_loss,train_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.ce_loss, e.cl_loss, e.total_loss, e.train_acc
            );
        }
        s
    }

    /// CSV with header `epoch,step,batch_size,ce_loss,cl_loss,total_loss,threshold`.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("epoch,step,batch_size,ce_loss,cl_loss,total_loss,threshold\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, r.step, r.batch_size, r.ce_loss, r.cl_loss, r.total_loss, r.threshold
            );
        }
        s
    }
}

enum Optimizer {
    Sgd,
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: i32,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params
                    .tensors()
                    .iter()
                    .map(|(_, t)| vec![0.0; t.len()])
                    .collect();
                Optimizer::Adam {
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                }
            }
        }
    }

    fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
        train_threshold: bool,
    ) {
        let grads = grads.tensors();
        if let Optimizer::Adam { t, .. } = self {
            *t += 1;
        }
        for (ti, ((name, p), (_, g))) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            if name == "threshold" && !train_threshold {
                continue;
            }
            match self {
                Optimizer::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                }
                Optimizer::Adam { m, v, t } => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(*t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(*t);
                    for (k, (pv, gv)) in p.iter_mut().zip(g).enumerate() {
                        let mk = &mut m[ti][k];
                        let vk = &mut v[ti][k];
                        *mk = ADAM_BETA1 * *mk + (1.0 - ADAM_BETA1) * gv;
                        *vk = ADAM_BETA2 * *vk + (1.0 - ADAM_BETA2) * gv * gv;
                        *pv -= lr * (*mk / bc1) / ((*vk / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        params.threshold[0] = params.threshold[0].clamp(-1.0, 1.0);
    }
}

/// Splits `0..n` (already shuffled) into batches of `size`; a trailing
/// single sample is folded into the previous batch.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

fn feature_statistics(examples: &[Example]) -> Vec<(f64, f64)> {
    let n = examples.len() as f64;
    (0..PERCEPTION_DIM)
        .map(|k| {
            let mean = examples.iter().map(|e| e.perception[k]).sum::<f64>() / n;
            let var = examples
                .iter()
                .map(|e| (e.perception[k] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Trains a fresh model. Deterministic for a fixed config and data order.
pub fn train(
    examples: &[Example],
    label_map: &LabelMap,
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_config = cfg.model_config(vocab_size, label_map.len());
    let model = Model::new(model_config, cfg.seed)?;
    train_model(model, examples, cfg)
}

/// Continues training `model` with the optimizer settings of `cfg`.
pub fn train_model(
    mut model: Model,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.len() < 2 {
        return Err(Error::InvalidData(format!(
            "training needs at least 2 samples, got {}",
            examples.len()
        )));
    }
    let k = model.config.num_labels;
    if let Some(ex) = examples
        .iter()
        .find(|e| e.labels.ids().iter().any(|&l| l >= k))
    {
        return Err(Error::InvalidData(format!(
            "sample `{}` has a label outside the label map",
            ex.id
        )));
    }
    if cfg.standardize_features && model.feature_scaling.is_none() {
        model.feature_scaling = Some(feature_statistics(examples));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg.optimizer, &model.params);
    let train_threshold =
        model.config.use_contrastive && model.config.contrastive.mode == MaskMode::Soft;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let batches = make_batches(&order, cfg.batch_size);
        let (mut ce_sum, mut cl_sum, mut total_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let out = model
                .batch_loss_and_grad(&batch, Some(&mut rng))
                .map_err(|e| match e {
                    Error::InvalidArgument(m) if m.starts_with("non-finite") => Error::Divergence {
                        what: "loss",
                        epoch,
                        step,
                    },
                    other => other,
                })?;
            if !out.total_loss.is_finite() {
                return Err(Error::Divergence {
                    what: "loss",
                    epoch,
                    step,
                });
            }
            if out
                .grads
                .tensors()
                .iter()
                .any(|(_, t)| t.iter().any(|g| !g.is_finite()))
            {
                return Err(Error::Divergence {
                    what: "gradient",
                    epoch,
                    step,
                });
            }
            correct += out
                .predictions
                .iter()
                .zip(&batch)
                .filter(|(p, ex)| p.labels == ex.labels)
                .count();
            ce_sum += out.ce_loss;
            cl_sum += out.cl_loss;
            total_sum += out.total_loss;
            log.steps.push(StepRecord {
                epoch,
                step,
                batch_size: batch.len(),
                ce_loss: out.ce_loss,
                cl_loss: out.cl_loss,
                total_loss: out.total_loss,
                threshold: model.threshold(),
            });
            optimizer.step(
                &mut model.params,
                &out.grads,
                cfg.learning_rate,
                train_threshold,
            );
        }
        let nb = batches.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            ce_loss: ce_sum / nb,
            cl_loss: cl_sum / nb,
            total_loss: total_sum / nb,
            train_acc: correct as f64 / examples.len() as f64,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Evaluation-mode metrics of `model` over `examples`.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    label_map: &LabelMap,
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::InvalidData(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let predicted = examples
        .iter()
        .map(|e| model.predict(e).map(|p| p.labels))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = examples.iter().map(|e| e.labels.clone()).collect();
    Ok(evaluate_predictions(
        &truth,
        &predicted,
        label_map.names(),
        model.config.task,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
}

/// The grid used when none is given: 0.5, 0.6, …, 1.0.
pub const DEFAULT_THETA_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Trains one hard-threshold model per grid value and evaluates it.
pub fn threshold_sweep(
    train_set: &[Example],
    eval_set: &[Example],
    label_map: &LabelMap,
    vocab_size: usize,
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<Vec<(SweepRow, TrainLog)>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    grid.iter()
        .map(|&theta| {
            let mut run = cfg.clone();
            run.use_contrastive = true;
            run.contrastive.mode = MaskMode::Hard;
            run.contrastive.threshold = theta;
            let outcome = train(train_set, label_map, vocab_size, &run)?;
            let report = evaluate(&outcome.model, eval_set, label_map)?;
            Ok((
                SweepRow {
                    theta,
                    accuracy: report.accuracy,
                    precision: report.macro_precision,
                    recall: report.macro_recall,
                    macro_f1: report.macro_f1,
                },
                outcome.log,
            ))
        })
        .collect()
}

/// CSV with header `theta,accuracy,precision,recall,macro_f1`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("theta,accuracy,precision,recall,macro_f1\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.theta, r.accuracy, r.precision, r.recall, r.macro_f1
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_fold_a_trailing_single() {
        let order: Vec<usize> = (0..9).collect();
        let b = make_batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = make_batches(&order, 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        let b = make_batches(&(0..10).collect::<Vec<_>>(), 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn key_value_config() {
        let kv =
            parse_key_values("# comment\nepochs = 3\nmode = hard # inline\n\nlr=0.01\n").unwrap();
        let mut cfg = TrainConfig::default();
        for (k, v) in &kv {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.contrastive.mode, MaskMode::Hard);
        assert_eq!(cfg.learning_rate, 0.01);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("epochs", "many").is_err());
        assert!(parse_key_values("no equals sign").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 2;
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let map = LabelMap::new(TaskMode::Multiclass, ["a", "b"]).unwrap();
        let cfg = TrainConfig::default();
        assert!(threshold_sweep(&[], &[], &map, 10, &cfg, &[]).is_err());
        assert!(threshold_sweep(&[], &[], &map, 10, &cfg, &[1.5]).is_err());
    }
}
