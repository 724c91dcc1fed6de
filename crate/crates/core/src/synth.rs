//! Seeded synthetic corpora with class-specific signal vocabularies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::TaskMode;
use crate::preprocess::RawPost;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub labels: Vec<String>,
    pub mode: TaskMode,
    /// Distinct signal words per label; label vocabularies never overlap.
    pub signal_vocab: usize,
    /// Shared noise words.
    pub noise_vocab: usize,
    pub samples_per_label: usize,
    pub tokens_per_sample: usize,
    pub noise_ratio: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn binary(samples_per_label: usize, noise_ratio: f64, seed: u64) -> Self {
        Self {
            labels: vec!["class0".into(), "class1".into()],
            mode: TaskMode::Multiclass,
            signal_vocab: 12,
            noise_vocab: 24,
            samples_per_label,
            tokens_per_sample: 12,
            noise_ratio,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.labels.is_empty() {
            return fail("at least one label is required");
        }
        if self.mode == TaskMode::Multiclass && self.labels.len() < 2 {
            return fail("multiclass data needs at least two labels");
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return fail("noise ratio must lie in [0, 1)");
        }
        if self.signal_vocab == 0 || self.tokens_per_sample == 0 || self.samples_per_label == 0 {
            return fail(
                "signal vocabulary, tokens per sample and samples per label must be positive",
            );
        }
        if self.noise_ratio > 0.0 && self.noise_vocab == 0 {
            return fail("noise ratio > 0 needs a noise vocabulary");
        }
        let mut names = self.labels.clone();
        names.sort();
        names.dedup();
        if names.len() != self.labels.len() {
            return fail("label names must be distinct");
        }
        Ok(())
    }

    /// Signal word `k` of label `c`.
    pub fn signal_word(c: usize, k: usize) -> String {
        format!("sig{c}w{k}")
    }

    pub fn noise_word(k: usize) -> String {
        format!("noise{k}")
    }

    /// Number of signal tokens per sample: `round((1 − noise) · tokens)`, at least 1.
    pub fn signal_tokens(&self) -> usize {
        (((1.0 - self.noise_ratio) * self.tokens_per_sample as f64).round() as usize)
            .clamp(1, self.tokens_per_sample)
    }
}

/// Generates `labels × samples_per_label` posts in shuffled order.
///
/// In multi-label mode each sample keeps its primary label and adds a second
/// one with probability ½; signal tokens are spread round-robin over its labels.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<RawPost>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_signal = spec.signal_tokens();
    let mut posts = Vec::with_capacity(spec.labels.len() * spec.samples_per_label);
    for c in 0..spec.labels.len() {
        for _ in 0..spec.samples_per_label {
            let mut label_ids = vec![c];
            if spec.mode == TaskMode::Multilabel && spec.labels.len() > 1 && rng.gen_bool(0.5) {
                let mut other = rng.gen_range(0..spec.labels.len() - 1);
                if other >= c {
                    other += 1;
                }
                label_ids.push(other);
            }
            let mut words: Vec<String> = (0..spec.tokens_per_sample)
                .map(|t| {
                    if t < n_signal {
                        let label = label_ids[t % label_ids.len()];
                        SynthSpec::signal_word(label, rng.gen_range(0..spec.signal_vocab))
                    } else {
                        SynthSpec::noise_word(rng.gen_range(0..spec.noise_vocab))
                    }
                })
                .collect();
            words.shuffle(&mut rng);
            label_ids.sort_unstable();
            posts.push(RawPost {
                id: String::new(),
                text: words.join(" "),
                labels: label_ids.iter().map(|&l| spec.labels[l].clone()).collect(),
            });
        }
    }
    posts.shuffle(&mut rng);
    for (i, p) in posts.iter_mut().enumerate() {
        p.id = format!("syn-{i:05}");
    }
    Ok(posts)
}
