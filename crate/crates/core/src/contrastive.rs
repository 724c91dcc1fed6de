//! Supervised contrastive loss with a similarity-thresholded positive set.
//!
//! For anchor `i`, a same-label sample `p` counts as a positive only when
//! `cos(z_i, z_p) > θ` (hard mode). Soft mode replaces the indicator with
//! `σ((cos − θ) / β)`, which makes the threshold trainable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSet;
use crate::linalg::{dot, norm, sigmoid, Matrix};

/// Vectors with a smaller norm are treated as zero (cosine 0 with everything).
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Hard,
    #[default]
    Soft,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(MaskMode::Hard),
            "soft" => Ok(MaskMode::Soft),
            other => Err(Error::InvalidArgument(format!(
                "unknown mask mode `{other}`"
            ))),
        }
    }
}

/// When two samples count as "same label".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum PositiveRule {
    /// Label sets must be identical.
    #[default]
    Exact,
    /// Label sets with Jaccard overlap of at least `min_overlap`.
    Jaccard { min_overlap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub threshold: f64,
    pub soft_width: f64,
    pub mode: MaskMode,
    #[serde(default)]
    pub positive_rule: PositiveRule,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            threshold: 0.7,
            soft_width: 0.05,
            mode: MaskMode::Soft,
            positive_rule: PositiveRule::Exact,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.soft_width > 0.0 && self.soft_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "soft width must be > 0, got {}",
                self.soft_width
            )));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [-1, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `z_i · z_j / (‖z_i‖ ‖z_j‖)`, or 0 when either vector is (numerically) zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Symmetric 0/1 matrix; entry `(i, j)` is 1 when the samples share a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMaskMatrix {
    size: usize,
    entries: Vec<u8>,
}

impl LabelMaskMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.size + j] == 1
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.entries.chunks(self.size).map(<[u8]>::to_vec).collect()
    }
}

pub fn label_mask(labels: &[LabelSet], rule: PositiveRule) -> LabelMaskMatrix {
    let b = labels.len();
    let mut entries = vec![0u8; b * b];
    for i in 0..b {
        for j in 0..b {
            let same = i == j
                || match rule {
                    PositiveRule::Exact => labels[i] == labels[j],
                    PositiveRule::Jaccard { min_overlap } => {
                        labels[i].jaccard(&labels[j]) >= min_overlap
                    }
                };
            entries[i * b + j] = u8::from(same);
        }
    }
    LabelMaskMatrix { size: b, entries }
}

/// Pairwise cosine similarities; the diagonal is 1 for nonzero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Matrix);

impl SimilarityMatrix {
    pub fn compute(z: &[Vec<f64>]) -> Self {
        let units = unit_vectors(z);
        let b = z.len();
        let mut m = Matrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                let s = match (&units[i], &units[j]) {
                    (Some(_), Some(_)) if i == j => 1.0,
                    (Some((ui, _)), Some((uj, _))) => dot(ui, uj).clamp(-1.0, 1.0),
                    _ => 0.0,
                };
                m.set(i, j, s);
            }
        }
        Self(m)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

fn unit_vectors(z: &[Vec<f64>]) -> Vec<Option<(Vec<f64>, f64)>> {
    z.iter()
        .map(|v| {
            let n = norm(v);
            (n >= ZERO_NORM).then(|| (v.iter().map(|x| x / n).collect(), n))
        })
        .collect()
}

/// Positive-pair weights: `lm · 1[sim > θ]` (hard) or `lm · σ((sim − θ)/β)`
/// (soft), with a zero diagonal.
pub fn adaptive_positive_weights(
    sim: &SimilarityMatrix,
    lm: &LabelMaskMatrix,
    cfg: &ContrastiveConfig,
) -> Result<Matrix> {
    let b = lm.size();
    if sim.0.rows != b || sim.0.cols != b {
        return Err(Error::Shape(format!(
            "similarity matrix is {}×{} but label mask is {b}×{b}",
            sim.0.rows, sim.0.cols
        )));
    }
    let mut w = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            if i == j || !lm.get(i, j) {
                continue;
            }
            let s = sim.get(i, j);
            let v = match cfg.mode {
                MaskMode::Hard => f64::from(u8::from(s > cfg.threshold)),
                MaskMode::Soft => sigmoid((s - cfg.threshold) / cfg.soft_width),
            };
            w.set(i, j, v);
        }
    }
    Ok(w)
}

/// Loss value with gradients w.r.t. every representation and the threshold.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// `B × dim`, same layout as the input representations.
    pub grad_z: Matrix,
    /// Zero in hard mode.
    pub grad_threshold: f64,
}

fn check_batch(z: &[Vec<f64>], labels: &[LabelSet]) -> Result<()> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs a batch of at least 2, got {}",
            z.len()
        )));
    }
    if z.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} representations but {} labels",
            z.len(),
            labels.len()
        )));
    }
    let dim = z[0].len();
    if z.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("representations differ in length".into()));
    }
    Ok(())
}

pub fn supcon_loss(z: &[Vec<f64>], labels: &[LabelSet], cfg: &ContrastiveConfig) -> Result<f64> {
    supcon_loss_with_grad(z, labels, cfg).map(|o| o.loss)
}

/// Sum over anchors of the weighted mean negative log-probability of each
/// positive among all other batch members. Anchors without positives add 0.
pub fn supcon_loss_with_grad(
    z: &[Vec<f64>],
    labels: &[LabelSet],
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutput> {
    check_batch(z, labels)?;
    cfg.validate()?;
    let (b, dim) = (z.len(), z[0].len());
    let tau = cfg.temperature;
    let sim = SimilarityMatrix::compute(z);
    let lm = label_mask(labels, cfg.positive_rule);
    let w = adaptive_positive_weights(&sim, &lm, cfg)?;

    let mut loss = 0.0;
    let mut grad_threshold = 0.0;
    // d(loss)/d(sim(i, j)) treating each ordered entry independently.
    let mut gsim = Matrix::zeros(b, b);
    let mut logits = vec![0.0; b];

    for i in 0..b {
        let total_weight: f64 = w.row(i).iter().sum();
        if total_weight <= 0.0 {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for a in 0..b {
            if a != i {
                logits[a] = sim.get(i, a) / tau;
                max = max.max(logits[a]);
            }
        }
        let denom: f64 = (0..b)
            .filter(|&a| a != i)
            .map(|a| (logits[a] - max).exp())
            .sum();
        let lse = max + denom.ln();

        let mut weighted = 0.0;
        for p in 0..b {
            if p != i {
                weighted += w.get(i, p) * (logits[p] - lse);
            }
        }
        let anchor_loss = -weighted / total_weight;
        loss += anchor_loss;

        for j in 0..b {
            if j == i {
                continue;
            }
            let softmax = (logits[j] - lse).exp();
            let mut g = (softmax - w.get(i, j) / total_weight) / tau;
            if cfg.mode == MaskMode::Soft && lm.get(i, j) {
                let sig = w.get(i, j);
                let dw_dsim = sig * (1.0 - sig) / cfg.soft_width;
                let dloss_dw = -(logits[j] - lse + anchor_loss) / total_weight;
                g += dloss_dw * dw_dsim;
                grad_threshold -= dloss_dw * dw_dsim;
            }
            gsim.set(i, j, g);
        }
    }

    let units = unit_vectors(z);
    let mut grad_z = Matrix::zeros(b, dim);
    for i in 0..b {
        let Some((ui, ni)) = &units[i] else { continue };
        let row = grad_z.row_mut(i);
        for j in 0..b {
            if j == i {
                continue;
            }
            let Some((uj, _)) = &units[j] else { continue };
            let g = gsim.get(i, j) + gsim.get(j, i);
            if g == 0.0 {
                continue;
            }
            let s = sim.get(i, j);
            for k in 0..dim {
                row[k] += g * (uj[k] - s * ui[k]) / ni;
            }
        }
    }

    Ok(ContrastiveOutput {
        loss,
        grad_z,
        grad_threshold,
    })
}
