//! Word-level attention pooling over encoder states and fusion with `[CLS]`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::HiddenStates;
use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_in_place, Matrix};
use crate::params::Parameters;

use rand::Rng;

/// Learnable context vector plus the optional `tanh(W·h + b)` projection
/// applied before scoring. The weighted sum always uses the raw states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlaParams {
    pub context: Vec<f64>,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `d×d`, row-major, applied as `h · W`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl WlaParams {
    pub fn new(hidden_dim: usize, with_projection: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let context = draw(hidden_dim);
        let projection = with_projection.then(|| Projection {
            weight: draw(hidden_dim * hidden_dim),
            bias: draw(hidden_dim),
        });
        Self {
            context,
            projection,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.context.len()
    }
}

impl Parameters for WlaParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![("context".to_string(), &self.context[..])];
        if let Some(p) = &self.projection {
            out.push(("proj_weight".into(), &p.weight[..]));
            out.push(("proj_bias".into(), &p.bias[..]));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![("context".to_string(), &mut self.context[..])];
        if let Some(p) = &mut self.projection {
            out.push(("proj_weight".into(), &mut p.weight[..]));
            out.push(("proj_bias".into(), &mut p.bias[..]));
        }
        out
    }
}

/// Per-position attention weights: nonnegative, zero on padding, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights(pub Vec<f64>);

#[derive(Debug, Clone)]
pub struct WlaOutput {
    pub weights: AttentionWeights,
    pub features: Vec<f64>,
    projected: Option<Matrix>,
}

/// Softmax-normalized attention over unmasked positions and the weighted sum
/// of the hidden states.
pub fn wla(h: &HiddenStates, params: &WlaParams) -> Result<WlaOutput> {
    let d = h.hidden_dim();
    if params.hidden_dim() != d {
        return Err(Error::Shape(format!(
            "context vector has dim {} but hidden states have dim {d}",
            params.hidden_dim()
        )));
    }
    if h.mask.iter().all(|&m| m == 0) {
        return Err(Error::AllMasked);
    }
    let n = h.len();
    let projected = params.projection.as_ref().map(|p| {
        let mut u = crate::linalg::affine(&h.states, &p.weight, &p.bias, d);
        for v in &mut u.data {
            *v = v.tanh();
        }
        u
    });
    let mut alpha: Vec<f64> = (0..n)
        .map(|t| {
            if h.mask[t] == 0 {
                f64::NEG_INFINITY
            } else {
                let u = projected.as_ref().map_or(h.states.row(t), |m| m.row(t));
                dot(u, &params.context)
            }
        })
        .collect();
    softmax_in_place(&mut alpha);

    let mut features = vec![0.0; d];
    for (t, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (f, x) in features.iter_mut().zip(h.states.row(t)) {
            *f += a * x;
        }
    }
    Ok(WlaOutput {
        weights: AttentionWeights(alpha),
        features,
        projected,
    })
}

/// Accumulates gradients for the attention parameters and returns
/// `d(loss)/d(hidden states)` given `d(loss)/d(features)`.
pub fn wla_backward(
    h: &HiddenStates,
    params: &WlaParams,
    out: &WlaOutput,
    dfeatures: &[f64],
    grads: &mut WlaParams,
) -> Matrix {
    let (n, d) = (h.len(), h.hidden_dim());
    let alpha = &out.weights.0;
    let mut dh = Matrix::zeros(n, d);

    let dalpha: Vec<f64> = (0..n).map(|t| dot(dfeatures, h.states.row(t))).collect();
    let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
    for t in 0..n {
        let a = alpha[t];
        if a == 0.0 {
            continue;
        }
        let ds = a * (dalpha[t] - mean);
        let row = dh.row_mut(t);
        for (o, g) in row.iter_mut().zip(dfeatures) {
            *o += a * g;
        }
        match (&params.projection, &out.projected, &mut grads.projection) {
            (Some(p), Some(u), Some(gp)) => {
                let ut = u.row(t);
                for (gc, uv) in grads.context.iter_mut().zip(ut) {
                    *gc += ds * uv;
                }
                let dpre: Vec<f64> = ut
                    .iter()
                    .zip(&params.context)
                    .map(|(uv, c)| ds * c * (1.0 - uv * uv))
                    .collect();
                let ht = h.states.row(t);
                for i in 0..d {
                    let wrow = &p.weight[i * d..(i + 1) * d];
                    let gwrow = &mut gp.weight[i * d..(i + 1) * d];
                    let mut acc = 0.0;
                    for j in 0..d {
                        gwrow[j] += ht[i] * dpre[j];
                        acc += dpre[j] * wrow[j];
                    }
                    dh.row_mut(t)[i] += acc;
                }
                for (gb, dp) in gp.bias.iter_mut().zip(&dpre) {
                    *gb += dp;
                }
            }
            _ => {
                let ht = h.states.row(t);
                for (gc, hv) in grads.context.iter_mut().zip(ht) {
                    *gc += ds * hv;
                }
                for (o, c) in dh.row_mut(t).iter_mut().zip(&params.context) {
                    *o += ds * c;
                }
            }
        }
    }
    dh
}

/// `cls ‖ wla`: the representation fed to the contrastive loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRepresentation(pub Vec<f64>);

impl AugmentedRepresentation {
    /// Splits back into `(cls, wla)`.
    pub fn split(&self) -> (&[f64], &[f64]) {
        self.0.split_at(self.0.len() / 2)
    }
}

pub fn augment(cls: &[f64], wla_features: &[f64]) -> Result<AugmentedRepresentation> {
    if cls.len() != wla_features.len() {
        return Err(Error::Shape(format!(
            "cls has dim {} but word-level features have dim {}",
            cls.len(),
            wla_features.len()
        )));
    }
    let mut z = Vec::with_capacity(2 * cls.len());
    z.extend_from_slice(cls);
    z.extend_from_slice(wla_features);
    Ok(AugmentedRepresentation(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn states(rows: &[Vec<f64>], mask: Vec<u8>) -> HiddenStates {
        HiddenStates::new(Matrix::from_rows(rows), mask).unwrap()
    }

    fn plain(context: Vec<f64>) -> WlaParams {
        WlaParams {
            context,
            projection: None,
        }
    }

    #[test]
    fn hand_softmax_example() {
        let h = states(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let out = wla(&h, &plain(vec![1.0, 0.0])).unwrap();
        let e = std::f64::consts::E;
        assert!((out.weights.0[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((out.weights.0[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((out.features[0] - 0.7311).abs() < 1e-4);
        assert!((out.features[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let r = vec![0.3, -1.2, 2.0];
        let h = states(
            &[r.clone(), r.clone(), r.clone(), vec![9.0, 9.0, 9.0]],
            vec![1, 1, 1, 0],
        );
        let out = wla(&h, &plain(vec![0.5, 0.1, -0.7])).unwrap();
        for t in 0..3 {
            assert!((out.weights.0[t] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(out.weights.0[3], 0.0);
        for (f, x) in out.features.iter().zip(&r) {
            assert!((f - x).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_context_averages_unmasked_rows() {
        let h = states(
            &[vec![1.0, 2.0], vec![3.0, 6.0], vec![100.0, 100.0]],
            vec![1, 1, 0],
        );
        let out = wla(&h, &plain(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.weights.0, vec![0.5, 0.5, 0.0]);
        assert_eq!(out.features, vec![2.0, 4.0]);
    }

    #[test]
    fn all_masked_is_an_error() {
        let h = states(&[vec![1.0], vec![2.0]], vec![0, 0]);
        assert!(matches!(wla(&h, &plain(vec![1.0])), Err(Error::AllMasked)));
    }

    #[test]
    fn augment_orders_cls_first() {
        let z = augment(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(z.0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z.split(), (&[1.0, 2.0][..], &[3.0, 4.0][..]));
        let z0 = augment(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(&z0.0[..2], &[0.0, 0.0]);
        assert!(augment(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_a_convex_combination(
            seed in any::<u64>(),
            n in 1usize..8,
            pads in 0usize..4,
            project in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let total = n + pads;
            let rows: Vec<Vec<f64>> = (0..total).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let mut mask = vec![1u8; n];
            mask.resize(total, 0);
            let h = states(&rows, mask);
            let params = WlaParams::new(d, project, &mut rng);
            let out = wla(&h, &params).unwrap();
            let sum: f64 = out.weights.0.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(out.weights.0[n..].iter().all(|&a| a == 0.0));
            prop_assert!(out.weights.0.iter().all(|&a| a >= 0.0));
            for j in 0..d {
                let lo = rows[..n].iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows[..n].iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.features[j] >= lo - 1e-12 && out.features[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn score_shift_leaves_weights_unchanged(seed in any::<u64>(), shift in -5.0f64..5.0) {
            // Appending a constant feature to every row and a matching context
            // entry adds the same value to every score.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let ctx = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let base = wla(&states(&rows, vec![1; 4]), &plain(ctx.clone())).unwrap();
            let shifted_rows: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1], 1.0]).collect();
            let shifted = wla(&states(&shifted_rows, vec![1; 4]), &plain(vec![ctx[0], ctx[1], shift])).unwrap();
            for (a, b) in base.weights.0.iter().zip(&shifted.weights.0) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
