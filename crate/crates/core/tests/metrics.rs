mod common;

use ascend_core::{evaluate_predictions, LabelSet, MetricsReport, TaskMode};
use common::{metrics_oracle, to_f64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn agrees(truth: &[LabelSet], pred: &[LabelSet], k: usize, task: TaskMode) -> Result<(), String> {
    let got: MetricsReport = evaluate_predictions(truth, pred, &names(k), task);
    let want = metrics_oracle(truth, pred, k);
    let mut pairs = vec![
        (got.accuracy, want.accuracy),
        (got.macro_precision, want.macro_precision),
        (got.macro_recall, want.macro_recall),
        (got.macro_f1, want.macro_f1),
    ];
    for (c, m) in got.per_class.iter().enumerate() {
        pairs.extend([
            (m.precision, want.precision[c]),
            (m.recall, want.recall[c]),
            (m.f1, want.f1[c]),
        ]);
    }
    match pairs.iter().find(|(g, w)| *g != to_f64(*w)) {
        Some((g, w)) => Err(format!("{g} != {w} for {truth:?} / {pred:?}")),
        None => Ok(()),
    }
}

#[test]
fn hand_computed_case() {
    let y: Vec<_> = [0, 0, 1, 1].map(LabelSet::single).to_vec();
    let p: Vec<_> = [0, 1, 1, 1].map(LabelSet::single).to_vec();
    let r = evaluate_predictions(&y, &p, &names(2), TaskMode::Multiclass);
    assert_eq!(r.macro_f1, 11.0 / 15.0);
    assert!((r.macro_f1 - 0.73333).abs() < 1e-5);
    agrees(&y, &p, 2, TaskMode::Multiclass).unwrap();
}

#[test]
fn exhaustive_small_multiclass() {
    for k in 2..=3usize {
        for n in 1..=4u32 {
            let total = (k * k).pow(n);
            for code in 0..total {
                let mut c = code;
                let (mut y, mut p) = (vec![], vec![]);
                for _ in 0..n {
                    y.push(LabelSet::single(c % k));
                    c /= k;
                    p.push(LabelSet::single(c % k));
                    c /= k;
                }
                agrees(&y, &p, k, TaskMode::Multiclass).unwrap();
            }
        }
    }
}

#[test]
fn random_datasets_up_to_twenty() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..3000 {
        let n = rng.gen_range(1..=20);
        let k = rng.gen_range(2..=5);
        let multi = rng.gen_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| {
            if multi {
                LabelSet::new((0..k).filter(|_| rng.gen_bool(0.4)).collect())
            } else {
                LabelSet::single(rng.gen_range(0..k))
            }
        };
        let y: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
        let p: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
        let task = if multi {
            TaskMode::Multilabel
        } else {
            TaskMode::Multiclass
        };
        agrees(&y, &p, k, task).unwrap();
    }
}
