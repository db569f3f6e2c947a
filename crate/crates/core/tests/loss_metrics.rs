use ldg_tensor::gradcheck::{check_gradients, GradCheckOptions};
use ldg_tensor::{Tensor, Var};
use ldgnet::loss::{cross_entropy, lovasz_from_probs, lovasz_softmax, total_loss, Labels};
use ldgnet::metrics::{argmax_classes, f1_from, iou_from, ConfusionCounts};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn var(data: Vec<f64>, shape: &[usize]) -> Var<f64> {
    Var::parameter(Tensor::new(data, shape.to_vec()).unwrap())
}

fn scalar(v: &Var<f64>) -> f64 {
    v.value().item().unwrap()
}

#[test]
fn cross_entropy_matches_per_pixel_computation() {
    let logits = vec![0.3, -1.2, 2.0, 0.0, 1.1, 0.4, -0.5, 0.7];
    let labels = [1u8, 0, 0, 1];
    let mut want = 0.0;
    for p in 0..4 {
        let (z0, z1): (f64, f64) = (logits[p], logits[4 + p]);
        let z = if labels[p] == 0 { z0 } else { z1 };
        want += -(z - (z0.exp() + z1.exp()).ln());
    }
    want /= 4.0;
    let got = scalar(&cross_entropy(&var(logits, &[1, 2, 2, 2]), &Labels::new(labels.to_vec(), [1, 2, 2]).unwrap()).unwrap());
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn confident_correct_logits_drive_losses_to_zero() {
    let labels = Labels::new(vec![0, 1, 1, 0, 1, 0], [1, 2, 3]).unwrap();
    let mut logits = vec![0.0; 12];
    for (p, &y) in labels.data.iter().enumerate() {
        logits[y as usize * 6 + p] = 400.0;
        logits[(1 - y as usize) * 6 + p] = -400.0;
    }
    let l = var(logits, &[1, 2, 2, 3]);
    assert_eq!(scalar(&total_loss(&l, &labels).unwrap()), 0.0);
    assert_eq!(scalar(&lovasz_softmax(&l, &labels).unwrap()), 0.0);
}

#[test]
fn cross_entropy_gradient_sums_to_zero_over_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = Var::parameter(Tensor::<f64>::randn(&[2, 2, 3, 3], &mut rng));
    let labels = Labels::new((0..18).map(|_| rng.gen_range(0..2)).collect(), [2, 3, 3]).unwrap();
    cross_entropy(&l, &labels).unwrap().backward().unwrap();
    let g = l.grad().unwrap();
    for b in 0..2 {
        for p in 0..9 {
            let s = g.data()[(b * 2) * 9 + p] + g.data()[(b * 2 + 1) * 9 + p];
            assert!(s.abs() < 1e-16);
        }
    }
}

fn jaccard_loss(pred: &[u8], truth: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..2u8 {
        if !truth.contains(&c) {
            continue;
        }
        present += 1;
        let inter = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let union = pred.iter().zip(truth).filter(|(p, t)| **p == c || **t == c).count() as f64;
        total += 1.0 - inter / union;
    }
    total / present as f64
}

#[test]
fn lovasz_on_hard_predictions_is_one_minus_iou() {
    for n in 1..=8usize {
        for truth_bits in 0..(1u32 << n) {
            let truth: Vec<u8> = (0..n).map(|i| ((truth_bits >> i) & 1) as u8).collect();
            let labels = Labels::new(truth.clone(), [1, 1, n]).unwrap();
            for pred_bits in 0..(1u32 << n) {
                let pred: Vec<u8> = (0..n).map(|i| ((pred_bits >> i) & 1) as u8).collect();
                let mut probs = vec![0.0; 2 * n];
                for (i, &p) in pred.iter().enumerate() {
                    probs[p as usize * n + i] = 1.0;
                }
                let got = scalar(&lovasz_from_probs(&var(probs, &[1, 2, 1, n]), &labels).unwrap());
                let want = jaccard_loss(&pred, &truth);
                assert!((got - want).abs() < 1e-12, "n={n} truth={truth:?} pred={pred:?}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn lovasz_is_monotone_in_correct_class_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(2..12);
        let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let labels = Labels::new(truth.clone(), [1, 1, n]).unwrap();
        let p1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let probs = |p1: &[f64]| {
            let mut v: Vec<f64> = p1.iter().map(|p| 1.0 - p).collect();
            v.extend_from_slice(p1);
            var(v, &[1, 2, 1, n])
        };
        let before = scalar(&lovasz_from_probs(&probs(&p1), &labels).unwrap());
        let i = rng.gen_range(0..n);
        let mut moved = p1.clone();
        let step = rng.gen::<f64>();
        moved[i] = if truth[i] == 1 { p1[i] + step * (1.0 - p1[i]) } else { p1[i] * (1.0 - step) };
        let after = scalar(&lovasz_from_probs(&probs(&moved), &labels).unwrap());
        assert!(after <= before + 1e-12, "{before} -> {after}");
    }
}

#[test]
fn empty_truth_and_prediction_have_zero_loss() {
    let probs = var(vec![], &[0, 2, 1, 1]);
    let labels = Labels::new(vec![], [0, 1, 1]).unwrap();
    assert_eq!(scalar(&lovasz_from_probs(&probs, &labels).unwrap()), 0.0);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = Var::parameter(Tensor::<f64>::randn(&[2, 2, 3, 4], &mut rng));
    let labels = Labels::new((0..24).map(|_| rng.gen_range(0..2)).collect(), [2, 3, 4]).unwrap();
    let opts = GradCheckOptions {
        coords_per_var: 48,
        ..Default::default()
    };
    for f in [cross_entropy::<f64>, lovasz_softmax::<f64>, total_loss::<f64>] {
        let r = check_gradients(&[l.clone()], || Ok(f(&l, &labels).unwrap()), opts).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
    // the total gradient is the sum of the parts
    let grad_of = |f: fn(&Var<f64>, &Labels) -> ldgnet::Result<Var<f64>>| {
        l.zero_grad();
        f(&l, &labels).unwrap().backward().unwrap();
        l.grad().unwrap()
    };
    let (ce, lov, tot) = (grad_of(cross_entropy), grad_of(lovasz_softmax), grad_of(total_loss));
    for i in 0..24 {
        assert!((ce.data()[i] + lov.data()[i] - tot.data()[i]).abs() < 1e-15);
    }
    let sum = scalar(&cross_entropy(&l, &labels).unwrap()) + scalar(&lovasz_softmax(&l, &labels).unwrap());
    assert_eq!(sum, scalar(&total_loss(&l, &labels).unwrap()));
}

#[test]
fn perfect_prediction_scores_one_everywhere() {
    let m = ConfusionCounts { tp: 10, fp: 0, fn_: 0, tn: 30 }.metrics();
    assert_eq!((m.rec, m.pre, m.oa, m.f1, m.iou), (1.0, 1.0, 1.0, 1.0, 1.0));
}

#[test]
fn counts_from_logits_use_argmax_with_ties_to_background() {
    let logits = Tensor::new(vec![1.0f32, 0.0, 2.0, 5.0, 0.0, 0.0, 2.0, 6.0], vec![1, 2, 2, 2]).unwrap();
    assert_eq!(argmax_classes(&logits).unwrap(), vec![0, 0, 0, 1]);
    let labels = Labels::new(vec![0, 1, 1, 1], [1, 2, 2]).unwrap();
    let c = ConfusionCounts::from_logits(&logits, &labels).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 2, tn: 1 });
}

#[test]
fn reference_scores_recompute_from_precision_and_recall() {
    // (recall, precision, F1, IoU) in percent, four benchmark rows
    let rows = [
        (76.03, 86.65, 80.99, 68.06),
        (90.06, 90.98, 90.52, 82.68),
        (90.56, 96.02, 93.21, 87.28),
        (73.12, 61.95, 67.07, 50.45),
    ];
    for (rec, pre, f1, iou) in rows {
        let (p, r) = (pre / 100.0, rec / 100.0);
        assert!((100.0 * f1_from(p, r) - f1).abs() <= 0.03, "F1 {f1}");
        assert!((100.0 * iou_from(p, r) - iou).abs() <= 0.03, "IoU {iou}");
        let i = iou / 100.0;
        assert!((100.0 * 2.0 * i / (1.0 + i) - f1).abs() <= 0.03);
    }
}

proptest! {
    #[test]
    fn f1_and_iou_are_linked(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000, tn in 0u64..1_000_000) {
        let m = ConfusionCounts { tp, fp, fn_, tn }.metrics();
        prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
        for v in [m.rec, m.pre, m.oa, m.f1, m.iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if tp + fp > 0 && tp + fn_ > 0 && tp > 0 {
            prop_assert!((m.f1 - f1_from(m.pre, m.rec)).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_partition_the_pixels(pred in proptest::collection::vec(0u8..2, 0..200), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<u8> = pred.iter().map(|_| rng.gen_range(0..2)).collect();
        let c = ConfusionCounts::from_masks(&pred, &truth).unwrap();
        prop_assert_eq!(c.total() as usize, pred.len());
    }
}
