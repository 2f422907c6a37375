use proptest::prelude::*;

use spcl::evaldet::average_precision;
use spcl::labeler::{assign_labels_one_bag, LabelMode};
use spcl::pacer::{
    calibrate_lambda, regularizer_value, solve_weights_one_bag, update_weights, PaceState,
};
use spcl::trainer::evaluate_objective;
use spcl::wsvm::weighted_loss_sum;
use spcl::{iou, BBox, Dataset, DetectorSet, Hypothesis, ImageBag, Label, LabelMatrix, LinearDetector, WeightMatrix};

fn boxes() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn unit_box() -> BBox {
    BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
}

/// Small random problem: a dataset, labels, weights and detectors.
fn problem() -> impl Strategy<Value = (Dataset, LabelMatrix, WeightMatrix, DetectorSet)> {
    (1usize..=3, 1usize..=4, any::<u64>()).prop_map(|(c, bags, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 3;
        let mut raw = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for k in 0..bags {
            let n = rng.random_range(1..=5);
            let hyps: Vec<Hypothesis> = (0..n)
                .map(|_| Hypothesis::new((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), unit_box()).unwrap())
                .collect();
            let weak = rng.random_range(0..c);
            let mut y: Vec<Label> = (0..n)
                .map(|_| match rng.random_range(0..=c) {
                    0 => Label::Background,
                    s => Label::Class(s - 1),
                })
                .collect();
            y[0] = Label::Class(weak);
            raw.push(ImageBag::new(format!("b{k}"), hyps, vec![weak], None, None));
            labels.push(y);
            weights.push((0..n * c).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) }).collect());
        }
        let data = Dataset::new(raw, c, dim).unwrap();
        let y = LabelMatrix::new(&data, labels).unwrap();
        let v = WeightMatrix::from_blocks(&data, weights).unwrap();
        let det = DetectorSet {
            classes: (0..c)
                .map(|_| LinearDetector {
                    w: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    b: rng.random_range(-1.0..1.0),
                })
                .collect(),
            feat_dim: dim,
        };
        (data, y, v, det)
    })
}

fn naive_loss_sum(data: &Dataset, y: &LabelMatrix, v: &WeightMatrix, det: &DetectorSet) -> f64 {
    let mut total = 0.0;
    for (k, bag) in data.bags.iter().enumerate() {
        for (i, h) in bag.hypotheses.iter().enumerate() {
            for (c, d) in det.classes.iter().enumerate() {
                let mut s = d.b;
                for j in 0..h.feat.len() {
                    s += d.w[j] * h.feat[j];
                }
                let sign = if y.get(k, i) == Label::Class(c) { 1.0 } else { -1.0 };
                let loss = 1.0 - sign * s;
                if loss > 0.0 {
                    total += v.get(k, i, c) * loss;
                }
            }
        }
    }
    total
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn weights_do_not_grow_with_loss(
        losses in prop::collection::vec(0.0..3.0f64, 1..8),
        bump in 0.0..2.0f64,
        pick in any::<prop::sample::Index>(),
        lambda in 0.1..2.5f64,
        gamma in 0.0..2.0f64,
    ) {
        let j = pick.index(losses.len());
        let before = solve_weights_one_bag(&losses, lambda, gamma).unwrap();
        let mut raised = losses.clone();
        raised[j] += bump;
        let after = solve_weights_one_bag(&raised, lambda, gamma).unwrap();
        prop_assert!(after[j] <= before[j] + 1e-12);
    }

    #[test]
    fn selected_mass_grows_with_lambda(
        losses in prop::collection::vec(0.0..3.0f64, 1..8),
        lambda in 0.05..2.0f64,
        extra in 0.0..1.0f64,
        ratio in 0.0..2.0f64,
    ) {
        let lo: f64 = solve_weights_one_bag(&losses, lambda, ratio * lambda).unwrap().iter().sum();
        let hi_l = lambda + extra;
        let hi: f64 = solve_weights_one_bag(&losses, hi_l, ratio * hi_l).unwrap().iter().sum();
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn calibration_hits_the_target(
        bags in prop::collection::vec(prop::collection::vec(0.01..3.0f64, 1..6), 1..6),
        frac in 0.0..1.0f64,
        ratio in prop::sample::select(vec![0.0, 1.0]),
    ) {
        let n: usize = bags.iter().map(Vec::len).sum();
        let target = 1 + (frac * (n - 1) as f64) as usize;
        let cal = calibrate_lambda(&bags, target, ratio).unwrap();
        prop_assert!((cal.selected_mass - target as f64).abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn labels_always_feasible((data, _, v, det) in problem(), literal in any::<bool>()) {
        let mode = if literal { LabelMode::Literal } else { LabelMode::Corrected };
        for (k, bag) in data.bags.iter().enumerate() {
            let labels = assign_labels_one_bag(bag, &det, v.block(k), mode).unwrap();
            prop_assert_eq!(labels.len(), bag.len());
            for &c in &bag.weak_labels {
                prop_assert!(labels.contains(&Label::Class(c)));
            }
            prop_assert!(labels.iter().all(|l| matches!(l, Label::Background) || matches!(l, Label::Class(c) if *c < data.num_classes)));
        }
    }

    #[test]
    fn loss_sum_matches_naive_sum((data, y, v, det) in problem()) {
        let fast = weighted_loss_sum(&data, &y, &v, &det);
        let slow = naive_loss_sum(&data, &y, &v, &det);
        prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
    }

    #[test]
    fn objective_recombines((data, y, v, det) in problem(), lambda in 0.1..2.0f64, gamma in 0.0..2.0f64) {
        let pace = PaceState::uniform(data.num_classes, lambda, gamma, 0.02, 1.5);
        let obj = evaluate_objective(&data, &y, &v, &det, &pace, 1.0);
        let mut reg = 0.0;
        for c in 0..data.num_classes {
            let block: Vec<Vec<f64>> = data.bags.iter().enumerate()
                .map(|(k, b)| (0..b.len()).map(|i| v.get(k, i, c)).collect())
                .collect();
            reg += regularizer_value(&block, lambda, gamma);
        }
        let data_term = naive_loss_sum(&data, &y, &v, &det);
        prop_assert!((obj.total - (data_term + reg)).abs() <= 1e-12 * (1.0 + obj.total.abs()));
    }

    #[test]
    fn weight_update_is_blockwise((data, y, _, det) in problem(), lambda in 0.1..2.0f64) {
        let pace = PaceState::uniform(data.num_classes, lambda, lambda, 0.02, 1.5);
        let v = update_weights(&data, &y, &det, &pace).unwrap();
        for (k, bag) in data.bags.iter().enumerate() {
            for (c, d) in det.classes.iter().enumerate() {
                let losses: Vec<f64> = bag.hypotheses.iter().enumerate()
                    .map(|(i, h)| (1.0 - y.sign(k, i, c) * d.decision(&h.feat)).max(0.0))
                    .collect();
                let want = solve_weights_one_bag(&losses, lambda, lambda).unwrap();
                for (i, w) in want.iter().enumerate() {
                    prop_assert_eq!(v.get(k, i, c), *w);
                }
            }
        }
    }

    #[test]
    fn true_positive_on_top_never_lowers_ap(
        tp in prop::collection::vec(any::<bool>(), 0..15),
        extra in 0usize..4,
    ) {
        let hits = tp.iter().filter(|t| **t).count();
        let num_gt = hits + 1 + extra;
        let before = average_precision(&tp, num_gt).unwrap();
        let mut top = vec![true];
        top.extend_from_slice(&tp);
        let after = average_precision(&top, num_gt).unwrap();
        prop_assert!(after >= before - 1e-12);
    }
}

#[test]
fn calibration_on_distinct_losses() {
    let losses = vec![(1..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>()];
    let cal = calibrate_lambda(&losses, 3, 0.0).unwrap();
    assert!(cal.lambda > 0.3 && cal.lambda <= 0.4 + 1e-9, "lambda {}", cal.lambda);
    assert_eq!(cal.selected_mass, 3.0);
}

#[test]
fn regularizer_hand_value() {
    let v = vec![vec![1.0, 1.0]];
    assert!((regularizer_value(&v, 1.0, 1.0) - (-2.0 - 2f64.sqrt())).abs() < 1e-12);
}
