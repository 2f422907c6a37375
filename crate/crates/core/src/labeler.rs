//! Pseudo-label update for one bag under fixed detectors and weights.
//!
//! Each hypothesis is either background or positive for exactly one class,
//! and every weak label of the bag needs at least one positive hypothesis.
//! Two solvers are provided:
//!
//! * [`LabelMode::Literal`]: per-hypothesis argmax of the detector scores,
//!   then for each uncovered weak label the hypothesis with the smallest
//!   flip cost (weighted positive-hinge of the target class, plus that of the
//!   class being cleared) is switched over.
//! * [`LabelMode::Corrected`]: every hypothesis takes the state of minimum
//!   weighted loss, then uncovered weak labels are assigned to distinct
//!   hypotheses by an exact minimum-cost assignment over the true objective
//!   increase. This reaches the global optimum of the per-bag objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::types::{check_bag_labels, Dataset, DetectorSet, ImageBag, Label, LabelMatrix, WeightMatrix};
use crate::wsvm::hinge_loss;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Literal,
    #[default]
    Corrected,
}

/// Hard limits for [`enumerate_optimal_labeling`].
pub const MAX_ENUM_HYPOTHESES: usize = 12;
pub const MAX_ENUM_CLASSES: usize = 4;

fn check_inputs(bag: &ImageBag, det: &DetectorSet, v_block: &[f64]) -> Result<usize> {
    let c = det.num_classes();
    if v_block.len() != bag.len() * c {
        return Err(SpclError::DimensionMismatch {
            expected: bag.len() * c,
            got: v_block.len(),
        });
    }
    if let Some(w) = v_block.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(SpclError::InvalidWeights(format!("weight {w} in bag `{}`", bag.id)));
    }
    if let Some(&l) = bag.weak_labels.iter().find(|&&l| l >= c) {
        return Err(SpclError::ClassOutOfRange { class: l, num_classes: c });
    }
    if !bag.weak_labels.is_empty() && bag.is_empty() {
        return Err(SpclError::EmptyBag(bag.id.clone()));
    }
    for h in &bag.hypotheses {
        if h.feat.len() != det.feat_dim {
            return Err(SpclError::DimensionMismatch {
                expected: det.feat_dim,
                got: h.feat.len(),
            });
        }
    }
    Ok(c)
}

/// Weighted loss of hypothesis `i` when placed in `state`.
fn state_cost(scores: &[f64], weights: &[f64], state: Label) -> f64 {
    scores
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(c, (s, w))| if *w > 0.0 { w * hinge_loss(state.sign(c), *s) } else { 0.0 })
        .sum()
}

/// Background if every score is negative, otherwise the argmax class (lowest
/// index on ties).
fn argmax_state(scores: &[f64]) -> Label {
    if scores.iter().all(|s| *s < 0.0) {
        return Label::Background;
    }
    let mut best = 0;
    for (c, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = c;
        }
    }
    Label::Class(best)
}

pub fn assign_labels_one_bag(
    bag: &ImageBag,
    det: &DetectorSet,
    v_block: &[f64],
    mode: LabelMode,
) -> Result<Vec<Label>> {
    let num_classes = check_inputs(bag, det, v_block)?;
    if bag.weak_labels.len() > bag.len() {
        return Err(SpclError::InfeasibleLabels(format!(
            "bag `{}` has {} weak labels but only {} hypotheses",
            bag.id,
            bag.weak_labels.len(),
            bag.len()
        )));
    }
    let scores: Vec<Vec<f64>> = bag.hypotheses.iter().map(|h| det.scores(&h.feat)).collect();
    let weights: Vec<&[f64]> = v_block.chunks(num_classes.max(1)).collect();
    let labels = match mode {
        LabelMode::Literal => literal(bag, &scores, &weights),
        LabelMode::Corrected => corrected(bag, &scores, &weights, num_classes),
    };
    debug_assert!(check_bag_labels(bag, &labels, num_classes).is_ok());
    Ok(labels)
}

fn literal(bag: &ImageBag, scores: &[Vec<f64>], weights: &[&[f64]]) -> Vec<Label> {
    let mut labels: Vec<Label> = scores.iter().map(|s| argmax_state(s)).collect();

    for &target in &bag.weak_labels {
        if labels.contains(&Label::Class(target)) {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, label) in labels.iter().enumerate() {
            // never strip the only positive of another weak label
            if let Label::Class(cur) = *label {
                if bag.has_label(cur) && labels.iter().filter(|l| **l == Label::Class(cur)).count() == 1 {
                    continue;
                }
            }
            let mut delta = weights[i][target] * hinge_loss(1.0, scores[i][target]);
            if let Label::Class(cur) = *label {
                delta += weights[i][cur] * hinge_loss(1.0, scores[i][cur]);
            }
            if best.is_none_or(|(d, _)| delta < d) {
                best = Some((delta, i));
            }
        }
        // the caller guarantees at least as many hypotheses as weak labels
        let (_, i) = best.expect("a flip candidate exists");
        labels[i] = Label::Class(target);
    }
    labels
}

fn corrected(bag: &ImageBag, scores: &[Vec<f64>], weights: &[&[f64]], num_classes: usize) -> Vec<Label> {
    let n = scores.len();
    // Per-hypothesis best state; ties prefer the argmax rule, then lower state.
    let mut base = Vec::with_capacity(n);
    let mut base_cost = Vec::with_capacity(n);
    for i in 0..n {
        let preferred = argmax_state(&scores[i]);
        let mut best = preferred;
        let mut best_cost = state_cost(&scores[i], weights[i], preferred);
        for s in 0..=num_classes {
            let state = Label::from_state_index(s);
            let cost = state_cost(&scores[i], weights[i], state);
            if cost < best_cost {
                best = state;
                best_cost = cost;
            }
        }
        base.push(best);
        base_cost.push(best_cost);
    }

    // Minimum-cost assignment of the weak labels to distinct hypotheses,
    // by dynamic programming over subsets of covered labels.
    let required = &bag.weak_labels;
    let m = required.len();
    let full = (1usize << m) - 1;
    let mut dp = vec![vec![f64::INFINITY; full + 1]; n + 1];
    // choice[i + 1][mask]: label slot given to hypothesis i, if any
    let mut choice: Vec<Vec<Option<usize>>> = vec![vec![None; full + 1]; n + 1];
    dp[0][0] = 0.0;
    for i in 0..n {
        for mask in 0..=full {
            let mut best = dp[i][mask];
            let mut pick = None;
            for slot in 0..m {
                let bit = 1 << slot;
                if mask & bit == 0 || !dp[i][mask ^ bit].is_finite() {
                    continue;
                }
                let state = Label::Class(required[slot]);
                let extra = if base[i] == state {
                    0.0
                } else {
                    (state_cost(&scores[i], weights[i], state) - base_cost[i]).max(0.0)
                };
                let cand = dp[i][mask ^ bit] + extra;
                if cand < best {
                    best = cand;
                    pick = Some(slot);
                }
            }
            dp[i + 1][mask] = best;
            choice[i + 1][mask] = pick;
        }
    }

    let mut labels = base;
    let mut mask = full;
    for i in (0..n).rev() {
        if let Some(slot) = choice[i + 1][mask] {
            labels[i] = Label::Class(required[slot]);
            mask ^= 1 << slot;
        }
    }
    debug_assert_eq!(mask, 0);
    labels
}

/// Weighted hinge objective of one bag's labeling.
pub fn bag_label_objective(bag: &ImageBag, labels: &[Label], det: &DetectorSet, v_block: &[f64]) -> f64 {
    let c = det.num_classes();
    bag.hypotheses
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (h, label))| state_cost(&det.scores(&h.feat), &v_block[i * c..(i + 1) * c], *label))
        .sum()
}

/// Exhaustive search over every feasible labeling of a small bag. States are
/// visited in lexicographic order (hypothesis 0 most significant, background
/// first) and the first minimizer wins.
pub fn enumerate_optimal_labeling(
    bag: &ImageBag,
    det: &DetectorSet,
    v_block: &[f64],
) -> Result<(Vec<Label>, f64)> {
    let num_classes = check_inputs(bag, det, v_block)?;
    let n = bag.len();
    if n > MAX_ENUM_HYPOTHESES || num_classes > MAX_ENUM_CLASSES {
        return Err(SpclError::TooLarge(format!(
            "{n} hypotheses x {num_classes} classes (limits {MAX_ENUM_HYPOTHESES} x {MAX_ENUM_CLASSES})"
        )));
    }
    let radix = num_classes + 1;
    let total = radix.pow(n as u32);
    let mut best: Option<(Vec<Label>, f64)> = None;
    let mut labels = vec![Label::Background; n];
    for code in 0..total {
        let mut rest = code;
        for i in (0..n).rev() {
            labels[i] = Label::from_state_index(rest % radix);
            rest /= radix;
        }
        if !bag.weak_labels.iter().all(|&c| labels.contains(&Label::Class(c))) {
            continue;
        }
        let obj = bag_label_objective(bag, &labels, det, v_block);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((labels.clone(), obj));
        }
    }
    best.ok_or_else(|| SpclError::InfeasibleLabels(format!("bag `{}` admits no feasible labeling", bag.id)))
}

/// Relabels every bag independently.
pub fn update_labels(data: &Dataset, det: &DetectorSet, v: &WeightMatrix, mode: LabelMode) -> Result<LabelMatrix> {
    let bags = data
        .bags
        .par_iter()
        .enumerate()
        .map(|(k, bag)| assign_labels_one_bag(bag, det, v.block(k), mode))
        .collect::<Result<Vec<_>>>()?;
    LabelMatrix::new(data, bags)
}
