//! Self-paced regularizer with a diversity term, its closed-form weight
//! update and the pace schedule.
//!
//! For one class the regularizer is
//!
//! ```text
//! f(v; lambda, gamma) = -lambda * sum_k sum_i v_ki - gamma * sum_k sqrt(sum_i v_ki)
//! ```
//!
//! The first term selects low-loss samples, the second spreads the selection
//! over many bags. With the losses fixed, minimizing `sum v*l + f` splits into
//! one small convex problem per (bag, class) block, solved exactly by
//! [`solve_weights_one_bag`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::types::{Dataset, DetectorSet, LabelMatrix, WeightMatrix};
use crate::wsvm::hinge_loss;

/// Smallest pace value the calibration will return.
pub const LAMBDA_MIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaceState {
    /// Easiness pace per class, `> 0`.
    pub lambda: Vec<f64>,
    /// Diversity pace per class, `>= 0`.
    pub gamma: Vec<f64>,
    /// Target selected fraction per class, in `(0, 1]`.
    pub quota_fraction: f64,
    /// Per-iteration quota multiplier.
    pub growth: f64,
}

impl PaceState {
    pub fn uniform(num_classes: usize, lambda: f64, gamma: f64, quota_fraction: f64, growth: f64) -> Self {
        Self {
            lambda: vec![lambda; num_classes],
            gamma: vec![gamma; num_classes],
            quota_fraction,
            growth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda.len() == self.gamma.len()
            && self.lambda.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.gamma.iter().all(|g| *g >= 0.0 && g.is_finite())
            && self.quota_fraction > 0.0
            && self.quota_fraction <= 1.0
            && self.growth >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SpclError::InvalidConfig(format!("invalid pace state {self:?}")))
        }
    }
}

/// Grows the selection quota geometrically, capped at 1.
pub fn advance_pace(pace: &PaceState) -> PaceState {
    PaceState {
        quota_fraction: (pace.quota_fraction * pace.growth).min(1.0),
        ..pace.clone()
    }
}

/// Value of the regularizer for one class, `v_block[k][i]` being the weight
/// of hypothesis `i` of bag `k`.
pub fn regularizer_value(v_block: &[Vec<f64>], lambda: f64, gamma: f64) -> f64 {
    let mut easiness = 0.0;
    let mut diversity = 0.0;
    for bag in v_block {
        let s: f64 = bag.iter().sum();
        easiness += s;
        diversity += s.sqrt();
    }
    -lambda * easiness - gamma * diversity
}

pub fn class_regularizer_value(v_block: &[Vec<f64>], pace: &PaceState, c: usize) -> f64 {
    regularizer_value(v_block, pace.lambda[c], pace.gamma[c])
}

/// Objective of a single block: `sum v_i l_i - lambda sum v_i - gamma sqrt(sum v_i)`.
pub fn block_objective(losses: &[f64], v: &[f64], lambda: f64, gamma: f64) -> f64 {
    let s: f64 = v.iter().sum();
    let data: f64 = losses.iter().zip(v).map(|(l, v)| l * v).sum();
    data - lambda * s - gamma * s.max(0.0).sqrt()
}

/// Exact minimizer of [`block_objective`] over `[0, 1]^n`.
///
/// Walks the losses in ascending order, giving full weight while
/// `l_i < lambda + gamma / (2 sqrt(i))`. At the first violation the tie group
/// starting at `i` shares the remaining mass
/// `(gamma / (2 (l_i - lambda)))^2 - (i - 1)`, clamped to `[0, 1]` per
/// member; everything after it gets zero. Tied losses end up with equal
/// weight. Weights are returned in input order.
pub fn solve_weights_one_bag(losses: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) || !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(SpclError::InvalidConfig(format!(
            "pace parameters lambda={lambda}, gamma={gamma}"
        )));
    }
    for &l in losses {
        if !l.is_finite() {
            return Err(SpclError::NonFinite("loss".into()));
        }
        if l < 0.0 {
            return Err(SpclError::NegativeLoss(l));
        }
    }

    let n = losses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&j| losses[j]).collect();

    let mut v = vec![0.0; n];
    for idx in 0..n {
        let rank = (idx + 1) as f64;
        let l = sorted[idx];
        if l < lambda + gamma / (2.0 * rank.sqrt()) {
            v[idx] = 1.0;
            continue;
        }
        let m = sorted[idx..].iter().take_while(|&&x| x == l).count();
        let share = if gamma > 0.0 && l > lambda {
            let total = (gamma / (2.0 * (l - lambda))).powi(2);
            ((total - (rank - 1.0)) / m as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        v[idx..idx + m].fill(share);
        break;
    }

    // A tie group can straddle the break point (its head passed the more
    // generous threshold of an earlier rank). Only the group's total enters
    // the objective, so spread it evenly.
    let mut start = 0;
    while start < n {
        let end = start + sorted[start..].iter().take_while(|&&x| x == sorted[start]).count();
        if end - start > 1 {
            let mean = v[start..end].iter().sum::<f64>() / (end - start) as f64;
            v[start..end].fill(mean.clamp(0.0, 1.0));
        }
        start = end;
    }

    let mut out = vec![0.0; n];
    for (pos, &j) in order.iter().enumerate() {
        out[j] = v[pos];
    }
    Ok(out)
}

/// Hinge losses of class `c` for every hypothesis, grouped by bag.
pub fn class_losses(data: &Dataset, y: &LabelMatrix, det: &DetectorSet, c: usize) -> Vec<Vec<f64>> {
    data.bags
        .iter()
        .enumerate()
        .map(|(k, bag)| {
            bag.hypotheses
                .iter()
                .enumerate()
                .map(|(i, h)| hinge_loss(y.sign(k, i, c), det.classes[c].decision(&h.feat)))
                .collect()
        })
        .collect()
}

/// Solves every (bag, class) block with that class's pace parameters.
pub fn update_weights(
    data: &Dataset,
    y: &LabelMatrix,
    det: &DetectorSet,
    pace: &PaceState,
) -> Result<WeightMatrix> {
    pace.validate()?;
    if pace.lambda.len() != data.num_classes || det.num_classes() != data.num_classes {
        return Err(SpclError::DimensionMismatch {
            expected: data.num_classes,
            got: pace.lambda.len().min(det.num_classes()),
        });
    }
    let num_classes = data.num_classes;
    let blocks = data
        .bags
        .par_iter()
        .enumerate()
        .map(|(k, bag)| {
            let n = bag.len();
            let mut block = vec![0.0; n * num_classes];
            let scores: Vec<Vec<f64>> = bag.hypotheses.iter().map(|h| det.scores(&h.feat)).collect();
            for c in 0..num_classes {
                let losses: Vec<f64> = (0..n)
                    .map(|i| hinge_loss(y.sign(k, i, c), scores[i][c]))
                    .collect();
                let v = solve_weights_one_bag(&losses, pace.lambda[c], pace.gamma[c])?;
                for (i, w) in v.into_iter().enumerate() {
                    block[i * num_classes + c] = w;
                }
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightMatrix::from_blocks(data, blocks)
}

/// Outcome of fitting `lambda` to a selection target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub gamma: f64,
    /// Selected mass at the returned `lambda`.
    pub selected_mass: f64,
    /// Target after clamping to the counted population.
    pub target: f64,
    /// True when the requested target exceeded the population.
    pub clamped: bool,
}

fn selected_mass(
    losses: &[Vec<f64>],
    counted: Option<&[Vec<bool>]>,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let mut mass = 0.0;
    for (k, bag) in losses.iter().enumerate() {
        let v = solve_weights_one_bag(bag, lambda, gamma)?;
        mass += match counted {
            Some(mask) => v.iter().zip(&mask[k]).filter(|(_, m)| **m).map(|(v, _)| v).sum(),
            None => v.iter().sum::<f64>(),
        };
    }
    Ok(mass)
}

/// Finds the pace `lambda` (with `gamma = gamma_ratio * lambda`) at which the
/// total selected mass over `losses` reaches `target_count`.
pub fn calibrate_lambda(losses: &[Vec<f64>], target_count: usize, gamma_ratio: f64) -> Result<Calibration> {
    calibrate(losses, None, target_count, gamma_ratio)
}

/// Like [`calibrate_lambda`], but only hypotheses flagged in `counted` add to
/// the selected mass. Every hypothesis still takes part in its bag's block.
pub fn calibrate_lambda_counted(
    losses: &[Vec<f64>],
    counted: &[Vec<bool>],
    target_count: usize,
    gamma_ratio: f64,
) -> Result<Calibration> {
    if counted.len() != losses.len() || counted.iter().zip(losses).any(|(m, l)| m.len() != l.len()) {
        return Err(SpclError::DimensionMismatch {
            expected: losses.len(),
            got: counted.len(),
        });
    }
    calibrate(losses, Some(counted), target_count, gamma_ratio)
}

fn calibrate(
    losses: &[Vec<f64>],
    counted: Option<&[Vec<bool>]>,
    target_count: usize,
    gamma_ratio: f64,
) -> Result<Calibration> {
    if target_count == 0 {
        return Err(SpclError::InvalidConfig("selection target must be at least 1".into()));
    }
    if !(gamma_ratio >= 0.0 && gamma_ratio.is_finite()) {
        return Err(SpclError::InvalidConfig(format!("gamma ratio {gamma_ratio}")));
    }
    let population = match counted {
        Some(mask) => mask.iter().flatten().filter(|m| **m).count(),
        None => losses.iter().map(Vec::len).sum(),
    };
    let clamped = target_count > population;
    if clamped {
        log::warn!("selection target {target_count} exceeds population {population}; clamping");
    }
    let target = target_count.min(population) as f64;
    let mass_at = |lambda: f64| selected_mass(losses, counted, lambda, gamma_ratio * lambda);
    let result = |lambda: f64, mass: f64| Calibration {
        lambda,
        gamma: gamma_ratio * lambda,
        selected_mass: mass,
        target,
        clamped,
    };

    let mut lo = LAMBDA_MIN;
    let mut lo_mass = mass_at(lo)?;
    if lo_mass >= target {
        return Ok(result(lo, lo_mass));
    }
    let max_loss = losses.iter().flatten().fold(0.0_f64, |a, &b| a.max(b));
    let mut hi = max_loss + 1.0;
    let mut hi_mass = mass_at(hi)?;
    debug_assert!(hi_mass >= target);

    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let m = mass_at(mid)?;
        if m >= target {
            hi = mid;
            hi_mass = m;
        } else {
            lo = mid;
            lo_mass = m;
        }
    }
    if (lo_mass - target).abs() < (hi_mass - target).abs() {
        Ok(result(lo, lo_mass))
    } else {
        Ok(result(hi, hi_mass))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularizer_hand_cases() {
        assert_eq!(regularizer_value(&[vec![0.0, 0.0], vec![0.0]], 1.0, 1.0), 0.0);
        let v = regularizer_value(&[vec![1.0, 1.0]], 1.0, 1.0);
        assert!((v - (-2.0 - 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn hard_threshold_without_diversity() {
        assert_eq!(solve_weights_one_bag(&[0.5, 2.0], 1.0, 0.0).unwrap(), vec![1.0, 0.0]);
        // a loss equal to lambda is not selected
        assert_eq!(solve_weights_one_bag(&[1.0, 0.2], 1.0, 0.0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn third_rank_falls_off() {
        // 3.0 exceeds the rank-3 threshold 1 + 1/(2 sqrt 3) and the closed form is negative
        assert_eq!(solve_weights_one_bag(&[3.0, 0.5, 1.2], 1.0, 1.0).unwrap(), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn partial_weight_from_closed_form() {
        let v = solve_weights_one_bag(&[0.5, 1.36], 1.0, 1.0).unwrap();
        assert_eq!(v[0], 1.0);
        let expected = (1.0_f64 / 0.72).powi(2) - 1.0;
        assert!((v[1] - expected).abs() < 1e-12);
        assert!((v[1] - 0.929).abs() < 1e-3);
    }

    #[test]
    fn boundary_loss_gets_full_weight() {
        // lambda + gamma / (2 sqrt i) at i = 4 with lambda = 1, gamma = 2 is 1.5
        let v = solve_weights_one_bag(&[0.0, 0.1, 0.2, 1.5], 1.0, 2.0).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0]);
        let v = solve_weights_one_bag(&[2.0], 1.0, 2.0).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn tie_group_shares_weight() {
        let v = solve_weights_one_bag(&[1.3, 1.3, 1.3], 1.0, 1.0).unwrap();
        assert!(v[0] == v[1] && v[1] == v[2]);
        assert!(v[0] > 0.0 && v[0] < 1.0);
        let total = (1.0_f64 / 0.6).powi(2);
        assert!((v.iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_loss() {
        assert!(matches!(
            solve_weights_one_bag(&[0.1, -0.5], 1.0, 1.0),
            Err(SpclError::NegativeLoss(_))
        ));
        assert!(solve_weights_one_bag(&[0.1], 0.0, 1.0).is_err());
    }

    #[test]
    fn advance_pace_hand_cases() {
        let p = PaceState::uniform(2, 1.0, 1.0, 0.02, 1.5);
        assert!((advance_pace(&p).quota_fraction - 0.03).abs() < 1e-15);
        let p = PaceState::uniform(2, 1.0, 1.0, 0.9, 1.5);
        assert_eq!(advance_pace(&p).quota_fraction, 1.0);
        let p = PaceState::uniform(2, 1.0, 1.0, 0.3, 1.0);
        assert_eq!(advance_pace(&p), p);
    }

    #[test]
    fn calibrate_all_zero_losses() {
        let losses = vec![vec![0.0; 4], vec![0.0; 3]];
        let cal = calibrate_lambda(&losses, 7, 1.0).unwrap();
        assert_eq!(cal.lambda, LAMBDA_MIN);
        assert_eq!(cal.selected_mass, 7.0);
    }

    #[test]
    fn calibrate_distinct_losses_hard() {
        let losses = vec![(1..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>()];
        let cal = calibrate_lambda(&losses, 3, 0.0).unwrap();
        assert!(cal.lambda > 0.3 && cal.lambda <= 0.4, "lambda {}", cal.lambda);
        assert_eq!(cal.selected_mass, 3.0);
    }

    #[test]
    fn calibrate_clamps_target() {
        let losses = vec![vec![0.5, 0.7]];
        let cal = calibrate_lambda(&losses, 10, 1.0).unwrap();
        assert!(cal.clamped);
        assert_eq!(cal.target, 2.0);
        assert_eq!(cal.selected_mass, 2.0);
    }

    #[test]
    fn calibrate_counted_ignores_masked_mass() {
        let losses = vec![vec![0.0, 0.0, 0.4, 0.9], vec![0.0, 0.6]];
        let counted = vec![vec![false, false, true, true], vec![false, true]];
        let cal = calibrate_lambda_counted(&losses, &counted, 2, 0.0).unwrap();
        assert_eq!(cal.selected_mass, 2.0);
        assert!(cal.lambda > 0.6 && cal.lambda <= 0.9);
    }
}
