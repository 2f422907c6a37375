//! Weighted one-vs-all linear SVM.
//!
//! Each class solves
//!
//! ```text
//! min_{w,b}  1/2 |w|^2 + C * sum_i v_i * max(0, 1 - y_i (w . x_i + b))
//! ```
//!
//! with an unregularized bias, through its dual
//!
//! ```text
//! min_a  1/2 a'Qa - sum_i a_i   s.t.  0 <= a_i <= C v_i,  sum_i a_i y_i = 0
//! ```
//!
//! solved by SMO with a deterministic working-set rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::types::{Dataset, DetectorSet, LabelMatrix, LinearDetector, WeightMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Misclassification cost multiplier; sample `i` costs `reg_tradeoff * v_i`.
    pub reg_tradeoff: f64,
    /// Pair updates allowed, in multiples of the sample count.
    pub max_epochs: usize,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            reg_tradeoff: 1.0,
            max_epochs: 1000,
            tol: 1e-6,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_tradeoff > 0.0 && self.tol > 0.0 && self.max_epochs > 0) {
            return Err(SpclError::InvalidConfig(format!(
                "svm parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn hinge_loss(y: f64, s: f64) -> f64 {
    (1.0 - y * s).max(0.0)
}

/// One training example of a binary problem.
#[derive(Clone, Copy, Debug)]
pub struct SvmSample<'a> {
    pub x: &'a [f64],
    /// +1 or -1.
    pub y: f64,
    /// Per-sample misclassification cost, `>= 0`.
    pub cost: f64,
}

/// Why a class could not be trained as a proper two-sided problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// No positive sample carries weight; the detector is `w = 0, b = -1`.
    NoPositiveWeight,
    /// No negative sample carries weight; the detector is `w = 0, b = +1`.
    NoNegativeWeight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryFit {
    pub detector: LinearDetector,
    pub degenerate: Option<Degeneracy>,
}

/// `1/2 |w|^2 + sum_i cost_i * hinge(y_i, w . x_i + b)`.
pub fn primal_objective(samples: &[SvmSample<'_>], det: &LinearDetector) -> f64 {
    let reg = 0.5 * det.w.iter().map(|v| v * v).sum::<f64>();
    reg + samples
        .iter()
        .map(|s| s.cost * hinge_loss(s.y, det.decision(s.x)))
        .sum::<f64>()
}

/// Dense copy of the weighted samples of one binary problem.
struct Problem {
    xs: Vec<f64>,
    ys: Vec<f64>,
    caps: Vec<f64>,
    sq_norms: Vec<f64>,
    dim: usize,
}

/// Floor for the curvature of a pair direction.
const TAU: f64 = 1e-12;

impl Problem {
    fn len(&self) -> usize {
        self.ys.len()
    }

    fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    fn up(&self, t: usize, alpha: &[f64]) -> bool {
        if self.ys[t] > 0.0 {
            alpha[t] < self.caps[t]
        } else {
            alpha[t] > 0.0
        }
    }

    fn low(&self, t: usize, alpha: &[f64]) -> bool {
        if self.ys[t] > 0.0 {
            alpha[t] > 0.0
        } else {
            alpha[t] < self.caps[t]
        }
    }

    fn dot_w(&self, w: &[f64], t: usize) -> f64 {
        self.x(t).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Sequential minimal optimization on the dual with the equality
    /// constraint `sum_i alpha_i y_i = 0`, second-order working-set choice and
    /// shrinking of multipliers stuck at a bound. `w` is kept explicitly, so
    /// gradients are recomputed from it rather than cached.
    /// Returns `(w, b)`.
    fn solve(&self, cfg: &SvmConfig) -> (Vec<f64>, f64) {
        let n = self.len();
        let mut alpha = vec![0.0; n];
        let mut w = vec![0.0; self.dim];
        // gradient of 1/2 a'Qa - e'a, valid on the active set
        let mut grad = vec![-1.0; n];
        let mut kij = vec![0.0; n];
        let mut active: Vec<usize> = (0..n).collect();
        let shrink_every = n.clamp(1, 1000);
        let mut countdown = shrink_every;
        let max_iter = cfg.max_epochs.saturating_mul(n.max(1));

        for _ in 0..max_iter {
            for &t in &active {
                grad[t] = self.ys[t] * self.dot_w(&w, t) - 1.0;
            }
            countdown -= 1;
            if countdown == 0 {
                countdown = shrink_every;
                self.shrink(&alpha, &grad, &mut active);
            }

            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for &t in &active {
                if self.up(t, &alpha) {
                    let v = -self.ys[t] * grad[t];
                    if v > gmax {
                        gmax = v;
                        i = t;
                    }
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j = usize::MAX;
            if i != usize::MAX {
                let xi = self.x(i);
                let mut best = f64::INFINITY;
                for &t in &active {
                    if !self.low(t, &alpha) {
                        continue;
                    }
                    let v = self.ys[t] * grad[t];
                    gmax2 = gmax2.max(v);
                    let diff = gmax + v;
                    if diff > 0.0 {
                        let k: f64 = self.x(t).iter().zip(xi).map(|(a, b)| a * b).sum();
                        kij[t] = k;
                        let quad = (self.sq_norms[i] + self.sq_norms[t] - 2.0 * k).max(TAU);
                        let obj = -diff * diff / quad;
                        if obj < best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax + gmax2 < cfg.tol {
                if active.len() == n {
                    break;
                }
                // recheck the shrunk multipliers against the full problem
                active = (0..n).collect();
                countdown = shrink_every;
                continue;
            }

            let (yi, yj) = (self.ys[i], self.ys[j]);
            let (ci, cj) = (self.caps[i], self.caps[j]);
            let (ai, aj) = (alpha[i], alpha[j]);
            let quad = (self.sq_norms[i] + self.sq_norms[j] - 2.0 * kij[j]).max(TAU);
            let (mut ni, mut nj);
            if yi != yj {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                ni = ai + delta;
                nj = aj + delta;
                if diff > 0.0 {
                    if nj < 0.0 {
                        nj = 0.0;
                        ni = diff;
                    }
                } else if ni < 0.0 {
                    ni = 0.0;
                    nj = -diff;
                }
                if diff > ci - cj {
                    if ni > ci {
                        ni = ci;
                        nj = ci - diff;
                    }
                } else if nj > cj {
                    nj = cj;
                    ni = cj + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                ni = ai - delta;
                nj = aj + delta;
                if sum > ci {
                    if ni > ci {
                        ni = ci;
                        nj = sum - ci;
                    }
                } else if nj < 0.0 {
                    nj = 0.0;
                    ni = sum;
                }
                if sum > cj {
                    if nj > cj {
                        nj = cj;
                        ni = sum - cj;
                    }
                } else if ni < 0.0 {
                    ni = 0.0;
                    nj = sum;
                }
            }
            alpha[i] = ni;
            alpha[j] = nj;
            let (di, dj) = ((ni - ai) * yi, (nj - aj) * yj);
            for ((wd, a), b) in w.iter_mut().zip(self.x(i)).zip(self.x(j)) {
                *wd += di * a + dj * b;
            }
        }

        for t in 0..n {
            grad[t] = self.ys[t] * self.dot_w(&w, t) - 1.0;
        }
        let b = self.bias(&alpha, &grad);
        (w, b)
    }

    /// Drops multipliers at a bound whose gradient pushes them further out.
    fn shrink(&self, alpha: &[f64], grad: &[f64], active: &mut Vec<usize>) {
        let mut gmax1 = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        for &t in active.iter() {
            if self.up(t, alpha) {
                gmax1 = gmax1.max(-self.ys[t] * grad[t]);
            }
            if self.low(t, alpha) {
                gmax2 = gmax2.max(self.ys[t] * grad[t]);
            }
        }
        active.retain(|&t| {
            let (y, g) = (self.ys[t], grad[t]);
            let out = if alpha[t] >= self.caps[t] {
                if y > 0.0 {
                    -g > gmax1
                } else {
                    -g > gmax2
                }
            } else if alpha[t] <= 0.0 {
                if y > 0.0 {
                    g > gmax2
                } else {
                    g > gmax1
                }
            } else {
                false
            };
            !out
        });
    }

    /// Bias from the free multipliers, or the middle of the feasible
    /// interval when none is free.
    fn bias(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..self.len() {
            let yg = self.ys[t] * grad[t];
            let at_upper = alpha[t] >= self.caps[t];
            let at_lower = alpha[t] <= 0.0;
            if at_upper {
                if self.ys[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.ys[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let r = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };
        -r
    }
}

/// Solves one weighted binary SVM with unregularized bias.
///
/// Samples with zero cost are dropped before solving, so they cannot affect
/// the result.
pub fn solve_weighted_svm(
    samples: &[SvmSample<'_>],
    dim: usize,
    cfg: &SvmConfig,
) -> Result<BinaryFit> {
    cfg.validate()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut caps = Vec::new();
    for s in samples {
        if s.x.len() != dim {
            return Err(SpclError::DimensionMismatch {
                expected: dim,
                got: s.x.len(),
            });
        }
        if s.x.iter().any(|v| !v.is_finite()) || !s.cost.is_finite() {
            return Err(SpclError::NonFinite("svm training sample".into()));
        }
        if s.cost < 0.0 {
            return Err(SpclError::InvalidWeights(format!("negative sample cost {}", s.cost)));
        }
        if s.cost > 0.0 {
            xs.extend_from_slice(s.x);
            ys.push(if s.y > 0.0 { 1.0 } else { -1.0 });
            caps.push(s.cost);
        }
    }

    let pos_weight: f64 = ys.iter().zip(&caps).filter(|(y, _)| **y > 0.0).map(|(_, c)| c).sum();
    let neg_weight: f64 = ys.iter().zip(&caps).filter(|(y, _)| **y < 0.0).map(|(_, c)| c).sum();
    if pos_weight == 0.0 {
        return Ok(BinaryFit {
            detector: LinearDetector { w: vec![0.0; dim], b: -1.0 },
            degenerate: Some(Degeneracy::NoPositiveWeight),
        });
    }
    if neg_weight == 0.0 {
        return Ok(BinaryFit {
            detector: LinearDetector { w: vec![0.0; dim], b: 1.0 },
            degenerate: Some(Degeneracy::NoNegativeWeight),
        });
    }

    let sq_norms = xs.chunks(dim.max(1)).map(|x| x.iter().map(|v| v * v).sum()).collect();
    let problem = Problem {
        xs,
        ys,
        caps,
        sq_norms,
        dim,
    };
    let (w, b) = problem.solve(cfg);
    let detector = LinearDetector { w, b };
    if detector.w.iter().any(|v| !v.is_finite()) || !detector.b.is_finite() {
        return Err(SpclError::NonFinite("svm solution".into()));
    }
    Ok(BinaryFit {
        detector,
        degenerate: None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneVsAllFit {
    pub detectors: DetectorSet,
    /// Classes that could not be trained as two-sided problems.
    pub degenerate: Vec<(usize, Degeneracy)>,
}

fn check_shapes(data: &Dataset, y: &LabelMatrix, v: &WeightMatrix) -> Result<()> {
    if y.bags().len() != data.bags.len() || v.num_bags() != data.bags.len() {
        return Err(SpclError::DimensionMismatch {
            expected: data.bags.len(),
            got: y.bags().len().min(v.num_bags()),
        });
    }
    if v.num_classes() != data.num_classes {
        return Err(SpclError::DimensionMismatch {
            expected: data.num_classes,
            got: v.num_classes(),
        });
    }
    for (k, bag) in data.bags.iter().enumerate() {
        if y.bag(k).len() != bag.len() || v.bag_len(k) != bag.len() {
            return Err(SpclError::DimensionMismatch {
                expected: bag.len(),
                got: y.bag(k).len(),
            });
        }
    }
    Ok(())
}

/// Trains one weighted detector per class. Classes are solved independently
/// (possibly in parallel) and assembled in class order.
pub fn train_one_vs_all(
    data: &Dataset,
    y: &LabelMatrix,
    v: &WeightMatrix,
    cfg: &SvmConfig,
) -> Result<OneVsAllFit> {
    cfg.validate()?;
    check_shapes(data, y, v)?;
    for bag in &data.bags {
        if bag.hypotheses.iter().any(|h| h.feat.iter().any(|x| !x.is_finite())) {
            return Err(SpclError::NonFinite(format!("features of bag `{}`", bag.id)));
        }
    }

    let fits: Vec<BinaryFit> = (0..data.num_classes)
        .into_par_iter()
        .map(|c| {
            let samples: Vec<SvmSample<'_>> = data
                .bags
                .iter()
                .enumerate()
                .flat_map(|(k, bag)| {
                    bag.hypotheses.iter().enumerate().map(move |(i, h)| SvmSample {
                        x: &h.feat,
                        y: y.sign(k, i, c),
                        cost: cfg.reg_tradeoff * v.get(k, i, c),
                    })
                })
                .collect();
            solve_weighted_svm(&samples, data.feat_dim, cfg)
        })
        .collect::<Result<_>>()?;

    let mut degenerate = Vec::new();
    let mut classes = Vec::with_capacity(fits.len());
    for (c, fit) in fits.into_iter().enumerate() {
        if let Some(d) = fit.degenerate {
            log::warn!("class {} is degenerate: {:?}", c + 1, d);
            degenerate.push((c, d));
        }
        classes.push(fit.detector);
    }
    Ok(OneVsAllFit {
        detectors: DetectorSet {
            classes,
            feat_dim: data.feat_dim,
        },
        degenerate,
    })
}

/// `sum_c sum_k sum_i v[k][i][c] * hinge(y[k][i][c], w_c . x + b_c)`.
pub fn weighted_loss_sum(
    data: &Dataset,
    y: &LabelMatrix,
    v: &WeightMatrix,
    det: &DetectorSet,
) -> f64 {
    let mut total = 0.0;
    for (k, bag) in data.bags.iter().enumerate() {
        for (i, h) in bag.hypotheses.iter().enumerate() {
            let scores = det.scores(&h.feat);
            for (c, s) in scores.into_iter().enumerate() {
                let weight = v.get(k, i, c);
                if weight > 0.0 {
                    total += weight * hinge_loss(y.sign(k, i, c), s);
                }
            }
        }
    }
    total
}
