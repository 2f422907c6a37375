//! The outer alternation: detectors, then labels, then weights, then pace.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::curriculum::{self, CurriculumConfig};
use crate::error::{Result, SpclError};
use crate::evaldet::Detection;
use crate::geometry::nms;
use crate::labeler::{self, LabelMode};
use crate::pacer::{self, advance_pace, Calibration, PaceState};
use crate::types::{Dataset, DetectorSet, ImageBag, LabelMatrix, WeightMatrix};
use crate::wsvm::{self, Degeneracy, SvmConfig};

/// Slack allowed in the per-iteration monotonicity checks.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Diversity pace fixed at zero.
    NoDiversity,
    /// Random positive seeding instead of the saliency curriculum.
    NoCurriculum,
    /// One detector fit on the initial selection, no alternation.
    NoAlternation,
    /// Saliency curriculum with a single class-shared easiness pace and no
    /// diversity term.
    BasicSpcl,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoDiversity,
        Ablation::NoCurriculum,
        Ablation::NoAlternation,
        Ablation::BasicSpcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoDiversity => "no_diversity",
            Ablation::NoCurriculum => "no_curriculum",
            Ablation::NoAlternation => "no_alternation",
            Ablation::BasicSpcl => "basic_spcl",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    #[default]
    LabelsStableAndFullQuota,
    MaxItersOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaceConfig {
    /// Selected fraction at the first iteration.
    pub quota_fraction: f64,
    /// Quota multiplier applied after every sweep.
    pub growth: f64,
    /// `gamma_c = gamma_ratio * lambda_c`.
    pub gamma_ratio: f64,
    /// Placeholder easiness pace before the first calibration.
    pub initial_lambda: f64,
}

impl Default for PaceConfig {
    fn default() -> Self {
        Self {
            quota_fraction: 0.02,
            growth: 1.5,
            gamma_ratio: 1.0,
            initial_lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub convergence: Convergence,
    pub svm: SvmConfig,
    pub pace: PaceConfig,
    pub curriculum: CurriculumConfig,
    pub labeler: LabelMode,
    pub ablations: BTreeSet<Ablation>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            convergence: Convergence::default(),
            svm: SvmConfig::default(),
            pace: PaceConfig::default(),
            curriculum: CurriculumConfig::default(),
            labeler: LabelMode::default(),
            ablations: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_ablations(mut self, ablations: impl IntoIterator<Item = Ablation>) -> Self {
        self.ablations = ablations.into_iter().collect();
        self
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    fn gamma_ratio(&self) -> f64 {
        if self.has(Ablation::NoDiversity) || self.has(Ablation::BasicSpcl) {
            0.0
        } else {
            self.pace.gamma_ratio
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(SpclError::InvalidConfig("max_iters must be at least 1".into()));
        }
        let p = &self.pace;
        if !(p.quota_fraction > 0.0 && p.quota_fraction <= 1.0) || !(p.growth >= 1.0) {
            return Err(SpclError::InvalidConfig(format!("invalid pace schedule {p:?}")));
        }
        if !(p.gamma_ratio >= 0.0) || !(p.initial_lambda > 0.0) {
            return Err(SpclError::InvalidConfig(format!("invalid pace parameters {p:?}")));
        }
        self.svm.validate()?;
        self.curriculum.validate()
    }
}

/// Value of the joint objective at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Weighted hinge losses.
    pub data_term: f64,
    /// Self-paced regularizer summed over classes.
    pub regularizer_term: f64,
    pub total: f64,
    /// `total + sum_c |w_c|^2 / (2 * reg_tradeoff)`, the quantity the
    /// detector update actually decreases (up to the constant factor).
    pub surrogate: f64,
}

pub fn evaluate_objective(
    data: &Dataset,
    y: &LabelMatrix,
    v: &WeightMatrix,
    det: &DetectorSet,
    pace: &PaceState,
    reg_tradeoff: f64,
) -> ObjectiveValue {
    let data_term = wsvm::weighted_loss_sum(data, y, v, det);
    let regularizer_term: f64 = (0..data.num_classes)
        .map(|c| pacer::class_regularizer_value(&v.class_block(c), pace, c))
        .sum();
    let total = data_term + regularizer_term;
    let norm: f64 = det.classes.iter().map(|d| d.w.iter().map(|x| x * x).sum::<f64>()).sum();
    ObjectiveValue {
        data_term,
        regularizer_term,
        total,
        surrogate: total + 0.5 * norm / reg_tradeoff,
    }
}

/// Pace and selection of one class within one iteration. `class` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPace {
    pub class: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub quota: f64,
    /// Selection target: `ceil(quota * N_c)` clamped to the positives present.
    pub target: f64,
    /// Weight mass on hypotheses currently positive for the class, within
    /// bags weakly labeled with it.
    pub selected_mass: f64,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub data_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub surrogate: f64,
    pub label_changes: usize,
    pub per_class: Vec<ClassPace>,
    /// Weighted loss across the label update (weights and detectors fixed).
    pub data_before_labels: f64,
    pub data_after_labels: f64,
    /// Full objective across the weight update (labels, detectors, pace fixed).
    pub total_before_weights: f64,
    pub total_after_weights: f64,
    /// 1-based classes whose detector was degenerate.
    pub degenerate_classes: Vec<usize>,
}

impl IterationRecord {
    pub fn labels_monotone(&self) -> bool {
        self.data_after_labels <= self.data_before_labels + MONOTONE_TOL * (1.0 + self.data_before_labels.abs())
    }

    pub fn weights_monotone(&self) -> bool {
        self.total_after_weights <= self.total_before_weights + MONOTONE_TOL * (1.0 + self.total_before_weights.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub labels: LabelMatrix,
    pub weights: WeightMatrix,
    pub detectors: DetectorSet,
    pub pace: PaceState,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

/// Number of hypotheses in bags weakly labeled with each class.
pub fn class_populations(data: &Dataset) -> Vec<usize> {
    let mut n = vec![0; data.num_classes];
    for bag in &data.bags {
        for &c in &bag.weak_labels {
            n[c] += bag.len();
        }
    }
    n
}

fn selection_target(quota: f64, population: usize) -> usize {
    ((quota * population as f64).ceil() as usize).max(1)
}

/// Loss blocks and positive masks of class `c` over the bags weakly labeled
/// with it.
fn class_selection_inputs(
    data: &Dataset,
    y: &LabelMatrix,
    det: &DetectorSet,
    c: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let losses = pacer::class_losses(data, y, det, c);
    let mut blocks = Vec::new();
    let mut masks = Vec::new();
    for (k, bag) in data.bags.iter().enumerate() {
        if bag.has_label(c) {
            blocks.push(losses[k].clone());
            masks.push(y.bag(k).iter().map(|l| l.sign(c) > 0.0).collect());
        }
    }
    (blocks, masks)
}

/// Pace that admits every sample of class `c` with unit weight.
fn admit_all(data: &Dataset, y: &LabelMatrix, det: &DetectorSet, c: usize) -> f64 {
    let worst = pacer::class_losses(data, y, det, c)
        .iter()
        .flatten()
        .fold(0.0_f64, |a, &b| a.max(b));
    worst + 1.0
}

/// Picks `lambda_c, gamma_c` for the current quota. Once the quota is full
/// the pace is raised past the largest loss so nothing stays excluded.
fn calibrate_pace(
    data: &Dataset,
    y: &LabelMatrix,
    det: &DetectorSet,
    pace: &PaceState,
    cfg: &TrainConfig,
) -> Result<(PaceState, Vec<Calibration>)> {
    let populations = class_populations(data);
    let ratio = cfg.gamma_ratio();
    let mut next = pace.clone();
    let mut cals = Vec::with_capacity(data.num_classes);

    if cfg.has(Ablation::BasicSpcl) {
        let mut blocks = Vec::new();
        let mut masks = Vec::new();
        for c in 0..data.num_classes {
            let (b, m) = class_selection_inputs(data, y, det, c);
            blocks.extend(b);
            masks.extend(m);
        }
        let total: usize = populations.iter().sum();
        let mut shared =
            pacer::calibrate_lambda_counted(&blocks, &masks, selection_target(pace.quota_fraction, total), ratio)?;
        if pace.quota_fraction >= 1.0 {
            let lambda = (0..data.num_classes)
                .map(|c| admit_all(data, y, det, c))
                .fold(shared.lambda, f64::max);
            shared.lambda = lambda;
            shared.gamma = ratio * lambda;
        }
        next.lambda.fill(shared.lambda);
        next.gamma.fill(shared.gamma);
        for c in 0..data.num_classes {
            let (b, m) = class_selection_inputs(data, y, det, c);
            let mut mass = 0.0;
            for (losses, mask) in b.iter().zip(&m) {
                let v = pacer::solve_weights_one_bag(losses, shared.lambda, shared.gamma)?;
                mass += v.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v).sum::<f64>();
            }
            cals.push(Calibration {
                selected_mass: mass,
                target: shared.target,
                ..shared.clone()
            });
        }
        return Ok((next, cals));
    }

    for c in 0..data.num_classes {
        if populations[c] == 0 {
            log::warn!("class {} has no weakly labeled bag; keeping its pace", c + 1);
            cals.push(Calibration {
                lambda: pace.lambda[c],
                gamma: pace.gamma[c],
                selected_mass: 0.0,
                target: 0.0,
                clamped: true,
            });
            continue;
        }
        let (blocks, masks) = class_selection_inputs(data, y, det, c);
        let mut cal = pacer::calibrate_lambda_counted(
            &blocks,
            &masks,
            selection_target(pace.quota_fraction, populations[c]),
            ratio,
        )?;
        if pace.quota_fraction >= 1.0 {
            let lambda = admit_all(data, y, det, c).max(cal.lambda);
            cal.selected_mass = masks.iter().flatten().filter(|m| **m).count() as f64;
            cal.lambda = lambda;
            cal.gamma = ratio * lambda;
        }
        next.lambda[c] = cal.lambda;
        next.gamma[c] = cal.gamma;
        cals.push(cal);
    }
    Ok((next, cals))
}

fn degenerate_list(d: &[(usize, Degeneracy)]) -> Vec<usize> {
    d.iter().map(|(c, _)| c + 1).collect()
}

/// Runs the full alternation and returns the final detectors with the state.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(DetectorSet, TrainState)> {
    cfg.validate()?;
    data.validate_for_training()?;
    let populations = class_populations(data);
    for (c, n) in populations.iter().enumerate() {
        let easy = data.bags.iter().any(|b| b.is_easy() && b.has_label(c));
        if *n > 0 && !easy {
            log::warn!("class {} has no easy bag", c + 1);
        }
    }

    let (mut y, mut v) = if cfg.has(Ablation::NoCurriculum) {
        curriculum::random_initialize(data, cfg.seed)?
    } else {
        curriculum::initialize(data, &cfg.curriculum)?
    };
    let gamma0 = cfg.gamma_ratio() * cfg.pace.initial_lambda;
    let mut pace = PaceState::uniform(
        data.num_classes,
        cfg.pace.initial_lambda,
        gamma0,
        cfg.pace.quota_fraction,
        cfg.pace.growth,
    );
    let reg = cfg.svm.reg_tradeoff;

    if cfg.has(Ablation::NoAlternation) {
        let fit = wsvm::train_one_vs_all(data, &y, &v, &cfg.svm)?;
        let obj = evaluate_objective(data, &y, &v, &fit.detectors, &pace, reg);
        let record = IterationRecord {
            iter: 1,
            data_term: obj.data_term,
            reg_term: obj.regularizer_term,
            total: obj.total,
            surrogate: obj.surrogate,
            label_changes: 0,
            per_class: Vec::new(),
            data_before_labels: obj.data_term,
            data_after_labels: obj.data_term,
            total_before_weights: obj.total,
            total_after_weights: obj.total,
            degenerate_classes: degenerate_list(&fit.degenerate),
        };
        let det = fit.detectors;
        return Ok((
            det.clone(),
            TrainState {
                iteration: 1,
                labels: y,
                weights: v,
                detectors: det,
                pace,
                log: vec![record],
                converged: true,
            },
        ));
    }

    let mut log = Vec::new();
    let mut det = DetectorSet::zeros(data.num_classes, data.feat_dim);
    let mut converged = false;
    let mut iteration = 0;

    while iteration < cfg.max_iters {
        iteration += 1;

        let fit = wsvm::train_one_vs_all(data, &y, &v, &cfg.svm)?;
        det = fit.detectors;

        let data_before_labels = wsvm::weighted_loss_sum(data, &y, &v, &det);
        let new_y = labeler::update_labels(data, &det, &v, cfg.labeler)?;
        let data_after_labels = wsvm::weighted_loss_sum(data, &new_y, &v, &det);
        let label_changes = new_y.changes_from(&y);
        y = new_y;

        let (calibrated, cals) = calibrate_pace(data, &y, &det, &pace, cfg)?;
        pace = calibrated;
        let total_before_weights = evaluate_objective(data, &y, &v, &det, &pace, reg).total;
        v = pacer::update_weights(data, &y, &det, &pace)?;
        let obj = evaluate_objective(data, &y, &v, &det, &pace, reg);

        let per_class = cals
            .iter()
            .enumerate()
            .map(|(c, cal)| ClassPace {
                class: c + 1,
                lambda: pace.lambda[c],
                gamma: pace.gamma[c],
                quota: pace.quota_fraction,
                target: cal.target,
                selected_mass: cal.selected_mass,
            })
            .collect();
        let record = IterationRecord {
            iter: iteration,
            data_term: obj.data_term,
            reg_term: obj.regularizer_term,
            total: obj.total,
            surrogate: obj.surrogate,
            label_changes,
            per_class,
            data_before_labels,
            data_after_labels,
            total_before_weights,
            total_after_weights: obj.total,
            degenerate_classes: degenerate_list(&fit.degenerate),
        };
        if !record.weights_monotone() || (cfg.labeler == LabelMode::Corrected && !record.labels_monotone()) {
            log::warn!("objective increased within iteration {iteration}");
        }
        log::debug!(
            "iter {iteration}: total {:.6} data {:.6} changes {label_changes}",
            obj.total,
            obj.data_term
        );
        log.push(record);

        let full_quota = pace.quota_fraction >= 1.0;
        pace = advance_pace(&pace);
        if cfg.convergence == Convergence::LabelsStableAndFullQuota && label_changes == 0 && full_quota {
            converged = true;
            break;
        }
    }

    Ok((
        det.clone(),
        TrainState {
            iteration,
            labels: y,
            weights: v,
            detectors: det,
            pace,
            log,
            converged,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Boxes overlapping a kept box of the same class by more than this are
    /// dropped.
    pub nms_iou: f64,
    /// Hypotheses scoring below this are not reported.
    pub score_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.3,
            score_threshold: 0.0,
        }
    }
}

/// Scores every hypothesis for every class, applies per-class NMS and returns
/// the survivors of each bag sorted by descending score.
pub fn detect(bags: &[ImageBag], det: &DetectorSet, cfg: &DetectConfig) -> Result<Vec<Vec<Detection>>> {
    det.validate()?;
    bags.iter()
        .map(|bag| {
            let mut scores = Vec::with_capacity(bag.len());
            for h in &bag.hypotheses {
                if h.feat.len() != det.feat_dim {
                    return Err(SpclError::DimensionMismatch {
                        expected: det.feat_dim,
                        got: h.feat.len(),
                    });
                }
                scores.push(det.scores(&h.feat));
            }
            let mut out = Vec::new();
            for c in 0..det.num_classes() {
                let idx: Vec<usize> = (0..bag.len()).filter(|&i| scores[i][c] >= cfg.score_threshold).collect();
                let boxes: Vec<_> = idx.iter().map(|&i| bag.hypotheses[i].bbox).collect();
                let s: Vec<f64> = idx.iter().map(|&i| scores[i][c]).collect();
                for j in nms(&boxes, &s, cfg.nms_iou) {
                    out.push(Detection {
                        bag_id: bag.id.clone(),
                        class: c,
                        bbox: boxes[j],
                        score: s[j],
                    });
                }
            }
            out.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.class.cmp(&b.class))
                    .then(a.bbox.lex_cmp(&b.bbox))
            });
            Ok(out)
        })
        .collect()
}

/// Labels every training hypothesis from the detectors alone (unit weights),
/// as used for instance-label accuracy.
pub fn infer_labels(data: &Dataset, det: &DetectorSet) -> Result<LabelMatrix> {
    let mut ones = WeightMatrix::zeros(data);
    for (k, bag) in data.bags.iter().enumerate() {
        for i in 0..bag.len() {
            for c in 0..data.num_classes {
                ones.set(k, i, c, 1.0);
            }
        }
    }
    labeler::update_labels(data, det, &ones, LabelMode::Corrected)
}
