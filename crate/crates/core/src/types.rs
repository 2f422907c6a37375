//! Domain types shared by every stage of training.
//!
//! Class indices are 0-based everywhere in the library. Files written by the
//! harness use 1-based indices; the conversion happens at the I/O boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::geometry::BBox;

/// One region hypothesis: a feature vector and the box it was extracted from.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub feat: Vec<f64>,
    pub bbox: BBox,
}

impl Hypothesis {
    pub fn new(feat: Vec<f64>, bbox: BBox) -> Result<Self> {
        if feat.iter().any(|v| !v.is_finite()) {
            return Err(SpclError::NonFinite("hypothesis feature".into()));
        }
        Ok(Self { feat, bbox })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    pub class: usize,
    pub bbox: BBox,
}

/// One weakly-labeled image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBag {
    pub id: String,
    pub hypotheses: Vec<Hypothesis>,
    /// Sorted, deduplicated class indices present in the image.
    pub weak_labels: Vec<usize>,
    pub saliency_box: Option<BBox>,
    pub gt_objects: Option<Vec<GtObject>>,
}

impl ImageBag {
    pub fn new(
        id: impl Into<String>,
        hypotheses: Vec<Hypothesis>,
        mut weak_labels: Vec<usize>,
        saliency_box: Option<BBox>,
        gt_objects: Option<Vec<GtObject>>,
    ) -> Self {
        weak_labels.sort_unstable();
        weak_labels.dedup();
        Self {
            id: id.into(),
            hypotheses,
            weak_labels,
            saliency_box,
            gt_objects,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn has_label(&self, class: usize) -> bool {
        self.weak_labels.binary_search(&class).is_ok()
    }

    pub fn is_easy(&self) -> bool {
        self.weak_labels.len() == 1
    }

    /// Ground-truth state of every hypothesis: the class of the best
    /// overlapping object when that overlap reaches `iou_thresh`, background
    /// otherwise. `None` when the bag carries no ground truth.
    pub fn instance_labels(&self, iou_thresh: f64) -> Option<Vec<Label>> {
        let gt = self.gt_objects.as_ref()?;
        Some(
            self.hypotheses
                .iter()
                .map(|h| {
                    let mut best: Option<(f64, usize)> = None;
                    for obj in gt {
                        let o = h.bbox.iou(&obj.bbox);
                        if o >= iou_thresh && best.is_none_or(|(b, _)| o > b) {
                            best = Some((o, obj.class));
                        }
                    }
                    best.map_or(Label::Background, |(_, c)| Label::Class(c))
                })
                .collect(),
        )
    }
}

/// A corpus of bags sharing one class count and one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub bags: Vec<ImageBag>,
    pub num_classes: usize,
    pub feat_dim: usize,
}

impl Dataset {
    pub fn new(bags: Vec<ImageBag>, num_classes: usize, feat_dim: usize) -> Result<Self> {
        for bag in &bags {
            for &c in bag
                .weak_labels
                .iter()
                .chain(bag.gt_objects.iter().flatten().map(|o| &o.class))
            {
                if c >= num_classes {
                    return Err(SpclError::ClassOutOfRange {
                        class: c,
                        num_classes,
                    });
                }
            }
            for h in &bag.hypotheses {
                if h.feat.len() != feat_dim {
                    return Err(SpclError::DimensionMismatch {
                        expected: feat_dim,
                        got: h.feat.len(),
                    });
                }
            }
        }
        Ok(Self {
            bags,
            num_classes,
            feat_dim,
        })
    }

    pub fn num_hypotheses(&self) -> usize {
        self.bags.iter().map(ImageBag::len).sum()
    }

    /// Checks the preconditions training relies on: at least one bag, every
    /// bag weakly labeled and non-empty.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.bags.is_empty() {
            return Err(SpclError::EmptyDataset);
        }
        for bag in &self.bags {
            if bag.weak_labels.is_empty() {
                return Err(SpclError::InfeasibleLabels(format!(
                    "training bag `{}` has no weak labels",
                    bag.id
                )));
            }
            if bag.is_empty() {
                return Err(SpclError::EmptyBag(bag.id.clone()));
            }
        }
        Ok(())
    }
}

/// State of one hypothesis: background or exactly one class. This encoding
/// makes the first two labeling constraints (binary entries, at most one
/// positive class per hypothesis) hold by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Background,
    Class(usize),
}

impl Label {
    /// The ±1 entry for class `c`.
    pub fn sign(self, c: usize) -> f64 {
        match self {
            Label::Class(k) if k == c => 1.0,
            _ => -1.0,
        }
    }

    /// Dense index with background at 0 and class `c` at `c + 1`.
    pub fn state_index(self) -> usize {
        match self {
            Label::Background => 0,
            Label::Class(c) => c + 1,
        }
    }

    pub fn from_state_index(s: usize) -> Self {
        if s == 0 {
            Label::Background
        } else {
            Label::Class(s - 1)
        }
    }
}

/// Checks that every weak label of `bag` has a positive hypothesis and that
/// all classes are in range.
pub fn check_bag_labels(bag: &ImageBag, labels: &[Label], num_classes: usize) -> Result<()> {
    if labels.len() != bag.len() {
        return Err(SpclError::DimensionMismatch {
            expected: bag.len(),
            got: labels.len(),
        });
    }
    for l in labels {
        if let Label::Class(c) = *l {
            if c >= num_classes {
                return Err(SpclError::ClassOutOfRange {
                    class: c,
                    num_classes,
                });
            }
        }
    }
    for &c in &bag.weak_labels {
        if !labels.contains(&Label::Class(c)) {
            return Err(SpclError::InfeasibleLabels(format!(
                "bag `{}` has no positive hypothesis for weak label {}",
                bag.id,
                c + 1
            )));
        }
    }
    Ok(())
}

/// Per-hypothesis labels for a whole dataset; always feasible.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    bags: Vec<Vec<Label>>,
}

impl LabelMatrix {
    pub fn new(data: &Dataset, bags: Vec<Vec<Label>>) -> Result<Self> {
        if bags.len() != data.bags.len() {
            return Err(SpclError::DimensionMismatch {
                expected: data.bags.len(),
                got: bags.len(),
            });
        }
        for (bag, labels) in data.bags.iter().zip(&bags) {
            check_bag_labels(bag, labels, data.num_classes)?;
        }
        Ok(Self { bags })
    }

    /// Builds labels from explicit ±1 entries, `signs[k][i][c]`.
    pub fn from_signs(data: &Dataset, signs: &[Vec<Vec<i8>>]) -> Result<Self> {
        let mut bags = Vec::with_capacity(signs.len());
        for (k, rows) in signs.iter().enumerate() {
            let mut labels = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                if row.len() != data.num_classes {
                    return Err(SpclError::DimensionMismatch {
                        expected: data.num_classes,
                        got: row.len(),
                    });
                }
                if let Some(bad) = row.iter().find(|&&s| s != 1 && s != -1) {
                    return Err(SpclError::InfeasibleLabels(format!(
                        "entry {bad} at bag {k}, hypothesis {i} is not ±1"
                    )));
                }
                let positives: Vec<usize> = (0..row.len()).filter(|&c| row[c] == 1).collect();
                match positives.as_slice() {
                    [] => labels.push(Label::Background),
                    [c] => labels.push(Label::Class(*c)),
                    _ => {
                        return Err(SpclError::InfeasibleLabels(format!(
                            "hypothesis {i} of bag {k} is positive for several classes"
                        )))
                    }
                }
            }
            bags.push(labels);
        }
        Self::new(data, bags)
    }

    pub fn bag(&self, k: usize) -> &[Label] {
        &self.bags[k]
    }

    pub fn bags(&self) -> &[Vec<Label>] {
        &self.bags
    }

    pub fn get(&self, k: usize, i: usize) -> Label {
        self.bags[k][i]
    }

    pub fn sign(&self, k: usize, i: usize, c: usize) -> f64 {
        self.bags[k][i].sign(c)
    }

    /// Number of hypotheses whose state differs between `self` and `other`.
    pub fn changes_from(&self, other: &LabelMatrix) -> usize {
        self.bags
            .iter()
            .zip(&other.bags)
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum()
    }
}

/// Importance weights `v[k][i][c]`, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    num_classes: usize,
    /// Row-major `n_k x C` block per bag.
    bags: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn zeros(data: &Dataset) -> Self {
        Self {
            num_classes: data.num_classes,
            bags: data
                .bags
                .iter()
                .map(|b| vec![0.0; b.len() * data.num_classes])
                .collect(),
        }
    }

    /// Builds from row-major per-bag blocks, validating shape and range.
    pub fn from_blocks(data: &Dataset, bags: Vec<Vec<f64>>) -> Result<Self> {
        if bags.len() != data.bags.len() {
            return Err(SpclError::DimensionMismatch {
                expected: data.bags.len(),
                got: bags.len(),
            });
        }
        for (bag, block) in data.bags.iter().zip(&bags) {
            if block.len() != bag.len() * data.num_classes {
                return Err(SpclError::DimensionMismatch {
                    expected: bag.len() * data.num_classes,
                    got: block.len(),
                });
            }
            if let Some(v) = block.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(SpclError::InvalidWeights(format!(
                    "weight {v} in bag `{}` is outside [0, 1]",
                    bag.id
                )));
            }
        }
        Ok(Self {
            num_classes: data.num_classes,
            bags,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn bag_len(&self, k: usize) -> usize {
        self.bags[k].len() / self.num_classes.max(1)
    }

    pub fn get(&self, k: usize, i: usize, c: usize) -> f64 {
        self.bags[k][i * self.num_classes + c]
    }

    /// Panics when `value` is outside `[0, 1]`.
    pub fn set(&mut self, k: usize, i: usize, c: usize, value: f64) {
        assert!(
            (0.0..=1.0).contains(&value),
            "weight {value} outside [0, 1]"
        );
        self.bags[k][i * self.num_classes + c] = value;
    }

    /// Row-major `n_k x C` block for bag `k`.
    pub fn block(&self, k: usize) -> &[f64] {
        &self.bags[k]
    }

    /// Weights of class `c` in bag `k`, one per hypothesis.
    pub fn column(&self, k: usize, c: usize) -> Vec<f64> {
        self.bags[k]
            .iter()
            .skip(c)
            .step_by(self.num_classes)
            .copied()
            .collect()
    }

    /// Weights of class `c` grouped by bag.
    pub fn class_block(&self, c: usize) -> Vec<Vec<f64>> {
        (0..self.bags.len()).map(|k| self.column(k, c)).collect()
    }
}

/// A linear classifier `w . x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDetector {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearDetector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

/// One linear detector per class. Serializes as
/// `{"classes":[{"w":[...],"b":...},...],"feat_dim":d}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub classes: Vec<LinearDetector>,
    pub feat_dim: usize,
}

impl DetectorSet {
    pub fn zeros(num_classes: usize, feat_dim: usize) -> Self {
        Self {
            classes: vec![LinearDetector::zeros(feat_dim); num_classes],
            feat_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        for det in &self.classes {
            if det.w.len() != self.feat_dim {
                return Err(SpclError::DimensionMismatch {
                    expected: self.feat_dim,
                    got: det.w.len(),
                });
            }
            if !det.b.is_finite() || det.w.iter().any(|v| !v.is_finite()) {
                return Err(SpclError::NonFinite("detector".into()));
            }
        }
        Ok(())
    }

    /// `w_c . x + b_c`.
    pub fn score(&self, feat: &[f64], c: usize) -> Result<f64> {
        if feat.len() != self.feat_dim {
            return Err(SpclError::DimensionMismatch {
                expected: self.feat_dim,
                got: feat.len(),
            });
        }
        let det = self.classes.get(c).ok_or(SpclError::ClassOutOfRange {
            class: c,
            num_classes: self.classes.len(),
        })?;
        Ok(det.decision(feat))
    }

    /// Scores for every class. The caller guarantees the dimension.
    pub fn scores(&self, feat: &[f64]) -> Vec<f64> {
        debug_assert_eq!(feat.len(), self.feat_dim);
        self.classes.iter().map(|d| d.decision(feat)).collect()
    }
}

/// Score of hypothesis `h` under the class-`c` detector.
pub fn score(h: &Hypothesis, det: &DetectorSet, c: usize) -> Result<f64> {
    det.score(&h.feat, c)
}
