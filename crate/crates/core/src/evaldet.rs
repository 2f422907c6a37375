//! Detection metrics: VOC-style average precision and CorLoc.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::geometry::BBox;
use crate::types::{Dataset, DetectorSet, GtObject, ImageBag, Label, LabelMatrix};

/// Overlap needed for a detection to count as correct.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bag_id: String,
    /// 0-based class.
    pub class: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// Ground-truth objects keyed by bag id.
pub fn ground_truth_index(bags: &[ImageBag]) -> Result<HashMap<&str, &[GtObject]>> {
    bags.iter()
        .map(|b| {
            b.gt_objects
                .as_deref()
                .map(|g| (b.id.as_str(), g))
                .ok_or(SpclError::NoGroundTruth)
        })
        .collect()
}

/// Greedy matching of the detections of one class: highest score first
/// (ties broken by bag id, then box), each one taking the ground-truth object
/// of that class it overlaps most. A detection is a true positive when that
/// overlap reaches `iou_thresh` and the object was not already claimed.
///
/// Returns the true-positive flags in ranked order and the number of
/// ground-truth objects of the class.
pub fn match_detections(
    detections: &[Detection],
    gt: &HashMap<&str, &[GtObject]>,
    class: usize,
    iou_thresh: f64,
) -> (Vec<bool>, usize) {
    let mut ranked: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.bag_id.cmp(&b.bag_id))
            .then_with(|| a.bbox.lex_cmp(&b.bbox))
    });
    let num_gt = gt.values().flat_map(|g| g.iter()).filter(|o| o.class == class).count();
    let mut claimed: HashMap<(&str, usize), bool> = HashMap::new();
    let tp = ranked
        .iter()
        .map(|d| {
            let Some((&key, objs)) = gt.get_key_value(d.bag_id.as_str()) else {
                return false;
            };
            let best = objs
                .iter()
                .enumerate()
                .filter(|(_, o)| o.class == class)
                .map(|(j, o)| (j, d.bbox.iou(&o.bbox)))
                .fold(None, |best: Option<(usize, f64)>, (j, o)| match best {
                    Some((_, bo)) if bo >= o => best,
                    _ => Some((j, o)),
                });
            match best {
                Some((j, o)) if o >= iou_thresh => {
                    let taken = claimed.entry((key, j)).or_insert(false);
                    !std::mem::replace(taken, true)
                }
                _ => false,
            }
        })
        .collect();
    (tp, num_gt)
}

/// Eleven-point interpolated average precision from ranked true-positive
/// flags.
pub fn average_precision(tp: &[bool], num_gt: usize) -> Result<f64> {
    if num_gt == 0 {
        return Err(SpclError::NoGroundTruth);
    }
    let mut hits = 0usize;
    let points: Vec<(f64, f64)> = tp
        .iter()
        .enumerate()
        .map(|(rank, &t)| {
            hits += t as usize;
            (hits as f64 / num_gt as f64, hits as f64 / (rank + 1) as f64)
        })
        .collect();
    let sum: f64 = (0..=10)
        .map(|t| {
            let r = t as f64 / 10.0;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / 11.0)
}

/// Fraction of (bag, weak label) pairs whose top-scoring hypothesis for that
/// label overlaps a ground-truth object of the class by at least
/// [`MATCH_IOU`].
pub fn corloc(data: &Dataset, det: &DetectorSet) -> Result<f64> {
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for bag in &data.bags {
        let gt = bag.gt_objects.as_deref().ok_or(SpclError::NoGroundTruth)?;
        for &c in &bag.weak_labels {
            pairs += 1;
            let mut best: Option<(f64, &BBox)> = None;
            for h in &bag.hypotheses {
                let s = det.score(&h.feat, c)?;
                if best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, &h.bbox));
                }
            }
            if let Some((_, b)) = best {
                if gt.iter().any(|o| o.class == c && o.bbox.iou(b) >= MATCH_IOU) {
                    hits += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(SpclError::EmptyDataset);
    }
    Ok(hits as f64 / pairs as f64)
}

/// Share of hypotheses whose label agrees with the ground-truth instance
/// label (class of the best-overlapping object at `MATCH_IOU` or more, else
/// background).
pub fn instance_label_accuracy(data: &Dataset, labels: &LabelMatrix) -> Result<f64> {
    let mut total = 0usize;
    let mut right = 0usize;
    for (k, bag) in data.bags.iter().enumerate() {
        let truth: Vec<Label> = bag.instance_labels(MATCH_IOU).ok_or(SpclError::NoGroundTruth)?;
        total += truth.len();
        right += truth.iter().zip(labels.bag(k)).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        return Err(SpclError::EmptyDataset);
    }
    Ok(right as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class_ap: Vec<f64>,
    pub mean_ap: f64,
    pub corloc: Option<f64>,
}

/// AP for every class over `test_bags`, with optional CorLoc on training data.
pub fn evaluate(
    test_bags: &[ImageBag],
    detections: &[Detection],
    num_classes: usize,
    corloc: Option<f64>,
) -> Result<MetricReport> {
    let gt = ground_truth_index(test_bags)?;
    let per_class_ap = (0..num_classes)
        .map(|c| {
            let (tp, n) = match_detections(detections, &gt, c, MATCH_IOU);
            average_precision(&tp, n)
        })
        .collect::<Result<Vec<_>>>()?;
    if per_class_ap.is_empty() {
        return Err(SpclError::EmptyDataset);
    }
    let mean_ap = per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64;
    Ok(MetricReport {
        per_class_ap,
        mean_ap,
        corloc,
    })
}
