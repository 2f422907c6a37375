//! Saliency-driven initialization of labels and weights.
//!
//! Bags with a single weak label are "easy": their saliency box is trusted
//! and hypotheses are seeded by overlap with it. Bags with several weak
//! labels are "hard" and start with zero weight, so they only enter training
//! once the pace admits them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::types::{Dataset, ImageBag, Label, LabelMatrix, WeightMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    /// Overlap with the saliency box at or above which a hypothesis of an
    /// easy bag starts as positive.
    pub tau_pos: f64,
    /// Overlap at or below which it starts as a negative for every class.
    pub tau_neg: f64,
    /// Seed every hypothesis with nonzero overlap as positive instead of
    /// using the two thresholds.
    pub literal_init: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            tau_pos: 0.5,
            tau_neg: 0.3,
            literal_init: false,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_pos > 0.0 && self.tau_pos <= 1.0 && self.tau_neg >= 0.0 && self.tau_neg < self.tau_pos;
        if ok {
            Ok(())
        } else {
            Err(SpclError::InvalidConfig(format!(
                "need 0 <= tau_neg < tau_pos <= 1, got tau_neg={} tau_pos={}",
                self.tau_neg, self.tau_pos
            )))
        }
    }
}

/// Splits bag ids into easy (one weak label) and hard (several).
pub fn partition_easy_hard(data: &Dataset) -> (Vec<String>, Vec<String>) {
    let (easy, hard): (Vec<&ImageBag>, Vec<&ImageBag>) = data.bags.iter().partition(|b| b.is_easy());
    (
        easy.into_iter().map(|b| b.id.clone()).collect(),
        hard.into_iter().map(|b| b.id.clone()).collect(),
    )
}

/// Picks one distinct hypothesis per weak label, highest key first (lowest
/// index on ties).
fn force_positives(bag: &ImageBag, key: impl Fn(usize) -> f64, labels: &mut [Label]) -> Result<Vec<usize>> {
    let mut used = Vec::new();
    for &c in &bag.weak_labels {
        if labels.contains(&Label::Class(c)) {
            continue;
        }
        let pick = (0..bag.len())
            .filter(|i| !matches!(labels[*i], Label::Class(_)))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if key(b) >= key(i) => Some(b),
                _ => Some(i),
            })
            .ok_or_else(|| {
                SpclError::InfeasibleLabels(format!(
                    "bag `{}` has fewer hypotheses than weak labels",
                    bag.id
                ))
            })?;
        labels[pick] = Label::Class(c);
        used.push(pick);
    }
    Ok(used)
}

pub fn initialize(data: &Dataset, cfg: &CurriculumConfig) -> Result<(LabelMatrix, WeightMatrix)> {
    cfg.validate()?;
    data.validate_for_training()?;
    let num_classes = data.num_classes;
    let mut all_labels = Vec::with_capacity(data.bags.len());
    let mut all_weights = Vec::with_capacity(data.bags.len());

    for bag in &data.bags {
        let n = bag.len();
        let mut labels = vec![Label::Background; n];
        let mut weights = vec![0.0; n * num_classes];

        if bag.is_easy() {
            let target = bag.weak_labels[0];
            let sal = bag.saliency_box.ok_or_else(|| SpclError::MissingSaliency(bag.id.clone()))?;
            let overlaps: Vec<f64> = bag.hypotheses.iter().map(|h| h.bbox.iou(&sal)).collect();
            for (i, &o) in overlaps.iter().enumerate() {
                let positive = if cfg.literal_init { o > 0.0 } else { o >= cfg.tau_pos };
                let negative = if cfg.literal_init { o == 0.0 } else { o <= cfg.tau_neg };
                if positive {
                    labels[i] = Label::Class(target);
                    weights[i * num_classes + target] = o;
                } else if negative {
                    weights[i * num_classes..(i + 1) * num_classes].fill(1.0);
                }
            }
            // No hypothesis reached the positive threshold: keep the label
            // constraint satisfiable with an unweighted placeholder.
            for i in force_positives(bag, |i| overlaps[i], &mut labels)? {
                weights[i * num_classes..(i + 1) * num_classes].fill(0.0);
            }
        } else {
            let key: Box<dyn Fn(usize) -> f64> = match bag.saliency_box {
                Some(sal) => Box::new(move |i| bag.hypotheses[i].bbox.iou(&sal)),
                None => Box::new(|i| bag.hypotheses[i].bbox.area()),
            };
            force_positives(bag, key, &mut labels)?;
        }
        all_labels.push(labels);
        all_weights.push(weights);
    }

    Ok((LabelMatrix::new(data, all_labels)?, WeightMatrix::from_blocks(data, all_weights)?))
}

/// Curriculum-free seeding: one uniformly random positive per weak label in
/// every bag, all other hypotheses negative with unit weight.
pub fn random_initialize(data: &Dataset, seed: u64) -> Result<(LabelMatrix, WeightMatrix)> {
    data.validate_for_training()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = data.num_classes;
    let mut all_labels = Vec::with_capacity(data.bags.len());
    let mut all_weights = Vec::with_capacity(data.bags.len());
    for bag in &data.bags {
        let n = bag.len();
        if bag.weak_labels.len() > n {
            return Err(SpclError::InfeasibleLabels(format!(
                "bag `{}` has fewer hypotheses than weak labels",
                bag.id
            )));
        }
        let mut labels = vec![Label::Background; n];
        let mut weights = vec![1.0; n * num_classes];
        let picks = sample(&mut rng, n, bag.weak_labels.len());
        for (&c, i) in bag.weak_labels.iter().zip(picks.iter()) {
            labels[i] = Label::Class(c);
            weights[i * num_classes..(i + 1) * num_classes].fill(0.0);
            weights[i * num_classes + c] = 1.0;
        }
        all_labels.push(labels);
        all_weights.push(weights);
    }
    Ok((LabelMatrix::new(data, all_labels)?, WeightMatrix::from_blocks(data, all_weights)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::types::Hypothesis;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn hyp(b: BBox) -> Hypothesis {
        Hypothesis::new(vec![0.0, 1.0], b).unwrap()
    }

    fn dataset(bags: Vec<ImageBag>) -> Dataset {
        Dataset::new(bags, 3, 2).unwrap()
    }

    #[test]
    fn partition_counts() {
        let sal = Some(bb(0.0, 0.0, 1.0, 1.0));
        let mk = |id: &str, w: Vec<usize>| ImageBag::new(id, vec![hyp(bb(0.0, 0.0, 1.0, 1.0))], w, sal, None);
        let data = dataset(vec![
            mk("a", vec![2]),
            mk("b", vec![0, 1]),
            mk("c", vec![1]),
            mk("d", vec![0]),
            mk("e", vec![0, 1, 2]),
        ]);
        let (easy, hard) = partition_easy_hard(&data);
        assert_eq!(easy, vec!["a", "c", "d"]);
        assert_eq!(hard, vec!["b", "e"]);
    }

    #[test]
    fn easy_bag_identity_and_disjoint() {
        let sal = bb(10.0, 10.0, 20.0, 20.0);
        let bag = ImageBag::new(
            "e",
            vec![hyp(sal), hyp(bb(50.0, 50.0, 60.0, 60.0)), hyp(bb(12.0, 10.0, 24.0, 20.0))],
            vec![1],
            Some(sal),
            None,
        );
        let data = dataset(vec![bag]);
        let (y, v) = initialize(&data, &CurriculumConfig::default()).unwrap();
        assert_eq!(y.get(0, 0), Label::Class(1));
        assert_eq!(v.get(0, 0, 1), 1.0);
        assert_eq!(y.get(0, 1), Label::Background);
        assert_eq!((0..3).map(|c| v.get(0, 1, c)).collect::<Vec<_>>(), vec![1.0; 3]);
        // iou = 80 / 140 clears tau_pos and becomes the weight
        assert_eq!(y.get(0, 2), Label::Class(1));
        assert!((v.get(0, 2, 1) - 80.0 / 140.0).abs() < 1e-12);
    }

    #[test]
    fn intermediate_overlap_is_excluded() {
        let sal = bb(0.0, 0.0, 10.0, 10.0);
        // iou = 40 / 100 = 0.4
        let bag = ImageBag::new("e", vec![hyp(sal), hyp(bb(0.0, 0.0, 4.0, 10.0))], vec![0], Some(sal), None);
        let (y, v) = initialize(&dataset(vec![bag]), &CurriculumConfig::default()).unwrap();
        assert_eq!(y.get(0, 1), Label::Background);
        assert_eq!(v.block(0)[3..6], [0.0; 3]);
    }

    #[test]
    fn literal_mode_takes_any_overlap() {
        let sal = bb(0.0, 0.0, 10.0, 10.0);
        let bag = ImageBag::new("e", vec![hyp(sal), hyp(bb(9.0, 9.0, 30.0, 30.0))], vec![0], Some(sal), None);
        let cfg = CurriculumConfig {
            literal_init: true,
            ..Default::default()
        };
        let (y, v) = initialize(&dataset(vec![bag]), &cfg).unwrap();
        assert_eq!(y.get(0, 1), Label::Class(0));
        assert!(v.get(0, 1, 0) > 0.0 && v.get(0, 1, 0) < 0.01);
    }

    #[test]
    fn hard_bags_start_unweighted_but_feasible() {
        let bag = ImageBag::new(
            "h",
            vec![hyp(bb(0.0, 0.0, 5.0, 5.0)), hyp(bb(0.0, 0.0, 50.0, 50.0)), hyp(bb(0.0, 0.0, 20.0, 20.0))],
            vec![0, 2],
            None,
            None,
        );
        let (y, v) = initialize(&dataset(vec![bag]), &CurriculumConfig::default()).unwrap();
        assert_eq!(y.bag(0), &[Label::Background, Label::Class(0), Label::Class(2)]);
        assert!(v.block(0).iter().all(|w| *w == 0.0));
    }

    #[test]
    fn easy_bag_without_saliency_is_named() {
        let bag = ImageBag::new("lonely", vec![hyp(bb(0.0, 0.0, 1.0, 1.0))], vec![0], None, None);
        match initialize(&dataset(vec![bag]), &CurriculumConfig::default()) {
            Err(SpclError::MissingSaliency(id)) => assert_eq!(id, "lonely"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let cfg = CurriculumConfig {
            tau_pos: 0.3,
            tau_neg: 0.5,
            literal_init: false,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_seeding_is_feasible_and_seeded() {
        let bag = ImageBag::new(
            "h",
            (0..6).map(|i| hyp(bb(i as f64, 0.0, i as f64 + 1.0, 1.0))).collect(),
            vec![0, 1],
            None,
            None,
        );
        let data = dataset(vec![bag]);
        let a = random_initialize(&data, 3).unwrap();
        let b = random_initialize(&data, 3).unwrap();
        assert_eq!(a, b);
    }
}
