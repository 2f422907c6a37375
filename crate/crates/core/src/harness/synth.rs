//! Seeded synthetic corpora with planted objects, clutter and saliency.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpclError};
use crate::geometry::BBox;
use crate::types::{Dataset, GtObject, Hypothesis, ImageBag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Training bags; the test split has as many.
    pub num_bags: usize,
    pub easy_fraction: f64,
    pub n_per_bag: usize,
    pub feat_dim: usize,
    /// Distance between any two class means.
    pub class_sep: f64,
    pub noise_sigma: f64,
    /// Class `c` uses `noise_sigma * (1 + skew * (2c / (C - 1) - 1))`, so the
    /// classes range from cleaner to noisier than `noise_sigma`.
    pub class_noise_skew: f64,
    /// Spread of clutter features around the origin.
    pub background_sigma: f64,
    /// Probability that an easy bag's saliency box is a true object box.
    pub saliency_reliability: f64,
    pub objects_per_hard_bag: usize,
    /// Hypotheses planted on every object (IOU >= 0.6 with it).
    pub hyps_per_object: usize,
    /// Share in `[0, 1)` of the per-hypothesis feature variance that is common
    /// to all hypotheses of one object.
    pub object_spread: f64,
    pub image_size: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_bags: 120,
            easy_fraction: 2.0 / 3.0,
            n_per_bag: 30,
            feat_dim: 16,
            class_sep: 4.0,
            noise_sigma: 1.0,
            class_noise_skew: 0.4,
            background_sigma: 0.5,
            saliency_reliability: 0.8,
            objects_per_hard_bag: 2,
            hyps_per_object: 5,
            object_spread: 0.0,
            image_size: 100.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpclError::InvalidConfig(m));
        if self.num_classes == 0 || self.num_bags == 0 || self.feat_dim == 0 || self.hyps_per_object == 0 {
            return bad("counts must be positive".into());
        }
        if self.feat_dim < self.num_classes {
            return bad(format!("feat_dim {} below num_classes {}", self.feat_dim, self.num_classes));
        }
        if !(0.0..=1.0).contains(&self.easy_fraction)
            || !(0.0..=1.0).contains(&self.saliency_reliability)
            || !(0.0..1.0).contains(&self.object_spread)
        {
            return bad("fractions must lie in [0, 1]".into());
        }
        if self.easy_fraction < 1.0 && (self.objects_per_hard_bag < 2 || self.objects_per_hard_bag > self.num_classes) {
            return bad(format!(
                "objects_per_hard_bag must be in [2, {}], got {}",
                self.num_classes, self.objects_per_hard_bag
            ));
        }
        if self.n_per_bag < self.objects_per_hard_bag.max(1) * self.hyps_per_object + 1 {
            return bad(format!("n_per_bag {} leaves no room for clutter", self.n_per_bag));
        }
        if !(0.0..1.0).contains(&self.class_noise_skew) {
            return bad(format!("class_noise_skew {} outside [0, 1)", self.class_noise_skew));
        }
        if !(self.class_sep >= 0.0 && self.noise_sigma >= 0.0 && self.background_sigma >= 0.0 && self.image_size > 0.0) {
            return bad("scales must be non-negative".into());
        }
        Ok(())
    }

    pub fn num_easy(&self) -> usize {
        (self.easy_fraction * self.num_bags as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Mean of class `c`: a scaled basis vector, so every pair is `class_sep` apart.
pub fn class_mean(cfg: &SynthConfig, c: usize) -> Vec<f64> {
    let mut m = vec![0.0; cfg.feat_dim];
    m[c] = cfg.class_sep / std::f64::consts::SQRT_2;
    m
}

/// Feature noise of class `c`.
pub fn class_noise(cfg: &SynthConfig, c: usize) -> f64 {
    let pos = if cfg.num_classes > 1 {
        2.0 * c as f64 / (cfg.num_classes - 1) as f64 - 1.0
    } else {
        0.0
    };
    cfg.noise_sigma * (1.0 + cfg.class_noise_skew * pos)
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn gaussian(&mut self, mean: &[f64], sigma: f64) -> Vec<f64> {
        mean.iter()
            .map(|m| m + sigma * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn random_box(&mut self, min_frac: f64, max_frac: f64) -> BBox {
        let s = self.cfg.image_size;
        let w = s * self.rng.random_range(min_frac..max_frac);
        let h = s * self.rng.random_range(min_frac..max_frac);
        let x0 = self.rng.random_range(0.0..s - w);
        let y0 = self.rng.random_range(0.0..s - h);
        BBox::new(x0, y0, x0 + w, y0 + h).expect("positive extent")
    }

    fn place_objects(&mut self, n: usize) -> Vec<BBox> {
        let mut boxes: Vec<BBox> = Vec::with_capacity(n);
        while boxes.len() < n {
            let mut cand = self.random_box(0.25, 0.45);
            for _ in 0..1000 {
                if boxes.iter().all(|b| b.intersection_area(&cand) == 0.0) {
                    break;
                }
                cand = self.random_box(0.25, 0.45);
            }
            boxes.push(cand);
        }
        boxes
    }

    fn jitter(&mut self, obj: &BBox) -> BBox {
        loop {
            let (w, h) = (obj.width(), obj.height());
            let mut d = || self.rng.random_range(-0.1..0.1);
            let (a, b, c, e) = (d() * w, d() * h, d() * w, d() * h);
            if let Ok(bx) = BBox::new(obj.x0() + a, obj.y0() + b, obj.x1() + c, obj.y1() + e) {
                if bx.iou(obj) >= 0.6 {
                    return bx;
                }
            }
        }
    }

    fn clutter_box(&mut self, objects: &[BBox]) -> BBox {
        loop {
            let b = self.random_box(0.1, 0.5);
            if objects.iter().all(|o| o.iou(&b) < 0.3) {
                return b;
            }
        }
    }

    fn bag(&mut self, id: String, classes: Vec<usize>, easy: bool) -> Result<ImageBag> {
        let cfg = self.cfg;
        let boxes = self.place_objects(classes.len());
        let mut hyps = Vec::with_capacity(cfg.n_per_bag);
        for (&c, obj) in classes.iter().zip(&boxes) {
            let sigma = class_noise(cfg, c);
            let shared = sigma * cfg.object_spread.sqrt();
            let own = sigma * (1.0 - cfg.object_spread).sqrt();
            let mean = self.gaussian(&class_mean(cfg, c), shared);
            for _ in 0..cfg.hyps_per_object {
                let bx = self.jitter(obj);
                hyps.push(Hypothesis::new(self.gaussian(&mean, own), bx)?);
            }
        }
        let origin = vec![0.0; cfg.feat_dim];
        while hyps.len() < cfg.n_per_bag {
            let bx = self.clutter_box(&boxes);
            hyps.push(Hypothesis::new(self.gaussian(&origin, cfg.background_sigma), bx)?);
        }
        // shuffle so planted hypotheses do not sit at fixed positions
        let order = sample(&mut self.rng, hyps.len(), hyps.len());
        let hyps: Vec<Hypothesis> = order.iter().map(|i| hyps[i].clone()).collect();

        let reliable = !easy || self.rng.random_bool(cfg.saliency_reliability);
        let saliency = if reliable {
            boxes[self.rng.random_range(0..boxes.len())]
        } else {
            self.clutter_box(&boxes)
        };
        let gt = classes
            .iter()
            .zip(&boxes)
            .map(|(&class, &bbox)| GtObject { class, bbox })
            .collect();
        Ok(ImageBag::new(id, hyps, classes, Some(saliency), Some(gt)))
    }

    fn split(&mut self, prefix: &str) -> Result<Dataset> {
        let cfg = self.cfg;
        let n_easy = cfg.num_easy();
        let mut bags = Vec::with_capacity(cfg.num_bags);
        for k in 0..cfg.num_bags {
            let easy = k < n_easy;
            let classes = if easy {
                vec![k % cfg.num_classes]
            } else {
                sample(&mut self.rng, cfg.num_classes, cfg.objects_per_hard_bag).into_vec()
            };
            bags.push(self.bag(format!("{prefix}-{k:04}"), classes, easy)?);
        }
        Dataset::new(bags, cfg.num_classes, cfg.feat_dim)
    }
}

/// Draws a training and a test split. Every bag keeps its planted objects as
/// ground truth; weak labels are exactly the planted classes.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = Generator { cfg, rng: rng.clone() }.split("train")?;
    rng.set_stream(1);
    let test = Generator { cfg, rng }.split("test")?;
    Ok(SyntheticData { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_bags: 12,
            n_per_bag: 14,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
        assert_ne!(a.train.bags[0].hypotheses, a.test.bags[0].hypotheses);
    }

    #[test]
    fn all_easy_when_fraction_is_one() {
        let d = generate_synthetic(&SynthConfig {
            easy_fraction: 1.0,
            ..small()
        })
        .unwrap();
        assert!(d.train.bags.iter().all(|b| b.weak_labels.len() == 1));
    }

    #[test]
    fn reliable_saliency_is_an_object_box() {
        let d = generate_synthetic(&SynthConfig {
            saliency_reliability: 1.0,
            ..small()
        })
        .unwrap();
        for bag in d.train.bags.iter().filter(|b| b.is_easy()) {
            let gt = bag.gt_objects.as_ref().unwrap();
            assert!(gt.iter().any(|o| Some(o.bbox) == bag.saliency_box));
        }
    }

    #[test]
    fn class_means_are_equidistant() {
        let cfg = SynthConfig::default();
        for a in 0..cfg.num_classes {
            for b in 0..a {
                let d: f64 = class_mean(&cfg, a)
                    .iter()
                    .zip(class_mean(&cfg, b))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - cfg.class_sep).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_noise_spans_the_skew() {
        let cfg = SynthConfig::default();
        assert!((class_noise(&cfg, 0) - 0.6).abs() < 1e-12);
        assert!((class_noise(&cfg, 3) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(SynthConfig { num_bags: 0, ..small() }.validate().is_err());
        assert!(SynthConfig {
            objects_per_hard_bag: 5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            easy_fraction: 1.5,
            ..small()
        }
        .validate()
        .is_err());
    }
}
