//! Method-by-seed comparison runs on synthetic corpora.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{generate_synthetic, SynthConfig, SyntheticData};
use crate::error::{Result, SpclError};
use crate::evaldet::{self, MetricReport};
use crate::trainer::{self, Ablation, DetectConfig, TrainConfig, TrainState};
use crate::types::DetectorSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    BasicSpcl,
    NoDiversity,
    NoCurriculum,
    NoAlternation,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Full,
        Method::BasicSpcl,
        Method::NoDiversity,
        Method::NoCurriculum,
        Method::NoAlternation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::BasicSpcl => "basic_spcl",
            Method::NoDiversity => "no_diversity",
            Method::NoCurriculum => "no_curriculum",
            Method::NoAlternation => "no_alternation",
        }
    }

    pub fn ablation(self) -> Option<Ablation> {
        match self {
            Method::Full => None,
            Method::BasicSpcl => Some(Ablation::BasicSpcl),
            Method::NoDiversity => Some(Ablation::NoDiversity),
            Method::NoCurriculum => Some(Ablation::NoCurriculum),
            Method::NoAlternation => Some(Ablation::NoAlternation),
        }
    }

    /// `base` with this method's ablation in place of any configured one.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        base.clone().with_ablations(self.ablation())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Test-split mean AP.
    pub mean_ap: f64,
    /// Training-split CorLoc.
    pub corloc: f64,
    /// Agreement of the final training labels with the planted ones.
    pub instance_accuracy: f64,
    /// Same, for labels re-inferred from the final detectors alone.
    pub detector_accuracy: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub struct RunOutcome {
    pub detectors: DetectorSet,
    pub state: TrainState,
    pub report: MetricReport,
    pub metrics: RunMetrics,
}

/// Trains on `data.train` and scores the result on both splits.
pub fn run_method(
    data: &SyntheticData,
    train: &TrainConfig,
    detect: &DetectConfig,
    method: Method,
) -> Result<RunOutcome> {
    let cfg = method.configure(train);
    let (det, state) = trainer::train(&data.train, &cfg)?;
    let detections: Vec<_> = trainer::detect(&data.test.bags, &det, detect)?.into_iter().flatten().collect();
    let corloc = evaldet::corloc(&data.train, &det)?;
    let report = evaldet::evaluate(&data.test.bags, &detections, data.test.num_classes, Some(corloc))?;
    let inferred = trainer::infer_labels(&data.train, &det)?;
    let metrics = RunMetrics {
        mean_ap: report.mean_ap,
        corloc,
        instance_accuracy: evaldet::instance_label_accuracy(&data.train, &state.labels)?,
        detector_accuracy: evaldet::instance_label_accuracy(&data.train, &inferred)?,
        iterations: state.iteration,
        converged: state.converged,
    };
    Ok(RunOutcome {
        detectors: det,
        state,
        report,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub rank: usize,
    pub method: Method,
    pub instance_accuracy: f64,
    pub detector_accuracy: f64,
    pub mean_ap: f64,
    pub corloc: f64,
    /// Instance accuracy per seed, in seed order.
    pub per_seed_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<BenchRow>,
    /// Methods ranked by mean instance accuracy, best first.
    pub summary: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn row(&self, method: Method, seed: u64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.seed == seed)
    }

    pub fn summary_of(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Aligned plain-text rendering of the summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{:<4} {:<15} {:>9} {:>9} {:>9} {:>9}",
            "rank", "method", "inst_acc", "det_acc", "mean_ap", "corloc"
        );
        for s in &self.seeds {
            let _ = write!(out, " {:>9}", format!("seed{s}"));
        }
        out.push('\n');
        for m in &self.summary {
            let _ = write!(
                out,
                "{:<4} {:<15} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                m.rank,
                m.method.name(),
                m.instance_accuracy,
                m.detector_accuracy,
                m.mean_ap,
                m.corloc
            );
            for a in &m.per_seed_accuracy {
                let _ = write!(out, " {a:>9.4}");
            }
            out.push('\n');
        }
        out
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs every method on every seed. The seed drives both the generator and
/// the trainer; rows come out in (method, seed) order whatever the thread
/// schedule.
pub fn run_benchmark(
    synth: &SynthConfig,
    train: &TrainConfig,
    detect: &DetectConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<BenchReport> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(SpclError::InvalidConfig("benchmark needs at least one method and one seed".into()));
    }
    let mut methods = methods.to_vec();
    let mut seen = std::collections::BTreeSet::new();
    methods.retain(|m| seen.insert(*m));

    let corpora = seeds
        .par_iter()
        .map(|&seed| generate_synthetic(&SynthConfig { seed, ..synth.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..seeds.len()).map(move |i| (m, i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(method, i)| {
            let cfg = TrainConfig {
                seed: seeds[i],
                ..train.clone()
            };
            let out = run_method(&corpora[i], &cfg, detect, method)?;
            Ok(BenchRow {
                method,
                seed: seeds[i],
                metrics: out.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary: Vec<MethodSummary> = methods
        .iter()
        .map(|&method| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method).collect();
            MethodSummary {
                rank: 0,
                method,
                instance_accuracy: mean(mine.iter().map(|r| r.metrics.instance_accuracy)),
                detector_accuracy: mean(mine.iter().map(|r| r.metrics.detector_accuracy)),
                mean_ap: mean(mine.iter().map(|r| r.metrics.mean_ap)),
                corloc: mean(mine.iter().map(|r| r.metrics.corloc)),
                per_seed_accuracy: mine.iter().map(|r| r.metrics.instance_accuracy).collect(),
            }
        })
        .collect();
    summary.sort_by(|a, b| {
        b.instance_accuracy
            .total_cmp(&a.instance_accuracy)
            .then(a.method.cmp(&b.method))
    });
    for (i, s) in summary.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(BenchReport {
        seeds: seeds.to_vec(),
        rows,
        summary,
    })
}
