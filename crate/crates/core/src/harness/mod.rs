//! Everything around the solver: synthetic data, files, configuration and
//! the benchmark runner used by the `spcl` binary.

pub mod bench;
pub mod config;
pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::evaldet::MetricReport;
use crate::trainer::IterationRecord;

pub use bench::{run_benchmark, BenchReport, Method};
pub use config::{load_config, Config};
pub use io::{load_dataset, save_dataset};
pub use synth::{generate_synthetic, SynthConfig, SyntheticData};

/// What a CLI invocation did, with enough configuration to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: Config,
    pub seed: u64,
    pub log: Vec<IterationRecord>,
    pub metrics: Option<MetricReport>,
    pub instance_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
}
