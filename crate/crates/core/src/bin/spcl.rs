use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use spcl::harness::{self, io, Config, RunRecord};
use spcl::{evaldet, trainer, Result};

#[derive(Parser)]
#[command(name = "spcl", version, about = "Self-paced curriculum learning for weakly supervised detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Dotted override such as `train.max_iters=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train.jsonl and test.jsonl.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train detectors; writes model.json and run_log.jsonl.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a model over a dataset; writes detections.jsonl.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score detections against ground truth; writes metrics.json.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Dataset carrying the ground truth.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Model and training set for CorLoc.
        #[arg(long, requires = "train_data")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        train_data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the method-by-seed comparison; writes bench.json and bench.txt.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
    command: &'static str,
    start: Instant,
}

impl Ctx {
    fn new(common: &Common, command: &'static str) -> Result<Self> {
        let cfg = harness::load_config(common.config.as_deref(), common.seed, &common.sets)?;
        std::fs::create_dir_all(&common.out_dir)?;
        Ok(Self {
            cfg,
            out: common.out_dir.clone(),
            command,
            start: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(
        self,
        log: Vec<trainer::IterationRecord>,
        metrics: Option<evaldet::MetricReport>,
        instance_accuracy: Option<f64>,
    ) -> Result<()> {
        let record = RunRecord {
            command: self.command.to_string(),
            seed: self.cfg.train.seed,
            config: self.cfg.clone(),
            log,
            metrics,
            instance_accuracy,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        };
        io::write_json(&record, &self.path("run.json"))
    }
}

fn load(path: &Path, num_classes: Option<usize>) -> Result<spcl::Dataset> {
    io::load_dataset_with(path, num_classes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let ctx = Ctx::new(&common, "synth")?;
            let data = harness::generate_synthetic(&ctx.cfg.synth)?;
            io::save_dataset(&data.train, &ctx.path("train.jsonl"))?;
            io::save_dataset(&data.test, &ctx.path("test.jsonl"))?;
            log::info!("wrote {} train and {} test bags", data.train.bags.len(), data.test.bags.len());
            ctx.finish(Vec::new(), None, None)
        }
        Command::Train {
            data,
            num_classes,
            common,
        } => {
            let ctx = Ctx::new(&common, "train")?;
            let data = load(&data, num_classes)?;
            let (det, state) = trainer::train(&data, &ctx.cfg.train)?;
            io::save_detectors(&det, &ctx.path("model.json"))?;
            io::write_jsonl(&state.log, &ctx.path("run_log.jsonl"))?;
            let has_gt = data.bags.iter().all(|b| b.gt_objects.is_some());
            let accuracy = if has_gt {
                let inferred = trainer::infer_labels(&data, &det)?;
                Some(evaldet::instance_label_accuracy(&data, &inferred)?)
            } else {
                None
            };
            log::info!(
                "{} iterations, converged: {}, instance accuracy: {accuracy:?}",
                state.iteration,
                state.converged
            );
            ctx.finish(state.log, None, accuracy)
        }
        Command::Detect { model, data, common } => {
            let ctx = Ctx::new(&common, "detect")?;
            let det = io::load_detectors(&model)?;
            let data = load(&data, Some(det.num_classes()))?;
            let dets: Vec<_> = trainer::detect(&data.bags, &det, &ctx.cfg.detect)?.into_iter().flatten().collect();
            io::save_detections(&dets, &ctx.path("detections.jsonl"))?;
            log::info!("{} detections", dets.len());
            ctx.finish(Vec::new(), None, None)
        }
        Command::Eval {
            detections,
            data,
            num_classes,
            model,
            train_data,
            common,
        } => {
            let ctx = Ctx::new(&common, "eval")?;
            let dets = io::load_detections(&detections)?;
            let test = load(&data, num_classes)?;
            let corloc = match (model, train_data) {
                (Some(m), Some(t)) => {
                    let det = io::load_detectors(&m)?;
                    Some(evaldet::corloc(&load(&t, Some(det.num_classes()))?, &det)?)
                }
                _ => None,
            };
            let report = evaldet::evaluate(&test.bags, &dets, test.num_classes, corloc)?;
            io::write_json(&report, &ctx.path("metrics.json"))?;
            log::info!("mean AP {:.4}", report.mean_ap);
            ctx.finish(Vec::new(), Some(report), None)
        }
        Command::Bench { common } => {
            let ctx = Ctx::new(&common, "bench")?;
            let c = &ctx.cfg;
            let report = harness::run_benchmark(&c.synth, &c.train, &c.detect, &c.bench.methods, &c.bench.seeds())?;
            io::write_json(&report, &ctx.path("bench.json"))?;
            let text = report.to_text();
            std::fs::write(ctx.path("bench.txt"), &text)?;
            eprint!("{text}");
            ctx.finish(Vec::new(), None, None)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
