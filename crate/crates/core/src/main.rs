use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use irsad::covstats::ExpertKind;
use irsad::data::{generate_dataset, DatasetSpec, Deployment, MixPolicy, SWEEP_FRACTIONS};
use irsad::harness::experiment::{bench, draw_trials, run_monte_carlo, sweep_group_mix};
use irsad::harness::metrics::{default_thresholds, equal_error_rate, roc_sweep};
use irsad::harness::{Detector, DetectorSpec};
use irsad::io::{load_gate, load_unfolded, save_gate, save_unfolded, write_batch, FrameBatch};
use irsad::moe::{train_gate, GateParams, GateTrainConfig};
use irsad::scenario::ScenarioConfig;
use irsad::unfolding::{train_unfolded, ExpertSource, TrainConfig, UnfoldedParams};
use irsad::{Error, Result};

#[derive(Parser)]
#[command(name = "irsad", version, about = "Activity detection for IRS-aided grant-free access")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML; defaults to the desk-scale scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-size scenario instead of desk scale (ignored with --config).
    #[arg(long)]
    full_scale: bool,
    /// Seed for trials, datasets and initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads, 0 = one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output file; CSV commands write to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report latencies from operation counts instead of the wall clock.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Clone)]
struct DetectorArgs {
    /// Detector id: cd, pgd:<expert>, unfold:<expert|moe>, with expert one of
    /// expert1, expert2, expert3, perfect. Repeatable.
    #[arg(long = "detector", required = true)]
    detectors: Vec<String>,
    /// Unfolded-network checkpoint(s); matched to detectors by the id they were trained for.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Gate checkpoint for unfold:moe.
    #[arg(long)]
    gate: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    trials: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw frames from one deployment into a binary frame container.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// Leave out the true activities.
        #[arg(long)]
        no_truth: bool,
    },
    /// Train the gating network on deployments with varied group mixes.
    TrainGate {
        #[command(flatten)]
        common: Common,
        /// Where to write the gate checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3000)]
        samples: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// CSV of the loss after each epoch.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train an unfolded network layer by layer.
    TrainUnfold {
        #[command(flatten)]
        common: Common,
        /// unfold:<expert> or unfold:moe.
        #[arg(long, default_value = "unfold:perfect")]
        detector: String,
        /// Where to write the network checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gate checkpoint; required for unfold:moe.
        #[arg(long)]
        gate: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Epochs per stage.
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// ROC curves of each detector on one deployment.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: DetectorArgs,
    },
    /// Equal-error rate against the IRS-assisted share of devices.
    SweepMix {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: DetectorArgs,
        /// Comma-separated IRS-assisted fractions in [0, 0.8].
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_FRACTIONS.to_vec())]
        fractions: Vec<f64>,
    },
    /// Per-inference latency against the IRS-assisted share of devices.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: DetectorArgs,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_FRACTIONS.to_vec())]
        fractions: Vec<f64>,
    },
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        match &self.config {
            Some(p) => ScenarioConfig::load(p),
            None if self.full_scale => Ok(ScenarioConfig::default()),
            None => Ok(ScenarioConfig::desk_scale()),
        }
    }

    fn init_threads(&self) -> Result<()> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

fn csv_writer(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn write_rows<T: Serialize>(out: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(out)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

fn build_detectors(eval: &DetectorArgs) -> Result<Vec<Detector>> {
    let specs: Vec<DetectorSpec> = eval.detectors.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let nets: Vec<(UnfoldedParams, String)> = eval
        .checkpoints
        .iter()
        .map(|p| load_unfolded(p).map(|(params, h)| (params, h.detector)))
        .collect::<Result<_>>()?;
    let gate = if specs.iter().any(|s| s.needs_gate()) {
        let path = eval.gate.as_ref().ok_or_else(|| Error::MissingCheckpoint("unfold:moe needs --gate".into()))?;
        Some(load_gate(path)?.0)
    } else {
        None
    };
    specs
        .into_iter()
        .map(|spec| {
            let id = spec.to_string();
            // a checkpoint trained for this id, else the only one given
            let net = nets.iter().find(|(_, d)| *d == id).or(if nets.len() == 1 { nets.first() } else { None });
            Detector::build(spec, net.map(|(p, _)| p), gate.as_ref())
        })
        .collect()
}

#[derive(Serialize)]
struct RocRow<'a> {
    detector: &'a str,
    threshold: f64,
    pf: f64,
    pm: f64,
    trials: usize,
}

#[derive(Serialize)]
struct SweepRow<'a> {
    detector: &'a str,
    k1_fraction: f64,
    eer: f64,
    threshold: f64,
}

#[derive(Serialize)]
struct BenchCsvRow<'a> {
    detector: &'a str,
    k1_fraction: f64,
    mean_ms: f64,
    p95_ms: f64,
}

#[derive(Serialize)]
struct TraceRow {
    stage: usize,
    epoch: usize,
    loss: f64,
}

fn simulate(common: &Common, trials: usize, no_truth: bool) -> Result<()> {
    let out = common.out.as_ref().ok_or_else(|| Error::Config("simulate needs --out".into()))?;
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let dep = Deployment::new(&common.scenario()?)?;
    let frames = draw_trials(&dep, trials, common.seed)?;
    let truth = (!no_truth).then(|| frames.iter().map(|f| f.a.clone()).collect());
    let batch = FrameBatch {
        seed: common.seed,
        s: dep.model(ExpertKind::PerfectGrouping).s.clone(),
        frames: frames.into_iter().map(|f| f.y).collect(),
        truth,
    };
    write_batch(out, &batch)
}

fn train_gate_cmd(common: &Common, checkpoint: &Path, samples: usize, epochs: usize, trace: Option<&Path>) -> Result<()> {
    let config = common.scenario()?;
    let spec = DatasetSpec { samples, frames_per_deployment: 1, mix: MixPolicy::Varied, seed: common.seed };
    let data = generate_dataset(&config, &spec)?;
    let cfg = GateTrainConfig { epochs, seed: common.seed, ..GateTrainConfig::default() };
    let (gate, report) = train_gate(&data, &cfg)?;
    save_gate(checkpoint, &gate, common.seed)?;
    eprintln!("gate KL {:.4} -> {:.4}", report.initial(), report.last());
    if let Some(path) = trace {
        let rows: Vec<TraceRow> = report.trace.iter().enumerate().map(|(e, &loss)| TraceRow { stage: 1, epoch: e, loss }).collect();
        write_rows(Some(path), &rows)?;
    }
    Ok(())
}

struct UnfoldJob<'a> {
    detector: &'a str,
    checkpoint: &'a Path,
    gate: Option<&'a Path>,
    depth: usize,
    samples: usize,
    epochs: usize,
    trace: Option<&'a Path>,
}

fn train_unfold_cmd(common: &Common, job: &UnfoldJob) -> Result<()> {
    let spec: DetectorSpec = job.detector.parse()?;
    let (source, mix) = match spec {
        DetectorSpec::Unfolded(k) => (ExpertSource::Fixed(k), MixPolicy::Fixed),
        DetectorSpec::UnfoldedMoe => {
            let path = job.gate.ok_or_else(|| Error::MissingCheckpoint("unfold:moe training needs --gate".into()))?;
            let gate: GateParams = load_gate(path)?.0;
            (ExpertSource::Gate(Box::new(gate)), MixPolicy::Varied)
        }
        _ => return Err(Error::Config(format!("{spec} is not an unfolded detector"))),
    };
    let config = common.scenario()?;
    let data = generate_dataset(&config, &DatasetSpec { samples: job.samples, frames_per_deployment: 1, mix, seed: common.seed })?;
    let cfg = TrainConfig { dataset_size: job.samples, epochs_per_stage: job.epochs, seed: common.seed, ..TrainConfig::default() };
    let (params, report) = train_unfolded(&data, job.depth, &cfg, &source)?;
    save_unfolded(job.checkpoint, &params, cfg.loss, common.seed, &spec.to_string())?;
    eprintln!("unfolded loss {:.4} -> {:.4}", report.initial_loss, report.final_loss());
    if let Some(path) = job.trace {
        let mut rows = vec![TraceRow { stage: 0, epoch: 0, loss: report.initial_loss }];
        rows.extend(report.trace.iter().enumerate().map(|(i, &loss)| TraceRow {
            stage: i / job.epochs + 1,
            epoch: i % job.epochs + 1,
            loss,
        }));
        write_rows(Some(path), &rows)?;
    }
    Ok(())
}

fn eval_cmd(common: &Common, eval: &DetectorArgs) -> Result<()> {
    let detectors = build_detectors(eval)?;
    let report = run_monte_carlo(&common.scenario()?, &detectors, eval.trials, common.seed)?;
    let mut rows = Vec::new();
    for run in &report.runs {
        let grid = default_thresholds(&run.results)?;
        for p in roc_sweep(&run.results, &grid)? {
            rows.push(RocRow { detector: &run.detector, threshold: p.threshold, pf: p.pf, pm: p.pm, trials: p.trials });
        }
        let eer = equal_error_rate(&run.results)?;
        eprintln!("{}: EER {:.4}{}", run.detector, eer.rate, if eer.bracketed { "" } else { " (not bracketed)" });
    }
    write_rows(common.out.as_deref(), &rows)
}

fn sweep_cmd(common: &Common, eval: &DetectorArgs, fractions: &[f64]) -> Result<()> {
    let detectors = build_detectors(eval)?;
    let points = sweep_group_mix(&common.scenario()?, &detectors, fractions, eval.trials, common.seed)?;
    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow { detector: &p.detector, k1_fraction: p.k1_fraction, eer: p.eer.rate, threshold: p.eer.threshold })
        .collect();
    write_rows(common.out.as_deref(), &rows)
}

fn bench_cmd(common: &Common, eval: &DetectorArgs, fractions: &[f64]) -> Result<()> {
    let detectors = build_detectors(eval)?;
    let rows = bench(&common.scenario()?, &detectors, fractions, eval.trials, common.seed, common.deterministic)?;
    let rows: Vec<BenchCsvRow> = rows
        .iter()
        .map(|r| BenchCsvRow { detector: &r.detector, k1_fraction: r.k1_fraction, mean_ms: r.mean_ms, p95_ms: r.p95_ms })
        .collect();
    write_rows(common.out.as_deref(), &rows)
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate { common, .. }
        | Command::TrainGate { common, .. }
        | Command::TrainUnfold { common, .. }
        | Command::Eval { common, .. }
        | Command::SweepMix { common, .. }
        | Command::Bench { common, .. } => common.clone(),
    };
    common.init_threads()?;
    match &cli.command {
        Command::Simulate { trials, no_truth, .. } => simulate(&common, *trials, *no_truth),
        Command::TrainGate { checkpoint, samples, epochs, trace, .. } => {
            train_gate_cmd(&common, checkpoint, *samples, *epochs, trace.as_deref())
        }
        Command::TrainUnfold { detector, checkpoint, gate, depth, samples, epochs, trace, .. } => train_unfold_cmd(
            &common,
            &UnfoldJob {
                detector,
                checkpoint,
                gate: gate.as_deref(),
                depth: *depth,
                samples: *samples,
                epochs: *epochs,
                trace: trace.as_deref(),
            },
        ),
        Command::Eval { eval, .. } => eval_cmd(&common, eval),
        Command::SweepMix { eval, fractions, .. } => sweep_cmd(&common, eval, fractions),
        Command::Bench { eval, fractions, .. } => bench_cmd(&common, eval, fractions),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
