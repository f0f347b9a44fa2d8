use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nvbench::analysis::{self, Counter, WeightSet};
use nvbench::error::{Error, Result};
use nvbench::event_io::dataset::{self, DatasetKind};
use nvbench::experiment::{self, EvalRequest, ExperimentConfig};
use nvbench::gradcheck;
use nvbench::network::{ModelKind, Network};
use nvbench::training::Split;

#[derive(Parser)]
#[command(name = "nvbench", version, about = "SNN / RNN / LSTM workbench for event-camera data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, collapse and cache a raw dataset.
    Prepare(PrepareArgs),
    /// Train from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared cache.
    Eval(EvalArgs),
    /// Measurements on data or trained models.
    #[command(subcommand)]
    Analyze(Analysis),
    /// Run the gradient oracle suite on tiny networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Slice duration in milliseconds.
    #[arg(long)]
    dt: f64,
    /// Number of slices.
    #[arg(long = "T")]
    steps: usize,
    /// Detected from the directory layout when omitted.
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override `train.max_epoch`.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Expected slice duration (ms); must match the cache.
    #[arg(long)]
    dt: Option<f64>,
    /// Steps to evaluate; defaults to the cache's.
    #[arg(long = "T")]
    steps: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    Recurrent,
    Feedforward,
}

#[derive(Subcommand)]
enum Analysis {
    /// Temporal contrast matrix of one recording plus dataset statistics.
    Contrast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 50)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Matrix CSV of the first sampled recording.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter counts of a checkpoint or config.
    Params {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operation counts with measured activity (fully connected models).
    Ops {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weight histogram.
    Hist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "recurrent")]
        which: WhichArg,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step activation maps of a convolutional layer.
    Featmaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        layer: usize,
        /// Comma-separated step indices; all steps when omitted.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    All,
    Rnn,
    Lstm,
    Snn,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    model: ModelArg,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Prepare(a) => prepare(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::Gradcheck(a) => return gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}

fn ms_to_us(ms: f64) -> Result<u32> {
    let us = (ms * 1000.0).round();
    if !(us >= 1.0 && us <= f64::from(u32::MAX)) {
        return Err(Error::config(format!("dt {ms} ms is not a positive duration")));
    }
    Ok(us as u32)
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let kind = match &a.dataset {
        Some(s) => s.parse()?,
        None => DatasetKind::detect(&a.raw)?,
    };
    let meta = dataset::prepare(kind, &a.raw, &a.out, ms_to_us(a.dt)?, a.steps)?;
    println!("dataset {kind}: dt = {} us, T = {}", meta.dt_us, meta.steps);
    println!("train {}", meta.train);
    println!("test {}", meta.test);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.train.max_epoch = e;
    }
    let s = experiment::run_training(&cfg, &a.out, |r| {
        println!(
            "epoch {:>3} {:<5} loss {:.5} accuracy {:.4} ({:.1}s)",
            r.epoch, r.split, r.metrics.loss, r.metrics.accuracy, r.wall_seconds
        )
    })?;
    if let (Some(e), Some(acc)) = (s.best_test_epoch, s.best_test_accuracy) {
        println!("best test accuracy {acc:.4} at epoch {e}");
    }
    println!("artifacts in {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(dt) = a.dt {
        let meta = dataset::read_meta(&a.data)?;
        let want = ms_to_us(dt)?;
        if want != meta.dt_us {
            return Err(Error::Malformed(format!(
                "cache {} was prepared at dt = {} us, not {want} us; prepare it at the requested resolution",
                a.data.display(),
                meta.dt_us
            )));
        }
    }
    let r = experiment::evaluate_checkpoint(&EvalRequest {
        checkpoint: a.checkpoint,
        cache: a.data,
        split: a.split.into(),
        limit: a.limit,
        seed: a.seed,
        steps: a.steps,
    })?;
    println!("samples {}", r.samples);
    println!("loss {:.6}", r.metrics.loss);
    println!("accuracy {:.4}", r.metrics.accuracy);
    println!(
        "T*dt = {} x {} us = {:.3} ms (trained at {} x {} us = {:.3} ms)",
        r.steps,
        r.dt_us,
        r.window_us() as f64 / 1000.0,
        r.trained_steps,
        r.trained_dt_us,
        r.trained_window_us() as f64 / 1000.0
    );
    if r.window_mismatch() {
        println!("warning: evaluation window T*dt differs from training");
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::from(e).at(path))?))
}

fn analyze(a: Analysis) -> Result<()> {
    match a {
        Analysis::Contrast { data, k, split, limit, seed, out } => {
            let seqs = dataset::load_split(&data, split.into(), Some(limit), seed)?;
            let first = seqs.first().ok_or_else(|| Error::Malformed("no recordings in split".into()))?;
            analysis::contrast_matrix(first, k)?.write_csv(create(&out)?)?;
            let stats = analysis::contrast_stats(&seqs, k)?;
            println!("recordings {}", stats.samples);
            println!("mean {:.6}", stats.mean);
            println!("variance {:.6}", stats.variance);
        }
        Analysis::Params { checkpoint, config, out } => {
            let net = match (checkpoint, config) {
                (Some(p), _) => experiment::load_network(&p)?,
                (None, Some(c)) => {
                    let cfg = ExperimentConfig::load(&c)?;
                    let meta = dataset::read_meta(&cfg.data.cache)?;
                    Network::build(cfg.network_config(&meta)?, cfg.train.seed)?
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            let counts = analysis::count_params(&net);
            if let Some(out) = out {
                let mut w = csv::Writer::from_writer(create(&out)?);
                let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
                w.write_record(["tensor", "count"]).map_err(io)?;
                for (n, c) in &counts.tensors {
                    w.write_record([n.as_str(), &c.to_string()]).map_err(io)?;
                }
                w.write_record(["total", &counts.total.to_string()]).map_err(io)?;
                w.flush()?;
            }
            for (n, c) in &counts.tensors {
                println!("{n} {c}");
            }
            println!("total {}", counts.total);
        }
        Analysis::Ops { checkpoint, data, limit, seed, out } => {
            let net = experiment::load_network(&checkpoint)?;
            let seqs = dataset::load_split(&data, Split::Test, Some(limit), seed)?;
            let steps = net.config().steps;
            let mut rows: Vec<(String, usize, usize, usize, f64, Counter)> = Vec::new();
            for s in &seqs {
                let label = s.label.ok_or_else(|| Error::Malformed("unlabelled recording".into()))? as usize;
                let r = analysis::count_ops(&net, &s.truncated(steps), label)?;
                for (dir, oc) in [("forward", &r.forward), ("backward", &r.backward)] {
                    for st in &oc.stages {
                        match rows.iter_mut().find(|x| x.0 == dir && x.1 == st.stage) {
                            Some(x) => {
                                x.4 += st.alpha;
                                x.5 += st.ops;
                            }
                            None => rows.push((dir.to_string(), st.stage, st.m, st.n, st.alpha, st.ops)),
                        }
                    }
                }
            }
            let n = seqs.len().max(1) as f64;
            let mut w = csv::Writer::from_writer(create(&out)?);
            let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(["direction", "stage", "m", "n", "alpha", "adds", "muls", "macs"]).map_err(io)?;
            for (dir, stage, m, nn, alpha, c) in &rows {
                let per = |v: u64| format!("{:.1}", v as f64 / n);
                w.write_record([
                    dir.clone(),
                    stage.to_string(),
                    m.to_string(),
                    nn.to_string(),
                    format!("{:.6}", alpha / n),
                    per(c.adds),
                    per(c.muls),
                    per(c.macs),
                ])
                .map_err(io)?;
            }
            w.flush()?;
            println!("recordings {} (per-recording means written to {})", seqs.len(), out.display());
        }
        Analysis::Hist { checkpoint, which, bins, out } => {
            let net = experiment::load_network(&checkpoint)?;
            let set = match which {
                WhichArg::Recurrent => WeightSet::Recurrent,
                WhichArg::Feedforward => WeightSet::Feedforward,
            };
            let h = analysis::weight_histogram(&net, set, bins)?;
            h.write_csv(create(&out)?)?;
            println!("weights {}", h.counts.iter().sum::<u64>());
        }
        Analysis::Featmaps { checkpoint, data, sample, layer, steps, out } => {
            let net = experiment::load_network(&checkpoint)?;
            let meta = dataset::read_meta(&data)?;
            if sample >= meta.test {
                return Err(Error::config(format!("sample {sample} beyond the {} test recordings", meta.test)));
            }
            let seq = dataset::load_split(&data, Split::Test, None, 0)?.swap_remove(sample).truncated(net.config().steps);
            let steps = if steps.is_empty() { (0..seq.steps()).collect() } else { steps };
            let paths = analysis::export_feature_maps(&net, &seq, layer, &steps, &out)?;
            println!("wrote {} maps to {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> ExitCode {
    let seeds = a.seed..a.seed + a.seeds;
    let run = || -> Result<bool> {
        use nvbench::cells::lif::Mutation;
        if a.model == ModelArg::All {
            let r = gradcheck::run_suite(seeds.clone())?;
            println!("{r}");
            return Ok(r.passed());
        }
        let r = match a.model {
            ModelArg::Rnn => gradcheck::check_finite_differences(ModelKind::Rnn, seeds.clone())?,
            ModelArg::Lstm => gradcheck::check_finite_differences(ModelKind::Lstm, seeds.clone())?,
            _ => gradcheck::check_graph_oracle(seeds.clone(), Mutation::None)?,
        };
        println!("{r}");
        Ok(r.passed())
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
