use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use assm::datagen::generate_dataset;
use assm::io::{
    emit_trace_plot, load_checkpoint, read_dataset, save_checkpoint, write_dataset, write_json,
    Checkpoint, Format, PipelineConfig, SampleRecord, TrainingMetadata, FORMAT_VERSION,
};
use assm::kalman::kf_run;
use assm::model::score_sequence;
use assm::stream::{bench, open_stream};
use assm::training::train;
use assm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "assm",
    version,
    about = "Gated state-space anomaly detection for sensor streams"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config with [model], [train], [gen], [stream], [kf], [eval] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    state_dim: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to the --out directory.
    Generate {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train on <data>/train and write --checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score the test split with the model and the Kalman baseline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Also time single-sample scoring (makes the report non-reproducible).
        #[arg(long)]
        measure_throughput: bool,
    },
    /// NDJSON samples on stdin to NDJSON verdicts on stdout.
    Stream,
    /// Single-stream throughput.
    Bench {
        #[arg(short = 'n', long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        input_dim: usize,
        #[arg(long)]
        online_update: bool,
    },
    /// Score-trace figure for one test sequence.
    Plot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
    },
}

fn resolve_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(a) = c.alpha {
        cfg.train.alpha = a;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(d) = c.state_dim {
        cfg.model.state_dim = d;
    }
    if let Some(t) = c.threshold {
        cfg.stream.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(opt: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    opt.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("{flag} is required for this command")))
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = resolve_config(c)?;
    match cli.command {
        Command::Generate { n_train, n_test } => {
            if let Some(n) = n_train {
                cfg.gen.n_train = n;
            }
            if let Some(n) = n_test {
                cfg.gen.n_test = n;
            }
            let out = required(&c.out, "--out")?;
            let ds = generate_dataset(&cfg.gen)?;
            write_dataset(out, &ds, c.format)?;
            eprintln!(
                "wrote {} train / {} test sequences to {}",
                ds.train.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Train { data } => {
            let ckpt_path = required(&c.checkpoint, "--checkpoint")?;
            let ds = read_dataset(&data, c.format)?;
            cfg.model.input_dim = ds.train[0].input_dim();
            let (params, report) = train(&cfg.model, &cfg.train, &ds.train)?;
            for e in &report.epochs {
                eprintln!(
                    "epoch {:>3}  loss {:.6}  recon {:.6}  class {:.6}  ({:.2}s)",
                    e.epoch + 1,
                    e.loss.total,
                    e.loss.recon,
                    e.loss.class,
                    e.wall_clock_secs
                );
            }
            let ck = Checkpoint {
                format_version: FORMAT_VERSION,
                model_config: cfg.model.clone(),
                params,
                threshold: report.calibration.threshold,
                metadata: TrainingMetadata {
                    train_config: Some(cfg.train.clone()),
                    epochs: report.epochs.len(),
                    final_loss: report.epochs.last().map(|e| e.loss),
                    train_f1: Some(report.calibration.f1),
                },
            };
            save_checkpoint(ckpt_path, &ck)?;
            eprintln!(
                "threshold {} (train F1 {:.4}); checkpoint {}",
                ck.threshold,
                report.calibration.f1,
                ckpt_path.display()
            );
            if let Some(out) = &c.out {
                write_json(out, &report)?;
            }
        }
        Command::Eval {
            data,
            measure_throughput,
        } => {
            let ck = load_checkpoint(required(&c.checkpoint, "--checkpoint")?)?;
            let ds = read_dataset(&data, c.format)?;
            let threshold = c.threshold.unwrap_or(ck.threshold);
            let kf = cfg.kf.build(ck.params.input_dim(), ds.config.noise_std)?;
            let mut report = assm::pipeline::evaluate(
                &ck.params,
                threshold,
                &kf,
                &ds.train,
                &ds.test,
                cfg.eval.horizon,
            )?;
            if measure_throughput {
                report.assm.throughput = Some(bench(Arc::new(ck.params.clone()), 100_000, false)?);
            }
            emit(&c.out, &report)?;
        }
        Command::Stream => {
            let ck = load_checkpoint(required(&c.checkpoint, "--checkpoint")?)?;
            let mut scfg = cfg.stream.clone();
            scfg.threshold = c.threshold.unwrap_or(ck.threshold);
            let mut handle = open_stream(Arc::new(ck.params), scfg)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let src = Path::new("<stdin>");
            let mut last_t: Option<u64> = None;
            for (i, line) in stdin.lock().lines().enumerate() {
                let line_no = i as u64 + 1;
                let line = line.map_err(|e| Error::io(src, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = SampleRecord::parse_line(src, line_no, &line)?;
                if last_t.is_some_and(|t| rec.t <= t) {
                    return Err(Error::Format {
                        path: src.into(),
                        line: line_no,
                        message: format!("t = {} does not increase", rec.t),
                    });
                }
                last_t = Some(rec.t);
                let v = handle.push(&rec.x, rec.y).map_err(|e| Error::Format {
                    path: src.into(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                #[derive(Serialize)]
                struct Out {
                    t: u64,
                    score: f64,
                    is_anomaly: bool,
                }
                let o = Out {
                    t: rec.t,
                    score: v.score,
                    is_anomaly: v.is_anomaly,
                };
                serde_json::to_writer(&mut out, &o).map_err(|e| Error::io("<stdout>", e.into()))?;
                out.write_all(b"\n")
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
        Command::Bench {
            samples,
            input_dim,
            online_update,
        } => {
            let params = match &c.checkpoint {
                Some(p) => load_checkpoint(p)?.params,
                None => {
                    cfg.model.input_dim = input_dim;
                    assm::model::init_parameters(&cfg.model)?
                }
            };
            #[derive(Serialize)]
            struct BenchOut {
                state_dim: usize,
                input_dim: usize,
                online_update: bool,
                samples_per_second: f64,
                ns_per_sample: f64,
                samples: usize,
            }
            let (d, m) = (params.state_dim(), params.input_dim());
            let t = bench(Arc::new(params), samples, online_update)?;
            emit(
                &c.out,
                &BenchOut {
                    state_dim: d,
                    input_dim: m,
                    online_update,
                    samples_per_second: t.samples_per_second,
                    ns_per_sample: t.ns_per_sample,
                    samples: t.samples,
                },
            )?;
        }
        Command::Plot { data, sequence } => {
            let ck = load_checkpoint(required(&c.checkpoint, "--checkpoint")?)?;
            let out = required(&c.out, "--out")?;
            let ds = read_dataset(&data, c.format)?;
            let seq = ds.test.get(sequence).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "test split has {} sequences, asked for {sequence}",
                    ds.test.len()
                ))
            })?;
            let kf = cfg.kf.build(seq.input_dim(), ds.config.noise_std)?;
            let assm_scores = score_sequence(&ck.params, seq.xs())?;
            let kf_scores = kf_run(&kf, seq.xs())?;
            let csv =
                emit_trace_plot(&[("assm", &assm_scores), ("kf", &kf_scores)], seq.ys(), out)?;
            eprintln!("wrote {} and {}", out.display(), csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
