use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use liquidhr_core::ecg::{self, EcgRecord};
use liquidhr_core::encoder::{self, SpikeTrain};
use liquidhr_core::eval;
use liquidhr_core::fsutil;
use liquidhr_core::inference;
use liquidhr_core::liquid;
use liquidhr_core::pipeline::{self, files};
use liquidhr_core::{Error, PipelineConfig, Stage, StageError};

const ECG_FILE: &str = "ecg.csv";
const ANNOTATIONS_FILE: &str = "annotations.csv";
const QRS_FILE: &str = "qrs.csv";

/// Heart-rate estimation from ECG with a spiking liquid state machine.
#[derive(Parser)]
#[command(name = "liquidhr", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "K=V")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic ECG record and its R-peak annotations.
    Synth {
        #[arg(long)]
        bpm: Option<f64>,
        /// Length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Encode an ECG record into a spike train and print its data density.
    Encode {
        #[arg(long)]
        ecg: PathBuf,
    },
    /// Train the liquid and fit the readout on the training interval.
    Train {
        #[arg(long)]
        ecg: PathBuf,
    },
    /// Estimate heart rate per window with a model exported by `train`.
    Estimate {
        #[arg(long)]
        ecg: PathBuf,
        /// Directory holding the `train` outputs.
        #[arg(long)]
        model: PathBuf,
    },
    /// List detected QRS events from a results file, scored when annotations are given.
    Qrs {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Score a results file against R-peak annotations.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Full pipeline. Without `--ecg` a synthetic record is generated from the config.
    Run {
        #[arg(long)]
        ecg: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
}

fn config_error(msg: String) -> StageError {
    StageError {
        stage: Stage::Config,
        source: Error::Config(msg),
    }
}

fn staged(stage: Stage) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, source }
}

fn require(path: &Path) -> Result<(), StageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(config_error(format!("input {} does not exist", path.display())))
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &c.config {
        Some(p) => {
            require(p)?;
            PipelineConfig::load(p).map_err(staged(Stage::Config))?
        }
        None => PipelineConfig::default(),
    };
    for kv in &c.set {
        cfg.apply_override(kv).map_err(staged(Stage::Config))?;
    }
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    cfg.validate().map_err(staged(Stage::Config))?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), StageError> {
    fsutil::write_atomic(path, text.as_bytes()).map_err(staged(Stage::Write))
}

fn encode(record: &EcgRecord, cfg: &PipelineConfig) -> Result<SpikeTrain, StageError> {
    let spikes = pipeline::encode_record(record, cfg)?;
    log::info!("{}: {} samples -> {} spikes", record.subject_id(), record.len(), spikes.len());
    Ok(spikes)
}

fn read_results(path: &Path) -> Result<Vec<inference::WindowResult>, StageError> {
    let text = fsutil::read_to_string(path).map_err(staged(Stage::Load))?;
    inference::results_from_jsonl(&text).map_err(staged(Stage::Load))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    match cli.cmd {
        Cmd::Synth { bpm, duration } => {
            let mut scfg = cfg.synth.clone();
            scfg.bpm = bpm.unwrap_or(scfg.bpm);
            scfg.duration_s = duration.unwrap_or(scfg.duration_s);
            let rec = ecg::synth_ecg(&scfg).map_err(staged(Stage::Config))?;
            pipeline::ensure_dir(out)?;
            rec.write_csv(&out.join(ECG_FILE)).map_err(staged(Stage::Write))?;
            ecg::write_annotations(rec.annotations().unwrap_or(&[]), &out.join(ANNOTATIONS_FILE))
                .map_err(staged(Stage::Write))?;
            println!(
                "wrote {} samples and {} annotations to {}",
                rec.len(),
                rec.annotations().map_or(0, <[f64]>::len),
                out.display()
            );
        }
        Cmd::Encode { ecg } => {
            let rec = pipeline::load_record(&ecg, None, &cfg)?;
            let spikes = encode(&rec, &cfg)?;
            let density = encoder::data_density(&rec, &spikes, cfg.encode.adc_bits).map_err(staged(Stage::Encode))?;
            pipeline::ensure_dir(out)?;
            spikes.write_csv(&out.join(files::SPIKES)).map_err(staged(Stage::Write))?;
            println!("spikes: {}", spikes.len());
            println!("data density: {density}");
        }
        Cmd::Train { ecg } => {
            let rec = pipeline::load_record(&ecg, None, &cfg)?;
            let spikes = encode(&rec, &cfg)?;
            let model = pipeline::train_model(&spikes, rec.duration_ms(), &cfg)?;
            pipeline::ensure_dir(out)?;
            write(&out.join(files::CONFIG), &cfg.to_text())?;
            spikes.write_csv(&out.join(files::SPIKES)).map_err(staged(Stage::Write))?;
            pipeline::write_model(&model, out)?;
            println!(
                "trained to {} ms, {} of {} neurons selected",
                model.network.tick(),
                model.readout.n_selected(),
                model.network.n_exc()
            );
        }
        Cmd::Estimate { ecg, model } => {
            require(&model.join(files::NETWORK))?;
            require(&model.join(files::READOUT))?;
            let rec = pipeline::load_record(&ecg, None, &cfg)?;
            let (mut net, readout) = pipeline::read_model(&model)?;
            let spikes = encode(&rec, &cfg)?;
            let est = pipeline::estimate(&mut net, &readout, &spikes, rec.duration_ms(), &cfg)?;
            pipeline::ensure_dir(out)?;
            pipeline::write_results(&est.results, &out.join(files::RESULTS))?;
            liquid::write_raster_csv(&est.raster, &out.join(files::RASTER)).map_err(staged(Stage::Write))?;
            for r in &est.results {
                println!("window {}: {:.2} bpm", r.window_index, r.expected_bpm);
            }
        }
        Cmd::Qrs { results, annotations } => {
            require(&results)?;
            if let Some(a) = &annotations {
                require(a)?;
            }
            let res = read_results(&results)?;
            let mut csv = String::from("window_index,time_ms\n");
            let mut detected = Vec::new();
            for r in &res {
                for t in &r.qrs_event_times_ms {
                    writeln!(csv, "{},{t}", r.window_index).unwrap();
                    detected.push(*t);
                }
            }
            pipeline::ensure_dir(out)?;
            write(&out.join(QRS_FILE), &csv)?;
            println!("qrs events: {}", detected.len());
            if let Some(a) = annotations {
                let ann = ecg::load_annotations(&a).map_err(staged(Stage::Load))?;
                let (lo, hi) = match (res.first(), res.last()) {
                    (Some(f), Some(l)) => (f.start_ms as f64, (l.start_ms + cfg.readout.hi_ms) as f64),
                    _ => (0.0, 0.0),
                };
                let golden: Vec<f64> = ann.iter().map(|s| s * 1000.0).filter(|t| (lo..hi).contains(t)).collect();
                let m = eval::qrs_score(&detected, &golden, cfg.eval.match_window_ms);
                println!(
                    "accuracy {:.2}%  fp {:.2}%  fn {:.2}%",
                    m.accuracy_pct, m.fp_pct, m.fn_pct
                );
            }
        }
        Cmd::Eval {
            results,
            annotations,
            subject,
        } => {
            require(&results)?;
            require(&annotations)?;
            let res = read_results(&results)?;
            let ann = ecg::load_annotations(&annotations).map_err(staged(Stage::Load))?;
            let subject = subject.unwrap_or_else(|| {
                annotations
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let report = eval::evaluate(
                &subject,
                &res,
                &ann,
                cfg.readout.hi_ms,
                cfg.eval.bin_width_bpm,
                cfg.eval.match_window_ms,
            )
            .map_err(staged(Stage::Eval))?;
            pipeline::ensure_dir(out)?;
            report
                .write(&out.join(files::REPORT), &out.join(files::HISTOGRAM))
                .map_err(staged(Stage::Write))?;
            print_report(&report);
        }
        Cmd::Run { ecg, annotations } => {
            let rec = match ecg {
                Some(p) => pipeline::load_record(&p, annotations.as_deref(), &cfg)?,
                None => {
                    if annotations.is_some() {
                        return Err(config_error("--annotations needs --ecg".into()).into());
                    }
                    ecg::synth_ecg(&cfg.synth).map_err(staged(Stage::Config))?
                }
            };
            let result = pipeline::run_pipeline(&rec, &cfg)?;
            pipeline::write_outputs(&result, out)?;
            if let Some(d) = result.data_density {
                println!("data density: {d}");
            }
            println!("post-training excitatory rate: {:.2} Hz", result.post_training_rate_hz());
            for r in &result.estimates.results {
                println!("window {}: {:.2} bpm", r.window_index, r.expected_bpm);
            }
            if let Some(rep) = &result.report {
                print_report(rep);
            }
        }
    }
    Ok(())
}

fn print_report(r: &eval::EvalReport) {
    println!("subject {}: MAPE {:.3}%", r.subject_id, r.mape_pct);
    println!(
        "QRS accuracy {:.2}%  fp {:.2}%  fn {:.2}%",
        r.qrs.accuracy_pct, r.qrs.fp_pct, r.qrs.fn_pct
    );
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<StageError>() {
        Some(e) if e.stage == Stage::Config => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIQUIDHR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
