//! End-to-end run: encode, train the network, fit the readout on the
//! training interval, then estimate every following inference interval.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::ecg::{self, EcgRecord};
use crate::encoder::{self, EncoderConfig, SpikeTrain};
use crate::error::Error;
use crate::eval::{self, EvalReport};
use crate::fsutil;
use crate::inference::{self, WindowResult};
use crate::liquid::{self, LiquidNetwork, Raster};
use crate::plasticity;
use crate::readout::{self, ReadoutModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Encode,
    Train,
    Readout,
    Estimate,
    Eval,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Readout => "readout",
            Stage::Estimate => "estimate",
            Stage::Eval => "eval",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// File names inside an output directory.
pub mod files {
    pub const SPIKES: &str = "spikes.csv";
    pub const NETWORK: &str = "network.json";
    pub const WEIGHTS: &str = "weights.csv";
    pub const TRAIN_RASTER: &str = "raster_train.csv";
    pub const RASTER: &str = "raster.csv";
    pub const READOUT: &str = "readout.txt";
    pub const RESULTS: &str = "results.jsonl";
    pub const REPORT: &str = "eval.json";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const CONFIG: &str = "config.txt";
}

/// Loads an ECG CSV, attaching annotations when a path is given. Missing
/// files are reported as configuration errors before anything is written.
pub fn load_record(ecg_path: &Path, annotations: Option<&Path>, cfg: &PipelineConfig) -> StageResult<EcgRecord> {
    for p in std::iter::once(ecg_path).chain(annotations) {
        if !p.is_file() {
            return Err(Error::Config(format!("input file {} does not exist", p.display()))).at(Stage::Config);
        }
    }
    let rec = ecg::load_csv(ecg_path, cfg.input_fs).at(Stage::Load)?;
    match annotations {
        Some(a) => {
            let times = ecg::load_annotations(a).at(Stage::Load)?;
            rec.with_annotations(times).at(Stage::Load)
        }
        None => Ok(rec),
    }
}

pub fn encoder_config(record: &EcgRecord, cfg: &PipelineConfig) -> crate::Result<EncoderConfig> {
    if cfg.encode.delta > 0.0 {
        let first = record.samples().first().copied().unwrap_or(0.0);
        EncoderConfig::new(cfg.encode.delta, cfg.encode.timer_interval_ms, first)
    } else {
        EncoderConfig::for_record(record, cfg.encode.levels, cfg.encode.timer_interval_ms)
    }
}

pub fn encode_record(record: &EcgRecord, cfg: &PipelineConfig) -> StageResult<SpikeTrain> {
    let ecfg = encoder_config(record, cfg).at(Stage::Encode)?;
    Ok(encoder::encode(record, &ecfg))
}

/// Network after plasticity plus the readout fitted on the training
/// interval. This is what `train` exports and `estimate` consumes.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Frozen network positioned at the end of the training interval.
    pub network: LiquidNetwork,
    pub readout: ReadoutModel,
    pub train_raster: Raster,
}

fn duration_ticks(spikes: &SpikeTrain, duration_ms: f64) -> usize {
    let last = spikes.times_ms().last().map_or(0.0, |t| t + 1.0);
    duration_ms.max(last).floor() as usize
}

/// Builds and trains the network on `[0, t_i)` and fits the readout on the
/// last inference interval of that span, replayed through the frozen
/// weights from rest.
pub fn train_model(spikes: &SpikeTrain, duration_ms: f64, cfg: &PipelineConfig) -> StageResult<TrainedModel> {
    cfg.validate().at(Stage::Config)?;
    let t_i = cfg.plasticity.schedule.t_i_ms;
    if (duration_ms as u64) < t_i {
        return Err(Error::invalid(format!(
            "record is {duration_ms} ms long, training needs {t_i} ms"
        )))
        .at(Stage::Train);
    }
    let input = spikes.to_ticks(duration_ticks(spikes, duration_ms));
    let mut net = LiquidNetwork::build(&cfg.topology, cfg.dynamics).at(Stage::Train)?;
    let train_raster = plasticity::train(&mut net, &input, &cfg.plasticity).at(Stage::Train)?;
    log::info!(
        "training done: {} spikes, mean excitatory rate {:.1} Hz",
        train_raster.len(),
        liquid::mean_excitatory_rate(&train_raster, net.n_exc(), t_i as f64)
    );

    let mut replay = net.clone();
    replay.reset_dynamics();
    let replay_raster = replay.run(&input[..t_i as usize]);
    let hi = cfg.readout.hi_ms;
    let start = t_i - hi;
    let events = readout::window_events(&replay_raster, net.n_exc(), start, hi);
    let y = readout::bin_states(&events, net.n_exc(), &cfg.readout, start).at(Stage::Readout)?;
    let model = readout::fit_readout(&y, &cfg.readout, &cfg.pso).at(Stage::Readout)?;
    log::info!(
        "readout keeps {} of {} neurons, fitness {:.4}",
        model.n_selected(),
        model.mask.len(),
        model.fitness
    );
    Ok(TrainedModel {
        network: net,
        readout: model,
        train_raster,
    })
}

/// Output of the estimation stage.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub results: Vec<WindowResult>,
    /// Spikes of the frozen network from its starting tick on.
    pub raster: Raster,
    pub end_tick: u64,
}

/// Runs the frozen network from its current tick over every complete
/// inference interval left in the input and estimates each one.
pub fn estimate(
    network: &mut LiquidNetwork,
    model: &ReadoutModel,
    spikes: &SpikeTrain,
    duration_ms: f64,
    cfg: &PipelineConfig,
) -> StageResult<Estimates> {
    cfg.validate().at(Stage::Config)?;
    if !network.is_frozen() {
        return Err(Error::invalid("network is still plastic; train it first")).at(Stage::Estimate);
    }
    if model.mask.len() != network.n_exc() {
        return Err(Error::invalid(format!(
            "readout expects {} neurons, network has {} excitatory",
            model.mask.len(),
            network.n_exc()
        )))
        .at(Stage::Estimate);
    }
    let hi = model.readout.hi_ms;
    let total = duration_ticks(spikes, duration_ms) as u64;
    let input = spikes.to_ticks(total as usize);
    let mut results = Vec::new();
    let mut raster = Raster::new();
    while network.tick() + hi <= total {
        let start = network.tick();
        let window = network.run(&input[start as usize..(start + hi) as usize]);
        let events = readout::window_events(&window, network.n_exc(), start, hi);
        let y = readout::bin_states(&events, network.n_exc(), &model.readout, start).at(Stage::Estimate)?;
        let est = inference::estimate_window(&y, model, cfg.h_max).at(Stage::Estimate)?;
        let qrs = inference::qrs_detect(&est.probabilities, model.readout.si_ms, start);
        log::info!("window at {start} ms: {:.2} bpm, {} QRS events", est.expected_bpm, qrs.len());
        results.push(WindowResult {
            window_index: (start / hi) as usize,
            start_ms: start,
            expected_bpm: est.expected_bpm,
            pmf: cfg.emit_pmf.then(|| est.pmf.lambda().to_vec()),
            qrs_event_times_ms: qrs,
        });
        raster.extend(window);
    }
    Ok(Estimates {
        results,
        raster,
        end_tick: network.tick(),
    })
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub subject_id: String,
    pub spikes: SpikeTrain,
    pub data_density: Option<f64>,
    pub model: TrainedModel,
    /// Network after the estimation pass.
    pub final_network: LiquidNetwork,
    pub estimates: Estimates,
    pub report: Option<EvalReport>,
    pub config: PipelineConfig,
}

impl RunOutput {
    /// Mean excitatory rate of the frozen network over the estimated span.
    pub fn post_training_rate_hz(&self) -> f64 {
        let span = self.estimates.end_tick - self.model.network.tick();
        if span == 0 {
            return 0.0;
        }
        liquid::mean_excitatory_rate(&self.estimates.raster, self.model.network.n_exc(), span as f64)
    }
}

pub fn run_pipeline(record: &EcgRecord, cfg: &PipelineConfig) -> StageResult<RunOutput> {
    cfg.validate().at(Stage::Config)?;
    let spikes = encode_record(record, cfg)?;
    log::info!("encoded {} samples into {} spikes", record.len(), spikes.len());
    let data_density = encoder::data_density(record, &spikes, cfg.encode.adc_bits).ok();
    let model = train_model(&spikes, record.duration_ms(), cfg)?;
    let mut net = model.network.clone();
    let estimates = estimate(&mut net, &model.readout, &spikes, record.duration_ms(), cfg)?;
    let report = match record.annotations() {
        Some(ann) if !estimates.results.is_empty() => Some(
            eval::evaluate(
                record.subject_id(),
                &estimates.results,
                ann,
                cfg.readout.hi_ms,
                cfg.eval.bin_width_bpm,
                cfg.eval.match_window_ms,
            )
            .at(Stage::Eval)?,
        ),
        _ => None,
    };
    Ok(RunOutput {
        subject_id: record.subject_id().to_owned(),
        spikes,
        data_density,
        model,
        final_network: net,
        estimates,
        report,
        config: cfg.clone(),
    })
}

pub fn ensure_dir(dir: &Path) -> StageResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
        .at(Stage::Write)
}

/// Writes the artifacts `estimate` needs: network snapshot, weights and the
/// readout model.
pub fn write_model(model: &TrainedModel, dir: &Path) -> StageResult<()> {
    ensure_dir(dir)?;
    model.network.save_json(&dir.join(files::NETWORK)).at(Stage::Write)?;
    model.network.write_weights_csv(&dir.join(files::WEIGHTS)).at(Stage::Write)?;
    liquid::write_raster_csv(&model.train_raster, &dir.join(files::TRAIN_RASTER)).at(Stage::Write)?;
    model.readout.save(&dir.join(files::READOUT)).at(Stage::Write)
}

pub fn read_model(dir: &Path) -> StageResult<(LiquidNetwork, ReadoutModel)> {
    let net = LiquidNetwork::load_json(&dir.join(files::NETWORK)).at(Stage::Load)?;
    let model = ReadoutModel::load(&dir.join(files::READOUT)).at(Stage::Load)?;
    Ok((net, model))
}

pub fn write_results(results: &[WindowResult], path: &Path) -> StageResult<()> {
    let text = inference::results_to_jsonl(results).at(Stage::Write)?;
    fsutil::write_atomic(path, text.as_bytes()).at(Stage::Write)
}

/// Writes every artifact of a run into `dir` and returns the paths written.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> StageResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let p = |name: &str| dir.join(name);
    fsutil::write_atomic(&p(files::CONFIG), out.config.to_text().as_bytes()).at(Stage::Write)?;
    out.spikes.write_csv(&p(files::SPIKES)).at(Stage::Write)?;
    write_model(&out.model, dir)?;
    liquid::write_raster_csv(&out.estimates.raster, &p(files::RASTER)).at(Stage::Write)?;
    write_results(&out.estimates.results, &p(files::RESULTS))?;
    let mut written = vec![
        p(files::CONFIG),
        p(files::SPIKES),
        p(files::NETWORK),
        p(files::WEIGHTS),
        p(files::TRAIN_RASTER),
        p(files::READOUT),
        p(files::RASTER),
        p(files::RESULTS),
    ];
    if let Some(rep) = &out.report {
        rep.write(&p(files::REPORT), &p(files::HISTOGRAM)).at(Stage::Write)?;
        written.push(p(files::REPORT));
        written.push(p(files::HISTOGRAM));
    }
    Ok(written)
}
