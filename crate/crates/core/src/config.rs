//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecg::SynthConfig;
use crate::encoder::{DEFAULT_DELTA_LEVELS, DEFAULT_TIMER_INTERVAL_MS};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::inference::DEFAULT_H_MAX;
use crate::liquid::{inhibitory_count, DynamicsConfig, TopologyConfig};
use crate::plasticity::PlasticityConfig;
use crate::readout::pso::PsoConfig;
use crate::readout::ReadoutConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSettings {
    /// Threshold gap as a fraction of the 1..99 percentile range.
    pub levels: f64,
    pub timer_interval_ms: f64,
    /// Fixed threshold gap in signal units; `0` derives it per record.
    pub delta: f64,
    pub adc_bits: u32,
}

impl Default for EncodeSettings {
    fn default() -> Self {
        EncodeSettings {
            levels: DEFAULT_DELTA_LEVELS,
            timer_interval_ms: DEFAULT_TIMER_INTERVAL_MS,
            delta: 0.0,
            adc_bits: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub bin_width_bpm: f64,
    pub match_window_ms: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bin_width_bpm: 0.7,
            match_window_ms: crate::eval::DEFAULT_MATCH_WINDOW_MS,
        }
    }
}

/// Every tunable of a run. `seed` is the master seed; the network and swarm
/// seeds are derived from it unless set explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Sampling rate assumed for single-column ECG CSV input.
    pub input_fs: f64,
    pub encode: EncodeSettings,
    pub topology: TopologyConfig,
    pub dynamics: DynamicsConfig,
    pub plasticity: PlasticityConfig,
    pub readout: ReadoutConfig,
    pub pso: PsoConfig,
    pub h_max: usize,
    /// Include the full PMF in every results line.
    pub emit_pmf: bool,
    pub eval: EvalSettings,
    pub synth: SynthConfig,
    topology_seed: Option<u64>,
    pso_seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = PipelineConfig {
            seed: 0,
            input_fs: 256.0,
            encode: EncodeSettings::default(),
            topology: TopologyConfig::default(),
            dynamics: DynamicsConfig::default(),
            plasticity: PlasticityConfig::default(),
            readout: ReadoutConfig::default(),
            pso: PsoConfig::default(),
            h_max: DEFAULT_H_MAX,
            emit_pmf: false,
            eval: EvalSettings::default(),
            synth: SynthConfig::default(),
            topology_seed: None,
            pso_seed: None,
        };
        cfg.propagate_seed();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad value for {key}: {value:?}"))),
    }
}

/// Mixes the master seed into independent per-component streams.
fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.set_seed(seed);
        cfg
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.propagate_seed();
    }

    fn propagate_seed(&mut self) {
        self.topology.seed = self.topology_seed.unwrap_or_else(|| derive_seed(self.seed, 1));
        self.pso.seed = self.pso_seed.unwrap_or_else(|| derive_seed(self.seed, 2));
        self.synth.seed = self.seed;
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.topology;
        let d = &mut self.dynamics;
        let pl = &mut self.plasticity;
        match key.trim() {
            "seed" => {
                self.seed = parse(key, v)?;
            }
            "input.fs" => self.input_fs = parse(key, v)?,

            "encoder.levels" => self.encode.levels = parse(key, v)?,
            "encoder.timer_ms" => self.encode.timer_interval_ms = parse(key, v)?,
            "encoder.delta" => self.encode.delta = parse(key, v)?,
            "encoder.adc_bits" => self.encode.adc_bits = parse(key, v)?,

            "network.n_exc" => {
                t.n_exc = parse(key, v)?;
                t.n_inh = inhibitory_count(t.n_exc);
            }
            "network.p_ee" => t.p_ee = parse(key, v)?,
            "network.p_ei" => t.p_ei = parse(key, v)?,
            "network.p_ie" => t.p_ie = parse(key, v)?,
            "network.p_input" => t.p_input = parse(key, v)?,
            "network.w0_mean" => t.w0_mean = parse(key, v)?,
            "network.w0_jitter" => t.w0_jitter = parse(key, v)?,
            "network.w_input_mean" => t.w_input_mean = parse(key, v)?,
            "network.w_input_jitter" => t.w_input_jitter = parse(key, v)?,
            "network.seed" => self.topology_seed = Some(parse(key, v)?),

            "dynamics.tau_exc_ms" => d.tau_exc_ms = parse(key, v)?,
            "dynamics.tau_inh_ms" => d.tau_inh_ms = parse(key, v)?,
            "dynamics.e_exc_mv" => d.e_exc_mv = parse(key, v)?,
            "dynamics.e_inh_mv" => d.e_inh_mv = parse(key, v)?,
            "dynamics.current_scale" => d.current_scale = parse(key, v)?,
            "dynamics.inhibitory_gain" => d.inhibitory_gain = parse(key, v)?,
            "dynamics.bg_mean_exc" => d.bg_mean_exc = parse(key, v)?,
            "dynamics.bg_spread_exc" => d.bg_spread_exc = parse(key, v)?,
            "dynamics.bg_std_exc" => d.bg_std_exc = parse(key, v)?,
            "dynamics.bg_mean_inh" => d.bg_mean_inh = parse(key, v)?,
            "dynamics.bg_spread_inh" => d.bg_spread_inh = parse(key, v)?,
            "dynamics.bg_std_inh" => d.bg_std_inh = parse(key, v)?,
            "dynamics.rate_horizon_exc_s" => d.rate_horizon_exc_s = parse(key, v)?,
            "dynamics.rate_horizon_inh_s" => d.rate_horizon_inh_s = parse(key, v)?,

            "plasticity.t_i_ms" => pl.schedule.t_i_ms = parse(key, v)?,
            "plasticity.stdp_window_ms" => pl.schedule.stdp_window_ms = parse(key, v)?,
            "plasticity.exc.alpha" => pl.homeo_exc.alpha = parse(key, v)?,
            "plasticity.exc.beta" => pl.homeo_exc.beta = parse(key, v)?,
            "plasticity.exc.gamma" => pl.homeo_exc.gamma = parse(key, v)?,
            "plasticity.exc.r_target" => pl.homeo_exc.r_target = parse(key, v)?,
            "plasticity.exc.t_avg" => pl.homeo_exc.t_avg = parse(key, v)?,
            "plasticity.inh.alpha" => pl.homeo_inh.alpha = parse(key, v)?,
            "plasticity.inh.beta" => pl.homeo_inh.beta = parse(key, v)?,
            "plasticity.inh.gamma" => pl.homeo_inh.gamma = parse(key, v)?,
            "plasticity.inh.r_target" => pl.homeo_inh.r_target = parse(key, v)?,
            "plasticity.inh.t_avg" => pl.homeo_inh.t_avg = parse(key, v)?,

            "readout.si_ms" => self.readout.si_ms = parse(key, v)?,
            "readout.hi_ms" => self.readout.hi_ms = parse(key, v)?,
            "readout.m" => self.readout.m = parse(key, v)?,
            "readout.fcm_max_iter" => self.readout.fcm_max_iter = parse(key, v)?,
            "readout.fcm_tol" => self.readout.fcm_tol = parse(key, v)?,

            "pso.n_p" => self.pso.n_p = parse(key, v)?,
            "pso.phi1" => self.pso.phi1 = parse(key, v)?,
            "pso.phi2" => self.pso.phi2 = parse(key, v)?,
            "pso.inertia" => self.pso.inertia = parse(key, v)?,
            "pso.max_iter" => self.pso.max_iter = parse(key, v)?,
            "pso.tol" => self.pso.tol = parse(key, v)?,
            "pso.patience" => self.pso.patience = parse(key, v)?,
            "pso.v_clamp" => self.pso.v_clamp = parse(key, v)?,
            "pso.stochastic_binarization" => self.pso.stochastic_binarization = parse_bool(key, v)?,
            "pso.random_coefficients" => self.pso.random_coefficients = parse_bool(key, v)?,
            "pso.seed" => self.pso_seed = Some(parse(key, v)?),

            "inference.h_max" => self.h_max = parse(key, v)?,
            "inference.emit_pmf" => self.emit_pmf = parse_bool(key, v)?,

            "eval.bin_width_bpm" => self.eval.bin_width_bpm = parse(key, v)?,
            "eval.match_window_ms" => self.eval.match_window_ms = parse(key, v)?,

            "synth.bpm" => self.synth.bpm = parse(key, v)?,
            "synth.duration_s" => self.synth.duration_s = parse(key, v)?,
            "synth.fs" => self.synth.fs = parse(key, v)?,
            "synth.noise_std" => self.synth.noise_std = parse(key, v)?,
            "synth.baseline_drift_amp" => self.synth.baseline_drift_amp = parse(key, v)?,

            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        self.propagate_seed();
        Ok(())
    }

    /// Applies a `KEY=VALUE` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        self.set(k, v)
    }

    /// Parses config text on top of the defaults. `#` starts a comment line.
    pub fn parse_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, l) in fsutil::data_lines(text) {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: format!("expected key = value, got {l:?}"),
            })?;
            cfg.set(k, v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        Self::parse_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_fs > 0.0 && self.input_fs.is_finite()) {
            return Err(Error::Config(format!("input.fs must be > 0, got {}", self.input_fs)));
        }
        if !(self.encode.levels > 0.0) || !(self.encode.timer_interval_ms > 0.0) || !(self.encode.delta >= 0.0) {
            return Err(Error::Config("encoder levels and timer must be > 0, delta >= 0".into()));
        }
        if !(1..=32).contains(&self.encode.adc_bits) {
            return Err(Error::Config(format!("adc_bits must be in 1..=32, got {}", self.encode.adc_bits)));
        }
        self.topology.validate()?;
        self.dynamics.validate()?;
        self.plasticity.validate()?;
        self.readout.validate()?;
        self.pso.validate()?;
        if self.h_max <= self.readout.n_s() {
            return Err(Error::Config(format!(
                "inference.h_max ({}) must exceed the windows per inference interval ({})",
                self.h_max,
                self.readout.n_s()
            )));
        }
        if self.plasticity.schedule.t_i_ms % self.readout.hi_ms != 0 {
            return Err(Error::Config(format!(
                "plasticity.t_i_ms ({}) must be a multiple of readout.hi_ms ({})",
                self.plasticity.schedule.t_i_ms, self.readout.hi_ms
            )));
        }
        if !(self.eval.bin_width_bpm > 0.0 && self.eval.match_window_ms > 0.0) {
            return Err(Error::Config("eval bin width and match window must be > 0".into()));
        }
        Ok(())
    }

    /// Effective settings in the same `key = value` format `load` accepts.
    pub fn to_text(&self) -> String {
        let t = &self.topology;
        let d = &self.dynamics;
        let pl = &self.plasticity;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("input.fs", self.input_fs.to_string());
        kv("encoder.levels", self.encode.levels.to_string());
        kv("encoder.timer_ms", self.encode.timer_interval_ms.to_string());
        kv("encoder.delta", self.encode.delta.to_string());
        kv("encoder.adc_bits", self.encode.adc_bits.to_string());
        kv("network.n_exc", t.n_exc.to_string());
        kv("network.p_ee", t.p_ee.to_string());
        kv("network.p_ei", t.p_ei.to_string());
        kv("network.p_ie", t.p_ie.to_string());
        kv("network.p_input", t.p_input.to_string());
        kv("network.w0_mean", t.w0_mean.to_string());
        kv("network.w0_jitter", t.w0_jitter.to_string());
        kv("network.w_input_mean", t.w_input_mean.to_string());
        kv("network.w_input_jitter", t.w_input_jitter.to_string());
        if let Some(v) = self.topology_seed {
            kv("network.seed", v.to_string());
        }
        kv("dynamics.tau_exc_ms", d.tau_exc_ms.to_string());
        kv("dynamics.tau_inh_ms", d.tau_inh_ms.to_string());
        kv("dynamics.e_exc_mv", d.e_exc_mv.to_string());
        kv("dynamics.e_inh_mv", d.e_inh_mv.to_string());
        kv("dynamics.current_scale", d.current_scale.to_string());
        kv("dynamics.inhibitory_gain", d.inhibitory_gain.to_string());
        kv("dynamics.bg_mean_exc", d.bg_mean_exc.to_string());
        kv("dynamics.bg_spread_exc", d.bg_spread_exc.to_string());
        kv("dynamics.bg_std_exc", d.bg_std_exc.to_string());
        kv("dynamics.bg_mean_inh", d.bg_mean_inh.to_string());
        kv("dynamics.bg_spread_inh", d.bg_spread_inh.to_string());
        kv("dynamics.bg_std_inh", d.bg_std_inh.to_string());
        kv("dynamics.rate_horizon_exc_s", d.rate_horizon_exc_s.to_string());
        kv("dynamics.rate_horizon_inh_s", d.rate_horizon_inh_s.to_string());
        kv("plasticity.t_i_ms", pl.schedule.t_i_ms.to_string());
        kv("plasticity.stdp_window_ms", pl.schedule.stdp_window_ms.to_string());
        for (pre, h) in [("exc", &pl.homeo_exc), ("inh", &pl.homeo_inh)] {
            kv(&format!("plasticity.{pre}.alpha"), h.alpha.to_string());
            kv(&format!("plasticity.{pre}.beta"), h.beta.to_string());
            kv(&format!("plasticity.{pre}.gamma"), h.gamma.to_string());
            kv(&format!("plasticity.{pre}.r_target"), h.r_target.to_string());
            kv(&format!("plasticity.{pre}.t_avg"), h.t_avg.to_string());
        }
        kv("readout.si_ms", self.readout.si_ms.to_string());
        kv("readout.hi_ms", self.readout.hi_ms.to_string());
        kv("readout.m", self.readout.m.to_string());
        kv("readout.fcm_max_iter", self.readout.fcm_max_iter.to_string());
        kv("readout.fcm_tol", self.readout.fcm_tol.to_string());
        kv("pso.n_p", self.pso.n_p.to_string());
        kv("pso.phi1", self.pso.phi1.to_string());
        kv("pso.phi2", self.pso.phi2.to_string());
        kv("pso.inertia", self.pso.inertia.to_string());
        kv("pso.max_iter", self.pso.max_iter.to_string());
        kv("pso.tol", self.pso.tol.to_string());
        kv("pso.patience", self.pso.patience.to_string());
        kv("pso.v_clamp", self.pso.v_clamp.to_string());
        kv("pso.stochastic_binarization", self.pso.stochastic_binarization.to_string());
        kv("pso.random_coefficients", self.pso.random_coefficients.to_string());
        if let Some(v) = self.pso_seed {
            kv("pso.seed", v.to_string());
        }
        kv("inference.h_max", self.h_max.to_string());
        kv("inference.emit_pmf", self.emit_pmf.to_string());
        kv("eval.bin_width_bpm", self.eval.bin_width_bpm.to_string());
        kv("eval.match_window_ms", self.eval.match_window_ms.to_string());
        kv("synth.bpm", self.synth.bpm.to_string());
        kv("synth.duration_s", self.synth.duration_s.to_string());
        kv("synth.fs", self.synth.fs.to_string());
        kv("synth.noise_std", self.synth.noise_std.to_string());
        kv("synth.baseline_drift_amp", self.synth.baseline_drift_amp.to_string());
        s
    }
}
