use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPIKE_PEAK_MV: f64 = 30.0;

/// Membrane substep length; a 1 ms tick runs two of them.
const SUBSTEP_MS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronKind {
    Excitatory,
    Inhibitory,
}

/// Izhikevich coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub kind: NeuronKind,
}

impl NeuronParams {
    /// Regular spiking.
    pub const fn excitatory() -> Self {
        NeuronParams {
            a: 0.02,
            b: 0.2,
            c: -65.0,
            d: 8.0,
            kind: NeuronKind::Excitatory,
        }
    }

    /// Fast spiking.
    pub const fn inhibitory() -> Self {
        NeuronParams {
            a: 0.1,
            b: 0.2,
            c: -65.0,
            d: 2.0,
            kind: NeuronKind::Inhibitory,
        }
    }

    pub const fn for_kind(kind: NeuronKind) -> Self {
        match kind {
            NeuronKind::Excitatory => Self::excitatory(),
            NeuronKind::Inhibitory => Self::inhibitory(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: f64,
    pub u: f64,
    pub g_exc: f64,
    pub g_inh: f64,
    /// Exponentially averaged firing rate in Hz.
    pub avg_rate: f64,
}

impl NeuronState {
    pub fn resting(p: &NeuronParams) -> Self {
        NeuronState {
            v: p.c,
            u: p.b * p.c,
            g_exc: 0.0,
            g_inh: 0.0,
            avg_rate: 0.0,
        }
    }
}

/// Conductance kinetics and drive shared by all neurons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub tau_exc_ms: f64,
    pub tau_inh_ms: f64,
    pub e_exc_mv: f64,
    pub e_inh_mv: f64,
    /// Divides the driving-force product, so a unit excitatory conductance at
    /// rest gives `(e_exc - c) / current_scale` current units.
    pub current_scale: f64,
    /// Multiplier on every inhibitory current (soft winner-take-all tuning).
    pub inhibitory_gain: f64,
    /// Background current, excitatory population: each neuron gets a fixed
    /// bias drawn uniformly from `mean ± spread` at build time, plus Gaussian
    /// noise of `std` every tick.
    pub bg_mean_exc: f64,
    pub bg_spread_exc: f64,
    pub bg_std_exc: f64,
    /// Same for the inhibitory population.
    pub bg_mean_inh: f64,
    pub bg_spread_inh: f64,
    pub bg_std_inh: f64,
    /// Averaging horizon of the firing-rate estimate, seconds.
    pub rate_horizon_exc_s: f64,
    pub rate_horizon_inh_s: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            tau_exc_ms: 5.0,
            tau_inh_ms: 6.0,
            e_exc_mv: 0.0,
            e_inh_mv: -70.0,
            current_scale: 10.0,
            inhibitory_gain: 2.0,
            bg_mean_exc: 5.0,
            bg_spread_exc: 30.0,
            bg_std_exc: 0.0,
            bg_mean_inh: 5.0,
            bg_spread_inh: 30.0,
            bg_std_inh: 0.0,
            rate_horizon_exc_s: 10.0,
            rate_horizon_inh_s: 2.0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_exc_ms", self.tau_exc_ms),
            ("tau_inh_ms", self.tau_inh_ms),
            ("current_scale", self.current_scale),
            ("rate_horizon_exc_s", self.rate_horizon_exc_s),
            ("rate_horizon_inh_s", self.rate_horizon_inh_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let nonneg = [
            ("inhibitory_gain", self.inhibitory_gain),
            ("bg_spread_exc", self.bg_spread_exc),
            ("bg_std_exc", self.bg_std_exc),
            ("bg_spread_inh", self.bg_spread_inh),
            ("bg_std_inh", self.bg_std_inh),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn rate_horizon_s(&self, kind: NeuronKind) -> f64 {
        match kind {
            NeuronKind::Excitatory => self.rate_horizon_exc_s,
            NeuronKind::Inhibitory => self.rate_horizon_inh_s,
        }
    }

    /// `(mean, spread, std)` of the background current for `kind`.
    pub fn background(&self, kind: NeuronKind) -> (f64, f64, f64) {
        match kind {
            NeuronKind::Excitatory => (self.bg_mean_exc, self.bg_spread_exc, self.bg_std_exc),
            NeuronKind::Inhibitory => (self.bg_mean_inh, self.bg_spread_inh, self.bg_std_inh),
        }
    }
}

/// Conductance-based synaptic current at the present membrane potential.
pub fn synaptic_current(state: &NeuronState, dynamics: &DynamicsConfig) -> f64 {
    let exc = state.g_exc * (dynamics.e_exc_mv - state.v);
    let inh = dynamics.inhibitory_gain * state.g_inh * (state.v - dynamics.e_inh_mv);
    (exc - inh) / dynamics.current_scale
}

/// Exponential conductance decay over `dt_ms`.
pub fn decay_conductances(state: &mut NeuronState, dynamics: &DynamicsConfig, dt_ms: f64) {
    state.g_exc *= (-dt_ms / dynamics.tau_exc_ms).exp();
    state.g_inh *= (-dt_ms / dynamics.tau_inh_ms).exp();
}

/// Advances one neuron by `dt_ms` (0.5 or 1.0) under constant input current.
///
/// `v` is integrated in 0.5 ms Euler substeps, `u` once per call. A crossing
/// of the 30 mV peak ends integration and applies the reset `v = c`,
/// `u += d`.
pub fn neuron_step(
    state: &NeuronState,
    params: &NeuronParams,
    i_syn: f64,
    dt_ms: f64,
) -> (NeuronState, bool) {
    debug_assert!(dt_ms == 0.5 || dt_ms == 1.0, "dt must be 0.5 or 1.0 ms");
    let substeps = (dt_ms / SUBSTEP_MS).round().max(1.0) as usize;
    let mut v = state.v;
    let u = state.u;
    let mut fired = false;
    for _ in 0..substeps {
        v += SUBSTEP_MS * (0.04 * v * v + 5.0 * v + 140.0 - u + i_syn);
        if v >= SPIKE_PEAK_MV {
            v = SPIKE_PEAK_MV;
            fired = true;
            break;
        }
    }
    let mut next = *state;
    next.u = u + dt_ms * params.a * (params.b * v - u);
    if fired {
        next.v = params.c;
        next.u += params.d;
    } else {
        next.v = v;
    }
    (next, fired)
}
