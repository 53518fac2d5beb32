//! Spike-timing-dependent plasticity with homeostatic synaptic scaling, and
//! the training phase that runs it before freezing all weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liquid::{LiquidNetwork, NeuronKind, Raster, Source};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub kind: NeuronKind,
}

impl StdpParams {
    pub const fn excitatory() -> Self {
        StdpParams {
            a_plus: 0.1,
            a_minus: -0.1,
            tau_plus: 20.0,
            tau_minus: 20.0,
            kind: NeuronKind::Excitatory,
        }
    }

    pub const fn inhibitory() -> Self {
        StdpParams {
            a_plus: -0.1,
            a_minus: 0.1,
            tau_plus: 20.0,
            tau_minus: 20.0,
            kind: NeuronKind::Inhibitory,
        }
    }
}

/// Weight change for one pre/post pairing, `dt_ms = t_post - t_pre`.
///
/// The depression branch decays with `|dt|` so that long anti-causal gaps
/// contribute little.
pub fn stdp_delta(dt_ms: f64, p: &StdpParams) -> f64 {
    if dt_ms > 0.0 {
        p.a_plus * (-dt_ms / p.tau_plus).exp()
    } else {
        p.a_minus * (-dt_ms.abs() / p.tau_minus).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeostasisParams {
    pub alpha: f64,
    pub beta: f64,
    pub r_target: f64,
    /// Rate averaging horizon in seconds.
    pub t_avg: f64,
    pub gamma: f64,
}

impl HomeostasisParams {
    pub const fn excitatory() -> Self {
        HomeostasisParams {
            alpha: 0.1,
            beta: 1.0,
            r_target: 35.0,
            t_avg: 10.0,
            gamma: 50.0,
        }
    }

    pub const fn inhibitory() -> Self {
        HomeostasisParams {
            alpha: 0.1,
            beta: 1.0,
            r_target: 3.5,
            t_avg: 2.0,
            gamma: 50.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("r_target", self.r_target),
            ("t_avg", self.t_avg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("homeostasis {name} must be > 0, got {v}")));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("homeostasis alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Scalability factor `K`.
    pub fn scale(&self, r_avg: f64) -> f64 {
        let off = (1.0 - r_avg / self.r_target).abs();
        r_avg / (self.t_avg * (1.0 + off * self.gamma))
    }
}

/// Weight derivative combining homeostatic scaling and accumulated STDP.
pub fn weight_derivative(w: f64, r_avg: f64, stdp_accum: f64, h: &HomeostasisParams) -> f64 {
    let homeo = h.alpha * w * (1.0 - r_avg / h.r_target);
    (homeo + h.beta * stdp_accum) * h.scale(r_avg)
}

/// Euler step of the weight over `dt_s` seconds, clamped to `[0, w_max]`.
pub fn homeostatic_update(
    w: f64,
    r_avg: f64,
    stdp_accum: f64,
    h: &HomeostasisParams,
    w_max: f64,
    dt_s: f64,
) -> f64 {
    let dw = weight_derivative(w, r_avg, stdp_accum, h);
    (w + dw * dt_s).clamp(0.0, w_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Training cutoff; plasticity is disabled from this tick on.
    pub t_i_ms: u64,
    /// Pairings further apart than this are ignored.
    pub stdp_window_ms: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            t_i_ms: 60_000,
            stdp_window_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityConfig {
    pub stdp_exc: StdpParams,
    pub stdp_inh: StdpParams,
    pub homeo_exc: HomeostasisParams,
    pub homeo_inh: HomeostasisParams,
    pub schedule: TrainSchedule,
}

impl Default for PlasticityConfig {
    fn default() -> Self {
        PlasticityConfig {
            stdp_exc: StdpParams::excitatory(),
            stdp_inh: StdpParams::inhibitory(),
            homeo_exc: HomeostasisParams::excitatory(),
            homeo_inh: HomeostasisParams::inhibitory(),
            schedule: TrainSchedule::default(),
        }
    }
}

impl PlasticityConfig {
    pub fn validate(&self) -> Result<()> {
        self.homeo_exc.validate()?;
        self.homeo_inh.validate()?;
        for p in [&self.stdp_exc, &self.stdp_inh] {
            if !(p.tau_plus > 0.0 && p.tau_minus > 0.0) {
                return Err(Error::Config("STDP time constants must be > 0".into()));
            }
        }
        Ok(())
    }

    /// STDP rule chosen by the presynaptic type (the input channel is
    /// excitatory).
    fn stdp_for(&self, kind: NeuronKind) -> &StdpParams {
        match kind {
            NeuronKind::Excitatory => &self.stdp_exc,
            NeuronKind::Inhibitory => &self.stdp_inh,
        }
    }

    /// Homeostasis chosen by the postsynaptic type, whose rate it regulates.
    fn homeo_for(&self, kind: NeuronKind) -> &HomeostasisParams {
        match kind {
            NeuronKind::Excitatory => &self.homeo_exc,
            NeuronKind::Inhibitory => &self.homeo_inh,
        }
    }
}

/// Nearest-neighbour pairing bookkeeping for one training run.
struct Learner {
    last_pre: Vec<Option<u64>>,
    last_post: Vec<Option<u64>>,
    accum: Vec<f64>,
    pre_rule: Vec<StdpParams>,
}

impl Learner {
    fn new(net: &LiquidNetwork, cfg: &PlasticityConfig) -> Self {
        let pre_rule = net
            .synapses()
            .iter()
            .map(|s| {
                let kind = match s.pre {
                    Source::Input => NeuronKind::Excitatory,
                    Source::Neuron(p) => net.kind(p),
                };
                *cfg.stdp_for(kind)
            })
            .collect();
        Learner {
            last_pre: vec![None; net.synapses().len()],
            last_post: vec![None; net.len()],
            accum: vec![0.0; net.synapses().len()],
            pre_rule,
        }
    }
}

/// Steps `net` from its current tick up to `schedule.t_i_ms` with plasticity
/// on, then clears every plastic flag. `input[t]` is the encoder spike flag
/// for tick `t`; ticks beyond the slice carry no input. Returns the raster of
/// the training phase.
pub fn train(net: &mut LiquidNetwork, input: &[bool], cfg: &PlasticityConfig) -> Result<Raster> {
    cfg.validate()?;
    let window = cfg.schedule.stdp_window_ms;
    let dt_s = 1e-3;
    let mut learner = Learner::new(net, cfg);
    let mut raster = Vec::new();

    while net.tick() < cfg.schedule.t_i_ms {
        let t = net.tick();
        let spike = input.get(t as usize).copied().unwrap_or(false);
        let ev = net.step(spike);

        // Pre arrivals pair with the latest earlier post spike (depression side).
        for &id in &ev.arrivals {
            let syn = net.synapses()[id];
            if !syn.plastic {
                continue;
            }
            learner.last_pre[id] = Some(t);
            if let Some(tp) = learner.last_post[syn.post] {
                if t - tp <= window {
                    let dt = tp as f64 - t as f64;
                    learner.accum[id] += stdp_delta(dt, &learner.pre_rule[id]);
                }
            }
        }
        // Post spikes pair with the latest pre arrival on each input synapse.
        for &post in &ev.fired {
            learner.last_post[post] = Some(t);
            for &id in net.incoming(post) {
                if !net.synapses()[id].plastic {
                    continue;
                }
                if let Some(tp) = learner.last_pre[id] {
                    if t - tp <= window {
                        let dt = t as f64 - tp as f64;
                        learner.accum[id] += stdp_delta(dt, &learner.pre_rule[id]);
                    }
                }
            }
            raster.push((t, post));
        }

        let rates: Vec<(f64, NeuronKind)> =
            net.states().iter().zip(net.params()).map(|(s, p)| (s.avg_rate, p.kind)).collect();
        for (id, syn) in net.synapses_mut().iter_mut().enumerate() {
            if !syn.plastic {
                continue;
            }
            let (r_avg, kind) = rates[syn.post];
            let h = cfg.homeo_for(kind);
            syn.weight = homeostatic_update(syn.weight, r_avg, learner.accum[id], h, syn.w_max, dt_s);
            learner.accum[id] = 0.0;
        }
    }
    net.freeze();
    Ok(raster)
}
