use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::neuron::NeuronKind;
use crate::error::{Error, Result};

/// Connection statistics of the recurrent layer and its input fan-out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub n_exc: usize,
    pub n_inh: usize,
    pub p_ee: f64,
    pub p_ei: f64,
    pub p_ie: f64,
    pub p_input: f64,
    pub w0_mean: f64,
    pub w0_jitter: f64,
    pub w_input_mean: f64,
    pub w_input_jitter: f64,
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_exc: 64,
            n_inh: 16,
            p_ee: 0.01,
            p_ei: 0.1,
            p_ie: 0.1,
            p_input: 1.0,
            w0_mean: 0.1,
            w0_jitter: 0.05,
            w_input_mean: 1.0,
            w_input_jitter: 0.0,
            seed: 0,
        }
    }
}

/// Inhibitory population size for `n_exc` excitatory neurons.
pub fn inhibitory_count(n_exc: usize) -> usize {
    (0.25 * n_exc as f64).round() as usize
}

impl TopologyConfig {
    pub fn with_exc(n_exc: usize) -> Self {
        TopologyConfig {
            n_exc,
            n_inh: inhibitory_count(n_exc),
            ..Self::default()
        }
    }

    /// Upper weight bound for every synapse.
    pub fn w_max(&self) -> f64 {
        10.0 * self.w0_mean
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_exc == 0 {
            return Err(Error::Config("need at least one excitatory neuron".into()));
        }
        if self.n_inh != inhibitory_count(self.n_exc) {
            return Err(Error::Config(format!(
                "n_inh must be round(0.25 * n_exc) = {}, got {}",
                inhibitory_count(self.n_exc),
                self.n_inh
            )));
        }
        for (name, p) in [
            ("p_ee", self.p_ee),
            ("p_ei", self.p_ei),
            ("p_ie", self.p_ie),
            ("p_input", self.p_input),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, mean, jitter) in [
            ("w0", self.w0_mean, self.w0_jitter),
            ("w_input", self.w_input_mean, self.w_input_jitter),
        ] {
            if !(jitter >= 0.0 && mean - jitter >= 0.0 && mean + jitter <= self.w_max()) {
                return Err(Error::Config(format!(
                    "{name} range [{}, {}] must lie within [0, {}]",
                    mean - jitter,
                    mean + jitter,
                    self.w_max()
                )));
            }
        }
        Ok(())
    }
}

/// Presynaptic side of a connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// The encoder spike channel.
    Input,
    Neuron(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: Source,
    pub post: usize,
    pub weight: f64,
    /// Transmission delay in ms (1 or 2).
    pub delay: u8,
    pub plastic: bool,
    pub w_max: f64,
}

pub(crate) fn kind_of(id: usize, n_exc: usize) -> NeuronKind {
    if id < n_exc {
        NeuronKind::Excitatory
    } else {
        NeuronKind::Inhibitory
    }
}

/// Draws the synapse list. Excitatory ids are `0..n_exc`, inhibitory ids
/// follow. Input synapses come last.
pub(crate) fn draw_synapses(cfg: &TopologyConfig) -> Result<Vec<Synapse>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_exc + cfg.n_inh;
    let w_max = cfg.w_max();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for pre in 0..n {
        for post in 0..n {
            if pre == post {
                continue;
            }
            let p = match (kind_of(pre, cfg.n_exc), kind_of(post, cfg.n_exc)) {
                (NeuronKind::Excitatory, NeuronKind::Excitatory) => cfg.p_ee,
                (NeuronKind::Excitatory, NeuronKind::Inhibitory) => cfg.p_ei,
                (NeuronKind::Inhibitory, NeuronKind::Excitatory) => cfg.p_ie,
                (NeuronKind::Inhibitory, NeuronKind::Inhibitory) => 0.0,
            };
            if rng.random_bool(p) {
                pairs.push((pre, post));
            }
        }
    }
    // An inhibitory neuron never projects back onto an excitatory neuron that
    // drives it.
    let drives: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
    pairs.retain(|&(pre, post)| {
        !(kind_of(pre, cfg.n_exc) == NeuronKind::Inhibitory && drives.contains(&(post, pre)))
    });

    let mut synapses: Vec<Synapse> = pairs
        .into_iter()
        .map(|(pre, post)| Synapse {
            pre: Source::Neuron(pre),
            post,
            weight: uniform(&mut rng, cfg.w0_mean, cfg.w0_jitter),
            delay: rng.random_range(1..=2),
            plastic: true,
            w_max,
        })
        .collect();
    for post in 0..cfg.n_exc {
        if rng.random_bool(cfg.p_input) {
            synapses.push(Synapse {
                pre: Source::Input,
                post,
                weight: uniform(&mut rng, cfg.w_input_mean, cfg.w_input_jitter),
                delay: rng.random_range(1..=2),
                plastic: true,
                w_max,
            });
        }
    }
    Ok(synapses)
}

fn uniform(rng: &mut ChaCha8Rng, mean: f64, jitter: f64) -> f64 {
    if jitter == 0.0 {
        mean
    } else {
        rng.random_range(mean - jitter..=mean + jitter)
    }
}
