//! The recurrent spiking layer: Izhikevich neurons coupled by
//! conductance synapses with 1-2 ms delays.

mod neuron;
mod topology;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use neuron::{
    decay_conductances, neuron_step, synaptic_current, DynamicsConfig, NeuronKind, NeuronParams,
    NeuronState, SPIKE_PEAK_MV,
};
pub use topology::{inhibitory_count, Source, Synapse, TopologyConfig};

use crate::error::{Error, Result};
use crate::fsutil;

const TICK_MS: f64 = 1.0;
const QUEUE_DEPTH: usize = 2;

/// Spike events `(tick_ms, neuron_id)` in emission order.
pub type Raster = Vec<(u64, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidNetwork {
    params: Vec<NeuronParams>,
    states: Vec<NeuronState>,
    synapses: Vec<Synapse>,
    n_exc: usize,
    /// Outgoing synapse ids per neuron.
    outgoing: Vec<Vec<usize>>,
    /// Incoming synapse ids per neuron.
    incoming: Vec<Vec<usize>>,
    input_synapses: Vec<usize>,
    /// Fixed background current per neuron.
    bias: Vec<f64>,
    /// Synapse ids due at `tick + k`, slot `(tick + k) % QUEUE_DEPTH`.
    queue: [Vec<usize>; QUEUE_DEPTH],
    dynamics: DynamicsConfig,
    tick: u64,
    rng: ChaCha8Rng,
}

/// What happened during one tick.
#[derive(Debug, Default, Clone)]
pub struct StepEvents {
    /// Synapses whose spike reached the postsynaptic neuron this tick.
    pub arrivals: Vec<usize>,
    pub fired: Vec<usize>,
}

impl LiquidNetwork {
    pub fn build(topology: &TopologyConfig, dynamics: DynamicsConfig) -> Result<Self> {
        dynamics.validate()?;
        let synapses = topology::draw_synapses(topology)?;
        let n = topology.n_exc + topology.n_inh;
        let params: Vec<NeuronParams> = (0..n)
            .map(|i| NeuronParams::for_kind(topology::kind_of(i, topology.n_exc)))
            .collect();
        let states = params.iter().map(NeuronState::resting).collect();
        // Biases and noise get their own streams so they never alias the
        // topology draws.
        let mut bias_rng = ChaCha8Rng::seed_from_u64(topology.seed ^ 0x6a09_e667_f3bc_c909);
        let bias = params
            .iter()
            .map(|p| {
                let (mean, spread, _) = dynamics.background(p.kind);
                if spread > 0.0 {
                    bias_rng.random_range(mean - spread..=mean + spread)
                } else {
                    mean
                }
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(topology.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self::assemble(params, states, synapses, bias, topology.n_exc, dynamics, rng))
    }

    fn assemble(
        params: Vec<NeuronParams>,
        states: Vec<NeuronState>,
        synapses: Vec<Synapse>,
        bias: Vec<f64>,
        n_exc: usize,
        dynamics: DynamicsConfig,
        rng: ChaCha8Rng,
    ) -> Self {
        let n = params.len();
        let mut outgoing = vec![Vec::new(); n];
        let mut incoming = vec![Vec::new(); n];
        let mut input_synapses = Vec::new();
        for (id, s) in synapses.iter().enumerate() {
            match s.pre {
                Source::Input => input_synapses.push(id),
                Source::Neuron(pre) => outgoing[pre].push(id),
            }
            incoming[s.post].push(id);
        }
        LiquidNetwork {
            params,
            states,
            synapses,
            n_exc,
            outgoing,
            incoming,
            input_synapses,
            bias,
            queue: Default::default(),
            dynamics,
            tick: 0,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_exc(&self) -> usize {
        self.n_exc
    }

    pub fn n_inh(&self) -> usize {
        self.params.len() - self.n_exc
    }

    pub fn kind(&self, id: usize) -> NeuronKind {
        self.params[id].kind
    }

    pub fn params(&self) -> &[NeuronParams] {
        &self.params
    }

    pub fn states(&self) -> &[NeuronState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [NeuronState] {
        &mut self.states
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn synapses_mut(&mut self) -> &mut [Synapse] {
        &mut self.synapses
    }

    pub fn input_synapses(&self) -> impl Iterator<Item = &Synapse> {
        self.input_synapses.iter().map(|&i| &self.synapses[i])
    }

    pub fn incoming(&self, neuron: usize) -> &[usize] {
        &self.incoming[neuron]
    }

    /// Fixed background current of every neuron.
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    /// Current simulation time in ms (number of completed ticks).
    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Weights of every synapse, in synapse order.
    pub fn weights(&self) -> Vec<f64> {
        self.synapses.iter().map(|s| s.weight).collect()
    }

    pub fn freeze(&mut self) {
        for s in &mut self.synapses {
            s.plastic = false;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.synapses.iter().all(|s| !s.plastic)
    }

    /// Returns every neuron to rest, drops pending events and rewinds the
    /// clock to tick 0. Weights and the noise stream are kept.
    pub fn reset_dynamics(&mut self) {
        for (s, p) in self.states.iter_mut().zip(&self.params) {
            *s = NeuronState::resting(p);
        }
        for q in &mut self.queue {
            q.clear();
        }
        self.tick = 0;
    }

    /// Schedules a spike on synapse `id` for delivery `delay` ticks from now.
    fn enqueue(&mut self, id: usize) {
        let delay = self.synapses[id].delay as u64;
        debug_assert!((1..=QUEUE_DEPTH as u64).contains(&delay));
        let slot = ((self.tick + delay) % QUEUE_DEPTH as u64) as usize;
        self.queue[slot].push(id);
    }

    /// Advances the network by one 1 ms tick.
    ///
    /// Order: conductance decay, delivery of due events, synaptic current and
    /// membrane update, scheduling of new spikes (recurrent and input), rate
    /// averaging.
    pub fn step(&mut self, input_spike: bool) -> StepEvents {
        let slot = (self.tick % QUEUE_DEPTH as u64) as usize;
        for s in &mut self.states {
            decay_conductances(s, &self.dynamics, TICK_MS);
        }
        let arrivals = std::mem::take(&mut self.queue[slot]);
        for &id in &arrivals {
            let syn = self.synapses[id];
            let st = &mut self.states[syn.post];
            match syn.pre {
                Source::Neuron(pre) if self.params[pre].kind == NeuronKind::Inhibitory => {
                    st.g_inh += syn.weight
                }
                _ => st.g_exc += syn.weight,
            }
        }

        let mut fired = Vec::new();
        for id in 0..self.states.len() {
            let p = self.params[id];
            let (_, _, std) = self.dynamics.background(p.kind);
            let mut i_syn = synaptic_current(&self.states[id], &self.dynamics) + self.bias[id];
            if std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                i_syn += std * z;
            }
            let (next, spike) = neuron_step(&self.states[id], &p, i_syn, TICK_MS);
            self.states[id] = next;
            let horizon_ms = self.dynamics.rate_horizon_s(p.kind) * 1000.0;
            let keep = (-TICK_MS / horizon_ms).exp();
            let inst = if spike { 1000.0 / TICK_MS } else { 0.0 };
            let st = &mut self.states[id];
            st.avg_rate = keep * st.avg_rate + (1.0 - keep) * inst;
            if spike {
                fired.push(id);
            }
        }

        for &id in &fired {
            for k in 0..self.outgoing[id].len() {
                let syn = self.outgoing[id][k];
                self.enqueue(syn);
            }
        }
        if input_spike {
            for k in 0..self.input_synapses.len() {
                let syn = self.input_synapses[k];
                self.enqueue(syn);
            }
        }
        self.tick += 1;
        StepEvents { arrivals, fired }
    }

    /// Runs `input.len()` ticks, recording spikes of every neuron.
    pub fn run(&mut self, input: &[bool]) -> Raster {
        let mut raster = Vec::new();
        for &spike in input {
            let t = self.tick;
            let ev = self.step(spike);
            raster.extend(ev.fired.into_iter().map(|id| (t, id)));
        }
        raster
    }

    /// CSV `pre,post,weight,delay`; the input channel is written as `input`.
    pub fn weights_csv(&self) -> String {
        let mut out = String::from("pre,post,weight,delay\n");
        for s in &self.synapses {
            match s.pre {
                Source::Input => write!(out, "input").unwrap(),
                Source::Neuron(p) => write!(out, "{p}").unwrap(),
            }
            writeln!(out, ",{},{},{}", s.post, s.weight, s.delay).unwrap();
        }
        out
    }

    pub fn write_weights_csv(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.weights_csv().as_bytes())
    }

    /// Full snapshot (parameters, state, pending events, RNG) as JSON.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fsutil::write_atomic(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let net: LiquidNetwork = serde_json::from_str(&text)?;
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<()> {
        let n = self.params.len();
        if self.states.len() != n || self.outgoing.len() != n || self.incoming.len() != n || self.bias.len() != n {
            return Err(Error::invalid("network snapshot has inconsistent sizes"));
        }
        for s in &self.synapses {
            let pre_ok = match s.pre {
                Source::Input => true,
                Source::Neuron(p) => p < n,
            };
            if !pre_ok || s.post >= n || !(1..=2).contains(&s.delay) {
                return Err(Error::invalid("network snapshot has an invalid synapse"));
            }
        }
        Ok(())
    }
}

/// Writes a raster as CSV lines `tick_ms,neuron_id`.
pub fn write_raster_csv(raster: &[(u64, usize)], path: &Path) -> Result<()> {
    let mut out = String::from("tick_ms,neuron_id\n");
    for (t, id) in raster {
        writeln!(out, "{t},{id}").unwrap();
    }
    fsutil::write_atomic(path, out.as_bytes())
}

/// Mean firing rate (Hz) of the excitatory population over `duration_ms`.
pub fn mean_excitatory_rate(raster: &[(u64, usize)], n_exc: usize, duration_ms: f64) -> f64 {
    let count = raster.iter().filter(|(_, id)| *id < n_exc).count();
    count as f64 / n_exc as f64 / (duration_ms / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(cfg: &TopologyConfig) -> LiquidNetwork {
        LiquidNetwork::build(cfg, DynamicsConfig::default()).unwrap()
    }

    #[test]
    fn default_sizes_and_no_inh_to_inh() {
        let n = net(&TopologyConfig::default());
        assert_eq!(n.n_exc(), 64);
        assert_eq!(n.n_inh(), 16);
        for s in n.synapses() {
            if let Source::Neuron(p) = s.pre {
                assert!(!(p >= 64 && s.post >= 64), "I->I synapse {p}->{}", s.post);
                assert_ne!(p, s.post);
                assert!((0.05..=0.15).contains(&s.weight));
            } else {
                assert_eq!(s.weight, 1.0);
            }
            assert!(s.delay == 1 || s.delay == 2);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TopologyConfig { p_ee: 1.5, ..TopologyConfig::default() };
        assert!(LiquidNetwork::build(&cfg, DynamicsConfig::default()).is_err());
        let cfg = TopologyConfig { n_inh: 10, ..TopologyConfig::default() };
        assert!(LiquidNetwork::build(&cfg, DynamicsConfig::default()).is_err());
    }

    #[test]
    fn resting_network_is_silent_on_first_tick() {
        let mut n = net(&TopologyConfig::default());
        assert!(n.step(false).fired.is_empty());
    }

    #[test]
    fn input_event_arrives_after_delay() {
        let cfg = TopologyConfig {
            p_input: 1.0,
            w_input_mean: 1.0,
            w_input_jitter: 0.0,
            ..TopologyConfig::default()
        };
        let mut n = net(&cfg);
        n.step(true); // tick 0: spike scheduled
        let delays: Vec<(usize, u8)> = n.input_synapses().map(|s| (s.post, s.delay)).collect();
        assert_eq!(delays.len(), 64);
        n.step(false); // tick 1
        for &(post, d) in &delays {
            let g = n.states()[post].g_exc;
            if d == 1 {
                assert!(g > 0.99, "delay-1 synapse to {post} not delivered");
            } else {
                assert_eq!(g, 0.0, "delay-2 synapse to {post} delivered early");
            }
        }
        n.step(false); // tick 2
        for &(post, d) in &delays {
            if d == 2 {
                assert!(n.states()[post].g_exc > 0.99);
            }
        }
    }

    #[test]
    fn deterministic_raster() {
        let cfg = TopologyConfig {
            p_input: 0.5,
            w_input_mean: 1.0,
            w_input_jitter: 0.0,
            seed: 7,
            ..TopologyConfig::default()
        };
        let dynamics = DynamicsConfig {
            bg_mean_exc: 3.0,
            bg_std_exc: 3.0,
            ..DynamicsConfig::default()
        };
        let input: Vec<bool> = (0..2000).map(|t| t % 7 == 0).collect();
        let mut a = LiquidNetwork::build(&cfg, dynamics).unwrap();
        let mut b = LiquidNetwork::build(&cfg, dynamics).unwrap();
        let ra = a.run(&input);
        assert!(!ra.is_empty());
        assert_eq!(ra, b.run(&input));
    }

    #[test]
    fn json_snapshot_resumes_identically() {
        let cfg = TopologyConfig {
            p_input: 0.5,
            w_input_mean: 1.0,
            w_input_jitter: 0.0,
            seed: 3,
            ..TopologyConfig::default()
        };
        let dynamics = DynamicsConfig {
            bg_mean_exc: 3.0,
            bg_std_exc: 3.0,
            ..DynamicsConfig::default()
        };
        let input: Vec<bool> = (0..1000).map(|t| t % 5 == 0).collect();
        let mut a = LiquidNetwork::build(&cfg, dynamics).unwrap();
        a.run(&input[..500]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        a.save_json(&path).unwrap();
        let mut b = LiquidNetwork::load_json(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.run(&input[500..]), b.run(&input[500..]));
    }

    #[test]
    fn weights_csv_format() {
        let n = net(&TopologyConfig { p_input: 1.0, ..TopologyConfig::default() });
        let csv = n.weights_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("pre,post,weight,delay"));
        assert_eq!(csv.lines().count(), n.synapses().len() + 1);
        assert!(csv.lines().any(|l| l.starts_with("input,")));
    }
}
