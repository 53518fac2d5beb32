//! Dual-threshold delta encoder: the comparator samples the ECG on a fixed
//! timer and emits one spike each time the signal climbs past the upper
//! threshold. Falling or flat segments only move the thresholds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecg::EcgRecord;
use crate::error::{Error, Result};
use crate::fsutil;

/// Spike timestamps in milliseconds, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain(Vec<f64>);

impl SpikeTrain {
    pub fn new(times_ms: Vec<f64>) -> Result<Self> {
        if let Some(i) = times_ms.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid(format!("spike time {i} is negative or not finite")));
        }
        if let Some(i) = times_ms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "spike times not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(SpikeTrain(times_ms))
    }

    pub fn times_ms(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Spikes with `start_ms <= t < end_ms`.
    pub fn window(&self, start_ms: f64, end_ms: f64) -> &[f64] {
        let lo = self.0.partition_point(|&t| t < start_ms);
        let hi = self.0.partition_point(|&t| t < end_ms);
        &self.0[lo..hi]
    }

    /// Per-millisecond-tick spike flags for ticks `0..n_ticks`.
    pub fn to_ticks(&self, n_ticks: usize) -> Vec<bool> {
        let mut ticks = vec![false; n_ticks];
        for &t in &self.0 {
            let k = t.floor() as usize;
            if k < n_ticks {
                ticks[k] = true;
            }
        }
        ticks
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.0.len() * 8);
        for t in &self.0 {
            writeln!(out, "{t}").unwrap();
        }
        fsutil::write_atomic(path, out.as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let times = fsutil::data_lines(&text)
            .map(|(n, l)| {
                l.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_owned(),
                    line: n,
                    msg: format!("cannot parse {l:?} as a spike time"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SpikeTrain::new(times)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Threshold gap in mV.
    pub delta: f64,
    /// Comparator period in ms.
    pub timer_interval_ms: f64,
    pub initial_lthr: f64,
}

pub const DEFAULT_TIMER_INTERVAL_MS: f64 = 2.0;
pub const DEFAULT_DELTA_LEVELS: f64 = 40.0;

impl EncoderConfig {
    pub fn new(delta: f64, timer_interval_ms: f64, initial_lthr: f64) -> Result<Self> {
        let cfg = EncoderConfig {
            delta,
            timer_interval_ms,
            initial_lthr,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("encoder delta must be > 0, got {}", self.delta)));
        }
        if !(self.timer_interval_ms > 0.0 && self.timer_interval_ms.is_finite()) {
            return Err(Error::Config(format!(
                "timer interval must be > 0, got {}",
                self.timer_interval_ms
            )));
        }
        if !self.initial_lthr.is_finite() {
            return Err(Error::Config("initial lower threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn initial_uthr(&self) -> f64 {
        self.initial_lthr + self.delta
    }

    /// Derives a per-record configuration: `delta` spans the 1st..99th
    /// percentile range in `levels` steps, thresholds start at the first
    /// sample.
    pub fn for_record(record: &EcgRecord, levels: f64, timer_interval_ms: f64) -> Result<Self> {
        let delta = percentile_delta(record.samples(), levels)?;
        let first = record
            .samples()
            .first()
            .copied()
            .ok_or_else(|| Error::invalid("record has no samples"))?;
        EncoderConfig::new(delta, timer_interval_ms, first)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(p99 - p1) / levels`.
pub fn percentile_delta(samples: &[f64], levels: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot derive delta from an empty signal"));
    }
    if !(levels > 0.0) {
        return Err(Error::Config(format!("delta levels must be > 0, got {levels}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = percentile(&sorted, 0.99) - percentile(&sorted, 0.01);
    if !(range > 0.0) {
        return Err(Error::invalid("signal is flat; set the encoder delta explicitly"));
    }
    Ok(range / levels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderState {
    pub lthr: f64,
    pub uthr: f64,
}

impl EncoderState {
    pub fn initial(cfg: &EncoderConfig) -> Self {
        EncoderState {
            lthr: cfg.initial_lthr,
            uthr: cfg.initial_uthr(),
        }
    }
}

/// One comparator cycle.
pub fn encoder_step(state: EncoderState, v: f64, cfg: &EncoderConfig) -> (EncoderState, bool) {
    if v > state.uthr {
        let next = EncoderState {
            lthr: state.uthr,
            uthr: state.uthr + cfg.delta,
        };
        (next, true)
    } else if v < state.lthr {
        let next = EncoderState {
            lthr: state.lthr - cfg.delta,
            uthr: state.lthr,
        };
        (next, false)
    } else {
        (state, false)
    }
}

/// Runs the comparator at `k * timer_interval_ms` over the whole record,
/// reading the nearest sample at each instant.
pub fn encode(record: &EcgRecord, cfg: &EncoderConfig) -> SpikeTrain {
    let dur = record.duration_ms();
    let mut state = EncoderState::initial(cfg);
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * cfg.timer_interval_ms;
        if t >= dur {
            break;
        }
        let (next, spike) = encoder_step(state, record.sample_at_ms(t), cfg);
        state = next;
        if spike {
            times.push(t);
        }
        k += 1;
    }
    SpikeTrain(times)
}

/// ADC bits represented per emitted spike.
pub fn data_density(record: &EcgRecord, train: &SpikeTrain, adc_bits: u32) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::invalid("data density undefined for an empty spike train"));
    }
    Ok(record.len() as f64 * adc_bits as f64 / train.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(delta: f64) -> EncoderConfig {
        EncoderConfig::new(delta, 2.0, 0.0).unwrap()
    }

    #[test]
    fn rising_branch() {
        let s = EncoderState { lthr: 0.0, uthr: 0.1 };
        let (n, spike) = encoder_step(s, 0.15, &cfg(0.1));
        assert!(spike);
        assert_eq!(n.lthr, 0.1);
        assert!((n.uthr - 0.2).abs() < 1e-15);
    }

    #[test]
    fn stable_branch() {
        let s = EncoderState { lthr: 0.0, uthr: 0.1 };
        assert_eq!(encoder_step(s, 0.05, &cfg(0.1)), (s, false));
    }

    #[test]
    fn falling_branch() {
        let s = EncoderState { lthr: 0.0, uthr: 0.1 };
        let (n, spike) = encoder_step(s, -0.05, &cfg(0.1));
        assert!(!spike);
        assert_eq!(n, EncoderState { lthr: -0.1, uthr: 0.0 });
    }

    fn record(samples: Vec<f64>, fs: f64) -> EcgRecord {
        EcgRecord::new(samples, fs, None, "t").unwrap()
    }

    #[test]
    fn ramp_spike_count() {
        // 1 kHz ramp rising 1.05 mV over 2 s, delta 0.1 -> slope 0.00105 mV per
        // 2 ms tick, far below delta.
        let n = 2000;
        let a = 1.05;
        let x: Vec<f64> = (0..n).map(|i| a * i as f64 / (n - 1) as f64).collect();
        let rec = record(x, 1000.0);
        let c = EncoderConfig::new(0.1, 2.0, 0.0).unwrap();
        let train = encode(&rec, &c);
        // Comparator instants stop at t = 1998 ms, which reads sample 1998.
        let reached = a * 1998.0 / 1999.0;
        assert_eq!(train.len(), (reached / 0.1_f64).floor() as usize);
        assert_eq!(train.len(), 10);
    }

    #[test]
    fn falling_and_flat_are_silent() {
        let x: Vec<f64> = (0..1000).map(|i| 1.0 - i as f64 * 0.003).collect();
        let rec = record(x, 500.0);
        let c = EncoderConfig::new(0.05, 2.0, 1.0).unwrap();
        assert!(encode(&rec, &c).is_empty());

        let rec = record(vec![0.03; 500], 250.0);
        let c = EncoderConfig::new(0.1, 2.0, 0.0).unwrap();
        assert!(encode(&rec, &c).is_empty());
    }

    #[test]
    fn timestamps_on_timer_grid() {
        let x: Vec<f64> = (0..2560).map(|i| (i as f64 / 40.0).sin()).collect();
        let rec = record(x, 256.0);
        let c = EncoderConfig::for_record(&rec, 40.0, 2.0).unwrap();
        let train = encode(&rec, &c);
        assert!(!train.is_empty());
        for w in train.times_ms().windows(2) {
            assert!(w[1] > w[0]);
        }
        for t in train.times_ms() {
            assert_eq!(t % 2.0, 0.0);
        }
    }

    #[test]
    fn data_density_formula() {
        let rec = record(vec![0.0; 2560], 256.0);
        let train = SpikeTrain::new((0..640).map(|i| i as f64 * 2.0).collect()).unwrap();
        assert_eq!(data_density(&rec, &train, 12).unwrap(), 48.0);
        let rec = record(vec![0.0], 256.0);
        let one = SpikeTrain::new(vec![0.0]).unwrap();
        assert_eq!(data_density(&rec, &one, 12).unwrap(), 12.0);
        assert!(data_density(&rec, &SpikeTrain::default(), 12).is_err());
    }

    #[test]
    fn percentile_delta_requires_range() {
        assert!(percentile_delta(&[1.0; 10], 40.0).is_err());
        let x: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        // p1 = 1, p99 = 99
        assert!((percentile_delta(&x, 40.0).unwrap() - 98.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn spike_train_validation_and_window() {
        assert!(SpikeTrain::new(vec![1.0, 1.0]).is_err());
        assert!(SpikeTrain::new(vec![-1.0]).is_err());
        let t = SpikeTrain::new(vec![1.0, 5.0, 10.0, 15.0]).unwrap();
        assert_eq!(t.window(5.0, 15.0), &[5.0, 10.0]);
        assert_eq!(t.to_ticks(12).iter().filter(|&&b| b).count(), 3);
    }

    proptest! {
        #[test]
        fn gap_invariant_and_bounded_moves(
            delta in 0.001f64..1.0,
            start in -2.0f64..2.0,
            vs in proptest::collection::vec(-5.0f64..5.0, 1..200),
        ) {
            let c = EncoderConfig::new(delta, 2.0, start).unwrap();
            let mut s = EncoderState::initial(&c);
            for v in vs {
                let (n, spike) = encoder_step(s, v, &c);
                prop_assert!(((n.uthr - n.lthr) - delta).abs() <= 1e-9 * (1.0 + n.uthr.abs()));
                let moved = n.lthr - s.lthr;
                prop_assert!(moved.abs() <= delta * (1.0 + 1e-9));
                if moved > 0.0 { prop_assert!(v > s.uthr && spike); }
                if moved < 0.0 { prop_assert!(v < s.lthr && !spike); }
                s = n;
            }
        }
    }
}
