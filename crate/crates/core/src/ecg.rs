//! ECG records: CSV loading, annotation files, resampling and a synthetic
//! PQRST generator used as a ground-truth fixture.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// A uniformly sampled single-lead ECG trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    samples: Vec<f64>,
    fs: f64,
    annotations: Option<Vec<f64>>,
    subject_id: String,
}

impl EcgRecord {
    pub fn new(
        samples: Vec<f64>,
        fs: f64,
        annotations: Option<Vec<f64>>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        let rec = EcgRecord {
            samples,
            fs,
            annotations: None,
            subject_id: subject_id.into(),
        };
        match annotations {
            Some(a) => rec.with_annotations(a),
            None => Ok(rec),
        }
    }

    /// Attaches R-peak times (seconds). They must be strictly increasing and
    /// lie within the record.
    pub fn with_annotations(mut self, annotations: Vec<f64>) -> Result<Self> {
        check_increasing(&annotations)?;
        let dur = self.duration_s();
        if let Some(t) = annotations.iter().find(|&&t| !(0.0..=dur).contains(&t)) {
            return Err(Error::invalid(format!(
                "annotation {t} s outside record duration {dur} s"
            )));
        }
        self.annotations = Some(annotations);
        Ok(self)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn annotations(&self) -> Option<&[f64]> {
        self.annotations.as_deref()
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_s() * 1000.0
    }

    /// Sample nearest to time `t_ms`, clamped to the record.
    pub fn sample_at_ms(&self, t_ms: f64) -> f64 {
        let idx = (t_ms * self.fs / 1000.0).round();
        let idx = (idx.max(0.0) as usize).min(self.samples.len().saturating_sub(1));
        self.samples[idx]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.samples.len() * 10);
        for v in &self.samples {
            writeln!(out, "{v}").unwrap();
        }
        fsutil::write_atomic(path, out.as_bytes())
    }
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("annotation {i} is not finite")));
    }
    if let Some(w) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "annotations not strictly increasing at index {}: {} then {}",
            w + 1,
            times[w],
            times[w + 1]
        )));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, text: &str) -> Result<f64> {
    let v: f64 = text.parse().map_err(|_| Error::Parse {
        path: path.to_owned(),
        line,
        msg: format!("cannot parse {text:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("non-finite value {text:?}"),
        });
    }
    Ok(v)
}

/// Loads a voltage-only CSV (one mV value per line, `#` comments allowed).
pub fn load_csv(path: &Path, fs: f64) -> Result<EcgRecord> {
    let text = fsutil::read_to_string(path)?;
    let samples = fsutil::data_lines(&text)
        .map(|(n, l)| parse_f64(path, n, l))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::NoSamples(path.to_owned()));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EcgRecord::new(samples, fs, None, id)
}

/// Loads R-peak times in seconds, one per line. An empty file is valid.
pub fn load_annotations(path: &Path) -> Result<Vec<f64>> {
    let text = fsutil::read_to_string(path)?;
    let times = fsutil::data_lines(&text)
        .map(|(n, l)| parse_f64(path, n, l))
        .collect::<Result<Vec<_>>>()?;
    check_increasing(&times)?;
    Ok(times)
}

pub fn write_annotations(times: &[f64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in times {
        writeln!(out, "{t}").unwrap();
    }
    fsutil::write_atomic(path, out.as_bytes())
}

/// Linear-interpolation resampling onto a `target_fs` grid starting at t=0
/// and ending at or before the last original sample time.
pub fn resample(record: &EcgRecord, target_fs: f64) -> Result<EcgRecord> {
    if !(target_fs > 0.0 && target_fs.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_fs}")));
    }
    if target_fs == record.fs || record.samples.len() < 2 {
        let mut out = record.clone();
        out.fs = target_fs;
        if target_fs == record.fs {
            return Ok(out);
        }
        let ann = out.annotations.take();
        out.samples.truncate(1);
        return match ann {
            Some(a) => out.with_annotations(a),
            None => Ok(out),
        };
    }
    let x = &record.samples;
    let ratio = record.fs / target_fs;
    let last = (x.len() - 1) as f64;
    let n_out = ((last / ratio) + 1e-9).floor() as usize + 1;
    let samples = (0..n_out)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - i as f64;
            x[i] + (x[i + 1] - x[i]) * frac
        })
        .collect();
    let mut out = EcgRecord {
        samples,
        fs: target_fs,
        annotations: None,
        subject_id: record.subject_id.clone(),
    };
    if let Some(a) = &record.annotations {
        // Annotations are times, so they carry over; drop any that fall past the
        // shortened tail.
        let dur = out.duration_s();
        out.annotations = Some(a.iter().copied().filter(|&t| t <= dur).collect());
    }
    Ok(out)
}

/// Parameters of the synthetic ECG generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub bpm: f64,
    pub duration_s: f64,
    pub fs: f64,
    pub noise_std: f64,
    pub baseline_drift_amp: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bpm: 72.0,
            duration_s: 360.0,
            fs: 256.0,
            noise_std: 0.01,
            baseline_drift_amp: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.bpm) {
            return Err(Error::Config(format!("bpm must be in [30, 220], got {}", self.bpm)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration_s)));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Config(format!("fs must be positive, got {}", self.fs)));
        }
        if !(self.noise_std >= 0.0) || !self.baseline_drift_amp.is_finite() {
            return Err(Error::Config("noise_std must be >= 0 and drift finite".into()));
        }
        Ok(())
    }
}

/// One Gaussian component of the beat template: (offset, width, amplitude),
/// offset and width as fractions of the beat period, amplitude relative to R.
const TEMPLATE: [(f64, f64, f64); 5] = [
    (-0.20, 0.025, 0.10),  // P
    (-0.03, 0.010, -0.15), // Q
    (0.00, 0.012, 1.00),   // R
    (0.03, 0.010, -0.25),  // S
    (0.30, 0.050, 0.30),   // T
];

const DRIFT_HZ: f64 = 0.2;

/// Periodic PQRST signal with white noise and sinusoidal baseline drift.
/// Beat `k` is centred at `(k + 0.5) * period`; annotations are the exact R
/// times.
pub fn synth_ecg(cfg: &SynthConfig) -> Result<EcgRecord> {
    cfg.validate()?;
    let period = 60.0 / cfg.bpm;
    let n = (cfg.duration_s * cfg.fs).round() as usize;
    let dt = 1.0 / cfg.fs;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| cfg.baseline_drift_amp * (2.0 * std::f64::consts::PI * DRIFT_HZ * i as f64 * dt).sin())
        .collect();

    let mut annotations = Vec::new();
    let mut k = 0usize;
    loop {
        let centre = (k as f64 + 0.5) * period;
        if centre >= cfg.duration_s {
            break;
        }
        annotations.push(centre);
        for &(off, width, amp) in &TEMPLATE {
            let mu = centre + off * period;
            let sigma = width * period;
            let lo = (((mu - 6.0 * sigma) * cfg.fs).floor().max(0.0)) as usize;
            let hi = ((((mu + 6.0 * sigma) * cfg.fs).ceil()) as usize).min(n);
            for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
                let z = (i as f64 * dt - mu) / sigma;
                *s += amp * (-0.5 * z * z).exp();
            }
        }
        k += 1;
    }

    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }

    let id = format!("synth-{}bpm-seed{}", cfg.bpm, cfg.seed);
    let rec = EcgRecord::new(samples, cfg.fs, None, id)?;
    let dur = rec.duration_s();
    annotations.retain(|&t| t <= dur);
    rec.with_annotations(annotations)
}
