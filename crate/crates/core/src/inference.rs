//! Heart-rate inference: the per-window QRS probabilities are independent
//! Bernoulli trials, so the beat count follows a Poisson binomial law. Its
//! PMF is recovered exactly from samples of the characteristic function via
//! a DFT.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::{qrs_probabilities, ReadoutModel, StateMatrix};

pub const DEFAULT_H_MAX: usize = 1024;
pub const PLAUSIBLE_BPM: (f64, f64) = (30.0, 220.0);

/// `lambda[j] = Pr(X = j)` for `j < h_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRatePmf {
    lambda: Vec<f64>,
}

impl HeartRatePmf {
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn h_max(&self) -> usize {
        self.lambda.len()
    }

    pub fn total(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Zero-pads or truncates to length `h`.
    pub fn resized(&self, h: usize) -> Vec<f64> {
        let mut v = self.lambda.clone();
        v.resize(h, 0.0);
        v
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    match p.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(i) => Err(Error::invalid(format!("probability p[{i}] = {} outside [0, 1]", p[i]))),
        None => Ok(()),
    }
}

/// `lambda_n = (1/H) prod_k [(1 - p_k) + p_k e^{i 2 pi n / H}]` for `n < h`.
pub fn characteristic_samples(p: &[f64], h: usize) -> Vec<Complex64> {
    (0..h)
        .map(|n| {
            let theta = 2.0 * PI * n as f64 / h as f64;
            let (sin, cos) = theta.sin_cos();
            let prod = p
                .iter()
                .fold(Complex64::new(1.0, 0.0), |acc, &pk| acc * Complex64::new(1.0 - pk + pk * cos, pk * sin));
            prod / h as f64
        })
        .collect()
}

/// DFT of the characteristic samples without any support check: when
/// `h <= p.len()` the mass above `h - 1` folds back modulo `h`.
pub fn characteristic_dft(p: &[f64], h: usize) -> Vec<f64> {
    let mut buf = characteristic_samples(p, h);
    let fft = FftPlanner::new().plan_fft_forward(h);
    fft.process(&mut buf);
    let worst_imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if worst_imag > 1e-9 {
        log::debug!("poisson-binomial DFT imaginary residue {worst_imag:e}");
    }
    buf.into_iter().map(|c| c.re).collect()
}

/// Poisson binomial PMF over `0..h_max` via the characteristic-function DFT.
/// Requires `h_max > p.len()` so the full support fits without aliasing.
pub fn pbd_pmf_dft(p: &[f64], h_max: usize) -> Result<HeartRatePmf> {
    check_probs(p)?;
    if h_max <= p.len() {
        return Err(Error::invalid(format!(
            "h_max ({h_max}) must exceed the number of trials ({})",
            p.len()
        )));
    }
    let mut lambda = characteristic_dft(p, h_max);
    for v in &mut lambda {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = lambda.iter().sum();
    for v in &mut lambda {
        *v /= total;
    }
    Ok(HeartRatePmf { lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbdOracle {
    /// Sum over all `2^n` outcomes; `n <= 20`.
    Enumeration,
    /// Iterated convolution with `[1 - p_k, p_k]`.
    Convolution,
}

pub const ENUMERATION_LIMIT: usize = 20;

/// Exact PMF over `0..=p.len()` by direct evaluation.
pub fn pbd_pmf_oracle(p: &[f64], method: PbdOracle) -> Result<HeartRatePmf> {
    check_probs(p)?;
    let n = p.len();
    let mut lambda = vec![0.0; n + 1];
    match method {
        PbdOracle::Enumeration => {
            if n > ENUMERATION_LIMIT {
                return Err(Error::invalid(format!(
                    "enumeration supports at most {ENUMERATION_LIMIT} trials, got {n}"
                )));
            }
            for outcome in 0u32..(1u32 << n) {
                let prob: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(k, &pk)| if outcome >> k & 1 == 1 { pk } else { 1.0 - pk })
                    .product();
                lambda[outcome.count_ones() as usize] += prob;
            }
        }
        PbdOracle::Convolution => {
            lambda[0] = 1.0;
            for (k, &pk) in p.iter().enumerate() {
                for j in (0..=k + 1).rev() {
                    let stay = lambda[j] * (1.0 - pk);
                    let step = if j > 0 { lambda[j - 1] * pk } else { 0.0 };
                    lambda[j] = stay + step;
                }
            }
        }
    }
    Ok(HeartRatePmf { lambda })
}

/// `sum_j j * lambda_j`.
pub fn expected_heart_rate(pmf: &HeartRatePmf) -> f64 {
    pmf.lambda.iter().enumerate().map(|(j, &l)| j as f64 * l).sum()
}

/// Beat count by hard assignment: windows more likely QRS than not.
pub fn hard_heart_rate(p: &[f64]) -> usize {
    p.iter().filter(|&&x| x > 0.5).count()
}

pub fn is_plausible(bpm: f64) -> bool {
    (PLAUSIBLE_BPM.0..=PLAUSIBLE_BPM.1).contains(&bpm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub expected_bpm: f64,
    pub pmf: HeartRatePmf,
    pub probabilities: Vec<f64>,
    pub plausible: bool,
}

/// Expected heart rate of one inference window under a fitted readout.
pub fn estimate_window(y: &StateMatrix, model: &ReadoutModel, h_max: usize) -> Result<WindowEstimate> {
    let p = qrs_probabilities(y, model)?;
    let pmf = pbd_pmf_dft(&p, h_max)?;
    let expected_bpm = expected_heart_rate(&pmf);
    let plausible = is_plausible(expected_bpm);
    if !plausible {
        log::warn!("estimated {expected_bpm:.1} bpm is outside the physiological range");
    }
    Ok(WindowEstimate {
        expected_bpm,
        pmf,
        probabilities: p,
        plausible,
    })
}

/// QRS events from per-window probabilities: windows with `p >= 0.5` are
/// QRS, and each maximal run of them becomes one event at the centre of its
/// most probable window.
pub fn qrs_detect(p: &[f64], si_ms: u64, window_start_ms: u64) -> Vec<f64> {
    let mut events = Vec::new();
    let mut run: Option<usize> = None;
    let centre = |i: usize| window_start_ms as f64 + (i as f64 + 0.5) * si_ms as f64;
    for (i, &pi) in p.iter().enumerate() {
        if pi >= 0.5 {
            run = Some(match run {
                Some(best) if p[best] >= pi => best,
                _ => i,
            });
        } else if let Some(best) = run.take() {
            events.push(centre(best));
        }
    }
    if let Some(best) = run {
        events.push(centre(best));
    }
    events
}

/// One line of the JSON-lines results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window_index: usize,
    pub start_ms: u64,
    pub expected_bpm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmf: Option<Vec<f64>>,
    pub qrs_event_times_ms: Vec<f64>,
}

pub fn results_to_jsonl(results: &[WindowResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn results_from_jsonl(text: &str) -> Result<Vec<WindowResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
