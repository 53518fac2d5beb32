//! Scoring against golden R-peak annotations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::inference::WindowResult;

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} actual vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("MAPE needs at least one value"));
    }
    if let Some(i) = actual.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::invalid(format!("actual value {i} is {} (must be > 0)", actual[i])));
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).abs() / a)
        .sum();
    Ok(sum / actual.len() as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Counts of `|diff|` per `[k*bw, (k+1)*bw)`, from zero up to the largest
/// occupied bin.
pub fn hr_diff_histogram(abs_diffs: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be > 0, got {bin_width}")));
    }
    let idx: Vec<usize> = abs_diffs
        .iter()
        .map(|d| (d.abs() / bin_width).floor() as usize)
        .collect();
    let Some(&last) = idx.iter().max() else {
        return Ok(Vec::new());
    };
    let mut bins: Vec<HistogramBin> = (0..=last)
        .map(|k| HistogramBin {
            start: k as f64 * bin_width,
            end: (k + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for k in idx {
        bins[k].count += 1;
    }
    Ok(bins)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for b in bins {
        writeln!(out, "{},{},{}", b.start, b.end, b.count).unwrap();
    }
    out
}

/// Golden rate per inference window: R-peaks in `[k*hi, (k+1)*hi)` scaled
/// to beats per minute.
pub fn annotations_to_bpm(annotations_s: &[f64], hi_ms: u64, n_windows: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_windows];
    for &t in annotations_s {
        let k = (t * 1000.0 / hi_ms as f64).floor();
        if k >= 0.0 && (k as usize) < n_windows {
            counts[k as usize] += 1;
        }
    }
    let per_minute = 60_000.0 / hi_ms as f64;
    counts.into_iter().map(|c| c as f64 * per_minute).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrsMetrics {
    pub n_golden: usize,
    pub n_detected: usize,
    pub matched: usize,
    pub accuracy_pct: f64,
    /// Unmatched detections as a percentage of the golden count.
    pub fp_pct: f64,
    pub fn_pct: f64,
    /// Matched offsets in 0-50, 50-100 and 100-200 ms, percent of matched.
    pub offsets_pct: [f64; 3],
}

pub const DEFAULT_MATCH_WINDOW_MS: f64 = 200.0;

/// Greedy one-to-one matching, closest pairs first, within `match_window_ms`.
/// Both sequences in milliseconds.
pub fn qrs_score(detected: &[f64], golden: &[f64], match_window_ms: f64) -> QrsMetrics {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        let lo = golden.partition_point(|&g| g < d - match_window_ms);
        for (j, &g) in golden.iter().enumerate().skip(lo) {
            if g > d + match_window_ms {
                break;
            }
            pairs.push(((d - g).abs(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; detected.len()];
    let mut gold_used = vec![false; golden.len()];
    let mut buckets = [0usize; 3];
    let mut matched = 0;
    for (off, i, j) in pairs {
        if det_used[i] || gold_used[j] {
            continue;
        }
        det_used[i] = true;
        gold_used[j] = true;
        matched += 1;
        let b = if off < 50.0 {
            0
        } else if off < 100.0 {
            1
        } else {
            2
        };
        buckets[b] += 1;
    }
    let n_golden = golden.len();
    let pct = |x: usize| {
        if n_golden == 0 {
            if x == 0 { 0.0 } else { 100.0 }
        } else {
            x as f64 / n_golden as f64 * 100.0
        }
    };
    let accuracy_pct = if n_golden == 0 { 100.0 } else { pct(matched) };
    let offsets_pct = if matched == 0 {
        [0.0; 3]
    } else {
        buckets.map(|b| b as f64 / matched as f64 * 100.0)
    };
    QrsMetrics {
        n_golden,
        n_detected: detected.len(),
        matched,
        accuracy_pct,
        fp_pct: pct(detected.len() - matched),
        fn_pct: pct(n_golden - matched),
        offsets_pct,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_index: usize,
    pub actual_bpm: f64,
    pub predicted_bpm: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject_id: String,
    pub mape_pct: f64,
    pub windows: Vec<WindowScore>,
    pub histogram: Vec<HistogramBin>,
    pub qrs: QrsMetrics,
}

impl EvalReport {
    pub fn per_window_abs_diff(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.abs_diff).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, json_path: &Path, histogram_csv_path: &Path) -> Result<()> {
        fsutil::write_atomic(json_path, self.to_json()?.as_bytes())?;
        fsutil::write_atomic(histogram_csv_path, histogram_csv(&self.histogram).as_bytes())
    }
}

/// Scores per-window estimates and QRS events against R-peak times
/// (seconds). Only golden peaks inside the evaluated windows count.
pub fn evaluate(
    subject_id: &str,
    results: &[WindowResult],
    annotations_s: &[f64],
    hi_ms: u64,
    bin_width: f64,
    match_window_ms: f64,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::invalid("no windows to evaluate"));
    }
    let n_windows = results.iter().map(|r| r.window_index + 1).max().unwrap_or(0);
    let golden_bpm = annotations_to_bpm(annotations_s, hi_ms, n_windows);
    let windows: Vec<WindowScore> = results
        .iter()
        .map(|r| {
            let actual = golden_bpm[r.window_index];
            WindowScore {
                window_index: r.window_index,
                actual_bpm: actual,
                predicted_bpm: r.expected_bpm,
                abs_diff: (actual - r.expected_bpm).abs(),
            }
        })
        .collect();
    let actual: Vec<f64> = windows.iter().map(|w| w.actual_bpm).collect();
    let predicted: Vec<f64> = windows.iter().map(|w| w.predicted_bpm).collect();
    let mape_pct = mape(&actual, &predicted)?;
    let diffs: Vec<f64> = windows.iter().map(|w| w.abs_diff).collect();
    let histogram = hr_diff_histogram(&diffs, bin_width)?;

    let mut detected: Vec<f64> = results
        .iter()
        .flat_map(|r| r.qrs_event_times_ms.iter().copied())
        .collect();
    detected.sort_by(f64::total_cmp);
    let golden: Vec<f64> = annotations_s
        .iter()
        .map(|t| t * 1000.0)
        .filter(|&t| {
            results
                .iter()
                .any(|r| t >= r.start_ms as f64 && t < (r.start_ms + hi_ms) as f64)
        })
        .collect();
    let qrs = qrs_score(&detected, &golden, match_window_ms);
    Ok(EvalReport {
        subject_id: subject_id.to_owned(),
        mape_pct,
        windows,
        histogram,
        qrs,
    })
}
