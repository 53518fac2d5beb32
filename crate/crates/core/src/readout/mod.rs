//! Readout: spike counts per integration window, fuzzy clustering into
//! QRS / no-QRS, and the swarm search that picks the neuron subset and the
//! cluster centres.

pub mod fcm;
pub mod pso;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fcm::{fcm_centers, fcm_fit, fcm_memberships, fcm_objective, FcmFit};
pub use pso::{binarize, pso_optimize, PsoConfig, PsoResult};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    /// Spike-integrate interval, ms.
    pub si_ms: u64,
    /// Heart-rate inference interval, ms.
    pub hi_ms: u64,
    /// Fuzziness coefficient.
    pub m: f64,
    pub fcm_max_iter: usize,
    pub fcm_tol: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            si_ms: 100,
            hi_ms: 60_000,
            m: 2.0,
            fcm_max_iter: 100,
            fcm_tol: 1e-9,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.si_ms == 0 || self.hi_ms == 0 || self.hi_ms % self.si_ms != 0 {
            return Err(Error::Config(format!(
                "hi_ms ({}) must be a positive multiple of si_ms ({})",
                self.hi_ms, self.si_ms
            )));
        }
        if !(self.m > 1.0 && self.m.is_finite()) {
            return Err(Error::Config(format!("fuzziness m must be > 1, got {}", self.m)));
        }
        Ok(())
    }

    /// Number of integration windows per inference window.
    pub fn n_s(&self) -> usize {
        (self.hi_ms / self.si_ms) as usize
    }
}

/// `rows x cols` spike counts, row-major; rows are integration windows and
/// columns output neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "state matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("state matrix entries must be finite and >= 0"));
        }
        Ok(StateMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        StateMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Counts spikes of `n_neurons` output neurons per integration window of the
/// inference window starting at `window_start_ms`.
pub fn bin_states(
    events: &[(u64, usize)],
    n_neurons: usize,
    cfg: &ReadoutConfig,
    window_start_ms: u64,
) -> Result<StateMatrix> {
    cfg.validate()?;
    let n_s = cfg.n_s();
    let mut y = StateMatrix::zeros(n_s, n_neurons);
    let end = window_start_ms + cfg.hi_ms;
    for &(t, id) in events {
        if t < window_start_ms || t >= end {
            return Err(Error::invalid(format!(
                "spike at {t} ms outside window [{window_start_ms}, {end})"
            )));
        }
        if id >= n_neurons {
            return Err(Error::invalid(format!("neuron {id} is not an output neuron")));
        }
        let row = ((t - window_start_ms) / cfg.si_ms) as usize;
        y.data[row * n_neurons + id] += 1.0;
    }
    Ok(y)
}

/// Excitatory-neuron events of `raster` that fall in `[start, start + len)`.
pub fn window_events(raster: &[(u64, usize)], n_out: usize, start: u64, len: u64) -> Vec<(u64, usize)> {
    raster
        .iter()
        .copied()
        .filter(|&(t, id)| id < n_out && t >= start && t < start + len)
        .collect()
}

/// A fitted readout: neuron mask and frozen cluster centres. `c1` is the
/// QRS centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    pub mask: Vec<bool>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    /// `J_m` of the fitted solution on the training matrix.
    pub objective: f64,
    /// Separation-normalised fitness on the training matrix.
    pub fitness: f64,
    pub readout: ReadoutConfig,
    pub pso: PsoConfig,
}

fn norm_sq(c: &[f64], mask: &[bool]) -> f64 {
    c.iter().zip(mask).filter(|(_, &k)| k).map(|(v, _)| v * v).sum()
}

/// Runs the swarm search once on the training matrix, refines the centres of
/// the selected neurons by alternating FCM updates, and orients the clusters
/// so that the QRS centre has the larger norm.
pub fn fit_readout(y: &StateMatrix, rcfg: &ReadoutConfig, pcfg: &PsoConfig) -> Result<ReadoutModel> {
    rcfg.validate()?;
    if y.rows() == 0 || y.cols() == 0 {
        return Err(Error::Degenerate("empty state matrix".into()));
    }
    if y.is_all_zero() {
        return Err(Error::Degenerate("no spikes in the training window".into()));
    }
    let swarm = pso_optimize(y, rcfg.m, pcfg)?;
    let mask = swarm.mask.clone();
    let zero_dropped = |c: &[f64]| -> Vec<f64> {
        c.iter().zip(&mask).map(|(&v, &k)| if k { v } else { 0.0 }).collect()
    };
    let mut c0 = zero_dropped(&swarm.c0);
    let mut c1 = zero_dropped(&swarm.c1);
    let (mut fitness, mut objective) = pso::masked_fitness(y, &mask, &c0, &c1, rcfg.m);

    if rcfg.fcm_max_iter > 0 {
        if let Ok(fit) = fcm_fit(y, Some(&mask), c0.clone(), c1.clone(), rcfg.m, rcfg.fcm_max_iter, rcfg.fcm_tol) {
            let (f, j) = pso::masked_fitness(y, &mask, &fit.c0, &fit.c1, rcfg.m);
            if f <= fitness {
                c0 = fit.c0;
                c1 = fit.c1;
                fitness = f;
                objective = j;
            }
        }
    }
    if !fitness.is_finite() {
        return Err(Error::Degenerate("cluster centres coincide on every selected neuron".into()));
    }
    if norm_sq(&c0, &mask) > norm_sq(&c1, &mask) {
        std::mem::swap(&mut c0, &mut c1);
    }
    Ok(ReadoutModel {
        mask,
        c0,
        c1,
        objective,
        fitness,
        readout: *rcfg,
        pso: *pcfg,
    })
}

/// QRS membership of each row under the model's frozen centres.
pub fn qrs_probabilities(y: &StateMatrix, model: &ReadoutModel) -> Result<Vec<f64>> {
    if y.cols() != model.mask.len() {
        return Err(Error::invalid(format!(
            "state matrix has {} neurons, model expects {}",
            y.cols(),
            model.mask.len()
        )));
    }
    Ok(fcm_memberships(y, Some(&model.mask), &model.c0, &model.c1, model.readout.m))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ReadoutModel {
    pub fn n_selected(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// `key=value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# liquidhr readout model\n");
        let mask: String = self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let r = &self.readout;
        let p = &self.pso;
        writeln!(s, "mask={mask}").unwrap();
        writeln!(s, "c0={}", join(&self.c0)).unwrap();
        writeln!(s, "c1={}", join(&self.c1)).unwrap();
        writeln!(s, "objective={}", self.objective).unwrap();
        writeln!(s, "fitness={}", self.fitness).unwrap();
        writeln!(s, "readout.si_ms={}", r.si_ms).unwrap();
        writeln!(s, "readout.hi_ms={}", r.hi_ms).unwrap();
        writeln!(s, "readout.m={}", r.m).unwrap();
        writeln!(s, "readout.fcm_max_iter={}", r.fcm_max_iter).unwrap();
        writeln!(s, "readout.fcm_tol={}", r.fcm_tol).unwrap();
        writeln!(s, "pso.n_p={}", p.n_p).unwrap();
        writeln!(s, "pso.phi1={}", p.phi1).unwrap();
        writeln!(s, "pso.phi2={}", p.phi2).unwrap();
        writeln!(s, "pso.inertia={}", p.inertia).unwrap();
        writeln!(s, "pso.max_iter={}", p.max_iter).unwrap();
        writeln!(s, "pso.tol={}", p.tol).unwrap();
        writeln!(s, "pso.patience={}", p.patience).unwrap();
        writeln!(s, "pso.v_clamp={}", p.v_clamp).unwrap();
        writeln!(s, "pso.seed={}", p.seed).unwrap();
        writeln!(s, "pso.stochastic_binarization={}", p.stochastic_binarization).unwrap();
        writeln!(s, "pso.random_coefficients={}", p.random_coefficients).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for (n, line) in fsutil::data_lines(text) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("model line {n}: expected key=value")))?;
            kv.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("model is missing {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("model field {k}: cannot parse {v:?}")))
        }
        let vec = |k: &str| -> Result<Vec<f64>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(k, x)).collect()
        };
        let mask = get("mask")?
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(Error::invalid(format!("bad mask bit {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let readout = ReadoutConfig {
            si_ms: num("readout.si_ms", get("readout.si_ms")?)?,
            hi_ms: num("readout.hi_ms", get("readout.hi_ms")?)?,
            m: num("readout.m", get("readout.m")?)?,
            fcm_max_iter: num("readout.fcm_max_iter", get("readout.fcm_max_iter")?)?,
            fcm_tol: num("readout.fcm_tol", get("readout.fcm_tol")?)?,
        };
        let pso = PsoConfig {
            n_p: num("pso.n_p", get("pso.n_p")?)?,
            phi1: num("pso.phi1", get("pso.phi1")?)?,
            phi2: num("pso.phi2", get("pso.phi2")?)?,
            inertia: num("pso.inertia", get("pso.inertia")?)?,
            max_iter: num("pso.max_iter", get("pso.max_iter")?)?,
            tol: num("pso.tol", get("pso.tol")?)?,
            patience: num("pso.patience", get("pso.patience")?)?,
            v_clamp: num("pso.v_clamp", get("pso.v_clamp")?)?,
            seed: num("pso.seed", get("pso.seed")?)?,
            stochastic_binarization: num(
                "pso.stochastic_binarization",
                get("pso.stochastic_binarization")?,
            )?,
            random_coefficients: num("pso.random_coefficients", get("pso.random_coefficients")?)?,
        };
        let model = ReadoutModel {
            c0: vec("c0")?,
            c1: vec("c1")?,
            objective: num("objective", get("objective")?)?,
            fitness: num("fitness", get("fitness")?)?,
            mask,
            readout,
            pso,
        };
        if model.c0.len() != model.mask.len() || model.c1.len() != model.mask.len() {
            return Err(Error::invalid("model centre lengths do not match the mask"));
        }
        readout.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?)
    }
}
