//! Particle swarm search over `<w, c0, c1>`: neuron-selection weights and
//! the two cluster centres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fcm::{self, Mask};
use super::StateMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub n_p: usize,
    pub phi1: f64,
    pub phi2: f64,
    /// Multiplier on the previous velocity; 1 keeps it undamped.
    pub inertia: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Iterations over which the relative improvement is measured.
    pub patience: usize,
    /// Velocity bound as a fraction of each dimension's search range.
    pub v_clamp: f64,
    pub seed: u64,
    /// Sample masks instead of thresholding them.
    pub stochastic_binarization: bool,
    /// Scale both attraction terms by fresh uniform draws per dimension.
    pub random_coefficients: bool,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            n_p: 30,
            phi1: 1.5,
            phi2: 1.5,
            inertia: 0.7298,
            max_iter: 2000,
            tol: 1e-4,
            patience: 300,
            v_clamp: 0.2,
            seed: 0,
            stochastic_binarization: false,
            random_coefficients: true,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 {
            return Err(Error::Config("swarm needs at least one particle".into()));
        }
        if !(self.phi1 >= 0.0 && self.phi2 >= 0.0) {
            return Err(Error::Config("PSO acceleration constants must be >= 0".into()));
        }
        if !(self.inertia >= 0.0 && self.inertia.is_finite()) {
            return Err(Error::Config("PSO inertia must be >= 0".into()));
        }
        if !(self.v_clamp > 0.0) {
            return Err(Error::Config("v_clamp must be > 0".into()));
        }
        Ok(())
    }
}

/// Thresholds selection weights at 0.5 (ties switch the neuron on). If
/// nothing survives, the largest weight is kept.
pub fn binarize(w: &[f64]) -> Vec<bool> {
    let mut mask: Vec<bool> = w.iter().map(|&x| x >= 0.5).collect();
    if !mask.iter().any(|&b| b) {
        if let Some(best) = argmax(w) {
            mask[best] = true;
        }
    }
    mask
}

/// Draws a mask where neuron `d` is off with probability `sigmoid(w[d])`.
pub fn binarize_stochastic(w: &[f64], rng: &mut impl Rng) -> Vec<bool> {
    let mut mask: Vec<bool> = w
        .iter()
        .map(|&x| {
            let off = 1.0 / (1.0 + (-x).exp());
            rng.random::<f64>() >= off
        })
        .collect();
    if !mask.iter().any(|&b| b) {
        if let Some(best) = argmax(w) {
            mask[best] = true;
        }
    }
    mask
}

fn argmax(w: &[f64]) -> Option<usize> {
    w.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

/// Particle position layout `[w | c0 | c1]`, each block `n` long.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<'a> {
    pub w: &'a [f64],
    pub c0: &'a [f64],
    pub c1: &'a [f64],
}

pub fn decode(theta: &[f64]) -> Decoded<'_> {
    assert_eq!(theta.len() % 3, 0, "position length must be 3n");
    let n = theta.len() / 3;
    Decoded {
        w: &theta[..n],
        c0: &theta[n..2 * n],
        c1: &theta[2 * n..],
    }
}

pub fn encode(w: &[f64], c0: &[f64], c1: &[f64]) -> Vec<f64> {
    assert!(w.len() == c0.len() && c0.len() == c1.len());
    let mut theta = Vec::with_capacity(3 * w.len());
    theta.extend_from_slice(w);
    theta.extend_from_slice(c0);
    theta.extend_from_slice(c1);
    theta
}

/// Separation-normalised objective of a masked two-cluster solution:
/// `J_m / (n_s * |c1 - c0|^2)`, infinite for coincident centres.
///
/// Raw `J_m` only ever shrinks when columns are dropped, so on its own it
/// rewards masking everything but the quietest neuron; normalising by the
/// centre separation scores compactness against contrast instead.
pub fn masked_fitness(
    y: &StateMatrix,
    mask: &[bool],
    c0: &[f64],
    c1: &[f64],
    m: f64,
) -> (f64, f64) {
    let mask: Mask<'_> = Some(mask);
    let delta = fcm::fcm_memberships(y, mask, c0, c1, m);
    let j = fcm::fcm_objective(y, mask, &delta, c0, c1, m);
    let sep = fcm::separation_sq(c0, c1, mask);
    let fitness = if sep > 0.0 {
        j / (y.rows() as f64 * sep)
    } else {
        f64::INFINITY
    };
    (fitness, j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub mask: Vec<bool>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    /// `J_m` of the best position.
    pub objective: f64,
    /// Fitness of the best position.
    pub fitness: f64,
    /// Global-best position.
    pub position: Vec<f64>,
    /// Global-best fitness after initialisation and after each iteration.
    pub history: Vec<f64>,
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn for_matrix(y: &StateMatrix) -> Self {
        let n = y.cols();
        let mut col_lo = vec![f64::INFINITY; n];
        let mut col_hi = vec![f64::NEG_INFINITY; n];
        for i in 0..y.rows() {
            for (d, &v) in y.row(i).iter().enumerate() {
                col_lo[d] = col_lo[d].min(v);
                col_hi[d] = col_hi[d].max(v);
            }
        }
        let mut lo = vec![0.0; n];
        let mut hi = vec![1.0; n];
        for _ in 0..2 {
            lo.extend_from_slice(&col_lo);
            hi.extend_from_slice(&col_hi);
        }
        Bounds { lo, hi }
    }

    fn range(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }
}

struct Particle {
    theta: Vec<f64>,
    velocity: Vec<f64>,
    best: Vec<f64>,
    best_fit: f64,
}

/// Deterministic-per-seed swarm search with the update
/// `V = inertia V + r1 phi1 (P - X) + r2 phi2 (G - X); X += V`, where
/// `r1, r2` are fresh uniform draws per dimension (or 1 when
/// `random_coefficients` is off). Velocities are clamped to `v_clamp` of
/// each range and positions reflected at the bounds.
///
/// Selection weights start uniform in [0, 1] and each centre starts at a
/// randomly drawn row of `y`.
pub fn pso_optimize(y: &StateMatrix, m: f64, cfg: &PsoConfig) -> Result<PsoResult> {
    cfg.validate()?;
    if y.rows() == 0 || y.cols() == 0 {
        return Err(Error::invalid("state matrix is empty"));
    }
    let n = y.cols();
    let dim = 3 * n;
    let bounds = Bounds::for_matrix(y);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let eval = |theta: &[f64], rng: &mut ChaCha8Rng| -> (f64, f64) {
        let p = decode(theta);
        let mask = if cfg.stochastic_binarization {
            binarize_stochastic(p.w, rng)
        } else {
            binarize(p.w)
        };
        masked_fitness(y, &mask, p.c0, p.c1, m)
    };

    let mut swarm: Vec<Particle> = (0..cfg.n_p)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let r0 = rng.random_range(0..y.rows());
            let r1 = rng.random_range(0..y.rows());
            let theta = encode(&w, y.row(r0), y.row(r1));
            Particle {
                velocity: vec![0.0; dim],
                best: theta.clone(),
                best_fit: f64::INFINITY,
                theta,
            }
        })
        .collect();
    for p in &mut swarm {
        p.best_fit = eval(&p.theta, &mut rng).0;
    }
    let mut g = best_of(&swarm);
    let mut g_best = swarm[g].best.clone();
    let mut g_fit = swarm[g].best_fit;
    let mut history = vec![g_fit];

    for iter in 0..cfg.max_iter {
        for p in &mut swarm {
            for k in 0..dim {
                let range = bounds.range(k);
                let vmax = cfg.v_clamp * range;
                let (r1, r2) = if cfg.random_coefficients {
                    (rng.random::<f64>(), rng.random::<f64>())
                } else {
                    (1.0, 1.0)
                };
                let mut v = cfg.inertia * p.velocity[k]
                    + r1 * cfg.phi1 * (p.best[k] - p.theta[k])
                    + r2 * cfg.phi2 * (g_best[k] - p.theta[k]);
                v = v.clamp(-vmax, vmax);
                let (mut x, lo, hi) = (p.theta[k] + v, bounds.lo[k], bounds.hi[k]);
                if x > hi {
                    x = (2.0 * hi - x).max(lo);
                    v = -v;
                } else if x < lo {
                    x = (2.0 * lo - x).min(hi);
                    v = -v;
                }
                p.theta[k] = x;
                p.velocity[k] = v;
            }
            let fit = eval(&p.theta, &mut rng).0;
            if fit < p.best_fit {
                p.best_fit = fit;
                p.best.copy_from_slice(&p.theta);
            }
        }
        g = best_of(&swarm);
        if swarm[g].best_fit < g_fit {
            g_fit = swarm[g].best_fit;
            g_best.copy_from_slice(&swarm[g].best);
        }
        history.push(g_fit);

        if cfg.patience > 0 && iter + 1 >= cfg.patience {
            let old = history[history.len() - 1 - cfg.patience];
            let improved = old - g_fit;
            if old.is_finite() && improved <= cfg.tol * old.abs() {
                break;
            }
        }
    }

    let p = decode(&g_best);
    let mask = binarize(p.w);
    let (fitness, objective) = masked_fitness(y, &mask, p.c0, p.c1, m);
    Ok(PsoResult {
        c0: p.c0.to_vec(),
        c1: p.c1.to_vec(),
        mask,
        objective,
        fitness,
        position: g_best,
        history,
    })
}

fn best_of(swarm: &[Particle]) -> usize {
    swarm
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_fit.total_cmp(&b.1.best_fit))
        .map(|(i, _)| i)
        .expect("non-empty swarm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn binarize_threshold() {
        assert_eq!(binarize(&[0.7, 0.3, 0.5]), vec![true, false, true]);
        assert_eq!(binarize(&[0.1, 0.4, 0.2]), vec![false, true, false]);
    }

    #[test]
    fn frozen_single_particle() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 7) % 5) as f64).collect();
        let y = StateMatrix::new(20, 2, data).unwrap();
        let cfg = PsoConfig {
            n_p: 1,
            phi1: 0.0,
            phi2: 0.0,
            max_iter: 25,
            seed: 3,
            ..PsoConfig::default()
        };
        let res = pso_optimize(&y, 2.0, &cfg).unwrap();
        // Replay the initialisation draws.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let r0 = rng.random_range(0..20);
        let r1 = rng.random_range(0..20);
        assert_eq!(res.position, encode(&w, y.row(r0), y.row(r1)));
        assert!(res.history.windows(2).all(|h| h[0] == h[1]));
    }

    #[test]
    fn empty_matrix_rejected() {
        let y = StateMatrix::zeros(0, 4);
        assert!(pso_optimize(&y, 2.0, &PsoConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn layout_round_trip(v in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let n = v.len();
            let w: Vec<f64> = v.clone();
            let c0: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
            let c1: Vec<f64> = v.iter().map(|x| x * 2.0).collect();
            let theta = encode(&w, &c0, &c1);
            prop_assert_eq!(theta.len(), 3 * n);
            let d = decode(&theta);
            prop_assert_eq!(d.w, &w[..]);
            prop_assert_eq!(d.c0, &c0[..]);
            prop_assert_eq!(d.c1, &c1[..]);
            prop_assert_eq!(encode(d.w, d.c0, d.c1), theta);
        }

        #[test]
        fn mask_never_empty(w in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            prop_assert!(binarize(&w).iter().any(|&b| b));
        }
    }
}
