//! Two-cluster fuzzy c-means on (optionally column-masked) state matrices.
//!
//! Cluster 0 is the no-QRS cluster and cluster 1 the QRS cluster; a
//! membership vector `delta` stores the QRS memberships `delta[i]`, the
//! no-QRS memberships being `1 - delta[i]`. Masked-out columns take no part
//! in any distance.

use super::StateMatrix;
use crate::error::{Error, Result};

/// Column selection; `None` keeps every column.
pub type Mask<'a> = Option<&'a [bool]>;

fn kept(mask: Mask<'_>, d: usize) -> bool {
    mask.is_none_or(|m| m[d])
}

/// Squared Euclidean distance of row `i` to `c` over kept columns.
pub fn sq_dist(y: &StateMatrix, i: usize, c: &[f64], mask: Mask<'_>) -> f64 {
    y.row(i)
        .iter()
        .zip(c)
        .enumerate()
        .filter(|(d, _)| kept(mask, *d))
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum()
}

/// QRS membership from the two squared distances. A point sitting on a
/// centre belongs to it entirely; a point on both (coincident centres) is
/// split evenly.
pub fn membership_from_sq(d0: f64, d1: f64, m: f64) -> f64 {
    match (d0 == 0.0, d1 == 0.0) {
        (true, true) => 0.5,
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => {
            let e = 1.0 / (m - 1.0);
            1.0 / (1.0 + (d1 / d0).powf(e))
        }
    }
}

pub fn fcm_memberships(y: &StateMatrix, mask: Mask<'_>, c0: &[f64], c1: &[f64], m: f64) -> Vec<f64> {
    (0..y.rows())
        .map(|i| membership_from_sq(sq_dist(y, i, c0, mask), sq_dist(y, i, c1, mask), m))
        .collect()
}

/// Membership-weighted centres. Masked-out coordinates are set to zero.
pub fn fcm_centers(
    y: &StateMatrix,
    mask: Mask<'_>,
    delta: &[f64],
    m: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.cols();
    let mut c = [vec![0.0; n], vec![0.0; n]];
    let mut norm = [0.0; 2];
    for (i, &di) in delta.iter().enumerate() {
        let u = [(1.0 - di).powf(m), di.powf(m)];
        for k in 0..2 {
            norm[k] += u[k];
            if u[k] == 0.0 {
                continue;
            }
            for (cd, &yd) in c[k].iter_mut().zip(y.row(i)) {
                *cd += u[k] * yd;
            }
        }
    }
    for k in 0..2 {
        if norm[k] == 0.0 {
            return Err(Error::EmptyCluster(k));
        }
        for (d, cd) in c[k].iter_mut().enumerate() {
            *cd = if kept(mask, d) { *cd / norm[k] } else { 0.0 };
        }
    }
    let [c0, c1] = c;
    Ok((c0, c1))
}

/// Two-cluster objective `sum_i (1-d_i)^m |y_i-c0|^2 + d_i^m |y_i-c1|^2`.
pub fn fcm_objective(
    y: &StateMatrix,
    mask: Mask<'_>,
    delta: &[f64],
    c0: &[f64],
    c1: &[f64],
    m: f64,
) -> f64 {
    delta
        .iter()
        .enumerate()
        .map(|(i, &di)| {
            (1.0 - di).powf(m) * sq_dist(y, i, c0, mask) + di.powf(m) * sq_dist(y, i, c1, mask)
        })
        .sum()
}

/// Squared separation of the two centres over kept columns.
pub fn separation_sq(c0: &[f64], c1: &[f64], mask: Mask<'_>) -> f64 {
    c0.iter()
        .zip(c1)
        .enumerate()
        .filter(|(d, _)| kept(mask, *d))
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum()
}

/// Result of alternating optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct FcmFit {
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub delta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Alternates membership and centre updates from the given centres until
/// the objective improves by less than `tol` (relative) or `max_iter` is hit.
pub fn fcm_fit(
    y: &StateMatrix,
    mask: Mask<'_>,
    c0: Vec<f64>,
    c1: Vec<f64>,
    m: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FcmFit> {
    let mut fit = FcmFit {
        delta: fcm_memberships(y, mask, &c0, &c1, m),
        objective: 0.0,
        c0,
        c1,
        iterations: 0,
    };
    fit.objective = fcm_objective(y, mask, &fit.delta, &fit.c0, &fit.c1, m);
    while fit.iterations < max_iter {
        let (c0, c1) = fcm_centers(y, mask, &fit.delta, m)?;
        let delta = fcm_memberships(y, mask, &c0, &c1, m);
        let objective = fcm_objective(y, mask, &delta, &c0, &c1, m);
        let gain = fit.objective - objective;
        fit = FcmFit {
            c0,
            c1,
            delta,
            objective,
            iterations: fit.iterations + 1,
        };
        if gain <= tol * fit.objective.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> StateMatrix {
        let cols = rows[0].len();
        StateMatrix::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
            .unwrap()
    }

    #[test]
    fn equidistant_is_half() {
        let y = mat(&[&[1.0, 1.0]]);
        let d = fcm_memberships(&y, None, &[0.0, 1.0], &[2.0, 1.0], 2.0);
        assert_eq!(d, vec![0.5]);
    }

    #[test]
    fn on_centre_is_crisp() {
        let y = mat(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let d = fcm_memberships(&y, None, &[0.0, 0.0], &[3.0, 4.0], 2.0);
        assert_eq!(d, vec![1.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_membership() {
        // d0 = 1, d1 = 3 -> delta_0 = 1 / (1 + 1/9) = 0.9
        let y = mat(&[&[0.0]]);
        let d = fcm_memberships(&y, None, &[1.0], &[3.0], 2.0);
        assert!((d[0] - 0.1).abs() < 1e-15);
        assert!((membership_from_sq(1.0, 9.0, 2.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn crisp_centres_are_means() {
        let y = mat(&[&[0.0, 2.0], &[2.0, 4.0], &[10.0, 10.0], &[12.0, 14.0]]);
        let (c0, c1) = fcm_centers(&y, None, &[0.0, 0.0, 1.0, 1.0], 2.0).unwrap();
        assert_eq!(c0, vec![1.0, 3.0]);
        assert_eq!(c1, vec![11.0, 12.0]);
    }

    #[test]
    fn uniform_half_gives_global_mean() {
        let y = mat(&[&[0.0, 2.0], &[2.0, 4.0], &[10.0, 0.0]]);
        let (c0, c1) = fcm_centers(&y, None, &[0.5; 3], 2.0).unwrap();
        assert_eq!(c0, c1);
        assert!((c0[0] - 4.0).abs() < 1e-12 && (c0[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_centre() {
        let y = mat(&[&[5.0, 7.0], &[1.0, 1.0]]);
        let (c0, c1) = fcm_centers(&y, None, &[1.0, 0.0], 2.0).unwrap();
        assert_eq!(c1, vec![5.0, 7.0]);
        assert_eq!(c0, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_cluster_errors() {
        let y = mat(&[&[1.0], &[2.0]]);
        assert!(matches!(fcm_centers(&y, None, &[0.0, 0.0], 2.0), Err(Error::EmptyCluster(1))));
        assert!(matches!(fcm_centers(&y, None, &[1.0, 1.0], 2.0), Err(Error::EmptyCluster(0))));
    }

    #[test]
    fn objective_cases() {
        let y = mat(&[&[1.0, 1.0], &[5.0, 5.0]]);
        assert_eq!(fcm_objective(&y, None, &[0.0, 1.0], &[1.0, 1.0], &[5.0, 5.0], 2.0), 0.0);
        let y = mat(&[&[1.0, 2.0]]);
        let j = fcm_objective(&y, None, &[0.5], &[0.0, 0.0], &[3.0, 3.0], 2.0);
        assert!((j - 0.25 * (5.0 + 5.0)).abs() < 1e-15);
    }

    #[test]
    fn masked_columns_ignored() {
        let y = mat(&[&[1.0, 100.0], &[5.0, 3.0]]);
        let mask = [true, false];
        let d = fcm_memberships(&y, Some(&mask), &[1.0, 0.0], &[5.0, 0.0], 2.0);
        assert_eq!(d, vec![0.0, 1.0]);
        let (c0, _) = fcm_centers(&y, Some(&mask), &[0.0, 1.0], 2.0).unwrap();
        assert_eq!(c0, vec![1.0, 0.0]);
    }
}
