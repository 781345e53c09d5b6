//! Geometric median by Weiszfeld iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;

/// Sum of Euclidean distances from `m` to every point.
pub fn distance_sum<P: AsRef<[f64]>>(points: &[P], m: &[f64]) -> f64 {
    points.iter().map(|p| libm::sqrt(linalg::squared_distance(p.as_ref(), m))).sum()
}

/// Point minimizing the summed Euclidean distance to `points`.
///
/// Starts from the centroid and applies the Vardi–Zhang variant of the
/// Weiszfeld update, which stays well defined when an iterate lands exactly on
/// a sample point. Stops once an update moves less than `tol`; if `max_iter`
/// is reached first, the best iterate seen is returned.
///
/// Panics if `points` is empty.
pub fn geometric_median<P: AsRef<[f64]>>(points: &[P], tol: f64, max_iter: usize) -> Vec<f64> {
    assert!(!points.is_empty(), "geometric median of an empty set");
    let d = points[0].as_ref().len();
    if points.len() == 1 {
        return points[0].as_ref().to_vec();
    }

    let mut current = vec![0.0; d];
    for p in points {
        linalg::axpy(1.0, p.as_ref(), &mut current);
    }
    for v in &mut current {
        *v /= points.len() as f64;
    }

    let mut best = current.clone();
    let mut best_cost = distance_sum(points, &best);
    let mut weighted = vec![0.0; d];
    let mut pull = vec![0.0; d];

    for _ in 0..max_iter {
        weighted.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut weight_sum = 0.0;
        let mut coincident = 0usize;
        for p in points {
            let p = p.as_ref();
            let dist = libm::sqrt(linalg::squared_distance(p, &current));
            if dist <= 1e-14 {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            weight_sum += w;
            linalg::axpy(w, p, &mut weighted);
            for ((r, &pi), &ci) in pull.iter_mut().zip(p).zip(&current) {
                *r += (pi - ci) * w;
            }
        }
        if weight_sum == 0.0 {
            // every point coincides with the iterate
            return current;
        }

        let next: Vec<f64> = if coincident == 0 {
            weighted.iter().map(|v| v / weight_sum).collect()
        } else {
            let pull_norm = linalg::norm(&pull);
            if pull_norm <= coincident as f64 {
                // the sample point itself is optimal
                return current;
            }
            let shrink = coincident as f64 / pull_norm;
            weighted
                .iter()
                .zip(&current)
                .map(|(t, c)| (1.0 - shrink) * t / weight_sum + shrink * c)
                .collect()
        };

        let step = libm::sqrt(linalg::squared_distance(&next, &current));
        current = next;
        let cost = distance_sum(points, &current);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&current);
        }
        if step < tol {
            break;
        }
    }
    best
}
