//! Seeded k-means with k-means++ initialization and restarts.
//!
//! Used for unsupervised centroid initialization of the clustering stage and
//! as the raw-spectrum / embedding baselines.

use ndarray::{Array1, Array2};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (ties to the lowest index) and its squared
/// distance.
fn nearest(point: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c.as_slice().expect("contiguous centroid row"));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, the rest sampled proportional
/// to squared distance from the nearest chosen centroid.
fn plus_plus_init(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut dist2: Vec<f64> = x
        .outer_iter()
        .map(|p| sq_dist(p.as_slice().unwrap(), centroids.row(0).as_slice().unwrap()))
        .collect();
    for j in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            rng.sample(WeightedIndex::new(&dist2).expect("non-negative weights"))
        } else {
            // All points coincide with chosen centroids; any pick is as good.
            rng.gen_range(0..n)
        };
        centroids.row_mut(j).assign(&x.row(pick));
        for (i, p) in x.outer_iter().enumerate() {
            let d_new = sq_dist(p.as_slice().unwrap(), centroids.row(j).as_slice().unwrap());
            if d_new < dist2[i] {
                dist2[i] = d_new;
            }
        }
    }
    centroids
}

/// One Lloyd run from a k-means++ seed. Returns the result plus the inertia
/// recorded after every assignment step (used to assert monotonicity).
fn lloyd(
    x: &Array2<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> (KmeansResult, Vec<f64>) {
    let n = x.nrows();
    let d = x.ncols();
    let mut centroids = plus_plus_init(x, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // Assignment step.
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in x.outer_iter().enumerate() {
            let (j, dist) = nearest(p.as_slice().unwrap(), &centroids);
            inertia += dist;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        // Update step.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, p) in x.outer_iter().enumerate() {
            let mut row = sums.row_mut(assignments[i]);
            row += &p;
            counts[assignments[i]] += 1;
        }
        let mut claimed = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let mut row = centroids.row_mut(j);
                row.assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // Reseed an empty cluster to the point farthest from its
                // current centroid, each empty cluster claiming a distinct
                // point.
                let far = x
                    .outer_iter()
                    .enumerate()
                    .filter(|(i, _)| !claimed[*i])
                    .max_by(|(_, a), (_, b)| {
                        let da = nearest(a.as_slice().unwrap(), &centroids).1;
                        let db = nearest(b.as_slice().unwrap(), &centroids).1;
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .map(|(i, _)| i)
                    .expect("nonempty data");
                claimed[far] = true;
                centroids.row_mut(j).assign(&x.row(far));
            }
        }
    }

    let mut inertia = 0.0;
    for (i, p) in x.outer_iter().enumerate() {
        let (j, dist) = nearest(p.as_slice().unwrap(), &centroids);
        assignments[i] = j;
        inertia += dist;
    }
    (
        KmeansResult {
            centroids,
            assignments,
            inertia,
            iterations,
        },
        history,
    )
}

/// Best-of-restarts k-means. Deterministic given `seed`; restart `r` uses
/// seed `seed + r`.
pub fn kmeans(
    x: &Array2<f64>,
    k: usize,
    max_iter: usize,
    restarts: usize,
    seed: u64,
) -> Result<KmeansResult> {
    let n = x.nrows();
    if k == 0 || max_iter == 0 || restarts == 0 {
        return Err(Error::InvalidArgument(
            "kmeans: k, max_iter, and restarts must be >= 1".into(),
        ));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kmeans input".into()));
    }
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let (result, _) = lloyd(x, k, max_iter, &mut rng);
        if best.as_ref().map_or(true, |b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean vector of the rows of `x`.
pub fn global_mean(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(ndarray::Axis(0)).expect("nonempty data")
}
