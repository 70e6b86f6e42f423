use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HasParams;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over sampled coordinates of |g_fd - g_an| / max(1, |g_fd|, |g_an|)
    pub max_rel: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub checked: usize,
}

fn perturb(model: &mut dyn HasParams, flat_idx: usize, delta: f64) -> (String, usize) {
    let mut offset = 0usize;
    let mut hit = (String::new(), 0usize);
    model.visit_params(&mut |path, p| {
        let n = p.len();
        if flat_idx >= offset && flat_idx < offset + n {
            let inner = flat_idx - offset;
            let slice = p
                .value
                .as_slice_mut()
                .expect("contiguous parameter storage");
            slice[inner] += delta;
            hit = (path.to_string(), inner);
        }
        offset += n;
    });
    hit
}

/// Compare analytic gradients against central finite differences of
/// `loss_fn`. `analytic` is the flat gradient vector in parameter visit
/// order, computed by the caller before invoking the check; `loss_fn` must be
/// deterministic and free of side effects on the model.
///
/// At most `max_coords` coordinates are checked, sampled without replacement
/// from a seeded stream so runs are reproducible.
pub fn grad_check<M: HasParams>(
    model: &mut M,
    loss_fn: &mut dyn FnMut(&mut M) -> f64,
    analytic: &[f64],
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport {
    assert!(
        (1e-6..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-6, 1e-3]"
    );
    let total = model.param_count();
    assert_eq!(total, analytic.len(), "analytic gradient length mismatch");
    let mut coords: Vec<usize> = (0..total).collect();
    if total > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }

    let mut report = GradCheckReport {
        max_rel: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        checked: coords.len(),
    };
    for &idx in &coords {
        let (path, inner) = perturb(model, idx, epsilon);
        let plus = loss_fn(model);
        perturb(model, idx, -2.0 * epsilon);
        let minus = loss_fn(model);
        perturb(model, idx, epsilon);
        let fd = (plus - minus) / (2.0 * epsilon);
        let an = analytic[idx];
        let rel = (fd - an).abs() / 1.0_f64.max(fd.abs()).max(an.abs());
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst_param = path;
            report.worst_coord = inner;
        }
    }
    report
}
