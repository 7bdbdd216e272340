use maric_atlas::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| normal.sample(rng)).collect()).collect()
}

/// Max over components of |analytic − central difference|, relative to the
/// larger magnitude; components where both are tiny compare absolutely.
fn max_relative_fd_error(p: &[f64], y: &[[f64; 2]], eps: f64) -> f64 {
    let g = gradient(p, y);
    let scale = g.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = 0.0f64;
    for i in 0..y.len() {
        for c in 0..2 {
            let mut plus = y.to_vec();
            let mut minus = y.to_vec();
            plus[i][c] += eps;
            minus[i][c] -= eps;
            let fd = (cost(p, &plus) - cost(p, &minus)) / (2.0 * eps);
            let denom = g[i][c].abs().max(fd.abs());
            let err = if denom > 1e-6 * scale {
                (g[i][c] - fd).abs() / denom
            } else {
                (g[i][c] - fd).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_matrix(&mut rng, 12, 8);
    let p = joint_probabilities(&x, 3.0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<[f64; 2]> = (0..12).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let err = max_relative_fd_error(&p, &y, 1e-5);
    assert!(err <= 1e-4, "max relative error {err}");

    // Also at an iterate taken from an actual run.
    let cfg = TsneConfig {
        perplexity: 3.0,
        iterations: 300,
        ..TsneConfig::default()
    };
    let out = tsne_from_p(&p, 12, &cfg).unwrap();
    let err = max_relative_fd_error(&p, &out.coordinates, 1e-5);
    assert!(err <= 1e-4, "max relative error at converged iterate {err}");
}

#[test]
fn calibration_hits_target_on_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for row in 0..100 {
        let len = rng.random_range(20..120);
        let scale: f64 = rng.random_range(0.1..10.0);
        let d: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * scale).collect();
        let target = rng.random_range(2.0..(len as f64 / 3.0));
        let beta = perplexity_calibration(&d, target).unwrap_or_else(|e| panic!("row {row}: {e}"));
        let achieved = perplexity_at(&d, beta);
        assert!((achieved - target).abs() <= 1e-5 * target, "row {row}: {achieved} vs {target}");
        let p = conditional_probabilities(&d, beta);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kl_of_p_against_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(&mut rng, 25, 6);
    let p = joint_probabilities(&x, 5.0).unwrap();
    assert!(kl_divergence(&p, &p).abs() <= 1e-12);
}

fn two_blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for blob in 0..2 {
        let offset = if blob == 0 { -5.0 } else { 5.0 };
        for _ in 0..20 {
            x.push((0..16).map(|_| offset + normal.sample(&mut rng)).collect());
            labels.push(blob);
        }
    }
    (x, labels)
}

#[test]
fn two_blobs_separate() {
    let (x, labels) = two_blobs(7);
    let cfg = TsneConfig {
        perplexity: 10.0,
        ..TsneConfig::default()
    };
    let out = tsne(&x, &cfg).unwrap();
    let s = silhouette(&out.coordinates, &labels).unwrap();
    assert!(s >= 0.5, "silhouette {s}");
    assert!(out.kl_series.iter().all(|k| *k >= 0.0));
    assert!(out.coordinates.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
}

#[test]
fn silhouette_is_rigid_motion_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<[f64; 2]> = (0..60)
        .map(|i| {
            let shift = (i % 3) as f64 * 3.0;
            [shift + normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect();
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let base = silhouette(&pts, &labels).unwrap();
    for _ in 0..10 {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let flip = if rng.random::<bool>() { -1.0 } else { 1.0 };
        let (tx, ty) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let moved: Vec<[f64; 2]> = pts
            .iter()
            .map(|p| {
                let x = theta.cos() * p[0] - theta.sin() * p[1];
                let y = flip * (theta.sin() * p[0] + theta.cos() * p[1]);
                [x + tx, y + ty]
            })
            .collect();
        assert!((silhouette(&moved, &labels).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn post_exaggeration_kl_mostly_decreases() {
    let (x, _) = two_blobs(11);
    let cfg = TsneConfig {
        perplexity: 10.0,
        ..TsneConfig::default()
    };
    let out = tsne(&x, &cfg).unwrap();
    let after = &out.kl_series[cfg.exaggeration_iters..];
    assert!(after.last().unwrap() <= &after[0]);
    // Window violations are a step-size diagnostic, reported not enforced.
    let v = kl_window_violations(&out.kl_series, cfg.exaggeration_iters, 50, 1e-6);
    eprintln!("post-exaggeration KL window violations: {v:?}");
}

#[test]
fn too_few_points_and_bad_vectors() {
    let cfg = TsneConfig::default();
    assert!(matches!(tsne(&vec![vec![0.0]; 3], &cfg), Err(AtlasError::DegenerateInput(_))));
    let mut x = vec![vec![0.0, 1.0]; 10];
    x[3] = vec![1.0];
    assert!(matches!(tsne(&x, &cfg), Err(AtlasError::DimensionMismatch { index: 3, .. })));
    x[3] = vec![f64::NAN, 0.0];
    assert!(matches!(tsne(&x, &cfg), Err(AtlasError::NonFinite(3))));
}
