use std::collections::HashMap;
use std::hash::Hash;

use crate::error::AtlasError;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0.
pub fn silhouette<P: AsRef<[f64]>, L: Eq + Hash>(points: &[P], labels: &[L]) -> Result<f64, AtlasError> {
    if points.len() != labels.len() {
        return Err(AtlasError::DegenerateInput(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut ids: HashMap<&L, usize> = HashMap::new();
    let cluster: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }
    if k < 2 {
        return Err(AtlasError::DegenerateInput("silhouette needs at least 2 labels".into()));
    }
    if sizes.iter().all(|&s| s < 2) {
        return Err(AtlasError::DegenerateInput("every label is a singleton".into()));
    }
    let first = points[0].as_ref();
    if points.iter().all(|p| p.as_ref() == first) {
        return Err(AtlasError::DegenerateInput("all points are identical".into()));
    }

    let n = points.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[cluster[j]] += euclid(points[i].as_ref(), points[j].as_ref());
            }
        }
        let own = cluster[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn hand_computed_instance() {
        // a = 1 for every point; b is 10.5 for the outer points and 9.5 for
        // the inner ones.
        let pts = [[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
        let labels = ["l", "l", "r", "r"];
        let s = silhouette(&pts, &labels).unwrap();
        let per = [(10.5 - 1.0) / 10.5, (9.5 - 1.0) / 9.5, (9.5 - 1.0) / 9.5, (10.5 - 1.0) / 10.5];
        assert!((s - per.iter().sum::<f64>() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tight_far_clusters_score_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spread = Normal::new(0.0, 0.01).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in [[0.0, 0.0], [100.0, 0.0]].iter().enumerate() {
            for _ in 0..25 {
                pts.push(vec![centre[0] + spread.sample(&mut rng), centre[1] + spread.sample(&mut rng)]);
                labels.push(c);
            }
        }
        assert!(silhouette(&pts, &labels).unwrap() >= 0.9);
    }

    #[test]
    fn random_labels_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<[f64; 2]> = (0..200).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
        let labels: Vec<u8> = (0..200).map(|_| rng.random_range(0..3)).collect();
        assert!(silhouette(&pts, &labels).unwrap().abs() <= 0.1);
    }

    #[test]
    fn singleton_scores_zero_and_degenerate_inputs() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let s = silhouette(&pts, &["a", "a", "b"]).unwrap();
        // The singleton contributes 0; each "a" point has a = 1, b ≈ 6.4–7.1.
        let b0 = (50.0f64).sqrt();
        let b1 = (41.0f64).sqrt();
        assert!((s - ((b0 - 1.0) / b0 + (b1 - 1.0) / b1) / 3.0).abs() < 1e-12);
        assert!(silhouette(&[[1.0, 1.0]; 4], &[0, 0, 1, 1]).is_err());
        assert!(silhouette(&pts, &[0, 0, 0]).is_err());
        assert!(silhouette(&pts, &[0, 1, 2]).is_err());
    }
}
