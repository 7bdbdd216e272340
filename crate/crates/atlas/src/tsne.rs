//! Exact t-SNE. Every sum runs in a fixed index order on one thread, so a
//! seed fully determines the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::AtlasError;
use crate::traces::check_vectors;

pub const MAX_BISECTION_STEPS: usize = 200;
pub const CALIBRATION_TOLERANCE: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            init_sigma: 1e-4,
            seed: 42,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<(), AtlasError> {
        let cap = (n as f64 - 1.0) / 3.0;
        if !(self.perplexity > 1.0 && self.perplexity < cap) {
            return Err(AtlasError::InvalidConfig(format!(
                "perplexity {} must lie in (1, {cap:.3}) for {n} points",
                self.perplexity
            )));
        }
        if self.iterations < 1 {
            return Err(AtlasError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.init_sigma > 0.0 && self.exaggeration > 0.0) {
            return Err(AtlasError::InvalidConfig(
                "learning rate, exaggeration and init sigma must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fills `out` with p_{j|i} for one row of squared distances and returns
/// the row's Shannon entropy in bits.
fn row_probabilities(d2: &[f64], beta: f64, out: &mut [f64]) -> f64 {
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, d) in out.iter_mut().zip(d2) {
        *o = (-beta * (d - min)).exp();
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Bisection on the precision beta so that 2^H matches `target`. Returns
/// beta and the row's conditional probabilities.
pub(crate) fn calibrate_squared(d2: &[f64], target: f64, row: usize) -> Result<(f64, Vec<f64>), AtlasError> {
    if d2.len() < 2 || d2.iter().any(|d| !d.is_finite()) {
        return Err(AtlasError::DegenerateInput(format!(
            "row {row} needs at least 2 finite distances"
        )));
    }
    let tol = CALIBRATION_TOLERANCE * target;
    let mut probs = vec![0.0; d2.len()];
    let mut beta = 1.0;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut closest = f64::NAN;
    for _ in 0..MAX_BISECTION_STEPS {
        let perplexity = row_probabilities(d2, beta, &mut probs).exp2();
        if closest.is_nan() || (perplexity - target).abs() < (closest - target).abs() {
            closest = perplexity;
        }
        if (perplexity - target).abs() <= tol {
            return Ok((beta, probs));
        }
        if perplexity > target {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
        } else {
            hi = beta;
            beta = if lo == 0.0 { beta / 2.0 } else { (lo + beta) / 2.0 };
        }
    }
    Err(AtlasError::CalibrationFailure {
        row,
        target,
        achieved: closest,
    })
}

/// Precision beta for one row of distances (self excluded) such that the
/// conditional distribution p_{j|i} ∝ exp(-beta d_ij²) has the target
/// perplexity.
pub fn perplexity_calibration(distances_row: &[f64], target_perplexity: f64) -> Result<f64, AtlasError> {
    let d2: Vec<f64> = distances_row.iter().map(|d| d * d).collect();
    calibrate_squared(&d2, target_perplexity, 0).map(|(beta, _)| beta)
}

/// p_{j|i} for a row of distances at precision `beta`.
pub fn conditional_probabilities(distances_row: &[f64], beta: f64) -> Vec<f64> {
    let d2: Vec<f64> = distances_row.iter().map(|d| d * d).collect();
    let mut out = vec![0.0; d2.len()];
    row_probabilities(&d2, beta, &mut out);
    out
}

/// 2^H of the conditional distribution at precision `beta`.
pub fn perplexity_at(distances_row: &[f64], beta: f64) -> f64 {
    let p = conditional_probabilities(distances_row, beta);
    let h: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.log2()).sum();
    h.exp2()
}

/// Row-major n×n squared Euclidean distances.
pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

pub fn l2_normalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                v.clone()
            }
        })
        .collect()
}

/// Symmetrized joint probabilities P = (p_{j|i} + p_{i|j}) / 2n, row-major.
pub fn joint_probabilities(x: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>, AtlasError> {
    let n = x.len();
    let d2 = squared_distances(x);
    let mut cond = vec![0.0; n * n];
    let mut row = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| d2[i * n + j]));
        let (_, probs) = calibrate_squared(&row, perplexity, i)?;
        let mut k = 0;
        for j in 0..n {
            if j != i {
                cond[i * n + j] = probs[k];
                k += 1;
            }
        }
    }
    let mut p = vec![0.0; n * n];
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / scale;
        }
    }
    Ok(p)
}

/// Unnormalized Student-t kernel 1/(1+|y_i-y_j|²) with zero diagonal, and
/// its sum over all ordered pairs.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
        }
    }
    let sum = num.iter().sum();
    (num, sum)
}

/// Low-dimensional affinities Q, row-major.
pub fn q_matrix(y: &[[f64; 2]]) -> Vec<f64> {
    let (num, sum) = student_kernel(y);
    num.into_iter().map(|k| k / sum).collect()
}

/// KL(P‖Q) in nats; terms with p = 0 contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum()
}

pub fn cost(p: &[f64], y: &[[f64; 2]]) -> f64 {
    kl_divergence(p, &q_matrix(y))
}

fn gradient_with(p: &[f64], y: &[[f64; 2]], num: &[f64], sum: f64, exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = num[i * n + j];
            let m = (exaggeration * p[i * n + j] - k / sum) * k;
            gx += m * (y[i][0] - y[j][0]);
            gy += m * (y[i][1] - y[j][1]);
        }
        g[i] = [4.0 * gx, 4.0 * gy];
    }
    g
}

/// dC/dy_i = 4 Σ_j (p_ij − q_ij)(y_i − y_j) / (1 + |y_i − y_j|²).
pub fn gradient(p: &[f64], y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (num, sum) = student_kernel(y);
    gradient_with(p, y, &num, sum, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    pub coordinates: Vec<[f64; 2]>,
    /// KL(P‖Q) of the iterate entering each iteration.
    pub kl_series: Vec<f64>,
    pub final_kl: f64,
}

/// Seeded Gaussian starting layout.
pub fn initial_layout(n: usize, sigma: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

/// Gradient descent with momentum, per-coordinate adaptive gains and early
/// exaggeration of P.
pub fn tsne_from_p(p: &[f64], n: usize, config: &TsneConfig) -> Result<TsneOutput, AtlasError> {
    let mut y = initial_layout(n, config.init_sigma, config.seed);
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_series = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.momentum } else { config.final_momentum };
        let (num, sum) = student_kernel(&y);
        let kl: f64 = p
            .iter()
            .zip(&num)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, k)| p * (p * sum / k).ln())
            .sum();
        if !kl.is_finite() {
            return Err(AtlasError::NumericalError { iteration: it });
        }
        kl_series.push(kl);
        let grad = gradient_with(p, &y, &num, sum, exaggeration);
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (update[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8).max(MIN_GAIN)
                };
                update[i][c] = momentum * update[i][c] - config.learning_rate * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(AtlasError::NumericalError { iteration: it });
        }
    }
    let final_kl = cost(p, &y);
    if !final_kl.is_finite() {
        return Err(AtlasError::NumericalError {
            iteration: config.iterations,
        });
    }
    Ok(TsneOutput {
        coordinates: y,
        kl_series,
        final_kl,
    })
}

/// Embeds `vectors` in two dimensions.
pub fn tsne(vectors: &[Vec<f64>], config: &TsneConfig) -> Result<TsneOutput, AtlasError> {
    let n = vectors.len();
    if n < 4 {
        return Err(AtlasError::DegenerateInput(format!("t-SNE needs at least 4 points, got {n}")));
    }
    check_vectors(vectors)?;
    config.validate(n)?;
    let p = joint_probabilities(vectors, config.perplexity)?;
    tsne_from_p(&p, n, config)
}

/// Start iterations of 50-iteration windows, after exaggeration ends, in
/// which KL rose by more than `slack`. A step-size diagnostic only.
pub fn kl_window_violations(series: &[f64], from: usize, window: usize, slack: f64) -> Vec<usize> {
    (from..series.len().saturating_sub(window))
        .step_by(window)
        .filter(|&s| series[s + window] > series[s] + slack)
        .collect()
}
