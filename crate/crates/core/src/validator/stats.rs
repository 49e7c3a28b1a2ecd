//! Small statistics helpers shared by the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Weighted least squares of `y` on `x`.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    LineFit { slope, intercept: ym - slope * xm, slope_se: (1.0 / sxx).sqrt() }
}

/// Log-log fit of `mean` against `n`, each point weighted by the inverse
/// squared standard error of `ln mean`. Falls back to equal weights when any
/// standard error vanishes.
pub fn loglog_fit(n: &[usize], mean: &[f64], se: &[f64]) -> LineFit {
    let x: Vec<f64> = n.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
    let w: Vec<f64> = if se.iter().zip(mean).all(|(s, m)| *s > 0.0 && *m > 0.0) {
        se.iter().zip(mean).map(|(s, m)| (m / s).powi(2)).collect()
    } else {
        vec![1.0; n.len()]
    };
    weighted_line(&x, &y, &w)
}

/// Standard error of the sum of `blocks` by resampling blocks with
/// replacement.
pub fn block_bootstrap_se(blocks: &[f64], resamples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = blocks.len();
    let sums: Vec<f64> =
        (0..resamples).map(|_| (0..m).map(|_| blocks[rng.random_range(0..m)]).sum()).collect();
    let (mean, _) = mean_se(&sums);
    (sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
}
