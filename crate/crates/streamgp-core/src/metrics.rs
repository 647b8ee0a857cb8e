//! Evaluation metrics: RMSE, negative log predictive density and a
//! sample-based expected calibration error over central predictive
//! intervals.

use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::Predictive;
use crate::math;

const LN_2PI: f64 = 1.8378770664093453;

/// One evaluation record of a streaming run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Index of the last task the model has learned (1-based).
    pub task_learned: usize,
    /// Index of the task whose held-out split is evaluated (1-based).
    pub task_eval: usize,
    /// Root mean squared error.
    pub rmse: f64,
    /// Negative log predictive density.
    pub nlpd: f64,
    /// Expected calibration error, when sampled predictions were requested.
    pub ece: Option<f64>,
    /// Wall-clock milliseconds spent updating on `task_learned`.
    pub wall_ms: u64,
}

/// A full report: one row per `(task_learned, task_eval)` pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    /// Rows in evaluation order.
    pub rows: Vec<MetricsRow>,
}

/// Root mean squared error between targets and predictions.
pub fn rmse(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("rmse needs at least one point".to_string()));
    }
    let mse = (y - yhat).norm_squared() / y.len() as f64;
    Ok(math::sqrt(mse))
}

/// Negative log predictive density under per-point Gaussian predictions:
/// `-mean_i log N(y_i; mean_i, variance_i)`.
///
/// The predictive must carry observation noise in its variances.
pub fn nlpd(pred: &Predictive, y: &DVector<f64>) -> Result<f64> {
    if pred.mean.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.mean.len(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("nlpd needs at least one point".to_string()));
    }
    let mut acc = 0.0;
    for i in 0..y.len() {
        let var = pred.variance[i];
        if var.is_nan() || var <= 0.0 {
            return Err(Error::InvalidInput(
                "nlpd needs strictly positive predictive variances".to_string(),
            ));
        }
        let r = y[i] - pred.mean[i];
        acc += 0.5 * (LN_2PI + math::ln(var) + r * r / var);
    }
    Ok(acc / y.len() as f64)
}

/// Empirical `p`-quantile of a sorted slice by linear interpolation of
/// order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = math::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Expected calibration error over `k` central predictive intervals.
///
/// `samples` is `S x N`: column `i` holds `S` predictive draws for test
/// point `i`. For confidence levels `c_j = (2j - 1) / (2k)` the empirical
/// coverage of the central interval `[q_(1-c)/2, q_(1+c)/2]` (sample
/// quantiles) is compared against `c_j` and the absolute mismatches are
/// averaged.
pub fn ece(samples: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<f64> {
    let s = samples.nrows();
    let n = samples.ncols();
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if s < 2 {
        return Err(Error::InvalidInput(
            "ece needs at least two predictive samples per point".to_string(),
        ));
    }
    if k == 0 || n == 0 {
        return Err(Error::InvalidInput("ece needs k >= 1 and data".to_string()));
    }
    let levels: Vec<f64> = (1..=k).map(|j| (2 * j - 1) as f64 / (2 * k) as f64).collect();
    let mut hits = alloc::vec![0usize; k];
    let mut col = alloc::vec![0.0; s];
    for i in 0..n {
        for (r, v) in col.iter_mut().enumerate() {
            *v = samples[(r, i)];
        }
        col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        for (j, &c) in levels.iter().enumerate() {
            let lo = quantile_sorted(&col, (1.0 - c) / 2.0);
            let hi = quantile_sorted(&col, (1.0 + c) / 2.0);
            if y[i] >= lo && y[i] <= hi {
                hits[j] += 1;
            }
        }
    }
    let total: f64 = levels
        .iter()
        .zip(&hits)
        .map(|(&c, &h)| math::abs(h as f64 / n as f64 - c))
        .sum();
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn pred(mean: Vec<f64>, var: Vec<f64>) -> Predictive {
        Predictive {
            mean: DVector::from_vec(mean),
            variance: DVector::from_vec(var),
            full_cov: None,
            includes_noise: true,
        }
    }

    #[test]
    fn rmse_basics() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        assert!((rmse(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rmse_matches_naive_loop() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let y = DVector::from_fn(31, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DVector::from_fn(31, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut acc = 0.0;
        for i in 0..31 {
            acc += (y[i] - z[i]) * (y[i] - z[i]);
        }
        let naive = (acc / 31.0).sqrt();
        assert!((rmse(&y, &z).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn rmse_length_mismatch() {
        let y = DVector::from_vec(vec![1.0]);
        let z = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            rmse(&y, &z),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nlpd_perfect_unit_variance() {
        let y = DVector::from_vec(vec![0.5, -0.5, 2.0]);
        let p = pred(vec![0.5, -0.5, 2.0], vec![1.0, 1.0, 1.0]);
        let v = nlpd(&p, &y).unwrap();
        assert!((v - 0.9189385332046727).abs() < 1e-10);
    }

    #[test]
    fn nlpd_variance_scaling_shift() {
        let y = DVector::from_vec(vec![0.1, 0.2]);
        let base = nlpd(&pred(vec![0.1, 0.2], vec![1.0, 1.0]), &y).unwrap();
        let wide = nlpd(&pred(vec![0.1, 0.2], vec![4.0, 4.0]), &y).unwrap();
        assert!((wide - base - 0.5 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nlpd_matches_naive_loop_and_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 17;
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let var = DVector::from_fn(n, |_, _| 0.5 + rng.gen::<f64>());
        let p = pred(mean.iter().copied().collect(), var.iter().copied().collect());
        let ours = nlpd(&p, &y).unwrap();
        let mut naive = 0.0;
        for i in 0..n {
            let d = y[i] - mean[i];
            naive -= (-0.5 * d * d / var[i]).exp().ln() - 0.5 * (2.0 * core::f64::consts::PI * var[i]).ln();
        }
        naive /= n as f64;
        assert!((ours - naive).abs() < 1e-10);

        // Algebraic identity: 0.5 ln |2 pi| + 0.5 mean(z^2) + mean(ln sigma).
        let z2 = (0..n)
            .map(|i| {
                let z = (y[i] - mean[i]) / var[i].sqrt();
                z * z
            })
            .sum::<f64>()
            / n as f64;
        let lnsig = (0..n).map(|i| var[i].sqrt().ln()).sum::<f64>() / n as f64;
        let identity = 0.5 * LN_2PI + 0.5 * z2 + lnsig;
        assert!((ours - identity).abs() < 1e-10);
    }

    #[test]
    fn nlpd_rejects_zero_variance() {
        let y = DVector::from_vec(vec![0.0]);
        let p = pred(vec![0.0], vec![0.0]);
        assert!(nlpd(&p, &y).is_err());
    }

    #[test]
    fn ece_target_at_median_gives_half() {
        // Coverage is 1 for every level, so ECE = mean(1 - c) = 0.5.
        let s = 101;
        let n = 40;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples = DMatrix::from_fn(s, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut col: Vec<f64> = samples.column(i).iter().copied().collect();
            col.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            y[i] = quantile_sorted(&col, 0.5);
        }
        let v = ece(&samples, &y, 10).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "ece {v}");
    }

    #[test]
    fn ece_target_outside_range_gives_half() {
        let s = 64;
        let n = 25;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let samples = DMatrix::from_fn(s, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_element(n, 1e9);
        let v = ece(&samples, &y, 10).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "ece {v}");
    }

    #[test]
    fn ece_calibrated_predictions_score_near_zero() {
        // Targets drawn from the same distribution as the samples.
        let s = 10_000;
        let n = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let samples = DMatrix::from_fn(s, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = ece(&samples, &y, 10).unwrap();
        assert!(v <= 0.02, "calibrated ece {v}");
    }

    #[test]
    fn ece_invariant_under_affine_rescaling() {
        let s = 37;
        let n = 23;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let samples = DMatrix::from_fn(s, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.8);
        let base = ece(&samples, &y, 10).unwrap();
        let scaled_samples = samples.map(|v| 3.5 * v - 1.25);
        let scaled_y = y.map(|v| 3.5 * v - 1.25);
        let scaled = ece(&scaled_samples, &scaled_y, 10).unwrap();
        assert_eq!(base, scaled);
    }

    #[test]
    fn ece_needs_two_samples() {
        let samples = DMatrix::from_element(1, 3, 0.0);
        let y = DVector::zeros(3);
        assert!(ece(&samples, &y, 10).is_err());
    }
}
