//! Pseudo-time ordering of multidimensional inputs.
//!
//! The covariance recurrences need a time axis. When inputs have no natural
//! order, points are sorted by a criterion, the `i`-th point of a task is
//! assigned the pseudo-time `(offset + i) * dt` (with `offset` the number of
//! previously consumed points), and the path-integral recurrences of
//! [`crate::interdomain`] are driven by the ordered points. A stride larger
//! than one consumes every `s`-th ordered point with step `s * dt`.

use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::hippo::{HippoOperator, Scheme};
use crate::interdomain::{FeatureState, KfuBank};
use crate::kernels::Kernel;
use crate::math;

/// How to order the points of one task before assigning pseudo-times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingStrategy {
    /// Seeded random permutation.
    Random {
        /// Permutation seed.
        seed: u64,
    },
    /// Greedy chain maximizing kernel similarity to the previous point.
    KMax,
    /// Greedy chain minimizing kernel similarity to the previous point
    /// (an adversarial ordering).
    KMin,
    /// Ascending sort by one input dimension.
    ByDimension(usize),
    /// Ascending sort by Euclidean distance from the origin.
    ByL2,
}

/// Order the rows of `x`, returning a permutation (selection order).
///
/// `KMax`/`KMin` chains start from `prev_anchor` when given (the last
/// ordered point of the previous task), otherwise from the origin; they
/// select without replacement within the task, breaking ties by the lowest
/// index. The kernel is required for the greedy strategies.
pub fn order_points(
    x: &DMatrix<f64>,
    strategy: OrderingStrategy,
    kernel: Option<&Kernel>,
    prev_anchor: Option<&[f64]>,
) -> Result<Vec<usize>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot order zero points".to_string()));
    }
    let d = x.ncols();
    match strategy {
        OrderingStrategy::Random { seed } => {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            Ok(idx)
        }
        OrderingStrategy::KMax | OrderingStrategy::KMin => {
            let kernel = kernel.ok_or_else(|| {
                Error::InvalidInput("greedy ordering needs a kernel".to_string())
            })?;
            let maximize = matches!(strategy, OrderingStrategy::KMax);
            let origin = alloc::vec![0.0; d];
            let mut anchor: Vec<f64> = prev_anchor.map(|a| a.to_vec()).unwrap_or(origin);
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut out = Vec::with_capacity(n);
            while !remaining.is_empty() {
                let mut best_pos = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (pos, &i) in remaining.iter().enumerate() {
                    let xi: Vec<f64> = x.row(i).iter().copied().collect();
                    let mut v = kernel.eval(&xi, &anchor)?;
                    if !maximize {
                        v = -v;
                    }
                    // Strict inequality keeps the lowest index on ties.
                    if v > best_val {
                        best_val = v;
                        best_pos = pos;
                    }
                }
                let chosen = remaining.remove(best_pos);
                anchor = x.row(chosen).iter().copied().collect();
                out.push(chosen);
            }
            Ok(out)
        }
        OrderingStrategy::ByDimension(dim) => {
            if dim >= d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: dim,
                });
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                x[(a, dim)]
                    .partial_cmp(&x[(b, dim)])
                    .expect("finite inputs")
                    .then(a.cmp(&b))
            });
            Ok(idx)
        }
        OrderingStrategy::ByL2 => {
            let norms: Vec<f64> = (0..n)
                .map(|i| math::sqrt(x.row(i).iter().map(|v| v * v).sum()))
                .collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                norms[a]
                    .partial_cmp(&norms[b])
                    .expect("finite inputs")
                    .then(a.cmp(&b))
            });
            Ok(idx)
        }
    }
}

/// Pseudo-times for the `n` ordered points of a task: the `i`-th point
/// (1-based) gets `(offset + i) * dt`, where `offset` counts all previously
/// consumed points.
pub fn assign_pseudo_times(offset: usize, n: usize, dt: f64) -> Result<Vec<f64>> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput("dt must be positive".to_string()));
    }
    Ok((1..=n).map(|i| (offset + i) as f64 * dt).collect())
}

/// Drive `K_fu` rows (and optionally the feature state) along ordered
/// points with a stride: every `stride`-th point is consumed as a source
/// with step `stride * dt` (the first consumed point keeps its own
/// pseudo-time, so the first step covers `stride * dt` ending there).
///
/// Points are consumed at their assigned pseudo-times; with stride `s` the
/// visited points are the 1st, `(1+s)`-th, `(1+2s)`-th, ... of the ordered
/// task.
#[allow(clippy::too_many_arguments)] // the drive needs both banks and the full stepping config
pub fn strided_path_advance(
    rows: &mut KfuBank,
    features: Option<&mut FeatureState>,
    op: &HippoOperator,
    kernel: &Kernel,
    ordered_points: &[Vec<f64>],
    stride: usize,
    dt: f64,
    scheme: Scheme,
) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".to_string()));
    }
    let mut features = features;
    let mut first = true;
    let mut idx = 0;
    while idx < ordered_points.len() {
        let point = &ordered_points[idx];
        // The first visited point is the task's first; it sits one dt after
        // the current end time. Later visits jump stride points at once.
        let step = if first { dt } else { stride as f64 * dt };
        rows.step_with_point(op, kernel, step, scheme, point)?;
        if let Some(fs) = features.as_deref_mut() {
            fs.step_with_point(op, step, scheme, point)?;
        }
        first = false;
        idx += stride;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hippo::BasisFamily;
    use crate::kernels::points_from_rows;

    fn rbf() -> Kernel {
        Kernel::rbf_1d(1.0, 1.0)
    }

    #[test]
    fn random_order_is_a_seeded_permutation() {
        let x = DMatrix::from_fn(7, 2, |i, j| (i * 2 + j) as f64);
        let a = order_points(&x, OrderingStrategy::Random { seed: 10 }, None, None).unwrap();
        let b = order_points(&x, OrderingStrategy::Random { seed: 10 }, None, None).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn greedy_kmax_matches_bruteforce_chain() {
        // 1-D RBF from the origin: nearest first, then nearest to previous.
        let x = points_from_rows(&[vec![0.1], vec![0.5], vec![0.9]]);
        let order = order_points(&x, OrderingStrategy::KMax, Some(&rbf()), None).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn greedy_kmin_matches_bruteforce_chain() {
        let x = points_from_rows(&[vec![0.1], vec![0.5], vec![0.9]]);
        let order = order_points(&x, OrderingStrategy::KMin, Some(&rbf()), None).unwrap();
        // Farthest from origin is 0.9; farthest from 0.9 is 0.1; then 0.5.
        assert_eq!(order, vec![2, 0, 1]);
    }

    #[test]
    fn greedy_order_unchanged_by_output_scale() {
        let x = points_from_rows(&[vec![0.3, 1.0], vec![-0.2, 0.1], vec![0.9, -0.4], vec![0.0, 0.0]]);
        let k1 = Kernel::new(crate::kernels::KernelVariant::ArdRbf, 1.0, alloc::vec![0.7, 0.7])
            .unwrap();
        let k9 = Kernel::new(crate::kernels::KernelVariant::ArdRbf, 9.0, alloc::vec![0.7, 0.7])
            .unwrap();
        for strat in [OrderingStrategy::KMax, OrderingStrategy::KMin] {
            let a = order_points(&x, strat, Some(&k1), None).unwrap();
            let b = order_points(&x, strat, Some(&k9), None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn greedy_respects_previous_anchor() {
        let x = points_from_rows(&[vec![0.1], vec![0.9]]);
        let from_origin = order_points(&x, OrderingStrategy::KMax, Some(&rbf()), None).unwrap();
        let from_right =
            order_points(&x, OrderingStrategy::KMax, Some(&rbf()), Some(&[1.0])).unwrap();
        assert_eq!(from_origin, vec![0, 1]);
        assert_eq!(from_right, vec![1, 0]);
    }

    #[test]
    fn sort_strategies_are_permutations() {
        let x = points_from_rows(&[
            vec![0.3, 1.0],
            vec![-0.2, 0.1],
            vec![0.9, -0.4],
            vec![0.0, 0.0],
            vec![0.3, 1.0],
        ]);
        for strat in [
            OrderingStrategy::ByDimension(0),
            OrderingStrategy::ByDimension(1),
            OrderingStrategy::ByL2,
            OrderingStrategy::Random { seed: 3 },
        ] {
            let order = order_points(&x, strat, None, None).unwrap();
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..5).collect::<Vec<_>>(), "{strat:?}");
        }
        let byd = order_points(&x, OrderingStrategy::ByDimension(0), None, None).unwrap();
        assert_eq!(byd, vec![1, 3, 0, 4, 2]);
    }

    #[test]
    fn by_dimension_out_of_range() {
        let x = points_from_rows(&[vec![0.0]]);
        assert!(order_points(&x, OrderingStrategy::ByDimension(3), None, None).is_err());
    }

    #[test]
    fn pseudo_times_follow_the_counting_rule() {
        let t = assign_pseudo_times(0, 3, 0.1).unwrap();
        assert_eq!(t, vec![0.1, 0.2, 0.30000000000000004]);
        let t2 = assign_pseudo_times(3, 2, 0.1).unwrap();
        assert!((t2[0] - 0.4).abs() < 1e-15);
        assert!((t2[1] - 0.5).abs() < 1e-15);
        // Scaling dt scales every timestamp.
        let t3 = assign_pseudo_times(0, 3, 0.2).unwrap();
        for (a, b) in t.iter().zip(&t3) {
            assert!((b - 2.0 * a).abs() < 1e-15);
        }
    }

    #[test]
    fn stride_one_matches_per_point_stepping() {
        let op = HippoOperator::new(BasisFamily::LegS, 4).unwrap();
        let kernel = Kernel::new(crate::kernels::KernelVariant::ArdRbf, 1.0, alloc::vec![0.5, 0.5])
            .unwrap();
        let points: Vec<Vec<f64>> = (0..10)
            .map(|i| alloc::vec![0.1 * i as f64, (0.2 * i as f64).sin()])
            .collect();
        let anchors = alloc::vec![alloc::vec![0.0, 0.0], alloc::vec![0.5, 0.5]];
        let dt = 0.05;

        let mut strided = KfuBank::new(anchors.clone(), &op);
        strided_path_advance(
            &mut strided,
            None,
            &op,
            &kernel,
            &points,
            1,
            dt,
            Scheme::ForwardEuler,
        )
        .unwrap();

        let mut manual = KfuBank::new(anchors, &op);
        for p in &points {
            manual
                .step_with_point(&op, &kernel, dt, Scheme::ForwardEuler, p)
                .unwrap();
        }
        assert_eq!(strided.as_kfu_matrix(), manual.as_kfu_matrix());
    }

    #[test]
    fn stride_two_consumes_odd_points() {
        let op = HippoOperator::new(BasisFamily::LegS, 3).unwrap();
        let kernel = rbf();
        let points: Vec<Vec<f64>> = (1..=6).map(|i| alloc::vec![0.1 * i as f64]).collect();
        let dt = 0.1;

        let mut strided = KfuBank::new(alloc::vec![alloc::vec![0.3]], &op);
        strided_path_advance(
            &mut strided,
            None,
            &op,
            &kernel,
            &points,
            2,
            dt,
            Scheme::ForwardEuler,
        )
        .unwrap();

        // Same trajectory by hand: x_1 at its own time, then x_3, x_5 with
        // doubled steps.
        let mut manual = KfuBank::new(alloc::vec![alloc::vec![0.3]], &op);
        manual
            .step_with_point(&op, &kernel, dt, Scheme::ForwardEuler, &points[0])
            .unwrap();
        manual
            .step_with_point(&op, &kernel, 2.0 * dt, Scheme::ForwardEuler, &points[2])
            .unwrap();
        manual
            .step_with_point(&op, &kernel, 2.0 * dt, Scheme::ForwardEuler, &points[4])
            .unwrap();
        assert_eq!(strided.as_kfu_matrix(), manual.as_kfu_matrix());
        assert!((strided.end_time() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coarser_stride_stays_first_order_close() {
        // On a smooth path the stride-2 state differs from stride-1 by
        // O(dt): halving dt should shrink the gap by roughly half (ratio
        // bounded by 3).
        let op = HippoOperator::new(BasisFamily::LegS, 4).unwrap();
        let kernel = rbf();
        let path = |t: f64| alloc::vec![(1.5 * t).sin() * 0.8];
        let gap = |dt: f64| -> f64 {
            let n = (1.0 / dt).round() as usize;
            let points: Vec<Vec<f64>> = (1..=n).map(|i| path(i as f64 * dt)).collect();
            let mut s1 = KfuBank::new(alloc::vec![alloc::vec![0.4]], &op);
            strided_path_advance(&mut s1, None, &op, &kernel, &points, 1, dt, Scheme::ForwardEuler)
                .unwrap();
            let mut s2 = KfuBank::new(alloc::vec![alloc::vec![0.4]], &op);
            strided_path_advance(&mut s2, None, &op, &kernel, &points, 2, dt, Scheme::ForwardEuler)
                .unwrap();
            (s1.row(0).row - s2.row(0).row).amax()
        };
        let coarse = gap(1e-2);
        let fine = gap(5e-3);
        assert!(fine > 0.0);
        // At least first-order shrinkage (faster is fine: the leading terms
        // of the two strides can cancel).
        assert!(
            fine <= coarse / 1.5,
            "gap did not shrink: coarse {coarse}, fine {fine}"
        );
        assert!(coarse < 0.05, "stride gap too large: {coarse}");
    }
}
