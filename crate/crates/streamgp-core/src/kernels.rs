//! Stationary kernels, kernel-matrix assembly and spectral-frequency
//! sampling for random Fourier features.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::math;

/// Relative jitter added to square kernel matrices before factorization.
pub const KERNEL_JITTER_REL: f64 = 1e-8;

/// Smallest admissible observation-noise variance.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Kernel families supported by the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    /// Squared exponential with one lengthscale per input dimension:
    /// `k(x, x') = s2 * exp(-0.5 * sum_j (x_j - x'_j)^2 / l_j^2)`.
    ArdRbf,
    /// Matérn with smoothness 5/2 and per-dimension lengthscales.
    Matern52,
    /// Dot-product kernel `s2 * sum_j x_j x'_j / l_j^2`. Not stationary;
    /// exists only for the weight-space cross-check and is rejected by all
    /// spectral and recurrence paths.
    Linear,
}

impl KernelVariant {
    /// Whether the kernel depends on `x - x'` only.
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelVariant::Linear)
    }

    /// Short lower-case name, used in fingerprints and config files.
    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::ArdRbf => "ard-rbf",
            KernelVariant::Matern52 => "matern52",
            KernelVariant::Linear => "linear",
        }
    }
}

/// A covariance function together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// Kernel family.
    pub variant: KernelVariant,
    /// Output scale `s2 = k(x, x)` for stationary variants.
    pub output_scale_sq: f64,
    /// One positive lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    /// Build a kernel, validating hyperparameters.
    pub fn new(variant: KernelVariant, output_scale_sq: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !output_scale_sq.is_finite() || output_scale_sq <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "output_scale_sq must be positive and finite, got {output_scale_sq}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(Error::InvalidInput("kernel needs at least one lengthscale".to_string()));
        }
        if lengthscales.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidInput("every lengthscale must be positive and finite".to_string()));
        }
        Ok(Self {
            variant,
            output_scale_sq,
            lengthscales,
        })
    }

    /// Isotropic 1-D RBF kernel, the workhorse of the test suites.
    pub fn rbf_1d(output_scale_sq: f64, lengthscale: f64) -> Self {
        Kernel::new(KernelVariant::ArdRbf, output_scale_sq, alloc::vec![lengthscale])
            .expect("valid parameters")
    }

    /// Number of input dimensions.
    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn check_dim(&self, x: &[f64], x2: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x2.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x2.len(),
            });
        }
        Ok(())
    }

    /// Evaluate `k(x, x2)`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_dim(x, x2)?;
        Ok(self.eval_unchecked(x, x2))
    }

    /// Evaluate without the dimension check (hot path).
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.variant {
            KernelVariant::ArdRbf => {
                let mut q = 0.0;
                for j in 0..x.len() {
                    let d = (x[j] - x2[j]) / self.lengthscales[j];
                    q += d * d;
                }
                self.output_scale_sq * math::exp(-0.5 * q)
            }
            KernelVariant::Matern52 => {
                let mut q = 0.0;
                for j in 0..x.len() {
                    let d = (x[j] - x2[j]) / self.lengthscales[j];
                    q += d * d;
                }
                let r = math::sqrt(q);
                let sr5 = math::sqrt(5.0) * r;
                self.output_scale_sq * (1.0 + sr5 + 5.0 * q / 3.0) * math::exp(-sr5)
            }
            KernelVariant::Linear => {
                let mut acc = 0.0;
                for j in 0..x.len() {
                    acc += x[j] * x2[j] / (self.lengthscales[j] * self.lengthscales[j]);
                }
                self.output_scale_sq * acc
            }
        }
    }

    /// Convenience for 1-D kernels.
    #[inline]
    pub fn eval1(&self, x: f64, x2: f64) -> f64 {
        self.eval_unchecked(&[x], &[x2])
    }

    /// `k(x, x)` without evaluating: `s2` for stationary kernels.
    pub fn diag_value(&self, x: &[f64]) -> f64 {
        match self.variant {
            KernelVariant::Linear => self.eval_unchecked(x, x),
            _ => self.output_scale_sq,
        }
    }

    /// Kernel matrix between two point sets (rows are points).
    ///
    /// The square case `X == X2` is symmetric by construction; add
    /// [`Self::jitter`] before factorizing it.
    pub fn matrix(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() || x2.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: if x.ncols() != self.input_dim() {
                    x.ncols()
                } else {
                    x2.ncols()
                },
            });
        }
        let mut out = DMatrix::zeros(x.nrows(), x2.nrows());
        let xi: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
        let xj: Vec<Vec<f64>> = (0..x2.nrows())
            .map(|i| x2.row(i).iter().copied().collect())
            .collect();
        for i in 0..x.nrows() {
            for j in 0..x2.nrows() {
                out[(i, j)] = self.eval_unchecked(&xi[i], &xj[j]);
            }
        }
        Ok(out)
    }

    /// Square kernel matrix of one point set with jitter on the diagonal.
    pub fn matrix_symmetric(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut k = self.matrix(x, x)?;
        let j = self.jitter();
        for i in 0..k.nrows() {
            k[(i, i)] += j;
        }
        Ok(k)
    }

    /// Diagonal jitter used to stabilize factorizations of this kernel's
    /// square matrices.
    pub fn jitter(&self) -> f64 {
        KERNEL_JITTER_REL * self.output_scale_sq
    }

    /// Value, gradient w.r.t. `log s2` and gradient w.r.t. each
    /// `log l_j`, used by marginal-likelihood optimization.
    pub fn eval_with_log_grads(&self, x: &[f64], x2: &[f64]) -> (f64, f64, Vec<f64>) {
        let k = self.eval_unchecked(x, x2);
        let d = self.input_dim();
        let mut dl = alloc::vec![0.0; d];
        match self.variant {
            KernelVariant::ArdRbf => {
                for j in 0..d {
                    let z = (x[j] - x2[j]) / self.lengthscales[j];
                    dl[j] = k * z * z;
                }
            }
            KernelVariant::Matern52 => {
                let mut q = 0.0;
                for j in 0..d {
                    let z = (x[j] - x2[j]) / self.lengthscales[j];
                    q += z * z;
                }
                let r = math::sqrt(q);
                let sr5 = math::sqrt(5.0) * r;
                let common = self.output_scale_sq * math::exp(-sr5) * (5.0 / 3.0) * (1.0 + sr5);
                for j in 0..d {
                    let z = (x[j] - x2[j]) / self.lengthscales[j];
                    dl[j] = common * z * z;
                }
            }
            KernelVariant::Linear => {
                for j in 0..d {
                    let term = self.output_scale_sq * x[j] * x2[j]
                        / (self.lengthscales[j] * self.lengthscales[j]);
                    dl[j] = -2.0 * term;
                }
            }
        }
        (k, k, dl)
    }

    /// Order-insensitive hash of the kernel configuration, recorded in
    /// [`FrequencyDraws`] so stale draws are detectable.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(self.variant.name().as_bytes());
        h.write(&self.output_scale_sq.to_bits().to_le_bytes());
        for l in &self.lengthscales {
            h.write(&l.to_bits().to_le_bytes());
        }
        h.finish()
    }
}

/// Gaussian observation-noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Observation noise variance, floored at [`NOISE_FLOOR`].
    pub noise_variance: f64,
}

impl NoiseModel {
    /// Build a noise model; non-positive values are rejected, tiny positive
    /// values are floored.
    pub fn new(noise_variance: f64) -> Result<Self> {
        if !noise_variance.is_finite() || noise_variance <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "noise variance must be positive and finite, got {noise_variance}"
            )));
        }
        Ok(Self {
            noise_variance: noise_variance.max(NOISE_FLOOR),
        })
    }
}

/// Monte-Carlo spectral frequencies shared by all random-feature machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDraws {
    /// `n_samples x input_dim`, row `n` is the frequency vector `w_n`.
    pub frequencies: DMatrix<f64>,
    /// Seed the draws were generated from.
    pub seed: u64,
    /// Fingerprint of the kernel the draws belong to.
    pub kernel_fingerprint: u64,
}

impl FrequencyDraws {
    /// Number of Monte-Carlo samples.
    pub fn len(&self) -> usize {
        self.frequencies.nrows()
    }

    /// True when no samples are present (never the case for valid draws).
    pub fn is_empty(&self) -> bool {
        self.frequencies.nrows() == 0
    }

    /// `w_n . x` for sample `n`.
    #[inline]
    pub fn dot(&self, n: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += self.frequencies[(n, j)] * xj;
        }
        acc
    }
}

/// Draw `n` spectral frequencies from the kernel's spectral density.
///
/// ARD-RBF has Gaussian spectral density with per-dimension standard
/// deviation `1 / l_j`. Matérn-5/2 has a multivariate Student-t density with
/// 5 degrees of freedom, sampled as `w_j = z_j / (l_j * sqrt(u / 5))` with
/// `z ~ N(0, 1)` and `u ~ chi^2(5)` shared across dimensions. The linear
/// kernel has no spectral density and is rejected.
///
/// Gaussian components are drawn by Latin-hypercube stratification: each
/// dimension is split into `n` equiprobable slices, one uniform draw lands
/// in each slice, and a seeded shuffle decouples the dimensions. Marginals are
/// exact, and the stratification cuts the Monte-Carlo error of the smooth
/// spectral integrals behind the feature Grams by orders of magnitude at
/// matched sample counts.
pub fn sample_frequencies(kernel: &Kernel, n: usize, seed: u64) -> Result<FrequencyDraws> {
    if !kernel.variant.is_stationary() {
        return Err(Error::UnsupportedKernel(format!(
            "{} has no spectral density",
            kernel.variant.name()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need at least one frequency sample".to_string()));
    }
    let d = kernel.input_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut freqs = DMatrix::zeros(n, d);
    match kernel.variant {
        KernelVariant::ArdRbf => {
            for j in 0..d {
                let z = stratified_normals(n, &mut rng);
                for i in 0..n {
                    freqs[(i, j)] = z[i] / kernel.lengthscales[j];
                }
            }
        }
        KernelVariant::Matern52 => {
            let chi = ChiSquared::new(5.0).expect("valid dof");
            let z: Vec<Vec<f64>> = (0..d).map(|_| stratified_normals(n, &mut rng)).collect();
            for i in 0..n {
                let u: f64 = chi.sample(&mut rng);
                let scale = math::sqrt(u / 5.0);
                for j in 0..d {
                    freqs[(i, j)] = z[j][i] / (kernel.lengthscales[j] * scale);
                }
            }
        }
        KernelVariant::Linear => unreachable!(),
    }
    Ok(FrequencyDraws {
        frequencies: freqs,
        seed,
        kernel_fingerprint: kernel.fingerprint(),
    })
}

/// One stratified standard-normal sample per equiprobable slice, in a
/// seeded random order.
fn stratified_normals(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.gen::<f64>();
            let p = (i as f64 + u) / n as f64;
            inverse_normal_cdf(p.clamp(1e-300, 1.0 - 1e-16))
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Inverse standard-normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9 everywhere).
fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = math::sqrt(-2.0 * math::ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = math::sqrt(-2.0 * math::ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Monte-Carlo kernel estimate from the draws:
/// `s2 / N * sum_n cos(w_n . x) cos(w_n . x') + sin(w_n . x) sin(w_n . x')`.
///
/// Equals `s2 * mean(cos(w_n . (x - x')))`, the Bochner representation of a
/// stationary kernel.
pub fn rff_kernel_estimate(
    kernel: &Kernel,
    draws: &FrequencyDraws,
    x: &[f64],
    x2: &[f64],
) -> f64 {
    let n = draws.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = draws.dot(i, x);
        let b = draws.dot(i, x2);
        acc += math::cos(a) * math::cos(b) + math::sin(a) * math::sin(b);
    }
    kernel.output_scale_sq * acc / n as f64
}

/// FNV-1a, enough for configuration fingerprints.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// A vector of evaluation points as an `n x d` matrix (one row per point).
pub fn points_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map(Vec::len).unwrap_or(0);
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

/// 1-D points as an `n x 1` matrix.
pub fn points_1d(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), 1, |i, _| xs[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use rand::RngCore;
    use rand_distr::StandardNormal;

    #[test]
    fn stationary_kernels_at_zero_lag() {
        let rbf = Kernel::new(KernelVariant::ArdRbf, 1.0, vec![1.0]).unwrap();
        assert_eq!(rbf.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        let matern = Kernel::new(KernelVariant::Matern52, 2.5, vec![0.7, 1.3]).unwrap();
        assert_eq!(matern.eval(&[0.1, -0.4], &[0.1, -0.4]).unwrap(), 2.5);
    }

    #[test]
    fn rbf_unit_lag_reference_value() {
        let k = Kernel::rbf_1d(1.0, 1.0);
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let k = Kernel::rbf_1d(1.0, 1.0);
        assert!(matches!(
            k.eval(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn symmetry_and_bound_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for variant in [KernelVariant::ArdRbf, KernelVariant::Matern52] {
            let k = Kernel::new(variant, 1.7, vec![0.4, 2.0, 1.0]).unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let a = k.eval(&x, &y).unwrap();
                let b = k.eval(&y, &x).unwrap();
                assert!((a - b).abs() < 1e-15);
                assert!(a <= 1.7 + 1e-12);
            }
        }
    }

    #[test]
    fn matrix_matches_pairwise_eval_loop() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let k = Kernel::new(KernelVariant::Matern52, 0.9, vec![0.8, 1.1]).unwrap();
        let x = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x2 = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = k.matrix(&x, &x2).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let xi: Vec<f64> = x.row(i).iter().copied().collect();
                let xj: Vec<f64> = x2.row(j).iter().copied().collect();
                assert_eq!(m[(i, j)], k.eval(&xi, &xj).unwrap());
            }
        }
    }

    #[test]
    fn single_and_duplicate_point_matrices() {
        let k = Kernel::rbf_1d(1.3, 0.5);
        let one = k.matrix(&points_1d(&[0.2]), &points_1d(&[0.2])).unwrap();
        assert_eq!(one[(0, 0)], 1.3);
        let two = k.matrix(&points_1d(&[0.2, 0.2]), &points_1d(&[0.2, 0.2])).unwrap();
        for v in two.iter() {
            assert!((v - 1.3).abs() < 1e-15);
        }
    }

    #[test]
    fn jittered_square_matrices_stay_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for variant in [KernelVariant::ArdRbf, KernelVariant::Matern52] {
            let k = Kernel::new(variant, 1.0, vec![0.3]).unwrap();
            let x = DMatrix::from_fn(50, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = k.matrix_symmetric(&x).unwrap();
            assert!(min_eigenvalue(&m).unwrap() >= 0.0);
        }
    }

    #[test]
    fn linear_kernel_rejected_by_spectral_sampler() {
        let k = Kernel::new(KernelVariant::Linear, 1.0, vec![1.0]).unwrap();
        assert!(matches!(
            sample_frequencies(&k, 10, 0),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn draws_are_reproducible_from_seed() {
        let k = Kernel::rbf_1d(1.0, 1.0);
        let a = sample_frequencies(&k, 64, 42).unwrap();
        let b = sample_frequencies(&k, 64, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_frequencies(&k, 64, 43).unwrap();
        assert_ne!(a.frequencies, c.frequencies);
    }

    #[test]
    fn rbf_frequency_variance_matches_spectral_density() {
        // lengthscale 2 => spectral variance 1/4.
        let k = Kernel::rbf_1d(1.0, 2.0);
        let draws = sample_frequencies(&k, 100_000, 5).unwrap();
        let mean: f64 = draws.frequencies.iter().sum::<f64>() / draws.len() as f64;
        let var: f64 = draws
            .frequencies
            .iter()
            .map(|w| (w - mean) * (w - mean))
            .sum::<f64>()
            / draws.len() as f64;
        assert!((0.24..=0.26).contains(&var), "empirical variance {var}");
    }

    #[test]
    fn rff_estimate_is_exact_at_zero_lag() {
        let k = Kernel::rbf_1d(1.9, 0.7);
        let draws = sample_frequencies(&k, 37, 9).unwrap();
        let v = rff_kernel_estimate(&k, &draws, &[0.42], &[0.42]);
        assert!((v - 1.9).abs() < 1e-12, "cos^2 + sin^2 identity gives {v}");
    }

    #[test]
    fn rff_estimate_converges_to_rbf_value() {
        let k = Kernel::rbf_1d(1.0, 1.0);
        let truth = 0.6065306597126334;
        let mut acc = 0.0;
        let seeds = [0, 1, 2, 3, 4];
        for &s in &seeds {
            let draws = sample_frequencies(&k, 10_000, s).unwrap();
            acc += rff_kernel_estimate(&k, &draws, &[0.0], &[1.0]);
        }
        let mean = acc / seeds.len() as f64;
        assert!((mean - truth).abs() < 0.02, "seed-averaged estimate {mean}");
    }

    #[test]
    fn rff_error_shrinks_at_monte_carlo_rate() {
        // Quadrupling the sample count should roughly halve the error for
        // both spectral densities.
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let probes: Vec<([f64; 1], [f64; 1])> = (0..10)
            .map(|_| {
                (
                    [rng.next_u32() as f64 / u32::MAX as f64 * 2.0],
                    [rng.next_u32() as f64 / u32::MAX as f64 * 2.0],
                )
            })
            .collect();
        for variant in [KernelVariant::ArdRbf, KernelVariant::Matern52] {
            let k = Kernel::new(variant, 1.0, vec![0.9]).unwrap();
            let mut errs = Vec::new();
            for &n in &[1000usize, 4000, 16000] {
                let mut err_acc = 0.0;
                let mut trials = 0;
                for seed in 0..16u64 {
                    let draws = sample_frequencies(&k, n, 1000 + seed).unwrap();
                    for (x, y) in &probes {
                        let est = rff_kernel_estimate(&k, &draws, x, y);
                        err_acc += (est - k.eval(x, y).unwrap()).abs();
                        trials += 1;
                    }
                }
                errs.push(err_acc / trials as f64);
            }
            assert!(
                errs[1] < 0.70 * errs[0] && errs[2] < 0.70 * errs[1],
                "{}: errors {:?} do not shrink at the MC rate",
                k.variant.name(),
                errs
            );
        }
    }

    #[test]
    fn matern_draw_second_moment() {
        // Var(w) = nu/(nu-2) / l^2 = 5/3 for unit lengthscale.
        let k = Kernel::new(KernelVariant::Matern52, 1.0, vec![1.0]).unwrap();
        let draws = sample_frequencies(&k, 200_000, 17).unwrap();
        let var: f64 = draws.frequencies.iter().map(|w| w * w).sum::<f64>() / draws.len() as f64;
        assert!((var - 5.0 / 3.0).abs() < 0.1, "second moment {var}");
    }
}
