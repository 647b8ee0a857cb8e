//! Gaussian-process regression machinery: exact inference, sparse
//! variational prediction, the collapsed bound, Gaussian KL/ELBO algebra and
//! marginal-likelihood hyperparameter fitting.
//!
//! Everything is closed form for the Gaussian likelihood. All solves go
//! through Cholesky factorizations with escalating jitter; no explicit
//! inverses are formed.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, NoiseModel};
use crate::linalg::{self, JitteredChol};
use crate::math;

const LN_2PI: f64 = 1.8378770664093453;

/// A Gaussian distribution stored as a mean and the lower-triangular
/// Cholesky factor of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    /// Mean vector.
    pub mean: DVector<f64>,
    /// Lower-triangular factor `L` with covariance `L L^T`.
    pub cov_chol: DMatrix<f64>,
}

impl GaussianDist {
    /// Build from a mean and a covariance matrix (factorized with jitter
    /// escalation).
    pub fn from_mean_cov(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch {
                expected: cov.nrows(),
                got: mean.len(),
            });
        }
        let chol = linalg::psd_chol(cov)?;
        Ok(GaussianDist {
            mean,
            cov_chol: chol.l(),
        })
    }

    /// Dimension of the distribution.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reassemble the covariance `L L^T`.
    pub fn cov(&self) -> DMatrix<f64> {
        &self.cov_chol * self.cov_chol.transpose()
    }

    /// `log det` of the covariance.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| math::ln(self.cov_chol[(i, i)]))
            .sum::<f64>()
    }

    /// Solve `S x = b` through the stored factor.
    pub fn cov_solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self
            .cov_chol
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Numerical("singular covariance factor".to_string()))?;
        self.cov_chol
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Numerical("singular covariance factor".to_string()))
    }

    /// Solve `S X = B` through the stored factor.
    pub fn cov_solve_mat(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let y = self
            .cov_chol
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::Numerical("singular covariance factor".to_string()))?;
        self.cov_chol
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Numerical("singular covariance factor".to_string()))
    }
}

/// Predictive distribution at a batch of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    /// Predictive means.
    pub mean: DVector<f64>,
    /// Per-point predictive variances (floored at zero).
    pub variance: DVector<f64>,
    /// Full predictive covariance, when requested.
    pub full_cov: Option<DMatrix<f64>>,
    /// Whether the observation-noise variance is included.
    pub includes_noise: bool,
}

/// A batch of regression data: inputs (rows), targets and optional
/// timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    /// `n x d` inputs, one row per point.
    pub x: DMatrix<f64>,
    /// `n` targets.
    pub y: DVector<f64>,
    /// Optional per-point time indices (1-D streaming mode uses the input
    /// itself; the pseudo-time path sets these explicitly).
    pub timestamps: Option<Vec<f64>>,
}

impl DataBatch {
    /// Build a batch, validating shapes and finiteness.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        linalg::ensure_finite(x.as_slice(), "inputs")?;
        linalg::ensure_finite(y.as_slice(), "targets")?;
        Ok(DataBatch {
            x,
            y,
            timestamps: None,
        })
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// Whether the batch is empty.
    pub fn is_empty(&self) -> bool {
        self.y.len() == 0
    }

    /// Input row `i` as an owned vector.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// Exact GP posterior predictive at `x_star`.
///
/// With no training data this is the prior. The predictive variance is the
/// prior variance minus the uncertainty-reduction term; `include_noise`
/// adds the observation-noise variance.
pub fn gp_predict(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
    x_star: &DMatrix<f64>,
    include_noise: bool,
) -> Result<Predictive> {
    gp_predict_impl(kernel, noise, train, x_star, include_noise, false)
}

/// Exact GP predictive with the full covariance matrix attached.
pub fn gp_predict_full(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
    x_star: &DMatrix<f64>,
    include_noise: bool,
) -> Result<Predictive> {
    gp_predict_impl(kernel, noise, train, x_star, include_noise, true)
}

fn gp_predict_impl(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
    x_star: &DMatrix<f64>,
    include_noise: bool,
    full_cov: bool,
) -> Result<Predictive> {
    let m = x_star.nrows();
    let noise_term = if include_noise { noise.noise_variance } else { 0.0 };
    let prior_diag = DVector::from_fn(m, |i, _| {
        let xi: Vec<f64> = x_star.row(i).iter().copied().collect();
        kernel.diag_value(&xi)
    });
    if train.is_empty() {
        let variance = prior_diag.map(|v| v + noise_term);
        let full = if full_cov {
            let mut k = kernel.matrix(x_star, x_star)?;
            for i in 0..m {
                k[(i, i)] += noise_term;
            }
            Some(k)
        } else {
            None
        };
        return Ok(Predictive {
            mean: DVector::zeros(m),
            variance,
            full_cov: full,
            includes_noise: include_noise,
        });
    }

    let mut ky = kernel.matrix_symmetric(&train.x)?;
    for i in 0..train.len() {
        ky[(i, i)] += noise.noise_variance;
    }
    let chol = JitteredChol::new(&ky, kernel.jitter())?;
    let alpha = chol.solve_vec(&train.y);
    let k_star = kernel.matrix(x_star, &train.x)?; // m x n
    let mean = &k_star * &alpha;

    // v = L^{-1} K_x*^T; uncertainty reduction is the column norm of v.
    let v = chol.forward_solve(&k_star.transpose());
    let mut variance = DVector::zeros(m);
    for i in 0..m {
        let reduction = v.column(i).norm_squared();
        variance[i] = (prior_diag[i] - reduction).max(0.0) + noise_term;
    }
    let full = if full_cov {
        let mut k = kernel.matrix(x_star, x_star)?;
        k -= v.transpose() * &v;
        linalg::symmetrize(&mut k);
        for i in 0..m {
            k[(i, i)] += noise_term;
        }
        Some(k)
    } else {
        None
    };
    Ok(Predictive {
        mean,
        variance,
        full_cov: full,
        includes_noise: include_noise,
    })
}

/// Log marginal likelihood `log N(y; 0, K + noise I)`.
pub fn log_marginal_likelihood(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
) -> Result<f64> {
    log_marginal_likelihood_parts(kernel, noise, train).map(|p| p.0)
}

/// Log marginal likelihood split into `(total, data_fit, complexity)`,
/// where `total = data_fit + complexity - n/2 log 2 pi`.
pub fn log_marginal_likelihood_parts(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
) -> Result<(f64, f64, f64)> {
    if train.is_empty() {
        return Err(Error::InvalidInput(
            "marginal likelihood needs at least one point".to_string(),
        ));
    }
    let n = train.len();
    let mut ky = kernel.matrix_symmetric(&train.x)?;
    for i in 0..n {
        ky[(i, i)] += noise.noise_variance;
    }
    let chol = JitteredChol::new(&ky, kernel.jitter())?;
    let alpha = chol.solve_vec(&train.y);
    let data_fit = -0.5 * train.y.dot(&alpha);
    let complexity = -0.5 * chol.log_det();
    Ok((
        data_fit + complexity - 0.5 * n as f64 * LN_2PI,
        data_fit,
        complexity,
    ))
}

/// Log marginal likelihood and its gradient with respect to
/// `[log s2, log l_1, .., log l_d, log noise]`.
pub fn lml_with_gradients(
    kernel: &Kernel,
    noise: &NoiseModel,
    train: &DataBatch,
) -> Result<(f64, Vec<f64>)> {
    let n = train.len();
    if n == 0 {
        return Err(Error::InvalidInput(
            "marginal likelihood needs at least one point".to_string(),
        ));
    }
    let d = kernel.input_dim();
    let mut ky = kernel.matrix_symmetric(&train.x)?;
    for i in 0..n {
        ky[(i, i)] += noise.noise_variance;
    }
    let chol = JitteredChol::new(&ky, kernel.jitter())?;
    let alpha = chol.solve_vec(&train.y);
    let lml = -0.5 * train.y.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;

    // Gradient matrices for every log-parameter in one pairwise sweep.
    let mut dk_scale = DMatrix::zeros(n, n);
    let mut dk_ls = vec![DMatrix::zeros(n, n); d];
    let points: Vec<Vec<f64>> = (0..n).map(|i| train.point(i)).collect();
    for i in 0..n {
        for j in 0..n {
            let (_, ds, dl) = kernel.eval_with_log_grads(&points[i], &points[j]);
            dk_scale[(i, j)] = ds;
            for (k, g) in dl.iter().enumerate() {
                dk_ls[k][(i, j)] = *g;
            }
        }
    }
    let grad_for = |dk: &DMatrix<f64>| -> f64 {
        let da = dk * &alpha;
        let quad = 0.5 * alpha.dot(&da);
        let trace = 0.5 * chol.solve_mat(dk).trace();
        quad - trace
    };
    let mut grads = Vec::with_capacity(d + 2);
    grads.push(grad_for(&dk_scale));
    for dk in &dk_ls {
        grads.push(grad_for(dk));
    }
    // d(K + noise I)/d(log noise) = noise * I.
    let dn = noise.noise_variance;
    let quad = 0.5 * dn * alpha.norm_squared();
    let trace = 0.5 * dn * chol.solve_mat(&DMatrix::identity(n, n)).trace();
    grads.push(quad - trace);
    Ok((lml, grads))
}

/// Analytically optimal Gaussian inducing posterior for regression:
/// mean `(1/noise) Kuu M^{-1} Kuf y`, covariance `Kuu M^{-1} Kuu` with
/// `M = Kuu + (1/noise) Kuf Kfu`.
pub fn sgpr_optimal_q(
    kuu: &DMatrix<f64>,
    kuf: &DMatrix<f64>,
    y: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<GaussianDist> {
    let m = kuu.nrows();
    if kuf.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: kuf.nrows(),
        });
    }
    if kuf.ncols() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: kuf.ncols(),
            got: y.len(),
        });
    }
    let s2 = noise.noise_variance;
    let mut m_mat = kuf * kuf.transpose();
    m_mat /= s2;
    m_mat += kuu;
    linalg::symmetrize(&mut m_mat);
    let m_chol = linalg::psd_chol(&m_mat)
        .map_err(|_| Error::Numerical("SGPR normal-equation matrix is singular".to_string()))?;
    let mean = kuu * m_chol.solve_vec(&(kuf * y)) / s2;
    let mut cov = kuu * m_chol.solve_mat(kuu);
    linalg::symmetrize(&mut cov);
    GaussianDist::from_mean_cov(mean, &cov)
}

/// Collapsed sparse-regression bound:
/// `log N(y; 0, noise I + Kfu Kuu^{-1} Kuf) - 1/(2 noise) tr(Kff - Qff)`.
pub fn collapsed_bound(
    kuu: &DMatrix<f64>,
    kuf: &DMatrix<f64>,
    kff_diag: &DVector<f64>,
    y: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<f64> {
    let n = y.len();
    let kuu_chol = linalg::psd_chol(kuu)?;
    let v = kuu_chol.forward_solve(kuf); // M x n, Qff = V^T V
    let s2 = noise.noise_variance;
    let mut a = v.transpose() * &v;
    for i in 0..n {
        a[(i, i)] += s2;
    }
    let a_chol = linalg::psd_chol(&a)?;
    let logpdf = linalg::gaussian_log_density(y, &DVector::zeros(n), &a_chol);
    let nystrom_residual = kff_diag.sum() - v.norm_squared();
    let scale = kff_diag.sum().abs().max(1.0);
    if nystrom_residual < -1e-8 * scale {
        return Err(Error::Numerical(format!(
            "negative Nystrom residual {nystrom_residual}"
        )));
    }
    Ok(logpdf - nystrom_residual.max(0.0) / (2.0 * s2))
}

/// Sparse predictive: mean `K*u Kuu^{-1} m` and variance
/// `k** + diag(K*u Kuu^{-1} (S - Kuu) Kuu^{-1} Ku*)`.
pub fn svgp_predict(
    q: &GaussianDist,
    kuu: &DMatrix<f64>,
    k_star_u: &DMatrix<f64>,
    k_star_diag: &DVector<f64>,
    noise: Option<&NoiseModel>,
) -> Result<Predictive> {
    let m = q.dim();
    if kuu.nrows() != m || k_star_u.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if kuu.nrows() != m {
                kuu.nrows()
            } else {
                k_star_u.ncols()
            },
        });
    }
    let n = k_star_u.nrows();
    let kuu_chol = linalg::psd_chol(kuu)?;
    let w = kuu_chol.solve_mat(&k_star_u.transpose()); // M x n
    let mean = w.transpose() * &q.mean;
    let lw = q.cov_chol.transpose() * &w; // columns give a^T S a
    let noise_term = noise.map(|nm| nm.noise_variance).unwrap_or(0.0);
    let mut variance = DVector::zeros(n);
    for i in 0..n {
        let a_s_a = lw.column(i).norm_squared();
        let a_k_a = k_star_u.row(i).transpose().dot(&w.column(i).into_owned());
        variance[i] = (k_star_diag[i] + a_s_a - a_k_a).max(0.0) + noise_term;
    }
    Ok(Predictive {
        mean,
        variance,
        full_cov: None,
        includes_noise: noise.is_some(),
    })
}

/// Sparse predictive through an eigenvalue-floored pseudo-inverse of
/// `Kuu`.
///
/// Monte-Carlo feature Grams carry eigenvalues at the sampling-noise level;
/// solving against exactly integrated cross-covariance rows would amplify
/// that noise without bound. Directions below `1e-10 * lambda_max` are
/// projected out instead, and the variance is additionally capped at the
/// prior (a bound every exact posterior satisfies).
pub fn svgp_predict_floored(
    q: &GaussianDist,
    kuu: &DMatrix<f64>,
    k_star_u: &DMatrix<f64>,
    k_star_diag: &DVector<f64>,
    noise: Option<&NoiseModel>,
) -> Result<Predictive> {
    let m = q.dim();
    if kuu.nrows() != m || k_star_u.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: if kuu.nrows() != m {
                kuu.nrows()
            } else {
                k_star_u.ncols()
            },
        });
    }
    let n = k_star_u.nrows();
    let solver = linalg::FlooredEigenSolver::new(kuu, 1e-10)?;
    let w = solver.solve_mat(&k_star_u.transpose()); // M x n
    let mean = w.transpose() * &q.mean;
    let lw = q.cov_chol.transpose() * &w;
    let noise_term = noise.map(|nm| nm.noise_variance).unwrap_or(0.0);
    let mut variance = DVector::zeros(n);
    for i in 0..n {
        let a_s_a = lw.column(i).norm_squared();
        let a_k_a = k_star_u.row(i).transpose().dot(&w.column(i).into_owned());
        let raw = k_star_diag[i] + a_s_a - a_k_a;
        variance[i] = raw.clamp(0.0, k_star_diag[i]) + noise_term;
    }
    Ok(Predictive {
        mean,
        variance,
        full_cov: None,
        includes_noise: noise.is_some(),
    })
}

/// KL divergence between Gaussians,
/// `KL(q||p) = 1/2 [tr(Sp^{-1} Sq) + (mp-mq)^T Sp^{-1} (mp-mq) - k + ln det Sp - ln det Sq]`.
pub fn gaussian_kl(q: &GaussianDist, p: &GaussianDist) -> Result<f64> {
    let k = q.dim();
    if p.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: p.dim(),
        });
    }
    // tr(Sp^{-1} Sq) = |Lp^{-1} Lq|_F^2.
    let lp_inv_lq = p
        .cov_chol
        .solve_lower_triangular(&q.cov_chol)
        .ok_or_else(|| Error::Numerical("singular covariance factor".to_string()))?;
    let trace = lp_inv_lq.norm_squared();
    let diff = &p.mean - &q.mean;
    let quad = diff.dot(&p.cov_solve_vec(&diff)?);
    Ok(0.5 * (trace + quad - k as f64 + p.log_det() - q.log_det()))
}

/// Evidence lower bound for Gaussian likelihood with an explicit `q`:
/// closed-form expected log-likelihood minus `KL(q || N(0, Kuu))`.
pub fn elbo_gaussian(
    q: &GaussianDist,
    kuu: &DMatrix<f64>,
    kuf: &DMatrix<f64>,
    kff_diag: &DVector<f64>,
    y: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<f64> {
    let pred = svgp_predict(q, kuu, &kuf.transpose(), kff_diag, None)?;
    let s2 = noise.noise_variance;
    let n = y.len();
    let mut ell = -0.5 * n as f64 * (LN_2PI + math::ln(s2));
    for i in 0..n {
        let r = y[i] - pred.mean[i];
        ell -= (r * r + pred.variance[i]) / (2.0 * s2);
    }
    let prior = GaussianDist::from_mean_cov(DVector::zeros(q.dim()), kuu)?;
    Ok(ell - gaussian_kl(q, &prior)?)
}

/// Options for [`fit_hyperparameters`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Maximum accepted ascent steps.
    pub max_iters: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            grad_tol: 1e-5,
        }
    }
}

/// Type-II maximum likelihood: gradient ascent on the log marginal
/// likelihood over log-parameters, with backtracking so the trace of
/// accepted objective values never decreases. The noise variance is floored
/// at `1e-6 * var(y)` throughout. A non-finite objective aborts the search
/// and returns the last accepted parameters.
pub fn fit_hyperparameters(
    kernel_init: &Kernel,
    noise_init: &NoiseModel,
    train: &DataBatch,
    opts: &FitOptions,
) -> Result<(Kernel, NoiseModel, Vec<f64>)> {
    if train.len() < 2 {
        return Err(Error::InvalidInput(
            "hyperparameter fitting needs at least two points".to_string(),
        ));
    }
    let d = kernel_init.input_dim();
    let y_mean = train.y.mean();
    let y_var = train
        .y
        .iter()
        .map(|v| (v - y_mean) * (v - y_mean))
        .sum::<f64>()
        / train.len() as f64;
    let noise_floor = (1e-6 * y_var).max(crate::kernels::NOISE_FLOOR);

    let pack = |kernel: &Kernel, noise: &NoiseModel| -> Vec<f64> {
        let mut p = Vec::with_capacity(d + 2);
        p.push(math::ln(kernel.output_scale_sq));
        for l in &kernel.lengthscales {
            p.push(math::ln(*l));
        }
        p.push(math::ln(noise.noise_variance));
        p
    };
    let unpack = |p: &[f64]| -> Result<(Kernel, NoiseModel)> {
        let kernel = Kernel::new(
            kernel_init.variant,
            math::exp(p[0]),
            p[1..=d].iter().map(|v| math::exp(*v)).collect(),
        )?;
        let noise = NoiseModel::new(math::exp(p[d + 1]).max(noise_floor))?;
        Ok((kernel, noise))
    };

    let mut params = pack(kernel_init, noise_init);
    let (mut best, mut grads) = {
        let (k, nm) = unpack(&params)?;
        lml_with_gradients(&k, &nm, train)?
    };
    let mut trace = vec![best];
    let mut step = 0.1;

    for _ in 0..opts.max_iters {
        let gnorm = grads.iter().fold(0.0f64, |a, g| a.max(math::abs(*g)));
        if gnorm < opts.grad_tol {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = params
                .iter()
                .zip(&grads)
                .map(|(p, g)| p + step * g)
                .collect();
            let Ok((k, nm)) = unpack(&cand) else {
                step *= 0.5;
                continue;
            };
            match lml_with_gradients(&k, &nm, train) {
                Ok((val, g)) if val.is_finite() => {
                    if val >= best {
                        params = cand;
                        best = val;
                        grads = g;
                        trace.push(best);
                        step = (step * 1.5).min(1.0);
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                _ => {
                    // Non-finite objective: treat as an overstep.
                    step *= 0.5;
                }
            }
        }
        if !accepted {
            break;
        }
    }
    let (kernel, noise) = unpack(&params)?;
    Ok((kernel, noise, trace))
}
