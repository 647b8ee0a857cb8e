//! Time-adapted orthogonal bases with linear-ODE coefficient recurrences.
//!
//! A family pairs a sliding measure `w_t(x)` with basis functions
//! `g_m_t(x)` that are orthonormal under it. Projection coefficients
//! `c_m(t) = integral y(x) g_m_t(x) w_t(x) dx` then obey
//!
//! ```text
//!     dc/dt = A(t) c + B(t) y(t)
//! ```
//!
//! so the history of a signal is compressed into `c` by a recurrence instead
//! of re-integration. Four families are provided:
//!
//! * `LegS` — uniform measure over all of `[0, t]`, scaled Legendre basis.
//! * `LegT` — uniform measure over the trailing window `[t - w, t]`.
//! * `LagT` — exponentially decaying measure over the past, Laguerre basis.
//! * `FouT` — trailing window with a real Fourier basis, stored as
//!   interleaved constant/cos/sin channels.
//!
//! [`quadrature_coefficients`] integrates the projection directly with
//! Gauss–Legendre rules and serves as the oracle for every recurrence here
//! and in the covariance module.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;


use nalgebra::{DMatrix, DMatrixViewMut, DVector};

use crate::error::{Error, Result};
use crate::math;
use crate::quad;

/// Measure/basis family of a projection operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisFamily {
    /// Uniform measure `1/t` on `[0, t]`, scaled Legendre polynomials.
    /// Keeps the entire past in memory.
    LegS,
    /// Uniform measure `1/window` on `[t - window, t]`, scaled Legendre
    /// polynomials on the window.
    LegT {
        /// Window length.
        window: f64,
    },
    /// Exponential-decay measure `exp(-(t - x))` on `(-inf, t]`, Laguerre
    /// polynomials in `t - x`.
    LagT,
    /// Uniform measure on `[t - window, t]` with the real Fourier basis
    /// `{1, sqrt(2) cos(2 pi m s), sqrt(2) sin(2 pi m s)}`, `s = (t-x)/window`.
    FouT {
        /// Window length.
        window: f64,
    },
}

impl BasisFamily {
    fn validate(&self) -> Result<()> {
        if let BasisFamily::LegT { window } | BasisFamily::FouT { window } = self {
            if window.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater)
                || !window.is_finite()
            {
                return Err(Error::InvalidInput(format!(
                    "window must be positive and finite, got {window}"
                )));
            }
        }
        Ok(())
    }

    /// Whether `A(t)`/`B(t)` depend on `t`.
    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, BasisFamily::LegS)
    }

    /// Whether `A` is lower triangular (enables cheap implicit solves).
    pub fn is_lower_triangular(&self) -> bool {
        matches!(self, BasisFamily::LegS | BasisFamily::LagT)
    }

    /// Name used in configuration files.
    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::LegS => "legs",
            BasisFamily::LegT { .. } => "legt",
            BasisFamily::LagT => "lagt",
            BasisFamily::FouT { .. } => "fout",
        }
    }
}

/// Discretization scheme for the coefficient ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Explicit first-order step
    /// `c <- (I + dt A(t)) c + dt B(t) y_next`.
    ForwardEuler,
    /// Trapezoidal (Tustin) step, second order:
    /// `(I - dt/2 A(t+dt)) c' = (I + dt/2 A(t)) c + dt/2 (B(t) y_prev + B(t+dt) y_next)`.
    Bilinear,
}

/// A basis family together with its order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HippoOperator {
    /// Measure/basis family.
    pub family: BasisFamily,
    /// Order `M`: number of polynomial basis functions, or for `FouT` the
    /// number of frequency indices `{0, .., M-1}`.
    pub order: usize,
}

impl HippoOperator {
    /// Build an operator, validating the family parameters.
    pub fn new(family: BasisFamily, order: usize) -> Result<Self> {
        family.validate()?;
        if order == 0 {
            return Err(Error::InvalidInput("order must be at least 1".to_string()));
        }
        Ok(Self { family, order })
    }

    /// Dimension of the coefficient state. Equals `order` except for
    /// `FouT`, whose complex exponentials are stored as real cos/sin pairs
    /// of size `2 (M - 1) + 1`.
    pub fn state_dim(&self) -> usize {
        match self.family {
            BasisFamily::FouT { .. } => 2 * (self.order - 1) + 1,
            _ => self.order,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if matches!(self.family, BasisFamily::LegS) && t <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "LegS operator matrices need t > 0, got {t}"
            )));
        }
        Ok(())
    }

    /// The ODE matrices `(A(t), B(t))`.
    pub fn matrices(&self, t: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_time(t)?;
        let d = self.state_dim();
        let mut a = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        self.fill_matrices(t, &mut a, &mut b);
        Ok((a, b))
    }

    /// Write `A(t)`/`B(t)` into caller-owned buffers (hot path).
    fn fill_matrices(&self, t: f64, a: &mut DMatrix<f64>, b: &mut DVector<f64>) {
        a.fill(0.0);
        b.fill(0.0);
        match self.family {
            BasisFamily::LegS => {
                for m in 0..self.order {
                    for k in 0..m {
                        a[(m, k)] = -math::sqrt((2 * m + 1) as f64 * (2 * k + 1) as f64) / t;
                    }
                    a[(m, m)] = -((m + 1) as f64) / t;
                    b[m] = math::sqrt((2 * m + 1) as f64) / t;
                }
            }
            BasisFamily::LegT { window } => {
                for m in 0..self.order {
                    for k in 0..self.order {
                        let root = math::sqrt((2 * m + 1) as f64 * (2 * k + 1) as f64);
                        let sign = if m >= k || (k - m) % 2 == 0 { 1.0 } else { -1.0 };
                        a[(m, k)] = -sign * root / window;
                    }
                    b[m] = math::sqrt((2 * m + 1) as f64) / window;
                }
            }
            BasisFamily::LagT => {
                for m in 0..self.order {
                    for k in 0..=m {
                        a[(m, k)] = -1.0;
                    }
                    b[m] = 1.0;
                }
            }
            BasisFamily::FouT { window } => {
                let inv = 1.0 / window;
                let sq2 = math::sqrt(2.0);
                a[(0, 0)] = -inv;
                b[0] = inv;
                for m in 1..self.order {
                    let (ci, si) = (2 * m - 1, 2 * m);
                    a[(0, ci)] = -sq2 * inv;
                    a[(ci, 0)] = -sq2 * inv;
                    for k in 1..self.order {
                        a[(ci, 2 * k - 1)] = -2.0 * inv;
                    }
                    let omega = 2.0 * core::f64::consts::PI * m as f64 * inv;
                    a[(ci, si)] -= omega;
                    a[(si, ci)] += omega;
                    b[ci] = sq2 * inv;
                }
            }
        }
    }

    /// Evaluate the `m`-th basis function `g_m_t(x)`.
    ///
    /// The polynomial/trigonometric formula is extended outside the measure
    /// support; combine with [`Self::measure`] for integrals.
    pub fn basis(&self, m: usize, t: f64, x: f64) -> Result<f64> {
        if m >= self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: m,
            });
        }
        self.check_time(t)?;
        let mut all = vec![0.0; self.state_dim()];
        self.basis_all(t, x, &mut all);
        Ok(all[m])
    }

    /// Evaluate all basis functions at once (single recurrence pass).
    pub fn basis_all(&self, t: f64, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.state_dim());
        match self.family {
            BasisFamily::LegS => {
                let u = 2.0 * x / t - 1.0;
                legendre_scan(u, out);
                for (m, v) in out.iter_mut().enumerate() {
                    *v *= math::sqrt((2 * m + 1) as f64);
                }
            }
            BasisFamily::LegT { window } => {
                let u = 2.0 * (x - t) / window + 1.0;
                legendre_scan(u, out);
                for (m, v) in out.iter_mut().enumerate() {
                    *v *= math::sqrt((2 * m + 1) as f64);
                }
            }
            BasisFamily::LagT => {
                laguerre_scan(t - x, out);
            }
            BasisFamily::FouT { window } => {
                let s = (t - x) / window;
                out[0] = 1.0;
                let sq2 = math::sqrt(2.0);
                for m in 1..self.order {
                    let arg = 2.0 * core::f64::consts::PI * m as f64 * s;
                    out[2 * m - 1] = sq2 * math::cos(arg);
                    out[2 * m] = sq2 * math::sin(arg);
                }
            }
        }
    }

    /// The measure weight `w_t(x)` (zero outside the measure support).
    pub fn measure(&self, t: f64, x: f64) -> f64 {
        match self.family {
            BasisFamily::LegS => {
                if x >= 0.0 && x <= t {
                    1.0 / t
                } else {
                    0.0
                }
            }
            BasisFamily::LegT { window } | BasisFamily::FouT { window } => {
                if x >= t - window && x <= t {
                    1.0 / window
                } else {
                    0.0
                }
            }
            BasisFamily::LagT => {
                if x <= t {
                    math::exp(-(t - x))
                } else {
                    0.0
                }
            }
        }
    }

    /// Integration interval used by the quadrature oracles: the measure
    /// support clipped to `x >= 0`, because streams are observed from time
    /// zero and signals are zero-extended below it.
    pub fn support(&self, t: f64) -> (f64, f64) {
        match self.family {
            BasisFamily::LegS | BasisFamily::LagT => (0.0, t),
            BasisFamily::LegT { window } | BasisFamily::FouT { window } => {
                ((t - window).max(0.0), t)
            }
        }
    }

    /// Quadrature rule adapted to the family on the support at time `t`.
    pub(crate) fn quadrature_rule(&self, t: f64, nodes: usize) -> quad::Rule {
        let (lo, hi) = self.support(t);
        match self.family {
            // The decaying integrand can stretch over many e-foldings, so
            // tile the support with panels.
            BasisFamily::LagT => {
                let panels = (math::ceil(hi - lo) as usize).max(1);
                quad::composite_gauss_legendre(nodes, lo, hi, panels)
            }
            _ => quad::gauss_legendre_on(nodes, lo, hi),
        }
    }
}

/// Legendre values `P_0(u) .. P_{n-1}(u)` by the three-term recurrence.
fn legendre_scan(u: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = u;
    }
    for m in 1..out.len().saturating_sub(1) {
        let mf = m as f64;
        out[m + 1] = ((2.0 * mf + 1.0) * u * out[m] - mf * out[m - 1]) / (mf + 1.0);
    }
}

/// Laguerre values `L_0(u) .. L_{n-1}(u)`.
fn laguerre_scan(u: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = 1.0 - u;
    }
    for m in 1..out.len().saturating_sub(1) {
        let mf = m as f64;
        out[m + 1] = ((2.0 * mf + 1.0 - u) * out[m] - mf * out[m - 1]) / (mf + 1.0);
    }
}

/// Reusable buffers for recurrence steps over a bank of columns.
pub(crate) struct StepWorkspace {
    a_left: DMatrix<f64>,
    a_right: DMatrix<f64>,
    b_left: DVector<f64>,
    b_right: DVector<f64>,
    work: DMatrix<f64>,
    inv_right: DMatrix<f64>,
    flat_a: Vec<f64>,
    inv_diag: Vec<f64>,
    col_buf: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(dim: usize, max_cols: usize) -> Self {
        StepWorkspace {
            a_left: DMatrix::zeros(dim, dim),
            a_right: DMatrix::zeros(dim, dim),
            b_left: DVector::zeros(dim),
            b_right: DVector::zeros(dim),
            work: DMatrix::zeros(dim, max_cols),
            inv_right: DMatrix::zeros(dim, dim),
            flat_a: Vec::new(),
            inv_diag: Vec::new(),
            col_buf: Vec::new(),
        }
    }
}

impl HippoOperator {
    /// Advance a bank of independent coefficient columns by one step.
    ///
    /// `state` is `state_dim x C`; `src_prev`/`src_next` hold the per-column
    /// source samples at the step endpoints. The first step of a fresh
    /// integration (`t == 0`) replaces the zero state by
    /// `dt * B(dt) * src_next`, which sidesteps the `1/t` singularity of the
    /// `LegS` matrices and seeds every other family identically.
    #[allow(clippy::too_many_arguments)] // endpoint sources and workspace are all hot-path
    pub(crate) fn step_bank(
        &self,
        t: f64,
        dt: f64,
        scheme: Scheme,
        state_data: &mut [f64],
        src_prev: &[f64],
        src_next: &[f64],
        ws: &mut StepWorkspace,
    ) -> Result<()> {
        let dim = self.state_dim();
        let cols = state_data.len() / dim;
        debug_assert_eq!(state_data.len(), dim * cols);
        debug_assert_eq!(src_next.len(), cols);
        let mut state = DMatrixViewMut::from_slice(state_data, dim, cols);
        let state = &mut state;
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
        }

        if t == 0.0 {
            self.fill_matrices(t + dt, &mut ws.a_right, &mut ws.b_right);
            for (c, col) in state.column_iter_mut().enumerate() {
                let mut col = col;
                let scale = dt * src_next[c];
                for r in 0..dim {
                    col[r] = scale * ws.b_right[r];
                }
            }
            return Ok(());
        }

        match scheme {
            Scheme::ForwardEuler => {
                self.fill_matrices(t, &mut ws.a_left, &mut ws.b_left);
                if dim <= 16 {
                    // Fused single-pass update: with the operator in
                    // registers the state streams through memory once per
                    // step instead of three times.
                    ws.flat_a.resize(dim * dim, 0.0);
                    for r in 0..dim {
                        for k in 0..dim {
                            ws.flat_a[r * dim + k] = dt * ws.a_left[(r, k)];
                        }
                    }
                    let lower = self.family.is_lower_triangular();
                    let mut out = [0.0f64; 16];
                    for (c, chunk) in state_data.chunks_exact_mut(dim).enumerate() {
                        let scale = dt * src_next[c];
                        for r in 0..dim {
                            let kmax = if lower { r + 1 } else { dim };
                            let arow = &ws.flat_a[r * dim..r * dim + kmax];
                            let mut acc = chunk[r] + scale * ws.b_left[r];
                            for (a, x) in arow.iter().zip(chunk.iter()) {
                                acc += a * x;
                            }
                            out[r] = acc;
                        }
                        chunk.copy_from_slice(&out[..dim]);
                    }
                    return Ok(());
                }
                let mut work = ws.work.view_mut((0, 0), (dim, cols));
                work.gemm(dt, &ws.a_left, &*state, 0.0);
                *state += &work;
                for c in 0..cols {
                    let scale = dt * src_next[c];
                    for r in 0..dim {
                        state[(r, c)] += scale * ws.b_left[r];
                    }
                }
            }
            Scheme::Bilinear => {
                debug_assert_eq!(src_prev.len(), cols);
                self.fill_matrices(t, &mut ws.a_left, &mut ws.b_left);
                self.fill_matrices(t + dt, &mut ws.a_right, &mut ws.b_right);
                let half = 0.5 * dt;
                // rhs = (I + dt/2 A(t)) c + dt/2 (B(t) y_prev + B(t+dt) y_next)
                let mut work = ws.work.view_mut((0, 0), (dim, cols));
                work.gemm(half, &ws.a_left, &*state, 0.0);
                *state += &work;
                for c in 0..cols {
                    let sp = half * src_prev[c];
                    let sn = half * src_next[c];
                    for r in 0..dim {
                        state[(r, c)] += sp * ws.b_left[r] + sn * ws.b_right[r];
                    }
                }
                // Solve (I - dt/2 A(t+dt)) c' = rhs column by column. The
                // factors are flattened row-major and each column is solved
                // on a contiguous slice, which keeps the forward
                // substitution out of bounds-checked matrix indexing.
                if self.family.is_lower_triangular() {
                    ws.flat_a.resize(dim * dim, 0.0);
                    ws.inv_diag.resize(dim, 0.0);
                    for r in 0..dim {
                        for k in 0..r {
                            ws.flat_a[r * dim + k] = half * ws.a_right[(r, k)];
                        }
                        ws.inv_diag[r] = 1.0 / (1.0 - half * ws.a_right[(r, r)]);
                    }
                    ws.col_buf.resize(dim, 0.0);
                    for mut view_col in state.column_iter_mut() {
                        let col = &mut ws.col_buf[..];
                        for (dst, src) in col.iter_mut().zip(view_col.iter()) {
                            *dst = *src;
                        }
                        col[0] *= ws.inv_diag[0];
                        for r in 1..dim {
                            let (head, tail) = col.split_at_mut(r);
                            let arow = &ws.flat_a[r * dim..r * dim + r];
                            let mut acc = tail[0];
                            for (a, x) in arow.iter().zip(head.iter()) {
                                acc += a * x;
                            }
                            tail[0] = acc * ws.inv_diag[r];
                        }
                        for (dst, src) in view_col.iter_mut().zip(col.iter()) {
                            *dst = *src;
                        }
                    }
                } else {
                    let mut lhs = DMatrix::identity(dim, dim);
                    lhs -= &ws.a_right * half;
                    let inv = lhs.try_inverse().ok_or_else(|| {
                        Error::Numerical("implicit step matrix is singular".to_string())
                    })?;
                    ws.inv_right.copy_from(&inv);
                    let mut work = ws.work.view_mut((0, 0), (dim, cols));
                    work.gemm(1.0, &ws.inv_right, &*state, 0.0);
                    state.copy_from(&work);
                }
            }
        }
        Ok(())
    }
}

/// Compressed history of a scalar signal: coefficients plus the stepping
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientState {
    /// Projection coefficients `c(t)`.
    pub coeffs: DVector<f64>,
    /// End time of the compressed history.
    pub end_time: f64,
    /// Discretization scheme used for updates.
    pub scheme: Scheme,
    /// Step size.
    pub step: f64,
    /// Sample consumed by the previous step (trapezoidal source memory).
    last_source: f64,
}

impl CoefficientState {
    /// Fresh (empty-history) state at `t = 0`.
    pub fn new(op: &HippoOperator, scheme: Scheme, step: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidInput(format!("step size must be positive, got {step}")));
        }
        Ok(CoefficientState {
            coeffs: DVector::zeros(op.state_dim()),
            end_time: 0.0,
            scheme,
            step,
            last_source: 0.0,
        })
    }

    /// Consume the next signal sample `y(t + dt)` and advance the end time.
    pub fn step(&self, op: &HippoOperator, y_next: f64) -> Result<CoefficientState> {
        if !y_next.is_finite() {
            return Err(Error::InvalidInput("signal sample must be finite".to_string()));
        }
        let mut next = self.clone();
        let mut ws = StepWorkspace::new(op.state_dim(), 1);
        op.step_bank(
            self.end_time,
            self.step,
            self.scheme,
            next.coeffs.as_mut_slice(),
            &[self.last_source],
            &[y_next],
            &mut ws,
        )?;
        next.end_time = self.end_time + self.step;
        next.last_source = y_next;
        Ok(next)
    }

    /// Reconstruction `sum_m c_m g_m_t(x)` of the compressed signal.
    pub fn reconstruct(&self, op: &HippoOperator, x: f64) -> f64 {
        let mut basis = vec![0.0; op.state_dim()];
        op.basis_all(self.end_time, x, &mut basis);
        self.coeffs.iter().zip(&basis).map(|(c, g)| c * g).sum()
    }
}

/// Gauss–Legendre reference for the projection coefficients of a signal:
/// `c_m = integral y(x) g_m_t(x) w_t(x) dx` over the support at time `t`,
/// with signals understood to start at `x = 0`.
pub fn quadrature_coefficients(
    signal: impl Fn(f64) -> f64,
    op: &HippoOperator,
    t: f64,
    nodes: usize,
) -> Result<DVector<f64>> {
    if nodes < 2 {
        return Err(Error::InvalidInput("need at least 2 quadrature nodes".to_string()));
    }
    op.check_time(t)?;
    let rule = op.quadrature_rule(t, nodes);
    let dim = op.state_dim();
    let mut out = DVector::zeros(dim);
    let mut basis = vec![0.0; dim];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let yw = signal(x) * op.measure(t, x) * w;
        if yw == 0.0 {
            continue;
        }
        op.basis_all(t, x, &mut basis);
        for m in 0..dim {
            out[m] += yw * basis[m];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn legs(order: usize) -> HippoOperator {
        HippoOperator::new(BasisFamily::LegS, order).unwrap()
    }

    /// Run the recurrence for an analytic signal on a uniform grid to `t`.
    fn run_recurrence(
        op: &HippoOperator,
        scheme: Scheme,
        dt: f64,
        t_end: f64,
        signal: impl Fn(f64) -> f64,
    ) -> CoefficientState {
        let steps = (t_end / dt).round() as usize;
        let mut state = CoefficientState::new(op, scheme, dt).unwrap();
        for k in 1..=steps {
            state = state.step(op, signal(k as f64 * dt)).unwrap();
        }
        assert!((state.end_time - t_end).abs() < 1e-9);
        state
    }

    #[test]
    fn legs_matrices_order_three() {
        let (a, b) = legs(3).matrices(1.0).unwrap();
        let s3 = 3.0f64.sqrt();
        let s5 = 5.0f64.sqrt();
        let s15 = 15.0f64.sqrt();
        let expect = [
            [-1.0, 0.0, 0.0],
            [-s3, -2.0, 0.0],
            [-s5, -s15, -3.0],
        ];
        for m in 0..3 {
            for k in 0..3 {
                assert!((a[(m, k)] - expect[m][k]).abs() < 1e-14);
            }
        }
        assert!((b[0] - 1.0).abs() < 1e-14);
        assert!((b[1] - s3).abs() < 1e-14);
        assert!((b[2] - s5).abs() < 1e-14);
    }

    #[test]
    fn legs_matrices_scale_inversely_with_time() {
        let (a1, b1) = legs(4).matrices(1.0).unwrap();
        let (a2, b2) = legs(4).matrices(2.0).unwrap();
        assert!((&a1 * 0.5 - &a2).norm() < 1e-14);
        assert!((&b1 * 0.5 - &b2).norm() < 1e-14);
    }

    #[test]
    fn legs_rejects_nonpositive_time() {
        assert!(matches!(legs(3).matrices(0.0), Err(Error::InvalidInput(_))));
        assert!(matches!(legs(3).matrices(-1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lagt_matrices_are_all_minus_one_lower() {
        let op = HippoOperator::new(BasisFamily::LagT, 4).unwrap();
        let (a, b) = op.matrices(7.3).unwrap();
        for m in 0..4 {
            for k in 0..4 {
                let expect = if m >= k { -1.0 } else { 0.0 };
                assert_eq!(a[(m, k)], expect);
            }
            assert_eq!(b[m], 1.0);
        }
    }

    #[test]
    fn legs_spectrum_is_negative_integers() {
        let (a, _) = legs(6).matrices(1.0).unwrap();
        // Lower triangular: the spectrum is the diagonal.
        for m in 0..6 {
            assert!((a[(m, m)] + (m as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn legs_basis_values() {
        let op = legs(5);
        for &x in &[0.05, 0.4, 0.77] {
            assert!((op.basis(0, 1.0, x).unwrap() - 1.0).abs() < 1e-14);
        }
        // P_m(1) = 1, so g_m(t) = sqrt(2m+1).
        for m in 0..5 {
            let v = op.basis(m, 0.9, 0.9).unwrap();
            assert!((v - ((2 * m + 1) as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn legs_basis_orthonormal_under_measure() {
        let op = legs(8);
        let t = 1.3;
        let rule = quad::gauss_legendre_on(64, 0.0, t);
        let mut basis = vec![0.0; 8];
        let mut gram = DMatrix::<f64>::zeros(8, 8);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            op.basis_all(t, x, &mut basis);
            let wm = w * op.measure(t, x);
            for l in 0..8 {
                for m in 0..8 {
                    gram[(l, m)] += wm * basis[l] * basis[m];
                }
            }
        }
        for l in 0..8 {
            for m in 0..8 {
                let expect = if l == m { 1.0 } else { 0.0 };
                assert!(
                    (gram[(l, m)] - expect).abs() < 1e-8,
                    "gram[{l},{m}] = {}",
                    gram[(l, m)]
                );
            }
        }
    }

    #[test]
    fn fout_basis_orthonormal_under_measure() {
        let op = HippoOperator::new(BasisFamily::FouT { window: 0.8 }, 3).unwrap();
        let t = 2.0;
        let dim = op.state_dim();
        let rule = quad::gauss_legendre_on(64, t - 0.8, t);
        let mut basis = vec![0.0; dim];
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            op.basis_all(t, x, &mut basis);
            let wm = w * op.measure(t, x);
            for l in 0..dim {
                for m in 0..dim {
                    gram[(l, m)] += wm * basis[l] * basis[m];
                }
            }
        }
        for l in 0..dim {
            for m in 0..dim {
                let expect = if l == m { 1.0 } else { 0.0 };
                assert!((gram[(l, m)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quadrature_constant_signal_hits_first_coefficient() {
        let op = legs(5);
        let c = quadrature_coefficients(|_| 2.5, &op, 1.7, 48).unwrap();
        assert!((c[0] - 2.5).abs() < 1e-12);
        for m in 1..5 {
            assert!(c[m].abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_of_basis_function_is_unit_vector() {
        let op = legs(4);
        let t = 1.0;
        let c = quadrature_coefficients(|x| op.basis(2, t, x).unwrap(), &op, t, 32).unwrap();
        for m in 0..4 {
            let expect = if m == 2 { 1.0 } else { 0.0 };
            assert!((c[m] - expect).abs() < 1e-10, "c[{m}] = {}", c[m]);
        }
    }

    #[test]
    fn quadrature_linear_signal_reference() {
        let op = legs(4);
        let c = quadrature_coefficients(|x| x, &op, 1.0, 48).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.28867513459481287).abs() < 1e-12);
        assert!(c[2].abs() < 1e-12);
        assert!(c[3].abs() < 1e-12);
    }

    #[test]
    fn zero_signal_keeps_zero_state() {
        let op = legs(4);
        for scheme in [Scheme::ForwardEuler, Scheme::Bilinear] {
            let state = run_recurrence(&op, scheme, 1e-2, 0.5, |_| 0.0);
            assert_eq!(state.coeffs.norm(), 0.0);
        }
    }

    #[test]
    fn constant_signal_recurrence_reaches_steady_coefficients() {
        let op = legs(4);
        for scheme in [Scheme::ForwardEuler, Scheme::Bilinear] {
            let state = run_recurrence(&op, scheme, 1e-3, 1.0, |_| 1.0);
            assert!(
                (0.99..=1.01).contains(&state.coeffs[0]),
                "{scheme:?}: c0 = {}",
                state.coeffs[0]
            );
            for m in 1..4 {
                assert!(
                    state.coeffs[m].abs() <= 5e-3,
                    "{scheme:?}: c{m} = {}",
                    state.coeffs[m]
                );
            }
        }
    }

    #[test]
    fn linear_signal_recurrence_matches_projection() {
        let op = legs(4);
        for scheme in [Scheme::ForwardEuler, Scheme::Bilinear] {
            let state = run_recurrence(&op, scheme, 1e-3, 1.0, |x| x);
            assert!((state.coeffs[0] - 0.5).abs() < 5e-3, "{scheme:?}");
            assert!((state.coeffs[1] - 0.2886751).abs() < 5e-3, "{scheme:?}");
            assert!(state.coeffs[2].abs() <= 5e-3);
            assert!(state.coeffs[3].abs() <= 5e-3);
        }
    }

    #[test]
    fn recurrence_error_shrinks_with_scheme_order() {
        let op = legs(6);
        let signal = |x: f64| (2.0 * x).sin() + 0.3 * (5.0 * x).cos();
        let reference = quadrature_coefficients(signal, &op, 1.0, 128).unwrap();
        let mut errs = Vec::new();
        for scheme in [Scheme::ForwardEuler, Scheme::Bilinear] {
            let mut per_dt = Vec::new();
            for &dt in &[1e-2, 5e-3, 2.5e-3] {
                let state = run_recurrence(&op, scheme, dt, 1.0, signal);
                per_dt.push((state.coeffs - &reference).amax());
            }
            errs.push(per_dt);
        }
        // Forward Euler: at least first order.
        for w in errs[0].windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.6, "euler ratios {:?}", errs[0]);
        }
        // Bilinear: at least second order.
        for w in errs[1].windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.0, "bilinear ratios {:?}", errs[1]);
        }
    }

    #[test]
    fn lagt_recurrence_matches_quadrature() {
        let op = HippoOperator::new(BasisFamily::LagT, 5).unwrap();
        let signal = |x: f64| (-0.3 * x).exp() * x.sin();
        let state = run_recurrence(&op, Scheme::Bilinear, 1e-3, 2.0, signal);
        let reference = quadrature_coefficients(signal, &op, 2.0, 64).unwrap();
        let err = (state.coeffs - reference).amax();
        assert!(err < 1e-3, "error {err}");
    }

    #[test]
    fn legt_recurrence_matches_quadrature_for_in_span_signal() {
        // Quadratic signal lies in the span of the window basis, so the
        // boundary reconstruction inside the recurrence is exact and the
        // remaining gap is pure discretization error.
        let op = HippoOperator::new(BasisFamily::LegT { window: 1.0 }, 5).unwrap();
        let signal = |x: f64| 0.3 + 0.7 * x - 0.4 * x * x;
        let state = run_recurrence(&op, Scheme::Bilinear, 5e-4, 2.0, signal);
        let reference = quadrature_coefficients(signal, &op, 2.0, 64).unwrap();
        let err = (state.coeffs - reference).amax();
        assert!(err < 1e-3, "error {err}");
    }

    #[test]
    fn fout_recurrence_matches_quadrature_for_periodic_signal() {
        // Warm-start at t = 1 where the window no longer overlaps the
        // unobserved region; the signal lies in the span of the window
        // basis, so the remaining gap is pure discretization error.
        let op = HippoOperator::new(BasisFamily::FouT { window: 1.0 }, 3).unwrap();
        let signal = |x: f64| (2.0 * core::f64::consts::PI * x).sin();
        let dt = 5e-4;
        let mut state = CoefficientState {
            coeffs: quadrature_coefficients(signal, &op, 1.0, 64).unwrap(),
            end_time: 1.0,
            scheme: Scheme::Bilinear,
            step: dt,
            last_source: signal(1.0),
        };
        for k in 1..=4000 {
            state = state.step(&op, signal(1.0 + k as f64 * dt)).unwrap();
        }
        let reference = quadrature_coefficients(signal, &op, 3.0, 64).unwrap();
        let err = (state.coeffs - reference).amax();
        assert!(err < 1e-3, "error {err}");
    }

    #[test]
    fn reconstruction_zero_coefficients() {
        let op = legs(6);
        let state = CoefficientState::new(&op, Scheme::Bilinear, 1e-2).unwrap();
        let state = CoefficientState {
            end_time: 1.0,
            ..state
        };
        for &x in &[0.0, 0.3, 0.9] {
            assert_eq!(state.reconstruct(&op, x), 0.0);
        }
    }

    #[test]
    fn reconstruction_exact_for_polynomial_in_span() {
        let op = legs(4);
        let t = 1.0;
        let signal = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x;
        let coeffs = quadrature_coefficients(signal, &op, t, 48).unwrap();
        let state = CoefficientState {
            coeffs,
            end_time: t,
            scheme: Scheme::Bilinear,
            step: 1e-3,
            last_source: 0.0,
        };
        for i in 0..10 {
            let x = 0.05 + 0.09 * i as f64;
            assert!(
                (state.reconstruct(&op, x) - signal(x)).abs() < 1e-8,
                "x = {x}"
            );
        }
    }

    #[test]
    fn reconstruction_of_sine_with_wide_basis() {
        let op = legs(16);
        let t = 1.0;
        let signal = |x: f64| (4.0 * x).sin();
        let coeffs = quadrature_coefficients(signal, &op, t, 96).unwrap();
        let state = CoefficientState {
            coeffs,
            end_time: t,
            scheme: Scheme::Bilinear,
            step: 1e-3,
            last_source: 0.0,
        };
        let mut worst: f64 = 0.0;
        for i in 0..=90 {
            let x = 0.1 + 0.01 * i as f64;
            worst = worst.max((state.reconstruct(&op, x) - signal(x)).abs());
        }
        assert!(worst <= 0.05, "max reconstruction error {worst}");
    }

    #[test]
    fn quadrature_residual_is_minimal_over_perturbations() {
        use rand::Rng;
        use rand::SeedableRng;
        let op = legs(5);
        let t = 1.0;
        let signal = |x: f64| (3.0 * x).sin() + 0.2 * x;
        let coeffs = quadrature_coefficients(signal, &op, t, 96).unwrap();
        let rule = quad::gauss_legendre_on(128, 0.0, t);
        let residual = |c: &DVector<f64>| -> f64 {
            let mut basis = vec![0.0; 5];
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&x, &w)| {
                    op.basis_all(t, x, &mut basis);
                    let approx: f64 = c.iter().zip(&basis).map(|(a, b)| a * b).sum();
                    let diff = signal(x) - approx;
                    w * op.measure(t, x) * diff * diff
                })
                .sum()
        };
        let base = residual(&coeffs);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let delta = DVector::from_fn(5, |_, _| rng.gen_range(-0.1..0.1));
            let perturbed = residual(&(&coeffs + delta));
            assert!(base <= perturbed + 1e-12);
        }
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let op = legs(3);
        let state = CoefficientState::new(&op, Scheme::ForwardEuler, 1e-2).unwrap();
        assert!(state.step(&op, f64::NAN).is_err());
    }

    #[test]
    fn fout_state_dimension() {
        let op = HippoOperator::new(BasisFamily::FouT { window: 1.0 }, 4).unwrap();
        assert_eq!(op.state_dim(), 7);
        let op1 = HippoOperator::new(BasisFamily::FouT { window: 1.0 }, 1).unwrap();
        assert_eq!(op1.state_dim(), 1);
    }
}
