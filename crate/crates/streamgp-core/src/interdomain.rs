//! Recurrent evolution of the prior covariance blocks of integral-transform
//! inducing variables.
//!
//! For inducing variables `u_m(t) = integral f(x) g_m_t(x) w_t(x) dx` the
//! cross-covariance row of a fixed input `x_n`,
//! `[K_fu(t)]_{n,m} = integral k(x_n, x) g_m_t(x) w_t(x) dx`, has exactly the
//! shape of a projection coefficient with source `k(x_n, t)`, so it is
//! advanced by the coefficient recurrence of [`crate::hippo`].
//!
//! `K_uu(t)` is a double integral; for stationary kernels it factorizes
//! through the spectral (Bochner) representation into per-frequency single
//! integrals `Z_w(t) = integral cos(w x) phi_t(x) dx` (and a sine twin),
//! each again a projection coefficient. Averaging the resulting feature
//! Gram over Monte-Carlo frequency draws yields `K_uu(t)` up to sampling
//! error. Feature columns are independent, so they are advanced in
//! cache-sized blocks and in parallel.
//!
//! A direct matrix ODE for `K_uu(t)` (Lyapunov form, `LegS` only) is also
//! provided behind an explicit opt-in type: its propagator has roughly
//! doubled negative eigenvalues, which makes the explicit recurrence stiff
//! and is exactly the failure mode the oracle comparison documents.
//!
//! Nested Gauss–Legendre oracles for both `K_fu` and `K_uu` live here too.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hippo::{quadrature_coefficients, HippoOperator, Scheme, StepWorkspace};
use crate::kernels::{FrequencyDraws, Kernel};
use crate::linalg;
use crate::math;

/// Relative slack when matching times (grid arithmetic is inexact).
const TIME_EPS: f64 = 1e-9;

fn times_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Index of `t` on the grid `origin + k * dt`, if it lies on it.
fn grid_index(origin: f64, dt: f64, t: f64) -> Option<usize> {
    let ratio = (t - origin) / dt;
    if ratio < -0.5 {
        return None;
    }
    let k = math::round(ratio);
    let back = origin + k * dt;
    ((back - t).abs() <= TIME_EPS * t.abs().max(1.0)).then_some(k as usize)
}

/// One job of the row-bank advance: column range plus its state and
/// source-cache chunks.
type RowJob<'a> = ((usize, usize), (&'a mut [f64], &'a mut [f64]));

/// One job of the feature advance: column range plus cos/sin state chunks
/// and the two source caches.
type FeatureJob<'a> = (
    (usize, usize),
    (((&'a mut [f64], &'a mut [f64]), &'a mut [f64]), &'a mut [f64]),
);

/// Column blocks sized so a block of `dim`-row state stays cache-resident
/// across an entire time sweep.
fn block_len(dim: usize) -> usize {
    (32_768 / dim.max(1)).max(256)
}

/// One `K_fu` row: the prior cross-covariance between `f(x_n)` and every
/// inducing variable at the row's end time.
#[derive(Debug, Clone, PartialEq)]
pub struct KfuRow {
    /// The training (or test) input the row is anchored at.
    pub anchor_input: Vec<f64>,
    /// Row values, one per inducing dimension.
    pub row: DVector<f64>,
    /// Basis end time the row has been evolved to.
    pub end_time: f64,
    last_source: f64,
}

impl KfuRow {
    /// Fresh row at `t = 0` (empty history, zero covariance).
    pub fn new(anchor_input: Vec<f64>, op: &HippoOperator) -> Self {
        KfuRow {
            anchor_input,
            row: DVector::zeros(op.state_dim()),
            end_time: 0.0,
            last_source: 0.0,
        }
    }
}

/// A bank of `K_fu` rows sharing one end time, advanced together.
#[derive(Debug, Clone)]
pub struct KfuBank {
    anchors: Vec<Vec<f64>>,
    /// `state_dim x n_rows`, column `r` is row `r` of `K_fu`.
    state: DMatrix<f64>,
    end_time: f64,
    last_sources: Vec<f64>,
    /// Grid anchor: step times are `grid_origin + k * dt` whenever targets
    /// stay on the grid, so segmented advances reproduce a one-shot
    /// integration bit for bit.
    grid_origin: f64,
    grid_steps: usize,
}

impl KfuBank {
    /// Fresh bank at `t = 0`.
    pub fn new(anchors: Vec<Vec<f64>>, op: &HippoOperator) -> Self {
        let n = anchors.len();
        KfuBank {
            anchors,
            state: DMatrix::zeros(op.state_dim(), n),
            end_time: 0.0,
            last_sources: vec![0.0; n],
            grid_origin: 0.0,
            grid_steps: 0,
        }
    }

    /// Number of rows in the bank.
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    /// Whether the bank holds no rows.
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// End time the bank has been evolved to.
    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// The rows as an `n_rows x state_dim` matrix (one `K_fu` block).
    pub fn as_kfu_matrix(&self) -> DMatrix<f64> {
        self.state.transpose()
    }

    /// Extract one row.
    pub fn row(&self, r: usize) -> KfuRow {
        KfuRow {
            anchor_input: self.anchors[r].clone(),
            row: self.state.column(r).into_owned(),
            end_time: self.end_time,
            last_source: self.last_sources[r],
        }
    }

    /// Append the rows of another bank at the same end time.
    pub fn merge(&mut self, other: KfuBank) -> Result<()> {
        if !self.is_empty()
            && !other.is_empty()
            && !times_equal(self.end_time, other.end_time)
        {
            return Err(Error::InvalidInput(format!(
                "cannot merge banks at t = {} and t = {}",
                self.end_time, other.end_time
            )));
        }
        if self.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.is_empty() {
            return Ok(());
        }
        let dim = self.state.nrows();
        let total = self.len() + other.len();
        let mut state = DMatrix::zeros(dim, total);
        state.columns_mut(0, self.len()).copy_from(&self.state);
        state
            .columns_mut(self.len(), other.len())
            .copy_from(&other.state);
        self.state = state;
        self.anchors.extend(other.anchors);
        self.last_sources.extend(other.last_sources);
        Ok(())
    }

    /// A copy of a contiguous row range as its own bank.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<KfuBank> {
        if start + count > self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: start + count,
            });
        }
        Ok(KfuBank {
            anchors: self.anchors[start..start + count].to_vec(),
            state: self.state.columns(start, count).into_owned(),
            end_time: self.end_time,
            last_sources: self.last_sources[start..start + count].to_vec(),
            grid_origin: self.grid_origin,
            grid_steps: self.grid_steps,
        })
    }

    /// Advance every row to `t_target` on the `dt` grid, evaluating the
    /// kernel source `k(x_r, s)` analytically at the grid times. Only valid
    /// for 1-D inputs, where the time axis is the input axis.
    pub fn advance_to(
        &mut self,
        op: &HippoOperator,
        kernel: &Kernel,
        t_target: f64,
        dt: f64,
        scheme: Scheme,
    ) -> Result<()> {
        if kernel.input_dim() != 1 {
            return Err(Error::InvalidInput(
                "analytic K_fu advancement needs 1-D inputs; use per-point stepping".to_string(),
            ));
        }
        if self.is_empty() {
            self.end_time = t_target;
            return Ok(());
        }
        let plan = StepPlan::new(self.end_time, t_target, dt)?;
        if plan.is_noop() {
            return Ok(());
        }

        // Step times: grid-anchored when the target stays on the grid,
        // otherwise accumulated (which re-anchors the grid afterwards).
        let mut schedule: Vec<(f64, f64)> = Vec::new();
        let target_steps = grid_index(self.grid_origin, dt, t_target);
        let current_steps = grid_index(self.grid_origin, dt, self.end_time)
            .filter(|&k| k == self.grid_steps);
        match (current_steps, target_steps) {
            (Some(k0), Some(k1)) if k1 >= k0 => {
                for k in k0..k1 {
                    schedule.push((self.grid_origin + k as f64 * dt, dt));
                }
                self.grid_steps = k1;
            }
            _ => {
                let mut t = self.end_time;
                for step in plan.steps() {
                    schedule.push((t, step));
                    t += step;
                }
                self.grid_origin = t_target;
                self.grid_steps = 0;
            }
        }

        let dim = op.state_dim();
        let block = block_len(dim);
        let n = self.len();
        let anchors = &self.anchors;
        let state_slice = self.state.as_mut_slice();
        let src_slice = &mut self.last_sources[..];
        let schedule = &schedule[..];

        let job = |((lo, len), (state_chunk, src_chunk)): RowJob<'_>| -> Result<()> {
            let mut ws = StepWorkspace::new(dim, len);
            let mut src_prev = vec![0.0; len];
            let mut src_next = vec![0.0; len];
            src_prev.copy_from_slice(src_chunk);
            for &(t, step) in schedule {
                for (i, r) in (lo..lo + len).enumerate() {
                    src_next[i] = kernel.eval_unchecked(&anchors[r], &[t + step]);
                }
                op.step_bank(t, step, scheme, state_chunk, &src_prev, &src_next, &mut ws)?;
                src_prev.copy_from_slice(&src_next);
            }
            src_chunk.copy_from_slice(&src_prev);
            Ok(())
        };

        let chunks = state_slice
            .chunks_mut(dim * block)
            .zip(src_slice.chunks_mut(block));
        let cols = (0..n).step_by(block).map(|lo| (lo, block.min(n - lo)));
        run_blocks(cols.zip(chunks), job)?;

        self.end_time = t_target;
        Ok(())
    }

    /// Advance the bank by one step of `dt`, consuming the next ordered
    /// point `x_next` as source: row `r` receives `k(x_r, x_next)`. This is
    /// the path-integral drive used for multidimensional inputs.
    pub fn step_with_point(
        &mut self,
        op: &HippoOperator,
        kernel: &Kernel,
        dt: f64,
        scheme: Scheme,
        x_next: &[f64],
    ) -> Result<()> {
        let dim = op.state_dim();
        let n = self.len();
        let mut src_next = vec![0.0; n];
        for (dst, anchor) in src_next.iter_mut().zip(&self.anchors) {
            *dst = kernel.eval(anchor, x_next)?;
        }
        let mut ws = StepWorkspace::new(dim, n.max(1));
        op.step_bank(
            self.end_time,
            dt,
            scheme,
            self.state.as_mut_slice(),
            &self.last_sources,
            &src_next,
            &mut ws,
        )?;
        match grid_index(self.grid_origin, dt, self.end_time).filter(|&k| k == self.grid_steps) {
            Some(k) => {
                self.grid_steps = k + 1;
                self.end_time = self.grid_origin + self.grid_steps as f64 * dt;
            }
            None => {
                self.end_time += dt;
                self.grid_origin = self.end_time;
                self.grid_steps = 0;
            }
        }
        self.last_sources = src_next;
        Ok(())
    }
}

/// Advance a single `K_fu` row by one step of `dt` with the analytic kernel
/// source (1-D inputs).
pub fn step_kfu(
    row: &KfuRow,
    op: &HippoOperator,
    kernel: &Kernel,
    dt: f64,
    scheme: Scheme,
) -> Result<KfuRow> {
    let mut bank = KfuBank {
        anchors: vec![row.anchor_input.clone()],
        state: DMatrix::from_column_slice(op.state_dim(), 1, row.row.as_slice()),
        end_time: row.end_time,
        last_sources: vec![row.last_source],
        grid_origin: row.end_time,
        grid_steps: 0,
    };
    bank.advance_to(op, kernel, row.end_time + dt, dt, scheme)?;
    Ok(bank.row(0))
}

/// Integrate a fresh `K_fu` row for a new input from `t = 0` to `end_time`.
///
/// Needs only kernel evaluations. On a grid whose segment boundaries are
/// integer step multiples this reproduces an incrementally evolved row
/// bit for bit.
pub fn backfill_kfu(
    x_new: &[f64],
    op: &HippoOperator,
    kernel: &Kernel,
    end_time: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<KfuRow> {
    let mut bank = KfuBank::new(vec![x_new.to_vec()], op);
    bank.advance_to(op, kernel, end_time, dt, scheme)?;
    Ok(bank.row(0))
}

/// Snapshot of the feature matrices at some past time.
#[derive(Debug, Clone)]
struct Checkpoint {
    time: f64,
    cos: DMatrix<f64>,
    sin: DMatrix<f64>,
}

/// Random-feature state: per-frequency cosine and sine projection
/// coefficients, evolved recurrently, from which `K_uu(t)` is assembled.
#[derive(Debug, Clone)]
pub struct FeatureState {
    /// The spectral draws shared by every block built from this state.
    pub draws: FrequencyDraws,
    /// `state_dim x N`: column `n` holds the cosine features of `w_n`.
    cos: DMatrix<f64>,
    /// `state_dim x N`: column `n` holds the sine features of `w_n`.
    sin: DMatrix<f64>,
    end_time: f64,
    checkpoints: Vec<Checkpoint>,
    /// Sources consumed by the previous step (per frequency).
    last_cos_src: Vec<f64>,
    last_sin_src: Vec<f64>,
}

impl FeatureState {
    /// Fresh state at `t = 0`.
    pub fn new(op: &HippoOperator, draws: FrequencyDraws) -> Self {
        let n = draws.len();
        FeatureState {
            draws,
            cos: DMatrix::zeros(op.state_dim(), n),
            sin: DMatrix::zeros(op.state_dim(), n),
            end_time: 0.0,
            checkpoints: Vec::new(),
            last_cos_src: vec![0.0; n],
            last_sin_src: vec![0.0; n],
        }
    }

    /// End time the features have been evolved to.
    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Number of frequency samples.
    pub fn num_samples(&self) -> usize {
        self.draws.len()
    }

    /// Borrow the cosine block (`state_dim x N`).
    pub fn cos_features(&self) -> &DMatrix<f64> {
        &self.cos
    }

    /// Borrow the sine block (`state_dim x N`).
    pub fn sin_features(&self) -> &DMatrix<f64> {
        &self.sin
    }

    /// Times of the stored snapshots, ascending.
    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.time).collect()
    }

    /// Store a snapshot of the current features. A repeated snapshot at the
    /// current time is a no-op.
    pub fn checkpoint(&mut self) -> Result<()> {
        if let Some(last) = self.checkpoints.last() {
            if last.time > self.end_time + TIME_EPS {
                return Err(Error::InvalidInput(format!(
                    "checkpoints must increase: have {}, current time {}",
                    last.time, self.end_time
                )));
            }
            if times_equal(last.time, self.end_time) {
                return Ok(());
            }
        }
        self.checkpoints.push(Checkpoint {
            time: self.end_time,
            cos: self.cos.clone(),
            sin: self.sin.clone(),
        });
        Ok(())
    }

    fn find_checkpoint(&self, time: f64) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| times_equal(c.time, time))
            .ok_or(Error::MissingCheckpoint { time })
    }

    /// Advance every feature column to `t_target` on the `dt` grid in the
    /// 1-D time-series mode, where the sources are `cos(w_n t)` and
    /// `sin(w_n t)`. Per-step sources are produced by rotating the phase
    /// `(cos(w_n t), sin(w_n t))` instead of re-evaluating trigonometric
    /// functions.
    pub fn advance_to(
        &mut self,
        op: &HippoOperator,
        t_target: f64,
        dt: f64,
        scheme: Scheme,
    ) -> Result<()> {
        if self.draws.frequencies.ncols() != 1 {
            return Err(Error::InvalidInput(
                "analytic feature advancement needs 1-D frequencies; use per-point stepping"
                    .to_string(),
            ));
        }
        let plan = StepPlan::new(self.end_time, t_target, dt)?;
        if plan.is_noop() {
            return Ok(());
        }
        let dim = op.state_dim();
        let block = block_len(dim);
        let n = self.num_samples();
        let end_time = self.end_time;
        let freqs: Vec<f64> = (0..n).map(|i| self.draws.frequencies[(i, 0)]).collect();
        let freqs = &freqs[..];

        let cos_slice = self.cos.as_mut_slice();
        let sin_slice = self.sin.as_mut_slice();
        let lcs = &mut self.last_cos_src[..];
        let lss = &mut self.last_sin_src[..];

        let job = |((lo, len), (((cos_chunk, sin_chunk), lc_chunk), ls_chunk)): FeatureJob<'_>| -> Result<()> {
            let mut ws = StepWorkspace::new(dim, len);
            // Phase state and the rotation increment for full-size steps.
            let mut ph_c = vec![0.0; len];
            let mut ph_s = vec![0.0; len];
            let mut rot_c = vec![0.0; len];
            let mut rot_s = vec![0.0; len];
            for i in 0..len {
                let w = freqs[lo + i];
                ph_c[i] = math::cos(w * end_time);
                ph_s[i] = math::sin(w * end_time);
                rot_c[i] = math::cos(w * plan.dt);
                rot_s[i] = math::sin(w * plan.dt);
            }
            let mut next_c = vec![0.0; len];
            let mut next_s = vec![0.0; len];
            let mut t = end_time;
            for step in plan.steps() {
                if step == plan.dt {
                    for i in 0..len {
                        next_c[i] = ph_c[i] * rot_c[i] - ph_s[i] * rot_s[i];
                        next_s[i] = ph_s[i] * rot_c[i] + ph_c[i] * rot_s[i];
                    }
                } else {
                    for i in 0..len {
                        let w = freqs[lo + i];
                        let (rc, rs) = (math::cos(w * step), math::sin(w * step));
                        next_c[i] = ph_c[i] * rc - ph_s[i] * rs;
                        next_s[i] = ph_s[i] * rc + ph_c[i] * rs;
                    }
                }
                op.step_bank(t, step, scheme, cos_chunk, &ph_c, &next_c, &mut ws)?;
                op.step_bank(t, step, scheme, sin_chunk, &ph_s, &next_s, &mut ws)?;
                t += step;
                ph_c.copy_from_slice(&next_c);
                ph_s.copy_from_slice(&next_s);
            }
            lc_chunk.copy_from_slice(&ph_c);
            ls_chunk.copy_from_slice(&ph_s);
            Ok(())
        };

        let chunks = cos_slice
            .chunks_mut(dim * block)
            .zip(sin_slice.chunks_mut(dim * block))
            .zip(lcs.chunks_mut(block))
            .zip(lss.chunks_mut(block));
        let cols = (0..n).step_by(block).map(|lo| (lo, block.min(n - lo)));
        run_blocks(cols.zip(chunks), job)?;

        self.end_time = t_target;
        Ok(())
    }

    /// Advance the features by one step of `dt`, consuming the next ordered
    /// point: sources are `cos(w_n . x_next)` and `sin(w_n . x_next)`.
    pub fn step_with_point(
        &mut self,
        op: &HippoOperator,
        dt: f64,
        scheme: Scheme,
        x_next: &[f64],
    ) -> Result<()> {
        let n = self.num_samples();
        let dim = op.state_dim();
        let mut next_c = vec![0.0; n];
        let mut next_s = vec![0.0; n];
        for i in 0..n {
            let dot = self.draws.dot(i, x_next);
            next_c[i] = math::cos(dot);
            next_s[i] = math::sin(dot);
        }
        let mut ws = StepWorkspace::new(dim, n.max(1));
        op.step_bank(
            self.end_time,
            dt,
            scheme,
            self.cos.as_mut_slice(),
            &self.last_cos_src,
            &next_c,
            &mut ws,
        )?;
        op.step_bank(
            self.end_time,
            dt,
            scheme,
            self.sin.as_mut_slice(),
            &self.last_sin_src,
            &next_s,
            &mut ws,
        )?;
        self.end_time += dt;
        self.last_cos_src = next_c;
        self.last_sin_src = next_s;
        Ok(())
    }

    /// `K_uu` at the current end time: the scaled feature Gram
    /// `s2 / N * (Z Z^T + Z' Z'^T)`. Symmetric PSD by construction.
    pub fn assemble_kuu(&self, kernel: &Kernel) -> DMatrix<f64> {
        gram_scaled(&self.cos, &self.sin, &self.cos, &self.sin, kernel, self.num_samples())
    }

    /// Cross-covariance block between the inducing variables at a stored
    /// checkpoint time and those at the current end time, built from the
    /// shared draws: `s2 / N * (Z(t_old) Z(t)^T + Z'(t_old) Z'(t)^T)`.
    pub fn cross_kuu(&self, t_old: f64, kernel: &Kernel) -> Result<DMatrix<f64>> {
        if times_equal(t_old, self.end_time) {
            return Ok(self.assemble_kuu(kernel));
        }
        let cp = self.find_checkpoint(t_old)?;
        Ok(gram_scaled(&cp.cos, &cp.sin, &self.cos, &self.sin, kernel, self.num_samples()))
    }

    /// `K_uu` at a stored checkpoint time.
    pub fn kuu_at(&self, t_old: f64, kernel: &Kernel) -> Result<DMatrix<f64>> {
        if times_equal(t_old, self.end_time) {
            return Ok(self.assemble_kuu(kernel));
        }
        let cp = self.find_checkpoint(t_old)?;
        Ok(gram_scaled(&cp.cos, &cp.sin, &cp.cos, &cp.sin, kernel, self.num_samples()))
    }
}

fn gram_scaled(
    cos_a: &DMatrix<f64>,
    sin_a: &DMatrix<f64>,
    cos_b: &DMatrix<f64>,
    sin_b: &DMatrix<f64>,
    kernel: &Kernel,
    n: usize,
) -> DMatrix<f64> {
    let scale = kernel.output_scale_sq / n as f64;
    let mut out = cos_a * cos_b.transpose();
    out += sin_a * sin_b.transpose();
    out *= scale;
    out
}

/// Advance a feature state by a single step in time-series mode (pure
/// wrapper over [`FeatureState::advance_to`]).
pub fn step_features(
    fs: &FeatureState,
    op: &HippoOperator,
    dt: f64,
    scheme: Scheme,
) -> Result<FeatureState> {
    let mut next = fs.clone();
    next.advance_to(op, fs.end_time() + dt, dt, scheme)?;
    Ok(next)
}

/// Direct matrix-ODE state for `K_uu(t)` (`LegS` only; opt-in).
///
/// Advances `dK/dt = A(t) K + K A(t)^T + (1/t)(Btilde + Btilde^T)` with
/// `Btilde = c(t) 1^T`, where the boundary vector
/// `c_m(t) = integral k(t, x) phi_m_t(x) dx` is itself advanced as a `K_fu`
/// row whose anchor moves with `t` (re-sourced each step). The Lyapunov
/// propagator doubles the negative spectrum of `A(t)`, so the explicit
/// recurrence is stiff; this path exists to document that behaviour and must
/// not be used as the production `K_uu`.
#[derive(Debug, Clone)]
pub struct KuuDirectOdeState {
    /// Current `K_uu` estimate (kept symmetric).
    pub kuu: DMatrix<f64>,
    /// Boundary coefficient vector `c(t)`.
    pub boundary_coeffs: DVector<f64>,
    /// End time.
    pub end_time: f64,
}

impl KuuDirectOdeState {
    /// Fresh state at `t = 0`.
    pub fn new(op: &HippoOperator) -> Result<Self> {
        if !matches!(op.family, crate::hippo::BasisFamily::LegS) {
            return Err(Error::UnsupportedBasis(
                "the direct K_uu ODE is derived for LegS only".to_string(),
            ));
        }
        let d = op.state_dim();
        Ok(KuuDirectOdeState {
            kuu: DMatrix::zeros(d, d),
            boundary_coeffs: DVector::zeros(d),
            end_time: 0.0,
        })
    }
}

/// One explicit Euler step of the direct `K_uu` ODE.
pub fn step_kuu_direct(
    state: &KuuDirectOdeState,
    op: &HippoOperator,
    kernel: &Kernel,
    dt: f64,
) -> Result<KuuDirectOdeState> {
    if !matches!(op.family, crate::hippo::BasisFamily::LegS) {
        return Err(Error::UnsupportedBasis(
            "the direct K_uu ODE is derived for LegS only".to_string(),
        ));
    }
    let d = op.state_dim();
    let t = state.end_time;
    let t_next = t + dt;
    let sigma2 = kernel.diag_value(&[t_next]);

    let mut next = state.clone();
    if t == 0.0 {
        // Seed both the boundary row and the Gram from the empty history,
        // mirroring the from-zero rule of the coefficient recurrence.
        let (_, b) = op.matrices(t_next)?;
        next.boundary_coeffs = b * (dt * sigma2);
        let mut k = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                k[(i, j)] = next.boundary_coeffs[i] + next.boundary_coeffs[j];
            }
        }
        next.kuu = k;
        next.end_time = t_next;
        return Ok(next);
    }

    let (a, b) = op.matrices(t)?;
    // K update with the current boundary vector (left endpoint).
    let ak = &a * &state.kuu;
    let mut delta = &ak + ak.transpose();
    let c = &state.boundary_coeffs;
    for i in 0..d {
        for j in 0..d {
            delta[(i, j)] += (c[i] + c[j]) / t;
        }
    }
    next.kuu = &state.kuu + delta * dt;
    linalg::symmetrize(&mut next.kuu);
    // The boundary row is advanced as a projection coefficient whose source
    // is k(anchor, t) with the anchor re-sourced to the moving end point;
    // for stationary kernels that source is k(t, t) = s2.
    next.boundary_coeffs =
        &state.boundary_coeffs + (&a * &state.boundary_coeffs + &b * sigma2) * dt;
    next.end_time = t_next;
    Ok(next)
}

/// Gauss–Legendre reference for one `K_fu` row:
/// `integral k(x_n, x) g_m_t(x) w_t(x) dx` for every `m` (1-D inputs).
pub fn quadrature_kfu(
    kernel: &Kernel,
    x_n: &[f64],
    op: &HippoOperator,
    t: f64,
    nodes: usize,
) -> Result<DVector<f64>> {
    if kernel.input_dim() != 1 || x_n.len() != 1 {
        return Err(Error::InvalidInput(
            "the K_fu quadrature oracle is defined for 1-D inputs".to_string(),
        ));
    }
    quadrature_coefficients(|s| kernel.eval_unchecked(x_n, &[s]), op, t, nodes)
}

/// Nested Gauss–Legendre reference for `K_uu(t)`:
/// `integral integral k(x, x') phi_l(x) phi_m(x') dx dx'`, symmetrized.
pub fn quadrature_kuu(
    kernel: &Kernel,
    op: &HippoOperator,
    t: f64,
    nodes: usize,
) -> Result<DMatrix<f64>> {
    quadrature_kuu_cross(kernel, op, t, t, nodes).map(|mut k| {
        linalg::symmetrize(&mut k);
        k
    })
}

/// Nested quadrature for the cross block between basis end times `t1` and
/// `t2` (equal times give `K_uu`).
pub fn quadrature_kuu_cross(
    kernel: &Kernel,
    op: &HippoOperator,
    t1: f64,
    t2: f64,
    nodes: usize,
) -> Result<DMatrix<f64>> {
    if kernel.input_dim() != 1 {
        return Err(Error::InvalidInput(
            "the K_uu quadrature oracle is defined for 1-D inputs".to_string(),
        ));
    }
    if nodes < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 quadrature nodes".to_string(),
        ));
    }
    let d = op.state_dim();
    let rule1 = op.quadrature_rule(t1, nodes);
    let rule2 = op.quadrature_rule(t2, nodes);
    // G[i, m] = w_i w(x_i) g_m(x_i); result = G1^T K_grid G2.
    let pack = |rule: &crate::quad::Rule, t: f64| -> DMatrix<f64> {
        let mut g = DMatrix::zeros(rule.nodes.len(), d);
        let mut basis = vec![0.0; d];
        for (i, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            op.basis_all(t, x, &mut basis);
            let scale = w * op.measure(t, x);
            for m in 0..d {
                g[(i, m)] = scale * basis[m];
            }
        }
        g
    };
    let g1 = pack(&rule1, t1);
    let g2 = pack(&rule2, t2);
    let mut kgrid = DMatrix::zeros(rule1.nodes.len(), rule2.nodes.len());
    for (i, &xi) in rule1.nodes.iter().enumerate() {
        for (j, &xj) in rule2.nodes.iter().enumerate() {
            kgrid[(i, j)] = kernel.eval_unchecked(&[xi], &[xj]);
        }
    }
    Ok(g1.transpose() * kgrid * g2)
}

/// Schedule of full steps plus an optional remainder to land exactly on the
/// target time.
struct StepPlan {
    dt: f64,
    full: usize,
    remainder: f64,
}

impl StepPlan {
    fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {dt}"
            )));
        }
        let span = t1 - t0;
        if span < -TIME_EPS * t0.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "cannot advance backwards from {t0} to {t1}"
            )));
        }
        if span <= 0.0 {
            return Ok(StepPlan {
                dt,
                full: 0,
                remainder: 0.0,
            });
        }
        let ratio = span / dt;
        let mut full = math::floor(ratio) as usize;
        if (ratio - math::round(ratio)).abs() < 1e-9 {
            full = math::round(ratio) as usize;
        }
        let mut remainder = span - full as f64 * dt;
        if remainder <= 1e-12 * t1.abs().max(1.0) {
            remainder = 0.0;
        }
        Ok(StepPlan {
            dt,
            full,
            remainder,
        })
    }

    fn is_noop(&self) -> bool {
        self.full == 0 && self.remainder == 0.0
    }

    fn steps(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        core::iter::repeat(self.dt)
            .take(self.full)
            .chain((self.remainder > 0.0).then_some(self.remainder))
    }
}

/// Run the block jobs, in parallel when the `std` feature is on.
#[cfg(feature = "std")]
fn run_blocks<I, T, F>(blocks: I, job: F) -> Result<()>
where
    I: Iterator<Item = T>,
    T: Send,
    F: Fn(T) -> Result<()> + Sync + Send,
{
    use rayon::prelude::*;
    let items: Vec<T> = blocks.collect();
    items.into_par_iter().try_for_each(job)
}

#[cfg(not(feature = "std"))]
fn run_blocks<I, T, F>(blocks: I, job: F) -> Result<()>
where
    I: Iterator<Item = T>,
    F: Fn(T) -> Result<()>,
{
    for b in blocks {
        job(b)?;
    }
    Ok(())
}
