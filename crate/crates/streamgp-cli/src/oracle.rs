//! The `oracle-check` suite: quadrature-vs-recurrence and
//! streaming-vs-batch comparisons with configurable thresholds, plus the
//! direct-ODE stiffness record.

use anyhow::{anyhow, Result};
use nalgebra::DVector;

use streamgp_core::gp::{self, DataBatch};
use streamgp_core::hippo::{
    quadrature_coefficients, BasisFamily, CoefficientState, HippoOperator, Scheme,
};
use streamgp_core::interdomain::{
    backfill_kfu, quadrature_kfu, quadrature_kuu, step_kuu_direct, FeatureState,
    KuuDirectOdeState,
};
use streamgp_core::kernels::{points_1d, sample_frequencies, Kernel};
use streamgp_core::linalg::rel_frobenius;
use streamgp_core::online::{split_stream, OnlineMethod, OnlineModelState};

use crate::config::ExperimentConfig;

/// One oracle comparison.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    /// Short name.
    pub name: &'static str,
    /// Measured quantity.
    pub measured: f64,
    /// What it is compared against.
    pub requirement: String,
    /// Whether the requirement held.
    pub pass: bool,
}

/// Outcome of the whole suite.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    /// All checks in execution order.
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    /// Whether every check passed.
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Render the pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>14} {:<28} result\n",
            "check", "measured", "requirement"
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{:<24} {:>14.6e} {:<28} {}\n",
                c.name,
                c.measured,
                c.requirement,
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn smooth_signal(x: f64) -> f64 {
    (2.0 * x).sin() + 0.3 * (5.0 * x).cos()
}

fn run_coefficients(op: &HippoOperator, scheme: Scheme, dt: f64, t_end: f64) -> Result<DVector<f64>> {
    let steps = (t_end / dt).round() as usize;
    let mut state = CoefficientState::new(op, scheme, dt).map_err(|e| anyhow!("{e}"))?;
    for k in 1..=steps {
        state = state
            .step(op, smooth_signal(k as f64 * dt))
            .map_err(|e| anyhow!("{e}"))?;
    }
    Ok(state.coeffs)
}

/// Run the oracle suite with the thresholds from `config.oracle`.
pub fn oracle_check(config: &ExperimentConfig) -> Result<OracleReport> {
    let tol = &config.oracle;
    let mut report = OracleReport::default();
    let op6 = HippoOperator::new(BasisFamily::LegS, 6).map_err(|e| anyhow!("{e}"))?;
    let reference = quadrature_coefficients(smooth_signal, &op6, 1.0, 128).map_err(|e| anyhow!("{e}"))?;

    // Coefficient recurrences against quadrature, both schemes.
    let coeff_err = |scheme: Scheme, dt: f64| -> Result<f64> {
        Ok((run_coefficients(&op6, scheme, dt, 1.0)? - &reference).amax())
    };
    let euler_err = coeff_err(Scheme::ForwardEuler, tol.dt)?;
    report.checks.push(OracleCheck {
        name: "coeff-euler",
        measured: euler_err,
        requirement: format!("<= {:.1e}", tol.tol_coeff_euler),
        pass: euler_err <= tol.tol_coeff_euler,
    });
    let bilinear_err = coeff_err(Scheme::Bilinear, tol.dt)?;
    report.checks.push(OracleCheck {
        name: "coeff-bilinear",
        measured: bilinear_err,
        requirement: format!("<= {:.1e}", tol.tol_coeff_bilinear),
        pass: bilinear_err <= tol.tol_coeff_bilinear,
    });

    // Error-ratio consistency with the scheme orders (refinement by 2).
    let euler_ratio = coeff_err(Scheme::ForwardEuler, 2.0 * tol.dt)? / euler_err.max(1e-300);
    report.checks.push(OracleCheck {
        name: "order-euler",
        measured: euler_ratio,
        requirement: "in [1.4, 2.6]".to_string(),
        pass: (1.4..=2.6).contains(&euler_ratio),
    });
    let bilinear_ratio = coeff_err(Scheme::Bilinear, 2.0 * tol.dt)? / bilinear_err.max(1e-300);
    report.checks.push(OracleCheck {
        name: "order-bilinear",
        measured: bilinear_ratio,
        requirement: "in [2.8, 5.2]".to_string(),
        pass: (2.8..=5.2).contains(&bilinear_ratio),
    });

    // K_fu row against quadrature.
    let op4 = HippoOperator::new(BasisFamily::LegS, 4).map_err(|e| anyhow!("{e}"))?;
    let kernel = Kernel::rbf_1d(1.0, 1.0);
    let row = backfill_kfu(&[0.5], &op4, &kernel, 1.0, tol.dt, Scheme::ForwardEuler)
        .map_err(|e| anyhow!("{e}"))?;
    let row_ref = quadrature_kfu(&kernel, &[0.5], &op4, 1.0, 96).map_err(|e| anyhow!("{e}"))?;
    let kfu_err = (row.row - row_ref).amax();
    report.checks.push(OracleCheck {
        name: "kfu-recurrence",
        measured: kfu_err,
        requirement: format!("<= {:.1e}", tol.tol_kfu),
        pass: kfu_err <= tol.tol_kfu,
    });

    // Feature-assembled K_uu against nested quadrature.
    let kernel_half = Kernel::rbf_1d(1.0, 0.5);
    let kuu_ref = quadrature_kuu(&kernel_half, &op6, 1.0, 96).map_err(|e| anyhow!("{e}"))?;
    let draws =
        sample_frequencies(&kernel_half, tol.kuu_samples, config.seed).map_err(|e| anyhow!("{e}"))?;
    let mut fs = FeatureState::new(&op6, draws);
    fs.advance_to(&op6, 1.0, tol.dt, Scheme::ForwardEuler)
        .map_err(|e| anyhow!("{e}"))?;
    let kuu_err = rel_frobenius(&fs.assemble_kuu(&kernel_half), &kuu_ref);
    report.checks.push(OracleCheck {
        name: "kuu-rff",
        measured: kuu_err,
        requirement: format!("<= {:.1e}", tol.tol_kuu),
        pass: kuu_err <= tol.tol_kuu,
    });

    // Streaming fixed-structure model against the batch solution.
    let stream_err = streaming_vs_batch()?;
    report.checks.push(OracleCheck {
        name: "stream-vs-batch",
        measured: stream_err,
        requirement: format!("<= {:.1e}", tol.tol_stream),
        pass: stream_err <= tol.tol_stream,
    });

    // Direct matrix-ODE stiffness record: at a coarse step the explicit
    // Lyapunov recurrence must sit farther from quadrature than the
    // feature path.
    let (direct_err, rff_err) = direct_ode_comparison(config.seed)?;
    report.checks.push(OracleCheck {
        name: "direct-ode-caveat",
        measured: direct_err,
        requirement: format!("> RFF path ({rff_err:.3e})"),
        pass: direct_err > rff_err,
    });

    Ok(report)
}

fn streaming_vs_batch() -> Result<f64> {
    let kernel = Kernel::rbf_1d(1.0, 0.3);
    let noise = streamgp_core::kernels::NoiseModel::new(0.05).map_err(|e| anyhow!("{e}"))?;
    let n = 60;
    let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64 * 2.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
    let data = DataBatch::new(points_1d(&xs), DVector::from_row_slice(&ys))
        .map_err(|e| anyhow!("{e}"))?;
    let stream = split_stream(&data, 4).map_err(|e| anyhow!("{e}"))?;
    let z = points_1d(&[0.1, 0.55, 1.0, 1.45, 1.9]);

    let mut state =
        OnlineModelState::new_baseline(OnlineMethod::OsgprFixedZ, kernel.clone(), noise, z.clone(), 0)
            .map_err(|e| anyhow!("{e}"))?;
    for task in &stream.tasks {
        state.update(task).map_err(|e| anyhow!("{e}"))?;
    }
    let mut kuu = kernel.matrix(&z, &z).map_err(|e| anyhow!("{e}"))?;
    for i in 0..kuu.nrows() {
        kuu[(i, i)] += kernel.jitter();
    }
    let kuf = kernel.matrix(&z, &data.x).map_err(|e| anyhow!("{e}"))?;
    let q = gp::sgpr_optimal_q(&kuu, &kuf, &data.y, &noise).map_err(|e| anyhow!("{e}"))?;
    let stars = points_1d(&[0.05, 0.5, 1.0, 1.5, 1.95]);
    let k_star_u = kernel.matrix(&stars, &z).map_err(|e| anyhow!("{e}"))?;
    let kff = DVector::from_element(5, kernel.output_scale_sq);
    let batch = gp::svgp_predict(&q, &kuu, &k_star_u, &kff, None).map_err(|e| anyhow!("{e}"))?;
    let online = state.predict(&stars, false).map_err(|e| anyhow!("{e}"))?;
    let mean_err = (batch.mean - online.mean).amax();
    let var_err = (batch.variance - online.variance).amax();
    Ok(mean_err.max(var_err))
}

fn direct_ode_comparison(seed: u64) -> Result<(f64, f64)> {
    let op = HippoOperator::new(BasisFamily::LegS, 8).map_err(|e| anyhow!("{e}"))?;
    let kernel = Kernel::rbf_1d(1.0, 0.5);
    let dt = 1e-2;
    let oracle = quadrature_kuu(&kernel, &op, 1.0, 96).map_err(|e| anyhow!("{e}"))?;

    let mut direct = KuuDirectOdeState::new(&op).map_err(|e| anyhow!("{e}"))?;
    while direct.end_time < 1.0 - 1e-12 {
        direct = step_kuu_direct(&direct, &op, &kernel, dt).map_err(|e| anyhow!("{e}"))?;
    }
    let direct_err = rel_frobenius(&direct.kuu, &oracle);

    let draws = sample_frequencies(&kernel, 20_000, seed).map_err(|e| anyhow!("{e}"))?;
    let mut fs = FeatureState::new(&op, draws);
    fs.advance_to(&op, 1.0, dt, Scheme::ForwardEuler)
        .map_err(|e| anyhow!("{e}"))?;
    let rff_err = rel_frobenius(&fs.assemble_kuu(&kernel), &oracle);
    Ok((direct_err, rff_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn default_thresholds_pass() {
        let config = ExperimentConfig::default();
        let report = oracle_check(&config).unwrap();
        assert!(report.all_pass(), "{}", report.table());
    }

    #[test]
    fn coarse_step_fails_the_kfu_check() {
        let config =
            ExperimentConfig::from_str_content("oc_dt = 0.5\noc_kuu_samples = 2000\n").unwrap();
        let report = oracle_check(&config).unwrap();
        let kfu = report.checks.iter().find(|c| c.name == "kfu-recurrence").unwrap();
        assert!(!kfu.pass, "coarse dt unexpectedly passed: {}", report.table());
        assert!(!report.all_pass());
    }
}
