//! Dataset ingestion, synthetic generators and CSV emission.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use streamgp_core::gp::DataBatch;
use streamgp_core::metrics::MetricsReport;

use crate::config::{StreamMode, SynthKind};

/// Load a data CSV.
///
/// Time-series mode expects a `t,y` header with ascending `t`; multidim
/// mode expects `x1,..,xd,y`. Parse problems are reported with their line
/// number; non-finite values and unsorted times are rejected.
pub fn load_csv(path: &Path, mode: StreamMode) -> Result<DataBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers = reader.headers().context("missing header row")?.clone();
    let d = match mode {
        StreamMode::Timeseries => {
            if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "y" {
                bail!("time-series CSV needs the header `t,y`, found {headers:?}");
            }
            1
        }
        StreamMode::Multidim => {
            if headers.len() < 2 || &headers[headers.len() - 1] != "y" {
                bail!("multidim CSV needs the header `x1,..,xd,y`, found {headers:?}");
            }
            for (i, h) in headers.iter().take(headers.len() - 1).enumerate() {
                if h != format!("x{}", i + 1).as_str() {
                    bail!("multidim CSV needs the header `x1,..,xd,y`, found {headers:?}");
                }
            }
            headers.len() - 1
        }
    };

    let mut fields: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let lineno = i + 2; // the header is line 1
        let record = record.with_context(|| format!("line {lineno}: malformed CSV"))?;
        if record.len() != d + 1 {
            bail!(
                "line {lineno}: expected {} fields, found {}",
                d + 1,
                record.len()
            );
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("line {lineno}: cannot parse {field:?} as a number"))?;
            if !v.is_finite() {
                bail!("line {lineno}: non-finite value {field:?}");
            }
            fields.push(v);
        }
        rows += 1;
    }
    let x = DMatrix::from_fn(rows, d, |r, c| fields[r * (d + 1) + c]);
    let y = DVector::from_fn(rows, |r, _| fields[r * (d + 1) + d]);

    if mode == StreamMode::Timeseries {
        for r in 1..rows {
            if x[(r, 0)] < x[(r - 1, 0)] {
                bail!(
                    "line {}: time {} is smaller than the previous time {}",
                    r + 2,
                    x[(r, 0)],
                    x[(r - 1, 0)]
                );
            }
        }
    }
    DataBatch::new(x, y).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Write a batch in the canonical CSV layout for its dimension.
pub fn write_csv(path: &Path, batch: &DataBatch) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let d = batch.x.ncols();
    if d == 1 {
        writer.write_record(["t", "y"])?;
    } else {
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("y".to_string());
        writer.write_record(&header)?;
    }
    for i in 0..batch.len() {
        let mut record: Vec<String> = (0..d).map(|j| format!("{}", batch.x[(i, j)])).collect();
        record.push(format!("{}", batch.y[i]));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a metrics report with the stable schema
/// `task_learned,task_eval,rmse,nlpd,wall_ms`.
pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record(["task_learned", "task_eval", "rmse", "nlpd", "wall_ms"])?;
    for row in &report.rows {
        writer.write_record(&[
            row.task_learned.to_string(),
            row.task_eval.to_string(),
            format!("{}", row.rmse),
            format!("{}", row.nlpd),
            row.wall_ms.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn piecewise_levels(seed: u64) -> [f64; 5] {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    [(); 5].map(|_| rng.gen_range(-2.0..2.0))
}

/// Noiseless target of a synthetic generator (the piecewise levels depend
/// on the seed).
pub fn synthetic_truth(kind: SynthKind, x: &[f64], seed: u64) -> f64 {
    match kind {
        SynthKind::SineDrift => {
            let t = x[0];
            let f = 3.0 + 3.0 * t;
            (2.0 * std::f64::consts::PI * f * t).sin()
        }
        SynthKind::Piecewise => {
            let levels = piecewise_levels(seed);
            let seg = ((x[0] * 5.0).ceil() as usize).clamp(1, 5) - 1;
            levels[seg]
        }
        SynthKind::TwoCluster2d => x[0] - 0.5 * x[1] + (2.0 * x[0]).sin(),
    }
}

/// Deterministic synthetic dataset on `(0, 1]` (1-D kinds) or around two
/// 2-D cluster centers.
pub fn generate_synthetic(
    kind: SynthKind,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<DataBatch> {
    if n == 0 {
        bail!("need at least one point");
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match kind {
        SynthKind::SineDrift | SynthKind::Piecewise => {
            let x = DMatrix::from_fn(n, 1, |i, _| (i + 1) as f64 / n as f64);
            let y = DVector::from_fn(n, |i, _| {
                let noise: f64 = rng.sample(StandardNormal);
                synthetic_truth(kind, &[x[(i, 0)]], seed) + noise_sd * noise
            });
            DataBatch::new(x, y).map_err(|e| anyhow::anyhow!("{e}"))
        }
        SynthKind::TwoCluster2d => {
            // Clusters interleave in arrival order; sort (or order) them
            // into a stream downstream.
            let mut x = DMatrix::from_fn(n, 2, |i, _| if i % 2 == 0 { 0.0 } else { 3.0 });
            for i in 0..n {
                for j in 0..2 {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(i, j)] += 0.3 * z;
                }
            }
            let y = DVector::from_fn(n, |i, _| {
                let noise: f64 = rng.sample(StandardNormal);
                synthetic_truth(kind, &[x[(i, 0)], x[(i, 1)]], seed) + noise_sd * noise
            });
            DataBatch::new(x, y).map_err(|e| anyhow::anyhow!("{e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn synthetic_is_seed_deterministic() {
        let a = generate_synthetic(SynthKind::SineDrift, 50, 0.1, 7).unwrap();
        let b = generate_synthetic(SynthKind::SineDrift, 50, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(SynthKind::SineDrift, 50, 0.1, 8).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn noiseless_sine_drift_matches_truth() {
        let batch = generate_synthetic(SynthKind::SineDrift, 100, 0.0, 3).unwrap();
        for i in 0..100 {
            let t = batch.x[(i, 0)];
            assert_eq!(batch.y[i], synthetic_truth(SynthKind::SineDrift, &[t], 3));
        }
    }

    #[test]
    fn noise_level_matches_request() {
        let sd = 0.3;
        let batch = generate_synthetic(SynthKind::SineDrift, 10_000, sd, 1).unwrap();
        let mut acc = 0.0;
        for i in 0..batch.len() {
            let t = batch.x[(i, 0)];
            let r = batch.y[i] - synthetic_truth(SynthKind::SineDrift, &[t], 1);
            acc += r * r;
        }
        let emp = acc / batch.len() as f64;
        assert!(
            (emp - sd * sd).abs() <= 0.1 * sd * sd,
            "empirical noise variance {emp} vs {}",
            sd * sd
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let batch = generate_synthetic(SynthKind::SineDrift, 37, 0.2, 5).unwrap();
        write_csv(&path, &batch).unwrap();
        let loaded = load_csv(&path, StreamMode::Timeseries).unwrap();
        assert_eq!(batch.x, loaded.x);
        assert_eq!(batch.y, loaded.y);

        let batch2 = generate_synthetic(SynthKind::TwoCluster2d, 20, 0.1, 5).unwrap();
        let path2 = dir.path().join("d2.csv");
        write_csv(&path2, &batch2).unwrap();
        let loaded2 = load_csv(&path2, StreamMode::Multidim).unwrap();
        assert_eq!(batch2.x, loaded2.x);
        assert_eq!(batch2.y, loaded2.y);
    }

    #[test]
    fn unsorted_times_name_the_offending_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,y\n0.1,1.0\n0.3,2.0\n0.2,3.0\n").unwrap();
        let err = load_csv(&path, StreamMode::Timeseries).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 4"), "message: {msg}");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,y\n0.1,1.0\n0.2,abc\n").unwrap();
        let err = load_csv(&path, StreamMode::Timeseries).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3"), "message: {msg}");
        std::fs::write(&path, "t,y\n0.1,NaN\n").unwrap();
        assert!(load_csv(&path, StreamMode::Timeseries).is_err());
    }

    #[test]
    fn well_formed_file_loads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ok.csv");
        std::fs::write(&path, "t,y\n0.1,1.0\n0.2,2.0\n0.3,3.0\n").unwrap();
        let batch = load_csv(&path, StreamMode::Timeseries).unwrap();
        assert_eq!(batch.len(), 3);
    }
}
