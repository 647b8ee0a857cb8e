//! Flat `key = value` experiment configuration.
//!
//! The format is deliberately primitive: UTF-8 lines, one `key = value`
//! pair per line, `#` starts a comment, blank lines are ignored. Unknown
//! keys are rejected so typos fail loudly. `streamgp --help` documents the
//! full key set.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use streamgp_core::hippo::{BasisFamily, Scheme};
use streamgp_core::kernels::KernelVariant;
use streamgp_core::multidim::OrderingStrategy;
use streamgp_core::online::OnlineMethod;

/// Which model an experiment runs (the online methods plus the exact-GP
/// reference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Full GP on all data seen so far (gold standard, cubic cost).
    ExactGp,
    /// One of the streaming methods.
    Online(OnlineMethod),
}

impl Method {
    /// Name as written in config files.
    pub fn name(self) -> &'static str {
        match self {
            Method::ExactGp => "exact-gp",
            Method::Online(m) => m.name(),
        }
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// CSV file on disk.
    Path(PathBuf),
    /// Built-in generator: `synth:<kind>`.
    Synthetic(SynthKind),
}

/// Built-in dataset generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Chirp: `y = sin(2 pi f(t) t) + eps` with slowly rising frequency on
    /// `(0, 1]`.
    SineDrift,
    /// Piecewise-constant levels with jumps, plus noise.
    Piecewise,
    /// Two Gaussian input clusters in 2-D with a smooth response.
    TwoCluster2d,
}

impl SynthKind {
    /// Parse a generator name.
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sine-drift" => SynthKind::SineDrift,
            "piecewise" => SynthKind::Piecewise,
            "two-cluster-2d" => SynthKind::TwoCluster2d,
            other => bail!("unknown synthetic kind {other:?} (sine-drift, piecewise, two-cluster-2d)"),
        })
    }

    /// Name for reports.
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::SineDrift => "sine-drift",
            SynthKind::Piecewise => "piecewise",
            SynthKind::TwoCluster2d => "two-cluster-2d",
        }
    }

    /// Input dimension of the generated data.
    pub fn input_dim(self) -> usize {
        match self {
            SynthKind::TwoCluster2d => 2,
            _ => 1,
        }
    }
}

/// How the data stream treats its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// 1-D inputs are the time axis; tasks are contiguous time intervals.
    Timeseries,
    /// Multidimensional inputs get pseudo-times from an ordering.
    Multidim,
}

/// Sort applied to the whole dataset before splitting it into sequential
/// tasks (multidim mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamSort {
    /// Keep the file order.
    None,
    /// Ascending by one input dimension.
    ByDimension(usize),
    /// Ascending by distance from the origin.
    ByL2,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Data source.
    pub dataset: DatasetSpec,
    /// Stream interpretation.
    pub mode: StreamMode,
    /// Model to run.
    pub method: Method,
    /// Kernel family.
    pub kernel: KernelVariant,
    /// Inducing count (basis order for the recurrent model).
    pub m: usize,
    /// Basis family for the recurrent model.
    pub basis: BasisName,
    /// Window length for the windowed bases; `None` means one task span.
    pub window: Option<f64>,
    /// Recurrence step; `None` means (total span) / 1000.
    pub dt: Option<f64>,
    /// Discretization scheme.
    pub scheme: Scheme,
    /// Monte-Carlo feature count.
    pub rff_samples: usize,
    /// Number of sequential tasks.
    pub n_tasks: usize,
    /// Within-task ordering for multidim mode.
    pub ordering: OrderingName,
    /// Whole-stream sort for multidim mode.
    pub stream_sort: StreamSort,
    /// Recurrence stride over ordered points.
    pub stride: usize,
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    /// Report output path.
    pub out: PathBuf,
    /// Points for synthetic datasets.
    pub synth_n: usize,
    /// Observation-noise standard deviation for synthetic datasets.
    pub synth_noise_sd: f64,
    /// Transport damping for the recurrent model's updates (relative to
    /// the prior diagonal).
    pub transport_damping: f64,
    /// Gradient-ascent iterations for the first-task hyperparameter fit.
    pub fit_iters: usize,
    /// Record wall-clock milliseconds (off makes output byte-reproducible).
    pub wall_clock: bool,
    /// Oracle-check tolerances.
    pub oracle: OracleTolerances,
}

/// Basis family name plus deferred window resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisName {
    /// Uniform measure over the whole past.
    LegS,
    /// Sliding uniform window, Legendre basis.
    LegT,
    /// Exponential-decay measure, Laguerre basis.
    LagT,
    /// Sliding window, Fourier basis.
    FouT,
}

impl BasisName {
    /// Resolve into an operator family given the window length.
    pub fn family(self, window: f64) -> BasisFamily {
        match self {
            BasisName::LegS => BasisFamily::LegS,
            BasisName::LegT => BasisFamily::LegT { window },
            BasisName::LagT => BasisFamily::LagT,
            BasisName::FouT => BasisFamily::FouT { window },
        }
    }
}

/// Within-task ordering name (the seed is filled in at run time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingName {
    /// Seeded shuffle.
    Random,
    /// Greedy kernel-similarity maximization.
    KMax,
    /// Greedy kernel-similarity minimization.
    KMin,
    /// Ascending by one dimension.
    ByDimension(usize),
    /// Ascending by distance from origin.
    ByL2,
}

impl OrderingName {
    /// Resolve into a strategy, deriving the shuffle seed.
    pub fn strategy(self, seed: u64) -> OrderingStrategy {
        match self {
            OrderingName::Random => OrderingStrategy::Random { seed },
            OrderingName::KMax => OrderingStrategy::KMax,
            OrderingName::KMin => OrderingStrategy::KMin,
            OrderingName::ByDimension(d) => OrderingStrategy::ByDimension(d),
            OrderingName::ByL2 => OrderingStrategy::ByL2,
        }
    }
}

/// Thresholds used by `oracle-check`.
#[derive(Debug, Clone)]
pub struct OracleTolerances {
    /// Step size for the oracle integrations.
    pub dt: f64,
    /// Coefficient error bound, forward Euler.
    pub tol_coeff_euler: f64,
    /// Coefficient error bound, bilinear.
    pub tol_coeff_bilinear: f64,
    /// `K_fu` row error bound.
    pub tol_kfu: f64,
    /// `K_uu` relative Frobenius error bound.
    pub tol_kuu: f64,
    /// Streaming-vs-batch predictive tolerance.
    pub tol_stream: f64,
    /// Feature count for the `K_uu` check.
    pub kuu_samples: usize,
}

impl Default for OracleTolerances {
    fn default() -> Self {
        OracleTolerances {
            dt: 1e-3,
            tol_coeff_euler: 1e-2,
            tol_coeff_bilinear: 1e-4,
            tol_kfu: 1e-2,
            tol_kuu: 0.05,
            tol_stream: 1e-6,
            kuu_samples: 20_000,
        }
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = match &self.dataset {
            DatasetSpec::Path(p) => p.display().to_string(),
            DatasetSpec::Synthetic(k) => format!("synth:{}", k.name()),
        };
        write!(
            f,
            "{} on {} ({} tasks, m = {}, seed = {})",
            self.method.name(),
            data,
            self.n_tasks,
            self.m,
            self.seed
        )
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic(SynthKind::SineDrift),
            mode: StreamMode::Timeseries,
            method: Method::Online(OnlineMethod::Ohsgpr),
            kernel: KernelVariant::ArdRbf,
            m: 50,
            basis: BasisName::LegS,
            window: None,
            dt: None,
            scheme: Scheme::Bilinear,
            rff_samples: 1000,
            n_tasks: 10,
            ordering: OrderingName::KMax,
            stream_sort: StreamSort::ByDimension(0),
            stride: 1,
            seed: 0,
            out: PathBuf::from("experiment.csv"),
            synth_n: 2000,
            synth_noise_sd: 0.1,
            transport_damping: 0.0,
            fit_iters: 60,
            wall_clock: true,
            oracle: OracleTolerances::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_str_content(&text)
    }

    /// Parse config text.
    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got {raw:?}", lineno + 1);
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        if cfg.stride == 0 {
            bail!("stride must be at least 1");
        }
        if cfg.m == 0 || cfg.n_tasks == 0 || cfg.rff_samples == 0 || cfg.synth_n == 0 {
            bail!("counts must be positive");
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = if let Some(kind) = value.strip_prefix("synth:") {
                    DatasetSpec::Synthetic(SynthKind::parse(kind)?)
                } else {
                    DatasetSpec::Path(PathBuf::from(value))
                };
            }
            "mode" => {
                self.mode = match value {
                    "timeseries" => StreamMode::Timeseries,
                    "multidim" => StreamMode::Multidim,
                    other => bail!("unknown mode {other:?} (timeseries, multidim)"),
                };
            }
            "method" => {
                self.method = match value {
                    "exact-gp" => Method::ExactGp,
                    "ohsgpr" => Method::Online(OnlineMethod::Ohsgpr),
                    "osgpr-fixedz" => Method::Online(OnlineMethod::OsgprFixedZ),
                    "osgpr-resamplez" => Method::Online(OnlineMethod::OsgprResampleZ),
                    "ovc-pivchol" => Method::Online(OnlineMethod::OvcPivChol),
                    other => bail!(
                        "unknown method {other:?} (exact-gp, ohsgpr, osgpr-fixedz, osgpr-resamplez, ovc-pivchol)"
                    ),
                };
            }
            "kernel" => {
                self.kernel = match value {
                    "ard-rbf" => KernelVariant::ArdRbf,
                    "matern52" => KernelVariant::Matern52,
                    other => bail!("unknown kernel {other:?} (ard-rbf, matern52)"),
                };
            }
            "m" => self.m = parse_num(value)?,
            "basis" => {
                self.basis = match value {
                    "legs" => BasisName::LegS,
                    "legt" => BasisName::LegT,
                    "lagt" => BasisName::LagT,
                    "fout" => BasisName::FouT,
                    other => bail!("unknown basis {other:?} (legs, legt, lagt, fout)"),
                };
            }
            "window" => self.window = Some(parse_pos(value)?),
            "dt" => self.dt = Some(parse_pos(value)?),
            "scheme" => {
                self.scheme = match value {
                    "euler" => Scheme::ForwardEuler,
                    "bilinear" => Scheme::Bilinear,
                    other => bail!("unknown scheme {other:?} (euler, bilinear)"),
                };
            }
            "rff_samples" => self.rff_samples = parse_num(value)?,
            "n_tasks" => self.n_tasks = parse_num(value)?,
            "ordering" => {
                self.ordering = if let Some(d) = value.strip_prefix("by-dimension:") {
                    OrderingName::ByDimension(parse_num(d)?)
                } else {
                    match value {
                        "random" => OrderingName::Random,
                        "k-max" => OrderingName::KMax,
                        "k-min" => OrderingName::KMin,
                        "by-l2" => OrderingName::ByL2,
                        other => bail!(
                            "unknown ordering {other:?} (random, k-max, k-min, by-dimension:<d>, by-l2)"
                        ),
                    }
                };
            }
            "stream_sort" => {
                self.stream_sort = if let Some(d) = value.strip_prefix("by-dimension:") {
                    StreamSort::ByDimension(parse_num(d)?)
                } else {
                    match value {
                        "none" => StreamSort::None,
                        "by-l2" => StreamSort::ByL2,
                        other => bail!(
                            "unknown stream_sort {other:?} (none, by-dimension:<d>, by-l2)"
                        ),
                    }
                };
            }
            "stride" => self.stride = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "out" => self.out = PathBuf::from(value),
            "synth_n" => self.synth_n = parse_num(value)?,
            "synth_noise_sd" => self.synth_noise_sd = parse_nonneg(value)?,
            "transport_damping" => self.transport_damping = parse_nonneg(value)?,
            "fit_iters" => self.fit_iters = parse_num(value)?,
            "wall_clock" => {
                self.wall_clock = match value {
                    "on" => true,
                    "off" => false,
                    other => bail!("wall_clock must be on or off, got {other:?}"),
                };
            }
            "oc_dt" => self.oracle.dt = parse_pos(value)?,
            "oc_tol_coeff_euler" => self.oracle.tol_coeff_euler = parse_pos(value)?,
            "oc_tol_coeff_bilinear" => self.oracle.tol_coeff_bilinear = parse_pos(value)?,
            "oc_tol_kfu" => self.oracle.tol_kfu = parse_pos(value)?,
            "oc_tol_kuu" => self.oracle.tol_kuu = parse_pos(value)?,
            "oc_tol_stream" => self.oracle.tol_stream = parse_pos(value)?,
            "oc_kuu_samples" => self.oracle.kuu_samples = parse_num(value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    value
        .parse::<T>()
        .with_context(|| format!("cannot parse {value:?}"))
}

fn parse_pos(value: &str) -> Result<f64> {
    let v: f64 = parse_num(value)?;
    if !v.is_finite() || v <= 0.0 {
        bail!("expected a positive number, got {value:?}");
    }
    Ok(v)
}

fn parse_nonneg(value: &str) -> Result<f64> {
    let v: f64 = parse_num(value)?;
    if !v.is_finite() || v < 0.0 {
        bail!("expected a non-negative number, got {value:?}");
    }
    Ok(v)
}

/// The config keys documented for `--help`.
pub const CONFIG_HELP: &str = "\
Config file format: UTF-8 `key = value` lines, `#` comments. Keys:
  dataset           csv path, or synth:sine-drift | synth:piecewise | synth:two-cluster-2d
  mode              timeseries | multidim                        [timeseries]
  method            exact-gp | ohsgpr | osgpr-fixedz | osgpr-resamplez | ovc-pivchol  [ohsgpr]
  kernel            ard-rbf | matern52                           [ard-rbf]
  m                 inducing count / basis order                 [50]
  basis             legs | legt | lagt | fout                    [legs]
  window            window length for legt/fout                  [one task span]
  dt                recurrence step                              [total span / 1000]
  scheme            euler | bilinear                             [bilinear]
  rff_samples       Monte-Carlo feature count                    [1000]
  n_tasks           sequential tasks                             [10]
  ordering          random | k-max | k-min | by-dimension:<d> | by-l2   [k-max]
  stream_sort       none | by-dimension:<d> | by-l2 (multidim)   [by-dimension:0]
  stride            recurrence stride over ordered points        [1]
  seed              master seed                                  [0]
  out               report CSV path                              [experiment.csv]
  synth_n           synthetic dataset size                       [2000]
  synth_noise_sd    synthetic noise standard deviation           [0.1]
  transport_damping damping of the recurrent transport terms     [0]
  fit_iters         hyperparameter fit iterations on task 1      [60]
  wall_clock        on | off (off makes output byte-stable)      [on]
  oc_dt, oc_tol_coeff_euler, oc_tol_coeff_bilinear, oc_tol_kfu,
  oc_tol_kuu, oc_tol_stream, oc_kuu_samples    oracle-check knobs
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let cfg = ExperimentConfig::from_str_content(
            "# comment\nmethod = osgpr-fixedz\nm = 8\nseed = 3\ndt = 0.001\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Online(OnlineMethod::OsgprFixedZ));
        assert_eq!(cfg.m, 8);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dt, Some(0.001));
        assert_eq!(cfg.rff_samples, 1000);
        assert_eq!(cfg.n_tasks, 10);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = ExperimentConfig::from_str_content("no_such_key = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("unknown config key"));
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        assert!(ExperimentConfig::from_str_content("just words\n").is_err());
        assert!(ExperimentConfig::from_str_content("dt = -1\n").is_err());
        assert!(ExperimentConfig::from_str_content("m = 0\n").is_err());
        assert!(ExperimentConfig::from_str_content("method = nope\n").is_err());
    }

    #[test]
    fn synth_dataset_parses() {
        let cfg = ExperimentConfig::from_str_content("dataset = synth:piecewise\n").unwrap();
        assert_eq!(cfg.dataset, DatasetSpec::Synthetic(SynthKind::Piecewise));
        let cfg = ExperimentConfig::from_str_content("dataset = data/solar.csv\n").unwrap();
        assert!(matches!(cfg.dataset, DatasetSpec::Path(_)));
    }
}
