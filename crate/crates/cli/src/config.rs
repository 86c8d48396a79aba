//! Strictly parsed run configurations.
//!
//! Each subcommand reads an optional JSON file into its config struct; flags
//! given on the command line then override individual fields. Unknown keys
//! are rejected.

use linprobit::bench::{default_sigma_grid, CvPlan, IngestionSpec, BENCH_ESTIMATORS};
use linprobit::analysis::default_snr_grid;
use linprobit::estimators::{EstimatorId, SolverConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Negative-control hooks for `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Sabotage {
    /// Scale the E matrix used by the closed-form MSE check.
    EMatrixScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seed: u64,
    pub trials: usize,
    pub sigma_x_sq: f64,
    /// `[M, N]` pairs.
    pub sizes: Vec<[usize; 2]>,
    pub snr_grid_db: Vec<f64>,
    pub estimators: Vec<EstimatorId>,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            sigma_x_sq: 1.0,
            sizes: [10, 50, 200]
                .iter()
                .flat_map(|&m| [5, 20].map(|n| [m, n]))
                .collect(),
            snr_grid_db: default_snr_grid(),
            estimators: EstimatorId::ALL.to_vec(),
            solver: SolverConfig::desk(),
            output: None,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub path: PathBuf,
    /// Falls back to a sidecar `<path>.json` (same stem), then to the command-level spec.
    #[serde(default)]
    pub spec: Option<IngestionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub datasets: Vec<DatasetEntry>,
    pub spec: Option<IngestionSpec>,
    pub estimators: Vec<EstimatorId>,
    pub plan: CvPlan,
    pub grid: Vec<f64>,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            spec: None,
            estimators: BENCH_ESTIMATORS.to_vec(),
            plan: CvPlan::default(),
            grid: default_sigma_grid(),
            solver: SolverConfig::desk(),
            output: None,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub estimator: EstimatorId,
    pub sigma_x_sq: f64,
    pub sigma_w_sq: f64,
    pub smoothing: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorId::Lmmse,
            sigma_x_sq: 1.0,
            sigma_w_sq: 1.0,
            smoothing: 0.0,
            seed: 0,
            solver: SolverConfig::default(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Overrides the Monte-Carlo sample count of every check.
    pub trials: Option<usize>,
    pub sabotage: Option<Sabotage>,
}

/// Any command's configuration, tagged by command name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunConfig {
    Sweep(SweepConfig),
    Bench(BenchConfig),
    Estimate(EstimateConfig),
    Verify(VerifyConfig),
}

/// Reads a JSON config, or returns the default when `path` is `None`.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorId>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<EstimatorId>().map_err(CliError::config))
        .collect()
}

pub fn parse_reals(list: &str, what: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::config(format!("{what}: `{s}` is not a number")))
        })
        .collect()
}

/// Parses `10x5,50x20` into `[M, N]` pairs.
pub fn parse_sizes(list: &str) -> Result<Vec<[usize; 2]>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let bad = || CliError::config(format!("size `{s}` is not of the form MxN"));
            let (m, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
            Ok([m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_configs_round_trip() {
        let configs = [
            RunConfig::Sweep(SweepConfig::default()),
            RunConfig::Bench(BenchConfig {
                datasets: vec![DatasetEntry {
                    path: "data/SAheart.csv".into(),
                    spec: Some(IngestionSpec::new("chd")),
                }],
                ..BenchConfig::default()
            }),
            RunConfig::Estimate(EstimateConfig::default()),
            RunConfig::Verify(VerifyConfig {
                seed: 3,
                trials: Some(100),
                sabotage: Some(Sabotage::EMatrixScale),
            }),
        ];
        for c in configs {
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        }
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = serde_json::from_str::<SweepConfig>(r#"{"trials": 5, "folds": 5}"#).unwrap_err();
        assert!(err.to_string().contains("folds"));
        let err = serde_json::from_str::<SweepConfig>(r#"{"solver": {"max_iters": 5}}"#).unwrap_err();
        assert!(err.to_string().contains("max_iters"));
    }

    #[test]
    fn sweep_defaults_cover_six_configurations() {
        let c = SweepConfig::default();
        assert_eq!(c.sizes.len(), 6);
        assert_eq!((c.solver.gibbs_samples, c.solver.gibbs_burn_in), (5_000, 2_000));
        assert_eq!(c.trials, 100);
    }

    #[test]
    fn list_parsers() {
        assert_eq!(parse_sizes("10x5, 50X20").unwrap(), vec![[10, 5], [50, 20]]);
        assert!(parse_sizes("10-5").is_err());
        assert_eq!(parse_reals("-10,0,10", "grid").unwrap(), vec![-10.0, 0.0, 10.0]);
        assert!(parse_reals("a", "grid").is_err());
        assert_eq!(parse_estimators("lmmse,PM").unwrap(), vec![EstimatorId::Lmmse, EstimatorId::Pm]);
        assert!(parse_estimators("lmmse,xyz").is_err());
    }

    proptest::proptest! {
        #[test]
        fn sizes_round_trip(pairs in proptest::collection::vec((1usize..10_000, 1usize..500), 1..8)) {
            let text: Vec<String> = pairs.iter().map(|(m, n)| format!("{m}x{n}")).collect();
            let parsed = parse_sizes(&text.join(",")).unwrap();
            let expected: Vec<[usize; 2]> = pairs.iter().map(|&(m, n)| [m, n]).collect();
            proptest::prop_assert_eq!(parsed, expected);
        }
    }
}
