//! Run configuration: a TOML file with sections, every key overridable from
//! the command line as `--set section.key=value`.

use std::path::Path;

use arbdetect_core::lsip::SolverConfig;
use arbdetect_core::market::{MarketBounds, DEFAULT_BOX_UPPER};
use arbdetect_core::train::{GeneratorConfig, Regularization, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of data generation, sampling from chains and evaluation
    /// scenarios. Network initialization uses `train.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub backtest: BacktestConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            generator: GeneratorConfig::default(),
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            backtest: BacktestConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_samples: usize,
    /// Leading samples written to the test split.
    pub n_test: usize,
    /// Layout of samples assembled from option chains.
    pub assets_per_sample: usize,
    pub strikes_per_asset: usize,
    pub box_upper: f64,
    pub bounds: MarketBounds,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_samples: 2000,
            n_test: 400,
            assets_per_sample: 2,
            strikes_per_asset: 4,
            box_upper: DEFAULT_BOX_UPPER,
            bounds: MarketBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenarios_per_sample: usize,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scenarios_per_sample: 200,
            histogram_bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    /// Underlying ids in the asset order the model expects. Empty means
    /// every id in the chain file, sorted.
    pub underlyings: Vec<String>,
    pub strikes_per_asset: usize,
    pub box_upper: f64,
    pub bounds: MarketBounds,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            underlyings: Vec::new(),
            strikes_per_asset: 4,
            box_upper: DEFAULT_BOX_UPPER,
            bounds: MarketBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub lr: f64,
    pub depth: usize,
    pub regularization: Regularization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Hidden width shared by every run.
    pub width: usize,
    /// Penalty weight used by runs with a regularization.
    pub reg_strength: f64,
    pub runs: Vec<SweepRun>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let run = |lr, depth, regularization| SweepRun {
            lr,
            depth,
            regularization,
        };
        SweepConfig {
            width: 1024,
            reg_strength: 1e-6,
            runs: vec![
                run(1e-4, 2, Regularization::None),
                run(1e-4, 3, Regularization::None),
                run(1e-4, 4, Regularization::None),
                run(1e-4, 5, Regularization::None),
                run(1e-4, 10, Regularization::None),
                run(1e-3, 5, Regularization::None),
                run(1e-5, 5, Regularization::None),
                run(1e-4, 5, Regularization::L1),
                run(1e-4, 5, Regularization::L2),
            ],
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Failure::Input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let input = |e: &dyn std::fmt::Display| Failure::Input(format!("config: {e}"));
        self.generator.validate().map_err(|e| input(&e))?;
        self.train.validate().map_err(|e| input(&e))?;
        if self.eval.scenarios_per_sample == 0 || self.eval.histogram_bins == 0 {
            return Err(input(&"eval.scenarios_per_sample and eval.histogram_bins must be at least 1"));
        }
        if self.sweep.width == 0 || self.sweep.runs.iter().any(|r| r.depth == 0 || !(r.lr > 0.0)) {
            return Err(input(&"sweep runs need positive width, depth and learning rate"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal
/// and falls back to a plain string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Input(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Input(format!("override key `{key}` is malformed")));
    }
    let (last, path) = parts.split_last().expect("split yields a part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Input(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
