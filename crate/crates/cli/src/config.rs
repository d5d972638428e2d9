//! Experiment configuration: TOML file, `--section.key=value` overrides,
//! seed derivation and the canonical hash stamped into every output.

use std::fs;
use std::path::{Path, PathBuf};

use lrflow_core::rbm::{HiddenStats, TrainConfig};
use lrflow_core::stack::{DESK_LAYER_SIZES, PAPER_LAYER_SIZES};
use lrflow_core::thermometer::ThermometerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Sections in `--seed` derivation order.
pub const SEEDED_SECTIONS: [&str; 5] = ["mcmc", "rbm", "flow", "stack", "thermometer"];

fn grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    // rounding to two decimals keeps grid points exact, e.g. 0.3 not 0.30000000000000004
    (0..count).map(|k| ((start + k as f64 * step) * 100.0).round() / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    #[serde(rename = "L")]
    pub side: usize,
    pub alpha: f64,
    pub mu: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self { side: 10, alpha: 3.0, mu: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub temps: Vec<f64>,
    /// Lattice sides to sample; empty means `[lattice.L]`.
    pub sizes: Vec<usize>,
    /// Proposals discarded before the first sample; unset means `500 N`.
    pub burn_in: Option<u64>,
    /// Proposals between retained samples; unset means `N`.
    pub stride: Option<u64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self { temps: grid(0.0, 0.1, 141), sizes: Vec::new(), burn_in: None, stride: None, n_samples: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HiddenMode {
    #[default]
    Sampled,
    Expectation,
}

impl From<HiddenMode> for HiddenStats {
    fn from(m: HiddenMode) -> Self {
        match m {
            HiddenMode::Sampled => HiddenStats::Sampled,
            HiddenMode::Expectation => HiddenStats::Expectation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbmSection {
    pub n_hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub cd_k: usize,
    pub hidden: HiddenMode,
    pub train_temps: Vec<f64>,
    pub seed: u64,
}

impl Default for RbmSection {
    fn default() -> Self {
        Self {
            n_hidden: 81,
            steps: 30_000,
            lr: 1e-3,
            batch: 1000,
            cd_k: 1,
            hidden: HiddenMode::Sampled,
            train_temps: grid(0.0, 0.5, 29),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub length: usize,
    pub seed_temperature: f64,
    pub measure_temperature: bool,
    pub seed: u64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self { length: 50, seed_temperature: 0.0, measure_temperature: true, seed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackSection {
    pub desk_scale: bool,
    /// Explicit node counts; empty means the preset picked by `desk_scale`.
    pub layer_sizes: Vec<usize>,
    pub seed_temperature: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub cd_k: usize,
    pub rg_steps: usize,
    pub measure_temperature: bool,
    pub seed: u64,
}

impl Default for StackSection {
    fn default() -> Self {
        Self {
            desk_scale: true,
            layer_sizes: Vec::new(),
            seed_temperature: 7.7,
            steps: 30_000,
            lr: 1e-3,
            batch: 1000,
            cd_k: 1,
            rg_steps: 3,
            measure_temperature: true,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermometerSection {
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub holdout: f64,
    /// Class grid; empty means `rbm.train_temps`.
    pub temps: Vec<f64>,
    /// Lattice sides to train for; empty means `[lattice.L]`.
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for ThermometerSection {
    fn default() -> Self {
        Self { width: 64, epochs: 50, lr: 1e-3, batch: 32, holdout: 0.1, temps: Vec::new(), sizes: Vec::new(), seed: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub lattice: LatticeSection,
    pub mcmc: McmcSection,
    pub rbm: RbmSection,
    pub flow: FlowSection,
    pub stack: StackSection,
    pub thermometer: ThermometerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            lattice: LatticeSection::default(),
            mcmc: McmcSection::default(),
            rbm: RbmSection::default(),
            flow: FlowSection::default(),
            stack: StackSection::default(),
            thermometer: ThermometerSection::default(),
        }
    }
}

fn parse_override(raw: &str) -> CliResult<(Vec<String>, Value)> {
    let body = raw.strip_prefix("--").unwrap_or(raw);
    let (key, value) = body
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not of the form --section.key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{raw}` has an empty key")));
    }
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_owned()));
    Ok((path, parsed))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty override path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides in order, then the global seed.
    pub fn resolve(text: &str, overrides: &[String], seed: Option<u64>) -> CliResult<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_owned()))?;
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            set_path(&mut table, &path, value)?;
        }
        let mut cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_owned()))?;
        if let Some(s) = seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::resolve(&text, overrides, seed)
    }

    /// Section `k` of [`SEEDED_SECTIONS`] gets `seed + k`.
    pub fn set_seed(&mut self, seed: u64) {
        let d = |k: u64| seed.wrapping_add(k);
        self.mcmc.seed = d(0);
        self.rbm.seed = d(1);
        self.flow.seed = d(2);
        self.stack.seed = d(3);
        self.thermometer.seed = d(4);
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_owned()));
        if self.lattice.side < 2 || !(self.lattice.alpha > 0.0) || !self.lattice.mu.is_finite() {
            return bad("lattice needs L >= 2, alpha > 0 and finite mu");
        }
        if self.mcmc.sizes.iter().any(|&s| s < 2) {
            return bad("mcmc.sizes entries must be >= 2");
        }
        if self.mcmc.n_samples == 0 || self.mcmc.stride == Some(0) {
            return bad("mcmc.n_samples and mcmc.stride must be positive");
        }
        let temps_ok = |ts: &[f64]| ts.iter().all(|t| t.is_finite() && *t >= 0.0);
        if !temps_ok(&self.mcmc.temps) || !temps_ok(&self.rbm.train_temps) || !temps_ok(&self.thermometer.temps) {
            return bad("temperatures must be finite and non-negative");
        }
        if self.rbm.n_hidden == 0 || self.rbm.batch == 0 || self.rbm.cd_k == 0 {
            return bad("rbm.n_hidden, rbm.batch and rbm.cd_k must be positive");
        }
        if self.flow.length == 0 {
            return bad("flow.length must be positive");
        }
        if self.stack.batch == 0 || self.stack.cd_k == 0 || self.stack.rg_steps == 0 {
            return bad("stack.batch, stack.cd_k and stack.rg_steps must be positive");
        }
        let sizes = self.stack_layer_sizes();
        if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] * 4 != w[0]) {
            return bad("stack.layer_sizes must shrink by exactly 1/4 per layer");
        }
        if self.stack_side().is_none() {
            return bad("stack.layer_sizes[0] must be a perfect square");
        }
        if self.thermometer.width == 0 || self.thermometer.batch == 0 || !(0.0..1.0).contains(&self.thermometer.holdout) {
            return bad("thermometer needs positive width and batch, and holdout in [0, 1)");
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir must not be empty");
        }
        Ok(())
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        if self.mcmc.sizes.is_empty() {
            vec![self.lattice.side]
        } else {
            self.mcmc.sizes.clone()
        }
    }

    pub fn thermometer_temps(&self) -> &[f64] {
        if self.thermometer.temps.is_empty() {
            &self.rbm.train_temps
        } else {
            &self.thermometer.temps
        }
    }

    pub fn thermometer_sizes(&self) -> Vec<usize> {
        if self.thermometer.sizes.is_empty() {
            vec![self.lattice.side]
        } else {
            self.thermometer.sizes.clone()
        }
    }

    pub fn stack_layer_sizes(&self) -> Vec<usize> {
        match (self.stack.layer_sizes.is_empty(), self.stack.desk_scale) {
            (false, _) => self.stack.layer_sizes.clone(),
            (true, true) => DESK_LAYER_SIZES.to_vec(),
            (true, false) => PAPER_LAYER_SIZES.to_vec(),
        }
    }

    /// Side of the stack's input lattice.
    pub fn stack_side(&self) -> Option<usize> {
        let n = *self.stack_layer_sizes().first()?;
        (1..=n).take_while(|s| s * s <= n).find(|s| s * s == n)
    }

    pub fn burn_in(&self, side: usize) -> u64 {
        self.mcmc.burn_in.unwrap_or(500 * (side * side) as u64)
    }

    pub fn stride(&self, side: usize) -> u64 {
        self.mcmc.stride.unwrap_or((side * side) as u64)
    }

    pub fn rbm_train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.rbm.steps,
            learning_rate: self.rbm.lr,
            batch_size: self.rbm.batch,
            cd_k: self.rbm.cd_k,
            seed: self.rbm.seed,
            hidden_stats: self.rbm.hidden.into(),
        }
    }

    pub fn stack_train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.stack.steps,
            learning_rate: self.stack.lr,
            batch_size: self.stack.batch,
            cd_k: self.stack.cd_k,
            seed: self.stack.seed,
            hidden_stats: self.rbm.hidden.into(),
        }
    }

    pub fn thermometer_config(&self, size_index: usize) -> ThermometerConfig {
        ThermometerConfig {
            width: self.thermometer.width,
            epochs: self.thermometer.epochs,
            learning_rate: self.thermometer.lr,
            batch_size: self.thermometer.batch,
            holdout: self.thermometer.holdout,
            seed: self.thermometer.seed.wrapping_add(size_index as u64),
        }
    }

    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Hex SHA-256 of the canonical TOML of the resolved configuration,
    /// with `output_dir` cleared so relocated runs hash identically.
    pub fn hash(&self) -> String {
        let located = Self { output_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(located.canonical_toml().as_bytes()))
    }
}
