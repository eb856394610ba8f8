//! Run configuration: documented defaults, named presets, TOML overrides,
//! and the merge order defaults < preset < file < flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqlab::nn::CellKind;
use seqlab::oracle::OutputScope;

use crate::CliError;

/// Environment variable naming the directory with real dataset files.
pub const DATA_ROOT_ENV: &str = "SEQLAB_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Classification => write!(f, "classification"),
            TaskKind::Regression => write!(f, "regression"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// Fixed head-of-pool counts for original and adversary sets.
    Counted,
    /// Shuffle the pool into five equal folds; one fold is the adversary.
    FiveFold,
}

/// The oracle's answer format, flattened for the config file; the softening
/// temperature lives in `[oracle] temperature`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormChoice {
    Logits,
    SoftLabels,
    RegressionValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory holding real dataset files. Falls back to the
    /// `SEQLAB_DATA` environment variable, then to generated stand-in data
    /// under the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Seed for generated stand-in data; independent of the run seed so
    /// changing experiment seeds does not regenerate datasets.
    pub synth_seed: u64,
    /// Digit training samples drawn from the head of the file, 0 for all.
    pub digit_pool: usize,
    /// Digit test samples drawn from the head of the file, 0 for all.
    pub digit_test: usize,
    /// Hourly sensor CSV file name under the data root.
    pub hourly_csv: String,
    /// Hours of generated sensor data, 0 for the reference range.
    pub synth_hours: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: None,
            synth_seed: 20_040_310,
            digit_pool: 0,
            digit_test: 0,
            hourly_csv: "AirQualityUCI.csv".to_string(),
            synth_hours: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub scheme: SplitScheme,
    /// Which fold becomes the adversary pool under the five-fold scheme.
    pub fold: usize,
    /// Original-model training samples under the counted scheme.
    pub original_count: usize,
    /// Adversary samples under the counted scheme.
    pub adversary_count: usize,
    /// Months whose windows the adversary may label (regression).
    pub adversary_months: Vec<u32>,
    /// Months whose 2004 windows train the original model (regression);
    /// empty means the whole training year.
    pub train_months: Vec<u32>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            scheme: SplitScheme::FiveFold,
            fold: 0,
            original_count: 44_000,
            adversary_count: 11_000,
            adversary_months: vec![10, 11, 12],
            train_months: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OriginalSection {
    pub cell: CellKind,
    pub hidden: usize,
    /// Passes over the training set (classification schedule).
    pub epochs: usize,
    /// Optimizer steps (regression schedule).
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Gradient clipping threshold on the global norm; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OriginalSection {
    fn default() -> Self {
        Self {
            cell: CellKind::Lstm,
            hidden: 128,
            epochs: 220,
            iterations: 20_000,
            batch: 50,
            learning_rate: 0.001,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub scope: OutputScope,
    pub form: FormChoice,
    /// Softening temperature when `form` is `soft_labels`.
    pub temperature: f64,
    /// Total queries the API answers; 0 means unlimited.
    pub budget: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            scope: OutputScope::AllTimesteps,
            form: FormChoice::Logits,
            temperature: 1.0,
            budget: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakSection {
    /// Per-timestep accuracy at which the output is considered leaked.
    pub threshold: f64,
    /// Labeled probe sequences to spend, 0 for the whole adversary pool.
    pub probes: usize,
}

impl Default for LeakSection {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            probes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationSection {
    pub cell: CellKind,
    pub hidden: usize,
    pub temperature: f64,
    pub hard_epochs: usize,
    pub soft_epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Resubmit teacher queries on every distillation pass instead of
    /// reusing the first answers.
    pub count_cached: bool,
    /// Interleave labeled and distillation epochs instead of running the
    /// phases back to back.
    pub alternate_phases: bool,
    /// Fixed attack timestep; unset means take the leak scan's finding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaky_time: Option<usize>,
}

impl Default for ClassificationSection {
    fn default() -> Self {
        Self {
            cell: CellKind::Rnn,
            hidden: 128,
            temperature: 16.0,
            hard_epochs: 110,
            soft_epochs: 110,
            batch: 50,
            learning_rate: 0.001,
            clip_norm: 5.0,
            count_cached: false,
            alternate_phases: false,
            leaky_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSection {
    pub cell: CellKind,
    pub hidden: usize,
    pub hard_iterations: usize,
    pub soft_iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Teacher-bound margin m.
    pub margin: f64,
    /// Weight v of the bound term in the combined loss.
    pub bound_weight: f64,
    pub clip_norm: f64,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            cell: CellKind::Rnn,
            hidden: 20,
            hard_iterations: 10_000,
            soft_iterations: 10_000,
            batch: 16,
            learning_rate: 0.001,
            margin: 1.0,
            bound_weight: 1.0,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Query budgets, strictly ascending.
    pub budgets: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            budgets: vec![125, 250, 500, 1_375, 2_750, 5_500, 11_000],
        }
    }
}

/// The resolved unit one subcommand executes. Defaults reproduce the
/// full-scale classification protocol; presets rescale or retask it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub task: TaskKind,
    pub seed: u64,
    pub data: DataSection,
    pub split: SplitSection,
    pub original: OriginalSection,
    pub oracle: OracleSection,
    pub leak: LeakSection,
    pub classification: ClassificationSection,
    pub regression: RegressionSection,
    pub sweep: SweepSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            task: TaskKind::Classification,
            seed: 42,
            data: DataSection::default(),
            split: SplitSection::default(),
            original: OriginalSection::default(),
            oracle: OracleSection::default(),
            leak: LeakSection::default(),
            classification: ClassificationSection::default(),
            regression: RegressionSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        if self.original.batch == 0 || self.classification.batch == 0 || self.regression.batch == 0
        {
            return bad("batch sizes must be positive".into());
        }
        if !(self.leak.threshold > 0.0 && self.leak.threshold <= 1.0) {
            return bad(format!(
                "leak threshold must lie in (0, 1], got {}",
                self.leak.threshold
            ));
        }
        if self.classification.temperature <= 0.0 {
            return bad(format!(
                "distillation temperature must be positive, got {}",
                self.classification.temperature
            ));
        }
        if self.oracle.form == FormChoice::SoftLabels && self.oracle.temperature <= 0.0 {
            return bad(format!(
                "oracle temperature must be positive, got {}",
                self.oracle.temperature
            ));
        }
        if self.split.scheme == SplitScheme::Counted
            && self.task == TaskKind::Classification
            && self.split.original_count == 0
        {
            return bad("counted split needs a positive original_count".into());
        }
        if self.split.fold >= 5 {
            return bad(format!("fold must lie in 0..5, got {}", self.split.fold));
        }
        if self.regression.margin < 0.0 || self.regression.bound_weight < 0.0 {
            return bad("margin and bound_weight must be nonnegative".into());
        }
        if self.sweep.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep budgets must be strictly ascending".into());
        }
        for &m in self
            .split
            .adversary_months
            .iter()
            .chain(&self.split.train_months)
        {
            if !(1..=12).contains(&m) {
                return bad(format!("month {m} out of range 1..=12"));
            }
        }
        Ok(())
    }

    pub fn clip(value: f64) -> Option<f64> {
        if value > 0.0 {
            Some(value)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Desk-scale digit classification: 5,000/1,000/1,000 samples,
    /// 30-epoch schedules.
    MnistMini,
    /// Full digit protocol: five folds of 55,000 samples, 220 epochs,
    /// 128 hidden units.
    MnistFull,
    /// Desk-scale sensor regression: two training months, shortened
    /// schedules.
    AqMini,
    /// Full sensor regression: training year 2004, 10,000 + 10,000
    /// iteration phases.
    AqFull,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::MnistMini => "mnist-mini",
            Preset::MnistFull => "mnist-full",
            Preset::AqMini => "aq-mini",
            Preset::AqFull => "aq-full",
        }
    }

    pub fn config(self) -> Config {
        let mut cfg = Config::default();
        match self {
            Preset::MnistMini => {
                cfg.data.digit_pool = 6_000;
                cfg.data.digit_test = 1_000;
                cfg.split.scheme = SplitScheme::Counted;
                cfg.split.original_count = 5_000;
                cfg.split.adversary_count = 1_000;
                cfg.original.hidden = 32;
                cfg.original.epochs = 30;
                cfg.classification.hidden = 48;
                cfg.classification.hard_epochs = 30;
                cfg.classification.soft_epochs = 30;
                cfg.classification.batch = 10;
                cfg.sweep.budgets = vec![125, 250, 500, 1_000];
            }
            Preset::MnistFull => {
                cfg.data.digit_pool = 55_000;
                cfg.data.digit_test = 10_000;
            }
            Preset::AqMini => {
                cfg.task = TaskKind::Regression;
                cfg.split.adversary_months = vec![12];
                cfg.split.train_months = vec![11, 12];
                cfg.original.hidden = 20;
                cfg.original.iterations = 2_500;
                cfg.original.batch = 16;
                cfg.oracle.scope = OutputScope::FinalOnly;
                cfg.oracle.form = FormChoice::RegressionValues;
                cfg.regression.hard_iterations = 1_200;
                cfg.regression.soft_iterations = 1_200;
                cfg.sweep.budgets = vec![100, 300, 700];
            }
            Preset::AqFull => {
                cfg.task = TaskKind::Regression;
                cfg.split.adversary_months = vec![10, 11, 12];
                cfg.original.hidden = 20;
                cfg.original.batch = 16;
                cfg.oracle.scope = OutputScope::FinalOnly;
                cfg.oracle.form = FormChoice::RegressionValues;
                cfg.sweep.budgets = vec![250, 500, 1_000, 2_000];
            }
        }
        cfg
    }
}

fn merge_value(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Builds the effective configuration: documented defaults, then the
/// preset, then the file, then explicit flags; unknown file keys are
/// rejected, parse errors keep their line numbers.
pub fn resolve(
    preset: Option<Preset>,
    config_path: Option<&Path>,
    seed: Option<u64>,
    data_root: Option<&Path>,
) -> Result<Config, CliError> {
    let base = preset.map(Preset::config).unwrap_or_default();
    let mut cfg = match config_path {
        None => base,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read {}: {e}", path.display()))
            })?;
            let user: toml::Value = toml::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let mut merged = toml::Value::try_from(&base)
                .map_err(|e| CliError::config(format!("internal defaults failed to encode: {e}")))?;
            merge_value(&mut merged, user);
            merged
                .try_into()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(root) = data_root {
        cfg.data.root = Some(root.to_path_buf());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The fully documented default configuration in file form.
pub fn reference_toml() -> String {
    let defaults = toml::to_string_pretty(&Config::default())
        .expect("default config always serializes");
    let mut out = String::new();
    out.push_str("# Every key with its default. Any subset may appear in a config file;\n");
    out.push_str("# omitted keys keep the preset's value, then these defaults.\n");
    out.push_str("# Unknown keys are rejected.\n");
    out.push_str("#\n");
    out.push_str("# Merge order: defaults < --preset < --config file < flags.\n");
    out.push_str(&format!(
        "# Data files are looked up under [data] root, then ${DATA_ROOT_ENV},\n"
    ));
    out.push_str("# and generated deterministically when neither is set.\n\n");
    out.push_str(&defaults);
    out
}
