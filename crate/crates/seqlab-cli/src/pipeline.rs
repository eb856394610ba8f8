//! Command implementations. Every command materializes its artifacts in the
//! output directory: a manifest with the fully resolved configuration, a
//! JSON report, metric CSVs, and model checkpoints. Commands that need an
//! earlier stage's artifact build it on the spot when it is missing, so any
//! subcommand works in a fresh directory.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use seqlab::data::mnist::NUM_CLASSES;
use seqlab::data::SeqSample;
use seqlab::extraction::classify::{accuracy_at_step, extract_classification, ClassificationAttack};
use seqlab::extraction::leak::identify_leaky_time;
use seqlab::extraction::regress::{extract_regression, r_squared_of, RegressionAttack};
use seqlab::extraction::sweep::{classification_budget_sweep, sweep_to_csv, SweepPoint};
use seqlab::extraction::ExtractionReport;
use seqlab::losses::{LossKind, LossSpec};
use seqlab::metrics::{metrics_to_csv, MetricRow};
use seqlab::ndcore::RngStream;
use seqlab::nn::{
    init_model, load_checkpoint, save_checkpoint, train, AdamState, OutputMode, Schedule,
    SequenceModel, Supervision, TrainConfig, TrainLog, TrainSample,
};
use seqlab::oracle::wire::serve;
use seqlab::oracle::{Oracle, OraclePolicy, OutputForm, OutputScope};
use seqlab::selftest;

use crate::config::{Config, FormChoice, TaskKind};
use crate::dataset::{build_digit_world, build_hourly_world, DataSource, SPLIT_STREAM};
use crate::CliError;

/// Random stream reserved for the original model, derived from the run seed.
pub const ORIGINAL_STREAM: u64 = 2;
/// Random stream reserved for the attack, derived from the run seed.
pub const ATTACK_STREAM: u64 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const ORIGINAL_MODEL_FILE: &str = "original.model.json";
pub const ORIGINAL_REPORT_FILE: &str = "original.json";
pub const ORIGINAL_METRICS_FILE: &str = "original.metrics.csv";
pub const LEAK_REPORT_FILE: &str = "leak.json";
pub const LEAK_METRICS_FILE: &str = "leak.metrics.csv";
pub const SUBSTITUTE_MODEL_FILE: &str = "substitute.model.json";
pub const EXTRACTION_REPORT_FILE: &str = "extraction.json";
pub const EXTRACTION_METRICS_FILE: &str = "extraction.metrics.csv";
pub const SWEEP_REPORT_FILE: &str = "sweep.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";
pub const EVAL_REPORT_FILE: &str = "eval.json";
pub const EVAL_METRICS_FILE: &str = "eval.metrics.csv";
pub const SELFTEST_REPORT_FILE: &str = "selftest.json";
pub const SERVE_REPORT_FILE: &str = "serve.json";

/// One resolved invocation: the effective config plus where artifacts go.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub cfg: Config,
    pub out: PathBuf,
    pub preset_name: Option<String>,
    pub config_path: Option<PathBuf>,
}

impl RunContext {
    pub fn new(
        cfg: Config,
        out: PathBuf,
        preset_name: Option<String>,
        config_path: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            cfg,
            out,
            preset_name,
            config_path,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::config(format!("cannot encode {name}: {e}")))?;
        std::fs::write(self.path(name), text + "\n")
            .map_err(|e| CliError::config(format!("cannot write {name}: {e}")))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.path(name), text)
            .map_err(|e| CliError::config(format!("cannot write {name}: {e}")))
    }

    /// Records everything needed to repeat this run: the command, the fully
    /// resolved configuration (also written as a TOML file a future
    /// invocation can pass to `--config`), seed derivation, data source,
    /// and crate versions.
    fn write_manifest(&self, command: &str, source: Option<&DataSource>) -> Result<(), CliError> {
        let resolved = toml::to_string_pretty(&self.cfg)
            .map_err(|e| CliError::config(format!("cannot encode resolved config: {e}")))?;
        self.write_text(RESOLVED_CONFIG_FILE, &resolved)?;
        let manifest = serde_json::json!({
            "command": command,
            "created_utc": chrono::Utc::now().to_rfc3339(),
            "preset": self.preset_name,
            "config_file": self.config_path.as_ref().map(|p| p.display().to_string()),
            "seed": self.cfg.seed,
            "derived_streams": {
                "split": SPLIT_STREAM,
                "original": ORIGINAL_STREAM,
                "attack": ATTACK_STREAM,
            },
            "data_source": source,
            "versions": {
                "seqlab": seqlab::VERSION,
                "cli": env!("CARGO_PKG_VERSION"),
            },
            "config": &self.cfg,
            "rerun": format!(
                "seqlab {command} --config {RESOLVED_CONFIG_FILE} --out <fresh-dir>"
            ),
        });
        self.write_json(MANIFEST_FILE, &manifest)
    }
}

fn to_train(samples: &[SeqSample]) -> Vec<TrainSample> {
    samples
        .iter()
        .map(|s| TrainSample {
            inputs: s.inputs.clone(),
            target: s.target.clone(),
            teacher: None,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OriginalReport {
    pub task: String,
    pub cell: String,
    pub hidden: usize,
    pub trained_now: bool,
    pub updates: usize,
    pub final_loss: Option<f64>,
    pub train_samples: usize,
    pub adversary_samples: usize,
    pub test_samples: usize,
    pub test_accuracy: Option<f64>,
    pub test_r2: Option<f64>,
    pub test_r2_per_feature: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

fn cell_name(kind: seqlab::nn::CellKind) -> String {
    format!("{kind:?}").to_lowercase()
}

fn train_original(
    cfg: &Config,
    samples: &[SeqSample],
) -> Result<(SequenceModel, TrainLog), CliError> {
    let first = samples
        .first()
        .ok_or_else(|| CliError::data("original training set is empty".to_string()))?;
    let (output_dim, output_mode, loss, schedule) = match cfg.task {
        TaskKind::Classification => (
            NUM_CLASSES,
            OutputMode::PerStep,
            LossSpec::new(LossKind::HardCe),
            Schedule::Epochs(cfg.original.epochs),
        ),
        TaskKind::Regression => (
            first.target.rows(),
            OutputMode::FinalOnly,
            LossSpec::new(LossKind::L2),
            Schedule::Iterations(cfg.original.iterations),
        ),
    };
    let mut rng = RngStream::new(cfg.seed).derive(ORIGINAL_STREAM);
    let mut model = init_model(
        &mut rng,
        cfg.original.cell,
        first.input_dim(),
        cfg.original.hidden,
        output_dim,
        output_mode,
    )
    .map_err(CliError::from_config)?;
    let mut adam = AdamState::new(&model, cfg.original.learning_rate).map_err(CliError::from_config)?;
    let tcfg = TrainConfig {
        schedule,
        batch_size: cfg.original.batch,
        supervision: Supervision::FinalStep,
        clip_norm: Config::clip(cfg.original.clip_norm),
    };
    let log = train(&mut model, &to_train(samples), &loss, &tcfg, &mut adam, &mut rng)
        .map_err(CliError::from_config)?;
    Ok((model, log))
}

/// Loads the original model from the output directory, or trains and saves
/// it when absent. The boolean reports whether training happened now.
fn ensure_original(
    ctx: &RunContext,
    samples: &[SeqSample],
) -> Result<(SequenceModel, Option<TrainLog>), CliError> {
    let path = ctx.path(ORIGINAL_MODEL_FILE);
    if path.is_file() {
        let model = load_checkpoint(&path).map_err(CliError::from_data)?;
        let expected = samples
            .first()
            .map(|s| s.input_dim())
            .unwrap_or(model.input_dim);
        if model.input_dim != expected {
            return Err(CliError::config(format!(
                "existing {} expects {} input features but the data has {}; use a fresh --out",
                ORIGINAL_MODEL_FILE, model.input_dim, expected
            )));
        }
        return Ok((model, None));
    }
    println!(
        "training original model ({} samples, {})",
        samples.len(),
        match ctx.cfg.task {
            TaskKind::Classification => format!("{} epochs", ctx.cfg.original.epochs),
            TaskKind::Regression => format!("{} iterations", ctx.cfg.original.iterations),
        }
    );
    let (model, log) = train_original(&ctx.cfg, samples)?;
    save_checkpoint(&model, &path).map_err(CliError::from_config)?;
    Ok((model, Some(log)))
}

fn original_report(
    ctx: &RunContext,
    model: &SequenceModel,
    log: Option<&TrainLog>,
    counts: (usize, usize, usize),
    test: &[SeqSample],
    started: Instant,
) -> Result<OriginalReport, CliError> {
    let mut rows = Vec::new();
    let (mut test_accuracy, mut test_r2, mut per_feature) = (None, None, None);
    match ctx.cfg.task {
        TaskKind::Classification => {
            let acc = accuracy_at_step(model, test, None).map_err(CliError::from_config)?;
            rows.push(MetricRow::new("test_accuracy", acc, test.len()).with_seed(ctx.cfg.seed));
            test_accuracy = Some(acc);
        }
        TaskKind::Regression => {
            let r2 = r_squared_of(model, test).map_err(CliError::from_data)?;
            rows.push(MetricRow::new("test_r2", r2.mean, test.len()).with_seed(ctx.cfg.seed));
            for (f, v) in r2.per_feature.iter().enumerate() {
                rows.push(
                    MetricRow::new("test_r2_feature", *v, test.len())
                        .with_seed(ctx.cfg.seed)
                        .with_timestep(f),
                );
            }
            per_feature = Some(r2.per_feature.clone());
            test_r2 = Some(r2.mean);
        }
    }
    ctx.write_text(ORIGINAL_METRICS_FILE, &metrics_to_csv(&rows))?;
    let report = OriginalReport {
        task: ctx.cfg.task.to_string(),
        cell: cell_name(ctx.cfg.original.cell),
        hidden: ctx.cfg.original.hidden,
        trained_now: log.is_some(),
        updates: log.map(|l| l.updates).unwrap_or(0),
        final_loss: log.and_then(|l| l.losses.last().copied()),
        train_samples: counts.0,
        adversary_samples: counts.1,
        test_samples: counts.2,
        test_accuracy,
        test_r2,
        test_r2_per_feature: per_feature,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    ctx.write_json(ORIGINAL_REPORT_FILE, &report)?;
    Ok(report)
}

/// Trains (or reuses) the original model and reports its test metric.
pub fn cmd_train_oracle(ctx: &RunContext) -> Result<OriginalReport, CliError> {
    let started = Instant::now();
    match ctx.cfg.task {
        TaskKind::Classification => {
            let world = build_digit_world(&ctx.cfg, &ctx.out)?;
            ctx.write_manifest("train-oracle", Some(&world.source))?;
            let (model, log) = ensure_original(ctx, &world.original)?;
            let counts = (
                world.original.len(),
                world.adversary.len(),
                world.test.len(),
            );
            let report =
                original_report(ctx, &model, log.as_ref(), counts, &world.test, started)?;
            println!(
                "original model: test accuracy {:.4} ({} test samples)",
                report.test_accuracy.unwrap_or(f64::NAN),
                report.test_samples
            );
            Ok(report)
        }
        TaskKind::Regression => {
            let world = build_hourly_world(&ctx.cfg, &ctx.out)?;
            ctx.write_manifest("train-oracle", Some(&world.source))?;
            let (model, log) = ensure_original(ctx, &world.original)?;
            let counts = (
                world.original.len(),
                world.adversary.len(),
                world.test.len(),
            );
            let report =
                original_report(ctx, &model, log.as_ref(), counts, &world.test, started)?;
            println!(
                "original model: test R^2 {:.4} ({} test windows)",
                report.test_r2.unwrap_or(f64::NAN),
                report.test_samples
            );
            Ok(report)
        }
    }
}

fn oracle_form(cfg: &Config) -> OutputForm {
    match cfg.oracle.form {
        FormChoice::Logits => OutputForm::Logits,
        FormChoice::SoftLabels => OutputForm::SoftLabels {
            temperature: cfg.oracle.temperature,
        },
        FormChoice::RegressionValues => OutputForm::RegressionValues,
    }
}

fn build_oracle(cfg: &Config, model: SequenceModel) -> Result<Oracle, CliError> {
    let mut policy = OraclePolicy::new(cfg.oracle.scope, oracle_form(cfg));
    if cfg.oracle.budget > 0 {
        policy = policy.with_budget(cfg.oracle.budget);
    }
    Oracle::new(model, policy).map_err(CliError::from_config)
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct LeakReport {
    pub per_time_accuracy: Vec<f64>,
    pub leaky_time: Option<usize>,
    pub threshold: f64,
    pub probes: usize,
    pub queries_used: u64,
    pub wall_seconds: f64,
}

/// Scans the API's per-timestep outputs for the first timestep that already
/// reveals the final answer.
pub fn cmd_leak_scan(ctx: &RunContext) -> Result<LeakReport, CliError> {
    if ctx.cfg.task != TaskKind::Classification {
        return Err(CliError::config(
            "leak scanning applies to classification runs".to_string(),
        ));
    }
    let started = Instant::now();
    let world = build_digit_world(&ctx.cfg, &ctx.out)?;
    ctx.write_manifest("leak-scan", Some(&world.source))?;
    let (model, _) = ensure_original(ctx, &world.original)?;
    let report = leak_scan_into(ctx, model, &world.adversary, started)?;
    match report.leaky_time {
        Some(t) => println!(
            "leaky time {} of {} timesteps (threshold {})",
            t,
            report.per_time_accuracy.len(),
            report.threshold
        ),
        None => println!(
            "no timestep reaches accuracy {} before the end",
            report.threshold
        ),
    }
    Ok(report)
}

/// The scan itself always uses an all-timestep view of the model; the run's
/// oracle policy governs the attack, not the diagnostic.
fn leak_scan_into(
    ctx: &RunContext,
    model: SequenceModel,
    adversary: &[SeqSample],
    started: Instant,
) -> Result<LeakReport, CliError> {
    let scan_oracle = Oracle::new(
        model,
        OraclePolicy::new(OutputScope::AllTimesteps, OutputForm::Logits),
    )
    .map_err(CliError::from_config)?;
    let n = if ctx.cfg.leak.probes == 0 {
        adversary.len()
    } else {
        ctx.cfg.leak.probes.min(adversary.len())
    };
    let profile = identify_leaky_time(&scan_oracle, &adversary[..n], ctx.cfg.leak.threshold)
        .map_err(CliError::from_config)?;
    let rows: Vec<MetricRow> = profile
        .per_time_accuracy
        .iter()
        .enumerate()
        .map(|(t, acc)| {
            MetricRow::new("leak_accuracy", *acc, profile.probes)
                .with_seed(ctx.cfg.seed)
                .with_timestep(t)
        })
        .collect();
    ctx.write_text(LEAK_METRICS_FILE, &metrics_to_csv(&rows))?;
    let report = LeakReport {
        per_time_accuracy: profile.per_time_accuracy,
        leaky_time: profile.leaky_time,
        threshold: profile.threshold,
        probes: profile.probes,
        queries_used: profile.queries_used,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    ctx.write_json(LEAK_REPORT_FILE, &report)?;
    Ok(report)
}

/// The timestep the attack distills at: an explicit config override, a
/// previous scan's artifact, or a fresh scan.
fn ensure_leaky_time(
    ctx: &RunContext,
    model: &SequenceModel,
    adversary: &[SeqSample],
) -> Result<usize, CliError> {
    if let Some(t) = ctx.cfg.classification.leaky_time {
        return Ok(t);
    }
    let leak_path = ctx.path(LEAK_REPORT_FILE);
    let report = if leak_path.is_file() {
        let text = std::fs::read_to_string(&leak_path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", leak_path.display())))?;
        serde_json::from_str::<LeakReport>(&text)
            .map_err(|e| CliError::data(format!("cannot parse {}: {e}", leak_path.display())))?
    } else {
        println!("scanning for the leaky timestep");
        leak_scan_into(ctx, model.clone(), adversary, Instant::now())?
    };
    report.leaky_time.ok_or_else(|| {
        CliError::failure(format!(
            "no timestep reached accuracy {}; set [classification] leaky_time to force one",
            report.threshold
        ))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackOutcome {
    pub report: ExtractionReport,
    pub wall_seconds: f64,
}

fn classification_attack(cfg: &Config, seed: u64) -> ClassificationAttack {
    let mut attack = ClassificationAttack::new(seed);
    attack.substitute_cell = cfg.classification.cell;
    attack.hidden_dim = cfg.classification.hidden;
    attack.temperature = cfg.classification.temperature;
    attack.hard_epochs = cfg.classification.hard_epochs;
    attack.soft_epochs = cfg.classification.soft_epochs;
    attack.batch_size = cfg.classification.batch;
    attack.learning_rate = cfg.classification.learning_rate;
    attack.clip_norm = Config::clip(cfg.classification.clip_norm);
    attack.count_cached = cfg.classification.count_cached;
    attack.alternate_phases = cfg.classification.alternate_phases;
    attack
}

fn regression_attack(cfg: &Config, seed: u64) -> RegressionAttack {
    let mut attack = RegressionAttack::new(seed);
    attack.substitute_cell = cfg.regression.cell;
    attack.hidden_dim = cfg.regression.hidden;
    attack.hard_iterations = cfg.regression.hard_iterations;
    attack.soft_iterations = cfg.regression.soft_iterations;
    attack.batch_size = cfg.regression.batch;
    attack.learning_rate = cfg.regression.learning_rate;
    attack.margin = cfg.regression.margin;
    attack.bound_weight = cfg.regression.bound_weight;
    attack.clip_norm = Config::clip(cfg.regression.clip_norm);
    attack
}

pub fn attack_seed(cfg: &Config) -> u64 {
    RngStream::new(cfg.seed).derive(ATTACK_STREAM).seed()
}

fn write_extraction_artifacts(
    ctx: &RunContext,
    substitute: &SequenceModel,
    report: &ExtractionReport,
    test_n: usize,
    started: Instant,
) -> Result<AttackOutcome, CliError> {
    save_checkpoint(substitute, &ctx.path(SUBSTITUTE_MODEL_FILE)).map_err(CliError::from_config)?;
    let metric = |name: &str, value: f64| {
        MetricRow::new(name, value, test_n).with_seed(ctx.cfg.seed)
    };
    let mut rows = vec![
        metric(
            &format!("baseline_{}", report.metric_name),
            report.baseline_metric,
        )
        .with_phase("labels_only"),
        metric(&format!("final_{}", report.metric_name), report.final_metric)
            .with_phase("teacher_guided"),
    ];
    if let Some(v) = report.final_step_metric {
        rows.push(
            metric(&format!("final_step_{}", report.metric_name), v).with_phase("teacher_guided"),
        );
    }
    ctx.write_text(EXTRACTION_METRICS_FILE, &metrics_to_csv(&rows))?;
    let outcome = AttackOutcome {
        report: report.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    ctx.write_json(EXTRACTION_REPORT_FILE, &outcome)?;
    Ok(outcome)
}

/// Full classification attack: train or load the original, find the leaky
/// timestep, then train a substitute on labels plus softened API outputs.
pub fn cmd_extract_cls(ctx: &RunContext) -> Result<AttackOutcome, CliError> {
    if ctx.cfg.task != TaskKind::Classification {
        return Err(CliError::config(
            "extract-cls applies to classification runs; use extract-reg".to_string(),
        ));
    }
    if ctx.cfg.oracle.form != FormChoice::Logits {
        return Err(CliError::config(
            "the classification attack needs [oracle] form = \"logits\"".to_string(),
        ));
    }
    let started = Instant::now();
    let world = build_digit_world(&ctx.cfg, &ctx.out)?;
    ctx.write_manifest("extract-cls", Some(&world.source))?;
    let (model, _) = ensure_original(ctx, &world.original)?;
    let leaky_time = ensure_leaky_time(ctx, &model, &world.adversary)?;
    let oracle = build_oracle(&ctx.cfg, model)?;
    let attack = classification_attack(&ctx.cfg, attack_seed(&ctx.cfg));
    println!(
        "extracting substitute at timestep {} ({} + {} epochs, temperature {})",
        leaky_time, attack.hard_epochs, attack.soft_epochs, attack.temperature
    );
    let (substitute, report) = extract_classification(
        &oracle,
        &world.adversary,
        &world.test,
        leaky_time,
        &attack,
    )
    .map_err(CliError::from_config)?;
    let outcome = write_extraction_artifacts(ctx, &substitute, &report, world.test.len(), started)?;
    println!(
        "substitute accuracy: labels only {:.4}, with teacher {:.4} at timestep {}",
        report.baseline_metric,
        report.final_metric,
        leaky_time
    );
    Ok(outcome)
}

/// Full regression attack: train or load the original, then train a
/// substitute on labels plus the teacher-bounded loss against API values.
pub fn cmd_extract_reg(ctx: &RunContext) -> Result<AttackOutcome, CliError> {
    if ctx.cfg.task != TaskKind::Regression {
        return Err(CliError::config(
            "extract-reg applies to regression runs; use extract-cls".to_string(),
        ));
    }
    if ctx.cfg.oracle.form != FormChoice::RegressionValues {
        return Err(CliError::config(
            "the regression attack needs [oracle] form = \"regression_values\"".to_string(),
        ));
    }
    let started = Instant::now();
    let world = build_hourly_world(&ctx.cfg, &ctx.out)?;
    ctx.write_manifest("extract-reg", Some(&world.source))?;
    let (model, _) = ensure_original(ctx, &world.original)?;
    let oracle = build_oracle(&ctx.cfg, model)?;
    let attack = regression_attack(&ctx.cfg, attack_seed(&ctx.cfg));
    println!(
        "extracting substitute ({} + {} iterations, margin {}, bound weight {})",
        attack.hard_iterations, attack.soft_iterations, attack.margin, attack.bound_weight
    );
    let (substitute, report) =
        extract_regression(&oracle, &world.adversary, &world.test, &attack)
            .map_err(CliError::from_config)?;
    let outcome = write_extraction_artifacts(ctx, &substitute, &report, world.test.len(), started)?;
    println!(
        "substitute R^2: labels only {:.4}, with teacher {:.4}",
        report.baseline_metric, report.final_metric
    );
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub leaky_time: usize,
    pub points: Vec<SweepPoint>,
    pub wall_seconds: f64,
}

/// Repeats the classification attack across ascending query budgets.
pub fn cmd_sweep_queries(ctx: &RunContext) -> Result<SweepReport, CliError> {
    if ctx.cfg.task != TaskKind::Classification {
        return Err(CliError::config(
            "sweep-queries varies the classification attack's labeled budget".to_string(),
        ));
    }
    if ctx.cfg.oracle.form != FormChoice::Logits {
        return Err(CliError::config(
            "the classification attack needs [oracle] form = \"logits\"".to_string(),
        ));
    }
    let started = Instant::now();
    let world = build_digit_world(&ctx.cfg, &ctx.out)?;
    ctx.write_manifest("sweep-queries", Some(&world.source))?;
    let (model, _) = ensure_original(ctx, &world.original)?;
    let leaky_time = ensure_leaky_time(ctx, &model, &world.adversary)?;
    let oracle = build_oracle(&ctx.cfg, model)?;
    let attack = classification_attack(&ctx.cfg, attack_seed(&ctx.cfg));
    println!(
        "sweeping budgets {:?} at timestep {}",
        ctx.cfg.sweep.budgets, leaky_time
    );
    let points = classification_budget_sweep(
        &oracle,
        &world.adversary,
        &world.test,
        leaky_time,
        &ctx.cfg.sweep.budgets,
        &attack,
    )
    .map_err(CliError::from_config)?;
    ctx.write_text(SWEEP_CSV_FILE, &sweep_to_csv(&points))?;
    let report = SweepReport {
        leaky_time,
        points,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    ctx.write_json(SWEEP_REPORT_FILE, &report)?;
    for p in &report.points {
        println!(
            "budget {:>6}: labels only {:.4}, with teacher {:.4}",
            p.granted, p.hard_metric, p.soft_metric
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalEntry {
    pub model: String,
    pub metric: String,
    pub value: f64,
    pub timestep: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub test_samples: usize,
    pub wall_seconds: f64,
}

/// Scores whichever checkpoints the output directory holds on the test set.
pub fn cmd_eval(ctx: &RunContext) -> Result<EvalReport, CliError> {
    let started = Instant::now();
    let mut candidates = Vec::new();
    for (label, file) in [
        ("original", ORIGINAL_MODEL_FILE),
        ("substitute", SUBSTITUTE_MODEL_FILE),
    ] {
        let path = ctx.path(file);
        if path.is_file() {
            candidates.push((label, load_checkpoint(&path).map_err(CliError::from_data)?));
        }
    }
    if candidates.is_empty() {
        return Err(CliError::config(format!(
            "nothing to evaluate: neither {ORIGINAL_MODEL_FILE} nor {SUBSTITUTE_MODEL_FILE} exists in the output directory"
        )));
    }

    let leaky_time = match ctx.cfg.task {
        TaskKind::Classification => {
            let leak_path = ctx.path(LEAK_REPORT_FILE);
            if let Some(t) = ctx.cfg.classification.leaky_time {
                Some(t)
            } else if leak_path.is_file() {
                let text = std::fs::read_to_string(&leak_path)
                    .map_err(|e| CliError::data(format!("cannot read leak report: {e}")))?;
                serde_json::from_str::<LeakReport>(&text)
                    .map_err(|e| CliError::data(format!("cannot parse leak report: {e}")))?
                    .leaky_time
            } else {
                None
            }
        }
        TaskKind::Regression => None,
    };

    let (test, source) = match ctx.cfg.task {
        TaskKind::Classification => {
            let world = build_digit_world(&ctx.cfg, &ctx.out)?;
            (world.test, world.source)
        }
        TaskKind::Regression => {
            let world = build_hourly_world(&ctx.cfg, &ctx.out)?;
            (world.test, world.source)
        }
    };
    ctx.write_manifest("eval", Some(&source))?;

    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for (label, model) in &candidates {
        match ctx.cfg.task {
            TaskKind::Classification => {
                let acc = accuracy_at_step(model, &test, None).map_err(CliError::from_config)?;
                entries.push(EvalEntry {
                    model: label.to_string(),
                    metric: "accuracy".to_string(),
                    value: acc,
                    timestep: None,
                });
                rows.push(
                    MetricRow::new("accuracy", acc, test.len())
                        .with_seed(ctx.cfg.seed)
                        .with_phase(*label),
                );
                if let Some(t) = leaky_time {
                    if model.output_mode == OutputMode::PerStep {
                        let at = accuracy_at_step(model, &test, Some(t))
                            .map_err(CliError::from_config)?;
                        entries.push(EvalEntry {
                            model: label.to_string(),
                            metric: "accuracy".to_string(),
                            value: at,
                            timestep: Some(t),
                        });
                        rows.push(
                            MetricRow::new("accuracy", at, test.len())
                                .with_seed(ctx.cfg.seed)
                                .with_phase(*label)
                                .with_timestep(t),
                        );
                    }
                }
            }
            TaskKind::Regression => {
                let r2 = r_squared_of(model, &test).map_err(CliError::from_data)?;
                entries.push(EvalEntry {
                    model: label.to_string(),
                    metric: "r2".to_string(),
                    value: r2.mean,
                    timestep: None,
                });
                rows.push(
                    MetricRow::new("r2", r2.mean, test.len())
                        .with_seed(ctx.cfg.seed)
                        .with_phase(*label),
                );
            }
        }
    }
    ctx.write_text(EVAL_METRICS_FILE, &metrics_to_csv(&rows))?;
    let report = EvalReport {
        entries,
        test_samples: test.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    ctx.write_json(EVAL_REPORT_FILE, &report)?;
    for e in &report.entries {
        match e.timestep {
            Some(t) => println!("{} {} at timestep {}: {:.4}", e.model, e.metric, t, e.value),
            None => println!("{} {}: {:.4}", e.model, e.metric, e.value),
        }
    }
    Ok(report)
}

/// Exposes the original model over a line-delimited JSON TCP socket.
/// `for_seconds` of zero serves until the process is killed.
pub fn cmd_serve_oracle(ctx: &RunContext, listen: &str, for_seconds: u64) -> Result<(), CliError> {
    let model = match ctx.cfg.task {
        TaskKind::Classification => {
            let world = build_digit_world(&ctx.cfg, &ctx.out)?;
            ctx.write_manifest("serve-oracle", Some(&world.source))?;
            ensure_original(ctx, &world.original)?.0
        }
        TaskKind::Regression => {
            let world = build_hourly_world(&ctx.cfg, &ctx.out)?;
            ctx.write_manifest("serve-oracle", Some(&world.source))?;
            ensure_original(ctx, &world.original)?.0
        }
    };
    let oracle = build_oracle(&ctx.cfg, model)?;
    let server = serve(std::sync::Arc::new(oracle), listen).map_err(CliError::from_config)?;
    let addr = server.addr();
    ctx.write_json(
        SERVE_REPORT_FILE,
        &serde_json::json!({ "listening": addr.to_string() }),
    )?;
    println!("serving on {addr}");
    if for_seconds == 0 {
        loop {
            std::thread::sleep(std::time::Duration::from_secs(3600));
        }
    }
    std::thread::sleep(std::time::Duration::from_secs(for_seconds));
    server.shutdown();
    Ok(())
}

/// Runs the library's invariant checks and reports one line per check.
pub fn cmd_selftest(ctx: &RunContext) -> Result<(), CliError> {
    ctx.write_manifest("selftest", None)?;
    let report = selftest::run_all(ctx.cfg.seed);
    let entries: Vec<serde_json::Value> = report
        .outcomes
        .iter()
        .map(|o| {
            serde_json::json!({
                "name": o.name,
                "passed": o.passed,
                "detail": o.detail,
            })
        })
        .collect();
    ctx.write_json(
        SELFTEST_REPORT_FILE,
        &serde_json::json!({
            "seed": ctx.cfg.seed,
            "all_passed": report.all_passed(),
            "checks": entries,
        }),
    )?;
    for o in &report.outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", o.name, o.detail);
    }
    if report.all_passed() {
        println!("all {} checks passed", report.outcomes.len());
        Ok(())
    } else {
        Err(CliError::failure(format!(
            "{} of {} checks failed",
            report.failures().len(),
            report.outcomes.len()
        )))
    }
}

/// Writes stand-in datasets for both tasks into the output directory.
pub fn cmd_gen_data(ctx: &RunContext) -> Result<(), CliError> {
    ctx.write_manifest("gen-data", None)?;
    let dir = ctx.out.join("synth-data");
    let n_train = if ctx.cfg.data.digit_pool > 0 {
        ctx.cfg.data.digit_pool
    } else {
        60_000
    };
    let n_test = if ctx.cfg.data.digit_test > 0 {
        ctx.cfg.data.digit_test
    } else {
        10_000
    };
    let files = seqlab::data::synth::write_digit_files(&dir, n_train, n_test, ctx.cfg.data.synth_seed)
        .map_err(CliError::from_data)?;
    let csv = dir.join(&ctx.cfg.data.hourly_csv);
    let (start, canonical_hours) = seqlab::data::synth::canonical_hourly_range();
    let hours = if ctx.cfg.data.synth_hours > 0 {
        ctx.cfg.data.synth_hours
    } else {
        canonical_hours
    };
    seqlab::data::synth::write_hourly_csv(&csv, ctx.cfg.data.synth_seed, start, hours)
        .map_err(CliError::from_data)?;
    for path in [
        &files.train_images,
        &files.train_labels,
        &files.test_images,
        &files.test_labels,
        &csv,
    ] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

