//! Experiment runner: config parsing, per-repetition data preparation,
//! prior and posterior training over an `α` grid, certification on the
//! learning set, test metrics, and report emission.
//!
//! Per repetition the data is split 80/20 (stratified) into `S′` and the
//! test set `T`, each standardized on its own statistics, and `S′` is
//! split 50/50 into the learning set `S` and the prior set `S_P`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundKind, BoundReport};
use crate::data::{
    load_csv, partition_by_class, partition_per_example, stratified_split, DataError, Dataset,
    Reference, SubgroupPartition, SynthSpec,
};
use crate::model::{evaluate, Checkpoint, MlpArch, ModelError, DEFAULT_L_MAX};
use crate::risk::RiskKind;
use crate::trainer::{
    certify, derive_seed, learn_prior, train_posterior, AdamParams, CertifySettings, LearnedPrior,
    PriorGrid, TrainConfig, TrainError, TrainedPosterior,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Whether the failure is a problem with the user's inputs rather than
    /// with the run itself.
    pub fn is_validation(&self) -> bool {
        match self {
            ExperimentError::Config(_) | ExperimentError::Parse(_) => true,
            ExperimentError::Data(e) => !matches!(e, DataError::Io(_) | DataError::Csv(_)),
            ExperimentError::Train(e) => matches!(
                e,
                TrainError::InvalidConfig(_) | TrainError::BatchTooSmall { .. }
            ),
            _ => false,
        }
    }
}

fn config_error<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::Config(msg.into()))
}

/// Subgroup structure used by the bounds and the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubgroupMode {
    ByClass,
    PerExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; relative paths resolve against the config file's directory.
    pub csv: Option<PathBuf>,
    pub label_column: String,
    pub synthetic: SynthSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            label_column: "label".into(),
            synthetic: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub subgroups: SubgroupMode,
    pub reference: Reference,
    pub risk: RiskKind,
    pub bounds: Vec<BoundKind>,
    pub alphas: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Train one posterior per repetition (at `shared_alpha`, with the
    /// first bound) and certify every (bound, α) cell on that model.
    pub shared_model: bool,
    pub shared_alpha: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            subgroups: SubgroupMode::ByClass,
            reference: Reference::ClassRatio,
            risk: RiskKind::Cvar,
            bounds: vec![BoundKind::SubgroupsSqrt],
            alphas: vec![0.01, 0.1, 0.3, 0.5, 0.7, 0.9],
            repetitions: 3,
            seed: 0,
            hidden: vec![128, 128],
            leaky_slope: 0.01,
            shared_model: false,
            shared_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub delta: f64,
    pub l_max: f64,
    pub adam: AdamParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-8,
            sigma2: 1e-6,
            lambda: 1.0,
            delta: 0.05,
            l_max: DEFAULT_L_MAX,
            adam: AdamParams::default(),
        }
    }
}

/// Full run description; every field defaults to the reference protocol.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub experiment: ExperimentSection,
    pub train: TrainSection,
    pub prior: PriorGrid,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file, resolving a relative CSV path
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(csv) = &config.data.csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.data.csv = Some(base.join(csv));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let ex = &self.experiment;
        if ex.bounds.is_empty() {
            return config_error("no bounds selected");
        }
        for &b in &ex.bounds {
            match (ex.subgroups, b.per_example()) {
                (SubgroupMode::ByClass, true) => {
                    return config_error(format!("{b} needs subgroups = \"per-example\""))
                }
                (SubgroupMode::PerExample, false) => {
                    return config_error(format!("{b} needs subgroups = \"by-class\""))
                }
                _ => {}
            }
            if b == BoundKind::MhammediEstimate && ex.risk != RiskKind::Cvar {
                return config_error("mhammedi_estimate only holds for risk = \"cvar\"");
            }
        }
        if ex.alphas.is_empty() {
            return config_error("alpha grid is empty");
        }
        for &a in ex.alphas.iter().chain(std::iter::once(&ex.shared_alpha)) {
            if !(a > 0.0 && a <= 1.0) {
                return config_error(format!("alpha {a} outside (0, 1]"));
            }
        }
        if ex.repetitions == 0 {
            return config_error("repetitions must be at least 1");
        }
        if !(ex.leaky_slope.is_finite()) {
            return config_error("leaky_slope must be finite");
        }
        if ex.hidden.contains(&0) {
            return config_error("hidden layer widths must be positive");
        }
        self.prior.validate()?;
        self.train_config(ex.bounds[0], ex.alphas[0], 0).validate()?;
        Ok(())
    }

    pub fn train_config(&self, bound: BoundKind, alpha: f64, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: t.adam,
            sigma2: t.sigma2,
            alpha,
            risk: self.experiment.risk,
            bound,
            lambda: t.lambda,
            delta: t.delta,
            l_max: t.l_max,
            seed,
        }
    }

    /// The full dataset described by the `[data]` section.
    pub fn dataset(&self) -> Result<Dataset, ExperimentError> {
        match &self.data.csv {
            Some(path) => Ok(load_csv(path, &self.data.label_column)?),
            None => Ok(self.data.synthetic.generate()?),
        }
    }
}

/// Results for one (bound, α, repetition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub bound: BoundKind,
    pub alpha: f64,
    pub repetition: usize,
    /// Certificate on `S`, capped at 1.
    pub bound_value: f64,
    pub test_risk: f64,
    pub f_score: f64,
    pub class_errors: Vec<f64>,
    pub error_rate: f64,
    pub prior_learning_rate: f64,
    pub prior_epoch: usize,
    pub certificate: BoundReport,
}

/// Mean and sample standard deviation over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub bound: BoundKind,
    pub alpha: f64,
    pub repetitions: usize,
    pub bound_value: MeanStd,
    pub test_risk: MeanStd,
    pub f_score: MeanStd,
    pub class_errors: Vec<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub class_names: Vec<String>,
    pub repetitions: usize,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
}

impl RunReport {
    fn aggregate(&mut self) {
        let mut groups: BTreeMap<(BoundKind, u64), Vec<&CellResult>> = BTreeMap::new();
        let mut order = Vec::new();
        for c in &self.cells {
            let key = (c.bound, c.alpha.to_bits());
            if !groups.contains_key(&key) {
                order.push(key);
            }
            groups.entry(key).or_default().push(c);
        }
        self.aggregates = order
            .into_iter()
            .map(|key| {
                let cells = &groups[&key];
                let pick = |f: &dyn Fn(&CellResult) -> f64| -> MeanStd {
                    MeanStd::of(&cells.iter().map(|c| f(c)).collect::<Vec<_>>())
                };
                let n_classes = cells[0].class_errors.len();
                Aggregate {
                    bound: key.0,
                    alpha: f64::from_bits(key.1),
                    repetitions: cells.len(),
                    bound_value: pick(&|c| c.bound_value),
                    test_risk: pick(&|c| c.test_risk),
                    f_score: pick(&|c| c.f_score),
                    class_errors: (0..n_classes).map(|k| pick(&|c| c.class_errors[k])).collect(),
                }
            })
            .collect();
    }
}

/// The data of one repetition.
pub struct Splits {
    /// Learning set `S`.
    pub learn: Dataset,
    /// Prior set `S_P`.
    pub prior: Dataset,
    pub test: Dataset,
}

/// 80/20 then 50/50 stratified splits, each part standardized on its own.
pub fn prepare_splits(data: &Dataset, seed: u64) -> Result<Splits, ExperimentError> {
    let (train, test) = stratified_split(data, 0.8, derive_seed(seed, 0))?;
    let train = train.standardized();
    let (learn, prior) = stratified_split(&train, 0.5, derive_seed(seed, 1))?;
    Ok(Splits {
        learn,
        prior,
        test: test.standardized(),
    })
}

fn mode_partition(
    data: &Dataset,
    mode: SubgroupMode,
    reference: Reference,
) -> Result<SubgroupPartition, DataError> {
    match mode {
        SubgroupMode::ByClass => partition_by_class(data, reference),
        SubgroupMode::PerExample => partition_per_example(data),
    }
}

/// Model produced for a cell, handed to the caller's sink.
pub struct CellModel<'a> {
    pub bound: BoundKind,
    pub alpha: f64,
    pub repetition: usize,
    pub checkpoint: &'a Checkpoint,
}

/// Runs the whole protocol. `sink` sees every trained model.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut sink: impl FnMut(CellModel<'_>) -> Result<(), ExperimentError>,
) -> Result<RunReport, ExperimentError> {
    config.validate()?;
    let data = config.dataset()?;
    let ex = &config.experiment;
    let arch = MlpArch {
        layer_sizes: std::iter::once(data.dim())
            .chain(ex.hidden.iter().copied())
            .chain(std::iter::once(data.n_classes()))
            .collect(),
        leaky_slope: ex.leaky_slope,
    };
    arch.validate()?;
    let mut report = RunReport {
        class_names: data.class_names().to_vec(),
        repetitions: ex.repetitions,
        ..Default::default()
    };

    for rep in 0..ex.repetitions {
        let rep_seed = derive_seed(ex.seed, rep as u64);
        let splits = prepare_splits(&data, rep_seed)?;
        let learn_classes = partition_by_class(&splits.learn, ex.reference)?;
        let prior_classes = partition_by_class(&splits.prior, ex.reference)?;
        let test_partition = mode_partition(&splits.test, ex.subgroups, ex.reference)?;
        let mut priors: BTreeMap<u64, LearnedPrior> = BTreeMap::new();
        let mut get_prior = |alpha: f64| -> Result<LearnedPrior, ExperimentError> {
            if let Some(p) = priors.get(&alpha.to_bits()) {
                return Ok(p.clone());
            }
            let cfg = config.train_config(ex.bounds[0], alpha, derive_seed(rep_seed, 2));
            let p = learn_prior(
                &config.prior,
                &cfg,
                &arch,
                &splits.prior,
                &prior_classes,
                &splits.learn,
                &learn_classes,
            )?;
            priors.insert(alpha.to_bits(), p.clone());
            Ok(p)
        };
        let train_cell = |bound: BoundKind, alpha: f64, prior: &LearnedPrior| -> Result<TrainedPosterior, ExperimentError> {
            let cfg = config.train_config(bound, alpha, derive_seed(rep_seed, 3));
            Ok(train_posterior(
                &cfg,
                &arch,
                &prior.prior,
                prior.n_priors,
                &splits.learn,
                &learn_classes,
                None,
            )?)
        };

        let shared = if ex.shared_model {
            let prior = get_prior(ex.shared_alpha)?;
            let trained = train_cell(ex.bounds[0], ex.shared_alpha, &prior)?;
            Some((prior, trained))
        } else {
            None
        };

        for &alpha in &ex.alphas {
            for &bound in &ex.bounds {
                let (prior, trained) = match &shared {
                    Some((p, t)) => (p.clone(), t.clone()),
                    None => {
                        let p = get_prior(alpha)?;
                        let t = train_cell(bound, alpha, &p)?;
                        (p, t)
                    }
                };
                let cfg = config.train_config(bound, alpha, 0);
                let certificate = certify(
                    &arch,
                    &trained.model,
                    &trained.posterior,
                    &prior.prior,
                    bound,
                    alpha,
                    &splits.learn,
                    &learn_classes,
                    &CertifySettings::from_config(&cfg, prior.n_priors),
                )?;
                let metrics = evaluate(
                    &arch,
                    &trained.model,
                    &splits.test,
                    &test_partition,
                    &ex.risk.spec(alpha),
                    config.train.l_max,
                )?;
                let checkpoint = Checkpoint {
                    arch: arch.clone(),
                    class_names: data.class_names().to_vec(),
                    params: trained.model.clone(),
                    posterior: Some(trained.posterior.clone()),
                    prior: Some(prior.prior.clone()),
                    n_priors: prior.n_priors,
                };
                sink(CellModel {
                    bound,
                    alpha,
                    repetition: rep,
                    checkpoint: &checkpoint,
                })?;
                report.cells.push(CellResult {
                    bound,
                    alpha,
                    repetition: rep,
                    bound_value: certificate.certificate(),
                    test_risk: metrics.risk,
                    f_score: metrics.f_score,
                    class_errors: metrics.class_errors,
                    error_rate: metrics.error_rate,
                    prior_learning_rate: prior.learning_rate,
                    prior_epoch: prior.epoch,
                    certificate,
                });
            }
        }
    }
    report.aggregate();
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    run_experiment_with(config, |_| Ok(()))
}

/// File name of a cell's checkpoint.
pub fn checkpoint_name(bound: BoundKind, alpha: f64, repetition: usize) -> String {
    format!("{bound}_alpha{alpha}_rep{repetition}.json")
}

pub const PLOT_COLUMNS: [&str; 8] = [
    "bound",
    "alpha",
    "repetition",
    "bound_value",
    "test_risk",
    "f_score",
    "class",
    "class_error",
];

/// Writes `report.json` and `plotdata.csv` into `dir`. Each cell gives one
/// CSV row with an empty `class` and then one row per class.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    fs::write(dir.join("report.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("plotdata.csv")).map_err(DataError::from)?;
    w.write_record(PLOT_COLUMNS).map_err(DataError::from)?;
    for c in &report.cells {
        let head = [
            c.bound.to_string(),
            c.alpha.to_string(),
            c.repetition.to_string(),
            c.bound_value.to_string(),
            c.test_risk.to_string(),
            c.f_score.to_string(),
        ];
        let mut row: Vec<String> = head.to_vec();
        row.extend([String::new(), String::new()]);
        w.write_record(&row).map_err(DataError::from)?;
        for (k, e) in c.class_errors.iter().enumerate() {
            let name = report.class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
            let mut row: Vec<String> = head.to_vec();
            row.extend([name, e.to_string()]);
            w.write_record(&row).map_err(DataError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}
