// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage orchestration shared by the `cogmap` binary and the tests.
//!
//! Every stage reads its inputs from the output root (or from explicit
//! paths in the config), writes into its own subdirectory and echoes the
//! effective configuration there as `effective_config.toml`. One global seed
//! governs everything; each stage uses `derive_seed(seed, <stage tag>)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation_store::{
    read_dataset, split_dataset, write_dataset, ActivationDataset, Split,
};
use crate::decomposition::{
    capture_all, compute_deltas, emit_report, load_report, scale_layer, AnalysisWindow,
    DeltaReport, ReportFormat,
};
use crate::error::{DecompositionError, Error, EvalError, PipelineError, Result};
use crate::probe::{load_suite, save_suite, suite_table, train_suite, SuiteSummary, TrainConfig};
use crate::reference::{reference_figures, ReferenceFigures};
use crate::seed::derive_seed;
use crate::steering::{
    build_steering_vectors, load_triplets, load_vectors, save_triplets, save_vectors,
    PositionPolicy, SteeringConfig, SteeringMode, SteeringVector,
};
use crate::synthetic::{
    belief_scenarios, belief_triplets, capture_labeled, capture_triplets, labeled_texts,
};
use crate::taxonomy::{
    emit_generation_prompt, gen_synthetic_activations, load_taxonomy, SyntheticSpec, DOMAINS,
};
use crate::tom_eval::{
    compare_conditions, evaluate_set, load_scenarios, results_table, save_scenarios,
    ComparisonReport,
};
use crate::toy_lm::{Steering, ToyLM, ToyLMConfig};

/// Depth of the reference model the default layer ranges refer to.
pub const REFERENCE_DEPTH: usize = 30;
/// Default steering layers and analysis window on the reference model.
pub const REFERENCE_STEERING_LAYERS: (usize, usize) = (14, 30);
pub const REFERENCE_WINDOW: (usize, usize) = (10, 20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Text corpora run through the toy model.
    Toy,
    /// Isotropic Gaussian class clusters; no model or scenarios.
    Gaussian,
}

/// Optional explicit input paths. Unset paths default to the previous
/// stage's output under the output root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub taxonomy: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub activations: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub texts_per_action: usize,
    pub n_triplets: usize,
    pub n_scenarios: usize,
    pub train_fraction: f64,
    pub gaussian_per_class: usize,
    pub gaussian_hidden_dim: usize,
    pub gaussian_layers: usize,
    pub gaussian_separation: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Toy,
            texts_per_action: 12,
            n_triplets: 40,
            n_scenarios: 50,
            train_fraction: 0.8,
            gaussian_per_class: 200,
            gaussian_hidden_dim: 32,
            gaussian_layers: 1,
            gaussian_separation: 4.0,
        }
    }
}

/// Probe training hyperparameters; the seed comes from the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub negative_ratio: f64,
    /// Layers to probe; all capture points when unset.
    pub layers: Option<Vec<usize>>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr_max: t.lr_max,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            negative_ratio: t.negative_ratio,
            layers: None,
        }
    }
}

impl ProbeSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            negative_ratio: self.negative_ratio,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSection {
    /// Layers to build and inject at; 14..=30 rescaled to the model depth
    /// when unset.
    pub layers: Option<Vec<usize>>,
    pub multiplier: f64,
    pub mode: SteeringMode,
    pub position: PositionPolicy,
}

impl Default for SteeringSection {
    fn default() -> Self {
        let s = SteeringConfig::default();
        Self {
            layers: None,
            multiplier: s.multiplier,
            mode: s.mode,
            position: s.position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Inclusive `[start, end]`; 10..=20 rescaled to the model depth when unset.
    pub window: Option<[usize; 2]>,
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            window: None,
            threshold: 0.5,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub out: PathBuf,
    pub paths: Paths,
    /// `init_seed` is ignored; the model is initialized from a sub-seed of
    /// `seed`.
    pub model: ToyLMConfig,
    pub data: DataSection,
    pub probe: ProbeSection,
    pub steering: SteeringSection,
    pub analysis: AnalysisSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            model: ToyLMConfig::default(),
            data: DataSection::default(),
            probe: ProbeSection::default(),
            steering: SteeringSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub multiplier: Option<f64>,
    pub source: Option<DataSource>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads the config file if given, otherwise starts from the defaults,
    /// then applies the overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, PipelineError> {
        let mut config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|_| PipelineError::MissingInput {
                    path: p.to_path_buf(),
                    what: "config file",
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            self.jobs = jobs;
        }
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        if let Some(m) = overrides.multiplier {
            self.steering.multiplier = m;
        }
        if let Some(source) = overrides.source {
            self.data.source = source;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        // TOML integers are signed 64-bit, and the config is echoed as TOML.
        if self.seed > i64::MAX as u64 {
            return Err(PipelineError::Config(format!(
                "seed {} exceeds {}",
                self.seed,
                i64::MAX
            )));
        }
        if !self.steering.multiplier.is_finite() {
            return Err(PipelineError::Config(
                "steering multiplier must be finite".into(),
            ));
        }
        if !(self.analysis.threshold > 0.0 && self.analysis.threshold < 1.0) {
            return Err(PipelineError::Config(
                "analysis threshold must lie in (0, 1)".into(),
            ));
        }
        if self.data.n_scenarios == 0 || self.data.n_triplets < 2 || self.data.texts_per_action < 2
        {
            return Err(PipelineError::Config(
                "need at least 1 scenario, 2 triplets and 2 texts per action".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.seed, stage.name())
    }

    /// Seed shared by evaluation and decomposition so both see the same
    /// answer positions.
    pub fn position_seed(&self) -> u64 {
        derive_seed(self.seed, "positions")
    }

    pub fn steering_config(&self, depth: usize) -> SteeringConfig {
        let (start, end) = REFERENCE_STEERING_LAYERS;
        let n_layers = depth - 1;
        let layers = self.steering.layers.clone().unwrap_or_else(|| {
            (scale_layer(start, REFERENCE_DEPTH, n_layers)
                ..=scale_layer(end, REFERENCE_DEPTH, n_layers))
                .collect()
        });
        SteeringConfig {
            layers,
            multiplier: self.steering.multiplier,
            mode: self.steering.mode,
            position: self.steering.position,
        }
    }

    pub fn window(&self, depth: usize) -> Result<AnalysisWindow, DecompositionError> {
        match self.analysis.window {
            Some([start, end]) => AnalysisWindow::new(start, end),
            None => {
                let (start, end) = REFERENCE_WINDOW;
                AnalysisWindow::new(
                    scale_layer(start, REFERENCE_DEPTH, depth - 1),
                    scale_layer(end, REFERENCE_DEPTH, depth - 1),
                )
            }
        }
    }

    fn input(
        &self,
        explicit: &Option<PathBuf>,
        default: PathBuf,
        what: &'static str,
    ) -> Result<PathBuf, PipelineError> {
        let path = explicit.clone().unwrap_or(default);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingInput { path, what })
        }
    }

    fn model_path(&self) -> Result<PathBuf, PipelineError> {
        self.input(
            &self.paths.model,
            self.out.join("synthetic/model.tlm"),
            "toy model checkpoint",
        )
    }

    fn scenarios_path(&self) -> Result<PathBuf, PipelineError> {
        self.input(
            &self.paths.scenarios,
            self.out.join("synthetic/scenarios.jsonl"),
            "scenario file",
        )
    }

    fn probes_path(&self) -> Result<PathBuf, PipelineError> {
        self.input(
            &self.paths.probes,
            self.out.join("probes/index.json"),
            "probe index",
        )
    }

    fn vectors_path(&self) -> Result<PathBuf, PipelineError> {
        self.input(
            &self.paths.vectors,
            self.out.join("steering/vectors.json"),
            "steering vectors",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenPrompts,
    GenSynthetic,
    TrainProbes,
    BuildSteering,
    EvalTom,
    Decompose,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenPrompts,
        Stage::GenSynthetic,
        Stage::TrainProbes,
        Stage::BuildSteering,
        Stage::EvalTom,
        Stage::Decompose,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenPrompts => "gen-prompts",
            Stage::GenSynthetic => "gen-synthetic",
            Stage::TrainProbes => "train-probes",
            Stage::BuildSteering => "build-steering",
            Stage::EvalTom => "eval-tom",
            Stage::Decompose => "decompose",
            Stage::Report => "report",
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            Stage::GenPrompts => "prompts",
            Stage::GenSynthetic => "synthetic",
            Stage::TrainProbes => "probes",
            Stage::BuildSteering => "steering",
            Stage::EvalTom => "eval",
            Stage::Decompose => "decompose",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub summary: String,
    pub outputs: Vec<PathBuf>,
}

/// The full machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub model: ToyLMConfig,
    pub steering_layers: Vec<usize>,
    pub multiplier: f64,
    pub probes: SuiteSummary,
    pub evaluation: ComparisonReport,
    pub deltas: DeltaReport,
    pub reference: ReferenceFigures,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    }
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())).into())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s
}

fn stage_dir(config: &PipelineConfig, stage: Stage) -> Result<PathBuf> {
    let dir = config.out.join(stage.dir());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write(dir.join("effective_config.toml"), &config.to_toml())?;
    Ok(dir)
}

fn jobs(config: &PipelineConfig) -> usize {
    if config.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.jobs
    }
}

/// Runs one stage inside a thread pool capped at `config.jobs`.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs(config))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match stage {
        Stage::GenPrompts => gen_prompts(config),
        Stage::GenSynthetic => gen_synthetic(config),
        Stage::TrainProbes => train_probes(config),
        Stage::BuildSteering => build_steering(config),
        Stage::EvalTom => eval_tom(config),
        Stage::Decompose => decompose(config),
        Stage::Report => report(config),
    })
}

/// Every stage after `gen-prompts`, in order.
pub fn run_all(config: &PipelineConfig) -> Result<Vec<StageOutcome>> {
    Stage::ALL[1..]
        .iter()
        .map(|&s| run_stage(s, config))
        .collect()
}

#[derive(Serialize)]
struct PromptLine<'a> {
    action: &'a str,
    domain: &'a str,
    prompt: String,
}

fn gen_prompts(config: &PipelineConfig) -> Result<StageOutcome> {
    let actions = load_taxonomy(config.paths.taxonomy.as_deref())?;
    let dir = stage_dir(config, Stage::GenPrompts)?;
    let mut out = String::new();
    let mut n = 0;
    for action in &actions {
        for domain in DOMAINS {
            let line = PromptLine {
                action: &action.name,
                domain,
                prompt: emit_generation_prompt(action, domain, false)?,
            };
            out.push_str(&serde_json::to_string(&line).expect("serializes"));
            out.push('\n');
            n += 1;
        }
    }
    let path = write(dir.join("prompts.jsonl"), &out)?;
    Ok(StageOutcome {
        summary: format!("gen-prompts: {n} prompts -> {}", path.display()),
        outputs: vec![path],
    })
}

fn gen_synthetic(config: &PipelineConfig) -> Result<StageOutcome> {
    let actions = load_taxonomy(config.paths.taxonomy.as_deref())?;
    let seed = config.stage_seed(Stage::GenSynthetic);
    let dir = stage_dir(config, Stage::GenSynthetic)?;
    let data_path = dir.join("activations.actv");
    match config.data.source {
        DataSource::Gaussian => {
            let spec = SyntheticSpec {
                n_per_class: config.data.gaussian_per_class,
                hidden_dim: config.data.gaussian_hidden_dim,
                n_layers: config.data.gaussian_layers,
                class_separation: config.data.gaussian_separation,
                seed,
            };
            let dataset = gen_synthetic_activations(&spec, &actions)?;
            let summary = write_dataset(&dataset, &data_path)?;
            Ok(StageOutcome {
                summary: format!(
                    "gen-synthetic: {} gaussian records ({} bytes) -> {}",
                    summary.records,
                    summary.bytes_written,
                    data_path.display()
                ),
                outputs: vec![data_path],
            })
        }
        DataSource::Toy => {
            let model_config = ToyLMConfig {
                init_seed: derive_seed(seed, "model"),
                ..config.model.clone()
            };
            let model = ToyLM::new(model_config)?;
            let model_path = dir.join("model.tlm");
            model.save(&model_path)?;

            let texts = labeled_texts(&actions, config.data.texts_per_action, seed);
            let mut text_lines = String::new();
            for t in &texts {
                text_lines.push_str(&serde_json::to_string(t).expect("serializes"));
                text_lines.push('\n');
            }
            let texts_path = write(dir.join("texts.jsonl"), &text_lines)?;
            let dataset = capture_labeled(&model, &texts)?;
            let written = write_dataset(&dataset, &data_path)?;

            let triplets_path = dir.join("triplets.jsonl");
            save_triplets(
                &belief_triplets(config.data.n_triplets, seed),
                &triplets_path,
            )?;
            let scenarios_path = dir.join("scenarios.jsonl");
            save_scenarios(
                &belief_scenarios(config.data.n_scenarios, seed),
                &scenarios_path,
            )?;
            Ok(StageOutcome {
                summary: format!(
                    "gen-synthetic: toy model, {} labeled records, {} triplets, {} scenarios -> {}",
                    written.records,
                    config.data.n_triplets,
                    config.data.n_scenarios,
                    dir.display()
                ),
                outputs: vec![
                    model_path,
                    texts_path,
                    data_path,
                    triplets_path,
                    scenarios_path,
                ],
            })
        }
    }
}

fn train_probes(config: &PipelineConfig) -> Result<StageOutcome> {
    let data_path = config.input(
        &config.paths.activations,
        config.out.join("synthetic/activations.actv"),
        "activation dataset",
    )?;
    let actions = load_taxonomy(config.paths.taxonomy.as_deref())?;
    let seed = config.stage_seed(Stage::TrainProbes);
    let mut dataset: ActivationDataset = read_dataset(&data_path)?;
    dataset.validate_labels(&actions)?;
    if dataset.records.iter().all(|r| r.split == Split::None) {
        dataset = split_dataset(
            &dataset,
            config.data.train_fraction,
            derive_seed(seed, "split"),
        )?;
    }
    let layers = config
        .probe
        .layers
        .clone()
        .unwrap_or_else(|| (0..dataset.n_layers).collect());
    let names: Vec<String> = actions.iter().map(|a| a.name.clone()).collect();
    let suite = train_suite(&dataset, &names, &layers, &config.probe.train_config(seed))?;
    let dir = stage_dir(config, Stage::TrainProbes)?;
    let index = save_suite(&suite, &dir)?;
    let table = write(dir.join("probes.tsv"), &suite_table(&suite))?;
    let summary = suite.summary();
    let summary_path = write(dir.join("summary.json"), &to_json(&summary))?;
    Ok(StageOutcome {
        summary: format!(
            "train-probes: {} probes, mean AUC {:.4}, mean F1 {:.4} -> {}",
            suite.len(),
            summary.mean_auc,
            summary.mean_f1,
            index.display()
        ),
        outputs: vec![index, table, summary_path],
    })
}

fn build_steering(config: &PipelineConfig) -> Result<StageOutcome> {
    let model = ToyLM::load(&config.model_path()?)?;
    let triplets_path = config.input(
        &config.paths.triplets,
        config.out.join("synthetic/triplets.jsonl"),
        "triplet file",
    )?;
    let set = load_triplets(&triplets_path)?;
    let (pos, neg) = capture_triplets(&model, &set.triplets)?;
    let steering = config.steering_config(model.config().capture_points());
    let vectors = build_steering_vectors(&pos, &neg, &steering)?;
    let dir = stage_dir(config, Stage::BuildSteering)?;
    let index = save_vectors(&vectors, &dir)?;
    Ok(StageOutcome {
        summary: format!(
            "build-steering: {} vectors from {} triplets ({} false / {} true belief) -> {}",
            vectors.len(),
            set.triplets.len(),
            set.n_false_belief,
            set.n_true_belief,
            index.display()
        ),
        outputs: vec![index],
    })
}

fn steering<'a>(config: &PipelineConfig, vectors: &'a [SteeringVector]) -> Steering<'a> {
    Steering {
        vectors,
        multiplier: config.steering.multiplier,
        position: config.steering.position,
    }
}

fn eval_tom(config: &PipelineConfig) -> Result<StageOutcome> {
    let model = ToyLM::load(&config.model_path()?)?;
    let scenarios = load_scenarios(&config.scenarios_path()?)?;
    let vectors = load_vectors(&config.vectors_path()?)?;
    let seed = config.position_seed();
    let baseline = evaluate_set(&model, &scenarios, None, seed)?;
    let steered = evaluate_set(&model, &scenarios, Some(&steering(config, &vectors)), seed)?;
    let comparison = compare_conditions(&baseline.results, &steered.results)?;
    let dir = stage_dir(config, Stage::EvalTom)?;
    let mut rows = results_table(&baseline.results);
    rows.push_str(
        results_table(&steered.results)
            .split_once('\n')
            .map_or("", |(_, rest)| rest),
    );
    let results = write(dir.join("results.tsv"), &rows)?;
    let comparison_path = write(dir.join("comparison.json"), &to_json(&comparison))?;
    Ok(StageOutcome {
        summary: format!(
            "eval-tom: n={} accuracy {:.3} -> {:.3}, {} flips to correct, {} to incorrect",
            comparison.n,
            comparison.acc_baseline,
            comparison.acc_steered,
            comparison.flips_to_correct,
            comparison.flips_to_incorrect
        ),
        outputs: vec![results, comparison_path],
    })
}

fn decompose(config: &PipelineConfig) -> Result<StageOutcome> {
    let model = ToyLM::load(&config.model_path()?)?;
    let scenarios = load_scenarios(&config.scenarios_path()?)?;
    let probes = load_suite(&config.probes_path()?)?;
    let vectors = load_vectors(&config.vectors_path()?)?;
    let actions = load_taxonomy(config.paths.taxonomy.as_deref())?;
    let window = config.window(model.config().capture_points())?;
    let seed = config.position_seed();
    let baseline = capture_all(&model, &scenarios, &probes, &actions, None, window, seed)?;
    let steered = capture_all(
        &model,
        &scenarios,
        &probes,
        &actions,
        Some(&steering(config, &vectors)),
        window,
        seed,
    )?;
    let report = compute_deltas(
        &baseline,
        &steered,
        &actions,
        window,
        config.analysis.threshold,
        config.analysis.top_k,
    )?;
    let dir = stage_dir(config, Stage::Decompose)?;
    let mut outputs = Vec::new();
    for format in [
        ReportFormat::Structured,
        ReportFormat::Table,
        ReportFormat::Figure,
    ] {
        outputs.extend(emit_report(&report, format, &dir)?);
    }
    let max_abs = report
        .actions
        .iter()
        .map(|d| d.mean_delta.abs())
        .fold(0.0, f64::max);
    Ok(StageOutcome {
        summary: format!(
            "decompose: {} scenarios, window {}..={}, max |delta| {:.3} -> {}",
            report.n_scenarios,
            window.start,
            window.end,
            max_abs,
            dir.display()
        ),
        outputs,
    })
}

fn report(config: &PipelineConfig) -> Result<StageOutcome> {
    let model = ToyLM::load(&config.model_path()?)?;
    let probes_summary: SuiteSummary = read_json(&config.input(
        &None,
        config.out.join("probes/summary.json"),
        "probe summary",
    )?)?;
    let evaluation: ComparisonReport = read_json(&config.input(
        &None,
        config.out.join("eval/comparison.json"),
        "evaluation comparison",
    )?)?;
    let deltas = load_report(&config.input(
        &None,
        config.out.join("decompose/deltas.json"),
        "delta report",
    )?)?;
    let vectors = load_vectors(&config.vectors_path()?)?;
    if evaluation.n != deltas.n_scenarios {
        return Err(EvalError::LengthMismatch {
            baseline: evaluation.n,
            steered: deltas.n_scenarios,
        }
        .into());
    }
    let full = PipelineReport {
        seed: config.seed,
        model: model.config().clone(),
        steering_layers: vectors.iter().map(|v| v.layer).collect(),
        multiplier: config.steering.multiplier,
        probes: probes_summary,
        evaluation,
        deltas,
        reference: reference_figures(),
    };
    let dir = stage_dir(config, Stage::Report)?;
    let mut outputs = vec![write(dir.join("report.json"), &to_json(&full))?];
    outputs.extend(emit_report(&full.deltas, ReportFormat::Table, &dir)?);
    outputs.extend(emit_report(&full.deltas, ReportFormat::Figure, &dir)?);
    Ok(StageOutcome {
        summary: format!(
            "report: accuracy {:.3} -> {:.3}, mean probe AUC {:.3} -> {}",
            full.evaluation.acc_baseline,
            full.evaluation.acc_steered,
            full.probes.mean_auc,
            outputs[0].display()
        ),
        outputs,
    })
}

pub fn load_pipeline_report(path: &Path) -> Result<PipelineReport> {
    read_json(path)
}
