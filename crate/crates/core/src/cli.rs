//! Run configuration and the pipeline behind each subcommand: ingest, split,
//! discretize, generate negatives, train if needed, evaluate. The binary is a
//! thin argument layer over these functions, so library calls and command
//! line runs produce identical numbers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    default_q, deployed_evaluate, generate_negatives_for, streaming_evaluate, HistoricalScope, NegativeConfig,
    NegativeSet, TiePolicy,
};
use crate::ingest::{
    chronological_split, dataset_stats, node_map_path, parse_csv, split_at, CsvSchema, Dataset, DatasetStats, Split,
    SplitSpec, SurpriseCounting,
};
use crate::input_mapper::{event_batches, induce_window, snapshot_batches, Batch, Discretization, Partition};
use crate::model::{Event, SnapshotSequence, Timestamp};
use crate::scorer::{EdgeBank, LogisticScorer, Scorer, ScorerKind};
use crate::seed;
use crate::train::{advance, fit, TrainConfig, TrainMode, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Streaming,
    Deployed,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Streaming => "streaming",
            EvalMode::Deployed => "deployed",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streaming" => Ok(EvalMode::Streaming),
            "deployed" => Ok(EvalMode::Deployed),
            other => Err(Error::Parameter(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

/// How test events are grouped for predict-then-update. `Auto` uses
/// snapshots for the logistic scorer and fixed-size event batches otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    #[default]
    Auto,
    Snapshots,
    Events,
}

impl FromStr for Batching {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Batching::Auto),
            "snapshots" => Ok(Batching::Snapshots),
            "events" => Ok(Batching::Events),
            other => Err(Error::Parameter(format!("unknown batching `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub mode: TrainMode,
    pub epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
    /// Candidates tried in order; the best validation MRR wins.
    pub learning_rates: Vec<f64>,
    pub negatives_per_positive: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            mode: d.mode,
            epochs: d.epochs,
            patience: d.patience,
            tolerance: d.tolerance,
            learning_rates: vec![0.001, 0.0002],
            negatives_per_positive: d.negatives_per_positive,
        }
    }
}

/// Everything needed to reproduce a run. Loaded from TOML, then overridden
/// by command line flags; the resolved value is written to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Dataset label for reports; defaults to the file stem.
    pub dataset: Option<String>,
    pub schema: CsvSchema,
    pub split: SplitSpec,
    /// Explicit event-index boundaries `[train_end, val_end]`, overriding `split`.
    pub split_at: Option<[usize; 2]>,
    /// `auto`, `count:N`, a granularity name, or a width in ticks.
    pub granularity: String,
    pub model: ScorerKind,
    pub mode: EvalMode,
    pub tie_policy: TiePolicy,
    /// Negatives per positive; defaults to `min(1000, nodes - 1)`.
    pub q: Option<usize>,
    pub scope: HistoricalScope,
    /// Root seed for negatives, separate from the run seeds so every model
    /// and seed is ranked against the same candidates.
    pub negatives_seed: u64,
    /// Precomputed test negatives (JSONL) to use instead of generating them.
    pub negatives: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub batching: Batching,
    pub batch_size: usize,
    pub respect_ties: bool,
    /// EdgeBank time window in ticks; defaults to the test split's duration.
    pub window: Option<Timestamp>,
    pub surprise: SurpriseCounting,
    pub train: TrainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            dataset: None,
            schema: CsvSchema::default(),
            split: SplitSpec::default(),
            split_at: None,
            granularity: "auto".into(),
            model: ScorerKind::EdgebankInf,
            mode: EvalMode::Streaming,
            tie_policy: TiePolicy::Pessimistic,
            q: None,
            scope: HistoricalScope::PerSource,
            negatives_seed: 0,
            negatives: None,
            seeds: vec![0],
            batching: Batching::Auto,
            batch_size: 200,
            respect_ties: true,
            window: None,
            surprise: SurpriseCounting::Occurrences,
            train: TrainSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn discretization(&self) -> Result<Discretization> {
        self.granularity.parse()
    }

    pub fn batching(&self) -> Batching {
        match (self.batching, self.model) {
            (Batching::Auto, ScorerKind::Logistic) => Batching::Snapshots,
            (Batching::Auto, _) => Batching::Events,
            (b, _) => b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.as_os_str().is_empty() {
            return Err(Error::Config("no dataset given".into()));
        }
        if !self.data.exists() {
            return Err(Error::io(
                &self.data,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
        if let Some(p) = &self.negatives {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "negatives file not found"),
                ));
            }
        }
        self.split.validate()?;
        self.discretization()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.q == Some(0) {
            return Err(Error::Config("q must be >= 1".into()));
        }
        if self.model == ScorerKind::Logistic {
            if self.batching() != Batching::Snapshots {
                return Err(Error::Config("the logistic scorer needs snapshot batching".into()));
            }
            if self.train.learning_rates.is_empty() {
                return Err(Error::Config("no learning rate given".into()));
            }
            for &lr in &self.train.learning_rates {
                self.train_config(lr, 0).validate()?;
            }
        }
        Ok(())
    }

    pub fn train_config(&self, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            patience: self.train.patience,
            tolerance: self.train.tolerance,
            learning_rate,
            mode: self.train.mode,
            negatives_per_positive: self.train.negatives_per_positive,
            seed,
            tie_policy: self.tie_policy,
        }
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let mut ds = parse_csv(&self.data, &self.schema)?;
        if let Some(name) = &self.dataset {
            ds.name = name.clone();
        }
        Ok(ds)
    }

    fn split(&self, ds: &Dataset) -> Result<Split> {
        match self.split_at {
            Some([a, b]) => split_at(&ds.stream, a, b),
            None => chronological_split(&ds.stream, &self.split),
        }
    }
}

/// One split part cut into evaluation batches.
#[derive(Debug, Clone)]
pub struct Part {
    pub batches: Vec<Batch>,
    /// Snapshot view, present under snapshot batching.
    pub snapshots: Option<SnapshotSequence>,
}

impl Part {
    /// Positives in evaluation order.
    pub fn positives(&self) -> Vec<Event> {
        self.batches.iter().flat_map(|b| b.events.iter().copied()).collect()
    }
}

/// Everything shared by all seeds of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    /// Global partition and its label, under snapshot batching.
    pub partition: Option<(Partition, String)>,
    pub train: Part,
    pub val: Part,
    pub test: Part,
    pub q: usize,
    pub window: Timestamp,
    pub test_negatives: NegativeSet,
    /// Only generated when a scorer needs validation.
    pub val_negatives: Option<NegativeSet>,
}

fn make_part(stream: &crate::model::EventStream, partition: Option<&Partition>, cfg: &RunConfig) -> Result<Part> {
    match partition {
        Some(p) => {
            let seq = induce_window(stream, p)?;
            Ok(Part {
                batches: snapshot_batches(&seq),
                snapshots: Some(seq),
            })
        }
        None => Ok(Part {
            batches: event_batches(stream, cfg.batch_size, cfg.respect_ties)?,
            snapshots: None,
        }),
    }
}

fn negative_config(cfg: &RunConfig, q: usize, component: u64) -> NegativeConfig {
    NegativeConfig {
        q,
        seed: seed::derive(cfg.negatives_seed, component),
        scope: cfg.scope,
    }
}

/// Validation negatives: history is the training split.
pub fn validation_negatives(cfg: &RunConfig, prep: &Prepared) -> Result<NegativeSet> {
    generate_negatives_for(
        &prep.split.train,
        &prep.val.positives(),
        prep.dataset.stream.num_nodes(),
        &negative_config(cfg, prep.q, seed::NEGATIVES_VAL),
    )
}

/// Test negatives: history is train and validation together.
pub fn test_negatives(cfg: &RunConfig, prep: &Prepared) -> Result<NegativeSet> {
    generate_negatives_for(
        &prep.split.train_val()?,
        &prep.test.positives(),
        prep.dataset.stream.num_nodes(),
        &negative_config(cfg, prep.q, seed::NEGATIVES_TEST),
    )
}

/// Loads and splits the data, builds batches and negatives.
pub fn prepare(cfg: &RunConfig, with_validation: bool) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let split = cfg.split(&dataset)?;
    let partition = match cfg.batching() {
        Batching::Snapshots => Some(cfg.discretization()?.resolve(&dataset.stream)?),
        _ => None,
    };
    let p = partition.as_ref().map(|(p, _)| p);
    let train = make_part(&split.train, p, cfg)?;
    let val = make_part(&split.val, p, cfg)?;
    let test = make_part(&split.test, p, cfg)?;
    let n = dataset.stream.num_nodes();
    let q = match cfg.q {
        Some(q) => q,
        None if n >= 2 => default_q(n),
        None => return Err(Error::Parameter("need at least 2 nodes to rank".into())),
    };
    let window = cfg.window.unwrap_or(split.test.t_max() - split.test.t_min());
    let mut prep = Prepared {
        dataset,
        split,
        partition,
        train,
        val,
        test,
        q,
        window,
        test_negatives: NegativeSet::default(),
        val_negatives: None,
    };
    prep.test_negatives = match &cfg.negatives {
        Some(path) => NegativeSet::read_jsonl(path)?,
        None => test_negatives(cfg, &prep)?,
    };
    if with_validation {
        prep.val_negatives = Some(validation_negatives(cfg, &prep)?);
    }
    Ok(prep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCandidate {
    pub learning_rate: f64,
    pub best_val_mrr: f64,
}

/// Training report of the selected learning rate plus the search summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    #[serde(flatten)]
    pub report: TrainReport,
    pub candidates: Vec<RateCandidate>,
}

/// Fits the logistic scorer once per candidate learning rate and keeps the
/// best on validation MRR (earliest candidate on ties). The returned scorer
/// has observed the training snapshots.
pub fn train_logistic(cfg: &RunConfig, prep: &Prepared, seed: u64) -> Result<(LogisticScorer, TrainOutcome)> {
    let (Some(train_seq), Some(val_seq)) = (&prep.train.snapshots, &prep.val.snapshots) else {
        return Err(Error::Config("the logistic scorer needs snapshot batching".into()));
    };
    let owned;
    let val_negatives = match &prep.val_negatives {
        Some(v) => v,
        None => {
            owned = validation_negatives(cfg, prep)?;
            &owned
        }
    };
    let n = prep.dataset.stream.num_nodes();
    let mut best: Option<(LogisticScorer, TrainReport)> = None;
    let mut candidates = Vec::new();
    for &lr in &cfg.train.learning_rates {
        let tc = cfg.train_config(lr, seed);
        let (scorer, report) = fit(LogisticScorer::new(), train_seq, val_seq, n, val_negatives, &tc)?;
        candidates.push(RateCandidate {
            learning_rate: lr,
            best_val_mrr: report.best_val_mrr,
        });
        if best.as_ref().is_none_or(|(_, b)| report.best_val_mrr > b.best_val_mrr) {
            best = Some((scorer, report));
        }
    }
    let (scorer, report) = best.ok_or_else(|| Error::Config("no learning rate given".into()))?;
    Ok((scorer, TrainOutcome { report, candidates }))
}

/// Results of one (model, seed) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ScorerKind,
    pub dataset: String,
    pub mode: EvalMode,
    pub seed: u64,
    pub mrr: f64,
    pub per_batch_mrr: Vec<Option<f64>>,
    pub runtime_seconds: f64,
}

/// Builds the scorer for one seed with state through train and validation,
/// then evaluates it on the test batches.
pub fn run_seed(cfg: &RunConfig, prep: &Prepared, seed: u64) -> Result<(RunResult, Option<TrainOutcome>)> {
    let mut training = None;
    let mut scorer: Box<dyn Scorer> = match cfg.model {
        ScorerKind::EdgebankInf | ScorerKind::EdgebankTw => {
            let mut eb = if cfg.model == ScorerKind::EdgebankInf {
                EdgeBank::unlimited()
            } else {
                EdgeBank::time_window(prep.window)
            };
            for b in &prep.train.batches {
                eb.observe(b);
            }
            Box::new(eb)
        }
        ScorerKind::Logistic => {
            let (lr, outcome) = train_logistic(cfg, prep, seed)?;
            training = Some(outcome);
            Box::new(lr)
        }
    };
    match &prep.val.snapshots {
        Some(seq) => advance(scorer.as_mut(), seq),
        None => prep.val.batches.iter().for_each(|b| scorer.observe(b)),
    }

    let start = Instant::now();
    let ranked = match cfg.mode {
        EvalMode::Streaming => streaming_evaluate(
            scorer.as_mut(),
            &prep.test.batches,
            &prep.test_negatives,
            cfg.tie_policy,
        )?,
        EvalMode::Deployed => deployed_evaluate(
            scorer.as_mut(),
            &prep.test.batches,
            &prep.test_negatives,
            cfg.tie_policy,
        )?,
    };
    let runtime_seconds = start.elapsed().as_secs_f64();
    let result = RunResult {
        model: cfg.model,
        dataset: prep.dataset.name.clone(),
        mode: cfg.mode,
        seed,
        mrr: ranked.mrr,
        per_batch_mrr: ranked.per_batch_mrr,
        runtime_seconds,
    };
    Ok((result, training))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: ScorerKind,
    pub dataset: String,
    pub mode: EvalMode,
    pub seeds: Vec<u64>,
    pub mrr_mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single seed.
    pub mrr_std: f64,
    pub mrr_per_seed: Vec<f64>,
}

pub fn summarize(results: &[RunResult]) -> Result<Summary> {
    let first = results
        .first()
        .ok_or_else(|| Error::Parameter("no runs to summarize".into()))?;
    let mrrs: Vec<f64> = results.iter().map(|r| r.mrr).collect();
    let n = mrrs.len() as f64;
    let mean = mrrs.iter().sum::<f64>() / n;
    let std = if mrrs.len() > 1 {
        (mrrs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        model: first.model,
        dataset: first.dataset.clone(),
        mode: first.mode,
        seeds: results.iter().map(|r| r.seed).collect(),
        mrr_mean: mean,
        mrr_std: std,
        mrr_per_seed: mrrs,
    })
}

/// Values derived from data at run time, recorded so a rerun can pin them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub q: usize,
    pub batching: Batching,
    pub granularity: Option<String>,
    pub snapshots: Option<usize>,
    pub window: Option<Timestamp>,
    pub num_nodes: usize,
    pub num_events: usize,
    pub split_sizes: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub resolved: Resolved,
}

pub fn manifest(cfg: &RunConfig, prep: &Prepared) -> Manifest {
    Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        resolved: Resolved {
            q: prep.q,
            batching: cfg.batching(),
            granularity: prep.partition.as_ref().map(|(_, l)| l.clone()),
            snapshots: prep.partition.as_ref().map(|(p, _)| p.count()),
            window: (cfg.model == ScorerKind::EdgebankTw).then_some(prep.window),
            num_nodes: prep.dataset.stream.num_nodes(),
            num_events: prep.dataset.stream.len(),
            split_sizes: [prep.split.train.len(), prep.split.val.len(), prep.split.test.len()],
        },
    }
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub fn results_file_name(cfg: &RunConfig, seed: u64) -> String {
    format!("results-{}-{}-seed{}.json", cfg.model, cfg.mode, seed)
}

/// Full pipeline for every seed, writing into `out`:
/// `manifest.json`, the node map, `negatives-test.jsonl`, one results file
/// per seed, training reports for trainable models and `summary.json`.
/// An `INCOMPLETE` marker holding the error stays behind if the run fails.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"run in progress\n").map_err(|e| Error::io(&marker, e))?;
    match run_into(cfg, out) {
        Ok(summary) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_into(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let prep = prepare(cfg, cfg.model.is_trainable())?;
    write_json(&out.join("manifest.json"), &manifest(cfg, &prep))?;
    prep.dataset.nodes.save(&node_map_path(out, &prep.dataset))?;
    prep.test_negatives.write_jsonl(&out.join("negatives-test.jsonl"))?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (result, training) = run_seed(cfg, &prep, seed)?;
        if let Some(t) = training {
            write_json(&out.join(format!("train-{}-seed{}.json", cfg.model, seed)), &t)?;
        }
        write_json(&out.join(results_file_name(cfg, seed)), &result)?;
        results.push(result);
    }
    let summary = summarize(&results)?;
    write_json(&out.join(format!("summary-{}-{}.json", cfg.model, cfg.mode)), &summary)?;
    Ok(summary)
}

/// Single-seed evaluation (the first configured seed).
pub fn cmd_eval(cfg: &RunConfig) -> Result<RunResult> {
    let prep = prepare(cfg, cfg.model.is_trainable())?;
    Ok(run_seed(cfg, &prep, cfg.seeds[0])?.0)
}

/// Trains the logistic scorer with the first configured seed.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    if cfg.model != ScorerKind::Logistic {
        return Err(Error::Config(format!("model `{}` has nothing to train", cfg.model)));
    }
    let prep = prepare(cfg, true)?;
    Ok(train_logistic(cfg, &prep, cfg.seeds[0])?.1)
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<DatasetStats> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    dataset_stats(&ds.stream, &cfg.split, &cfg.discretization()?, cfg.surprise)
}

/// One line of the snapshot manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub index: usize,
    pub t_lo: Timestamp,
    pub t_hi: Timestamp,
    pub num_edges: usize,
    pub num_nodes: usize,
}

pub fn cmd_discretize(cfg: &RunConfig) -> Result<Vec<SnapshotLine>> {
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    let (p, _) = cfg.discretization()?.resolve(&ds.stream)?;
    let seq = crate::input_mapper::induce_snapshots(&ds.stream, &p)?;
    Ok(seq
        .snapshots()
        .iter()
        .map(|s| SnapshotLine {
            index: s.index,
            t_lo: s.lo,
            t_hi: s.hi,
            num_edges: s.edges.len(),
            num_nodes: s.nodes.len(),
        })
        .collect())
}

/// Writes `negatives-val.jsonl` and `negatives-test.jsonl` into `out`.
pub fn cmd_gen_negatives(cfg: &RunConfig, out: &Path) -> Result<(NegativeSet, NegativeSet)> {
    let mut cfg = cfg.clone();
    cfg.negatives = None;
    let prep = prepare(&cfg, true)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let val = prep.val_negatives.expect("requested validation negatives");
    val.write_jsonl(&out.join("negatives-val.jsonl"))?;
    prep.test_negatives.write_jsonl(&out.join("negatives-test.jsonl"))?;
    Ok((val, prep.test_negatives))
}
