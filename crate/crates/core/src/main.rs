use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tgbridge::cli::{self, RunConfig};
use tgbridge::ingest::SplitSpec;
use tgbridge::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "tgbridge",
    version,
    about = "Temporal graph discretization and streaming link-prediction benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset statistics: nodes, edges, unique edges, surprise, snapshots.
    Stats(Opts),
    /// Snapshot manifest, one JSON line per snapshot.
    Discretize(Opts),
    /// Fixed validation and test negatives as JSONL (requires --out DIR).
    GenNegatives(Opts),
    /// Train the logistic scorer and print its training report.
    Train(Opts),
    /// Evaluate one model with one seed and print the results JSON.
    Eval(Opts),
    /// Full pipeline over every seed, writing artifacts into --out DIR.
    Run(Opts),
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Debug)]
struct Opts {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV: src,dst,t[,t_end][,weight].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset label for reports.
    #[arg(long)]
    name: Option<String>,
    /// First CSV row names the columns.
    #[arg(long)]
    header: bool,
    /// Fourth column holds t_end (headerless files).
    #[arg(long)]
    t_end: bool,
    /// Last column holds a weight (headerless files).
    #[arg(long)]
    weight: bool,
    /// Train,val,test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<f64>>,
    /// Explicit train_end,val_end event indices.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    split_at: Option<Vec<usize>>,
    /// auto, count:N, second|minute|hour|day|week|month, or a width in ticks.
    #[arg(long)]
    granularity: Option<String>,
    /// Number of snapshots (same as --granularity count:N).
    #[arg(long, conflicts_with = "granularity")]
    count: Option<usize>,
    /// Finest named granularity without empty snapshots.
    #[arg(long, conflicts_with_all = ["granularity", "count"])]
    auto_finest: bool,
    /// edgebank-inf, edgebank-tw or logistic.
    #[arg(long)]
    model: Option<String>,
    /// streaming or deployed; for `train`, the training mode: per-snapshot (alias utg) or accumulated.
    #[arg(long)]
    mode: Option<String>,
    /// Training mode for run and eval: per-snapshot (alias utg) or accumulated.
    #[arg(long)]
    train_mode: Option<String>,
    /// pessimistic, optimistic or mean.
    #[arg(long)]
    tie_policy: Option<String>,
    /// Negatives per positive.
    #[arg(long)]
    q: Option<usize>,
    /// Historical negative pool: per-source or global.
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    negatives_seed: Option<u64>,
    /// Precomputed test negatives (JSONL).
    #[arg(long)]
    negatives: Option<PathBuf>,
    /// Run seed(s), comma separated.
    #[arg(long, alias = "seeds", value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// auto, snapshots or events.
    #[arg(long)]
    batching: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Let event batches split events that share a timestamp.
    #[arg(long)]
    split_ties: bool,
    /// EdgeBank time window in ticks.
    #[arg(long)]
    window: Option<u64>,
    /// Surprise counting: occurrences or unique_pairs.
    #[arg(long)]
    surprise: Option<String>,
    /// Learning rate(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Training negatives per positive.
    #[arg(long)]
    train_negatives: Option<usize>,
    /// Output file (stats, discretize, train, eval) or directory (gen-negatives, run).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = Error>>(v: &Option<String>) -> Result<Option<T>> {
    v.as_deref().map(str::parse).transpose()
}

fn enum_value<T: serde::de::DeserializeOwned>(v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.replace('-', "_")))
        .map_err(|_| Error::Config(format!("unrecognized value `{v}`")))
}

impl Opts {
    /// Defaults, then the config file, then flags.
    fn resolve(&self, training_command: bool) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data = v.clone();
        }
        if let Some(v) = &self.name {
            c.dataset = Some(v.clone());
        }
        c.schema.header |= self.header;
        c.schema.t_end |= self.t_end;
        c.schema.weight |= self.weight;
        if let Some(v) = &self.split {
            c.split = SplitSpec::new(v[0], v[1], v[2])?;
        }
        if let Some(v) = &self.split_at {
            c.split_at = Some([v[0], v[1]]);
        }
        if let Some(v) = &self.granularity {
            c.granularity = v.clone();
        }
        if let Some(n) = self.count {
            c.granularity = format!("count:{n}");
        }
        if self.auto_finest {
            c.granularity = "auto".into();
        }
        if let Some(v) = parse(&self.model)? {
            c.model = v;
        }
        match (&self.mode, training_command) {
            (Some(m), true) => c.train.mode = m.parse()?,
            (Some(m), false) => c.mode = m.parse()?,
            (None, _) => {}
        }
        if let Some(v) = parse(&self.train_mode)? {
            c.train.mode = v;
        }
        if let Some(v) = parse(&self.tie_policy)? {
            c.tie_policy = v;
        }
        if let Some(v) = self.q {
            c.q = Some(v);
        }
        if let Some(v) = parse(&self.scope)? {
            c.scope = v;
        }
        if let Some(v) = self.negatives_seed {
            c.negatives_seed = v;
        }
        if let Some(v) = &self.negatives {
            c.negatives = Some(v.clone());
        }
        if let Some(v) = &self.seed {
            c.seeds = v.clone();
        }
        if let Some(v) = parse(&self.batching)? {
            c.batching = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if self.split_ties {
            c.respect_ties = false;
        }
        if let Some(v) = self.window {
            c.window = Some(v);
        }
        if let Some(v) = &self.surprise {
            c.surprise = enum_value(v)?;
        }
        if let Some(v) = &self.lr {
            c.train.learning_rates = v.clone();
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
            // a bare --epochs below the default patience is not a config error
            c.train.patience = c.train.patience.min(v);
        }
        if let Some(v) = self.patience {
            c.train.patience = v;
        }
        if let Some(v) = self.tolerance {
            c.train.tolerance = v;
        }
        if let Some(v) = self.train_negatives {
            c.train.negatives_per_positive = v;
        }
        Ok(c)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out DIR is required".into()))
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => cli::write_json(p, value),
        None => {
            let mut s = serde_json::to_string_pretty(value)?;
            s.push('\n');
            io::stdout().write_all(s.as_bytes()).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

fn emit_lines<T: Serialize>(out: Option<&Path>, values: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v)?;
        buf.push(b'\n');
    }
    match out {
        Some(p) => cli::write_atomic(p, &buf),
        None => BufWriter::new(io::stdout()).write_all(&buf).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Stats(o) => emit_json(o.out.as_deref(), &cli::cmd_stats(&o.resolve(false)?)?),
        Command::Discretize(o) => emit_lines(o.out.as_deref(), &cli::cmd_discretize(&o.resolve(false)?)?),
        Command::GenNegatives(o) => {
            let (val, test) = cli::cmd_gen_negatives(&o.resolve(false)?, o.out_dir()?)?;
            eprintln!(
                "wrote {} validation and {} test negative lists (q = {})",
                val.len(),
                test.len(),
                test.q
            );
            Ok(())
        }
        Command::Train(o) => {
            let mut cfg = o.resolve(true)?;
            if o.model.is_none() && o.config.is_none() {
                cfg.model = tgbridge::scorer::ScorerKind::Logistic;
            }
            emit_json(o.out.as_deref(), &cli::cmd_train(&cfg)?)
        }
        Command::Eval(o) => emit_json(o.out.as_deref(), &cli::cmd_eval(&o.resolve(false)?)?),
        Command::Run(o) => {
            let summary = cli::cmd_run(&o.resolve(false)?, o.out_dir()?)?;
            emit_json(None, &summary)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match execute(&args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
