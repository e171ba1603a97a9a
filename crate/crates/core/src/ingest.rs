//! Dataset ingestion: CSV parsing with dense node remapping, chronological
//! splits and the dataset statistics table (including the surprise index).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input_mapper::Discretization;
use crate::model::{validate_stream, Event, EventStream, NodeId, Timestamp};

/// Column layout of an input CSV. With `header` set, the optional columns
/// are detected from the header names (`src,dst,t,t_end,weight`) and the
/// two flags are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub header: bool,
    pub t_end: bool,
    pub weight: bool,
}

#[derive(Debug, Clone, Copy)]
struct Columns {
    src: usize,
    dst: usize,
    t: usize,
    t_end: Option<usize>,
    weight: Option<usize>,
}

impl Columns {
    fn positional(schema: &CsvSchema) -> Self {
        let t_end = schema.t_end.then_some(3);
        let weight = schema.weight.then_some(if schema.t_end { 4 } else { 3 });
        Columns {
            src: 0,
            dst: 1,
            t: 2,
            t_end,
            weight,
        }
    }

    fn from_header(path: &Path, header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let required =
            |name: &str| find(name).ok_or_else(|| Error::parse(path, 1, format!("header has no `{name}` column")));
        Ok(Columns {
            src: required("src")?,
            dst: required("dst")?,
            t: required("t")?,
            t_end: find("t_end"),
            weight: find("weight"),
        })
    }

    fn width(&self) -> usize {
        [Some(self.src), Some(self.dst), Some(self.t), self.t_end, self.weight]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// Dense node index to raw id, persisted next to reports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeMap {
    pub raw_ids: Vec<u64>,
}

impl NodeMap {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub stream: EventStream,
    pub nodes: NodeMap,
}

fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(t) = raw.parse::<Timestamp>() {
        return Some(t);
    }
    // Integer-valued decimals such as `36.0` are common in exported datasets.
    let (int, frac) = raw.split_once('.')?;
    if !frac.is_empty() && frac.bytes().all(|b| b == b'0') {
        int.parse().ok()
    } else {
        None
    }
}

/// Reads `src,dst,t[,t_end][,weight]` rows; node ids are remapped to
/// `0..n` in order of first appearance.
pub fn parse_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut columns = Columns::positional(schema);
    let mut ids: FxHashMap<u64, NodeId> = FxHashMap::default();
    let mut raw_ids = Vec::new();
    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;

    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if first && schema.header {
            columns = Columns::from_header(path, &record)?;
            first = false;
            continue;
        }
        first = false;
        if record.len() < columns.width() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} columns, found {}", columns.width(), record.len()),
            ));
        }
        let node = |col: usize, what: &str| -> Result<u64> {
            record[col]
                .parse::<u64>()
                .map_err(|_| Error::parse(path, line, format!("{what} `{}` is not a node id", &record[col])))
        };
        let time = |col: usize, what: &str| -> Result<Timestamp> {
            parse_timestamp(&record[col]).ok_or_else(|| {
                Error::parse(
                    path,
                    line,
                    format!("{what} `{}` is not an integer timestamp", &record[col]),
                )
            })
        };
        let (src, dst) = (node(columns.src, "src")?, node(columns.dst, "dst")?);
        let t_start = time(columns.t, "t")?;
        let t_end = match columns.t_end {
            Some(c) => time(c, "t_end")?,
            None => t_start,
        };
        let weight = match columns.weight {
            Some(c) => record[c]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("weight `{}` is not a number", &record[c])))?,
            None => 1.0,
        };
        let mut dense = |raw: u64| {
            *ids.entry(raw).or_insert_with(|| {
                raw_ids.push(raw);
                (raw_ids.len() - 1) as NodeId
            })
        };
        let (src, dst) = (dense(src), dense(dst));
        events.push(Event {
            src,
            dst,
            t_start,
            t_end,
            weight,
        });
    }

    let stream = validate_stream(events)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        stream,
        nodes: NodeMap { raw_ids },
    })
}

/// Sidecar path for a dataset's node map: `<stem>.nodes.json` in `dir`.
pub fn node_map_path(dir: &Path, dataset: &Dataset) -> PathBuf {
    dir.join(format!("{}.nodes.json", dataset.name))
}

/// Train/validation/test fractions of the event count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let spec = SplitSpec { train, val, test };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train, self.val, self.test];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Parameter(format!(
                "split fractions must lie in (0, 1): {fracs:?}"
            )));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("split fractions must sum to 1: {fracs:?}")));
        }
        Ok(())
    }

    /// End indices (exclusive) of the train and validation parts for `n` events.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        (floor_count(self.train, n), floor_count(self.train + self.val, n))
    }
}

/// `⌊frac · n⌋`, snapping products that land within rounding noise of an integer.
fn floor_count(frac: f64, n: usize) -> usize {
    let v = frac * n as f64;
    let r = v.round();
    if (v - r).abs() <= 1e-9 * (n as f64).max(1.0) {
        r as usize
    } else {
        v.floor() as usize
    }
}

/// The three chronological parts. Each shares the parent's node universe.
/// Events with identical timestamps can fall on both sides of a boundary;
/// the cut is by position in the (stably sorted) stream.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: EventStream,
    pub val: EventStream,
    pub test: EventStream,
}

impl Split {
    pub fn train_val(&self) -> Result<EventStream> {
        self.train.concat(&self.val)
    }
}

pub fn chronological_split(stream: &EventStream, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let (a, b) = spec.boundaries(stream.len());
    split_at(stream, a, b)
}

/// Split at explicit event indices: train `..train_end`, val
/// `train_end..val_end`, test `val_end..`.
pub fn split_at(stream: &EventStream, train_end: usize, val_end: usize) -> Result<Split> {
    let n = stream.len();
    if train_end > val_end || val_end > n {
        return Err(Error::Parameter(format!(
            "split boundaries {train_end}, {val_end} invalid for {n} events"
        )));
    }
    let events = stream.events();
    let part = |range: std::ops::Range<usize>, name: &'static str| {
        if range.is_empty() {
            return Err(Error::EmptySplit(name));
        }
        EventStream::with_num_nodes(events[range].to_vec(), stream.num_nodes())
    };
    Ok(Split {
        train: part(0..train_end, "train")?,
        val: part(train_end..val_end, "validation")?,
        test: part(val_end..n, "test")?,
    })
}

/// Whether the surprise index counts test edge occurrences or distinct pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurpriseCounting {
    #[default]
    Occurrences,
    UniquePairs,
}

/// Fraction of test edges whose `(src, dst)` pair never occurs in training.
pub fn surprise_index(train: &EventStream, test: &EventStream, counting: SurpriseCounting) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Parameter("surprise index of an empty test set".into()));
    }
    let seen: FxHashSet<(NodeId, NodeId)> = train.events().iter().map(Event::pair).collect();
    let (unseen, total) = match counting {
        SurpriseCounting::Occurrences => {
            let unseen = test.events().iter().filter(|e| !seen.contains(&e.pair())).count();
            (unseen, test.len())
        }
        SurpriseCounting::UniquePairs => {
            let pairs: FxHashSet<_> = test.events().iter().map(Event::pair).collect();
            let unseen = pairs.iter().filter(|p| !seen.contains(p)).count();
            (unseen, pairs.len())
        }
    };
    Ok(unseen as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    #[serde(rename = "nodes")]
    pub num_nodes: usize,
    #[serde(rename = "edges")]
    pub num_edges: usize,
    #[serde(rename = "unique_edges")]
    pub num_unique_edges: usize,
    /// `None` when the stream is too short for every split part to be non-empty.
    pub surprise: Option<f64>,
    pub granularity: String,
    pub snapshots: usize,
}

pub fn dataset_stats(
    stream: &EventStream,
    spec: &SplitSpec,
    discretization: &Discretization,
    counting: SurpriseCounting,
) -> Result<DatasetStats> {
    let nodes: FxHashSet<NodeId> = stream.events().iter().flat_map(|e| [e.src, e.dst]).collect();
    let pairs: FxHashSet<_> = stream.events().iter().map(Event::pair).collect();
    let surprise = match chronological_split(stream, spec) {
        Ok(split) => Some(surprise_index(&split.train, &split.test, counting)?),
        Err(Error::EmptySplit(_)) => None,
        Err(e) => return Err(e),
    };
    let (partition, granularity) = discretization.resolve(stream)?;
    Ok(DatasetStats {
        num_nodes: nodes.len(),
        num_edges: stream.len(),
        num_unique_edges: pairs.len(),
        surprise,
        granularity,
        snapshots: partition.count(),
    })
}
