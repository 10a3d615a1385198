//! Input data model: perception, feature and bitrate records plus the dataset
//! manifest that declares which machines, images and quality levels exist.
//!
//! All collections are keyed `machine -> image -> level` in ordered maps, so
//! iteration order never depends on the order records arrived in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A compression quality level. `ORIGINAL` (qp 0) is the uncompressed image
/// and orders before every coded level; coded levels order by qp, i.e. by
/// increasing degradation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityLevel(u32);

impl QualityLevel {
    pub const ORIGINAL: QualityLevel = QualityLevel(0);

    pub fn coded(qp: u32) -> Result<Self> {
        if qp == 0 {
            return Err(Error::invalid("quality level", "qp 0 is reserved for the original"));
        }
        Ok(QualityLevel(qp))
    }

    /// Interprets an on-disk qp, where 0 denotes the original.
    pub fn from_qp(qp: u32) -> Self {
        QualityLevel(qp)
    }

    pub fn qp(self) -> u32 {
        self.0
    }

    pub fn is_original(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_original() {
            write!(f, "original")
        } else {
            write!(f, "qp{}", self.0)
        }
    }
}

/// Coded quality levels in ascending degradation order. Never contains
/// `ORIGINAL`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct QpLadder {
    levels: Vec<QualityLevel>,
}

impl QpLadder {
    pub fn new(qps: impl IntoIterator<Item = u32>) -> Result<Self> {
        let levels = qps
            .into_iter()
            .map(QualityLevel::coded)
            .collect::<Result<Vec<_>>>()?;
        if levels.is_empty() {
            return Err(Error::invalid("ladder", "ladder is empty"));
        }
        if let Some(w) = levels.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "ladder",
                format!("qps must be strictly increasing ({} then {})", w[0].qp(), w[1].qp()),
            ));
        }
        Ok(QpLadder { levels })
    }

    /// The 36-level HEVC annotation ladder: 11, 13, 15, 17, 19, 21, then 22..=51.
    pub fn hevc_annotation() -> Self {
        let qps = [11, 13, 15, 17, 19].into_iter().chain(21..=51);
        QpLadder::new(qps).expect("static ladder is valid")
    }

    /// Contiguous ladder `lo..=hi`, e.g. the 32..=51 diversity ladder.
    pub fn contiguous(lo: u32, hi: u32) -> Result<Self> {
        QpLadder::new(lo..=hi)
    }

    pub fn levels(&self) -> &[QualityLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, level: QualityLevel) -> Option<usize> {
        self.levels.binary_search(&level).ok()
    }

    pub fn contains(&self, level: QualityLevel) -> bool {
        level.is_original() || self.index_of(level).is_some()
    }

    /// `ORIGINAL` followed by every coded level.
    pub fn with_original(&self) -> impl Iterator<Item = QualityLevel> + '_ {
        std::iter::once(QualityLevel::ORIGINAL).chain(self.levels.iter().copied())
    }

    pub fn first(&self) -> QualityLevel {
        self.levels[0]
    }

    pub fn last(&self) -> QualityLevel {
        self.levels[self.levels.len() - 1]
    }
}

impl TryFrom<Vec<u32>> for QpLadder {
    type Error = Error;

    fn try_from(qps: Vec<u32>) -> Result<Self> {
        QpLadder::new(qps)
    }
}

impl From<QpLadder> for Vec<u32> {
    fn from(ladder: QpLadder) -> Self {
        ladder.levels.iter().map(|l| l.qp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Detection,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Detection => "detection",
        })
    }
}

/// Category ids ranked by descending probability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationPrediction {
    ranked: Vec<u32>,
}

impl ClassificationPrediction {
    pub fn new(ranked: Vec<u32>) -> Result<Self> {
        if ranked.is_empty() {
            return Err(Error::invalid("classification prediction", "ranking is empty"));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = ranked.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::invalid(
                "classification prediction",
                format!("category {dup} ranked twice"),
            ));
        }
        Ok(ClassificationPrediction { ranked })
    }

    pub fn ranked(&self) -> &[u32] {
        &self.ranked
    }

    pub fn top1(&self) -> u32 {
        self.ranked[0]
    }

    pub fn top_k(&self, k: usize) -> &[u32] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels, top-left origin, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("bbox", "coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid("bbox", format!("non-positive size {w}x{h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    #[serde(rename = "cat")]
    pub category: u32,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: u32, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(
                "detection",
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        Ok(Detection {
            bbox,
            category,
            confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Classification(ClassificationPrediction),
    Detections(Vec<Detection>),
}

impl Payload {
    pub fn task(&self) -> Task {
        match self {
            Payload::Classification(_) => Task::Classification,
            Payload::Detections(_) => Task::Detection,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionRecord {
    pub machine: String,
    pub image: String,
    pub level: QualityLevel,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub extractor: String,
    pub image: String,
    pub level: QualityLevel,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitrateRecord {
    pub image: String,
    pub level: QualityLevel,
    pub bpp: f64,
}

/// Identifies one `(machine, image, level)` cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub machine: String,
    pub image: String,
    pub level: QualityLevel,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.machine, self.image, self.level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub ladder: QpLadder,
    pub machines: Vec<String>,
    pub images: Vec<String>,
    /// Named machine libraries, each a subset of `machines`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub libraries: BTreeMap<String, Vec<String>>,
}

impl DatasetManifest {
    /// Loads a TOML (`.toml`) or JSON manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines.is_empty() {
            return Err(Error::invalid("manifest", "machine list is empty"));
        }
        let machines = unique(&self.machines, "machine")?;
        unique(&self.images, "image")?;
        for (name, members) in &self.libraries {
            if members.is_empty() {
                return Err(Error::invalid("manifest", format!("library `{name}` is empty")));
            }
            unique(members, "library member")?;
            if let Some(m) = members.iter().find(|m| !machines.contains(m.as_str())) {
                return Err(Error::invalid(
                    "manifest",
                    format!("library `{name}` lists undeclared machine `{m}`"),
                ));
            }
        }
        Ok(())
    }

    /// Machines of a named library; `None` or `"all"` selects every machine.
    pub fn library(&self, name: Option<&str>) -> Result<&[String]> {
        match name {
            None | Some("all") => Ok(&self.machines),
            Some(n) => self
                .libraries
                .get(n)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::missing("machine library", n)),
        }
    }

    pub fn has_machine(&self, id: &str) -> bool {
        self.machines.iter().any(|m| m == id)
    }

    pub fn has_image(&self, id: &str) -> bool {
        self.images.iter().any(|m| m == id)
    }
}

fn unique<'a>(ids: &'a [String], what: &str) -> Result<BTreeSet<&'a str>> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid("manifest", format!("duplicate {what} `{id}`")));
        }
    }
    Ok(seen)
}

/// Values keyed by `(outer, image, level)`, where `outer` is the machine or
/// extractor id.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap<V> {
    cells: BTreeMap<String, BTreeMap<String, BTreeMap<QualityLevel, V>>>,
    len: usize,
}

impl<V> Default for CellMap<V> {
    fn default() -> Self {
        CellMap {
            cells: BTreeMap::new(),
            len: 0,
        }
    }
}

impl<V> CellMap<V> {
    /// Inserts a value; on a duplicate key the value is handed back.
    pub fn insert(&mut self, outer: &str, image: &str, level: QualityLevel, value: V) -> Result<(), V> {
        let slot = self
            .cells
            .entry(outer.to_owned())
            .or_default()
            .entry(image.to_owned())
            .or_default();
        if slot.contains_key(&level) {
            return Err(value);
        }
        slot.insert(level, value);
        self.len += 1;
        Ok(())
    }

    pub fn get(&self, outer: &str, image: &str, level: QualityLevel) -> Option<&V> {
        self.cells.get(outer)?.get(image)?.get(&level)
    }

    pub fn contains(&self, outer: &str, image: &str, level: QualityLevel) -> bool {
        self.get(outer, image, level).is_some()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, QualityLevel, &V)> + '_ {
        self.cells.iter().flat_map(|(o, images)| {
            images.iter().flat_map(move |(i, levels)| {
                levels.iter().map(move |(l, v)| (o.as_str(), i.as_str(), *l, v))
            })
        })
    }

    pub fn outer_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.cells.keys().map(String::as_str)
    }

    fn merge(&mut self, other: CellMap<V>) -> Result<()> {
        for (o, images) in other.cells {
            for (i, levels) in images {
                for (l, v) in levels {
                    if self.insert(&o, &i, l, v).is_err() {
                        return Err(Error::Duplicate {
                            line: 0,
                            key: CellKey {
                                machine: o.clone(),
                                image: i.clone(),
                                level: l,
                            }
                            .to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Validated perception records of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionSet {
    pub task: Task,
    pub cells: CellMap<Payload>,
}

impl PerceptionSet {
    pub fn new(task: Task) -> Self {
        PerceptionSet {
            task,
            cells: CellMap::default(),
        }
    }

    pub fn insert(&mut self, record: PerceptionRecord) -> Result<()> {
        if record.payload.task() != self.task {
            return Err(Error::invalid(
                "perception record",
                format!("{} payload in a {} dataset", record.payload.task(), self.task),
            ));
        }
        let PerceptionRecord {
            machine,
            image,
            level,
            payload,
        } = record;
        self.cells
            .insert(&machine, &image, level, payload)
            .map_err(|_| Error::Duplicate {
                line: 0,
                key: CellKey {
                    machine,
                    image,
                    level,
                }
                .to_string(),
            })
    }

    pub fn get(&self, machine: &str, image: &str, level: QualityLevel) -> Option<&Payload> {
        self.cells.get(machine, image, level)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = PerceptionRecord> + '_ {
        self.cells.iter().map(|(m, i, l, p)| PerceptionRecord {
            machine: m.to_owned(),
            image: i.to_owned(),
            level: l,
            payload: p.clone(),
        })
    }

    pub fn merge(&mut self, other: PerceptionSet) -> Result<()> {
        if other.task != self.task {
            return Err(Error::invalid("perception shards", "shards disagree on task"));
        }
        self.cells.merge(other.cells)
    }
}

/// Feature vectors keyed by `(extractor, image, level)`; every extractor has a
/// single dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub cells: CellMap<Vec<f64>>,
    dims: BTreeMap<String, usize>,
}

impl FeatureSet {
    pub fn insert(&mut self, record: FeatureRecord) -> Result<()> {
        self.insert_at(record, 0)
    }

    fn insert_at(&mut self, record: FeatureRecord, line: usize) -> Result<()> {
        let FeatureRecord {
            extractor,
            image,
            level,
            vector,
        } = record;
        if vector.is_empty() {
            return Err(Error::Malformed {
                line,
                message: "empty feature vector".into(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                line,
                message: "non-finite feature entry".into(),
            });
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(Error::Malformed {
                line,
                message: "zero-norm feature vector".into(),
            });
        }
        match self.dims.get(&extractor) {
            Some(&d) if d != vector.len() => {
                return Err(Error::DimensionMismatch {
                    line,
                    extractor,
                    expected: d,
                    found: vector.len(),
                })
            }
            Some(_) => {}
            None => {
                self.dims.insert(extractor.clone(), vector.len());
            }
        }
        self.cells
            .insert(&extractor, &image, level, vector)
            .map_err(|_| Error::Duplicate {
                line,
                key: CellKey {
                    machine: extractor,
                    image,
                    level,
                }
                .to_string(),
            })
    }

    pub fn get(&self, extractor: &str, image: &str, level: QualityLevel) -> Option<&[f64]> {
        self.cells.get(extractor, image, level).map(Vec::as_slice)
    }

    pub fn dim(&self, extractor: &str) -> Option<usize> {
        self.dims.get(extractor).copied()
    }

    pub fn extractors(&self) -> impl Iterator<Item = &str> + '_ {
        self.dims.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = FeatureRecord> + '_ {
        self.cells.iter().map(|(e, i, l, v)| FeatureRecord {
            extractor: e.to_owned(),
            image: i.to_owned(),
            level: l,
            vector: v.clone(),
        })
    }
}

/// Bits per pixel keyed by `(image, coded level)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BitrateTable {
    rates: BTreeMap<String, BTreeMap<QualityLevel, f64>>,
}

impl BitrateTable {
    pub fn insert(&mut self, record: BitrateRecord) -> Result<()> {
        if record.level.is_original() {
            return Err(Error::invalid("bitrate record", "qp 0 (original) has no bitrate"));
        }
        if !(record.bpp > 0.0 && record.bpp.is_finite()) {
            return Err(Error::invalid(
                "bitrate record",
                format!("bpp must be positive, got {}", record.bpp),
            ));
        }
        let slot = self.rates.entry(record.image.clone()).or_default();
        if slot.contains_key(&record.level) {
            return Err(Error::Duplicate {
                line: 0,
                key: format!("({}, {})", record.image, record.level),
            });
        }
        slot.insert(record.level, record.bpp);
        Ok(())
    }

    pub fn get(&self, image: &str, level: QualityLevel) -> Option<f64> {
        self.rates.get(image)?.get(&level).copied()
    }

    pub fn len(&self) -> usize {
        self.rates.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = BitrateRecord> + '_ {
        self.rates.iter().flat_map(|(i, levels)| {
            levels.iter().map(move |(l, b)| BitrateRecord {
                image: i.clone(),
                level: *l,
                bpp: *b,
            })
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassificationLine {
    machine: String,
    image: String,
    qp: u32,
    topk: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    machine: String,
    image: String,
    qp: u32,
    dets: Vec<Detection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    extractor: String,
    image: String,
    qp: u32,
    vec: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BitrateRow {
    image: String,
    qp: u32,
    bpp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Classification,
    Detection,
    Feature,
    Bitrate,
}

impl std::str::FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(RecordKind::Classification),
            "detection" | "det" => Ok(RecordKind::Detection),
            "feature" | "features" => Ok(RecordKind::Feature),
            "bitrate" | "bitrates" => Ok(RecordKind::Bitrate),
            other => Err(Error::invalid("record kind", other.to_owned())),
        }
    }
}

impl From<Task> for RecordKind {
    fn from(task: Task) -> Self {
        match task {
            Task::Classification => RecordKind::Classification,
            Task::Detection => RecordKind::Detection,
        }
    }
}

/// Any validated collection produced by [`ingest`].
#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    Perceptions(PerceptionSet),
    Features(FeatureSet),
    Bitrates(BitrateTable),
}

impl Ingested {
    pub fn len(&self) -> usize {
        match self {
            Ingested::Perceptions(p) => p.len(),
            Ingested::Features(f) => f.len(),
            Ingested::Bitrates(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn ingest(path: impl AsRef<Path>, kind: RecordKind, manifest: Option<&DatasetManifest>) -> Result<Ingested> {
    let path = path.as_ref();
    Ok(match kind {
        RecordKind::Classification => {
            Ingested::Perceptions(ingest_perceptions(path, Task::Classification, manifest)?)
        }
        RecordKind::Detection => Ingested::Perceptions(ingest_perceptions(path, Task::Detection, manifest)?),
        RecordKind::Feature => Ingested::Features(ingest_features(path, manifest)?),
        RecordKind::Bitrate => Ingested::Bitrates(ingest_bitrates(path, manifest)?),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn ingest_perceptions(path: impl AsRef<Path>, task: Task, manifest: Option<&DatasetManifest>) -> Result<PerceptionSet> {
    let path = path.as_ref();
    read_perceptions(open(path)?, task, manifest).map_err(|e| with_path(e, path))
}

/// Ingests several shards in parallel and merges them; the result does not
/// depend on shard order or scheduling.
pub fn ingest_perception_shards<P: AsRef<Path> + Sync>(
    paths: &[P],
    task: Task,
    manifest: Option<&DatasetManifest>,
) -> Result<PerceptionSet> {
    let shards = paths
        .par_iter()
        .map(|p| ingest_perceptions(p, task, manifest))
        .collect::<Result<Vec<_>>>()?;
    let mut merged = PerceptionSet::new(task);
    for shard in shards {
        merged.merge(shard)?;
    }
    Ok(merged)
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

fn check_membership(
    manifest: Option<&DatasetManifest>,
    machine: Option<&str>,
    image: &str,
    level: QualityLevel,
    line: usize,
) -> Result<()> {
    let Some(m) = manifest else { return Ok(()) };
    if let Some(machine) = machine {
        if !m.has_machine(machine) {
            return Err(Error::Unknown {
                line,
                what: "machine",
                id: machine.to_owned(),
            });
        }
    }
    if !m.has_image(image) {
        return Err(Error::Unknown {
            line,
            what: "image",
            id: image.to_owned(),
        });
    }
    if !m.ladder.contains(level) {
        return Err(Error::Unknown {
            line,
            what: "qp",
            id: level.qp().to_string(),
        });
    }
    Ok(())
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
}

fn malformed(line: usize, e: impl fmt::Display) -> Error {
    Error::Malformed {
        line,
        message: e.to_string(),
    }
}

pub fn read_perceptions<R: BufRead>(reader: R, task: Task, manifest: Option<&DatasetManifest>) -> Result<PerceptionSet> {
    if let Some(m) = manifest {
        if m.task != task {
            return Err(Error::invalid(
                "perception records",
                format!("manifest declares a {} dataset, records are {task}", m.task),
            ));
        }
    }
    let mut set = PerceptionSet::new(task);
    for (line_no, line) in lines(reader) {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let (machine, image, qp, payload) = match task {
            Task::Classification => {
                let rec: ClassificationLine = serde_json::from_str(&line).map_err(|e| malformed(line_no, e))?;
                let pred = ClassificationPrediction::new(rec.topk).map_err(|e| malformed(line_no, e))?;
                (rec.machine, rec.image, rec.qp, Payload::Classification(pred))
            }
            Task::Detection => {
                let rec: DetectionLine = serde_json::from_str(&line).map_err(|e| malformed(line_no, e))?;
                for d in &rec.dets {
                    Detection::new(d.bbox, d.category, d.confidence).map_err(|e| malformed(line_no, e))?;
                }
                (rec.machine, rec.image, rec.qp, Payload::Detections(rec.dets))
            }
        };
        let level = QualityLevel::from_qp(qp);
        check_membership(manifest, Some(&machine), &image, level, line_no)?;
        set.insert(PerceptionRecord {
            machine,
            image,
            level,
            payload,
        })
        .map_err(|e| match e {
            Error::Duplicate { key, .. } => Error::Duplicate { line: line_no, key },
            other => other,
        })?;
    }
    Ok(set)
}

/// Feature extractors need not be library machines; only image and level are
/// checked against the manifest.
pub fn ingest_features(path: impl AsRef<Path>, manifest: Option<&DatasetManifest>) -> Result<FeatureSet> {
    let path = path.as_ref();
    read_features(open(path)?, manifest).map_err(|e| with_path(e, path))
}

pub fn read_features<R: BufRead>(reader: R, manifest: Option<&DatasetManifest>) -> Result<FeatureSet> {
    let mut set = FeatureSet::default();
    for (line_no, line) in lines(reader) {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let rec: FeatureLine = serde_json::from_str(&line).map_err(|e| malformed(line_no, e))?;
        let level = QualityLevel::from_qp(rec.qp);
        check_membership(manifest, None, &rec.image, level, line_no)?;
        set.insert_at(
            FeatureRecord {
                extractor: rec.extractor,
                image: rec.image,
                level,
                vector: rec.vec,
            },
            line_no,
        )?;
    }
    Ok(set)
}

pub fn ingest_bitrates(path: impl AsRef<Path>, manifest: Option<&DatasetManifest>) -> Result<BitrateTable> {
    let path = path.as_ref();
    read_bitrates(open(path)?, manifest).map_err(|e| with_path(e, path))
}

/// Reads `image,qp,bpp` CSV with a header row.
pub fn read_bitrates<R: Read>(reader: R, manifest: Option<&DatasetManifest>) -> Result<BitrateTable> {
    let mut table = BitrateTable::default();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (i, row) in rdr.deserialize::<BitrateRow>().enumerate() {
        // header is line 1
        let line_no = i + 2;
        let row = row.map_err(|e| malformed(line_no, e))?;
        let level = QualityLevel::from_qp(row.qp);
        check_membership(manifest, None, &row.image, level, line_no)?;
        table
            .insert(BitrateRecord {
                image: row.image,
                level,
                bpp: row.bpp,
            })
            .map_err(|e| match e {
                Error::Duplicate { key, .. } => Error::Duplicate { line: line_no, key },
                other => malformed(line_no, other),
            })?;
    }
    Ok(table)
}

pub fn write_perceptions<W: Write>(set: &PerceptionSet, mut out: W) -> Result<()> {
    for rec in set.records() {
        let line = match rec.payload {
            Payload::Classification(p) => serde_json::to_string(&ClassificationLine {
                machine: rec.machine,
                image: rec.image,
                qp: rec.level.qp(),
                topk: p.ranked,
            }),
            Payload::Detections(dets) => serde_json::to_string(&DetectionLine {
                machine: rec.machine,
                image: rec.image,
                qp: rec.level.qp(),
                dets,
            }),
        }
        .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_features<W: Write>(set: &FeatureSet, mut out: W) -> Result<()> {
    for rec in set.records() {
        let line = serde_json::to_string(&FeatureLine {
            extractor: rec.extractor,
            image: rec.image,
            qp: rec.level.qp(),
            vec: rec.vector,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_bitrates<W: Write>(table: &BitrateTable, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for rec in table.records() {
        wtr.serialize(BitrateRow {
            image: rec.image,
            qp: rec.level.qp(),
            bpp: rec.bpp,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))
}

/// Every `(machine, image, level)` cell the manifest expects but the records
/// lack, in machine, image, level order. Levels include `ORIGINAL`.
pub fn validate_completeness(manifest: &DatasetManifest, set: &PerceptionSet) -> Vec<CellKey> {
    let mut missing = Vec::new();
    for machine in &manifest.machines {
        for image in &manifest.images {
            for level in manifest.ladder.with_original() {
                if !set.cells.contains(machine, image, level) {
                    missing.push(CellKey {
                        machine: machine.clone(),
                        image: image.clone(),
                        level,
                    });
                }
            }
        }
    }
    missing
}
