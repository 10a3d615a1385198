//! Loading inputs and rendering shared table formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use smrkit::coding::{CurvePoint, PredictionMap, QpDecision, RateSmrCurve};
use smrkit::records::{ingest_bitrates, ingest_features, ingest_perception_shards};
use smrkit::smr::SmrDistribution;
use smrkit::{BitrateTable, DatasetManifest, FeatureSet, PerceptionSet, QualityLevel, SmrTable, SmrType, Task};

use crate::output::{fmt9, round9};

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

pub fn load_perceptions(manifest: &DatasetManifest, paths: &[PathBuf]) -> Result<PerceptionSet> {
    for p in paths {
        if !p.exists() {
            bail!("record file {} does not exist", p.display());
        }
    }
    ingest_perception_shards(paths, manifest.task, Some(manifest)).context("reading perception records")
}

pub fn load_features(path: &Path, manifest: &DatasetManifest) -> Result<FeatureSet> {
    ingest_features(path, Some(manifest)).with_context(|| format!("reading features {}", path.display()))
}

pub fn load_bitrates(path: &Path, manifest: &DatasetManifest) -> Result<BitrateTable> {
    ingest_bitrates(path, Some(manifest)).with_context(|| format!("reading bitrates {}", path.display()))
}

pub fn default_smr_type(task: Task) -> SmrType {
    match task {
        Task::Classification => SmrType::top_k(1),
        Task::Detection => "det-iou0.5:0.95:0.05-ts0.5".parse().expect("valid default"),
    }
}

pub fn resolve_smr_type(given: Option<&SmrType>, manifest: &DatasetManifest) -> Result<SmrType> {
    let t = given.cloned().unwrap_or_else(|| default_smr_type(manifest.task));
    if t.task() != manifest.task {
        bail!("SMR type {t} does not apply to {} records", manifest.task);
    }
    Ok(t)
}

/// File-name friendly form of an SMR type.
pub fn type_slug(t: &SmrType) -> String {
    t.to_string().replace(':', "_")
}

/// Picks the requested extractor, or the only one present.
pub fn resolve_extractor(given: Option<&str>, features: &FeatureSet) -> Result<String> {
    let all: Vec<&str> = features.extractors().collect();
    match given {
        Some(e) if all.contains(&e) => Ok(e.to_owned()),
        Some(e) => bail!("extractor `{e}` not found in features (have {})", all.join(", ")),
        None => match all.as_slice() {
            [one] => Ok((*one).to_owned()),
            [] => bail!("feature file is empty"),
            _ => bail!("several extractors present ({}); pass --extractor", all.join(", ")),
        },
    }
}

pub const SMR_HEADER: [&str; 5] = ["image", "smr_type", "qp", "smr", "machine_count"];

pub fn smr_rows(tables: &[SmrTable]) -> Vec<Vec<String>> {
    tables
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |(l, e)| {
                vec![
                    t.image.clone(),
                    t.smr_type.to_string(),
                    l.qp().to_string(),
                    fmt9(e.smr),
                    e.machine_count.to_string(),
                ]
            })
        })
        .collect()
}

#[derive(Serialize)]
pub struct SmrJsonRow<'a> {
    image: &'a str,
    smr_type: String,
    qp: u32,
    smr: f64,
    machine_count: usize,
    vacuous: usize,
}

pub fn smr_json_rows(tables: &[SmrTable]) -> Vec<SmrJsonRow<'_>> {
    tables
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |(l, e)| SmrJsonRow {
                image: &t.image,
                smr_type: t.smr_type.to_string(),
                qp: l.qp(),
                smr: round9(e.smr),
                machine_count: e.machine_count,
                vacuous: e.vacuous,
            })
        })
        .collect()
}

pub fn distribution_rows(d: &SmrDistribution) -> Vec<Vec<String>> {
    d.means
        .iter()
        .map(|(l, m)| vec![l.qp().to_string(), fmt9(*m)])
        .collect()
}

pub const DECISION_HEADER: [&str; 5] = ["image", "threshold", "q_b", "chosen_qp", "fallback"];

pub fn decision_rows(decisions: &[QpDecision]) -> Vec<Vec<String>> {
    decisions
        .iter()
        .map(|d| {
            vec![
                d.image.clone(),
                fmt9(d.threshold),
                d.q_b.qp().to_string(),
                d.chosen.qp().to_string(),
                d.fallback.to_string(),
            ]
        })
        .collect()
}

pub const CURVE_HEADER: [&str; 4] = ["threshold", "mean_bpp", "mean_smr", "label"];

pub fn curve_rows(curves: &[&RateSmrCurve]) -> Vec<Vec<String>> {
    curves
        .iter()
        .flat_map(|c| {
            c.points
                .iter()
                .map(|p| vec![fmt9(p.threshold), fmt9(p.mean_bpp), fmt9(p.mean_smr), c.label.clone()])
        })
        .collect()
}

#[derive(Deserialize)]
struct CurveRow {
    threshold: f64,
    mean_bpp: f64,
    mean_smr: f64,
    label: String,
}

/// Curves found in curve CSV files, in order of first appearance.
pub fn read_curves(paths: &[PathBuf]) -> Result<Vec<RateSmrCurve>> {
    let mut curves: Vec<RateSmrCurve> = Vec::new();
    for path in paths {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        for (i, row) in rdr.deserialize::<CurveRow>().enumerate() {
            let row = row.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
            let point = CurvePoint {
                threshold: row.threshold,
                mean_bpp: row.mean_bpp,
                mean_smr: row.mean_smr,
            };
            match curves.iter_mut().find(|c| c.label == row.label) {
                Some(c) => c.points.push(point),
                None => curves.push(RateSmrCurve {
                    label: row.label,
                    points: vec![point],
                }),
            }
        }
    }
    Ok(curves)
}

pub const PREDICTION_HEADER: [&str; 3] = ["image", "qp", "predicted_smr"];

#[derive(Deserialize)]
struct PredictionRow {
    image: String,
    qp: u32,
    predicted_smr: f64,
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, PredictionMap>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out: BTreeMap<String, PredictionMap> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = row.with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        let level = QualityLevel::coded(row.qp).with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        if out.entry(row.image.clone()).or_default().insert(level, row.predicted_smr).is_some() {
            bail!("{}: line {}: duplicate prediction for ({}, {level})", path.display(), i + 2, row.image);
        }
    }
    Ok(out)
}

pub fn prediction_rows(predictions: &[(String, PredictionMap)]) -> Vec<Vec<String>> {
    predictions
        .iter()
        .flat_map(|(image, p)| {
            p.iter()
                .map(move |(l, v)| vec![image.clone(), l.qp().to_string(), fmt9(*v)])
        })
        .collect()
}

pub fn read_image_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}
