//! Satisfied machine ratio: aggregation of per-machine satisfaction into the
//! fraction of satisfied machines, per image and quality level.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{format_grid, parse_grid};
use crate::records::{CellKey, DatasetManifest, Payload, PerceptionSet, QualityLevel, Task};
use crate::rng::substream;
use crate::satisfaction::{score_classification, score_detection, DetectionScoringConfig, SatisfactionScore};

/// Which SMR is being computed.
///
/// Text form: `top{k}[-{library}]` for classification, e.g. `top1-v1`, and
/// `det-iou{grid}-ts{t}[-conf{c}]` for detection, e.g. `det-iou0.5-ts0.75` or
/// `det-iou0.5:0.95:0.05-ts0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SmrType {
    Classification {
        k: usize,
        library: Option<String>,
    },
    Detection {
        iou_thresholds: Vec<f64>,
        t_s: f64,
        conf_threshold: f64,
    },
}

impl SmrType {
    pub fn top_k(k: usize) -> Self {
        SmrType::Classification { k, library: None }
    }

    pub fn detection(iou: f64, t_s: f64) -> Self {
        SmrType::Detection {
            iou_thresholds: vec![iou],
            t_s,
            conf_threshold: DetectionScoringConfig::default().conf_threshold,
        }
    }

    /// The six classification types: top-1/3/5 for each given library.
    pub fn classification_grid(libraries: &[&str]) -> Vec<Self> {
        libraries
            .iter()
            .flat_map(|lib| {
                [1, 3, 5].map(|k| SmrType::Classification {
                    k,
                    library: Some((*lib).to_owned()),
                })
            })
            .collect()
    }

    /// The 10x10 detection types: single IOU threshold by satisfaction
    /// threshold, both over 0.50:0.95:0.05.
    pub fn detection_grid() -> Vec<Self> {
        let grid = crate::satisfaction::coco_iou_grid();
        grid.iter()
            .flat_map(|&iou| grid.iter().map(move |&t_s| SmrType::detection(iou, t_s)))
            .collect()
    }

    pub fn task(&self) -> Task {
        match self {
            SmrType::Classification { .. } => Task::Classification,
            SmrType::Detection { .. } => Task::Detection,
        }
    }

    pub fn library(&self) -> Option<&str> {
        match self {
            SmrType::Classification { library, .. } => library.as_deref(),
            SmrType::Detection { .. } => None,
        }
    }

    /// Satisfaction threshold; classification counts only a score of 1.
    pub fn t_s(&self) -> f64 {
        match self {
            SmrType::Classification { .. } => 1.0,
            SmrType::Detection { t_s, .. } => *t_s,
        }
    }

    pub fn scoring_config(&self) -> Option<DetectionScoringConfig> {
        match self {
            SmrType::Classification { .. } => None,
            SmrType::Detection {
                iou_thresholds,
                conf_threshold,
                ..
            } => Some(DetectionScoringConfig {
                iou_thresholds: iou_thresholds.clone(),
                conf_threshold: *conf_threshold,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SmrType::Classification { k, .. } => {
                if *k == 0 {
                    return Err(Error::invalid("SMR type", "k must be at least 1"));
                }
            }
            SmrType::Detection { t_s, .. } => {
                if !(*t_s > 0.0 && *t_s <= 1.0) {
                    return Err(Error::invalid("SMR type", format!("T_S {t_s} outside (0, 1]")));
                }
                self.scoring_config().expect("detection").validate()?;
            }
        }
        Ok(())
    }

    /// Score of `machine` at `level` against its own original perception.
    pub fn score(&self, compressed: &Payload, original: &Payload) -> Result<SatisfactionScore> {
        match (self, compressed, original) {
            (SmrType::Classification { k, .. }, Payload::Classification(c), Payload::Classification(o)) => {
                score_classification(c, o, *k)
            }
            (SmrType::Detection { .. }, Payload::Detections(c), Payload::Detections(o)) => {
                let cfg = self.scoring_config().expect("detection");
                Ok(score_detection(c, o, &cfg)?.satisfaction())
            }
            _ => Err(Error::invalid(
                "SMR type",
                format!("{self} does not apply to {} records", compressed.task()),
            )),
        }
    }
}

impl fmt::Display for SmrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmrType::Classification { k, library } => {
                write!(f, "top{k}")?;
                if let Some(lib) = library {
                    write!(f, "-{lib}")?;
                }
                Ok(())
            }
            SmrType::Detection {
                iou_thresholds,
                t_s,
                conf_threshold,
            } => {
                write!(f, "det-iou{}-ts{}", format_grid(iou_thresholds), format_grid(&[*t_s]))?;
                if *conf_threshold != DetectionScoringConfig::default().conf_threshold {
                    write!(f, "-conf{}", format_grid(&[*conf_threshold]))?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for SmrType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("SMR type", format!("cannot parse `{s}`"));
        let parsed = if let Some(rest) = s.strip_prefix("top") {
            let (k, library) = match rest.split_once('-') {
                Some((k, lib)) if !lib.is_empty() => (k, Some(lib.to_owned())),
                Some(_) => return Err(bad()),
                None => (rest, None),
            };
            SmrType::Classification {
                k: k.parse().map_err(|_| bad())?,
                library,
            }
        } else if let Some(rest) = s.strip_prefix("det-iou") {
            let mut parts = rest.split('-');
            let iou = parse_grid(parts.next().ok_or_else(bad)?)?;
            let t_s = parts
                .next()
                .and_then(|p| p.strip_prefix("ts"))
                .ok_or_else(bad)?
                .parse()
                .map_err(|_| bad())?;
            let conf_threshold = match parts.next() {
                Some(p) => p.strip_prefix("conf").ok_or_else(bad)?.parse().map_err(|_| bad())?,
                None => DetectionScoringConfig::default().conf_threshold,
            };
            if parts.next().is_some() {
                return Err(bad());
            }
            SmrType::Detection {
                iou_thresholds: iou,
                t_s,
                conf_threshold,
            }
        } else {
            return Err(bad());
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

impl TryFrom<String> for SmrType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SmrType> for String {
    fn from(t: SmrType) -> Self {
        t.to_string()
    }
}

/// Whether a machine counts as satisfied. Classification scores are binary and
/// count only when equal to 1, whatever `t_s` is.
pub fn is_satisfied(score: &SatisfactionScore, t_s: f64) -> bool {
    match score.task {
        Task::Classification => score.value >= 1.0,
        Task::Detection => score.value >= t_s,
    }
}

/// Fraction of machines whose score meets the threshold.
pub fn smr(scores: &[SatisfactionScore], t_s: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("SMR", "no machine scores"));
    }
    let satisfied = scores.iter().filter(|s| is_satisfied(s, t_s)).count();
    Ok(satisfied as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    /// Every expected cell must be present.
    #[default]
    Strict,
    /// SMR over the machines that have records; counts are recorded.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VacuousPolicy {
    /// Machines with empty pseudo ground truth count as satisfied.
    #[default]
    Include,
    /// Images where any machine's pseudo ground truth is empty are dropped.
    Exclude,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnotateOptions {
    pub completeness: Completeness,
    pub vacuous: VacuousPolicy,
}

/// Satisfaction scores of one image: `scores[machine][level]`, levels being
/// `ORIGINAL` followed by the ladder. `None` marks a missing record.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub image: String,
    pub machines: Vec<String>,
    pub levels: Vec<QualityLevel>,
    pub scores: Vec<Vec<Option<SatisfactionScore>>>,
}

impl ImageScores {
    pub fn compute(
        manifest: &DatasetManifest,
        set: &PerceptionSet,
        image: &str,
        machines: &[String],
        smr_type: &SmrType,
    ) -> Result<Self> {
        let levels: Vec<QualityLevel> = manifest.ladder.with_original().collect();
        let scores = machines
            .iter()
            .map(|m| {
                let Some(original) = set.get(m, image, QualityLevel::ORIGINAL) else {
                    return Ok(vec![None; levels.len()]);
                };
                levels
                    .iter()
                    .map(|&l| set.get(m, image, l).map(|p| smr_type.score(p, original)).transpose())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageScores {
            image: image.to_owned(),
            machines: machines.to_vec(),
            levels,
            scores,
        })
    }

    pub fn has_vacuous(&self) -> bool {
        self.scores.iter().flatten().flatten().any(|s| s.vacuous)
    }

    /// SMR at level index `li` over the machine indices in `subset`
    /// (all machines when `None`), ignoring missing scores.
    pub fn smr_at(&self, li: usize, t_s: f64, subset: Option<&[usize]>) -> Option<(f64, usize)> {
        let mut n = 0usize;
        let mut ok = 0usize;
        let mut visit = |mi: usize| {
            if let Some(s) = &self.scores[mi][li] {
                n += 1;
                ok += usize::from(is_satisfied(s, t_s));
            }
        };
        match subset {
            Some(idx) => idx.iter().copied().for_each(&mut visit),
            None => (0..self.machines.len()).for_each(&mut visit),
        }
        (n > 0).then(|| (ok as f64 / n as f64, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmrEntry {
    pub smr: f64,
    pub machine_count: usize,
    /// Machines whose score at this level was vacuous.
    #[serde(default)]
    pub vacuous: usize,
}

/// SMR of one image at every level of the ladder, `ORIGINAL` included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrTable {
    pub image: String,
    pub smr_type: SmrType,
    pub entries: BTreeMap<QualityLevel, SmrEntry>,
}

impl SmrTable {
    pub fn smr(&self, level: QualityLevel) -> Option<f64> {
        self.entries.get(&level).map(|e| e.smr)
    }

    pub fn machine_count(&self) -> usize {
        self.entries.values().map(|e| e.machine_count).max().unwrap_or(0)
    }
}

fn table_from_scores(scores: &ImageScores, smr_type: &SmrType) -> Result<SmrTable> {
    let t_s = smr_type.t_s();
    let mut entries = BTreeMap::new();
    for (li, &level) in scores.levels.iter().enumerate() {
        let (value, n) = scores.smr_at(li, t_s, None).ok_or_else(|| {
            Error::missing("perceptions", format!("({}, {level}) has no scored machine", scores.image))
        })?;
        let vacuous = scores.scores.iter().filter(|row| row[li].is_some_and(|s| s.vacuous)).count();
        // the original compared with itself
        let value = if level.is_original() { 1.0 } else { value };
        entries.insert(
            level,
            SmrEntry {
                smr: value,
                machine_count: n,
                vacuous,
            },
        );
    }
    Ok(SmrTable {
        image: scores.image.clone(),
        smr_type: smr_type.clone(),
        entries,
    })
}

fn check_cells(manifest: &DatasetManifest, set: &PerceptionSet, machines: &[String]) -> Result<()> {
    let mut missing = Vec::new();
    for m in machines {
        for image in &manifest.images {
            for level in manifest.ladder.with_original() {
                if !set.cells.contains(m, image, level) {
                    missing.push(CellKey {
                        machine: m.clone(),
                        image: image.clone(),
                        level,
                    });
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingCells(missing))
    }
}

fn check_task(manifest: &DatasetManifest, set: &PerceptionSet, smr_type: &SmrType) -> Result<()> {
    smr_type.validate()?;
    if set.task != smr_type.task() || manifest.task != smr_type.task() {
        return Err(Error::invalid(
            "SMR type",
            format!("{smr_type} is a {} type but the dataset is {}", smr_type.task(), set.task),
        ));
    }
    Ok(())
}

/// Scores every manifest image for the machines of the type's library,
/// in image id order.
pub fn score_all(
    manifest: &DatasetManifest,
    set: &PerceptionSet,
    smr_type: &SmrType,
    options: AnnotateOptions,
) -> Result<Vec<ImageScores>> {
    check_task(manifest, set, smr_type)?;
    let machines = manifest.library(smr_type.library())?;
    if options.completeness == Completeness::Strict {
        check_cells(manifest, set, machines)?;
    }
    let mut images: Vec<&String> = manifest.images.iter().collect();
    images.sort();
    let all = images
        .par_iter()
        .map(|image| ImageScores::compute(manifest, set, image, machines, smr_type))
        .collect::<Result<Vec<_>>>()?;
    Ok(match options.vacuous {
        VacuousPolicy::Include => all,
        VacuousPolicy::Exclude => all.into_iter().filter(|s| !s.has_vacuous()).collect(),
    })
}

/// One SMR table per image, ordered by image id.
pub fn annotate(
    manifest: &DatasetManifest,
    set: &PerceptionSet,
    smr_type: &SmrType,
    options: AnnotateOptions,
) -> Result<Vec<SmrTable>> {
    score_all(manifest, set, smr_type, options)?
        .iter()
        .map(|s| table_from_scores(s, smr_type))
        .collect()
}

/// Mean SMR per level over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrDistribution {
    pub smr_type: SmrType,
    pub means: BTreeMap<QualityLevel, f64>,
    pub images: usize,
}

impl SmrDistribution {
    pub fn mean(&self, level: QualityLevel) -> Option<f64> {
        self.means.get(&level).copied()
    }
}

pub fn distribution(tables: &[SmrTable]) -> Result<SmrDistribution> {
    let first = tables
        .first()
        .ok_or_else(|| Error::invalid("distribution", "no tables"))?;
    let mut sums: BTreeMap<QualityLevel, f64> = first.entries.keys().map(|l| (*l, 0.0)).collect();
    for t in tables {
        if t.smr_type != first.smr_type {
            return Err(Error::invalid(
                "distribution",
                format!("mixed SMR types {} and {}", first.smr_type, t.smr_type),
            ));
        }
        if t.entries.len() != sums.len() || t.entries.keys().any(|l| !sums.contains_key(l)) {
            return Err(Error::invalid(
                "distribution",
                format!("table for `{}` covers different levels", t.image),
            ));
        }
        for (l, e) in &t.entries {
            *sums.get_mut(l).expect("checked") += e.smr;
        }
    }
    let n = tables.len() as f64;
    Ok(SmrDistribution {
        smr_type: first.smr_type.clone(),
        means: sums.into_iter().map(|(l, s)| (l, s / n)).collect(),
        images: tables.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub n_m: usize,
    pub library_size: usize,
    /// MAE of each repetition.
    pub per_repetition: Vec<f64>,
    pub mae: f64,
}

/// MAE between SMR from random `n_m`-machine subsets and SMR from the whole
/// library, over coded levels of up to `groups` sampled images, averaged over
/// repetitions. Subsets and image samples come from the stream
/// `("subset", [n_m, repetition])`.
pub fn subset_consistency(
    scores: &[ImageScores],
    smr_type: &SmrType,
    n_m: usize,
    repetitions: usize,
    groups: Option<usize>,
    seed: u64,
) -> Result<SubsetReport> {
    let first = scores
        .first()
        .ok_or_else(|| Error::invalid("subset study", "no images"))?;
    let library_size = first.machines.len();
    if n_m == 0 || n_m > library_size {
        return Err(Error::invalid(
            "subset study",
            format!("n_m = {n_m} outside 1..={library_size}"),
        ));
    }
    if repetitions == 0 {
        return Err(Error::invalid("subset study", "repetitions must be at least 1"));
    }
    let t_s = smr_type.t_s();
    let n_images = groups.unwrap_or(scores.len()).min(scores.len());
    let mut per_repetition = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut rng = substream(seed, "subset", &[n_m as u64, rep as u64]);
        let mut machines = sample(&mut rng, library_size, n_m).into_vec();
        machines.sort_unstable();
        let images = sample(&mut rng, scores.len(), n_images).into_vec();
        let mut err = 0.0;
        let mut cells = 0usize;
        for &i in &images {
            let s = &scores[i];
            for (li, level) in s.levels.iter().enumerate() {
                if level.is_original() {
                    continue;
                }
                let (Some((full, _)), Some((sub, _))) = (s.smr_at(li, t_s, None), s.smr_at(li, t_s, Some(&machines))) else {
                    continue;
                };
                err += (full - sub).abs();
                cells += 1;
            }
        }
        if cells == 0 {
            return Err(Error::invalid("subset study", "no comparable cells"));
        }
        per_repetition.push(err / cells as f64);
    }
    let mae = per_repetition.iter().sum::<f64>() / repetitions as f64;
    Ok(SubsetReport {
        n_m,
        library_size,
        per_repetition,
        mae,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub image: String,
    pub level: QualityLevel,
    /// SMR values in the order the layers were given.
    pub values: Vec<f64>,
}

/// Checks that SMR is non-decreasing across `layers` (e.g. top-1, top-3,
/// top-5 tables of the same images) at every image and level.
pub fn ordering_check(layers: &[&[SmrTable]]) -> Result<Vec<OrderingViolation>> {
    let Some(base) = layers.first() else {
        return Ok(Vec::new());
    };
    for layer in layers {
        if layer.len() != base.len() {
            return Err(Error::LengthMismatch {
                left: base.len(),
                right: layer.len(),
            });
        }
    }
    let mut violations = Vec::new();
    for (i, table) in base.iter().enumerate() {
        for level in table.entries.keys() {
            let mut values = Vec::with_capacity(layers.len());
            for layer in layers {
                let t = &layer[i];
                if t.image != table.image {
                    return Err(Error::invalid(
                        "ordering check",
                        format!("image `{}` aligned with `{}`", t.image, table.image),
                    ));
                }
                values.push(t.smr(*level).ok_or_else(|| {
                    Error::invalid("ordering check", format!("`{}` lacks {level}", t.image))
                })?);
            }
            if values.windows(2).any(|w| w[0] > w[1]) {
                violations.push(OrderingViolation {
                    image: table.image.clone(),
                    level: *level,
                    values,
                });
            }
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{ClassificationPrediction, PerceptionRecord, QpLadder};

    fn cls(v: f64) -> SatisfactionScore {
        SatisfactionScore::classification(v == 1.0)
    }

    #[test]
    fn smr_counts() {
        assert_eq!(smr(&[cls(1.0); 12], 0.5).unwrap(), 1.0);
        let det = [SatisfactionScore::detection(0.9), SatisfactionScore::detection(0.4)];
        assert_eq!(smr(&det, 0.5).unwrap(), 0.5);
        let mut half: Vec<_> = (0..58).map(|i| cls(if i % 2 == 0 { 1.0 } else { 0.0 })).collect();
        assert_eq!(smr(&half, 0.5).unwrap(), 0.5);
        // classification ignores T_S
        assert_eq!(smr(&half, 0.01).unwrap(), 0.5);
        half.clear();
        assert!(smr(&half, 0.5).is_err());
    }

    #[test]
    fn smr_type_text_round_trip() {
        for s in ["top1", "top5-v2", "det-iou0.5-ts0.75", "det-iou0.5:0.95:0.05-ts0.5", "det-iou0.6-ts0.6-conf0.4"] {
            let t: SmrType = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("top0".parse::<SmrType>().is_err());
        assert!("det-iou0.5-ts1.5".parse::<SmrType>().is_err());
        assert!("mse".parse::<SmrType>().is_err());
        assert_eq!(SmrType::detection_grid().len(), 100);
        assert_eq!(SmrType::classification_grid(&["v1", "v2"]).len(), 6);
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            task: Task::Classification,
            ladder: QpLadder::new([32, 51]).unwrap(),
            machines: vec!["a".into(), "b".into()],
            images: vec!["img".into()],
            libraries: Default::default(),
        }
    }

    fn rec(machine: &str, qp: u32, ranked: &[u32]) -> PerceptionRecord {
        PerceptionRecord {
            machine: machine.into(),
            image: "img".into(),
            level: QualityLevel::from_qp(qp),
            payload: Payload::Classification(ClassificationPrediction::new(ranked.to_vec()).unwrap()),
        }
    }

    fn two_machine_set() -> PerceptionSet {
        let mut set = PerceptionSet::new(Task::Classification);
        for r in [
            rec("a", 0, &[1, 2, 3]),
            rec("a", 32, &[1, 2, 3]),
            rec("a", 51, &[1, 3, 2]),
            rec("b", 0, &[4, 5, 6]),
            rec("b", 32, &[4, 6, 5]),
            rec("b", 51, &[5, 4, 6]),
        ] {
            set.insert(r).unwrap();
        }
        set
    }

    #[test]
    fn annotate_hand_aggregation() {
        let tables = annotate(&manifest(), &two_machine_set(), &SmrType::top_k(1), AnnotateOptions::default()).unwrap();
        assert_eq!(tables.len(), 1);
        let t = &tables[0];
        assert_eq!(t.smr(QualityLevel::ORIGINAL), Some(1.0));
        assert_eq!(t.smr(QualityLevel::from_qp(32)), Some(1.0));
        assert_eq!(t.smr(QualityLevel::from_qp(51)), Some(0.5));
        assert_eq!(t.machine_count(), 2);

        let top3 = annotate(&manifest(), &two_machine_set(), &SmrType::top_k(3), AnnotateOptions::default()).unwrap();
        assert_eq!(top3[0].smr(QualityLevel::from_qp(51)), Some(1.0));
        assert!(ordering_check(&[&tables, &top3]).unwrap().is_empty());
        assert_eq!(ordering_check(&[&top3, &tables]).unwrap().len(), 1);
    }

    #[test]
    fn strict_and_lenient_modes() {
        let mut set = PerceptionSet::new(Task::Classification);
        for r in two_machine_set().records() {
            if !(r.machine == "b" && r.level.qp() == 51) {
                set.insert(r).unwrap();
            }
        }
        let err = annotate(&manifest(), &set, &SmrType::top_k(1), AnnotateOptions::default()).unwrap_err();
        match err {
            Error::MissingCells(cells) => assert_eq!(cells.len(), 1),
            other => panic!("{other:?}"),
        }
        let lenient = AnnotateOptions {
            completeness: Completeness::Lenient,
            ..Default::default()
        };
        let t = &annotate(&manifest(), &set, &SmrType::top_k(1), lenient).unwrap()[0];
        let e = t.entries[&QualityLevel::from_qp(51)];
        assert_eq!((e.smr, e.machine_count), (1.0, 1));
    }

    #[test]
    fn distribution_means() {
        let mk = |v: f64| SmrTable {
            image: "x".into(),
            smr_type: SmrType::top_k(1),
            entries: [(QualityLevel::from_qp(32), SmrEntry { smr: v, machine_count: 2, vacuous: 0 })].into(),
        };
        let d = distribution(&[mk(1.0)]).unwrap();
        assert_eq!(d.mean(QualityLevel::from_qp(32)), Some(1.0));
        let d = distribution(&[mk(1.0), mk(0.5)]).unwrap();
        assert_eq!(d.mean(QualityLevel::from_qp(32)), Some(0.75));
        let d2 = distribution(&[mk(0.5), mk(1.0)]).unwrap();
        assert_eq!(d, d2);
        assert!(distribution(&[]).is_err());
        let mut other = mk(1.0);
        other.smr_type = SmrType::top_k(3);
        assert!(distribution(&[mk(1.0), other]).is_err());
    }

    #[test]
    fn full_subset_has_zero_mae() {
        let scores = score_all(&manifest(), &two_machine_set(), &SmrType::top_k(1), AnnotateOptions::default()).unwrap();
        let r = subset_consistency(&scores, &SmrType::top_k(1), 2, 3, None, 1).unwrap();
        assert_eq!(r.mae, 0.0);
        assert!(subset_consistency(&scores, &SmrType::top_k(1), 3, 1, None, 1).is_err());
        assert!(subset_consistency(&scores, &SmrType::top_k(1), 0, 1, None, 1).is_err());
        // one machine at qp51 gives 0 or 1 against the full 0.5
        let r = subset_consistency(&scores, &SmrType::top_k(1), 1, 4, None, 1).unwrap();
        assert_eq!(r.mae, 0.25);
    }

    #[test]
    fn task_mismatch_rejected() {
        let err = annotate(&manifest(), &two_machine_set(), &SmrType::detection(0.5, 0.5), AnnotateOptions::default());
        assert!(err.is_err());
    }
}
