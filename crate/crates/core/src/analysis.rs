//! Machine diversity, the codec-modification experiment and JND location.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Payload, PerceptionSet, QpLadder, QualityLevel};
use crate::rng::substream;
use crate::satisfaction::{score_detection, DetectionScoringConfig, SatisfactionScore};
use crate::smr::ImageScores;

/// How a consistency label is derived from a pair of perceptions.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LabelRule {
    /// Same top-1 category as on the original.
    #[default]
    Top1,
    /// Detection mAP against the original pseudo ground truth reaches `t_s`.
    /// An extension; the diversity experiments are defined on classification.
    Detection {
        config: DetectionScoringConfig,
        t_s: f64,
    },
}

impl LabelRule {
    fn label(&self, compressed: &Payload, original: &Payload) -> Result<bool> {
        match (self, compressed, original) {
            (LabelRule::Top1, Payload::Classification(c), Payload::Classification(o)) => Ok(c.top1() == o.top1()),
            (LabelRule::Detection { config, t_s }, Payload::Detections(c), Payload::Detections(o)) => {
                Ok(score_detection(c, o, config)?.map >= *t_s)
            }
            _ => Err(Error::invalid("label rule", "rule does not match record task")),
        }
    }
}

/// Per-level consistency labels of one machine on one image, over the coded
/// ladder (the original is excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencySequence {
    pub machine: String,
    pub image: String,
    pub labels: Vec<bool>,
}

pub fn consistency_sequence(
    set: &PerceptionSet,
    ladder: &QpLadder,
    machine: &str,
    image: &str,
    rule: &LabelRule,
) -> Result<ConsistencySequence> {
    let key = |l: QualityLevel| format!("({machine}, {image}, {l})");
    let original = set
        .get(machine, image, QualityLevel::ORIGINAL)
        .ok_or_else(|| Error::missing("perception", key(QualityLevel::ORIGINAL)))?;
    let labels = ladder
        .levels()
        .iter()
        .map(|&l| {
            let p = set.get(machine, image, l).ok_or_else(|| Error::missing("perception", key(l)))?;
            rule.label(p, original)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencySequence {
        machine: machine.to_owned(),
        image: image.to_owned(),
        labels,
    })
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Hamming distance between two machines' sequences on the same image.
pub fn diversity_score(a: &ConsistencySequence, b: &ConsistencySequence) -> Result<usize> {
    if a.labels.len() != b.labels.len() {
        return Err(Error::LengthMismatch {
            left: a.labels.len(),
            right: b.labels.len(),
        });
    }
    if a.image != b.image {
        return Err(Error::invalid(
            "diversity score",
            format!("sequences belong to `{}` and `{}`", a.image, b.image),
        ));
    }
    Ok(hamming(&a.labels, &b.labels))
}

/// Percentage of ladder levels on which two machines disagree, given a mean
/// diversity score.
pub fn differing_level_percent(mean_score: f64, ladder_len: usize) -> f64 {
    mean_score / ladder_len as f64 * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityMatrix {
    pub machines: Vec<String>,
    /// Mean pairwise diversity score; symmetric with a zero diagonal.
    pub values: Vec<Vec<f64>>,
    /// Mean over all unordered machine pairs.
    pub overall_mean: f64,
    pub ladder_len: usize,
}

impl DiversityMatrix {
    pub fn differing_percent(&self) -> f64 {
        differing_level_percent(self.overall_mean, self.ladder_len)
    }
}

/// Pairwise mean diversity over `sample_size` images drawn without
/// replacement, redrawn independently for each repetition, then averaged over
/// repetitions.
#[allow(clippy::too_many_arguments)]
pub fn diversity_matrix(
    set: &PerceptionSet,
    ladder: &QpLadder,
    machines: &[String],
    images: &[String],
    sample_size: usize,
    repetitions: usize,
    seed: u64,
    rule: &LabelRule,
) -> Result<DiversityMatrix> {
    if machines.is_empty() || images.is_empty() || sample_size == 0 || repetitions == 0 {
        return Err(Error::invalid("diversity matrix", "empty machine set, image set or sample"));
    }
    let n = machines.len();
    let take = sample_size.min(images.len());
    let mut values = vec![vec![0.0; n]; n];
    for rep in 0..repetitions {
        let mut rng = substream(seed, "diversity", &[rep as u64]);
        let mut picked = sample(&mut rng, images.len(), take).into_vec();
        picked.sort_unstable();
        let sums = picked
            .par_iter()
            .map(|&i| {
                let seqs = machines
                    .iter()
                    .map(|m| consistency_sequence(set, ladder, m, &images[i], rule))
                    .collect::<Result<Vec<_>>>()?;
                let mut local = vec![vec![0usize; n]; n];
                for a in 0..n {
                    for b in a + 1..n {
                        let d = hamming(&seqs[a].labels, &seqs[b].labels);
                        local[a][b] = d;
                        local[b][a] = d;
                    }
                }
                Ok(local)
            })
            .collect::<Result<Vec<_>>>()?;
        for local in sums {
            for a in 0..n {
                for b in 0..n {
                    values[a][b] += local[a][b] as f64 / take as f64 / repetitions as f64;
                }
            }
        }
    }
    let pairs = n * (n - 1) / 2;
    let overall_mean = if pairs == 0 {
        0.0
    } else {
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .map(|(a, b)| values[a][b])
            .sum::<f64>()
            / pairs as f64
    };
    Ok(DiversityMatrix {
        machines: machines.to_vec(),
        values,
        overall_mean,
        ladder_len: ladder.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonIdeal {
    /// One machine deteriorates while the other improves or stays put.
    Degrading,
    /// One machine improves while the other stays inconsistent.
    Ineffective,
}

/// Classifies a modification from the base and modified labels of a machine
/// pair; `None` when the modification is not non-ideal.
pub fn classify_modification(m_base: bool, m_mod: bool, n_base: bool, n_mod: bool) -> Option<NonIdeal> {
    let dm = i8::from(m_mod) - i8::from(m_base);
    let dn = i8::from(n_mod) - i8::from(n_base);
    if dm == dn {
        return None;
    }
    if dm == -1 || dn == -1 {
        return Some(NonIdeal::Degrading);
    }
    let stuck_m = !m_base && !m_mod;
    let stuck_n = !n_base && !n_mod;
    (stuck_m || stuck_n).then_some(NonIdeal::Ineffective)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationConfig {
    /// Inclusive qp range the base and modified qps live in.
    pub qp_range: (u32, u32),
    /// Inclusive magnitude range of the random qp change.
    pub delta_range: (u32, u32),
    pub trials: usize,
    pub seed: u64,
    pub max_redraws: usize,
}

impl Default for ModificationConfig {
    fn default() -> Self {
        ModificationConfig {
            qp_range: (32, 51),
            delta_range: (1, 5),
            trials: 10_000,
            seed: 0,
            max_redraws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationSummary {
    pub trials: usize,
    pub completed: usize,
    pub aborted: usize,
    pub degrading: usize,
    pub ineffective: usize,
    pub non_ideal_fraction: f64,
}

/// Label lookup for the modification experiment: `labels[image][machine][qp - lo]`.
struct LabelCube {
    lo: u32,
    labels: Vec<Vec<Vec<bool>>>,
}

enum TrialOutcome {
    Aborted,
    Done(Option<NonIdeal>),
}

fn run_trial(cube: &LabelCube, n_machines: usize, cfg: &ModificationConfig, trial: usize) -> TrialOutcome {
    let (lo, hi) = cfg.qp_range;
    let (dlo, dhi) = cfg.delta_range;
    let mut rng = substream(cfg.seed, "modification", &[trial as u64]);
    let image = rng.random_range(0..cube.labels.len());
    let pair = sample(&mut rng, n_machines, 2);
    let (m, n) = (pair.index(0), pair.index(1));
    let base = rng.random_range(lo..=hi);
    let mut modified = None;
    for _ in 0..cfg.max_redraws {
        let delta = rng.random_range(dlo..=dhi) as i64;
        let signed = if rng.random_bool(0.5) { delta } else { -delta };
        let q = (i64::from(base) + signed).clamp(i64::from(lo), i64::from(hi)) as u32;
        if q != base {
            modified = Some(q);
            break;
        }
    }
    let Some(q_mod) = modified else {
        return TrialOutcome::Aborted;
    };
    let at = |machine: usize, qp: u32| cube.labels[image][machine][(qp - cube.lo) as usize];
    TrialOutcome::Done(classify_modification(at(m, base), at(m, q_mod), at(n, base), at(n, q_mod)))
}

/// Random codec-modification trials: per trial an image, a machine pair, a
/// base qp and a signed qp change (clamped to the range and redrawn when it
/// lands back on the base). Trial `t` uses stream `("modification", [t])`.
pub fn modification_experiment(
    set: &PerceptionSet,
    ladder: &QpLadder,
    machines: &[String],
    images: &[String],
    rule: &LabelRule,
    cfg: &ModificationConfig,
) -> Result<ModificationSummary> {
    let (lo, hi) = cfg.qp_range;
    if lo >= hi {
        return Err(Error::invalid("modification experiment", "qp range admits no distinct modified qp"));
    }
    if cfg.delta_range.0 == 0 || cfg.delta_range.0 > cfg.delta_range.1 {
        return Err(Error::invalid("modification experiment", "delta range must be within 1..=max"));
    }
    if let Some(q) = (lo..=hi).find(|&q| ladder.index_of(QualityLevel::from_qp(q)).is_none()) {
        return Err(Error::invalid(
            "modification experiment",
            format!("ladder does not cover qp {q} of the experiment range"),
        ));
    }
    if machines.len() < 2 || images.is_empty() || cfg.trials == 0 {
        return Err(Error::invalid("modification experiment", "need two machines, an image and a trial"));
    }
    let range = QpLadder::contiguous(lo, hi)?;
    let labels = images
        .par_iter()
        .map(|image| {
            machines
                .iter()
                .map(|m| consistency_sequence(set, &range, m, image, rule).map(|s| s.labels))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let cube = LabelCube { lo, labels };
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(&cube, machines.len(), cfg, t))
        .collect();
    let mut summary = ModificationSummary {
        trials: cfg.trials,
        completed: 0,
        aborted: 0,
        degrading: 0,
        ineffective: 0,
        non_ideal_fraction: 0.0,
    };
    for o in outcomes {
        match o {
            TrialOutcome::Aborted => summary.aborted += 1,
            TrialOutcome::Done(kind) => {
                summary.completed += 1;
                match kind {
                    Some(NonIdeal::Degrading) => summary.degrading += 1,
                    Some(NonIdeal::Ineffective) => summary.ineffective += 1,
                    None => {}
                }
            }
        }
    }
    if summary.completed > 0 {
        summary.non_ideal_fraction = (summary.degrading + summary.ineffective) as f64 / summary.completed as f64;
    }
    Ok(summary)
}

/// When a machine has reached a JND point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JndCondition {
    /// Classification score equals 0.
    Inconsistent,
    /// Detection score below the satisfaction threshold.
    BelowThreshold(f64),
}

impl JndCondition {
    pub fn holds(&self, score: f64) -> bool {
        match self {
            JndCondition::Inconsistent => score == 0.0,
            JndCondition::BelowThreshold(t) => score < *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JndReport {
    pub machine: String,
    pub image: String,
    /// First level in degradation order meeting the JND condition.
    pub first_jnd: Option<QualityLevel>,
    /// Every level meeting it; later levels need not all be listed.
    pub jnd_levels: Vec<QualityLevel>,
}

/// Index of the first score meeting the condition and every such index.
pub fn jnd_indices(scores: &[f64], condition: JndCondition) -> (Option<usize>, Vec<usize>) {
    let hits: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| condition.holds(**s))
        .map(|(i, _)| i)
        .collect();
    (hits.first().copied(), hits)
}

/// Scores are given in ladder (degradation) order, aligned with `levels`.
pub fn locate_jnd(
    machine: &str,
    image: &str,
    levels: &[QualityLevel],
    scores: &[f64],
    condition: JndCondition,
) -> Result<JndReport> {
    if levels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: levels.len(),
            right: scores.len(),
        });
    }
    let (first, all) = jnd_indices(scores, condition);
    Ok(JndReport {
        machine: machine.to_owned(),
        image: image.to_owned(),
        first_jnd: first.map(|i| levels[i]),
        jnd_levels: all.into_iter().map(|i| levels[i]).collect(),
    })
}

/// JND reports for every machine of a scored image, over coded levels.
pub fn jnd_reports(scores: &ImageScores, condition: JndCondition) -> Result<Vec<JndReport>> {
    let coded: Vec<(usize, QualityLevel)> = scores
        .levels
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, l)| !l.is_original())
        .collect();
    let levels: Vec<QualityLevel> = coded.iter().map(|(_, l)| *l).collect();
    scores
        .machines
        .iter()
        .zip(&scores.scores)
        .map(|(machine, row)| {
            let values = coded
                .iter()
                .map(|(i, l)| {
                    row[*i]
                        .map(|s: SatisfactionScore| s.value)
                        .ok_or_else(|| Error::missing("score", format!("({machine}, {}, {l})", scores.image)))
                })
                .collect::<Result<Vec<_>>>()?;
            locate_jnd(machine, &scores.image, &levels, &values, condition)
        })
        .collect()
}
