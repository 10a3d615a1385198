//! Per-machine satisfaction scores: top-K agreement for classification and
//! pseudo-ground-truth mAP for detection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{BBox, ClassificationPrediction, Detection, Task};

/// Satisfaction of one machine with one compressed variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionScore {
    pub value: f64,
    pub task: Task,
    /// Set when the original perception had nothing to disturb (empty
    /// pseudo ground truth) and the score is 1.0 by definition.
    #[serde(default)]
    pub vacuous: bool,
}

impl SatisfactionScore {
    pub fn classification(satisfied: bool) -> Self {
        SatisfactionScore {
            value: if satisfied { 1.0 } else { 0.0 },
            task: Task::Classification,
            vacuous: false,
        }
    }

    pub fn detection(value: f64) -> Self {
        SatisfactionScore {
            value,
            task: Task::Detection,
            vacuous: false,
        }
    }
}

/// 1 when the compressed top-1 category is among the original top-`k`.
pub fn score_classification(
    compressed: &ClassificationPrediction,
    original: &ClassificationPrediction,
    k: usize,
) -> Result<SatisfactionScore> {
    if k == 0 {
        return Err(Error::invalid("top-k", "k must be at least 1"));
    }
    if k > original.ranked().len() {
        return Err(Error::invalid(
            "top-k",
            format!("k = {k} exceeds ranking depth {}", original.ranked().len()),
        ));
    }
    Ok(SatisfactionScore::classification(
        original.top_k(k).contains(&compressed.top1()),
    ))
}

/// IOU thresholds and the confidence cut applied to original detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScoringConfig {
    pub iou_thresholds: Vec<f64>,
    pub conf_threshold: f64,
}

impl Default for DetectionScoringConfig {
    /// IOU grid 0.50:0.95:0.05 and confidence cut 0.3.
    fn default() -> Self {
        DetectionScoringConfig {
            iou_thresholds: coco_iou_grid(),
            conf_threshold: 0.3,
        }
    }
}

impl DetectionScoringConfig {
    pub fn single(iou: f64) -> Self {
        DetectionScoringConfig {
            iou_thresholds: vec![iou],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::invalid("IOU grid", "grid is empty"));
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::invalid("IOU grid", format!("threshold {t} outside (0, 1]")));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("IOU grid", "thresholds must be strictly increasing"));
        }
        if !(self.conf_threshold > 0.0 && self.conf_threshold <= 1.0) {
            return Err(Error::invalid(
                "confidence threshold",
                format!("{} outside (0, 1]", self.conf_threshold),
            ));
        }
        Ok(())
    }
}

/// 0.50, 0.55, ..., 0.95, each the double nearest the decimal value.
pub fn coco_iou_grid() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A pseudo ground-truth object: an original detection with its confidence
/// discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub category: u32,
}

/// Original detections with confidence strictly above `conf_threshold`.
pub fn filter_pseudo_gt(original: &[Detection], conf_threshold: f64) -> Vec<GtBox> {
    original
        .iter()
        .filter(|d| d.confidence > conf_threshold)
        .map(|d| GtBox {
            bbox: d.bbox,
            category: d.category,
        })
        .collect()
}

/// AP of one category. `dets` must already be restricted to the category.
fn category_ap(dets: &[&Detection], gt: &[&GtBox], iou_threshold: f64) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    // stable sort keeps input order among equal confidences
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut matched = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    for (rank, &d) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt_box) in gt.iter().enumerate() {
            if matched[g] {
                continue;
            }
            let o = iou(&dets[d].bbox, &gt_box.bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / gt.len() as f64);
    }
    all_point_ap(&recall, &precision)
}

/// Area under the precision envelope, integrated over every recall step.
fn all_point_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// Mean over pseudo-GT categories of per-category AP at one IOU threshold.
/// Detections of categories absent from `gt` are ignored. Empty `gt` yields 1.0.
pub fn average_precision(dets: &[Detection], gt: &[GtBox], iou_threshold: f64) -> f64 {
    let categories: BTreeSet<u32> = gt.iter().map(|g| g.category).collect();
    if categories.is_empty() {
        return 1.0;
    }
    let total: f64 = categories
        .iter()
        .map(|&c| {
            let d: Vec<&Detection> = dets.iter().filter(|d| d.category == c).collect();
            let g: Vec<&GtBox> = gt.iter().filter(|g| g.category == c).collect();
            category_ap(&d, &g, iou_threshold)
        })
        .sum();
    total / categories.len() as f64
}

/// Detail behind a detection satisfaction score.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionScore {
    pub map: f64,
    /// mAP at each IOU threshold of the grid.
    pub per_threshold: Vec<f64>,
    pub vacuous: bool,
    /// Categories detected on the compressed image but absent from pseudo GT.
    pub ignored_categories: Vec<u32>,
}

impl DetectionScore {
    pub fn satisfaction(&self) -> SatisfactionScore {
        SatisfactionScore {
            value: self.map,
            task: Task::Detection,
            vacuous: self.vacuous,
        }
    }
}

/// mAP of the compressed detections against the confidence-filtered original
/// detections, averaged over the IOU grid (category mean inside, threshold
/// mean outside). Compressed detections are not confidence-filtered.
pub fn score_detection(
    compressed: &[Detection],
    original: &[Detection],
    config: &DetectionScoringConfig,
) -> Result<DetectionScore> {
    config.validate()?;
    let gt = filter_pseudo_gt(original, config.conf_threshold);
    let gt_categories: BTreeSet<u32> = gt.iter().map(|g| g.category).collect();
    let ignored_categories: Vec<u32> = compressed
        .iter()
        .map(|d| d.category)
        .filter(|c| !gt_categories.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if gt.is_empty() {
        return Ok(DetectionScore {
            map: 1.0,
            per_threshold: vec![1.0; config.iou_thresholds.len()],
            vacuous: true,
            ignored_categories,
        });
    }
    let per_threshold: Vec<f64> = config
        .iou_thresholds
        .iter()
        .map(|&t| average_precision(compressed, &gt, t))
        .collect();
    let map = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(DetectionScore {
        map,
        per_threshold,
        vacuous: false,
        ignored_categories,
    })
}
