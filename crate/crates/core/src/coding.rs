//! SMR-guided QP selection, rate-SMR curves and BD-rate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{format_grid, parse_grid};
use crate::records::{BitrateTable, QpLadder, QualityLevel};
use crate::smr::{SmrDistribution, SmrTable};
use crate::stats::{polyfit, Polynomial};

/// Strictly increasing SMR thresholds in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("threshold set", "empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::invalid("threshold set", format!("{v} is outside (0, 1]")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("threshold set", "values must be strictly increasing"));
        }
        Ok(ThresholdSet(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::str::FromStr for ThresholdSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ThresholdSet::new(parse_grid(s)?)
    }
}

impl std::fmt::Display for ThresholdSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_grid(&self.0))
    }
}

impl TryFrom<Vec<f64>> for ThresholdSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdSet::new(v)
    }
}

impl From<ThresholdSet> for Vec<f64> {
    fn from(t: ThresholdSet) -> Self {
        t.0
    }
}

/// Most-degraded coded level whose mean SMR reaches `threshold`. When no
/// level does, the level with mean closest to the threshold (the less
/// degraded one on ties).
pub fn select_base_qp(distribution: &SmrDistribution, threshold: f64) -> Result<QualityLevel> {
    let coded: Vec<(QualityLevel, f64)> = distribution
        .means
        .iter()
        .filter(|(l, _)| !l.is_original())
        .map(|(l, m)| (*l, *m))
        .collect();
    if coded.is_empty() {
        return Err(Error::invalid("base QP selection", "distribution has no coded levels"));
    }
    if let Some((l, _)) = coded.iter().rev().find(|(_, m)| *m >= threshold) {
        return Ok(*l);
    }
    let mut best = coded[0];
    for &(l, m) in &coded[1..] {
        if (m - threshold).abs() < (best.1 - threshold).abs() {
            best = (l, m);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDecision {
    pub image: String,
    pub threshold: f64,
    pub q_b: QualityLevel,
    pub chosen: QualityLevel,
    /// No level from `q_b` onwards met the threshold.
    pub fallback: bool,
}

/// Scans predictions from the last ladder level back to `q_b` and takes the
/// first level predicted to reach `threshold`.
pub fn select_qp(
    image: &str,
    threshold: f64,
    q_b: QualityLevel,
    ladder: &QpLadder,
    predictions: &BTreeMap<QualityLevel, f64>,
) -> Result<QpDecision> {
    let start = ladder
        .index_of(q_b)
        .ok_or_else(|| Error::invalid("QP selection", format!("{q_b} is not on the ladder")))?;
    let mut chosen = None;
    for &level in ladder.levels()[start..].iter().rev() {
        let p = predictions
            .get(&level)
            .ok_or_else(|| Error::missing("prediction", format!("({image}, {level})")))?;
        if chosen.is_none() && *p >= threshold {
            chosen = Some(level);
        }
    }
    Ok(QpDecision {
        image: image.to_owned(),
        threshold,
        q_b,
        chosen: chosen.unwrap_or(q_b),
        fallback: chosen.is_none(),
    })
}

/// Per-image SMR estimates over the coded levels.
pub type PredictionMap = BTreeMap<QualityLevel, f64>;

/// Guided decisions for every threshold and image, threshold-major in input
/// order.
pub fn guided_decisions(
    thresholds: &ThresholdSet,
    distribution: &SmrDistribution,
    ladder: &QpLadder,
    predictions: &[(String, PredictionMap)],
) -> Result<Vec<QpDecision>> {
    let mut out = Vec::with_capacity(thresholds.len() * predictions.len());
    for &t in thresholds.values() {
        let q_b = select_base_qp(distribution, t)?;
        let batch: Vec<QpDecision> = predictions
            .par_iter()
            .map(|(image, p)| select_qp(image, t, q_b, ladder, p))
            .collect::<Result<_>>()?;
        out.extend(batch);
    }
    Ok(out)
}

/// Every image coded at `q_b` of each threshold.
pub fn constant_qp_decisions(
    thresholds: &ThresholdSet,
    distribution: &SmrDistribution,
    images: &[String],
) -> Result<Vec<QpDecision>> {
    let mut out = Vec::with_capacity(thresholds.len() * images.len());
    for &t in thresholds.values() {
        let q_b = select_base_qp(distribution, t)?;
        out.extend(images.iter().map(|image| QpDecision {
            image: image.clone(),
            threshold: t,
            q_b,
            chosen: q_b,
            fallback: false,
        }));
    }
    Ok(out)
}

/// Ground-truth SMR of each coded level, usable as oracle predictions.
pub fn table_predictions(tables: &[SmrTable]) -> Vec<(String, PredictionMap)> {
    tables
        .iter()
        .map(|t| {
            let map = t
                .entries
                .iter()
                .filter(|(l, _)| !l.is_original())
                .map(|(l, e)| (*l, e.smr))
                .collect();
            (t.image.clone(), map)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub mean_bpp: f64,
    pub mean_smr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSmrCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// Mean bpp and mean actual SMR of the chosen levels for each threshold.
pub fn build_curve(
    label: &str,
    decisions: &[QpDecision],
    bitrates: &BitrateTable,
    tables: &[SmrTable],
    thresholds: &ThresholdSet,
) -> Result<RateSmrCurve> {
    let by_image: BTreeMap<&str, &SmrTable> = tables.iter().map(|t| (t.image.as_str(), t)).collect();
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds.values() {
        let (mut bpp, mut smr, mut n) = (0.0, 0.0, 0usize);
        for d in decisions.iter().filter(|d| d.threshold == t) {
            bpp += bitrates
                .get(&d.image, d.chosen)
                .ok_or_else(|| Error::missing("bitrate", format!("({}, {})", d.image, d.chosen)))?;
            smr += by_image
                .get(d.image.as_str())
                .and_then(|table| table.smr(d.chosen))
                .ok_or_else(|| Error::missing("SMR", format!("({}, {})", d.image, d.chosen)))?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::missing("decisions for threshold", t));
        }
        points.push(CurvePoint {
            threshold: t,
            mean_bpp: bpp / n as f64,
            mean_smr: smr / n as f64,
        });
    }
    Ok(RateSmrCurve {
        label: label.to_owned(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BdRateMethod {
    /// Single cubic least-squares fit per curve.
    #[default]
    Cubic,
    /// Monotone piecewise-cubic Hermite interpolation.
    Pchip,
}

impl std::str::FromStr for BdRateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(BdRateMethod::Cubic),
            "pchip" => Ok(BdRateMethod::Pchip),
            other => Err(Error::invalid("BD-rate method", other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRateReport {
    pub anchor: String,
    pub test: String,
    pub bd_rate_percent: f64,
    pub smr_overlap: [f64; 2],
}

/// Curve as `(smr, log10 bpp)` sorted by SMR, equal SMR merged by averaging
/// the log-rate.
pub fn prepare_curve(curve: &RateSmrCurve) -> Result<Vec<(f64, f64)>> {
    let mut pts = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        if !(p.mean_bpp > 0.0 && p.mean_bpp.is_finite()) || !p.mean_smr.is_finite() {
            return Err(Error::invalid(
                "rate-SMR curve",
                format!("`{}` has a point with bpp {} and SMR {}", curve.label, p.mean_bpp, p.mean_smr),
            ));
        }
        pts.push((p.mean_smr, p.mean_bpp.log10()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(pts.len());
    for (x, y) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == x => {
                last.1 += y;
                last.2 += 1;
            }
            _ => merged.push((x, y, 1)),
        }
    }
    if merged.len() < 4 {
        return Err(Error::invalid(
            "rate-SMR curve",
            format!("`{}` has {} distinct SMR values, need 4", curve.label, merged.len()),
        ));
    }
    Ok(merged.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect())
}

/// Mean difference of fitted `log10 bpp` (test minus anchor) over the common
/// SMR range, with that range.
pub fn mean_log_rate_difference(
    anchor: &RateSmrCurve,
    test: &RateSmrCurve,
    method: BdRateMethod,
) -> Result<(f64, [f64; 2])> {
    let a = prepare_curve(anchor)?;
    let b = prepare_curve(test)?;
    let lo = a[0].0.max(b[0].0);
    let hi = a[a.len() - 1].0.min(b[b.len() - 1].0);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid(
            "BD-rate",
            format!("SMR ranges of `{}` and `{}` do not overlap", anchor.label, test.label),
        ));
    }
    let integral = |pts: &[(f64, f64)]| -> Result<f64> {
        match method {
            BdRateMethod::Cubic => {
                let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
                Ok(polyfit(&xs, &ys, 3)?.integrate(lo, hi))
            }
            BdRateMethod::Pchip => Ok(Pchip::new(pts).integrate(lo, hi)),
        }
    };
    Ok(((integral(&b)? - integral(&a)?) / (hi - lo), [lo, hi]))
}

/// Average bitrate difference of `test` against `anchor` in percent over the
/// common SMR range.
pub fn bd_rate(anchor: &RateSmrCurve, test: &RateSmrCurve, method: BdRateMethod) -> Result<BdRateReport> {
    let (delta, overlap) = mean_log_rate_difference(anchor, test, method)?;
    Ok(BdRateReport {
        anchor: anchor.label.clone(),
        test: test.label.clone(),
        bd_rate_percent: (10f64.powf(delta) - 1.0) * 100.0,
        smr_overlap: overlap,
    })
}

/// Monotone piecewise-cubic Hermite interpolant over sorted, distinct knots.
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(points: &[(f64, f64)]) -> Self {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip { xs, ys, slopes }
    }

    /// Segment `k` as a cubic in `t = (x - x_k) / h_k`.
    fn segment(&self, k: usize) -> Polynomial {
        let h = self.xs[k + 1] - self.xs[k];
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let (m0, m1) = (h * self.slopes[k], h * self.slopes[k + 1]);
        Polynomial(vec![
            y0,
            m0,
            -3.0 * y0 - 2.0 * m0 + 3.0 * y1 - m1,
            2.0 * y0 + m0 - 2.0 * y1 + m1,
        ])
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        self.segment(k).eval((x - self.xs[k]) / h)
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        self.xs[1..n - 1].partition_point(|&k| k <= x)
    }

    /// Exact integral over `[a, b]`, both inside the knot range.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.xs.len() - 1 {
            let (x0, x1) = (self.xs[k], self.xs[k + 1]);
            let (s, e) = (a.max(x0), b.min(x1));
            if e <= s {
                continue;
            }
            let h = x1 - x0;
            total += h * self.segment(k).integrate((s - x0) / h, (e - x0) / h);
        }
        total
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
