//! Full-reference SMR prediction over precomputed feature vectors.
//!
//! A reference embedding `h0` (original image) and a variant embedding `hq`
//! are concatenated and fed to a rectifier MLP. The baseline model regresses
//! SMR directly; the difference model regresses `|SMR(a) - SMR(b)|` between
//! two variants of one image and predicts `1 - Q(h0, hq)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{FeatureSet, QualityLevel};
use crate::rng::substream;
use crate::smr::SmrTable;
use crate::stats::{pearson, polyfit, spearman, Polynomial};

/// Cosine similarity of a variant's features with the reference features.
pub fn feature_difference(variant: &[f64], reference: &[f64]) -> Result<f64> {
    if variant.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: variant.len(),
            right: reference.len(),
        });
    }
    let dot: f64 = variant.iter().zip(reference).map(|(a, b)| a * b).sum();
    let na = variant.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("feature difference", "zero-norm feature vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub image: String,
    pub level: QualityLevel,
    /// Cosine similarity to the original, averaged over extractors.
    pub mean_difference: f64,
    pub smr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub points: Vec<CorrelationPoint>,
    /// Cubic least-squares fit of SMR on mean difference, lowest degree first.
    pub cubic: [f64; 4],
    pub pearson: Option<f64>,
    /// `None` when either variable is constant.
    pub spearman: Option<f64>,
}

/// Pairs the mean feature difference of every coded level with its SMR and
/// fits a cubic through the scatter.
pub fn correlation_study(features: &FeatureSet, extractors: &[String], tables: &[SmrTable]) -> Result<CorrelationStudy> {
    if extractors.is_empty() {
        return Err(Error::invalid("correlation study", "no extractors"));
    }
    let mut points = Vec::new();
    for table in tables {
        for (&level, entry) in &table.entries {
            if level.is_original() {
                continue;
            }
            let mut sum = 0.0;
            for e in extractors {
                let key = |l: QualityLevel| format!("({e}, {}, {l})", table.image);
                let reference = features
                    .get(e, &table.image, QualityLevel::ORIGINAL)
                    .ok_or_else(|| Error::missing("features", key(QualityLevel::ORIGINAL)))?;
                let variant = features
                    .get(e, &table.image, level)
                    .ok_or_else(|| Error::missing("features", key(level)))?;
                sum += feature_difference(variant, reference)?;
            }
            points.push(CorrelationPoint {
                image: table.image.clone(),
                level,
                mean_difference: sum / extractors.len() as f64,
                smr: entry.smr,
            });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.mean_difference).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.smr).collect();
    let fit = polyfit(&xs, &ys, 3)?;
    Ok(CorrelationStudy {
        cubic: [fit.0[0], fit.0[1], fit.0[2], fit.0[3]],
        pearson: pearson(&xs, &ys),
        spearman: spearman(&xs, &ys),
        points,
    })
}

impl CorrelationStudy {
    pub fn fitted(&self, mean_difference: f64) -> f64 {
        Polynomial(self.cubic.to_vec()).eval(mean_difference)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Regresses SMR of the variant directly.
    Baseline,
    /// Regresses the SMR difference of two variants.
    Difference,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "g" => Ok(ModelKind::Baseline),
            "difference" | "diff" | "q" => Ok(ModelKind::Difference),
            other => Err(Error::invalid("model kind", other.to_owned())),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Difference => "difference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Mean absolute error; subgradient 0 at the kink.
    #[default]
    L1,
    /// Mean squared error.
    Squared,
}

impl Loss {
    fn value(self, y: f64, t: f64) -> f64 {
        match self {
            Loss::L1 => (y - t).abs(),
            Loss::Squared => (y - t) * (y - t),
        }
    }

    fn derivative(self, y: f64, t: f64) -> f64 {
        match self {
            Loss::L1 => {
                if y > t {
                    1.0
                } else if y < t {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::Squared => 2.0 * (y - t),
        }
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Rectifier MLP with a single output, clipped to `[0, 1]` at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub kind: ModelKind,
    pub sizes: Vec<usize>,
    pub layers: Vec<Dense>,
}

/// Pre-activations of every layer for one input.
struct Trace {
    inputs: Vec<f64>,
    pre: Vec<Vec<f64>>,
}

impl MlpRegressor {
    /// `2d -> 4d -> 4d -> 1` for feature dimension `d`.
    pub fn default_sizes(feature_dim: usize) -> Vec<usize> {
        vec![2 * feature_dim, 4 * feature_dim, 4 * feature_dim, 1]
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) || sizes[sizes.len() - 1] != 1 {
            return Err(Error::invalid(
                "layer sizes",
                format!("{sizes:?} must be at least [in, 1] with a single output and no empty layer"),
            ));
        }
        Ok(())
    }

    pub fn zeros(kind: ModelKind, sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(MlpRegressor {
            kind,
            sizes: sizes.to_vec(),
            layers,
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases drawn
    /// from stream `("init", [])`.
    pub fn init(kind: ModelKind, sizes: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(kind, sizes)?;
        let mut rng = substream(seed, "init", &[]);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.input_dim(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(&act, &mut z);
            act = if i < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            pre.push(z);
        }
        Trace {
            inputs: x.to_vec(),
            pre,
        }
    }

    /// Output of the final affine layer, before clipping.
    pub fn forward_raw(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).pre.last().expect("at least one layer")[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_raw(x)?.clamp(0.0, 1.0))
    }

    /// Rectifier on/off pattern of all hidden units.
    fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        let t = self.trace(x);
        t.pre[..t.pre.len() - 1].iter().flatten().map(|z| *z > 0.0).collect()
    }

    /// Mean loss of the raw output and its gradient, flattened layer by
    /// layer as weights then biases.
    pub fn loss_and_gradient(&self, batch: &[(Vec<f64>, f64)], loss: Loss) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_count()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (x, target) in batch {
            self.check_input(x)?;
            let trace = self.trace(x);
            let y = trace.pre.last().expect("layer")[0];
            total += loss.value(y, *target);
            self.backward(&trace, loss.derivative(y, *target) * scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    fn backward(&self, trace: &Trace, d_out: f64, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        let mut delta = vec![d_out];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input: Vec<f64> = if li == 0 {
                trace.inputs.clone()
            } else {
                trace.pre[li - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let base = offsets[li];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(&input) {
                    *g += d * v;
                }
                grad[base + layer.weights.len() + o] += d;
            }
            if li > 0 {
                let prev = &trace.pre[li - 1];
                delta = (0..layer.inputs)
                    .map(|i| {
                        if prev[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..layer.outputs)
                            .map(|o| layer.weights[o * layer.inputs + i] * delta[o])
                            .sum()
                    })
                    .collect();
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn param_mut(&mut self, index: usize) -> &mut f64 {
        self.params_mut().nth(index).expect("parameter index in range")
    }

    pub fn save(&self, path: impl AsRef<Path>, config: Option<&TrainingConfig>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json(config)?).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_json(&self, config: Option<&TrainingConfig>) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: config.map(|c| c.seed),
            config: config.cloned(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&ckpt).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<TrainingConfig>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<(Self, Option<TrainingConfig>)> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let m = ckpt.model;
        Self::check_sizes(&m.sizes)?;
        let consistent = m.layers.len() == m.sizes.len() - 1
            && m.layers.iter().zip(m.sizes.windows(2)).all(|(l, w)| {
                l.inputs == w[0] && l.outputs == w[1] && l.weights.len() == w[0] * w[1] && l.biases.len() == w[1]
            });
        if !consistent {
            return Err(Error::Format("checkpoint layer shapes disagree with sizes".into()));
        }
        if m.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases)).any(|v| !v.is_finite()) {
            return Err(Error::Format("checkpoint has non-finite parameters".into()));
        }
        Ok((m, ckpt.config))
    }
}

const CHECKPOINT_FORMAT: &str = "smrkit-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: Option<u64>,
    config: Option<TrainingConfig>,
    model: MlpRegressor,
}

pub fn concat(reference: &[f64], variant: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(reference.len() + variant.len());
    v.extend_from_slice(reference);
    v.extend_from_slice(variant);
    v
}

/// Predicted SMR of the variant: the clipped output for the baseline model,
/// `1 - Q(h0, hq)` clipped for the difference model.
pub fn predict_smr(model: &MlpRegressor, reference: &[f64], variant: &[f64]) -> Result<f64> {
    if reference.len() != variant.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: variant.len(),
        });
    }
    let x = concat(reference, variant);
    match model.kind {
        ModelKind::Baseline => model.forward(&x),
        ModelKind::Difference => Ok((1.0 - model.forward(&x)?).clamp(0.0, 1.0)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSample {
    pub level: QualityLevel,
    pub features: Vec<f64>,
    pub smr: f64,
}

/// Features of one original image and its coded variants with their SMR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSamples {
    pub image: String,
    pub reference: Vec<f64>,
    pub variants: Vec<VariantSample>,
}

impl ImageSamples {
    /// Builds samples for every table image that has features for the
    /// original and each coded level.
    pub fn collect(features: &FeatureSet, extractor: &str, tables: &[SmrTable]) -> Result<Vec<Self>> {
        tables
            .iter()
            .map(|t| {
                let get = |l: QualityLevel| {
                    features
                        .get(extractor, &t.image, l)
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| Error::missing("features", format!("({extractor}, {}, {l})", t.image)))
                };
                let reference = get(QualityLevel::ORIGINAL)?;
                let variants = t
                    .entries
                    .iter()
                    .filter(|(l, _)| !l.is_original())
                    .map(|(&level, e)| {
                        Ok(VariantSample {
                            level,
                            features: get(level)?,
                            smr: e.smr,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ImageSamples {
                    image: t.image.clone(),
                    reference,
                    variants,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths; empty means `[4d, 4d]`.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            kind: ModelKind::Baseline,
            loss: Loss::L1,
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            hidden: Vec::new(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("training config", "learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("training config", "epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("training config", "Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn sizes(&self, feature_dim: usize) -> Vec<usize> {
        if self.hidden.is_empty() {
            MlpRegressor::default_sizes(feature_dim)
        } else {
            std::iter::once(2 * feature_dim)
                .chain(self.hidden.iter().copied())
                .chain(std::iter::once(1))
                .collect()
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, model: &mut MlpRegressor, grad: &[f64], cfg: &TrainingConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (i, p) in model.params_mut().enumerate() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: MlpRegressor,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

fn feature_dim(samples: &[ImageSamples]) -> Result<usize> {
    let d = samples
        .first()
        .map(|s| s.reference.len())
        .ok_or_else(|| Error::invalid("training set", "no images"))?;
    for s in samples {
        if s.reference.len() != d || s.variants.iter().any(|v| v.features.len() != d) {
            return Err(Error::invalid("training set", format!("feature dimension differs in `{}`", s.image)));
        }
    }
    if samples.iter().all(|s| s.variants.is_empty()) {
        return Err(Error::invalid("training set", "no variants"));
    }
    Ok(d)
}

/// Training pairs of one epoch. The difference model draws, for every
/// variant, a random partner level of the same image (the original counts,
/// with SMR 1, and so does the variant itself) and a random pair order, from
/// stream `("pairs", [epoch])`.
fn epoch_samples(samples: &[ImageSamples], cfg: &TrainingConfig, epoch: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    match cfg.kind {
        ModelKind::Baseline => {
            for s in samples {
                for v in &s.variants {
                    out.push((concat(&s.reference, &v.features), v.smr));
                }
            }
        }
        ModelKind::Difference => {
            let mut rng = substream(cfg.seed, "pairs", &[epoch as u64]);
            for s in samples {
                let levels = s.variants.len() + 1;
                // index 0 is the original
                let at = |i: usize| -> (&[f64], f64) {
                    if i == 0 {
                        (&s.reference, 1.0)
                    } else {
                        let v = &s.variants[i - 1];
                        (&v.features, v.smr)
                    }
                };
                for i in 1..levels {
                    // the variant itself is a valid partner, with target 0
                    let j = rng.random_range(0..levels);
                    let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
                    let (fa, sa) = at(a);
                    let (fb, sb) = at(b);
                    out.push((concat(fa, fb), (sa - sb).abs()));
                }
            }
        }
    }
    out
}

/// Seeded mini-batch Adam on the configured loss. Batch order comes from
/// stream `("batching", [epoch])` and initial weights from `("init", [])`.
pub fn train(samples: &[ImageSamples], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = feature_dim(samples)?;
    let mut model = MlpRegressor::init(cfg.kind, &cfg.sizes(d), cfg.seed)?;
    let n_params = model.param_count();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let fixed = (cfg.kind == ModelKind::Baseline).then(|| epoch_samples(samples, cfg, 0));
    for epoch in 0..cfg.epochs {
        let owned;
        let data = match &fixed {
            Some(f) => f,
            None => {
                owned = epoch_samples(samples, cfg, epoch);
                &owned
            }
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "batching", &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, f64)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grad) = model.loss_and_gradient(&batch, cfg.loss)?;
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut model, &grad, cfg);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        loss_trace.push(mean);
    }
    if model.params_mut().any(|p| !p.is_finite()) {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Mean absolute error of predicted against annotated SMR over all variants.
pub fn evaluate(model: &MlpRegressor, samples: &[ImageSamples]) -> Result<f64> {
    let mut err = 0.0;
    let mut n = 0usize;
    for s in samples {
        for v in &s.variants {
            err += (predict_smr(model, &s.reference, &v.features)? - v.smr).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("evaluation set", "no variants"));
    }
    Ok(err / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_parameter: Option<usize>,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a rectifier kink.
    pub skipped: usize,
}

/// Compares backprop with central differences (step `h`) for every
/// parameter. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`. L1 targets
/// within `10 h` of the output are moved away from the kink first.
pub fn gradient_check(model: &MlpRegressor, batch: &[(Vec<f64>, f64)], loss: Loss, h: f64) -> Result<GradientCheck> {
    let mut batch = batch.to_vec();
    if loss == Loss::L1 {
        for (x, t) in &mut batch {
            let y = model.forward_raw(x)?;
            if (y - *t).abs() < 1e-2 {
                *t = if y >= *t { y - 1e-2 } else { y + 1e-2 };
            }
        }
    }
    let (_, analytic) = model.loss_and_gradient(&batch, loss)?;
    let patterns: Vec<Vec<bool>> = batch.iter().map(|(x, _)| model.activation_pattern(x)).collect();
    let mut probe = model.clone();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst_parameter: None,
        checked: 0,
        skipped: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        let eval = |value: f64, probe: &mut MlpRegressor| -> Result<(f64, bool)> {
            *probe.param_mut(i) = value;
            let same = batch
                .iter()
                .zip(&patterns)
                .all(|((x, _), p)| probe.activation_pattern(x) == *p);
            Ok((probe.loss_and_gradient(&batch, loss)?.0, same))
        };
        let (plus, same_plus) = eval(orig + h, &mut probe)?;
        let (minus, same_minus) = eval(orig - h, &mut probe)?;
        *probe.param_mut(i) = orig;
        if !(same_plus && same_minus) {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_parameter = Some(i);
        }
    }
    Ok(report)
}
