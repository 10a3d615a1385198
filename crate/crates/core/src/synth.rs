//! Synthetic classification datasets with known structure.
//!
//! Each image has a robustness and each machine a tolerance. A machine keeps
//! its original top-1 at a level while the image's degradation plus noise
//! stays below its tolerance. Some images get a "sweet spot" level where
//! degradation drops, which makes per-image SMR non-monotonic in QP.
//! Feature vectors encode the noiseless degradation as the angle between the
//! variant embedding and the original one.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{ImageSamples, VariantSample};
use crate::records::{
    BitrateRecord, BitrateTable, ClassificationPrediction, DatasetManifest, FeatureRecord, FeatureSet, Payload,
    PerceptionRecord, PerceptionSet, QpLadder, QualityLevel, Task,
};
use crate::rng::{substream, StreamRng};

pub const EXTRACTOR: &str = "encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub machines: usize,
    pub images: usize,
    pub qp_range: (u32, u32),
    pub feature_dim: usize,
    pub classes: u32,
    /// Standard deviation of per-cell degradation noise.
    pub noise: f64,
    /// Chance that an image has a sweet-spot level.
    pub sweet_spot_probability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            machines: 12,
            images: 200,
            qp_range: (32, 51),
            feature_dim: 8,
            classes: 1000,
            noise: 0.08,
            sweet_spot_probability: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub perceptions: PerceptionSet,
    pub features: FeatureSet,
    pub bitrates: BitrateTable,
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn gaussian(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random unit vector orthogonal to the unit vector `h`.
fn orthogonal(rng: &mut StreamRng, h: &[f64]) -> Vec<f64> {
    loop {
        let mut u = gaussian(rng, h.len());
        let dot: f64 = u.iter().zip(h).map(|(a, b)| a * b).sum();
        u.iter_mut().zip(h).for_each(|(a, b)| *a -= dot * b);
        if u.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            unit(&mut u);
            return u;
        }
    }
}

/// Embedding at angle `acos(cos)` from `h0`, scaled by `norm`.
fn rotate(h0: &[f64], u: &[f64], cos: f64, norm: f64) -> Vec<f64> {
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    h0.iter().zip(u).map(|(a, b)| norm * (cos * a + sin * b)).collect()
}

/// Base embedding: a shared direction plus an image-specific part.
fn reference_embedding(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    let mut h: Vec<f64> = gaussian(rng, d).into_iter().map(|x| 1.0 + 0.3 * x).collect();
    unit(&mut h);
    h
}

/// Cosine similarity carried by a variant with degradation `d`.
pub fn degradation_cosine(d: f64) -> f64 {
    (1.0 - 0.5 * d).clamp(0.0, 1.0)
}

fn ranking_after(original: &[u32], new_top: u32) -> Vec<u32> {
    std::iter::once(new_top)
        .chain(original.iter().copied().filter(|c| *c != new_top))
        .take(original.len())
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.machines == 0 || cfg.images == 0 || cfg.feature_dim < 2 || cfg.classes < 6 {
        return Err(Error::invalid(
            "synthetic config",
            "needs machines, images, feature_dim >= 2 and at least 6 classes",
        ));
    }
    let ladder = QpLadder::contiguous(cfg.qp_range.0, cfg.qp_range.1)?;
    let width = cfg.images.to_string().len();
    let machines: Vec<String> = (0..cfg.machines).map(|m| format!("m{m:02}")).collect();
    let images: Vec<String> = (0..cfg.images).map(|i| format!("img{i:0width$}")).collect();
    let manifest = DatasetManifest {
        task: Task::Classification,
        ladder: ladder.clone(),
        machines: machines.clone(),
        images: images.clone(),
        libraries: Default::default(),
    };
    let tolerances: Vec<f64> = (0..cfg.machines)
        .map(|m| 0.25 + 0.6 * m as f64 / (cfg.machines.max(2) - 1) as f64)
        .collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid("synthetic noise", e.to_string()))?;
    let mut perceptions = PerceptionSet::new(Task::Classification);
    let mut features = FeatureSet::default();
    let mut bitrates = BitrateTable::default();
    let n_levels = ladder.len();
    for (i, image) in images.iter().enumerate() {
        let mut rng = substream(cfg.seed, "synth", &[i as u64]);
        let robustness: f64 = rng.random_range(0.6..1.6);
        let base_bpp: f64 = rng.random_range(0.4..2.0);
        let sweet = rng
            .random_bool(cfg.sweet_spot_probability)
            .then(|| rng.random_range(n_levels / 2..n_levels));
        let degradation: Vec<f64> = (0..n_levels)
            .map(|j| {
                let d = (j + 1) as f64 / n_levels as f64 / robustness;
                if sweet == Some(j) {
                    d * 0.45
                } else {
                    d
                }
            })
            .collect();
        let mut classes: Vec<u32> = (0..cfg.classes).collect();
        classes.partial_shuffle(&mut rng, 5);
        let h0 = reference_embedding(&mut rng, cfg.feature_dim);
        features.insert(FeatureRecord {
            extractor: EXTRACTOR.into(),
            image: image.clone(),
            level: QualityLevel::ORIGINAL,
            vector: h0.clone(),
        })?;
        for (m, machine) in machines.iter().enumerate() {
            let mut original: Vec<u32> = classes[..5].to_vec();
            original[1..].shuffle(&mut rng);
            perceptions.insert(PerceptionRecord {
                machine: machine.clone(),
                image: image.clone(),
                level: QualityLevel::ORIGINAL,
                payload: Payload::Classification(ClassificationPrediction::new(original.clone())?),
            })?;
            for (j, &level) in ladder.levels().iter().enumerate() {
                let excess = degradation[j] + noise.sample(&mut rng) - tolerances[m];
                let top = if excess < 0.0 {
                    original[0]
                } else if excess < 0.15 {
                    original[rng.random_range(1..3)]
                } else if excess < 0.3 {
                    original[rng.random_range(3..5)]
                } else {
                    // a class outside the original top five
                    classes[rng.random_range(5..classes.len())]
                };
                perceptions.insert(PerceptionRecord {
                    machine: machine.clone(),
                    image: image.clone(),
                    level,
                    payload: Payload::Classification(ClassificationPrediction::new(ranking_after(&original, top))?),
                })?;
            }
        }
        for (j, &level) in ladder.levels().iter().enumerate() {
            let u = orthogonal(&mut rng, &h0);
            let norm = rng.random_range(0.8..1.2);
            features.insert(FeatureRecord {
                extractor: EXTRACTOR.into(),
                image: image.clone(),
                level,
                vector: rotate(&h0, &u, degradation_cosine(degradation[j]), norm),
            })?;
            let qp = level.qp() as f64 - cfg.qp_range.0 as f64;
            bitrates.insert(BitrateRecord {
                image: image.clone(),
                level,
                bpp: base_bpp * 2f64.powf(-qp / 6.0),
            })?;
        }
    }
    Ok(SynthDataset {
        manifest,
        perceptions,
        features,
        bitrates,
    })
}

/// Regression set whose target is `clamp(a * cos(h0, hq) + b, 0, 1)` plus
/// Gaussian noise of standard deviation `sigma`.
pub fn cosine_target_samples(
    images: usize,
    levels: usize,
    dim: usize,
    (a, b): (f64, f64),
    sigma: f64,
    seed: u64,
) -> Result<Vec<ImageSamples>> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid("target noise", e.to_string()))?;
    (0..images)
        .map(|i| {
            let mut rng = substream(seed, "cosine-target", &[i as u64]);
            let reference = reference_embedding(&mut rng, dim);
            let variants = (0..levels)
                .map(|j| {
                    let cos: f64 = rng.random_range(0.3..1.0);
                    let u = orthogonal(&mut rng, &reference);
                    let norm = rng.random_range(0.8..1.2);
                    let smr = ((a * cos + b).clamp(0.0, 1.0) + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    VariantSample {
                        level: QualityLevel::from_qp(j as u32 + 1),
                        features: rotate(&reference, &u, cos, norm),
                        smr,
                    }
                })
                .collect();
            Ok(ImageSamples {
                image: format!("img{i}"),
                reference,
                variants,
            })
        })
        .collect()
}
