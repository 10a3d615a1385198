//! End-to-end run: annotate, split, train, select QPs, compare curves.

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use serde::Serialize;
use smrkit::coding::{
    bd_rate, build_curve, constant_qp_decisions, guided_decisions, table_predictions, BdRateReport, PredictionMap,
    RateSmrCurve,
};
use smrkit::predictor::{evaluate, predict_smr, train, ImageSamples, TrainingConfig};
use smrkit::rng::substream;
use smrkit::smr::{annotate, distribution};
use smrkit::{QualityLevel, SmrTable};

use crate::args::{ModelArgs, PipelineArgs};
use crate::io::*;
use crate::output::{fmt9, round9, OutDir};

pub const CONSTANT_QP: &str = "constant-qp";
pub const GT_GUIDED: &str = "gt-guided";
pub const PREDICTED_GUIDED: &str = "predicted-guided";

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub smr_type: String,
    pub seed: u64,
    pub thresholds: String,
    pub model_kind: String,
    pub extractor: String,
    pub train_images: usize,
    pub test_images: usize,
    pub final_training_loss: f64,
    pub test_mae: f64,
    pub bd_rates: Vec<BdRateReport>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().with_context(|| format!("stage `{name}` failed"))
}

/// Splits sorted image ids into (train, test) with a seeded shuffle.
pub fn split_images(images: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        bail!("test fraction must lie in (0, 1), got {test_fraction}");
    }
    if images.len() < 2 {
        bail!("need at least two images to split");
    }
    let mut ids = images.to_vec();
    ids.sort();
    ids.shuffle(&mut substream(seed, "split", &[]));
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let test = ids.split_off(ids.len() - n_test);
    ids.sort();
    let mut test = test;
    test.sort();
    Ok((ids, test))
}

pub fn training_config(model: &ModelArgs, seed: u64) -> TrainingConfig {
    TrainingConfig {
        kind: model.model_kind,
        loss: model.loss,
        learning_rate: model.learning_rate,
        epochs: model.epochs,
        batch_size: model.batch_size,
        seed,
        hidden: model.hidden.clone(),
        ..TrainingConfig::default()
    }
}

pub fn loss_header(cfg: &TrainingConfig) -> [&'static str; 2] {
    match cfg.loss {
        smrkit::predictor::Loss::L1 => ["epoch", "mean_L1"],
        smrkit::predictor::Loss::Squared => ["epoch", "mean_squared"],
    }
}

pub fn run(args: &PipelineArgs) -> Result<PipelineSummary> {
    let seed = args.seed.seed;
    let mut out = OutDir::new(&args.out)?;
    let (manifest, perceptions, features, bitrates) = stage("ingest", || {
        let manifest = load_manifest(&args.data.manifest)?;
        let perceptions = load_perceptions(&manifest, &args.data.records)?;
        let features = load_features(&args.features, &manifest)?;
        let bitrates = load_bitrates(&args.bitrates, &manifest)?;
        Ok((manifest, perceptions, features, bitrates))
    })?;
    let smr_type = resolve_smr_type(args.smr_type.as_ref(), &manifest)?;
    let extractor = resolve_extractor(args.model.extractor.as_deref(), &features)?;

    let tables = stage("annotate", || {
        let tables = annotate(&manifest, &perceptions, &smr_type, args.scoring.options())?;
        out.csv("smr.csv", &SMR_HEADER, smr_rows(&tables))?;
        Ok(tables)
    })?;
    let images: Vec<String> = tables.iter().map(|t| t.image.clone()).collect();

    let (train_ids, test_ids) = stage("split", || {
        let (train, test) = split_images(&images, args.test_fraction, seed)?;
        let rows = train
            .iter()
            .map(|i| vec![i.clone(), "train".into()])
            .chain(test.iter().map(|i| vec![i.clone(), "test".into()]));
        out.csv("split.csv", &["image", "role"], rows)?;
        Ok((train, test))
    })?;
    let pick = |ids: &[String]| -> Vec<SmrTable> {
        tables
            .iter()
            .filter(|t| ids.binary_search(&t.image).is_ok())
            .cloned()
            .collect()
    };
    let (train_tables, test_tables) = (pick(&train_ids), pick(&test_ids));

    let dist = stage("distribution", || {
        let d = distribution(&train_tables)?;
        out.csv("distribution.csv", &["qp", "mean_smr"], distribution_rows(&d))?;
        Ok(d)
    })?;

    let cfg = training_config(&args.model, seed);
    let (model, final_loss, test_mae) = stage("train", || {
        let train_samples = ImageSamples::collect(&features, &extractor, &train_tables)?;
        let test_samples = ImageSamples::collect(&features, &extractor, &test_tables)?;
        let outcome = train(&train_samples, &cfg)?;
        out.write("model.json", outcome.model.to_checkpoint_json(Some(&cfg))?.as_bytes())?;
        out.csv(
            "loss.csv",
            &loss_header(&cfg),
            outcome
                .loss_trace
                .iter()
                .enumerate()
                .map(|(e, l)| vec![(e + 1).to_string(), fmt9(*l)]),
        )?;
        let mae = evaluate(&outcome.model, &test_samples)?;
        let last = *outcome.loss_trace.last().expect("at least one epoch");
        Ok((outcome.model, last, mae))
    })?;

    let predicted = stage("predict", || {
        let preds = test_tables
            .iter()
            .map(|t| {
                let reference = features
                    .get(&extractor, &t.image, QualityLevel::ORIGINAL)
                    .with_context(|| format!("no original features for `{}`", t.image))?;
                let map = manifest
                    .ladder
                    .levels()
                    .iter()
                    .map(|&l| {
                        let v = features
                            .get(&extractor, &t.image, l)
                            .with_context(|| format!("no features for ({}, {l})", t.image))?;
                        Ok((l, predict_smr(&model, reference, v)?))
                    })
                    .collect::<Result<PredictionMap>>()?;
                Ok((t.image.clone(), map))
            })
            .collect::<Result<Vec<_>>>()?;
        out.csv("predictions.csv", &PREDICTION_HEADER, prediction_rows(&preds))?;
        Ok(preds)
    })?;

    let thresholds = &args.thresholds;
    let curves: Vec<RateSmrCurve> = stage("optimize", || {
        let constant = constant_qp_decisions(thresholds, &dist, &test_ids)?;
        let gt = guided_decisions(thresholds, &dist, &manifest.ladder, &table_predictions(&test_tables))?;
        let pred = guided_decisions(thresholds, &dist, &manifest.ladder, &predicted)?;
        let mut curves = Vec::new();
        for (label, decisions) in [(CONSTANT_QP, &constant), (GT_GUIDED, &gt), (PREDICTED_GUIDED, &pred)] {
            out.csv(&format!("decisions-{label}.csv"), &DECISION_HEADER, decision_rows(decisions))?;
            curves.push(build_curve(label, decisions, &bitrates, &test_tables, thresholds)?);
        }
        out.csv("curves.csv", &CURVE_HEADER, curve_rows(&curves.iter().collect::<Vec<_>>()))?;
        Ok(curves)
    })?;

    let reports = stage("bdrate", || {
        let [constant, gt, pred] = [&curves[0], &curves[1], &curves[2]];
        let reports = [(constant, gt), (constant, pred), (gt, pred)]
            .into_iter()
            .map(|(a, t)| {
                let mut r = bd_rate(a, t, args.method)?;
                r.bd_rate_percent = round9(r.bd_rate_percent);
                r.smr_overlap = r.smr_overlap.map(round9);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        out.json("bdrate.json", &reports)?;
        Ok(reports)
    })?;

    let summary = PipelineSummary {
        smr_type: smr_type.to_string(),
        seed,
        thresholds: thresholds.to_string(),
        model_kind: cfg.kind.to_string(),
        extractor,
        train_images: train_ids.len(),
        test_images: test_ids.len(),
        final_training_loss: round9(final_loss),
        test_mae: round9(test_mae),
        bd_rates: reports,
    };
    out.json("summary.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let images: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let (a, b) = split_images(&images, 0.3, 7).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(split_images(&images, 0.3, 7).unwrap(), (a, b));
        assert!(split_images(&images, 1.0, 7).is_err());
    }
}
