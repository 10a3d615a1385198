//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::json;
use smrkit::analysis::{
    diversity_matrix, jnd_reports, modification_experiment, JndCondition, LabelRule, ModificationConfig,
};
use smrkit::coding::{bd_rate, build_curve, constant_qp_decisions, guided_decisions, table_predictions};
use smrkit::predictor::{correlation_study, evaluate, predict_smr, train, ImageSamples, MlpRegressor};
use smrkit::records::{validate_completeness, write_bitrates, write_features, write_perceptions};
use smrkit::smr::{annotate, distribution, score_all, Completeness};
use smrkit::synth::{generate, SynthConfig};
use smrkit::{QualityLevel, Task};

use crate::args::*;
use crate::io::*;
use crate::output::{fmt9, round9, OutDir};
use crate::pipeline::{self, loss_header, training_config};

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    if args.records.is_empty() && args.features.is_none() && args.bitrates.is_none() {
        bail!("nothing to ingest: pass --records, --features or --bitrates");
    }
    let mut out = OutDir::new(&args.out)?;
    let mut summary = serde_json::Map::new();
    if !args.records.is_empty() {
        let set = load_perceptions(&manifest, &args.records)?;
        let missing = validate_completeness(&manifest, &set);
        if args.scoring.options().completeness == Completeness::Strict && !missing.is_empty() {
            bail!(smrkit::Error::MissingCells(missing));
        }
        let mut buf = Vec::new();
        write_perceptions(&set, &mut buf)?;
        out.write("records.jsonl", &buf)?;
        summary.insert("perception_records".into(), set.len().into());
        summary.insert("missing_cells".into(), missing.len().into());
    }
    if let Some(path) = &args.features {
        let f = load_features(path, &manifest)?;
        let mut buf = Vec::new();
        write_features(&f, &mut buf)?;
        out.write("features.jsonl", &buf)?;
        summary.insert("feature_records".into(), f.len().into());
    }
    if let Some(path) = &args.bitrates {
        let b = load_bitrates(path, &manifest)?;
        let mut buf = Vec::new();
        write_bitrates(&b, &mut buf)?;
        out.write("bitrates.csv", &buf)?;
        summary.insert("bitrate_records".into(), b.len().into());
    }
    out.json("ingest.json", &summary)?;
    Ok(())
}

pub fn annotate_cmd(args: &AnnotateArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let types = if args.smr_type.is_empty() {
        vec![default_smr_type(manifest.task)]
    } else {
        args.smr_type.clone()
    };
    let mut out = OutDir::new(&args.out)?;
    let mut summary = Vec::new();
    for t in &types {
        let t = resolve_smr_type(Some(t), &manifest)?;
        let tables = annotate(&manifest, &set, &t, args.scoring.options()).with_context(|| format!("annotating {t}"))?;
        let slug = type_slug(&t);
        out.csv(&format!("smr-{slug}.csv"), &SMR_HEADER, smr_rows(&tables))?;
        out.jsonl(&format!("smr-{slug}.jsonl"), smr_json_rows(&tables))?;
        let dist = distribution(&tables)?;
        out.csv(&format!("distribution-{slug}.csv"), &["qp", "mean_smr"], distribution_rows(&dist))?;
        let means: BTreeMap<String, f64> = dist
            .means
            .iter()
            .map(|(l, m)| (l.qp().to_string(), round9(*m)))
            .collect();
        summary.push(json!({
            "smr_type": t.to_string(),
            "images": tables.len(),
            "distribution": means,
        }));
    }
    out.json("summary.json", &json!({ "smr_types": summary }))?;
    Ok(())
}

fn label_rule(task: Task) -> LabelRule {
    match task {
        Task::Classification => LabelRule::Top1,
        Task::Detection => {
            let t = default_smr_type(Task::Detection);
            LabelRule::Detection {
                config: t.scoring_config().expect("detection type"),
                t_s: t.t_s(),
            }
        }
    }
}

pub fn diversity(args: &DiversityArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let rule = label_rule(manifest.task);
    let seed = args.seed.seed;
    let sample = args.sample_size.min(manifest.images.len());
    let m = diversity_matrix(
        &set,
        &manifest.ladder,
        &manifest.machines,
        &manifest.images,
        sample,
        args.repetitions,
        seed,
        &rule,
    )?;
    let mut out = OutDir::new(&args.out)?;
    let mut header = vec!["machine"];
    header.extend(m.machines.iter().map(String::as_str));
    let rows = m
        .machines
        .iter()
        .zip(&m.values)
        .map(|(name, row)| std::iter::once(name.clone()).chain(row.iter().map(|v| fmt9(*v))).collect::<Vec<_>>());
    out.csv("diversity.csv", &header, rows)?;
    out.json(
        "diversity.json",
        &json!({
            "overall_mean": round9(m.overall_mean),
            "ladder_len": m.ladder_len,
            "differing_percent": round9(m.differing_percent()),
            "sample_size": sample,
            "repetitions": args.repetitions,
        }),
    )?;
    if args.trials > 0 {
        let cfg = ModificationConfig {
            qp_range: args.qp_range,
            delta_range: args.delta_range,
            trials: args.trials,
            seed,
            ..ModificationConfig::default()
        };
        let s = modification_experiment(&set, &manifest.ladder, &manifest.machines, &manifest.images, &rule, &cfg)?;
        out.json(
            "experiment.json",
            &json!({
                "trials": s.trials,
                "completed": s.completed,
                "aborted": s.aborted,
                "degrading": s.degrading,
                "ineffective": s.ineffective,
                "non_ideal_fraction": round9(s.non_ideal_fraction),
            }),
        )?;
    }
    Ok(())
}

pub fn jnd(args: &JndArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let t = resolve_smr_type(args.smr_type.as_ref(), &manifest)?;
    let condition = match manifest.task {
        Task::Classification => JndCondition::Inconsistent,
        Task::Detection => JndCondition::BelowThreshold(t.t_s()),
    };
    let scores = score_all(&manifest, &set, &t, args.scoring.options())?;
    let mut reports = Vec::new();
    for s in &scores {
        reports.extend(jnd_reports(s, condition)?);
    }
    let mut out = OutDir::new(&args.out)?;
    out.jsonl(
        "jnd.jsonl",
        reports.iter().map(|r| {
            json!({
                "machine": r.machine,
                "image": r.image,
                "first_jnd_qp": r.first_jnd.map(QualityLevel::qp),
                "jnd_qps": r.jnd_levels.iter().map(|l| l.qp()).collect::<Vec<_>>(),
            })
        }),
    )?;
    Ok(())
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let features = load_features(&args.features, &manifest)?;
    let t = resolve_smr_type(args.smr_type.as_ref(), &manifest)?;
    let extractors: Vec<String> = if args.extractor.is_empty() {
        features.extractors().map(str::to_owned).collect()
    } else {
        args.extractor.clone()
    };
    let tables = annotate(&manifest, &set, &t, args.scoring.options())?;
    let study = correlation_study(&features, &extractors, &tables)?;
    let mut out = OutDir::new(&args.out)?;
    out.csv(
        "correlation-points.csv",
        &["image", "qp", "mean_difference", "smr"],
        study
            .points
            .iter()
            .map(|p| vec![p.image.clone(), p.level.qp().to_string(), fmt9(p.mean_difference), fmt9(p.smr)]),
    )?;
    out.json(
        "correlation.json",
        &json!({
            "smr_type": t.to_string(),
            "extractors": extractors,
            "points": study.points.len(),
            "pearson": study.pearson.map(round9),
            "spearman": study.spearman.map(round9),
            "cubic": study.cubic.map(round9),
        }),
    )?;
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let features = load_features(&args.features, &manifest)?;
    let t = resolve_smr_type(args.smr_type.as_ref(), &manifest)?;
    let extractor = resolve_extractor(args.model.extractor.as_deref(), &features)?;
    let mut tables = annotate(&manifest, &set, &t, args.scoring.options())?;
    if let Some(list) = &args.images {
        let keep = read_image_list(list)?;
        tables.retain(|tb| keep.contains(&tb.image));
        if tables.is_empty() {
            bail!("no annotated image is listed in {}", list.display());
        }
    }
    let samples = ImageSamples::collect(&features, &extractor, &tables)?;
    let cfg = training_config(&args.model, args.seed.seed);
    let outcome = train(&samples, &cfg)?;
    let mut out = OutDir::new(&args.out)?;
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
    out.json(
        "train.json",
        &json!({
            "smr_type": t.to_string(),
            "extractor": extractor,
            "images": tables.len(),
            "epochs": cfg.epochs,
            "final_loss": round9(*outcome.loss_trace.last().expect("epochs >= 1")),
            "train_mae": round9(evaluate(&outcome.model, &samples)?),
        }),
    )?;
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let (model, _) = MlpRegressor::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let features = load_features(&args.features, &manifest)?;
    let extractor = resolve_extractor(args.extractor.as_deref(), &features)?;
    let mut preds = Vec::new();
    for image in &manifest.images {
        let reference = features
            .get(&extractor, image, QualityLevel::ORIGINAL)
            .with_context(|| format!("no original features for `{image}`"))?;
        let mut map = BTreeMap::new();
        for &l in manifest.ladder.levels() {
            let v = features
                .get(&extractor, image, l)
                .with_context(|| format!("no features for ({image}, {l})"))?;
            map.insert(l, predict_smr(&model, reference, v)?);
        }
        preds.push((image.clone(), map));
    }
    let mut out = OutDir::new(&args.out)?;
    out.csv("predictions.csv", &PREDICTION_HEADER, prediction_rows(&preds))?;
    Ok(())
}

pub fn optimize(args: &OptimizeArgs) -> Result<()> {
    let manifest = load_manifest(&args.data.manifest)?;
    let set = load_perceptions(&manifest, &args.data.records)?;
    let bitrates = load_bitrates(&args.bitrates, &manifest)?;
    let t = resolve_smr_type(args.smr_type.as_ref(), &manifest)?;
    let tables = annotate(&manifest, &set, &t, args.scoring.options())?;
    let dist = distribution(&tables)?;
    let (label, predictions) = match &args.predictions {
        Some(path) => {
            let mut by_image = read_predictions(path)?;
            let preds = tables
                .iter()
                .map(|tb| {
                    by_image
                        .remove(&tb.image)
                        .map(|p| (tb.image.clone(), p))
                        .with_context(|| format!("no predictions for `{}`", tb.image))
                })
                .collect::<Result<Vec<_>>>()?;
            (pipeline::PREDICTED_GUIDED, preds)
        }
        None => (pipeline::GT_GUIDED, table_predictions(&tables)),
    };
    let images: Vec<String> = tables.iter().map(|tb| tb.image.clone()).collect();
    let constant = constant_qp_decisions(&args.thresholds, &dist, &images)?;
    let guided = guided_decisions(&args.thresholds, &dist, &manifest.ladder, &predictions)?;
    let c_curve = build_curve(pipeline::CONSTANT_QP, &constant, &bitrates, &tables, &args.thresholds)?;
    let g_curve = build_curve(label, &guided, &bitrates, &tables, &args.thresholds)?;
    let mut out = OutDir::new(&args.out)?;
    out.csv(
        &format!("decisions-{}.csv", pipeline::CONSTANT_QP),
        &DECISION_HEADER,
        decision_rows(&constant),
    )?;
    out.csv(&format!("decisions-{label}.csv"), &DECISION_HEADER, decision_rows(&guided))?;
    out.csv("curves.csv", &CURVE_HEADER, curve_rows(&[&c_curve, &g_curve]))?;
    Ok(())
}

pub fn bdrate(args: &BdrateArgs) -> Result<()> {
    let curves = read_curves(&args.curves)?;
    let find = |label: &str| {
        curves.iter().find(|c| c.label == label).with_context(|| {
            let have: Vec<&str> = curves.iter().map(|c| c.label.as_str()).collect();
            format!("no curve labelled `{label}` (have {})", have.join(", "))
        })
    };
    let mut report = bd_rate(find(&args.anchor)?, find(&args.test)?, args.method)?;
    report.bd_rate_percent = round9(report.bd_rate_percent);
    report.smr_overlap = report.smr_overlap.map(round9);
    println!("{}: {}%", report.test, fmt9(report.bd_rate_percent));
    let json = crate::output::json_bytes(&report)?;
    crate::output::write_atomic(&args.out, &json)?;
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let read = |name: &str| -> Result<serde_json::Value> {
        let p = args.dir.join(name);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let summary = read("summary.json")?;
    let curves = read_curves(&[args.dir.join("curves.csv")])?;
    let mut text = String::new();
    let field = |k: &str| summary.get(k).map(|v| v.to_string()).unwrap_or_default();
    writeln!(text, "SMR type      {}", field("smr_type").trim_matches('"'))?;
    writeln!(text, "seed          {}", field("seed"))?;
    writeln!(text, "images        {} train / {} test", field("train_images"), field("test_images"))?;
    writeln!(text, "model         {} ({})", field("model_kind").trim_matches('"'), field("extractor").trim_matches('"'))?;
    writeln!(text, "test MAE      {}", field("test_mae"))?;
    writeln!(text)?;
    for c in &curves {
        writeln!(text, "{}", c.label)?;
        writeln!(text, "  {:>10} {:>12} {:>12}", "threshold", "mean_bpp", "mean_smr")?;
        for p in &c.points {
            writeln!(text, "  {:>10} {:>12} {:>12}", fmt9(p.threshold), fmt9(p.mean_bpp), fmt9(p.mean_smr))?;
        }
    }
    writeln!(text)?;
    if let Some(rates) = summary.get("bd_rates").and_then(|v| v.as_array()) {
        for r in rates {
            writeln!(
                text,
                "BD-rate {} vs {}: {}%",
                r["test"].as_str().unwrap_or("?"),
                r["anchor"].as_str().unwrap_or("?"),
                r["bd_rate_percent"]
            )?;
        }
    }
    print!("{text}");
    let path = args.out.clone().unwrap_or_else(|| args.dir.join("report.txt"));
    crate::output::write_atomic(&path, text.as_bytes())?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        machines: args.machines,
        images: args.images,
        qp_range: args.qp_range,
        feature_dim: args.feature_dim,
        noise: args.noise,
        seed: args.seed.seed,
        ..SynthConfig::default()
    };
    let d = generate(&cfg)?;
    let mut out = OutDir::new(&args.out)?;
    out.json("manifest.json", &d.manifest)?;
    let mut buf = Vec::new();
    write_perceptions(&d.perceptions, &mut buf)?;
    out.write("records.jsonl", &buf)?;
    buf.clear();
    write_features(&d.features, &mut buf)?;
    out.write("features.jsonl", &buf)?;
    buf.clear();
    write_bitrates(&d.bitrates, &mut buf)?;
    out.write("bitrates.csv", &buf)?;
    Ok(())
}

pub fn pipeline_cmd(args: &PipelineArgs) -> Result<()> {
    let s = pipeline::run(args)?;
    for r in &s.bd_rates {
        println!("BD-rate {} vs {}: {}%", r.test, r.anchor, fmt9(r.bd_rate_percent));
    }
    Ok(())
}
