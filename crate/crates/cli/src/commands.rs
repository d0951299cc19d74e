use anyhow::{bail, Context, Result};
use serde_json::json;
use tta_core::data_io::{
    generate_synthetic, train_base_detector, write_stream_file, write_weights, FeatureRecord, LabeledSample,
    LinearDetector, StreamHeader, SynthConfig, TrainOptions,
};
use tta_core::{ablation_variants, run_stream, EvaluationReport};

use crate::output::{
    check_dims, create_dir, display, load_weights, open_records, provenance, sidecar, write_json, write_lines,
    TOOL_VERSION,
};
use crate::{AblateArgs, ExtractArgs, RunArgs, SynthArgs, TrainBaseArgs};

/// Raw synthetic samples carry no detector output yet; logits are zero.
fn raw_records(samples: &[LabeledSample]) -> Vec<FeatureRecord> {
    samples
        .iter()
        .map(|s| FeatureRecord { feature: s.x.clone(), logits: vec![0.0; 2], label: s.label as i8 })
        .collect()
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig::from_knobs(args.d, args.n_source, args.n_target, args.shift, args.novel_weight, args.seed)?;
    let data = generate_synthetic(&cfg)?;
    create_dir(&args.out)?;
    let source_path = args.out.join("source.fts");
    let target_path = args.out.join("target.fts");
    for (path, samples) in [(&source_path, &data.source), (&target_path, &data.target)] {
        let header = StreamHeader::new(cfg.d, 2, 1, samples.len())?;
        write_stream_file(path, &header, &raw_records(samples)).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "tool": "tta",
            "version": TOOL_VERSION,
            "command": "synth",
            "seed": args.seed,
            "synth_config": cfg,
            "outputs": { "source": display(&source_path), "target": display(&target_path) },
        }),
    )?;
    println!("wrote {} source and {} target records to {}", data.source.len(), data.target.len(), args.out.display());
    Ok(())
}

pub fn train_base(args: TrainBaseArgs) -> Result<()> {
    let (header, records) = open_records(&args.source)?;
    let mut samples = Vec::with_capacity(header.record_count as usize);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if !(0..header.c as i8).contains(&rec.label) {
            bail!("record {i} has label {}; training needs labels in [0, {})", rec.label, header.c);
        }
        samples.push(LabeledSample { x: rec.feature, label: rec.label as u8 });
    }
    let opts = TrainOptions { epochs: args.epochs, lr: args.lr, seed: args.seed };
    let detector = train_base_detector(&samples, &opts)?;
    let train_acc = detector.accuracy(&samples);
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_weights(std::io::BufWriter::new(file), detector.classifier_weights())?;
    write_json(
        &sidecar(&args.out),
        &json!({
            "tool": "tta",
            "version": TOOL_VERSION,
            "command": "train-base",
            "seed": args.seed,
            "epochs": args.epochs,
            "lr": args.lr,
            "inputs": { "source": display(&args.source) },
            "outputs": { "weights": display(&args.out) },
            "train_accuracy": train_acc,
            "upstream": provenance(&args.source),
        }),
    )?;
    println!("train accuracy {train_acc:.4} on {} samples", samples.len());
    println!("{}", json!({ "train_accuracy": train_acc, "samples": samples.len() }));
    Ok(())
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let (header, records) = open_records(&args.input)?;
    if header.d as usize + 1 != weights.cols() || header.c as usize != weights.rows() {
        bail!(
            "configuration error: raw stream has d = {}, c = {} but the detector expects d = {}, c = {}",
            header.d,
            header.c,
            weights.cols() - 1,
            weights.rows()
        );
    }
    let detector = LinearDetector::from_weights(weights);
    let out: Vec<FeatureRecord> = records
        .map(|r| r.and_then(|r| detector.apply(&r.feature, r.label)))
        .collect::<tta_core::Result<_>>()?;
    let out_header = StreamHeader::new(detector.classifier_weights().cols(), header.c as usize, header.positive_class as usize, out.len())?;
    write_stream_file(&args.out, &out_header, &out).with_context(|| format!("writing {}", args.out.display()))?;
    write_json(
        &sidecar(&args.out),
        &json!({
            "tool": "tta",
            "version": TOOL_VERSION,
            "command": "extract",
            "inputs": { "raw": display(&args.input), "weights": display(&args.weights) },
            "outputs": { "stream": display(&args.out) },
            "upstream": { "raw": provenance(&args.input), "weights": provenance(&args.weights) },
        }),
    )?;
    println!("wrote {} feature records to {}", out.len(), args.out.display());
    Ok(())
}

fn metric_line(report: &EvaluationReport) -> String {
    match &report.metrics {
        Some(m) => format!("AUC {:.4}  ACC {:.4}  EER {:.4}", m.auc, m.acc, m.eer),
        None => "no labels: metrics unavailable".to_string(),
    }
}

pub fn run(args: RunArgs) -> Result<()> {
    let config = args.params.config(args.strategy);
    let weights = load_weights(&args.weights)?;
    let (header, records) = open_records(&args.stream)?;
    check_dims(&header, &weights)?;
    let report = run_stream(&config, &weights, header.positive_class as usize, records)?;

    create_dir(&args.out)?;
    let scores_path = args.out.join("scores.txt");
    let summary_path = args.out.join("summary.txt");
    let manifest_path = args.out.join("manifest.json");
    write_lines(&scores_path, report.scores.iter().enumerate().map(|(i, s)| format!("{i} {s}")))?;

    let summary_json = json!({
        "strategy": report.strategy,
        "samples": report.scores.len(),
        "auc": report.metrics.map(|m| m.auc),
        "acc": report.metrics.map(|m| m.acc),
        "eer": report.metrics.map(|m| m.eer),
        "batches": report.batch_seconds.len(),
        "mean_batch_seconds": report.mean_batch_seconds(),
        "updated_batches": report.updated_batches,
        "skipped_batches": report.skipped_batches,
        "failed_batches": report.failed_batches.len(),
    });
    let human = vec![
        format!("strategy {}  samples {}", report.strategy, report.scores.len()),
        metric_line(&report),
        format!(
            "{} batches, mean {:.6} s/batch ({} updated, {} skipped, {} failed)",
            report.batch_seconds.len(),
            report.mean_batch_seconds(),
            report.updated_batches,
            report.skipped_batches,
            report.failed_batches.len()
        ),
        summary_json.to_string(),
    ];
    for line in &human {
        println!("{line}");
    }
    write_lines(&summary_path, human)?;

    write_json(
        &manifest_path,
        &json!({
            "tool": "tta",
            "version": TOOL_VERSION,
            "command": "run",
            "seed": config.seed,
            "config": config,
            "stream_header": header,
            "inputs": { "stream": display(&args.stream), "weights": display(&args.weights) },
            "outputs": {
                "scores": display(&scores_path),
                "summary": display(&summary_path),
                "manifest": display(&manifest_path),
            },
            "failed_batches": report.failed_batches,
            "upstream": { "stream": provenance(&args.stream), "weights": provenance(&args.weights) },
            "timing": { "batch_seconds": report.batch_seconds, "mean_batch_seconds": report.mean_batch_seconds() },
        }),
    )?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let (header, records) = open_records(&args.stream)?;
    check_dims(&header, &weights)?;
    let records: Vec<FeatureRecord> = records.collect::<tta_core::Result<_>>()?;
    let base = args.params.config(tta_core::Strategy::Ours);

    let mut rows = Vec::new();
    for variant in ablation_variants(&base) {
        let mut aucs = Vec::with_capacity(args.repeats);
        for r in 0..args.repeats {
            let cfg = tta_core::StrategyConfig { seed: base.seed + r as u64, ..variant.config.clone() };
            let report = run_stream(&cfg, &weights, header.positive_class as usize, records.iter().cloned().map(Ok))?;
            let m = report.metrics.context("ablation needs a stream with 0/1 labels for every record")?;
            aucs.push(m.auc);
        }
        let (mean, std) = mean_std(&aucs);
        rows.push((variant, aucs, mean, std));
    }

    create_dir(&args.out)?;
    let mut table = vec![format!("{:<3} {:<9} {:<5} {:<4} {:>9} {:>9}", "id", "variant", "lcpc", "nfc", "auc_mean", "auc_std")];
    let mut json_rows = Vec::new();
    for (v, aucs, mean, std) in &rows {
        let adapts = v.config.strategy == tta_core::Strategy::Ours;
        let mark = |on: bool| if on { "yes" } else { "-" };
        table.push(format!(
            "{:<3} {:<9} {:<5} {:<4} {:>9.4} {:>9.4}",
            v.id,
            v.name,
            mark(adapts && !v.config.identity_transform),
            mark(adapts && v.config.enable_nfc),
            mean,
            std
        ));
        json_rows.push(json!({ "id": v.id, "variant": v.name, "auc_mean": mean, "auc_std": std, "auc": aucs }));
    }
    for line in &table {
        println!("{line}");
    }
    for row in &json_rows {
        println!("{row}");
    }
    write_lines(&args.out.join("ablation.txt"), table)?;
    write_lines(&args.out.join("ablation.jsonl"), json_rows.iter().map(|r| r.to_string()))?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "tool": "tta",
            "version": TOOL_VERSION,
            "command": "ablate",
            "seed": base.seed,
            "repeats": args.repeats,
            "config": base,
            "variants": rows.iter().map(|(v, ..)| v).collect::<Vec<_>>(),
            "stream_header": header,
            "inputs": { "stream": display(&args.stream), "weights": display(&args.weights) },
            "outputs": { "table": display(&args.out.join("ablation.txt")), "rows": display(&args.out.join("ablation.jsonl")) },
            "upstream": { "stream": provenance(&args.stream), "weights": provenance(&args.weights) },
        }),
    )?;
    Ok(())
}
