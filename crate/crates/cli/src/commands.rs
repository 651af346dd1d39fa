use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use mriseq::augment::{central_subgroups, standardize};
use mriseq::config::ExperimentConfig;
use mriseq::dataset::{assemble_variant, read_listing, Manifest, Split};
use mriseq::explain::{dump_attributions, integrated_gradients, render_overlay};
use mriseq::labels::RuleTable;
use mriseq::model::Checkpoint;
use mriseq::plot::{write_depth_plot, write_loss_plot};
use mriseq::scan::{scan, ScanRoot};
use mriseq::store::VolumeStore;
use mriseq::training::{
    evaluate, predict_canonical, predict_volume, read_loss_curve, read_sweep_csv, sweep_depth, train_with_observer, Metrics,
    TrainOutcome,
};
use mriseq::volume::load_canonical;
use mriseq::SequenceType;

use crate::run::{write_json, RunRecord};
use crate::{Cli, Command, GlobalArgs};

/// Configuration file (or defaults) with the command-line overrides applied.
pub fn effective_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &g.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(n) = g.n {
        cfg.train.n = n;
    }
    if let Some(a) = &g.arch {
        cfg.architecture = a.parse()?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.init_seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// The manifest decides the variant unless `--variant` names a different one.
fn adopt_manifest_variant(cfg: &mut ExperimentConfig, g: &GlobalArgs, manifest: &Manifest) -> Result<()> {
    if g.variant.is_some() && cfg.variant != manifest.variant {
        bail!("--variant {} does not match the manifest's variant {}", cfg.variant, manifest.variant);
    }
    cfg.variant = manifest.variant;
    Ok(())
}

fn store_for(manifest: &Manifest, splits: &[Split]) -> Result<VolumeStore> {
    let subset = Manifest {
        records: manifest.records.iter().filter(|r| r.split.is_some_and(|s| splits.contains(&s))).cloned().collect(),
        ..manifest.clone()
    };
    Ok(VolumeStore::load(&subset)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    let mut cfg = effective_config(g)?;
    match cli.command {
        Command::Scan { roots, rules } => cmd_scan(&cfg, g, &roots, rules.or(cfg.label_rules.clone())),
        Command::Assemble { listing } => cmd_assemble(&cfg, g, &listing),
        Command::Train { manifest, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train(cfg, g, &manifest)
        }
        Command::Eval { checkpoint, manifest, split } => cmd_eval(&cfg, g, &checkpoint, &manifest, split.parse()?),
        Command::Sweep { manifest, depths, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_sweep(cfg, g, &manifest, &depths)
        }
        Command::Predict { checkpoint, inputs } => cmd_predict(&cfg, g, &checkpoint, &inputs),
        Command::Explain { checkpoint, input, steps, target } => cmd_explain(&cfg, g, &checkpoint, &input, steps, target),
        Command::Plot { sweep, losses } => cmd_plot(&cfg, g, sweep, losses),
    }
}

fn cmd_scan(cfg: &ExperimentConfig, g: &GlobalArgs, roots: &[String], rules: Option<PathBuf>) -> Result<()> {
    let roots = roots
        .iter()
        .map(|spec| {
            let (base, dir) = spec.split_once('=').with_context(|| format!("--root expects BASE=DIR, got {spec:?}"))?;
            Ok(ScanRoot { path: dir.into(), base_dataset: base.parse()? })
        })
        .collect::<Result<Vec<_>>>()?;
    let rules = match rules {
        Some(p) => RuleTable::from_json_file(&p)?,
        None => RuleTable::default(),
    };
    let report = scan(&roots, &rules)?;
    let (listing, discards) = report.write(&g.out)?;
    println!("{} volumes listed, {} unknown, {} discarded", report.entries.len(), report.unknown().count(), report.discards.len());
    let mut record = RunRecord::new("scan", cfg);
    record.output(listing);
    record.output(discards);
    record.write(&g.out)
}

fn cmd_assemble(cfg: &ExperimentConfig, g: &GlobalArgs, listing: &Path) -> Result<()> {
    let records: Vec<_> = read_listing(listing)?.iter().map(|e| e.record()).collect();
    let manifest = assemble_variant(cfg.variant, &records, cfg.seed)?;
    let csv = g.out.join(format!("manifest_{}.csv", cfg.variant));
    let summary = manifest.save(&csv)?;
    for split in Split::ALL {
        println!("{split}: {}", manifest.split_len(split));
    }
    let mut record = RunRecord::new("assemble", cfg);
    record.manifest_hash = Some(manifest.content_hash()?);
    record.output(csv);
    record.output(summary);
    record.write(&g.out)
}

fn write_metrics(dir: &Path, stem: &str, metrics: &Metrics, record: &mut RunRecord) -> Result<()> {
    let json = dir.join(format!("{stem}_metrics.json"));
    write_json(&json, metrics)?;
    let confusion = dir.join(format!("{stem}_confusion.csv"));
    metrics.confusion.write_csv(&confusion)?;
    record.output(json);
    record.output(confusion);
    Ok(())
}

fn save_training(outcome: &TrainOutcome, dir: &Path, record: &mut RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ckpt = dir.join("checkpoint.safetensors");
    outcome.checkpoint.save(&ckpt)?;
    let (csv, svg) = write_loss_plot(&outcome.loss_curve, dir)?;
    record.output(ckpt);
    record.output(csv);
    record.output(svg);
    Ok(())
}

fn cmd_train(mut cfg: ExperimentConfig, g: &GlobalArgs, manifest_path: &Path) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    adopt_manifest_variant(&mut cfg, g, &manifest)?;
    cfg.validate()?;
    let store = store_for(&manifest, &[Split::Train, Split::Val])?;
    let epochs_path = g.out.join("epochs.jsonl");
    let mut epochs_file = fs::File::create(&epochs_path)?;
    let mut write_err = None;
    let outcome = train_with_observer(&manifest, &store, &cfg.model_config(), &cfg.train, |rec| {
        let line = serde_json::to_string(rec).expect("serializable record");
        if let Err(e) = writeln!(epochs_file, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let mut record = RunRecord::new("train", &cfg);
    record.manifest_hash = Some(manifest.content_hash()?);
    record.output(epochs_path);
    save_training(&outcome, &g.out, &mut record)?;
    let meta = &outcome.checkpoint.meta;
    println!("best epoch {} with validation macro-accuracy {:.4}", meta.epoch, meta.val_macro_accuracy);
    record.metrics = Some(serde_json::json!({ "best_epoch": meta.epoch, "val_macro_accuracy": meta.val_macro_accuracy }));
    record.write(&g.out)
}

fn cmd_eval(cfg: &ExperimentConfig, g: &GlobalArgs, checkpoint: &Path, manifest_path: &Path, split: Split) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = Manifest::load(manifest_path)?;
    if ckpt.num_classes() != manifest.variant.num_classes() {
        bail!(mriseq::Error::ClassCountMismatch { checkpoint: ckpt.num_classes(), data: manifest.variant.num_classes() });
    }
    let store = store_for(&manifest, &[split])?;
    let metrics = evaluate(&ckpt, &manifest, split, &store)?;
    println!("{split} macro-accuracy {:.4} over {} volumes", metrics.macro_accuracy, metrics.confusion.total());
    let mut record = RunRecord::new("eval", cfg);
    record.config.variant = manifest.variant;
    record.config.architecture = ckpt.config().architecture;
    record.config.train.n = ckpt.config().in_channels;
    record.manifest_hash = Some(manifest.content_hash()?);
    write_metrics(&g.out, &split.to_string().to_ascii_lowercase(), &metrics, &mut record)?;
    record.metrics = Some(serde_json::json!({ "split": split, "macro_accuracy": metrics.macro_accuracy }));
    record.write(&g.out)
}

fn cmd_sweep(mut cfg: ExperimentConfig, g: &GlobalArgs, manifest_path: &Path, depths: &[usize]) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    adopt_manifest_variant(&mut cfg, g, &manifest)?;
    cfg.validate()?;
    let store = store_for(&manifest, &[Split::Train, Split::Val])?;
    let mut record = RunRecord::new("sweep", &cfg);
    record.manifest_hash = Some(manifest.content_hash()?);
    let rows = sweep_depth(&manifest, &store, &cfg.model_config(), &cfg.train, depths, |n, outcome| {
        info!("n={n}: validation macro-accuracy {:.4}", outcome.checkpoint.meta.val_macro_accuracy);
        save_training(outcome, &g.out.join(format!("n{n:02}")), &mut record).map_err(|e| mriseq::Error::InvalidConfig(e.to_string()))
    })?;
    let (csv, svg) = write_depth_plot(&rows, &g.out)?;
    for row in &rows {
        println!("n={:2}  val macro-accuracy {:.4}  (epoch {})", row.n, row.val_macro_accuracy, row.best_epoch);
    }
    record.output(csv);
    record.output(svg);
    record.metrics = Some(serde_json::to_value(&rows)?);
    record.write(&g.out)
}

fn cmd_predict(cfg: &ExperimentConfig, g: &GlobalArgs, checkpoint: &Path, inputs: &[PathBuf]) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut rows = Vec::new();
    for input in inputs {
        let p = predict_volume(&ckpt, input).with_context(|| format!("predicting {}", input.display()))?;
        println!("{}\t{}", input.display(), p.label);
        rows.push(serde_json::json!({ "input": input, "prediction": p }));
    }
    let path = g.out.join("predictions.json");
    write_json(&path, &rows)?;
    let mut record = RunRecord::new("predict", cfg);
    record.output(path);
    record.write(&g.out)
}

fn cmd_explain(
    cfg: &ExperimentConfig,
    g: &GlobalArgs,
    checkpoint: &Path,
    input: &Path,
    steps: Option<usize>,
    target: Option<String>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let volume = load_canonical(input)?;
    let prediction = predict_canonical(&ckpt, &volume)?;
    let target_class = match target {
        Some(t) => t.parse::<SequenceType>()?,
        None => prediction.label,
    };
    let target_index = ckpt
        .meta
        .class_order
        .iter()
        .position(|&c| c == target_class)
        .with_context(|| format!("{target_class} is not one of the checkpoint's classes"))?;
    let stack = standardize(&central_subgroups(&volume, ckpt.config().in_channels)?.remove(0));
    let mut map = integrated_gradients(&ckpt.model, &stack, target_index, steps.unwrap_or(cfg.ig_steps))?;
    map.target_class = Some(target_class);
    let overlays = render_overlay(&map, &stack, g.out.join("overlays"))?;
    let raw = g.out.join("attributions.f32");
    let descriptor = dump_attributions(&map, stack.start_index, &raw)?;
    println!(
        "predicted {}, attributed {target_class}; completeness gap {:.3e} ({:.2}% of the logit difference)",
        prediction.label,
        map.completeness_gap,
        100.0 * map.relative_gap()
    );
    let mut record = RunRecord::new("explain", cfg);
    record.outputs.extend(overlays);
    record.output(raw);
    record.output(descriptor);
    record.metrics = Some(serde_json::json!({ "completeness_gap": map.completeness_gap, "logit_difference": map.logit_difference }));
    record.write(&g.out)
}

fn cmd_plot(cfg: &ExperimentConfig, g: &GlobalArgs, sweep: Option<PathBuf>, losses: Option<PathBuf>) -> Result<()> {
    if sweep.is_none() && losses.is_none() {
        bail!("plot needs --sweep and/or --losses");
    }
    let mut record = RunRecord::new("plot", cfg);
    if let Some(path) = sweep {
        let (csv, svg) = write_depth_plot(&read_sweep_csv(&path)?, &g.out)?;
        record.output(csv);
        record.output(svg);
    }
    if let Some(path) = losses {
        let (csv, svg) = write_loss_plot(&read_loss_curve(&path)?, &g.out)?;
        record.output(csv);
        record.output(svg);
    }
    for path in &record.outputs {
        println!("{}", path.display());
    }
    record.write(&g.out)
}
