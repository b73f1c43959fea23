use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vig_core::data::{
    assemble_image, load_manifest, read_tensors, split_dataset, synthesize_dataset, Dataset, Manifest, ManifestHeader,
    SynthSpec,
};
use vig_core::metrics::{mean_std, parse_kv, MetricReport};
use vig_core::train::{fit_with, load_checkpoint, predict_scores, save_checkpoint, CheckpointMeta, Control};
use vig_core::{Task, Tensor, VigModel};

use crate::run_config::RunConfig;
use crate::CliError;

pub const CHECKPOINT: &str = "checkpoint.vigt";
pub const HISTORY: &str = "history.txt";
pub const RESOLVED: &str = "config.resolved";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const METRICS_KV: &str = "metrics.kv";

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load_data(cfg: &RunConfig, manifest: &Path) -> Result<Dataset, CliError> {
    let mut m = Manifest::read(manifest)?;
    if let Some(b) = &cfg.data.bands {
        m.header.bands = Some(b.clone());
    }
    Ok(load_manifest(&m, manifest.parent().unwrap_or(Path::new(".")))?)
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<(), CliError> {
    fs::write(dir.join(METRICS_TABLE), report.render_table())?;
    fs::write(dir.join(METRICS_KV), report.render_kv())?;
    Ok(())
}

fn score(model: &VigModel<f32>, ds: &Dataset, batch: usize, threshold: f64) -> Result<MetricReport, CliError> {
    let scores = predict_scores(model, ds, batch)?;
    Ok(MetricReport::from_scores(&scores, &ds.label_sets(), ds.num_classes, ds.task, threshold)?)
}

pub fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = RunConfig::read(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set [output] dir".into()))?;
    cfg.output = Some(absolute(&out));
    let manifest = cfg
        .data
        .manifest
        .clone()
        .ok_or_else(|| CliError::Usage("[data] manifest is required".into()))?;
    cfg.data.manifest = Some(absolute(&manifest));
    cfg.train.validate()?;

    let ds = load_data(&cfg, &manifest)?;
    let model_cfg = cfg.model_config(ds.channels, (ds.height, ds.width), ds.num_classes, ds.task)?;
    if (model_cfg.in_channels, model_cfg.input_hw, model_cfg.num_classes, model_cfg.task)
        != (ds.channels, (ds.height, ds.width), ds.num_classes, ds.task)
    {
        return Err(CliError::Usage(format!(
            "[model] layout {}x{}x{} with {} {} classes does not match the dataset {}x{}x{} with {} {} classes",
            model_cfg.in_channels,
            model_cfg.input_hw.0,
            model_cfg.input_hw.1,
            model_cfg.num_classes,
            model_cfg.task,
            ds.channels,
            ds.height,
            ds.width,
            ds.num_classes,
            ds.task
        )));
    }
    let (train_set, val_set, test_set) = split_dataset(&ds, cfg.data.fractions, cfg.data.split_seed)?;
    let model = VigModel::<f32>::build(&model_cfg, cfg.train.seed)?;
    let resolved = cfg.render(&model_cfg);
    // the checkpoint stays independent of where it is written
    let portable = RunConfig { output: None, ..cfg.clone() }.render(&model_cfg);

    fs::create_dir_all(&out)?;
    eprintln!(
        "training on {} samples, validating on {} ({} parameters)",
        train_set.len(),
        val_set.len(),
        vig_core::Parameterized::count_params(&model)
    );
    let outcome = fit_with(model, &train_set, &val_set, &cfg.train, |r, _| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  lr {:e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
        Control::Continue
    })?;
    let h = &outcome.history;
    let meta = CheckpointMeta {
        epoch: h.best_epoch,
        best_val_loss: h.best_val_loss,
        train_config: portable,
    };
    save_checkpoint(out.join(CHECKPOINT), &outcome.best, None, &meta)?;
    fs::write(out.join(HISTORY), h.render())?;
    fs::write(out.join(RESOLVED), resolved)?;
    if !test_set.is_empty() {
        let report = score(&outcome.best, &test_set, cfg.train.batch_size, 0.5)?;
        write_report(&out, &report)?;
        print!("{}", report.render_table());
    }
    eprintln!(
        "best epoch {} (val loss {:.4}){}; outputs in {}",
        h.best_epoch,
        h.best_val_loss,
        if h.stopped_early { ", stopped early" } else { "" },
        out.display()
    );
    Ok(())
}

/// Run settings stored in a checkpoint, or defaults when it carries none.
fn checkpoint_run_config(meta: &CheckpointMeta) -> RunConfig {
    RunConfig::parse(&meta.train_config, Path::new("")).unwrap_or_default()
}

pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    split: &str,
    threshold: f64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} must lie in [0, 1]")));
    }
    let ck = load_checkpoint::<f32>(checkpoint)?;
    let run = checkpoint_run_config(&ck.meta);
    let ds = load_data(&run, manifest)?;
    let mc = &ck.model.config;
    if (mc.in_channels, mc.input_hw, mc.num_classes, mc.task) != (ds.channels, (ds.height, ds.width), ds.num_classes, ds.task) {
        return Err(CliError::Runtime(format!(
            "checkpoint expects {} channels of {}x{} with {} {} classes, dataset has {} channels of {}x{} with {} {} classes",
            mc.in_channels, mc.input_hw.0, mc.input_hw.1, mc.num_classes, mc.task,
            ds.channels, ds.height, ds.width, ds.num_classes, ds.task
        )));
    }
    let part = if split == "all" {
        ds
    } else {
        let (tr, va, te) = split_dataset(&ds, run.data.fractions, run.data.split_seed)?;
        match split {
            "train" => tr,
            "val" => va,
            _ => te,
        }
    };
    if part.is_empty() {
        return Err(CliError::Runtime(format!("the {split} split is empty")));
    }
    let report = score(&ck.model, &part, run.train.batch_size, threshold)?;
    let dir = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    write_report(&dir, &report)?;
    print!("{}", report.render_table());
    Ok(())
}

pub fn inspect_graph(checkpoint: &Path, sample: &Path, stage: usize, out: &Path) -> Result<(), CliError> {
    if !(1..=3).contains(&stage) {
        return Err(CliError::Usage(format!("--stage must be 1, 2 or 3, got {stage}")));
    }
    let ck = load_checkpoint::<f32>(checkpoint)?;
    let run = checkpoint_run_config(&ck.meta);
    let mc = &ck.model.config;
    let header = ManifestHeader {
        channels: mc.in_channels,
        height: mc.input_hw.0,
        width: mc.input_hw.1,
        classes: mc.num_classes,
        task: mc.task,
        bands: run.data.bands.clone(),
    };
    let tensors = read_tensors(sample)?;
    let pixels = assemble_image(&header, &tensors, &sample.display().to_string())?;
    let x = Tensor::new(pixels, &[1, mc.in_channels, mc.input_hw.0, mc.input_hw.1])?;
    let graphs = ck.model.stage_graphs(&x, stage - 1)?;
    let mut text = String::new();
    for (i, j, rank, d) in graphs[0].edges() {
        let _ = writeln!(text, "{stage} {i} {j} {rank} {d}");
    }
    fs::write(out, text)?;
    eprintln!(
        "stage {stage}: {} nodes, k = {}, {} edges written to {}",
        graphs[0].num_nodes(),
        graphs[0].k(),
        graphs[0].num_edges(),
        out.display()
    );
    Ok(())
}

pub fn synth(
    classes: usize,
    per_class: usize,
    channels: usize,
    hw: usize,
    multilabel: bool,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let spec = SynthSpec {
        num_classes: classes,
        per_class,
        channels,
        height: hw,
        width: hw,
        task: if multilabel { Task::Multilabel } else { Task::Multiclass },
        seed,
    };
    let path = synthesize_dataset(&spec, out)?;
    println!("{}", path.display());
    Ok(())
}

/// Best validation loss, its epoch and the number of epochs run.
fn history_summary(text: &str) -> Option<Vec<(String, f64)>> {
    let mut best: Option<(f64, f64)> = None;
    let mut epochs = 0.0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let (epoch, val) = (f.first()?.parse::<f64>().ok()?, f.get(2)?.parse::<f64>().ok()?);
        epochs += 1.0;
        if best.is_none_or(|(b, _)| val < b) {
            best = Some((val, epoch));
        }
    }
    let (loss, epoch) = best?;
    Some(vec![
        ("best_val_loss".into(), loss),
        ("best_epoch".into(), epoch),
        ("epochs".into(), epochs),
    ])
}

pub fn aggregate(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut runs = Vec::with_capacity(dirs.len());
    for d in dirs {
        let mut vals = Vec::new();
        let kv = d.join(METRICS_KV);
        if kv.exists() {
            vals.extend(parse_kv(&fs::read_to_string(&kv)?).into_iter().filter(|(k, _)| k != "threshold"));
        }
        let hist = d.join(HISTORY);
        if hist.exists() {
            let text = fs::read_to_string(&hist)?;
            vals.extend(
                history_summary(&text)
                    .ok_or_else(|| CliError::Runtime(format!("{}: malformed history", hist.display())))?,
            );
        }
        if vals.is_empty() {
            return Err(CliError::Runtime(format!(
                "{} holds neither {METRICS_KV} nor {HISTORY}",
                d.display()
            )));
        }
        runs.push(vals);
    }
    let mut table = format!("metric\tmean\tstd\t(n = {})\n", runs.len());
    for (k, mean, std) in mean_std(&runs) {
        let _ = writeln!(table, "{k}\t{mean:.6}\t{std:.6}");
    }
    print!("{table}");
    if let Some(p) = out {
        fs::write(p, table)?;
    }
    Ok(())
}
