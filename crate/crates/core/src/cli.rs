//! The `occseg` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backends::{ConstantLandmark, LandmarkScorer};
use crate::dataset::{load_sample, read_binary_mask, read_manifest, read_rgb, write_synth_dataset, Sample, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::pipeline::{
    assess_reference, iou, mean_iou, run_ablation, run_sample, run_sample_per_image, train, AblationSpec,
    Checkpoint, Model, PipelineConfig, RunResult, TrainMode,
};

#[derive(Debug, Parser)]
#[command(name = "occseg", version, about = "Self-supervised face occlusion segmentation")]
pub struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with manifest.
    Synth(SynthArgs),
    /// Segment samples and write mask, probabilities, prompts and overlay.
    Run(RunArgs),
    /// Train the screening layer and write a checkpoint.
    Train(TrainArgs),
    /// Mean occlusion IoU of predicted masks against ground truth.
    Eval(EvalArgs),
    /// Run the ablation table on a synthetic suite.
    Ablate(AblateArgs),
    /// Score a reference image against the original.
    Quality(QualityArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// Generator settings (TOML).
    #[arg(long, value_name = "PATH")]
    pub synth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only these sample ids (repeatable); all samples otherwise.
    #[arg(long = "sample")]
    pub samples: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Trained weights from `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fit a fresh screening layer on each sample before predicting.
    #[arg(long)]
    pub per_image: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Sample id for per-image mode.
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
    /// Per-step log; defaults to `train_log.jsonl` next to the checkpoint.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `<id>/mask.png` (as written by `run`) or `<id>.png`.
    #[arg(long)]
    pub pred: PathBuf,
    /// `<id>.png` ground-truth masks.
    #[arg(long)]
    pub gt: PathBuf,
    /// Per-sample IoU records.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Suite and rows (TOML); the default table when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "ablation.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub original: PathBuf,
    /// Occluded region of the original.
    #[arg(long)]
    pub occlusion: PathBuf,
    /// Landmark confidence of the raw input, reported for comparison.
    #[arg(long)]
    pub raw_conf: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "val" => Ok(Split::Val),
        _ => Err(format!("unknown split {s:?} (train, test or val)")),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Run(a) => run_cmd(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(cli, a),
        Command::Quality(a) => quality_cmd(cli, a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.synth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let records = write_synth_dataset(&cfg, a.count, a.split, &a.out)?;
    println!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}

fn load_selected(manifest: &Path, ids: &[String]) -> Result<Vec<Sample>> {
    let records = read_manifest(manifest)?;
    if let Some(missing) = ids.iter().find(|id| !records.iter().any(|r| &r.sample_id() == *id)) {
        return Err(Error::Config(format!("sample {missing:?} not in {}", manifest.display())));
    }
    records
        .iter()
        .filter(|r| ids.is_empty() || ids.contains(&r.sample_id()))
        .map(|r| {
            let mut s = load_sample(r)?;
            s.id = r.sample_id();
            Ok(s)
        })
        .collect()
}

fn run_cmd(cli: &Cli, a: &RunArgs) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let mut model = Model::new(&cfg)?;
    if let Some(p) = &a.checkpoint {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            message: e.to_string(),
        })?;
        model.load_checkpoint(&ck)?;
    }
    let samples = load_selected(&a.manifest, &a.samples)?;
    let mut results: Vec<RunResult> = Vec::with_capacity(samples.len());
    let mut lines = String::new();
    for s in &samples {
        let r = if a.per_image {
            run_sample_per_image(&model, s)?
        } else {
            run_sample(&model, s)?
        };
        r.write(&s.image, &a.out)?;
        lines.push_str(&serde_json::to_string(&r.summary()).expect("summary serializes"));
        lines.push('\n');
        match r.iou {
            Some(v) => println!("{}  iou {v:.4}", r.id),
            None => println!("{}", r.id),
        }
        results.push(r);
    }
    write_text(&a.out.join("results.jsonl"), &lines)?;
    if let Some(m) = mean_iou(&results) {
        println!("mean_iou {m:.4} n={}", results.iter().filter(|r| r.iou.is_some()).count());
    }
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let mut model = Model::new(&cfg)?;
    let samples = match (cfg.training.mode, &a.sample) {
        (TrainMode::PerImage, Some(id)) => load_selected(&a.manifest, std::slice::from_ref(id))?,
        (TrainMode::PerImage, None) => {
            return Err(Error::Config("per_image training needs --sample".into()));
        }
        (TrainMode::Standard, _) => {
            let records: Vec<_> = read_manifest(&a.manifest)?
                .into_iter()
                .filter(|r| r.split == Split::Train)
                .collect();
            if records.is_empty() {
                return Err(Error::Config(format!("no train-split samples in {}", a.manifest.display())));
            }
            records.iter().map(load_sample).collect::<Result<Vec<_>>>()?
        }
    };
    let preps = samples.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
    let report = train(&mut model, &preps)?;
    let ck = serde_json::to_string_pretty(&model.checkpoint()).expect("checkpoint serializes");
    write_text(&a.out, &(ck + "\n"))?;
    let log = a
        .log
        .clone()
        .unwrap_or_else(|| a.out.with_file_name("train_log.jsonl"));
    report.write_jsonl(&log)?;
    let losses = report.losses();
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("loss {first:.4} -> {last:.4} over {} steps", losses.len());
    }
    println!("checkpoint {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let mut ids: Vec<String> = Vec::new();
    for entry in fs::read_dir(&a.gt).map_err(|e| Error::io(&a.gt, e))? {
        let path = entry.map_err(|e| Error::io(&a.gt, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::Empty("ground-truth directory"));
    }
    ids.sort();
    let mut lines = String::new();
    let mut sum = 0.0;
    for id in &ids {
        let nested = a.pred.join(id).join("mask.png");
        let pred_path = if nested.is_file() { nested } else { a.pred.join(format!("{id}.png")) };
        if !pred_path.is_file() {
            return Err(Error::MissingFile(pred_path));
        }
        let v = iou(&read_binary_mask(&pred_path)?, &read_binary_mask(&a.gt.join(format!("{id}.png")))?)?;
        sum += v;
        lines.push_str(&serde_json::json!({ "id": id, "iou": v }).to_string());
        lines.push('\n');
    }
    let mean = sum / ids.len() as f64;
    if let Some(out) = &a.out {
        write_text(out, &lines)?;
    }
    println!("mean_iou {mean:.6} n={}", ids.len());
    Ok(())
}

fn ablate_cmd(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let mut spec = match &a.spec {
        Some(p) => AblationSpec::load(p)?,
        None => AblationSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.suite.synth.seed = s;
    }
    let table = run_ablation(&cfg, &spec)?;
    let text = table.to_text();
    write_text(&a.out, &text)?;
    print!("{text}");
    Ok(())
}

fn quality_cmd(cli: &Cli, a: &QualityArgs) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let reference = read_rgb(&a.reference)?;
    let original = read_rgb(&a.original)?;
    let occlusion = read_binary_mask(&a.occlusion)?;
    let scorer = cfg.backend.landmark.scorer();
    let raw = a.raw_conf.map(ConstantLandmark);
    let report = assess_reference(
        &reference,
        &original,
        &occlusion,
        scorer.as_ref(),
        raw.as_ref().map(|r| r as &dyn LandmarkScorer),
    )?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Some(out) = &a.out {
        write_text(out, &json)?;
    }
    print!("{json}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_rejected() {
        assert_ne!(run(["occseg", "eval", "--bogus"]), 0);
    }

    #[test]
    fn missing_subcommand_is_rejected() {
        assert_ne!(run(["occseg"]), 0);
    }

    #[test]
    fn bad_config_exits_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[fe]\nnum_blockz = 3\n").unwrap();
        let code = run([
            "occseg",
            "ablate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("t.txt").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn split_names_parse() {
        assert_eq!(parse_split("train").unwrap(), Split::Train);
        assert!(parse_split("dev").is_err());
    }
}
