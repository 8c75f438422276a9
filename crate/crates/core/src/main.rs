use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use lidarbeam::error::{Error, Result};
use lidarbeam::io;
use lidarbeam::model::{load_checkpoint, save_checkpoint};
use lidarbeam::objective::{MetricsReport, HEADLINE_KS};
use lidarbeam::preproc::{preprocess_record, write_grid_cache, GridEntry, GridSpec};
use lidarbeam::pruning::{iterative_prune_finetune, write_sparsity_csv, PruneFlavor};
use lidarbeam::sim::{generate_dataset, meta_path, read_dataset, write_dataset, DatasetMeta, GenConfig};
use lidarbeam::trainer::{
    evaluate, evaluate_oracle, make_checkpoint, prepare_samples, run_ablation, train, write_run, AblationSpec,
    Sample, TrainConfig,
};

#[derive(Parser)]
#[command(name = "lidarbeam", version, about = "LIDAR-aided mmWave beam selection workbench")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize scenes, LIDAR clouds and beam-pair gains as JSON Lines.
    Gen(GenArgs),
    /// Bin every record's point cloud into an occupancy grid cache.
    Preprocess(PreprocessArgs),
    /// Train one model per configured seed.
    Train(TrainArgs),
    /// Top-k accuracy and throughput ratio of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Iterative magnitude pruning with fine-tuning.
    Prune(PruneArgs),
    /// Run an experiment matrix over seeds and summarise it.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator config (JSON); defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenes: usize,
    /// Scene seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Id of the first scene.
    #[arg(long, default_value_t = 0)]
    first_id: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Training config whose `grid` section sets the binning.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Train this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Required unless --oracle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Training config whose `grid` section sets the binning.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Score with the normalised gain vector instead of a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    /// Training config used for fine-tuning and for the dataset paths.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// unstructured, structured, or both.
    #[arg(long, default_value = "both")]
    flavor: String,
    /// Fraction of the remaining weights removed per step.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.25,0.3333333333333333")]
    steps: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    finetune_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Matrix config: `{"base": <train config>, "cells": [...]}`.
    #[arg(long)]
    config: PathBuf,
    /// Use seeds 0..n instead of the base config's seed list.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::read_json(p).map_err(|e| match e {
            Error::Parse { path, message } => Error::Config(format!("{}: {message}", path.display())),
            other => other,
        }),
        None => Ok(T::default()),
    }
}

fn require_file(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::Config(format!("no {what} dataset given")))?;
    if !p.is_file() {
        return Err(Error::Config(format!("{what} dataset {} does not exist", p.display())));
    }
    Ok(p.clone())
}

fn load_samples(path: &Path, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let recs = read_dataset(path)?;
    let (samples, skipped) = prepare_samples(&recs, cfg)?;
    log::info!("{}: {} samples, {skipped} degenerate skipped", path.display(), samples.len());
    if samples.is_empty() {
        return Err(Error::Invalid(format!("{} holds no usable records", path.display())));
    }
    Ok(samples)
}

fn headline_json(rep: &MetricsReport) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for k in HEADLINE_KS {
        m.insert(format!("A{k}"), json!(rep.accuracy(k)));
        m.insert(format!("T{k}"), json!(rep.throughput(k)));
    }
    m.insert("samples".into(), json!(rep.samples));
    serde_json::Value::Object(m)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.scene.seed = s;
    }
    if a.scenes == 0 {
        return Err(Error::Config("--scenes must be at least 1".into()));
    }
    cfg.validate()?;
    let recs = generate_dataset(&cfg, a.first_id, a.scenes)?;
    let meta = DatasetMeta::summarize(&recs, a.first_id, &cfg);
    write_dataset(&a.out, &recs)?;
    io::write_json(&meta_path(&a.out), &meta)?;
    println!("{}", json!({ "scenes": meta.scenes, "nlos_fraction": meta.nlos_fraction, "degenerate": meta.degenerate }));
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg: TrainConfig = read_config(a.config.as_deref())?;
    let spec: GridSpec = cfg.grid;
    spec.validate()?;
    let recs = read_dataset(&a.data)?;
    let entries = recs
        .iter()
        .map(|r| preprocess_record(r, &spec).map(|g| GridEntry::new(r.id, &g)))
        .collect::<Result<Vec<_>>>()?;
    write_grid_cache(&a.out, &entries)?;
    println!("{}", json!({ "grids": entries.len(), "rows": spec.rows, "cols": spec.cols }));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_config(Some(&a.config))?;
    if a.train.is_some() {
        cfg.train_data = a.train;
    }
    if a.test.is_some() {
        cfg.test_data = a.test;
    }
    if a.run_dir.is_some() {
        cfg.run_dir = a.run_dir;
    }
    cfg.validate()?;
    let train_path = require_file(cfg.train_data.as_ref(), "training")?;
    let test_path = cfg.test_data.as_ref().map(|p| require_file(Some(p), "test")).transpose()?;
    let run_dir = cfg.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    let seeds = match a.seed {
        Some(s) => vec![s],
        None if cfg.seeds.is_empty() => return Err(Error::Config("seed list is empty".into())),
        None => cfg.seeds.clone(),
    };
    let train_set = load_samples(&train_path, &cfg)?;
    let test_set = test_path.map(|p| load_samples(&p, &cfg)).transpose()?;
    for &seed in &seeds {
        let dir = if seeds.len() == 1 { run_dir.clone() } else { run_dir.join(format!("seed-{seed}")) };
        let (model, history) = train(&cfg, seed, &train_set, test_set.as_deref())?;
        write_run(&dir, &model, &history, json!({ "seed": seed, "epochs": cfg.epochs }))?;
        io::write_json(&dir.join("config.json"), &cfg)?;
        let (split, set) = match &test_set {
            Some(t) => ("test", t.as_slice()),
            None => ("train", train_set.as_slice()),
        };
        let rep = evaluate(&model, set, &HEADLINE_KS)?;
        rep.write_csv(&dir.join("metrics.csv"))?;
        let mut line = headline_json(&rep);
        line["seed"] = json!(seed);
        line["split"] = json!(split);
        println!("{line}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg: TrainConfig = read_config(a.config.as_deref())?;
    let ks = a.k.clone();
    let rep = if a.oracle {
        evaluate_oracle(&load_samples(&a.data, &cfg)?, &ks)?
    } else {
        let ck = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("--checkpoint is required unless --oracle is set".into()))?;
        let model = load_checkpoint(ck)?.to_model()?;
        if model.config.grid != [cfg.grid.rows, cfg.grid.cols] {
            return Err(Error::Shape(format!(
                "checkpoint expects a {:?} grid but the dataset is binned {}×{}",
                model.config.grid, cfg.grid.rows, cfg.grid.cols
            )));
        }
        let eval_cfg = TrainConfig { model: model.config.clone(), ..cfg };
        evaluate(&model, &load_samples(&a.data, &eval_cfg)?, &ks)?
    };
    rep.write_csv(&a.out)?;
    if let Some(r) = rep.rows.first() {
        println!("{}", serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?);
    }
    Ok(())
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let cfg: TrainConfig = read_config(Some(&a.config))?;
    let finetune = cfg.clone().with_epochs(a.finetune_epochs)?;
    finetune.validate()?;
    let flavors = match a.flavor.as_str() {
        "both" => PruneFlavor::ALL.to_vec(),
        f => vec![f.parse()?],
    };
    let model = load_checkpoint(&a.checkpoint)?.to_model()?;
    let train_set = load_samples(&require_file(cfg.train_data.as_ref(), "training")?, &cfg)?;
    let test_set = load_samples(&require_file(cfg.test_data.as_ref(), "test")?, &cfg)?;
    let mut all = Vec::new();
    for flavor in flavors {
        let (pruned, mask, reports) =
            iterative_prune_finetune(model.clone(), flavor, &a.steps, &finetune, a.seed, &train_set, &test_set)?;
        save_checkpoint(
            &a.out.join(format!("{flavor}.ckpt.json")),
            &make_checkpoint(&pruned, Some(&mask), json!({ "ratio": mask.ratio(), "flavor": flavor })),
        )?;
        let last = reports.last().expect("at least one report");
        let mut line = headline_json(&last.metrics);
        line["flavor"] = json!(flavor);
        line["ratio"] = json!(last.ratio);
        println!("{line}");
        all.extend(reports);
    }
    write_sparsity_csv(&a.out.join("sparsity.csv"), &all)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let spec: AblationSpec = read_config(Some(&a.config))?;
    let cells = spec.resolve()?;
    let seeds: Vec<u64> = match a.seeds {
        Some(0) => return Err(Error::Config("--seeds must be at least 1".into())),
        Some(n) => (0..n).collect(),
        None => spec.base.seeds.clone(),
    };
    let base = &spec.base;
    let train_set = load_samples(&require_file(base.train_data.as_ref(), "training")?, base)?;
    let test_set = load_samples(&require_file(base.test_data.as_ref(), "test")?, base)?;
    let summary = run_ablation(&cells, &seeds, &train_set, &test_set, Some(&a.out))?;
    print!("{}", summary.to_csv()?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
