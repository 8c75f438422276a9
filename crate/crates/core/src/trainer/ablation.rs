use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{evaluate, make_checkpoint, train, write_run, Sample, TrainConfig, TrainHistory};
use crate::curriculum::CurriculumMode;
use crate::error::{config_err, Error, Result};
use crate::io;
use crate::model::{AttentionConfig, AttentionVariant, BeamClassifier};
use crate::objective::{fmt_metric, mean_ci95, MetricsReport, HEADLINE_KS};
use crate::pruning::{iterative_prune_finetune, PruneFlavor};

pub const SUMMARY_METRICS: [&str; 6] = ["A1", "A5", "A10", "T1", "T5", "T10"];

/// Prune-then-fine-tune applied after the cell's training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneStage {
    pub flavor: PruneFlavor,
    /// Fraction of the remaining weights removed at each step.
    pub steps: Vec<f64>,
    pub finetune_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub name: String,
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: Option<PruneStage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cell: String,
    pub seed: u64,
    /// A(1), A(5), A(10), T(1), T(5), T(10).
    pub metrics: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub runs: usize,
    pub mean: [f64; 6],
    pub ci95: [Option<f64>; 6],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunResult>,
}

fn summary_header() -> Vec<String> {
    let mut h = vec!["cell".to_string(), "runs".to_string()];
    for m in SUMMARY_METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_ci95"));
    }
    h
}

impl CellSummary {
    pub fn from_runs(cell: &str, runs: &[RunResult]) -> Result<Self> {
        let mut mean = [0.0; 6];
        let mut ci95 = [None; 6];
        for i in 0..6 {
            let v: Vec<f64> = runs.iter().map(|r| r.metrics[i]).collect();
            let c = mean_ci95(&v)?;
            mean[i] = c.mean;
            ci95[i] = c.half_width;
        }
        Ok(CellSummary { cell: cell.to_string(), runs: runs.len(), mean, ci95 })
    }

    fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.cell.clone(), self.runs.to_string()];
        for i in 0..6 {
            row.push(fmt_metric(Some(self.mean[i])));
            row.push(fmt_metric(self.ci95[i]));
        }
        row
    }

    fn parse_row(row: &csv::StringRecord) -> Result<Self> {
        let bad = || Error::Invalid(format!("malformed summary row {row:?}"));
        if row.len() != 14 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        let mut mean = [0.0; 6];
        let mut ci95 = [None; 6];
        for i in 0..6 {
            mean[i] = num(&row[2 + 2 * i])?.ok_or_else(bad)?;
            ci95[i] = num(&row[3 + 2 * i])?;
        }
        Ok(CellSummary { cell: row[0].to_string(), runs: row[1].parse().map_err(|_| bad())?, mean, ci95 })
    }
}

impl AblationSummary {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
        w.write_record(summary_header()).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record(c.csv_row()).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses a summary CSV written by [`AblationSummary::to_csv`].
    pub fn read_csv(path: &Path) -> Result<Vec<CellSummary>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        r.records()
            .map(|rec| CellSummary::parse_row(&rec.map_err(|e| Error::parse(path, e))?))
            .collect()
    }
}

fn headline6(rep: &MetricsReport) -> [f64; 6] {
    let mut m = [f64::NAN; 6];
    for (i, &k) in HEADLINE_KS.iter().enumerate() {
        m[i] = rep.accuracy(k).unwrap_or(f64::NAN);
        m[3 + i] = rep.throughput(k).unwrap_or(f64::NAN);
    }
    m
}

/// Reads A/T at k = 1, 5, 10 back from a per-run metrics CSV.
pub fn read_run_metrics(path: &Path) -> Result<[f64; 6]> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut m = [f64::NAN; 6];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let k: usize = rec[0].parse().map_err(|e| Error::parse(path, e))?;
        if let Some(i) = HEADLINE_KS.iter().position(|&h| h == k) {
            m[i] = rec[1].parse().map_err(|e| Error::parse(path, e))?;
            m[3 + i] = rec[2].parse().map_err(|e| Error::parse(path, e))?;
        }
    }
    if m.iter().any(|v| v.is_nan()) {
        return Err(Error::parse(path, "missing k = 1, 5 or 10"));
    }
    Ok(m)
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(config_err!("cell name `{name}` must be nonempty and use only [A-Za-z0-9._-]"))
    }
}

/// The standard experiment matrix around `base`: the β grid, the three
/// curriculum modes, the attention variants, and 60% pruning of both
/// flavors.
pub fn default_matrix(base: &TrainConfig) -> Vec<AblationCell> {
    let cell = |name: String, train: TrainConfig| AblationCell { name, train, prune: None };
    let mut cells = Vec::new();
    for beta in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let mut t = base.clone();
        t.loss.beta = beta;
        cells.push(cell(format!("beta-{beta:.1}"), t));
    }
    for mode in CurriculumMode::ALL {
        let mut t = base.clone();
        t.curriculum.mode = mode;
        cells.push(cell(mode.to_string(), t));
    }
    let mut t = base.clone();
    t.model.attention = None;
    cells.push(cell("attention-none".into(), t));
    for v in AttentionVariant::ALL {
        let mut t = base.clone();
        t.model.attention = Some(AttentionConfig::with_variant(v));
        cells.push(cell(format!("attention-{v}"), t));
    }
    for flavor in PruneFlavor::ALL {
        cells.push(AblationCell {
            name: format!("prune-{flavor}-60"),
            train: base.clone(),
            prune: Some(PruneStage { flavor, steps: vec![0.2, 0.25, 1.0 / 3.0], finetune_epochs: 10 }),
        });
    }
    cells
}

/// Trained models kept for reuse when several cells share a training
/// configuration and seed.
struct ModelCache(Vec<(String, u64, BeamClassifier, TrainHistory)>);

impl ModelCache {
    fn key(cfg: &TrainConfig) -> String {
        serde_json::to_string(cfg).expect("config serializes")
    }

    fn get(&self, cfg: &TrainConfig, seed: u64) -> Option<(BeamClassifier, TrainHistory)> {
        let k = Self::key(cfg);
        self.0.iter().find(|e| e.0 == k && e.1 == seed).map(|e| (e.2.clone(), e.3.clone()))
    }
}

fn run_one(
    cell: &AblationCell,
    seed: u64,
    train_set: &[Sample],
    test_set: &[Sample],
    cache: &mut ModelCache,
    dir: Option<&Path>,
) -> Result<[f64; 6]> {
    let (model, history) = match cache.get(&cell.train, seed) {
        Some(hit) => hit,
        None => {
            let (model, history) = train(&cell.train, seed, train_set, Some(test_set))?;
            cache.0.push((ModelCache::key(&cell.train), seed, model.clone(), history.clone()));
            (model, history)
        }
    };
    if let Some(d) = dir {
        write_run(d, &model, &history, serde_json::json!({ "cell": cell.name, "seed": seed }))?;
    }
    let Some(p) = &cell.prune else {
        let rep = evaluate(&model, test_set, &HEADLINE_KS)?;
        if let Some(d) = dir {
            rep.write_csv(&d.join("metrics.csv"))?;
        }
        return Ok(headline6(&rep));
    };
    let finetune = cell.train.clone().with_epochs(p.finetune_epochs)?;
    let (pruned, mask, reports) = iterative_prune_finetune(model, p.flavor, &p.steps, &finetune, seed, train_set, test_set)?;
    let last = reports.last().expect("at least the unpruned report");
    if let Some(d) = dir {
        crate::pruning::write_sparsity_csv(&d.join("sparsity.csv"), &reports)?;
        crate::model::save_checkpoint(
            &d.join("pruned.ckpt.json"),
            &make_checkpoint(&pruned, Some(&mask), serde_json::json!({ "cell": cell.name, "seed": seed, "ratio": mask.ratio() })),
        )?;
        last.metrics.write_csv(&d.join("metrics.csv"))?;
    }
    Ok(headline6(&last.metrics))
}

/// Trains every cell under every seed and aggregates A/T at k = 1, 5, 10.
///
/// With an output directory, each run gets `<out>/<cell>/seed-<s>/` and the
/// summary is rewritten to `<out>/summary.csv` after every cell. Cells
/// already present in an existing summary, and runs whose `metrics.csv`
/// exists, are not recomputed.
pub fn run_ablation(
    cells: &[AblationCell],
    seeds: &[u64],
    train_set: &[Sample],
    test_set: &[Sample],
    out: Option<&Path>,
) -> Result<AblationSummary> {
    if seeds.is_empty() {
        return Err(config_err!("ablation needs at least one seed"));
    }
    for (i, c) in cells.iter().enumerate() {
        check_name(&c.name)?;
        c.train.validate()?;
        if cells[..i].iter().any(|d| d.name == c.name) {
            return Err(config_err!("duplicate cell name `{}`", c.name));
        }
    }
    let summary_path = out.map(|o| o.join("summary.csv"));
    let done: Vec<CellSummary> = match &summary_path {
        Some(p) if p.exists() => AblationSummary::read_csv(p)?,
        _ => Vec::new(),
    };
    let mut summary = AblationSummary::default();
    let mut cache = ModelCache(Vec::new());
    for cell in cells {
        if let Some(prev) = done.iter().find(|c| c.cell == cell.name) {
            log::info!("cell {} already summarised, skipping", cell.name);
            summary.cells.push(prev.clone());
            continue;
        }
        let mut runs = Vec::new();
        for &seed in seeds {
            let dir = out.map(|o| o.join(&cell.name).join(format!("seed-{seed}")));
            let cached = dir.as_ref().map(|d| d.join("metrics.csv")).filter(|p| p.exists());
            let metrics = match cached {
                Some(p) => read_run_metrics(&p)?,
                None => run_one(cell, seed, train_set, test_set, &mut cache, dir.as_deref())?,
            };
            log::info!("cell {} seed {seed}: {:?}", cell.name, metrics);
            runs.push(RunResult { cell: cell.name.clone(), seed, metrics });
        }
        summary.cells.push(CellSummary::from_runs(&cell.name, &runs)?);
        summary.runs.extend(runs);
        if let Some(p) = &summary_path {
            io::atomic_write(p, summary.to_csv()?.as_bytes())?;
        }
    }
    Ok(summary)
}

/// One matrix cell as written in a config file: a name, a merge patch
/// applied to the base training config, and an optional pruning stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    #[serde(default = "empty_patch")]
    pub overrides: serde_json::Value,
    #[serde(default)]
    pub prune: Option<PruneStage>,
}

fn empty_patch() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// Ablation matrix file. An empty cell list means [`default_matrix`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub base: TrainConfig,
    pub cells: Vec<CellSpec>,
}

/// JSON merge patch: objects merge recursively, `null` deletes, anything
/// else replaces.
pub fn merge_patch(target: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    let Value::Object(p) = patch else {
        *target = patch.clone();
        return;
    };
    if !target.is_object() {
        *target = Value::Object(Default::default());
    }
    let t = target.as_object_mut().expect("just made an object");
    for (k, v) in p {
        if v.is_null() {
            t.remove(k);
        } else {
            merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
        }
    }
}

impl AblationSpec {
    pub fn resolve(&self) -> Result<Vec<AblationCell>> {
        if self.cells.is_empty() {
            return Ok(default_matrix(&self.base));
        }
        let base = serde_json::to_value(&self.base).expect("config serializes");
        self.cells
            .iter()
            .map(|c| {
                let mut v = base.clone();
                merge_patch(&mut v, &c.overrides);
                let train: TrainConfig = serde_json::from_value(v)
                    .map_err(|e| config_err!("cell `{}` overrides: {e}", c.name))?;
                Ok(AblationCell { name: c.name.clone(), train, prune: c.prune.clone() })
            })
            .collect()
    }
}
