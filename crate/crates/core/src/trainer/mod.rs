//! Mini-batch training on the distillation-mixed loss, evaluation,
//! checkpoint plumbing, and the ablation driver.

mod ablation;
mod adam;

pub use ablation::{
    default_matrix, merge_patch, read_run_metrics, run_ablation, AblationCell, AblationSpec, AblationSummary, CellSpec, CellSummary,
    PruneStage, RunResult, SUMMARY_METRICS,
};
pub use adam::{Adam, AdamConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::curriculum::{plan_epoch, CurriculumSchedule};
use crate::error::{config_err, invalid_err, Error, Result};
use crate::io;
use crate::model::{save_checkpoint, BeamClassifier, Checkpoint, ModelConfig, ModelInput};
use crate::objective::{fmt_metric, kd_target, make_labels, LabelVector, LossConfig, MetricsReport, Scored, HEADLINE_KS};
use crate::preproc::{preprocess_record, GridSpec};
use crate::pruning::PruneMask;
use crate::sim::DatasetRecord;
use crate::tensor::Tape;

pub const HISTORY_HEADER: [&str; 10] = ["epoch", "lambda", "admitted", "loss", "A1", "A5", "A10", "T1", "T5", "T10"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub curriculum: CurriculumSchedule,
    pub model: ModelConfig,
    pub grid: GridSpec,
    /// Evaluate on the held-out set every this many epochs; 0 only at the end.
    pub eval_every: usize,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 45,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            curriculum: CurriculumSchedule::default(),
            model: ModelConfig::default(),
            grid: GridSpec::default(),
            eval_every: 1,
            train_data: None,
            test_data: None,
            run_dir: None,
            seeds: vec![0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.grid.validate()?;
        if self.epochs > 0 {
            self.curriculum.validate()?;
            if self.curriculum.epochs != self.epochs {
                return Err(config_err!(
                    "curriculum covers {} epochs but training runs {}",
                    self.curriculum.epochs,
                    self.epochs
                ));
            }
        }
        if self.model.grid != [self.grid.rows, self.grid.cols] {
            return Err(config_err!(
                "model expects a {:?} grid but preprocessing produces {}×{}",
                self.model.grid,
                self.grid.rows,
                self.grid.cols
            ));
        }
        self.model.plan()?;
        Ok(())
    }

    /// Same settings with the curriculum stages resized to `epochs`
    /// (`epochs` must be a multiple of the stage count).
    pub fn with_epochs(mut self, epochs: usize) -> Result<Self> {
        let stages = self.curriculum.rejection.len();
        if epochs % stages != 0 {
            return Err(config_err!("{epochs} epochs do not split into {stages} curriculum stages"));
        }
        self.epochs = epochs;
        self.curriculum = self.curriculum.compressed(epochs / stages);
        Ok(self)
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub input: ModelInput,
    pub labels: LabelVector,
    pub los: bool,
}

/// Grids every non-degenerate record; returns the samples and the number of
/// degenerate records skipped.
pub fn prepare_samples(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<(Vec<Sample>, usize)> {
    let mut out = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        if r.degenerate || r.y.iter().all(|&v| v == 0.0) {
            skipped += 1;
            continue;
        }
        let grid = preprocess_record(r, &cfg.grid)?;
        out.push(Sample {
            id: r.id,
            input: ModelInput {
                grid: grid.to_f64(),
                veh_xy: crate::model::normalize_xy(r.veh, cfg.model.area),
            },
            labels: make_labels(&r.y, cfg.loss.norm)?,
            los: r.los,
        });
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lambda: f64,
    pub admitted: usize,
    pub loss: f64,
    /// Held-out metrics at k = 1, 5, 10 when evaluated this epoch.
    pub accuracy: Option<[f64; 3]>,
    pub throughput: Option<[f64; 3]>,
}

/// Per-epoch statistics; wall-clock seconds are kept apart so the
/// statistics themselves are reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
        w.write_record(HISTORY_HEADER).map_err(csv_err)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), format!("{:.6}", e.lambda), e.admitted.to_string(), format!("{:.9}", e.loss)];
            for m in [e.accuracy, e.throughput] {
                row.extend((0..3).map(|i| fmt_metric(m.map(|v| v[i]))));
            }
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for (i, t) in self.seconds.iter().enumerate() {
            s.push_str(&format!("{i},{t:.3}\n"));
        }
        s
    }
}

pub fn scored(model: &BeamClassifier, samples: &[Sample]) -> Result<Vec<Scored>> {
    samples
        .iter()
        .map(|s| Scored::new(model.predict(&s.input)?, s.labels.y.clone(), s.los))
        .collect()
}

pub fn evaluate(model: &BeamClassifier, samples: &[Sample], ks: &[usize]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(invalid_err!("evaluation set is empty"));
    }
    MetricsReport::compute(&scored(model, samples)?, ks)
}

/// Metrics of the oracle that predicts the normalised gain vector itself.
pub fn evaluate_oracle(samples: &[Sample], ks: &[usize]) -> Result<MetricsReport> {
    let recs = samples
        .iter()
        .map(|s| Scored::new(s.labels.ybar.clone(), s.labels.y.clone(), s.los))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::compute(&recs, ks)
}

fn headline(rep: &MetricsReport) -> ([f64; 3], [f64; 3]) {
    let a = HEADLINE_KS.map(|k| rep.accuracy(k).unwrap_or(f64::NAN));
    let t = HEADLINE_KS.map(|k| rep.throughput(k).unwrap_or(f64::NAN));
    (a, t)
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4531);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains a freshly initialised model with weights seeded by `seed`.
pub fn train(cfg: &TrainConfig, seed: u64, train: &[Sample], eval: Option<&[Sample]>) -> Result<(BeamClassifier, TrainHistory)> {
    let model = BeamClassifier::new(ModelConfig { seed, ..cfg.model.clone() })?;
    train_from(model, cfg, seed, train, eval, None)
}

/// Continues training `model`. When a mask is given, masked entries stay
/// exactly zero after every step.
pub fn train_from(
    model: BeamClassifier,
    cfg: &TrainConfig,
    seed: u64,
    train: &[Sample],
    eval: Option<&[Sample]>,
    mask: Option<&PruneMask>,
) -> Result<(BeamClassifier, TrainHistory)> {
    train_with_hook(model, cfg, seed, train, eval, mask, &mut |_, _, _| Ok(()))
}

pub type EpochHook<'a> = dyn FnMut(usize, &BeamClassifier, &EpochStats) -> Result<()> + 'a;

pub fn train_with_hook(
    mut model: BeamClassifier,
    cfg: &TrainConfig,
    seed: u64,
    train: &[Sample],
    eval: Option<&[Sample]>,
    mask: Option<&PruneMask>,
    hook: &mut EpochHook<'_>,
) -> Result<(BeamClassifier, TrainHistory)> {
    cfg.validate()?;
    if model.config.grid != cfg.model.grid {
        return Err(config_err!("model grid {:?} differs from configured {:?}", model.config.grid, cfg.model.grid));
    }
    if cfg.epochs > 0 && train.is_empty() {
        return Err(invalid_err!("training set is empty"));
    }
    if let Some(m) = mask {
        m.apply(&mut model.params)?;
    }
    model.params.clear_state();
    let los: Vec<bool> = train.iter().map(|s| s.los).collect();
    let targets: Vec<Vec<f64>> = train.iter().map(|s| kd_target(&s.labels, cfg.loss.beta)).collect();
    let mut opt = Adam::new(cfg.optimizer);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let plan = plan_epoch(&cfg.curriculum, &los, seed, epoch)?;
        let mut order = plan.ids.clone();
        order.shuffle(&mut shuffle_rng(seed, epoch));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let q = model.forward(&mut tape, &train[i].input)?;
                let l = tape.cross_entropy(q, &targets[i], cfg.loss.eps)?;
                batch_loss += tape.value(l).data()[0];
                let mean = tape.scale(l, scale)?;
                tape.backward(mean, &mut model.params)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {batch_loss} at epoch {epoch}, batch {b}")));
            }
            if let Some(p) = model.params.iter().find(|p| p.tensor.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite()))) {
                return Err(Error::NonFinite(format!("gradient of `{}` at epoch {epoch}, batch {b}", p.name)));
            }
            loss_sum += batch_loss;
            if let Some(m) = mask {
                m.mask_grads(&mut model.params);
            }
            opt.step(&mut model.params);
            if let Some(m) = mask {
                m.enforce(&mut model.params);
            }
        }
        let evaluate_now = match eval {
            Some(_) if cfg.eval_every > 0 => (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs,
            Some(_) => epoch + 1 == cfg.epochs,
            None => false,
        };
        let (accuracy, throughput) = match eval {
            Some(set) if evaluate_now => {
                let (a, t) = headline(&evaluate(&model, set, &HEADLINE_KS)?);
                (Some(a), Some(t))
            }
            _ => (None, None),
        };
        let stats = EpochStats {
            epoch,
            lambda: plan.lambda,
            admitted: plan.ids.len(),
            loss: loss_sum / plan.ids.len().max(1) as f64,
            accuracy,
            throughput,
        };
        log::info!("epoch {epoch}: loss {:.5} admitted {} {:?}", stats.loss, stats.admitted, stats.throughput);
        hook(epoch, &model, &stats)?;
        history.epochs.push(stats);
        history.seconds.push(start.elapsed().as_secs_f64());
    }
    model.params.clear_state();
    Ok((model, history))
}

pub fn make_checkpoint(model: &BeamClassifier, mask: Option<&PruneMask>, meta: serde_json::Value) -> Checkpoint {
    let mut c = Checkpoint::from_model(model);
    if let Some(m) = mask {
        c.masks = m.to_arrays(&model.params);
    }
    c.meta = meta;
    c
}

/// Writes `history.csv`, `timing.csv` and `final.ckpt.json` into `dir`.
pub fn write_run(dir: &Path, model: &BeamClassifier, history: &TrainHistory, meta: serde_json::Value) -> Result<()> {
    io::atomic_write(&dir.join("history.csv"), history.to_csv()?.as_bytes())?;
    io::atomic_write(&dir.join("timing.csv"), history.timing_csv().as_bytes())?;
    save_checkpoint(&dir.join("final.ckpt.json"), &make_checkpoint(model, None, meta))
}
