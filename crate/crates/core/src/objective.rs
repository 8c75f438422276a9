//! Labels, the distillation-mixed loss, and the top-k evaluation metrics.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{config_err, invalid_err, shape_err, Error, Result};
use crate::io;
use crate::tensor::clamp_low;

pub const LOG_EPS: f64 = 1e-12;
pub const METRICS_HEADER: [&str; 7] = [
    "k",
    "accuracy",
    "throughput_ratio",
    "accuracy_los",
    "accuracy_nlos",
    "throughput_los",
    "throughput_nlos",
];
/// The k values carried in summaries and ablation tables.
pub const HEADLINE_KS: [usize; 3] = [1, 5, 10];

/// How the soft target is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelNorm {
    #[default]
    L2,
    L1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub y: Vec<f64>,
    pub ybar: Vec<f64>,
    pub ystar: Vec<f64>,
    pub best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub eps: f64,
    pub norm: LabelNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 0.8, eps: LOG_EPS, norm: LabelNorm::L2 }
    }
}

impl LossConfig {
    pub fn with_beta(beta: f64) -> Self {
        LossConfig { beta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(config_err!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(config_err!("log floor must lie in (0, 1), got {}", self.eps));
        }
        Ok(())
    }
}

/// Lowest index of the maximum of a finite vector.
fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn make_labels(y: &[f64], norm: LabelNorm) -> Result<LabelVector> {
    if y.is_empty() {
        return Err(invalid_err!("gain vector is empty"));
    }
    if let Some(i) = y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid_err!("gain entry {i} is {} (must be finite and nonnegative)", y[i]));
    }
    let scale = match norm {
        LabelNorm::L2 => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
        LabelNorm::L1 => y.iter().sum(),
    };
    if scale == 0.0 {
        return Err(invalid_err!("gain vector is all zero (degenerate record)"));
    }
    let best = argmax_lowest(y);
    let mut ystar = vec![0.0; y.len()];
    ystar[best] = 1.0;
    Ok(LabelVector {
        y: y.to_vec(),
        ybar: y.iter().map(|v| v / scale).collect(),
        ystar,
        best,
    })
}

/// `−Σ p_i ln max(q_i, eps)`, with zero targets contributing nothing.
pub fn cross_entropy(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape_err!("target has {} entries, prediction {}", p.len(), q.len()));
    }
    if let Some(i) = p.iter().position(|v| !(*v >= 0.0)) {
        return Err(invalid_err!("target entry {i} is negative or NaN"));
    }
    Ok(-p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi != 0.0)
        .map(|(&pi, &qi)| pi * clamp_low(qi, eps).ln())
        .sum::<f64>())
}

/// `(1−β)·ystar + β·ybar`; one cross entropy against it equals the
/// two-term loss.
pub fn kd_target(labels: &LabelVector, beta: f64) -> Vec<f64> {
    labels
        .ystar
        .iter()
        .zip(&labels.ybar)
        .map(|(s, b)| (1.0 - beta) * s + beta * b)
        .collect()
}

pub fn kd_loss(labels: &LabelVector, yhat: &[f64], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let hard = cross_entropy(&labels.ystar, yhat, cfg.eps)?;
    let soft = cross_entropy(&labels.ybar, yhat, cfg.eps)?;
    Ok((1.0 - cfg.beta) * hard + cfg.beta * soft)
}

/// Full ranking of indices by descending score, ties to the lower index.
pub fn rank_indices(yhat: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = yhat.iter().position(|v| v.is_nan()) {
        return Err(invalid_err!("prediction entry {i} is NaN"));
    }
    let mut idx: Vec<usize> = (0..yhat.len()).collect();
    idx.sort_by(|&a, &b| yhat[b].total_cmp(&yhat[a]).then(a.cmp(&b)));
    Ok(idx)
}

pub fn topk_select(yhat: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > yhat.len() {
        return Err(invalid_err!("k must lie in [1, {}], got {k}", yhat.len()));
    }
    let mut idx = rank_indices(yhat)?;
    idx.truncate(k);
    Ok(idx)
}

/// One evaluated sample: predicted scores, true gains, and the LOS flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub scores: Vec<f64>,
    pub gains: Vec<f64>,
    pub los: bool,
    pub best: usize,
}

impl Scored {
    /// Rejects degenerate (all-zero) gain vectors.
    pub fn new(scores: Vec<f64>, gains: Vec<f64>, los: bool) -> Result<Self> {
        if scores.len() != gains.len() {
            return Err(shape_err!("{} scores for {} gains", scores.len(), gains.len()));
        }
        let best = make_labels(&gains, LabelNorm::L2)?.best;
        Ok(Scored { scores, gains, los, best })
    }

    fn rate(&self, i: usize) -> f64 {
        (1.0 + self.gains[i]).log2()
    }
}

fn check_k(records: &[Scored], k: usize) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(invalid_err!("evaluation set is empty"));
    };
    if k == 0 || k > first.scores.len() {
        return Err(invalid_err!("k must lie in [1, {}], got {k}", first.scores.len()));
    }
    Ok(())
}

pub fn topk_accuracy(records: &[Scored], k: usize) -> Result<f64> {
    check_k(records, k)?;
    let mut hits = 0usize;
    for r in records {
        if topk_select(&r.scores, k)?.contains(&r.best) {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Ratio of the mean best-in-set rate to the mean optimal rate.
pub fn throughput_ratio(records: &[Scored], k: usize) -> Result<f64> {
    check_k(records, k)?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in records {
        let sel = topk_select(&r.scores, k)?;
        num += sel.iter().map(|&i| r.rate(i)).fold(f64::NEG_INFINITY, f64::max);
        den += r.rate(r.best);
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub accuracy: f64,
    pub throughput_ratio: f64,
    pub accuracy_los: Option<f64>,
    pub accuracy_nlos: Option<f64>,
    pub throughput_los: Option<f64>,
    pub throughput_nlos: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub los_samples: usize,
    pub nlos_samples: usize,
    pub rows: Vec<MetricsRow>,
}

/// Per-record hit flags and best-in-prefix rates for every k.
struct Sweep {
    hit_sum: Vec<f64>,
    rate_sum: Vec<f64>,
    opt_sum: f64,
    n: usize,
}

impl Sweep {
    fn new(width: usize) -> Self {
        Sweep { hit_sum: vec![0.0; width], rate_sum: vec![0.0; width], opt_sum: 0.0, n: 0 }
    }

    fn add(&mut self, r: &Scored, order: &[usize]) {
        let mut found = false;
        let mut best_rate = f64::NEG_INFINITY;
        for (j, &i) in order.iter().enumerate() {
            found |= i == r.best;
            best_rate = best_rate.max(r.rate(i));
            if found {
                self.hit_sum[j] += 1.0;
            }
            self.rate_sum[j] += best_rate;
        }
        self.opt_sum += r.rate(r.best);
        self.n += 1;
    }

    fn accuracy(&self, k: usize) -> Option<f64> {
        (self.n > 0).then(|| self.hit_sum[k - 1] / self.n as f64)
    }

    fn throughput(&self, k: usize) -> Option<f64> {
        (self.n > 0).then(|| self.rate_sum[k - 1] / self.opt_sum)
    }
}

impl MetricsReport {
    /// Evaluates every requested k in one ranking pass per record.
    pub fn compute(records: &[Scored], ks: &[usize]) -> Result<Self> {
        let first = records.first().ok_or_else(|| invalid_err!("evaluation set is empty"))?;
        let width = first.scores.len();
        for &k in ks {
            check_k(records, k)?;
        }
        let (mut all, mut los, mut nlos) = (Sweep::new(width), Sweep::new(width), Sweep::new(width));
        for r in records {
            if r.scores.len() != width {
                return Err(shape_err!("records have mixed widths {} and {width}", r.scores.len()));
            }
            let order = rank_indices(&r.scores)?;
            all.add(r, &order);
            if r.los {
                los.add(r, &order);
            } else {
                nlos.add(r, &order);
            }
        }
        let rows = ks
            .iter()
            .map(|&k| MetricsRow {
                k,
                accuracy: all.accuracy(k).unwrap_or(f64::NAN),
                throughput_ratio: all.throughput(k).unwrap_or(f64::NAN),
                accuracy_los: los.accuracy(k),
                accuracy_nlos: nlos.accuracy(k),
                throughput_los: los.throughput(k),
                throughput_nlos: nlos.throughput(k),
            })
            .collect();
        Ok(MetricsReport { samples: all.n, los_samples: los.n, nlos_samples: nlos.n, rows })
    }

    /// Every k from 1 to the number of beam pairs.
    pub fn full(records: &[Scored]) -> Result<Self> {
        let width = records.first().map_or(0, |r| r.scores.len());
        Self::compute(records, &(1..=width).collect::<Vec<_>>())
    }

    pub fn row(&self, k: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.row(k).map(|r| r.accuracy)
    }

    pub fn throughput(&self, k: usize) -> Option<f64> {
        self.row(k).map(|r| r.throughput_ratio)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
        w.write_record(METRICS_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                fmt_metric(Some(r.accuracy)),
                fmt_metric(Some(r.throughput_ratio)),
                fmt_metric(r.accuracy_los),
                fmt_metric(r.accuracy_nlos),
                fmt_metric(r.throughput_los),
                fmt_metric(r.throughput_nlos),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, self.to_csv()?.as_bytes())
    }
}

/// Fixed-precision metric, `NA` when undefined.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "NA".into(),
    }
}

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sample mean and the 95% normal-approximation half-width over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: Option<f64>,
    pub n: usize,
}

pub fn mean_ci95(values: &[f64]) -> Result<MeanCi> {
    let n = values.len();
    if n == 0 {
        return Err(invalid_err!("no values to aggregate"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z95 * (var / n as f64).sqrt()
    });
    Ok(MeanCi { mean, half_width, n })
}
