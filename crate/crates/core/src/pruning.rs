//! Magnitude pruning: global unstructured weight masks, per-layer
//! structured unit masks, and the iterative prune/fine-tune loop.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{config_err, invalid_err, shape_err, Error, Result};
use crate::io;
use crate::model::{BeamClassifier, NamedArray};
use crate::objective::{fmt_metric, MetricsReport, HEADLINE_KS};
use crate::tensor::ParamStore;
use crate::trainer::{evaluate, train_from, Sample, TrainConfig};

pub const SPARSITY_HEADER: [&str; 8] = ["ratio", "flavor", "A1", "A5", "A10", "T1", "T5", "T10"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneFlavor {
    Unstructured,
    Structured,
}

impl PruneFlavor {
    pub const ALL: [PruneFlavor; 2] = [PruneFlavor::Unstructured, PruneFlavor::Structured];

    pub fn as_str(self) -> &'static str {
        match self {
            PruneFlavor::Unstructured => "unstructured",
            PruneFlavor::Structured => "structured",
        }
    }
}

impl fmt::Display for PruneFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err!("unknown pruning flavor `{s}` (unstructured, structured)"))
    }
}

/// Keep flags for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEntry {
    pub name: String,
    pub keep: Vec<bool>,
}

/// Binary masks over the prunable weights (and, for structured pruning, the
/// biases of the same layers). `keep[i] == false` pins entry `i` to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    pub flavor: PruneFlavor,
    pub entries: Vec<MaskEntry>,
}

/// Weight tensors eligible for pruning: every `.w` except the output layer.
pub fn prunable_weights(model: &BeamClassifier) -> Vec<String> {
    let output = format!("fc{}.w", model.config.num_linear());
    model
        .params
        .names()
        .filter(|n| n.ends_with(".w") && *n != output)
        .map(str::to_string)
        .collect()
}

fn bias_of(weight: &str) -> String {
    format!("{}.b", weight.trim_end_matches(".w"))
}

impl PruneMask {
    /// All-ones mask.
    pub fn dense(model: &BeamClassifier, flavor: PruneFlavor) -> Self {
        let mut entries = Vec::new();
        for name in prunable_weights(model) {
            let n = model.params.get(&name).expect("listed name").len();
            entries.push(MaskEntry { name: name.clone(), keep: vec![true; n] });
            if flavor == PruneFlavor::Structured {
                let b = bias_of(&name);
                let nb = model.params.get(&b).expect("every weight has a bias").len();
                entries.push(MaskEntry { name: b, keep: vec![true; nb] });
            }
        }
        PruneMask { flavor, entries }
    }

    pub fn get(&self, name: &str) -> Option<&MaskEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn weight_entries(&self) -> impl Iterator<Item = &MaskEntry> {
        self.entries.iter().filter(|e| e.name.ends_with(".w"))
    }

    pub fn total_weights(&self) -> usize {
        self.weight_entries().map(|e| e.keep.len()).sum()
    }

    pub fn pruned_weights(&self) -> usize {
        self.weight_entries().map(|e| e.keep.iter().filter(|k| !**k).count()).sum()
    }

    /// Fraction of the prunable weights removed.
    pub fn ratio(&self) -> f64 {
        self.pruned_weights() as f64 / self.total_weights().max(1) as f64
    }

    /// `(tensor, remaining, total)` per weight tensor.
    pub fn layer_counts(&self) -> Vec<(String, usize, usize)> {
        self.weight_entries()
            .map(|e| (e.name.clone(), e.keep.iter().filter(|k| **k).count(), e.keep.len()))
            .collect()
    }

    fn check(&self, store: &ParamStore) -> Result<()> {
        for e in &self.entries {
            let t = store
                .get(&e.name)
                .ok_or_else(|| invalid_err!("mask names unknown tensor `{}`", e.name))?;
            if t.len() != e.keep.len() {
                return Err(shape_err!("mask for `{}` has {} entries, tensor {}", e.name, e.keep.len(), t.len()));
            }
        }
        Ok(())
    }

    /// Zeroes masked values.
    pub fn apply(&self, store: &mut ParamStore) -> Result<()> {
        self.check(store)?;
        for e in &self.entries {
            let t = store.get_mut(&e.name).expect("checked");
            for (w, &k) in t.data_mut().iter_mut().zip(&e.keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }

    /// Zeroes masked gradients.
    pub fn mask_grads(&self, store: &mut ParamStore) {
        for e in &self.entries {
            if let Some(g) = store.get_mut(&e.name).and_then(|t| t.grad.as_mut()) {
                g.iter_mut().zip(&e.keep).filter(|(_, k)| !**k).for_each(|(v, _)| *v = 0.0);
            }
        }
    }

    /// Zeroes masked values and every optimizer slot at those positions.
    pub fn enforce(&self, store: &mut ParamStore) {
        for e in &self.entries {
            let Some(id) = store.id(&e.name) else { continue };
            let p = store.by_id_mut(id);
            for (i, _) in e.keep.iter().enumerate().filter(|(_, k)| !**k) {
                p.tensor.data_mut()[i] = 0.0;
                for s in &mut p.slots {
                    s[i] = 0.0;
                }
            }
        }
    }

    pub fn to_arrays(&self, store: &ParamStore) -> Vec<NamedArray> {
        self.entries
            .iter()
            .map(|e| NamedArray {
                name: e.name.clone(),
                shape: store.get(&e.name).map_or(vec![e.keep.len()], |t| t.shape().to_vec()),
                data: e.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
            })
            .collect()
    }

    pub fn from_arrays(flavor: PruneFlavor, arrays: &[NamedArray]) -> Result<Self> {
        let entries = arrays
            .iter()
            .map(|a| {
                if a.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(invalid_err!("mask `{}` holds values other than 0 and 1", a.name));
                }
                Ok(MaskEntry { name: a.name.clone(), keep: a.data.iter().map(|&v| v == 1.0).collect() })
            })
            .collect::<Result<_>>()?;
        Ok(PruneMask { flavor, entries })
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(config_err!("pruning ratio must lie in [0, 1), got {ratio}"));
    }
    Ok(())
}

/// Positions of the `round(ratio · n)` smallest scores, ties to the lowest
/// position, in ascending score order.
pub fn lowest_fraction(scores: &[f64], ratio: f64) -> Vec<usize> {
    let count = (ratio * scores.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(count.min(scores.len()));
    idx
}

fn start_mask(model: &BeamClassifier, current: Option<&PruneMask>, flavor: PruneFlavor) -> Result<PruneMask> {
    match current {
        Some(m) if m.flavor != flavor => Err(config_err!("cannot extend a {} mask with {flavor} pruning", m.flavor)),
        Some(m) => {
            m.check(&model.params)?;
            Ok(m.clone())
        }
        None => Ok(PruneMask::dense(model, flavor)),
    }
}

/// Masks `ratio` of the still-unmasked prunable weights with the smallest
/// `|w|`, ranked globally; ties go to the lowest flat index.
pub fn prune_unstructured(model: &BeamClassifier, current: Option<&PruneMask>, ratio: f64) -> Result<PruneMask> {
    check_ratio(ratio)?;
    let mut mask = start_mask(model, current, PruneFlavor::Unstructured)?;
    let mut live: Vec<(usize, usize)> = Vec::new();
    let mut mags = Vec::new();
    for (ei, e) in mask.entries.iter().enumerate() {
        let w = model.params.get(&e.name).expect("checked").data();
        for (i, _) in e.keep.iter().enumerate().filter(|(_, k)| **k) {
            live.push((ei, i));
            mags.push(w[i].abs());
        }
    }
    for j in lowest_fraction(&mags, ratio) {
        let (ei, i) = live[j];
        mask.entries[ei].keep[i] = false;
    }
    Ok(mask)
}

/// Within each prunable layer, masks `ratio` of the live output units with
/// the smallest mean `|w|`, along with their biases.
pub fn prune_structured(model: &BeamClassifier, current: Option<&PruneMask>, ratio: f64) -> Result<PruneMask> {
    check_ratio(ratio)?;
    let mut mask = start_mask(model, current, PruneFlavor::Structured)?;
    for name in prunable_weights(model) {
        let t = model.params.get(&name).expect("listed name");
        let units = t.shape()[0];
        let fan = t.len() / units;
        let wi = mask.entries.iter().position(|e| e.name == name).expect("dense mask covers it");
        let live: Vec<usize> = (0..units).filter(|&u| mask.entries[wi].keep[u * fan]).collect();
        let means: Vec<f64> = live
            .iter()
            .map(|&u| t.data()[u * fan..(u + 1) * fan].iter().map(|v| v.abs()).sum::<f64>() / fan as f64)
            .collect();
        let drop = lowest_fraction(&means, ratio);
        if !live.is_empty() && drop.len() >= live.len() {
            return Err(invalid_err!("pruning ratio {ratio} would remove every unit of `{name}`"));
        }
        let bi = mask.entries.iter().position(|e| e.name == bias_of(&name)).expect("bias entry");
        for u in drop.into_iter().map(|j| live[j]) {
            mask.entries[wi].keep[u * fan..(u + 1) * fan].iter_mut().for_each(|k| *k = false);
            mask.entries[bi].keep[u] = false;
        }
    }
    Ok(mask)
}

pub fn prune(model: &BeamClassifier, current: Option<&PruneMask>, flavor: PruneFlavor, ratio: f64) -> Result<PruneMask> {
    match flavor {
        PruneFlavor::Unstructured => prune_unstructured(model, current, ratio),
        PruneFlavor::Structured => prune_structured(model, current, ratio),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub ratio: f64,
    pub flavor: PruneFlavor,
    /// `(tensor, remaining, total)` per weight tensor.
    pub layers: Vec<(String, usize, usize)>,
    pub metrics: MetricsReport,
}

impl SparsityReport {
    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![format!("{:.6}", self.ratio), self.flavor.to_string()];
        row.extend(HEADLINE_KS.iter().map(|&k| fmt_metric(self.metrics.accuracy(k))));
        row.extend(HEADLINE_KS.iter().map(|&k| fmt_metric(self.metrics.throughput(k))));
        row
    }
}

pub fn sparsity_csv(reports: &[SparsityReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
    w.write_record(SPARSITY_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_sparsity_csv(path: &Path, reports: &[SparsityReport]) -> Result<()> {
    io::atomic_write(path, sparsity_csv(reports)?.as_bytes())
}

/// Each step prunes `steps[i]` of the remaining weights (or units), then
/// fine-tunes under the mask and evaluates. The first report is the
/// unpruned model.
pub fn iterative_prune_finetune(
    model: BeamClassifier,
    flavor: PruneFlavor,
    steps: &[f64],
    finetune: &TrainConfig,
    seed: u64,
    train: &[Sample],
    test: &[Sample],
) -> Result<(BeamClassifier, PruneMask, Vec<SparsityReport>)> {
    for &r in steps {
        check_ratio(r)?;
    }
    let mut model = model;
    let mut mask = PruneMask::dense(&model, flavor);
    let mut reports = vec![SparsityReport {
        ratio: 0.0,
        flavor,
        layers: mask.layer_counts(),
        metrics: evaluate(&model, test, &HEADLINE_KS)?,
    }];
    for (i, &r) in steps.iter().enumerate() {
        mask = prune(&model, Some(&mask), flavor, r)?;
        mask.apply(&mut model.params)?;
        let step_seed = seed.wrapping_add(1 + i as u64);
        let (tuned, _) = train_from(model, finetune, step_seed, train, None, Some(&mask))?;
        model = tuned;
        log::info!("{flavor} step {}: ratio {:.4}", i + 1, mask.ratio());
        reports.push(SparsityReport {
            ratio: mask.ratio(),
            flavor,
            layers: mask.layer_counts(),
            metrics: evaluate(&model, test, &HEADLINE_KS)?,
        });
    }
    Ok((model, mask, reports))
}
