//! LOS/NLOS curriculum: per-epoch rejection sampling of the harder class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, invalid_err, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurriculumMode {
    #[default]
    Curriculum,
    AntiCurriculum,
    Standard,
}

impl CurriculumMode {
    pub const ALL: [CurriculumMode; 3] =
        [CurriculumMode::Curriculum, CurriculumMode::Standard, CurriculumMode::AntiCurriculum];

    pub fn as_str(self) -> &'static str {
        match self {
            CurriculumMode::Curriculum => "curriculum",
            CurriculumMode::AntiCurriculum => "anti-curriculum",
            CurriculumMode::Standard => "standard",
        }
    }
}

impl fmt::Display for CurriculumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurriculumMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err!("unknown curriculum mode `{s}` (curriculum, anti-curriculum, standard)"))
    }
}

/// Stage `s` covers epochs `[s·stage_len, (s+1)·stage_len)` and rejects the
/// hard class with probability `rejection[s]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub mode: CurriculumMode,
    pub epochs: usize,
    pub stage_len: usize,
    pub rejection: Vec<f64>,
    /// NLOS fraction of the training set, recorded when known.
    pub nlos_fraction: Option<f64>,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            mode: CurriculumMode::Curriculum,
            epochs: 45,
            stage_len: 9,
            rejection: vec![1.0, 0.8, 0.6, 0.4, 0.0],
            nlos_fraction: None,
        }
    }
}

impl CurriculumSchedule {
    pub fn with_mode(mode: CurriculumMode) -> Self {
        CurriculumSchedule { mode, ..Self::default() }
    }

    /// Same stage sequence with `stage_len` epochs per stage.
    pub fn compressed(mut self, stage_len: usize) -> Self {
        self.stage_len = stage_len;
        self.epochs = stage_len * self.rejection.len();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_len == 0 || self.rejection.is_empty() {
            return Err(config_err!("curriculum needs at least one stage of at least one epoch"));
        }
        if self.rejection.len() * self.stage_len != self.epochs {
            return Err(config_err!(
                "{} stages × {} epochs per stage ≠ {} total epochs",
                self.rejection.len(),
                self.stage_len,
                self.epochs
            ));
        }
        if let Some(p) = self.rejection.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(config_err!("rejection probability {p} outside [0, 1]"));
        }
        if let Some(q) = self.nlos_fraction {
            if !(0.0..=1.0).contains(&q) {
                return Err(config_err!("NLOS fraction {q} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

pub fn pacing_lambda(epoch: usize, schedule: &CurriculumSchedule) -> Result<f64> {
    schedule.validate()?;
    if epoch >= schedule.epochs {
        return Err(invalid_err!("epoch {epoch} outside schedule of {} epochs", schedule.epochs));
    }
    Ok(match schedule.mode {
        CurriculumMode::Standard => 1.0,
        _ => 1.0 - schedule.rejection[epoch / schedule.stage_len],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    pub lambda: f64,
    /// Admitted positions into the dataset, ascending.
    pub ids: Vec<usize>,
}

/// Keeps each record of the rejected class with probability `lambda`. The
/// draw stream is keyed by `(seed, epoch)`.
pub fn sample_epoch_dataset(los: &[bool], lambda: f64, mode: CurriculumMode, seed: u64, epoch: usize) -> EpochPlan {
    let has_both = los.iter().any(|&l| l) && los.iter().any(|&l| !l);
    let reject_los = match mode {
        CurriculumMode::Standard => None,
        CurriculumMode::Curriculum => Some(false),
        CurriculumMode::AntiCurriculum => Some(true),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let ids = los
        .iter()
        .enumerate()
        .filter(|&(_, &l)| match reject_los {
            Some(target) if has_both && l == target => rng.gen::<f64>() < lambda,
            _ => true,
        })
        .map(|(i, _)| i)
        .collect();
    EpochPlan { epoch, lambda, ids }
}

pub fn plan_epoch(schedule: &CurriculumSchedule, los: &[bool], seed: u64, epoch: usize) -> Result<EpochPlan> {
    let lambda = pacing_lambda(epoch, schedule)?;
    Ok(sample_epoch_dataset(los, lambda, schedule.mode, seed, epoch))
}

/// NLOS share of an epoch under curriculum mode: `qλ / ((1−q) + qλ)`.
pub fn expected_nlos_fraction(q: f64, lambda: f64) -> f64 {
    let kept = (1.0 - q) + q * lambda;
    if kept == 0.0 {
        0.0
    } else {
        q * lambda / kept
    }
}
