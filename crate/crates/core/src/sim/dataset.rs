use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::channel::{best_beam, channel_responses, flatten, gain_matrix, Codebook, Role, RX_BEAMS, TX_BEAMS};
use super::geometry::Point3;
use super::lidar::{cast_lidar, LidarSpec};
use super::paths::{trace_paths, ChannelConfig};
use super::scene::{generate_scene, SceneConfig};
use crate::error::{invalid_err, Result};
use crate::io;

/// One labelled sample as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: u64,
    pub cloud: Vec<Point3>,
    pub veh: Point3,
    pub bs: Point3,
    pub los: bool,
    pub y: Vec<f64>,
    pub best: usize,
    pub degenerate: bool,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.y.len() != TX_BEAMS * RX_BEAMS {
            return Err(invalid_err!("record {}: y has {} entries, expected {}", self.id, self.y.len(), TX_BEAMS * RX_BEAMS));
        }
        if self.y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid_err!("record {}: gains must be finite and nonnegative", self.id));
        }
        if self.best >= self.y.len() {
            return Err(invalid_err!("record {}: best index {} out of range", self.id, self.best));
        }
        Ok(())
    }
}

/// Everything needed to synthesise a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub scene: SceneConfig,
    pub lidar: LidarSpec,
    pub channel: ChannelConfig,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.channel.validate()
    }
}

/// Builds record `id` from scene seed `id`.
pub fn generate_record(cfg: &GenConfig, id: u64, ct: &Codebook, cr: &Codebook) -> Result<DatasetRecord> {
    let scene = generate_scene(&cfg.scene, id)?;
    let cloud = cast_lidar(&scene, &cfg.lidar);
    let paths = trace_paths(&scene, &cfg.channel);
    let h = channel_responses(&paths, &cfg.channel, ct.elements, cr.elements);
    let g = gain_matrix(&h, ct, cr)?;
    let (best, flat_zero) = best_beam(&g)?;
    Ok(DatasetRecord {
        id,
        cloud,
        veh: scene.antenna,
        bs: scene.bs,
        los: paths.los,
        y: flatten(&g),
        best,
        degenerate: paths.is_empty() || flat_zero,
    })
}

/// Records for scene ids `first..first + count`, in id order.
pub fn generate_dataset(cfg: &GenConfig, first: u64, count: usize) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    let ct = Codebook::dft(Role::Transmit, TX_BEAMS);
    let cr = Codebook::dft(Role::Receive, RX_BEAMS);
    (first..first + count as u64)
        .map(|id| generate_record(cfg, id, &ct, &cr))
        .collect()
}

/// Summary written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenes: usize,
    pub first_id: u64,
    pub nlos_fraction: f64,
    pub nlos: usize,
    pub degenerate: usize,
    pub mean_cloud_points: f64,
    pub config: GenConfig,
}

impl DatasetMeta {
    pub fn summarize(records: &[DatasetRecord], first_id: u64, config: &GenConfig) -> Self {
        let n = records.len();
        let nlos = records.iter().filter(|r| !r.los).count();
        let pts: usize = records.iter().map(|r| r.cloud.len()).sum();
        DatasetMeta {
            scenes: n,
            first_id,
            nlos_fraction: if n == 0 { 0.0 } else { nlos as f64 / n as f64 },
            nlos,
            degenerate: records.iter().filter(|r| r.degenerate).count(),
            mean_cloud_points: if n == 0 { 0.0 } else { pts as f64 / n as f64 },
            config: config.clone(),
        }
    }
}

/// `data.jsonl` → `data.meta.json`.
pub fn meta_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    io::write_jsonl(path, records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let records: Vec<DatasetRecord> = io::read_jsonl(path)?;
    for r in &records {
        r.validate().map_err(|e| crate::Error::parse(path, e))?;
    }
    Ok(records)
}
