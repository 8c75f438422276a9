//! Line-of-sight plus single-bounce specular paths via the image method.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::geometry::{add_scaled, dist, sub, Aabb, Point3};
use super::scene::Scene;
use crate::error::{config_err, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub subcarriers: usize,
    pub wavelength: f64,
    pub reflection_loss_db: f64,
    pub subcarrier_spacing: f64,
    /// Unit vector of the BS array axis.
    pub bs_array_axis: Point3,
    /// Unit vector of the vehicle array axis.
    pub vehicle_array_axis: Point3,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            subcarriers: 4,
            wavelength: SPEED_OF_LIGHT / 60e9,
            reflection_loss_db: 6.0,
            subcarrier_spacing: 60e6,
            bs_array_axis: [1.0, 0.0, 0.0],
            vehicle_array_axis: [1.0, 0.0, 0.0],
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 {
            return Err(config_err!("subcarriers must be at least 1"));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(config_err!("wavelength must be positive, got {}", self.wavelength));
        }
        if !(self.reflection_loss_db >= 0.0) || !self.subcarrier_spacing.is_finite() {
            return Err(config_err!("reflection loss must be ≥ 0 dB and spacing finite"));
        }
        for axis in [self.bs_array_axis, self.vehicle_array_axis] {
            if (super::geometry::norm(axis) - 1.0).abs() > 1e-9 {
                return Err(config_err!("array axes must be unit vectors, got {axis:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    /// Angle between the departure direction and the BS array axis (rad).
    pub aod: f64,
    /// Angle between the arrival direction and the vehicle array axis (rad).
    pub aoa: f64,
    pub delay: f64,
    pub length: f64,
    pub bounces: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathList {
    pub paths: Vec<Path>,
    pub los: bool,
}

impl PathList {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

fn angle_to_axis(dir: Point3, axis: Point3) -> f64 {
    let n = super::geometry::norm(dir);
    let c = (dir[0] * axis[0] + dir[1] * axis[1] + dir[2] * axis[2]) / n;
    c.clamp(-1.0, 1.0).acos()
}

fn make_path(
    bs: Point3,
    first_hop: Point3,
    last_hop: Point3,
    antenna: Point3,
    length: f64,
    bounces: u32,
    cfg: &ChannelConfig,
) -> Path {
    let amp = cfg.wavelength / (4.0 * PI * length)
        * 10f64.powf(-cfg.reflection_loss_db * bounces as f64 / 20.0);
    let phase = -2.0 * PI * length / cfg.wavelength;
    Path {
        gain: Complex64::from_polar(amp, phase),
        aod: angle_to_axis(sub(first_hop, bs), cfg.bs_array_axis),
        aoa: angle_to_axis(sub(last_hop, antenna), cfg.vehicle_array_axis),
        delay: length / SPEED_OF_LIGHT,
        length,
        bounces,
    }
}

fn segment_clear(scene: &Scene, a: Point3, b: Point3, skip: Option<usize>) -> bool {
    scene
        .obstacles
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != scene.target && Some(i) != skip)
        .all(|(_, o)| !o.blocks_segment(a, b))
}

/// True iff the straight BS→antenna segment crosses no obstacle.
pub fn line_of_sight(scene: &Scene) -> bool {
    segment_clear(scene, scene.bs, scene.antenna, None)
}

/// Vertical face of a box: `axis` is 0 (x = const) or 1 (y = const),
/// `outward` is the sign of its normal.
struct Facade {
    axis: usize,
    coord: f64,
    outward: f64,
}

fn facades(b: &Aabb) -> [Facade; 4] {
    [
        Facade { axis: 0, coord: b.min[0], outward: -1.0 },
        Facade { axis: 0, coord: b.max[0], outward: 1.0 },
        Facade { axis: 1, coord: b.min[1], outward: -1.0 },
        Facade { axis: 1, coord: b.max[1], outward: 1.0 },
    ]
}

/// Specular reflection point of the BS→antenna route off one facade, if
/// the mirror-image construction lands on the face.
fn reflection_point(b: &Aabb, f: &Facade, bs: Point3, antenna: Point3) -> Option<(Point3, f64)> {
    let k = f.axis;
    if (bs[k] - f.coord) * f.outward <= 0.0 || (antenna[k] - f.coord) * f.outward <= 0.0 {
        return None;
    }
    let mut image = bs;
    image[k] = 2.0 * f.coord - bs[k];
    let d = sub(antenna, image);
    let t = (f.coord - image[k]) / d[k];
    let p = add_scaled(image, d, t);
    let other = 1 - k;
    let on_face = p[other] >= b.min[other]
        && p[other] <= b.max[other]
        && p[2] >= b.min[2]
        && p[2] <= b.max[2];
    on_face.then(|| (p, dist(image, antenna)))
}

pub fn trace_paths(scene: &Scene, cfg: &ChannelConfig) -> PathList {
    let (bs, ant) = (scene.bs, scene.antenna);
    let mut paths = Vec::new();
    let los = line_of_sight(scene);
    if los {
        paths.push(make_path(bs, ant, bs, ant, dist(bs, ant), 0, cfg));
    }
    for (bi, b) in scene.buildings() {
        for f in facades(b) {
            let Some((p, length)) = reflection_point(b, &f, bs, ant) else {
                continue;
            };
            if segment_clear(scene, bs, p, Some(bi)) && segment_clear(scene, p, ant, Some(bi)) {
                paths.push(make_path(bs, p, p, ant, length, 1, cfg));
            }
        }
    }
    PathList { paths, los }
}
