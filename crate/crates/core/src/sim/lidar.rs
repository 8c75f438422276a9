use serde::{Deserialize, Serialize};

use super::geometry::{add_scaled, Point3};
use super::scene::Scene;

/// Spinning LIDAR: full azimuth sweep at a few fixed elevation channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub azimuth_step_deg: f64,
    pub elevations_deg: Vec<f64>,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            azimuth_step_deg: 2.0,
            elevations_deg: vec![-6.0, -2.0, 1.0, 4.0],
            max_range: 120.0,
        }
    }
}

impl LidarSpec {
    pub fn directions(&self) -> Vec<Point3> {
        let n_az = (360.0 / self.azimuth_step_deg).round().max(1.0) as usize;
        let mut dirs = Vec::with_capacity(n_az * self.elevations_deg.len());
        for &el in &self.elevations_deg {
            let (se, ce) = el.to_radians().sin_cos();
            for a in 0..n_az {
                let (sa, ca) = (a as f64 * self.azimuth_step_deg).to_radians().sin_cos();
                dirs.push([ce * ca, ce * sa, se]);
            }
        }
        dirs
    }
}

/// Casts every ray from the target's antenna and keeps the first obstacle
/// hit within range. The target's own body is invisible to its sensor.
pub fn cast_lidar(scene: &Scene, spec: &LidarSpec) -> Vec<Point3> {
    let origin = scene.antenna;
    let mut cloud = Vec::new();
    for dir in spec.directions() {
        let mut best = f64::INFINITY;
        for (i, b) in scene.obstacles.iter().enumerate() {
            if i == scene.target {
                continue;
            }
            if let Some(t) = b.ray_hit(origin, dir) {
                if t < best {
                    best = t;
                }
            }
        }
        if best <= spec.max_range {
            cloud.push(add_scaled(origin, dir, best));
        }
    }
    cloud
}
