//! Synthetic street-canyon scenes: a fixed curb-side BS, two rows of
//! building blocks, and lane traffic containing the target vehicle.
//!
//! Coordinates are metres with `x` along the street, `y` across it and `z`
//! up. The coverage area is `[0, length] × [0, width]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Aabb, BoxKind, Point3};
use crate::error::{config_err, Result};

/// Inclusive range used for every sampled scene quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Range { min, max }
    }
}

impl Range<f64> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

impl Range<usize> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

/// Footprint and height of one vehicle class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Along-street × cross-street extent of the coverage area.
    pub area: [f64; 2],
    pub bs_position: Point3,
    /// Building blocks per street side.
    pub buildings_per_side: Range<usize>,
    pub building_length: Range<f64>,
    pub building_gap: Range<f64>,
    pub building_height: Range<f64>,
    /// How far each side's facades sit inside the coverage area.
    pub facade_setback: Range<f64>,
    /// How far building boxes extend behind their facade.
    pub building_depth: f64,
    /// Total vehicle count, target included.
    pub vehicles: Range<usize>,
    pub lanes: Vec<f64>,
    pub car: VehicleDims,
    pub truck: VehicleDims,
    pub truck_fraction: f64,
    /// Allowed centre positions of the target along the street.
    pub target_x: Range<f64>,
    /// Lane indices the target may occupy.
    pub target_lanes: Vec<usize>,
    /// Antenna (and LIDAR) height above the target's roof.
    pub antenna_mast: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            area: [200.0, 40.0],
            bs_position: [100.0, 6.5, 8.0],
            buildings_per_side: Range::new(5, 8),
            building_length: Range::new(15.0, 40.0),
            building_gap: Range::new(3.0, 10.0),
            building_height: Range::new(8.0, 30.0),
            facade_setback: Range::new(1.0, 4.0),
            building_depth: 20.0,
            vehicles: Range::new(20, 40),
            lanes: vec![11.0, 17.0, 23.0, 29.0],
            car: VehicleDims {
                length: 4.5,
                width: 1.8,
                height: 1.5,
            },
            truck: VehicleDims {
                length: 10.0,
                width: 2.5,
                height: 4.0,
            },
            truck_fraction: 0.6,
            target_x: Range::new(5.0, 195.0),
            target_lanes: vec![2, 3],
            antenna_mast: 0.1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [len, wid] = self.area;
        if !(len > 0.0 && wid > 0.0) {
            return Err(config_err!("area extents must be positive, got {:?}", self.area));
        }
        for (name, r) in [
            ("building_length", self.building_length),
            ("building_gap", self.building_gap),
            ("building_height", self.building_height),
            ("facade_setback", self.facade_setback),
            ("target_x", self.target_x),
        ] {
            if !r.valid() {
                return Err(config_err!("{name} range [{}, {}] is invalid", r.min, r.max));
            }
        }
        if self.building_length.min <= 0.0 || self.building_height.min <= 0.0 {
            return Err(config_err!("building extents must be positive"));
        }
        if self.buildings_per_side.min > self.buildings_per_side.max {
            return Err(config_err!("buildings_per_side range is empty"));
        }
        if self.vehicles.min < 1 || self.vehicles.min > self.vehicles.max {
            return Err(config_err!(
                "vehicles range must include the target (min ≥ 1), got [{}, {}]",
                self.vehicles.min,
                self.vehicles.max
            ));
        }
        for d in [self.car, self.truck] {
            if !(d.length > 0.0 && d.width > 0.0 && d.height > 0.0) {
                return Err(config_err!("vehicle dimensions must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.truck_fraction) {
            return Err(config_err!("truck_fraction must lie in [0, 1]"));
        }
        if self.lanes.is_empty() || self.target_lanes.is_empty() {
            return Err(config_err!("at least one lane and one target lane are required"));
        }
        if let Some(&l) = self.target_lanes.iter().find(|&&l| l >= self.lanes.len()) {
            return Err(config_err!("target lane {l} does not exist"));
        }
        let half_len = self.car.length / 2.0;
        let half_w = self.car.width / 2.0;
        let lo = self.target_x.min.max(half_len);
        let hi = self.target_x.max.min(len - half_len);
        if lo > hi {
            return Err(config_err!(
                "target region [{}, {}] leaves no room for a {} m vehicle inside the area",
                self.target_x.min,
                self.target_x.max,
                self.car.length
            ));
        }
        for &l in &self.target_lanes {
            let y = self.lanes[l];
            if y - half_w < 0.0 || y + half_w > wid {
                return Err(config_err!("target lane at y={y} is outside the coverage area"));
            }
        }
        let bs = self.bs_position;
        if !(bs[0] >= 0.0 && bs[0] <= len && bs[1] >= 0.0 && bs[1] <= wid && bs[2] > 0.0) {
            return Err(config_err!("BS position {bs:?} is outside the coverage area"));
        }
        Ok(())
    }
}

/// One coverage-area snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs: Point3,
    /// Buildings followed by vehicles; the target is `obstacles[target]`.
    pub obstacles: Vec<Aabb>,
    pub target: usize,
    pub antenna: Point3,
    pub area: [f64; 2],
}

impl Scene {
    pub fn target_box(&self) -> &Aabb {
        &self.obstacles[self.target]
    }

    pub fn buildings(&self) -> impl Iterator<Item = (usize, &Aabb)> {
        self.obstacles
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BoxKind::Building)
    }

    /// Scene with a single target vehicle and no other geometry; handy for
    /// closed-form checks.
    pub fn open(bs: Point3, target: Aabb, antenna: Point3, area: [f64; 2]) -> Self {
        Scene {
            bs,
            obstacles: vec![target],
            target: 0,
            antenna,
            area,
        }
    }
}

/// Per-scene generator keyed by `(config.seed, seed)`.
pub fn scene_rng(config_seed: u64, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config_seed);
    rng.set_stream(seed);
    rng
}

pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = scene_rng(config.seed, seed);
    let [len, wid] = config.area;
    let mut obstacles = Vec::new();

    // Two rows of blocks; south facades face +y, north facades face −y.
    for side in 0..2 {
        let n = config.buildings_per_side.sample(&mut rng);
        if n == 0 {
            continue;
        }
        let setback = config.facade_setback.sample(&mut rng);
        let mut x = -10.0 + config.building_gap.sample(&mut rng) * rng.gen::<f64>();
        for _ in 0..n {
            if x >= len + 10.0 {
                break;
            }
            let l = config.building_length.sample(&mut rng);
            let h = config.building_height.sample(&mut rng);
            let x1 = (x + l).min(len + 10.0);
            let (y0, y1) = if side == 0 {
                (setback - config.building_depth, setback)
            } else {
                (wid - setback, wid - setback + config.building_depth)
            };
            obstacles.push(Aabb::new([x, y0, 0.0], [x1, y1, h], BoxKind::Building));
            x = x1 + config.building_gap.sample(&mut rng);
        }
    }

    // Target first, then traffic with per-lane overlap rejection.
    let target_lane = config.target_lanes[rng.gen_range(0..config.target_lanes.len())];
    let half = config.car.length / 2.0;
    let tx = Range::new(
        config.target_x.min.max(half),
        config.target_x.max.min(len - half),
    )
    .sample(&mut rng);
    let ty = config.lanes[target_lane];
    let target_box = Aabb::centered(tx, ty, config.car.length, config.car.width, config.car.height, BoxKind::Vehicle);
    let target = obstacles.len();
    obstacles.push(target_box);
    let mut occupied: Vec<(usize, f64, f64)> = vec![(target_lane, tx - half, tx + half)];

    let n_vehicles = config.vehicles.sample(&mut rng);
    for _ in 1..n_vehicles {
        let dims = if rng.gen::<f64>() < config.truck_fraction {
            config.truck
        } else {
            config.car
        };
        for _attempt in 0..50 {
            let lane = rng.gen_range(0..config.lanes.len());
            let cx = rng.gen_range(-5.0..=len + 5.0);
            let (x0, x1) = (cx - dims.length / 2.0, cx + dims.length / 2.0);
            let clash = occupied
                .iter()
                .any(|&(l, a, b)| l == lane && x0 < b + 1.0 && x1 > a - 1.0);
            if !clash {
                occupied.push((lane, x0, x1));
                obstacles.push(Aabb::centered(cx, config.lanes[lane], dims.length, dims.width, dims.height, BoxKind::Vehicle));
                break;
            }
        }
    }

    let bs = config.bs_position;
    if let Some(b) = obstacles.iter().find(|b| b.contains(bs)) {
        return Err(config_err!("BS at {bs:?} falls inside obstacle {b:?}"));
    }
    let antenna = [tx, ty, config.car.height + config.antenna_mast];
    Ok(Scene {
        bs,
        obstacles,
        target,
        antenna,
        area: config.area,
    })
}
