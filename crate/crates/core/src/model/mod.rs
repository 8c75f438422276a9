//! The beam classifier: a strided conv stack over the occupancy grid, an
//! optional non-local attention block, and a dense head that also sees the
//! vehicle position.

mod attention;
mod checkpoint;
mod config;
mod cost;

pub use attention::nonlocal_forward;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray};
pub use config::{AttentionConfig, AttentionVariant, ConvSpec, ModelConfig, PoolPlacement, ShapePlan};
pub use cost::{count_params_flops, linear_cost, LayerCost};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// One network input: a flattened `rows × cols` grid and the vehicle
/// position already scaled to [0, 1]².
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub grid: Vec<f64>,
    pub veh_xy: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamClassifier {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Vehicle position scaled by the coverage-area extents.
pub fn normalize_xy(veh: [f64; 3], area: [f64; 2]) -> [f64; 2] {
    [veh[0] / area[0], veh[1] / area[1]]
}

impl BeamClassifier {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero; deterministic in
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let shapes = config.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(BeamClassifier { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub fn input_for(&self, grid: Vec<f64>, veh: [f64; 3]) -> ModelInput {
        ModelInput { grid, veh_xy: normalize_xy(veh, self.config.area) }
    }

    /// Records the forward pass and returns the 256-way probability vector.
    pub fn forward(&self, tape: &mut Tape, input: &ModelInput) -> Result<Var> {
        forward_with(&self.config, &self.params, tape, input)
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, input)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Pre-softmax scores.
pub fn logits_with(cfg: &ModelConfig, store: &ParamStore, tape: &mut Tape, input: &ModelInput) -> Result<Var> {
    let [rows, cols] = cfg.grid;
    if input.grid.len() != rows * cols {
        return Err(shape_err!("grid has {} cells, model expects {rows}×{cols}", input.grid.len()));
    }
    let mut h = tape.input(Tensor::new(vec![1, rows, cols], input.grid.clone())?);
    for (i, c) in cfg.convs.iter().enumerate() {
        let w = tape.param(store, &format!("conv{}.w", i + 1))?;
        let b = tape.param(store, &format!("conv{}.b", i + 1))?;
        let z = tape.conv2d(h, w, b, c.stride, c.padding)?;
        h = tape.relu(z)?;
    }
    h = match &cfg.attention {
        Some(a) if a.placement == PoolPlacement::Before => {
            let p = tape.maxpool2d_floor(h, cfg.pool[0], cfg.pool[1])?;
            nonlocal_forward(tape, store, p, a)?
        }
        Some(a) => {
            let o = nonlocal_forward(tape, store, h, a)?;
            tape.maxpool2d_floor(o, cfg.pool[0], cfg.pool[1])?
        }
        None => tape.maxpool2d_floor(h, cfg.pool[0], cfg.pool[1])?,
    };
    let w = tape.param(store, "conv6.w")?;
    let b = tape.param(store, "conv6.b")?;
    let z = tape.conv2d(h, w, b, cfg.conv6.stride, cfg.conv6.padding)?;
    h = tape.relu(z)?;
    let n = tape.value(h).len();
    h = tape.reshape(h, &[n])?;

    let layers = cfg.num_linear();
    for i in 0..layers {
        let w = tape.param(store, &format!("fc{}.w", i + 1))?;
        let b = tape.param(store, &format!("fc{}.b", i + 1))?;
        h = tape.linear(h, w, b)?;
        if i + 1 < layers {
            h = tape.relu(h)?;
        }
        if i == 0 {
            let xy = tape.input(Tensor::from_vec(input.veh_xy.to_vec()));
            h = tape.concat(h, xy)?;
        }
    }
    Ok(h)
}

pub fn forward_with(cfg: &ModelConfig, store: &ParamStore, tape: &mut Tape, input: &ModelInput) -> Result<Var> {
    let z = logits_with(cfg, store, tape, input)?;
    tape.softmax(z)
}
