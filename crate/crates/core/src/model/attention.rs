//! Non-local attention over the spatial sites of a `[C,H,W]` feature map.
//!
//! `O_i = I_i + W_out · Σ_j f(I_i, I_j) ψ(I_j) / η_i`, where `f` is the
//! pairwise function of the configured variant. For the two Gaussian
//! variants the normalised weights are a row softmax of the logits; for the
//! dot variant they are the raw products divided by the number of key sites.

use super::config::{AttentionConfig, AttentionVariant, PoolPlacement};
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

fn conv1x1(tape: &mut Tape, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.conv2d(x, w, b, 1, 0)
}

/// `[C,H,W]` → `[HW, C]`: one row per spatial site.
fn sites(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    let m = tape.reshape(x, &[s[0], s[1] * s[2]])?;
    tape.transpose(m)
}

/// `[C,H,W]` → `[C, HW]`.
fn columns(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    tape.reshape(x, &[s[0], s[1] * s[2]])
}

pub fn nonlocal_forward(tape: &mut Tape, store: &ParamStore, x: Var, cfg: &AttentionConfig) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let keys = match cfg.placement {
        PoolPlacement::KeyValue if cfg.key_pool != [1, 1] => tape.maxpool2d_floor(x, cfg.key_pool[0], cfg.key_pool[1])?,
        _ => x,
    };
    let n_keys = {
        let s = tape.value(keys).shape();
        s[1] * s[2]
    };

    let (q, k) = match cfg.variant {
        AttentionVariant::EmbeddedGaussian => {
            let theta = conv1x1(tape, store, x, "attn.phi1")?;
            let phi = conv1x1(tape, store, keys, "attn.phi2")?;
            (sites(tape, theta)?, columns(tape, phi)?)
        }
        AttentionVariant::Gaussian | AttentionVariant::Dot => (sites(tape, x)?, columns(tape, keys)?),
    };
    let logits = tape.matmul(q, k)?;
    let weights = match cfg.variant {
        AttentionVariant::Dot => tape.scale(logits, 1.0 / n_keys as f64)?,
        _ => tape.softmax_rows(logits)?,
    };
    let g = conv1x1(tape, store, keys, "attn.psi")?;
    let v = sites(tape, g)?;
    let y = tape.matmul(weights, v)?;
    let yt = tape.transpose(y)?;
    let m = tape.value(yt).shape()[0];
    let y3 = tape.reshape(yt, &[m, h, w])?;
    let proj = conv1x1(tape, store, y3, "attn.out")?;
    tape.add(x, proj)
}
