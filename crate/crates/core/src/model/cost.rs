//! Parameter and FLOP enumeration by walking layer shapes.
//!
//! Counting rules: a multiply-accumulate is 2 FLOPs, a bias add 1 per
//! output, ReLU 1 per element, softmax 3 per element (exp, sum, divide),
//! max pooling `window − 1` comparisons per output, the residual add and
//! the dot-variant scaling 1 per element. Reshapes and transposes are free.

use super::config::{AttentionVariant, ModelConfig};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: usize,
    pub flops: u64,
}

fn conv_cost(name: &str, cin: usize, out: [usize; 3], k: usize) -> LayerCost {
    let outputs = (out[0] * out[1] * out[2]) as u64;
    let macs = outputs * (cin * k * k) as u64;
    LayerCost {
        name: name.into(),
        params: out[0] * cin * k * k + out[0],
        flops: 2 * macs + outputs,
    }
}

/// Dense `m × n` layer (m outputs, n inputs) with bias.
pub fn linear_cost(name: &str, m: usize, n: usize) -> LayerCost {
    LayerCost {
        name: name.into(),
        params: m * n + m,
        flops: (2 * m * n + m) as u64,
    }
}

fn elementwise(name: String, per_element: u64, n: usize) -> LayerCost {
    LayerCost { name, params: 0, flops: per_element * n as u64 }
}

fn pool_cost(name: &str, window: [usize; 2], out: [usize; 3]) -> LayerCost {
    LayerCost {
        name: name.into(),
        params: 0,
        flops: ((window[0] * window[1] - 1) * out[0] * out[1] * out[2]) as u64,
    }
}

/// Total parameters, total forward FLOPs, and the per-layer breakdown.
pub fn count_params_flops(cfg: &ModelConfig) -> Result<(usize, u64, Vec<LayerCost>)> {
    let plan = cfg.plan()?;
    let mut layers = Vec::new();
    let mut cin = 1;
    for (i, (c, out)) in cfg.convs.iter().zip(&plan.convs).enumerate() {
        layers.push(conv_cost(&format!("conv{}", i + 1), cin, *out, c.kernel));
        layers.push(elementwise(format!("conv{}.relu", i + 1), 1, out.iter().product()));
        cin = c.out_channels;
    }
    let attention = cfg.attention.as_ref().map(|a| {
        let x = plan.attention_input.expect("attention planned");
        let keys = plan.attention_keys.expect("attention planned");
        let (c, hw, nk) = (x[0] as u64, (x[1] * x[2]) as u64, (keys[1] * keys[2]) as u64);
        let m = a.inter_channels as u64;
        let d = a.key_channels(x[0]) as u64;
        let mut flops = 0u64;
        let mut params = 0usize;
        if nk != hw {
            flops += ((a.key_pool[0] * a.key_pool[1] - 1) as u64) * c * nk;
        }
        if a.variant == AttentionVariant::EmbeddedGaussian {
            flops += 2 * c * m * hw + m * hw;
            flops += 2 * c * m * nk + m * nk;
            params += 2 * (a.inter_channels * x[0] + a.inter_channels);
        }
        flops += 2 * hw * nk * d;
        flops += match a.variant {
            AttentionVariant::Dot => hw * nk,
            _ => 3 * hw * nk,
        };
        flops += 2 * c * m * nk + m * nk;
        flops += 2 * hw * nk * m;
        flops += 2 * m * c * hw + c * hw;
        flops += c * hw;
        params += a.inter_channels * x[0] + a.inter_channels + x[0] * a.inter_channels + x[0];
        LayerCost { name: format!("attention.{}", a.variant), params, flops }
    });
    let before = matches!(&cfg.attention, Some(a) if a.placement == super::PoolPlacement::Before);
    if !before {
        layers.extend(attention.clone());
    }
    layers.push(pool_cost("maxpool", cfg.pool, plan.pooled));
    if before {
        layers.extend(attention);
    }
    layers.push(conv_cost("conv6", plan.pooled[0], plan.conv6, cfg.conv6.kernel));
    layers.push(elementwise("conv6.relu".into(), 1, plan.flat));

    let widths: Vec<usize> = cfg.hidden.iter().copied().chain([cfg.outputs]).collect();
    let mut fan_in = plan.flat;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(linear_cost(&format!("fc{}", i + 1), w, fan_in));
        if i + 1 == widths.len() {
            layers.push(elementwise("softmax".into(), 3, w));
        } else {
            layers.push(elementwise(format!("fc{}.relu", i + 1), 1, w));
        }
        fan_in = w + if i == 0 { 2 } else { 0 };
    }
    let params = layers.iter().map(|l| l.params).sum();
    let flops = layers.iter().map(|l| l.flops).sum();
    Ok((params, flops, layers))
}
