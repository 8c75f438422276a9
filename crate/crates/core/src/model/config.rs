use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::sim::NUM_PAIRS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { out_channels, kernel, stride, padding }
    }

    fn out_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    EmbeddedGaussian,
    Gaussian,
    Dot,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] =
        [AttentionVariant::EmbeddedGaussian, AttentionVariant::Gaussian, AttentionVariant::Dot];
}

impl std::str::FromStr for AttentionVariant {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedded-gaussian" | "embedded" => Ok(AttentionVariant::EmbeddedGaussian),
            "gaussian" => Ok(AttentionVariant::Gaussian),
            "dot" => Ok(AttentionVariant::Dot),
            _ => Err(config_err!("unknown attention variant `{s}` (expected embedded-gaussian, gaussian or dot)")),
        }
    }
}

impl std::fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionVariant::EmbeddedGaussian => "embedded-gaussian",
            AttentionVariant::Gaussian => "gaussian",
            AttentionVariant::Dot => "dot",
        })
    }
}

/// Where the 2×2 pooling sits relative to the attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolPlacement {
    /// Queries stay at full resolution; keys and values are pooled inside
    /// the block, and the network's own pooling follows the block.
    KeyValue,
    /// The network pools first and the block runs on the pooled map
    /// without further subsampling.
    Before,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    /// Width of the `W_φ1`, `W_φ2` and `W_ψ` projections.
    pub inter_channels: usize,
    /// Key/value pooling window; `[1, 1]` disables subsampling.
    pub key_pool: [usize; 2],
    pub placement: PoolPlacement,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            variant: AttentionVariant::EmbeddedGaussian,
            inter_channels: 3,
            key_pool: [2, 2],
            placement: PoolPlacement::KeyValue,
        }
    }
}

impl AttentionConfig {
    pub fn with_variant(variant: AttentionVariant) -> Self {
        AttentionConfig { variant, ..Default::default() }
    }

    /// Channels of the pairwise-function space: the projection width for the
    /// embedded variant, the raw input width otherwise.
    pub fn key_channels(&self, in_channels: usize) -> usize {
        match self.variant {
            AttentionVariant::EmbeddedGaussian => self.inter_channels,
            _ => in_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Grid rows × cols.
    pub grid: [usize; 2],
    /// Coverage-area extents used to scale the vehicle position to [0, 1]².
    pub area: [f64; 2],
    /// conv1..conv5.
    pub convs: Vec<ConvSpec>,
    pub pool: [usize; 2],
    pub conv6: ConvSpec,
    /// Width of fc1; fc2.. take the vehicle position appended to its output.
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub attention: Option<AttentionConfig>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: [200, 20],
            area: [200.0, 40.0],
            convs: vec![
                ConvSpec::new(5, 3, 1, 1),
                ConvSpec::new(5, 3, 2, 1),
                ConvSpec::new(5, 3, 1, 1),
                ConvSpec::new(5, 3, 2, 1),
                ConvSpec::new(5, 3, 1, 1),
            ],
            pool: [2, 2],
            conv6: ConvSpec::new(5, 3, 1, 1),
            hidden: vec![64, 64, 64, 64],
            outputs: NUM_PAIRS,
            attention: None,
            seed: 0,
        }
    }
}

/// Shapes produced by walking the layer schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePlan {
    /// `[C,H,W]` after each of conv1..conv5.
    pub convs: Vec<[usize; 3]>,
    pub pooled: [usize; 3],
    pub conv6: [usize; 3],
    /// Map the attention block sees, if enabled.
    pub attention_input: Option<[usize; 3]>,
    /// Key/value map inside the block.
    pub attention_keys: Option<[usize; 3]>,
    pub flat: usize,
}

impl ModelConfig {
    pub fn with_attention(variant: AttentionVariant) -> Self {
        ModelConfig { attention: Some(AttentionConfig::with_variant(variant)), ..Default::default() }
    }

    fn conv_out(name: &str, spec: &ConvSpec, s: [usize; 3]) -> Result<[usize; 3]> {
        if spec.kernel % 2 == 0 || spec.stride == 0 || spec.out_channels == 0 {
            return Err(config_err!("{name}: kernel must be odd, stride and channels positive ({spec:?})"));
        }
        match (spec.out_extent(s[1]), spec.out_extent(s[2])) {
            (Some(h), Some(w)) => Ok([spec.out_channels, h, w]),
            _ => Err(config_err!("{name}: kernel {} does not fit input {}×{}", spec.kernel, s[1], s[2])),
        }
    }

    fn pool_out(name: &str, p: [usize; 2], s: [usize; 3]) -> Result<[usize; 3]> {
        if p[0] == 0 || p[1] == 0 || s[1] < p[0] || s[2] < p[1] {
            return Err(config_err!("{name}: pool window {}×{} does not fit {}×{}", p[0], p[1], s[1], s[2]));
        }
        Ok([s[0], s[1] / p[0], s[2] / p[1]])
    }

    /// Validates the schedule against the grid; errors name the layer.
    pub fn plan(&self) -> Result<ShapePlan> {
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(config_err!("grid extents must be positive"));
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return Err(config_err!("area extents must be positive"));
        }
        if self.convs.is_empty() {
            return Err(config_err!("at least one convolution is required"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.outputs == 0 {
            return Err(config_err!("linear widths must be positive"));
        }
        let mut s = [1, self.grid[0], self.grid[1]];
        let mut convs = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            s = Self::conv_out(&format!("conv{}", i + 1), c, s)?;
            convs.push(s);
        }
        let (mut attention_input, mut attention_keys) = (None, None);
        let pooled;
        match &self.attention {
            Some(a) => {
                if a.inter_channels == 0 {
                    return Err(config_err!("attention: inter_channels must be positive"));
                }
                match a.placement {
                    PoolPlacement::KeyValue => {
                        attention_input = Some(s);
                        attention_keys = Some(Self::pool_out("attention key pool", a.key_pool, s)?);
                        pooled = Self::pool_out("maxpool", self.pool, s)?;
                    }
                    PoolPlacement::Before => {
                        pooled = Self::pool_out("maxpool", self.pool, s)?;
                        attention_input = Some(pooled);
                        attention_keys = Some(pooled);
                    }
                }
            }
            None => pooled = Self::pool_out("maxpool", self.pool, s)?,
        }
        let conv6 = Self::conv_out("conv6", &self.conv6, pooled)?;
        Ok(ShapePlan {
            convs,
            pooled,
            conv6,
            attention_input,
            attention_keys,
            flat: conv6.iter().product(),
        })
    }

    /// Names and shapes of every trainable tensor, in store order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = self.plan()?;
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), vec![c.out_channels, cin, c.kernel, c.kernel]));
            out.push((format!("conv{}.b", i + 1), vec![c.out_channels]));
            cin = c.out_channels;
        }
        if let Some(a) = &self.attention {
            let c = plan.attention_input.expect("attention planned")[0];
            let m = a.inter_channels;
            if a.variant == AttentionVariant::EmbeddedGaussian {
                for n in ["attn.phi1", "attn.phi2"] {
                    out.push((format!("{n}.w"), vec![m, c, 1, 1]));
                    out.push((format!("{n}.b"), vec![m]));
                }
            }
            out.push(("attn.psi.w".into(), vec![m, c, 1, 1]));
            out.push(("attn.psi.b".into(), vec![m]));
            out.push(("attn.out.w".into(), vec![c, m, 1, 1]));
            out.push(("attn.out.b".into(), vec![c]));
        }
        out.push(("conv6.w".into(), vec![self.conv6.out_channels, plan.pooled[0], self.conv6.kernel, self.conv6.kernel]));
        out.push(("conv6.b".into(), vec![self.conv6.out_channels]));
        let mut fan_in = plan.flat;
        let widths: Vec<usize> = self.hidden.iter().copied().chain([self.outputs]).collect();
        for (i, &w) in widths.iter().enumerate() {
            out.push((format!("fc{}.w", i + 1), vec![w, fan_in]));
            out.push((format!("fc{}.b", i + 1), vec![w]));
            fan_in = w + if i == 0 { 2 } else { 0 };
        }
        Ok(out)
    }

    /// Number of linear layers (the last one is the output layer).
    pub fn num_linear(&self) -> usize {
        self.hidden.len() + 1
    }
}
