//! Array steering, DFT codebooks, per-subcarrier channel matrices and the
//! codebook power-gain matrix.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::paths::{ChannelConfig, PathList};
use crate::error::{invalid_err, shape_err, Result};

pub const TX_BEAMS: usize = 32;
pub const RX_BEAMS: usize = 8;
pub const NUM_PAIRS: usize = TX_BEAMS * RX_BEAMS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Transmit,
    Receive,
}

/// Unnormalised half-wavelength ULA response, `a(θ)_m = exp(jπ m cos θ)`,
/// with `θ` measured from the array axis.
pub fn steering(elements: usize, angle: f64) -> Vec<Complex64> {
    steering_cos(elements, angle.cos())
}

fn steering_cos(elements: usize, u: f64) -> Vec<Complex64> {
    (0..elements)
        .map(|m| Complex64::from_polar(1.0, PI * m as f64 * u))
        .collect()
}

/// Dense complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape_err!("ragged matrix rows"));
        }
        Ok(CMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub role: Role,
    pub elements: usize,
    pub beams: Vec<Vec<Complex64>>,
}

impl Codebook {
    /// DFT codebook: beam `k` points at direction cosine
    /// `u_k = -1 + (2k+1)/N`, normalised to unit norm.
    pub fn dft(role: Role, elements: usize) -> Self {
        let scale = 1.0 / (elements as f64).sqrt();
        let beams = (0..elements)
            .map(|k| {
                let u = -1.0 + (2 * k + 1) as f64 / elements as f64;
                steering_cos(elements, u).into_iter().map(|v| v * scale).collect()
            })
            .collect();
        Codebook { role, elements, beams }
    }

    pub fn from_beams(role: Role, beams: Vec<Vec<Complex64>>) -> Result<Self> {
        let elements = beams.first().map_or(0, Vec::len);
        if elements == 0 || beams.iter().any(|b| b.len() != elements) {
            return Err(shape_err!("codebook beams must share a nonzero length"));
        }
        Ok(Codebook { role, elements, beams })
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Direction cosine each DFT beam is aimed at.
    pub fn dft_direction(elements: usize, k: usize) -> f64 {
        -1.0 + (2 * k + 1) as f64 / elements as f64
    }
}

/// Default transmit/receive pair: 32 × 8 DFT beams.
pub fn default_codebooks() -> (Codebook, Codebook) {
    (
        Codebook::dft(Role::Transmit, TX_BEAMS),
        Codebook::dft(Role::Receive, RX_BEAMS),
    )
}

/// `H_n = Σ_p α_p e^{-j2π n Δf τ_p} a_r(AoA_p) a_t(AoD_p)ᴴ`, shape `n_r × n_t`.
pub fn channel_response(paths: &PathList, cfg: &ChannelConfig, n: usize, n_t: usize, n_r: usize) -> CMatrix {
    let mut h = CMatrix::zeros(n_r, n_t);
    for p in &paths.paths {
        let rot = Complex64::from_polar(1.0, -2.0 * PI * n as f64 * cfg.subcarrier_spacing * p.delay);
        let coef = p.gain * rot;
        let ar = steering(n_r, p.aoa);
        let at = steering(n_t, p.aod);
        for r in 0..n_r {
            let cr = coef * ar[r];
            for t in 0..n_t {
                h.data[r * n_t + t] += cr * at[t].conj();
            }
        }
    }
    h
}

pub fn channel_responses(paths: &PathList, cfg: &ChannelConfig, n_t: usize, n_r: usize) -> Vec<CMatrix> {
    (0..cfg.subcarriers)
        .map(|n| channel_response(paths, cfg, n, n_t, n_r))
        .collect()
}

/// Aggregate power gain `G[i][j] = Σ_n |w_jᴴ H_n f_i|²`, row-major
/// `|C_t| × |C_r|`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    pub tx: usize,
    pub rx: usize,
    pub data: Vec<f64>,
}

impl GainMatrix {
    pub fn new(tx: usize, rx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != tx * rx {
            return Err(shape_err!("gain matrix {tx}×{rx} needs {} entries, got {}", tx * rx, data.len()));
        }
        Ok(GainMatrix { tx, rx, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rx + j]
    }
}

pub fn gain_matrix(h: &[CMatrix], ct: &Codebook, cr: &Codebook) -> Result<GainMatrix> {
    let mut g = vec![0.0; ct.len() * cr.len()];
    let mut hf = vec![Complex64::new(0.0, 0.0); cr.elements];
    for hn in h {
        if hn.cols != ct.elements || hn.rows != cr.elements {
            return Err(shape_err!(
                "channel is {}×{}, codebooks need {}×{}",
                hn.rows,
                hn.cols,
                cr.elements,
                ct.elements
            ));
        }
        for (i, f) in ct.beams.iter().enumerate() {
            for (r, slot) in hf.iter_mut().enumerate() {
                let row = &hn.data[r * hn.cols..(r + 1) * hn.cols];
                *slot = row.iter().zip(f).map(|(a, b)| a * b).sum();
            }
            for (j, w) in cr.beams.iter().enumerate() {
                let v: Complex64 = w.iter().zip(&hf).map(|(a, b)| a.conj() * b).sum();
                g[i * cr.len() + j] += v.norm_sqr();
            }
        }
    }
    GainMatrix::new(ct.len(), cr.len(), g)
}

/// Row-major flattening: `y[i·|C_r| + j] = G[i][j]` with 0-based indices.
pub fn flatten(g: &GainMatrix) -> Vec<f64> {
    g.data.clone()
}

pub fn unflatten(y: &[f64], tx: usize, rx: usize) -> Result<GainMatrix> {
    GainMatrix::new(tx, rx, y.to_vec())
}

/// Index of the first maximum in `y`; the flag is true when `y` has no
/// positive entry.
pub fn argmax_first(y: &[f64]) -> Result<(usize, bool)> {
    if y.is_empty() {
        return Err(invalid_err!("argmax of an empty vector"));
    }
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    Ok((best, !(y[best] > 0.0)))
}

/// Best flat beam-pair index and the degenerate flag.
pub fn best_beam(g: &GainMatrix) -> Result<(usize, bool)> {
    argmax_first(&g.data)
}
