//! Gradient and oracle suites shared by the per-module tests and the
//! acceptance target. Checks panic on failure.
#![allow(dead_code)]

use std::collections::HashSet;

use lidarbeam::model::{
    forward_with, nonlocal_forward, AttentionConfig, AttentionVariant, BeamClassifier, ModelConfig, ModelInput,
    PoolPlacement,
};
use lidarbeam::objective::{make_labels, throughput_ratio, topk_accuracy, LabelNorm, Scored};
use lidarbeam::pruning::{prunable_weights, prune_structured, prune_unstructured};
use lidarbeam::sim::{default_codebooks, gain_matrix, CMatrix};
use lidarbeam::tensor::{grad_check, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var};
use lidarbeam::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values in ±[0.1, 1) so relu and max kinks are never within a step.
fn away_from_zero(g: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = g.gen_range(0.1..1.0);
            if g.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn tensor(g: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), away_from_zero(g, n)).unwrap()
}

/// Σ wᵢ·xᵢ with fixed random weights, so every output entry carries a
/// distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = tensor(&mut rng(seed ^ 0x5eed), &shape);
    let w = tape.input(w);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

fn store(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(*n, t.clone()).unwrap();
    }
    s
}

fn check<F>(f: F, point: &ParamStore, seed: u64) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let opts = GradCheckOptions { tolerance: 1e-5, seed, ..Default::default() };
    grad_check(f, point, &opts).unwrap()
}

/// Finite-difference reports for every differentiable tape op.
pub fn op_gradient_reports() -> Vec<(String, GradCheckReport)> {
    let mut g = rng(7);
    let mut out = Vec::new();

    for (stride, padding) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
        let s = store(&[
            ("x", tensor(&mut g, &[2, 6, 5])),
            ("w", tensor(&mut g, &[3, 2, 3, 3])),
            ("b", tensor(&mut g, &[3])),
        ]);
        let f = move |t: &mut Tape, s: &ParamStore| {
            let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
            let y = t.conv2d(x, w, b, stride, padding)?;
            weighted_sum(t, y, 1)
        };
        out.push((format!("conv2d stride {stride} padding {padding}"), check(f, &s, 1)));
    }

    let s = store(&[("x", tensor(&mut g, &[5])), ("w", tensor(&mut g, &[4, 5])), ("b", tensor(&mut g, &[4]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
        let y = t.linear(x, w, b)?;
        weighted_sum(t, y, 2)
    };
    out.push(("linear".into(), check(f, &s, 2)));

    let s = store(&[("x", tensor(&mut g, &[3, 4]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let y = t.relu(x)?;
        weighted_sum(t, y, 3)
    };
    out.push(("relu".into(), check(f, &s, 3)));

    let s = store(&[("x", tensor(&mut g, &[7]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let y = t.softmax(x)?;
        weighted_sum(t, y, 4)
    };
    out.push(("softmax".into(), check(f, &s, 4)));

    let s = store(&[("x", tensor(&mut g, &[3, 5]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let y = t.softmax_rows(x)?;
        weighted_sum(t, y, 5)
    };
    out.push(("softmax_rows".into(), check(f, &s, 5)));

    let s = store(&[("x", tensor(&mut g, &[2, 4, 6]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let y = t.maxpool2d(x, 2, 2)?;
        weighted_sum(t, y, 6)
    };
    out.push(("maxpool2d".into(), check(f, &s, 6)));

    let s = store(&[("x", tensor(&mut g, &[2, 5, 7]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let y = t.maxpool2d_floor(x, 2, 2)?;
        weighted_sum(t, y, 7)
    };
    out.push(("maxpool2d_floor".into(), check(f, &s, 7)));

    let s = store(&[("a", tensor(&mut g, &[6])), ("b", tensor(&mut g, &[4]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let c = t.concat(a, b)?;
        let r = t.reshape(c, &[2, 5])?;
        let tr = t.transpose(r)?;
        weighted_sum(t, tr, 8)
    };
    out.push(("concat, reshape, transpose".into(), check(f, &s, 8)));

    let s = store(&[("a", tensor(&mut g, &[3, 4])), ("b", tensor(&mut g, &[4, 2]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let y = t.matmul(a, b)?;
        weighted_sum(t, y, 9)
    };
    out.push(("matmul".into(), check(f, &s, 9)));

    let s = store(&[("a", tensor(&mut g, &[2, 3])), ("b", tensor(&mut g, &[2, 3]))]);
    let f = |t: &mut Tape, s: &ParamStore| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let sum = t.add(a, b)?;
        let prod = t.mul(sum, a)?;
        let y = t.scale(prod, -1.7)?;
        weighted_sum(t, y, 10)
    };
    out.push(("add, mul, scale, sum".into(), check(f, &s, 10)));

    let s = store(&[("x", tensor(&mut g, &[6]))]);
    let target = [0.5, 0.0, 0.2, 0.0, 0.3, 0.0];
    let f = move |t: &mut Tape, s: &ParamStore| {
        let x = t.param(s, "x")?;
        let q = t.softmax(x)?;
        t.cross_entropy(q, &target, 1e-12)
    };
    out.push(("cross_entropy".into(), check(f, &s, 11)));

    out
}

pub fn random_input(seed: u64, cfg: &ModelConfig) -> ModelInput {
    let mut g = rng(seed);
    ModelInput {
        grid: (0..cfg.grid[0] * cfg.grid[1]).map(|_| g.gen_range(-2.0..1.0)).collect(),
        veh_xy: [g.gen(), g.gen()],
    }
}

/// Finite-difference check of the full network under a random soft target.
pub fn model_gradient_report(cfg: ModelConfig, seed: u64) -> GradCheckReport {
    let mut model = BeamClassifier::new(cfg.clone()).unwrap();
    // nonzero biases so every path carries gradient
    let mut g = rng(seed);
    for p in model.params.iter_mut() {
        if p.name.ends_with(".b") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = g.gen_range(-0.1..0.1));
        }
    }
    let input = random_input(seed, &cfg);
    let mut target: Vec<f64> = (0..cfg.outputs).map(|_| g.gen::<f64>()).collect();
    let s: f64 = target.iter().sum();
    target.iter_mut().for_each(|v| *v /= s);
    let f = |tape: &mut Tape, store: &ParamStore| {
        let y = forward_with(&cfg, store, tape, &input)?;
        tape.cross_entropy(y, &target, 1e-12)
    };
    let opts = GradCheckOptions { tolerance: 1e-5, max_entries_per_tensor: Some(12), seed, ..Default::default() };
    grad_check(f, &model.params, &opts).unwrap()
}

/// The plain model, each attention variant, and attention before pooling.
pub fn model_gradient_reports() -> Vec<(String, GradCheckReport)> {
    let mut out = vec![("model without attention".to_string(), model_gradient_report(ModelConfig::default(), 1))];
    for (i, v) in AttentionVariant::ALL.into_iter().enumerate() {
        out.push((format!("model with {v} attention"), model_gradient_report(ModelConfig::with_attention(v), 10 + i as u64)));
    }
    let before = ModelConfig {
        attention: Some(AttentionConfig { placement: PoolPlacement::Before, ..Default::default() }),
        ..Default::default()
    };
    out.push(("model with attention before pooling".into(), model_gradient_report(before, 20)));
    out
}

pub fn assert_reports(reports: &[(String, GradCheckReport)]) {
    for (name, r) in reports {
        assert!(r.passed(), "{name}: max rel error {:.3e}\n{r}", r.max_error());
    }
}

fn cx(g: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(g.gen_range(-1.0..1.0), g.gen_range(-1.0..1.0))
}

pub fn random_channel(g: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_rows((0..rows).map(|_| (0..cols).map(|_| cx(g)).collect()).collect()).unwrap()
}

/// Gain matrix against an explicit loop over paths, receive and transmit
/// antennas.
pub fn gain_matrix_matches_triple_loop() {
    let mut g = rng(11);
    let (ct, cr) = default_codebooks();
    let hs: Vec<CMatrix> = (0..4).map(|_| random_channel(&mut g, 8, 32)).collect();
    let got = gain_matrix(&hs, &ct, &cr).unwrap();
    for i in 0..32 {
        for j in 0..8 {
            let mut want = 0.0;
            for h in &hs {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..8 {
                    for t in 0..32 {
                        acc += cr.beams[j][r].conj() * h.at(r, t) * ct.beams[i][t];
                    }
                }
                want += acc.norm_sqr();
            }
            assert!(((got.get(i, j) - want) / want).abs() < 1e-12, "pair ({i}, {j})");
        }
    }
}

/// Normalised labels scale back to the gains, and the one-hot sits on the
/// first maximum.
pub fn label_round_trip() {
    let mut g = rng(12);
    for trial in 0..200 {
        let n = g.gen_range(1..300);
        let mut y: Vec<f64> = (0..n).map(|_| g.gen::<f64>() * 1e-7).collect();
        if trial % 3 == 0 {
            let m = y.iter().cloned().fold(0.0, f64::max);
            let j = g.gen_range(0..n);
            y[j] = m;
        }
        for norm in [LabelNorm::L2, LabelNorm::L1] {
            let l = make_labels(&y, norm).unwrap();
            let scale = match norm {
                LabelNorm::L2 => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
                LabelNorm::L1 => y.iter().sum::<f64>(),
            };
            for (a, b) in l.ybar.iter().zip(&y) {
                assert!((a * scale - b).abs() <= 1e-12 * b.abs().max(1e-30), "trial {trial}");
            }
            let first = y.iter().position(|&v| v == y.iter().cloned().fold(f64::MIN, f64::max)).unwrap();
            assert_eq!(l.best, first);
            assert!(l.ystar.iter().enumerate().all(|(i, &v)| v == if i == first { 1.0 } else { 0.0 }));
        }
    }
}

/// Accuracy and throughput ratio against a full sort of every record.
pub fn topk_matches_enumeration() {
    let mut g = rng(13);
    let n = 40;
    let recs: Vec<Scored> = (0..300)
        .map(|_| {
            // coarse scores force ties
            let scores = (0..n).map(|_| (g.gen_range(0..12) as f64) / 12.0).collect();
            let gains = (0..n).map(|_| g.gen::<f64>()).collect();
            Scored::new(scores, gains, g.gen()).unwrap()
        })
        .collect();
    for k in [1, 2, 5, 10, 39, 40] {
        let (mut hits, mut got_sum, mut best_sum) = (0usize, 0.0, 0.0);
        for r in &recs {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| r.scores[b].partial_cmp(&r.scores[a]).unwrap().then(a.cmp(&b)));
            let top = &order[..k];
            let best = (0..n).fold(0, |b, i| if r.gains[i] > r.gains[b] { i } else { b });
            hits += top.contains(&best) as usize;
            let chosen = top.iter().map(|&i| r.gains[i]).fold(f64::MIN, f64::max);
            got_sum += (1.0 + chosen).log2();
            best_sum += (1.0 + r.gains[best]).log2();
        }
        let acc = topk_accuracy(&recs, k).unwrap();
        let thr = throughput_ratio(&recs, k).unwrap();
        assert!((acc - hits as f64 / recs.len() as f64).abs() < 1e-15, "A({k})");
        assert!((thr - got_sum / best_sum).abs() < 1e-12, "T({k})");
    }
    assert!((throughput_ratio(&recs, n).unwrap() - 1.0).abs() < 1e-15);
}

/// Direct double loop over query/key sites.
pub fn nonlocal_oracle(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    store: &ParamStore,
    variant: AttentionVariant,
    m: usize,
) -> Vec<f64> {
    let hw = h * w;
    let at = |ch: usize, i: usize| x[ch * hw + i];
    let proj = |name: &str, i: usize, rows: usize| -> Vec<f64> {
        let wt = store.get(&format!("{name}.w")).unwrap().data();
        let b = store.get(&format!("{name}.b")).unwrap().data();
        (0..rows).map(|o| b[o] + (0..c).map(|ch| wt[o * c + ch] * at(ch, i)).sum::<f64>()).collect()
    };
    let feat = |name: Option<&str>, i: usize| -> Vec<f64> {
        match name {
            Some(n) => proj(n, i, m),
            None => (0..c).map(|ch| at(ch, i)).collect(),
        }
    };
    let (qn, kn) = match variant {
        AttentionVariant::EmbeddedGaussian => (Some("attn.phi1"), Some("attn.phi2")),
        _ => (None, None),
    };
    let wo = store.get("attn.out.w").unwrap().data();
    let bo = store.get("attn.out.b").unwrap().data();
    let mut out = x.to_vec();
    for i in 0..hw {
        let qi = feat(qn, i);
        let f: Vec<f64> = (0..hw)
            .map(|j| {
                let kj = feat(kn, j);
                let dot: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum();
                match variant {
                    AttentionVariant::Dot => dot,
                    _ => dot.exp(),
                }
            })
            .collect();
        let eta: f64 = match variant {
            AttentionVariant::Dot => hw as f64,
            _ => f.iter().sum(),
        };
        let mut y = vec![0.0; m];
        for j in 0..hw {
            let g = proj("attn.psi", j, m);
            for k in 0..m {
                y[k] += f[j] * g[k] / eta;
            }
        }
        for ch in 0..c {
            out[ch * hw + i] += bo[ch] + (0..m).map(|k| wo[ch * m + k] * y[k]).sum::<f64>();
        }
    }
    out
}

pub fn attention_store(variant: AttentionVariant, c: usize, m: usize, seed: u64, scale: f64) -> ParamStore {
    let mut g = rng(seed);
    let mut s = ParamStore::new();
    let mut put = |name: &str, shape: Vec<usize>| {
        let n = shape.iter().product();
        let d = (0..n).map(|_| g.gen_range(-scale..scale)).collect();
        s.insert(name, Tensor::new(shape, d).unwrap()).unwrap();
    };
    if variant == AttentionVariant::EmbeddedGaussian {
        put("attn.phi1.w", vec![m, c, 1, 1]);
        put("attn.phi1.b", vec![m]);
        put("attn.phi2.w", vec![m, c, 1, 1]);
        put("attn.phi2.b", vec![m]);
    }
    put("attn.psi.w", vec![m, c, 1, 1]);
    put("attn.psi.b", vec![m]);
    put("attn.out.w", vec![c, m, 1, 1]);
    put("attn.out.b", vec![c]);
    s
}

pub fn run_block(x: &Tensor, store: &ParamStore, cfg: &AttentionConfig) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let o = nonlocal_forward(&mut tape, store, v, cfg).unwrap();
    tape.value(o).data().to_vec()
}

/// Attention block against the pairwise oracle for every variant.
pub fn nonlocal_matches_pairwise_oracle() {
    let (c, h, w, m) = (2, 3, 2, 3);
    let mut g = rng(21);
    let x = Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| g.gen_range(-1.0..1.0)).collect()).unwrap();
    for v in AttentionVariant::ALL {
        let store = attention_store(v, c, m, 4, 0.8);
        let cfg = AttentionConfig { variant: v, inter_channels: m, key_pool: [1, 1], placement: PoolPlacement::KeyValue };
        let got = run_block(&x, &store, &cfg);
        let want = nonlocal_oracle(x.data(), c, h, w, &store, v, m);
        let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{v}: {diff}");
    }
}

/// Model with small random biases so bias masking is observable.
pub fn biased_model(seed: u64) -> BeamClassifier {
    let mut m = BeamClassifier::new(ModelConfig { seed, ..ModelConfig::default() }).unwrap();
    let mut g = rng(seed);
    for p in m.params.iter_mut() {
        if p.name.ends_with(".b") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = g.gen::<f64>() * 0.2 - 0.1);
        }
    }
    m
}

/// Unstructured mask against a global sort of |w| over prunable tensors.
pub fn unstructured_matches_global_sort(m: &BeamClassifier, ratio: f64) {
    let mask = prune_unstructured(m, None, ratio).unwrap();
    let mut all: Vec<(f64, String, usize)> = Vec::new();
    for name in prunable_weights(m) {
        for (i, w) in m.params.get(&name).unwrap().data().iter().enumerate() {
            all.push((w.abs(), name.clone(), i));
        }
    }
    let total = all.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| all[a].0.partial_cmp(&all[b].0).unwrap().then(a.cmp(&b)));
    let want = (ratio * total as f64).round() as usize;
    let expected: HashSet<(String, usize)> = order[..want].iter().map(|&j| (all[j].1.clone(), all[j].2)).collect();
    let mut got = HashSet::new();
    for e in &mask.entries {
        for (i, k) in e.keep.iter().enumerate() {
            if !k {
                got.insert((e.name.clone(), i));
            }
        }
    }
    assert_eq!(got, expected);
    assert!(mask.get("fc5.w").is_none());
    assert!(mask.entries.iter().all(|e| e.name.ends_with(".w")));
    assert!((mask.pruned_weights() as f64 - ratio * total as f64).abs() <= 1.0);
}

/// Structured mask against a per-layer sort of mean |w| per output unit.
pub fn structured_matches_per_layer_sort(m: &BeamClassifier, ratio: f64) {
    let mask = prune_structured(m, None, ratio).unwrap();
    for name in prunable_weights(m) {
        let t = m.params.get(&name).unwrap();
        let units = t.shape()[0];
        let fan = t.len() / units;
        let mut means: Vec<(f64, usize)> = (0..units)
            .map(|u| (t.data()[u * fan..(u + 1) * fan].iter().map(|v| v.abs()).sum::<f64>() / fan as f64, u))
            .collect();
        means.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let drop: Vec<usize> = means[..(ratio * units as f64).round() as usize].iter().map(|p| p.1).collect();
        let keep = &mask.get(&name).unwrap().keep;
        let bias = &mask.get(&name.replace(".w", ".b")).unwrap().keep;
        for u in 0..units {
            let dropped = drop.contains(&u);
            assert!(keep[u * fan..(u + 1) * fan].iter().all(|&k| k != dropped), "{name} unit {u}");
            assert_eq!(bias[u], !dropped);
        }
    }
}
