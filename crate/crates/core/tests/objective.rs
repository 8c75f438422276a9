use lidarbeam::objective::*;
use lidarbeam::tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_gains(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * 1e-7).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_records(seed: u64, n: usize) -> Vec<Scored> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g = random_gains(&mut rng, 256);
            let s = random_simplex(&mut rng, 256);
            Scored::new(s, g, rng.gen_bool(0.5)).unwrap()
        })
        .collect()
}

/// Position of `target` when all indices are sorted by a fresh comparison
/// sort on (score desc, index asc).
fn rank_of(scores: &[f64], target: usize) -> usize {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.iter().position(|p| p.1 == target).unwrap()
}

fn oracle_argmax(y: &[f64]) -> usize {
    let m = y.iter().cloned().fold(f64::MIN, f64::max);
    y.iter().position(|&v| v == m).unwrap()
}

#[test]
fn random_labels_have_unit_norm_and_same_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let y = random_gains(&mut rng, 256);
        let l = make_labels(&y, LabelNorm::L2).unwrap();
        let norm: f64 = l.ybar.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(l.best, oracle_argmax(&y));
        assert_eq!(oracle_argmax(&l.ybar), l.best);
        assert_eq!(l.ystar.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(l.ystar.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn cross_entropy_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = random_gains(&mut rng, 256);
        let q = random_simplex(&mut rng, 256);
        let mut oracle = 0.0;
        for i in 0..256 {
            oracle -= p[i] * q[i].ln();
        }
        let ce = cross_entropy(&p, &q, LOG_EPS).unwrap();
        assert!((ce - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
}

#[test]
fn kd_loss_endpoints_and_mix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = random_gains(&mut rng, 256);
    let q = random_simplex(&mut rng, 256);
    let l = make_labels(&y, LabelNorm::L2).unwrap();
    let a = cross_entropy(&l.ystar, &q, LOG_EPS).unwrap();
    let b = cross_entropy(&l.ybar, &q, LOG_EPS).unwrap();
    assert_eq!(kd_loss(&l, &q, &LossConfig::with_beta(0.0)).unwrap(), a);
    assert_eq!(kd_loss(&l, &q, &LossConfig::with_beta(1.0)).unwrap(), b);
    let mix = kd_loss(&l, &q, &LossConfig::with_beta(0.8)).unwrap();
    assert!((mix - (0.2 * a + 0.8 * b)).abs() < 1e-12);
    let single = cross_entropy(&kd_target(&l, 0.8), &q, LOG_EPS).unwrap();
    assert!((single - mix).abs() < 1e-12);
}

#[test]
fn topk_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut s: Vec<f64> = (0..256).map(|_| (rng.gen::<f64>() * 20.0).floor()).collect();
        s[7] = s[3];
        let mut pairs: Vec<(f64, usize)> = s.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for k in [1, 5, 10, 100, 256] {
            let want: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
            assert_eq!(topk_select(&s, k).unwrap(), want);
        }
    }
    let all = topk_select(&[0.1; 256], 256).unwrap();
    assert_eq!(all, (0..256).collect::<Vec<_>>());
}

#[test]
fn accuracy_matches_enumeration() {
    let recs = random_records(5, 100);
    for k in [1, 2, 5, 10, 50, 256] {
        let oracle = recs.iter().filter(|r| rank_of(&r.scores, r.best) < k).count() as f64 / 100.0;
        assert_eq!(topk_accuracy(&recs, k).unwrap(), oracle);
    }
    assert_eq!(topk_accuracy(&recs, 256).unwrap(), 1.0);
}

#[test]
fn accuracy_zero_when_best_ranks_just_outside() {
    let k = 3;
    let mut s = vec![0.0; 256];
    for (i, v) in [0.9, 0.8, 0.7, 0.6].iter().enumerate() {
        s[i] = *v;
    }
    let mut g = vec![1e-8; 256];
    g[3] = 1e-7;
    let r = Scored::new(s, g, true).unwrap();
    assert_eq!(topk_accuracy(&[r.clone()], k).unwrap(), 0.0);
    assert_eq!(topk_accuracy(&[r], k + 1).unwrap(), 1.0);
}

#[test]
fn throughput_matches_brute_force() {
    let recs = random_records(6, 100);
    for k in [1, 3, 10, 64, 256] {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in &recs {
            let mut best_sel = f64::MIN;
            for i in 0..256 {
                if rank_of(&r.scores, i) < k {
                    best_sel = best_sel.max((1.0 + r.gains[i]).log2());
                }
            }
            num += best_sel;
            den += (1.0 + r.gains.iter().cloned().fold(0.0, f64::max)).log2();
        }
        let t = throughput_ratio(&recs, k).unwrap();
        assert!((t - num / den).abs() < 1e-12, "k={k}: {t} vs {}", num / den);
    }
    assert!((throughput_ratio(&recs, 256).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn perfect_top1_gives_unit_throughput() {
    let mut recs = random_records(7, 30);
    for r in &mut recs {
        r.scores = r.gains.clone();
    }
    assert_eq!(topk_accuracy(&recs, 1).unwrap(), 1.0);
    assert_eq!(throughput_ratio(&recs, 1).unwrap(), 1.0);
}

#[test]
fn report_agrees_with_single_k_functions() {
    let recs = random_records(8, 60);
    let rep = MetricsReport::full(&recs).unwrap();
    assert_eq!(rep.rows.len(), 256);
    assert_eq!(rep.samples, 60);
    assert_eq!(rep.los_samples + rep.nlos_samples, 60);
    let los: Vec<Scored> = recs.iter().filter(|r| r.los).cloned().collect();
    let nlos: Vec<Scored> = recs.iter().filter(|r| !r.los).cloned().collect();
    for k in [1, 5, 10, 200] {
        let row = rep.row(k).unwrap();
        assert_eq!(row.accuracy, topk_accuracy(&recs, k).unwrap());
        assert!((row.throughput_ratio - throughput_ratio(&recs, k).unwrap()).abs() < 1e-12);
        assert_eq!(row.accuracy_los.unwrap(), topk_accuracy(&los, k).unwrap());
        assert_eq!(row.accuracy_nlos.unwrap(), topk_accuracy(&nlos, k).unwrap());
        assert!((row.throughput_los.unwrap() - throughput_ratio(&los, k).unwrap()).abs() < 1e-12);
        assert!((row.throughput_nlos.unwrap() - throughput_ratio(&nlos, k).unwrap()).abs() < 1e-12);
    }
    let csv = rep.to_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,accuracy,throughput_ratio,accuracy_los,accuracy_nlos,throughput_los,throughput_nlos"
    );
    assert_eq!(lines.count(), 256);
}

#[test]
fn missing_class_reports_na() {
    let recs: Vec<Scored> = random_records(9, 10)
        .into_iter()
        .map(|mut r| {
            r.los = true;
            r
        })
        .collect();
    let rep = MetricsReport::compute(&recs, &[1, 5]).unwrap();
    assert_eq!(rep.row(1).unwrap().accuracy_nlos, None);
    let csv = rep.to_csv().unwrap();
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((fields[4], fields[6]), ("NA", "NA"));
    assert_ne!(fields[3], "NA");
}

#[test]
fn softmax_gradient_is_prediction_minus_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z: Vec<f64> = (0..256).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
    let l = make_labels(&random_gains(&mut rng, 256), LabelNorm::L2).unwrap();
    let mut store = ParamStore::new();
    store.insert("z", Tensor::from_vec(z)).unwrap();
    let mut tape = Tape::new();
    let zv = tape.param(&store, "z").unwrap();
    let q = tape.softmax(zv).unwrap();
    let yhat = tape.value(q).data().to_vec();
    let loss = tape.cross_entropy(q, &kd_target(&l, 0.0), LOG_EPS).unwrap();
    tape.backward(loss, &mut store).unwrap();
    let g = store.get("z").unwrap().grad.clone().unwrap();
    for i in 0..256 {
        assert!((g[i] - (yhat[i] - l.ystar[i])).abs() < 1e-12, "entry {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kd_loss_is_affine_in_beta(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = make_labels(&random_gains(&mut rng, 256), LabelNorm::L2).unwrap();
        let q = random_simplex(&mut rng, 256);
        let at = |b| kd_loss(&l, &q, &LossConfig::with_beta(b)).unwrap();
        prop_assert!((at(0.5) - 0.5 * (at(0.0) + at(1.0))).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_monotone_and_bounded(seed in any::<u64>(), n in 1usize..20) {
        let rep = MetricsReport::full(&random_records(seed, n)).unwrap();
        for w in rep.rows.windows(2) {
            prop_assert!(w[1].accuracy >= w[0].accuracy);
            prop_assert!(w[1].throughput_ratio >= w[0].throughput_ratio);
        }
        for r in &rep.rows {
            prop_assert!(r.throughput_ratio <= 1.0 + 1e-15);
        }
        let last = rep.row(256).unwrap();
        prop_assert_eq!(last.accuracy, 1.0);
        prop_assert!((last.throughput_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplication_leaves_throughput_unchanged(seed in any::<u64>(), n in 1usize..15, k in 1usize..=256) {
        let recs = random_records(seed, n);
        let doubled: Vec<Scored> = recs.iter().chain(&recs).cloned().collect();
        let a = throughput_ratio(&recs, k).unwrap();
        let b = throughput_ratio(&doubled, k).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn topk_indices_are_distinct_and_in_range(seed in any::<u64>(), k in 1usize..=256) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_simplex(&mut rng, 256);
        let sel = topk_select(&s, k).unwrap();
        prop_assert_eq!(sel.len(), k);
        let mut sorted = sel.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(sel.windows(2).all(|w| s[w[0]] >= s[w[1]]));
    }
}
