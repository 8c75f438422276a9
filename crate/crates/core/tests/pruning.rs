mod common;

use lidarbeam::curriculum::CurriculumMode;
use lidarbeam::model::{AttentionConfig, AttentionVariant, BeamClassifier, ModelConfig, ModelInput};
use lidarbeam::pruning::*;
use lidarbeam::sim::{generate_dataset, GenConfig};
use lidarbeam::tensor::{Tape, Tensor};
use lidarbeam::trainer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> BeamClassifier {
    common::biased_model(seed)
}

fn random_input(rng: &mut ChaCha8Rng) -> ModelInput {
    ModelInput {
        grid: (0..4000).map(|_| [-2.0, -1.0, 0.0, 0.0, 1.0][rng.gen_range(0..5)]).collect(),
        veh_xy: [rng.gen(), rng.gen()],
    }
}

#[test]
fn smallest_fraction_examples() {
    assert_eq!(lowest_fraction(&[0.1, 0.5, 0.3], 1.0 / 3.0), vec![0]);
    assert_eq!(lowest_fraction(&[0.2, 0.9, 0.5], 1.0 / 3.0), vec![0]);
    assert_eq!(lowest_fraction(&[0.4, 0.4, 0.4, 0.1], 0.5), vec![3, 0]);
    assert!(lowest_fraction(&[1.0, 2.0], 0.0).is_empty());
}

#[test]
fn zero_ratio_changes_nothing() {
    let m = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_input(&mut rng);
    for flavor in PruneFlavor::ALL {
        let mask = prune(&m, None, flavor, 0.0).unwrap();
        assert_eq!(mask.pruned_weights(), 0);
        let mut p = m.clone();
        mask.apply(&mut p.params).unwrap();
        assert_eq!(p.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
}

#[test]
fn unstructured_matches_global_sort_oracle() {
    common::unstructured_matches_global_sort(&model(2), 0.4);
}

#[test]
fn structured_matches_per_layer_mean_oracle() {
    common::structured_matches_per_layer_sort(&model(3), 0.4);
}

/// Dense forward with listed output units forced to zero after each layer.
fn zeroed_forward(m: &BeamClassifier, mask: &PruneMask, x: &ModelInput) -> Vec<f64> {
    let unit_keep = |name: &str| -> Vec<f64> {
        let keep = &mask.get(&format!("{name}.b")).unwrap().keep;
        keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    };
    let channel_mask = |tape: &mut Tape, name: &str, shape: &[usize]| {
        let per = unit_keep(name);
        let plane: usize = shape[1..].iter().product();
        let data = per.iter().flat_map(|&k| std::iter::repeat(k).take(plane)).collect();
        tape.input(Tensor::new(shape.to_vec(), data).unwrap())
    };
    let cfg = &m.config;
    let mut tape = Tape::new();
    let mut h = tape.input(Tensor::new(vec![1, 200, 20], x.grid.clone()).unwrap());
    for (i, c) in cfg.convs.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        let w = tape.param(&m.params, &format!("{name}.w")).unwrap();
        let b = tape.param(&m.params, &format!("{name}.b")).unwrap();
        let z = tape.conv2d(h, w, b, c.stride, c.padding).unwrap();
        let r = tape.relu(z).unwrap();
        let shape = tape.value(r).shape().to_vec();
        let mk = channel_mask(&mut tape, &name, &shape);
        h = tape.mul(r, mk).unwrap();
    }
    h = tape.maxpool2d_floor(h, 2, 2).unwrap();
    let w = tape.param(&m.params, "conv6.w").unwrap();
    let b = tape.param(&m.params, "conv6.b").unwrap();
    let z = tape.conv2d(h, w, b, 1, 1).unwrap();
    let r = tape.relu(z).unwrap();
    let shape = tape.value(r).shape().to_vec();
    let mk = channel_mask(&mut tape, "conv6", &shape);
    h = tape.mul(r, mk).unwrap();
    h = tape.reshape(h, &[250]).unwrap();
    for i in 1..=5 {
        let name = format!("fc{i}");
        let w = tape.param(&m.params, &format!("{name}.w")).unwrap();
        let b = tape.param(&m.params, &format!("{name}.b")).unwrap();
        h = tape.linear(h, w, b).unwrap();
        if i < 5 {
            h = tape.relu(h).unwrap();
            let n = tape.value(h).len();
            let mk = tape.input(Tensor::new(vec![n], unit_keep(&name)).unwrap());
            h = tape.mul(h, mk).unwrap();
        }
        if i == 1 {
            let xy = tape.input(Tensor::from_vec(x.veh_xy.to_vec()));
            h = tape.concat(h, xy).unwrap();
        }
    }
    let q = tape.softmax(h).unwrap();
    tape.value(q).data().to_vec()
}

#[test]
fn structured_forward_equals_zero_injected_dense_forward() {
    let m = model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for ratio in [0.2, 0.4, 0.6] {
        let mask = prune_structured(&m, None, ratio).unwrap();
        let mut pruned = m.clone();
        mask.apply(&mut pruned.params).unwrap();
        for _ in 0..3 {
            let x = random_input(&mut rng);
            assert_eq!(pruned.predict(&x).unwrap(), zeroed_forward(&m, &mask, &x), "ratio {ratio}");
        }
    }
}

#[test]
fn cumulative_ratio_follows_counting_identity() {
    let m = model(5);
    let a = prune_unstructured(&m, None, 0.3).unwrap();
    let b = prune_unstructured(&m, Some(&a), 0.3).unwrap();
    let total = b.total_weights() as f64;
    assert!((b.pruned_weights() as f64 - 0.51 * total).abs() <= 1.0);
    for (ea, eb) in a.entries.iter().zip(&b.entries) {
        assert!(ea.keep.iter().zip(&eb.keep).all(|(ka, kb)| *ka || !*kb));
    }
    let c = [0.2, 0.25, 1.0 / 3.0]
        .iter()
        .fold(None::<PruneMask>, |acc, &r| Some(prune_unstructured(&m, acc.as_ref(), r).unwrap()))
        .unwrap();
    assert!((c.pruned_weights() as f64 - 0.6 * total).abs() <= 1.5);
}

#[test]
fn invalid_ratios_and_overpruning_are_rejected() {
    let m = model(6);
    assert!(prune_unstructured(&m, None, 1.0).is_err());
    assert!(prune_unstructured(&m, None, -0.1).is_err());
    assert!(prune_structured(&m, None, 0.95).is_err());
    let u = prune_unstructured(&m, None, 0.1).unwrap();
    assert!(prune_structured(&m, Some(&u), 0.1).is_err());
}

#[test]
fn attention_weights_are_prunable_and_output_layer_is_not() {
    let cfg = ModelConfig::with_attention(AttentionVariant::EmbeddedGaussian);
    let m = BeamClassifier::new(cfg).unwrap();
    let names = prunable_weights(&m);
    assert!(names.contains(&"attn.phi1.w".to_string()));
    assert!(!names.contains(&"fc5.w".to_string()));
    assert!(names.iter().all(|n| n.ends_with(".w")));
    let _ = AttentionConfig::with_variant(AttentionVariant::Dot);
}

#[test]
fn mask_round_trips_through_checkpoint_arrays() {
    let m = model(7);
    let mask = prune_structured(&m, None, 0.4).unwrap();
    let arrays = mask.to_arrays(&m.params);
    assert_eq!(PruneMask::from_arrays(PruneFlavor::Structured, &arrays).unwrap(), mask);
}

fn data() -> (Vec<Sample>, Vec<Sample>) {
    let recs = generate_dataset(&GenConfig::default(), 20_000, 90).unwrap();
    let (all, _) = prepare_samples(&recs, &TrainConfig::default()).unwrap();
    let (a, b) = all.split_at(60);
    (a.to_vec(), b.to_vec())
}

#[test]
fn iterative_loop_keeps_masked_weights_at_zero() {
    let (tr, te) = data();
    let mut ft = TrainConfig::default().with_epochs(5).unwrap();
    ft.batch_size = 8;
    ft.curriculum.mode = CurriculumMode::Standard;
    let base = BeamClassifier::new(ModelConfig::default()).unwrap();

    let (_, _, only) = iterative_prune_finetune(base.clone(), PruneFlavor::Unstructured, &[], &ft, 0, &tr, &te).unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].ratio, 0.0);

    for flavor in PruneFlavor::ALL {
        let (m, mask, reps) = iterative_prune_finetune(base.clone(), flavor, &[0.3, 0.3], &ft, 0, &tr, &te).unwrap();
        assert_eq!(reps.len(), 3);
        assert!(reps.windows(2).all(|w| w[1].ratio >= w[0].ratio));
        for e in &mask.entries {
            let t = m.params.get(&e.name).unwrap().data();
            for (i, k) in e.keep.iter().enumerate() {
                if !k {
                    assert_eq!(t[i], 0.0, "{} entry {i}", e.name);
                }
            }
        }
        let csv = sparsity_csv(&reps).unwrap();
        assert!(csv.starts_with("ratio,flavor,A1,A5,A10,T1,T5,T10\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lowest_fraction_matches_sort(seed in any::<u64>(), n in 1usize..200, ratio in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 10.0).floor()).collect();
        let got = lowest_fraction(&s, ratio);
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(&got[..], &o[..got.len()]);
        prop_assert!((got.len() as f64 - ratio * n as f64).abs() <= 0.5);
    }
}
