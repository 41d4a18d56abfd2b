use super::*;
use crate::attention::{bag_features, va_forward, TargetFeature};
use crate::metrics::{connected_components, Connectivity};
use crate::tensor::Tape;
use crate::volume::{make_bag_indices, stack_25d};

fn small(seed: u64) -> PhantomConfig {
    PhantomConfig {
        grid: [12, 24, 24],
        n_lesions: 1,
        lesion_radius_mm: (2.5, 3.5),
        lesion_span: (7, 8),
        distractor_rate: 0.1,
        seed,
        ..PhantomConfig::default()
    }
}

#[test]
fn noiseless_rendering_thresholds_to_gt() {
    let cfg = PhantomConfig {
        distractor_rate: 0.0,
        noise_sigma: 0.0,
        ..PhantomConfig::default()
    };
    let p = gen_phantom(&cfg).unwrap();
    let cut = (LIVER_LEVEL + BLOB_LEVEL) / 2.0;
    let rendered: Vec<bool> = p.volume.values().iter().map(|&v| v > cut).collect();
    assert_eq!(rendered, p.lesion_mask().data());
    assert!(p.distractors.is_empty());
    assert_eq!(p.lesions.len(), cfg.n_lesions);
}

#[test]
fn same_seed_same_phantom() {
    let cfg = PhantomConfig::default();
    let a = gen_phantom(&cfg).unwrap();
    let b = gen_phantom(&cfg).unwrap();
    assert_eq!(a, b);
    let c = gen_phantom(&PhantomConfig { seed: 13, ..cfg }).unwrap();
    assert_ne!(a.volume, c.volume);
}

#[test]
fn values_are_unit_and_labels_valid() {
    let p = gen_phantom(&PhantomConfig::default()).unwrap();
    assert!(p.volume.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(p.labels.labels().iter().all(|&l| l <= 2));
    for b in &p.lesions {
        assert!(b.span >= 5);
    }
    for d in &p.distractors {
        assert_eq!(d.span, 3);
    }
}

#[test]
fn impossible_lesions_are_config_errors() {
    let cfg = PhantomConfig {
        grid: [4, 16, 16],
        ..PhantomConfig::default()
    };
    assert!(matches!(gen_phantom(&cfg), Err(Error::Config(_))));
    let crowded = PhantomConfig {
        n_lesions: 200,
        ..PhantomConfig::default()
    };
    assert!(matches!(gen_phantom(&crowded), Err(Error::Config(_))));
    let bad = PhantomConfig {
        lesion_radius_mm: (0.0, 1.0),
        ..PhantomConfig::default()
    };
    assert!(bad.validate().is_err());
}

/// Classifies every blob by how many slices its connected component spans.
#[test]
fn persistence_oracle_separates_blobs() {
    for seed in 0..20 {
        let p = gen_phantom(&PhantomConfig { seed, ..PhantomConfig::default() }).unwrap();
        let cut = (LIVER_LEVEL + BLOB_LEVEL) / 2.0;
        let bright = Mask::threshold(p.volume.dims(), p.volume.values(), cut).unwrap();
        let cc = connected_components(&bright, Connectivity::Six);
        let classify = |b: &Blob| {
            let z = b.z0 + b.span / 2;
            let (y, x) = (b.center[0].round() as usize, b.center[1].round() as usize);
            let label = cc.labels[bright.index(z, y, x)];
            assert!(label > 0, "seed {seed}: blob centre not bright");
            let mut zs: Vec<usize> = cc.members[label as usize - 1].iter().map(|&i| bright.coords(i).0).collect();
            zs.sort_unstable();
            zs.dedup();
            zs.len() >= 5
        };
        assert!(p.lesions.iter().all(&classify), "seed {seed}");
        assert!(p.distractors.iter().all(|b| !classify(b)), "seed {seed}");
    }
}

#[test]
fn distractor_slab_matches_lesion_slab_in_noiseless_phantoms() {
    // Centre slab of a distractor and an interior slab of a lesion both
    // show the full disc on all three channels.
    let blob = Blob {
        center: [8.0, 8.0],
        radii: [3.0, 3.0],
        z0: 0,
        span: 3,
    };
    let pixels = |z| (0..16 * 16).filter(|&i| blob.covers(z, i / 16, i % 16)).count();
    assert_eq!(pixels(0), pixels(2));
    assert_eq!(pixels(1), pixels(0));
}

#[test]
fn cached_forward_matches_va_forward() {
    let p = gen_phantom(&small(3)).unwrap();
    let model = ToyModel::init(ToyConfig { bag_size: 5, ..ToyConfig::default() }, 9).unwrap();
    let mut tape = Tape::new();
    let (logits, _) = model.forward(&mut tape, &p.volume, 0..12, false).unwrap();

    // Reference: the same backbone, but va_forward on an explicit bag.
    let va = model.va.as_ref().unwrap();
    let mut t2 = Tape::new();
    let bound = va.bind(&mut t2, false);
    let cw: Vec<_> = model.convs.iter().map(|c| t2.constant(c.clone())).collect();
    let bw: Vec<_> = model.biases.iter().map(|b| t2.constant(b.clone())).collect();
    let hw = t2.constant(model.head_w.clone());
    let hb = t2.constant(model.head_b.clone());
    let mut feats = Vec::new();
    for z in 0..12 {
        let mut h = t2.constant(model::input_transform(stack_25d(&p.volume, z).unwrap().channels));
        for i in 0..3 {
            let c = t2.conv2d(h, cw[i], 1).unwrap();
            let c = t2.add_broadcast(c, bw[i]).unwrap();
            h = t2.relu(c).unwrap();
        }
        feats.push(h);
    }
    let spec = model.bag();
    for z in 0..12 {
        let maps: Vec<_> = make_bag_indices(z, &spec, 12).into_iter().map(|c| feats[c]).collect();
        let bag = bag_features(&t2, &maps, &spec.offsets()).unwrap();
        let out = va_forward(&mut t2, &TargetFeature::new(feats[z], 0), &bag, &bound, model.config.mode).unwrap();
        let head = t2.conv2d(out.out, hw, 0).unwrap();
        let l = t2.add_broadcast(head, hb).unwrap();
        let diff = t2.value(l).max_abs_diff(tape.value(logits[z]));
        assert!(diff <= 1e-12, "z={z} diff {diff}");
    }
}

#[test]
fn zero_lr_leaves_parameters_unchanged() {
    let data = vec![gen_phantom(&small(1)).unwrap()];
    let mut model = ToyModel::init(ToyConfig { bag_size: 3, ..ToyConfig::default() }, 5).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.0,
        block: 6,
        seed: 1,
    };
    let out = train_toy(&mut model, &data, &cfg).unwrap();
    assert_eq!(out.loss_curve.len(), 2);
    assert_eq!(model, before);
}

#[test]
fn training_is_deterministic() {
    let data = vec![gen_phantom(&small(2)).unwrap()];
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.3,
        block: 6,
        seed: 4,
    };
    let run = || {
        let mut m = ToyModel::init(ToyConfig { bag_size: 3, ..ToyConfig::default() }, 5).unwrap();
        let out = train_toy(&mut m, &data, &cfg).unwrap();
        (m, out)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for (x, y) in a.params().iter().zip(b.params()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn every_attention_weight_gets_gradient() {
    let p = gen_phantom(&small(4)).unwrap();
    let model = ToyModel::init(ToyConfig { bag_size: 3, ..ToyConfig::default() }, 6).unwrap();
    let mut tape = Tape::new();
    let (logits, vars) = model.forward(&mut tape, &p.volume, 3..9, true).unwrap();
    let lesion = p.lesion_mask();
    let mut loss = None;
    for (l, z) in logits.iter().zip(3..9) {
        let t = Tensor::new([1, 24, 24], lesion.slice(z).data().iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let b = tape.bce_with_logits(*l, &t).unwrap();
        loss = Some(match loss {
            None => b,
            Some(acc) => tape.add(acc, b).unwrap(),
        });
    }
    tape.backward(loss.unwrap()).unwrap();
    let n_backbone = 8;
    assert_eq!(vars.len(), n_backbone + 7);
    for (k, v) in vars.iter().enumerate().skip(n_backbone) {
        let g = tape.grad(*v).expect("attention weight reached");
        assert!(g.data().iter().any(|&x| x != 0.0), "attention tensor {k} has zero gradient");
    }
}

#[test]
fn nan_loss_reports_epoch() {
    let data = vec![gen_phantom(&small(5)).unwrap()];
    let mut model = ToyModel::init(ToyConfig { bag_size: 3, ..ToyConfig::default() }, 5).unwrap();
    model.head_b.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.1,
        block: 12,
        seed: 1,
    };
    let err = train_toy(&mut model, &data, &cfg).unwrap_err();
    assert!(err.is_numeric());
    assert!(err.to_string().contains("epoch 0"), "{err}");
}

#[test]
fn trend_check() {
    let down: Vec<f64> = (0..30).map(|i| 1.0 / (1.0 + i as f64)).collect();
    assert!(loss_trend_decreasing(&down, 10));
    let up: Vec<f64> = down.iter().rev().copied().collect();
    assert!(!loss_trend_decreasing(&up, 10));
    assert!(!loss_trend_decreasing(&down[..5], 10));
}

#[test]
fn median_examples() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

#[test]
fn oracle_and_empty_predictions() {
    let ps = [gen_phantom(&small(6)).unwrap()];
    let gt = ps[0].lesion_mask();
    let perfect = EvalCaseBuilder::from_mask(&gt, 1.0);
    let (r, _) = MetricsReport::evaluate(&[perfect]).unwrap();
    assert_eq!(r.dice_per_case, 1.0);
    assert!(r.froc.values().all(|&s| s == 1.0));
    let blank = EvalCaseBuilder::from_mask(&gt, 0.0);
    let (r, _) = MetricsReport::evaluate(&[blank]).unwrap();
    assert_eq!(r.dice_per_case, 0.0);
}

struct EvalCaseBuilder;

impl EvalCaseBuilder {
    fn from_mask(gt: &Mask, on: f64) -> crate::metrics::EvalCase {
        crate::metrics::EvalCase {
            name: "oracle".into(),
            prob: gt.data().iter().map(|&b| if b { on } else { 0.0 }).collect(),
            gt: gt.clone(),
            spacing: [1.5, 1.0, 1.0],
        }
    }
}

use crate::metrics::MetricsReport;
use crate::tensor::Tensor;
