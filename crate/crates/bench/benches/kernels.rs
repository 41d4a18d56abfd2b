use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use va_core::attention::{bag_features, va_forward, AttentionMode, TargetFeature, VaConfig, VaParams};
use va_core::metrics::{connected_components, Connectivity, Mask};
use va_core::{Tape, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform([16, 64, 64], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform([16, 16, 3, 3], -0.1, 0.1, &mut rng);
    c.bench_function("conv2d 16x64x64 k3", |b| b.iter(|| black_box(&x).conv2d(black_box(&w), 1).unwrap()));
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = VaParams::init(VaConfig::new(16), &mut rng).unwrap();
    let maps: Vec<Tensor> = (0..9).map(|_| Tensor::uniform([16, 32, 32], -1.0, 1.0, &mut rng)).collect();
    let offsets: Vec<i32> = (-4..=4).collect();
    c.bench_function("va_forward+backward C16 N9 32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars: Vec<_> = maps.iter().map(|m| tape.leaf(m.clone())).collect();
            let bag = bag_features(&tape, &vars, &offsets).unwrap();
            let p = params.bind(&mut tape, true);
            let out = va_forward(&mut tape, &TargetFeature::new(vars[4], 0), &bag, &p, AttentionMode::Both).unwrap();
            let loss = tape.sum(out.out).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(vars[4]).is_some())
        })
    });
}

fn components(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = Mask::from_fn([32, 64, 64], |_, _, _| rng.random_bool(0.3));
    c.bench_function("connected_components 32x64x64", |b| {
        b.iter(|| connected_components(black_box(&mask), Connectivity::TwentySix).count())
    });
}

criterion_group!(benches, conv, attention, components);
criterion_main!(benches);
