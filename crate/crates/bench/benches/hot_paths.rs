use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use logoforge_bench::{records, toy_model};
use logoforge_core::composition::{compose_layout, compose_on_tape, overlap_on_tape, place_glyph, place_on_tape};
use logoforge_core::corpus::{FontRegistry, DEFAULT_FONT};
use logoforge_core::layout::LayoutParams;
use logoforge_core::nn::{Tape, Tensor};
use logoforge_core::raster::V_MAX;
use logoforge_core::sampling::{prepare_text, sample_candidates};
use logoforge_core::training::{train_step, TrainConfig, TrainState};

fn composition(c: &mut Criterion) {
    let recs = records(1, 8);
    let r = &recs[0];
    let glyphs = r.glyph_rasters();
    let p = LayoutParams::new(50.0, 60.0, 40.0, 30.0);
    c.bench_function("place_glyph", |b| b.iter(|| place_glyph(black_box(glyphs[0]), &p, (128, 128))));
    c.bench_function("compose_layout_n8", |b| {
        b.iter(|| compose_layout(black_box(&glyphs), &r.layout, (128, 128), V_MAX).unwrap())
    });
    c.bench_function("soft_overlap_fwd_bwd_n8", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let placed: Vec<_> = r
                .layout
                .iter()
                .zip(&glyphs)
                .map(|(p, g)| {
                    let v = tape.var(Tensor::from_vec(&[1, 4], p.to_array().to_vec()));
                    place_on_tape(&mut tape, v, vec![(*g).clone()], (128, 128))
                })
                .collect();
            let logo = compose_on_tape(&mut tape, &placed, V_MAX);
            let ol = overlap_on_tape(&mut tape, &placed, (128, 128), V_MAX);
            let s = tape.sum(logo);
            let total = tape.add(s, ol);
            black_box(tape.backward(total))
        })
    });
}

fn inference(c: &mut Criterion) {
    let recs = records(4, 4);
    let model = toy_model(&recs);
    let fonts = FontRegistry::builtin();
    let text = prepare_text(&fonts, DEFAULT_FONT, "春风十里").unwrap();
    c.bench_function("sample_candidates_k16", |b| {
        b.iter(|| sample_candidates(&model, black_box(&text), 16, 3, &[]).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let recs = records(32, 4);
    let cfg = TrainConfig::toy();
    let mut state = TrainState::new(toy_model(&recs), &cfg);
    let batch: Vec<_> = recs.iter().collect();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("train_step_toy_b32_n4", |b| b.iter(|| train_step(&mut state, &batch, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, composition, inference, training);
criterion_main!(benches);
