use proptest::prelude::*;

use logoforge_core::composition::{compose_layout, hard_overlap, place_glyph, HARD_FOREGROUND};
use logoforge_core::corpus::{generate_synthetic_corpus, LogoRecord, SynthConfig, Vocabulary};
use logoforge_core::encoding::ConditionFeatures;
use logoforge_core::generator::{sample_noise, Generator};
use logoforge_core::layout::{LayoutFile, LayoutParams, LayoutSequence, CANVAS_SIZE, GLYPH_SIZE};
use logoforge_core::model::{LayoutModel, ModelConfig};
use logoforge_core::nn::Tensor;
use logoforge_core::raster::{Raster, V_MAX};

const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

/// A glyph whose ink touches all four edges: a solid border around random fill.
fn framed_glyph(fill: &[f64]) -> Raster {
    let n = GLYPH_SIZE;
    let mut g = Raster::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let edge = x == 0 || y == 0 || x == n - 1 || y == n - 1;
            g.set(x, y, if edge { V_MAX } else { fill[(y * n + x) % fill.len()] });
        }
    }
    g
}

fn box_on_canvas(lo: f64, hi: f64) -> impl Strategy<Value = LayoutParams> {
    let c = CANVAS_SIZE as f64;
    (lo..=hi, lo..=hi, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(move |(w, h, fx, fy)| {
        LayoutParams::new(w / 2.0 + fx * (c - w), h / 2.0 + fy * (c - h), w, h)
    })
}

fn bbox_error(bbox: (usize, usize, usize, usize), p: &LayoutParams) -> f64 {
    let (x0, y0, x1, y1) = p.corners();
    [bbox.0 as f64 - x0, bbox.1 as f64 - y0, bbox.2 as f64 - x1, bbox.3 as f64 - y1]
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
}

fn small_model(seed: u64) -> LayoutModel {
    let config = ModelConfig {
        d_v: 8,
        d_e: 8,
        d_c: 8,
        d_z: 4,
        visual_width: 2,
        img_channels: [2, 2, 4, 4],
        ..Default::default()
    };
    LayoutModel::new(config, Vocabulary::new(["a".to_string()]), None, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonzero_bbox_matches_box_up_to_native_scale(p in box_on_canvas(8.0, 64.0), fill in prop::collection::vec(0.0..V_MAX, 1..16)) {
        let out = place_glyph(&framed_glyph(&fill), &p, CANVAS);
        let bbox = out.ink_bbox(0.0).expect("ink on canvas");
        prop_assert!(bbox_error(bbox, &p) <= 1.0, "{bbox:?} vs {p:?}");
    }

    #[test]
    fn foreground_bbox_matches_box_at_any_scale(p in box_on_canvas(8.0, 128.0)) {
        let out = place_glyph(&Raster::filled(GLYPH_SIZE, GLYPH_SIZE, V_MAX), &p, CANVAS);
        let bbox = out.ink_bbox(HARD_FOREGROUND * V_MAX - 1e-9).expect("ink on canvas");
        prop_assert!(bbox_error(bbox, &p) <= 0.5 + 1e-9, "{bbox:?} vs {p:?}");
    }

    #[test]
    fn separating_two_solid_glyphs_never_adds_overlap(
        a in box_on_canvas(16.0, 60.0),
        dx in -20.0..20.0f64,
        dy in -20.0..20.0f64,
        step in 0.1..6.0f64,
    ) {
        let solid = Raster::filled(GLYPH_SIZE, GLYPH_SIZE, V_MAX);
        let c = CANVAS_SIZE as f64;
        let b = LayoutParams::new((a.x_c + dx).clamp(8.0, c - 8.0), (a.y_c + dy).clamp(8.0, c - 8.0), a.w, a.h);
        // Move b directly away from a along the line joining their centers.
        let (vx, vy) = (b.x_c - a.x_c, b.y_c - a.y_c);
        let norm = (vx * vx + vy * vy).sqrt().max(1e-9);
        let moved = LayoutParams::new(b.x_c + step * vx / norm, b.y_c + step * vy / norm, b.w, b.h);
        let overlap = |q: &LayoutParams| {
            hard_overlap(&[place_glyph(&solid, &a, CANVAS), place_glyph(&solid, q, CANVAS)], V_MAX)
        };
        prop_assert!(overlap(&moved) <= overlap(&b));
    }

    #[test]
    fn composed_pixels_stay_in_range(boxes in prop::collection::vec(box_on_canvas(8.0, 100.0), 1..8)) {
        let solid = Raster::filled(GLYPH_SIZE, GLYPH_SIZE, V_MAX);
        let glyphs = vec![&solid; boxes.len()];
        let logo = compose_layout(&glyphs, &boxes, CANVAS, V_MAX).unwrap();
        prop_assert!(logo.pixels().iter().all(|&v| (0.0..=V_MAX).contains(&v)));
    }

    #[test]
    fn layout_json_round_trips(boxes in prop::collection::vec(box_on_canvas(1.0, 128.0), 1..=20)) {
        let seq = LayoutSequence::new(boxes);
        let file = LayoutFile::from_json(&seq.to_json(CANVAS)).unwrap();
        prop_assert_eq!(file.canvas, [CANVAS_SIZE, CANVAS_SIZE]);
        prop_assert_eq!(file.to_sequence(), seq);
    }

    #[test]
    fn generator_keeps_length_and_range(n in 1usize..=20, seed in any::<u64>(), spread in 0.1..100.0f64) {
        let g = Generator::new(6, 3, CANVAS, seed);
        let data: Vec<f64> = (0..n * 6).map(|i| ((i as f64 * 0.618 + seed as f64 * 1e-9).fract() - 0.5) * spread).collect();
        let cond = ConditionFeatures::new(Tensor::from_vec(&[n, 6], data)).unwrap();
        let layout = g.generate_layout(&cond, &sample_noise(3, seed).unwrap()).unwrap();
        prop_assert_eq!(layout.len(), n);
        prop_assert!(layout.check_range(CANVAS).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_records_round_trip_and_recompose(seed in any::<u64>()) {
        let records = generate_synthetic_corpus(&SynthConfig { records: 4, ..Default::default() }, seed).unwrap();
        for r in &records {
            let back: LogoRecord = serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap();
            prop_assert_eq!(&back, r);
            let logo = compose_layout(&r.glyph_rasters(), &r.layout, CANVAS, V_MAX).unwrap();
            prop_assert_eq!(&logo, &r.logo_image);
        }
    }

    #[test]
    fn holistic_feature_is_the_last_row(seed in any::<u64>(), n in 1usize..=6) {
        let records = generate_synthetic_corpus(&SynthConfig { records: 1, min_units: n.clamp(2, 6), max_units: 6, ..Default::default() }, seed).unwrap();
        let r = &records[0];
        let cond = small_model(seed).condition_for(&r.glyphs, &r.units).unwrap();
        prop_assert_eq!(cond.holistic(), cond.row(cond.len() - 1));
        prop_assert!(cond.sequence().data().iter().all(|v| v.is_finite()));
    }
}
