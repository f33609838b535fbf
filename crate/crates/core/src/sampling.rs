//! Text-to-candidates inference shared by the command line and the HTTP
//! service, plus the reading-order overlay rendering.

use thiserror::Error;

use crate::composition::{compose_layout, hard_overlap, place_glyph};
use crate::corpus::{split_units, CorpusError, FontRegistry};
use crate::evaluation::derive_seed;
use crate::generator::sample_noise;
use crate::layout::{LayoutParams, LayoutSequence, CANVAS_SIZE, GLYPH_SIZE, MAX_GLYPHS};
use crate::model::{LayoutModel, ModelError};
use crate::raster::{CanvasImage, GlyphImage, Raster, V_MAX};

const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Glyph units of `text` rendered in `font_id`.
#[derive(Clone, Debug)]
pub struct PreparedText {
    pub units: Vec<String>,
    pub glyphs: Vec<GlyphImage>,
}

impl PreparedText {
    pub fn rasters(&self) -> Vec<&Raster> {
        self.glyphs.iter().map(|g| &g.pixels).collect()
    }
}

pub fn prepare_text(fonts: &FontRegistry, font_id: &str, text: &str) -> Result<PreparedText, SampleError> {
    let units = split_units(text);
    if units.is_empty() {
        return Err(SampleError::Argument("text has no glyph units".into()));
    }
    if units.len() > MAX_GLYPHS {
        return Err(SampleError::Argument(format!(
            "text has {} glyph units; at most {MAX_GLYPHS} are supported",
            units.len()
        )));
    }
    let glyphs = units
        .iter()
        .map(|u| Ok(GlyphImage::new(fonts.render(font_id, u, GLYPH_SIZE)?, 0)))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(PreparedText { units, glyphs })
}

/// One sampled layout with its rendering and discriminator scores.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub layout: LayoutSequence,
    pub logo: CanvasImage,
    pub seq_score: f64,
    pub img_score: f64,
}

impl Candidate {
    /// Ranking hint: mean of the two realism probabilities.
    pub fn score(&self) -> f64 {
        0.5 * (self.seq_score + self.img_score)
    }
}

/// `k` candidates for `text`; candidate `j` uses noise seed
/// `derive_seed(seed, j)`. `locks` overwrite the generated box at each
/// given index after sampling.
pub fn sample_candidates(
    model: &LayoutModel,
    prepared: &PreparedText,
    k: usize,
    seed: u64,
    locks: &[(usize, LayoutParams)],
) -> Result<Vec<Candidate>, SampleError> {
    if k == 0 {
        return Err(SampleError::Argument("k must be at least 1".into()));
    }
    let n = prepared.units.len();
    for (i, p) in locks {
        if *i >= n {
            return Err(SampleError::Argument(format!("lock index {i} out of range for {n} glyphs")));
        }
        p.check_range(*i, CANVAS)
            .map_err(|e| SampleError::Argument(e.to_string()))?;
    }
    let cond = model.condition_for(&prepared.glyphs, &prepared.units)?;
    let noise = (0..k as u64)
        .map(|j| sample_noise(model.config.d_z, derive_seed(seed, j)))
        .collect::<Result<Vec<_>, _>>()?;
    let rasters = prepared.rasters();
    model
        .sample(&cond, &noise)?
        .into_iter()
        .map(|mut layout| {
            for &(i, p) in locks {
                layout.params[i] = p;
            }
            let (s, im) = model.realism(&cond, &layout, &rasters)?;
            let logo = compose(&rasters, &layout)?;
            Ok(Candidate {
                layout,
                logo,
                seq_score: s.probability,
                img_score: im.probability,
            })
        })
        .collect()
}

pub fn compose(glyphs: &[&Raster], layout: &LayoutSequence) -> Result<CanvasImage, SampleError> {
    compose_layout(glyphs, &layout.params, CANVAS, V_MAX).map_err(|e| SampleError::Argument(e.to_string()))
}

/// Hard overlap in pixels of `layout` over `glyphs`.
pub fn layout_overlap(glyphs: &[&Raster], layout: &LayoutSequence) -> f64 {
    let placed: Vec<CanvasImage> = glyphs
        .iter()
        .zip(&layout.params)
        .map(|(g, p)| place_glyph(g, p, CANVAS))
        .collect();
    hard_overlap(&placed, V_MAX)
}

/// Hue for box `i` of `n`, red for the first and purple for the last.
pub fn order_color(i: usize, n: usize) -> [u8; 3] {
    let t = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
    let hue = 270.0 * t;
    let h = hue / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        _ => (x, 0.0, 1.0),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// The composed logo in gray with each box outlined in its reading-order color.
pub fn overlay(logo: &CanvasImage, layout: &LayoutSequence) -> image::RgbImage {
    let (w, h) = logo.dims();
    let gray = logo.to_u8(V_MAX);
    let mut img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = gray[y as usize * w + x as usize];
        image::Rgb([v, v, v])
    });
    let n = layout.len();
    for (i, p) in layout.params.iter().enumerate() {
        let color = image::Rgb(order_color(i, n));
        let (x0, y0, x1, y1) = p.corners();
        let clampx = |v: f64| (v.round() as i64).clamp(0, w as i64 - 1) as u32;
        let clampy = |v: f64| (v.round() as i64).clamp(0, h as i64 - 1) as u32;
        let (x0, x1, y0, y1) = (clampx(x0), clampx(x1 - 1.0), clampy(y0), clampy(y1 - 1.0));
        for x in x0..=x1 {
            img.put_pixel(x, y0, color);
            img.put_pixel(x, y1, color);
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, color);
            img.put_pixel(x1, y, color);
        }
    }
    img
}

/// PNG bytes of a grayscale raster.
pub fn png_bytes(r: &Raster) -> Vec<u8> {
    let img = image::GrayImage::from_raw(r.width() as u32, r.height() as u32, r.to_u8(V_MAX))
        .expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Vocabulary, DEFAULT_FONT};
    use crate::model::ModelConfig;

    fn tiny_model() -> LayoutModel {
        let config = ModelConfig {
            d_v: 8,
            d_e: 8,
            d_c: 8,
            d_z: 4,
            visual_width: 2,
            img_channels: [2, 2, 4, 4],
            ..Default::default()
        };
        LayoutModel::new(config, Vocabulary::new(["星".to_string()]), None, 1).unwrap()
    }

    #[test]
    fn colors_run_from_red_to_purple() {
        assert_eq!(order_color(0, 5), [255, 0, 0]);
        assert_eq!(order_color(4, 5), [128, 0, 255]);
        assert_eq!(order_color(0, 1), [255, 0, 0]);
    }

    #[test]
    fn too_many_units_cite_the_bound() {
        let fonts = FontRegistry::builtin();
        let err = prepare_text(&fonts, DEFAULT_FONT, &"字".repeat(21)).unwrap_err();
        assert!(err.to_string().contains("at most 20"));
        assert!(prepare_text(&fonts, DEFAULT_FONT, "   ").is_err());
        assert!(prepare_text(&fonts, "no-such-font", "星").is_err());
    }

    #[test]
    fn candidates_are_deterministic_and_locks_apply() {
        let fonts = FontRegistry::builtin();
        let model = tiny_model();
        let text = prepare_text(&fonts, DEFAULT_FONT, "星辰").unwrap();
        let a = sample_candidates(&model, &text, 3, 5, &[]).unwrap();
        let b = sample_candidates(&model, &text, 3, 5, &[]).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.layout, y.layout);
            assert_eq!(x.logo, y.logo);
            assert_eq!(x.layout.len(), 2);
            assert!(x.layout.check_range(CANVAS).is_ok());
            assert!(x.score() > 0.0 && x.score() < 1.0);
        }
        let lock = LayoutParams::new(30.0, 30.0, 20.0, 20.0);
        let c = sample_candidates(&model, &text, 2, 5, &[(1, lock)]).unwrap();
        assert_eq!(c[0].layout.params[1], lock);
        assert_eq!(c[0].layout.params[0], a[0].layout.params[0]);
        assert!(sample_candidates(&model, &text, 2, 5, &[(2, lock)]).is_err());
        assert!(sample_candidates(&model, &text, 0, 5, &[]).is_err());
    }

    #[test]
    fn overlay_outlines_boxes() {
        let logo = Raster::zeros(128, 128);
        let layout = LayoutSequence::new(vec![
            LayoutParams::new(20.0, 20.0, 10.0, 10.0),
            LayoutParams::new(80.0, 80.0, 10.0, 10.0),
        ]);
        let img = overlay(&logo, &layout);
        assert_eq!(img.get_pixel(15, 15).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(75, 80).0, order_color(1, 2));
        assert_eq!(img.get_pixel(20, 20).0, [0, 0, 0]);
    }

    #[test]
    fn png_bytes_decode_back() {
        let r = Raster::from_pixels(2, 2, vec![0.0, 255.0, 128.0, 64.0]);
        let back = image::load_from_memory(&png_bytes(&r)).unwrap().to_luma8();
        assert_eq!(back.into_raw(), r.to_u8(V_MAX));
    }
}
