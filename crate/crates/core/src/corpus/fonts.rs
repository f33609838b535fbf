//! Glyph sources: procedural stroke fonts that cover any code point, and
//! TrueType files rasterized with `fontdue`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::Raster;

use super::CorpusError;

/// Stroke weight of a procedural font, in pixels at a 64-px em.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrokeWeight {
    Light,
    Regular,
    Bold,
}

impl StrokeWeight {
    fn width(self) -> f64 {
        match self {
            Self::Light => 2.5,
            Self::Regular => 4.0,
            Self::Bold => 6.5,
        }
    }
}

#[derive(Clone)]
pub enum FontSource {
    Stroke(StrokeWeight),
    TrueType(Arc<fontdue::Font>),
}

impl std::fmt::Debug for FontSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stroke(w) => write!(f, "Stroke({w:?})"),
            Self::TrueType(_) => write!(f, "TrueType"),
        }
    }
}

/// Id-addressable set of font sources.
#[derive(Clone, Debug)]
pub struct FontRegistry {
    fonts: Vec<(String, FontSource)>,
}

pub const DEFAULT_FONT: &str = "stroke-regular";

impl Default for FontRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FontRegistry {
    /// The three procedural stroke fonts; always available.
    pub fn builtin() -> Self {
        Self {
            fonts: vec![
                ("stroke-light".into(), FontSource::Stroke(StrokeWeight::Light)),
                (DEFAULT_FONT.into(), FontSource::Stroke(StrokeWeight::Regular)),
                ("stroke-bold".into(), FontSource::Stroke(StrokeWeight::Bold)),
            ],
        }
    }

    /// Adds every `.ttf`/`.otf` file directly inside `dir`, keyed by file stem.
    pub fn add_dir(&mut self, dir: &Path) -> Result<usize, CorpusError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| CorpusError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ttf") || e.eq_ignore_ascii_case("otf"))
            })
            .collect();
        paths.sort();
        let mut added = 0;
        for p in paths {
            let bytes = std::fs::read(&p).map_err(|e| CorpusError::io(&p, e))?;
            let font = fontdue::Font::from_bytes(bytes, fontdue::FontSettings::default())
                .map_err(|e| CorpusError::Config(format!("{}: {e}", p.display())))?;
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("font").to_string();
            if self.get(&id).is_none() {
                self.fonts.push((id, FontSource::TrueType(Arc::new(font))));
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.fonts.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&FontSource> {
        self.fonts.iter().find(|(i, _)| i == id).map(|(_, f)| f)
    }

    pub fn render(&self, id: &str, unit: &str, size: usize) -> Result<Raster, CorpusError> {
        let font = self
            .get(id)
            .ok_or_else(|| CorpusError::Config(format!("unknown font '{id}'")))?;
        Ok(render_unit(font, unit, size))
    }
}

/// Renders one glyph unit (a character or a word), cropped to its ink and
/// letterboxed into `size × size` with intensities in [0, 255].
pub fn render_unit(font: &FontSource, unit: &str, size: usize) -> Raster {
    let em = 64;
    let chars: Vec<char> = unit.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.is_empty() {
        return Raster::zeros(size, size);
    }
    let cell_w = if chars.len() == 1 { em } else { em * 5 / 8 };
    let mut line = Raster::zeros(cell_w * chars.len(), em);
    for (i, &c) in chars.iter().enumerate() {
        let glyph = render_char(font, c, em).resized(cell_w, em);
        for y in 0..em {
            for x in 0..cell_w {
                let v = glyph.get(x, y);
                if v > 0.0 {
                    line.set(i * cell_w + x, y, v);
                }
            }
        }
    }
    match line.ink_bbox(0.0) {
        Some((x0, y0, x1, y1)) => crop(&line, x0, y0, x1, y1).letterboxed(size),
        None => Raster::zeros(size, size),
    }
}

fn crop(r: &Raster, x0: usize, y0: usize, x1: usize, y1: usize) -> Raster {
    let mut out = Raster::zeros(x1 - x0, y1 - y0);
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(x - x0, y - y0, r.get(x, y));
        }
    }
    out
}

fn render_char(font: &FontSource, c: char, em: usize) -> Raster {
    match font {
        FontSource::Stroke(w) => stroke_char(c, *w, em),
        FontSource::TrueType(f) => {
            if f.lookup_glyph_index(c) == 0 {
                return stroke_char(c, StrokeWeight::Regular, em);
            }
            let (m, coverage) = f.rasterize(c, em as f32 * 0.8);
            let mut out = Raster::zeros(em, em);
            let ox = (em.saturating_sub(m.width)) / 2;
            let oy = (em.saturating_sub(m.height)) / 2;
            for y in 0..m.height.min(em) {
                for x in 0..m.width.min(em) {
                    out.set(ox + x, oy + y, coverage[y * m.width + x] as f64);
                }
            }
            out
        }
    }
}

/// Deterministic pseudo-glyph: a handful of strokes seeded by the code point.
fn stroke_char(c: char, weight: StrokeWeight, em: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ c as u64);
    let lo = em as f64 * 0.1;
    let hi = em as f64 * 0.9;
    let mut segs: Vec<[f64; 4]> = Vec::new();
    // One spanning horizontal and one spanning vertical stroke keep the ink box square-ish.
    let y = rng.random_range(lo + 6.0..hi - 6.0);
    segs.push([lo, y, hi, y]);
    let x = rng.random_range(lo + 6.0..hi - 6.0);
    segs.push([x, lo, x, hi]);
    for _ in 0..rng.random_range(1..5) {
        let kind = rng.random_range(0..4);
        let a = rng.random_range(lo..hi);
        let b = rng.random_range(lo..hi);
        let c0 = rng.random_range(lo..hi);
        let len = rng.random_range(em as f64 * 0.2..em as f64 * 0.6);
        segs.push(match kind {
            0 => [a, c0, (a + len).min(hi), c0],
            1 => [c0, a, c0, (a + len).min(hi)],
            2 => [a, b, (a + len * 0.7).min(hi), (b + len * 0.7).min(hi)],
            _ => [a, b, (a - len * 0.7).max(lo), (b + len * 0.7).min(hi)],
        });
    }
    let half = weight.width() / 2.0;
    let mut out = Raster::zeros(em, em);
    for py in 0..em {
        for px in 0..em {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let d = segs
                .iter()
                .map(|s| segment_distance(x, y, s))
                .fold(f64::INFINITY, f64::min);
            let cov = (half - d + 0.5).clamp(0.0, 1.0);
            if cov > 0.0 {
                out.set(px, py, (cov * 255.0).round());
            }
        }
    }
    out
}

fn segment_distance(x: f64, y: f64, s: &[f64; 4]) -> f64 {
    let (dx, dy) = (s[2] - s[0], s[3] - s[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - s[0]) * dx + (y - s[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (px, py) = (s[0] + t * dx, s[1] + t * dy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_fonts_render_every_code_point() {
        let reg = FontRegistry::builtin();
        for id in reg.ids() {
            for unit in ["北", "京", "A", "logo"] {
                let g = reg.render(id, unit, 64).unwrap();
                assert_eq!(g.dims(), (64, 64));
                assert!(g.pixels().iter().any(|&v| v > 200.0), "{id} {unit}");
                assert!(g.pixels().iter().all(|&v| (0.0..=255.0).contains(&v)));
            }
        }
    }

    #[test]
    fn distinct_characters_differ_and_rendering_is_stable() {
        let reg = FontRegistry::builtin();
        let a = reg.render(DEFAULT_FONT, "春", 64).unwrap();
        let b = reg.render(DEFAULT_FONT, "风", 64).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, reg.render(DEFAULT_FONT, "春", 64).unwrap());
    }

    #[test]
    fn words_are_letterboxed_wide() {
        let g = FontRegistry::builtin().render(DEFAULT_FONT, "word", 64).unwrap();
        let (x0, y0, x1, y1) = g.ink_bbox(0.0).unwrap();
        assert!(x1 - x0 > y1 - y0);
    }

    #[test]
    fn unknown_font_is_a_config_error() {
        assert!(matches!(
            FontRegistry::builtin().render("nope", "a", 64),
            Err(CorpusError::Config(_))
        ));
    }
}
