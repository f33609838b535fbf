//! Desk-scale synthetic corpus: bundled words rendered with the registered
//! fonts and arranged by a small family of layout styles.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composition::compose_layout;
use crate::layout::{LayoutParams, CANVAS_SIZE, GLYPH_SIZE, MAX_GLYPHS};
use crate::raster::{GlyphImage, V_MAX};

use super::{CorpusError, FontRegistry, LogoRecord, RecordSource, Vocabulary, DEFAULT_FONT};

const CHINESE_WORDS: &[&str] = &[
    "北京", "星辰", "春风", "十里", "不如你", "龙门", "记忆", "神探", "包青天", "奔腾", "年代", "天真", "人类",
    "刀尖", "行走", "江湖", "少年", "明月", "长安", "故事", "山河", "远方", "花开", "时光", "青春", "梦想",
    "大海", "星空", "飞鸟", "彩虹", "城市", "夜色", "风云", "传奇", "英雄", "归来", "晨光", "森林", "秘密",
    "花园", "白日", "焰火", "冒险", "旅程", "未来", "宇宙", "黎明", "追光", "书院", "茶馆", "侠客", "天下",
    "长歌", "烟雨", "江南", "北风", "沙漠", "草原", "火锅", "熊猫",
];

const ENGLISH_WORDS: &[&str] = &[
    "deep", "blue", "night", "city", "light", "river", "storm", "golden", "dream", "wild", "north", "star",
    "silent", "road", "fire", "ocean", "moon", "rise", "dark", "forest", "lost", "echo", "summer", "winter",
    "iron", "sky", "urban", "legend", "quiet", "world", "bright", "stone", "wave", "hidden", "garden", "tale",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutStyle {
    Horizontal,
    Vertical,
    TwoLine,
    ScaledEmphasis,
}

impl LayoutStyle {
    pub const ALL: [LayoutStyle; 4] = [
        LayoutStyle::Horizontal,
        LayoutStyle::Vertical,
        LayoutStyle::TwoLine,
        LayoutStyle::ScaledEmphasis,
    ];

    /// Whether reading order runs along y rather than x.
    pub fn is_vertical(self) -> bool {
        self == LayoutStyle::Vertical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordSet {
    /// Character units drawn from Chinese words.
    Chinese,
    /// Word units drawn from English words.
    English,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub records: usize,
    pub fonts: Vec<String>,
    pub styles: Vec<LayoutStyle>,
    pub words: WordSet,
    pub min_units: usize,
    pub max_units: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            records: 500,
            fonts: vec![DEFAULT_FONT.to_string()],
            styles: LayoutStyle::ALL.to_vec(),
            words: WordSet::Chinese,
            min_units: 2,
            max_units: 8,
        }
    }
}

impl SynthConfig {
    fn check(&self, fonts: &FontRegistry) -> Result<(), CorpusError> {
        if self.fonts.is_empty() {
            return Err(CorpusError::Config("no font sources configured".into()));
        }
        for f in &self.fonts {
            if fonts.get(f).is_none() {
                return Err(CorpusError::Config(format!("font '{f}' is not available")));
            }
        }
        if self.styles.is_empty() {
            return Err(CorpusError::Config("no layout styles configured".into()));
        }
        if self.min_units == 0 || self.min_units > self.max_units || self.max_units > MAX_GLYPHS {
            return Err(CorpusError::Config(format!(
                "unit range {}..={} must lie within 1..={MAX_GLYPHS}",
                self.min_units, self.max_units
            )));
        }
        Ok(())
    }
}

/// Per-record seed so records can be generated independently in any order.
fn record_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates `config.records` logos with the built-in fonts.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<LogoRecord>, CorpusError> {
    generate_with_fonts(config, seed, &FontRegistry::builtin())
}

/// Like [`generate_synthetic_corpus`] with an explicit font registry.
pub fn generate_with_fonts(
    config: &SynthConfig,
    seed: u64,
    fonts: &FontRegistry,
) -> Result<Vec<LogoRecord>, CorpusError> {
    config.check(fonts)?;
    let mut records = (0..config.records)
        .map(|i| synth_record(config, fonts, record_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_records(&records);
    vocab.assign(&mut records);
    Ok(records)
}

fn pick_text(config: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<(usize, usize)>, String) {
    let pool = match config.words {
        WordSet::Chinese => CHINESE_WORDS,
        WordSet::English => ENGLISH_WORDS,
    };
    let word_units = |w: &str| -> Vec<String> {
        match config.words {
            WordSet::Chinese => w.chars().map(String::from).collect(),
            WordSet::English => vec![w.to_string()],
        }
    };
    loop {
        let n_words = rng.random_range(1..=if config.words == WordSet::English { 4 } else { 2 });
        let mut units = Vec::new();
        let mut tokens = Vec::new();
        let mut words = Vec::new();
        for _ in 0..n_words {
            let w = *pool.choose(rng).expect("word list is non-empty");
            let u = word_units(w);
            tokens.push((units.len(), units.len() + u.len()));
            units.extend(u);
            words.push(w);
        }
        if (config.min_units..=config.max_units).contains(&units.len()) {
            let sep = if config.words == WordSet::English { " " } else { "" };
            return (units, tokens, words.join(sep));
        }
    }
}

fn synth_record(config: &SynthConfig, fonts: &FontRegistry, seed: u64) -> Result<LogoRecord, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (units, tokens, text) = pick_text(config, &mut rng);
    let font = config.fonts.choose(&mut rng).expect("checked non-empty").clone();
    let mut style = *config.styles.choose(&mut rng).expect("checked non-empty");
    if style == LayoutStyle::TwoLine && units.len() < 2 {
        style = LayoutStyle::Horizontal;
    }
    let glyphs = units
        .iter()
        .map(|u| Ok(GlyphImage::new(fonts.render(&font, u, GLYPH_SIZE)?, 0)))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let layout = style_layout(style, units.len(), &tokens, &mut rng);
    let rasters: Vec<_> = glyphs.iter().map(|g| &g.pixels).collect();
    let logo_image = compose_layout(&rasters, &layout, (CANVAS_SIZE, CANVAS_SIZE), V_MAX)
        .expect("non-empty glyph list with canvas-sized placements");
    Ok(LogoRecord {
        text,
        units,
        tokens,
        glyphs,
        layout,
        logo_image,
        source: RecordSource::Synthetic,
        style: Some(style),
        font: Some(font),
    })
}

const MARGIN: f64 = 4.0;

/// Side length and gap for `count` boxes in one line of length `extent`.
fn line_metrics(count: usize, extent: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let gap = rng.random_range(2.0..8.0);
    let fit = (extent - 2.0 * MARGIN - (count as f64 - 1.0) * gap) / count as f64;
    let side = fit.min(48.0) * rng.random_range(0.6..1.0);
    (side, gap)
}

/// Start coordinate of a run of `total` length, jittered within the free space.
fn run_start(total: f64, rng: &mut ChaCha8Rng) -> f64 {
    let c = CANVAS_SIZE as f64;
    let slack = ((c - 2.0 * MARGIN - total) / 2.0).max(0.0);
    (c - total) / 2.0 + rng.random_range(-slack..=slack) * 0.5
}

/// Center coordinate across the line, jittered while keeping `side` inside.
fn cross_center(side: f64, rng: &mut ChaCha8Rng) -> f64 {
    let c = CANVAS_SIZE as f64;
    let room = ((c - 2.0 * MARGIN - side) / 2.0).max(0.0);
    c / 2.0 + rng.random_range(-room..=room) * 0.4
}

fn style_layout(
    style: LayoutStyle,
    n: usize,
    tokens: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<LayoutParams> {
    let c = CANVAS_SIZE as f64;
    match style {
        LayoutStyle::Horizontal | LayoutStyle::Vertical => {
            let (s, gap) = line_metrics(n, c, rng);
            let total = n as f64 * s + (n as f64 - 1.0) * gap;
            let start = run_start(total, rng);
            let cross = cross_center(s, rng);
            (0..n)
                .map(|i| {
                    let along = start + s / 2.0 + i as f64 * (s + gap);
                    if style == LayoutStyle::Horizontal {
                        LayoutParams::new(along, cross, s, s)
                    } else {
                        LayoutParams::new(cross, along, s, s)
                    }
                })
                .collect()
        }
        LayoutStyle::TwoLine => {
            let split = if tokens.len() >= 2 { tokens[0].1 } else { n.div_ceil(2) };
            let lines = [split, n - split];
            let longest = *lines.iter().max().unwrap();
            let (mut s, gap) = line_metrics(longest, c, rng);
            let line_gap = rng.random_range(3.0..10.0);
            s = s.min((c - 2.0 * MARGIN - line_gap) / 2.0);
            let block = 2.0 * s + line_gap;
            let top = run_start(block, rng);
            let mut out = Vec::with_capacity(n);
            for (row, &count) in lines.iter().enumerate() {
                let total = count as f64 * s + (count as f64 - 1.0) * gap;
                let start = (c - total) / 2.0;
                let y = top + s / 2.0 + row as f64 * (s + line_gap);
                for i in 0..count {
                    out.push(LayoutParams::new(start + s / 2.0 + i as f64 * (s + gap), y, s, s));
                }
            }
            out
        }
        LayoutStyle::ScaledEmphasis => {
            let emphasis = rng.random_range(0..n);
            let factor = 1.5;
            let gap = rng.random_range(2.0..8.0);
            let units = n as f64 - 1.0 + factor;
            let fit = (c - 2.0 * MARGIN - (n as f64 - 1.0) * gap) / units;
            let s = fit.min(40.0) * rng.random_range(0.6..1.0);
            let sides: Vec<f64> = (0..n).map(|i| if i == emphasis { s * factor } else { s }).collect();
            let total = sides.iter().sum::<f64>() + (n as f64 - 1.0) * gap;
            let start = run_start(total, rng);
            let cross = cross_center(s * factor, rng);
            let mut x = start;
            sides
                .iter()
                .map(|&side| {
                    let p = LayoutParams::new(x + side / 2.0, cross, side, side);
                    x += side + gap;
                    p
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::hard_overlap;
    use crate::composition::place_glyph;

    fn cfg(records: usize, styles: &[LayoutStyle]) -> SynthConfig {
        SynthConfig {
            records,
            styles: styles.to_vec(),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn horizontal_boxes_share_a_line_and_advance() {
        let recs = generate_synthetic_corpus(
            &SynthConfig {
                min_units: 4,
                max_units: 4,
                ..cfg(20, &[LayoutStyle::Horizontal])
            },
            3,
        )
        .unwrap();
        for r in recs {
            assert_eq!(r.len(), 4);
            for w in r.layout.windows(2) {
                assert_eq!(w[0].y_c, w[1].y_c);
                assert!(w[1].x_c > w[0].x_c);
            }
        }
    }

    #[test]
    fn every_style_stays_on_canvas_without_overlap() {
        let recs = generate_synthetic_corpus(&cfg(80, &LayoutStyle::ALL), 11).unwrap();
        for (i, r) in recs.iter().enumerate() {
            r.validate((CANVAS_SIZE, CANVAS_SIZE), GLYPH_SIZE).unwrap();
            let placed: Vec<_> = r
                .glyphs
                .iter()
                .zip(&r.layout)
                .map(|(g, p)| place_glyph(&g.pixels, p, (CANVAS_SIZE, CANVAS_SIZE)))
                .collect();
            assert_eq!(hard_overlap(&placed, V_MAX), 0.0, "record {i}");
        }
    }

    #[test]
    fn two_line_keeps_first_token_on_the_first_line() {
        let recs = generate_synthetic_corpus(&cfg(30, &[LayoutStyle::TwoLine]), 5).unwrap();
        for r in recs.iter().filter(|r| r.tokens.len() == 2) {
            let (s, e) = r.tokens[0];
            let y0 = r.layout[s].y_c;
            assert!(r.layout[s..e].iter().all(|p| p.y_c == y0));
            assert!(r.layout[e..].iter().all(|p| p.y_c > y0));
        }
    }

    #[test]
    fn missing_font_is_a_config_error() {
        let bad = SynthConfig {
            fonts: vec!["no-such-font".into()],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic_corpus(&bad, 0), Err(CorpusError::Config(_))));
        let none = SynthConfig {
            fonts: vec![],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic_corpus(&none, 0), Err(CorpusError::Config(_))));
    }

    #[test]
    fn english_records_use_word_units() {
        let recs = generate_synthetic_corpus(
            &SynthConfig {
                words: WordSet::English,
                ..cfg(10, &[LayoutStyle::Horizontal])
            },
            2,
        )
        .unwrap();
        for r in recs {
            assert_eq!(r.units.len(), r.text.split(' ').count());
        }
    }
}
