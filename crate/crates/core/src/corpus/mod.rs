//! Logo records: the dataset loader, the synthetic corpus generator,
//! character embeddings and train/test splitting.

mod embedding;
pub mod fonts;
mod split;
mod synth;
mod textlogo;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{LayoutParams, LayoutSequence, MAX_GLYPHS};
use crate::raster::{GlyphImage, Raster, V_MAX};

pub use embedding::{load_char_embeddings, EmbeddingTable, DEFAULT_EMBEDDING_DIM};
pub use fonts::{FontRegistry, FontSource, StrokeWeight, DEFAULT_FONT};
pub use split::split_dataset;
pub use synth::{generate_synthetic_corpus, generate_with_fonts, LayoutStyle, SynthConfig, WordSet};
pub use textlogo::{load_textlogo3k, IndexAdapter, IndexEntry, JsonLinesIndex, LoadOptions, INDEX_FILE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {reason}")]
    Validation { index: usize, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    Dataset,
    Synthetic,
}

/// One text logo: its glyph units, their rasters, the ground-truth boxes and
/// the rendered logo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogoRecord {
    pub text: String,
    /// Glyph units in reading order (characters, or words for alphabetic text).
    pub units: Vec<String>,
    /// Word groups as half-open ranges over `units`.
    pub tokens: Vec<(usize, usize)>,
    pub glyphs: Vec<GlyphImage>,
    pub layout: Vec<LayoutParams>,
    pub logo_image: Raster,
    pub source: RecordSource,
    #[serde(default)]
    pub style: Option<LayoutStyle>,
    #[serde(default)]
    pub font: Option<String>,
}

impl LogoRecord {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn layout_sequence(&self) -> LayoutSequence {
        LayoutSequence::new(self.layout.clone())
    }

    pub fn glyph_rasters(&self) -> Vec<&Raster> {
        self.glyphs.iter().map(|g| &g.pixels).collect()
    }

    /// Checks the record invariants; the error string names the first violation.
    pub fn validate(&self, canvas: (usize, usize), glyph_size: usize) -> Result<(), String> {
        let n = self.units.len();
        if n == 0 {
            return Err("no glyph units".into());
        }
        if n > MAX_GLYPHS {
            return Err(format!("{n} glyph units exceed the maximum of {MAX_GLYPHS}"));
        }
        if self.glyphs.len() != n || self.layout.len() != n {
            return Err(format!(
                "{} units, {} glyphs, {} boxes",
                n,
                self.glyphs.len(),
                self.layout.len()
            ));
        }
        for (i, g) in self.glyphs.iter().enumerate() {
            if g.pixels.dims() != (glyph_size, glyph_size) {
                return Err(format!("glyph {i} is {:?}", g.pixels.dims()));
            }
            if g.pixels.pixels().iter().any(|&v| !(0.0..=V_MAX).contains(&v)) {
                return Err(format!("glyph {i} has pixels outside [0, {V_MAX}]"));
            }
        }
        for (i, p) in self.layout.iter().enumerate() {
            p.check_on_canvas(i, canvas).map_err(|e| e.to_string())?;
        }
        if self.logo_image.dims() != canvas {
            return Err(format!("logo image is {:?}", self.logo_image.dims()));
        }
        check_tokens(&self.tokens, n)
    }
}

/// Tokens must tile `0..n` in order without gaps.
pub(crate) fn check_tokens(tokens: &[(usize, usize)], n: usize) -> Result<(), String> {
    let mut next = 0;
    for &(s, e) in tokens {
        if s != next || e <= s {
            return Err(format!("token ({s},{e}) does not continue at {next}"));
        }
        next = e;
    }
    if next != n {
        return Err(format!("tokens cover {next} of {n} units"));
    }
    Ok(())
}

/// Sorted unit vocabulary; id 0 is reserved for unknown units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    units: Vec<String>,
}

pub const UNK_ID: usize = 0;

impl Vocabulary {
    pub fn new<I: IntoIterator<Item = String>>(units: I) -> Self {
        let mut units: Vec<String> = units.into_iter().collect();
        units.sort();
        units.dedup();
        Self { units }
    }

    pub fn from_records(records: &[LogoRecord]) -> Self {
        Self::new(records.iter().flat_map(|r| r.units.iter().cloned()))
    }

    /// Number of known units (excluding UNK).
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn id(&self, unit: &str) -> usize {
        self.units
            .binary_search_by(|u| u.as_str().cmp(unit))
            .map_or(UNK_ID, |i| i + 1)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    /// Rewrites every glyph's `char_id` against this vocabulary.
    pub fn assign(&self, records: &mut [LogoRecord]) {
        for r in records {
            for (g, u) in r.glyphs.iter_mut().zip(&r.units) {
                g.char_id = self.id(u);
            }
        }
    }
}

/// Splits text into glyph units: characters for scripts without spaces,
/// whitespace-separated words otherwise.
pub fn split_units(text: &str) -> Vec<String> {
    if text.chars().any(|c| c.is_ascii_alphabetic()) {
        text.split_whitespace().map(str::to_string).collect()
    } else {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    }
}
