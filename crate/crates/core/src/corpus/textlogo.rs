//! Loader for annotated logo datasets.
//!
//! The default index is `index.jsonl` in the dataset root, one record per line:
//!
//! ```text
//! {"text": "北京", "glyphs": ["g/0_0.png", "g/0_1.png"],
//!  "boxes": [[x_c, y_c, w, h], ...], "logo": "logos/0.png", "tokens": [[0, 2]]}
//! ```
//!
//! Paths are relative to the root and boxes are in the logo image's pixel
//! space. An optional `"units"` array overrides the default unit split of
//! `text`. Other annotation layouts plug in through [`IndexAdapter`].

use std::path::Path;

use serde::Deserialize;

use crate::layout::{LayoutParams, CANVAS_SIZE, GLYPH_SIZE};
use crate::raster::{GlyphImage, Letterbox, Raster, V_MAX};

use super::{split_units, CorpusError, LogoRecord, RecordSource, Vocabulary};

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct IndexEntry {
    pub text: String,
    pub glyphs: Vec<String>,
    pub boxes: Vec<[f64; 4]>,
    pub logo: String,
    #[serde(default)]
    pub tokens: Vec<[usize; 2]>,
    #[serde(default)]
    pub units: Option<Vec<String>>,
}

/// Source of index entries for a dataset root. Entries that fail to parse are
/// reported per record so the loader can skip or abort.
pub trait IndexAdapter {
    fn entries(&self, root: &Path) -> Result<Vec<Result<IndexEntry, String>>, CorpusError>;
}

/// The JSON-lines index described in the module docs.
#[derive(Clone, Copy, Debug, Default)]
pub struct JsonLinesIndex;

impl IndexAdapter for JsonLinesIndex {
    fn entries(&self, root: &Path) -> Result<Vec<Result<IndexEntry, String>>, CorpusError> {
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Abort on the first invalid record instead of skipping it.
    pub strict: bool,
    /// Treat dark ink on a light background (inverts intensities).
    pub invert: bool,
}

/// Loads every valid record under `root` using the JSON-lines index.
pub fn load_textlogo3k(root: &Path, options: &LoadOptions) -> Result<Vec<LogoRecord>, CorpusError> {
    load_with_adapter(root, &JsonLinesIndex, options)
}

pub fn load_with_adapter(
    root: &Path,
    adapter: &dyn IndexAdapter,
    options: &LoadOptions,
) -> Result<Vec<LogoRecord>, CorpusError> {
    let mut listing = std::fs::read_dir(root).map_err(|e| CorpusError::io(root, e))?;
    if listing.next().is_none() {
        log::warn!("{} is empty; no records loaded", root.display());
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    for (index, entry) in adapter.entries(root)?.into_iter().enumerate() {
        let result = entry
            .map_err(|reason| CorpusError::Validation { index, reason })
            .and_then(|e| build_record(root, &e, options).map_err(|reason| CorpusError::Validation { index, reason }));
        match result {
            Ok(r) => records.push(r),
            Err(e) if options.strict => return Err(e),
            Err(e) => log::warn!("skipping {e}"),
        }
    }
    let vocab = Vocabulary::from_records(&records);
    vocab.assign(&mut records);
    Ok(records)
}

fn read_gray(path: &Path, invert: bool) -> Result<Raster, String> {
    let img = image::open(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut r = Raster::from_u8(w as usize, h as usize, img.as_raw(), V_MAX);
    if invert {
        for v in r.pixels_mut() {
            *v = V_MAX - *v;
        }
    }
    Ok(r)
}

fn build_record(root: &Path, e: &IndexEntry, options: &LoadOptions) -> Result<LogoRecord, String> {
    let units = e.units.clone().unwrap_or_else(|| split_units(&e.text));
    let n = units.len();
    if e.glyphs.len() != n || e.boxes.len() != n {
        return Err(format!(
            "{n} units but {} glyph images and {} boxes",
            e.glyphs.len(),
            e.boxes.len()
        ));
    }
    let tokens: Vec<(usize, usize)> = if e.tokens.is_empty() {
        vec![(0, n)]
    } else {
        e.tokens.iter().map(|t| (t[0], t[1])).collect()
    };
    // Cheap checks before touching image files.
    super::check_tokens(&tokens, n)?;
    if n > crate::layout::MAX_GLYPHS || n == 0 {
        return Err(format!("{n} glyph units (allowed 1..={})", crate::layout::MAX_GLYPHS));
    }

    let logo_src = read_gray(&root.join(&e.logo), options.invert)?;
    let src = logo_src.dims();
    let fit = Letterbox::new(src.0, src.1, CANVAS_SIZE);
    let (sx, sy) = fit.scale(src);
    let layout = e
        .boxes
        .iter()
        .map(|b| {
            let (x, y) = fit.map_point(src, b[0], b[1]);
            LayoutParams::new(x, y, b[2] * sx, b[3] * sy)
        })
        .collect();
    let glyphs = e
        .glyphs
        .iter()
        .map(|g| Ok(GlyphImage::new(read_gray(&root.join(g), options.invert)?.letterboxed(GLYPH_SIZE), 0)))
        .collect::<Result<Vec<_>, String>>()?;
    let record = LogoRecord {
        text: e.text.clone(),
        units,
        tokens,
        glyphs,
        layout,
        logo_image: logo_src.letterboxed(CANVAS_SIZE),
        source: RecordSource::Dataset,
        style: None,
        font: None,
    };
    record.validate((CANVAS_SIZE, CANVAS_SIZE), GLYPH_SIZE)?;
    Ok(record)
}
