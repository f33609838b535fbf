//! Proxy FID/IS, layout statistics, rule baselines and report tables.

mod metrics;
mod rules;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{compose_layout, hard_overlap, place_glyph};
use crate::corpus::LogoRecord;
use crate::generator::sample_noise;
use crate::layout::{LayoutSequence, CANVAS_SIZE};
use crate::model::{LayoutModel, ModelError};
use crate::raster::{CanvasImage, V_MAX};

pub use metrics::{evaluate_fid_is, frechet_distance, inception_score, ProxyBackbone, BACKBONE_FILE, BACKBONE_INPUT};
pub use rules::{rule_layout, rule_layout_for, Rule, MIN_GAP};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

/// Seed for the `index`-th draw of a stream (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// True when the centers advance left-to-right or top-to-bottom, allowing
/// `tol` pixels of backtracking per step.
pub fn reading_order_ok(layout: &LayoutSequence, tol: f64) -> bool {
    let p = &layout.params;
    let monotone = |f: fn(&crate::layout::LayoutParams) -> f64| p.windows(2).all(|w| f(&w[1]) >= f(&w[0]) - tol);
    monotone(|q| q.x_c) || monotone(|q| q.y_c)
}

/// Hard overlap of one layout as a fraction of the canvas area.
pub fn overlap_fraction(record: &LogoRecord, layout: &LayoutSequence) -> f64 {
    let placed: Vec<CanvasImage> = record
        .glyphs
        .iter()
        .zip(&layout.params)
        .map(|(g, p)| place_glyph(&g.pixels, p, CANVAS))
        .collect();
    hard_overlap(&placed, V_MAX) / (CANVAS.0 * CANVAS.1) as f64
}

/// One layout per record from the model, record `i` using noise seed
/// `derive_seed(seed, i)`.
pub fn sample_layouts(model: &LayoutModel, records: &[LogoRecord], seed: u64) -> Result<Vec<LayoutSequence>, EvalError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cond = model.condition_for(&r.glyphs, &r.units)?;
            let z = sample_noise(model.config.d_z, derive_seed(seed, i as u64))?;
            Ok(model.sample(&cond, &[z])?.remove(0))
        })
        .collect()
}

/// Rule-baseline layouts, record `i` using `derive_seed(seed, i)`.
pub fn baseline_layouts(records: &[LogoRecord], rule: Rule, seed: u64) -> Result<Vec<LayoutSequence>, EvalError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| rule_layout(r, rule, derive_seed(seed, i as u64)))
        .collect()
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Proxy-FID against the reference logos.
    pub fid: f64,
    /// Proxy inception score.
    pub is: f64,
    /// Mean hard overlap as a fraction of the canvas.
    pub overlap: f64,
    /// Share of layouts passing [`reading_order_ok`] at 1 px.
    pub reading_order: f64,
}

/// Composes `layouts` with each record's glyphs and scores them against the
/// records' own logos.
pub fn evaluate_layouts(
    method: &str,
    backbone: &ProxyBackbone,
    records: &[LogoRecord],
    layouts: &[LayoutSequence],
) -> Result<MethodRow, EvalError> {
    if records.len() != layouts.len() {
        return Err(EvalError::Argument(format!(
            "{} records but {} layouts",
            records.len(),
            layouts.len()
        )));
    }
    let generated = records
        .iter()
        .zip(layouts)
        .map(|(r, l)| {
            compose_layout(&r.glyph_rasters(), &l.params, CANVAS, V_MAX).map_err(|e| EvalError::Argument(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reference: Vec<CanvasImage> = records.iter().map(|r| r.logo_image.clone()).collect();
    let (fid, is) = evaluate_fid_is(backbone, &generated, &reference)?;
    let n = records.len() as f64;
    let overlap = records.iter().zip(layouts).map(|(r, l)| overlap_fraction(r, l)).sum::<f64>() / n;
    let reading_order = layouts.iter().filter(|l| reading_order_ok(l, 1.0)).count() as f64 / n;
    Ok(MethodRow {
        method: method.to_string(),
        fid,
        is,
        overlap,
        reading_order,
    })
}

/// Comparison table, written as CSV and as a markdown table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MethodRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | proxy-FID | proxy-IS | Overlap | Reading order |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.4} | {:.1}% |\n",
                r.method,
                r.fid,
                r.is,
                r.overlap,
                100.0 * r.reading_order
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutParams;

    fn seq(points: &[(f64, f64)]) -> LayoutSequence {
        LayoutSequence::new(points.iter().map(|&(x, y)| LayoutParams::new(x, y, 10.0, 10.0)).collect())
    }

    #[test]
    fn reading_order_accepts_rows_and_columns() {
        assert!(reading_order_ok(&seq(&[(10.0, 50.0), (30.0, 50.5), (50.0, 49.8)]), 1.0));
        assert!(reading_order_ok(&seq(&[(60.0, 10.0), (60.0, 30.0)]), 1.0));
        // Two lines: x resets but y advances.
        assert!(reading_order_ok(&seq(&[(20.0, 40.0), (40.0, 40.0), (20.0, 80.0)]), 1.0));
        assert!(!reading_order_ok(&seq(&[(50.0, 50.0), (30.0, 30.0)]), 1.0));
    }

    #[test]
    fn report_formats() {
        let report = EvalReport {
            rows: vec![MethodRow {
                method: "rule-a".into(),
                fid: 1.5,
                is: 1.25,
                overlap: 0.0,
                reading_order: 1.0,
            }],
        };
        assert_eq!(report.to_csv(), "method,fid,is,overlap,reading_order\nrule-a,1.5,1.25,0.0,1.0\n");
        assert!(report.to_markdown().contains("| rule-a | 1.500 | 1.250 | 0.0000 | 100.0% |"));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
