//! Differentiable placement of glyph rasters on the logo canvas.
//!
//! A box `(x_c, y_c, w, h)` induces a scale-and-translate map from canvas
//! coordinates to glyph coordinates; the glyph is resampled onto the canvas
//! grid with bilinear interpolation. Canvas pixel `j` has its center at
//! `j + 0.5`, and the map sends the box corners exactly onto the glyph image
//! corners, so at unit scale with an integer offset the placement is a copy.
//!
//! Placed glyphs are summed and truncated at `v_max` to form the logo. The
//! overlap penalty accumulates, glyph by glyph, the intersection of each glyph
//! with the union of the glyphs placed before it.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::layout::LayoutParams;
use crate::nn::{CustomOp, Tape, Tensor, Var};
use crate::raster::{CanvasImage, Raster};

/// Smallest box side used for sampling; generators may emit thinner boxes.
pub const MIN_BOX_SIDE: f64 = 2.0;

/// Foreground threshold, as a fraction of `v_max`, for the hard overlap count.
pub const HARD_FOREGROUND: f64 = 0.5;

static DEGENERATE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of box sides clamped up to [`MIN_BOX_SIDE`] since process start.
pub fn degenerate_clamp_count() -> u64 {
    DEGENERATE_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Error, PartialEq)]
pub enum CompositionError {
    #[error("nothing to compose")]
    Empty,
    #[error("canvas {index} is {got:?}, expected {expected:?}")]
    DimMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("{glyphs} glyphs for {boxes} boxes")]
    LengthMismatch { glyphs: usize, boxes: usize },
}

/// Scale-and-translate map from canvas pixel coordinates to glyph pixel
/// coordinates: `(u, v) = theta · (x, y, 1)`. Off-diagonal terms are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub theta: [[f64; 3]; 2],
}

impl AffineParams {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let t = &self.theta;
        (
            t[0][0] * x + t[0][1] * y + t[0][2],
            t[1][0] * x + t[1][1] * y + t[1][2],
        )
    }

    fn x_axis(&self) -> (f64, f64) {
        (self.theta[0][0], self.theta[0][2])
    }

    fn y_axis(&self) -> (f64, f64) {
        (self.theta[1][1], self.theta[1][2])
    }
}

/// Box sides after the minimum-size clamp, with flags for which were clamped.
fn effective_sides(p: &LayoutParams) -> (f64, f64, bool, bool) {
    let cw = p.w < MIN_BOX_SIDE;
    let ch = p.h < MIN_BOX_SIDE;
    (p.w.max(MIN_BOX_SIDE), p.h.max(MIN_BOX_SIDE), cw, ch)
}

/// Solves the corner correspondence glyph `(0,0),(W_g,H_g)` ↔ box corners.
///
/// Sides thinner than [`MIN_BOX_SIDE`] are clamped and counted.
pub fn affine_params(
    p: &LayoutParams,
    glyph_dims: (usize, usize),
    canvas_dims: (usize, usize),
) -> AffineParams {
    debug_assert!(canvas_dims.0 > 0 && canvas_dims.1 > 0);
    let (w, h, cw, ch) = effective_sides(p);
    let clamped = cw as u64 + ch as u64;
    if clamped > 0 {
        DEGENERATE_CLAMPS.fetch_add(clamped, Ordering::Relaxed);
    }
    let (gw, gh) = (glyph_dims.0 as f64, glyph_dims.1 as f64);
    AffineParams {
        theta: [
            [gw / w, 0.0, gw * (w - 2.0 * p.x_c) / (2.0 * w)],
            [0.0, gh / h, gh * (h - 2.0 * p.y_c) / (2.0 * h)],
        ],
    }
}

/// Bilinear taps of one output coordinate along one axis.
#[derive(Clone, Copy)]
struct Tap {
    k0: isize,
    frac: f64,
}

fn axis_taps(scale: f64, offset: f64, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|j| {
            let s = scale * (j as f64 + 0.5) + offset - 0.5;
            let k0 = s.floor();
            Tap {
                k0: k0 as isize,
                frac: s - k0,
            }
        })
        .collect()
}

/// Whether either tap of `t` lands inside `[0, n)`.
fn touches(t: Tap, n: usize) -> bool {
    t.k0 + 1 >= 0 && t.k0 < n as isize
}

fn sample(g: &Raster, kx: isize, ky: isize) -> f64 {
    if kx < 0 || ky < 0 || kx >= g.width() as isize || ky >= g.height() as isize {
        0.0
    } else {
        g.get(kx as usize, ky as usize)
    }
}

/// Resamples `glyph` onto a canvas of `canvas_dims` under `theta`.
/// Samples falling outside the glyph read as zero.
pub fn transform_glyph(glyph: &Raster, theta: &AffineParams, canvas_dims: (usize, usize)) -> CanvasImage {
    let (cw, ch) = canvas_dims;
    let (sx, ox) = theta.x_axis();
    let (sy, oy) = theta.y_axis();
    let xt = axis_taps(sx, ox, cw);
    let yt = axis_taps(sy, oy, ch);
    let mut out = Raster::zeros(cw, ch);
    let cols: Vec<usize> = (0..cw).filter(|&j| touches(xt[j], glyph.width())).collect();
    for (jy, ty) in yt.iter().enumerate() {
        if !touches(*ty, glyph.height()) {
            continue;
        }
        for &jx in &cols {
            let tx = xt[jx];
            let top = (1.0 - tx.frac) * sample(glyph, tx.k0, ty.k0) + tx.frac * sample(glyph, tx.k0 + 1, ty.k0);
            let bot = (1.0 - tx.frac) * sample(glyph, tx.k0, ty.k0 + 1)
                + tx.frac * sample(glyph, tx.k0 + 1, ty.k0 + 1);
            out.set(jx, jy, (1.0 - ty.frac) * top + ty.frac * bot);
        }
    }
    out
}

/// Places `glyph` in box `p`: [`affine_params`] followed by [`transform_glyph`].
pub fn place_glyph(glyph: &Raster, p: &LayoutParams, canvas_dims: (usize, usize)) -> CanvasImage {
    let theta = affine_params(p, glyph.dims(), canvas_dims);
    transform_glyph(glyph, &theta, canvas_dims)
}

/// Gradients of a scalar downstream of [`place_glyph`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementGrad {
    /// With respect to `(x_c, y_c, w, h)`.
    pub params: [f64; 4],
    /// With respect to each glyph pixel.
    pub glyph: Raster,
}

/// Vector-Jacobian product of [`place_glyph`] for an upstream gradient
/// `grad` over the canvas.
pub fn place_glyph_vjp(
    glyph: &Raster,
    p: &LayoutParams,
    canvas_dims: (usize, usize),
    grad: &[f64],
) -> PlacementGrad {
    let (cw, ch) = canvas_dims;
    assert_eq!(grad.len(), cw * ch, "gradient size");
    let (w, h, w_clamped, h_clamped) = effective_sides(p);
    let (gw, gh) = (glyph.width() as f64, glyph.height() as f64);
    let (sx, ox) = (gw / w, gw * (w - 2.0 * p.x_c) / (2.0 * w));
    let (sy, oy) = (gh / h, gh * (h - 2.0 * p.y_c) / (2.0 * h));
    let xt = axis_taps(sx, ox, cw);
    let yt = axis_taps(sy, oy, ch);

    // Accumulated d/d(scale) and d/d(offset) per axis.
    let (mut d_sx, mut d_ox, mut d_sy, mut d_oy) = (0.0, 0.0, 0.0, 0.0);
    let mut dg = Raster::zeros(glyph.width(), glyph.height());
    let add = |dg: &mut Raster, kx: isize, ky: isize, v: f64| {
        if kx >= 0 && ky >= 0 && (kx as usize) < dg.width() && (ky as usize) < dg.height() {
            let (x, y) = (kx as usize, ky as usize);
            dg.set(x, y, dg.get(x, y) + v);
        }
    };
    for (jy, ty) in yt.iter().enumerate() {
        if !touches(*ty, glyph.height()) {
            continue;
        }
        let cy = jy as f64 + 0.5;
        for (jx, tx) in xt.iter().enumerate() {
            if !touches(*tx, glyph.width()) {
                continue;
            }
            let go = grad[jy * cw + jx];
            if go == 0.0 {
                continue;
            }
            let cx = jx as f64 + 0.5;
            let g00 = sample(glyph, tx.k0, ty.k0);
            let g10 = sample(glyph, tx.k0 + 1, ty.k0);
            let g01 = sample(glyph, tx.k0, ty.k0 + 1);
            let g11 = sample(glyph, tx.k0 + 1, ty.k0 + 1);
            let du = (1.0 - ty.frac) * (g10 - g00) + ty.frac * (g11 - g01);
            let dv = (1.0 - tx.frac) * (g01 - g00) + tx.frac * (g11 - g10);
            d_sx += go * du * cx;
            d_ox += go * du;
            d_sy += go * dv * cy;
            d_oy += go * dv;
            add(&mut dg, tx.k0, ty.k0, go * (1.0 - tx.frac) * (1.0 - ty.frac));
            add(&mut dg, tx.k0 + 1, ty.k0, go * tx.frac * (1.0 - ty.frac));
            add(&mut dg, tx.k0, ty.k0 + 1, go * (1.0 - tx.frac) * ty.frac);
            add(&mut dg, tx.k0 + 1, ty.k0 + 1, go * tx.frac * ty.frac);
        }
    }
    // scale = G/w, offset = G/2 - G·c/w
    let d_xc = d_ox * (-gw / w);
    let d_w = if w_clamped {
        0.0
    } else {
        d_sx * (-gw / (w * w)) + d_ox * (gw * p.x_c / (w * w))
    };
    let d_yc = d_oy * (-gh / h);
    let d_h = if h_clamped {
        0.0
    } else {
        d_sy * (-gh / (h * h)) + d_oy * (gh * p.y_c / (h * h))
    };
    PlacementGrad {
        params: [d_xc, d_yc, d_w, d_h],
        glyph: dg,
    }
}

fn check_same_dims(canvases: &[CanvasImage]) -> Result<(usize, usize), CompositionError> {
    let first = canvases.first().ok_or(CompositionError::Empty)?;
    let expected = first.dims();
    for (index, c) in canvases.iter().enumerate() {
        if c.dims() != expected {
            return Err(CompositionError::DimMismatch {
                index,
                got: c.dims(),
                expected,
            });
        }
    }
    Ok(expected)
}

/// `min(Σ g'_i, v_max)` pixelwise.
pub fn compose_canvas(placed: &[CanvasImage], v_max: f64) -> Result<CanvasImage, CompositionError> {
    let (w, h) = check_same_dims(placed)?;
    let mut out = Raster::zeros(w, h);
    for c in placed {
        for (o, v) in out.pixels_mut().iter_mut().zip(c.pixels()) {
            *o += v;
        }
    }
    for o in out.pixels_mut() {
        *o = o.min(v_max);
    }
    Ok(out)
}

/// Gradient of [`compose_canvas`] with respect to each input (identical for
/// all inputs): `grad` where the sum is below `v_max`, zero where truncated.
pub fn compose_canvas_vjp(placed: &[CanvasImage], v_max: f64, grad: &[f64]) -> Result<Vec<f64>, CompositionError> {
    let (w, h) = check_same_dims(placed)?;
    let mut sum = vec![0.0; w * h];
    for c in placed {
        for (s, v) in sum.iter_mut().zip(c.pixels()) {
            *s += v;
        }
    }
    Ok(sum
        .iter()
        .zip(grad)
        .map(|(&s, &g)| if s < v_max { g } else { 0.0 })
        .collect())
}

/// Renders a full logo from glyphs and their boxes.
pub fn compose_layout(
    glyphs: &[&Raster],
    layout: &[LayoutParams],
    canvas_dims: (usize, usize),
    v_max: f64,
) -> Result<CanvasImage, CompositionError> {
    if glyphs.len() != layout.len() {
        return Err(CompositionError::LengthMismatch {
            glyphs: glyphs.len(),
            boxes: layout.len(),
        });
    }
    let placed: Vec<CanvasImage> = glyphs
        .iter()
        .zip(layout)
        .map(|(g, p)| place_glyph(g, p, canvas_dims))
        .collect();
    compose_canvas(&placed, v_max)
}

fn foreground(v: f64, v_max: f64) -> f64 {
    (v / v_max).clamp(0.0, 1.0)
}

/// Soft overlap penalty: with `m_i = clamp(g'_i / v_max, 0, 1)` and the
/// running soft union `U_i = 1 - Π_{k≤i}(1 - m_k)`, returns `Σ_i Σ_px m_i · U_{i-1}`.
/// On binary inputs this is the exact AND/OR pixel count.
pub fn overlap_loss(placed: &[CanvasImage], v_max: f64) -> f64 {
    let Some(first) = placed.first() else {
        return 0.0;
    };
    let mut union = vec![0.0; first.pixels().len()];
    let mut loss = 0.0;
    for c in placed {
        for (u, &v) in union.iter_mut().zip(c.pixels()) {
            let m = foreground(v, v_max);
            loss += m * *u;
            *u += m - m * *u;
        }
    }
    loss
}

/// Gradient of [`overlap_loss`] with respect to each placed canvas.
pub fn overlap_loss_vjp(placed: &[CanvasImage], v_max: f64) -> Vec<Vec<f64>> {
    let n = placed.len();
    let Some(first) = placed.first() else {
        return Vec::new();
    };
    let px = first.pixels().len();
    let masks: Vec<Vec<f64>> = placed
        .iter()
        .map(|c| c.pixels().iter().map(|&v| foreground(v, v_max)).collect())
        .collect();
    // unions[i] = U_i, with U_0 blank.
    let mut unions = vec![vec![0.0; px]];
    for m in &masks {
        let prev = unions.last().unwrap();
        unions.push(prev.iter().zip(m).map(|(u, m)| u + m - u * m).collect());
    }
    let mut d_union = vec![0.0; px];
    let mut out = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let prev = &unions[i];
        let m = &masks[i];
        let mut dm = vec![0.0; px];
        for k in 0..px {
            dm[k] = prev[k] + d_union[k] * (1.0 - prev[k]);
            d_union[k] = m[k] + d_union[k] * (1.0 - m[k]);
        }
        out[i] = placed[i]
            .pixels()
            .iter()
            .zip(dm)
            .map(|(&v, d)| if (0.0..v_max).contains(&v) { d / v_max } else { 0.0 })
            .collect();
    }
    out
}

/// Overlap count after binarizing each placed glyph at [`HARD_FOREGROUND`].
pub fn hard_overlap(placed: &[CanvasImage], v_max: f64) -> f64 {
    let binary: Vec<CanvasImage> = placed
        .iter()
        .map(|c| {
            let px = c
                .pixels()
                .iter()
                .map(|&v| if v >= HARD_FOREGROUND * v_max { v_max } else { 0.0 })
                .collect();
            Raster::from_pixels(c.width(), c.height(), px)
        })
        .collect();
    overlap_loss(&binary, v_max)
}

/// Tape op placing one glyph per batch row from a `[B, 4]` box tensor,
/// producing `[B, W_c·H_c]`.
struct PlaceOp {
    glyphs: Vec<Raster>,
    canvas: (usize, usize),
}

impl CustomOp for PlaceOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let boxes = inputs[0];
        let mut d = Vec::with_capacity(boxes.len());
        for (b, glyph) in self.glyphs.iter().enumerate() {
            let r = boxes.row(b);
            let p = LayoutParams::new(r[0], r[1], r[2], r[3]);
            d.extend(place_glyph_vjp(glyph, &p, self.canvas, grad.row(b)).params);
        }
        vec![Some(Tensor::from_vec(boxes.shape(), d))]
    }
}

/// Places `glyphs[b]` according to row `b` of `boxes` on the tape.
pub fn place_on_tape(tape: &mut Tape, boxes: Var, glyphs: Vec<Raster>, canvas: (usize, usize)) -> Var {
    let (rows, cols) = tape.value(boxes).dims2();
    assert_eq!(cols, 4, "boxes are [B, 4]");
    assert_eq!(rows, glyphs.len(), "one glyph per row");
    let mut out = Vec::with_capacity(rows * canvas.0 * canvas.1);
    for (b, glyph) in glyphs.iter().enumerate() {
        let r = tape.value(boxes).row(b);
        let p = LayoutParams::new(r[0], r[1], r[2], r[3]);
        out.extend(place_glyph(glyph, &p, canvas).into_pixels());
    }
    let value = Tensor::from_vec(&[rows, canvas.0 * canvas.1], out);
    tape.custom(&[boxes], value, Box::new(PlaceOp { glyphs, canvas }))
}

/// Sums placed glyph tensors and truncates at `v_max`.
pub fn compose_on_tape(tape: &mut Tape, placed: &[Var], v_max: f64) -> Var {
    let mut acc = placed[0];
    for &p in &placed[1..] {
        acc = tape.add(acc, p);
    }
    tape.clamp_max(acc, v_max)
}

struct OverlapOp {
    canvas: (usize, usize),
    v_max: f64,
}

impl OverlapOp {
    fn rows(&self, inputs: &[&Tensor], b: usize) -> Vec<CanvasImage> {
        inputs
            .iter()
            .map(|t| Raster::from_pixels(self.canvas.0, self.canvas.1, t.row(b).to_vec()))
            .collect()
    }
}

impl CustomOp for OverlapOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (rows, cols) = inputs[0].dims2();
        let mut per_input: Vec<Vec<f64>> = vec![Vec::with_capacity(rows * cols); inputs.len()];
        for b in 0..rows {
            let g = grad.data()[b];
            for (acc, d) in per_input.iter_mut().zip(overlap_loss_vjp(&self.rows(inputs, b), self.v_max)) {
                acc.extend(d.into_iter().map(|v| v * g));
            }
        }
        per_input
            .into_iter()
            .map(|d| Some(Tensor::from_vec(&[rows, cols], d)))
            .collect()
    }
}

/// Per-sample soft overlap `[B, 1]` of placed glyph tensors `[B, W_c·H_c]`.
pub fn overlap_on_tape(tape: &mut Tape, placed: &[Var], canvas: (usize, usize), v_max: f64) -> Var {
    let op = OverlapOp { canvas, v_max };
    let rows = tape.value(placed[0]).dims2().0;
    let values: Vec<&Tensor> = placed.iter().map(|&v| tape.value(v)).collect();
    let losses: Vec<f64> = (0..rows).map(|b| overlap_loss(&op.rows(&values, b), v_max)).collect();
    tape.custom(placed, Tensor::from_vec(&[rows, 1], losses), Box::new(op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{CANVAS_SIZE, GLYPH_SIZE};

    const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

    fn solid(v: f64) -> Raster {
        Raster::filled(GLYPH_SIZE, GLYPH_SIZE, v)
    }

    #[test]
    fn theta_has_zero_shear_terms() {
        for p in [
            LayoutParams::new(64.0, 64.0, 128.0, 128.0),
            LayoutParams::new(10.5, 90.0, 7.0, 33.0),
            LayoutParams::new(100.0, 3.0, 1.0, 0.5),
        ] {
            let t = affine_params(&p, (GLYPH_SIZE, GLYPH_SIZE), CANVAS);
            assert_eq!(t.theta[0][1], 0.0);
            assert_eq!(t.theta[1][0], 0.0);
            assert!(t.theta[0][0] > 0.0 && t.theta[1][1] > 0.0);
        }
    }

    #[test]
    fn box_corners_map_to_glyph_corners() {
        let p = LayoutParams::new(40.0, 70.0, 30.0, 50.0);
        let t = affine_params(&p, (64, 64), CANVAS);
        let (x0, y0, x1, y1) = p.corners();
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        assert!(close(t.apply(x0, y0), (0.0, 0.0)));
        assert!(close(t.apply(x1, y0), (64.0, 0.0)));
        assert!(close(t.apply(x1, y1), (64.0, 64.0)));
        assert!(close(t.apply(x0, y1), (0.0, 64.0)));
    }

    #[test]
    fn full_cover_box_fills_canvas() {
        let out = place_glyph(&solid(200.0), &LayoutParams::new(64.0, 64.0, 128.0, 128.0), CANVAS);
        assert_eq!(out.ink_bbox(0.0), Some((0, 0, 128, 128)));
    }

    #[test]
    fn native_scale_box_occupies_exact_quadrant() {
        let out = place_glyph(&solid(200.0), &LayoutParams::new(32.0, 32.0, 64.0, 64.0), CANVAS);
        for y in 0..128 {
            for x in 0..128 {
                let expect = if x < 64 && y < 64 { 200.0 } else { 0.0 };
                assert_eq!(out.get(x, y), expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn integer_translation_at_unit_scale_copies_pixels() {
        let mut g = Raster::zeros(64, 64);
        for (i, v) in g.pixels_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 251) as f64;
        }
        let out = place_glyph(&g, &LayoutParams::new(32.0 + 17.0, 32.0 + 40.0, 64.0, 64.0), CANVAS);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(out.get(x + 17, y + 40), g.get(x, y));
            }
        }
        assert_eq!(out.pixels().iter().sum::<f64>(), g.pixels().iter().sum::<f64>());
    }

    #[test]
    fn upscaled_one_hot_has_tent_profile() {
        // Closed-form 2x bilinear kernel: per-axis weights 1/4, 3/4, 3/4, 1/4.
        let mut g = Raster::zeros(64, 64);
        g.set(20, 30, 1.0);
        let out = place_glyph(&g, &LayoutParams::new(64.0, 64.0, 128.0, 128.0), CANVAS);
        let tent = [0.25, 0.75, 0.75, 0.25];
        let (x0, y0) = (2 * 20 - 1, 2 * 30 - 1);
        for (dy, wy) in tent.iter().enumerate() {
            for (dx, wx) in tent.iter().enumerate() {
                assert!((out.get(x0 + dx, y0 + dy) - wx * wy).abs() < 1e-12);
            }
        }
        assert!((out.pixels().iter().sum::<f64>() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_box_is_clamped_and_counted() {
        let before = degenerate_clamp_count();
        let t = affine_params(&LayoutParams::new(64.0, 64.0, 0.5, 10.0), (64, 64), CANVAS);
        assert!(degenerate_clamp_count() > before);
        assert_eq!(t.theta[0][0], 64.0 / MIN_BOX_SIDE);
    }

    #[test]
    fn compose_single_is_identity_and_truncates() {
        let one = place_glyph(&solid(100.0), &LayoutParams::new(64.0, 64.0, 128.0, 128.0), CANVAS);
        assert_eq!(compose_canvas(std::slice::from_ref(&one), 255.0).unwrap(), one);
        let a = Raster::filled(128, 128, 200.0);
        let out = compose_canvas(&[a.clone(), a], 255.0).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 255.0));
    }

    #[test]
    fn compose_rejects_empty_and_mismatched() {
        assert_eq!(compose_canvas(&[], 255.0), Err(CompositionError::Empty));
        let err = compose_canvas(&[Raster::zeros(4, 4), Raster::zeros(4, 5)], 255.0).unwrap_err();
        assert!(matches!(err, CompositionError::DimMismatch { index: 1, .. }));
    }

    fn square(x: usize, y: usize, side: usize) -> Raster {
        let mut r = Raster::zeros(16, 16);
        for yy in y..y + side {
            for xx in x..x + side {
                r.set(xx, yy, 255.0);
            }
        }
        r
    }

    #[test]
    fn overlap_cases() {
        assert_eq!(overlap_loss(&[square(0, 0, 2), square(5, 5, 2)], 255.0), 0.0);
        assert_eq!(overlap_loss(&[square(0, 0, 2), square(1, 1, 2)], 255.0), 1.0);
        assert_eq!(hard_overlap(&[square(0, 0, 2), square(1, 1, 2)], 255.0), 1.0);
        let g = square(3, 4, 5);
        assert_eq!(overlap_loss(&[g.clone(), g], 255.0), 25.0);
        assert_eq!(overlap_loss(&[], 255.0), 0.0);
    }

    #[test]
    fn overlap_vjp_matches_finite_differences() {
        let mk = |seed: usize| {
            let px = (0..36).map(|i| ((i * 7 + seed * 13) % 23) as f64 * 9.0 + 3.0).collect();
            Raster::from_pixels(6, 6, px)
        };
        let placed = vec![mk(1), mk(2), mk(3)];
        let grads = overlap_loss_vjp(&placed, 255.0);
        let eps = 1e-4;
        for i in 0..placed.len() {
            for k in [0, 7, 20, 35] {
                let mut plus = placed.clone();
                plus[i].pixels_mut()[k] += eps;
                let mut minus = placed.clone();
                minus[i].pixels_mut()[k] -= eps;
                let fd = (overlap_loss(&plus, 255.0) - overlap_loss(&minus, 255.0)) / (2.0 * eps);
                assert!((fd - grads[i][k]).abs() < 1e-8, "{fd} vs {}", grads[i][k]);
            }
        }
    }

    #[test]
    fn tape_ops_agree_with_pure_functions() {
        let glyph = {
            let mut g = Raster::zeros(64, 64);
            for y in 10..50 {
                for x in 5..60 {
                    g.set(x, y, 120.0);
                }
            }
            g
        };
        let boxes = [[40.0, 50.0, 30.0, 28.0], [60.0, 55.0, 33.0, 31.0]];
        let mut tape = Tape::new();
        let placed: Vec<Var> = boxes
            .iter()
            .map(|b| {
                let v = tape.var(Tensor::from_vec(&[1, 4], b.to_vec()));
                place_on_tape(&mut tape, v, vec![glyph.clone()], CANVAS)
            })
            .collect();
        let logo = compose_on_tape(&mut tape, &placed, 255.0);
        let ol = overlap_on_tape(&mut tape, &placed, CANVAS, 255.0);
        let pure: Vec<Raster> = boxes
            .iter()
            .map(|b| place_glyph(&glyph, &LayoutParams::from_array(*b), CANVAS))
            .collect();
        assert_eq!(tape.value(logo).data(), compose_canvas(&pure, 255.0).unwrap().pixels());
        assert_eq!(tape.value(ol).data()[0], overlap_loss(&pure, 255.0));
        assert!(tape.value(ol).data()[0] > 0.0);
    }
}
