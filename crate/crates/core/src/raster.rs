use serde::{Deserialize, Serialize};

/// Default intensity ceiling for glyphs and canvases.
pub const V_MAX: f64 = 255.0;

/// Single-channel image with f64 intensities, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

/// A transformed glyph or a composed logo, sized to the canvas.
pub type CanvasImage = Raster;

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Tight bounding box `(x0, y0, x1, y1)` (exclusive ends) of pixels above `threshold`.
    pub fn ink_bbox(&self, threshold: f64) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) > threshold {
                    bbox = Some(match bbox {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bbox
    }

    /// Quantizes to 8-bit, rounding and saturating.
    pub fn to_u8(&self, v_max: f64) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v / v_max * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8], v_max: f64) -> Self {
        Self::from_pixels(
            width,
            height,
            bytes.iter().map(|&b| b as f64 / 255.0 * v_max).collect(),
        )
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &std::path::Path, v_max: f64) -> image::ImageResult<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8(v_max))
            .expect("buffer matches dimensions")
            .save(path)
    }

    /// Tiles equally sized rasters into rows of `cols`, separated by a
    /// one-pixel border of `border` intensity.
    pub fn grid(tiles: &[Raster], cols: usize, border: f64) -> Raster {
        let Some(first) = tiles.first() else {
            return Raster::zeros(0, 0);
        };
        let (tw, th) = first.dims();
        let cols = cols.clamp(1, tiles.len());
        let rows = tiles.len().div_ceil(cols);
        let mut out = Raster::filled(cols * (tw + 1) + 1, rows * (th + 1) + 1, border);
        for (i, t) in tiles.iter().enumerate() {
            assert_eq!(t.dims(), (tw, th), "grid tiles must share dimensions");
            let (ox, oy) = (1 + (i % cols) * (tw + 1), 1 + (i / cols) * (th + 1));
            for y in 0..th {
                for x in 0..tw {
                    out.set(ox + x, oy + y, t.get(x, y));
                }
            }
        }
        out
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let bot = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                out.set(x, y, top * (1.0 - ty) + bot * ty);
            }
        }
        out
    }

    /// Fits the image inside `size × size` preserving aspect ratio, zero-padded and centered.
    pub fn letterboxed(&self, size: usize) -> Self {
        let fit = Letterbox::new(self.width, self.height, size);
        let inner = self.resized(fit.width, fit.height);
        let mut out = Self::zeros(size, size);
        for y in 0..fit.height {
            for x in 0..fit.width {
                out.set(fit.offset_x + x, fit.offset_y + y, inner.get(x, y));
            }
        }
        out
    }
}

/// Placement of a `width × height` image letterboxed into a square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Letterbox {
    pub width: usize,
    pub height: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl Letterbox {
    pub fn new(width: usize, height: usize, size: usize) -> Self {
        let scale = size as f64 / width.max(height) as f64;
        let w = ((width as f64 * scale).round() as usize).clamp(1, size);
        let h = ((height as f64 * scale).round() as usize).clamp(1, size);
        Self {
            width: w,
            height: h,
            offset_x: (size - w) / 2,
            offset_y: (size - h) / 2,
        }
    }

    /// Maps a point in source pixels to the letterboxed frame.
    pub fn map_point(&self, src: (usize, usize), x: f64, y: f64) -> (f64, f64) {
        (
            self.offset_x as f64 + x * self.width as f64 / src.0 as f64,
            self.offset_y as f64 + y * self.height as f64 / src.1 as f64,
        )
    }

    pub fn scale(&self, src: (usize, usize)) -> (f64, f64) {
        (self.width as f64 / src.0 as f64, self.height as f64 / src.1 as f64)
    }
}

/// One glyph raster with its character identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphImage {
    pub pixels: Raster,
    pub char_id: usize,
}

impl GlyphImage {
    pub fn new(pixels: Raster, char_id: usize) -> Self {
        Self { pixels, char_id }
    }
}
