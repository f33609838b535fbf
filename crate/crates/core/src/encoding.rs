//! Condition encoder E: per-glyph visual features from a VGG-style trunk,
//! character embeddings, and a recurrent fusion into condition features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::layout::GLYPH_SIZE;
use crate::model::{eval_with, stack_rows, ModelError};
use crate::nn::{Bound, Conv2d, GruCell, Linear, ParamSet, Tape, Tensor, Var};
use crate::raster::{GlyphImage, V_MAX};

/// Input switches for the "w/o Text" and "w/o Img" ablations. Disabled
/// inputs are replaced by zeros so tensor shapes never change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_text: bool,
    pub no_img: bool,
}

/// Per-glyph visual features, one row per glyph.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    pub sequence: Tensor,
}

impl VisualFeatures {
    pub fn len(&self) -> usize {
        self.sequence.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fused condition features `f^c_1..f^c_N`; the holistic condition is the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFeatures {
    sequence: Tensor,
}

impl ConditionFeatures {
    pub fn new(sequence: Tensor) -> Result<Self, ModelError> {
        if sequence.shape().len() != 2 || sequence.shape()[0] == 0 {
            return Err(ModelError::Argument("condition needs at least one row".into()));
        }
        Ok(Self { sequence })
    }

    pub fn sequence(&self) -> &Tensor {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.sequence.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.sequence.row(i)
    }

    pub fn holistic(&self) -> &[f64] {
        self.sequence.row(self.len() - 1)
    }
}

/// VGG-19 block structure: conv counts per block, each block followed by 2x max pooling.
const VGG_BLOCKS: [usize; 5] = [2, 2, 4, 4, 4];
const VGG_MULT: [usize; 5] = [1, 2, 4, 8, 8];

/// Sixteen 3x3 convolutions in five pooled blocks, global average pooling
/// and a projection to `d_v`.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub params: ParamSet,
    blocks: Vec<Vec<Conv2d>>,
    proj: Linear,
    pub d_v: usize,
}

impl VisualEncoder {
    pub fn new(width: usize, d_v: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut in_c = 1;
        let mut blocks = Vec::new();
        for (b, (&n, &mult)) in VGG_BLOCKS.iter().zip(&VGG_MULT).enumerate() {
            let out_c = width * mult;
            let block = (0..n)
                .map(|l| {
                    let conv = Conv2d::new(&mut params, &format!("block{}.conv{}", b + 1, l + 1), in_c, out_c, 3, 1, 1, &mut rng);
                    in_c = out_c;
                    conv
                })
                .collect();
            blocks.push(block);
        }
        let proj = Linear::new(&mut params, "proj", in_c, d_v, &mut rng);
        Self {
            params,
            blocks,
            proj,
            d_v,
        }
    }

    /// `[M, 1, 64, 64]` glyphs scaled to [0, 1] → `[M, d_v]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for block in &self.blocks {
            for conv in block {
                h = conv.forward(tape, p, h);
                h = tape.relu(h);
            }
            h = tape.max_pool2(h);
        }
        let pooled = tape.global_avg_pool(h);
        self.proj.forward(tape, p, pooled)
    }

    /// Eval-mode features for a glyph list, rows in input order.
    pub fn encode_glyph_visual(&self, glyphs: &[GlyphImage]) -> Result<VisualFeatures, ModelError> {
        if glyphs.is_empty() {
            return Err(ModelError::Argument("no glyphs to encode".into()));
        }
        let input = glyph_batch(glyphs.iter())?;
        let sequence = eval_with(&self.params, |tape, p| {
            let x = tape.constant(input);
            let y = self.forward(tape, p, x);
            tape.value(y).clone()
        });
        Ok(VisualFeatures { sequence })
    }
}

/// Stacks glyph rasters into `[M, 1, 64, 64]` scaled to [0, 1].
pub fn glyph_batch<'a>(glyphs: impl Iterator<Item = &'a GlyphImage>) -> Result<Tensor, ModelError> {
    let mut data = Vec::new();
    let mut m = 0;
    for g in glyphs {
        if g.pixels.dims() != (GLYPH_SIZE, GLYPH_SIZE) {
            return Err(ModelError::Argument(format!(
                "glyph is {:?}, expected {GLYPH_SIZE}x{GLYPH_SIZE}",
                g.pixels.dims()
            )));
        }
        data.extend(g.pixels.pixels().iter().map(|v| v / V_MAX));
        m += 1;
    }
    Ok(Tensor::from_vec(&[m, 1, GLYPH_SIZE, GLYPH_SIZE], data))
}

/// Embedding lookup plus a single-layer GRU over `[f^v_i, f^e_i]`.
#[derive(Clone, Debug)]
pub struct ConditionEncoder {
    pub params: ParamSet,
    vocab: Vocabulary,
    table: usize,
    gru: GruCell,
    pub ablation: Ablation,
    pub d_v: usize,
    pub d_e: usize,
    pub d_c: usize,
}

impl ConditionEncoder {
    pub fn new(embeddings: EmbeddingTable, d_v: usize, d_c: usize, ablation: Ablation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d_e = embeddings.dim();
        let vocab = embeddings.vocab().clone();
        let table = params.add("embedding", embeddings.into_vectors());
        let gru = GruCell::new(&mut params, "gru", d_v + d_e, d_c, &mut rng);
        Self {
            params,
            vocab,
            table,
            gru,
            ablation,
            d_v,
            d_e,
            d_c,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn unit_ids(&self, units: &[String]) -> Vec<usize> {
        units.iter().map(|u| self.vocab.id(u)).collect()
    }

    /// Embedding rows `[N, d_e]` for `units`; unknown units share the UNK row.
    pub fn embed(&self, units: &[String]) -> Tensor {
        let table = self.params.get(self.table);
        let rows: Vec<&[f64]> = self.unit_ids(units).iter().map(|&i| table.row(i)).collect();
        if rows.is_empty() {
            return Tensor::zeros(&[0, self.d_e]);
        }
        stack_rows(&rows)
    }

    /// Batched recurrence. `visual[i]` is `[B, d_v]` for step `i`, `ids[i]`
    /// the batch's unit ids at that step. Returns every state `[B, d_c]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, visual: &[Var], ids: &[Vec<usize>]) -> Vec<Var> {
        assert_eq!(visual.len(), ids.len(), "one id row per step");
        let batch = ids.first().map_or(0, |r| r.len());
        let steps: Vec<Var> = visual
            .iter()
            .zip(ids)
            .map(|(&fv, step_ids)| {
                let fe = tape.gather_rows(p.get(self.table), step_ids);
                self.fuse(tape, fv, fe, batch)
            })
            .collect();
        let h0 = tape.constant(Tensor::zeros(&[batch, self.d_c]));
        self.gru.run(tape, p, &steps, h0)
    }

    fn fuse(&self, tape: &mut Tape, fv: Var, fe: Var, batch: usize) -> Var {
        let fv = if self.ablation.no_img {
            tape.constant(Tensor::zeros(&[batch, self.d_v]))
        } else {
            fv
        };
        let fe = if self.ablation.no_text {
            tape.constant(Tensor::zeros(&[batch, self.d_e]))
        } else {
            fe
        };
        tape.concat_cols(&[fv, fe])
    }

    /// Eval-mode fusion of one sequence's visual features and embedding rows.
    pub fn encode_condition(&self, fv: &VisualFeatures, fe: &Tensor) -> Result<ConditionFeatures, ModelError> {
        let n = fv.len();
        if fe.shape().len() != 2 || fe.shape()[0] != n {
            return Err(ModelError::Argument(format!(
                "{n} visual rows but {} embedding rows",
                fe.shape().first().copied().unwrap_or(0)
            )));
        }
        if n == 0 {
            return Err(ModelError::Argument("empty sequence".into()));
        }
        if fv.sequence.shape()[1] != self.d_v || fe.shape()[1] != self.d_e {
            return Err(ModelError::Argument(format!(
                "feature widths {}+{}, expected {}+{}",
                fv.sequence.shape()[1],
                fe.shape()[1],
                self.d_v,
                self.d_e
            )));
        }
        let sequence = eval_with(&self.params, |tape, p| {
            let steps: Vec<Var> = (0..n)
                .map(|i| {
                    let v = tape.constant(Tensor::from_vec(&[1, self.d_v], fv.sequence.row(i).to_vec()));
                    let e = tape.constant(Tensor::from_vec(&[1, self.d_e], fe.row(i).to_vec()));
                    self.fuse(tape, v, e, 1)
                })
                .collect();
            let h0 = tape.constant(Tensor::zeros(&[1, self.d_c]));
            let states = self.gru.run(tape, p, &steps, h0);
            let rows: Vec<&[f64]> = states.iter().map(|&s| tape.value(s).data()).collect();
            stack_rows(&rows)
        });
        ConditionFeatures::new(sequence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FontRegistry;
    use crate::raster::Raster;

    fn encoder(ablation: Ablation) -> ConditionEncoder {
        let vocab = Vocabulary::new(["北", "京", "天"].map(String::from));
        ConditionEncoder::new(EmbeddingTable::random(vocab, 8, 1), 6, 12, ablation, 2)
    }

    fn feats(n: usize, seed: u64) -> VisualFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VisualFeatures {
            sequence: Tensor::randn(&[n, 6], 1.0, &mut rng),
        }
    }

    fn units(s: &[&str]) -> Vec<String> {
        s.iter().map(|u| u.to_string()).collect()
    }

    #[test]
    fn visual_shapes_and_determinism() {
        let enc = VisualEncoder::new(2, 16, 3);
        let fonts = FontRegistry::builtin();
        let glyphs: Vec<GlyphImage> = ["北", "京", "北", "天", "A"]
            .iter()
            .map(|u| GlyphImage::new(fonts.render(crate::corpus::DEFAULT_FONT, u, GLYPH_SIZE).unwrap(), 0))
            .collect();
        let f = enc.encode_glyph_visual(&glyphs).unwrap();
        assert_eq!(f.sequence.shape(), &[5, 16]);
        assert_eq!(f.sequence.row(0), f.sequence.row(2));
        let d: f64 = f.sequence.row(0).iter().zip(f.sequence.row(1)).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(d > 0.0);
        assert!(enc.encode_glyph_visual(&[]).is_err());
        let bad = GlyphImage::new(Raster::zeros(10, 10), 0);
        assert!(enc.encode_glyph_visual(&[bad]).is_err());
    }

    #[test]
    fn holistic_is_last_row_and_single_step() {
        let e = encoder(Ablation::default());
        let c = e.encode_condition(&feats(1, 0), &e.embed(&units(&["北"]))).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.holistic(), c.row(0));
        let c3 = e.encode_condition(&feats(3, 0), &e.embed(&units(&["北", "京", "天"]))).unwrap();
        assert_eq!(c3.holistic(), c3.row(2));
        assert_eq!(c3, e.encode_condition(&feats(3, 0), &e.embed(&units(&["北", "京", "天"]))).unwrap());
    }

    #[test]
    fn order_sensitivity() {
        let e = encoder(Ablation::default());
        let fv = feats(3, 4);
        let a = e.encode_condition(&fv, &e.embed(&units(&["北", "京", "天"]))).unwrap();
        let perm = VisualFeatures {
            sequence: stack_rows(&[fv.sequence.row(2), fv.sequence.row(0), fv.sequence.row(1)]),
        };
        let b = e.encode_condition(&perm, &e.embed(&units(&["天", "北", "京"]))).unwrap();
        assert_ne!(a.holistic(), b.holistic());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let e = encoder(Ablation::default());
        assert!(e.encode_condition(&feats(2, 0), &e.embed(&units(&["北"]))).is_err());
    }

    #[test]
    fn ablations_ignore_the_masked_input() {
        let no_text = encoder(Ablation {
            no_text: true,
            no_img: false,
        });
        let fv = feats(2, 5);
        let a = no_text.encode_condition(&fv, &no_text.embed(&units(&["北", "京"]))).unwrap();
        let b = no_text.encode_condition(&fv, &no_text.embed(&units(&["天", "天"]))).unwrap();
        assert_eq!(a, b);

        let no_img = encoder(Ablation {
            no_text: false,
            no_img: true,
        });
        let fe = no_img.embed(&units(&["北", "京"]));
        let a = no_img.encode_condition(&feats(2, 6), &fe).unwrap();
        let b = no_img.encode_condition(&feats(2, 7), &fe).unwrap();
        assert_eq!(a, b);
        assert!(a.sequence().all_finite());
    }
}
