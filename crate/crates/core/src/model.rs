//! The full network: condition encoder, layout generator and the two
//! discriminators, plus the eval-mode inference helpers built on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::discriminators::{ImgDiscriminator, RealismScore, SeqDiscriminator};
use crate::encoding::{Ablation, ConditionEncoder, ConditionFeatures, VisualEncoder};
use crate::generator::{Generator, LatentNoise};
use crate::layout::{LayoutSequence, CANVAS_SIZE, MAX_GLYPHS};
use crate::nn::{ParamSet, Tape, Tensor};
use crate::raster::{GlyphImage, Raster};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Network sizes. Defaults follow the reference configuration; toy runs
/// shrink them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Visual feature size per glyph.
    pub d_v: usize,
    /// Character embedding size.
    pub d_e: usize,
    /// Condition feature size.
    pub d_c: usize,
    /// Latent noise size, also the generator's hidden size.
    pub d_z: usize,
    /// Channel count of the first visual block; later blocks double it up to 8x.
    pub visual_width: usize,
    /// Update the visual trunk during training.
    pub finetune_visual: bool,
    /// Output channels of the four image-discriminator convolutions.
    pub img_channels: [usize; 4],
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_v: 256,
            d_e: 128,
            d_c: 256,
            d_z: 64,
            visual_width: 8,
            finetune_visual: false,
            img_channels: [16, 32, 64, 64],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_v", self.d_v),
            ("d_e", self.d_e),
            ("d_c", self.d_c),
            ("d_z", self.d_z),
            ("visual_width", self.visual_width),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Argument(format!("{name} must be at least 1")));
            }
        }
        if self.img_channels.contains(&0) {
            return Err(ModelError::Argument("img_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Every trainable sub-network of the model.
#[derive(Clone, Debug)]
pub struct LayoutModel {
    pub config: ModelConfig,
    pub visual: VisualEncoder,
    pub condition: ConditionEncoder,
    pub generator: Generator,
    pub seq_dis: SeqDiscriminator,
    pub img_dis: ImgDiscriminator,
}

/// Names of the parameter groups, in checkpoint order.
pub const PARAM_GROUPS: [&str; 5] = ["visual", "condition", "generator", "seq_dis", "img_dis"];

impl LayoutModel {
    /// Seeded initialization. A pretrained embedding table replaces the
    /// random one (and its vocabulary wins over `vocab`).
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: Option<EmbeddingTable>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.check()?;
        let table = match embeddings {
            Some(t) if t.dim() != config.d_e => {
                return Err(ModelError::Argument(format!(
                    "embedding dim {} does not match d_e {}",
                    t.dim(),
                    config.d_e
                )))
            }
            Some(t) => t,
            None => EmbeddingTable::random(vocab, config.d_e, seed ^ 0x5eed_0001),
        };
        Ok(Self {
            visual: VisualEncoder::new(config.visual_width, config.d_v, seed ^ 0x5eed_0002),
            condition: ConditionEncoder::new(table, config.d_v, config.d_c, config.ablation, seed ^ 0x5eed_0003),
            generator: Generator::new(config.d_c, config.d_z, (CANVAS_SIZE, CANVAS_SIZE), seed ^ 0x5eed_0004),
            seq_dis: SeqDiscriminator::new(config.d_c, (CANVAS_SIZE, CANVAS_SIZE), seed ^ 0x5eed_0005),
            img_dis: ImgDiscriminator::new(config.d_c, config.img_channels, (CANVAS_SIZE, CANVAS_SIZE), seed ^ 0x5eed_0006),
            config,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.condition.vocab()
    }

    pub fn groups(&self) -> [&ParamSet; 5] {
        [
            &self.visual.params,
            &self.condition.params,
            &self.generator.params,
            &self.seq_dis.params,
            &self.img_dis.params,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamSet; 5] {
        [
            &mut self.visual.params,
            &mut self.condition.params,
            &mut self.generator.params,
            &mut self.seq_dis.params,
            &mut self.img_dis.params,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|g| g.num_scalars()).sum()
    }

    /// Condition features for one glyph sequence (eval mode).
    pub fn condition_for(&self, glyphs: &[GlyphImage], units: &[String]) -> Result<ConditionFeatures, ModelError> {
        if glyphs.len() != units.len() {
            return Err(ModelError::Argument(format!(
                "{} glyphs for {} units",
                glyphs.len(),
                units.len()
            )));
        }
        if glyphs.len() > MAX_GLYPHS {
            return Err(ModelError::Argument(format!(
                "{} glyph units exceed the maximum of {MAX_GLYPHS}",
                glyphs.len()
            )));
        }
        let fv = self.visual.encode_glyph_visual(glyphs)?;
        let fe = self.condition.embed(units);
        self.condition.encode_condition(&fv, &fe)
    }

    /// One layout per noise draw for the same glyph sequence, batched.
    pub fn sample(&self, cond: &ConditionFeatures, noise: &[LatentNoise]) -> Result<Vec<LayoutSequence>, ModelError> {
        self.generator.generate_batch(cond, noise)
    }

    /// Sequence and image realism of `layout` under `cond`, composing `glyphs`.
    pub fn realism(
        &self,
        cond: &ConditionFeatures,
        layout: &LayoutSequence,
        glyphs: &[&Raster],
    ) -> Result<(RealismScore, RealismScore), ModelError> {
        let s = self.seq_dis.seq_discriminate(layout, cond.holistic())?;
        let logo = crate::composition::compose_layout(glyphs, &layout.params, (CANVAS_SIZE, CANVAS_SIZE), crate::raster::V_MAX)
            .map_err(|e| ModelError::Argument(e.to_string()))?;
        let i = self.img_dis.img_discriminate(&logo, cond.holistic())?;
        Ok((s, i))
    }
}

/// Evaluates `build` on a fresh tape with every parameter of `params` bound
/// as a constant.
pub(crate) fn eval_with<T>(params: &ParamSet, build: impl FnOnce(&mut Tape, &crate::nn::Bound) -> T) -> T {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    build(&mut tape, &bound)
}

/// Row-stacks equal-length vectors into a `[rows, d]` tensor.
pub(crate) fn stack_rows(rows: &[&[f64]]) -> Tensor {
    let d = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        debug_assert_eq!(r.len(), d);
        data.extend_from_slice(r);
    }
    Tensor::from_vec(&[rows.len(), d], data)
}
