//! Layout generator G: a recurrent encoder-decoder from condition features
//! and latent noise to box coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoding::ConditionFeatures;
use crate::layout::{LayoutParams, LayoutSequence};
use crate::model::{eval_with, ModelError};
use crate::nn::{Bound, GruCell, Linear, ParamSet, Tape, Tensor, Var};

/// Latent style vector `z ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentNoise {
    pub z: Vec<f64>,
}

impl LatentNoise {
    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Deterministic standard-normal draw of dimension `d_z`.
pub fn sample_noise(d_z: usize, seed: u64) -> Result<LatentNoise, ModelError> {
    if d_z == 0 {
        return Err(ModelError::Argument("noise dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(LatentNoise {
        z: (0..d_z).map(|_| StandardNormal.sample(&mut rng)).collect(),
    })
}

/// `z` seeds the encoder GRU; both GRUs read `f^c_i` at step `i`; the
/// decoder starts from the encoder's final state and emits one box per step.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamSet,
    encoder: GruCell,
    decoder: GruCell,
    head: Linear,
    pub d_c: usize,
    pub d_z: usize,
    pub canvas: (usize, usize),
}

impl Generator {
    pub fn new(d_c: usize, d_z: usize, canvas: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = GruCell::new(&mut params, "encoder", d_c, d_z, &mut rng);
        let decoder = GruCell::new(&mut params, "decoder", d_c, d_z, &mut rng);
        let head = Linear::new(&mut params, "head", d_z, 4, &mut rng);
        Self {
            params,
            encoder,
            decoder,
            head,
            d_c,
            d_z,
            canvas,
        }
    }

    /// `cond[i]` is `[B, d_c]`, `z` is `[B, d_z]`. Returns one `[B, 4]`
    /// pixel-space box tensor per step.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, cond: &[Var], z: Var) -> Vec<Var> {
        let enc = self.encoder.run(tape, p, cond, z);
        let last = *enc.last().expect("nonempty condition");
        let dec = self.decoder.run(tape, p, cond, last);
        let batch = tape.value(z).shape()[0];
        let (w, h) = (self.canvas.0 as f64, self.canvas.1 as f64);
        let scale = Tensor::from_vec(&[batch, 4], [w, h, w, h].repeat(batch));
        dec.iter()
            .map(|&s| {
                let logits = self.head.forward(tape, p, s);
                let unit = tape.sigmoid(logits);
                let scale = tape.constant(scale.clone());
                tape.mul(unit, scale)
            })
            .collect()
    }

    pub fn generate_layout(&self, cond: &ConditionFeatures, z: &LatentNoise) -> Result<LayoutSequence, ModelError> {
        Ok(self.generate_batch(cond, std::slice::from_ref(z))?.remove(0))
    }

    /// One layout per noise vector, sharing `cond`.
    pub fn generate_batch(&self, cond: &ConditionFeatures, noise: &[LatentNoise]) -> Result<Vec<LayoutSequence>, ModelError> {
        if cond.dim() != self.d_c {
            return Err(ModelError::Argument(format!("condition width {} != {}", cond.dim(), self.d_c)));
        }
        if noise.is_empty() {
            return Err(ModelError::Argument("no noise vectors".into()));
        }
        if let Some(z) = noise.iter().find(|z| z.dim() != self.d_z) {
            return Err(ModelError::Argument(format!("noise dim {} != {}", z.dim(), self.d_z)));
        }
        let b = noise.len();
        let boxes = eval_with(&self.params, |tape, p| {
            let steps: Vec<Var> = (0..cond.len())
                .map(|i| tape.constant(Tensor::from_vec(&[b, self.d_c], cond.row(i).repeat(b))))
                .collect();
            let z = tape.constant(Tensor::from_vec(&[b, self.d_z], noise.iter().flat_map(|n| n.z.clone()).collect()));
            let out = self.forward(tape, p, &steps, z);
            out.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
        });
        Ok((0..b)
            .map(|row| LayoutSequence::new(boxes.iter().map(|t| self.to_params(t.row(row))).collect()))
            .collect())
    }

    /// Converts a generated row to box parameters. f64 sigmoid rounds to
    /// exactly 0 or 1 for extreme logits, so the open interval is enforced here.
    pub fn to_params(&self, r: &[f64]) -> LayoutParams {
        let (w, h) = (self.canvas.0 as f64, self.canvas.1 as f64);
        let open = |v: f64, limit: f64| v.clamp(f64::MIN_POSITIVE, limit * (1.0 - f64::EPSILON));
        LayoutParams::new(open(r[0], w), open(r[1], h), open(r[2], w), open(r[3], h))
    }
}
