//! Conditional critics: D_s reads the box sequence, D_i the composed logo.
//! Both output a logit; [`RealismScore`] is its sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layout::LayoutSequence;
use crate::model::{eval_with, ModelError};
use crate::nn::{sigmoid, Bound, Conv2d, GruCell, Linear, ParamSet, Tape, Tensor, Var};
use crate::raster::{Raster, V_MAX};

const LEAK: f64 = 0.2;

/// Probability that the input is real, strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismScore {
    pub logit: f64,
    pub probability: f64,
}

impl RealismScore {
    pub fn from_logit(logit: f64) -> Self {
        // sigmoid rounds to exactly 0 or 1 for extreme logits in f64.
        let probability = sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        Self { logit, probability }
    }
}

fn check_cond(cond: &[f64], d_c: usize) -> Result<(), ModelError> {
    if cond.len() != d_c {
        return Err(ModelError::Argument(format!("condition width {} != {d_c}", cond.len())));
    }
    Ok(())
}

/// Two stacked GRUs over normalized boxes, both initialized with `f^c_N`.
#[derive(Clone, Debug)]
pub struct SeqDiscriminator {
    pub params: ParamSet,
    layer1: GruCell,
    layer2: GruCell,
    head: Linear,
    pub d_c: usize,
    pub canvas: (usize, usize),
}

impl SeqDiscriminator {
    pub fn new(d_c: usize, canvas: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layer1 = GruCell::new(&mut params, "gru1", 4, d_c, &mut rng);
        let layer2 = GruCell::new(&mut params, "gru2", d_c, d_c, &mut rng);
        let head = Linear::new(&mut params, "head", d_c, 1, &mut rng);
        Self {
            params,
            layer1,
            layer2,
            head,
            d_c,
            canvas,
        }
    }

    /// `boxes[i]` is `[B, 4]` in pixels, `cond` is `[B, d_c]`; returns logits `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, boxes: &[Var], cond: Var) -> Var {
        let batch = tape.value(cond).shape()[0];
        let (w, h) = (1.0 / self.canvas.0 as f64, 1.0 / self.canvas.1 as f64);
        let norm = Tensor::from_vec(&[batch, 4], [w, h, w, h].repeat(batch));
        let xs: Vec<Var> = boxes
            .iter()
            .map(|&b| {
                let n = tape.constant(norm.clone());
                tape.mul(b, n)
            })
            .collect();
        let s1 = self.layer1.run(tape, p, &xs, cond);
        let s2 = self.layer2.run(tape, p, &s1, cond);
        self.head.forward(tape, p, *s2.last().expect("nonempty layout"))
    }

    pub fn seq_discriminate(&self, layout: &LayoutSequence, cond_holistic: &[f64]) -> Result<RealismScore, ModelError> {
        if layout.is_empty() {
            return Err(ModelError::Argument("empty layout".into()));
        }
        check_cond(cond_holistic, self.d_c)?;
        let logit = eval_with(&self.params, |tape, p| {
            let boxes: Vec<Var> = layout
                .params
                .iter()
                .map(|b| tape.constant(Tensor::from_vec(&[1, 4], b.to_array().to_vec())))
                .collect();
            let c = tape.constant(Tensor::from_vec(&[1, self.d_c], cond_holistic.to_vec()));
            let y = self.forward(tape, p, &boxes, c);
            tape.value(y).data()[0]
        });
        Ok(RealismScore::from_logit(logit))
    }
}

/// Four stride-2 4x4 convolutions with the condition tiled after the first.
#[derive(Clone, Debug)]
pub struct ImgDiscriminator {
    pub params: ParamSet,
    convs: [Conv2d; 4],
    head: Linear,
    pub d_c: usize,
    pub canvas: (usize, usize),
}

impl ImgDiscriminator {
    pub fn new(d_c: usize, channels: [usize; 4], canvas: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let [c1, c2, c3, c4] = channels;
        let convs = [
            Conv2d::new(&mut params, "conv1", 1, c1, 4, 2, 1, &mut rng),
            Conv2d::new(&mut params, "conv2", c1 + d_c, c2, 4, 2, 1, &mut rng),
            Conv2d::new(&mut params, "conv3", c2, c3, 4, 2, 1, &mut rng),
            Conv2d::new(&mut params, "conv4", c3, c4, 4, 2, 1, &mut rng),
        ];
        let spatial = (canvas.0 / 16) * (canvas.1 / 16);
        let head = Linear::new(&mut params, "head", c4 * spatial, 1, &mut rng);
        Self {
            params,
            convs,
            head,
            d_c,
            canvas,
        }
    }

    /// `logo` is `[B, W·H]` in intensity units, `cond` is `[B, d_c]`; returns logits `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, logo: Var, cond: Var) -> Var {
        let batch = tape.value(logo).shape()[0];
        let x = tape.reshape(logo, &[batch, 1, self.canvas.1, self.canvas.0]);
        let x = tape.scale(x, 1.0 / V_MAX);
        let mut h = self.convs[0].forward(tape, p, x);
        h = tape.leaky_relu(h, LEAK);
        h = self.convs[1].forward_tiled(tape, p, h, cond);
        h = tape.leaky_relu(h, LEAK);
        for conv in &self.convs[2..] {
            h = conv.forward(tape, p, h);
            h = tape.leaky_relu(h, LEAK);
        }
        let flat_len = tape.value(h).len() / batch;
        let flat = tape.reshape(h, &[batch, flat_len]);
        self.head.forward(tape, p, flat)
    }

    pub fn img_discriminate(&self, logo: &Raster, cond_holistic: &[f64]) -> Result<RealismScore, ModelError> {
        if logo.dims() != self.canvas {
            return Err(ModelError::Argument(format!(
                "logo is {:?}, expected {:?}",
                logo.dims(),
                self.canvas
            )));
        }
        check_cond(cond_holistic, self.d_c)?;
        let logit = eval_with(&self.params, |tape, p| {
            let x = tape.constant(Tensor::from_vec(&[1, logo.pixels().len()], logo.pixels().to_vec()));
            let c = tape.constant(Tensor::from_vec(&[1, self.d_c], cond_holistic.to_vec()));
            let y = self.forward(tape, p, x, c);
            tape.value(y).data()[0]
        });
        Ok(RealismScore::from_logit(logit))
    }
}
