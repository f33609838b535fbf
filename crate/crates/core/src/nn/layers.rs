use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Named, ordered collection of parameter tensors owned by one sub-network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on the tape. `track` decides whether they
    /// receive gradients in this pass.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if track {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a [`ParamSet`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = ps.add(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng),
        );
        let b = ps.add(
            format!("{name}.bias"),
            Tensor::uniform(&[out_dim], bound, rng),
        );
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, p.get(self.w));
        tape.add_bias(y, p.get(self.b))
    }
}

/// Gated recurrent unit cell with PyTorch gate ordering (reset, update, new).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            input: Linear::new(ps, &format!("{name}.ih"), in_dim, 3 * hidden_dim, rng),
            hidden: Linear::new(ps, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, rng),
            hidden_dim,
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        let hd = self.hidden_dim;
        let gi = self.input.forward(tape, p, x);
        let gh = self.hidden.forward(tape, p, h);
        let (ir, iz, inn) = (
            tape.slice_cols(gi, 0, hd),
            tape.slice_cols(gi, hd, hd),
            tape.slice_cols(gi, 2 * hd, hd),
        );
        let (hr, hz, hn) = (
            tape.slice_cols(gh, 0, hd),
            tape.slice_cols(gh, hd, hd),
            tape.slice_cols(gh, 2 * hd, hd),
        );
        let r = tape.add(ir, hr);
        let r = tape.sigmoid(r);
        let z = tape.add(iz, hz);
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn);
        let n = tape.add(inn, rh);
        let n = tape.tanh(n);
        // h' = n + z ⊙ (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    /// Runs the cell over a sequence of `[B, in]` steps, returning every state.
    pub fn run(&self, tape: &mut Tape, p: &Bound, xs: &[Var], h0: Var) -> Vec<Var> {
        let mut h = h0;
        xs.iter()
            .map(|&x| {
                h = self.step(tape, p, x, h);
                h
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv2d {
    w: usize,
    b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        // He-normal for the ReLU-family activations that follow every conv here.
        let fan_in = (in_c * kernel * kernel) as f64;
        let w = ps.add(
            format!("{name}.weight"),
            Tensor::randn(&[out_c, in_c, kernel, kernel], (2.0 / fan_in).sqrt(), rng),
        );
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.conv2d(x, p.get(self.w), p.get(self.b), self.stride, self.pad)
    }

    /// Convolution over `x` with `cond` `[B, D]` tiled as extra channels.
    pub fn forward_tiled(&self, tape: &mut Tape, p: &Bound, x: Var, cond: Var) -> Var {
        tape.conv2d_tiled(x, cond, p.get(self.w), p.get(self.b), self.stride, self.pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_state_stays_bounded_and_differentiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "gru", 3, 4, &mut rng);
        let mut tape = Tape::new();
        let p = ps.bind(&mut tape, true);
        let xs: Vec<Var> = (0..5)
            .map(|_| tape.constant(Tensor::randn(&[2, 3], 3.0, &mut rng)))
            .collect();
        let h0 = tape.constant(Tensor::zeros(&[2, 4]));
        let hs = cell.run(&mut tape, &p, &xs, h0);
        assert_eq!(hs.len(), 5);
        let last = *hs.last().unwrap();
        assert!(tape.value(last).data().iter().all(|v| v.abs() < 1.0));
        let loss = tape.sum(last);
        let grads = tape.backward(loss);
        for &v in p.vars() {
            assert!(grads.get(v).is_some());
        }
    }
}
