use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::eval_with;
use crate::nn::{Bound, Conv2d, Linear, ParamSet, Tape, Tensor, Var};
use crate::raster::{CanvasImage, V_MAX};

use super::EvalError;

/// Side length images are resized to before entering the backbone.
pub const BACKBONE_INPUT: usize = 64;
/// File name looked up in the weights cache directory.
pub const BACKBONE_FILE: &str = "proxy_backbone.json";
const BACKBONE_SEED: u64 = 0x0f1d_0f1d;
const CLASSES: usize = 10;
const IS_SPLITS: usize = 10;

/// Lightweight stand-in for an Inception network: three stride-2 convolutions,
/// 2x2 average pooling of the last map as the 64-d activation, and a 10-way
/// softmax head for the inception score. Scores computed with it are proxy-FID
/// and proxy-IS and only comparable with each other.
#[derive(Clone, Debug)]
pub struct ProxyBackbone {
    params: ParamSet,
    convs: [Conv2d; 3],
    head: Linear,
}

#[derive(Serialize, Deserialize)]
struct BackboneFile {
    params: ParamSet,
}

impl ProxyBackbone {
    /// The pinned, seeded backbone.
    pub fn seeded() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(BACKBONE_SEED);
        let mut params = ParamSet::new();
        let convs = [
            Conv2d::new(&mut params, "conv1", 3, 8, 3, 2, 1, &mut rng),
            Conv2d::new(&mut params, "conv2", 8, 16, 3, 2, 1, &mut rng),
            Conv2d::new(&mut params, "conv3", 16, 16, 3, 2, 1, &mut rng),
        ];
        let head = Linear::new(&mut params, "head", 64, CLASSES, &mut rng);
        Self { params, convs, head }
    }

    /// Loads replacement weights from `dir/proxy_backbone.json` when present.
    pub fn from_cache(dir: Option<&Path>) -> Result<Self, EvalError> {
        let mut net = Self::seeded();
        let Some(dir) = dir else { return Ok(net) };
        let path = dir.join(BACKBONE_FILE);
        if !path.exists() {
            return Ok(net);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| EvalError::Io {
            path: path.clone(),
            source: e,
        })?;
        let file: BackboneFile =
            serde_json::from_str(&text).map_err(|e| EvalError::Argument(format!("{}: {e}", path.display())))?;
        if file.params.names() != net.params.names()
            || file
                .params
                .tensors()
                .iter()
                .zip(net.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(EvalError::Argument(format!("{}: parameter layout mismatch", path.display())));
        }
        net.params = file.params;
        Ok(net)
    }

    /// Backbone from the `LOGOFORGE_CACHE` directory, or the seeded default.
    pub fn from_env() -> Result<Self, EvalError> {
        let dir = std::env::var_os("LOGOFORGE_CACHE").map(std::path::PathBuf::from);
        Self::from_cache(dir.as_deref())
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> (Var, Var) {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(tape, p, h);
            h = tape.relu(h);
        }
        let (n, c, hh, ww) = tape.value(h).dims4();
        let pooled = avg_pool_to_2x2(tape.value(h), n, c, hh, ww);
        let feats = tape.constant(pooled);
        let logits = self.head.forward(tape, p, feats);
        (feats, logits)
    }

    /// Activations `[M, 64]` and class probabilities `[M, 10]` of `images`.
    pub fn activations(&self, images: &[CanvasImage]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut feats = Vec::with_capacity(images.len());
        let mut probs = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let input = preprocess(chunk);
            let (f, l) = eval_with(&self.params, |tape, p| {
                let x = tape.constant(input);
                let (f, l) = self.forward(tape, p, x);
                (tape.value(f).clone(), tape.value(l).clone())
            });
            for i in 0..chunk.len() {
                feats.push(f.row(i).to_vec());
                probs.push(softmax(l.row(i)));
            }
        }
        (feats, probs)
    }
}

/// Grayscale to three identical channels, bilinear resize, scaled to [0, 1].
fn preprocess(images: &[CanvasImage]) -> Tensor {
    let s = BACKBONE_INPUT;
    let mut data = Vec::with_capacity(images.len() * 3 * s * s);
    for img in images {
        let small = img.resized(s, s);
        for _ in 0..3 {
            data.extend(small.pixels().iter().map(|v| (v / V_MAX).clamp(0.0, 1.0)));
        }
    }
    Tensor::from_vec(&[images.len(), 3, s, s], data)
}

/// Quadrant means of each channel, `[N, C·4]`.
fn avg_pool_to_2x2(t: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let (hh, hw) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * 4];
    let d = t.data();
    for i in 0..n {
        for ch in 0..c {
            let plane = &d[(i * c + ch) * h * w..(i * c + ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let q = (y / hh).min(1) * 2 + (x / hw).min(1);
                    out[(i * c + ch) * 4 + q] += plane[y * w + x] / (hh * hw) as f64;
                }
            }
        }
    }
    Tensor::from_vec(&[n, c * 4], out)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn gaussian_fit(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Square root of a symmetric positive semi-definite matrix; tiny negative
/// eigenvalues from rounding are clipped to zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two activation sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::Argument(format!(
            "covariance needs at least 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mu1, s1) = gaussian_fit(a);
    let (mu2, s2) = gaussian_fit(b);
    let r1 = sqrtm_psd(&s1);
    let cross = sqrtm_psd(&(&r1 * &s2 * &r1));
    let fid = (&mu1 - &mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(fid.max(0.0))
}

/// Exponentiated mean KL between per-image class distributions and their
/// marginal, averaged over up to 10 splits.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64, EvalError> {
    if probs.is_empty() {
        return Err(EvalError::Argument("no images".into()));
    }
    let splits = IS_SPLITS.min(probs.len());
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let part = &probs[s * probs.len() / splits..(s + 1) * probs.len() / splits];
        let k = part[0].len();
        let marginal: Vec<f64> = (0..k).map(|j| part.iter().map(|p| p[j]).sum::<f64>() / part.len() as f64).collect();
        let kl: f64 = part
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&marginal)
                    .filter(|(&pi, _)| pi > 0.0)
                    .map(|(&pi, &mi)| pi * (pi.ln() - mi.ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / part.len() as f64;
        scores.push(kl.exp());
    }
    Ok(scores.iter().sum::<f64>() / splits as f64)
}

/// Proxy-FID of `generated` against `reference` and proxy-IS of `generated`.
pub fn evaluate_fid_is(
    backbone: &ProxyBackbone,
    generated: &[CanvasImage],
    reference: &[CanvasImage],
) -> Result<(f64, f64), EvalError> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(EvalError::Argument(format!(
            "need at least 2 images per set, got {} and {}",
            generated.len(),
            reference.len()
        )));
    }
    let (fg, pg) = backbone.activations(generated);
    let (fr, _) = backbone.activations(reference);
    Ok((frechet_distance(&fg, &fr)?, inception_score(&pg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn sqrtm_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sqrtm_psd(&a);
        assert!((&r * &r - &a).abs().max() < 1e-10);
    }

    #[test]
    fn frechet_distance_matches_closed_form_for_diagonal_gaussians() {
        // Independent oracle: for diagonal covariances FID = |Δμ|² + Σ(σ1 - σ2)².
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<Vec<f64>> = (0..4000).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] * 2.0 + 1.0, r[1]]).collect();
        let (ma, ca) = gaussian_fit(&a);
        let (mb, cb) = gaussian_fit(&b);
        let oracle = (&ma - &mb).norm_squared()
            + (0..2).map(|i| (ca[(i, i)].sqrt() - cb[(i, i)].sqrt()).powi(2)).sum::<f64>();
        let fid = frechet_distance(&a, &b).unwrap();
        // The sample cross-covariance is not exactly diagonal; 1e-2 covers it.
        assert!((fid - oracle).abs() < 1e-2, "{fid} vs {oracle}");
    }

    #[test]
    fn identical_sets_and_noise_ordering() {
        let recs = generate_synthetic_corpus(
            &SynthConfig {
                records: 24,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let x: Vec<CanvasImage> = recs.iter().map(|r| r.logo_image.clone()).collect();
        let net = ProxyBackbone::seeded();
        let (fid, _) = evaluate_fid_is(&net, &x, &x).unwrap();
        assert!(fid < 1e-3, "{fid}");

        let noisy = |sigma: f64, seed: u64| -> Vec<CanvasImage> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, sigma).unwrap();
            x.iter()
                .map(|img| {
                    let mut o = img.clone();
                    for v in o.pixels_mut() {
                        *v = (*v + n.sample(&mut rng)).clamp(0.0, V_MAX);
                    }
                    o
                })
                .collect()
        };
        let weak = evaluate_fid_is(&net, &noisy(10.0, 1), &x).unwrap().0;
        let strong = evaluate_fid_is(&net, &noisy(80.0, 1), &x).unwrap().0;
        assert!(strong > weak && weak > 0.0, "{weak} {strong}");
    }

    #[test]
    fn repeated_image_scores_one() {
        let recs = generate_synthetic_corpus(
            &SynthConfig {
                records: 1,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let x = vec![recs[0].logo_image.clone(); 20];
        let (_, is) = evaluate_fid_is(&ProxyBackbone::seeded(), &x, &x).unwrap();
        assert!((is - 1.0).abs() < 1e-3, "{is}");
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let x = vec![CanvasImage::zeros(128, 128)];
        assert!(evaluate_fid_is(&ProxyBackbone::seeded(), &x, &x).is_err());
    }
}
