//! Adversarial training: one discriminator update on detached fakes, then
//! one encoder+generator update through the differentiable composition.

mod checkpoint;
mod run;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{compose_on_tape, overlap_on_tape, place_on_tape};
use crate::corpus::{CorpusError, EmbeddingTable, LogoRecord, Vocabulary};
use crate::encoding::glyph_batch;
use crate::evaluation::{derive_seed, EvalError};
use crate::generator::sample_noise;
use crate::layout::CANVAS_SIZE;
use crate::model::{LayoutModel, ModelConfig, ModelError};
use crate::nn::{collect_grads, Adam, Tape, Tensor, Var};
use crate::raster::{GlyphImage, Raster, V_MAX};

pub use checkpoint::Checkpoint;
pub use run::{train, EpochMetrics, TrainSummary, METRICS_HEADER};

const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);
const NOISE_STREAM: u64 = 0x006e_6f69_7365;
const PLAN_STREAM: u64 = 0x706c_616e;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} ({detail}); batch: {texts:?}")]
    NonFinite {
        step: u64,
        detail: String,
        texts: Vec<String>,
        dump: Option<PathBuf>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Hyperparameters, ablation switches and output cadence of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight λ of the overlap penalty (per canvas pixel).
    pub lambda_ol: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub no_seq_dis: bool,
    pub no_img_dis: bool,
    /// Save a checkpoint every this many epochs (the final epoch always saves).
    pub checkpoint_every: usize,
    /// Compute proxy-FID on the held-out split every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Number of samples in the per-checkpoint grid image; 0 disables.
    pub grid_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lambda_ol: 10.0,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            no_seq_dis: false,
            no_img_dis: false,
            checkpoint_every: 1,
            eval_every: 1,
            grid_samples: 8,
        }
    }
}

/// Ablation switch names accepted by [`TrainConfig::set_ablation`].
pub const ABLATIONS: [&str; 4] = ["no_text", "no_img", "no_seq_dis", "no_img_dis"];

impl TrainConfig {
    /// Small network and step size suited to CPU runs on the synthetic corpus.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig {
                d_v: 32,
                d_e: 16,
                d_c: 32,
                d_z: 16,
                visual_width: 4,
                finetune_visual: false,
                img_channels: [4, 8, 16, 16],
                ablation: Default::default(),
            },
            lr_g: 1e-3,
            lr_d: 1e-3,
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), TrainError> {
        self.model.check()?;
        if !(self.lambda_ol >= 0.0 && self.lambda_ol.is_finite()) {
            return Err(TrainError::Config(format!("lambda_ol must be finite and >= 0, got {}", self.lambda_ol)));
        }
        if self.no_seq_dis && self.no_img_dis {
            return Err(TrainError::Config("at least one discriminator must stay enabled".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("betas must lie in [0, 1)".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Turns on one ablation switch by name.
    pub fn set_ablation(&mut self, name: &str) -> Result<(), TrainError> {
        match name {
            "no_text" => self.model.ablation.no_text = true,
            "no_img" => self.model.ablation.no_img = true,
            "no_seq_dis" => self.no_seq_dis = true,
            "no_img_dis" => self.no_img_dis = true,
            other => {
                return Err(TrainError::Config(format!(
                    "unknown ablation '{other}' (expected one of {})",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Per-step losses. Disabled discriminators report zero loss and accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub loss_d_seq: f64,
    pub loss_d_img: f64,
    /// Soft overlap per canvas pixel, batch mean.
    pub overlap: f64,
    /// `λ · overlap`; exactly zero when λ = 0.
    pub weighted_overlap: f64,
    /// Non-saturating adversarial loss of the generator.
    pub loss_g_adv: f64,
    pub acc_seq: f64,
    pub acc_img: f64,
}

impl LossReport {
    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("loss_d_seq", self.loss_d_seq),
            ("loss_d_img", self.loss_d_img),
            ("overlap", self.overlap),
            ("weighted_overlap", self.weighted_overlap),
            ("loss_g_adv", self.loss_g_adv),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Model, optimizers and step counter. Visual features are cached per glyph
/// while the visual trunk is frozen.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: LayoutModel,
    /// One Adam per parameter group, in `PARAM_GROUPS` order.
    pub optimizers: Vec<Adam>,
    pub step: u64,
    visual_cache: HashMap<u64, Vec<f64>>,
}

const G_GROUPS: [usize; 3] = [0, 1, 2];
const SEQ: usize = 3;
const IMG: usize = 4;

impl TrainState {
    pub fn new(model: LayoutModel, cfg: &TrainConfig) -> Self {
        let optimizers = model
            .groups()
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let lr = if i >= SEQ { cfg.lr_d } else { cfg.lr_g };
                Adam::new(g, lr, cfg.beta1, cfg.beta2)
            })
            .collect();
        Self {
            model,
            optimizers,
            step: 0,
            visual_cache: HashMap::new(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        Ok(Self {
            model: ckpt.to_model()?,
            optimizers: ckpt.optimizers.clone(),
            step: ckpt.step,
            visual_cache: HashMap::new(),
        })
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            vocab: self.model.vocab().clone(),
            step: self.step,
            groups: self.model.groups().iter().map(|g| (*g).clone()).collect(),
            optimizers: self.optimizers.clone(),
        }
    }

    /// Frozen-trunk features `[B, d_v]` for a list of glyphs.
    fn cached_visual(&mut self, glyphs: &[&GlyphImage]) -> Result<Tensor, ModelError> {
        let keys: Vec<u64> = glyphs.iter().map(|g| glyph_key(&g.pixels)).collect();
        let mut missing: Vec<(u64, &GlyphImage)> = Vec::new();
        for (k, g) in keys.iter().zip(glyphs) {
            if !self.visual_cache.contains_key(k) && !missing.iter().any(|(m, _)| m == k) {
                missing.push((*k, g));
            }
        }
        if !missing.is_empty() {
            let feats = self.model.visual.encode_glyph_visual(&missing.iter().map(|(_, g)| (*g).clone()).collect::<Vec<_>>())?;
            for (i, (k, _)) in missing.iter().enumerate() {
                self.visual_cache.insert(*k, feats.sequence.row(i).to_vec());
            }
        }
        let d = self.model.config.d_v;
        let mut data = Vec::with_capacity(glyphs.len() * d);
        for k in &keys {
            data.extend_from_slice(&self.visual_cache[k]);
        }
        Ok(Tensor::from_vec(&[glyphs.len(), d], data))
    }
}

fn glyph_key(r: &Raster) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    r.dims().hash(&mut h);
    for v in r.pixels() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn mean_softplus(tape: &mut Tape, logits: Var, sign: f64) -> Var {
    let x = tape.scale(logits, sign);
    let sp = tape.softplus(x);
    tape.mean(sp)
}

fn share(values: &[f64], positive: bool) -> f64 {
    values.iter().filter(|&&v| (v > 0.0) == positive).count() as f64 / values.len() as f64
}

/// One discriminator update followed by one encoder+generator update.
/// All records in `batch` must have the same number of glyphs.
pub fn train_step(state: &mut TrainState, batch: &[&LogoRecord], cfg: &TrainConfig) -> Result<LossReport, TrainError> {
    let Some(first) = batch.first() else {
        return Err(TrainError::Config("empty batch".into()));
    };
    let n = first.len();
    if n == 0 || batch.iter().any(|r| r.len() != n) {
        return Err(TrainError::Config("batch records must share a nonzero glyph count".into()));
    }
    let b = batch.len();
    let step = state.step;
    let use_seq = !cfg.no_seq_dis;
    let use_img = !cfg.no_img_dis;
    let finetune = cfg.model.finetune_visual;
    let d_z = cfg.model.d_z;

    let ids: Vec<Vec<usize>> = (0..n)
        .map(|i| batch.iter().map(|r| state.model.vocab().id(&r.units[i])).collect())
        .collect();
    let glyphs_at: Vec<Vec<&GlyphImage>> = (0..n).map(|i| batch.iter().map(|r| &r.glyphs[i]).collect()).collect();
    let real_boxes: Vec<Tensor> = (0..n)
        .map(|i| Tensor::from_vec(&[b, 4], batch.iter().flat_map(|r| r.layout[i].to_array()).collect()))
        .collect();
    let real_logo = Tensor::from_vec(
        &[b, CANVAS.0 * CANVAS.1],
        batch.iter().flat_map(|r| r.logo_image.pixels().iter().copied()).collect(),
    );
    let noise_seed = derive_seed(cfg.seed ^ NOISE_STREAM, step);
    let z = Tensor::from_vec(&[b, d_z], sample_noise(b * d_z, noise_seed)?.z);
    let cached: Vec<Tensor> = if finetune {
        Vec::new()
    } else {
        glyphs_at.iter().map(|g| state.cached_visual(g)).collect::<Result<_, _>>()?
    };

    // Encoder and generator forward pass, kept on `tape` for the G update.
    let model = &state.model;
    let mut tape = Tape::new();
    let pv = model.visual.params.bind(&mut tape, finetune);
    let pc = model.condition.params.bind(&mut tape, true);
    let pg = model.generator.params.bind(&mut tape, true);
    let visual: Vec<Var> = if finetune {
        glyphs_at
            .iter()
            .map(|g| {
                let x = tape.constant(glyph_batch(g.iter().copied())?);
                Ok(model.visual.forward(&mut tape, &pv, x))
            })
            .collect::<Result<_, ModelError>>()?
    } else {
        cached.into_iter().map(|t| tape.constant(t)).collect()
    };
    let cond = model.condition.forward(&mut tape, &pc, &visual, &ids);
    let cond_n = *cond.last().expect("n >= 1");
    let zv = tape.constant(z);
    let fake = model.generator.forward(&mut tape, &pg, &cond, zv);
    let placed: Vec<Var> = fake
        .iter()
        .zip(&glyphs_at)
        .map(|(&f, g)| place_on_tape(&mut tape, f, g.iter().map(|g| g.pixels.clone()).collect(), CANVAS))
        .collect();
    let logo = compose_on_tape(&mut tape, &placed, V_MAX);
    let ol = overlap_on_tape(&mut tape, &placed, CANVAS, V_MAX);
    let ol = tape.mean(ol);
    let ol = tape.scale(ol, 1.0 / (CANVAS.0 * CANVAS.1) as f64);

    let mut report = LossReport {
        step,
        loss_d_seq: 0.0,
        loss_d_img: 0.0,
        overlap: tape.value(ol).data()[0],
        weighted_overlap: 0.0,
        loss_g_adv: 0.0,
        acc_seq: 0.0,
        acc_img: 0.0,
    };
    if cfg.lambda_ol > 0.0 {
        report.weighted_overlap = cfg.lambda_ol * report.overlap;
    }
    let texts = || batch.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
    let non_finite = |report: &LossReport, stage: &str| -> Result<(), TrainError> {
        match report.first_non_finite() {
            Some(field) => Err(TrainError::NonFinite {
                step,
                detail: format!("{field} during {stage}"),
                texts: texts(),
                dump: None,
            }),
            None => Ok(()),
        }
    };

    // Discriminator update on detached fakes.
    {
        let mut dt = Tape::new();
        let ps = model.seq_dis.params.bind(&mut dt, use_seq);
        let pi = model.img_dis.params.bind(&mut dt, use_img);
        let c = dt.constant(tape.value(cond_n).clone());
        let mut terms = Vec::new();
        let mut seq_logits = None;
        let mut img_logits = None;
        if use_seq {
            let real: Vec<Var> = real_boxes.iter().map(|t| dt.constant(t.clone())).collect();
            let fk: Vec<Var> = fake.iter().map(|&f| dt.constant(tape.value(f).clone())).collect();
            let lr = model.seq_dis.forward(&mut dt, &ps, &real, c);
            let lf = model.seq_dis.forward(&mut dt, &ps, &fk, c);
            let a = mean_softplus(&mut dt, lr, -1.0);
            let f = mean_softplus(&mut dt, lf, 1.0);
            let l = dt.add(a, f);
            report.loss_d_seq = dt.value(l).data()[0];
            seq_logits = Some((dt.value(lr).data().to_vec(), dt.value(lf).data().to_vec()));
            terms.push(l);
        }
        if use_img {
            let real = dt.constant(real_logo);
            let fk = dt.constant(tape.value(logo).clone());
            let lr = model.img_dis.forward(&mut dt, &pi, real, c);
            let lf = model.img_dis.forward(&mut dt, &pi, fk, c);
            let a = mean_softplus(&mut dt, lr, -1.0);
            let f = mean_softplus(&mut dt, lf, 1.0);
            let l = dt.add(a, f);
            report.loss_d_img = dt.value(l).data()[0];
            img_logits = Some((dt.value(lr).data().to_vec(), dt.value(lf).data().to_vec()));
            terms.push(l);
        }
        non_finite(&report, "discriminator update")?;
        let total = terms[1..].iter().fold(terms[0], |acc, &t| dt.add(acc, t));
        let mut grads = dt.backward(total);
        if let Some((r, f)) = seq_logits {
            report.acc_seq = 0.5 * (share(&r, true) + share(&f, false));
            let g = collect_grads(&mut grads, &ps);
            state.optimizers[SEQ].step(&mut state.model.seq_dis.params, &g);
        }
        if let Some((r, f)) = img_logits {
            report.acc_img = 0.5 * (share(&r, true) + share(&f, false));
            let g = collect_grads(&mut grads, &pi);
            state.optimizers[IMG].step(&mut state.model.img_dis.params, &g);
        }
    }

    // Encoder and generator update against the refreshed discriminators.
    let model = &state.model;
    let mut terms = Vec::new();
    if use_seq {
        let ps = model.seq_dis.params.bind(&mut tape, false);
        let l = model.seq_dis.forward(&mut tape, &ps, &fake, cond_n);
        terms.push(mean_softplus(&mut tape, l, -1.0));
    }
    if use_img {
        let pi = model.img_dis.params.bind(&mut tape, false);
        let l = model.img_dis.forward(&mut tape, &pi, logo, cond_n);
        terms.push(mean_softplus(&mut tape, l, -1.0));
    }
    let adv = terms[1..].iter().fold(terms[0], |acc, &t| tape.add(acc, t));
    report.loss_g_adv = tape.value(adv).data()[0];
    non_finite(&report, "generator update")?;
    let total = if cfg.lambda_ol > 0.0 {
        let w = tape.scale(ol, cfg.lambda_ol);
        tape.add(adv, w)
    } else {
        adv
    };
    let mut grads = tape.backward(total);
    let bounds = [&pv, &pc, &pg];
    for (&gi, bound) in G_GROUPS.iter().zip(bounds) {
        if gi == 0 && !finetune {
            continue;
        }
        let g = collect_grads(&mut grads, bound);
        let params = &mut state.model.groups_mut()[gi];
        state.optimizers[gi].step(params, &g);
    }
    state.step += 1;
    Ok(report)
}

/// Drives [`train_step`] over length-bucketed, per-epoch shuffled batches.
/// Global step `s` always maps to the same batch, so a resumed trainer
/// replays an uninterrupted run exactly.
pub struct Trainer {
    pub config: TrainConfig,
    records: Vec<LogoRecord>,
    buckets: Vec<Vec<usize>>,
    plan: Option<(u64, Vec<Vec<usize>>)>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, records: Vec<LogoRecord>, embeddings: Option<EmbeddingTable>) -> Result<Self, TrainError> {
        config.check()?;
        let vocab = Vocabulary::from_records(&records);
        let model = LayoutModel::new(config.model.clone(), vocab, embeddings, config.seed)?;
        let state = TrainState::new(model, &config);
        Self::with_state(config, records, state)
    }

    /// Continues from a checkpoint. `epochs` may extend the stored schedule.
    pub fn resume(ckpt: &Checkpoint, records: Vec<LogoRecord>, epochs: Option<usize>) -> Result<Self, TrainError> {
        let mut config = ckpt.config.clone();
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let state = TrainState::from_checkpoint(ckpt)?;
        Self::with_state(config, records, state)
    }

    fn with_state(config: TrainConfig, records: Vec<LogoRecord>, state: TrainState) -> Result<Self, TrainError> {
        config.check()?;
        if records.is_empty() {
            return Err(TrainError::Config("no training records".into()));
        }
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, r) in records.iter().enumerate() {
            by_len.entry(r.len()).or_default().push(i);
        }
        Ok(Self {
            config,
            records,
            buckets: by_len.into_values().collect(),
            plan: None,
            state,
        })
    }

    pub fn records(&self) -> &[LogoRecord] {
        &self.records
    }

    pub fn model(&self) -> &LayoutModel {
        &self.state.model
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.buckets
            .iter()
            .map(|b| b.len().div_ceil(self.config.batch_size) as u64)
            .sum()
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch()
    }

    fn epoch_plan(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed ^ PLAN_STREAM, epoch));
        let mut batches = Vec::new();
        for bucket in &self.buckets {
            let mut idx = bucket.clone();
            idx.shuffle(&mut rng);
            batches.extend(idx.chunks(self.config.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);
        batches
    }

    /// Runs the next global step.
    pub fn step(&mut self) -> Result<LossReport, TrainError> {
        let spe = self.steps_per_epoch();
        let step = self.state.step;
        let epoch = step / spe;
        if self.plan.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.plan = Some((epoch, self.epoch_plan(epoch)));
        }
        let plan = &self.plan.as_ref().expect("plan set above").1;
        let batch: Vec<&LogoRecord> = plan[(step % spe) as usize].iter().map(|&i| &self.records[i]).collect();
        train_step(&mut self.state, &batch, &self.config)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.checkpoint(&self.config)
    }
}

/// Generator outputs for `records` without gradient tracking, batched per
/// length bucket; used for sample grids.
pub fn compose_samples(model: &LayoutModel, records: &[LogoRecord], seed: u64) -> Result<Vec<Raster>, TrainError> {
    let layouts = crate::evaluation::sample_layouts(model, records, seed)?;
    records
        .iter()
        .zip(&layouts)
        .map(|(r, l)| {
            crate::composition::compose_layout(&r.glyph_rasters(), &l.params, CANVAS, V_MAX)
                .map_err(|e| TrainError::Config(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};

    pub(crate) fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::toy();
        cfg.model.d_v = 8;
        cfg.model.d_e = 8;
        cfg.model.d_c = 8;
        cfg.model.d_z = 4;
        cfg.model.visual_width = 2;
        cfg.model.img_channels = [2, 2, 4, 4];
        cfg.batch_size = 4;
        cfg.epochs = 1;
        cfg
    }

    fn corpus(n: usize) -> Vec<LogoRecord> {
        let cfg = SynthConfig {
            records: n,
            min_units: 2,
            max_units: 4,
            ..Default::default()
        };
        generate_synthetic_corpus(&cfg, 3).unwrap()
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().check().is_ok());
        let c = TrainConfig { lambda_ol: -1.0, ..Default::default() };
        assert!(c.check().is_err());
        let c = TrainConfig { no_seq_dis: true, no_img_dis: true, ..Default::default() };
        assert!(c.check().is_err());
        let mut c = TrainConfig::default();
        c.set_ablation("no_img").unwrap();
        assert!(c.model.ablation.no_img);
        assert!(c.set_ablation("no_everything").is_err());
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"lambda_ol": 0.0, "model": {"d_z": 8}}"#).unwrap();
        assert_eq!(c.lambda_ol, 0.0);
        assert_eq!(c.model.d_z, 8);
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn step_reports_finite_losses_and_moves_parameters() {
        let records = corpus(8);
        let cfg = tiny_config();
        let mut trainer = Trainer::new(cfg, records, None).unwrap();
        let before = trainer.model().generator.params.clone();
        let seq_before = trainer.model().seq_dis.params.clone();
        let visual_before = trainer.model().visual.params.clone();
        let r = trainer.step().unwrap();
        assert!(r.first_non_finite().is_none());
        assert!(r.loss_d_seq > 0.0 && r.loss_d_img > 0.0 && r.loss_g_adv > 0.0);
        assert!((r.weighted_overlap - 10.0 * r.overlap).abs() < 1e-12);
        assert_ne!(trainer.model().generator.params, before);
        assert_ne!(trainer.model().seq_dis.params, seq_before);
        // Frozen trunk.
        assert_eq!(trainer.model().visual.params, visual_before);
        assert_eq!(trainer.state.step, 1);
    }

    #[test]
    fn zero_lambda_reports_zero_weighted_overlap() {
        let mut cfg = tiny_config();
        cfg.lambda_ol = 0.0;
        let mut trainer = Trainer::new(cfg, corpus(4), None).unwrap();
        let r = trainer.step().unwrap();
        assert_eq!(r.weighted_overlap, 0.0);
    }

    #[test]
    fn disabled_discriminator_is_untouched() {
        let mut cfg = tiny_config();
        cfg.no_seq_dis = true;
        let mut trainer = Trainer::new(cfg, corpus(4), None).unwrap();
        let seq_before = trainer.model().seq_dis.params.clone();
        let r = trainer.step().unwrap();
        assert_eq!(r.loss_d_seq, 0.0);
        assert_eq!(trainer.model().seq_dis.params, seq_before);
    }

    #[test]
    fn mixed_lengths_are_rejected_by_train_step() {
        let records = corpus(12);
        let a = &records[0];
        let b = records.iter().find(|r| r.len() != a.len()).unwrap();
        let cfg = tiny_config();
        let model = LayoutModel::new(cfg.model.clone(), Vocabulary::from_records(&records), None, 0).unwrap();
        let mut state = TrainState::new(model, &cfg);
        assert!(matches!(train_step(&mut state, &[a, b], &cfg), Err(TrainError::Config(_))));
        assert!(matches!(train_step(&mut state, &[], &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn epoch_plan_buckets_by_length_and_covers_every_record() {
        let records = corpus(20);
        let trainer = Trainer::new(tiny_config(), records.clone(), None).unwrap();
        let plan = trainer.epoch_plan(0);
        assert_eq!(plan.len() as u64, trainer.steps_per_epoch());
        let mut seen: Vec<usize> = plan.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..records.len()).collect::<Vec<_>>());
        for batch in &plan {
            assert!(batch.len() <= 4);
            assert!(batch.iter().all(|&i| records[i].len() == records[batch[0]].len()));
        }
        assert_eq!(plan, trainer.epoch_plan(0));
        assert_ne!(plan, trainer.epoch_plan(1));
    }

    #[test]
    fn checkpoint_round_trips_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Trainer::new(tiny_config(), corpus(4), None).unwrap();
        trainer.step().unwrap();
        let ckpt = trainer.checkpoint();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert!(!dir.path().join("a.ckpt.partial").exists());
        let model = back.to_model().unwrap();
        assert_eq!(model.groups(), trainer.model().groups());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let trainer = Trainer::new(tiny_config(), corpus(4), None).unwrap();
        let path = dir.path().join("a.ckpt");
        trainer.checkpoint().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::Checkpoint(_))));
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::Checkpoint(_))));
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(TrainError::Io { .. })));
    }
}
