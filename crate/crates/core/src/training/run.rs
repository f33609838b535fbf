//! The epoch loop with its on-disk outputs: `config.json`, `metrics.csv`,
//! `checkpoints/` and `samples/`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::{EmbeddingTable, LogoRecord};
use crate::evaluation::{evaluate_layouts, sample_layouts, ProxyBackbone};
use crate::raster::{Raster, V_MAX};

use super::{compose_samples, Checkpoint, LossReport, TrainConfig, TrainError, Trainer};

pub const METRICS_HEADER: &str = "epoch,step,loss_d_seq,loss_d_img,loss_overlap,loss_g_adv,fid";

/// Epoch means of the step losses, plus held-out proxy-FID when computed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub loss_d_seq: f64,
    pub loss_d_img: f64,
    pub loss_overlap: f64,
    pub loss_g_adv: f64,
    pub fid: Option<f64>,
}

impl EpochMetrics {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.loss_d_seq,
            self.loss_d_img,
            self.loss_overlap,
            self.loss_g_adv,
            self.fid.map(|f| f.to_string()).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: Vec<EpochMetrics>,
    pub last_checkpoint: PathBuf,
    pub final_checkpoint: Checkpoint,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    step: u64,
    detail: &'a str,
    texts: &'a [String],
    last_report: Option<&'a LossReport>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), TrainError> {
    std::fs::write(path, contents).map_err(|e| TrainError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), TrainError> {
    std::fs::create_dir_all(path).map_err(|e| TrainError::io(path, e))
}

/// Trains on `train_records`, or continues from `resume`, writing all
/// outputs under `out_dir`. `test_records` feed the per-epoch proxy-FID and
/// the sample grids.
pub fn train(
    train_records: Vec<LogoRecord>,
    test_records: &[LogoRecord],
    config: TrainConfig,
    embeddings: Option<EmbeddingTable>,
    out_dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainSummary, TrainError> {
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(ckpt, train_records, Some(config.epochs))?,
        None => Trainer::new(config, train_records, embeddings)?,
    };
    let config = trainer.config.clone();
    let ckpt_dir = out_dir.join("checkpoints");
    let sample_dir = out_dir.join("samples");
    create_dir(&ckpt_dir)?;
    create_dir(&sample_dir)?;
    let config_json = serde_json::to_string_pretty(&config).expect("config serializes");
    write_file(&out_dir.join("config.json"), config_json.as_bytes())?;

    let metrics_path = out_dir.join("metrics.csv");
    let fresh = resume.is_none() || !metrics_path.exists();
    let mut metrics_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&metrics_path)
        .map_err(|e| TrainError::io(&metrics_path, e))?;
    if fresh {
        writeln!(metrics_file, "{METRICS_HEADER}").map_err(|e| TrainError::io(&metrics_path, e))?;
    }

    let backbone = if config.eval_every > 0 && test_records.len() >= 2 {
        Some(ProxyBackbone::from_env()?)
    } else {
        None
    };
    let spe = trainer.steps_per_epoch();
    let total = trainer.total_steps();
    let mut epochs = Vec::new();
    let last_checkpoint = ckpt_dir.join("last.ckpt");
    let mut last_report: Option<LossReport> = None;
    let mut sums = [0.0; 4];
    let mut count = 0usize;

    while trainer.state.step < total {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(TrainError::NonFinite { step, detail, texts, .. }) => {
                let dump = out_dir.join(format!("nonfinite_step_{step}.json"));
                let body = NonFiniteDump {
                    step,
                    detail: &detail,
                    texts: &texts,
                    last_report: last_report.as_ref(),
                };
                write_file(&dump, serde_json::to_string_pretty(&body).expect("dump serializes").as_bytes())?;
                return Err(TrainError::NonFinite {
                    step,
                    detail,
                    texts,
                    dump: Some(dump),
                });
            }
            Err(e) => return Err(e),
        };
        for (s, v) in sums.iter_mut().zip([
            report.loss_d_seq,
            report.loss_d_img,
            report.overlap,
            report.loss_g_adv,
        ]) {
            *s += v;
        }
        count += 1;
        last_report = Some(report);
        if trainer.state.step % spe != 0 {
            continue;
        }

        let epoch = (trainer.state.step / spe) as usize;
        let fid = match &backbone {
            Some(bb) if epoch.is_multiple_of(config.eval_every) || trainer.state.step == total => {
                let layouts = sample_layouts(trainer.model(), test_records, config.seed)?;
                Some(evaluate_layouts("model", bb, test_records, &layouts)?.fid)
            }
            _ => None,
        };
        let n = count.max(1) as f64;
        let m = EpochMetrics {
            epoch,
            step: trainer.state.step,
            loss_d_seq: sums[0] / n,
            loss_d_img: sums[1] / n,
            loss_overlap: sums[2] / n,
            loss_g_adv: sums[3] / n,
            fid,
        };
        log::info!(
            "epoch {epoch}/{}: d_seq {:.4} d_img {:.4} overlap {:.5} g_adv {:.4}{}",
            config.epochs,
            m.loss_d_seq,
            m.loss_d_img,
            m.loss_overlap,
            m.loss_g_adv,
            m.fid.map(|f| format!(" fid {f:.3}")).unwrap_or_default()
        );
        writeln!(metrics_file, "{}", m.csv_row()).map_err(|e| TrainError::io(&metrics_path, e))?;
        epochs.push(m);
        sums = [0.0; 4];
        count = 0;

        if epoch.is_multiple_of(config.checkpoint_every) || trainer.state.step == total {
            let ckpt = trainer.checkpoint();
            ckpt.save(&ckpt_dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            ckpt.save(&last_checkpoint)?;
            if config.grid_samples > 0 && !test_records.is_empty() {
                let take = config.grid_samples.min(test_records.len());
                let tiles = compose_samples(trainer.model(), &test_records[..take], config.seed)?;
                let grid = Raster::grid(&tiles, 4, V_MAX);
                let path = sample_dir.join(format!("epoch_{epoch:03}.png"));
                grid.save_png(&path, V_MAX)
                    .map_err(|e| TrainError::io(&path, std::io::Error::other(e)))?;
            }
        }
    }
    let final_checkpoint = trainer.checkpoint();
    if !last_checkpoint.exists() {
        final_checkpoint.save(&last_checkpoint)?;
    }
    Ok(TrainSummary {
        epochs,
        last_checkpoint,
        final_checkpoint,
    })
}
