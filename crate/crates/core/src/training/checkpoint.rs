//! Single-file checkpoints: an 8-byte magic, a little-endian u64 header
//! length, a JSON header (config, vocabulary, step, tensor names and shapes,
//! optimizer scalars) and then every tensor as raw little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::model::{LayoutModel, ModelError, PARAM_GROUPS};
use crate::nn::{Adam, ParamSet, Tensor};

use super::{TrainConfig, TrainError};

const MAGIC: &[u8; 8] = b"LFCKPT01";

/// Everything needed to continue training or to run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub step: u64,
    /// Parameter groups in [`PARAM_GROUPS`] order.
    pub groups: Vec<ParamSet>,
    /// One optimizer per group, same order.
    pub optimizers: Vec<Adam>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    params: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab: Vocabulary,
    step: u64,
    groups: Vec<GroupEntry>,
    optimizers: Vec<OptimizerEntry>,
}

fn format_err(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Rebuilds the model from the stored configuration and parameters.
    pub fn to_model(&self) -> Result<LayoutModel, TrainError> {
        let mut model = LayoutModel::new(self.config.model.clone(), self.vocab.clone(), None, self.config.seed)?;
        load_groups(&mut model, &self.groups)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            groups: PARAM_GROUPS
                .iter()
                .zip(&self.groups)
                .map(|(name, g)| GroupEntry {
                    name: name.to_string(),
                    params: g
                        .names()
                        .iter()
                        .zip(g.tensors())
                        .map(|(n, t)| TensorEntry {
                            name: n.clone(),
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
            optimizers: self
                .optimizers
                .iter()
                .map(|o| OptimizerEntry {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    step: o.steps_taken(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        let mut push = |t: &Tensor| {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        for g in &self.groups {
            g.tensors().iter().for_each(&mut push);
        }
        for o in &self.optimizers {
            let (m, v) = o.moments();
            m.iter().chain(v).for_each(&mut push);
        }
        // Write beside the target and rename so an interrupted save never
        // leaves a truncated checkpoint.
        let tmp = path.with_extension("ckpt.partial");
        let io = |e| TrainError::io(path, e);
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&buf).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            TrainError::Checkpoint(m) => TrainError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_err("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| format_err("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format_err(e.to_string()))?;
        let mut data = bytes[16 + hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if !bytes[16 + hlen..].len().is_multiple_of(8) {
            return Err(format_err("data section is not a whole number of f64 values"));
        }
        let mut take = |shape: &[usize]| -> Result<Tensor, TrainError> {
            let n: usize = shape.iter().product();
            let v: Vec<f64> = data.by_ref().take(n).collect();
            if v.len() != n {
                return Err(format_err("truncated tensor data"));
            }
            Ok(Tensor::from_vec(shape, v))
        };
        if header.groups.len() != PARAM_GROUPS.len() || header.optimizers.len() != PARAM_GROUPS.len() {
            return Err(format_err("unexpected number of parameter groups"));
        }
        let mut groups = Vec::with_capacity(header.groups.len());
        for g in &header.groups {
            let mut ps = ParamSet::new();
            for t in &g.params {
                ps.add(t.name.clone(), take(&t.shape)?);
            }
            groups.push(ps);
        }
        let mut optimizers = Vec::with_capacity(groups.len());
        for (o, g) in header.optimizers.iter().zip(&header.groups) {
            let m = g.params.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>, _>>()?;
            let v = g.params.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>, _>>()?;
            optimizers.push(Adam::from_state(o.lr, o.beta1, o.beta2, o.eps, o.step, m, v));
        }
        if data.next().is_some() {
            return Err(format_err("trailing data"));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            step: header.step,
            groups,
            optimizers,
        })
    }
}

/// Copies saved parameter groups into `model`, checking names and shapes.
pub(crate) fn load_groups(model: &mut LayoutModel, groups: &[ParamSet]) -> Result<(), TrainError> {
    for (target, source) in model.groups_mut().into_iter().zip(groups) {
        if target.names() != source.names() {
            return Err(format_err("parameter names do not match the configured model"));
        }
        for (i, (t, s)) in target.tensors().iter().zip(source.tensors()).enumerate() {
            if t.shape() != s.shape() {
                return Err(TrainError::Model(ModelError::Shape {
                    name: source.names()[i].clone(),
                    expected: t.shape().to_vec(),
                    found: s.shape().to_vec(),
                }));
            }
        }
        *target = source.clone();
    }
    Ok(())
}
