//! Checkpoints: a full training position in one structured-text file.
//!
//! The file is a flat `key = value` document holding the format version,
//! the complete config echo, the stage tag and epoch, every parameter array
//! with its shape, and the optimizer state. All floats use a
//! 17-significant-digit form, so `load(save(c))` reproduces `c` bit for bit.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kv::{fmt_f64_exact, KvMap, KvReader, KvWriter};
use crate::model::{Layer, ModelParams};
use crate::trainer::log::Stage;
use crate::trainer::optim::{LayerMoments, OptimizerKind, OptimizerState};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_VERSION: u64 = 1;

/// A resumable training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u64,
    pub config: TrainConfig,
    pub stage: Stage,
    /// Completed epochs within `stage` (a `stage1` tag with `epoch` equal to
    /// `stage1_epochs` marks the stage boundary).
    pub epoch: usize,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
}

fn fmt_array(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_f64_exact(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("checkpoint: missing key `{key}`")))
}

fn read_array(r: &mut KvReader<'_>, key: &str, len: usize) -> Result<Vec<f64>> {
    let values = need(r.get_list_f64(key)?, key)?;
    if values.len() != len {
        return Err(Error::config(format!(
            "checkpoint: `{key}` has {} values, expected {len}",
            values.len()
        )));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn render(&self) -> String {
        let mut w = KvWriter::new();
        w.comment("training checkpoint");
        w.set("version", self.version);
        w.set("stage", self.stage.name());
        w.set("epoch", self.epoch);
        w.blank();
        self.config.write_kv(&mut w, "config.");
        w.blank();
        w.set("layers", self.params.layers().len());
        for (k, layer) in self.params.layers().iter().enumerate() {
            w.set(&format!("layer{k}.w.rows"), layer.w.shape()[0]);
            w.set(&format!("layer{k}.w.cols"), layer.w.shape()[1]);
            w.set(&format!("layer{k}.w.data"), fmt_array(layer.w.values()));
            w.set(&format!("layer{k}.b.data"), fmt_array(layer.b.values()));
        }
        w.blank();
        w.set("optim.kind", self.optimizer.kind.name());
        w.set("optim.step", self.optimizer.step);
        for (k, m) in self.optimizer.moments.iter().enumerate() {
            w.set(&format!("optim.layer{k}.m_w"), fmt_array(m.m_w.values()));
            w.set(&format!("optim.layer{k}.v_w"), fmt_array(m.v_w.values()));
            w.set(&format!("optim.layer{k}.m_b"), fmt_array(m.m_b.values()));
            w.set(&format!("optim.layer{k}.v_b"), fmt_array(m.v_b.values()));
        }
        w.render()
    }

    pub fn parse(label: &str, text: &str) -> Result<Self> {
        let map = KvMap::parse(label, text)?;
        let mut r = map.reader();

        let version = need(r.get_u64("version")?, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint: unsupported version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let stage = Stage::parse(need(r.get_str("stage"), "stage")?)?;
        let epoch = need(r.get_usize("epoch")?, "epoch")?;
        let config = TrainConfig::from_kv(&mut r, "config.", None)?;

        let n_layers = need(r.get_usize("layers")?, "layers")?;
        if n_layers == 0 {
            return Err(Error::config("checkpoint: zero layers".to_string()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let rows = need(
                r.get_usize(&format!("layer{k}.w.rows"))?,
                &format!("layer{k}.w.rows"),
            )?;
            let cols = need(
                r.get_usize(&format!("layer{k}.w.cols"))?,
                &format!("layer{k}.w.cols"),
            )?;
            let w_data = read_array(&mut r, &format!("layer{k}.w.data"), rows * cols)?;
            let b_data = read_array(&mut r, &format!("layer{k}.b.data"), cols)?;
            layers.push(Layer {
                w: Tensor::matrix(rows, cols, w_data)?,
                b: Tensor::vector(b_data),
            });
        }
        let params = ModelParams::from_layers(layers)?;

        let kind = OptimizerKind::parse(need(r.get_str("optim.kind"), "optim.kind")?)?;
        let step = need(r.get_u64("optim.step")?, "optim.step")?;
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => {
                let mut moments = Vec::with_capacity(params.layers().len());
                for (k, layer) in params.layers().iter().enumerate() {
                    let (rows, cols) = (layer.w.shape()[0], layer.w.shape()[1]);
                    let m_w = read_array(&mut r, &format!("optim.layer{k}.m_w"), rows * cols)?;
                    let v_w = read_array(&mut r, &format!("optim.layer{k}.v_w"), rows * cols)?;
                    let m_b = read_array(&mut r, &format!("optim.layer{k}.m_b"), cols)?;
                    let v_b = read_array(&mut r, &format!("optim.layer{k}.v_b"), cols)?;
                    moments.push(LayerMoments {
                        m_w: Tensor::matrix(rows, cols, m_w)?,
                        v_w: Tensor::matrix(rows, cols, v_w)?,
                        m_b: Tensor::vector(m_b),
                        v_b: Tensor::vector(v_b),
                    });
                }
                moments
            }
        };
        r.finish()?;

        Ok(Checkpoint {
            version,
            config,
            stage,
            epoch,
            params,
            optimizer: OptimizerState {
                kind,
                step,
                moments,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Checkpoint::parse(&path.display().to_string(), &text)
    }
}
