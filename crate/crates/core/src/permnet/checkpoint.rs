//! Checkpoint container: a JSON file holding the network weights as named
//! f64 tensors, the configs that shaped them, and training metadata.
//! Loading refuses version or shape mismatches.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layer_dims, layer_name, DenseLayer, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::permnet::train::EpochRecord;
use crate::sinkhorn::SinkhornConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Metadata about the training run that produced a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// `None` until a training run has produced a validation loss.
    pub best_val_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Content hash of the training dataset.
    pub dataset_fingerprint: String,
    /// Subjects the model has seen; evaluation refuses any overlap.
    pub train_subjects: Vec<String>,
    pub log: Vec<EpochRecord>,
}

impl TrainingMeta {
    /// Placeholder metadata for checkpoints that were never trained
    /// (freshly initialized or hand-built models).
    pub fn untrained() -> Self {
        TrainingMeta {
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: None,
            final_val_loss: None,
            dataset_fingerprint: String::new(),
            train_subjects: Vec::new(),
            log: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: NetworkConfig,
    sinkhorn: SinkhornConfig,
    weights: Vec<WeightTensor>,
    training_meta: TrainingMeta,
}

/// A trained (or at least initialized) model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    version: u32,
    network: Network,
    sinkhorn: SinkhornConfig,
    training_meta: TrainingMeta,
}

impl ModelCheckpoint {
    pub fn new(network: Network, sinkhorn: SinkhornConfig, training_meta: TrainingMeta) -> Self {
        ModelCheckpoint { version: CHECKPOINT_VERSION, network, sinkhorn, training_meta }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &NetworkConfig {
        self.network.config()
    }

    pub fn sinkhorn(&self) -> &SinkhornConfig {
        &self.sinkhorn
    }

    pub fn training_meta(&self) -> &TrainingMeta {
        &self.training_meta
    }

    pub fn to_json(&self) -> Result<String> {
        let weights = self
            .network
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(k, layer)| {
                let name = layer_name(self.network.config(), k);
                [
                    WeightTensor {
                        name: format!("{name}.weight"),
                        shape: vec![layer.in_dim, layer.out_dim],
                        data: layer.weights.clone(),
                    },
                    WeightTensor {
                        name: format!("{name}.bias"),
                        shape: vec![layer.out_dim],
                        data: layer.biases.clone(),
                    },
                ]
            })
            .collect();
        let file = CheckpointFile {
            version: self.version,
            config: self.network.config().clone(),
            sinkhorn: self.sinkhorn,
            weights,
            training_meta: self.training_meta.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.config.validate()?;
        let dims = layer_dims(&file.config);
        if file.weights.len() != 2 * dims.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors in file, config implies {}",
                file.weights.len(),
                2 * dims.len()
            )));
        }

        let mut layers = Vec::with_capacity(dims.len());
        for (k, (in_dim, out_dim)) in dims.iter().enumerate() {
            let name = layer_name(&file.config, k);
            let w = &file.weights[2 * k];
            let b = &file.weights[2 * k + 1];
            check_tensor(w, &format!("{name}.weight"), &[*in_dim, *out_dim])?;
            check_tensor(b, &format!("{name}.bias"), &[*out_dim])?;
            layers.push(DenseLayer {
                in_dim: *in_dim,
                out_dim: *out_dim,
                weights: w.data.clone(),
                biases: b.data.clone(),
            });
        }
        let network = Network::from_layers(file.config, layers)?;
        Ok(ModelCheckpoint {
            version: file.version,
            network,
            sinkhorn: file.sinkhorn,
            training_meta: file.training_meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let mut writer = BufWriter::new(File::create(path)?);
        std::io::Write::write_all(&mut writer, text.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let text = std::io::read_to_string(reader)?;
        Self::from_json(&text)
    }
}

fn check_tensor(t: &WeightTensor, name: &str, shape: &[usize]) -> Result<()> {
    if t.name != name {
        return Err(Error::Checkpoint(format!(
            "unexpected tensor '{}' where '{name}' belongs",
            t.name
        )));
    }
    if t.shape != shape {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    let expected: usize = shape.iter().product();
    if t.data.len() != expected {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' has {} values, shape implies {expected}",
            t.data.len()
        )));
    }
    if let Some(bad) = t.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' contains non-finite value {bad}"
        )));
    }
    Ok(())
}
