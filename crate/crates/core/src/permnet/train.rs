//! Training loop: Adam over mini-batches of shuffled frames, validation
//! after every epoch, learning-rate halving whenever validation loss rises,
//! and best-validation checkpoint selection. Fully deterministic for a
//! fixed seed regardless of thread count.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{ModelCheckpoint, TrainingMeta};
use super::{flatten_frame, loss_and_gradients_indexed, Gradients, LayerGrad, Network, NetworkConfig, LOG_CLAMP};
use crate::error::{Error, Result};
use crate::preprocess::normalize_frame;
use crate::sinkhorn::{sinkhorn_forward, SinkhornConfig};
use crate::synthdata::{augment_occlude, augment_shuffle, SequenceFile};
use crate::types::{MarkerFrame, Permutation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    /// Multiplier applied to the learning rate after any epoch whose
    /// validation loss exceeded the previous epoch's. 1.0 disables decay.
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr_initial: 5e-5,
            lr_decay_factor: 0.5,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_decay_factor must lie in (0,1], got {}",
                self.lr_decay_factor
            )));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0,1), got {v}"
                )));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        Ok(())
    }
}

/// One supervised example: a shuffled (and possibly occluded) normalized
/// frame plus the permutation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub frame: MarkerFrame,
    pub target: Permutation,
}

/// A set of training examples together with the subjects they came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<TrainItem>,
    subjects: BTreeSet<String>,
}

impl Dataset {
    pub fn new(items: Vec<TrainItem>, subjects: impl IntoIterator<Item = String>) -> Self {
        Dataset { items, subjects: subjects.into_iter().collect() }
    }

    pub fn items(&self) -> &[TrainItem] {
        &self.items
    }

    pub fn subjects(&self) -> &BTreeSet<String> {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate_for(&self, n_markers: usize) -> Result<()> {
        for (k, item) in self.items.iter().enumerate() {
            if item.frame.n_markers() != n_markers || item.target.len() != n_markers {
                return Err(Error::Dimension(format!(
                    "dataset item {k}: frame has {} markers, target {}, expected {n_markers}",
                    item.frame.n_markers(),
                    item.target.len()
                )));
            }
        }
        Ok(())
    }

    /// The full supervised-pair pipeline: every frame of every labelled
    /// sequence is normalized, copied under `shuffles_per_frame` random
    /// permutations, and each copy gets a uniform 0..=max_occlusions
    /// placeholder occlusions. With `max_occlusions` 0 the same shuffles
    /// come out un-occluded, so clean and occluded builds of one corpus
    /// differ only in the occlusion step.
    pub fn from_sequences(
        sequences: &[SequenceFile],
        shuffles_per_frame: usize,
        max_occlusions: usize,
        seed: u64,
    ) -> Result<Dataset> {
        if shuffles_per_frame == 0 {
            return Err(Error::InvalidArgument("shuffles_per_frame must be at least 1".into()));
        }
        let mut items = Vec::new();
        let mut subjects = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seq in sequences {
            let labels = Permutation::from_mapping(seq.labels.clone().ok_or_else(|| {
                Error::Data(format!(
                    "sequence for subject {} has no ground-truth labels",
                    seq.header.subject
                ))
            })?)?;
            subjects.insert(seq.header.subject.clone());
            let normalized: Vec<MarkerFrame> = seq
                .frames
                .iter()
                .map(|f| Ok(normalize_frame(f)?.0))
                .collect::<Result<_>>()?;
            let shuffle_seed = rng.gen::<u64>();
            let occlude_seed = rng.gen::<u64>();
            let mut pairs = augment_shuffle(&normalized, shuffles_per_frame, shuffle_seed);
            if max_occlusions > 0 {
                let mut frames: Vec<MarkerFrame> =
                    pairs.iter().map(|(f, _)| f.clone()).collect();
                augment_occlude(&mut frames, max_occlusions, occlude_seed);
                for (pair, frame) in pairs.iter_mut().zip(frames) {
                    pair.0 = frame;
                }
            }
            for (frame, p) in pairs {
                items.push(TrainItem { frame, target: p.compose(&labels)? });
            }
        }
        Ok(Dataset { items, subjects })
    }

    /// Content hash over every frame, target, and subject, stable across
    /// runs and platforms (little-endian f64 bits).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.items.len() as u64).to_le_bytes());
        for item in &self.items {
            hasher.update((item.frame.frame_index as u64).to_le_bytes());
            hasher.update((item.frame.n_markers() as u64).to_le_bytes());
            for p in &item.frame.positions {
                for v in p {
                    hasher.update(v.to_bits().to_le_bytes());
                }
            }
            for &occ in &item.frame.occluded {
                hasher.update([occ as u8]);
            }
            for &m in item.target.mapping() {
                hasher.update((m as u64).to_le_bytes());
            }
        }
        hasher.update((self.subjects.len() as u64).to_le_bytes());
        for s in &self.subjects {
            hasher.update((s.len() as u64).to_le_bytes());
            hasher.update(s.as_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

struct AdamState {
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
    t: i32,
}

impl AdamState {
    fn new(net: &Network) -> Self {
        let zeros = || Gradients::zeros_like(net).layers;
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.m[li];
            let v = &mut self.v[li];
            update_params(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, lr, b1, b2, bc1, bc2, cfg.adam_eps);
            update_params(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases, lr, b1, b2, bc1, bc2, cfg.adam_eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_params(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Mean column cross-entropy over a dataset, forward passes only.
/// Items are evaluated in parallel but summed in index order.
pub fn validation_loss(net: &Network, data: &Dataset, sk: &SinkhornConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let per_item: Vec<Result<f64>> = data
        .items
        .par_iter()
        .map(|item| {
            let raw = net.infer(&flatten_frame(&item.frame))?;
            let (d, _) = sinkhorn_forward(&raw, sk)?;
            let mut loss = 0.0;
            for j in 0..net.config.n_markers {
                loss -= d[(item.target[j], j)].max(LOG_CLAMP).ln();
            }
            Ok(loss)
        })
        .collect();
    let mut total = 0.0;
    for item in per_item {
        total += item?;
    }
    Ok(total / (data.len() * net.config.n_markers) as f64)
}

/// Trains a fresh network and returns the checkpoint with the weights of
/// the epoch that scored the lowest validation loss.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    sk: &SinkhornConfig,
) -> Result<ModelCheckpoint> {
    net_cfg.validate()?;
    cfg.validate()?;
    sk.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    train_set.validate_for(net_cfg.n_markers)?;
    val_set.validate_for(net_cfg.n_markers)?;
    let overlap: Vec<&String> =
        train_set.subjects.intersection(&val_set.subjects).collect();
    if !overlap.is_empty() {
        return Err(Error::Data(format!(
            "subjects {overlap:?} appear in both the training and validation sets"
        )));
    }

    let mut net = Network::init(net_cfg)?;
    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.lr_initial;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Network, usize)> = None;
    let mut prev_val: Option<f64> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (stats, grads) = loss_and_gradients_indexed(train_set.items(), batch, &net, sk)?;
            if !stats.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {batch_idx}"
                )));
            }
            adam.step(&mut net, &grads, lr, cfg);
            loss_sum += stats.loss;
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches as f64;
        let val_loss = validation_loss(&net, val_set, sk)?;
        log.push(EpochRecord { epoch, train_loss, val_loss, learning_rate: lr });

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, net.clone(), epoch));
        }
        if let Some(prev) = prev_val {
            if val_loss > prev {
                lr *= cfg.lr_decay_factor;
            }
        }
        prev_val = Some(val_loss);
    }

    let (best_val_loss, best_net, best_epoch) = best.expect("epochs >= 1");
    let final_val_loss = log.last().expect("epochs >= 1").val_loss;
    let meta = TrainingMeta {
        epochs_run: cfg.epochs,
        best_epoch,
        best_val_loss: Some(best_val_loss),
        final_val_loss: Some(final_val_loss),
        dataset_fingerprint: train_set.fingerprint(),
        train_subjects: train_set.subjects.iter().cloned().collect(),
        log,
    };
    Ok(ModelCheckpoint::new(best_net, *sk, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::apply_permutation;
    use rand::Rng;

    /// Shuffled copies of one fixed marker cloud: the simplest learnable
    /// labelling task.
    fn toy_sets(n: usize, n_train: usize, n_val: usize) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let base = MarkerFrame::fully_visible(
            (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
            0,
        );
        let mut make = |count: usize, subject: &str| {
            let items = (0..count)
                .map(|_| {
                    let p = Permutation::random(n, &mut rng);
                    TrainItem { frame: apply_permutation(&base, &p).unwrap(), target: p }
                })
                .collect();
            Dataset::new(items, [subject.to_string()])
        };
        (make(n_train, "toy-a"), make(n_val, "toy-b"))
    }

    #[test]
    fn toy_training_reduces_loss_tenfold() {
        let (train_set, val_set) = toy_sets(4, 240, 40);
        let net_cfg = NetworkConfig { hidden_width: 32, ..NetworkConfig::new(4, 1) };
        let cfg = TrainConfig {
            lr_initial: 5e-3,
            lr_decay_factor: 0.7,
            epochs: 40,
            seed: 9,
            ..TrainConfig::default()
        };
        let ckpt =
            train(&train_set, &val_set, &net_cfg, &cfg, &SinkhornConfig::default()).unwrap();
        let log = &ckpt.training_meta().log;
        let initial = log.first().unwrap().train_loss;
        let final_loss = log.last().unwrap().train_loss;
        assert!(
            final_loss < 0.1 * initial,
            "loss went {initial} -> {final_loss}, wanted a 10x reduction"
        );
        assert_eq!(ckpt.training_meta().epochs_run, 40);
        assert_eq!(ckpt.training_meta().dataset_fingerprint, train_set.fingerprint());
    }

    #[test]
    fn lr_schedule_halves_exactly_on_validation_increase() {
        let (train_set, val_set) = toy_sets(5, 64, 16);
        let net_cfg = NetworkConfig { hidden_width: 16, ..NetworkConfig::new(5, 2) };
        let cfg = TrainConfig { lr_initial: 3e-3, epochs: 12, seed: 3, ..TrainConfig::default() };
        let ckpt =
            train(&train_set, &val_set, &net_cfg, &cfg, &SinkhornConfig::default()).unwrap();
        let log = &ckpt.training_meta().log;
        assert_eq!(log[0].learning_rate, cfg.lr_initial);
        // Reconstruct the schedule from the validation losses and compare.
        let mut expected_lr = cfg.lr_initial;
        for (k, rec) in log.iter().enumerate() {
            assert_eq!(rec.learning_rate, expected_lr, "epoch {k}");
            if k >= 1 && rec.val_loss > log[k - 1].val_loss {
                expected_lr *= cfg.lr_decay_factor;
            }
        }
        // Best checkpoint is the argmin of validation loss.
        let best = log
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.val_loss.partial_cmp(&b.val_loss).unwrap())
            .unwrap();
        assert_eq!(ckpt.training_meta().best_epoch, best.0);
        assert_eq!(ckpt.training_meta().best_val_loss, Some(best.1.val_loss));
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, val_set) = toy_sets(4, 48, 16);
        let net_cfg = NetworkConfig { hidden_width: 12, ..NetworkConfig::new(4, 5) };
        let cfg = TrainConfig { lr_initial: 1e-3, epochs: 5, seed: 11, ..TrainConfig::default() };
        let a = train(&train_set, &val_set, &net_cfg, &cfg, &SinkhornConfig::default()).unwrap();
        let b = train(&train_set, &val_set, &net_cfg, &cfg, &SinkhornConfig::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn overlapping_subjects_are_refused() {
        let (mut train_set, val_set) = toy_sets(4, 8, 4);
        train_set.subjects.insert("toy-b".into());
        let net_cfg = NetworkConfig { hidden_width: 8, ..NetworkConfig::new(4, 0) };
        let err = train(
            &train_set,
            &val_set,
            &net_cfg,
            &TrainConfig::default(),
            &SinkhornConfig::default(),
        );
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn empty_sets_are_refused() {
        let (train_set, _) = toy_sets(4, 8, 4);
        let empty = Dataset::new(Vec::new(), ["x".to_string()]);
        let net_cfg = NetworkConfig { hidden_width: 8, ..NetworkConfig::new(4, 0) };
        assert!(train(
            &train_set,
            &empty,
            &net_cfg,
            &TrainConfig::default(),
            &SinkhornConfig::default()
        )
        .is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let (a, _) = toy_sets(4, 8, 4);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.items[0].frame.positions[0][0] += 1e-9;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
