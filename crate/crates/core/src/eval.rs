//! Evaluation: occlusion-sweep frame accuracy, trajectory relabelling
//! sweeps, accuracy-precision curves, and a JSON report that embeds enough
//! provenance to reproduce itself.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permnet::{label_frame, ModelCheckpoint, NetworkConfig};
use crate::preprocess::normalize_frame;
use crate::sinkhorn::{dsm_residual, SinkhornConfig};
use crate::synthdata::SequenceFile;
use crate::trajlabel::{
    attach_frame_labels, relabel_trajectory, segment_trajectories, threshold_filter,
    ScoringConfig,
};
use crate::types::{apply_permutation, LabelledFrameResult, MarkerFrame, Permutation, SquareMatrix};

/// Anything that can label a normalized frame. Implementations must be
/// thread-safe; evaluation fans out across frames and sequences.
pub trait FrameLabeller: Sync {
    fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult>;
    fn n_markers(&self) -> usize;
    /// Subjects whose recordings trained this labeller. Evaluation refuses
    /// any overlap with the data under test.
    fn train_subjects(&self) -> Vec<String> {
        Vec::new()
    }
}

impl FrameLabeller for ModelCheckpoint {
    fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult> {
        label_frame(frame, self)
    }

    fn n_markers(&self) -> usize {
        self.config().n_markers
    }

    fn train_subjects(&self) -> Vec<String> {
        self.training_meta().train_subjects.clone()
    }
}

/// One evaluation frame: raw (unnormalized) positions plus the ground-truth
/// labelling of its tracks.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub frame: MarkerFrame,
    pub target: Permutation,
    pub subject: String,
}

/// Turns labelled sequences into shuffled evaluation frames: each frame is
/// re-ordered by a fresh random permutation and paired with the composed
/// ground truth.
pub fn eval_items_from_sequences(sequences: &[SequenceFile], seed: u64) -> Result<Vec<EvalItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for seq in sequences {
        let labels = sequence_labels(seq)?;
        for frame in &seq.frames {
            let p = Permutation::random(frame.n_markers(), &mut rng);
            let shuffled = apply_permutation(frame, &p)?;
            let target = p.compose(&labels)?;
            items.push(EvalItem { frame: shuffled, target, subject: seq.header.subject.clone() });
        }
    }
    Ok(items)
}

/// Re-orders a sequence's tracks by one random permutation, keeping the
/// ground-truth labels consistent. Models the arbitrary track order a
/// tracker would deliver.
pub fn shuffle_sequence_tracks(seq: &SequenceFile, seed: u64) -> Result<SequenceFile> {
    let labels = sequence_labels(seq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Permutation::random(seq.header.n_markers, &mut rng);
    let composed = p.compose(&labels)?;
    Ok(SequenceFile {
        header: seq.header.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| apply_permutation(f, &p))
            .collect::<Result<_>>()?,
        labels: Some(composed.mapping().to_vec()),
    })
}

fn sequence_labels(seq: &SequenceFile) -> Result<Permutation> {
    let labels = seq.labels.as_ref().ok_or_else(|| {
        Error::Data(format!(
            "sequence for subject {} has no ground-truth labels",
            seq.header.subject
        ))
    })?;
    Permutation::from_mapping(labels.clone())
}

fn check_subject_overlap(labeller: &dyn FrameLabeller, eval_subjects: &BTreeSet<String>) -> Result<()> {
    let train: BTreeSet<String> = labeller.train_subjects().into_iter().collect();
    let shared: Vec<&String> = train.intersection(eval_subjects).collect();
    if !shared.is_empty() {
        return Err(Error::Data(format!(
            "evaluation data shares subjects with the training set: {shared:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionAccuracyRow {
    pub occlusions: usize,
    pub frames: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub rows: Vec<OcclusionAccuracyRow>,
    pub dsm_residual: ResidualStats,
}

/// Frame-level accuracy swept over per-frame occlusion counts
/// `0..=max_occlusions`. Each pass normalizes the frame, replaces a fresh
/// random marker subset with the occlusion placeholder (the same convention
/// the training augmentation uses), and labels; occluded markers stay in
/// the accuracy denominator.
pub fn eval_frames(
    labeller: &dyn FrameLabeller,
    items: &[EvalItem],
    max_occlusions: usize,
    seed: u64,
) -> Result<FrameEval> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no evaluation frames given".into()));
    }
    let eval_subjects: BTreeSet<String> = items.iter().map(|i| i.subject.clone()).collect();
    check_subject_overlap(labeller, &eval_subjects)?;
    let n = labeller.n_markers();
    for item in items {
        if item.frame.n_markers() != n || item.target.len() != n {
            return Err(Error::Dimension(format!(
                "evaluation item has {} markers and a {}-entry target, labeller expects {n}",
                item.frame.n_markers(),
                item.target.len()
            )));
        }
    }

    let mut rows = Vec::new();
    let mut residual_sum = 0.0;
    let mut residual_max = 0.0f64;
    let mut labelled_frames = 0usize;
    for count in 0..=max_occlusions {
        let per_item: Vec<(usize, f64)> = items
            .par_iter()
            .enumerate()
            .map(|(idx, item)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((count as u64) << 40) ^ idx as u64);
                let mut frame = normalize_frame(&item.frame)?.0;
                for k in sample(&mut rng, n, count.min(n)) {
                    frame.occlude(k);
                }
                let result = labeller.label(&frame)?;
                let correct = (0..n).filter(|&k| result.permutation[k] == item.target[k]).count();
                Ok((correct, dsm_residual(&result.dsm)))
            })
            .collect::<Result<_>>()?;
        let correct: usize = per_item.iter().map(|(c, _)| c).sum();
        for &(_, r) in &per_item {
            residual_sum += r;
            residual_max = residual_max.max(r);
        }
        labelled_frames += per_item.len();
        rows.push(OcclusionAccuracyRow {
            occlusions: count,
            frames: items.len(),
            accuracy: correct as f64 / (items.len() * n) as f64,
        });
    }
    Ok(FrameEval {
        rows,
        dsm_residual: ResidualStats {
            mean: residual_sum / labelled_frames as f64,
            max: residual_max,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvalRow {
    pub p: f64,
    pub q: f64,
    pub accuracy: f64,
    /// Frame-label pairs claimed by more than one trajectory at once,
    /// summed over frames. Collisions are reported, not resolved.
    pub label_collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    /// Per-frame accuracy over visible samples, before any trajectory
    /// voting.
    pub baseline_accuracy: f64,
    pub visible_samples: usize,
    pub rows: Vec<TrajectoryEvalRow>,
}

struct SequenceOutcome {
    visible: usize,
    baseline_correct: usize,
    // Per scoring config: (correct samples, collisions).
    per_config: Vec<(usize, usize)>,
}

fn eval_one_sequence(
    labeller: &dyn FrameLabeller,
    seq: &SequenceFile,
    configs: &[ScoringConfig],
) -> Result<SequenceOutcome> {
    let labels = sequence_labels(seq)?;
    let normalized: Vec<MarkerFrame> = seq
        .frames
        .iter()
        .map(|f| Ok(normalize_frame(f)?.0))
        .collect::<Result<_>>()?;
    let results: Vec<LabelledFrameResult> =
        normalized.iter().map(|f| labeller.label(f)).collect::<Result<_>>()?;

    let mut visible = 0usize;
    let mut baseline_correct = 0usize;
    for (frame, result) in seq.frames.iter().zip(&results) {
        for k in 0..frame.n_markers() {
            if !frame.occluded[k] {
                visible += 1;
                if result.permutation[k] == labels[k] {
                    baseline_correct += 1;
                }
            }
        }
    }

    let mut trajectories = segment_trajectories(&normalized)?;
    attach_frame_labels(&mut trajectories, &results)?;

    let mut per_config = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mut correct = 0usize;
        // claims[frame - first][label] = number of trajectories asserting it.
        let first = seq.frames.first().map_or(0, |f| f.frame_index);
        let mut claims: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); seq.frames.len()];
        for traj in &trajectories {
            let (winner, _) = relabel_trajectory(traj, cfg)?;
            if winner == labels[traj.track_id] {
                correct += traj.len();
            }
            for fi in traj.start_frame..=traj.end_frame {
                *claims[fi - first].entry(winner).or_insert(0) += 1;
            }
        }
        let collisions: usize = claims
            .iter()
            .flat_map(|m| m.values())
            .map(|&c| c.saturating_sub(1))
            .sum();
        per_config.push((correct, collisions));
    }
    Ok(SequenceOutcome { visible, baseline_correct, per_config })
}

/// Trajectory relabelling accuracy per scoring configuration, with the
/// per-frame baseline, over gap-fragmented labelled sequences. Accuracy
/// counts visible marker-frame samples: occluded samples belong to no
/// trajectory, so they are excluded from both the baseline and the voting
/// rows to keep the comparison like for like.
pub fn eval_trajectories(
    labeller: &dyn FrameLabeller,
    sequences: &[SequenceFile],
    configs: &[ScoringConfig],
) -> Result<TrajectoryEval> {
    if sequences.is_empty() || configs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one sequence and one scoring configuration".into(),
        ));
    }
    let eval_subjects: BTreeSet<String> =
        sequences.iter().map(|s| s.header.subject.clone()).collect();
    check_subject_overlap(labeller, &eval_subjects)?;
    for cfg in configs {
        cfg.validate()?;
    }

    let outcomes: Vec<SequenceOutcome> = sequences
        .par_iter()
        .map(|seq| eval_one_sequence(labeller, seq, configs))
        .collect::<Result<_>>()?;

    let visible: usize = outcomes.iter().map(|o| o.visible).sum();
    let baseline_correct: usize = outcomes.iter().map(|o| o.baseline_correct).sum();
    let rows = configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let correct: usize = outcomes.iter().map(|o| o.per_config[c].0).sum();
            let collisions: usize = outcomes.iter().map(|o| o.per_config[c].1).sum();
            TrajectoryEvalRow {
                p: cfg.p,
                q: cfg.q,
                accuracy: correct as f64 / visible as f64,
                label_collisions: collisions,
            }
        })
        .collect();
    Ok(TrajectoryEval {
        baseline_accuracy: baseline_correct as f64 / visible as f64,
        visible_samples: visible,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub threshold: f64,
    pub labelled_fraction: f64,
    pub precision: f64,
    pub accuracy: f64,
}

/// Accuracy-precision trade-off: markers whose confidence clears the
/// threshold keep their labels, the rest go unlabelled. Precision counts
/// correct labels among labelled markers (1.0 when nothing is labelled);
/// accuracy counts them among all markers.
pub fn accuracy_precision_curve(
    labeller: &dyn FrameLabeller,
    items: &[EvalItem],
    thresholds: &[f64],
) -> Result<Vec<CurveSample>> {
    if items.is_empty() || thresholds.is_empty() {
        return Err(Error::InvalidArgument("no frames or thresholds given".into()));
    }
    for pair in thresholds.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::InvalidArgument("thresholds must ascend".into()));
        }
    }
    if thresholds[0] < 0.0 || *thresholds.last().unwrap() > 1.0 {
        return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
    }

    let labelled: Vec<(LabelledFrameResult, &Permutation)> = items
        .par_iter()
        .map(|item| {
            let normalized = normalize_frame(&item.frame)?.0;
            Ok((labeller.label(&normalized)?, &item.target))
        })
        .collect::<Result<_>>()?;

    let total = items.len() * labeller.n_markers();
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let mut labelled_count = 0usize;
            let mut correct = 0usize;
            for (result, target) in &labelled {
                for (k, label) in threshold_filter(result, threshold).into_iter().enumerate() {
                    if let Some(l) = label {
                        labelled_count += 1;
                        if l == target[k] {
                            correct += 1;
                        }
                    }
                }
            }
            CurveSample {
                threshold,
                labelled_fraction: labelled_count as f64 / total as f64,
                precision: if labelled_count == 0 {
                    1.0
                } else {
                    correct as f64 / labelled_count as f64
                },
                accuracy: correct as f64 / total as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub frames_timed: usize,
    pub frames_per_second: f64,
}

/// Where a report came from: everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub train_dataset_fingerprint: String,
    pub train_subjects: Vec<String>,
    pub eval_subjects: Vec<String>,
    pub eval_seed: u64,
    pub n_markers: usize,
    pub network: Option<NetworkConfig>,
    pub sinkhorn: Option<SinkhornConfig>,
}

/// Full evaluation report. Serializes with a stable key order so reports
/// diff cleanly across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub frames: FrameEval,
    pub trajectories: Option<TrajectoryEval>,
    pub curve: Vec<CurveSample>,
    pub runtime: Option<RuntimeStats>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(text)?)
    }

    /// Structural sanity: every rate lies in [0,1] and precision dominates
    /// accuracy wherever markers go unlabelled.
    pub fn check(&self) -> Result<()> {
        let unit = |v: f64, what: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!("{what} {v} outside [0, 1]")));
            }
            Ok(())
        };
        for row in &self.frames.rows {
            unit(row.accuracy, "frame accuracy")?;
        }
        if let Some(t) = &self.trajectories {
            unit(t.baseline_accuracy, "baseline accuracy")?;
            for row in &t.rows {
                unit(row.accuracy, "trajectory accuracy")?;
            }
        }
        for sample in &self.curve {
            unit(sample.labelled_fraction, "labelled fraction")?;
            unit(sample.precision, "precision")?;
            unit(sample.accuracy, "accuracy")?;
            if sample.precision < sample.accuracy - 1e-12 {
                return Err(Error::Data(format!(
                    "precision {} below accuracy {} at threshold {}",
                    sample.precision, sample.accuracy, sample.threshold
                )));
            }
        }
        Ok(())
    }
}

/// Reference labeller that replays stored ground truth by frame index.
/// Useful as an upper-bound baseline and in tests.
pub struct OracleLabeller {
    targets: BTreeMap<usize, Permutation>,
    n_markers: usize,
    pub train_subjects: Vec<String>,
}

impl OracleLabeller {
    pub fn from_items(items: &[EvalItem]) -> Result<OracleLabeller> {
        let n = items.first().map_or(0, |i| i.frame.n_markers());
        let mut targets = BTreeMap::new();
        for item in items {
            if let Some(old) = targets.insert(item.frame.frame_index, item.target.clone()) {
                if old != item.target {
                    return Err(Error::InvalidArgument(format!(
                        "frame index {} appears twice with different targets",
                        item.frame.frame_index
                    )));
                }
            }
        }
        Ok(OracleLabeller { targets, n_markers: n, train_subjects: Vec::new() })
    }

    pub fn from_sequences(sequences: &[SequenceFile]) -> Result<OracleLabeller> {
        let n = sequences.first().map_or(0, |s| s.header.n_markers);
        let mut targets = BTreeMap::new();
        for seq in sequences {
            let labels = sequence_labels(seq)?;
            for frame in &seq.frames {
                if targets.insert(frame.frame_index, labels.clone()).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "frame index {} appears in more than one sequence",
                        frame.frame_index
                    )));
                }
            }
        }
        Ok(OracleLabeller { targets, n_markers: n, train_subjects: Vec::new() })
    }
}

impl FrameLabeller for OracleLabeller {
    fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult> {
        let target = self.targets.get(&frame.frame_index).ok_or_else(|| {
            Error::Data(format!("oracle has no target for frame {}", frame.frame_index))
        })?;
        Ok(LabelledFrameResult {
            permutation: target.clone(),
            dsm: target.to_matrix().transpose(),
            confidences: vec![1.0; self.n_markers],
            frame_index: frame.frame_index,
        })
    }

    fn n_markers(&self) -> usize {
        self.n_markers
    }

    fn train_subjects(&self) -> Vec<String> {
        self.train_subjects.clone()
    }
}

/// Baseline labeller that answers with a uniform random permutation,
/// deterministic per frame index.
pub struct RandomLabeller {
    pub n_markers: usize,
    pub seed: u64,
}

impl FrameLabeller for RandomLabeller {
    fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame.frame_index as u64);
        let p = Permutation::random(self.n_markers, &mut rng);
        Ok(LabelledFrameResult {
            dsm: SquareMatrix::filled(self.n_markers, 1.0 / self.n_markers as f64),
            permutation: p,
            confidences: vec![0.5; self.n_markers],
            frame_index: frame.frame_index,
        })
    }

    fn n_markers(&self) -> usize {
        self.n_markers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_sequence, introduce_gaps, BodyModel, PoseGenerator};

    fn walk_sequence(n_markers: usize, n_frames: usize, seed: u64) -> SequenceFile {
        let body = BodyModel::humanoid(n_markers, PoseGenerator::default(), seed).unwrap();
        generate_sequence(&body, n_frames).unwrap()
    }

    #[test]
    fn oracle_is_perfect_at_every_occlusion_count() {
        let seq = walk_sequence(9, 40, 1);
        let items = eval_items_from_sequences(&[seq], 7).unwrap();
        let oracle = OracleLabeller::from_items(&items).unwrap();
        let eval = eval_frames(&oracle, &items, 5, 3).unwrap();
        assert_eq!(eval.rows.len(), 6);
        for row in &eval.rows {
            assert_eq!(row.accuracy, 1.0, "count {}", row.occlusions);
            assert_eq!(row.frames, 40);
        }
        // Oracle answers with exact permutation matrices.
        assert_eq!(eval.dsm_residual.max, 0.0);
    }

    #[test]
    fn random_labelling_fixes_one_in_n_markers() {
        let seq = walk_sequence(10, 600, 2);
        let items = eval_items_from_sequences(&[seq], 8).unwrap();
        let random = RandomLabeller { n_markers: 10, seed: 5 };
        let eval = eval_frames(&random, &items, 0, 3).unwrap();
        let accuracy = eval.rows[0].accuracy;
        // Uniform permutations average one fixed point each: 1/N of markers.
        assert!((accuracy - 0.1).abs() < 0.02, "accuracy {accuracy}");
    }

    #[test]
    fn shared_subjects_are_refused() {
        let seq = walk_sequence(9, 10, 1);
        let subject = seq.header.subject.clone();
        let items = eval_items_from_sequences(&[seq.clone()], 7).unwrap();
        let mut oracle = OracleLabeller::from_items(&items).unwrap();
        oracle.train_subjects = vec![subject];
        assert!(matches!(eval_frames(&oracle, &items, 2, 3), Err(Error::Data(_))));
        assert!(matches!(
            eval_trajectories(&oracle, &[seq], &[ScoringConfig::default()]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn trajectory_oracle_stays_perfect() {
        let mut a = walk_sequence(9, 60, 1);
        introduce_gaps(&mut a, 0.08, 5).unwrap();
        let mut b = walk_sequence(9, 60, 2);
        for (k, f) in b.frames.iter_mut().enumerate() {
            f.frame_index = 1000 + k;
        }
        introduce_gaps(&mut b, 0.05, 6).unwrap();
        let b = shuffle_sequence_tracks(&b, 9).unwrap();

        let sequences = [a, b];
        let oracle = OracleLabeller::from_sequences(&sequences).unwrap();
        let configs = [
            ScoringConfig { p: 0.0, q: 0.0 },
            ScoringConfig { p: 1.0, q: -1.0 },
            ScoringConfig::default(),
        ];
        let eval = eval_trajectories(&oracle, &sequences, &configs).unwrap();
        assert_eq!(eval.baseline_accuracy, 1.0);
        for row in &eval.rows {
            assert_eq!(row.accuracy, 1.0);
            assert_eq!(row.label_collisions, 0);
        }
    }

    /// Labels three of every five frames correctly and rotates the labels
    /// on the rest; confidence tracks correctness.
    struct NoisyLabeller {
        labels: Permutation,
    }

    impl FrameLabeller for NoisyLabeller {
        fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult> {
            let n = self.labels.len();
            let correct = frame.frame_index % 5 < 3;
            let permutation = if correct {
                self.labels.clone()
            } else {
                let rotated: Vec<usize> = (0..n).map(|k| self.labels[(k + 1) % n]).collect();
                Permutation::from_mapping(rotated)?
            };
            Ok(LabelledFrameResult {
                dsm: permutation.to_matrix().transpose(),
                permutation,
                confidences: vec![if correct { 0.9 } else { 0.2 }; n],
                frame_index: frame.frame_index,
            })
        }

        fn n_markers(&self) -> usize {
            self.labels.len()
        }
    }

    #[test]
    fn majority_voting_repairs_a_noisy_labeller() {
        let seq = walk_sequence(6, 60, 3);
        let noisy = NoisyLabeller { labels: Permutation::identity(6) };
        let configs = [ScoringConfig { p: 0.0, q: 0.0 }];
        let eval = eval_trajectories(&noisy, &[seq], &configs).unwrap();
        // 36 of 60 frames are labelled correctly, and majority voting
        // recovers the rest.
        assert!((eval.baseline_accuracy - 0.6).abs() < 1e-12);
        assert_eq!(eval.rows[0].accuracy, 1.0);
        assert_eq!(eval.rows[0].label_collisions, 0);
    }

    #[test]
    fn wrong_votes_collide_and_are_counted() {
        // Always-wrong labeller: every frame rotated, so every trajectory
        // votes for its neighbour's label.
        struct Rotated(usize);
        impl FrameLabeller for Rotated {
            fn label(&self, frame: &MarkerFrame) -> Result<LabelledFrameResult> {
                let p = Permutation::from_mapping((0..self.0).map(|k| (k + 1) % self.0).collect())?;
                Ok(LabelledFrameResult {
                    dsm: p.to_matrix().transpose(),
                    permutation: p,
                    confidences: vec![0.8; self.0],
                    frame_index: frame.frame_index,
                })
            }
            fn n_markers(&self) -> usize {
                self.0
            }
        }
        let seq = walk_sequence(6, 20, 3);
        let eval =
            eval_trajectories(&Rotated(6), &[seq], &[ScoringConfig::default()]).unwrap();
        assert_eq!(eval.rows[0].accuracy, 0.0);
        // Rotation is a bijection, so no two trajectories claim one label.
        assert_eq!(eval.rows[0].label_collisions, 0);
        assert_eq!(eval.baseline_accuracy, 0.0);
    }

    #[test]
    fn curve_tracks_confidence_thresholds() {
        let seq = walk_sequence(6, 50, 4);
        let subject = seq.header.subject.clone();
        let items: Vec<EvalItem> = seq
            .frames
            .iter()
            .map(|f| EvalItem {
                frame: f.clone(),
                target: Permutation::identity(6),
                subject: subject.clone(),
            })
            .collect();
        let noisy = NoisyLabeller { labels: Permutation::identity(6) };
        let thresholds: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let curve = accuracy_precision_curve(&noisy, &items, &thresholds).unwrap();

        // Threshold 0 labels everything: precision equals accuracy.
        assert_eq!(curve[0].labelled_fraction, 1.0);
        assert_eq!(curve[0].precision, curve[0].accuracy);
        for pair in curve.windows(2) {
            assert!(pair[1].labelled_fraction <= pair[0].labelled_fraction);
        }
        for sample in &curve {
            assert!(sample.precision >= sample.accuracy - 1e-12);
        }
        // Between the two confidence levels only correct frames survive.
        let mid = &curve[50];
        assert_eq!(mid.precision, 1.0);
        assert!((mid.labelled_fraction - 0.6).abs() < 1e-12);

        let bad = accuracy_precision_curve(&noisy, &items, &[0.5, 0.2]);
        assert!(bad.is_err());
        let bad = accuracy_precision_curve(&noisy, &items, &[0.5, 1.2]);
        assert!(bad.is_err());
    }

    #[test]
    fn eval_items_compose_shuffles_with_sequence_labels() {
        let seq = walk_sequence(7, 5, 6);
        let shuffled_seq = shuffle_sequence_tracks(&seq, 11).unwrap();
        let items = eval_items_from_sequences(&[shuffled_seq.clone()], 12).unwrap();
        let labels = shuffled_seq.labels.as_ref().unwrap();
        for (item, original) in items.iter().zip(&shuffled_seq.frames) {
            // Each item is some re-ordering of the original frame, and the
            // target names each track's true label.
            for k in 0..7 {
                let pos = item.frame.positions[k];
                let src = original
                    .positions
                    .iter()
                    .position(|p| *p == pos)
                    .expect("every item position comes from the frame");
                assert_eq!(item.target[k], labels[src]);
            }
        }
    }

    #[test]
    fn report_json_is_stable_and_checked() {
        let seq = walk_sequence(9, 20, 1);
        let items = eval_items_from_sequences(&[seq.clone()], 7).unwrap();
        let oracle = OracleLabeller::from_items(&items).unwrap();
        let frames = eval_frames(&oracle, &items, 2, 3).unwrap();
        let report = EvalReport {
            provenance: Provenance {
                train_dataset_fingerprint: "none".into(),
                train_subjects: vec![],
                eval_subjects: vec![seq.header.subject.clone()],
                eval_seed: 3,
                n_markers: 9,
                network: None,
                sinkhorn: None,
            },
            frames,
            trajectories: None,
            curve: vec![CurveSample {
                threshold: 0.0,
                labelled_fraction: 1.0,
                precision: 1.0,
                accuracy: 1.0,
            }],
            runtime: None,
        };
        report.check().unwrap();
        let a = report.to_json().unwrap();
        let b = EvalReport::from_json(&a).unwrap().to_json().unwrap();
        assert_eq!(a, b);

        let mut broken = report.clone();
        broken.curve[0].accuracy = 1.2;
        assert!(broken.check().is_err());
        let mut broken = report;
        broken.curve[0].precision = 0.5;
        assert!(broken.check().is_err());
    }
}
