//! Trajectory-level labelling: per-assignment confidence margins, gap-free
//! trajectory segmentation, and winner-takes-all relabelling of whole
//! trajectories from accumulated per-frame confidences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelledFrameResult, MarkerFrame, SquareMatrix};

/// Margin between the chosen label's score and the best competing label in
/// the same column: `c = D[i,j] - max_{k != i} D[k,j]`, in [-1, 1].
/// Negative whenever `i` is not the column argmax.
pub fn confidence(d: &SquareMatrix, label_i: usize, marker_j: usize) -> Result<f64> {
    let n = d.n();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "confidence needs at least 2 markers (a runner-up must exist)".into(),
        ));
    }
    if label_i >= n || marker_j >= n {
        return Err(Error::InvalidArgument(format!(
            "confidence indices ({label_i},{marker_j}) out of range for {n} markers"
        )));
    }
    let mut best_other = f64::NEG_INFINITY;
    for k in 0..n {
        if k != label_i {
            best_other = best_other.max(d[(k, marker_j)]);
        }
    }
    Ok(d[(label_i, marker_j)] - best_other)
}

/// Min-max normalization of a raw confidence from [-1, 1] to [0, 1].
pub fn normalize_confidence(c: f64) -> Result<f64> {
    if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "confidence {c} outside [-1, 1]"
        )));
    }
    Ok(((c + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// A maximal gap-free run of one tracked marker. `start_frame..=end_frame`
/// is inclusive and `positions` holds one sample per frame in that range.
/// `per_frame_labels` pairs each frame with the per-frame label and its
/// normalized confidence once [`attach_frame_labels`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub track_id: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub positions: Vec<[f64; 3]>,
    pub per_frame_labels: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Scoring hyperparameters for trajectory relabelling. `p = 0` switches
/// the accumulation term to a pure vote count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub p: f64,
    pub q: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { p: 2.0, q: -0.5 }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.p.is_finite() || !self.q.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scoring parameters must be finite, got p={} q={}",
                self.p, self.q
            )));
        }
        Ok(())
    }
}

/// One visible marker observation in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedObservation {
    pub track_id: usize,
    pub position: [f64; 3],
}

/// Splits per-frame tracked observations into maximal gap-free
/// trajectories. `frames[t]` holds the observations of frame
/// `first_frame_index + t`; a track id missing from a frame terminates its
/// current trajectory. Output is sorted by (start_frame, track_id).
pub fn segment_observations(
    frames: &[Vec<TrackedObservation>],
    first_frame_index: usize,
) -> Result<Vec<Trajectory>> {
    let mut done: Vec<Trajectory> = Vec::new();
    let mut active: BTreeMap<usize, (usize, Vec<[f64; 3]>)> = BTreeMap::new();

    for (t, frame) in frames.iter().enumerate() {
        let fi = first_frame_index + t;
        let mut seen = BTreeSet::new();
        for obs in frame {
            if !seen.insert(obs.track_id) {
                return Err(Error::Data(format!(
                    "frame {fi}: track id {} appears more than once",
                    obs.track_id
                )));
            }
            active
                .entry(obs.track_id)
                .or_insert_with(|| (fi, Vec::new()))
                .1
                .push(obs.position);
        }
        // Tracks that skipped this frame end at the previous one.
        let ended: Vec<usize> =
            active.keys().copied().filter(|id| !seen.contains(id)).collect();
        for id in ended {
            let (start, positions) = active.remove(&id).expect("key listed from the map");
            done.push(Trajectory {
                track_id: id,
                start_frame: start,
                end_frame: fi - 1,
                positions,
                per_frame_labels: Vec::new(),
            });
        }
    }
    let last = first_frame_index + frames.len() - 1;
    for (id, (start, positions)) in std::mem::take(&mut active) {
        done.push(Trajectory {
            track_id: id,
            start_frame: start,
            end_frame: last,
            positions,
            per_frame_labels: Vec::new(),
        });
    }
    done.sort_by_key(|t| (t.start_frame, t.track_id));
    Ok(done)
}

/// Segments a contiguous run of frames, treating each marker slot as a
/// track id and occlusion flags as gaps.
pub fn segment_trajectories(frames: &[MarkerFrame]) -> Result<Vec<Trajectory>> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let first = frames[0].frame_index;
    let n = frames[0].n_markers();
    let observations: Vec<Vec<TrackedObservation>> = frames
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            if frame.frame_index != first + t {
                return Err(Error::Data(format!(
                    "frames are not contiguous: expected index {} at position {t}, found {}",
                    first + t,
                    frame.frame_index
                )));
            }
            if frame.n_markers() != n {
                return Err(Error::Dimension(format!(
                    "frame {} has {} markers, sequence started with {n}",
                    frame.frame_index,
                    frame.n_markers()
                )));
            }
            Ok(frame
                .positions
                .iter()
                .zip(&frame.occluded)
                .enumerate()
                .filter(|(_, (_, &occ))| !occ)
                .map(|(k, (&p, _))| TrackedObservation { track_id: k, position: p })
                .collect())
        })
        .collect::<Result<_>>()?;
    segment_observations(&observations, first)
}

/// Copies per-frame labels and confidences from frame results into each
/// trajectory. Every frame a trajectory spans must have a result.
pub fn attach_frame_labels(
    trajectories: &mut [Trajectory],
    results: &[LabelledFrameResult],
) -> Result<()> {
    let by_frame: BTreeMap<usize, &LabelledFrameResult> =
        results.iter().map(|r| (r.frame_index, r)).collect();
    for traj in trajectories.iter_mut() {
        traj.per_frame_labels.clear();
        for fi in traj.start_frame..=traj.end_frame {
            let result = by_frame.get(&fi).ok_or_else(|| {
                Error::Data(format!(
                    "no labelling result for frame {fi} spanned by track {}",
                    traj.track_id
                ))
            })?;
            if traj.track_id >= result.permutation.len() {
                return Err(Error::Dimension(format!(
                    "track id {} out of range for {}-marker labelling",
                    traj.track_id,
                    result.permutation.len()
                )));
            }
            traj.per_frame_labels
                .push((result.permutation[traj.track_id], result.confidences[traj.track_id]));
        }
    }
    Ok(())
}

/// Trajectory score for one candidate label:
/// `S_i = |T_i|^q * (sum over T_i of conf^p)^(1/p)`, where `T_i` is the set
/// of frames labelled `i`. For `p = 0` the accumulation term is `|T_i|`
/// (pure voting).
pub fn score_label(traj: &Trajectory, label_i: usize, cfg: &ScoringConfig) -> Result<f64> {
    cfg.validate()?;
    let count = traj.per_frame_labels.iter().filter(|(l, _)| *l == label_i).count();
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "label {label_i} never occurs in track {}",
            traj.track_id
        )));
    }
    let size = count as f64;
    let accumulated = if cfg.p == 0.0 {
        size
    } else {
        let sum: f64 = traj
            .per_frame_labels
            .iter()
            .filter(|(l, _)| *l == label_i)
            .map(|(_, c)| c.powf(cfg.p))
            .sum();
        sum.powf(1.0 / cfg.p)
    };
    Ok(size.powf(cfg.q) * accumulated)
}

/// Winner-takes-all relabelling: the candidate label with the highest
/// score wins; exact ties go to the smaller label index.
pub fn relabel_trajectory(traj: &Trajectory, cfg: &ScoringConfig) -> Result<(usize, f64)> {
    cfg.validate()?;
    if traj.per_frame_labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "track {} has no per-frame labels to vote with",
            traj.track_id
        )));
    }
    let candidates: BTreeSet<usize> =
        traj.per_frame_labels.iter().map(|(l, _)| *l).collect();
    let mut best: Option<(usize, f64)> = None;
    for label in candidates {
        let score = score_label(traj, label, cfg)?;
        let better = match best {
            None => true,
            Some((_, s)) => score > s,
        };
        if better {
            best = Some((label, score));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Keeps only labels whose confidence reaches `threshold`; the rest become
/// `None`.
pub fn threshold_filter(result: &LabelledFrameResult, threshold: f64) -> Vec<Option<usize>> {
    result
        .confidences
        .iter()
        .enumerate()
        .map(|(j, &c)| if c >= threshold { Some(result.permutation[j]) } else { None })
        .collect()
}
