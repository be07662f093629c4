//! Synthetic labelled marker sequences: an articulated humanoid animated by
//! parametric motion families, plus the augmentations used to build training
//! sets (per-frame shuffles, random occlusions, trajectory gaps) and a
//! subject-disjoint split helper.

mod seqfile;

pub use seqfile::{SequenceFile, SequenceHeader, DEFAULT_FPS};

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{apply_permutation, MarkerFrame, Permutation};

pub const DEFAULT_N_MARKERS: usize = 41;
/// Shuffled copies made of every training frame.
pub const DEFAULT_SHUFFLES_PER_FRAME: usize = 16;
/// Upper bound of the per-frame uniform occlusion count.
pub const DEFAULT_MAX_OCCLUSIONS: usize = 5;
/// Mean gap-burst length: about 0.1 s at the default frame rate.
pub const MEAN_GAP_LENGTH: f64 = 12.0;

/// Marker placements are drawn once from this fixed stream so every subject
/// wears the markers in the same body locations; only proportions vary.
const PROTOCOL_SEED: u64 = 0x6d61726b6572;

/// Parametric motion families. All time variation scales with `amplitude`,
/// so amplitude zero freezes the body in its rest pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionFamily {
    Walk,
    Sit,
    Jump,
}

impl MotionFamily {
    pub fn name(self) -> &'static str {
        match self {
            MotionFamily::Walk => "walk",
            MotionFamily::Sit => "sit",
            MotionFamily::Jump => "jump",
        }
    }

    /// Joint waveform, C1 in time.
    fn waveform(self, t: f64, freq: f64, phase: f64) -> f64 {
        let arg = TAU * freq * t + phase;
        match self {
            MotionFamily::Walk => arg.sin(),
            MotionFamily::Sit => 0.5 * (1.0 - arg.cos()),
            MotionFamily::Jump => {
                let s = arg.sin().max(0.0);
                s * s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGenerator {
    pub family: MotionFamily,
    pub amplitude: f64,
    pub frequency_hz: f64,
}

impl Default for PoseGenerator {
    fn default() -> Self {
        PoseGenerator { family: MotionFamily::Walk, amplitude: 1.0, frequency_hz: 2.0 }
    }
}

impl PoseGenerator {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pose amplitude must be finite and non-negative, got {}",
                self.amplitude
            )));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pose frequency must be finite and positive, got {} Hz",
                self.frequency_hz
            )));
        }
        Ok(())
    }
}

/// One rigid bone. `joint_offset` locates its joint in the parent's frame,
/// `axis` is the direction it extends along in its own frame, and the swing
/// fields drive its pose-dependent rotation about `swing_axis` (parent
/// frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub name: &'static str,
    pub parent: Option<usize>,
    pub joint_offset: [f64; 3],
    pub axis: [f64; 3],
    pub length: f64,
    pub swing_axis: [f64; 3],
    pub swing_scale: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerAttachment {
    pub segment: usize,
    /// Position in the segment's local frame.
    pub offset: [f64; 3],
}

/// An articulated body with markers attached to its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub skeleton: Vec<Segment>,
    pub markers: Vec<MarkerAttachment>,
    pub pose: PoseGenerator,
    /// Drives subject proportions and the sequence's phase and heading;
    /// doubles as the subject identity.
    pub seed: u64,
    /// Rest height of the skeleton root above the ground.
    pub root_height: f64,
}

const PI: f64 = std::f64::consts::PI;
const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

/// Base skeleton: pelvis root, torso chain, and two-bone limbs, with walk
/// phases alternating left/right.
fn base_skeleton() -> Vec<Segment> {
    let up = [0.0, 0.0, 1.0];
    let down = [0.0, 0.0, -1.0];
    let pitch = [0.0, 1.0, 0.0];
    let yaw = [0.0, 0.0, 1.0];
    vec![
        Segment { name: "pelvis", parent: None, joint_offset: [0.0; 3], axis: up, length: 0.18, swing_axis: pitch, swing_scale: 0.0, phase: 0.0 },
        Segment { name: "torso", parent: Some(0), joint_offset: [0.0, 0.0, 0.18], axis: up, length: 0.45, swing_axis: yaw, swing_scale: 0.08, phase: 0.0 },
        Segment { name: "head", parent: Some(1), joint_offset: [0.0, 0.0, 0.45], axis: up, length: 0.22, swing_axis: pitch, swing_scale: 0.03, phase: PI },
        Segment { name: "upper_arm_l", parent: Some(1), joint_offset: [0.0, 0.22, 0.42], axis: down, length: 0.28, swing_axis: pitch, swing_scale: 0.40, phase: PI },
        Segment { name: "forearm_l", parent: Some(3), joint_offset: [0.0, 0.0, -0.28], axis: down, length: 0.26, swing_axis: pitch, swing_scale: 0.30, phase: PI + HALF_PI },
        Segment { name: "upper_arm_r", parent: Some(1), joint_offset: [0.0, -0.22, 0.42], axis: down, length: 0.28, swing_axis: pitch, swing_scale: 0.40, phase: 0.0 },
        Segment { name: "forearm_r", parent: Some(5), joint_offset: [0.0, 0.0, -0.28], axis: down, length: 0.26, swing_axis: pitch, swing_scale: 0.30, phase: HALF_PI },
        Segment { name: "thigh_l", parent: Some(0), joint_offset: [0.0, 0.09, 0.0], axis: down, length: 0.42, swing_axis: pitch, swing_scale: 0.50, phase: 0.0 },
        Segment { name: "shin_l", parent: Some(7), joint_offset: [0.0, 0.0, -0.42], axis: down, length: 0.40, swing_axis: pitch, swing_scale: 0.60, phase: -HALF_PI },
        Segment { name: "thigh_r", parent: Some(0), joint_offset: [0.0, -0.09, 0.0], axis: down, length: 0.42, swing_axis: pitch, swing_scale: 0.50, phase: PI },
        Segment { name: "shin_r", parent: Some(9), joint_offset: [0.0, 0.0, -0.42], axis: down, length: 0.40, swing_axis: pitch, swing_scale: 0.60, phase: PI - HALF_PI },
    ]
}

impl BodyModel {
    /// Builds a humanoid subject. Proportions vary with `seed` (roughly
    /// +-10% overall, small per-segment jitter); marker placement follows a
    /// fixed protocol shared by all subjects.
    pub fn humanoid(n_markers: usize, pose: PoseGenerator, seed: u64) -> Result<BodyModel> {
        if n_markers == 0 {
            return Err(Error::InvalidArgument("a body needs at least one marker".into()));
        }
        pose.validate()?;

        let mut subject_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut skeleton = base_skeleton();
        let global: f64 = subject_rng.gen_range(0.9..=1.1);
        let factors: Vec<f64> =
            (0..skeleton.len()).map(|_| global * subject_rng.gen_range(0.97..=1.03)).collect();
        for (k, seg) in skeleton.iter_mut().enumerate() {
            seg.length *= factors[k];
            let parent_factor = seg.parent.map_or(factors[0], |p| factors[p]);
            for c in &mut seg.joint_offset {
                *c *= parent_factor;
            }
        }

        let mut protocol_rng = ChaCha8Rng::seed_from_u64(PROTOCOL_SEED);
        let markers = (0..n_markers)
            .map(|k| {
                let segment = k % skeleton.len();
                let along: f64 = protocol_rng.gen_range(0.1..=0.9);
                let c1: f64 = protocol_rng.gen_range(-0.08..=0.08);
                let c2: f64 = protocol_rng.gen_range(-0.08..=0.08);
                let seg = &skeleton[segment];
                let s = factors[segment];
                let offset = [
                    seg.axis[0] * along * seg.length + c1 * s,
                    seg.axis[1] * along * seg.length + c2 * s,
                    seg.axis[2] * along * seg.length,
                ];
                MarkerAttachment { segment, offset }
            })
            .collect();

        // Feet graze the ground in the rest pose.
        let root_height = skeleton[7].length + skeleton[8].length + 0.06 * global;
        let body = BodyModel { skeleton, markers, pose, seed, root_height };
        body.validate()?;
        Ok(body)
    }

    pub fn n_markers(&self) -> usize {
        self.markers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.skeleton.is_empty() {
            return Err(Error::InvalidArgument("skeleton has no segments".into()));
        }
        for (k, seg) in self.skeleton.iter().enumerate() {
            match seg.parent {
                None if k != 0 => {
                    return Err(Error::InvalidArgument(format!(
                        "segment {k} ({}) has no parent; only segment 0 is the root",
                        seg.name
                    )));
                }
                Some(p) if p >= k => {
                    return Err(Error::InvalidArgument(format!(
                        "segment {k} ({}) must come after its parent {p}",
                        seg.name
                    )));
                }
                _ => {}
            }
            if !(seg.length.is_finite() && seg.length > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment {k} ({}) length must be positive, got {}",
                    seg.name, seg.length
                )));
            }
        }
        if self.markers.is_empty() {
            return Err(Error::InvalidArgument("a body needs at least one marker".into()));
        }
        for (k, m) in self.markers.iter().enumerate() {
            if m.segment >= self.skeleton.len() {
                return Err(Error::InvalidArgument(format!(
                    "marker {k} attaches to segment {} of {}",
                    m.segment,
                    self.skeleton.len()
                )));
            }
            if m.offset.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "marker {k} offset is not finite"
                )));
            }
        }
        self.pose.validate()?;
        if !(self.root_height.is_finite() && self.root_height > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "root height must be positive, got {}",
                self.root_height
            )));
        }
        Ok(())
    }
}

fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn matvec3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Root drift: heading-aligned travel, lateral sway, vertical bob at the
/// configured frequency, and a slow yaw wander. Everything scales with the
/// pose amplitude.
fn root_pose(body: &BodyModel, t: f64, phase0: f64, heading0: f64) -> ([[f64; 3]; 3], [f64; 3]) {
    let a = body.pose.amplitude;
    let f = body.pose.frequency_hz;
    let (hs, hc) = heading0.sin_cos();
    let (travel, lateral, bob, yaw_sway) = match body.pose.family {
        MotionFamily::Walk => (
            a * 0.4 * t,
            a * 0.02 * (TAU * f * t / 4.0 + phase0).sin(),
            a * 0.03 * (TAU * f * t + phase0).sin(),
            a * 0.10 * (TAU * f * t / 8.0 + phase0).sin(),
        ),
        MotionFamily::Sit => (
            0.0,
            0.0,
            -a * 0.25 * body.pose.family.waveform(t, f, phase0),
            a * 0.02 * (TAU * f * t / 8.0 + phase0).sin(),
        ),
        MotionFamily::Jump => (
            a * 0.10 * t,
            0.0,
            a * 0.30 * body.pose.family.waveform(t, f, phase0),
            0.0,
        ),
    };
    let origin = [
        travel * hc - lateral * hs,
        travel * hs + lateral * hc,
        body.root_height + bob,
    ];
    let rotation = axis_angle([0.0, 0.0, 1.0], heading0 + yaw_sway);
    (rotation, origin)
}

/// Forward kinematics for one instant.
fn marker_positions(body: &BodyModel, t: f64, phase0: f64, heading0: f64) -> Vec<[f64; 3]> {
    let (root_r, root_o) = root_pose(body, t, phase0, heading0);
    let n_seg = body.skeleton.len();
    let mut rot: Vec<[[f64; 3]; 3]> = Vec::with_capacity(n_seg);
    let mut org: Vec<[f64; 3]> = Vec::with_capacity(n_seg);
    for seg in &body.skeleton {
        let (parent_r, parent_o) = match seg.parent {
            None => (&root_r, root_o),
            Some(p) => (&rot[p], org[p]),
        };
        let joint = add3(parent_o, matvec3(parent_r, seg.joint_offset));
        let angle = body.pose.amplitude
            * seg.swing_scale
            * body.pose.family.waveform(t, body.pose.frequency_hz, seg.phase + phase0);
        let world = matmul3(parent_r, &axis_angle(seg.swing_axis, angle));
        rot.push(world);
        org.push(joint);
    }
    body.markers
        .iter()
        .map(|m| add3(org[m.segment], matvec3(&rot[m.segment], m.offset)))
        .collect()
}

/// Animates the body over `n_frames` at the default frame rate. Labels are
/// ground truth by construction: track k carries label k.
pub fn generate_sequence(body: &BodyModel, n_frames: usize) -> Result<SequenceFile> {
    body.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(body.seed);
    rng.set_stream(1);
    let phase0: f64 = rng.gen_range(0.0..TAU);
    let heading0: f64 = rng.gen_range(0.0..TAU);
    let fps = DEFAULT_FPS;
    let frames = (0..n_frames)
        .map(|i| {
            let t = i as f64 / fps;
            MarkerFrame::fully_visible(marker_positions(body, t, phase0, heading0), i)
        })
        .collect();
    Ok(SequenceFile {
        header: SequenceHeader {
            n_markers: body.n_markers(),
            fps,
            subject: format!("subject-{}", body.seed),
            action: body.pose.family.name().to_string(),
        },
        frames,
        labels: Some((0..body.n_markers()).collect()),
    })
}

/// Generates one sequence per body in parallel; each body owns its seeded
/// stream, so the output is independent of scheduling.
pub fn generate_corpus(bodies: &[BodyModel], n_frames: usize) -> Result<Vec<SequenceFile>> {
    bodies.par_iter().map(|b| generate_sequence(b, n_frames)).collect()
}

/// Makes `per_frame` independently shuffled copies of every frame, each
/// paired with the permutation that labels it (track k carries label
/// target[k]).
pub fn augment_shuffle(
    frames: &[MarkerFrame],
    per_frame: usize,
    seed: u64,
) -> Vec<(MarkerFrame, Permutation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames.len() * per_frame);
    for frame in frames {
        for _ in 0..per_frame {
            let p = Permutation::random(frame.n_markers(), &mut rng);
            let shuffled = apply_permutation(frame, &p).expect("matching lengths");
            out.push((shuffled, p));
        }
    }
    out
}

/// Occludes a uniform 0..=max_count subset of each frame's markers,
/// replacing their positions with the occlusion placeholder. Meant for
/// normalized frames; labels are untouched.
pub fn augment_occlude(frames: &mut [MarkerFrame], max_count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for frame in frames {
        let n = frame.n_markers();
        let count = rng.gen_range(0..=max_count.min(n));
        for k in sample(&mut rng, n, count) {
            frame.occlude(k);
        }
    }
}

/// Occludes random geometric-length bursts (mean [`MEAN_GAP_LENGTH`]) of
/// single-marker samples until the occluded fraction reaches `ratio`.
pub fn introduce_gaps(sequence: &mut SequenceFile, ratio: f64, seed: u64) -> Result<()> {
    if !(0.0..=0.5).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "occlusion ratio must lie in [0, 0.5], got {ratio}"
        )));
    }
    let n_frames = sequence.frames.len();
    let n_markers = sequence.header.n_markers;
    let total = (n_frames * n_markers) as f64;
    if total == 0.0 || ratio == 0.0 {
        return Ok(());
    }
    let mut occluded: usize =
        sequence.frames.iter().map(|f| f.n_markers() - f.n_visible()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    while (occluded as f64) / total < ratio {
        let marker = rng.gen_range(0..n_markers);
        let start = rng.gen_range(0..n_frames);
        // Geometric length with mean MEAN_GAP_LENGTH, support {1, 2, ...}.
        let mut len = 1;
        while rng.gen::<f64>() > 1.0 / MEAN_GAP_LENGTH {
            len += 1;
        }
        for frame in sequence.frames[start..(start + len).min(n_frames)].iter_mut() {
            if !frame.occluded[marker] {
                frame.occlude(marker);
                occluded += 1;
            }
        }
    }
    Ok(())
}

/// Splits subjects into three disjoint groups with the given fractions
/// (train, validation, test); the test group absorbs rounding remainders.
pub fn split_subjects(
    subjects: &[String],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let (ft, fv, fe) = fractions;
    let all_valid = [ft, fv, fe].iter().all(|f| f.is_finite() && *f >= 0.0);
    if !all_valid || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got ({ft}, {fv}, {fe})"
        )));
    }
    let mut order: Vec<String> = subjects.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates on the subject list.
    for k in (1..order.len()).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let n = order.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train.min(n));
    let rest = order.split_off(n_train.min(n));
    let (val, test) = {
        let mut rest = rest;
        let tail = rest.split_off(n_val.min(rest.len()));
        (rest, tail)
    };
    Ok((order, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajlabel::segment_trajectories;

    fn walk_body(n_markers: usize, seed: u64) -> BodyModel {
        BodyModel::humanoid(n_markers, PoseGenerator::default(), seed).unwrap()
    }

    #[test]
    fn zero_amplitude_freezes_the_body() {
        let pose = PoseGenerator { amplitude: 0.0, ..PoseGenerator::default() };
        let body = BodyModel::humanoid(12, pose, 3).unwrap();
        let seq = generate_sequence(&body, 10).unwrap();
        for frame in &seq.frames {
            assert_eq!(frame.positions, seq.frames[0].positions);
        }
    }

    #[test]
    fn markers_on_one_segment_stay_rigid() {
        let body = walk_body(22, 5);
        let seq = generate_sequence(&body, 60).unwrap();
        for a in 0..22 {
            for b in (a + 1)..22 {
                if body.markers[a].segment != body.markers[b].segment {
                    continue;
                }
                let dist = |f: &MarkerFrame| {
                    let (p, q) = (f.positions[a], f.positions[b]);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                };
                let d0 = dist(&seq.frames[0]);
                for f in &seq.frames {
                    assert!((dist(f) - d0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn walking_bobs_at_the_configured_frequency() {
        let pose = PoseGenerator { frequency_hz: 4.0, ..PoseGenerator::default() };
        let body = BodyModel::humanoid(16, pose, 8).unwrap();
        let seq = generate_sequence(&body, 480).unwrap();
        // Mean-centred centroid height.
        let z: Vec<f64> = seq
            .frames
            .iter()
            .map(|f| f.positions.iter().map(|p| p[2]).sum::<f64>() / 16.0)
            .collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let z: Vec<f64> = z.iter().map(|v| v - mean).collect();
        let autocorr = |lag: usize| -> f64 {
            (0..z.len() - lag).map(|i| z[i] * z[i + lag]).sum::<f64>() / (z.len() - lag) as f64
        };
        let r: Vec<f64> = (0..=120).map(autocorr).collect();
        let top = r[5..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Every multiple of the period peaks; the fundamental is the first
        // near-maximal local peak. 120 fps at 4 Hz: one period is 30 frames.
        let best = (5..120)
            .find(|&lag| r[lag] >= 0.95 * top && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1])
            .unwrap() as i64;
        assert!((best - 30).abs() <= 1, "autocorrelation peaked at lag {best}, expected 30");
    }

    #[test]
    fn sequences_are_deterministic_per_seed() {
        let a = generate_sequence(&walk_body(10, 21), 40).unwrap();
        let b = generate_sequence(&walk_body(10, 21), 40).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = generate_sequence(&walk_body(10, 22), 40).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn corpus_generation_matches_sequential() {
        let bodies: Vec<BodyModel> = (0..4).map(|s| walk_body(8, s)).collect();
        let corpus = generate_corpus(&bodies, 16).unwrap();
        for (body, seq) in bodies.iter().zip(&corpus) {
            assert_eq!(seq.to_csv(), generate_sequence(body, 16).unwrap().to_csv());
        }
    }

    #[test]
    fn subjects_share_the_marker_protocol() {
        let a = walk_body(22, 1);
        let b = walk_body(22, 2);
        for (ma, mb) in a.markers.iter().zip(&b.markers) {
            assert_eq!(ma.segment, mb.segment);
            let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let (na, nb) = (norm(ma.offset), norm(mb.offset));
            // Same placement up to the subject's proportions.
            let ratio = na / nb;
            assert!((0.7..1.4).contains(&ratio));
            for c in 0..3 {
                assert!((ma.offset[c] / na - mb.offset[c] / nb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shuffles_multiply_the_frame_count_and_stay_consistent() {
        let seq = generate_sequence(&walk_body(9, 4), 25).unwrap();
        let pairs = augment_shuffle(&seq.frames, 16, 77);
        assert_eq!(pairs.len(), 25 * 16);
        for (k, (shuffled, target)) in pairs.iter().enumerate() {
            let original = &seq.frames[k / 16];
            // Undoing the stored permutation reproduces the ordered frame.
            let undone = apply_permutation(shuffled, &target.inverse()).unwrap();
            assert_eq!(undone.positions, original.positions);
            assert_eq!(undone.occluded, original.occluded);
        }
    }

    #[test]
    fn shuffling_twice_composes_targets() {
        let seq = generate_sequence(&walk_body(7, 6), 1).unwrap();
        let first = augment_shuffle(&seq.frames, 1, 10);
        let (frame1, t1) = &first[0];
        let again = augment_shuffle(std::slice::from_ref(frame1), 1, 11);
        let (frame2, p) = &again[0];
        // frame2[k] = frame1[p[k]] = original[t1[p[k]]].
        let combined = p.compose(t1).unwrap();
        let undone = apply_permutation(frame2, &combined.inverse()).unwrap();
        assert_eq!(undone.positions, seq.frames[0].positions);
    }

    #[test]
    fn first_position_labels_are_uniform() {
        let frame = MarkerFrame::fully_visible(vec![[0.0; 3]; 4], 0);
        let pairs = augment_shuffle(&[frame], 100_000, 42);
        let mut counts = [0usize; 4];
        for (_, p) in &pairs {
            counts[p[0]] += 1;
        }
        let expected = 25_000.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.1% critical value for 3 degrees of freedom.
        assert!(chi2 < 16.266, "chi-square {chi2}, counts {counts:?}");
    }

    #[test]
    fn occlusion_counts_are_uniform_up_to_five() {
        let mut frames = vec![MarkerFrame::fully_visible(vec![[0.2; 3]; 20], 0); 100_000];
        augment_occlude(&mut frames, 5, 13);
        let mut hist = [0usize; 6];
        for f in &frames {
            hist[f.n_markers() - f.n_visible()] += 1;
        }
        let expected = 100_000.0 / 6.0;
        let sigma = (100_000.0f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for (count, &c) in hist.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "count {count} occurred {c} times, expected {expected:.0} +- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn max_zero_occlusion_is_the_identity() {
        let seq = generate_sequence(&walk_body(8, 9), 5).unwrap();
        let mut frames = seq.frames.clone();
        augment_occlude(&mut frames, 0, 1);
        assert_eq!(frames, seq.frames);
    }

    #[test]
    fn occlusion_places_the_placeholder_and_flags() {
        let mut frames = vec![MarkerFrame::fully_visible(vec![[0.2; 3]; 10], 0); 50];
        augment_occlude(&mut frames, 5, 3);
        let mut saw_occlusion = false;
        for f in &frames {
            for k in 0..10 {
                if f.occluded[k] {
                    saw_occlusion = true;
                    assert_eq!(f.positions[k], crate::types::OCCLUSION_PLACEHOLDER);
                } else {
                    assert_eq!(f.positions[k], [0.2; 3]);
                }
            }
        }
        assert!(saw_occlusion);
    }

    #[test]
    fn gap_ratio_lands_within_one_percent() {
        let pose = PoseGenerator { amplitude: 0.0, ..PoseGenerator::default() };
        let body = BodyModel::humanoid(8, pose, 2).unwrap();
        let mut seq = generate_sequence(&body, 5000).unwrap();
        introduce_gaps(&mut seq, 0.10, 17).unwrap();
        let occluded: usize = seq.frames.iter().map(|f| f.n_markers() - f.n_visible()).sum();
        let fraction = occluded as f64 / (5000.0 * 8.0);
        assert!((fraction - 0.10).abs() <= 0.01, "fraction {fraction}");
    }

    #[test]
    fn zero_ratio_leaves_the_sequence_alone() {
        let mut seq = generate_sequence(&walk_body(6, 2), 50).unwrap();
        let before = seq.frames.clone();
        introduce_gaps(&mut seq, 0.0, 17).unwrap();
        assert_eq!(seq.frames, before);
        assert!(introduce_gaps(&mut seq, 0.6, 17).is_err());
        assert!(introduce_gaps(&mut seq, -0.1, 17).is_err());
    }

    #[test]
    fn an_interior_gap_adds_one_trajectory() {
        let mut seq = generate_sequence(&walk_body(5, 2), 30).unwrap();
        let before = segment_trajectories(&seq.frames).unwrap();
        for t in 10..13 {
            seq.frames[t].occlude(2);
        }
        let after = segment_trajectories(&seq.frames).unwrap();
        assert_eq!(after.len(), before.len() + 1);
        let track2: Vec<_> = after.iter().filter(|t| t.track_id == 2).collect();
        assert_eq!(track2.len(), 2);
    }

    #[test]
    fn subject_splits_are_disjoint_and_sized() {
        let subjects: Vec<String> = (0..115).map(|k| format!("subject-{k}")).collect();
        let (train, val, test) = split_subjects(&subjects, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (69, 23, 23));
        let mut all: Vec<&String> = train.iter().chain(&val).chain(&test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 115);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let subjects: Vec<String> = (0..10).map(|k| k.to_string()).collect();
        assert!(split_subjects(&subjects, (0.5, 0.2, 0.2), 1).is_err());
        assert!(split_subjects(&subjects, (1.2, -0.1, -0.1), 1).is_err());
    }

    #[test]
    fn humanoid_validation() {
        assert!(BodyModel::humanoid(0, PoseGenerator::default(), 1).is_err());
        let bad_amp = PoseGenerator { amplitude: -1.0, ..PoseGenerator::default() };
        assert!(BodyModel::humanoid(5, bad_amp, 1).is_err());
        let bad_freq = PoseGenerator { frequency_hz: 0.0, ..PoseGenerator::default() };
        assert!(BodyModel::humanoid(5, bad_freq, 1).is_err());

        let mut body = BodyModel::humanoid(5, PoseGenerator::default(), 1).unwrap();
        body.skeleton[3].length = -0.1;
        assert!(body.validate().is_err());
        let mut body = BodyModel::humanoid(5, PoseGenerator::default(), 1).unwrap();
        body.markers[0].segment = 99;
        assert!(body.validate().is_err());
    }
}
