//! Pose normalization: maps a raw marker cloud into the unit cube in a
//! body-centric orientation so the network never sees absolute position,
//! orientation, or scale.
//!
//! The visible markers are centered on their centroid and rotated into the
//! principal-component basis (first component to z, second to x, their
//! cross product to y), then min-max scaled per axis to [0, 1]. Principal
//! axes get their signs fixed by the third moment of the point cloud along
//! each axis, so the basis cannot flip between frames of a moving body
//! with asymmetric marker placement.

use crate::error::{Error, Result};
use crate::types::{MarkerFrame, OCCLUSION_PLACEHOLDER};

/// Normalization needs at least this many visible markers to produce a
/// stable basis.
pub const MIN_VISIBLE_MARKERS: usize = 4;

/// Smallest allowed ratio between the weakest and strongest principal
/// variance; below it the cloud is treated as collinear or coplanar.
const MIN_VARIANCE_RATIO: f64 = 1e-9;

/// Everything needed to undo a normalization: `q = scale((R (p - centroid)))`
/// per visible marker, where `rotation` holds the world-space basis vectors
/// of the normalized x, y, z axes as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationRecord {
    pub centroid: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub axis_min: [f64; 3],
    pub axis_max: [f64; 3],
}

impl NormalizationRecord {
    /// Raw world position to normalized coordinates.
    pub fn normalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        let centered = sub(p, self.centroid);
        let rotated = [
            dot(self.rotation[0], centered),
            dot(self.rotation[1], centered),
            dot(self.rotation[2], centered),
        ];
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (rotated[a] - self.axis_min[a]) / (self.axis_max[a] - self.axis_min[a]);
        }
        out
    }

    /// Normalized coordinates back to a raw world position.
    pub fn denormalize_point(&self, q: [f64; 3]) -> [f64; 3] {
        let mut rotated = [0.0; 3];
        for a in 0..3 {
            rotated[a] = q[a] * (self.axis_max[a] - self.axis_min[a]) + self.axis_min[a];
        }
        // rotation is orthonormal, so its transpose inverts it.
        let mut p = self.centroid;
        for a in 0..3 {
            for (w, r) in p.iter_mut().zip(self.rotation[a]) {
                *w += rotated[a] * r;
            }
        }
        p
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Eigendecomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching unit eigenvectors
/// as rows.
fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    // v accumulates rotations; its columns end up as eigenvectors.
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let frob_sq: f64 = a.iter().flatten().map(|x| x * x).sum();
    let tol = frob_sq * 1e-30 + f64::MIN_POSITIVE;

    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off <= tol {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            let apq = a[p][q];
            let app = a[p][p];
            let aqq = a[q][q];
            a[p][p] = app - t * apq;
            a[q][q] = aqq + t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for k in 0..3 {
                if k != p && k != q {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[p][k] = a[k][p];
                    a[k][q] = s * akp + c * akq;
                    a[q][k] = a[k][q];
                }
                let vkp = v[k][p];
                let vkq = v[k][q];
                v[k][p] = c * vkp - s * vkq;
                v[k][q] = s * vkp + c * vkq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap().then(x.cmp(&y)));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vectors = [[0.0; 3]; 3];
    for (row, &col) in order.iter().enumerate() {
        for k in 0..3 {
            vectors[row][k] = v[k][col];
        }
    }
    (values, vectors)
}

/// Flips `axis` if the point cloud's third moment along it is negative, so
/// the axis points toward the heavier tail. A cloud with exactly zero skew
/// falls back to the sign of the axis component largest in magnitude.
fn orient_axis(axis: [f64; 3], centered: &[[f64; 3]]) -> [f64; 3] {
    let moment: f64 = centered.iter().map(|&p| dot(axis, p).powi(3)).sum();
    if moment > 0.0 {
        return axis;
    }
    if moment < 0.0 {
        return scale3(axis, -1.0);
    }
    let mut lead = 0;
    for k in 1..3 {
        if axis[k].abs() > axis[lead].abs() {
            lead = k;
        }
    }
    if axis[lead] < 0.0 {
        scale3(axis, -1.0)
    } else {
        axis
    }
}

/// Normalizes a frame into the unit cube.
///
/// Only visible markers shape the basis and the scaling; occluded slots
/// come out carrying [`OCCLUSION_PLACEHOLDER`]. Fails when fewer than
/// [`MIN_VISIBLE_MARKERS`] markers are visible or when the visible cloud is
/// degenerate (coincident, collinear, or coplanar points).
pub fn normalize_frame(frame: &MarkerFrame) -> Result<(MarkerFrame, NormalizationRecord)> {
    let visible: Vec<[f64; 3]> = frame
        .positions
        .iter()
        .zip(&frame.occluded)
        .filter(|(_, &occ)| !occ)
        .map(|(&p, _)| p)
        .collect();
    let m = visible.len();
    if m < MIN_VISIBLE_MARKERS {
        return Err(Error::DegenerateFrame(format!(
            "frame {}: {m} visible markers, need at least {MIN_VISIBLE_MARKERS}",
            frame.frame_index
        )));
    }
    for (k, p) in visible.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "frame {}: visible marker {k} has non-finite position",
                frame.frame_index
            )));
        }
    }

    let mut centroid = [0.0; 3];
    for p in &visible {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    centroid = scale3(centroid, 1.0 / m as f64);
    let centered: Vec<[f64; 3]> = visible.iter().map(|&p| sub(p, centroid)).collect();

    let mut cov = [[0.0; 3]; 3];
    for p in &centered {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += p[i] * p[j];
            }
        }
    }
    for row in &mut cov {
        for x in row {
            *x /= m as f64;
        }
    }

    let (values, vectors) = symmetric_eigen3(cov);
    if values[0] <= 0.0 || values[2] <= values[0] * MIN_VARIANCE_RATIO {
        return Err(Error::DegenerateFrame(format!(
            "frame {}: principal variances {values:?} leave no stable 3-d basis",
            frame.frame_index
        )));
    }

    let z_axis = orient_axis(vectors[0], &centered);
    let x_axis = orient_axis(vectors[1], &centered);
    let y_axis = cross(z_axis, x_axis);
    let rotation = [x_axis, y_axis, z_axis];

    let rotated: Vec<[f64; 3]> = centered
        .iter()
        .map(|&p| [dot(x_axis, p), dot(y_axis, p), dot(z_axis, p)])
        .collect();

    let mut axis_min = [f64::INFINITY; 3];
    let mut axis_max = [f64::NEG_INFINITY; 3];
    for p in &rotated {
        for a in 0..3 {
            axis_min[a] = axis_min[a].min(p[a]);
            axis_max[a] = axis_max[a].max(p[a]);
        }
    }
    for a in 0..3 {
        if !(axis_max[a] > axis_min[a]) {
            return Err(Error::DegenerateFrame(format!(
                "frame {}: zero extent along normalized axis {a}",
                frame.frame_index
            )));
        }
    }

    let record = NormalizationRecord { centroid, rotation, axis_min, axis_max };
    let mut positions = Vec::with_capacity(frame.n_markers());
    let mut rotated_iter = rotated.into_iter();
    for &occ in &frame.occluded {
        if occ {
            positions.push(OCCLUSION_PLACEHOLDER);
        } else {
            let p = rotated_iter.next().expect("one rotated point per visible marker");
            let mut q = [0.0; 3];
            for a in 0..3 {
                q[a] = (p[a] - axis_min[a]) / (axis_max[a] - axis_min[a]);
            }
            positions.push(q);
        }
    }

    let normalized =
        MarkerFrame { positions, occluded: frame.occluded.clone(), frame_index: frame.frame_index };
    Ok((normalized, record))
}

/// Maps a normalized frame back to raw world coordinates. Occluded slots
/// have no recoverable position and keep the placeholder.
pub fn denormalize_frame(frame: &MarkerFrame, record: &NormalizationRecord) -> Result<MarkerFrame> {
    for a in 0..3 {
        if !(record.axis_max[a] > record.axis_min[a]) {
            return Err(Error::InvalidArgument(format!(
                "normalization record has empty extent along axis {a}"
            )));
        }
    }
    let positions = frame
        .positions
        .iter()
        .zip(&frame.occluded)
        .map(|(&q, &occ)| if occ { OCCLUSION_PLACEHOLDER } else { record.denormalize_point(q) })
        .collect();
    Ok(MarkerFrame {
        positions,
        occluded: frame.occluded.clone(),
        frame_index: frame.frame_index,
    })
}
