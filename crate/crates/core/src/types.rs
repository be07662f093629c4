//! Core data types shared across the pipeline: marker frames, permutations,
//! and dense square matrices.

use rand::seq::SliceRandom;
use rand::Rng;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Position stored for a marker while it is occluded, in normalized
/// coordinates (the center of the unit cube).
pub const OCCLUSION_PLACEHOLDER: [f64; 3] = [0.5, 0.5, 0.5];

/// One capture frame: a fixed-size set of marker positions plus an
/// occlusion flag per marker.
///
/// The marker order is the *track* order of the file or stream the frame
/// came from; labelling assigns each slot a label index. Occluded markers
/// keep their slot and carry a placeholder position once the frame has
/// been normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub positions: Vec<[f64; 3]>,
    pub occluded: Vec<bool>,
    pub frame_index: usize,
}

impl MarkerFrame {
    pub fn new(positions: Vec<[f64; 3]>, occluded: Vec<bool>, frame_index: usize) -> Result<Self> {
        if positions.len() != occluded.len() {
            return Err(Error::Dimension(format!(
                "frame {frame_index}: {} positions but {} occlusion flags",
                positions.len(),
                occluded.len()
            )));
        }
        Ok(MarkerFrame { positions, occluded, frame_index })
    }

    /// Frame with every marker visible.
    pub fn fully_visible(positions: Vec<[f64; 3]>, frame_index: usize) -> Self {
        let n = positions.len();
        MarkerFrame { positions, occluded: vec![false; n], frame_index }
    }

    pub fn n_markers(&self) -> usize {
        self.positions.len()
    }

    pub fn n_visible(&self) -> usize {
        self.occluded.iter().filter(|&&o| !o).count()
    }

    /// Marks marker `k` occluded and replaces its position with the
    /// placeholder.
    pub fn occlude(&mut self, k: usize) {
        self.occluded[k] = true;
        self.positions[k] = OCCLUSION_PLACEHOLDER;
    }
}

/// A bijection on marker indices.
///
/// `mapping[k]` is the index the k-th output slot reads from, so applying
/// a permutation to a frame gives `out[k] = in[mapping[k]]`. The same
/// convention serves as a labelling: when a frame has been labelled,
/// `mapping[k]` is the label index of track slot `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation { mapping: (0..n).collect() }
    }

    /// Validates that `mapping` is a bijection on `0..len`.
    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n {
                return Err(Error::InvalidArgument(format!(
                    "permutation entry {m} out of range for size {n}"
                )));
            }
            if seen[m] {
                return Err(Error::InvalidArgument(format!(
                    "permutation entry {m} appears more than once"
                )));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping })
    }

    /// Uniformly random permutation (Fisher-Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (k, &m) in self.mapping.iter().enumerate() {
            inv[m] = k;
        }
        Permutation { mapping: inv }
    }

    /// Composition with `self` applied last: the result maps
    /// `k -> other.mapping[self.mapping[k]]`, so applying it to a frame
    /// equals applying `other` first and `self` second, and
    /// `r.to_matrix() == self.to_matrix() * other.to_matrix()`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "composing permutations of sizes {} and {}",
                self.len(),
                other.len()
            )));
        }
        let mapping = self.mapping.iter().map(|&k| other.mapping[k]).collect();
        Ok(Permutation { mapping })
    }

    /// Permutation matrix with `P[i][j] = 1` iff `j == mapping[i]`, so
    /// left-multiplying a vector applies the permutation:
    /// `(P x)[i] = x[mapping[i]]`.
    pub fn to_matrix(&self) -> SquareMatrix {
        let n = self.mapping.len();
        let mut m = SquareMatrix::zeros(n);
        for (i, &j) in self.mapping.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

impl Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, k: usize) -> &usize {
        &self.mapping[k]
    }
}

/// Applies `p` to a frame: output slot `k` takes the position and occlusion
/// flag of input slot `p[k]`.
pub fn apply_permutation(frame: &MarkerFrame, p: &Permutation) -> Result<MarkerFrame> {
    if frame.n_markers() != p.len() {
        return Err(Error::Dimension(format!(
            "permutation of size {} applied to frame with {} markers",
            p.len(),
            frame.n_markers()
        )));
    }
    let positions = p.mapping().iter().map(|&m| frame.positions[m]).collect();
    let occluded = p.mapping().iter().map(|&m| frame.occluded[m]).collect();
    Ok(MarkerFrame { positions, occluded, frame_index: frame.frame_index })
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        SquareMatrix { n, data: vec![value; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, s) in sums.iter_mut().enumerate() {
                *s += self[(i, j)];
            }
        }
        sums
    }

    pub fn transpose(&self) -> SquareMatrix {
        let mut t = SquareMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.n != other.n {
            return Err(Error::Dimension(format!(
                "multiplying {}x{} by {}x{}",
                self.n, self.n, other.n, other.n
            )));
        }
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entry-wise difference; sizes must match.
    pub fn max_abs_diff(&self, other: &SquareMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::Dimension(format!(
                "comparing {}x{} with {}x{}",
                self.n, self.n, other.n, other.n
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Output of labelling a single frame: the decoded assignment, the
/// doubly-stochastic relaxation it was decoded from, and a per-marker
/// confidence in `[0, 1]`.
///
/// `permutation[k]` is the label index assigned to track slot `k`, and
/// `confidences[k]` is the margin-based confidence of that assignment.
#[derive(Debug, Clone)]
pub struct LabelledFrameResult {
    pub permutation: Permutation,
    pub dsm: SquareMatrix,
    pub confidences: Vec<f64>,
    pub frame_index: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_new_checks_lengths() {
        let err = MarkerFrame::new(vec![[0.0; 3]; 3], vec![false; 2], 0);
        assert!(err.is_err());
    }

    #[test]
    fn occlude_sets_placeholder() {
        let mut f = MarkerFrame::fully_visible(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], 7);
        f.occlude(1);
        assert!(f.occluded[1]);
        assert_eq!(f.positions[1], OCCLUSION_PLACEHOLDER);
        assert_eq!(f.n_visible(), 1);
    }

    #[test]
    fn from_mapping_rejects_non_bijections() {
        assert!(Permutation::from_mapping(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_mapping(vec![0, 3, 1]).is_err());
        assert!(Permutation::from_mapping(vec![2, 0, 1]).is_ok());
    }

    #[test]
    fn inverse_round_trip() {
        let p = Permutation::from_mapping(vec![2, 0, 3, 1]).unwrap();
        let inv = p.inverse();
        assert_eq!(p.compose(&inv).unwrap(), Permutation::identity(4));
        assert_eq!(inv.compose(&p).unwrap(), Permutation::identity(4));
    }

    #[test]
    fn apply_then_inverse_recovers_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = MarkerFrame::fully_visible(
            (0..6).map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect(),
            11,
        );
        for _ in 0..20 {
            let p = Permutation::random(6, &mut rng);
            let shuffled = apply_permutation(&frame, &p).unwrap();
            let restored = apply_permutation(&shuffled, &p.inverse()).unwrap();
            assert_eq!(restored, frame);
        }
    }

    #[test]
    fn apply_moves_occlusion_flags_with_positions() {
        let mut frame = MarkerFrame::fully_visible(vec![[0.0; 3], [1.0; 3], [2.0; 3]], 0);
        frame.occlude(2);
        let p = Permutation::from_mapping(vec![2, 0, 1]).unwrap();
        let out = apply_permutation(&frame, &p).unwrap();
        assert_eq!(out.occluded, vec![true, false, false]);
        assert_eq!(out.positions[0], OCCLUSION_PLACEHOLDER);
        assert_eq!(out.positions[1], [0.0; 3]);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let p = Permutation::random(5, &mut rng);
            let q = Permutation::random(5, &mut rng);
            let composed = p.compose(&q).unwrap().to_matrix();
            let product = p.to_matrix().matmul(&q.to_matrix()).unwrap();
            assert_eq!(composed.max_abs_diff(&product).unwrap(), 0.0);
        }
    }

    #[test]
    fn compose_order_matches_sequential_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let frame = MarkerFrame::fully_visible(
            (0..5).map(|i| [i as f64, 0.0, 1.0]).collect(),
            0,
        );
        for _ in 0..20 {
            let first = Permutation::random(5, &mut rng);
            let second = Permutation::random(5, &mut rng);
            let step = apply_permutation(&apply_permutation(&frame, &first).unwrap(), &second)
                .unwrap();
            let fused = apply_permutation(&frame, &second.compose(&first).unwrap()).unwrap();
            assert_eq!(step, fused);
        }
    }

    #[test]
    fn permutation_matrix_is_orthogonal_binary() {
        let p = Permutation::from_mapping(vec![1, 3, 0, 2]).unwrap();
        let m = p.to_matrix();
        for &v in m.data() {
            assert!(v == 0.0 || v == 1.0);
        }
        assert!(m.row_sums().iter().all(|&s| s == 1.0));
        assert!(m.col_sums().iter().all(|&s| s == 1.0));
        let prod = m.matmul(&m.transpose()).unwrap();
        assert_eq!(prod.max_abs_diff(&SquareMatrix::identity(4)).unwrap(), 0.0);
    }

    #[test]
    fn transpose_of_permutation_matrix_is_inverse() {
        let p = Permutation::from_mapping(vec![3, 1, 0, 2]).unwrap();
        assert_eq!(
            p.to_matrix().transpose().max_abs_diff(&p.inverse().to_matrix()).unwrap(),
            0.0
        );
    }

    #[test]
    fn matmul_identity() {
        let m = SquareMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        let id = SquareMatrix::identity(3);
        assert_eq!(m.matmul(&id).unwrap(), m);
        assert_eq!(id.matmul(&m).unwrap(), m);
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        assert!(SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(SquareMatrix::from_vec(2, vec![0.0; 3]).is_err());
    }
}
