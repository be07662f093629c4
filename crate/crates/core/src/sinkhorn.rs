//! Differentiable Sinkhorn normalization: alternating column and row
//! normalization that maps a positive score matrix toward the nearest
//! doubly-stochastic matrix, with an exact backward pass through the
//! unrolled iteration chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SquareMatrix;

/// Default number of column/row normalization pairs.
pub const DEFAULT_ITERATIONS: usize = 5;

/// Default denominator floor.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Number of normalization pairs, each column-then-row. Must be >= 1.
    pub iterations: usize,
    /// Floor applied to normalization denominators so all-zero rows or
    /// columns divide by `epsilon` instead of zero. Must be positive.
    /// Denominators above the floor are left untouched, which keeps
    /// permutation matrices exact fixed points.
    pub epsilon: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { iterations: DEFAULT_ITERATIONS, epsilon: DEFAULT_EPSILON }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "sinkhorn iterations must be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    Cols,
    Rows,
}

/// One recorded normalization step: the matrix it consumed and the raw
/// (unfloored) sums along the normalized axis.
#[derive(Debug, Clone)]
struct NormStep {
    axis: Axis,
    input: SquareMatrix,
    raw_sums: Vec<f64>,
}

/// Record of a forward pass, consumed by [`sinkhorn_backward`].
#[derive(Debug, Clone)]
pub struct SinkhornTape {
    epsilon: f64,
    steps: Vec<NormStep>,
}

fn normalize(input: &SquareMatrix, axis: Axis, epsilon: f64) -> (SquareMatrix, Vec<f64>) {
    let n = input.n();
    let raw_sums = match axis {
        Axis::Cols => input.col_sums(),
        Axis::Rows => input.row_sums(),
    };
    let mut out = input.clone();
    for i in 0..n {
        for j in 0..n {
            let s = match axis {
                Axis::Cols => raw_sums[j],
                Axis::Rows => raw_sums[i],
            };
            out[(i, j)] = input[(i, j)] / s.max(epsilon);
        }
    }
    (out, raw_sums)
}

/// Runs `config.iterations` column-then-row normalization pairs on a
/// non-negative matrix and records a tape for the backward pass.
///
/// A permutation matrix passes through unchanged, bit for bit: its row and
/// column sums are exactly 1, so every division is by 1.
pub fn sinkhorn_forward(
    input: &SquareMatrix,
    config: &SinkhornConfig,
) -> Result<(SquareMatrix, SinkhornTape)> {
    config.validate()?;
    if input.n() == 0 {
        return Err(Error::Dimension("sinkhorn input is 0x0".into()));
    }
    for (k, &v) in input.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "sinkhorn input entry {k} is not finite: {v}"
            )));
        }
        if v < 0.0 {
            return Err(Error::Domain(format!(
                "sinkhorn input entry {k} is negative: {v}"
            )));
        }
    }

    let mut tape = SinkhornTape { epsilon: config.epsilon, steps: Vec::with_capacity(2 * config.iterations) };
    let mut current = input.clone();
    for _ in 0..config.iterations {
        for axis in [Axis::Cols, Axis::Rows] {
            let (next, raw_sums) = normalize(&current, axis, config.epsilon);
            tape.steps.push(NormStep { axis, input: current, raw_sums });
            current = next;
        }
    }
    Ok((current, tape))
}

/// Propagates a gradient with respect to the forward output back to a
/// gradient with respect to the forward input.
///
/// For a column step `Y[i][j] = X[i][j] / c_j` with `c_j` above the floor,
/// `dL/dX[a][j] = (G[a][j] - sum_i G[i][j] * Y[i][j]) / c_j`; when the
/// denominator was floored it is a constant, so the correction term
/// disappears. Row steps are symmetric.
pub fn sinkhorn_backward(tape: &SinkhornTape, grad_output: &SquareMatrix) -> Result<SquareMatrix> {
    let Some(first) = tape.steps.first() else {
        return Err(Error::InvalidArgument("empty sinkhorn tape".into()));
    };
    let n = first.input.n();
    if grad_output.n() != n {
        return Err(Error::Dimension(format!(
            "gradient is {}x{} but the tape was recorded for {n}x{n}",
            grad_output.n(),
            grad_output.n()
        )));
    }

    let mut grad = grad_output.clone();
    for step in tape.steps.iter().rev() {
        let mut prev = SquareMatrix::zeros(n);
        match step.axis {
            Axis::Cols => {
                for j in 0..n {
                    let raw = step.raw_sums[j];
                    let c = raw.max(tape.epsilon);
                    let correction = if raw > tape.epsilon {
                        let mut dot = 0.0;
                        for i in 0..n {
                            dot += grad[(i, j)] * step.input[(i, j)] / c;
                        }
                        dot
                    } else {
                        0.0
                    };
                    for i in 0..n {
                        prev[(i, j)] = (grad[(i, j)] - correction) / c;
                    }
                }
            }
            Axis::Rows => {
                for i in 0..n {
                    let raw = step.raw_sums[i];
                    let r = raw.max(tape.epsilon);
                    let correction = if raw > tape.epsilon {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += grad[(i, j)] * step.input[(i, j)] / r;
                        }
                        dot
                    } else {
                        0.0
                    };
                    for j in 0..n {
                        prev[(i, j)] = (grad[(i, j)] - correction) / r;
                    }
                }
            }
        }
        grad = prev;
    }
    Ok(grad)
}

/// Sum of squared deviations of every row sum and column sum from 1.
/// Zero exactly on doubly-stochastic matrices.
pub fn dsm_residual(m: &SquareMatrix) -> f64 {
    m.row_sums()
        .iter()
        .chain(m.col_sums().iter())
        .map(|&s| (s - 1.0) * (s - 1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Permutation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positive(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
        let data = (0..n * n).map(|_| rng.gen_range(0.01..0.99)).collect();
        SquareMatrix::from_vec(n, data).unwrap()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    #[test]
    fn five_iterations_reach_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_positive(10, &mut rng);
            let (out, _) = sinkhorn_forward(&m, &SinkhornConfig::default()).unwrap();
            assert!(dsm_residual(&out) < 1e-6, "residual {}", dsm_residual(&out));
            assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn uniform_input_becomes_uniform_dsm() {
        let m = SquareMatrix::filled(2, 1.0);
        let (out, _) = sinkhorn_forward(&m, &SinkhornConfig::default()).unwrap();
        assert_eq!(out, SquareMatrix::filled(2, 0.5));
    }

    #[test]
    fn forward_is_scale_invariant_and_gradient_orthogonal_to_input() {
        // Normalization is homogeneous of degree zero, so scaling the input
        // leaves the output unchanged and any gradient has no component
        // along the input direction.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = SinkhornConfig::default();
        for _ in 0..10 {
            let m = random_positive(6, &mut rng);
            let scaled = SquareMatrix::from_vec(6, m.data().iter().map(|v| v * 7.3).collect())
                .unwrap();
            let (out, tape) = sinkhorn_forward(&m, &cfg).unwrap();
            let (out_scaled, _) = sinkhorn_forward(&scaled, &cfg).unwrap();
            assert!(out.max_abs_diff(&out_scaled).unwrap() < 1e-12);

            let weights = random_positive(6, &mut rng);
            let grad = sinkhorn_backward(&tape, &weights).unwrap();
            let along: f64 = grad.data().iter().zip(m.data()).map(|(g, x)| g * x).sum();
            let scale: f64 = grad.data().iter().map(|g| g * g).sum::<f64>().sqrt()
                * m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(along.abs() < 1e-10 * scale.max(1.0), "grad.m = {along}");
        }
    }

    #[test]
    fn output_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_positive(7, &mut rng);
        let (out, _) = sinkhorn_forward(&m, &SinkhornConfig::default()).unwrap();
        for s in out.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_matrices_are_exact_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = Permutation::random(8, &mut rng).to_matrix();
            let (out, _) = sinkhorn_forward(&p, &SinkhornConfig::default()).unwrap();
            assert_eq!(out, p);
        }
    }

    #[test]
    fn column_normalization_runs_first() {
        // [[4, 1], [0, 1]]: columns first gives [[1, 0.5], [0, 0.5]], then
        // rows give [[2/3, 1/3], [0, 1]]. Rows first would end elsewhere.
        let m = SquareMatrix::from_rows(&[vec![4.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let cfg = SinkhornConfig { iterations: 1, ..Default::default() };
        let (out, _) = sinkhorn_forward(&m, &cfg).unwrap();
        let expected =
            SquareMatrix::from_rows(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![0.0, 1.0]]).unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn symmetric_input_converges_in_one_iteration() {
        let m = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let cfg = SinkhornConfig { iterations: 1, ..Default::default() };
        let (out, _) = sinkhorn_forward(&m, &cfg).unwrap();
        let expected =
            SquareMatrix::from_rows(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]])
                .unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-15);
        assert!(dsm_residual(&out) < 1e-15);
    }

    #[test]
    fn zero_column_is_floored_not_nan() {
        let m = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let (out, tape) = sinkhorn_forward(&m, &SinkhornConfig::default()).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out[(0, 0)], 0.0);
        assert_eq!(out[(1, 0)], 0.0);
        let grad = sinkhorn_backward(&tape, &SquareMatrix::filled(2, 1.0)).unwrap();
        assert!(grad.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SinkhornConfig::default();
        for _ in 0..5 {
            let m = random_positive(5, &mut rng);
            let weights = random_positive(5, &mut rng);
            // Scalar objective: sum of weights * output entries.
            let (_, tape) = sinkhorn_forward(&m, &cfg).unwrap();
            let analytic = sinkhorn_backward(&tape, &weights).unwrap();

            let h = 1e-6;
            for i in 0..5 {
                for j in 0..5 {
                    let mut plus = m.clone();
                    plus[(i, j)] += h;
                    let mut minus = m.clone();
                    minus[(i, j)] -= h;
                    let (out_p, _) = sinkhorn_forward(&plus, &cfg).unwrap();
                    let (out_m, _) = sinkhorn_forward(&minus, &cfg).unwrap();
                    let objective = |out: &SquareMatrix| -> f64 {
                        out.data().iter().zip(weights.data()).map(|(o, w)| o * w).sum()
                    };
                    let numeric = (objective(&out_p) - objective(&out_m)) / (2.0 * h);
                    let err = relative_error(numeric, analytic[(i, j)]);
                    assert!(
                        err < 1e-5,
                        "entry ({i},{j}): numeric {numeric} vs analytic {}",
                        analytic[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs_and_configs() {
        let ok = SquareMatrix::filled(3, 0.5);
        let zero_iters = SinkhornConfig { iterations: 0, ..Default::default() };
        assert!(sinkhorn_forward(&ok, &zero_iters).is_err());
        let bad_eps = SinkhornConfig { epsilon: 0.0, ..Default::default() };
        assert!(sinkhorn_forward(&ok, &bad_eps).is_err());

        let mut negative = ok.clone();
        negative[(0, 0)] = -0.1;
        assert!(matches!(
            sinkhorn_forward(&negative, &SinkhornConfig::default()),
            Err(Error::Domain(_))
        ));
        let mut nan = ok.clone();
        nan[(1, 2)] = f64::NAN;
        assert!(matches!(
            sinkhorn_forward(&nan, &SinkhornConfig::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn residual_of_known_matrices() {
        assert_eq!(dsm_residual(&SquareMatrix::identity(4)), 0.0);
        // All-ones 2x2: four sums of 2, each deviating by 1.
        assert_eq!(dsm_residual(&SquareMatrix::filled(2, 1.0)), 4.0);
        // All-ones 3x3: six sums of 3, each deviating by 2.
        assert_eq!(dsm_residual(&SquareMatrix::filled(3, 1.0)), 24.0);
        let uniform = SquareMatrix::filled(5, 0.2);
        assert!(dsm_residual(&uniform) < 1e-28);
    }
}
