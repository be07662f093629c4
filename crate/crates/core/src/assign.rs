//! Hard assignment decoding: projects a doubly-stochastic score matrix onto
//! the permutation that maximizes the total selected score, via the
//! Hungarian algorithm in O(N^3), plus an exhaustive reference decoder for
//! small sizes.

use crate::error::{Error, Result};
use crate::types::{Permutation, SquareMatrix};

/// Largest size [`brute_force_decode`] accepts (N! grows too fast beyond).
pub const BRUTE_FORCE_MAX: usize = 8;

/// A decoded assignment. `permutation[j]` is the label given to track
/// slot `j`, and `total_score` is the sum of the selected matrix entries
/// `sum_j d[permutation[j]][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Permutation,
    pub total_score: f64,
}

fn validate_input(d: &SquareMatrix) -> Result<()> {
    if d.n() == 0 {
        return Err(Error::Dimension("cannot decode a 0x0 matrix".into()));
    }
    for (k, &v) in d.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "assignment input entry {k} is not finite: {v}"
            )));
        }
    }
    Ok(())
}

/// Cost of assigning label `i` to track `j`: scores are in [0, 1]-ish
/// range, so `1 - score` turns maximization into minimization.
fn cost_matrix(d: &SquareMatrix) -> Vec<Vec<f64>> {
    let n = d.n();
    (0..n)
        .map(|track| (0..n).map(|label| 1.0 - d[(label, track)]).collect())
        .collect()
}

fn total_score(d: &SquareMatrix, mapping: &[usize]) -> f64 {
    mapping.iter().enumerate().map(|(track, &label)| d[(label, track)]).sum()
}

/// Hungarian algorithm with row/column potentials. `cost[r][c]` is the
/// cost of pairing row `r` with column `c`; returns the column matched to
/// each row. Indices are shifted by one internally so index 0 can serve
/// as the scratch row/column of the augmenting search.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}

/// Swaps pairs of assignments that are exactly cost-neutral until the
/// mapping is pairwise lexicographically minimal. Ties between optimal
/// assignments (uniform score regions, duplicate columns) therefore decode
/// to one deterministic representative instead of an arbitrary one.
fn canonicalize_ties(cost: &[Vec<f64>], mapping: &mut [usize]) {
    let n = mapping.len();
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in (a + 1)..n {
                let (la, lb) = (mapping[a], mapping[b]);
                if lb < la {
                    let current = cost[a][la] + cost[b][lb];
                    let swapped = cost[a][lb] + cost[b][la];
                    if swapped == current {
                        mapping[a] = lb;
                        mapping[b] = la;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Decodes the score matrix to the permutation maximizing the total
/// selected score, in O(N^3).
pub fn decode(d: &SquareMatrix) -> Result<AssignmentResult> {
    validate_input(d)?;
    let cost = cost_matrix(d);
    let mut mapping = hungarian_min(&cost);
    canonicalize_ties(&cost, &mut mapping);
    let score = total_score(d, &mapping);
    Ok(AssignmentResult { permutation: Permutation::from_mapping(mapping)?, total_score: score })
}

/// Reference decoder: tries every permutation in lexicographic order and
/// keeps the strictly best, so ties resolve to the lexicographically
/// smallest mapping. Only for `n <= BRUTE_FORCE_MAX`.
pub fn brute_force_decode(d: &SquareMatrix) -> Result<AssignmentResult> {
    validate_input(d)?;
    let n = d.n();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::InvalidArgument(format!(
            "brute-force decode supports up to {BRUTE_FORCE_MAX} markers, got {n}"
        )));
    }

    let mut used = vec![false; n];
    let mut current = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;

    fn search(
        d: &SquareMatrix,
        track: usize,
        used: &mut [bool],
        current: &mut [usize],
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let n = d.n();
        if track == n {
            let score = total_score(d, current);
            let better = match best {
                None => true,
                Some((b, _)) => score > *b,
            };
            if better {
                *best = Some((score, current.to_vec()));
            }
            return;
        }
        for label in 0..n {
            if used[label] {
                continue;
            }
            used[label] = true;
            current[track] = label;
            search(d, track + 1, used, current, best);
            used[label] = false;
        }
    }

    search(d, 0, &mut used, &mut current, &mut best);
    let (_, mapping) = best.expect("n >= 1 always yields an assignment");
    let score = total_score(d, &mapping);
    Ok(AssignmentResult { permutation: Permutation::from_mapping(mapping)?, total_score: score })
}
