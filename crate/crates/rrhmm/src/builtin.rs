//! Built-in synthetic models used throughout the tests, experiments, and CLI.
//!
//! The three numeric examples are embedded verbatim as printed constants.
//! They are four-decimal roundings of exactly low-rank matrices, so loading
//! them involves two small adjustments, both at or below rounding level:
//! columns are renormalized to sum to exactly 1 (the second example's first
//! column sums to 1.0001 as printed), and when the nominal rank is below the
//! state count the matrix is projected onto the nearest rank-k stochastic
//! matrix (the discarded singular values are about 6e-6 and 2e-8). Without
//! the projection the exact-rank invariants cannot hold at double precision.
//!
//! Priors are not part of the printed parameters; every builtin uses the
//! stationary distribution of its transition matrix, which single-sequence
//! sampling requires anyway.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::hmm::{
    polygon_hmm, reduce_rank_stochastic, stationary_distribution, RrHmmParams, RANK_REL_TOL,
};
use crate::linalg;

/// 3 states, 3 observations, rank-2 transition matrix.
pub const EXAMPLE1_T: [[f64; 3]; 3] = [
    [0.3894, 0.2371, 0.3735],
    [0.2371, 0.4985, 0.2644],
    [0.3735, 0.2644, 0.3621],
];
pub const EXAMPLE1_O: [[f64; 3]; 3] = [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]];

/// 3 states, 2 observations, full-rank transition matrix. Not 1-step
/// observable: single symbols cannot disambiguate three states.
pub const EXAMPLE2_T: [[f64; 3]; 3] = [
    [0.6736, 0.0051, 0.1639],
    [0.0330, 0.8203, 0.2577],
    [0.2935, 0.1746, 0.5784],
];
pub const EXAMPLE2_O: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];

/// 4 states, 2 observations, rank-3 transition matrix. Low rank and not
/// 1-step observable at the same time.
pub const EXAMPLE3_T: [[f64; 4]; 4] = [
    [0.7829, 0.1036, 0.0399, 0.0736],
    [0.1036, 0.4237, 0.4262, 0.0465],
    [0.0399, 0.4262, 0.4380, 0.0959],
    [0.0736, 0.0465, 0.0959, 0.7840],
];
pub const EXAMPLE3_O: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];

fn transition_from_rows<const M: usize>(rows: &[[f64; M]; M]) -> DMatrix<f64> {
    DMatrix::from_fn(M, M, |i, j| rows[i][j])
}

/// Observation constants are stored one row per state (the per-state
/// distribution); as a matrix they become columns of the n x m observation
/// matrix.
fn observation_from_state_rows<const N: usize, const M: usize>(
    rows: &[[f64; N]; M],
) -> DMatrix<f64> {
    DMatrix::from_fn(N, M, |i, j| rows[j][i])
}

fn normalize_columns(a: &mut DMatrix<f64>) -> f64 {
    let mut max_adjust = 0.0f64;
    for j in 0..a.ncols() {
        let sum: f64 = a.column(j).sum();
        max_adjust = max_adjust.max((sum - 1.0).abs());
        for i in 0..a.nrows() {
            a[(i, j)] /= sum;
        }
    }
    max_adjust
}

fn build(mut t: DMatrix<f64>, mut o: DMatrix<f64>, rank: usize) -> Result<RrHmmParams> {
    normalize_columns(&mut t);
    normalize_columns(&mut o);
    if linalg::numerical_rank(&t, RANK_REL_TOL) != rank {
        t = reduce_rank_stochastic(&t, rank)?;
    }
    let pi = stationary_distribution(&t)?;
    RrHmmParams::new(t, o, pi, rank)
}

/// Rank-2 example (`m = 3`, `n = 3`, `k = 2`).
pub fn example1() -> RrHmmParams {
    build(
        transition_from_rows(&EXAMPLE1_T),
        observation_from_state_rows(&EXAMPLE1_O),
        2,
    )
    .expect("embedded example 1 is valid")
}

/// Full-rank 2-step-observable example (`m = 3`, `n = 2`, `k = 3`).
pub fn example2() -> RrHmmParams {
    build(
        transition_from_rows(&EXAMPLE2_T),
        observation_from_state_rows(&EXAMPLE2_O),
        3,
    )
    .expect("embedded example 2 is valid")
}

/// Low-rank 2-step-observable example (`m = 4`, `n = 2`, `k = 3`).
pub fn example3() -> RrHmmParams {
    build(
        transition_from_rows(&EXAMPLE3_T),
        observation_from_state_rows(&EXAMPLE3_O),
        3,
    )
    .expect("embedded example 3 is valid")
}

/// Resolve a builtin by name. `polygon` takes its state count from `m`.
pub fn by_name(name: &str, m: Option<usize>) -> Option<RrHmmParams> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        "example3" => Some(example3()),
        "polygon" => Some(polygon_hmm(m.unwrap_or(10))),
        _ => None,
    }
}

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["example1", "example2", "example3", "polygon"];
