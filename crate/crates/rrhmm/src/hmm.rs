//! Exact reduced-rank HMM representation and the forward-algorithm oracle.
//!
//! A reduced-rank HMM has `m` latent states, `n` discrete observations, and a
//! column-stochastic transition matrix of rank `k <= m`, factored as
//! `T = R * S` with `R` of shape `m x k`. Belief dynamics therefore live in a
//! k-dimensional subspace. This module holds the high-dimensional ground
//! truth: it validates models, samples data from them, and computes exact
//! sequence probabilities and filtered states, which the learned
//! low-dimensional models are verified against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{categorical, stream_rng};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Column sums and the prior must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Maximum entrywise error allowed when reconstructing `T` from its factors.
pub const FACTOR_MAX_ERR: f64 = 1e-10;

const STATIONARY_TOL: f64 = 1e-13;
const STATIONARY_MAX_ITERS: usize = 1_000_000;
const RESTART_CHUNK: usize = 8192;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Ground-truth parameters of a reduced-rank HMM.
///
/// `transition` is `m x m` column-stochastic with `transition[(i, j)] =
/// Pr[h_{t+1} = i | h_t = j]`; `observation` is `n x m` column-stochastic with
/// `observation[(x-1, j)] = Pr[x_t = x | h_t = j]`; `prior` is the initial
/// state distribution. The low-rank factors satisfy
/// `transition = expand * project` with `expand` scaled so its induced 1-norm
/// is at most 1.
#[derive(Debug, Clone)]
pub struct RrHmmParams {
    m: usize,
    n: usize,
    rank: usize,
    transition: DMatrix<f64>,
    observation: DMatrix<f64>,
    prior: DVector<f64>,
    expand: DMatrix<f64>,
    project: DMatrix<f64>,
}

impl RrHmmParams {
    /// Validate the matrices and factor the transition at the default rank
    /// tolerance.
    pub fn new(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        prior: DVector<f64>,
        rank: usize,
    ) -> Result<Self> {
        Self::with_rank_tol(transition, observation, prior, rank, RANK_REL_TOL)
    }

    /// As [`RrHmmParams::new`] with an explicit relative singular-value
    /// threshold for the rank check.
    pub fn with_rank_tol(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        prior: DVector<f64>,
        rank: usize,
        rank_tol: f64,
    ) -> Result<Self> {
        let m = transition.nrows();
        if transition.ncols() != m || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "transition must be square and non-empty, got {}x{}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        let n = observation.nrows();
        if observation.ncols() != m || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "observation must be n x {m}, got {}x{}",
                observation.nrows(),
                observation.ncols()
            )));
        }
        if prior.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "prior length {} != state count {m}",
                prior.len()
            )));
        }
        if rank == 0 || rank > m {
            return Err(Error::RankMismatch {
                expected: rank,
                found: linalg::numerical_rank(&transition, rank_tol),
            });
        }
        check_column_stochastic(&transition, "transition")?;
        check_column_stochastic(&observation, "observation")?;
        let prior_sum: f64 = prior.iter().sum();
        if (prior_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic(format!(
                "prior sums to {prior_sum}, expected 1"
            )));
        }
        if prior.iter().any(|&p| p <= 0.0) {
            return Err(Error::NotStochastic(
                "prior must be entrywise positive".into(),
            ));
        }
        let (expand, project) = factorize_transition(&transition, rank, rank_tol)?;
        Ok(Self {
            m,
            n,
            rank,
            transition,
            observation,
            prior,
            expand,
            project,
        })
    }

    pub fn state_count(&self) -> usize {
        self.m
    }

    pub fn obs_count(&self) -> usize {
        self.n
    }

    /// Rank of the transition matrix (the dimension the dynamics live in).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn prior(&self) -> &DVector<f64> {
        &self.prior
    }

    /// The `m x k` factor mapping low-dimensional states back to state space.
    pub fn expand_factor(&self) -> &DMatrix<f64> {
        &self.expand
    }

    /// The `k x m` factor projecting state distributions down.
    pub fn project_factor(&self) -> &DMatrix<f64> {
        &self.project
    }

    fn check_symbol(&self, x: usize) -> Result<()> {
        if x == 0 || x > self.n {
            Err(Error::SymbolOutOfRange {
                symbol: x,
                n: self.n,
            })
        } else {
            Ok(())
        }
    }

    /// Apply the per-symbol state operator `A_x = T diag(O_{x,.})` to `v`.
    fn apply_state_operator(&self, x: usize, v: &DVector<f64>) -> DVector<f64> {
        let mut weighted = v.clone();
        for j in 0..self.m {
            weighted[j] *= self.observation[(x - 1, j)];
        }
        &self.transition * weighted
    }

    /// The `k x k` low-dimensional operator `W_x = S diag(O_{x,.}) R`.
    pub fn low_rank_operator(&self, x: usize) -> Result<DMatrix<f64>> {
        self.check_symbol(x)?;
        let mut weighted = self.expand.clone();
        for j in 0..self.m {
            let w = self.observation[(x - 1, j)];
            for c in 0..self.rank {
                weighted[(j, c)] *= w;
            }
        }
        Ok(&self.project * weighted)
    }

    /// Least-squares coordinates of the prior in the column space of the
    /// expand factor, together with the residual norm. The residual is zero
    /// (to rounding) whenever the prior is stationary, since `pi = T pi`
    /// already lies in that column space.
    pub fn low_rank_prior(&self) -> (DVector<f64>, f64) {
        linalg::lstsq(&self.expand, &self.prior)
    }

    /// How far the prior is from being stationary, as `||T pi - pi||_1`.
    pub fn stationarity_defect(&self) -> f64 {
        (&self.transition * &self.prior - &self.prior).abs().sum()
    }

    /// Serialize as JSON with fields `{m, n, k, T, O, pi}` (row-major nested
    /// arrays). The factors are recomputed on load.
    pub fn to_json(&self) -> Result<String> {
        let file = ParamsFile {
            m: self.m,
            n: self.n,
            k: self.rank,
            transition: matrix_rows(&self.transition),
            observation: matrix_rows(&self.observation),
            pi: self.prior.iter().cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text)?;
        let transition = matrix_from_rows(&file.transition, file.m, file.m, "T")?;
        let observation = matrix_from_rows(&file.observation, file.n, file.m, "O")?;
        if file.pi.len() != file.m {
            return Err(Error::InvalidModel(format!(
                "pi length {} != m {}",
                file.pi.len(),
                file.m
            )));
        }
        Self::new(transition, observation, DVector::from_vec(file.pi), file.k)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    m: usize,
    n: usize,
    k: usize,
    #[serde(rename = "T")]
    transition: Vec<Vec<f64>>,
    #[serde(rename = "O")]
    observation: Vec<Vec<f64>>,
    pi: Vec<f64>,
}

fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidModel(format!(
            "{name} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn check_column_stochastic(a: &DMatrix<f64>, name: &str) -> Result<()> {
    for j in 0..a.ncols() {
        let col = a.column(j);
        if col.iter().any(|&v| v < -STOCHASTIC_TOL) {
            return Err(Error::NotStochastic(format!(
                "{name} column {j} has a negative entry"
            )));
        }
        let sum: f64 = col.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic(format!(
                "{name} column {j} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// Split a column-stochastic `T` of numerical rank `k` into `T = R * S`.
///
/// Uses the thin SVD, `R = U_k Sigma_k` and `S = V_k^T`, then rescales by
/// `c = ||R||_1` so `||R||_1 <= 1` afterwards. Fails with `RankMismatch` when
/// the numerical rank at `rel_tol` is not exactly `k`.
pub fn factorize_transition(
    t: &DMatrix<f64>,
    k: usize,
    rel_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_column_stochastic(t, "transition")?;
    let found = linalg::numerical_rank(t, rel_tol);
    if found != k {
        return Err(Error::RankMismatch { expected: k, found });
    }
    let m = t.nrows();
    let svd = t.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut expand = DMatrix::zeros(m, k);
    let mut project = DMatrix::zeros(k, m);
    for c in 0..k {
        let s = svd.singular_values[c];
        for i in 0..m {
            expand[(i, c)] = u[(i, c)] * s;
        }
        for j in 0..m {
            project[(c, j)] = vt[(c, j)];
        }
    }
    let scale = linalg::norm_l1(&expand);
    if scale > 0.0 {
        expand /= scale;
        project *= scale;
    }
    Ok((expand, project))
}

/// Project a column-stochastic matrix onto the nearest rank-`k` matrix and
/// renormalize its columns so it is exactly rank `k` and exactly stochastic.
///
/// Intended for matrices that are roundings of an exactly low-rank original;
/// the adjustment is on the order of the discarded singular values. Fails if
/// the truncation drives any entry negative.
pub fn reduce_rank_stochastic(t: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_column_stochastic(t, "transition")?;
    let m = t.nrows();
    if k == 0 || k > m {
        return Err(Error::RankMismatch {
            expected: k,
            found: linalg::numerical_rank(t, RANK_REL_TOL),
        });
    }
    let svd = t.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut truncated = DMatrix::zeros(m, m);
    for c in 0..k {
        let s = svd.singular_values[c];
        for i in 0..m {
            for j in 0..m {
                truncated[(i, j)] += s * u[(i, c)] * vt[(c, j)];
            }
        }
    }
    for j in 0..m {
        let sum: f64 = truncated.column(j).sum();
        if sum <= 0.0 {
            return Err(Error::NotStochastic(format!(
                "rank-{k} truncation zeroed column {j}"
            )));
        }
        for i in 0..m {
            truncated[(i, j)] /= sum;
        }
    }
    if truncated.iter().any(|&v| v < 0.0) {
        return Err(Error::NotStochastic(
            "rank truncation produced a negative entry".into(),
        ));
    }
    Ok(truncated)
}

// ---------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------

/// One validated condition: whether it holds and the scalar that was measured.
#[derive(Debug, Clone, Copy)]
pub struct ConditionCheck {
    pub passed: bool,
    pub measured: f64,
}

/// Report of the learnability conditions on a model.
///
/// Validation never fails; every condition is reported with the measured
/// quantity so a caller can see how close a model is to the boundary.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// Minimum prior entry; must be strictly positive.
    pub prior_positive: ConditionCheck,
    /// Numerical rank of the transition matrix; must equal `k`.
    pub transition_rank: ConditionCheck,
    /// Numerical rank of the observation matrix; must be at least `k`.
    pub observation_rank: ConditionCheck,
    /// Induced 1-norm of the expand factor; must be at most 1.
    pub expand_l1: ConditionCheck,
    /// Smallest column 2-norm of the expand factor; some column must be
    /// at most `sqrt(k/m)`.
    pub expand_uniform_column: ConditionCheck,
    /// `sigma_k(U^T O R)`; only populated when a projection `U` is supplied.
    pub projected_observation: Option<ConditionCheck>,
    /// `sigma_k(S diag(pi) O^T)`; the factor ranges must overlap.
    pub overlap_rank: ConditionCheck,
}

impl ConditionReport {
    /// True when every populated condition passed.
    pub fn all_passed(&self) -> bool {
        let base = self.prior_positive.passed
            && self.transition_rank.passed
            && self.observation_rank.passed
            && self.expand_l1.passed
            && self.expand_uniform_column.passed
            && self.overlap_rank.passed;
        base && self.projected_observation.is_none_or(|c| c.passed)
    }
}

/// Absolute threshold below which `sigma_k(U^T O R)` counts as singular.
pub const PROJECTED_SINGULAR_TOL: f64 = 1e-8;

/// Measure the learnability conditions of `params`, optionally against a
/// candidate projection `U` (any column-orthonormal matrix with `n` rows).
pub fn validate(params: &RrHmmParams, u: Option<&DMatrix<f64>>) -> ConditionReport {
    let k = params.rank;
    let m = params.m;
    let min_prior = params.prior.min();
    let t_rank = linalg::numerical_rank(&params.transition, RANK_REL_TOL);
    let o_rank = linalg::numerical_rank(&params.observation, RANK_REL_TOL);
    let l1 = linalg::norm_l1(&params.expand);
    let min_col = (0..k)
        .map(|c| params.expand.column(c).norm())
        .fold(f64::INFINITY, f64::min);
    let uniform_bound = (k as f64 / m as f64).sqrt();

    let projected_observation = u.map(|u| {
        let map = u.transpose() * &params.observation * &params.expand;
        let s = linalg::sigma(&map, k);
        ConditionCheck {
            passed: s > PROJECTED_SINGULAR_TOL,
            measured: s,
        }
    });

    let overlap =
        &params.project * DMatrix::from_diagonal(&params.prior) * params.observation.transpose();
    let overlap_sigma = linalg::sigma(&overlap, k);
    let overlap_rank_count = linalg::numerical_rank(&overlap, RANK_REL_TOL);

    ConditionReport {
        prior_positive: ConditionCheck {
            passed: min_prior > 0.0,
            measured: min_prior,
        },
        transition_rank: ConditionCheck {
            passed: t_rank == k,
            measured: t_rank as f64,
        },
        observation_rank: ConditionCheck {
            passed: o_rank >= k,
            measured: o_rank as f64,
        },
        expand_l1: ConditionCheck {
            passed: l1 <= 1.0 + 1e-12,
            measured: l1,
        },
        expand_uniform_column: ConditionCheck {
            passed: min_col <= uniform_bound + 1e-12,
            measured: min_col,
        },
        projected_observation,
        overlap_rank: ConditionCheck {
            passed: overlap_rank_count == k,
            measured: overlap_sigma,
        },
    }
}

// ---------------------------------------------------------------------------
// Stationary distribution
// ---------------------------------------------------------------------------

/// Stationary distribution of a column-stochastic matrix by power iteration
/// from the uniform vector, stopping when successive iterates differ by less
/// than 1e-13 in L1.
pub fn stationary_distribution(t: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_column_stochastic(t, "transition")?;
    let m = t.nrows();
    let mut v = DVector::from_element(m, 1.0 / m as f64);
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut w = t * &v;
        let sum: f64 = w.iter().sum();
        w /= sum;
        let diff = (&w - &v).abs().sum();
        v = w;
        if diff < STATIONARY_TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence(STATIONARY_MAX_ITERS))
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// How observation triples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Draw `h_1 ~ pi` fresh for every triple, so triples are i.i.d.
    Restart,
    /// Run one chain and emit overlapping windows of three. Requires the
    /// prior to be stationary so each window is marginally identical.
    Sliding,
}

/// Sample one observation sequence of the given length (symbols are 1-based).
pub fn sample_sequence(params: &RrHmmParams, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    let prior: Vec<f64> = params.prior.iter().cloned().collect();
    let mut h = categorical(&mut rng, &prior);
    for _ in 0..len {
        let obs_col: Vec<f64> = params.observation.column(h).iter().cloned().collect();
        out.push(categorical(&mut rng, &obs_col) + 1);
        let t_col: Vec<f64> = params.transition.column(h).iter().cloned().collect();
        h = categorical(&mut rng, &t_col);
    }
    out
}

/// Sample `count` observation triples.
///
/// Deterministic for a fixed seed regardless of thread count: restart mode
/// shards triples into fixed-size chunks, each drawn from its own counter
/// stream, so output is byte-identical whether or not sharding runs in
/// parallel.
pub fn sample_triples(
    params: &RrHmmParams,
    count: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<Vec<[usize; 3]>> {
    match mode {
        SampleMode::Sliding => {
            let defect = params.stationarity_defect();
            if defect > 1e-8 {
                return Err(Error::NonStationaryPrior(defect));
            }
            if count == 0 {
                return Ok(Vec::new());
            }
            let seq = sample_sequence(params, count + 2, seed);
            Ok(seq.windows(3).map(|w| [w[0], w[1], w[2]]).collect())
        }
        SampleMode::Restart => {
            let chunk_bounds: Vec<(usize, usize)> = (0..count)
                .step_by(RESTART_CHUNK)
                .map(|start| (start, usize::min(start + RESTART_CHUNK, count)))
                .collect();
            let sample_chunk = |(idx, (start, end)): (usize, (usize, usize))| {
                let mut rng = stream_rng(seed, idx as u64 + 1);
                let prior: Vec<f64> = params.prior.iter().cloned().collect();
                let mut triples = Vec::with_capacity(end - start);
                for _ in start..end {
                    let h1 = categorical(&mut rng, &prior);
                    let x1 = emit(params, &mut rng, h1);
                    let h2 = step(params, &mut rng, h1);
                    let x2 = emit(params, &mut rng, h2);
                    let h3 = step(params, &mut rng, h2);
                    let x3 = emit(params, &mut rng, h3);
                    triples.push([x1, x2, x3]);
                }
                triples
            };
            #[cfg(feature = "parallel")]
            let chunks: Vec<Vec<[usize; 3]>> = chunk_bounds
                .into_iter()
                .enumerate()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(sample_chunk)
                .collect();
            #[cfg(not(feature = "parallel"))]
            let chunks: Vec<Vec<[usize; 3]>> = chunk_bounds
                .into_iter()
                .enumerate()
                .map(sample_chunk)
                .collect();
            Ok(chunks.into_iter().flatten().collect())
        }
    }
}

fn emit<R: rand::Rng>(params: &RrHmmParams, rng: &mut R, h: usize) -> usize {
    let col: Vec<f64> = params.observation.column(h).iter().cloned().collect();
    categorical(rng, &col) + 1
}

fn step<R: rand::Rng>(params: &RrHmmParams, rng: &mut R, h: usize) -> usize {
    let col: Vec<f64> = params.transition.column(h).iter().cloned().collect();
    categorical(rng, &col)
}

// ---------------------------------------------------------------------------
// Exact inference (the oracle)
// ---------------------------------------------------------------------------

/// Joint probability of a symbol sequence by the forward product
/// `1^T A_{x_t} ... A_{x_1} pi`.
///
/// In debug builds the equivalent low-rank route through the `W_x` operators
/// is evaluated as well and the two are checked against each other whenever
/// the prior lies in the expand factor's column space.
pub fn exact_joint_prob(params: &RrHmmParams, seq: &[usize]) -> Result<f64> {
    for &x in seq {
        params.check_symbol(x)?;
    }
    let mut v = params.prior.clone();
    for &x in seq {
        v = params.apply_state_operator(x, &v);
    }
    let full = v.sum();
    #[cfg(debug_assertions)]
    {
        let (_, residual) = params.low_rank_prior();
        if residual <= 1e-8 {
            let low = joint_prob_low_rank(params, seq)?;
            debug_assert!(
                (full - low).abs() <= 1e-10,
                "state-space and low-rank probability routes disagree: {full} vs {low}"
            );
        }
    }
    Ok(full)
}

/// Joint probability through the low-rank route
/// `1^T R W_{x_t} ... W_{x_1} pi_l`, with `pi_l` the least-squares coordinates
/// of the prior.
pub fn joint_prob_low_rank(params: &RrHmmParams, seq: &[usize]) -> Result<f64> {
    for &x in seq {
        params.check_symbol(x)?;
    }
    let (pi_low, _) = params.low_rank_prior();
    let mut w = pi_low;
    for &x in seq {
        w = params.low_rank_operator(x)? * w;
    }
    let ones_r = params.expand.transpose() * DVector::from_element(params.m, 1.0);
    Ok(ones_r.dot(&w))
}

/// Exact filtering trace over a sequence.
#[derive(Debug, Clone)]
pub struct ExactFilter {
    /// `states[s]` is `Pr[h_{s+1} = . | x_{1..s}]`; `states[0]` is the prior.
    pub states: Vec<DVector<f64>>,
    /// `conditionals[s]` is `Pr[x_{s+1} | x_{1..s}]`.
    pub conditionals: Vec<f64>,
}

impl ExactFilter {
    /// Product of the per-step conditionals, equal to the joint probability.
    pub fn joint_prob(&self) -> f64 {
        self.conditionals.iter().product()
    }
}

/// Run the exact forward filter, returning the predictive state
/// `Pr[h_t | x_{1:t-1}]` at every step together with the per-step
/// conditionals `Pr[x_s | x_{1:s-1}]`.
pub fn exact_filter(params: &RrHmmParams, seq: &[usize]) -> Result<ExactFilter> {
    for &x in seq {
        params.check_symbol(x)?;
    }
    let mut states = Vec::with_capacity(seq.len() + 1);
    let mut conditionals = Vec::with_capacity(seq.len());
    let mut h = params.prior.clone();
    states.push(h.clone());
    for (pos, &x) in seq.iter().enumerate() {
        let mut weighted = h.clone();
        for j in 0..params.m {
            weighted[j] *= params.observation[(x - 1, j)];
        }
        let c: f64 = weighted.iter().sum();
        if c <= 0.0 {
            return Err(Error::ZeroProbabilitySequence(pos + 1));
        }
        conditionals.push(c);
        h = (&params.transition * weighted) / c;
        states.push(h.clone());
    }
    Ok(ExactFilter {
        states,
        conditionals,
    })
}

// ---------------------------------------------------------------------------
// Stacked observation matrix
// ---------------------------------------------------------------------------

/// Block emission matrix for stacked observations: entry `(e, c)` is the
/// probability of emitting the `window`-symbol block encoded as event `e`
/// given the chain starts the block in state `c`. For `window == 1` this is
/// the observation matrix itself.
pub fn stacked_observation_matrix(params: &RrHmmParams, window: usize) -> Result<DMatrix<f64>> {
    let space = crate::moments::EventSpace::new(params.n, window)?;
    let m = params.m;
    let mut out = DMatrix::zeros(space.n_events(), m);
    for e in 0..space.n_events() {
        let block = space.decode(e);
        for c in 0..m {
            // Forward over the block starting from a point mass at c.
            let mut alpha = DVector::zeros(m);
            alpha[c] = 1.0;
            for (s, &x) in block.iter().enumerate() {
                for j in 0..m {
                    alpha[j] *= params.observation[(x - 1, j)];
                }
                if s + 1 < block.len() {
                    alpha = &params.transition * alpha;
                }
            }
            out[(e, c)] = alpha.sum();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Polygon construction
// ---------------------------------------------------------------------------

/// Rank-3 RR-HMM with `m >= 3` states and 4 observations whose reachable
/// predictive distributions trace an `m`-sided polygon in the plane of the
/// two binary observation components.
///
/// Transitions are `T[(i,j)] = (2 + sin a_i sin a_j + cos a_i cos a_j) / 2m`
/// with `a_i = 2 pi i / m`; each state emits one of four symbols factored as
/// two independent Bernoulli components with means `p_i = (sin a_i + 1)/2`
/// and `q_i = (cos a_i + 1)/2`. Columns are renormalized after construction
/// (the adjustment is at rounding level since the column sums are 1
/// analytically).
pub fn polygon_hmm(m: usize) -> RrHmmParams {
    assert!(m >= 3, "polygon construction needs at least 3 states");
    let tau = 2.0 * std::f64::consts::PI;
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let a = tau * (i + 1) as f64 / m as f64;
            let b = tau * (j + 1) as f64 / m as f64;
            t[(i, j)] = (2.0 + a.sin() * b.sin() + a.cos() * b.cos()) / (2.0 * m as f64);
        }
    }
    for j in 0..m {
        let sum: f64 = t.column(j).sum();
        for i in 0..m {
            t[(i, j)] /= sum;
        }
    }
    let mut o = DMatrix::zeros(4, m);
    for j in 0..m {
        let a = tau * (j + 1) as f64 / m as f64;
        let p = (a.sin() + 1.0) / 2.0;
        let q = (a.cos() + 1.0) / 2.0;
        o[(0, j)] = p * q;
        o[(1, j)] = p * (1.0 - q);
        o[(2, j)] = (1.0 - p) * q;
        o[(3, j)] = (1.0 - p) * (1.0 - q);
    }
    let pi = stationary_distribution(&t).expect("polygon chain is aperiodic and positive");
    RrHmmParams::new(t, o, pi, 3).expect("polygon construction is exactly rank 3")
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn swap_chain() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    /// Rank-2 column-stochastic matrix from convex combinations of two
    /// stochastic columns.
    fn rank2_stochastic(m: usize) -> DMatrix<f64> {
        let mut rng = stream_rng(99, 0);
        let mut basis = DMatrix::zeros(m, 2);
        for c in 0..2 {
            let mut col: Vec<f64> = (0..m)
                .map(|_| rand::Rng::gen::<f64>(&mut rng) + 0.05)
                .collect();
            let s: f64 = col.iter().sum();
            col.iter_mut().for_each(|v| *v /= s);
            for i in 0..m {
                basis[(i, c)] = col[i];
            }
        }
        let mut t = DMatrix::zeros(m, m);
        for j in 0..m {
            let w = 0.15 + 0.7 * (j as f64) / (m as f64 - 1.0);
            for i in 0..m {
                t[(i, j)] = w * basis[(i, 0)] + (1.0 - w) * basis[(i, 1)];
            }
        }
        t
    }

    #[test]
    fn factorize_identity_is_exact() {
        let id = DMatrix::identity(3, 3);
        let (r, s) = factorize_transition(&id, 3, RANK_REL_TOL).unwrap();
        assert!(linalg::max_abs(&(&r * &s - &id)) <= 1e-12);
        assert!(linalg::norm_l1(&r) <= 1.0 + 1e-12);
    }

    #[test]
    fn factorize_example1_reconstructs_to_1e10() {
        let params = builtin::example1();
        let (r, s) = factorize_transition(params.transition(), 2, RANK_REL_TOL).unwrap();
        let err = linalg::max_abs(&(&r * &s - params.transition()));
        assert!(err <= FACTOR_MAX_ERR, "reconstruction error {err}");
    }

    #[test]
    fn factorize_rejects_wrong_rank_and_accepts_right_one() {
        let t = rank2_stochastic(4);
        let (r, s) = factorize_transition(&t, 2, RANK_REL_TOL).unwrap();
        assert!(linalg::max_abs(&(&r * &s - &t)) <= 1e-10);
        match factorize_transition(&t, 3, RANK_REL_TOL) {
            Err(Error::RankMismatch {
                expected: 3,
                found: 2,
            }) => {}
            other => panic!("expected RankMismatch, got {other:?}"),
        }
    }

    #[test]
    fn factorize_rejects_non_stochastic() {
        let t = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, 0.2, 0.5]);
        assert!(matches!(
            factorize_transition(&t, 2, RANK_REL_TOL),
            Err(Error::NotStochastic(_))
        ));
    }

    #[test]
    fn stationary_of_identity_returns_uniform_start() {
        let v = stationary_distribution(&DMatrix::identity(3, 3)).unwrap();
        for i in 0..3 {
            assert!((v[i] - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_of_swap_chain_from_uniform_start() {
        let v = stationary_distribution(&swap_chain()).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-14);
        assert!((v[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_example1_matches_eigen_oracle() {
        let params = builtin::example1();
        let v = stationary_distribution(params.transition()).unwrap();
        let defect = (params.transition() * &v - &v).abs().sum();
        assert!(defect <= 1e-12, "T v - v defect {defect}");
        // Independent oracle: the eigenvector of the symmetric part of T^T T
        // is overkill here; instead solve (T - I) v = 0 via the SVD null space.
        let m = params.state_count();
        let shifted = params.transition() - DMatrix::identity(m, m);
        let svd = shifted.svd(true, true);
        let vt = svd.v_t.unwrap();
        let null: DVector<f64> = vt.row(m - 1).transpose();
        let normalized = &null / null.sum();
        for i in 0..m {
            assert!((normalized[i] - v[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_triples_empty_and_deterministic() {
        let params = builtin::example1();
        assert!(sample_triples(&params, 0, 1, SampleMode::Restart)
            .unwrap()
            .is_empty());
        let a = sample_triples(&params, 20_000, 42, SampleMode::Restart).unwrap();
        let b = sample_triples(&params, 20_000, 42, SampleMode::Restart).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_triples_marginal_matches_o_pi() {
        let params = builtin::example1();
        let n_samples = 100_000usize;
        let triples = sample_triples(&params, n_samples, 7, SampleMode::Restart).unwrap();
        let mut counts = vec![0usize; params.obs_count()];
        for t in &triples {
            counts[t[0] - 1] += 1;
        }
        let expected = params.observation() * params.prior();
        let mut l1 = 0.0;
        for i in 0..params.obs_count() {
            let p = expected[i];
            let freq = counts[i] as f64 / n_samples as f64;
            let sigma = (p * (1.0 - p) / n_samples as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "symbol {i}: freq {freq} vs {p} (sigma {sigma})"
            );
            l1 += (freq - p).abs();
        }
        let bound = 5.0 * (params.obs_count() as f64 / n_samples as f64).sqrt();
        assert!(l1 <= bound, "marginal L1 {l1} above {bound}");
    }

    #[test]
    fn sliding_mode_requires_stationary_prior() {
        let params = builtin::example1();
        let shifted = RrHmmParams::new(
            params.transition().clone(),
            params.observation().clone(),
            DVector::from_vec(vec![0.7, 0.2, 0.1]),
            2,
        )
        .unwrap();
        assert!(matches!(
            sample_triples(&shifted, 10, 1, SampleMode::Sliding),
            Err(Error::NonStationaryPrior(_))
        ));
        assert!(sample_triples(&params, 10, 1, SampleMode::Sliding).is_ok());
    }

    #[test]
    fn joint_prob_of_empty_sequence_is_one() {
        let params = builtin::example1();
        let p = exact_joint_prob(&params, &[]).unwrap();
        assert!((p - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn joint_prob_of_single_symbol_is_marginal() {
        let params = builtin::example1();
        let marginal = params.observation() * params.prior();
        let p = exact_joint_prob(&params, &[1]).unwrap();
        assert!((p - marginal[0]).abs() < 1e-14);
    }

    #[test]
    fn joint_probs_of_fixed_length_sum_to_one() {
        let params = builtin::example1();
        let n = params.obs_count();
        let mut total = 0.0;
        for a in 1..=n {
            for b in 1..=n {
                total += exact_joint_prob(&params, &[a, b]).unwrap();
            }
        }
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn low_rank_route_agrees_with_state_route() {
        let params = builtin::example1();
        for seq in [vec![1], vec![2, 1], vec![3, 1, 2], vec![1, 1, 1, 2]] {
            let a = exact_joint_prob(&params, &seq).unwrap();
            let b = joint_prob_low_rank(&params, &seq).unwrap();
            assert!((a - b).abs() <= 1e-10, "routes disagree on {seq:?}");
        }
    }

    #[test]
    fn joint_prob_rejects_out_of_range_symbol() {
        let params = builtin::example1();
        assert!(matches!(
            exact_joint_prob(&params, &[4]),
            Err(Error::SymbolOutOfRange { symbol: 4, n: 3 })
        ));
    }

    #[test]
    fn exact_filter_starts_at_prior_and_normalizes() {
        let params = builtin::example1();
        let trace = exact_filter(&params, &[1, 2, 3]).unwrap();
        assert_eq!(trace.states.len(), 4);
        for i in 0..3 {
            assert!((trace.states[0][i] - params.prior()[i]).abs() < 1e-15);
        }
        for state in &trace.states {
            assert!((state.sum() - 1.0).abs() <= 1e-12);
        }
        let joint = exact_joint_prob(&params, &[1, 2, 3]).unwrap();
        assert!((trace.joint_prob() - joint).abs() <= 1e-10);
    }

    #[test]
    fn polygon_has_rank_three_and_valid_matrices() {
        let params = polygon_hmm(10);
        assert_eq!(linalg::numerical_rank(params.transition(), RANK_REL_TOL), 3);
        for j in 0..10 {
            let tsum: f64 = params.transition().column(j).sum();
            assert!((tsum - 1.0).abs() <= 1e-12);
            let osum: f64 = params.observation().column(j).sum();
            assert!((osum - 1.0).abs() <= 1e-12);
        }
        let small = polygon_hmm(4);
        for v in small.observation().iter() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn stacked_observation_matrix_window_one_is_observation() {
        let params = builtin::example2();
        let stacked = stacked_observation_matrix(&params, 1).unwrap();
        assert!(linalg::max_abs(&(stacked - params.observation())) < 1e-15);
    }

    #[test]
    fn stacked_observation_matrix_columns_sum_to_one() {
        let params = builtin::example3();
        let stacked = stacked_observation_matrix(&params, 2).unwrap();
        for c in 0..params.state_count() {
            let sum: f64 = stacked.column(c).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn params_json_round_trip() {
        let params = builtin::example3();
        let text = params.to_json().unwrap();
        let back = RrHmmParams::from_json(&text).unwrap();
        assert!(linalg::max_abs(&(back.transition() - params.transition())) == 0.0);
        assert!(linalg::max_abs(&(back.observation() - params.observation())) == 0.0);
        assert_eq!(back.rank(), params.rank());
    }

    #[test]
    fn validate_flags_zero_prior_entry() {
        // Bypass the constructor so validation itself can be exercised on a
        // structurally complete but degenerate model.
        let base = builtin::example1();
        let mut bad = base.clone();
        bad.prior = DVector::from_vec(vec![0.0, 0.5, 0.5]);
        let report = validate(&bad, None);
        assert!(!report.prior_positive.passed);
        assert_eq!(report.prior_positive.measured, 0.0);
        assert!(validate(&base, None).prior_positive.passed);
    }

    #[test]
    fn validate_flags_ambiguous_observations_through_projection() {
        // Two observation symbols cannot pin down three states: with the
        // projection taken from the unstacked bigram matrix, the projected
        // emission map loses rank.
        let params = builtin::example2();
        let pop = crate::moments::population_moments(&params);
        let (u, _) = crate::linalg::top_left_singular(&pop.p21, 2);
        let report = validate(&params, Some(&u));
        let check = report.projected_observation.unwrap();
        assert!(!check.passed);
        assert!(check.measured < 1e-8, "sigma_k = {}", check.measured);
        // Stacking two symbols restores it.
        let stacked = crate::moments::population_moments_stacked(&params, 2).unwrap();
        let (u2, _) = crate::linalg::top_left_singular(&stacked.p21, 3);
        let obar = stacked_observation_matrix(&params, 2).unwrap();
        let map = u2.transpose() * &obar * params.expand_factor();
        assert!(crate::linalg::sigma(&map, 3) > 1e-3);
    }

    #[test]
    fn validate_example1_core_conditions_pass() {
        let params = builtin::example1();
        let report = validate(&params, None);
        assert!(report.prior_positive.passed);
        assert!(report.transition_rank.passed);
        assert!(report.expand_l1.passed);
        assert!(
            report.overlap_rank.passed,
            "sigma_k(S diag(pi) O^T) = {}",
            report.overlap_rank.measured
        );
        assert!(report.overlap_rank.measured > 0.0);
    }
}
