//! Empirical and exact moment matrices over single or stacked observations.
//!
//! The learner's sufficient statistics are the unigram vector `P1`, the
//! bigram co-occurrence matrix `P21` with `P21[(i, j)] = Pr[x2 = i+1, x1 =
//! j+1]`, and one trigram slice `P3[x]` per middle symbol with
//! `P3[x][(i, j)] = Pr[x3 = i+1, x2 = x, x1 = j+1]`. When single symbols are
//! too ambiguous to pin down the state, past and future are replaced by
//! blocks of `window` consecutive symbols (events); the middle index of the
//! trigram slices always stays a single base symbol, so the number of
//! learned operators does not grow with the window.
//!
//! Empirical estimators accumulate exact integer counts and normalize once,
//! so results are bit-identical however the counting is sharded.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{stacked_observation_matrix, RrHmmParams};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const COUNT_CHUNK: usize = 65_536;

// ---------------------------------------------------------------------------
// Event space
// ---------------------------------------------------------------------------

/// Encoding between blocks of `window` consecutive symbols and dense event
/// indices. Symbols are 1-based; event indices are 0-based and lexicographic
/// with the earliest symbol most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpace {
    n_base: usize,
    window: usize,
}

impl EventSpace {
    /// Dense moment matrices only; larger event spaces are refused.
    pub const MAX_EVENTS: usize = 10_000;

    pub fn new(n_base: usize, window: usize) -> Result<Self> {
        if n_base == 0 || window == 0 {
            return Err(Error::DimensionMismatch(
                "alphabet size and window must be positive".into(),
            ));
        }
        let mut events: usize = 1;
        for _ in 0..window {
            events = events.saturating_mul(n_base);
            if events > Self::MAX_EVENTS {
                return Err(Error::EventSpaceTooLarge {
                    requested: events,
                    cap: Self::MAX_EVENTS,
                });
            }
        }
        Ok(Self { n_base, window })
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_events(&self) -> usize {
        self.n_base.pow(self.window as u32)
    }

    /// Event index of a block of symbols in time order.
    pub fn encode(&self, block: &[usize]) -> Result<usize> {
        if block.len() != self.window {
            return Err(Error::DimensionMismatch(format!(
                "block of {} symbols does not fill a window of {}",
                block.len(),
                self.window
            )));
        }
        let mut idx = 0usize;
        for &x in block {
            if x == 0 || x > self.n_base {
                return Err(Error::SymbolOutOfRange {
                    symbol: x,
                    n: self.n_base,
                });
            }
            idx = idx * self.n_base + (x - 1);
        }
        Ok(idx)
    }

    /// Block of symbols in time order for an event index.
    pub fn decode(&self, mut event: usize) -> Vec<usize> {
        let mut block = vec![0usize; self.window];
        for slot in block.iter_mut().rev() {
            *slot = event % self.n_base + 1;
            event /= self.n_base;
        }
        block
    }
}

// ---------------------------------------------------------------------------
// Moment estimates
// ---------------------------------------------------------------------------

/// The estimated (or exact) moment quantities.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub event_space: EventSpace,
    /// Number of counted windows; `None` marks exact population moments.
    pub sample_count: Option<u64>,
    /// Event marginal, length `n_events`.
    pub p1: DVector<f64>,
    /// Future-by-past co-occurrence, `n_events x n_events`.
    pub p21: DMatrix<f64>,
    /// One future-by-past slice per middle base symbol, `n_base` entries.
    pub p3: Vec<DMatrix<f64>>,
}

impl MomentEstimates {
    /// Check the stochasticity invariants: entrywise non-negative, `P1` and
    /// `P21` each sum to 1, and the trigram slices sum to 1 jointly.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        if self.p1.iter().any(|&v| v < 0.0)
            || self.p21.iter().any(|&v| v < 0.0)
            || self.p3.iter().any(|m| m.iter().any(|&v| v < 0.0))
        {
            return Err(Error::NotStochastic("negative moment entry".into()));
        }
        let s1: f64 = self.p1.iter().sum();
        let s21: f64 = self.p21.iter().sum();
        let s3: f64 = self.p3.iter().map(|m| m.iter().sum::<f64>()).sum();
        for (name, s) in [("P1", s1), ("P21", s21), ("P3", s3)] {
            if (s - 1.0).abs() > tol {
                return Err(Error::NotStochastic(format!("{name} sums to {s}")));
            }
        }
        Ok(())
    }

    /// Empirical probability of each middle symbol, from the trigram slices.
    pub fn middle_marginal(&self) -> Vec<f64> {
        self.p3.iter().map(|m| m.iter().sum::<f64>()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MomentsFile {
            n: self.event_space.n_base(),
            window: self.event_space.window(),
            sample_count: self.sample_count,
            p1: self.p1.iter().cloned().collect(),
            p21: rows_of(&self.p21),
            p3: self.p3.iter().map(rows_of).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MomentsFile = serde_json::from_str(text)?;
        let space = EventSpace::new(file.n, file.window)?;
        let e = space.n_events();
        let p1 = DVector::from_vec(file.p1);
        if p1.len() != e {
            return Err(Error::InvalidModel(format!(
                "P1 length {} != {e}",
                p1.len()
            )));
        }
        let p21 = matrix_of(&file.p21, e, e)?;
        if file.p3.len() != file.n {
            return Err(Error::InvalidModel(format!(
                "expected {} P3 slices, got {}",
                file.n,
                file.p3.len()
            )));
        }
        let p3 = file
            .p3
            .iter()
            .map(|rows| matrix_of(rows, e, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            event_space: space,
            sample_count: file.sample_count,
            p1,
            p21,
            p3,
        })
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
struct MomentsFile {
    n: usize,
    window: usize,
    #[serde(rename = "N")]
    sample_count: Option<u64>,
    #[serde(rename = "P1")]
    p1: Vec<f64>,
    #[serde(rename = "P21")]
    p21: Vec<Vec<f64>>,
    #[serde(rename = "P3")]
    p3: Vec<Vec<Vec<f64>>>,
}

fn rows_of(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn matrix_of(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidModel(format!(
            "expected a {nrows}x{ncols} matrix"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Counts {
    n_events: usize,
    n_base: usize,
    c1: Vec<u64>,
    c21: Vec<u64>,
    c3: Vec<u64>,
    windows: u64,
}

impl Counts {
    fn new(n_events: usize, n_base: usize) -> Self {
        Self {
            n_events,
            n_base,
            c1: vec![0; n_events],
            c21: vec![0; n_events * n_events],
            c3: vec![0; n_base * n_events * n_events],
            windows: 0,
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for (a, b) in self.c1.iter_mut().zip(&other.c1) {
            *a += b;
        }
        for (a, b) in self.c21.iter_mut().zip(&other.c21) {
            *a += b;
        }
        for (a, b) in self.c3.iter_mut().zip(&other.c3) {
            *a += b;
        }
        self.windows += other.windows;
        self
    }

    fn into_moments(self, space: EventSpace) -> MomentEstimates {
        let e = self.n_events;
        let total = self.windows as f64;
        let p1 = DVector::from_fn(e, |i, _| self.c1[i] as f64 / total);
        let p21 = DMatrix::from_fn(e, e, |i, j| self.c21[i * e + j] as f64 / total);
        let p3 = (0..self.n_base)
            .map(|x| DMatrix::from_fn(e, e, |i, j| self.c3[(x * e + i) * e + j] as f64 / total))
            .collect();
        MomentEstimates {
            event_space: space,
            sample_count: Some(self.windows),
            p1,
            p21,
            p3,
        }
    }
}

fn merge_chunks(chunks: Vec<Counts>, space: EventSpace) -> MomentEstimates {
    let init = Counts::new(space.n_events(), space.n_base());
    chunks
        .into_iter()
        .fold(init, Counts::merge)
        .into_moments(space)
}

/// Estimate moments from i.i.d. observation triples over an `n`-symbol
/// alphabet. Counts are exact integers; normalization happens once at the
/// end, so sharding cannot change the result.
pub fn estimate_moments(triples: &[[usize; 3]], n: usize) -> Result<MomentEstimates> {
    if triples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for t in triples {
        for &x in t {
            if x == 0 || x > n {
                return Err(Error::SymbolOutOfRange { symbol: x, n });
            }
        }
    }
    let space = EventSpace::new(n, 1)?;
    let count_chunk = |chunk: &[[usize; 3]]| {
        let mut c = Counts::new(n, n);
        for &[x1, x2, x3] in chunk {
            let (a, b, d) = (x1 - 1, x2 - 1, x3 - 1);
            c.c1[a] += 1;
            c.c21[b * n + a] += 1;
            c.c3[(b * n + d) * n + a] += 1;
            c.windows += 1;
        }
        c
    };
    #[cfg(feature = "parallel")]
    let chunks: Vec<Counts> = triples.par_chunks(COUNT_CHUNK).map(count_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Counts> = triples.chunks(COUNT_CHUNK).map(count_chunk).collect();
    Ok(merge_chunks(chunks, space))
}

/// Estimate stacked moments from a single sequence with sliding windows.
///
/// For every middle position `t` (0-based, `window <= t < len - window`) the
/// past event covers `t-window .. t-1`, the middle symbol sits at `t`, the
/// trigram future covers `t+1 .. t+window`, and the bigram future covers
/// `t .. t+window-1`, so past and future blocks never overlap. All three
/// statistics share the same window set; at `window == 1` this reduces
/// exactly to [`estimate_moments`] over the sequence's sliding triples.
pub fn estimate_moments_stacked(
    sequence: &[usize],
    n: usize,
    window: usize,
) -> Result<MomentEstimates> {
    let space = EventSpace::new(n, window)?;
    let min = 2 * window + 1;
    if sequence.len() < min {
        return Err(Error::SequenceTooShort {
            len: sequence.len(),
            window,
            min,
        });
    }
    for &x in sequence {
        if x == 0 || x > n {
            return Err(Error::SymbolOutOfRange { symbol: x, n });
        }
    }
    let e = space.n_events();
    let positions: Vec<usize> = (window..sequence.len() - window).collect();
    let count_chunk = |chunk: &[usize]| {
        let mut c = Counts::new(e, n);
        for &t in chunk {
            let past = space
                .encode(&sequence[t - window..t])
                .expect("range-checked above");
            let fut21 = space
                .encode(&sequence[t..t + window])
                .expect("range-checked above");
            let fut3 = space
                .encode(&sequence[t + 1..t + 1 + window])
                .expect("range-checked above");
            let mid = sequence[t] - 1;
            c.c1[past] += 1;
            c.c21[fut21 * e + past] += 1;
            c.c3[(mid * e + fut3) * e + past] += 1;
            c.windows += 1;
        }
        c
    };
    #[cfg(feature = "parallel")]
    let chunks: Vec<Counts> = positions.par_chunks(COUNT_CHUNK).map(count_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Counts> = positions.chunks(COUNT_CHUNK).map(count_chunk).collect();
    Ok(merge_chunks(chunks, space))
}

// ---------------------------------------------------------------------------
// Population (infinite-sample) moments
// ---------------------------------------------------------------------------

/// Exact moments of a model: `P1 = O pi`, `P21 = O T diag(pi) O^T`, and
/// `P3[x] = O A_x T diag(pi) O^T`.
pub fn population_moments(params: &RrHmmParams) -> MomentEstimates {
    let space = EventSpace::new(params.obs_count(), 1).expect("base alphabet fits the cap");
    let o = params.observation();
    let t = params.transition();
    let diag_pi = DMatrix::from_diagonal(params.prior());
    let p1 = o * params.prior();
    let core = t * &diag_pi * o.transpose();
    let p21 = o * &core;
    let p3 = (1..=params.obs_count())
        .map(|x| {
            let mut weighted = core.clone();
            for j in 0..params.state_count() {
                let w = o[(x - 1, j)];
                for c in 0..weighted.ncols() {
                    weighted[(j, c)] *= w;
                }
            }
            o * (t * weighted)
        })
        .collect();
    MomentEstimates {
        event_space: space,
        sample_count: None,
        p1,
        p21,
        p3,
    }
}

/// Exact stacked moments, computed by summing over hidden-state paths.
///
/// With `J[(b, e)]` the joint probability of emitting past block `e` and
/// landing its final symbol in state `b`, the stacked statistics factor as
/// `P1 = Obar pi`, `P21 = Obar T J`, and `P3[x] = Obar A_x T J`, which is why
/// their rank never exceeds the transition rank.
pub fn population_moments_stacked(params: &RrHmmParams, window: usize) -> Result<MomentEstimates> {
    let space = EventSpace::new(params.obs_count(), window)?;
    let m = params.state_count();
    let e = space.n_events();
    let obar = stacked_observation_matrix(params, window)?;
    let t = params.transition();
    let o = params.observation();

    // J[(b, e)]: block e emitted from a stationary start, chain in state b
    // at the block's last symbol.
    let mut j_mat = DMatrix::zeros(m, e);
    for ev in 0..e {
        let block = space.decode(ev);
        let mut alpha = params.prior().clone();
        for (s, &x) in block.iter().enumerate() {
            if s > 0 {
                alpha = t * alpha;
            }
            for b in 0..m {
                alpha[b] *= o[(x - 1, b)];
            }
        }
        for b in 0..m {
            j_mat[(b, ev)] = alpha[b];
        }
    }

    let p1 = &obar * params.prior();
    let t_j = t * &j_mat;
    let p21 = &obar * &t_j;
    let p3 = (1..=params.obs_count())
        .map(|x| {
            let mut weighted = t_j.clone();
            for b in 0..m {
                let w = o[(x - 1, b)];
                for c in 0..e {
                    weighted[(b, c)] *= w;
                }
            }
            &obar * (t * weighted)
        })
        .collect();
    Ok(MomentEstimates {
        event_space: space,
        sample_count: None,
        p1,
        p21,
        p3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::hmm::{sample_sequence, sample_triples, RrHmmParams, SampleMode};
    use crate::linalg;
    use nalgebra::DVector;

    #[test]
    fn event_space_round_trip_and_cap() {
        let space = EventSpace::new(3, 3).unwrap();
        assert_eq!(space.n_events(), 27);
        for ev in 0..27 {
            assert_eq!(space.encode(&space.decode(ev)).unwrap(), ev);
        }
        assert_eq!(space.encode(&[1, 1, 2]).unwrap(), 1);
        assert_eq!(space.encode(&[2, 1, 1]).unwrap(), 9);
        assert!(matches!(
            EventSpace::new(10, 5),
            Err(Error::EventSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn single_triple_counts() {
        let m = estimate_moments(&[[1, 2, 3]], 3).unwrap();
        assert_eq!(m.p1[0], 1.0);
        assert_eq!(m.p21[(1, 0)], 1.0);
        assert_eq!(m.p3[1][(2, 0)], 1.0);
        assert_eq!(m.p3[0].iter().sum::<f64>(), 0.0);
        assert_eq!(m.p3[2].iter().sum::<f64>(), 0.0);
        m.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(estimate_moments(&[], 3), Err(Error::EmptyDataset)));
    }

    #[test]
    fn concatenation_is_count_weighted_average() {
        let params = builtin::example1();
        let a = sample_triples(&params, 500, 1, SampleMode::Restart).unwrap();
        let b = sample_triples(&params, 300, 2, SampleMode::Restart).unwrap();
        let mut both = a.clone();
        both.extend_from_slice(&b);
        let ma = estimate_moments(&a, 3).unwrap();
        let mb = estimate_moments(&b, 3).unwrap();
        let mc = estimate_moments(&both, 3).unwrap();
        let blended = (500.0 / 800.0) * &ma.p21 + (300.0 / 800.0) * &mb.p21;
        assert!(linalg::max_abs(&(blended - &mc.p21)) < 1e-15);
        let p1_blend = (500.0 / 800.0) * &ma.p1 + (300.0 / 800.0) * &mb.p1;
        assert!((p1_blend - &mc.p1).abs().max() < 1e-15);
    }

    #[test]
    fn empirical_p21_converges_to_population() {
        let params = builtin::example1();
        let pop = population_moments(&params);
        let triples = sample_triples(&params, 100_000, 5, SampleMode::Restart).unwrap();
        let est = estimate_moments(&triples, 3).unwrap();
        let err = (&est.p21 - &pop.p21).norm();
        assert!(err <= 0.02, "Frobenius error {err}");
    }

    #[test]
    fn empirical_error_decays_at_root_n_rate() {
        let params = builtin::example1();
        let pop = population_moments(&params);
        let mut previous = f64::INFINITY;
        for n in [1_000usize, 10_000, 100_000] {
            let triples = sample_triples(&params, n, 8, SampleMode::Restart).unwrap();
            let est = estimate_moments(&triples, 3).unwrap();
            let err = (&est.p21 - &pop.p21).norm();
            assert!(err < previous, "error did not decrease at N = {n}");
            assert!(
                err <= 5.0 / (n as f64).sqrt(),
                "error {err} above 5/sqrt({n})"
            );
            previous = err;
        }
    }

    #[test]
    fn population_rank_and_identities() {
        let params = builtin::example1();
        let pop = population_moments(&params);
        pop.check_invariants(1e-10).unwrap();
        assert_eq!(linalg::numerical_rank(&pop.p21, 1e-8), 2);

        // Summing the trigram slices over the middle symbol inserts one more
        // transition step: sum_x P3[x] = O T T diag(pi) O^T.
        let o = params.observation();
        let t = params.transition();
        let expected = o * t * t * DMatrix::from_diagonal(params.prior()) * o.transpose();
        let mut summed = DMatrix::zeros(3, 3);
        for slice in &pop.p3 {
            summed += slice;
        }
        assert!(linalg::max_abs(&(summed - expected)) <= 1e-12);
    }

    #[test]
    fn population_identity_model_gives_diag_pi() {
        let t = DMatrix::identity(3, 3);
        let o = DMatrix::identity(3, 3);
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let params = RrHmmParams::new(t, o, pi.clone(), 3).unwrap();
        let pop = population_moments(&params);
        assert!(linalg::max_abs(&(&pop.p21 - DMatrix::from_diagonal(&pi))) <= 1e-14);
    }

    #[test]
    fn stacked_window_one_matches_sliding_triples_exactly() {
        let params = builtin::example1();
        let seq = sample_sequence(&params, 4000, 11);
        let triples: Vec<[usize; 3]> = seq.windows(3).map(|w| [w[0], w[1], w[2]]).collect();
        let flat = estimate_moments(&triples, 3).unwrap();
        let stacked = estimate_moments_stacked(&seq, 3, 1).unwrap();
        assert_eq!(flat.sample_count, stacked.sample_count);
        assert!(linalg::max_abs(&(&flat.p21 - &stacked.p21)) <= 1e-15);
        for x in 0..3 {
            assert!(linalg::max_abs(&(&flat.p3[x] - &stacked.p3[x])) <= 1e-15);
        }
        assert!((&flat.p1 - &stacked.p1).abs().max() <= 1e-15);
    }

    #[test]
    fn stacked_too_short_is_rejected() {
        assert!(matches!(
            estimate_moments_stacked(&[1, 2, 1, 2], 2, 2),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn example2_stacked_empirical_rank_reaches_three() {
        let params = builtin::example2();
        let seq = sample_sequence(&params, 100_000, 3);
        let est = estimate_moments_stacked(&seq, 2, 2).unwrap();
        assert_eq!(linalg::numerical_rank(&est.p21, 1e-2), 3);
    }

    #[test]
    fn stacked_population_rank_at_most_k() {
        for (params, k) in [
            (builtin::example1(), 2),
            (builtin::example2(), 3),
            (builtin::example3(), 3),
        ] {
            let pop = population_moments_stacked(&params, 2).unwrap();
            pop.check_invariants(1e-10).unwrap();
            let rank = linalg::numerical_rank(&pop.p21, 1e-8);
            assert!(rank <= k, "rank {rank} exceeds k = {k}");
        }
    }

    #[test]
    fn example3_stacked_population_rank_is_three() {
        let pop = population_moments_stacked(&builtin::example3(), 2).unwrap();
        assert_eq!(linalg::numerical_rank(&pop.p21, 1e-8), 3);
    }

    #[test]
    fn stacked_window_one_population_matches_flat_population() {
        let params = builtin::example1();
        let flat = population_moments(&params);
        let stacked = population_moments_stacked(&params, 1).unwrap();
        assert!(linalg::max_abs(&(&flat.p21 - &stacked.p21)) <= 1e-12);
        for x in 0..3 {
            assert!(linalg::max_abs(&(&flat.p3[x] - &stacked.p3[x])) <= 1e-12);
        }
    }

    #[test]
    fn moments_json_round_trip() {
        let pop = population_moments(&builtin::example1());
        let text = pop.to_json().unwrap();
        let back = MomentEstimates::from_json(&text).unwrap();
        assert_eq!(back.sample_count, None);
        assert!(linalg::max_abs(&(&back.p21 - &pop.p21)) == 0.0);
    }
}
