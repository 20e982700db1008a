//! Sample-complexity diagnostics and the synthetic recovery experiments.
//!
//! The finite-sample guarantee for the spectral learner is driven by a few
//! computable quantities: the k-th singular values of the bigram matrix and
//! of the projected emission map, and `n0(eps)`, the number of observations
//! covering all but `eps` of the second-symbol probability mass. This module
//! evaluates them on exact population moments, evaluates the sample-size
//! expression literally for a supplied constant (a shape diagnostic, not a
//! certified bound, since the constant is unknown), and runs the two
//! synthetic experiments: eigenvalue recovery of the transition matrix from
//! the summed learned operators, and the exhaustive L1 joint-probability
//! error as a function of sample size.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hmm::{
    sample_sequence, sample_triples, stacked_observation_matrix, RrHmmParams, SampleMode,
};
use crate::linalg;
use crate::moments::{estimate_moments, estimate_moments_stacked, population_moments_stacked};
use crate::rng::derive_seed;
use crate::spectral::{learn, ObservableModel};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest enumerable sequence space for exhaustive L1 errors.
pub const SEQUENCE_SPACE_CAP: usize = 100_000;

// ---------------------------------------------------------------------------
// Bound quantities
// ---------------------------------------------------------------------------

/// The quantities entering the sample-size expression, measured on exact
/// population moments of one model.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub epsilon: f64,
    pub eta: f64,
    pub t: usize,
    pub c: f64,
    pub window: usize,
    /// k-th singular value of the (stacked) population bigram matrix.
    pub sigma_k_p21: f64,
    /// k-th singular value of the (stacked) emission map times the expand
    /// factor.
    pub sigma_k_or: f64,
    /// k-th singular value of `U^T O R`; only when a projection was supplied.
    pub sigma_k_utor: Option<f64>,
    /// Important-observation count at the caller's `epsilon`.
    pub n0_at_epsilon: usize,
    /// The shrunken accuracy target the sample-size expression feeds into
    /// `n0`: `sigma_k(OR) sigma_k(P21) epsilon / (4 t sqrt(k))`.
    pub varepsilon: f64,
    pub n0_at_varepsilon: usize,
    /// The sample-size expression evaluated literally with constant `c`.
    pub theorem_n: f64,
}

/// Smallest `i >= 1` such that the `n - i` least probable observations carry
/// at most `eps` of the mass.
pub fn n0_from_marginal(marginal: &[f64], eps: f64) -> usize {
    let mut sorted: Vec<f64> = marginal.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut tail: f64 = sorted.iter().sum();
    for i in 1..=n {
        // Removing the largest remaining entry leaves the n - i smallest.
        tail -= sorted[n - i];
        if tail <= eps + 1e-12 {
            return i;
        }
    }
    n
}

/// Measure the bound quantities for `params` at stacking width `window`,
/// optionally scoring a candidate projection `u`.
pub fn bound_quantities(
    params: &RrHmmParams,
    window: usize,
    u: Option<&DMatrix<f64>>,
    epsilon: f64,
    eta: f64,
    t: usize,
    c: f64,
) -> Result<BoundReport> {
    let k = params.rank();
    let moments = population_moments_stacked(params, window)?;
    let sigma_k_p21 = linalg::sigma(&moments.p21, k);
    let emission = stacked_observation_matrix(params, window)?;
    let projected = &emission * params.expand_factor();
    let sigma_k_or = linalg::sigma(&projected, k);
    let sigma_k_utor = u.map(|u| linalg::sigma(&(u.transpose() * &projected), k));

    let middle = moments.middle_marginal();
    let n0_at_epsilon = n0_from_marginal(&middle, epsilon);
    let varepsilon = sigma_k_or * sigma_k_p21 * epsilon / (4.0 * t as f64 * (k as f64).sqrt());
    let n0_at_varepsilon = n0_from_marginal(&middle, varepsilon);

    let theorem_n = c * (t as f64).powi(2) / epsilon.powi(2)
        * (k as f64 / (sigma_k_or.powi(2) * sigma_k_p21.powi(4))
            + k as f64 * n0_at_varepsilon as f64 / (sigma_k_or.powi(2) * sigma_k_p21.powi(2)))
        * (1.0 / eta).ln();

    Ok(BoundReport {
        epsilon,
        eta,
        t,
        c,
        window,
        sigma_k_p21,
        sigma_k_or,
        sigma_k_utor,
        n0_at_epsilon,
        varepsilon,
        n0_at_varepsilon,
        theorem_n,
    })
}

// ---------------------------------------------------------------------------
// Eigenvalue recovery
// ---------------------------------------------------------------------------

/// Eigenvalues of the summed learned operators across sample sizes and
/// trials, matched per trial against the true nonzero transition spectrum.
#[derive(Debug, Clone)]
pub struct EigenRecoveryResult {
    /// The k largest-magnitude eigenvalues of the transition matrix,
    /// descending by magnitude.
    pub true_eigs: Vec<Complex<f64>>,
    pub cells: Vec<EigenCell>,
}

/// All trials at one sample size; `estimates[trial][i]` is matched against
/// `true_eigs[i]`.
#[derive(Debug, Clone)]
pub struct EigenCell {
    pub n: u64,
    pub estimates: Vec<Vec<Complex<f64>>>,
}

/// Per-(sample size, eigenvalue) aggregate with a normal-approximation 95%
/// half-width across trials.
#[derive(Debug, Clone)]
pub struct EigenSummary {
    pub n: u64,
    pub index: usize,
    pub true_value: Complex<f64>,
    pub mean: Complex<f64>,
    pub half_width: f64,
}

impl EigenRecoveryResult {
    pub fn summaries(&self) -> Vec<EigenSummary> {
        let mut out = Vec::new();
        for cell in &self.cells {
            let trials = cell.estimates.len();
            for (index, &true_value) in self.true_eigs.iter().enumerate() {
                let values: Vec<Complex<f64>> =
                    cell.estimates.iter().map(|trial| trial[index]).collect();
                let mean_re = values.iter().map(|v| v.re).sum::<f64>() / trials as f64;
                let mean_im = values.iter().map(|v| v.im).sum::<f64>() / trials as f64;
                let var: f64 = values
                    .iter()
                    .map(|v| (v.re - mean_re).powi(2) + (v.im - mean_im).powi(2))
                    .sum::<f64>()
                    / (trials.max(2) - 1) as f64;
                out.push(EigenSummary {
                    n: cell.n,
                    index,
                    true_value,
                    mean: Complex::new(mean_re, mean_im),
                    half_width: 1.96 * (var / trials as f64).sqrt(),
                });
            }
        }
        out
    }
}

/// The `count` largest-magnitude eigenvalues of a square matrix, descending
/// by magnitude with deterministic tie-breaking.
pub fn leading_eigenvalues(a: &DMatrix<f64>, count: usize) -> Vec<Complex<f64>> {
    let mut eigs: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|x, y| {
        y.norm()
            .partial_cmp(&x.norm())
            .unwrap()
            .then(y.re.partial_cmp(&x.re).unwrap())
            .then(y.im.partial_cmp(&x.im).unwrap())
    });
    eigs.truncate(count);
    eigs
}

/// Greedy bijection between estimated and reference eigenvalues by complex
/// distance: repeatedly match the globally closest unmatched pair. Returns
/// the estimates reordered so index `i` pairs with `reference[i]`.
pub fn match_eigenvalues(
    reference: &[Complex<f64>],
    estimates: &[Complex<f64>],
) -> Vec<Complex<f64>> {
    assert_eq!(reference.len(), estimates.len());
    let k = reference.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (i, r) in reference.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            pairs.push(((r - e).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut taken_ref = vec![false; k];
    let mut taken_est = vec![false; k];
    let mut out = vec![Complex::new(0.0, 0.0); k];
    for (_, i, j) in pairs {
        if !taken_ref[i] && !taken_est[j] {
            taken_ref[i] = true;
            taken_est[j] = true;
            out[i] = estimates[j];
        }
    }
    out
}

fn learn_from_samples(
    params: &RrHmmParams,
    k: usize,
    n: u64,
    seed: u64,
    window: usize,
) -> Result<ObservableModel> {
    if window <= 1 {
        let triples = sample_triples(params, n as usize, seed, SampleMode::Restart)?;
        let moments = estimate_moments(&triples, params.obs_count())?;
        learn(&moments, k)
    } else {
        let seq = sample_sequence(params, n as usize, seed);
        let moments = estimate_moments_stacked(&seq, params.obs_count(), window)?;
        learn(&moments, k)
    }
}

/// Sample, learn, and eigendecompose the summed operator for every
/// (sample size, trial) cell. Cells are independent and run in parallel with
/// per-cell derived seeds; aggregation order is fixed, so the result does
/// not depend on the thread count.
pub fn eigen_recovery_experiment(
    params: &RrHmmParams,
    k: usize,
    ns: &[u64],
    trials: usize,
    seed: u64,
    window: usize,
) -> Result<EigenRecoveryResult> {
    let true_eigs = leading_eigenvalues(params.transition(), k);
    let tasks: Vec<(usize, usize)> = (0..ns.len())
        .flat_map(|i| (0..trials).map(move |j| (i, j)))
        .collect();
    let run_cell = |&(i, j): &(usize, usize)| -> Result<Vec<Complex<f64>>> {
        let cell_seed = derive_seed(seed, i as u64, j as u64);
        let model = learn_from_samples(params, k, ns[i], cell_seed, window)?;
        let estimated = leading_eigenvalues(&model.summed_operator(), k);
        Ok(match_eigenvalues(&true_eigs, &estimated))
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<Vec<Complex<f64>>>> = tasks.par_iter().map(run_cell).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<Vec<Complex<f64>>>> = tasks.iter().map(run_cell).collect();

    let mut cells: Vec<EigenCell> = ns
        .iter()
        .map(|&n| EigenCell {
            n,
            estimates: Vec::with_capacity(trials),
        })
        .collect();
    for ((i, _), outcome) in tasks.into_iter().zip(outcomes) {
        cells[i].estimates.push(outcome?);
    }
    Ok(EigenRecoveryResult { true_eigs, cells })
}

// ---------------------------------------------------------------------------
// Exhaustive L1 joint error
// ---------------------------------------------------------------------------

/// Sum of `|Pr - estimated Pr|` over every length-`t` sequence.
pub fn l1_joint_error(model: &ObservableModel, params: &RrHmmParams, t: usize) -> Result<f64> {
    let n = params.obs_count();
    if model.n_base() != n {
        return Err(Error::DimensionMismatch(format!(
            "model alphabet {} != params alphabet {n}",
            model.n_base()
        )));
    }
    let mut space: usize = 1;
    for _ in 0..t {
        space = space.saturating_mul(n);
        if space > SEQUENCE_SPACE_CAP {
            return Err(Error::SequenceSpaceTooLarge {
                n,
                t,
                cap: SEQUENCE_SPACE_CAP,
            });
        }
    }
    // Depth-first over the sequence tree, sharing prefix products of both
    // the exact forward state and the learned operators.
    fn recurse(
        model: &ObservableModel,
        params: &RrHmmParams,
        depth: usize,
        state: &DVector<f64>,
        belief: &DVector<f64>,
    ) -> f64 {
        if depth == 0 {
            let exact: f64 = state.sum();
            let estimated = model.b_inf().dot(belief);
            return (exact - estimated).abs();
        }
        let mut total = 0.0;
        for x in 1..=params.obs_count() {
            let mut weighted = state.clone();
            for j in 0..params.state_count() {
                weighted[j] *= params.observation()[(x - 1, j)];
            }
            let next_state = params.transition() * weighted;
            let next_belief = model.operator(x).expect("alphabets checked to match") * belief;
            total += recurse(model, params, depth - 1, &next_state, &next_belief);
        }
        total
    }
    Ok(recurse(model, params, t, params.prior(), model.b1()))
}

/// Exhaustive L1 errors per trial at each sample size.
#[derive(Debug, Clone)]
pub struct L1ErrorResult {
    pub t: usize,
    pub cells: Vec<L1Cell>,
}

#[derive(Debug, Clone)]
pub struct L1Cell {
    pub n: u64,
    pub errors: Vec<f64>,
}

impl L1Cell {
    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    pub fn stderr(&self) -> f64 {
        let mean = self.mean();
        let trials = self.errors.len();
        let var = self.errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (trials.max(2) - 1) as f64;
        (var / trials as f64).sqrt()
    }
}

/// Sample, learn, and measure the exhaustive length-`t` L1 error per
/// (sample size, trial) cell. Same sharding and seeding scheme as
/// [`eigen_recovery_experiment`].
pub fn l1_error_experiment(
    params: &RrHmmParams,
    k: usize,
    t: usize,
    ns: &[u64],
    trials: usize,
    seed: u64,
) -> Result<L1ErrorResult> {
    let tasks: Vec<(usize, usize)> = (0..ns.len())
        .flat_map(|i| (0..trials).map(move |j| (i, j)))
        .collect();
    let run_cell = |&(i, j): &(usize, usize)| -> Result<f64> {
        let cell_seed = derive_seed(seed, i as u64, j as u64);
        let model = learn_from_samples(params, k, ns[i], cell_seed, 1)?;
        l1_joint_error(&model, params, t)
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<f64>> = tasks.par_iter().map(run_cell).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<f64>> = tasks.iter().map(run_cell).collect();

    let mut cells: Vec<L1Cell> = ns
        .iter()
        .map(|&n| L1Cell {
            n,
            errors: Vec::with_capacity(trials),
        })
        .collect();
    for ((i, _), outcome) in tasks.into_iter().zip(outcomes) {
        cells[i].errors.push(outcome?);
    }
    Ok(L1ErrorResult { t, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::moments::population_moments;

    #[test]
    fn n0_is_one_when_everything_is_allowed() {
        let report = bound_quantities(&builtin::example1(), 1, None, 1.0, 0.05, 3, 1.0).unwrap();
        assert_eq!(report.n0_at_epsilon, 1);
    }

    #[test]
    fn n0_on_uniform_marginal_is_half() {
        for n in [4usize, 6, 9] {
            let marginal = vec![1.0 / n as f64; n];
            let n0 = n0_from_marginal(&marginal, 0.5);
            assert_eq!(n0, n.div_ceil(2), "uniform over {n}");
        }
    }

    #[test]
    fn n0_is_non_increasing_in_eps() {
        let marginal = [0.4, 0.3, 0.15, 0.1, 0.05];
        let mut previous = usize::MAX;
        for eps in [0.01, 0.05, 0.1, 0.3, 0.6, 1.0] {
            let n0 = n0_from_marginal(&marginal, eps);
            assert!(n0 <= previous, "n0 grew as eps rose");
            previous = n0;
        }
    }

    #[test]
    fn example1_bound_quantities_are_positive() {
        let report = bound_quantities(&builtin::example1(), 1, None, 0.1, 0.05, 3, 1.0).unwrap();
        assert!(report.sigma_k_p21 > 0.0);
        assert!(report.sigma_k_or > 0.0);
        assert!(report.theorem_n.is_finite() && report.theorem_n > 0.0);
        assert!(report.n0_at_varepsilon >= 1 && report.n0_at_varepsilon <= 3);
    }

    #[test]
    fn theorem_n_is_monotone_in_t_and_epsilon() {
        let params = builtin::example1();
        let at = |eps: f64, t: usize| {
            bound_quantities(&params, 1, None, eps, 0.05, t, 1.0)
                .unwrap()
                .theorem_n
        };
        assert!(at(0.1, 4) > at(0.1, 2));
        assert!(at(0.05, 3) > at(0.2, 3));
    }

    #[test]
    fn matching_is_a_bijection() {
        let reference = vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.5, 0.1),
            Complex::new(0.2, -0.1),
        ];
        let shuffled = vec![reference[2], reference[0], reference[1]];
        let matched = match_eigenvalues(&reference, &shuffled);
        for (a, b) in matched.iter().zip(&reference) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn population_model_l1_error_is_negligible() {
        let params = builtin::example1();
        let model = learn(&population_moments(&params), 2).unwrap();
        let err = l1_joint_error(&model, &params, 3).unwrap();
        assert!(err <= 1e-8, "population L1 error {err}");
    }

    #[test]
    fn l1_error_rejects_oversized_sequence_space() {
        let params = crate::hmm::polygon_hmm(10);
        let model = learn(&population_moments(&params), 3).unwrap();
        assert!(matches!(
            l1_joint_error(&model, &params, 10),
            Err(Error::SequenceSpaceTooLarge { .. })
        ));
    }

    // Wiring smoke test; the precision gate lives in the acceptance suite.
    #[test]
    fn eigen_recovery_smoke_on_example1() {
        let params = builtin::example1();
        let result = eigen_recovery_experiment(&params, 2, &[50_000], 4, 13, 1).unwrap();
        assert_eq!(result.true_eigs.len(), 2);
        assert_eq!(result.cells[0].estimates.len(), 4);
        for summary in result.summaries() {
            assert!(
                (summary.mean - summary.true_value).norm() < 0.15,
                "index {}: mean {} vs true {}",
                summary.index,
                summary.mean,
                summary.true_value
            );
        }
    }

    #[test]
    fn experiments_are_deterministic() {
        let params = builtin::example1();
        let a = l1_error_experiment(&params, 2, 2, &[2_000], 3, 5).unwrap();
        let b = l1_error_experiment(&params, 2, 2, &[2_000], 3, 5).unwrap();
        assert_eq!(a.cells[0].errors, b.cells[0].errors);
    }
}
