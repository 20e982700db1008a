//! Filtering, prediction, and simulation with the learned k x k operators.
//!
//! Every step is one operator-vector product plus one dot product, so the
//! per-step cost depends only on the model rank, never on the latent state
//! count of whatever system generated the data.
//!
//! Estimated operators can produce negative or vanishing normalizers. The
//! update clamps the per-step normalizer at a small positive floor and marks
//! the belief untrusted for a configurable number of subsequent steps rather
//! than failing; probability-valued outputs are clamped and renormalized,
//! while raw values are preserved for diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{categorical, stream_rng};
use crate::spectral::ObservableModel;

/// Steps a belief stays untrusted after a normalizer underflow.
pub const DEFAULT_DISTRUST_HORIZON: u32 = 5;

/// The k-dimensional internal state of one filtered stream.
///
/// The state vector is a linear transform of the latent belief, not itself a
/// probability vector. `trusted` turns false for a few steps after any
/// normalizer underflow.
#[derive(Debug, Clone)]
pub struct BeliefState {
    b: DVector<f64>,
    step: usize,
    underflow_count: u64,
    distrust_remaining: u32,
    distrust_horizon: u32,
    last_normalizer: f64,
}

impl BeliefState {
    pub fn vector(&self) -> &DVector<f64> {
        &self.b
    }

    /// Time index: 1 before any update, t+1 after filtering t symbols.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn underflow_count(&self) -> u64 {
        self.underflow_count
    }

    pub fn trusted(&self) -> bool {
        self.distrust_remaining == 0
    }

    /// Normalizer of the update that produced this state (1.0 at init).
    pub fn last_normalizer(&self) -> f64 {
        self.last_normalizer
    }

    pub fn with_distrust_horizon(mut self, horizon: u32) -> Self {
        self.distrust_horizon = horizon;
        self
    }
}

/// Fresh belief at the model's initial vector.
pub fn init_belief(model: &ObservableModel) -> BeliefState {
    BeliefState {
        b: model.b1().clone(),
        step: 1,
        underflow_count: 0,
        distrust_remaining: 0,
        distrust_horizon: DEFAULT_DISTRUST_HORIZON,
        last_normalizer: 1.0,
    }
}

/// Raw and clamped sequence probability.
#[derive(Debug, Clone, Copy)]
pub struct SeqProb {
    /// The bilinear form exactly as computed; slightly negative values are
    /// possible for sampled models.
    pub raw: f64,
    /// `raw` clamped into [0, 1].
    pub clamped: f64,
}

/// Probability of an entire observation sequence,
/// `b_inf^T B_{x_t} ... B_{x_1} b1`.
pub fn seq_prob(model: &ObservableModel, seq: &[usize]) -> Result<SeqProb> {
    let mut v = model.b1().clone();
    for &x in seq {
        v = model.operator(x)? * v;
    }
    let raw = model.b_inf().dot(&v);
    Ok(SeqProb {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

/// Advance a belief by one observed symbol.
///
/// The new state is `Bx b / z` with `z = b_inf^T Bx b`; when `z` falls below
/// the model's floor the division uses the floor instead and the state is
/// flagged, never thrown.
pub fn filter_update(
    model: &ObservableModel,
    state: &BeliefState,
    x: usize,
) -> Result<BeliefState> {
    let op = model.operator(x)?;
    Ok(apply_operator(model, state, op))
}

/// Shared update used by both discrete symbols and blended kernel operators.
pub(crate) fn apply_operator(
    model: &ObservableModel,
    state: &BeliefState,
    op: &DMatrix<f64>,
) -> BeliefState {
    let v = op * &state.b;
    let z = model.b_inf().dot(&v);
    let floor = model.normalizer_floor();
    let underflowed = z < floor;
    let divisor = if underflowed { floor } else { z };
    BeliefState {
        b: v / divisor,
        step: state.step + 1,
        underflow_count: state.underflow_count + u64::from(underflowed),
        distrust_remaining: if underflowed {
            state.distrust_horizon
        } else {
            state.distrust_remaining.saturating_sub(1)
        },
        distrust_horizon: state.distrust_horizon,
        last_normalizer: z,
    }
}

/// One-step conditional probability of a single symbol.
#[derive(Debug, Clone, Copy)]
pub struct CondProb {
    /// Clamped, renormalized probability.
    pub prob: f64,
    /// Unclamped ratio against the unclamped denominator.
    pub raw: f64,
}

/// Clamped-and-renormalized one-step predictive distribution, with the raw
/// per-symbol values kept alongside.
#[derive(Debug, Clone)]
pub struct Predictive {
    pub probs: Vec<f64>,
    pub raws: Vec<f64>,
}

/// Predictive distribution over the next base symbol given the current state.
pub fn predictive_distribution(model: &ObservableModel, state: &BeliefState) -> Result<Predictive> {
    let numerators: Vec<f64> = (1..=model.n_base())
        .map(|x| {
            model
                .operator(x)
                .map(|op| model.b_inf().dot(&(op * &state.b)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let raw_denominator: f64 = numerators.iter().sum();
    let floor = model.normalizer_floor();
    if raw_denominator < floor {
        return Err(Error::DegenerateDenominator {
            denominator: raw_denominator,
            floor,
        });
    }
    let clamped_denominator: f64 = numerators.iter().map(|&v| v.max(0.0)).sum();
    if clamped_denominator < floor {
        return Err(Error::DegenerateDenominator {
            denominator: clamped_denominator,
            floor,
        });
    }
    Ok(Predictive {
        probs: numerators
            .iter()
            .map(|&v| v.max(0.0) / clamped_denominator)
            .collect(),
        raws: numerators.iter().map(|&v| v / raw_denominator).collect(),
    })
}

/// Conditional probability of one symbol given the filtered state.
pub fn cond_prob(model: &ObservableModel, state: &BeliefState, x: usize) -> Result<CondProb> {
    if x == 0 || x > model.n_base() {
        return Err(Error::SymbolOutOfRange {
            symbol: x,
            n: model.n_base(),
        });
    }
    let predictive = predictive_distribution(model, state)?;
    Ok(CondProb {
        prob: predictive.probs[x - 1],
        raw: predictive.raws[x - 1],
    })
}

/// Predictive distribution `horizon` steps ahead: the belief is propagated
/// `horizon - 1` times by the summed operator (no conditioning), then the
/// one-step predictive is taken.
pub fn predict_t_ahead(
    model: &ObservableModel,
    state: &BeliefState,
    horizon: usize,
) -> Result<Predictive> {
    assert!(horizon >= 1, "prediction horizon must be at least 1");
    let summed = model.summed_operator();
    let mut propagated = state.clone();
    for _ in 1..horizon {
        propagated = apply_operator(model, &propagated, &summed);
    }
    predictive_distribution(model, &propagated)
}

/// A simulated symbol sequence. `aborted` is set when the predictive
/// distribution degenerated before reaching the requested length; the
/// partial sequence up to that point is kept.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub symbols: Vec<usize>,
    pub aborted: bool,
}

/// Draw a sequence from the model by repeatedly sampling the clamped
/// predictive distribution and filtering on the drawn symbol. Deterministic
/// for a fixed seed.
pub fn simulate(model: &ObservableModel, length: usize, seed: u64) -> Simulation {
    let mut rng = stream_rng(seed, 0);
    let mut state = init_belief(model);
    let mut symbols = Vec::with_capacity(length);
    for _ in 0..length {
        let predictive = match predictive_distribution(model, &state) {
            Ok(p) => p,
            Err(_) => {
                return Simulation {
                    symbols,
                    aborted: true,
                }
            }
        };
        let x = categorical(&mut rng, &predictive.probs) + 1;
        symbols.push(x);
        state = match filter_update(model, &state, x) {
            Ok(next) => next,
            Err(_) => {
                return Simulation {
                    symbols,
                    aborted: true,
                }
            }
        };
    }
    Simulation {
        symbols,
        aborted: false,
    }
}
