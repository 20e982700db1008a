//! Learning the observable-operator model from moment estimates.
//!
//! The learner projects the bigram matrix onto its top-k left singular
//! subspace and reads the model off three regressions:
//!
//! ```text
//! b1   = U^T P1
//! binf = (P21^T U)^+ P1
//! Bx   = (U^T P3[x]) (U^T P21)^+        for every base symbol x
//! ```
//!
//! On exact population moments each `Bx` is a similarity transform of the
//! generating model's low-dimensional operator `W_x`, so all sequence
//! probabilities are reproduced without ever recovering the latent
//! parameters. [`similarity_check`] verifies those identities directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{stacked_observation_matrix, RrHmmParams};
use crate::linalg;
use crate::moments::{EventSpace, MomentEstimates};

/// Relative pseudoinverse cutoff: singular values below this fraction of the
/// largest are treated as zero in the regressions.
pub const PINV_RCOND: f64 = 1e-10;
/// `sigma_k(P21)` below this fraction of `sigma_1` makes the projection
/// meaningless and learning fails instead of returning garbage.
pub const DEGENERATE_REL_TOL: f64 = 1e-12;
/// Default per-step normalizer floor carried into inference.
pub const DEFAULT_NORMALIZER_FLOOR: f64 = 1e-12;

/// A learned observable-operator model of rank `k`.
///
/// Holds the projection `U` (one row per past/future event), the boundary
/// vectors `b1` and `b_inf`, and one `k x k` operator per base observation
/// symbol. Immutable once learned; filtering state lives elsewhere.
#[derive(Debug, Clone)]
pub struct ObservableModel {
    k: usize,
    event_space: EventSpace,
    u: DMatrix<f64>,
    b1: DVector<f64>,
    b_inf: DVector<f64>,
    operators: Vec<DMatrix<f64>>,
    normalizer_floor: f64,
}

impl ObservableModel {
    pub fn rank(&self) -> usize {
        self.k
    }

    /// Base alphabet size (number of per-symbol operators).
    pub fn n_base(&self) -> usize {
        self.operators.len()
    }

    pub fn event_space(&self) -> EventSpace {
        self.event_space
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn b_inf(&self) -> &DVector<f64> {
        &self.b_inf
    }

    /// Operator for a 1-based base symbol.
    pub fn operator(&self, x: usize) -> Result<&DMatrix<f64>> {
        if x == 0 || x > self.operators.len() {
            return Err(Error::SymbolOutOfRange {
                symbol: x,
                n: self.operators.len(),
            });
        }
        Ok(&self.operators[x - 1])
    }

    pub fn operators(&self) -> &[DMatrix<f64>] {
        &self.operators
    }

    /// Sum of all per-symbol operators; propagates belief one step without
    /// conditioning on an observation.
    pub fn summed_operator(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.k, self.k);
        for op in &self.operators {
            b += op;
        }
        b
    }

    pub fn normalizer_floor(&self) -> f64 {
        self.normalizer_floor
    }

    pub fn with_normalizer_floor(mut self, floor: f64) -> Self {
        self.normalizer_floor = floor;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            k: self.k,
            n: self.event_space.n_base(),
            window: self.event_space.window(),
            u: rows_of(&self.u),
            b1: self.b1.iter().cloned().collect(),
            b_inf: self.b_inf.iter().cloned().collect(),
            bx: self.operators.iter().map(rows_of).collect(),
            normalizer_floor: self.normalizer_floor,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let space = EventSpace::new(file.n, file.window)?;
        let e = space.n_events();
        let u = matrix_of(&file.u, e, file.k, "U")?;
        if file.b1.len() != file.k || file.b_inf.len() != file.k {
            return Err(Error::InvalidModel("b1/b_inf length != k".into()));
        }
        if file.bx.len() != file.n {
            return Err(Error::InvalidModel(format!(
                "expected {} operators, got {}",
                file.n,
                file.bx.len()
            )));
        }
        let operators = file
            .bx
            .iter()
            .map(|rows| matrix_of(rows, file.k, file.k, "Bx"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k: file.k,
            event_space: space,
            u,
            b1: DVector::from_vec(file.b1),
            b_inf: DVector::from_vec(file.b_inf),
            operators,
            normalizer_floor: file.normalizer_floor,
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
struct ModelFile {
    k: usize,
    n: usize,
    window: usize,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    b1: Vec<f64>,
    b_inf: Vec<f64>,
    #[serde(rename = "Bx")]
    bx: Vec<Vec<Vec<f64>>>,
    normalizer_floor: f64,
}

fn rows_of(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn matrix_of(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidModel(format!(
            "{name} must be {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// Learning
// ---------------------------------------------------------------------------

/// Learn a rank-`k` observable model from moment estimates.
///
/// The SVD's column signs are fixed deterministically (largest-magnitude
/// entry positive), so repeated runs on the same moments produce identical
/// models. Fails with `RankTooLarge` when `k` exceeds the moment dimensions
/// and with `DegenerateMoments` when `sigma_k(P21)` is indistinguishable
/// from zero.
pub fn learn(moments: &MomentEstimates, k: usize) -> Result<ObservableModel> {
    let e = moments.event_space.n_events();
    if k == 0 || k > e {
        return Err(Error::RankTooLarge { k, dim: e });
    }
    let (u, spectrum) = linalg::top_left_singular(&moments.p21, k);
    let sigma_1 = spectrum.first().copied().unwrap_or(0.0);
    let sigma_k = spectrum.get(k - 1).copied().unwrap_or(0.0);
    if sigma_1 <= 0.0 || sigma_k < DEGENERATE_REL_TOL * sigma_1 {
        return Err(Error::DegenerateMoments {
            k,
            sigma: sigma_k,
            threshold: DEGENERATE_REL_TOL,
        });
    }
    let ut = u.transpose();
    let b1 = &ut * &moments.p1;
    let b_inf_mat = linalg::pinv(&(moments.p21.transpose() * &u), PINV_RCOND);
    let b_inf = &b_inf_mat * &moments.p1;
    let projected_p21_pinv = linalg::pinv(&(&ut * &moments.p21), PINV_RCOND);
    let operators = moments
        .p3
        .iter()
        .map(|slice| (&ut * slice) * &projected_p21_pinv)
        .collect();
    Ok(ObservableModel {
        k,
        event_space: moments.event_space,
        u,
        b1,
        b_inf,
        operators,
        normalizer_floor: DEFAULT_NORMALIZER_FLOOR,
    })
}

// ---------------------------------------------------------------------------
// Rank selection
// ---------------------------------------------------------------------------

/// The bigram spectrum and the rank chosen at a relative threshold.
#[derive(Debug, Clone)]
pub struct RankSelection {
    /// Full singular-value spectrum of `P21`, descending.
    pub singular_values: Vec<f64>,
    pub chosen_k: usize,
    pub threshold_used: f64,
}

/// Choose the model rank by counting singular values of `P21` at or above
/// `threshold` times the largest. `threshold` must lie in (0, 1).
pub fn select_rank(moments: &MomentEstimates, threshold: f64) -> RankSelection {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    let singular_values = linalg::singular_values(&moments.p21);
    let sigma_1 = singular_values.first().copied().unwrap_or(0.0);
    let chosen_k = if sigma_1 > 0.0 {
        singular_values
            .iter()
            .filter(|&&s| s >= threshold * sigma_1)
            .count()
    } else {
        0
    };
    RankSelection {
        singular_values,
        chosen_k,
        threshold_used: threshold,
    }
}

// ---------------------------------------------------------------------------
// Similarity verification
// ---------------------------------------------------------------------------

/// Verify that a model learned from population moments of `params` is the
/// expected similarity transform of the generating model.
///
/// With `M = U^T Obar R` (the block emission matrix for the model's window),
/// checks `M^-1 Bx M = W_x` for every symbol, `b1 = M pi_l`, and
/// `b_inf^T = 1^T R M^-1`, returning the largest absolute deviation found.
pub fn similarity_check(model: &ObservableModel, params: &RrHmmParams) -> Result<f64> {
    if model.event_space.n_base() != params.obs_count() {
        return Err(Error::DimensionMismatch(format!(
            "model alphabet {} != params alphabet {}",
            model.event_space.n_base(),
            params.obs_count()
        )));
    }
    let obar = stacked_observation_matrix(params, model.event_space.window())?;
    let map = model.u.transpose() * &obar * params.expand_factor();
    if map.nrows() != map.ncols() {
        return Err(Error::NotInvertible(0.0));
    }
    let k = map.nrows();
    let sigma_k = linalg::sigma(&map, k);
    if sigma_k < 1e-10 {
        return Err(Error::NotInvertible(sigma_k));
    }
    let inv = map
        .clone()
        .try_inverse()
        .ok_or(Error::NotInvertible(sigma_k))?;

    let mut worst = 0.0f64;
    for x in 1..=params.obs_count() {
        let recovered = &inv * model.operator(x)? * &map;
        let expected = params.low_rank_operator(x)?;
        worst = worst.max(linalg::max_abs(&(recovered - expected)));
    }
    let (pi_low, _) = params.low_rank_prior();
    let b1_expected = &map * pi_low;
    worst = worst.max((model.b1() - b1_expected).abs().max());
    let ones_r =
        params.expand_factor().transpose() * DVector::from_element(params.state_count(), 1.0);
    let b_inf_expected = inv.transpose() * ones_r;
    worst = worst.max((model.b_inf() - b_inf_expected).abs().max());
    Ok(worst)
}
