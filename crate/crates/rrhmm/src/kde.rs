//! Real-valued observations through kernel density features.
//!
//! Continuous points are turned into normalized kernel-weight vectors over a
//! fixed set of centers; those stochastic vectors replace the indicator
//! vectors of the discrete estimators, so the whole moment/learning pipeline
//! carries over unchanged. The learner then yields one base operator per
//! kernel center, and filtering applies the convex combination of base
//! operators weighted by the current point's feature vector.
//!
//! Feature conventions: the first and third observation of each training
//! triple use the unscaled kernel, while the middle observation (and every
//! point during filtering) uses the kernel scaled by the bandwidth. The
//! asymmetry is intentional; the middle slot indexes the operators and must
//! sharpen as the bandwidth shrinks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{apply_operator, BeliefState};
use crate::moments::{EventSpace, MomentEstimates};
use crate::spectral::ObservableModel;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const KDE_CHUNK: usize = 4096;

// ---------------------------------------------------------------------------
// Whitening and configuration
// ---------------------------------------------------------------------------

/// Fixed affine pre-transform making the kernel elliptical: distances are
/// measured as `||transform * (x - mean)||` in whitened coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Whitening {
    pub mean: Vec<f64>,
    /// Row-major `d x d` matrix.
    pub transform: Vec<Vec<f64>>,
}

impl Whitening {
    /// Identity whitening in `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            transform: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Estimate from training points: spherical covariance after projecting
    /// onto the sample covariance's singular vectors, with each axis scaled
    /// by its standard deviation times the reference-rule factor
    /// `N^(-1/(d+4))`. Degenerate axes inherit the largest scale.
    pub fn from_data(points: &[DVector<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = points[0].len();
        let n = points.len() as f64;
        let mut mean = DVector::zeros(d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch(
                    "training points have mixed dimensions".into(),
                ));
            }
            mean += p;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for p in points {
            let c = p - &mean;
            cov += &c * c.transpose();
        }
        cov /= n.max(2.0) - 1.0;
        let svd = cov.svd(true, false);
        let basis = svd.u.expect("u requested");
        let reference = n.powf(-1.0 / (d as f64 + 4.0));
        let max_scale = svd
            .singular_values
            .iter()
            .map(|v| v.sqrt())
            .fold(0.0, f64::max);
        let fallback = if max_scale > 0.0 { max_scale } else { 1.0 };
        let mut transform = DMatrix::zeros(d, d);
        for axis in 0..d {
            let scale = svd.singular_values[axis].sqrt();
            let scale = if scale > 1e-12 * fallback {
                scale
            } else {
                fallback
            };
            let row = basis.column(axis).transpose() / (scale * reference);
            transform.set_row(axis, &row);
        }
        Ok(Self {
            mean: mean.iter().cloned().collect(),
            transform: (0..d)
                .map(|i| (0..d).map(|j| transform[(i, j)]).collect())
                .collect(),
        })
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.mean.len();
        let mut out = DVector::zeros(d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.transform[i][j] * (x[j] - self.mean[j]);
            }
            out[i] = acc;
        }
        out
    }
}

/// Kernel centers, bandwidth, and the whitening transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeConfig {
    /// `n` distinct points in R^d.
    pub centers: Vec<Vec<f64>>,
    /// Extra scale applied to the kernel for middle/filtering features.
    pub bandwidth: f64,
    pub whitening: Whitening,
}

impl KdeConfig {
    pub fn new(centers: Vec<Vec<f64>>, bandwidth: f64, whitening: Whitening) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::DimensionMismatch(
                "need at least 2 kernel centers".into(),
            ));
        }
        if bandwidth <= 0.0 || bandwidth.is_nan() {
            return Err(Error::DimensionMismatch(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let d = centers[0].len();
        if centers.iter().any(|c| c.len() != d) {
            return Err(Error::DimensionMismatch(
                "kernel centers have mixed dimensions".into(),
            ));
        }
        for (i, a) in centers.iter().enumerate() {
            for b in centers.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::DimensionMismatch(
                        "kernel centers must be pairwise distinct".into(),
                    ));
                }
            }
        }
        Ok(Self {
            centers,
            bandwidth,
            whitening,
        })
    }

    /// Centers are the first `n_centers` distinct points of the training
    /// stream; whitening is estimated once from the full stream.
    pub fn from_training(
        points: &[DVector<f64>],
        n_centers: usize,
        bandwidth: f64,
    ) -> Result<Self> {
        let mut centers: Vec<Vec<f64>> = Vec::new();
        for p in points {
            let candidate: Vec<f64> = p.iter().cloned().collect();
            if !centers.contains(&candidate) {
                centers.push(candidate);
            }
            if centers.len() == n_centers {
                break;
            }
        }
        Self::new(centers, bandwidth, Whitening::from_data(points)?)
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

/// Normalized kernel-weight vector of a point against the centers.
///
/// Weights are `exp(-||W(x - c_i)||^2 / 2)`, additionally divided by the
/// bandwidth inside the norm when `scaled` is set. If every weight
/// underflows to zero the vector falls back to a one-hot at the nearest
/// center (ties toward the lower index), which keeps filtering alive far
/// from the training support.
pub fn featurize(x: &DVector<f64>, config: &KdeConfig, scaled: bool) -> Result<DVector<f64>> {
    if x.len() != config.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {}, centers have {}",
            x.len(),
            config.dim()
        )));
    }
    let n = config.n_centers();
    let mut weights = DVector::zeros(n);
    let mut sq_dists = vec![0.0f64; n];
    for (i, center) in config.centers.iter().enumerate() {
        let c = DVector::from_vec(center.clone());
        let diff = config.whitening.apply(x) - config.whitening.apply(&c);
        let mut sq = diff.norm_squared();
        if scaled {
            sq /= config.bandwidth * config.bandwidth;
        }
        sq_dists[i] = sq;
        weights[i] = (-0.5 * sq).exp();
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        Ok(weights / total)
    } else {
        let mut nearest = 0;
        let mut best = f64::INFINITY;
        for (i, &sq) in sq_dists.iter().enumerate() {
            if sq < best {
                best = sq;
                nearest = i;
            }
        }
        let mut one_hot = DVector::zeros(n);
        one_hot[nearest] = 1.0;
        Ok(one_hot)
    }
}

// ---------------------------------------------------------------------------
// Moment estimation
// ---------------------------------------------------------------------------

/// Normalized kernel features of one training triple. The middle observation
/// appears twice: unscaled like its neighbors, and bandwidth-scaled where it
/// selects the operator slice.
#[derive(Debug, Clone)]
pub struct FeatureVectors {
    pub first: DVector<f64>,
    pub middle: DVector<f64>,
    pub third: DVector<f64>,
    pub middle_scaled: DVector<f64>,
}

pub fn featurize_triple(triple: &[DVector<f64>; 3], config: &KdeConfig) -> Result<FeatureVectors> {
    Ok(FeatureVectors {
        first: featurize(&triple[0], config, false)?,
        middle: featurize(&triple[1], config, false)?,
        third: featurize(&triple[2], config, false)?,
        middle_scaled: featurize(&triple[1], config, true)?,
    })
}

/// Estimate moments from continuous observation triples.
///
/// `P1` averages the first-slot features, `P21` the outer products of second
/// against first, and `P3[x]` the outer products of third against first
/// weighted by the bandwidth-scaled middle feature at center `x`. Every
/// statistic is a convex combination of stochastic vectors or their outer
/// products, so the discrete invariants carry over.
pub fn estimate_moments_kde(
    triples: &[[DVector<f64>; 3]],
    config: &KdeConfig,
) -> Result<MomentEstimates> {
    if triples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = config.n_centers();
    let accumulate = |chunk: &[[DVector<f64>; 3]]| -> Result<Accumulator> {
        let mut acc = Accumulator::new(n);
        for triple in chunk {
            let features = featurize_triple(triple, config)?;
            acc.p1 += &features.first;
            acc.p21 += &features.middle * features.first.transpose();
            let outer = &features.third * features.first.transpose();
            for x in 0..n {
                acc.p3[x] += features.middle_scaled[x] * &outer;
            }
            acc.count += 1;
        }
        Ok(acc)
    };
    // Fixed chunk size keeps the float merge order independent of the
    // thread count, so results are bit-identical in both modes.
    #[cfg(feature = "parallel")]
    let partials: Vec<Result<Accumulator>> =
        triples.par_chunks(KDE_CHUNK).map(accumulate).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Result<Accumulator>> = triples.chunks(KDE_CHUNK).map(accumulate).collect();

    let mut total = Accumulator::new(n);
    for partial in partials {
        total = total.merge(partial?);
    }
    let count = total.count as f64;
    Ok(MomentEstimates {
        event_space: EventSpace::new(n, 1)?,
        sample_count: Some(total.count),
        p1: total.p1 / count,
        p21: total.p21 / count,
        p3: total.p3.into_iter().map(|m| m / count).collect(),
    })
}

struct Accumulator {
    p1: DVector<f64>,
    p21: DMatrix<f64>,
    p3: Vec<DMatrix<f64>>,
    count: u64,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            p1: DVector::zeros(n),
            p21: DMatrix::zeros(n, n),
            p3: vec![DMatrix::zeros(n, n); n],
            count: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.p1 += other.p1;
        self.p21 += other.p21;
        for (a, b) in self.p3.iter_mut().zip(other.p3) {
            *a += b;
        }
        self.count += other.count;
        self
    }
}

// ---------------------------------------------------------------------------
// Blended filtering
// ---------------------------------------------------------------------------

/// Convex combination of the model's base operators weighted by a normalized
/// feature vector.
pub fn blended_operator(model: &ObservableModel, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
    if sigma.len() != model.n_base() {
        return Err(Error::DimensionMismatch(format!(
            "feature vector length {} != operator count {}",
            sigma.len(),
            model.n_base()
        )));
    }
    let total: f64 = sigma.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(total));
    }
    let k = model.rank();
    let mut blended = DMatrix::zeros(k, k);
    for (x, weight) in sigma.iter().enumerate() {
        if *weight != 0.0 {
            blended += *weight * model.operator(x + 1)?;
        }
    }
    Ok(blended)
}

/// Advance a belief by one continuous observation: featurize with the scaled
/// kernel, blend the base operators, and apply the shared filter update with
/// the usual floor and trust semantics.
pub fn filter_continuous(
    model: &ObservableModel,
    state: &BeliefState,
    x: &DVector<f64>,
    config: &KdeConfig,
) -> Result<BeliefState> {
    let sigma = featurize(x, config, true)?;
    let op = blended_operator(model, &sigma)?;
    Ok(apply_operator(model, state, &op))
}

/// Predictive density of a point: mixture of the bandwidth-scaled kernels
/// weighted by `weights` (one per center), evaluated in whitened coordinates.
/// Useful for scoring one-step predictions against a held-out trajectory.
pub fn mixture_density(config: &KdeConfig, weights: &[f64], x: &DVector<f64>) -> Result<f64> {
    if weights.len() != config.n_centers() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} centers",
            weights.len(),
            config.n_centers()
        )));
    }
    let d = config.dim() as f64;
    let lambda = config.bandwidth;
    // Jacobian of the whitening map, so densities integrate to one in the
    // original coordinates.
    let transform = DMatrix::from_fn(config.dim(), config.dim(), |i, j| {
        config.whitening.transform[i][j]
    });
    let jacobian = transform.determinant().abs();
    let norm_const = jacobian / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * lambda.powf(d));
    let mut density = 0.0;
    for (center, &w) in config.centers.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let c = DVector::from_vec(center.clone());
        let diff = config.whitening.apply(x) - config.whitening.apply(&c);
        let sq = diff.norm_squared() / (lambda * lambda);
        density += w * norm_const * (-0.5 * sq).exp();
    }
    Ok(density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::hmm::sample_triples;
    use crate::hmm::SampleMode;
    use crate::linalg;
    use crate::moments::estimate_moments;
    use crate::spectral::learn;

    fn line_config(scale: f64, bandwidth: f64) -> KdeConfig {
        // 1-D centers at 1, 2, 3 with an explicit kernel width.
        let mut whitening = Whitening::identity(1);
        whitening.transform[0][0] = 1.0 / scale;
        KdeConfig::new(vec![vec![1.0], vec![2.0], vec![3.0]], bandwidth, whitening).unwrap()
    }

    #[test]
    fn feature_at_center_with_small_width_is_one_hot() {
        let config = line_config(1e-3, 1.0);
        let phi = featurize(&DVector::from_vec(vec![2.0]), &config, false).unwrap();
        assert!((phi[1] - 1.0).abs() <= 1e-12);
        assert!(phi[0].abs() <= 1e-12 && phi[2].abs() <= 1e-12);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let config = line_config(0.5, 1.0);
        let phi = featurize(&DVector::from_vec(vec![1.5]), &config, false).unwrap();
        assert!((phi[0] - phi[1]).abs() <= 1e-12);
        let sum: f64 = phi.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn two_unit_gaussians_split_half_half_at_midpoint() {
        let whitening = Whitening::identity(1);
        let config = KdeConfig::new(vec![vec![0.0], vec![1.0]], 1.0, whitening).unwrap();
        let phi = featurize(&DVector::from_vec(vec![0.5]), &config, false).unwrap();
        assert!((phi[0] - 0.5).abs() <= 1e-12);
        assert!((phi[1] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn underflow_falls_back_to_nearest_center() {
        let config = line_config(1e-6, 1.0);
        // 1e6 standard deviations from every center: all weights underflow.
        let phi = featurize(&DVector::from_vec(vec![7.0]), &config, false).unwrap();
        assert_eq!(phi[2], 1.0);
        assert_eq!(phi[0], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let config = line_config(1.0, 1.0);
        assert!(matches!(
            featurize(&DVector::from_vec(vec![1.0, 2.0]), &config, false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn single_triple_moments_are_outer_products() {
        let config = line_config(0.5, 1.0);
        let triple = [
            DVector::from_vec(vec![1.2]),
            DVector::from_vec(vec![2.1]),
            DVector::from_vec(vec![2.9]),
        ];
        let m = estimate_moments_kde(std::slice::from_ref(&triple), &config).unwrap();
        let phi = featurize(&triple[0], &config, false).unwrap();
        let psi = featurize(&triple[1], &config, false).unwrap();
        let expected = &psi * phi.transpose();
        assert!(linalg::max_abs(&(&m.p21 - expected)) <= 1e-15);
        m.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn total_mass_is_one_regardless_of_data() {
        let config = line_config(0.7, 0.9);
        let mut rng = crate::rng::stream_rng(5, 0);
        let triples: Vec<[DVector<f64>; 3]> = (0..200)
            .map(|_| {
                [
                    DVector::from_vec(vec![rand::Rng::gen::<f64>(&mut rng) * 4.0]),
                    DVector::from_vec(vec![rand::Rng::gen::<f64>(&mut rng) * 4.0]),
                    DVector::from_vec(vec![rand::Rng::gen::<f64>(&mut rng) * 4.0]),
                ]
            })
            .collect();
        let m = estimate_moments_kde(&triples, &config).unwrap();
        m.check_invariants(1e-10).unwrap();
    }

    #[test]
    fn one_hot_features_reproduce_discrete_estimator() {
        // Discrete symbols embedded at the centers, widths tiny enough that
        // every feature vector is an exact indicator.
        let params = builtin::example1();
        let triples = sample_triples(&params, 2000, 21, SampleMode::Restart).unwrap();
        let discrete = estimate_moments(&triples, 3).unwrap();
        let config = line_config(1e-3, 1.0);
        let continuous: Vec<[DVector<f64>; 3]> = triples
            .iter()
            .map(|t| {
                [
                    DVector::from_vec(vec![t[0] as f64]),
                    DVector::from_vec(vec![t[1] as f64]),
                    DVector::from_vec(vec![t[2] as f64]),
                ]
            })
            .collect();
        let kde = estimate_moments_kde(&continuous, &config).unwrap();
        assert!(linalg::max_abs(&(&kde.p21 - &discrete.p21)) <= 1e-8);
        for x in 0..3 {
            assert!(linalg::max_abs(&(&kde.p3[x] - &discrete.p3[x])) <= 1e-8);
        }
        assert!((&kde.p1 - &discrete.p1).abs().max() <= 1e-8);
    }

    #[test]
    fn blending_returns_base_operator_on_indicator() {
        let params = builtin::example1();
        let model = learn(&crate::moments::population_moments(&params), 2).unwrap();
        let mut sigma = DVector::zeros(3);
        sigma[1] = 1.0;
        let blended = blended_operator(&model, &sigma).unwrap();
        assert!(linalg::max_abs(&(blended - model.operator(2).unwrap())) == 0.0);
    }

    #[test]
    fn blending_is_linear_and_norm_bounded() {
        let params = builtin::example1();
        let model = learn(&crate::moments::population_moments(&params), 2).unwrap();
        let u = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let v = DVector::from_vec(vec![0.6, 0.1, 0.3]);
        let alpha = 0.35;
        let mixed = blended_operator(&model, &(alpha * &u + (1.0 - alpha) * &v)).unwrap();
        let separate = alpha * blended_operator(&model, &u).unwrap()
            + (1.0 - alpha) * blended_operator(&model, &v).unwrap();
        assert!(linalg::max_abs(&(mixed.clone() - separate)) <= 1e-14);

        let max_base_norm = (1..=3)
            .map(|x| linalg::sigma(model.operator(x).unwrap(), 1))
            .fold(0.0, f64::max);
        assert!(linalg::sigma(&mixed, 1) <= max_base_norm + 1e-12);
    }

    #[test]
    fn unnormalized_sigma_is_rejected() {
        let params = builtin::example1();
        let model = learn(&crate::moments::population_moments(&params), 2).unwrap();
        let sigma = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        assert!(matches!(
            blended_operator(&model, &sigma),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn continuous_filter_at_center_matches_discrete_filter() {
        let params = builtin::example1();
        let model = learn(&crate::moments::population_moments(&params), 2).unwrap();
        let config = line_config(1.0, 1e-3);
        let state = crate::inference::init_belief(&model);
        let discrete = crate::inference::filter_update(&model, &state, 2).unwrap();
        let continuous =
            filter_continuous(&model, &state, &DVector::from_vec(vec![2.0]), &config).unwrap();
        let err = (discrete.vector() - continuous.vector()).abs().max();
        assert!(err <= 1e-8, "filtered states differ by {err}");
    }

    #[test]
    fn whitening_from_degenerate_data_stays_finite() {
        let points: Vec<DVector<f64>> = (0..50)
            .map(|i| DVector::from_vec(vec![i as f64, 3.0]))
            .collect();
        let w = Whitening::from_data(&points).unwrap();
        for row in &w.transform {
            for v in row {
                assert!(v.is_finite());
            }
        }
    }

    #[test]
    fn mixture_density_integrates_to_about_one() {
        let config = line_config(1.0, 0.5);
        let weights = [0.2, 0.5, 0.3];
        let mut integral = 0.0;
        let step = 0.01;
        let mut x = -5.0;
        while x < 9.0 {
            integral +=
                step * mixture_density(&config, &weights, &DVector::from_vec(vec![x])).unwrap();
            x += step;
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }
}
