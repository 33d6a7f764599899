//! Iterative Bradley-Terry fitting.
//!
//! Each model `i` carries a positive score `p_i` and beats model `j` with
//! probability `p_i / (p_i + p_j)`. Given win counts `w_ij`, the maximum
//! likelihood scores are the fixed point of
//!
//! ```text
//!         sum_{j != i} w_ij * p_j / (p_i + p_j)
//! p_i <- ---------------------------------------
//!         sum_{j != i} w_ji / (p_i + p_j)
//! ```
//!
//! evaluated for every model from the same input vector. On its own that
//! simultaneous map is not a contraction: with two models it flips the score
//! ratio `r` to `k^2 / r` and oscillates forever. Each step therefore takes
//! the geometric mean of the old score and the mapped score. The map is
//! homogeneous of degree one, so the relaxed step has exactly the same fixed
//! points, and for two models it lands on the win fraction in one step.
//!
//! Scores are only defined up to a common factor; every step rescales them
//! to sum to 100.

use serde::{Deserialize, Serialize};

use crate::domain::{CriterionKind, ModelId};

use super::{RankingError, WinMatrix};

/// Sum of a normalized score vector.
pub const SCORE_TOTAL: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    scores: Vec<f64>,
    normalized: bool,
}

impl ScoreVector {
    /// Wraps raw scores; every entry must be finite and strictly positive.
    pub fn new(scores: Vec<f64>) -> Result<Self, RankingError> {
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(RankingError::NonPositiveScore { index, value });
        }
        Ok(ScoreVector {
            scores,
            normalized: false,
        })
    }

    pub fn uniform(len: usize) -> Self {
        ScoreVector {
            scores: vec![SCORE_TOTAL / len as f64; len],
            normalized: true,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.scores.get(i).copied()
    }
}

/// Rescales scores to sum to 100, preserving their order.
pub fn normalize(scores: &ScoreVector) -> ScoreVector {
    let factor = SCORE_TOTAL / scores.sum();
    ScoreVector {
        scores: scores.scores.iter().map(|s| s * factor).collect(),
        normalized: true,
    }
}

/// Probability that model `i` beats model `j`.
pub fn win_probability(scores: &ScoreVector, i: usize, j: usize) -> Result<f64, RankingError> {
    let n = scores.len();
    if i >= n || j >= n {
        return Err(RankingError::IndexOutOfRange(i.max(j)));
    }
    if i == j {
        return Err(RankingError::SameModel(i));
    }
    let (pi, pj) = (scores.scores[i], scores.scores[j]);
    for (index, value) in [(i, pi), (j, pj)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(RankingError::NonPositiveScore { index, value });
        }
    }
    Ok(pi / (pi + pj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop once the largest relative score change in one step drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Pseudo-wins added to every ordered pair of distinct models.
    pub regularization_lambda: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-10,
            max_iterations: 10_000,
            regularization_lambda: 0.0,
        }
    }
}

impl FitConfig {
    pub fn regularized(lambda: f64) -> Self {
        FitConfig {
            regularization_lambda: lambda,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), RankingError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(RankingError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(RankingError::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.regularization_lambda.is_finite() && self.regularization_lambda >= 0.0) {
            return Err(RankingError::InvalidConfig(format!(
                "regularization_lambda must be non-negative, got {}",
                self.regularization_lambda
            )));
        }
        Ok(())
    }
}

/// Dense win weights with the pseudo-wins already folded in.
struct Weights {
    n: usize,
    w: Vec<f64>,
}

impl Weights {
    fn new(matrix: &WinMatrix, lambda: f64) -> Self {
        let n = matrix.len();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[i * n + j] = matrix.get(i, j) as f64 + lambda;
                }
            }
        }
        Weights { n, w }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

/// One relaxed simultaneous step; output sums to 100.
fn step(scores: &[f64], weights: &Weights) -> Result<Vec<f64>, RankingError> {
    let n = weights.n;
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let pair = scores[i] + scores[j];
            numerator += weights.get(i, j) * scores[j] / pair;
            denominator += weights.get(j, i) / pair;
        }
        if numerator <= 0.0 || denominator <= 0.0 {
            return Err(RankingError::DegenerateRow(i));
        }
        next.push((scores[i] * numerator / denominator).sqrt());
    }
    let factor = SCORE_TOTAL / next.iter().sum::<f64>();
    next.iter_mut().for_each(|s| *s *= factor);
    Ok(next)
}

fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (n - o).abs() / o)
        .fold(0.0, f64::max)
}

/// Applies one update to `scores` using the raw counts in `matrix`.
///
/// Fails with [`RankingError::DegenerateRow`] when some model has no wins or
/// no losses.
pub fn bt_update(scores: &ScoreVector, matrix: &WinMatrix) -> Result<ScoreVector, RankingError> {
    if scores.len() != matrix.len() {
        return Err(RankingError::LengthMismatch {
            expected: matrix.len(),
            found: scores.len(),
        });
    }
    let start = normalize(scores);
    let next = step(start.as_slice(), &Weights::new(matrix, 0.0))?;
    Ok(ScoreVector {
        scores: next,
        normalized: true,
    })
}

/// Outcome of a converged fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtFit {
    pub scores: ScoreVector,
    pub iterations_used: usize,
    pub final_residual: f64,
}

/// Fits scores from the uniform start.
pub fn bt_fit(matrix: &WinMatrix, config: &FitConfig) -> Result<BtFit, RankingError> {
    bt_fit_from(matrix, config, &ScoreVector::uniform(matrix.len()))
}

/// Fits scores from an arbitrary strictly positive start. The result does not
/// depend on the start beyond the stopping tolerance.
pub fn bt_fit_from(
    matrix: &WinMatrix,
    config: &FitConfig,
    initial: &ScoreVector,
) -> Result<BtFit, RankingError> {
    config.validate()?;
    if initial.len() != matrix.len() {
        return Err(RankingError::LengthMismatch {
            expected: matrix.len(),
            found: initial.len(),
        });
    }
    if config.regularization_lambda == 0.0 && !matrix.is_strongly_connected() {
        return Err(RankingError::DegenerateWinGraph {
            votes: matrix.total(),
        });
    }

    let weights = Weights::new(matrix, config.regularization_lambda);
    let mut scores = normalize(initial).into_vec();
    let mut residual = f64::INFINITY;
    for iteration in 1..=config.max_iterations {
        let next = step(&scores, &weights)?;
        residual = max_relative_change(&scores, &next);
        scores = next;
        if residual < config.tolerance {
            return Ok(BtFit {
                scores: ScoreVector {
                    scores,
                    normalized: true,
                },
                iterations_used: iteration,
                final_residual: residual,
            });
        }
    }
    Err(RankingError::NoConvergence {
        iterations: config.max_iterations,
        residual,
        scores,
    })
}

/// Model ids by descending score; exact ties go to the smaller id.
pub fn rank_order(scores: &ScoreVector, model_ids: &[ModelId]) -> Result<Vec<ModelId>, RankingError> {
    if scores.len() != model_ids.len() {
        return Err(RankingError::LengthMismatch {
            expected: model_ids.len(),
            found: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..model_ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then_with(|| model_ids[a].cmp(&model_ids[b]))
    });
    Ok(order.into_iter().map(|k| model_ids[k].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, value: f64) -> bool {
        self.low <= value && value <= self.high
    }
}

/// Scores for one criterion, ready for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub criterion: CriterionKind,
    pub models: Vec<ModelId>,
    pub scores: ScoreVector,
    pub ordering: Vec<ModelId>,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub vote_count: u64,
    pub confidence_intervals: Option<Vec<Interval>>,
}

impl RankingResult {
    pub fn from_fit(criterion: CriterionKind, matrix: &WinMatrix, fit: BtFit) -> Self {
        let ordering = rank_order(&fit.scores, matrix.models())
            .expect("fit and matrix always have the same length");
        RankingResult {
            criterion,
            models: matrix.models().to_vec(),
            scores: fit.scores,
            ordering,
            iterations_used: fit.iterations_used,
            final_residual: fit.final_residual,
            vote_count: matrix.total(),
            confidence_intervals: None,
        }
    }

    pub fn score_of(&self, model: &ModelId) -> Option<f64> {
        let i = self.models.iter().position(|m| m == model)?;
        self.scores.get(i)
    }
}

/// Fits `matrix` and packages the result for `criterion`.
pub fn rank(
    criterion: CriterionKind,
    matrix: &WinMatrix,
    config: &FitConfig,
) -> Result<RankingResult, RankingError> {
    let fit = bt_fit(matrix, config)?;
    Ok(RankingResult::from_fit(criterion, matrix, fit))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use num_rational::Ratio;

    use super::*;

    fn ids(names: &[&str]) -> Vec<ModelId> {
        names.iter().map(|n| ModelId::from(*n)).collect()
    }

    fn matrix(rows: &[Vec<u64>]) -> WinMatrix {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("m{i}")).collect();
        WinMatrix::from_rows(names.iter().map(|n| ModelId::from(n.as_str())).collect(), rows).unwrap()
    }

    fn symmetric(n: usize, c: u64) -> WinMatrix {
        let rows: Vec<Vec<u64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0 } else { c }).collect())
            .collect();
        matrix(&rows)
    }

    #[test]
    fn win_probability_examples() {
        let uniform = ScoreVector::new(vec![25.0; 4]).unwrap();
        assert_eq!(win_probability(&uniform, 0, 1).unwrap(), 0.5);
        let s = ScoreVector::new(vec![75.0, 25.0]).unwrap();
        assert_eq!(win_probability(&s, 0, 1).unwrap(), 0.75);

        // Exact oracle: 29.86 / (29.86 + 21.99) = 2986 / 5185.
        let table = ScoreVector::new(vec![29.86, 21.99]).unwrap();
        let exact = Ratio::new(2986i64, 5185i64);
        let oracle = *exact.numer() as f64 / *exact.denom() as f64;
        assert_abs_diff_eq!(win_probability(&table, 0, 1).unwrap(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 0.575_891_996_142_719, epsilon = 1e-14);
    }

    #[test]
    fn win_probability_errors() {
        let s = ScoreVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(win_probability(&s, 0, 2), Err(RankingError::IndexOutOfRange(2))));
        assert!(matches!(win_probability(&s, 1, 1), Err(RankingError::SameModel(1))));
        assert!(matches!(
            ScoreVector::new(vec![1.0, 0.0]),
            Err(RankingError::NonPositiveScore { index: 1, .. })
        ));
        assert!(ScoreVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let table = ScoreVector::new(vec![29.86, 24.17, 23.98, 21.99]).unwrap();
        let n = normalize(&table);
        for (a, b) in n.as_slice().iter().zip(table.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_eq!(normalize(&ScoreVector::new(vec![1.0; 4]).unwrap()).as_slice(), &[25.0; 4]);
        assert_eq!(normalize(&ScoreVector::new(vec![2.0, 6.0]).unwrap()).as_slice(), &[25.0, 75.0]);
        let twice = normalize(&n);
        assert_eq!(twice.as_slice(), n.as_slice());
        assert!(twice.is_normalized());
    }

    #[test]
    fn update_moves_winner_up() {
        // Exact rational oracle for the step from (50, 50) on w = [[0,3],[1,0]]:
        // mapped scores are 3*50 = 150 and 1*50/3, relaxed scores are
        // sqrt(50*150) and sqrt(50*50/3); their ratio is sqrt(9) = 3.
        let (pa, pb) = (Ratio::from_integer(50i64), Ratio::from_integer(50i64));
        let (w_ab, w_ba) = (Ratio::from_integer(3i64), Ratio::from_integer(1i64));
        let mapped_a = (w_ab * pb / (pa + pb)) / (w_ba / (pa + pb));
        let mapped_b = (w_ba * pa / (pa + pb)) / (w_ab / (pa + pb));
        assert_eq!(mapped_a, Ratio::from_integer(150));
        let ratio_sq = (pa * mapped_a) / (pb * mapped_b);
        assert_eq!(ratio_sq, Ratio::from_integer(9));
        let share = 100.0 * 3.0 / (3.0 + 1.0);

        let w = matrix(&[vec![0, 3], vec![1, 0]]);
        let next = bt_update(&ScoreVector::new(vec![50.0, 50.0]).unwrap(), &w).unwrap();
        assert!(next.as_slice()[0] > 50.0);
        assert_abs_diff_eq!(next.as_slice()[0], share, epsilon = 1e-12);
    }

    #[test]
    fn update_symmetric_is_fixed() {
        let w = symmetric(4, 7);
        let next = bt_update(&ScoreVector::uniform(4), &w).unwrap();
        for s in next.as_slice() {
            assert_abs_diff_eq!(*s, 25.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_symmetric_pulls_toward_uniform() {
        let w = symmetric(2, 5);
        let start = ScoreVector::new(vec![10.0, 90.0]).unwrap();
        let next = bt_update(&start, &w).unwrap();
        assert!((next.as_slice()[0] - 50.0).abs() < 40.0);
        assert!((next.as_slice()[1] - 50.0).abs() < 40.0);
        assert!(next.as_slice()[0] > 10.0 && next.as_slice()[1] < 90.0);
    }

    #[test]
    fn update_rejects_degenerate_rows() {
        let w = matrix(&[vec![0, 3], vec![0, 0]]);
        assert!(matches!(
            bt_update(&ScoreVector::uniform(2), &w),
            Err(RankingError::DegenerateRow(_))
        ));
    }

    #[test]
    fn two_model_fit_matches_likelihood_grid() {
        let w = matrix(&[vec![0, 3], vec![1, 0]]);
        let fit = bt_fit(&w, &FitConfig::default()).unwrap();

        // Grid search over the share of model A maximizing 3 ln s + 1 ln(1 - s).
        let best = (1..1_000_000)
            .map(|k| k as f64 / 1_000_000.0)
            .max_by(|a, b| {
                let ll = |s: f64| 3.0 * s.ln() + (1.0 - s).ln();
                ll(*a).total_cmp(&ll(*b))
            })
            .unwrap();
        assert_abs_diff_eq!(best, 0.75, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.scores.as_slice()[0], 100.0 * best, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.scores.as_slice()[0], 75.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.scores.as_slice()[1], 25.0, epsilon = 1e-8);
    }

    #[test]
    fn symmetric_fit_is_uniform() {
        let fit = bt_fit(&symmetric(4, 3), &FitConfig::default()).unwrap();
        for s in fit.scores.as_slice() {
            assert_abs_diff_eq!(*s, 25.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn recovers_sampled_truth() {
        use rand::{Rng, SeedableRng};
        let truth = [50.0, 30.0, 20.0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rows = vec![vec![0u64; 3]; 3];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let p = truth[i] / (truth[i] + truth[j]);
                for _ in 0..10_000 {
                    if rng.random::<f64>() < p {
                        rows[i][j] += 1;
                    } else {
                        rows[j][i] += 1;
                    }
                }
            }
        }
        let fit = bt_fit(&matrix(&rows), &FitConfig::default()).unwrap();
        for (got, want) in fit.scores.as_slice().iter().zip(truth) {
            assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn degenerate_graphs() {
        let empty = matrix(&[vec![0, 0], vec![0, 0]]);
        assert!(matches!(
            bt_fit(&empty, &FitConfig::default()),
            Err(RankingError::DegenerateWinGraph { votes: 0 })
        ));
        let one_sided = matrix(&[vec![0, 4, 1], vec![0, 0, 2], vec![0, 3, 0]]);
        assert!(matches!(
            bt_fit(&one_sided, &FitConfig::default()),
            Err(RankingError::DegenerateWinGraph { .. })
        ));
        // the escape hatch
        let fit = bt_fit(&one_sided, &FitConfig::regularized(0.5)).unwrap();
        assert!(fit.scores.as_slice().iter().all(|s| s.is_finite() && *s > 0.0));
        assert_eq!(fit.scores.as_slice()[0], fit.scores.as_slice().iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn no_convergence_reports_diagnostics() {
        let w = matrix(&[vec![0, 30, 1], vec![1, 0, 30], vec![30, 1, 0]]);
        let config = FitConfig {
            tolerance: 1e-15,
            max_iterations: 2,
            regularization_lambda: 0.0,
        };
        match bt_fit_from(&w, &config, &ScoreVector::new(vec![90.0, 5.0, 5.0]).unwrap()) {
            Err(RankingError::NoConvergence { iterations, residual, scores }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
                assert_eq!(scores.len(), 3);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let w = symmetric(2, 1);
        let bad = FitConfig {
            tolerance: 0.0,
            ..FitConfig::default()
        };
        assert!(matches!(bt_fit(&w, &bad), Err(RankingError::InvalidConfig(_))));
    }

    #[test]
    fn rank_order_examples() {
        let models = ids(&["flux-1", "dall-e-3", "midjourney", "stable-diffusion"]);
        let pref = ScoreVector::new(vec![29.86, 24.17, 23.98, 21.99]).unwrap();
        assert_eq!(rank_order(&pref, &models).unwrap(), models);
        let coh = ScoreVector::new(vec![29.61, 22.92, 23.37, 24.09]).unwrap();
        assert_eq!(
            rank_order(&coh, &models).unwrap(),
            ids(&["flux-1", "stable-diffusion", "midjourney", "dall-e-3"])
        );
        let tied = ScoreVector::new(vec![1.0; 3]).unwrap();
        assert_eq!(rank_order(&tied, &ids(&["c", "a", "b"])).unwrap(), ids(&["a", "b", "c"]));
        assert!(matches!(
            rank_order(&tied, &ids(&["a"])),
            Err(RankingError::LengthMismatch { .. })
        ));
    }
}
