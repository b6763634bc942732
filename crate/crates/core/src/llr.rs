//! Locally linear representation of a target hypothesis label by k source
//! gaze labels: box-test neighborhood selection, the regularized sum-to-one
//! reconstruction objective, and its closed-form solution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::GazeAngles;

/// L2 regularizer for the weight system.
///
/// The relative rule scales with the local covariance so the conditioning of
/// the solve does not depend on the neighborhood's spread; an absolute value
/// overrides it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaReg {
    /// 1e-3 * max(trace(S)/k, 1e-8)
    RelativeToTrace,
    Absolute(f64),
}

impl Default for LambdaReg {
    fn default() -> Self {
        LambdaReg::RelativeToTrace
    }
}

/// Neighborhood selection and weight-solve hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborConfig {
    /// Selection interval: a source label is a candidate when both its yaw
    /// and pitch differ from the target hypothesis by strictly less than mu.
    pub mu: f64,
    /// Number of neighbors drawn from the candidate set.
    pub k: usize,
    pub lambda_reg: LambdaReg,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { mu: 0.15, k: 4, lambda_reg: LambdaReg::default() }
    }
}

impl NeighborConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidInput(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("k must be >= 2, got {}", self.k)));
        }
        if let LambdaReg::Absolute(l) = self.lambda_reg {
            if !(l > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "lambda_reg must be > 0, got {l}"
                )));
            }
        }
        Ok(())
    }

    /// Resolve the regularizer against a concrete local covariance.
    pub fn effective_lambda(&self, s: &DMatrix<f64>) -> f64 {
        match self.lambda_reg {
            LambdaReg::Absolute(l) => l,
            LambdaReg::RelativeToTrace => {
                let k = s.nrows().max(1) as f64;
                1e-3 * (s.trace() / k).max(1e-8)
            }
        }
    }
}

/// k selected source indices for one target sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub target_index: usize,
    /// Ascending, so downstream summations have a canonical order.
    pub neighbor_indices: Vec<usize>,
}

/// Reconstruction coefficients; they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrWeights {
    pub values: Vec<f64>,
}

impl LlrWeights {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Candidate test of one source label against the target hypothesis:
/// max(|dyaw|, |dpitch|) < mu, strict.
pub fn is_candidate(target: GazeAngles, source: GazeAngles, mu: f64) -> bool {
    (source.yaw - target.yaw).abs().max((source.pitch - target.pitch).abs()) < mu
}

/// Select k neighbors of `target_pred` among `source_labels`.
///
/// Returns `None` when fewer than k candidates pass the box test; the caller
/// skips the sample, which is a normal outcome rather than a fault. The k
/// candidates are drawn uniformly without replacement from `rng`.
pub fn select_neighbors<R: Rng + ?Sized>(
    target_index: usize,
    target_pred: GazeAngles,
    source_labels: &[GazeAngles],
    cfg: &NeighborConfig,
    rng: &mut R,
) -> Option<Neighborhood> {
    let candidates: Vec<usize> = source_labels
        .iter()
        .enumerate()
        .filter(|(_, s)| is_candidate(target_pred, **s, cfg.mu))
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < cfg.k {
        return None;
    }
    let chosen = rand::seq::index::sample(rng, candidates.len(), cfg.k);
    let mut neighbor_indices: Vec<usize> = chosen.iter().map(|c| candidates[c]).collect();
    neighbor_indices.sort_unstable();
    Some(Neighborhood { target_index, neighbor_indices })
}

/// Local covariance S with S[i][l] = (g_hat - g_i) . (g_hat - g_l), the Gram
/// matrix of the 2D differences between the target hypothesis and each
/// neighbor label. Symmetric PSD with rank at most 2.
pub fn local_covariance(target_pred: GazeAngles, neighbors: &[GazeAngles]) -> DMatrix<f64> {
    let k = neighbors.len();
    let mut diffs = Vec::with_capacity(k);
    for n in neighbors {
        diffs.push([target_pred.yaw - n.yaw, target_pred.pitch - n.pitch]);
    }
    DMatrix::from_fn(k, k, |i, l| diffs[i][0] * diffs[l][0] + diffs[i][1] * diffs[l][1])
}

/// Closed-form sum-to-one weights: w = (S+lambda I)^-1 1 / (1^T (S+lambda I)^-1 1),
/// computed through a symmetric positive-definite factorization rather than an
/// explicit inverse.
pub fn solve_weights(s: &DMatrix<f64>, cfg: &NeighborConfig) -> Result<LlrWeights> {
    let k = s.nrows();
    if k == 0 || s.ncols() != k {
        return Err(Error::DimensionMismatch { expected: k, got: s.ncols() });
    }
    let lambda = cfg.effective_lambda(s);
    let mut reg = s.clone();
    for i in 0..k {
        reg[(i, i)] += lambda;
    }
    let chol = reg.cholesky().ok_or(Error::SingularSystem)?;
    let raw = chol.solve(&DVector::from_element(k, 1.0));
    let total: f64 = raw.iter().sum();
    if !total.is_finite() || total == 0.0 {
        return Err(Error::SingularSystem);
    }
    let values: Vec<f64> = raw.iter().map(|v| v / total).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(LlrWeights { values })
}

/// Reconstruction objective ||g_hat - sum_i w_i g_i||^2 + lambda sum_i w_i^2.
/// Diagnostic only; never on the backprop path.
pub fn reconstruction_error(
    target_pred: GazeAngles,
    neighbors: &[GazeAngles],
    w: &LlrWeights,
    cfg: &NeighborConfig,
) -> f64 {
    let mut ry = target_pred.yaw;
    let mut rp = target_pred.pitch;
    for (wi, n) in w.values.iter().zip(neighbors) {
        ry -= wi * n.yaw;
        rp -= wi * n.pitch;
    }
    let lambda = cfg.effective_lambda(&local_covariance(target_pred, neighbors));
    ry * ry + rp * rp + lambda * w.values.iter().map(|v| v * v).sum::<f64>()
}

/// Residual ||g_hat - sum_i w_i g_i||_2 without the regularization term.
pub fn reconstruction_residual(
    target_pred: GazeAngles,
    neighbors: &[GazeAngles],
    w: &LlrWeights,
) -> f64 {
    let mut ry = target_pred.yaw;
    let mut rp = target_pred.pitch;
    for (wi, n) in w.values.iter().zip(neighbors) {
        ry -= wi * n.yaw;
        rp -= wi * n.pitch;
    }
    (ry * ry + rp * rp).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn g(yaw: f64, pitch: f64) -> GazeAngles {
        GazeAngles::new(yaw, pitch)
    }

    fn abs_cfg(k: usize, lambda: f64) -> NeighborConfig {
        NeighborConfig { mu: 0.15, k, lambda_reg: LambdaReg::Absolute(lambda) }
    }

    /// Independent oracle: solve the KKT system of the equality-constrained
    /// quadratic program, [[2(S+lambda I), 1], [1^T, 0]] [w; nu] = [0; 1].
    fn kkt_oracle(s: &DMatrix<f64>, lambda: f64) -> Vec<f64> {
        let k = s.nrows();
        let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = 2.0 * s[(i, j)];
            }
            m[(i, i)] += 2.0 * lambda;
            m[(i, k)] = 1.0;
            m[(k, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(k + 1);
        rhs[k] = 1.0;
        let sol = m.lu().solve(&rhs).expect("KKT system solvable");
        sol.iter().take(k).copied().collect()
    }

    fn random_instance<R: Rng>(rng: &mut R, k: usize) -> (GazeAngles, Vec<GazeAngles>) {
        let target = g(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.2));
        let neighbors = (0..k)
            .map(|_| {
                g(
                    target.yaw + rng.random_range(-0.15..0.15),
                    target.pitch + rng.random_range(-0.15..0.15),
                )
            })
            .collect();
        (target, neighbors)
    }

    #[test]
    fn candidate_box_test() {
        assert!(is_candidate(g(0.0, 0.0), g(0.1, -0.1), 0.15));
        assert!(!is_candidate(g(0.0, 0.0), g(0.2, 0.0), 0.15));
        // Boundary is strict.
        assert!(!is_candidate(g(0.0, 0.0), g(0.15, 0.0), 0.15));
    }

    #[test]
    fn too_few_candidates_is_a_normal_skip() {
        let labels = vec![g(0.1, 0.0), g(-0.1, 0.05), g(0.0, -0.1), g(1.0, 1.0)];
        let cfg = abs_cfg(4, 1e-3);
        let mut r = rng::stream(1, "llr.skip");
        assert!(select_neighbors(0, g(0.0, 0.0), &labels, &cfg, &mut r).is_none());
    }

    #[test]
    fn selection_returns_k_distinct_in_box_indices() {
        let mut r = rng::stream(2, "llr.select");
        let labels: Vec<GazeAngles> = (0..50)
            .map(|_| g(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)))
            .collect();
        let cfg = abs_cfg(4, 1e-3);
        let n = select_neighbors(7, g(0.0, 0.0), &labels, &cfg, &mut r).unwrap();
        assert_eq!(n.target_index, 7);
        assert_eq!(n.neighbor_indices.len(), 4);
        let mut sorted = n.neighbor_indices.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        for &i in &n.neighbor_indices {
            assert!(is_candidate(g(0.0, 0.0), labels[i], cfg.mu));
        }
    }

    #[test]
    fn shrinking_mu_never_adds_candidates() {
        let mut r = rng::stream(3, "llr.mono");
        for _ in 0..200 {
            let t = g(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
            let s = g(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            let mu1 = r.random_range(0.01..0.2);
            let mu2 = r.random_range(mu1..0.4);
            if is_candidate(t, s, mu1) {
                assert!(is_candidate(t, s, mu2));
            }
        }
    }

    #[test]
    fn covariance_of_coincident_neighbors_is_zero() {
        let t = g(0.1, -0.1);
        let s = local_covariance(t, &[t, t, t]);
        assert_eq!(s, DMatrix::zeros(3, 3));
    }

    #[test]
    fn covariance_k2_expands_to_pairwise_dots() {
        let t = g(0.0, 0.0);
        let n1 = g(0.1, 0.0);
        let n2 = g(0.0, -0.2);
        let s = local_covariance(t, &[n1, n2]);
        // d1 = (-0.1, 0), d2 = (0, 0.2)
        assert!((s[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((s[(1, 1)] - 0.04).abs() < 1e-15);
        assert!(s[(0, 1)].abs() < 1e-15);
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn covariance_matches_brute_force_double_loop() {
        let mut r = rng::stream(4, "llr.cov");
        for _ in 0..50 {
            let (t, ns) = random_instance(&mut r, 5);
            let s = local_covariance(t, &ns);
            for i in 0..5 {
                for l in 0..5 {
                    let di = [t.yaw - ns[i].yaw, t.pitch - ns[i].pitch];
                    let dl = [t.yaw - ns[l].yaw, t.pitch - ns[l].pitch];
                    let expect = di[0] * dl[0] + di[1] * dl[1];
                    assert!((s[(i, l)] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_covariance_gives_uniform_weights() {
        let w = solve_weights(&DMatrix::zeros(4, 4), &abs_cfg(4, 1e-2)).unwrap();
        for v in &w.values {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_gives_half_half() {
        let t = g(0.0, 0.0);
        let ns = [g(0.1, 0.05), g(-0.1, -0.05)];
        let s = local_covariance(t, &ns);
        let w = solve_weights(&s, &abs_cfg(2, 1e-4)).unwrap();
        assert!((w.values[0] - 0.5).abs() < 1e-12);
        assert!((w.values[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_kkt_oracle() {
        let mut r = rng::stream(5, "llr.kkt");
        for _ in 0..200 {
            let k = *[3usize, 4, 6].get(r.random_range(0..3)).unwrap();
            let lambda = if r.random_range(0..2) == 0 { 1e-4 } else { 1e-2 };
            let (t, ns) = random_instance(&mut r, k);
            let s = local_covariance(t, &ns);
            let w = solve_weights(&s, &abs_cfg(k, lambda)).unwrap();
            let oracle = kkt_oracle(&s, lambda);
            assert!((w.sum() - 1.0).abs() < 1e-10);
            for i in 0..k {
                assert!(
                    (w.values[i] - oracle[i]).abs() < 1e-8,
                    "weight {i}: {} vs oracle {}",
                    w.values[i],
                    oracle[i]
                );
            }
        }
    }

    #[test]
    fn matrix_form_equals_vector_form() {
        let mut r = rng::stream(6, "llr.forms");
        for _ in 0..100 {
            let (t, ns) = random_instance(&mut r, 4);
            let s = local_covariance(t, &ns);
            // Random weights constrained to sum to one.
            let mut w: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let total: f64 = w.iter().sum();
            w[3] += 1.0 - total;
            let lambda = 1e-2;
            let cfg = abs_cfg(4, lambda);
            let vector_form =
                reconstruction_error(t, &ns, &LlrWeights { values: w.clone() }, &cfg);
            let wv = DVector::from_vec(w.clone());
            let matrix_form = (wv.transpose() * &s * &wv)[(0, 0)]
                + lambda * wv.dot(&wv);
            assert!((vector_form - matrix_form).abs() < 1e-10);
        }
    }

    #[test]
    fn coincident_neighbors_uniform_weights_cost_lambda_over_k() {
        let t = g(0.2, -0.1);
        let ns = [t; 4];
        let cfg = abs_cfg(4, 1e-2);
        let w = LlrWeights { values: vec![0.25; 4] };
        let e = reconstruction_error(t, &ns, &w, &cfg);
        assert!((e - 1e-2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn solution_beats_uniform_weights() {
        let mut r = rng::stream(7, "llr.opt");
        for _ in 0..100 {
            let (t, ns) = random_instance(&mut r, 4);
            let cfg = abs_cfg(4, 1e-3);
            let s = local_covariance(t, &ns);
            let w_star = solve_weights(&s, &cfg).unwrap();
            let uniform = LlrWeights { values: vec![0.25; 4] };
            let e_star = reconstruction_error(t, &ns, &w_star, &cfg);
            let e_uniform = reconstruction_error(t, &ns, &uniform, &cfg);
            assert!(e_star <= e_uniform + 1e-12);
        }
    }

    #[test]
    fn solution_is_a_local_optimum_among_feasible_perturbations() {
        let mut r = rng::stream(8, "llr.probe");
        let (t, ns) = random_instance(&mut r, 5);
        let cfg = abs_cfg(5, 1e-3);
        let s = local_covariance(t, &ns);
        let w_star = solve_weights(&s, &cfg).unwrap();
        let e_star = reconstruction_error(t, &ns, &w_star, &cfg);
        for _ in 0..100 {
            // Feasible direction: components sum to zero, step norm 1e-3.
            let mut v: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let mean: f64 = v.iter().sum::<f64>() / 5.0;
            for vi in &mut v {
                *vi -= mean;
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let scale = 1e-3 / norm;
            let perturbed = LlrWeights {
                values: w_star
                    .values
                    .iter()
                    .zip(&v)
                    .map(|(w, vi)| w + scale * vi)
                    .collect(),
            };
            let e = reconstruction_error(t, &ns, &perturbed, &cfg);
            assert!(e_star <= e + 1e-15);
        }
    }

    #[test]
    fn exact_reconstruction_limit_as_lambda_vanishes() {
        let mut r = rng::stream(9, "llr.exact");
        for _ in 0..50 {
            let ns = [
                g(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)),
                g(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)),
                g(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)),
            ];
            // Target in the affine hull of the three neighbors.
            let a = r.random_range(-0.5..1.0);
            let b = r.random_range(-0.5..1.0);
            let c = 1.0 - a - b;
            let t = g(
                a * ns[0].yaw + b * ns[1].yaw + c * ns[2].yaw,
                a * ns[0].pitch + b * ns[1].pitch + c * ns[2].pitch,
            );
            let cfg = abs_cfg(3, 1e-10);
            let s = local_covariance(t, &ns);
            let w = solve_weights(&s, &cfg).unwrap();
            assert!((w.sum() - 1.0).abs() < 1e-10);
            assert!(reconstruction_residual(t, &ns, &w) < 1e-4);
        }
    }

    #[test]
    fn relative_lambda_floors_at_tiny_value() {
        let cfg = NeighborConfig { mu: 0.15, k: 4, lambda_reg: LambdaReg::RelativeToTrace };
        let zero = DMatrix::zeros(4, 4);
        assert!((cfg.effective_lambda(&zero) - 1e-3 * 1e-8).abs() < 1e-20);
        let mut s = DMatrix::zeros(4, 4);
        s[(0, 0)] = 4.0;
        assert!((cfg.effective_lambda(&s) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(abs_cfg(1, 1e-3).validate().is_err());
        assert!(abs_cfg(4, 0.0).validate().is_err());
        assert!(NeighborConfig { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(NeighborConfig::default().validate().is_ok());
    }
}
