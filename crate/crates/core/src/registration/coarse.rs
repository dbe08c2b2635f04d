//! Robust coarse rigid estimation from keypoint correspondences.
//!
//! Minimizes the truncated least-squares objective
//! `Σ min(‖Tᵢ − R·Sᵢ − t‖², ε²)` in three stages:
//!
//! 1. gross-outlier pruning by pairwise length consistency — correspondences
//!    i and k are compatible iff `|‖Sᵢ−Sₖ‖ − ‖Tᵢ−Tₖ‖| ≤ 2ε`, and the largest
//!    compatibility clique (approximated greedily) is kept;
//! 2. a closed-form orthogonal-Procrustes fit on the clique survivors;
//! 3. a graduated non-convexity (GNC) polish of the truncated loss over all
//!    correspondences, annealing from the convex surrogate toward the hard
//!    truncation until the inlier weights stabilize.

use super::fit_rigid_weighted;
use crate::error::{Error, Result};
use crate::transform::RigidTransform;
use nalgebra::Vector3;

/// GNC anneal factor per iteration (μ ← μ·GNC_MU_FACTOR).
pub const GNC_MU_FACTOR: f64 = 1.4;
/// GNC stops when the total absolute weight change drops below this.
pub const GNC_WEIGHT_TOL: f64 = 1e-8;
/// Hard cap on GNC iterations (the weight-stability test normally stops it).
pub const GNC_MAX_ITERS: usize = 100;
/// Number of highest-degree vertices tried as greedy clique seeds.
pub const CLIQUE_SEEDS: usize = 10;

/// Parameters of the truncated-least-squares coarse stage.
#[derive(Debug, Clone, Copy)]
pub struct CoarseParams {
    /// ε: the residual magnitude (Å) beyond which a correspondence is
    /// treated as an outlier (its loss contribution is capped at ε²).
    pub noise_bound: f64,
    /// Minimum surviving correspondences required for a well-posed fit.
    pub min_correspondences: usize,
}

impl CoarseParams {
    pub fn new(noise_bound: f64) -> Self {
        CoarseParams {
            noise_bound,
            min_correspondences: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_bound > 0.0) || !self.noise_bound.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_bound must be positive and finite, got {}",
                self.noise_bound
            )));
        }
        if self.min_correspondences < 3 {
            return Err(Error::InvalidConfig(format!(
                "min_correspondences must be at least 3, got {}",
                self.min_correspondences
            )));
        }
        Ok(())
    }
}

/// Coarse estimate plus diagnostics of the robust fit.
#[derive(Debug, Clone)]
pub struct CoarseEstimate {
    pub transform: RigidTransform,
    /// Size of the greedy consistency clique the fit started from.
    pub clique_size: usize,
    /// GNC iterations until the weights stabilized.
    pub gnc_iterations: usize,
    /// Correspondences with final GNC weight > 0.5.
    pub inlier_count: usize,
    /// Final truncated-LS objective over all input correspondences.
    pub objective: f64,
}

/// Truncated least-squares objective `Σ min(‖Tᵢ − R·Sᵢ − t‖², ε²)`.
pub fn truncated_objective(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    transform: &RigidTransform,
    noise_bound: f64,
) -> f64 {
    let cap = noise_bound * noise_bound;
    pairs
        .iter()
        .map(|(s, t)| (t - transform.apply(s)).norm_squared().min(cap))
        .sum()
}

/// Estimates the rigid transform taking source positions onto target
/// positions despite outlier correspondences. `pairs` holds
/// `(source_point, target_point)` per correspondence.
///
/// The result is invariant to the order of `pairs`: the list is first
/// brought into a canonical coordinate order so the greedy clique's
/// index-based tie-breaking does not depend on input permutation.
///
/// Fails with a coarse-failure error when fewer than
/// `params.min_correspondences` survive the consistency pruning.
pub fn estimate_coarse(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    params: &CoarseParams,
) -> Result<CoarseEstimate> {
    params.validate()?;
    if pairs.len() < params.min_correspondences {
        return Err(Error::CoarseFailure(format!(
            "{} correspondences, need at least {}",
            pairs.len(),
            params.min_correspondences
        )));
    }

    // Canonical order: lexicographic by coordinates. Identical pairs are
    // interchangeable, so any stable order over them yields the same fit.
    let mut ordered: Vec<(Vector3<f64>, Vector3<f64>)> = pairs.to_vec();
    ordered.sort_by(|a, b| {
        let ka = [a.0.x, a.0.y, a.0.z, a.1.x, a.1.y, a.1.z];
        let kb = [b.0.x, b.0.y, b.0.z, b.1.x, b.1.y, b.1.z];
        ka.partial_cmp(&kb).expect("finite coordinates")
    });

    let clique = largest_consistent_clique(&ordered, params.noise_bound);
    if clique.len() < params.min_correspondences {
        return Err(Error::CoarseFailure(format!(
            "only {} length-consistent correspondences, need at least {}",
            clique.len(),
            params.min_correspondences
        )));
    }

    // Closed-form fit on the clique survivors (uniform weights).
    let src: Vec<Vector3<f64>> = ordered.iter().map(|p| p.0).collect();
    let tgt: Vec<Vector3<f64>> = ordered.iter().map(|p| p.1).collect();
    let mut weights = vec![0.0; ordered.len()];
    for &i in &clique {
        weights[i] = 1.0;
    }
    let mut transform = fit_rigid_weighted(&src, &tgt, &weights).ok_or_else(|| {
        Error::CoarseFailure("consistency clique is geometrically degenerate".into())
    })?;

    // GNC polish over all correspondences, seeded by the clique fit.
    let (polished, gnc_iterations, final_weights) =
        gnc_polish(&src, &tgt, transform, params.noise_bound);
    transform = polished;

    let inlier_count = final_weights.iter().filter(|&&w| w > 0.5).count();
    let objective = truncated_objective(&ordered, &transform, params.noise_bound);
    Ok(CoarseEstimate {
        transform,
        clique_size: clique.len(),
        gnc_iterations,
        inlier_count,
        objective,
    })
}

/// Greedy approximation of the largest clique in the length-consistency
/// graph. Edges connect correspondences whose source-side and target-side
/// pairwise distances agree within `2·noise_bound`. Growth starts from the
/// `CLIQUE_SEEDS` highest-degree vertices and, at each step, admits the
/// candidate adjacent to all current members that preserves the most future
/// candidates; ties break toward the lower index.
fn largest_consistent_clique(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    noise_bound: f64,
) -> Vec<usize> {
    let n = pairs.len();
    let words = n.div_ceil(64);
    let mut adj = vec![vec![0u64; words]; n];
    let gate = 2.0 * noise_bound;
    for i in 0..n {
        for k in (i + 1)..n {
            let ds = (pairs[i].0 - pairs[k].0).norm();
            let dt = (pairs[i].1 - pairs[k].1).norm();
            if (ds - dt).abs() <= gate {
                adj[i][k / 64] |= 1u64 << (k % 64);
                adj[k][i / 64] |= 1u64 << (i % 64);
            }
        }
    }

    let popcount = |row: &[u64]| -> usize { row.iter().map(|w| w.count_ones() as usize).sum() };
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (usize::MAX - popcount(&adj[i]), i));

    let mut best: Vec<usize> = Vec::new();
    for &seed in by_degree.iter().take(CLIQUE_SEEDS) {
        let mut clique = vec![seed];
        let mut cand = adj[seed].clone();
        loop {
            // Pick the candidate keeping the most other candidates alive.
            let mut pick: Option<(usize, usize)> = None; // (kept, index)
            for w in 0..words {
                let mut bits = cand[w];
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    let v = w * 64 + b;
                    let kept = cand
                        .iter()
                        .zip(&adj[v])
                        .map(|(c, a)| (c & a).count_ones() as usize)
                        .sum::<usize>();
                    let better = match pick {
                        None => true,
                        Some((pk, pv)) => kept > pk || (kept == pk && v < pv),
                    };
                    if better {
                        pick = Some((kept, v));
                    }
                }
            }
            let Some((_, v)) = pick else { break };
            clique.push(v);
            for w in 0..words {
                cand[w] &= adj[v][w];
            }
        }
        if clique.len() > best.len() {
            clique.sort_unstable();
            best = clique;
        }
    }
    best
}

/// Graduated non-convexity polish of the truncated loss. Starts from the
/// convex surrogate (μ small), re-fits with per-pair weights
///
/// * w = 1            when r² ≤ ε²·μ/(μ+1)   (confident inlier)
/// * w = 0            when r² ≥ ε²·(μ+1)/μ   (confident outlier)
/// * w = ε·√(μ(μ+1))/r − μ   in between,
///
/// and anneals μ upward until the weights stop changing. Returns the
/// polished transform, the iteration count, and the final weights.
fn gnc_polish(
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
    init: RigidTransform,
    noise_bound: f64,
) -> (RigidTransform, usize, Vec<f64>) {
    let n = src.len();
    let eps2 = noise_bound * noise_bound;
    let mut transform = init;

    let residual2 = |t: &RigidTransform, i: usize| (tgt[i] - t.apply(&src[i])).norm_squared();

    let max_r2 = (0..n)
        .map(|i| residual2(&transform, i))
        .fold(0.0_f64, f64::max);
    // μ₀ keeps the first surrogate essentially convex. When every residual
    // already sits well inside the noise bound there is nothing to anneal.
    let denom = 2.0 * max_r2 - eps2;
    if denom <= 0.0 {
        let weights = vec![1.0; n];
        if let Some(fit) = fit_rigid_weighted(src, tgt, &weights) {
            transform = fit;
        }
        return (transform, 0, weights);
    }
    let mut mu = (eps2 / denom).max(1e-6);

    let mut weights = vec![1.0; n];
    let mut iterations = 0;
    for iter in 0..GNC_MAX_ITERS {
        iterations = iter + 1;
        let lower = eps2 * mu / (mu + 1.0);
        let upper = eps2 * (mu + 1.0) / mu;
        let mut change = 0.0;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let r2 = residual2(&transform, i);
            let w = if r2 <= lower {
                1.0
            } else if r2 >= upper {
                0.0
            } else {
                (noise_bound * (mu * (mu + 1.0)).sqrt() / r2.sqrt() - mu).clamp(0.0, 1.0)
            };
            change += (w - weights[i]).abs();
            next[i] = w;
        }
        weights = next;
        match fit_rigid_weighted(src, tgt, &weights) {
            Some(fit) => transform = fit,
            // Weights collapsed to a degenerate set: keep the last good fit.
            None => break,
        }
        if change < GNC_WEIGHT_TOL {
            break;
        }
        mu *= GNC_MU_FACTOR;
    }
    (transform.orthonormalized(), iterations, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{random_rotation, rotation_about_axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            })
            .collect()
    }

    /// Inliers exactly related by (R, t) plus optional Gaussian noise, then
    /// uniform outliers. Returns (pairs, truth).
    fn make_instance(
        seed: u64,
        inliers: usize,
        outliers: usize,
        noise: f64,
    ) -> (Vec<(Vector3<f64>, Vector3<f64>)>, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotation = random_rotation(&mut rng);
        let translation = Vector3::new(
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
        );
        let truth = RigidTransform::new(rotation, translation);
        let mut pairs = Vec::new();
        for s in random_points(&mut rng, inliers, 30.0) {
            let jitter = Vector3::new(
                noise * rng.sample::<f64, _>(StandardNormal),
                noise * rng.sample::<f64, _>(StandardNormal),
                noise * rng.sample::<f64, _>(StandardNormal),
            );
            pairs.push((s, truth.apply(&s) + jitter));
        }
        for _ in 0..outliers {
            let s = random_points(&mut rng, 1, 30.0)[0];
            let t = truth.apply(&random_points(&mut rng, 1, 30.0)[0])
                + random_points(&mut rng, 1, 10.0)[0];
            pairs.push((s, t));
        }
        (pairs, truth)
    }

    #[test]
    fn noiseless_correspondences_recover_exactly() {
        let (pairs, truth) = make_instance(11, 25, 0, 0.0);
        let est = estimate_coarse(&pairs, &CoarseParams::new(1.0)).unwrap();
        assert!(est.transform.rotation_angle_to(&truth) < 1e-6);
        assert!(est.transform.translation_distance_to(&truth) < 1e-6);
        assert_eq!(est.clique_size, 25);
        assert!(est.transform.is_rigid(1e-9));
    }

    #[test]
    fn under_determined_input_fails() {
        let pairs = vec![
            (Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)),
            (Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)),
        ];
        let err = estimate_coarse(&pairs, &CoarseParams::new(1.0)).unwrap_err();
        assert!(err.is_no_solution(), "got {err:?}");
    }

    #[test]
    fn majority_outliers_still_recovered() {
        let mut worst_rot = 0.0_f64;
        let mut worst_trans = 0.0_f64;
        for seed in 0..20 {
            let (pairs, truth) = make_instance(100 + seed, 40, 60, 0.5);
            let est = estimate_coarse(&pairs, &CoarseParams::new(1.5)).unwrap();
            worst_rot = worst_rot.max(est.transform.rotation_angle_to(&truth).to_degrees());
            worst_trans = worst_trans.max(est.transform.translation_distance_to(&truth));
        }
        assert!(worst_rot < 1.0, "worst rotation error {worst_rot}°");
        assert!(worst_trans < 1.0, "worst translation error {worst_trans} Å");
    }

    #[test]
    fn objective_beats_ground_truth() {
        for seed in 0..10 {
            let (pairs, truth) = make_instance(300 + seed, 40, 40, 0.4);
            let params = CoarseParams::new(1.2);
            let est = estimate_coarse(&pairs, &params).unwrap();
            let ours = truncated_objective(&pairs, &est.transform, params.noise_bound);
            let theirs = truncated_objective(&pairs, &truth, params.noise_bound);
            assert!(
                ours <= theirs + 1e-9,
                "seed {seed}: objective {ours} vs ground truth {theirs}"
            );
        }
    }

    #[test]
    fn invariant_to_correspondence_order() {
        let (pairs, _) = make_instance(55, 30, 30, 0.3);
        let params = CoarseParams::new(1.0);
        let base = estimate_coarse(&pairs, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mut shuffled = pairs.clone();
            // Fisher-Yates with the seeded generator.
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let est = estimate_coarse(&shuffled, &params).unwrap();
            assert_eq!(est.transform.rotation, base.transform.rotation);
            assert_eq!(est.transform.translation, base.transform.translation);
            assert_eq!(est.clique_size, base.clique_size);
        }
    }

    #[test]
    fn clique_pruning_rejects_planted_decoys() {
        // Inliers on a ring plus a small mutually-consistent decoy set that
        // is still smaller than the true clique.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth = RigidTransform::new(
            rotation_about_axis(&Vector3::z(), 0.7),
            Vector3::new(4.0, -2.0, 9.0),
        );
        let mut pairs = Vec::new();
        for s in random_points(&mut rng, 20, 25.0) {
            pairs.push((s, truth.apply(&s)));
        }
        let decoy = RigidTransform::new(
            rotation_about_axis(&Vector3::x(), -1.1),
            Vector3::new(-8.0, 3.0, 1.0),
        );
        for s in random_points(&mut rng, 8, 25.0) {
            pairs.push((s, decoy.apply(&s)));
        }
        let est = estimate_coarse(&pairs, &CoarseParams::new(0.5)).unwrap();
        assert!(est.transform.rotation_angle_to(&truth).to_degrees() < 0.01);
        assert!(est.transform.translation_distance_to(&truth) < 0.01);
    }

    #[test]
    fn rejects_bad_params() {
        let (pairs, _) = make_instance(1, 10, 0, 0.0);
        assert!(estimate_coarse(
            &pairs,
            &CoarseParams {
                noise_bound: 0.0,
                min_correspondences: 3
            }
        )
        .is_err());
        assert!(estimate_coarse(
            &pairs,
            &CoarseParams {
                noise_bound: 1.0,
                min_correspondences: 2
            }
        )
        .is_err());
    }
}
