//! Empirical probes for the operator-theoretic assumptions: nonexpansiveness,
//! cocoercivity of `S`, quasi-strong monotonicity against a verified zero.
//!
//! Probes are report-only; seeded sampling keeps every property suite
//! reproducible.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::block::{BlockPartition, BlockVector};
use crate::error::{Error, Result};

use super::OperatorPair;

/// Radius of the sampling ball around the probe center.
pub const PROBE_RADIUS: f64 = 10.0;

/// Minimum squared separation below which a sampled pair is skipped as
/// degenerate (0/0 ratios).
const DEGENERATE_SEP: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub samples: usize,
    /// Worst observed statistic: max ratio for expansiveness probes, min gap
    /// for cocoercivity probes.
    pub worst: f64,
    pub pass: bool,
}

/// Standard-normal direction scaled to a radius drawn in `(0, PROBE_RADIUS]`.
fn sample_in_ball(center: &BlockVector, rng: &mut ChaCha8Rng) -> BlockVector {
    let dim = center.dim();
    let mut dir: Vec<f64> = (0..dim)
        .map(|_| {
            // Box-Muller keeps us off rand_distr for one distribution
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let radius = PROBE_RADIUS * rng.random::<f64>().max(1e-6);
    for d in &mut dir {
        *d *= radius / norm;
    }
    let mut out = center.clone();
    for (o, d) in out.as_mut_slice().iter_mut().zip(&dir) {
        *o += d;
    }
    out
}

/// Largest observed ratio `||op(x) - op(y)|| / ||x - y||` over `n_pairs`
/// sampled pairs: an empirical Lipschitz estimate.
pub fn probe_lipschitz(
    op: &dyn Fn(&BlockVector) -> BlockVector,
    partition: &Arc<BlockPartition>,
    n_pairs: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = BlockVector::zeros(partition.clone());
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let x = sample_in_ball(&center, &mut rng);
        let y = sample_in_ball(&center, &mut rng);
        let sep2 = x.sub(&y).as_slice().iter().map(|v| v * v).sum::<f64>();
        if sep2 < DEGENERATE_SEP {
            continue;
        }
        let ratio = op(&x).distance(&op(&y)) / sep2.sqrt();
        worst = worst.max(ratio);
    }
    worst
}

/// Samples pairs and passes iff the max distance ratio stays `<= 1 + 1e-9`.
pub fn probe_nonexpansive(
    op: &dyn Fn(&BlockVector) -> BlockVector,
    partition: &Arc<BlockPartition>,
    n_pairs: usize,
    seed: u64,
) -> ProbeReport {
    let worst = probe_lipschitz(op, partition, n_pairs, seed);
    ProbeReport { samples: n_pairs, worst, pass: worst <= 1.0 + 1e-9 }
}

/// Checks the 1/2-cocoercivity gap of `S = I - T`:
/// min over pairs of `<x-y, Sx-Sy> - ||Sx-Sy||^2 / 2`; pass iff `>= -1e-9`.
pub fn probe_cocoercive(pair: &OperatorPair, n_pairs: usize, seed: u64) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = BlockVector::zeros(pair.partition().clone());
    let mut worst = f64::INFINITY;
    for _ in 0..n_pairs {
        let x = sample_in_ball(&center, &mut rng);
        let y = sample_in_ball(&center, &mut rng);
        let sx = pair.apply_s(&x)?;
        let sy = pair.apply_s(&y)?;
        let ds = sx.sub(&sy);
        let gap = x.sub(&y).dot(&ds) - 0.5 * ds.dot(&ds);
        worst = worst.min(gap);
    }
    if !worst.is_finite() {
        worst = 0.0;
    }
    Ok(ProbeReport { samples: n_pairs, worst, pass: worst >= -1e-9 })
}

/// Empirical quasi-strong-monotonicity constant of `S` against a verified
/// zero `x_star`: min over samples of `<x - x_star, Sx> / ||x - x_star||^2`.
///
/// Degenerate samples at `x_star` itself are skipped.
pub fn probe_quasi_strong(
    pair: &OperatorPair,
    x_star: &BlockVector,
    n_points: usize,
    seed: u64,
) -> Result<f64> {
    let res = pair.residual(x_star)?;
    if res > 1e-8 {
        return Err(Error::Precondition(format!(
            "x_star is not a zero of S (residual {res:.3e} > 1e-8)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut used = 0usize;
    for _ in 0..n_points {
        let x = sample_in_ball(x_star, &mut rng);
        let d = x.sub(x_star);
        let sep2 = d.dot(&d);
        if sep2 < DEGENERATE_SEP {
            continue;
        }
        let sx = pair.apply_s(&x)?;
        worst = worst.min(d.dot(&sx) / sep2);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Precondition("all probe samples were degenerate".into()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{BackwardBlock, BackwardBlocks, ForwardOperator};
    use approx::assert_relative_eq;

    fn flat(dim: usize) -> Arc<BlockPartition> {
        BlockPartition::flat(dim).unwrap()
    }

    #[test]
    fn identity_is_nonexpansive_with_ratio_one() {
        let p = flat(3);
        let report = probe_nonexpansive(&|x: &BlockVector| x.clone(), &p, 64, 7);
        assert!(report.pass);
        assert_relative_eq!(report.worst, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn doubling_map_fails_nonexpansiveness() {
        let p = flat(3);
        let report = probe_nonexpansive(
            &|x: &BlockVector| {
                let mut y = x.clone();
                y.scale(2.0);
                y
            },
            &p,
            64,
            7,
        );
        assert!(!report.pass);
        assert_relative_eq!(report.worst, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn box_projection_is_nonexpansive() {
        let p = flat(4);
        let report = probe_nonexpansive(
            &|x: &BlockVector| {
                let data = x.as_slice().iter().map(|v| v.max(0.0).min(1.0)).collect();
                BlockVector::new(x.partition().clone(), data).unwrap()
            },
            &p,
            256,
            11,
        );
        assert!(report.pass, "projection ratio {}", report.worst);
    }

    #[test]
    fn zero_s_map_is_cocoercive_with_zero_gap() {
        // B = 0 and T_A = I make T = I, so S = 0.
        let p = flat(2);
        let pair = OperatorPair::new_unchecked(p, ForwardOperator::zero(), BackwardBlocks::identity(1), 1.0)
            .unwrap();
        let report = probe_cocoercive(&pair, 32, 3).unwrap();
        assert!(report.pass);
        assert_relative_eq!(report.worst, 0.0);
    }

    #[test]
    fn admissible_quadratic_pair_is_cocoercive() {
        let p = flat(3);
        let fwd = ForwardOperator::quadratic_diag(vec![1.0, 2.0, 4.0], vec![0.1, 0.0, -0.2]).unwrap();
        let backward = BackwardBlocks::new(vec![BackwardBlock::BoxProjection {
            lo: vec![-2.0; 3],
            hi: vec![2.0; 3],
        }]);
        let pair = OperatorPair::new(p, fwd, backward, 0.4).unwrap(); // gamma < 2/4
        let report = probe_cocoercive(&pair, 256, 5).unwrap();
        assert!(report.pass, "gap {}", report.worst);
    }

    #[test]
    fn inadmissible_gamma_violates_cocoercivity() {
        // Scalar B(x) = L x with gamma = 4/L: T_B = -3 I, S = 4 I.
        let p = flat(1);
        let fwd = ForwardOperator::quadratic_diag(vec![1.0], vec![0.0]).unwrap();
        let pair = OperatorPair::new_unchecked(p, fwd, BackwardBlocks::identity(1), 4.0).unwrap();
        let report = probe_cocoercive(&pair, 32, 9).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn quasi_strong_estimate_matches_contraction_factor() {
        // T = c*I via B(x) = ((1-c)/gamma) x: S = (1-c) I, zero at the origin.
        let c = 0.3;
        let gamma = 0.5;
        let p = flat(2);
        let fwd = ForwardOperator::quadratic_diag(vec![(1.0 - c) / gamma; 2], vec![0.0; 2]).unwrap();
        let pair = OperatorPair::new(p.clone(), fwd, BackwardBlocks::identity(1), gamma).unwrap();
        let x_star = BlockVector::zeros(p);
        let nu = probe_quasi_strong(&pair, &x_star, 64, 13).unwrap();
        assert!(nu >= 1.0 - c - 1e-9, "estimate {nu}");
    }

    #[test]
    fn quasi_strong_full_step_on_strongly_convex_scalar() {
        // f(x) = mu x^2 / 2, gamma = 1/mu: T = 0 so S = I and the estimate is 1.
        let mu = 2.0;
        let p = flat(1);
        let fwd = ForwardOperator::quadratic_diag(vec![mu], vec![0.0]).unwrap();
        let pair = OperatorPair::new_unchecked(p.clone(), fwd, BackwardBlocks::identity(1), 1.0 / mu).unwrap();
        let x_star = BlockVector::zeros(p);
        let nu = probe_quasi_strong(&pair, &x_star, 64, 17).unwrap();
        assert_relative_eq!(nu, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn quasi_strong_requires_verified_zero() {
        let p = flat(1);
        let fwd = ForwardOperator::identity();
        let pair = OperatorPair::new(p.clone(), fwd, BackwardBlocks::identity(1), 1.0).unwrap();
        let not_zero = BlockVector::new(p, vec![3.0]).unwrap();
        assert!(matches!(
            probe_quasi_strong(&pair, &not_zero, 8, 1),
            Err(Error::Precondition(_))
        ));
    }
}
