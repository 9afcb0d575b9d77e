//! Property suites over randomly generated operator catalogs.

use std::sync::Arc;

use proptest::prelude::*;

use afb::block::{BlockPartition, BlockVector};
use afb::operators::{prox::prox_separable_quadratic, BackwardBlock, BackwardBlocks, ForwardOperator, OperatorPair};

#[derive(Debug, Clone)]
struct CatalogPair {
    dims: Vec<usize>,
    curvatures: Vec<f64>,
    linear: Vec<f64>,
    gamma_frac: f64,
    backward_kind: u8,
}

fn catalog_pair() -> impl Strategy<Value = CatalogPair> {
    (
        proptest::collection::vec(1usize..4, 1..4),
        0.05f64..0.95,
        0u8..3,
    )
        .prop_flat_map(|(dims, gamma_frac, backward_kind)| {
            let total: usize = dims.iter().sum();
            (
                Just(dims),
                proptest::collection::vec(0.1f64..5.0, total),
                proptest::collection::vec(-2.0f64..2.0, total),
                Just(gamma_frac),
                Just(backward_kind),
            )
        })
        .prop_map(|(dims, curvatures, linear, gamma_frac, backward_kind)| CatalogPair {
            dims,
            curvatures,
            linear,
            gamma_frac,
            backward_kind,
        })
}

fn build(pair: &CatalogPair) -> (Arc<BlockPartition>, OperatorPair) {
    let partition = BlockPartition::new(pair.dims.clone()).unwrap();
    let fwd = ForwardOperator::quadratic_diag(pair.curvatures.clone(), pair.linear.clone()).unwrap();
    let gamma = pair.gamma_frac * 2.0 / fwd.inv_cocoercivity();
    let blocks = pair
        .dims
        .iter()
        .map(|&d| match pair.backward_kind {
            0 => BackwardBlock::Identity,
            1 => BackwardBlock::BoxProjection { lo: vec![-1.5; d], hi: vec![1.5; d] },
            _ => BackwardBlock::SeparableQuadratic { q_diag: vec![0.7; d], q_lin: vec![0.1; d] },
        })
        .collect();
    let op = OperatorPair::new(partition.clone(), fwd, BackwardBlocks::new(blocks), gamma).unwrap();
    (partition, op)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For any conforming x, T x + S x recovers x to machine precision.
    #[test]
    fn apply_t_plus_apply_s_is_identity(cat in catalog_pair(), coords in proptest::collection::vec(-10.0f64..10.0, 12)) {
        let (partition, pair) = build(&cat);
        let x = BlockVector::from_fn(partition, |i| coords[i % coords.len()]);
        let t = pair.apply_t(&x).unwrap();
        let s = pair.apply_s(&x).unwrap();
        let sum = t.add(&s);
        prop_assert!(sum.distance(&x) <= 1e-14 * (1.0 + x.norm()));
    }

    /// The closed-form separable prox is firmly nonexpansive:
    /// ||p(u)-p(v)||^2 <= <p(u)-p(v), u-v>.
    #[test]
    fn separable_prox_firmly_nonexpansive(
        diag in proptest::collection::vec(0.0f64..4.0, 5),
        lin in proptest::collection::vec(-3.0f64..3.0, 5),
        u in proptest::collection::vec(-20.0f64..20.0, 5),
        v in proptest::collection::vec(-20.0f64..20.0, 5),
        gamma in 0.01f64..5.0,
    ) {
        let pu = prox_separable_quadratic(&diag, &lin, gamma, &u).unwrap();
        let pv = prox_separable_quadratic(&diag, &lin, gamma, &v).unwrap();
        let dp: Vec<f64> = pu.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lhs: f64 = dp.iter().map(|x| x * x).sum();
        let rhs: f64 = dp.iter().zip(&du).map(|(a, b)| a * b).sum();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    /// Admissible pairs keep S 1/2-cocoercive on sampled pairs.
    #[test]
    fn admissible_pairs_are_cocoercive(cat in catalog_pair(), seed in 0u64..1_000) {
        let (_, pair) = build(&cat);
        let report = afb::operators::probes::probe_cocoercive(&pair, 48, seed).unwrap();
        prop_assert!(report.pass, "gap {}", report.worst);
    }
}
