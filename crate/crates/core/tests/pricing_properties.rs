//! Cross-module laws on randomly generated markets: the fundamental
//! equivalence between consistent prices and absence of arbitrage, the
//! per-period pricing identity, and the tower structure of value processes.

mod common;

use common::{random_claim, random_market, random_strategy};
use conic_markets::cone::{arbitrage_check, lift_cones, member};
use conic_markets::pricing::{
    dual_membership, find_consistent_process, price_and_value, sample_emms,
    conditional_price_under, CppOutcome, DualMembership,
};
use conic_markets::rational::Rational;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    /// Consistent price process exists iff there is no arbitrage — both
    /// routes computed independently (node LP vs claim-space coordinate LPs).
    #[test]
    fn consistent_prices_iff_no_arbitrage(seed in any::<u64>(), dim in 2usize..=3, horizon in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_market(&mut rng, dim, horizon, 2, false);
        let cpp = find_consistent_process(&m, false, None).unwrap();
        let a = lift_cones(&m, 0, horizon);
        let witness = arbitrage_check(&a).unwrap();
        match (&cpp, &witness) {
            (CppOutcome::Found(_), None) | (CppOutcome::Infeasible { .. }, Some(_)) => {}
            other => prop_assert!(false, "FTAP violated: {other:?}"),
        }
        // strict success implies plain success with a validated process
        if let CppOutcome::Found(p) = find_consistent_process(&m, true, None).unwrap() {
            prop_assert!(p.strict);
            prop_assert!(matches!(cpp, CppOutcome::Found(_)));
        }
    }

    /// Attainable claims built from explicit strategies: the per-period
    /// pricing identity holds, every period term is nonpositive, and the
    /// dual test agrees with the primal membership test.
    #[test]
    fn strategy_claims_price_consistently(seed in any::<u64>(), dim in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_market(&mut rng, dim, 2, 2, true);
        let (strategy, x) = random_strategy(&mut rng, &m);
        let z = match find_consistent_process(&m, false, None).unwrap() {
            CppOutcome::Found(p) => p,
            other => { prop_assert!(false, "safe-rate market lost its process: {other:?}"); unreachable!() }
        };
        let report = price_and_value(&m, &z, &x, Some(&strategy)).unwrap();
        let terms = report.period_terms.unwrap();
        prop_assert!(terms.iter().all(|t| !t.is_positive()));
        let total = terms.iter().fold(Rational::zero(), |a, v| a + v);
        prop_assert_eq!(&total, &report.price);

        match dual_membership(&m, &x).unwrap() {
            DualMembership::Attainable { optimum } => prop_assert!(!optimum.is_positive()),
            other => { prop_assert!(false, "constructed claim must be attainable: {other:?}"); }
        }
        let flat = x.flatten(&m.tree);
        prop_assert!(member(&lift_cones(&m, 0, 2), &flat).unwrap().is_inside());
    }

    /// Tower property of value processes, and agreement of conditional
    /// expectations under sampled equivalent martingale measures on
    /// zero-priced claims.
    #[test]
    fn value_processes_are_towers(seed in any::<u64>(), dim in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_market(&mut rng, dim, 2, 2, true);
        let x = random_claim(&mut rng, &m);
        let z = match find_consistent_process(&m, false, None).unwrap() {
            CppOutcome::Found(p) => p,
            _ => unreachable!("safe rates"),
        };
        let report = price_and_value(&m, &z, &x, None).unwrap();
        for node in &m.tree.nodes {
            let children = m.tree.children(node.id);
            if children.is_empty() {
                continue;
            }
            let mut rhs = Rational::zero();
            for &c in children {
                rhs = rhs + m.tree.prob(c) * &report.values[&c];
            }
            prop_assert_eq!(m.tree.prob(node.id) * &report.values[&node.id], rhs);
        }

        // an *attainable* claim priced at zero by Z reprices identically
        // under every sampled martingale measure for Z (its period terms
        // vanish pointwise, so the conditional value is measure-free)
        let (_, ax) = random_strategy(&mut rng, &m);
        if let CppOutcome::Found(zz) =
            find_consistent_process(&m, false, Some(&ax)).unwrap()
        {
            let r = price_and_value(&m, &zz, &ax, None).unwrap();
            prop_assert!(r.price.is_zero());
            for q in sample_emms(&m, &zz, 2, seed).unwrap() {
                for node in &m.tree.nodes {
                    prop_assert_eq!(
                        conditional_price_under(&m, &zz, &ax, &q, node.id),
                        r.values[&node.id].clone()
                    );
                }
            }
        }
    }
}
