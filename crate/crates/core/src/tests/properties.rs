use crate::anneal::propose_candidate;
use crate::chain::CoupledChain;
use crate::group::generate_pauli_group;
use crate::model::{Categorical, Circuit, ErrorModel, GateDistribution};
use crate::montecarlo::run_rng;
use crate::states::{pure_distance, NormOrder, PureState};
use num_complex::Complex64;
use proptest::prelude::*;

fn state(a: f64, phase: f64) -> PureState {
    PureState::new(vec![
        Complex64::new(a.cos(), 0.0),
        Complex64::from_polar(a.sin(), phase),
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pure_distance_is_a_bounded_symmetric_metric(
        a in 0.0..3.2f64, pa in 0.0..6.3f64,
        b in 0.0..3.2f64, pb in 0.0..6.3f64,
        p in 1.0..8.0f64,
    ) {
        let (x, y) = (state(a, pa), state(b, pb));
        let norm = NormOrder::new(p).unwrap();
        let d = pure_distance(&x, &y, norm).unwrap();
        prop_assert!((d - pure_distance(&y, &x, norm).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!(pure_distance(&x, &x, norm).unwrap() <= 1e-7);
    }

    #[test]
    fn proposals_keep_the_product(gates in prop::collection::vec(0usize..4, 2..30), seed in 0u64..1000) {
        let p1 = generate_pauli_group(1).unwrap();
        let mut c = Circuit::new(gates);
        let target = p1.product(&c.gates);
        let mut rng = run_rng(seed, 0);
        for _ in 0..50 {
            c = propose_candidate(&c, &p1, &mut rng).unwrap();
            prop_assert_eq!(p1.product(&c.gates), target);
        }
    }

    #[test]
    fn max_error_dominates_and_grows(
        w in prop::array::uniform4(0.01..1.0f64),
        r in 0.0..0.5f64,
        delta in 0.05..0.9f64,
        a in 0.0..1.5f64,
    ) {
        let p1 = generate_pauli_group(1).unwrap();
        let total: f64 = w.iter().sum();
        let kappa = GateDistribution(Categorical::new((0..4).map(|g| (g, w[g] / total))).unwrap());
        let err = ErrorModel::pauli_channel(&p1, r).unwrap();
        let psi = state(a, 0.3);
        let chain = CoupledChain::build(&p1, &psi, &psi, &kappa, &err, NormOrder::TRACE).unwrap();
        let c = chain.curves(delta, 30).unwrap();
        for t in 0..=30 {
            prop_assert!(c.p_error[t] <= c.p_max_error[t] + 1e-12);
            if t > 0 {
                prop_assert!(c.p_max_error[t - 1] <= c.p_max_error[t] + 1e-12);
            }
        }
    }
}
