use dirbit_core::gpt::{BallSpace, BallState};
use dirbit_core::group::{majorization_certificate, majorization_le, stabilizer_average, CERTIFICATE_TOL};
use dirbit_core::linalg::{random_unit, rng_from_seed};
use dirbit_core::qubit::{pauli, CMatrix};
use nalgebra::{Complex, DVector};
use proptest::prelude::*;

fn state(d: usize, norm: f64, seed: u64) -> BallState {
    BallState::new(random_unit(d, &mut rng_from_seed(seed)) * norm).unwrap()
}

fn purity(bloch: &DVector<f64>) -> f64 {
    let mut rho = CMatrix::identity(2, 2) * Complex::new(0.5, 0.0);
    for k in 0..3 {
        rho += pauli(k + 1) * Complex::new(bloch[k] / 2.0, 0.0);
    }
    (&rho * &rho).trace().re
}

proptest! {
    #[test]
    fn order_is_transitive_and_antisymmetric_up_to_rotation(
        d in 1usize..6, n in prop::array::uniform3(0.0f64..=1.0), seeds in prop::array::uniform3(any::<u64>())
    ) {
        let s = BallSpace::noiseless(d).unwrap();
        let [a, b, c] = [0, 1, 2].map(|k| state(d, n[k], seeds[k]));
        prop_assert!(majorization_le(&s, &a, &a));
        if majorization_le(&s, &a, &b) && majorization_le(&s, &b, &c) {
            prop_assert!(majorization_le(&s, &a, &c));
        }
        if majorization_le(&s, &a, &b) && majorization_le(&s, &b, &a) {
            prop_assert!((a.norm() - b.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn purity_order_matches_norm_order(n in prop::array::uniform2(0.0f64..=1.0), seeds in prop::array::uniform2(any::<u64>())) {
        let s = BallSpace::noiseless(3).unwrap();
        let phi = state(3, n[0], seeds[0]);
        let omega = state(3, n[1], seeds[1]);
        let by_purity = purity(phi.bloch()) <= purity(omega.bloch()) + 1e-9;
        prop_assert_eq!(majorization_le(&s, &phi, &omega), by_purity);
    }

    #[test]
    fn stabilizer_average_contracts_and_keeps_the_axis(d in 1usize..6, norm in 0.0f64..=1.0, seed in any::<u64>()) {
        let s = BallSpace::noiseless(d).unwrap();
        let omega = state(d, norm, seed);
        let y = random_unit(d, &mut rng_from_seed(seed ^ 0xabc));
        let avg = stabilizer_average(&s, &omega, &y, 64, seed).unwrap();
        prop_assert!(avg.state.norm() <= omega.norm() + 1e-9);
        prop_assert!((avg.state.bloch().dot(&y) - omega.bloch().dot(&y)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certificate_exists_whenever_the_order_holds(
        d in 1usize..4, n in prop::array::uniform2(0.0f64..=1.0), seeds in prop::array::uniform2(any::<u64>())
    ) {
        let s = BallSpace::noiseless(d).unwrap();
        let (lo, hi) = if n[0] <= n[1] { (n[0], n[1]) } else { (n[1], n[0]) };
        let phi = state(d, lo, seeds[0]);
        let omega = state(d, hi, seeds[1]);
        prop_assert!(majorization_le(&s, &phi, &omega));
        let cert = majorization_certificate(&s, &phi, &omega, 200, seeds[0]).unwrap();
        let cert = cert.expect("certificate");
        prop_assert!(cert.residual <= CERTIFICATE_TOL);
        prop_assert!((cert.combine(&omega) - phi.bloch()).norm() <= 10.0 * CERTIFICATE_TOL);
        let total: f64 = cert.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(cert.weights.iter().all(|w| *w >= -1e-12));
    }

    #[test]
    fn no_certificate_for_a_strictly_purer_target(d in 1usize..5, seed in any::<u64>()) {
        let s = BallSpace::noiseless(d).unwrap();
        let phi = state(d, 0.9, seed);
        let omega = state(d, 0.5, seed ^ 1);
        prop_assert!(!majorization_le(&s, &phi, &omega));
        prop_assert!(majorization_certificate(&s, &phi, &omega, 40, seed).unwrap().is_none());
    }
}
