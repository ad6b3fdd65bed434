use proptest::prelude::*;
use sml_core::distance::empirical_w1_to_normal;
use sml_core::hermite::{expand, hermite_coefficients, subordinated_covariance, SubordinatorFunction};
use sml_core::io::{decode_flp1, encode_flp1, format_atoms, parse_atoms, parse_config, FlpBlock};
use sml_core::levy::LevyMeasure;
use sml_core::numerics::gauss_hermite_expectation;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
}

proptest! {
    #[test]
    fn flp1_round_trips(n in 0u64..6, points in 0u64..6, hurst in 0.01f64..0.99, seed: u64, fill in finite()) {
        let values: Vec<f64> = (0..n * points).map(|k| fill * k as f64).collect();
        let block = FlpBlock { n, n_points: points, hurst, seed, values };
        let bytes = encode_flp1(&block).unwrap();
        prop_assert_eq!(decode_flp1(&bytes).unwrap(), block);
    }

    #[test]
    fn flp1_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = decode_flp1(&bytes);
    }

    #[test]
    fn atoms_round_trip(atoms in prop::collection::vec((-10.0f64..10.0, 1e-6f64..10.0), 1..6)) {
        let atoms: Vec<(f64, f64)> = atoms.into_iter().filter(|(x, _)| *x != 0.0).collect();
        prop_assume!(!atoms.is_empty());
        let parsed = parse_atoms(&format_atoms(&atoms)).unwrap();
        prop_assert_eq!(parsed, LevyMeasure::atoms(atoms).unwrap());
    }

    #[test]
    fn config_round_trip(entries in prop::collection::btree_map("[a-zA-Z_][a-zA-Z0-9_-]{0,8}", "[^#\n\r=]{0,12}", 0..8)) {
        let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let parsed = parse_config(&text).unwrap();
        let trimmed: std::collections::BTreeMap<String, String> =
            entries.iter().map(|(k, v)| (k.clone(), v.trim().to_string())).collect();
        prop_assert_eq!(parsed, trimmed);
    }

    #[test]
    fn w1_is_shift_and_scale_equivariant(
        xs in prop::collection::vec(-5.0f64..5.0, 8..64),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
    ) {
        let base = empirical_w1_to_normal(&xs, 0.0, 1.0).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| shift + scale * x).collect();
        let other = empirical_w1_to_normal(&moved, shift, scale).unwrap();
        prop_assert!((other.value - scale * base.value).abs() <= 1e-9 * (1.0 + scale * base.value));
    }

    #[test]
    fn w1_ignores_sample_order(mut xs in prop::collection::vec(-5.0f64..5.0, 8..64)) {
        let a = empirical_w1_to_normal(&xs, 0.0, 1.0).unwrap();
        xs.reverse();
        let b = empirical_w1_to_normal(&xs, 0.0, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_correlation_gives_variance(coeffs in prop::collection::vec(-2.0f64..2.0, 2..5)) {
        let f = SubordinatorFunction::polynomial(&coeffs);
        let e = hermite_coefficients(&f, 8, 64).unwrap();
        let mean = gauss_hermite_expectation(|x| f.eval(x), 64).unwrap();
        let var = gauss_hermite_expectation(|x| (f.eval(x) - mean).powi(2), 64).unwrap();
        let at_one = subordinated_covariance(&e, 1.0).unwrap();
        prop_assert!((at_one - var).abs() <= 1e-9 * (1.0 + var));
        prop_assert!((e.variance_of_f - var).abs() <= 1e-9 * (1.0 + var));
    }

    #[test]
    fn covariance_is_bounded_by_variance(rho in -1.0f64..1.0) {
        let e = expand(&SubordinatorFunction::tanh()).unwrap();
        let c = subordinated_covariance(&e, rho).unwrap();
        prop_assert!(c.abs() <= e.variance_of_f * (1.0 + 1e-12));
    }
}
