//! Property-based invariants over randomized inputs.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use nlse_lab::field::ComplexField;
use nlse_lab::grid::{build_grid, PotentialField};
use nlse_lab::manifest::{example_solve_manifest, Manifest};
use nlse_lab::nonlinearity::{binomial, NonlinearitySpec};
use nlse_lab::spectral::eigendecompose;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The propagator preserves the L2 norm for arbitrary mode mixtures,
    /// times, and potentials.
    #[test]
    fn propagator_is_unitary(
        amps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3),
        t in -3.0f64..3.0,
        p0 in -1.0f64..1.0,
    ) {
        let g = Arc::new(build_grid(1, [PI, 0.0], [31, 0], 0.3).unwrap());
        let p = PotentialField::constant(&g, "p", p0);
        let op = eigendecompose(g.clone(), &p).unwrap();
        let f = ComplexField::from_fn(g, |x, _| {
            amps.iter()
                .enumerate()
                .map(|(m, &(re, im))| {
                    Complex64::new(re, im) * ((m + 1) as f64 * x).sin()
                })
                .sum()
        });
        let norm = f.l2_norm();
        prop_assume!(norm > 1e-9);
        let moved = op.propagate(&f, t).unwrap();
        prop_assert!((moved.l2_norm() - norm).abs() <= 1e-10 * norm);
    }

    /// Canonical manifests round-trip byte-identically through parse. Seeds
    /// stay within i64 because TOML integers are signed.
    #[test]
    fn manifest_canonical_round_trip(
        seed in 0u64..=i64::MAX as u64,
        t_max in 0.1f64..2.0,
        amplitude in 0.01f64..1.0,
        frequency in 1usize..6,
    ) {
        let mut m = example_solve_manifest();
        m.seed = seed;
        m.solver.t_max = t_max;
        m.experiment.data.amplitude = Some(amplitude);
        m.experiment.data.frequency = Some(frequency);
        let text = m.canonical();
        let back = Manifest::parse(&text).unwrap();
        prop_assert_eq!(back.canonical(), text);
    }

    /// Pascal's rule holds wherever the factorial table is exact in u64.
    #[test]
    fn binomial_pascal_rule(n in 1usize..19, k in 1usize..19) {
        prop_assume!(k <= n);
        prop_assert_eq!(
            binomial(n + 1, k),
            binomial(n, k - 1) + binomial(n, k)
        );
    }

    /// The coefficient sum driving the initial-data identity reduces to k!
    /// for every monomial, whatever the analytic-bound constant.
    #[test]
    fn monomial_binomial_sum(m0 in 1usize..4, n0 in 0usize..4, c0 in 0.1f64..2.0) {
        prop_assume!(m0 + n0 >= 2);
        let spec = NonlinearitySpec::monomial(m0, n0, c0);
        let expect: f64 = (1..=m0 + n0).product::<usize>() as f64;
        prop_assert!((spec.binomial_sum() - expect).abs() <= 1e-12 * expect);
    }
}
