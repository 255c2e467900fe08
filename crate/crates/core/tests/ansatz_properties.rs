use std::sync::Arc;

use concentra_core::ansatz::{
    build_ansatz, build_magnetic_ansatz, solve_ground_state, solve_ground_state_with, ShootingConfig,
};
use concentra_core::energy::{energy, Functional, Mode};
use concentra_core::grid::{gradient_components, laplacian_apply, make_grid};
use concentra_core::problem::{Potential, ProblemSpec};
use proptest::prelude::*;

fn constant_spec(n: usize, p: f64, v: f64, k: f64) -> ProblemSpec {
    ProblemSpec::new(n, p, Potential::constant(v), Potential::constant(k), 0.1).unwrap()
}

/// Max-norm residual of `−z″ + (1+V)z − K|z|^{p−1}z` for the 1D ansatz on `m`
/// nodes, taken over `|x| ≤ 6` so that the truncation of the tail at the box
/// faces does not enter.
fn frozen_residual(p: f64, v: f64, k: f64, m: usize) -> f64 {
    let profile = solve_ground_state(1, p, 1e-8, 20.0).unwrap();
    let spec = constant_spec(1, p, v, k);
    let grid = Arc::new(make_grid(1, 10.0, m).unwrap());
    let z = build_ansatz(&profile, &spec, &[0.0], grid.clone()).unwrap();
    let lap = laplacian_apply(&z);
    (0..m)
        .filter(|&j| grid.coord(0, j).abs() <= 6.0)
        .map(|j| {
            let (u, l) = (z.values()[j], lap.values()[j]);
            (-l + (1.0 + v) * u - k * u.abs().powf(p - 1.0) * u).abs()
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ground_state_does_not_depend_on_the_bracket(
        n in 1usize..=3,
        p in 2.0f64..2.9,
        upper in 6.0f64..40.0,
    ) {
        let tol = 1e-8;
        let reference = solve_ground_state(n, p, tol, 20.0).unwrap();
        let cfg = ShootingConfig { upper_bracket: upper, ..ShootingConfig::default() };
        let perturbed = solve_ground_state_with(n, p, tol, 20.0, &cfg).unwrap();
        prop_assert!((reference.peak - perturbed.peak).abs() <= 10.0 * tol, "{} vs {}", reference.peak, perturbed.peak);
    }

    #[test]
    fn ansatz_residual_is_second_order(p in 2.0f64..4.0, v in 0.0f64..2.0, k in 0.5f64..2.0) {
        let ratio = frozen_residual(p, v, k, 201) / frozen_residual(p, v, k, 401);
        prop_assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn phase_shift_is_a_global_rotation(
        sigma in 0.0f64..std::f64::consts::TAU,
        shift in -10.0f64..10.0,
        a1 in -1.0f64..1.0,
        a2 in -1.0f64..1.0,
    ) {
        let profile = solve_ground_state(2, 3.0, 1e-8, 20.0).unwrap();
        let spec = constant_spec(2, 3.0, 0.3, 1.0)
            .with_magnetic(vec![Potential::constant(a1), Potential::constant(a2)])
            .unwrap();
        let grid = Arc::new(make_grid(2, 8.0, 41).unwrap());
        let z0 = build_magnetic_ansatz(&profile, &spec, &[0.0, 0.0], sigma, grid.clone()).unwrap();
        let z1 = build_magnetic_ansatz(&profile, &spec, &[0.0, 0.0], sigma + shift, grid.clone()).unwrap();
        let rotated = z0.rotate_phase(shift);
        let scale = z0.max_abs();
        for i in 0..z0.node_count() {
            let (a, b) = (z1.at(i), rotated.at(i));
            prop_assert!((a.0 - b.0).abs() <= 1e-13 * scale && (a.1 - b.1).abs() <= 1e-13 * scale);
            prop_assert!((z1.modulus(i) - z0.modulus(i)).abs() <= 1e-13 * scale);
        }
        // |covariant gradient| per node and the energy are gauge invariant
        let cov = |u: &concentra_core::grid::GridFunction| -> Vec<f64> {
            let grads = gradient_components(u);
            let a = [a1, a2];
            (0..u.node_count())
                .map(|i| {
                    let (re, im) = u.at(i);
                    (0..2)
                        .map(|ax| {
                            let (gr, gi) = (grads[ax][2 * i], grads[ax][2 * i + 1]);
                            let (cr, ci) = (gr + a[ax] * im, gi - a[ax] * re);
                            cr * cr + ci * ci
                        })
                        .sum::<f64>()
                })
                .collect()
        };
        let (c0, c1) = (cov(&z0), cov(&z1));
        let cmax = c0.iter().cloned().fold(0.0, f64::max);
        for (x, y) in c0.iter().zip(&c1) {
            prop_assert!((x - y).abs() <= 1e-12 * cmax);
        }
        let e0 = energy(&z0, &spec).unwrap().value;
        let e1 = energy(&z1, &spec).unwrap().value;
        prop_assert!((e0 - e1).abs() <= 1e-12 * e0.abs());
        let frozen = Functional::new(&spec, grid, Mode::Frozen(vec![0.0, 0.0])).unwrap();
        let f0 = frozen.value(&z0).unwrap();
        prop_assert!((f0 - frozen.value(&z1).unwrap()).abs() <= 1e-12 * f0.abs());
    }
}
