use concentra_core::geodesics::{melnikov_gamma, LoopState, MetricPerturbation};
use proptest::prelude::*;

fn pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, dim + 1), prop::collection::vec(-1.0f64..1.0, dim + 1))
        .prop_filter("independent pair", |(p, q)| {
            let pp: f64 = p.iter().map(|v| v * v).sum();
            let qq: f64 = q.iter().map(|v| v * v).sum();
            let pq: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            pp > 1e-2 && qq > 1e-2 && pp * qq - pq * pq > 1e-2 * pp * qq
        })
}

fn stiefel_defect(s: &LoopState) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let pp = (dot(&s.p, &s.p) - 1.0).abs();
    let qq = (dot(&s.q, &s.q) - 1.0).abs();
    pp.max(qq).max(dot(&s.p, &s.q).abs())
}

fn directional(dim: usize) -> MetricPerturbation {
    let mut d = vec![0.0; dim + 1];
    d[0] = 0.8;
    d[1] = 0.6;
    MetricPerturbation::directional(dim, d, |s: f64| s * (-s * s).exp()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gamma_is_invariant_under_reparameterization(
        (dim, (p, q)) in (2usize..=3).prop_flat_map(|d| (Just(d), pair(d))),
        r in -2.0f64..2.0,
        tau in 0.0f64..1.0,
        reflect in any::<bool>(),
    ) {
        let s = LoopState::orthonormalized(r, p, q, 64).unwrap();
        let h = directional(dim);
        let conformal = MetricPerturbation::conformal(dim, |s: f64| s * (-s * s).exp()).unwrap();
        let t = s.transformed(tau, reflect);
        prop_assert!(stiefel_defect(&t) <= 1e-12);
        for metric in [&h, &conformal] {
            let a = melnikov_gamma(&s, metric).unwrap();
            let b = melnikov_gamma(&t, metric).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gauge_fixing_preserves_the_stiefel_constraints((p, q) in pair(3), tau in 0.0f64..1.0) {
        let s = LoopState::orthonormalized(0.3, p, q, 32).unwrap();
        let g = s.transformed(tau, true).gauge_fixed();
        prop_assert!(stiefel_defect(&s) <= 1e-10);
        prop_assert!(stiefel_defect(&g) <= 1e-10);
    }

    #[test]
    fn gamma_decays_at_large_cylinder_coordinate((p, q) in pair(2)) {
        let h = directional(2);
        let gammas: Vec<f64> = (-40..=40)
            .map(|k| {
                let s = LoopState::orthonormalized(k as f64 * 0.1, p.clone(), q.clone(), 64).unwrap();
                melnikov_gamma(&s, &h).unwrap()
            })
            .collect();
        let peak = gammas.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        prop_assume!(peak > 1e-8);
        let r_max = 6.0;
        for r in [-r_max, r_max] {
            let s = LoopState::orthonormalized(r, p.clone(), q.clone(), 64).unwrap();
            let g = melnikov_gamma(&s, &h).unwrap();
            prop_assert!(g.abs() <= 1e-3 * peak, "Γ({r}) = {g}, peak {peak}");
        }
    }
}
