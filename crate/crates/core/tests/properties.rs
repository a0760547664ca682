use std::sync::Arc;

use fracheat::control::{control_initial, ControlConfig};
use fracheat::heat::{solve_initial, BoundarySignal};
use fracheat::inverse::forward_trace_map;
use fracheat::operator::kernel_weights;
use fracheat::wave::{wave_energy, WaveState};
use fracheat::{eigendecompose, make_grid, FracOperator, PotentialSpec};
use proptest::prelude::*;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

fn bump_q(g: &fracheat::Grid1D, c: f64, x0: f64) -> PotentialSpec {
    PotentialSpec::from_fn(g, |x| c * (-20.0 * (x - x0).powi(2)).exp()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kernel_weights_positive_and_decreasing(a in 0.05f64..0.95, count in 2usize..200) {
        let k = kernel_weights(a, count).unwrap();
        prop_assert!(k.iter().all(|w| *w > 0.0));
        prop_assert!(k.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn operator_symmetric_positive((n, u, v) in (16usize..64).prop_flat_map(|n| (Just(n), vec_of(n), vec_of(n))),
                                   a in 0.1f64..0.95, c in 0.0f64..0.1) {
        let g = make_grid(-1.0, 1.0, n).unwrap();
        let op = FracOperator::assemble(a, &g, &bump_q(&g, c, 0.0)).unwrap();
        let (au, av) = (op.apply(&u), op.apply(&v));
        let (uv, vu) = (g.inner(&v, &au), g.inner(&u, &av));
        prop_assert!((uv - vu).abs() <= 1e-10 * (1.0 + uv.abs()));
        prop_assert!(g.inner(&u, &au) > 0.0);
    }

    #[test]
    fn eigenbasis_round_trip((n, u) in (16usize..48).prop_flat_map(|n| (Just(n), vec_of(n))), a in 0.2f64..0.9) {
        let g = make_grid(-1.0, 1.0, n).unwrap();
        let op = FracOperator::free(a, &g).unwrap();
        let basis = eigendecompose(&op).unwrap();
        prop_assert!(basis.lambdas.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(basis.lambdas[0] > 0.0);
        let back = basis.synthesize(&basis.coefficients(&u).unwrap());
        let err = u.iter().zip(&back).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn heat_contracts_and_composes((n, f) in (16usize..48).prop_flat_map(|n| (Just(n), vec_of(n))),
                                   a in 0.2f64..0.9, t in 0.01f64..0.5, s in 0.01f64..0.5) {
        let g = make_grid(-1.0, 1.0, n).unwrap();
        let op = FracOperator::assemble(a, &g, &bump_q(&g, 0.05, 0.3)).unwrap();
        let basis = eigendecompose(&op).unwrap();
        let ut = solve_initial(&basis, &f, t).unwrap();
        prop_assert!(g.norm(&ut) <= g.norm(&f) * (1.0 + 1e-12));
        let two_step = solve_initial(&basis, &ut, s).unwrap();
        let one_step = solve_initial(&basis, &f, t + s).unwrap();
        let gap = two_step.iter().zip(&one_step).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-10 * (1.0 + g.norm(&f)));
    }

    #[test]
    fn trace_map_gauge_shift(seed in 0u64..1000, c in -0.5f64..0.5) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = make_grid(-1.0, 1.0, 32).unwrap();
        let f = fracheat::inverse::random_initial(&g, &mut rng);
        let q = bump_q(&g, 0.05, 0.0);
        let shifted = PotentialSpec::new(&g, q.values.iter().map(|v| v + c).collect()).unwrap();
        let times = [0.01, 0.1, 0.5];
        let base = forward_trace_map(0.75, &g, &q, &f, &times).unwrap();
        let moved = forward_trace_map(0.75, &g, &shifted, &f, &times).unwrap();
        for (k, t) in times.iter().enumerate() {
            for s in 0..2 {
                let want = base[k][s] * (-c * t).exp();
                prop_assert!((moved[k][s] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn control_hits_epsilon_exactly(k in 1usize..6, eps in 0.01f64..0.2, seed in 0u64..100) {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let basis = eigendecompose(&FracOperator::free(0.75, &g).unwrap()).unwrap();
        let mut h = basis.mode(k - 1).to_vec();
        let w = 0.1 * (seed as f64 / 100.0);
        for (hi, p) in h.iter_mut().zip(basis.mode(k)) {
            *hi += w * p;
        }
        let cfg = ControlConfig { epsilon: eps, ..Default::default() };
        let r = control_initial(&basis, &h, &cfg).unwrap();
        prop_assert!((r.achieved_error / eps - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn wave_energy_conserved(seed in 0u64..1000, j in 1usize..8, t in 0.0f64..5.0) {
        let g = make_grid(-1.0, 1.0, 64).unwrap();
        let op = Arc::new(FracOperator::assemble(0.75, &g, &bump_q(&g, 0.05, 0.0)).unwrap());
        let basis = Arc::new(eigendecompose(&op).unwrap());
        let w = WaveState::random(op, basis, j, seed).unwrap();
        let (e0, et) = (wave_energy(&w, 0.0), wave_energy(&w, t));
        prop_assert!((et - e0).abs() <= 1e-10 * e0);
    }

    #[test]
    fn boundary_signal_csv_round_trip(vals in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..20)) {
        let times: Vec<f64> = (0..vals.len()).map(|k| k as f64 * 0.1).collect();
        let mut values: Vec<[f64; 2]> = vals.iter().map(|&(l, r)| [l, r]).collect();
        values[0] = [0.0, 0.0];
        let sig = BoundarySignal::new(times, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sig.csv");
        sig.write_csv(&p).unwrap();
        prop_assert_eq!(BoundarySignal::from_csv(&p).unwrap(), sig);
    }
}
