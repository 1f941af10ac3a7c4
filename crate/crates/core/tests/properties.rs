mod common;

use proptest::prelude::*;

use aoii_sched::baselines::{RandomFeasible, SchedulingPolicy};
use aoii_sched::mappo::{compute_returns, wiac_fuse};
use aoii_sched::nn::{entropy, softmax};
use aoii_sched::whittle::{build_table, stationary_distribution, SubProblem};
use aoii_sched::{
    project_observation, Environment, IndexGrid, LevelMatrix, ProcessModel, RngStream, StreamId, SystemState,
    WhittleTable,
};
use common::small_config;

fn table(monitors: usize) -> WhittleTable {
    let cfg = small_config(monitors, &[1], 1);
    build_table(&cfg.monitors, 60, &IndexGrid::default()).unwrap()
}

fn state_strategy(monitors: usize, traffics: usize, channels: usize, max_b: u32) -> impl Strategy<Value = SystemState> {
    (
        prop::collection::vec(0u64..80, monitors),
        prop::collection::vec(0usize..3, traffics * channels),
        prop::collection::vec(0u32..=max_b, channels),
    )
        .prop_map(move |(aoii, g, release)| {
            let mut gains = LevelMatrix::zeros(traffics, channels);
            for j in 0..traffics {
                for m in 0..channels {
                    gains.set(j, m, g[j * channels + m]);
                }
            }
            SystemState { aoii, gains, release }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fused_actions_are_feasible(
        state in state_strategy(4, 2, 3, 2),
        raw in prop::collection::vec(1usize..=4, 3),
    ) {
        let t = table(4);
        // busy channels always carry the idle choice J + 2
        let choices: Vec<usize> = raw.iter().zip(&state.release).map(|(&c, &b)| if b > 0 { 4 } else { c }).collect();
        let a = wiac_fuse(&state, &choices, &t, 2);
        a.check_feasible(&state, 6).unwrap();
        let monitors: Vec<usize> = a.entries().iter().copied().filter(|&d| (1..=4).contains(&d)).collect();
        let mut dedup = monitors.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), monitors.len());
        for (&c, &d) in choices.iter().zip(a.entries()) {
            match c {
                1 | 2 => prop_assert_eq!(d, 4 + c),
                3 => prop_assert!((1..=4).contains(&d)),
                _ => prop_assert_eq!(d, 0),
            }
        }
    }

    #[test]
    fn random_policy_never_violates(seed in any::<u64>()) {
        let cfg = small_config(3, &[1, 3], 2);
        let mut env = Environment::new(cfg.clone(), seed).unwrap();
        let mut policy = RandomFeasible::new(&cfg);
        let mut rng = RngStream::new(seed, StreamId::Policy, 0);
        for _ in 0..200 {
            let a = policy.act(env.state(), &mut rng).unwrap();
            let step = env.step(&a).unwrap();
            prop_assert!(step.next_state.release.iter().all(|&b| b <= cfg.max_release()));
        }
        prop_assert_eq!(env.violations(), 0);
    }

    #[test]
    fn observations_project_the_state(state in state_strategy(3, 2, 2, 2), m in 0usize..2) {
        let obs = project_observation(&state, m).unwrap();
        prop_assert_eq!(obs.dim(), 3 + 2 + 1);
        prop_assert_eq!(&obs.aoii, &state.aoii);
        prop_assert_eq!(obs.gains_col, state.gains.column(m));
        prop_assert_eq!(obs.release_m, state.release[m]);
    }

    #[test]
    fn returns_equal_discounted_sums(
        rewards in prop::collection::vec(-100.0f64..100.0, 1..60),
        alpha in 0.0f64..0.999,
    ) {
        let v = compute_returns(&rewards, alpha);
        for t in 0..rewards.len() {
            let direct: f64 = (t..rewards.len()).map(|k| alpha.powi((k - t) as i32) * rewards[k]).sum();
            prop_assert!((v[t] - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn softmax_normalises(logits in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(entropy(&p) <= (logits.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn index_columns_are_monotone(p in 0.2f64..0.95, w in 0.5f64..3.0) {
        let t = build_table(&[ProcessModel::new(10, p, w)], 80, &IndexGrid::default()).unwrap();
        prop_assert!(t.columns[0].indices.windows(2).all(|v| v[1] >= v[0]));
    }

    #[test]
    fn stationary_law_is_a_distribution(p in 0.2f64..0.95, x0 in 1u32..40) {
        let sp = SubProblem::from_process(&ProcessModel::new(10, p, 1.0));
        let d = stationary_distribution(&sp, x0, 3000).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() + d.tail - 1.0).abs() < 1e-9);
        prop_assert!(d.probs.iter().all(|&v| v >= 0.0));
    }
}
