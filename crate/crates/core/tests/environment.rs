mod common;

use aoii_sched::baselines::{monte_carlo_eval, SchedulingPolicy};
use aoii_sched::env::{expected_throughput, step_aoii, step_gains, step_release, throughput, TrajectoryWriter};
use aoii_sched::{
    ActionVector, ChannelModel, Environment, Error, GainChain, LevelMatrix, ProcessModel, RngStream, StreamId,
    SystemConfig, SystemState, TrafficModel,
};
use common::{small_config, z_score};

const DRAWS: u64 = 200_000;

#[test]
fn aoii_reset_frequencies_match_the_model() {
    let model = ProcessModel::new(10, 0.6, 1.0);
    let q = model.cross_prob();
    let mut rng = RngStream::new(1, StreamId::Process, 0);
    for (x, tx, p) in [(0, false, 0.6), (0, true, 0.6), (5, true, 0.6), (5, false, q), (40, false, q)] {
        let resets = (0..DRAWS).filter(|_| step_aoii(x, tx, &model, &mut rng) == 0).count() as u64;
        let z = z_score(resets, DRAWS, p);
        assert!(z.abs() < 4.0, "x={x} tx={tx}: z={z}");
    }
}

#[test]
fn aoii_only_resets_or_grows_by_one() {
    let model = ProcessModel::new(10, 0.9, 1.0);
    let mut rng = RngStream::new(2, StreamId::Process, 0);
    let mut x = 0;
    for t in 0..10_000 {
        let next = step_aoii(x, t % 7 == 0, &model, &mut rng);
        assert!(next == 0 || next == x + 1);
        x = next;
    }
}

#[test]
fn banded_gain_chain_stays_and_reflects() {
    let cfg = SystemConfig {
        monitors: vec![ProcessModel::new(10, 0.6, 1.0)],
        traffics: vec![TrafficModel::new(1, 1.0)],
        channels: vec![ChannelModel {
            bandwidth: 1.0,
            gains: vec![GainChain::banded(5.0, 3, 0.6)],
        }],
        snr: 1.0,
        discount: 0.9,
        log_base: 2.0,
    };
    let mut rng = RngStream::new(3, StreamId::Gain, 0);
    // interior level stays with 0.6, boundary levels with 0.8
    for (level, stay) in [(0, 0.8), (1, 0.6), (2, 0.8)] {
        let g = LevelMatrix::from_rows(vec![vec![level]]);
        let stays = (0..DRAWS).filter(|_| step_gains(&g, &cfg, &mut rng).get(0, 0) == level).count() as u64;
        let z = z_score(stays, DRAWS, stay);
        assert!(z.abs() < 4.0, "level {level}: z={z}");
    }
}

#[test]
fn throughput_is_shannon_rate() {
    assert!((throughput(3.0, 1.0, 1.0, 2.0) - 2.0).abs() < 1e-15);
    assert!((throughput(0.0, 5.0, 1.0, 2.0)).abs() < 1e-15);
    assert!((throughput(1.0, 2.0, 3.0, 2.0) - 4.0).abs() < 1e-15);
}

#[test]
fn expected_throughput_matches_simulated_transmissions() {
    let cfg = small_config(1, &[4], 1);
    let chain = cfg.gain_chain(0, 0).clone();
    let mut rng = RngStream::new(4, StreamId::Gain, 0);
    let n = 100_000;
    for level in 0..3 {
        let exact = expected_throughput(0, 0, level, &cfg);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut g = LevelMatrix::from_rows(vec![vec![level]]);
            let mut total = 0.0;
            for _ in 0..4 {
                total += throughput(chain.level(g.get(0, 0)), 1.0, cfg.snr, cfg.log_base);
                g = step_gains(&g, &cfg, &mut rng);
            }
            samples.push(total);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se + 1e-12, "level {level}: mc {mean} vs {exact}");
    }
}

#[test]
fn release_time_follows_duration() {
    let traffics = [TrafficModel::new(1, 1.0), TrafficModel::new(3, 1.0)];
    // I = 2: actions 1, 2 are monitors, 3 and 4 traffics
    assert_eq!(step_release(0, 0, &traffics, 2).unwrap(), 0);
    assert_eq!(step_release(0, 1, &traffics, 2).unwrap(), 0);
    assert_eq!(step_release(0, 3, &traffics, 2).unwrap(), 0);
    assert_eq!(step_release(0, 4, &traffics, 2).unwrap(), 2);
    assert_eq!(step_release(2, 0, &traffics, 2).unwrap(), 1);
    assert_eq!(step_release(1, 0, &traffics, 2).unwrap(), 0);
}

struct Fixed(ActionVector);

impl SchedulingPolicy for Fixed {
    fn name(&self) -> &str {
        "fixed"
    }

    fn act(&mut self, _state: &SystemState, _rng: &mut RngStream) -> aoii_sched::Result<ActionVector> {
        Ok(self.0.clone())
    }
}

#[test]
fn idle_accuracy_tends_to_stationary_zero_mass() {
    let mut cfg = small_config(1, &[1], 1);
    cfg.monitors[0] = ProcessModel::new(10, 0.6, 1.0);
    let m = monte_carlo_eval(&mut Fixed(ActionVector(vec![0])), &cfg, 20, 20_000, 5).unwrap();
    // q / (1 + q - p) = 0.1 for p = 0.6, |X| = 10
    assert!((m.accuracy.mean - 0.1).abs() < 4.0 * m.accuracy.se, "{:?}", m.accuracy);
}

#[test]
fn always_transmit_accuracy_tends_to_p() {
    let mut cfg = small_config(1, &[1], 1);
    cfg.monitors[0] = ProcessModel::new(10, 0.6, 1.0);
    let m = monte_carlo_eval(&mut Fixed(ActionVector(vec![1])), &cfg, 20, 20_000, 6).unwrap();
    assert!((m.accuracy.mean - 0.6).abs() < 4.0 * m.accuracy.se, "{:?}", m.accuracy);
}

#[test]
fn constant_gain_throughput_is_exact() {
    let cfg = SystemConfig {
        monitors: vec![ProcessModel::new(10, 0.6, 0.0)],
        traffics: vec![TrafficModel::new(1, 1.0)],
        channels: vec![ChannelModel {
            bandwidth: 1.0,
            gains: vec![GainChain::constant(3.0)],
        }],
        snr: 1.0,
        discount: 0.9,
        log_base: 2.0,
    };
    let mut env = Environment::new(cfg, 7).unwrap();
    for _ in 0..100 {
        let s = env.step(&ActionVector(vec![2])).unwrap();
        assert_eq!(s.throughput, 2.0);
        assert_eq!(s.shaped_reward, 2.0);
        assert_eq!(s.raw_reward, 2.0);
    }
}

#[test]
fn busy_channel_rejects_new_transmissions() {
    let cfg = small_config(2, &[3], 1);
    let mut env = Environment::new(cfg, 8).unwrap();
    env.step(&ActionVector(vec![3])).unwrap();
    assert_eq!(env.state().release, vec![2]);
    let before = env.state().clone();
    let err = env.step(&ActionVector(vec![1])).unwrap_err();
    assert!(matches!(err, Error::ConstraintViolation { channel: 0, release: 2, action: 1 }));
    assert_eq!(env.violations(), 1);
    assert_eq!(env.state(), &before);
    env.step(&ActionVector(vec![0])).unwrap();
    env.step(&ActionVector(vec![0])).unwrap();
    assert_eq!(env.state().release, vec![0]);
}

#[test]
fn same_seed_same_trajectory() {
    let cfg = small_config(3, &[1, 2], 2);
    let run = |seed| {
        let mut env = Environment::new(cfg.clone(), seed).unwrap();
        let mut out = Vec::new();
        for t in 0..200usize {
            let a = if env.state().release[0] == 0 { t % 6 } else { 0 };
            let b = if env.state().release[1] == 0 { 4 } else { 0 };
            let a = if a == 4 || (a != 0 && a == b) { 0 } else { a };
            out.push(env.step(&ActionVector(vec![a, b])).unwrap());
        }
        out
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn trajectory_csv_has_one_row_per_slot() {
    let cfg = small_config(2, &[2], 1);
    let mut env = Environment::new(cfg, 9).unwrap();
    let mut buf = Vec::new();
    {
        let mut w = TrajectoryWriter::new(&mut buf, 2, 1).unwrap();
        for t in 0..5 {
            let state = env.state().clone();
            let action = ActionVector(vec![if state.release[0] == 0 { 3 } else { 0 }]);
            let step = env.step(&action).unwrap();
            w.record(t, &state, &action, &step).unwrap();
        }
        w.finish().unwrap();
    }
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x_1,x_2,b_1,a_1,r_hat,r");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("0,0,0,0,3,"));
}

#[test]
fn set_state_validates_shapes() {
    let cfg = small_config(2, &[2], 1);
    let mut env = Environment::new(cfg, 10).unwrap();
    let bad = SystemState {
        aoii: vec![0],
        gains: LevelMatrix::zeros(1, 1),
        release: vec![0],
    };
    assert!(matches!(env.set_state(bad, vec![None]), Err(Error::DimensionMismatch { .. })));
    let too_long = SystemState {
        aoii: vec![0, 0],
        gains: LevelMatrix::zeros(1, 1),
        release: vec![5],
    };
    assert!(env.set_state(too_long, vec![None]).is_err());
}

#[test]
fn unit_durations_make_shaped_and_raw_rewards_equal() {
    let cfg = small_config(3, &[1, 1], 2);
    let mut env = Environment::new(cfg, 13).unwrap();
    let mut rng = RngStream::new(13, StreamId::Policy, 0);
    let mut policy = aoii_sched::baselines::RandomFeasible::new(env.config());
    for _ in 0..2000 {
        let a = policy.act(env.state(), &mut rng).unwrap();
        let s = env.step(&a).unwrap();
        assert_eq!(s.shaped_reward, s.raw_reward);
    }
}
