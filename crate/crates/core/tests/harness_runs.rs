//! Episode runner, training loop and metrics file behavior.

use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specseek::agent::AgentConfig;
use specseek::env::{EnvConfig, Scheme};
use specseek::harness::{
    self, evaluate, optimal_episode_length, run_episode, run_policy, train, write_metrics_csv, MetricsRow, Policy,
    METRICS_HEADER,
};
use specseek::nn::{self, NetworkParams, NetworkSpec};

fn small_agent() -> AgentConfig {
    AgentConfig { warmup: 100, replay_capacity: 5000, ..Default::default() }
}

#[test]
fn random_policy_length_matches_geometric_law() {
    let cfg = EnvConfig { max_steps: 20, ..Default::default() };
    let n = 4000;
    let s = run_policy(&cfg, Policy::Random, n, 11).unwrap();
    // P(L > k) = (6/7)^k up to the cap, so E[L] = Σ_{k<M} (6/7)^k
    let q: f64 = 6.0 / 7.0;
    let expect = (1.0 - q.powi(20)) / (1.0 - q);
    let second: f64 = (0..20).map(|k| (2 * k + 1) as f64 * q.powi(k)).sum();
    let sd = (second - expect * expect).sqrt() / (n as f64).sqrt();
    assert!((s.mean_length - expect).abs() < 4.0 * sd, "{} vs {expect}", s.mean_length);
    assert!(s.mean_length < cfg.max_steps as f64);
    let defaults = run_policy(&EnvConfig::default(), Policy::Random, 1000, 1).unwrap();
    assert!(defaults.mean_length < 100.0);
    assert!(defaults.mean_reward.is_finite());
}

#[test]
fn zero_head_evaluation() {
    let cfg = EnvConfig { max_steps: 40, ..Default::default() };
    let params: NetworkParams<f32> = nn::init_network(&NetworkSpec::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let s = evaluate(&params, &cfg, 50, 3).unwrap();
    assert_eq!(s.mean_reward, 0.0);
    assert_eq!(s.finish_accuracy, 0.0);
    assert_eq!(s.mean_length, 40.0);
    assert_eq!(s.detect_precision, 0.0);
    let one = evaluate(&params, &cfg, 1, 3).unwrap();
    assert_eq!(one.std_reward, 0.0);
}

#[test]
fn evaluation_is_reproducible() {
    let cfg = EnvConfig { max_steps: 30, ..Default::default() };
    let params: NetworkParams<f32> = nn::init_random(&NetworkSpec::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let a = evaluate(&params, &cfg, 64, 7).unwrap();
    let b = evaluate(&params, &cfg, 64, 7).unwrap();
    assert_eq!(a, b);
    let serial: Vec<_> = (0..64u64)
        .map(|i| run_episode(&cfg, Policy::Greedy(&params), &mut ChaCha8Rng::seed_from_u64(7 + i), None).unwrap())
        .collect();
    assert_eq!(harness::EvalSummary::from_stats(&serial), a);
}

#[test]
fn zero_steps_writes_header_and_init() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&EnvConfig::default(), &small_agent(), &NetworkSpec::default(), 0, 5, dir.path()).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(fs::read_to_string(&out.metrics).unwrap(), format!("{METRICS_HEADER}\n"));
    let (params, adam) = nn::load_checkpoint(&out.checkpoint).unwrap();
    let init: NetworkParams<f32> = nn::init_network(&NetworkSpec::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(params.values, init.values);
    assert_eq!(adam.unwrap().t, 0);
}

#[test]
fn training_is_deterministic_and_sane() {
    let cfg = EnvConfig { max_steps: 30, ..Default::default() };
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = train(&cfg, &small_agent(), &NetworkSpec::default(), 1500, 9, a_dir.path()).unwrap();
    let b = train(&cfg, &small_agent(), &NetworkSpec::default(), 1500, 9, b_dir.path()).unwrap();
    assert_eq!(fs::read(&a.metrics).unwrap(), fs::read(&b.metrics).unwrap());
    assert_eq!(fs::read(&a.checkpoint).unwrap(), fs::read(&b.checkpoint).unwrap());
    assert!(!a.rows.is_empty());
    let text = fs::read_to_string(&a.metrics).unwrap();
    assert_eq!(text.lines().count(), a.rows.len() + 1);
    for r in &a.rows {
        assert!(r.mean_max_q >= r.mean_min_q);
        assert!(r.steps <= cfg.max_steps);
        assert!(r.detect_tp + r.detect_fp <= r.steps);
        assert_eq!(r.epsilon, 0.1);
    }
    assert!(a.rows.iter().any(|r| r.mean_loss.is_finite()));
    let total: usize = a.rows.iter().map(|r| r.steps).sum();
    assert!(total <= 1500);
    let c_dir = tempfile::tempdir().unwrap();
    let c = train(&cfg, &small_agent(), &NetworkSpec::default(), 1500, 10, c_dir.path()).unwrap();
    assert_ne!(fs::read(&a.metrics).unwrap(), fs::read(&c.metrics).unwrap());
}

#[test]
fn unwritable_out_dir_fails_first() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let target = blocker.join("sub");
    let r = train(&EnvConfig::default(), &small_agent(), &NetworkSpec::default(), 10, 1, &target);
    match r {
        Err(harness::HarnessError::Io { path, .. }) => assert_eq!(path, target),
        other => panic!("{other:?}"),
    }
}

#[test]
fn mismatched_network_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let r = train(&EnvConfig::default(), &small_agent(), &NetworkSpec::default_for(128), 10, 1, dir.path());
    assert!(matches!(r, Err(harness::HarnessError::Config(_))));
    assert!(!dir.path().join(harness::METRICS_FILE).exists());
}

fn parse_row(line: &str) -> Vec<f64> {
    line.split(',').map(|v| v.parse::<f64>().unwrap()).collect()
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics_csv(&[], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), format!("{METRICS_HEADER}\n"));
    let rows = vec![
        MetricsRow {
            episode: 1,
            steps: 12,
            total_reward: 3.0,
            detect_tp: 1,
            detect_fp: 2,
            finish_correct: true,
            mean_loss: f64::NAN,
            mean_max_q: 0.123456789,
            mean_min_q: -1234567.0,
            epsilon: 0.1,
        },
        MetricsRow {
            episode: 2,
            steps: 60,
            total_reward: -0.25,
            detect_tp: 0,
            detect_fp: 0,
            finish_correct: false,
            mean_loss: 1.5e-7,
            mean_max_q: 2.0,
            mean_min_q: 1.0,
            epsilon: 0.1,
        },
    ];
    write_metrics_csv(&rows[..1], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
    write_metrics_csv(&rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.ends_with('\n') && !text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    for (line, r) in lines.zip(&rows) {
        let v = parse_row(line);
        let want = [
            r.episode as f64,
            r.steps as f64,
            r.total_reward,
            r.detect_tp as f64,
            r.detect_fp as f64,
            r.finish_correct as u8 as f64,
            r.mean_loss,
            r.mean_max_q,
            r.mean_min_q,
            r.epsilon,
        ];
        for (got, want) in v.iter().zip(want) {
            if want.is_nan() {
                assert!(got.is_nan());
            } else {
                assert!((got - want).abs() <= 5e-6 * want.abs(), "{got} vs {want}");
            }
        }
    }
    let missing = dir.path().join("nope").join("m.csv");
    let err = write_metrics_csv(&rows, &missing).unwrap_err();
    assert!(err.to_string().contains("nope"));
}

#[test]
fn scripted_detects_fifteen_db_tones() {
    let cfg = EnvConfig { fixed_signals: Some(vec![152.3e6]), ..Default::default() };
    let s = run_policy(&cfg, Policy::Scripted, 500, 4).unwrap();
    assert!(s.finish_accuracy > 0.99, "{s:?}");
    assert!((s.mean_length - 2.0).abs() < 0.05);
}

#[test]
fn scripted_rarely_fires_on_empty_band() {
    // tone pinned to the band top, so the first windows hold only noise
    let cfg = EnvConfig { fixed_signals: Some(vec![200e6]), max_steps: 2, ..Default::default() };
    let s = run_policy(&cfg, Policy::Scripted, 2000, 5).unwrap();
    assert!(s.detect_precision == 0.0);
    assert_eq!(s.mean_length, 2.0);
    let fp_rate = {
        let stats: Vec<_> = (0..2000u64)
            .map(|i| run_episode(&cfg, Policy::Scripted, &mut ChaCha8Rng::seed_from_u64(100 + i), None).unwrap())
            .collect();
        stats.iter().filter(|s| s.detect_fp > 0).count() as f64 / 2000.0
    };
    assert!(fp_rate < 0.05, "{fp_rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn scripted_never_beats_optimal(mhz in 100.0..=200.0f64, bw_exp in 1u32..5) {
        let f = mhz * 1e6;
        let cfg = EnvConfig {
            bw_min: 20e6 / f64::from(1u32 << bw_exp),
            snr_db: 200.0,
            fixed_signals: Some(vec![f]),
            scheme: Scheme::A,
            ..Default::default()
        };
        let opt = optimal_episode_length(&cfg, &[f]).unwrap().unwrap();
        let s = run_episode(&cfg, Policy::Scripted, &mut ChaCha8Rng::seed_from_u64(1), None).unwrap();
        prop_assert!(s.finish_correct);
        prop_assert!(s.length >= opt);
        if f <= 160e6 {
            prop_assert_eq!(s.length, opt);
        }
    }
}
