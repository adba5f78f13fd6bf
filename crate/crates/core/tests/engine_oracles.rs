//! Engine checks against circuits with closed-form answers.

use stepup_core::engine::{assemble, run_transient, EngineConfig, EngineError};
use stepup_core::netlist::{expand_coupled, parse};

fn run(text: &str, cfg: EngineConfig) -> (stepup_core::engine::WaveformSet, stepup_core::engine::SteadyResult) {
    let flat = expand_coupled(&parse(text).unwrap()).unwrap();
    run_transient(&flat, &cfg).unwrap()
}

#[test]
fn rc_step_matches_exponential() {
    let tau = 1e-3;
    let cfg = EngineConfig {
        steps_per_period: 2000,
        max_periods: 5,
        ss_tolerance: 0.0,
        record_all: true,
        period: Some(tau),
    };
    let (w, _) = run("V v in 0 1\nR r in out 1k\nC c out 0 1u ic=0", cfg);
    let v = w.voltage("out").unwrap();
    let mut worst: f64 = 0.0;
    for (t, v) in w.time.iter().zip(&v) {
        if *t < 0.05 * tau {
            continue; // first backward-Euler step dominates the very start
        }
        let want = 1.0 - (-t / tau).exp();
        worst = worst.max((v - want).abs() / want);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn ideal_boost_reaches_volt_second_ratio() {
    let text = "V v in 0 10\nL l in sw 100u\nS s sw 0 gate=g\nD d sw out\nC c out 0 10u\nR r out 0 50\nPWM g f=100k d=0.6 phase=0";
    let (_, steady) = run(
        text,
        EngineConfig {
            ss_tolerance: 1e-7,
            ..EngineConfig::default()
        },
    );
    assert!(steady.converged, "{steady:?}");
    let w = &steady.final_period;
    let v = w.voltage("out").unwrap();
    let avg = v.iter().sum::<f64>() / v.len() as f64;
    assert!((avg / 10.0 - 2.5).abs() / 2.5 < 0.01, "ratio {}", avg / 10.0);
}

#[test]
fn transformer_reflects_load() {
    let n = 2.0;
    let r = 100.0;
    let text = format!("V v in 0 10\nX x in 0 out 0 n={n} lm=1 lk=1n\nR rl out 0 {r}");
    let (w, _) = run(
        &text,
        EngineConfig {
            steps_per_period: 100,
            max_periods: 3,
            ss_tolerance: 0.0,
            record_all: false,
            period: Some(1e-6),
        },
    );
    // source current minus the (tiny) magnetizing ramp
    let i = *w.current("v").unwrap().last().unwrap() - *w.current("x.lm").unwrap().last().unwrap();
    let want = 10.0 * n * n / r;
    assert!((i - want).abs() / want < 1e-3, "{i} vs {want}");
}

#[test]
fn half_wave_rectifier_blocks_to_leakage() {
    // complementary switches make a ±10 V square wave at node a
    let text = "V vp p 0 10\nV vn 0 n 10\nS sp p a gate=hi\nS sn a n gate=lo\nD d a out\nR r out 0 1k\n\
                PWM hi f=1k d=0.5 phase=0\nPWM lo f=1k d=0.5 phase=180";
    let (_, steady) = run(
        text,
        EngineConfig {
            steps_per_period: 200,
            max_periods: 10,
            ss_tolerance: 1e-9,
            ..EngineConfig::default()
        },
    );
    let w = &steady.final_period;
    let out = w.voltage("out").unwrap();
    let a = w.voltage("a").unwrap();
    for (va, vo) in a.iter().zip(&out) {
        if *va < -5.0 {
            // reverse biased: only off-state leakage reaches the load
            assert!(vo.abs() < 20.0 * 1e3 / 1e6, "{vo}");
        } else if *va > 5.0 {
            assert!((vo - va).abs() < 0.01, "{vo} vs {va}");
        }
    }
}

#[test]
fn floating_and_loops_are_diagnosed() {
    let floating = expand_coupled(&parse("V v in 0 1\nR r in 0 1\nR f a b 1").unwrap()).unwrap();
    assert!(matches!(assemble(&floating), Err(EngineError::Floating(n)) if n == vec!["a", "b"]));
    let vloop = expand_coupled(&parse("V v1 in 0 1\nV v2 in 0 2").unwrap()).unwrap();
    assert!(matches!(assemble(&vloop), Err(EngineError::VoltageLoop(_))));
    let cloop = expand_coupled(&parse("V v in 0 1\nR r in a 1\nC c1 a 0 1u\nC c2 a b 1u\nC c3 b 0 1u").unwrap()).unwrap();
    assert!(matches!(assemble(&cloop), Err(EngineError::CapacitorLoop(_))));
    let with_esr = expand_coupled(&parse("V v in 0 1\nR r in a 1\nC c1 a 0 1u\nC c2 a b 1u esr=1m\nC c3 b 0 1u\nR rb b 0 1k").unwrap()).unwrap();
    assert!(assemble(&with_esr).is_ok());
}
