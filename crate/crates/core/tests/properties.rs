use std::sync::OnceLock;

use proptest::prelude::*;

use stepup_core::analytic::{self, FormulaMode};
use stepup_core::engine::EngineConfig;
use stepup_core::metrics::{self, MeasuredOperatingPoint};
use stepup_core::model::{self, ConverterDesign, DeviceParasitics};
use stepup_core::netlist::{self, ElementKind};

mod common {
    include!("common/strategies.rs");
}

fn design() -> impl Strategy<Value = ConverterDesign> {
    (5.0..100.0f64, 0.5..4.0f64, 0.52..0.9f64, 50.0..5e3f64).prop_map(|(vin, n_ratio, duty, rload)| ConverterDesign {
        vin,
        n_ratio,
        duty,
        rload,
        ..model::preset_simulation()
    })
}

fn preset_op() -> &'static MeasuredOperatingPoint {
    static OP: OnceLock<MeasuredOperatingPoint> = OnceLock::new();
    OP.get_or_init(|| {
        let (steady, probes) = metrics::simulate_design(&model::preset_simulation(), &EngineConfig::default()).unwrap();
        metrics::extract_operating_point(&steady, &probes).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_inverts_emit(net in common::netlist_strategy()) {
        let text = netlist::emit(&net);
        let back = netlist::parse(&text).unwrap();
        prop_assert_eq!(netlist::emit(&back), text);
        prop_assert_eq!(back, net);
    }

    #[test]
    fn closed_form_chain_is_self_consistent(d in design()) {
        let r = analytic::analyze(&d, FormulaMode::Consistent).unwrap();
        let v = d.vin / (1.0 - d.duty);
        prop_assert!((r.gain - 2.0 * (d.n_ratio + 3.0) / (1.0 - d.duty)).abs() < 1e-9 * r.gain);
        prop_assert!(r.gain > analytic::gain_floor(d.n_ratio));
        prop_assert!((r.vout - d.vin * r.gain).abs() < 1e-9 * r.vout);
        prop_assert!((r.vsw - v).abs() < 1e-9 * v);
        prop_assert!((r.vd - 2.0 * v).abs() < 1e-9 * v);
        prop_assert!(r.vc.windows(2).all(|w| w[1] > w[0]));
        let audit = analytic::audit_consistency(&d).unwrap();
        prop_assert!(audit.consistent.imbalance < 1e-9);
        prop_assert!(audit.strict_paper.imbalance > 0.0);
    }

    #[test]
    fn builtin_ladder_sums_to_output(d in design()) {
        let vc = netlist::builtin_capacitor_voltages(&d);
        let v = d.vin / (1.0 - d.duty);
        let vout = netlist::builtin_output_voltage(&d);
        prop_assert!((vout - 2.0 * (d.n_ratio + 1.0) * v).abs() < 1e-9 * vout);
        prop_assert!((vout - vc[1] - vc[3]).abs() < 1e-9 * vout);
        let (net, _) = netlist::builtin_proposed_converter(&d).unwrap();
        prop_assert_eq!(netlist::parse(&netlist::emit(&net)).unwrap(), net);
    }

    #[test]
    fn stats_of_a_periodic_trace_ignore_window_phase(
        k in 8usize..200,
        shift in 0usize..200,
        amps in proptest::collection::vec(-10.0..10.0f64, 3),
    ) {
        let n = 4 * k;
        let f = |t: f64| {
            let x = std::f64::consts::TAU * t;
            amps[0] + amps[1] * x.sin() + amps[2] * (2.0 * x).cos()
        };
        let window = |s: usize| {
            let t: Vec<f64> = (0..=n).map(|i| (i + s) as f64 / n as f64).collect();
            let v: Vec<f64> = t.iter().map(|&t| f(t)).collect();
            metrics::stats(&t, &v).unwrap()
        };
        let (a, b) = (window(0), window(shift % n));
        prop_assert!((a.avg - amps[0]).abs() < 1e-9 * (1.0 + amps[0].abs()));
        prop_assert!((a.avg - b.avg).abs() < 1e-9 * (1.0 + a.avg.abs()));
        prop_assert!((a.rms - b.rms).abs() < 1e-9 * (1.0 + a.rms));
    }

    #[test]
    fn stats_scale_linearly(
        k in -5.0..5.0f64,
        vals in proptest::collection::vec(-100.0..100.0f64, 2..50),
    ) {
        let t: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
        let scaled: Vec<f64> = vals.iter().map(|v| k * v).collect();
        let (a, b) = (metrics::stats(&t, &vals).unwrap(), metrics::stats(&t, &scaled).unwrap());
        prop_assert!((b.avg - k * a.avg).abs() < 1e-9 * (1.0 + b.avg.abs()));
        prop_assert!((b.rms - k.abs() * a.rms).abs() < 1e-9 * (1.0 + b.rms));
        prop_assert!((b.pkpk - k.abs() * a.pkpk).abs() < 1e-9 * (1.0 + b.pkpk));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conduction_losses_are_linear_in_each_parasitic(
        rds_on in 0.0..0.1f64,
        vf in 0.0..2.0f64,
        esr in 0.0..0.1f64,
        r_winding in 0.0..0.1f64,
        scale in 0.1..10.0f64,
    ) {
        let op = preset_op();
        let par = DeviceParasitics { rds_on, vf, esr, r_winding };
        let l = metrics::conduction_losses(op, &par);
        let only = |p: DeviceParasitics| metrics::conduction_losses(op, &p);
        let z = DeviceParasitics::zero();
        let parts = only(DeviceParasitics { rds_on, ..z }).p_total
            + only(DeviceParasitics { vf, ..z }).p_total
            + only(DeviceParasitics { esr, ..z }).p_total
            + only(DeviceParasitics { r_winding, ..z }).p_total;
        prop_assert!((l.p_total - parts).abs() < 1e-9 * (1.0 + l.p_total));
        let s = metrics::conduction_losses(op, &DeviceParasitics {
            rds_on: scale * rds_on,
            vf: scale * vf,
            esr: scale * esr,
            r_winding: scale * r_winding,
        });
        prop_assert!((s.p_total - scale * l.p_total).abs() < 1e-9 * (1.0 + s.p_total));
        prop_assert!(s.efficiency <= l.efficiency || scale <= 1.0);
        prop_assert!(l.p_switch >= 0.0 && l.p_diode >= 0.0 && l.p_capacitor >= 0.0 && l.p_inductor >= 0.0);
    }
}

#[test]
fn builtin_census() {
    let (net, probes) = netlist::builtin_with_probes(&model::preset_simulation()).unwrap();
    assert_eq!(net.count(ElementKind::S), 2);
    assert_eq!(net.count(ElementKind::D), 4);
    assert_eq!(net.count(ElementKind::C), 4);
    assert_eq!(net.count(ElementKind::X), 2);
    assert_eq!(net.count(ElementKind::V), 1);
    let flat = netlist::expand_coupled(&net).unwrap();
    for name in probes.magnetizing.iter().chain(&probes.leakage).chain(&probes.transformers) {
        assert!(flat.element(name).is_some(), "{name} missing after expansion");
    }
    assert_eq!(flat.count(ElementKind::X), 0);
    assert_eq!(flat.count(ElementKind::T), 2);
}

#[test]
fn ideal_capacitor_ladder_at_preset() {
    let d = model::preset_simulation();
    let vc = netlist::builtin_capacitor_voltages(&d);
    let v = d.vin / (1.0 - d.duty);
    for (got, want) in vc.iter().zip([v, 2.0 * v, 1.5 * v, 3.0 * v]) {
        assert!((got - want).abs() < 1e-9 * want);
    }
}

#[test]
fn mode_sequence_of_overlapping_gates() {
    // two gates at D = 0.7, half a period apart: off-times 0.3, overlaps 0.2
    let n = 400;
    let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let g = |phase: f64| -> Vec<f64> {
        t.iter().map(|&t| if (t - phase).rem_euclid(1.0) < 0.7 { 1.0 } else { 0.0 }).collect()
    };
    let w = stepup_core::engine::WaveformSet {
        time: t.clone(),
        names: vec!["gate(a)".into(), "gate(b)".into()],
        data: vec![g(0.0), g(0.5)],
        breakpoints: vec![],
        step: 1.0 / n as f64,
        first_period: 0,
    };
    let seq = metrics::mode_sequence(&w, ["a", "b"]).unwrap();
    let mut modes: Vec<u8> = seq.iter().map(|m| m.mode.number()).collect();
    let start = modes.iter().position(|&m| m == 2).unwrap();
    modes.rotate_left(start);
    assert_eq!(modes, [2, 1, 3, 1]);
    for m in &seq {
        let want = if m.mode.number() == 1 { 0.2 } else { 0.3 };
        assert!((m.fraction - want).abs() <= 1.0 / n as f64, "{seq:?}");
    }
    let total: f64 = seq.iter().map(|m| m.fraction).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
