// Generators for syntactically valid netlists.

use proptest::prelude::*;
use stepup_core::netlist::{Element, ElementSpec, GateSpec, Netlist, PwmSpec};

fn node() -> impl Strategy<Value = String> {
    prop_oneof![Just("0".to_string()), "[a-z][a-z0-9_]{0,5}"]
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-12..1e-3f64, 1e-3..1e6f64]
}

fn opt_positive() -> impl Strategy<Value = Option<f64>> {
    proptest::option::of(positive())
}

fn gate_id() -> impl Strategy<Value = String> {
    prop_oneof![Just("g1".to_string()), Just("g2".to_string()), "[a-z]{1,4}"]
}

fn spec() -> impl Strategy<Value = (usize, ElementSpec)> {
    prop_oneof![
        (-1e4..1e4f64).prop_map(|volts| (2, ElementSpec::Voltage { volts })),
        positive().prop_map(|ohms| (2, ElementSpec::Resistor { ohms })),
        (positive(), proptest::option::of(-1e3..1e3f64)).prop_map(|(henries, ic)| (2, ElementSpec::Inductor { henries, ic })),
        (positive(), proptest::option::of(-1e3..1e3f64), opt_positive())
            .prop_map(|(farads, ic, esr)| (2, ElementSpec::Capacitor { farads, ic, esr })),
        (gate_id(), opt_positive(), opt_positive()).prop_map(|(gate, ron, roff)| (2, ElementSpec::Switch { gate, ron, roff })),
        (proptest::option::of(0.0..2.0f64), opt_positive(), opt_positive())
            .prop_map(|(vf, ron, roff)| (2, ElementSpec::Diode { vf, ron, roff })),
        (0.1..10.0f64, positive(), positive()).prop_map(|(n, lm, lk)| (4, ElementSpec::Coupled { n, lm, lk })),
    ]
}

fn element() -> impl Strategy<Value = (ElementSpec, Vec<String>)> {
    spec().prop_flat_map(|(arity, spec)| (Just(spec), proptest::collection::vec(node(), arity)))
}

fn pwm() -> impl Strategy<Value = PwmSpec> {
    (
        1.0..1e6f64,
        proptest::collection::btree_set("[a-z][a-z0-9]{0,3}", 0..3),
        proptest::collection::vec((0.01..0.99f64, 0.0..359.9f64), 3),
    )
        .prop_map(|(fsw, ids, timing)| PwmSpec {
            gates: ids
                .into_iter()
                .zip(timing)
                .map(|(id, (duty, phase))| GateSpec { id, fsw, duty, phase })
                .collect(),
        })
}

/// Netlists that `parse` accepts: unique names, a ground node, valid PWM.
pub fn netlist_strategy() -> impl Strategy<Value = Netlist> {
    (proptest::collection::vec(element(), 1..12), pwm()).prop_map(|(elems, pwm)| {
        let mut elements: Vec<Element> = elems
            .into_iter()
            .enumerate()
            .map(|(i, (spec, nodes))| Element {
                name: format!("e{i}"),
                nodes,
                spec,
            })
            .collect();
        elements[0].nodes[1] = "0".to_string();
        Netlist { elements, pwm }
    })
}
