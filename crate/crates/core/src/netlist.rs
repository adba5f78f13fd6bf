//! Line-oriented netlist format, coupled-inductor expansion and the
//! built-in description of the two-phase converter.
//!
//! ```text
//! V <name> <n+> <n-> <volts>
//! R <name> <n+> <n-> <ohms>
//! L <name> <n+> <n-> <henries> [ic=<amps>]
//! C <name> <n+> <n-> <farads> [ic=<volts>] [esr=<ohms>]
//! S <name> <n+> <n-> gate=<id> [ron=<ohms>] [roff=<ohms>]
//! D <name> <anode> <cathode> [vf=<volts>] [ron=<ohms>] [roff=<ohms>]
//! X <name> <p+> <p-> <s+> <s-> n=<ratio> lm=<henries> lk=<henries>
//! PWM <gate-id> f=<hertz> d=<duty> phase=<degrees>
//! # comment
//! ```
//!
//! Numbers accept the suffixes `p n u m k meg` (case-insensitive). Node
//! `0` is ground.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use crate::model::ConverterDesign;

pub const GROUND: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    V,
    R,
    L,
    C,
    S,
    D,
    X,
    /// Ideal transformer; only produced by [`expand_coupled`].
    T,
}

impl ElementKind {
    pub fn letter(&self) -> char {
        match self {
            ElementKind::V => 'V',
            ElementKind::R => 'R',
            ElementKind::L => 'L',
            ElementKind::C => 'C',
            ElementKind::S => 'S',
            ElementKind::D => 'D',
            ElementKind::X => 'X',
            ElementKind::T => 'T',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementSpec {
    Voltage { volts: f64 },
    Resistor { ohms: f64 },
    Inductor { henries: f64, ic: Option<f64> },
    Capacitor { farads: f64, ic: Option<f64>, esr: Option<f64> },
    Switch { gate: String, ron: Option<f64>, roff: Option<f64> },
    Diode { vf: Option<f64>, ron: Option<f64>, roff: Option<f64> },
    Coupled { n: f64, lm: f64, lk: f64 },
    Transformer { n: f64 },
}

impl ElementSpec {
    pub fn kind(&self) -> ElementKind {
        match self {
            ElementSpec::Voltage { .. } => ElementKind::V,
            ElementSpec::Resistor { .. } => ElementKind::R,
            ElementSpec::Inductor { .. } => ElementKind::L,
            ElementSpec::Capacitor { .. } => ElementKind::C,
            ElementSpec::Switch { .. } => ElementKind::S,
            ElementSpec::Diode { .. } => ElementKind::D,
            ElementSpec::Coupled { .. } => ElementKind::X,
            ElementSpec::Transformer { .. } => ElementKind::T,
        }
    }
}

/// One circuit element. `nodes` has four entries for `X` and `T`
/// (`p+ p- s+ s-`), two otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub nodes: Vec<String>,
    pub spec: ElementSpec,
}

impl Element {
    pub fn new(name: impl Into<String>, nodes: &[&str], spec: ElementSpec) -> Self {
        Self {
            name: name.into(),
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            spec,
        }
    }

    pub fn kind(&self) -> ElementKind {
        self.spec.kind()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSpec {
    pub id: String,
    pub fsw: f64,
    pub duty: f64,
    /// Degrees in [0, 360).
    pub phase: f64,
}

/// Gate timing for every switch-control id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PwmSpec {
    pub gates: Vec<GateSpec>,
}

impl PwmSpec {
    pub fn gate(&self, id: &str) -> Option<&GateSpec> {
        self.gates.iter().find(|g| g.id == id)
    }

    pub fn fsw(&self) -> Option<f64> {
        self.gates.first().map(|g| g.fsw)
    }

    pub fn validate(&self) -> Result<(), NetlistError> {
        let mut seen = HashSet::new();
        for g in &self.gates {
            if !seen.insert(g.id.as_str()) {
                return Err(NetlistError::Pwm(format!("gate '{}' defined twice", g.id)));
            }
            if !(g.fsw > 0.0) {
                return Err(NetlistError::Pwm(format!("gate '{}': frequency must be positive", g.id)));
            }
            if !(g.duty > 0.0 && g.duty < 1.0) {
                return Err(NetlistError::Pwm(format!("gate '{}': duty must lie in (0, 1)", g.id)));
            }
            if !(0.0..360.0).contains(&g.phase) {
                return Err(NetlistError::Pwm(format!("gate '{}': phase must lie in [0, 360)", g.id)));
            }
        }
        if let Some(f) = self.fsw() {
            if self.gates.iter().any(|g| g.fsw != f) {
                return Err(NetlistError::Pwm("all gates must share one switching frequency".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub elements: Vec<Element>,
    pub pwm: PwmSpec,
}

/// A netlist with every coupled inductor replaced by its magnetizing,
/// leakage and ideal-transformer parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatNetlist {
    pub elements: Vec<Element>,
    pub pwm: PwmSpec,
    /// Generated element name → name of the coupled inductor it came from.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("lexical error: {0}")]
    Lexical(String),
    #[error("unknown element kind '{0}'")]
    UnknownKind(String),
    #[error("duplicate element name '{0}'")]
    DuplicateName(String),
    #[error("'{kind}' expects {expected} nodes, found {found}")]
    Arity { kind: char, expected: usize, found: usize },
    #[error("missing required parameter '{0}'")]
    MissingParam(&'static str),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("invalid value for '{0}'")]
    InvalidValue(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} at line {line}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetlistError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no element references ground node '0'")]
    NoGround,
    #[error("duplicate element name '{0}'")]
    DuplicateName(String),
    #[error("coupled inductor '{name}': {field} must be positive")]
    BadCoupled { name: String, field: &'static str },
    #[error("pwm: {0}")]
    Pwm(String),
    #[error("built-in converter needs duty > 0.5 (got {0}); the switches must overlap")]
    UnsupportedDuty(f64),
    #[error(transparent)]
    Design(#[from] crate::model::ValidationError),
}

/// Parses a number with an optional engineering suffix.
pub fn parse_value(token: &str) -> Option<f64> {
    let lower = token.to_ascii_lowercase();
    let (body, scale) = if let Some(b) = lower.strip_suffix("meg") {
        (b, 1e6)
    } else {
        match lower.chars().last()? {
            'p' => (&lower[..lower.len() - 1], 1e-12),
            'n' => (&lower[..lower.len() - 1], 1e-9),
            'u' => (&lower[..lower.len() - 1], 1e-6),
            'm' => (&lower[..lower.len() - 1], 1e-3),
            'k' => (&lower[..lower.len() - 1], 1e3),
            _ => (lower.as_str(), 1.0),
        }
    };
    let v: f64 = body.parse().ok()?;
    let v = v * scale;
    v.is_finite().then_some(v)
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct LineParser<'a> {
    line: usize,
    kind: char,
    positional: Vec<&'a str>,
    named: BTreeMap<String, &'a str>,
}

impl<'a> LineParser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, kind }
    }

    fn nodes(&self, expected: usize, extra_values: usize) -> Result<Vec<String>, ParseError> {
        // positional[0] is the name; nodes follow, then `extra_values` bare values
        let found = self.positional.len().saturating_sub(1 + extra_values);
        if self.positional.len() != 1 + expected + extra_values {
            return Err(self.err(ParseErrorKind::Arity {
                kind: self.kind,
                expected,
                found,
            }));
        }
        let nodes: Vec<String> = self.positional[1..1 + expected].iter().map(|s| s.to_string()).collect();
        for n in &nodes {
            if !is_identifier(n) {
                return Err(self.err(ParseErrorKind::Lexical(format!("bad node identifier '{n}'"))));
            }
        }
        Ok(nodes)
    }

    fn value_at(&self, idx: usize, what: &'static str) -> Result<f64, ParseError> {
        let tok = self
            .positional
            .get(idx)
            .ok_or_else(|| self.err(ParseErrorKind::MissingParam(what)))?;
        parse_value(tok).ok_or_else(|| self.err(ParseErrorKind::InvalidValue(what.to_string())))
    }

    fn allow_only(&self, keys: &[&str]) -> Result<(), ParseError> {
        match self.named.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(self.err(ParseErrorKind::UnknownParam(k.clone()))),
            None => Ok(()),
        }
    }

    fn opt(&self, key: &'static str) -> Result<Option<f64>, ParseError> {
        self.named
            .get(key)
            .map(|v| parse_value(v).ok_or_else(|| self.err(ParseErrorKind::InvalidValue(key.to_string()))))
            .transpose()
    }

    fn req(&self, key: &'static str) -> Result<f64, ParseError> {
        self.opt(key)?.ok_or_else(|| self.err(ParseErrorKind::MissingParam(key)))
    }
}

/// Parses netlist text. Order is preserved; blank lines and `#` comments
/// are skipped.
pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
    let mut netlist = Netlist::default();
    let mut names = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let head = tokens.next().expect("non-empty line");
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        for tok in tokens {
            if let Some((k, v)) = tok.split_once('=') {
                if k.is_empty() || v.is_empty() {
                    return Err(ParseError {
                        line: line_no,
                        kind: ParseErrorKind::Lexical(format!("malformed parameter '{tok}'")),
                    }
                    .into());
                }
                if named.insert(k.to_ascii_lowercase(), v).is_some() {
                    return Err(ParseError {
                        line: line_no,
                        kind: ParseErrorKind::Lexical(format!("parameter '{k}' given twice")),
                    }
                    .into());
                }
            } else {
                positional.push(tok);
            }
        }
        let upper = head.to_ascii_uppercase();
        if upper == "PWM" {
            let lp = LineParser {
                line: line_no,
                kind: 'P',
                positional,
                named,
            };
            lp.allow_only(&["f", "d", "phase"])?;
            if lp.positional.len() != 1 || !is_identifier(lp.positional[0]) {
                return Err(lp.err(ParseErrorKind::Lexical("PWM expects one gate id".into())).into());
            }
            netlist.pwm.gates.push(GateSpec {
                id: lp.positional[0].to_string(),
                fsw: lp.req("f")?,
                duty: lp.req("d")?,
                phase: lp.req("phase")?,
            });
            continue;
        }
        let kind = match upper.as_str() {
            "V" | "R" | "L" | "C" | "S" | "D" | "X" => upper.chars().next().unwrap(),
            _ => {
                return Err(ParseError {
                    line: line_no,
                    kind: ParseErrorKind::UnknownKind(head.to_string()),
                }
                .into())
            }
        };
        let lp = LineParser {
            line: line_no,
            kind,
            positional,
            named,
        };
        let name = *lp
            .positional
            .first()
            .ok_or_else(|| lp.err(ParseErrorKind::MissingParam("name")))?;
        if !is_identifier(name) {
            return Err(lp.err(ParseErrorKind::Lexical(format!("bad element name '{name}'"))).into());
        }
        let (nodes, spec) = match kind {
            'V' | 'R' => {
                lp.allow_only(&[])?;
                let nodes = lp.nodes(2, 1)?;
                let value = lp.value_at(3, if kind == 'V' { "volts" } else { "ohms" })?;
                let spec = if kind == 'V' {
                    ElementSpec::Voltage { volts: value }
                } else {
                    ElementSpec::Resistor { ohms: value }
                };
                (nodes, spec)
            }
            'L' => {
                lp.allow_only(&["ic"])?;
                let nodes = lp.nodes(2, 1)?;
                (
                    nodes,
                    ElementSpec::Inductor {
                        henries: lp.value_at(3, "henries")?,
                        ic: lp.opt("ic")?,
                    },
                )
            }
            'C' => {
                lp.allow_only(&["ic", "esr"])?;
                let nodes = lp.nodes(2, 1)?;
                (
                    nodes,
                    ElementSpec::Capacitor {
                        farads: lp.value_at(3, "farads")?,
                        ic: lp.opt("ic")?,
                        esr: lp.opt("esr")?,
                    },
                )
            }
            'S' => {
                lp.allow_only(&["gate", "ron", "roff"])?;
                let nodes = lp.nodes(2, 0)?;
                let gate = lp
                    .named
                    .get("gate")
                    .ok_or_else(|| lp.err(ParseErrorKind::MissingParam("gate")))?;
                if !is_identifier(gate) {
                    return Err(lp.err(ParseErrorKind::InvalidValue("gate".into())).into());
                }
                (
                    nodes,
                    ElementSpec::Switch {
                        gate: gate.to_string(),
                        ron: lp.opt("ron")?,
                        roff: lp.opt("roff")?,
                    },
                )
            }
            'D' => {
                lp.allow_only(&["vf", "ron", "roff"])?;
                let nodes = lp.nodes(2, 0)?;
                (
                    nodes,
                    ElementSpec::Diode {
                        vf: lp.opt("vf")?,
                        ron: lp.opt("ron")?,
                        roff: lp.opt("roff")?,
                    },
                )
            }
            'X' => {
                lp.allow_only(&["n", "lm", "lk"])?;
                let nodes = lp.nodes(4, 0)?;
                (
                    nodes,
                    ElementSpec::Coupled {
                        n: lp.req("n")?,
                        lm: lp.req("lm")?,
                        lk: lp.req("lk")?,
                    },
                )
            }
            _ => unreachable!(),
        };
        if !names.insert(name.to_string()) {
            return Err(lp.err(ParseErrorKind::DuplicateName(name.to_string())).into());
        }
        netlist.elements.push(Element {
            name: name.to_string(),
            nodes,
            spec,
        });
    }
    netlist.validate()?;
    Ok(netlist)
}

impl Netlist {
    pub fn validate(&self) -> Result<(), NetlistError> {
        let mut names = HashSet::new();
        for e in &self.elements {
            if !names.insert(e.name.as_str()) {
                return Err(NetlistError::DuplicateName(e.name.clone()));
            }
        }
        if !self.elements.iter().any(|e| e.nodes.iter().any(|n| n == GROUND)) {
            return Err(NetlistError::NoGround);
        }
        self.pwm.validate()
    }

    pub fn nodes(&self) -> BTreeSet<&str> {
        self.elements.iter().flat_map(|e| e.nodes.iter().map(String::as_str)).collect()
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        self.elements.iter().filter(|e| e.kind() == kind).count()
    }
}

fn push_opt(out: &mut String, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, " {key}={v}");
    }
}

/// Canonical text form; `parse(emit(n))` reproduces `n`.
pub fn emit(netlist: &Netlist) -> String {
    let mut out = String::new();
    for e in &netlist.elements {
        let _ = write!(out, "{} {} {}", e.kind().letter(), e.name, e.nodes.join(" "));
        match &e.spec {
            ElementSpec::Voltage { volts } => {
                let _ = write!(out, " {volts}");
            }
            ElementSpec::Resistor { ohms } => {
                let _ = write!(out, " {ohms}");
            }
            ElementSpec::Inductor { henries, ic } => {
                let _ = write!(out, " {henries}");
                push_opt(&mut out, "ic", *ic);
            }
            ElementSpec::Capacitor { farads, ic, esr } => {
                let _ = write!(out, " {farads}");
                push_opt(&mut out, "ic", *ic);
                push_opt(&mut out, "esr", *esr);
            }
            ElementSpec::Switch { gate, ron, roff } => {
                let _ = write!(out, " gate={gate}");
                push_opt(&mut out, "ron", *ron);
                push_opt(&mut out, "roff", *roff);
            }
            ElementSpec::Diode { vf, ron, roff } => {
                push_opt(&mut out, "vf", *vf);
                push_opt(&mut out, "ron", *ron);
                push_opt(&mut out, "roff", *roff);
            }
            ElementSpec::Coupled { n, lm, lk } => {
                let _ = write!(out, " n={n} lm={lm} lk={lk}");
            }
            ElementSpec::Transformer { n } => {
                let _ = write!(out, " n={n}");
            }
        }
        out.push('\n');
    }
    for g in &netlist.pwm.gates {
        let _ = writeln!(out, "PWM {} f={} d={} phase={}", g.id, g.fsw, g.duty, g.phase);
    }
    out
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit(self))
    }
}

/// Name of the internal node between leakage and magnetizing inductance.
pub fn coupled_mid_node(xname: &str) -> String {
    format!("{xname}.m")
}

pub fn leakage_name(xname: &str) -> String {
    format!("{xname}.lk")
}

pub fn magnetizing_name(xname: &str) -> String {
    format!("{xname}.lm")
}

pub fn transformer_name(xname: &str) -> String {
    format!("{xname}.t")
}

/// Replaces each coupled inductor `X(p+, p-, s+, s-)` by a leakage
/// inductance from `p+` to an internal node, a magnetizing inductance from
/// there to `p-`, and an ideal 1:N transformer across the magnetizing
/// inductance driving `(s+, s-)`.
pub fn expand_coupled(netlist: &Netlist) -> Result<FlatNetlist, NetlistError> {
    let mut elements = Vec::with_capacity(netlist.elements.len() + 2 * netlist.count(ElementKind::X));
    let mut provenance = BTreeMap::new();
    for e in &netlist.elements {
        let ElementSpec::Coupled { n, lm, lk } = e.spec else {
            elements.push(e.clone());
            continue;
        };
        for (field, v) in [("n", n), ("lm", lm), ("lk", lk)] {
            if !(v > 0.0) {
                return Err(NetlistError::BadCoupled {
                    name: e.name.clone(),
                    field,
                });
            }
        }
        let (pp, pm, sp, sm) = (&e.nodes[0], &e.nodes[1], &e.nodes[2], &e.nodes[3]);
        let mid = coupled_mid_node(&e.name);
        let generated = [
            Element {
                name: leakage_name(&e.name),
                nodes: vec![pp.clone(), mid.clone()],
                spec: ElementSpec::Inductor { henries: lk, ic: None },
            },
            Element {
                name: magnetizing_name(&e.name),
                nodes: vec![mid.clone(), pm.clone()],
                spec: ElementSpec::Inductor { henries: lm, ic: None },
            },
            Element {
                name: transformer_name(&e.name),
                nodes: vec![mid, pm.clone(), sp.clone(), sm.clone()],
                spec: ElementSpec::Transformer { n },
            },
        ];
        for g in generated {
            provenance.insert(g.name.clone(), e.name.clone());
            elements.push(g);
        }
    }
    Ok(FlatNetlist {
        elements,
        pwm: netlist.pwm.clone(),
        provenance,
    })
}

impl FlatNetlist {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        self.elements.iter().filter(|e| e.kind() == kind).count()
    }

    pub fn set_inductor_ic(&mut self, name: &str, amps: f64) -> bool {
        for e in &mut self.elements {
            if e.name == name {
                if let ElementSpec::Inductor { ic, .. } = &mut e.spec {
                    *ic = Some(amps);
                    return true;
                }
            }
        }
        false
    }
}

/// Two-terminal measurement point: an element and the nodes it spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub name: String,
    pub a: String,
    pub b: String,
}

impl Probe {
    fn of(e: &Element) -> Self {
        Self {
            name: e.name.clone(),
            a: e.nodes[0].clone(),
            b: e.nodes[1].clone(),
        }
    }
}

/// Where each measured quantity of the built-in converter lives in its
/// flattened netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterProbes {
    pub source: Probe,
    pub load: Probe,
    pub switches: [Probe; 2],
    /// Anode to cathode.
    pub diodes: [Probe; 4],
    pub caps: [Probe; 4],
    pub magnetizing: [String; 2],
    pub leakage: [String; 2],
    pub transformers: [String; 2],
    pub gates: [String; 2],
    pub n_ratio: f64,
}

pub const GATE_1: &str = "g1";
pub const GATE_2: &str = "g2";

/// The proposed converter as a netlist plus its gate timing.
pub fn builtin_proposed_converter(design: &ConverterDesign) -> Result<(Netlist, PwmSpec), NetlistError> {
    let (n, _) = builtin_with_probes(design)?;
    let pwm = n.pwm.clone();
    Ok((n, pwm))
}

/// Built-in converter and the probe map used by the metrics module.
///
/// Each phase is a coupled inductor whose primary runs from the input to a
/// switch node, with the switch to ground. The secondaries and the diode-
/// capacitor multiplier are wired by [`multiplier`]. Capacitors start at
/// their closed-form voltages.
pub fn builtin_with_probes(design: &ConverterDesign) -> Result<(Netlist, ConverterProbes), NetlistError> {
    crate::model::validate(design)?;
    if !design.interleave_valid() {
        return Err(NetlistError::UnsupportedDuty(design.duty));
    }
    let mut el = vec![
        Element::new("vin", &["in", GROUND], ElementSpec::Voltage { volts: design.vin }),
        Element::new(
            "x1",
            &["in", "sw1", "sm", "q"],
            ElementSpec::Coupled { n: design.n_ratio, lm: design.lm, lk: design.lk },
        ),
        Element::new(
            "x2",
            &["in", "sw2", "sm", "se"],
            ElementSpec::Coupled { n: design.n_ratio, lm: design.lm, lk: design.lk },
        ),
        Element::new("s1", &["sw1", GROUND], ElementSpec::Switch { gate: GATE_1.into(), ron: None, roff: None }),
        Element::new("s2", &["sw2", GROUND], ElementSpec::Switch { gate: GATE_2.into(), ron: None, roff: None }),
    ];
    let m = multiplier(design);
    el.extend(m.iter().cloned());
    let find = |name: &str| el.iter().find(|e| e.name == name).expect("builtin element");
    let probes = ConverterProbes {
        source: Probe::of(find("vin")),
        load: Probe::of(find("rload")),
        switches: [Probe::of(find("s1")), Probe::of(find("s2"))],
        diodes: ["d1", "d2", "d3", "d4"].map(|d| Probe::of(find(d))),
        caps: ["c1", "c2", "c3", "c4"].map(|c| Probe::of(find(c))),
        magnetizing: [magnetizing_name("x1"), magnetizing_name("x2")],
        leakage: [leakage_name("x1"), leakage_name("x2")],
        transformers: [transformer_name("x1"), transformer_name("x2")],
        gates: [GATE_1.into(), GATE_2.into()],
        n_ratio: design.n_ratio,
    };
    let netlist = Netlist {
        elements: el,
        pwm: PwmSpec {
            gates: vec![
                GateSpec { id: GATE_1.into(), fsw: design.fsw, duty: design.duty, phase: 0.0 },
                GateSpec { id: GATE_2.into(), fsw: design.fsw, duty: design.duty, phase: 180.0 },
            ],
        },
    };
    netlist.validate()?;
    Ok((netlist, probes))
}

fn cap(name: &str, a: &str, b: &str, design: &ConverterDesign, v: f64) -> Element {
    Element::new(name, &[a, b], ElementSpec::Capacitor { farads: design.cap, ic: Some(v), esr: None })
}

fn diode(name: &str, anode: &str, cathode: &str) -> Element {
    Element::new(name, &[anode, cathode], ElementSpec::Diode { vf: None, ron: None, roff: None })
}

/// Ideal capacitor voltages of the built-in multiplier, `[C1, C2, C3, C4]`.
///
/// With `V = Vin/(1-D)`: C1 clamps switch 1 to `V`, C2 stacks a second `V`
/// on switch 2, C3 holds the mode-2 secondary voltage `N*V` and C4 the
/// mode-3 to mode-2 secondary swing `2N*V`. The load sees `C2 + C4`.
pub fn builtin_capacitor_voltages(design: &ConverterDesign) -> [f64; 4] {
    let v = design.vin / (1.0 - design.duty);
    let n = design.n_ratio;
    [v, 2.0 * v, n * v, 2.0 * n * v]
}

/// Ideal output voltage of the built-in multiplier, `2(N+1)Vin/(1-D)`.
pub fn builtin_output_voltage(design: &ConverterDesign) -> f64 {
    let vc = builtin_capacitor_voltages(design);
    vc[1] + vc[3]
}

/// Secondary windings, diodes D1-D4, capacitors C1-C4 and the load.
///
/// Both secondaries are connected series-opposed from `q` through the
/// shared node `sm` to `se`, so the string voltage is `N(v_sw2 - v_sw1)`.
/// D2/C1 clamp switch 2 and D1/C2 pass switch 1's energy up to `q`; C3 and
/// D4/D3 rectify the string onto C4. The load spans `sw2` to `out`.
fn multiplier(design: &ConverterDesign) -> Vec<Element> {
    let vc = builtin_capacitor_voltages(design);
    vec![
        cap("c1", "k", "sw1", design, vc[0]),
        diode("d2", "sw2", "k"),
        diode("d1", "k", "q"),
        cap("c2", "q", "sw2", design, vc[1]),
        cap("c3", "u", "se", design, vc[2]),
        diode("d4", "q", "u"),
        diode("d3", "u", "out"),
        cap("c4", "out", "q", design, vc[3]),
        Element::new("rload", &["out", "sw2"], ElementSpec::Resistor { ohms: design.rload }),
    ]
}

/// Seeds magnetizing and leakage currents with the lossless phase current
/// of the built-in multiplier so the run starts near its periodic steady
/// state.
pub fn warm_start(flat: &mut FlatNetlist, design: &ConverterDesign) {
    let vout = builtin_output_voltage(design);
    let ilm = vout * vout / design.rload / (2.0 * design.vin);
    for x in ["x1", "x2"] {
        flat.set_inductor_ic(&magnetizing_name(x), ilm);
        flat.set_inductor_ic(&leakage_name(x), ilm);
    }
}
