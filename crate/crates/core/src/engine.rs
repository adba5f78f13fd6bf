//! Fixed-step transient simulation of flattened netlists.
//!
//! Modified nodal analysis with companion models: node voltages plus one
//! branch current per voltage source, inductor and ideal transformer.
//! Switches and diodes are two-state resistors, so the matrix only changes
//! when a conduction state changes; factorizations are cached per state.
//! Trapezoidal integration is used between events and backward Euler for
//! the first step after any state change to suppress trapezoidal ringing.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;

use nalgebra::{DMatrix, DVector, LU};

use crate::netlist::{ElementKind, ElementSpec, FlatNetlist, GateSpec, PwmSpec, GROUND};

pub const DEFAULT_RON: f64 = 1e-3;
pub const DEFAULT_ROFF: f64 = 1e6;

/// Per-gate on/off state at one instant, keyed by gate id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GateState(pub BTreeMap<String, bool>);

impl GateState {
    pub fn is_on(&self, id: &str) -> Option<bool> {
        self.0.get(id).copied()
    }
}

pub fn gate_on(g: &GateSpec, t: f64) -> bool {
    let x = t * g.fsw - g.phase / 360.0;
    x - x.floor() < g.duty
}

pub fn gate_states(pwm: &PwmSpec, t: f64) -> GateState {
    GateState(pwm.gates.iter().map(|g| (g.id.clone(), gate_on(g, t))).collect())
}

/// Switching edges of every gate within `[t0, t0 + period]`, plus both
/// endpoints, sorted and deduplicated.
pub fn breakpoints(pwm: &PwmSpec, t0: f64, period: f64) -> Vec<f64> {
    let mut pts = vec![0.0, period];
    for g in &pwm.gates {
        let gp = 1.0 / g.fsw;
        for frac in [g.phase / 360.0, g.phase / 360.0 + g.duty] {
            // edges at (m + frac)·gp; enumerate those landing in the window
            let first = ((t0 / gp) - frac).floor() as i64 - 1;
            let mut m = first;
            loop {
                let te = (m as f64 + frac) * gp - t0;
                if te > period * (1.0 + 1e-12) {
                    break;
                }
                if te >= 0.0 {
                    pts.push(te.min(period));
                }
                m += 1;
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = period * 1e-9;
    pts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    pts.into_iter().map(|p| t0 + p).collect()
}

/// Operating mode of a two-switch interleaved stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Both switches on.
    Mode1,
    /// First switch off, second on.
    Mode2,
    /// First switch on, second off.
    Mode3,
    /// Both off; outside the analyzed operating region.
    BothOff,
}

impl Mode {
    pub fn number(&self) -> u8 {
        match self {
            Mode::Mode1 => 1,
            Mode::Mode2 => 2,
            Mode::Mode3 => 3,
            Mode::BothOff => 0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::BothOff => f.write_str("both-off"),
            m => write!(f, "mode{}", m.number()),
        }
    }
}

pub fn classify_mode(s1_on: bool, s2_on: bool) -> Mode {
    match (s1_on, s2_on) {
        (true, true) => Mode::Mode1,
        (false, true) => Mode::Mode2,
        (true, false) => Mode::Mode3,
        (false, false) => Mode::BothOff,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("floating subcircuit: nodes {0:?} have no DC path to ground")]
    Floating(Vec<String>),
    #[error("singular topology: voltage-source loop through {0:?}")]
    VoltageLoop(Vec<String>),
    #[error("singular topology: capacitor-only loop without ESR through {0:?}")]
    CapacitorLoop(Vec<String>),
    #[error("singular system matrix at t = {0:e} s")]
    Singular(f64),
    #[error("switch '{switch}' references undefined gate '{gate}'")]
    UnknownGate { switch: String, gate: String },
    #[error("netlist still contains coupled inductor '{0}'; expand it first")]
    Unexpanded(String),
    #[error("no time base: netlist has no PWM and the config gives no period")]
    NoTimeBase,
    #[error("invalid engine config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub steps_per_period: usize,
    pub max_periods: usize,
    pub ss_tolerance: f64,
    /// Keep every sample instead of only the final period.
    pub record_all: bool,
    /// Time base for netlists without PWM.
    pub period: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 2000,
            max_periods: 5000,
            ss_tolerance: 1e-4,
            record_all: false,
            period: None,
        }
    }
}

impl EngineConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if self.steps_per_period < 4 {
            return Err(EngineError::Config("steps_per_period must be at least 4".into()));
        }
        if self.max_periods == 0 {
            return Err(EngineError::Config("max_periods must be positive".into()));
        }
        if !(self.ss_tolerance >= 0.0) {
            return Err(EngineError::Config("ss_tolerance must be non-negative".into()));
        }
        if let Some(p) = self.period {
            if !(p > 0.0) {
                return Err(EngineError::Config("period must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Index of a node in the unknown vector; `None` is ground.
type Ix = Option<usize>;

#[derive(Debug, Clone)]
enum Dev {
    R { a: Ix, b: Ix, g: f64 },
    V { a: Ix, b: Ix, volts: f64, k: usize },
    L { a: Ix, b: Ix, henries: f64, k: usize, s: usize },
    C { a: Ix, b: Ix, farads: f64, esr: f64, s: usize },
    S { a: Ix, b: Ix, gate: usize, ron: f64, roff: f64 },
    D { a: Ix, b: Ix, vf: f64, ron: f64, roff: f64, d: usize },
    T { pa: Ix, pb: Ix, sa: Ix, sb: Ix, n: f64, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Method {
    Euler,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FactorKey {
    switches: Vec<bool>,
    diodes: Vec<bool>,
    method: Method,
    dt_bits: u64,
}

/// The assembled system for one flattened netlist.
#[derive(Debug, Clone)]
pub struct MnaSystem {
    nodes: Vec<String>,
    names: Vec<String>,
    devs: Vec<Dev>,
    n_branches: usize,
    gate_ids: Vec<String>,
    n_diodes: usize,
    /// Inductor currents then capacitor voltages, in netlist order.
    state_names: Vec<String>,
}

impl MnaSystem {
    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    pub fn dimension(&self) -> usize {
        self.nodes.len() + self.n_branches
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn gate_ids(&self) -> &[String] {
        &self.gate_ids
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Builds the MNA structure, rejecting floating subcircuits and loops that
/// make the system singular.
pub fn assemble(flat: &FlatNetlist) -> Result<MnaSystem, EngineError> {
    let mut node_set = std::collections::BTreeSet::new();
    for e in &flat.elements {
        if e.kind() == ElementKind::X {
            return Err(EngineError::Unexpanded(e.name.clone()));
        }
        for n in &e.nodes {
            if n != GROUND {
                node_set.insert(n.clone());
            }
        }
    }
    let nodes: Vec<String> = node_set.into_iter().collect();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let ix = |n: &str| -> Ix { (n != GROUND).then(|| index[n]) };
    // union-find slot for ground is nodes.len()
    let slot = |n: &str| -> usize { if n == GROUND { nodes.len() } else { index[n] } };

    let mut dc = UnionFind::new(nodes.len() + 1);
    let mut vloop = UnionFind::new(nodes.len() + 1);
    let mut cloop = UnionFind::new(nodes.len() + 1);
    let mut vloop_members = Vec::new();
    let mut cloop_members = Vec::new();

    let gate_ids: Vec<String> = flat.pwm.gates.iter().map(|g| g.id.clone()).collect();
    let mut devs = Vec::with_capacity(flat.elements.len());
    let mut names = Vec::with_capacity(flat.elements.len());
    let mut n_branches = 0;
    let mut n_diodes = 0;
    let mut inductors = Vec::new();
    let mut capacitors = Vec::new();
    let base = nodes.len();

    for e in &flat.elements {
        let (a, b) = (e.nodes[0].as_str(), e.nodes[1].as_str());
        let dev = match &e.spec {
            ElementSpec::Resistor { ohms } => {
                dc.union(slot(a), slot(b));
                Dev::R { a: ix(a), b: ix(b), g: 1.0 / ohms }
            }
            ElementSpec::Voltage { volts } => {
                dc.union(slot(a), slot(b));
                vloop_members.push(e.name.clone());
                if !vloop.union(slot(a), slot(b)) {
                    return Err(EngineError::VoltageLoop(vloop_members));
                }
                // a zero-ESR capacitor loop closed by a source is singular too
                cloop_members.push(e.name.clone());
                if !cloop.union(slot(a), slot(b)) {
                    return Err(EngineError::CapacitorLoop(cloop_members));
                }
                n_branches += 1;
                Dev::V { a: ix(a), b: ix(b), volts: *volts, k: base + n_branches - 1 }
            }
            ElementSpec::Inductor { henries, .. } => {
                dc.union(slot(a), slot(b));
                n_branches += 1;
                inductors.push(e.name.clone());
                Dev::L {
                    a: ix(a),
                    b: ix(b),
                    henries: *henries,
                    k: base + n_branches - 1,
                    s: inductors.len() - 1,
                }
            }
            ElementSpec::Capacitor { farads, esr, .. } => {
                let esr = esr.unwrap_or(0.0);
                if esr == 0.0 {
                    cloop_members.push(e.name.clone());
                    if !cloop.union(slot(a), slot(b)) {
                        return Err(EngineError::CapacitorLoop(cloop_members));
                    }
                }
                capacitors.push(e.name.clone());
                Dev::C {
                    a: ix(a),
                    b: ix(b),
                    farads: *farads,
                    esr,
                    s: capacitors.len() - 1,
                }
            }
            ElementSpec::Switch { gate, ron, roff } => {
                dc.union(slot(a), slot(b));
                let gi = gate_ids.iter().position(|g| g == gate).ok_or_else(|| EngineError::UnknownGate {
                    switch: e.name.clone(),
                    gate: gate.clone(),
                })?;
                Dev::S {
                    a: ix(a),
                    b: ix(b),
                    gate: gi,
                    ron: ron.unwrap_or(DEFAULT_RON),
                    roff: roff.unwrap_or(DEFAULT_ROFF),
                }
            }
            ElementSpec::Diode { vf, ron, roff } => {
                dc.union(slot(a), slot(b));
                n_diodes += 1;
                Dev::D {
                    a: ix(a),
                    b: ix(b),
                    vf: vf.unwrap_or(0.0),
                    ron: ron.unwrap_or(DEFAULT_RON),
                    roff: roff.unwrap_or(DEFAULT_ROFF),
                    d: n_diodes - 1,
                }
            }
            ElementSpec::Transformer { n } => {
                let (sa, sb) = (e.nodes[2].as_str(), e.nodes[3].as_str());
                dc.union(slot(a), slot(b));
                dc.union(slot(sa), slot(sb));
                n_branches += 1;
                Dev::T {
                    pa: ix(a),
                    pb: ix(b),
                    sa: ix(sa),
                    sb: ix(sb),
                    n: *n,
                    k: base + n_branches - 1,
                }
            }
            ElementSpec::Coupled { .. } => unreachable!("rejected above"),
        };
        devs.push(dev);
        names.push(e.name.clone());
    }

    let ground = dc.find(nodes.len());
    let floating: Vec<String> = (0..nodes.len())
        .filter(|&i| dc.find(i) != ground)
        .map(|i| nodes[i].clone())
        .collect();
    if !floating.is_empty() {
        return Err(EngineError::Floating(floating));
    }

    let state_names = inductors.into_iter().chain(capacitors).collect();
    Ok(MnaSystem {
        nodes,
        names,
        devs,
        n_branches,
        gate_ids,
        n_diodes,
        state_names,
    })
}

fn volt(x: &DVector<f64>, i: Ix) -> f64 {
    i.map_or(0.0, |i| x[i])
}

fn stamp_g(m: &mut DMatrix<f64>, a: Ix, b: Ix, g: f64) {
    if let Some(a) = a {
        m[(a, a)] += g;
    }
    if let Some(b) = b {
        m[(b, b)] += g;
    }
    if let (Some(a), Some(b)) = (a, b) {
        m[(a, b)] -= g;
        m[(b, a)] -= g;
    }
}

/// Injects current `i` into node `a` and draws it from node `b`.
fn stamp_i(r: &mut DVector<f64>, a: Ix, b: Ix, i: f64) {
    if let Some(a) = a {
        r[a] += i;
    }
    if let Some(b) = b {
        r[b] -= i;
    }
}

fn stamp_branch(m: &mut DMatrix<f64>, a: Ix, b: Ix, k: usize, scale: f64) {
    if let Some(a) = a {
        m[(a, k)] += scale;
        m[(k, a)] += 1.0;
    }
    if let Some(b) = b {
        m[(b, k)] -= scale;
        m[(k, b)] -= 1.0;
    }
}

/// Dynamic state carried between steps.
#[derive(Debug, Clone)]
struct State {
    il: Vec<f64>,
    vl: Vec<f64>,
    vc: Vec<f64>,
    ic: Vec<f64>,
    diodes: Vec<bool>,
    switches: Vec<bool>,
    fresh: bool,
}

struct Simulator<'a> {
    sys: &'a MnaSystem,
    cache: HashMap<FactorKey, LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    state: State,
}

/// Solution of one accepted step.
struct StepOut {
    x: DVector<f64>,
    ic: Vec<f64>,
    switches: Vec<bool>,
    diodes: Vec<bool>,
}

impl<'a> Simulator<'a> {
    fn new(sys: &'a MnaSystem, flat: &FlatNetlist) -> Self {
        let mut il = Vec::new();
        let mut vc = Vec::new();
        for e in &flat.elements {
            match &e.spec {
                ElementSpec::Inductor { ic, .. } => il.push(ic.unwrap_or(0.0)),
                ElementSpec::Capacitor { ic, .. } => vc.push(ic.unwrap_or(0.0)),
                _ => {}
            }
        }
        let n_sw = sys.devs.iter().filter(|d| matches!(d, Dev::S { .. })).count();
        Self {
            sys,
            cache: HashMap::new(),
            state: State {
                vl: vec![0.0; il.len()],
                ic: vec![0.0; vc.len()],
                il,
                vc,
                diodes: vec![false; sys.n_diodes],
                switches: vec![false; n_sw],
                fresh: true,
            },
        }
    }

    fn state_vector(&self) -> Vec<f64> {
        self.state.il.iter().chain(self.state.vc.iter()).copied().collect()
    }

    fn matrix(&self, switches: &[bool], diodes: &[bool], method: Method, dt: f64) -> DMatrix<f64> {
        let n = self.sys.dimension();
        let mut m = DMatrix::zeros(n, n);
        let mut si = 0;
        for dev in &self.sys.devs {
            match *dev {
                Dev::R { a, b, g } => stamp_g(&mut m, a, b, g),
                Dev::V { a, b, k, .. } => stamp_branch(&mut m, a, b, k, -1.0),
                Dev::L { a, b, henries, k, .. } => {
                    stamp_branch(&mut m, a, b, k, 1.0);
                    let req = match method {
                        Method::Euler => henries / dt,
                        Method::Trapezoid => 2.0 * henries / dt,
                    };
                    m[(k, k)] -= req;
                }
                Dev::C { a, b, farads, esr, .. } => {
                    let h = match method {
                        Method::Euler => dt / farads,
                        Method::Trapezoid => dt / (2.0 * farads),
                    };
                    stamp_g(&mut m, a, b, 1.0 / (esr + h));
                }
                Dev::S { a, b, ron, roff, .. } => {
                    let r = if switches[si] { ron } else { roff };
                    si += 1;
                    stamp_g(&mut m, a, b, 1.0 / r);
                }
                Dev::D { a, b, ron, roff, d, .. } => {
                    stamp_g(&mut m, a, b, 1.0 / if diodes[d] { ron } else { roff });
                }
                Dev::T { pa, pb, sa, sb, n: ratio, k } => {
                    if let Some(sa) = sa {
                        m[(sa, k)] += 1.0;
                        m[(k, sa)] += 1.0;
                    }
                    if let Some(sb) = sb {
                        m[(sb, k)] -= 1.0;
                        m[(k, sb)] -= 1.0;
                    }
                    if let Some(pa) = pa {
                        m[(pa, k)] -= ratio;
                        m[(k, pa)] -= ratio;
                    }
                    if let Some(pb) = pb {
                        m[(pb, k)] += ratio;
                        m[(k, pb)] += ratio;
                    }
                }
            }
        }
        m
    }

    fn rhs(&self, diodes: &[bool], method: Method, dt: f64) -> DVector<f64> {
        let st = &self.state;
        let mut r = DVector::zeros(self.sys.dimension());
        for dev in &self.sys.devs {
            match *dev {
                Dev::V { volts, k, .. } => r[k] = volts,
                Dev::L { henries, k, s, .. } => {
                    r[k] = match method {
                        Method::Euler => -(henries / dt) * st.il[s],
                        Method::Trapezoid => -(2.0 * henries / dt) * st.il[s] - st.vl[s],
                    };
                }
                Dev::C { a, b, farads, esr, s } => {
                    let (h, carry) = match method {
                        Method::Euler => (dt / farads, 0.0),
                        Method::Trapezoid => (dt / (2.0 * farads), dt / (2.0 * farads) * st.ic[s]),
                    };
                    let g = 1.0 / (esr + h);
                    stamp_i(&mut r, a, b, g * (st.vc[s] + carry));
                }
                Dev::D { a, b, vf, ron, d, .. } if diodes[d] => stamp_i(&mut r, a, b, vf / ron),
                _ => {}
            }
        }
        r
    }

    fn solve(&mut self, switches: &[bool], diodes: &[bool], method: Method, dt: f64, t: f64) -> Result<DVector<f64>, EngineError> {
        let key = FactorKey {
            switches: switches.to_vec(),
            diodes: diodes.to_vec(),
            method,
            dt_bits: dt.to_bits(),
        };
        if !self.cache.contains_key(&key) {
            if self.cache.len() > 4096 {
                self.cache.clear();
            }
            let lu = self.matrix(switches, diodes, method, dt).lu();
            self.cache.insert(key.clone(), lu);
        }
        let rhs = self.rhs(diodes, method, dt);
        let x = self.cache[&key].solve(&rhs).ok_or(EngineError::Singular(t))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Singular(t));
        }
        Ok(x)
    }

    /// Diode states implied by a solution; `None` if consistent.
    fn diode_update(&self, x: &DVector<f64>, diodes: &[bool]) -> Option<Vec<bool>> {
        let mut next = diodes.to_vec();
        let mut changed = false;
        for dev in &self.sys.devs {
            if let Dev::D { a, b, vf, ron, d, .. } = *dev {
                let v = volt(x, a) - volt(x, b);
                let on = if diodes[d] { (v - vf) / ron >= 0.0 } else { v > vf };
                if on != diodes[d] {
                    next[d] = on;
                    changed = true;
                }
            }
        }
        changed.then_some(next)
    }

    /// One step of length `dt` from `t`; bisects when diode states fail to
    /// settle.
    fn advance(&mut self, pwm: &PwmSpec, t: f64, dt: f64, depth: u32, out: &mut Vec<(f64, StepOut)>) -> Result<(), EngineError> {
        let mid = t + 0.5 * dt;
        let gates: Vec<bool> = pwm.gates.iter().map(|g| gate_on(g, mid)).collect();
        let switches: Vec<bool> = self
            .sys
            .devs
            .iter()
            .filter_map(|d| match d {
                Dev::S { gate, .. } => Some(gates[*gate]),
                _ => None,
            })
            .collect();
        let mut diodes = self.state.diodes.clone();
        let max_iter = self.sys.n_diodes + 2;
        let mut settled = None;
        let mut last = None;
        for _ in 0..max_iter.max(1) {
            let method = if self.state.fresh || switches != self.state.switches || diodes != self.state.diodes {
                Method::Euler
            } else {
                Method::Trapezoid
            };
            let x = self.solve(&switches, &diodes, method, dt, t)?;
            match self.diode_update(&x, &diodes) {
                None => {
                    settled = Some((x, method));
                    break;
                }
                Some(next) => {
                    last = Some((x, method, diodes.clone()));
                    diodes = next;
                }
            }
        }
        let (x, method) = match settled {
            Some(s) => s,
            None if depth < 8 => {
                self.advance(pwm, t, 0.5 * dt, depth + 1, out)?;
                return self.advance(pwm, t + 0.5 * dt, 0.5 * dt, depth + 1, out);
            }
            None => {
                // accept the last iterate rather than stall
                let (x, method, d) = last.expect("at least one iteration");
                diodes = d;
                (x, method)
            }
        };
        let ic = self.commit(&x, &switches, &diodes, method, dt);
        out.push((t + dt, StepOut { x, ic, switches, diodes }));
        Ok(())
    }

    fn commit(&mut self, x: &DVector<f64>, switches: &[bool], diodes: &[bool], method: Method, dt: f64) -> Vec<f64> {
        for dev in &self.sys.devs {
            match *dev {
                Dev::L { a, b, k, s, .. } => {
                    self.state.il[s] = x[k];
                    self.state.vl[s] = volt(x, a) - volt(x, b);
                }
                Dev::C { a, b, farads, esr, s } => {
                    let v = volt(x, a) - volt(x, b);
                    let st = &mut self.state;
                    let (i, vc) = match method {
                        Method::Euler => {
                            let h = dt / farads;
                            let i = (v - st.vc[s]) / (esr + h);
                            (i, st.vc[s] + h * i)
                        }
                        Method::Trapezoid => {
                            let h = dt / (2.0 * farads);
                            let i = (v - st.vc[s] - h * st.ic[s]) / (esr + h);
                            (i, st.vc[s] + h * (st.ic[s] + i))
                        }
                    };
                    st.ic[s] = i;
                    st.vc[s] = vc;
                }
                _ => {}
            }
        }
        self.state.switches = switches.to_vec();
        self.state.diodes = diodes.to_vec();
        self.state.fresh = false;
        self.state.ic.clone()
    }
}

/// Uniformly sampled (per inter-breakpoint segment) signals from a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaveformSet {
    pub time: Vec<f64>,
    /// Ordered: `v(<node>)` sorted by node, `i(<element>)` in netlist
    /// order, then `gate(<id>)`.
    pub names: Vec<String>,
    pub data: Vec<Vec<f64>>,
    pub breakpoints: Vec<f64>,
    pub step: f64,
    /// Index of the first period contained in this set.
    pub first_period: usize,
}

impl WaveformSet {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.data[i].as_slice())
    }

    pub fn voltage(&self, node: &str) -> Option<Vec<f64>> {
        if node == GROUND {
            return Some(vec![0.0; self.len()]);
        }
        self.signal(&format!("v({node})")).map(<[f64]>::to_vec)
    }

    /// Voltage between two nodes, either of which may be ground.
    pub fn differential(&self, a: &str, b: &str) -> Option<Vec<f64>> {
        let (va, vb) = (self.voltage(a)?, self.voltage(b)?);
        Some(va.iter().zip(&vb).map(|(x, y)| x - y).collect())
    }

    pub fn current(&self, element: &str) -> Option<&[f64]> {
        self.signal(&format!("i({element})"))
    }

    pub fn gate(&self, id: &str) -> Option<&[f64]> {
        self.signal(&format!("gate({id})"))
    }

    /// Samples with `t0 <= t <= t1`.
    pub fn window(&self, t0: f64, t1: f64) -> WaveformSet {
        let tol = (t1 - t0).abs() * 1e-9;
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.time[i] >= t0 - tol && self.time[i] <= t1 + tol)
            .collect();
        WaveformSet {
            time: idx.iter().map(|&i| self.time[i]).collect(),
            names: self.names.clone(),
            data: self.data.iter().map(|s| idx.iter().map(|&i| s[i]).collect()).collect(),
            breakpoints: self.breakpoints.iter().copied().filter(|&b| b >= t0 - tol && b <= t1 + tol).collect(),
            step: self.step,
            first_period: self.first_period,
        }
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_field("t_seconds")?;
        out.write_record(&self.names)?;
        for (i, t) in self.time.iter().enumerate() {
            let mut row = Vec::with_capacity(self.names.len() + 1);
            row.push(format!("{t:e}"));
            row.extend(self.data.iter().map(|s| format!("{:e}", s[i])));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyResult {
    pub converged: bool,
    pub periods_run: usize,
    /// Relative infinity-norm change of the state over the last period.
    pub residual: f64,
    pub period: f64,
    pub final_period: WaveformSet,
}

struct Recorder {
    names: Vec<String>,
    data: Vec<Vec<f64>>,
    time: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl Recorder {
    fn new(names: Vec<String>) -> Self {
        let n = names.len();
        Self {
            names,
            data: vec![Vec::new(); n],
            time: Vec::new(),
            breakpoints: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.time.clear();
        self.breakpoints.clear();
        for s in &mut self.data {
            s.clear();
        }
    }

    fn finish(self, step: f64, first_period: usize) -> WaveformSet {
        WaveformSet {
            time: self.time,
            names: self.names,
            data: self.data,
            breakpoints: self.breakpoints,
            step,
            first_period,
        }
    }
}

fn signal_names(sys: &MnaSystem, pwm: &PwmSpec) -> Vec<String> {
    sys.nodes
        .iter()
        .map(|n| format!("v({n})"))
        .chain(sys.names.iter().map(|n| format!("i({n})")))
        .chain(pwm.gates.iter().map(|g| format!("gate({})", g.id)))
        .collect()
}

fn sample(sys: &MnaSystem, pwm: &PwmSpec, t: f64, out: &StepOut, rec: &mut Recorder) {
    let (x, ic, diodes, switches) = (&out.x, &out.ic, &out.diodes, &out.switches);
    rec.time.push(t);
    let mut col = 0;
    for i in 0..sys.nodes.len() {
        rec.data[col].push(x[i]);
        col += 1;
    }
    let mut si = 0;
    for dev in &sys.devs {
        let i = match *dev {
            Dev::R { a, b, g } => g * (volt(x, a) - volt(x, b)),
            Dev::V { k, .. } | Dev::L { k, .. } | Dev::T { k, .. } => x[k],
            Dev::C { s, .. } => ic[s],
            Dev::S { a, b, ron, roff, .. } => {
                let r = if switches[si] { ron } else { roff };
                si += 1;
                (volt(x, a) - volt(x, b)) / r
            }
            Dev::D { a, b, vf, ron, roff, d } => {
                let v = volt(x, a) - volt(x, b);
                if diodes[d] {
                    (v - vf) / ron
                } else {
                    v / roff
                }
            }
        };
        rec.data[col].push(i);
        col += 1;
    }
    for g in &pwm.gates {
        // state holding over the step that ends at t
        rec.data[col].push(if gate_on(g, t - 1e-12 / g.fsw) { 1.0 } else { 0.0 });
        col += 1;
    }
}

fn residual(prev: &[f64], cur: &[f64]) -> f64 {
    let scale = cur.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    prev.iter().zip(cur).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Runs period after period until the state repeats to within
/// `ss_tolerance` for three consecutive periods, or `max_periods` elapse.
pub fn run_transient(flat: &FlatNetlist, config: &EngineConfig) -> Result<(WaveformSet, SteadyResult), EngineError> {
    config.validate()?;
    flat.pwm.validate().map_err(|e| EngineError::Config(e.to_string()))?;
    let sys = assemble(flat)?;
    let period = match (flat.pwm.fsw(), config.period) {
        (_, Some(p)) => p,
        (Some(f), None) => 1.0 / f,
        (None, None) => return Err(EngineError::NoTimeBase),
    };
    let pwm = &flat.pwm;
    let dt_nom = period / config.steps_per_period as f64;
    let names = signal_names(&sys, pwm);
    let mut all = Recorder::new(names.clone());
    let mut last = Recorder::new(names);
    let mut sim = Simulator::new(&sys, flat);

    let mut prev_state = sim.state_vector();
    let mut streak = 0;
    let mut res = f64::INFINITY;
    let mut periods_run = 0;
    let mut converged = false;
    let mut steps: Vec<(f64, StepOut)> = Vec::with_capacity(config.steps_per_period + 16);
    let mut carry: Option<StepOut> = None;

    for p in 0..config.max_periods {
        let t0 = p as f64 * period;
        let bps = breakpoints(pwm, t0, period);
        last.clear();
        steps.clear();
        for w in bps.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            let n = ((len / dt_nom) - 1e-9).ceil().max(1.0) as usize;
            let dt = len / n as f64;
            for j in 0..n {
                sim.advance(pwm, a + j as f64 * dt, dt, 0, &mut steps)?;
            }
        }
        last.breakpoints = bps.clone();
        // close the interval with the previous period's final sample
        if let Some(prev) = carry.take() {
            sample(&sys, pwm, t0, &prev, &mut last);
        }
        for (t, out) in &steps {
            sample(&sys, pwm, *t, out, &mut last);
        }
        if config.record_all {
            let skip = usize::from(p > 0);
            all.time.extend_from_slice(&last.time[skip..]);
            for (dst, src) in all.data.iter_mut().zip(&last.data) {
                dst.extend_from_slice(&src[skip..]);
            }
            all.breakpoints.extend_from_slice(&bps);
        }
        carry = steps.pop().map(|(_, o)| o);
        periods_run = p + 1;
        let cur = sim.state_vector();
        res = residual(&prev_state, &cur);
        prev_state = cur;
        if res <= config.ss_tolerance {
            streak += 1;
            if streak >= 3 {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }

    let first = periods_run.saturating_sub(1);
    let final_period = last.finish(dt_nom, first);
    let waves = if config.record_all {
        all.breakpoints.dedup();
        all.finish(dt_nom, 0)
    } else {
        final_period.clone()
    };
    Ok((
        waves,
        SteadyResult {
            converged,
            periods_run,
            residual: res,
            period,
            final_period,
        },
    ))
}
