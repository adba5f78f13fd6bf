//! Post-processing of converged waveforms: per-signal statistics,
//! operating-point extraction, conduction losses, efficiency sweeps, ZCS and
//! ripple verdicts, and the analytic-versus-simulated crosscheck.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{self, AnalyticReport, FormulaMode};
use crate::engine::{self, EngineConfig, EngineError, SteadyResult, WaveformSet};
use crate::model::{ConverterDesign, DeviceParasitics};
use crate::netlist::{self, ConverterProbes, NetlistError, Probe};

/// Fraction of each inter-breakpoint segment ignored when measuring diode
/// stress, so numerical spikes right after an edge are not counted.
pub const STRESS_BLANKING: f64 = 0.05;
pub const ZCS_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct SignalStats {
    pub avg: f64,
    pub rms: f64,
    pub min: f64,
    pub max: f64,
    pub pkpk: f64,
}

impl SignalStats {
    pub fn constant(v: f64) -> Self {
        Self {
            avg: v,
            rms: v.abs(),
            min: v,
            max: v,
            pkpk: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty signal")]
    Empty,
    #[error("time and value series differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("simulation did not converge (residual {0:e})")]
    NotConverged(f64),
    #[error("waveforms lack signal '{0}'")]
    MissingSignal(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Analytic(#[from] analytic::AnalyticError),
}

/// Trapezoidal time-weighted average and rms; min and max over samples.
/// A single sample is treated as a constant.
pub fn stats(time: &[f64], values: &[f64]) -> Result<SignalStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if time.len() != values.len() {
        return Err(MetricsError::Length(time.len(), values.len()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = time[time.len() - 1] - time[0];
    if values.len() == 1 || span <= 0.0 {
        let mut s = SignalStats::constant(values[0]);
        s.min = min;
        s.max = max;
        s.pkpk = max - min;
        return Ok(s);
    }
    let (mut area, mut sq) = (0.0, 0.0);
    for i in 1..values.len() {
        let h = time[i] - time[i - 1];
        let (a, b) = (values[i - 1], values[i]);
        area += 0.5 * h * (a + b);
        sq += 0.5 * h * (a * a + b * b);
    }
    let avg = (area / span).clamp(min, max);
    let rms = (sq / span).sqrt().max(avg.abs());
    Ok(SignalStats {
        avg,
        rms,
        min,
        max,
        pkpk: max - min,
    })
}

/// Everything measured on one converged period of the built-in converter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasuredOperatingPoint {
    pub vout: SignalStats,
    pub vin: SignalStats,
    pub vsw: [SignalStats; 2],
    /// Reverse voltage (cathode minus anode).
    pub vd: [SignalStats; 4],
    /// Maximum reverse voltage with post-edge blanking applied.
    pub vd_stress: [f64; 4],
    pub vc: [SignalStats; 4],
    pub iin: SignalStats,
    pub ilm: [SignalStats; 2],
    pub iout: SignalStats,
    pub id: [SignalStats; 4],
    pub isw: [SignalStats; 2],
    pub ic: [SignalStats; 4],
    /// Primary (leakage-branch) winding currents.
    pub iw_primary: [SignalStats; 2],
    /// Secondary winding currents.
    pub iw_secondary: [SignalStats; 2],
    pub n_ratio: f64,
    pub duty_effective: f64,
    pub fsw: f64,
}

impl MeasuredOperatingPoint {
    pub fn vsw_max(&self) -> f64 {
        self.vsw[0].max.max(self.vsw[1].max)
    }

    pub fn vd_max(&self) -> f64 {
        self.vd_stress.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ilm_avg(&self) -> f64 {
        0.5 * (self.ilm[0].avg + self.ilm[1].avg)
    }

    pub fn pout(&self) -> f64 {
        self.vout.avg * self.iout.avg
    }

    pub fn pin(&self) -> f64 {
        self.vin.avg * self.iin.avg
    }

    /// A ripple-free operating point carrying the closed-form values; used
    /// for self-checks.
    pub fn from_analytic(r: &AnalyticReport, vin: f64, n_ratio: f64, duty: f64, fsw: f64) -> Self {
        let c = SignalStats::constant;
        Self {
            vout: c(r.vout),
            vin: c(vin),
            vsw: [c(r.vsw); 2],
            vd: [c(r.vd); 4],
            vd_stress: [r.vd; 4],
            vc: r.vc.map(c),
            iin: c(r.iin_avg),
            ilm: [c(r.ilm_avg); 2],
            iout: c(r.iout),
            id: [c(r.iout); 4],
            isw: [c(0.0); 2],
            ic: [c(0.0); 4],
            iw_primary: [c(r.ilm_avg); 2],
            iw_secondary: [c(0.0); 2],
            n_ratio,
            duty_effective: duty,
            fsw,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,avg,rms,min,max,pkpk\n");
        for (name, s) in self.rows() {
            let _ = writeln!(out, "{name},{:e},{:e},{:e},{:e},{:e}", s.avg, s.rms, s.min, s.max, s.pkpk);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("## Measured operating point (final period)\n\n");
        out.push_str("| quantity | avg | rms | min | max | pk-pk |\n|---|---|---|---|---|---|\n");
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                s.avg, s.rms, s.min, s.max, s.pkpk
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "diode stress with {:.0}% post-edge blanking: {:.2} / {:.2} / {:.2} / {:.2} V",
            STRESS_BLANKING * 100.0,
            self.vd_stress[0],
            self.vd_stress[1],
            self.vd_stress[2],
            self.vd_stress[3]
        );
        let _ = writeln!(out, "effective duty {:.4}, fsw {:.1} Hz", self.duty_effective, self.fsw);
        out
    }

    fn rows(&self) -> Vec<(String, SignalStats)> {
        let mut rows = vec![("vout".to_string(), self.vout), ("vin".to_string(), self.vin)];
        let mut push = |prefix: &str, xs: &[SignalStats]| {
            for (i, s) in xs.iter().enumerate() {
                rows.push((format!("{prefix}{}", i + 1), *s));
            }
        };
        push("vsw", &self.vsw);
        push("vd", &self.vd);
        push("vc", &self.vc);
        push("iin", std::slice::from_ref(&self.iin));
        push("ilm", &self.ilm);
        push("iout", std::slice::from_ref(&self.iout));
        push("id", &self.id);
        push("isw", &self.isw);
        push("ic", &self.ic);
        push("iw_pri", &self.iw_primary);
        push("iw_sec", &self.iw_secondary);
        // singletons come out as "iin1"/"iout1"; strip the index
        for r in rows.iter_mut() {
            if r.0 == "iin1" || r.0 == "iout1" {
                r.0.pop();
            }
        }
        rows
    }
}

fn signal<'a>(w: &'a WaveformSet, name: &str) -> Result<&'a [f64], MetricsError> {
    w.signal(name).ok_or_else(|| MetricsError::MissingSignal(name.to_string()))
}

fn across(w: &WaveformSet, p: &Probe) -> Result<Vec<f64>, MetricsError> {
    w.differential(&p.a, &p.b)
        .ok_or_else(|| MetricsError::MissingSignal(format!("v({})-v({})", p.a, p.b)))
}

fn current(w: &WaveformSet, element: &str) -> Result<SignalStats, MetricsError> {
    stats(&w.time, signal(w, &format!("i({element})"))?)
}

/// Maximum of `values` ignoring samples within the first `blank` fraction
/// of each inter-breakpoint segment.
pub fn blanked_max(time: &[f64], values: &[f64], breakpoints: &[f64], blank: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, (&t, &v)) in time.iter().zip(values).enumerate() {
        let seg = breakpoints.windows(2).find(|w| t > w[0] && t <= w[1]);
        let keep = match seg {
            Some(w) => t - w[0] > blank * (w[1] - w[0]),
            None => i == 0,
        };
        if keep {
            best = best.max(v);
        }
    }
    if best.is_finite() {
        best
    } else {
        values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Reads the converter's quantities off a converged final period.
pub fn extract_operating_point(
    steady: &SteadyResult,
    probes: &ConverterProbes,
) -> Result<MeasuredOperatingPoint, MetricsError> {
    if !steady.converged {
        return Err(MetricsError::NotConverged(steady.residual));
    }
    measure(&steady.final_period, probes, 1.0 / steady.period)
}

/// Like [`extract_operating_point`] but without the convergence gate.
pub fn measure(w: &WaveformSet, probes: &ConverterProbes, fsw: f64) -> Result<MeasuredOperatingPoint, MetricsError> {
    let t = &w.time;
    let st = |v: &[f64]| stats(t, v);
    let vout = st(&across(w, &probes.load)?)?;
    let vin = st(&across(w, &probes.source)?)?;
    let mut vsw = [SignalStats::default(); 2];
    let mut isw = [SignalStats::default(); 2];
    for (k, p) in probes.switches.iter().enumerate() {
        vsw[k] = st(&across(w, p)?)?;
        isw[k] = current(w, &p.name)?;
    }
    let mut vd = [SignalStats::default(); 4];
    let mut vd_stress = [0.0; 4];
    let mut id = [SignalStats::default(); 4];
    for (k, p) in probes.diodes.iter().enumerate() {
        let rev: Vec<f64> = across(w, p)?.iter().map(|v| -v).collect();
        vd[k] = st(&rev)?;
        vd_stress[k] = blanked_max(t, &rev, &w.breakpoints, STRESS_BLANKING);
        id[k] = current(w, &p.name)?;
    }
    let mut vc = [SignalStats::default(); 4];
    let mut ic = [SignalStats::default(); 4];
    for (k, p) in probes.caps.iter().enumerate() {
        vc[k] = st(&across(w, p)?)?;
        ic[k] = current(w, &p.name)?;
    }
    let mut ilm = [SignalStats::default(); 2];
    let mut iw_primary = [SignalStats::default(); 2];
    let mut iw_secondary = [SignalStats::default(); 2];
    for k in 0..2 {
        ilm[k] = current(w, &probes.magnetizing[k])?;
        iw_primary[k] = current(w, &probes.leakage[k])?;
        iw_secondary[k] = current(w, &probes.transformers[k])?;
    }
    let gate = signal(w, &format!("gate({})", probes.gates[0]))?;
    Ok(MeasuredOperatingPoint {
        vout,
        vin,
        vsw,
        vd,
        vd_stress,
        vc,
        iin: current(w, &probes.source.name)?,
        ilm,
        iout: current(w, &probes.load.name)?,
        id,
        isw,
        ic,
        iw_primary,
        iw_secondary,
        n_ratio: probes.n_ratio,
        duty_effective: gate_duty(t, gate),
        fsw,
    })
}

/// Fraction of the window a gate trace is high. Gate samples describe the
/// step that ends at their timestamp.
fn gate_duty(t: &[f64], g: &[f64]) -> f64 {
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return g.first().copied().unwrap_or(0.0);
    }
    (1..t.len()).map(|i| (t[i] - t[i - 1]) * g[i]).sum::<f64>() / span
}

/// Closed-form waveform estimate used to score candidate designs without
/// simulating: rectangular switch current, output-current diode averages
/// and a capacitor rms from the diode conduction fraction.
pub fn estimate_operating_point(
    n_ratio: f64,
    duty: f64,
    iout: f64,
    ilm_avg: f64,
    vsw: f64,
    vd: f64,
) -> MeasuredOperatingPoint {
    let c = SignalStats::constant;
    let isw_rms = ilm_avg * duty.sqrt();
    let ic_rms = iout * (duty / (1.0 - duty)).sqrt();
    let stat = |avg: f64, rms: f64| SignalStats {
        avg,
        rms,
        min: 0.0,
        max: rms,
        pkpk: rms,
    };
    let vout = vsw * (1.0 - duty) * analytic::gain_floor(n_ratio);
    let vin = vsw * (1.0 - duty);
    MeasuredOperatingPoint {
        vout: c(vout),
        vin: c(vin),
        vsw: [c(vsw); 2],
        vd: [c(vd); 4],
        vd_stress: [vd; 4],
        vc: [c(vsw), c(2.0 * vsw), c(3.0 * vsw), c(4.0 * vsw)],
        iin: c(2.0 * ilm_avg),
        ilm: [c(ilm_avg); 2],
        iout: c(iout),
        id: [stat(iout, iout / (1.0 - duty).sqrt()); 4],
        isw: [stat(ilm_avg * duty, isw_rms); 2],
        ic: [stat(0.0, ic_rms); 4],
        iw_primary: [c(ilm_avg); 2],
        iw_secondary: [stat(0.0, iout / (1.0 - duty).sqrt()); 2],
        n_ratio,
        duty_effective: duty,
        fsw: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub p_switch: f64,
    pub p_diode: f64,
    pub p_capacitor: f64,
    /// Winding copper loss; an extension beyond the switch, capacitor and
    /// diode terms.
    pub p_inductor: f64,
    pub p_total: f64,
    pub pout: f64,
    pub efficiency: f64,
}

impl LossBreakdown {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,watts\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k},{v:e}");
        }
        let _ = writeln!(out, "pout,{:e}", self.pout);
        let _ = writeln!(out, "efficiency,{:e}", self.efficiency);
        out
    }

    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("p_switch", self.p_switch),
            ("p_diode", self.p_diode),
            ("p_capacitor", self.p_capacitor),
            ("p_inductor", self.p_inductor),
            ("p_total", self.p_total),
        ]
    }

    /// Whether inductor ≥ diode ≥ capacitor ≥ switch.
    pub fn ordering_holds(&self) -> bool {
        self.p_inductor >= self.p_diode && self.p_diode >= self.p_capacitor && self.p_capacitor >= self.p_switch
    }

    pub fn to_markdown(&self, par: &DeviceParasitics) -> String {
        let mut out = String::from("## Conduction losses\n\n| component | W | share |\n|---|---|---|\n");
        for (k, v) in self.entries() {
            let share = if self.p_total > 0.0 { v / self.p_total * 100.0 } else { 0.0 };
            let _ = writeln!(out, "| {k} | {v:.3} | {share:.1}% |");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "pout {:.2} W, efficiency {:.3}%", self.pout, self.efficiency * 100.0);
        let _ = writeln!(
            out,
            "parasitics: rds_on {} Ω, vf {} V, esr {} Ω, r_winding {} Ω (winding copper loss is an extension term)",
            par.rds_on, par.vf, par.esr, par.r_winding
        );
        out
    }
}

/// Post-hoc conduction losses on measured waveforms.
pub fn conduction_losses(op: &MeasuredOperatingPoint, par: &DeviceParasitics) -> LossBreakdown {
    let p_switch: f64 = op.isw.iter().map(|s| s.rms * s.rms * par.rds_on).sum();
    let p_capacitor: f64 = op.ic.iter().map(|s| s.rms * s.rms * par.esr).sum();
    let p_diode: f64 = op.id.iter().map(|s| s.avg.max(0.0) * par.vf).sum();
    // secondary current referred to the primary side
    let p_inductor: f64 = op
        .iw_primary
        .iter()
        .zip(&op.iw_secondary)
        .map(|(p, s)| (p.rms * p.rms + (op.n_ratio * s.rms).powi(2)) * par.r_winding)
        .sum();
    let p_total = p_switch + p_diode + p_capacitor + p_inductor;
    let pout = op.pout();
    let efficiency = if pout > 0.0 { pout / (pout + p_total) } else { 0.0 };
    LossBreakdown {
        p_switch,
        p_diode,
        p_capacitor,
        p_inductor,
        p_total,
        pout,
        efficiency,
    }
}

/// Simulates the built-in converter at `design` to steady state.
pub fn simulate_design(
    design: &ConverterDesign,
    config: &EngineConfig,
) -> Result<(SteadyResult, ConverterProbes), MetricsError> {
    let (net, probes) = netlist::builtin_with_probes(design)?;
    let mut flat = netlist::expand_coupled(&net)?;
    netlist::warm_start(&mut flat, design);
    let (_, steady) = engine::run_transient(&flat, config)?;
    Ok((steady, probes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub target_pout: f64,
    pub rload: f64,
    pub converged: bool,
    pub pout: f64,
    pub efficiency: f64,
    pub losses: Option<LossBreakdown>,
    pub error: Option<String>,
}

/// One simulation per requested output power (load chosen from the
/// built-in multiplier's ideal output voltage); points run in parallel and come back sorted
/// by output power. Failed points are kept and flagged.
pub fn efficiency_sweep(
    design: &ConverterDesign,
    par: &DeviceParasitics,
    loads_w: &[f64],
    config: &EngineConfig,
) -> Result<Vec<SweepPoint>, MetricsError> {
    crate::model::validate(design).map_err(NetlistError::from)?;
    let vout = netlist::builtin_output_voltage(design);
    let mut points: Vec<SweepPoint> = loads_w
        .par_iter()
        .map(|&p| {
            let rload = vout * vout / p;
            let d = design.with_rload(rload);
            let failed = |e: String, converged| SweepPoint {
                target_pout: p,
                rload,
                converged,
                pout: f64::NAN,
                efficiency: f64::NAN,
                losses: None,
                error: Some(e),
            };
            match simulate_design(&d, config) {
                Err(e) => failed(e.to_string(), false),
                Ok((steady, probes)) => match measure(&steady.final_period, &probes, 1.0 / steady.period) {
                    Err(e) => failed(e.to_string(), steady.converged),
                    Ok(op) => {
                        let l = conduction_losses(&op, par);
                        SweepPoint {
                            target_pout: p,
                            rload,
                            converged: steady.converged,
                            pout: l.pout,
                            efficiency: l.efficiency,
                            losses: Some(l),
                            error: (!steady.converged).then(|| "not converged".to_string()),
                        }
                    }
                },
            }
        })
        .collect();
    points.sort_by(|a, b| a.target_pout.total_cmp(&b.target_pout).then(a.pout.total_cmp(&b.pout)));
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("target_pout_w,rload_ohm,pout_w,efficiency,converged,p_switch,p_diode,p_capacitor,p_inductor\n");
    for p in points {
        let l = p.losses.unwrap_or(LossBreakdown {
            p_switch: f64::NAN,
            p_diode: f64::NAN,
            p_capacitor: f64::NAN,
            p_inductor: f64::NAN,
            p_total: f64::NAN,
            pout: f64::NAN,
            efficiency: f64::NAN,
        });
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e}",
            p.target_pout, p.rload, p.pout, p.efficiency, p.converged, l.p_switch, l.p_diode, l.p_capacitor, l.p_inductor
        );
    }
    out
}

/// Minimal line plot of efficiency versus output power.
pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let ok: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.pout.is_finite() && p.efficiency.is_finite())
        .map(|p| (p.pout, p.efficiency * 100.0))
        .collect();
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>",
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">output power [W]</text>",
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">efficiency [%]</text>",
        h / 2.0,
        h / 2.0
    );
    if !ok.is_empty() {
        let (x0, x1) = ok.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = ok.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (y0, y1) = ((y0 - 0.5).floor(), (y1 + 0.5).ceil());
        let xr = if x1 > x0 { x1 - x0 } else { 1.0 };
        let sx = |x: f64| m + (x - x0) / xr * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let path: Vec<String> = ok.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        for &(x, y) in &ok {
            let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>", sx(x), sy(y));
        }
        for (v, label) in [(x0, x0), (x1, x1)] {
            let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{label:.0}</text>", sx(v), h - m + 16.0);
        }
        for v in [y0, y1] {
            let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{v:.1}</text>", m - 4.0, sy(v) + 4.0);
        }
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ZcsVerdict {
    /// Worst turn-off ratio over all conduction intervals.
    Measured { zcs: bool, turnoff_current_ratio: f64 },
    NoConduction,
}

impl ZcsVerdict {
    pub fn is_zcs(&self) -> bool {
        matches!(self, ZcsVerdict::Measured { zcs: true, .. })
    }
}

/// Turn-off current ratio of one diode current trace: for every conduction
/// interval, |i at its last conducting sample| / peak i in the interval.
/// `on_threshold` separates conduction from off-state leakage.
pub fn zcs_check(current: &[f64], on_threshold: f64) -> ZcsVerdict {
    let mut worst: Option<f64> = None;
    let n = current.len();
    let mut i = 0;
    // an interval already running at the window start wraps around
    let wrap = n > 0 && current[0] > on_threshold && current[n - 1] > on_threshold;
    while i < n {
        if current[i] > on_threshold {
            let start = i;
            while i < n && current[i] > on_threshold {
                i += 1;
            }
            let end = i - 1;
            if (start == 0 && wrap) || (i == n && wrap) {
                continue;
            }
            if i == n {
                // still conducting at the window end without a wrap: no turn-off seen
                continue;
            }
            let peak = current[start..=end].iter().copied().fold(0.0f64, f64::max);
            let ratio = current[end].abs() / peak;
            worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
        } else {
            i += 1;
        }
    }
    if wrap {
        // join the tail and head intervals
        let head_end = current.iter().position(|&v| v <= on_threshold);
        let tail_start = current.iter().rposition(|&v| v <= on_threshold);
        if let (Some(he), Some(ts)) = (head_end, tail_start) {
            let seg = current[ts + 1..].iter().chain(&current[..he]);
            let peak = seg.copied().fold(0.0f64, f64::max);
            let ratio = current[he - 1].abs() / peak;
            worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
        }
    }
    match worst {
        Some(r) => ZcsVerdict::Measured {
            zcs: r < ZCS_THRESHOLD,
            turnoff_current_ratio: r,
        },
        None => ZcsVerdict::NoConduction,
    }
}

/// Trapezoidal integral of a trace over its window: volt-seconds for an
/// inductor voltage, net charge for a capacitor current.
pub fn cycle_integral(time: &[f64], values: &[f64]) -> Result<f64, MetricsError> {
    let s = stats(time, values)?;
    Ok(s.avg * (time[time.len() - 1] - time[0]))
}

/// Cycle-average power flow of a simulated period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyAudit {
    /// Delivered by voltage sources.
    pub p_source: f64,
    /// Absorbed by resistors and capacitor ESR.
    pub p_resistors: f64,
    pub p_switches: f64,
    pub p_diodes: f64,
    /// Net absorbed by inductors and capacitors; zero in a periodic steady
    /// state.
    pub p_reactive: f64,
}

impl EnergyAudit {
    /// Relative mismatch between source power and dissipation.
    pub fn closure(&self) -> f64 {
        let dissipated = self.p_resistors + self.p_switches + self.p_diodes;
        (self.p_source - dissipated).abs() / self.p_source.abs().max(f64::MIN_POSITIVE)
    }
}

/// Averages `v·i` of every two-terminal element over the window; capacitor
/// ESR loss is booked as resistive. Ideal transformers are lossless by
/// construction and are skipped.
pub fn energy_audit(w: &WaveformSet, flat: &netlist::FlatNetlist) -> Result<EnergyAudit, MetricsError> {
    let mut a = EnergyAudit {
        p_source: 0.0,
        p_resistors: 0.0,
        p_switches: 0.0,
        p_diodes: 0.0,
        p_reactive: 0.0,
    };
    for e in &flat.elements {
        if e.nodes.len() != 2 {
            continue;
        }
        let v = w
            .differential(&e.nodes[0], &e.nodes[1])
            .ok_or_else(|| MetricsError::MissingSignal(format!("v({})", e.nodes[0])))?;
        let i = signal(w, &format!("i({})", e.name))?;
        let p: Vec<f64> = v.iter().zip(i).map(|(v, i)| v * i).collect();
        let avg = stats(&w.time, &p)?.avg;
        if let netlist::ElementSpec::Capacitor { esr: Some(r), .. } = e.spec {
            let sq: Vec<f64> = i.iter().map(|i| r * i * i).collect();
            let p_esr = stats(&w.time, &sq)?.avg;
            a.p_resistors += p_esr;
            a.p_reactive += avg - p_esr;
            continue;
        }
        match e.spec.kind() {
            netlist::ElementKind::V => a.p_source += avg,
            netlist::ElementKind::R => a.p_resistors += avg,
            netlist::ElementKind::S => a.p_switches += avg,
            netlist::ElementKind::D => a.p_diodes += avg,
            _ => a.p_reactive += avg,
        }
    }
    Ok(a)
}

/// One contiguous stay in a switching mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDwell {
    pub mode: engine::Mode,
    /// Share of the window.
    pub fraction: f64,
}

/// Run-length encoding of the switching mode over a window, treating the
/// window as periodic (a stay split across the ends is joined).
pub fn mode_sequence(w: &WaveformSet, gates: [&str; 2]) -> Result<Vec<ModeDwell>, MetricsError> {
    let g1 = signal(w, &format!("gate({})", gates[0]))?;
    let g2 = signal(w, &format!("gate({})", gates[1]))?;
    let t = &w.time;
    if t.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let span = t[t.len() - 1] - t[0];
    let mut out: Vec<ModeDwell> = Vec::new();
    for k in 1..t.len() {
        let mode = engine::classify_mode(g1[k] > 0.5, g2[k] > 0.5);
        let f = (t[k] - t[k - 1]) / span;
        match out.last_mut() {
            Some(last) if last.mode == mode => last.fraction += f,
            _ => out.push(ModeDwell { mode, fraction: f }),
        }
    }
    if out.len() > 1 && out[0].mode == out[out.len() - 1].mode {
        let tail = out.pop().expect("non-empty");
        out[0].fraction += tail.fraction;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RippleReport {
    pub iin_pkpk: f64,
    pub phase_pkpk: f64,
    /// Phase ripple over input ripple; infinite when the input is flat.
    pub reduction_factor: f64,
}

pub fn ripple_report(iin: &SignalStats, ilm1: &SignalStats, ilm2: &SignalStats) -> RippleReport {
    let phase = ilm1.pkpk.max(ilm2.pkpk);
    RippleReport {
        iin_pkpk: iin.pkpk,
        phase_pkpk: phase,
        reduction_factor: if iin.pkpk > 0.0 { phase / iin.pkpk } else { f64::INFINITY },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosscheckRow {
    pub quantity: String,
    pub analytic: f64,
    pub simulated: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crosscheck {
    pub tolerance: f64,
    pub formula_mode: FormulaMode,
    pub rows: Vec<CrosscheckRow>,
}

impl Crosscheck {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, quantity: &str) -> Option<&CrosscheckRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.deviation).fold(0.0, f64::max)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "## Simulation vs closed form ({}, tolerance {:.2}%)\n\n| quantity | closed form | simulated | deviation | result |\n|---|---|---|---|---|\n",
            self.formula_mode.as_str(),
            self.tolerance * 100.0
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.3}% | {} |",
                r.quantity,
                r.analytic,
                r.simulated,
                r.deviation * 100.0,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "\noverall: {}", if self.passed() { "pass" } else { "FAIL" });
        out
    }
}

/// Relative deviation of every crosschecked quantity.
pub fn crosscheck(a: &AnalyticReport, m: &MeasuredOperatingPoint, tolerance: f64) -> Crosscheck {
    let pairs = [
        ("vout", a.vout, m.vout.avg),
        ("vsw", a.vsw, m.vsw_max()),
        ("vd", a.vd, m.vd_max()),
        ("vc1", a.vc[0], m.vc[0].avg),
        ("vc2", a.vc[1], m.vc[1].avg),
        ("vc3", a.vc[2], m.vc[2].avg),
        ("vc4", a.vc[3], m.vc[3].avg),
        ("iin", a.iin_avg, m.iin.avg),
        ("ilm", a.ilm_avg, m.ilm_avg()),
        ("iout", a.iout, m.iout.avg),
    ];
    let rows = pairs
        .into_iter()
        .map(|(q, x, y)| {
            let deviation = if x == y { 0.0 } else { ((y - x) / x).abs() };
            CrosscheckRow {
                quantity: q.to_string(),
                analytic: x,
                simulated: y,
                deviation,
                pass: deviation < tolerance,
            }
        })
        .collect();
    Crosscheck {
        tolerance,
        formula_mode: a.formula_mode,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, span: f64) -> Vec<f64> {
        (0..=n).map(|i| span * i as f64 / n as f64).collect()
    }

    #[test]
    fn constant_signal() {
        let t = grid(10, 1.0);
        let s = stats(&t, &vec![5.0; 11]).unwrap();
        assert_eq!((s.avg, s.rms, s.pkpk), (5.0, 5.0, 0.0));
    }

    #[test]
    fn square_wave_rms() {
        let n = 100_000;
        let t = grid(n, 1.0);
        let (a, d) = (3.0, 0.3);
        let v: Vec<f64> = t.iter().map(|&x| if x < d { a } else { 0.0 }).collect();
        let s = stats(&t, &v).unwrap();
        assert!((s.rms - a * d.sqrt()).abs() / (a * d.sqrt()) < 1e-3);
    }

    #[test]
    fn sine_rms() {
        let n = 10_000;
        let t = grid(n, 1.0);
        let v: Vec<f64> = t.iter().map(|&x| 2.0 * (std::f64::consts::TAU * x).sin()).collect();
        let s = stats(&t, &v).unwrap();
        assert!((s.rms - 2.0 / 2f64.sqrt()).abs() < 1e-3 * 2.0);
        assert!(s.avg.abs() < 1e-9);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(stats(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn loss_arithmetic() {
        let mut op = estimate_operating_point(1.5, 0.73, 1.212, 20.2, 111.11, 222.22);
        op.isw = [SignalStats { rms: 10.0, ..Default::default() }; 2];
        op.id = [SignalStats::constant(1.212); 4];
        let par = DeviceParasitics {
            rds_on: 7.5e-3,
            vf: 1.35,
            esr: 0.0,
            r_winding: 0.0,
        };
        let l = conduction_losses(&op, &par);
        assert!((l.p_switch - 2.0 * 0.75).abs() < 1e-12);
        assert!((l.p_diode - 4.0 * 1.6362).abs() < 1e-3);
        let z = conduction_losses(&op, &DeviceParasitics::zero());
        assert_eq!(z.p_total, 0.0);
        assert_eq!(z.efficiency, 1.0);
    }

    #[test]
    fn zcs_shapes() {
        // triangle falling to zero, then off
        let mut tri: Vec<f64> = (0..50).map(|i| 1.0 - i as f64 / 49.0).collect();
        tri.extend(vec![0.0; 50]);
        tri.insert(0, 0.0);
        match zcs_check(&tri, 1e-6) {
            ZcsVerdict::Measured { zcs, turnoff_current_ratio } => {
                // the last conducting sample is just above zero
                assert!(zcs && turnoff_current_ratio < 0.05);
            }
            v => panic!("{v:?}"),
        }
        let mut rect = vec![0.0];
        rect.extend(vec![1.0; 50]);
        rect.extend(vec![0.0; 50]);
        assert_eq!(
            zcs_check(&rect, 1e-6),
            ZcsVerdict::Measured {
                zcs: false,
                turnoff_current_ratio: 1.0
            }
        );
        assert_eq!(zcs_check(&[0.0; 10], 1e-6), ZcsVerdict::NoConduction);
    }

    #[test]
    fn zcs_interval_wrapping_the_window() {
        // conducting at both ends: the tail/head pair is one interval
        let mut v = vec![0.5, 0.25, 0.0];
        v.extend(vec![0.0; 10]);
        v.extend(vec![1.0, 0.75]);
        match zcs_check(&v, 1e-6) {
            ZcsVerdict::Measured { turnoff_current_ratio, .. } => {
                assert!((turnoff_current_ratio - 0.25).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ripple_factors() {
        let leg = SignalStats { pkpk: 2.0, ..Default::default() };
        let summed = SignalStats { pkpk: 4.0, ..Default::default() };
        assert_eq!(ripple_report(&summed, &leg, &leg).reduction_factor, 0.5);
        let flat = SignalStats::constant(3.0);
        assert!(ripple_report(&flat, &leg, &leg).reduction_factor.is_infinite());
    }

    #[test]
    fn crosscheck_against_itself() {
        let d = crate::model::preset_simulation();
        let a = analytic::analyze(&d, FormulaMode::Consistent).unwrap();
        let m = MeasuredOperatingPoint::from_analytic(&a, d.vin, d.n_ratio, d.duty, d.fsw);
        let c = crosscheck(&a, &m, 0.02);
        assert!(c.passed());
        assert_eq!(c.max_deviation(), 0.0);
        assert!(!crosscheck(&a, &m, 0.0).passed() || c.max_deviation() == 0.0);
    }

    #[test]
    fn blanking_skips_post_edge_samples() {
        let t = grid(100, 1.0);
        let mut v = vec![1.0; 101];
        v[1] = 50.0;
        assert_eq!(blanked_max(&t, &v, &[0.0, 1.0], 0.05), 1.0);
        assert_eq!(blanked_max(&t, &v, &[0.0, 1.0], 0.0), 50.0);
    }
}
