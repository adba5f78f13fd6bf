//! Closed-form steady state of the converter: gain, capacitor ladder,
//! device stresses and average currents, plus the duty solver, a small
//! design search and a self-consistency audit of the published formulas.
//!
//! All voltages scale linearly with `vin`; every function here is pure.

use crate::model::{ConverterDesign, DeviceParasitics, OperatingTargets, PROTOTYPE_RATED_POWER};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("duty {0} outside (0, 1)")]
    DutyOutOfRange(f64),
    #[error("load resistance must be positive (got {0})")]
    NonPositiveLoad(f64),
    #[error("output current must be non-negative (got {0})")]
    NegativeCurrent(f64),
    #[error("required duty {duty:.6} is outside (0, 1); gain floor is {floor:.4}")]
    Infeasible { duty: f64, floor: f64 },
    #[error("candidate turns-ratio list is empty")]
    NoCandidates,
}

/// Which coefficient the average-current formulas use.
///
/// `StrictPaper` keeps the printed `(N+2)` factor; `Consistent` uses
/// `(N+3)`, the factor implied by the gain `2(N+3)/(1-D)` and by power
/// balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FormulaMode {
    StrictPaper,
    #[default]
    Consistent,
}

impl FormulaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaMode::StrictPaper => "strict_paper",
            FormulaMode::Consistent => "consistent",
        }
    }

    fn current_coefficient(&self, n_ratio: f64) -> f64 {
        match self {
            FormulaMode::StrictPaper => n_ratio + 2.0,
            FormulaMode::Consistent => n_ratio + 3.0,
        }
    }
}

impl std::str::FromStr for FormulaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strict_paper" | "strict" => Ok(FormulaMode::StrictPaper),
            "consistent" => Ok(FormulaMode::Consistent),
            other => Err(format!("unknown formula mode '{other}'")),
        }
    }
}

fn check_duty(duty: f64) -> Result<f64, AnalyticError> {
    if duty > 0.0 && duty < 1.0 {
        Ok(1.0 / (1.0 - duty))
    } else {
        Err(AnalyticError::DutyOutOfRange(duty))
    }
}

/// Same as `check_duty` but admits `duty == 0`, where the gain formula
/// still evaluates to its floor.
fn check_duty_closed(duty: f64) -> Result<f64, AnalyticError> {
    if (0.0..1.0).contains(&duty) {
        Ok(1.0 / (1.0 - duty))
    } else {
        Err(AnalyticError::DutyOutOfRange(duty))
    }
}

/// Voltage gain `2(N+3)/(1-D)`.
pub fn voltage_gain(n_ratio: f64, duty: f64) -> Result<f64, AnalyticError> {
    Ok(gain_floor(n_ratio) * check_duty_closed(duty)?)
}

/// Gain at zero duty, the smallest gain the converter can produce.
pub fn gain_floor(n_ratio: f64) -> f64 {
    2.0 * (n_ratio + 3.0)
}

/// Multiplier capacitor voltages `k·Vin/(1-D)`, k = 1..4.
pub fn capacitor_voltages(vin: f64, duty: f64) -> Result<[f64; 4], AnalyticError> {
    let base = vin * check_duty(duty)?;
    Ok([base, 2.0 * base, 3.0 * base, 4.0 * base])
}

/// Off-state voltage across either switch.
pub fn switch_stress(vin: f64, duty: f64) -> Result<f64, AnalyticError> {
    Ok(vin * check_duty(duty)?)
}

/// Reverse voltage across each multiplier diode.
pub fn diode_stress(vin: f64, duty: f64) -> Result<f64, AnalyticError> {
    Ok(2.0 * vin * check_duty(duty)?)
}

pub fn output_current(vout: f64, rload: f64) -> Result<f64, AnalyticError> {
    if rload > 0.0 {
        Ok(vout / rload)
    } else {
        Err(AnalyticError::NonPositiveLoad(rload))
    }
}

/// Average magnetizing current of one phase.
pub fn magnetizing_current_avg(
    n_ratio: f64,
    duty: f64,
    iout: f64,
    mode: FormulaMode,
) -> Result<f64, AnalyticError> {
    let inv = check_duty(duty)?;
    if iout < 0.0 {
        return Err(AnalyticError::NegativeCurrent(iout));
    }
    Ok(mode.current_coefficient(n_ratio) * iout * inv)
}

/// Average input current, the sum of both phase currents.
pub fn input_current_avg(
    n_ratio: f64,
    duty: f64,
    iout: f64,
    mode: FormulaMode,
) -> Result<f64, AnalyticError> {
    Ok(2.0 * magnetizing_current_avg(n_ratio, duty, iout, mode)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub gain: f64,
    pub vout: f64,
    pub vc: [f64; 4],
    pub vsw: f64,
    pub vd: f64,
    pub iout: f64,
    pub ilm_avg: f64,
    pub iin_avg: f64,
    pub formula_mode: FormulaMode,
}

impl AnalyticReport {
    pub fn pout(&self) -> f64 {
        self.vout * self.iout
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Closed-form operating point ({})", self.formula_mode.as_str());
        let _ = writeln!(s);
        let _ = writeln!(s, "| quantity | value |");
        let _ = writeln!(s, "|---|---|");
        let rows: [(&str, String); 11] = [
            ("gain", format!("{:.3}", self.gain)),
            ("vout [V]", format!("{:.2}", self.vout)),
            ("vc1 [V]", format!("{:.2}", self.vc[0])),
            ("vc2 [V]", format!("{:.2}", self.vc[1])),
            ("vc3 [V]", format!("{:.2}", self.vc[2])),
            ("vc4 [V]", format!("{:.2}", self.vc[3])),
            ("vsw [V]", format!("{:.2}", self.vsw)),
            ("vd [V]", format!("{:.2}", self.vd)),
            ("iout [A]", format!("{:.3}", self.iout)),
            ("ilm_avg [A]", format!("{:.2}", self.ilm_avg)),
            ("iin_avg [A]", format!("{:.2}", self.iin_avg)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "| {k} | {v} |");
        }
        s
    }
}

/// Evaluates every closed form at `design`.
pub fn analyze(design: &ConverterDesign, mode: FormulaMode) -> Result<AnalyticReport, AnalyticError> {
    let gain = voltage_gain(design.n_ratio, design.duty)?;
    check_duty(design.duty)?;
    let vout = gain * design.vin;
    let iout = output_current(vout, design.rload)?;
    let ilm_avg = magnetizing_current_avg(design.n_ratio, design.duty, iout, mode)?;
    Ok(AnalyticReport {
        gain,
        vout,
        vc: capacitor_voltages(design.vin, design.duty)?,
        vsw: switch_stress(design.vin, design.duty)?,
        vd: diode_stress(design.vin, design.duty)?,
        iout,
        ilm_avg,
        iin_avg: 2.0 * ilm_avg,
        formula_mode: mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DutySolution {
    pub duty: f64,
    /// Set when the solved duty is ≤ 0.5 (no switch overlap).
    pub overlap_warning: bool,
}

/// Inverts the gain formula for the duty that reaches `vout_target`.
pub fn solve_duty(targets: &OperatingTargets, n_ratio: f64) -> Result<DutySolution, AnalyticError> {
    let floor = gain_floor(n_ratio);
    let duty = 1.0 - floor * targets.vin / targets.vout_target;
    if !(duty > 0.0 && duty < 1.0) {
        return Err(AnalyticError::Infeasible { duty, floor });
    }
    Ok(DutySolution {
        duty,
        overlap_warning: duty <= 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchLimits {
    pub vsw_max: Option<f64>,
    pub vd_max: Option<f64>,
    pub duty_range: (f64, f64),
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self {
            vsw_max: None,
            vd_max: None,
            duty_range: (0.0, 1.0),
        }
    }
}

/// Ranking used by [`design_search`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SearchScore {
    /// Ascending switch stress, then diode stress, then turns ratio.
    #[default]
    Stress,
    /// Ascending total conduction loss from a ripple-free current estimate.
    ConductionLoss(DeviceParasitics),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignCandidate {
    pub rank: usize,
    pub n_ratio: f64,
    pub duty: f64,
    pub vsw: f64,
    pub vd: f64,
    pub ilm_avg: f64,
    pub overlap_warning: bool,
    /// Estimated conduction loss, only filled by the loss score.
    pub est_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SearchOutcome {
    Ranked(Vec<DesignCandidate>),
    NoFeasibleDesign,
}

impl SearchOutcome {
    pub fn candidates(&self) -> &[DesignCandidate] {
        match self {
            SearchOutcome::Ranked(v) => v,
            SearchOutcome::NoFeasibleDesign => &[],
        }
    }
}

/// Solves the duty for every candidate turns ratio, filters by `limits`
/// and ranks the survivors.
pub fn design_search(
    targets: &OperatingTargets,
    n_candidates: &[f64],
    limits: &SearchLimits,
    score: SearchScore,
) -> Result<SearchOutcome, AnalyticError> {
    if n_candidates.is_empty() {
        return Err(AnalyticError::NoCandidates);
    }
    let iout = targets.pout_target / targets.vout_target;
    let mut feasible = Vec::new();
    for &n in n_candidates {
        if !(n > 0.0) {
            continue;
        }
        let Ok(sol) = solve_duty(targets, n) else {
            continue;
        };
        let (dmin, dmax) = limits.duty_range;
        if sol.duty < dmin || sol.duty > dmax {
            continue;
        }
        let vsw = switch_stress(targets.vin, sol.duty)?;
        let vd = diode_stress(targets.vin, sol.duty)?;
        if limits.vsw_max.is_some_and(|m| vsw > m) || limits.vd_max.is_some_and(|m| vd > m) {
            continue;
        }
        let ilm_avg = magnetizing_current_avg(n, sol.duty, iout, FormulaMode::Consistent)?;
        let est_loss = match score {
            SearchScore::Stress => None,
            SearchScore::ConductionLoss(par) => {
                let op = crate::metrics::estimate_operating_point(n, sol.duty, iout, ilm_avg, vsw, vd);
                Some(crate::metrics::conduction_losses(&op, &par).p_total)
            }
        };
        feasible.push(DesignCandidate {
            rank: 0,
            n_ratio: n,
            duty: sol.duty,
            vsw,
            vd,
            ilm_avg,
            overlap_warning: sol.overlap_warning,
            est_loss,
        });
    }
    if feasible.is_empty() {
        return Ok(SearchOutcome::NoFeasibleDesign);
    }
    feasible.sort_by(|a, b| {
        let primary = match (a.est_loss, b.est_loss) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => std::cmp::Ordering::Equal,
        };
        primary
            .then(a.vsw.total_cmp(&b.vsw))
            .then(a.vd.total_cmp(&b.vd))
            .then(a.n_ratio.total_cmp(&b.n_ratio))
    });
    for (i, c) in feasible.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(SearchOutcome::Ranked(feasible))
}

/// Named inconsistencies found by [`audit_consistency`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFlag {
    /// The printed `(N+2)` current coefficient breaks power balance against
    /// the `2(N+3)` gain.
    CurrentFormulaInconsistentWithGain,
    /// The comparison table lists `(2N+2)/(1-D)` for this converter, which
    /// disagrees with the gain derivation.
    ComparisonTableGainConflict,
    /// Output power at the design point differs from the 500 W rating by
    /// more than 10 %.
    RatedPowerVsOperatingPoint,
}

impl AuditFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditFlag::CurrentFormulaInconsistentWithGain => "current_formula_inconsistent_with_gain",
            AuditFlag::ComparisonTableGainConflict => "comparison_table_gain_conflict",
            AuditFlag::RatedPowerVsOperatingPoint => "rated_power_vs_operating_point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBalance {
    pub power_in: f64,
    pub power_out: f64,
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub strict_paper: PowerBalance,
    pub consistent: PowerBalance,
    pub flags: Vec<AuditFlag>,
    /// Gain as listed in the comparison table, for reference.
    pub table_gain: f64,
    pub derived_gain: f64,
}

impl AuditReport {
    pub fn balance(&self, mode: FormulaMode) -> &PowerBalance {
        match mode {
            FormulaMode::StrictPaper => &self.strict_paper,
            FormulaMode::Consistent => &self.consistent,
        }
    }

    pub fn has(&self, flag: AuditFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Consistency audit");
        let _ = writeln!(s);
        let _ = writeln!(s, "| mode | P_in [W] | P_out [W] | imbalance |");
        let _ = writeln!(s, "|---|---|---|---|");
        for (name, b) in [("strict_paper", &self.strict_paper), ("consistent", &self.consistent)] {
            let _ = writeln!(
                s,
                "| {name} | {:.2} | {:.2} | {:.4} |",
                b.power_in, b.power_out, b.imbalance
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "gain from derivation {:.4}, gain listed in comparison table {:.4}",
            self.derived_gain, self.table_gain
        );
        let _ = writeln!(s);
        if self.flags.is_empty() {
            let _ = writeln!(s, "flags: none");
        } else {
            for f in &self.flags {
                let _ = writeln!(s, "- flag: `{}`", f.as_str());
            }
        }
        s
    }
}

const IMBALANCE_FLAG_THRESHOLD: f64 = 0.01;
const RATED_POWER_BAND: f64 = 0.10;

/// Cross-checks the published formulas against each other at `design`.
pub fn audit_consistency(design: &ConverterDesign) -> Result<AuditReport, AnalyticError> {
    let balance = |mode| -> Result<PowerBalance, AnalyticError> {
        let r = analyze(design, mode)?;
        let power_in = design.vin * r.iin_avg;
        let power_out = r.vout * r.iout;
        Ok(PowerBalance {
            power_in,
            power_out,
            imbalance: (power_in - power_out).abs() / power_out,
        })
    };
    let strict = balance(FormulaMode::StrictPaper)?;
    let consistent = balance(FormulaMode::Consistent)?;
    let mut flags = Vec::new();
    if strict.imbalance > IMBALANCE_FLAG_THRESHOLD {
        flags.push(AuditFlag::CurrentFormulaInconsistentWithGain);
    }
    flags.push(AuditFlag::ComparisonTableGainConflict);
    let rated = PROTOTYPE_RATED_POWER;
    if (consistent.power_out - rated).abs() > RATED_POWER_BAND * rated {
        flags.push(AuditFlag::RatedPowerVsOperatingPoint);
    }
    let inv = check_duty(design.duty)?;
    Ok(AuditReport {
        strict_paper: strict,
        consistent,
        flags,
        table_gain: (2.0 * design.n_ratio + 2.0) * inv,
        derived_gain: voltage_gain(design.n_ratio, design.duty)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset_simulation;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn gain_at_reference_point() {
        let g = voltage_gain(1.5, 0.73).unwrap();
        assert!(rel(g, 33.3333333) < 1e-6);
        assert!(rel(g * 30.0, 1000.0) < 1e-6);
        assert_eq!(g, 9.0 / (1.0 - 0.73));
        assert_eq!(voltage_gain(1.5, 0.0).unwrap(), 9.0);
        assert!(voltage_gain(1.5, 1.0).is_err());
        assert!(voltage_gain(1.5, -0.1).is_err());
    }

    #[test]
    fn ladder_values() {
        let vc = capacitor_voltages(30.0, 0.73).unwrap();
        for (v, want) in vc.iter().zip([111.11, 222.22, 333.33, 444.44]) {
            assert!((v - want).abs() < 0.01, "{v} vs {want}");
        }
        assert!((vc[1] + vc[2] + vc[3] - 1000.0).abs() < 1e-9);
        assert_eq!(capacitor_voltages(1.0, 0.5).unwrap(), [2.0, 4.0, 6.0, 8.0]);
        assert!(capacitor_voltages(1.0, 1.0).is_err());
    }

    #[test]
    fn stresses() {
        assert!((switch_stress(30.0, 0.73).unwrap() - 111.11).abs() < 0.01);
        assert_eq!(switch_stress(30.0, 0.73).unwrap(), capacitor_voltages(30.0, 0.73).unwrap()[0]);
        assert_eq!(switch_stress(10.0, 0.5).unwrap(), 20.0);
        assert!((diode_stress(30.0, 0.73).unwrap() - 222.22).abs() < 0.01);
        assert_eq!(diode_stress(10.0, 0.5).unwrap(), 40.0);
    }

    #[test]
    fn currents() {
        assert!((output_current(1000.0, 825.0).unwrap() - 1.2121).abs() < 1e-4);
        assert_eq!(output_current(0.0, 825.0).unwrap(), 0.0);
        assert_eq!(output_current(100.0, 50.0).unwrap(), 2.0);
        assert!(output_current(1.0, 0.0).is_err());

        let iout = 1000.0 / 825.0;
        let c = magnetizing_current_avg(1.5, 0.73, iout, FormulaMode::Consistent).unwrap();
        assert!((c - 20.20).abs() < 0.01, "{c}");
        let s = magnetizing_current_avg(1.5, 0.73, 1.212, FormulaMode::StrictPaper).unwrap();
        assert!((s - 15.71).abs() < 0.01, "{s}");
        for m in [FormulaMode::Consistent, FormulaMode::StrictPaper] {
            assert_eq!(magnetizing_current_avg(2.0, 0.6, 0.0, m).unwrap(), 0.0);
        }
        let iin = input_current_avg(1.5, 0.73, iout, FormulaMode::Consistent).unwrap();
        assert!((iin - 40.40).abs() < 0.01);
        assert!(rel(30.0 * iin, 1000.0 * iout) < 1e-3);
        let iin_s = input_current_avg(1.5, 0.73, 1.212, FormulaMode::StrictPaper).unwrap();
        assert!((iin_s - 31.43).abs() < 0.01, "{iin_s}");
    }

    #[test]
    fn analyze_preset() {
        let r = analyze(&preset_simulation(), FormulaMode::Consistent).unwrap();
        assert!(rel(r.vout, 1000.0) < 1e-9);
        assert!((r.vsw - 111.11).abs() < 0.01);
        assert!((r.iin_avg - 40.40).abs() < 0.01);
        let again = analyze(&preset_simulation(), FormulaMode::Consistent).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn analyze_scales_with_vin() {
        let d = preset_simulation();
        let r1 = analyze(&d, FormulaMode::Consistent).unwrap();
        let d2 = ConverterDesign { vin: 60.0, ..d };
        let r2 = analyze(&d2, FormulaMode::Consistent).unwrap();
        assert_eq!(r1.gain, r2.gain);
        for (a, b) in [(r1.vout, r2.vout), (r1.vsw, r2.vsw), (r1.vd, r2.vd), (r1.vc[3], r2.vc[3])] {
            assert!(rel(b, 2.0 * a) < 1e-12);
        }
    }

    #[test]
    fn duty_solver() {
        let t = OperatingTargets::new(30.0, 1000.0, 1212.0).unwrap();
        let s = solve_duty(&t, 1.5).unwrap();
        assert!((s.duty - 0.73).abs() < 1e-12);
        assert!(!s.overlap_warning);

        let t = OperatingTargets::new(30.0, 270.0, 100.0).unwrap();
        assert!(matches!(solve_duty(&t, 1.5), Err(AnalyticError::Infeasible { .. })));

        let t = OperatingTargets::new(48.0, 960.0, 100.0).unwrap();
        let s = solve_duty(&t, 2.0).unwrap();
        assert_eq!(s.duty, 0.5);
        assert!(s.overlap_warning);
    }

    #[test]
    fn search_orders_by_switch_stress() {
        let t = OperatingTargets::new(30.0, 1000.0, 1212.0).unwrap();
        let out = design_search(&t, &[1.0, 1.5, 2.0, 3.0], &SearchLimits::default(), SearchScore::Stress)
            .unwrap();
        let c = out.candidates();
        assert_eq!(c.len(), 4);
        // hand evaluation: D = 1 - 2(N+3)*30/1000, vsw = 30/(1-D) = 1000/(2(N+3))
        let expect = [(3.0, 1000.0 / 12.0), (2.0, 100.0), (1.5, 1000.0 / 9.0), (1.0, 125.0)];
        for (cand, (n, vsw)) in c.iter().zip(expect) {
            assert_eq!(cand.n_ratio, n);
            assert!(rel(cand.vsw, vsw) < 1e-12);
        }
        assert_eq!(c[0].rank, 1);

        let none = design_search(
            &t,
            &[1.0, 1.5],
            &SearchLimits {
                vsw_max: Some(0.0),
                ..Default::default()
            },
            SearchScore::Stress,
        )
        .unwrap();
        assert_eq!(none, SearchOutcome::NoFeasibleDesign);

        let one = design_search(&t, &[1.5], &SearchLimits::default(), SearchScore::Stress).unwrap();
        assert!((one.candidates()[0].duty - 0.73).abs() < 1e-12);
        assert!(design_search(&t, &[], &SearchLimits::default(), SearchScore::Stress).is_err());
    }

    #[test]
    fn search_with_loss_score() {
        let t = OperatingTargets::new(30.0, 1000.0, 500.0).unwrap();
        let out = design_search(
            &t,
            &[1.0, 1.5, 2.0],
            &SearchLimits::default(),
            SearchScore::ConductionLoss(DeviceParasitics::default()),
        )
        .unwrap();
        let c = out.candidates();
        assert_eq!(c.len(), 3);
        assert!(c.windows(2).all(|w| w[0].est_loss.unwrap() <= w[1].est_loss.unwrap()));
    }

    #[test]
    fn audit_preset() {
        let a = audit_consistency(&preset_simulation()).unwrap();
        // (N+2)/(N+3) of the power is accounted for in strict mode
        assert!((a.strict_paper.imbalance - 1.0 / 4.5).abs() < 1e-9);
        assert!(a.consistent.imbalance < 1e-3);
        assert!(a.has(AuditFlag::CurrentFormulaInconsistentWithGain));
        assert!(a.has(AuditFlag::ComparisonTableGainConflict));
        assert!(a.has(AuditFlag::RatedPowerVsOperatingPoint));
    }

    #[test]
    fn audit_no_power_flag_at_rating() {
        let d = preset_simulation().with_rload(2000.0);
        let a = audit_consistency(&d).unwrap();
        assert!(!a.has(AuditFlag::RatedPowerVsOperatingPoint));
    }
}
