//! Converter parameter types, the two reference presets and validation.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Default leakage inductance per phase when a data set does not give one.
pub const DEFAULT_LEAKAGE: f64 = 1e-6;
/// Turns ratio used throughout the reference design.
pub const REFERENCE_TURNS_RATIO: f64 = 1.5;
/// Rated power of the hardware prototype, watts.
pub const PROTOTYPE_RATED_POWER: f64 = 500.0;

/// Electrical parameters of the two-phase converter.
///
/// `lm`, `lk` are per phase; `cap` applies to each of the four multiplier
/// capacitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterDesign {
    pub vin: f64,
    pub n_ratio: f64,
    pub duty: f64,
    pub fsw: f64,
    pub lm: f64,
    pub lk: f64,
    pub cap: f64,
    pub rload: f64,
}

impl ConverterDesign {
    /// True when both switches overlap, i.e. the three-mode sequence applies.
    pub fn interleave_valid(&self) -> bool {
        self.duty > 0.5
    }

    pub fn period(&self) -> f64 {
        1.0 / self.fsw
    }

    pub fn with_rload(mut self, rload: f64) -> Self {
        self.rload = rload;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }
}

/// Conduction parasitics used by the post-hoc loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParasitics {
    /// Switch on-resistance, ohms.
    pub rds_on: f64,
    /// Diode forward drop, volts.
    pub vf: f64,
    /// Per-capacitor series resistance, ohms.
    pub esr: f64,
    /// Per-winding copper resistance referred to the primary, ohms.
    pub r_winding: f64,
}

impl DeviceParasitics {
    pub const DEFAULT_RDS_ON: f64 = 7.5e-3;
    pub const DEFAULT_VF: f64 = 1.35;
    pub const DEFAULT_ESR: f64 = 10e-3;
    pub const DEFAULT_R_WINDING: f64 = 25e-3;

    pub fn zero() -> Self {
        Self {
            rds_on: 0.0,
            vf: 0.0,
            esr: 0.0,
            r_winding: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut violations = Vec::new();
        for (name, value) in [
            ("rds_on", self.rds_on),
            ("vf", self.vf),
            ("esr", self.esr),
            ("r_winding", self.r_winding),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                violations.push(Violation::Negative { field: name, value });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl Default for DeviceParasitics {
    fn default() -> Self {
        Self {
            rds_on: Self::DEFAULT_RDS_ON,
            vf: Self::DEFAULT_VF,
            esr: Self::DEFAULT_ESR,
            r_winding: Self::DEFAULT_R_WINDING,
        }
    }
}

/// Input of the duty solver and design search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingTargets {
    pub vin: f64,
    pub vout_target: f64,
    pub pout_target: f64,
}

impl OperatingTargets {
    pub fn new(vin: f64, vout_target: f64, pout_target: f64) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        if !(vin > 0.0) {
            violations.push(Violation::NonPositive { field: "vin", value: vin });
        }
        if !(vout_target > vin) {
            violations.push(Violation::OutputBelowInput { vin, vout: vout_target });
        }
        if !(pout_target > 0.0) {
            violations.push(Violation::NonPositive {
                field: "pout_target",
                value: pout_target,
            });
        }
        if violations.is_empty() {
            Ok(Self {
                vin,
                vout_target,
                pout_target,
            })
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn rload(&self) -> f64 {
        self.vout_target * self.vout_target / self.pout_target
    }
}

/// Operating point of the simulation data set: 30 V in, 1000 V out,
/// D = 0.73, 825 Ω, 94 µH, 118 kHz, 10 µF.
pub fn preset_simulation() -> ConverterDesign {
    ConverterDesign {
        vin: 30.0,
        n_ratio: REFERENCE_TURNS_RATIO,
        duty: 0.73,
        fsw: 118e3,
        lm: 94e-6,
        lk: DEFAULT_LEAKAGE,
        cap: 10e-6,
        rload: 825.0,
    }
}

/// Hardware prototype: same electrical point with 1 µF film capacitors and
/// the 7.5 mΩ MOSFETs.
pub fn preset_prototype() -> (ConverterDesign, DeviceParasitics) {
    let design = ConverterDesign {
        cap: 1e-6,
        ..preset_simulation()
    };
    (design, DeviceParasitics::default())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositive { field: &'static str, value: f64 },
    Negative { field: &'static str, value: f64 },
    DutyOutOfRange { duty: f64 },
    OutputBelowInput { vin: f64, vout: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive { field, value } => {
                write!(f, "{field} must be strictly positive (got {value})")
            }
            Violation::Negative { field, value } => {
                write!(f, "{field} must be non-negative (got {value})")
            }
            Violation::DutyOutOfRange { duty } => {
                write!(f, "duty must lie in (0, 1) (got {duty})")
            }
            Violation::OutputBelowInput { vin, vout } => {
                write!(f, "vout_target ({vout}) must exceed vin ({vin})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid parameters: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn names(&self, field: &str) -> bool {
        self.violations.iter().any(|v| match v {
            Violation::NonPositive { field: f, .. } | Violation::Negative { field: f, .. } => {
                *f == field
            }
            Violation::DutyOutOfRange { .. } => field == "duty",
            Violation::OutputBelowInput { .. } => field == "vout_target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DesignWarning {
    /// duty ≤ 0.5: the switches never overlap and the three-mode analysis
    /// does not hold. Closed forms still evaluate; the built-in model
    /// refuses to simulate.
    NoSwitchOverlap,
}

impl fmt::Display for DesignWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignWarning::NoSwitchOverlap => {
                f.write_str("duty <= 0.5: switches never overlap, interleaved mode set not valid")
            }
        }
    }
}

/// A design whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedDesign {
    design: ConverterDesign,
    warnings: Vec<DesignWarning>,
}

impl ValidatedDesign {
    pub fn design(&self) -> &ConverterDesign {
        &self.design
    }

    pub fn warnings(&self) -> &[DesignWarning] {
        &self.warnings
    }

    pub fn into_inner(self) -> ConverterDesign {
        self.design
    }
}

impl std::ops::Deref for ValidatedDesign {
    type Target = ConverterDesign;

    fn deref(&self) -> &ConverterDesign {
        &self.design
    }
}

/// Checks every invariant of `design` and reports all violations at once.
pub fn validate(design: &ConverterDesign) -> Result<ValidatedDesign, ValidationError> {
    let mut violations = Vec::new();
    let positive = [
        ("vin", design.vin),
        ("n_ratio", design.n_ratio),
        ("fsw", design.fsw),
        ("lm", design.lm),
        ("lk", design.lk),
        ("cap", design.cap),
        ("rload", design.rload),
    ];
    for (field, value) in positive {
        if !(value > 0.0) || !value.is_finite() {
            violations.push(Violation::NonPositive { field, value });
        }
    }
    if !(design.duty > 0.0 && design.duty < 1.0) {
        violations.push(Violation::DutyOutOfRange { duty: design.duty });
    }
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }
    let mut warnings = Vec::new();
    if !design.interleave_valid() {
        warnings.push(DesignWarning::NoSwitchOverlap);
    }
    Ok(ValidatedDesign {
        design: *design,
        warnings,
    })
}
