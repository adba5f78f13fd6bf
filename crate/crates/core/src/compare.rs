//! Formula-level comparison of the proposed converter against four
//! published high step-up topologies.
//!
//! Stress entries given in terms of the output voltage are converted to
//! volts with that topology's own output `Vo = gain·vin`, so all rows are
//! compared at one common input voltage.

use serde::Serialize;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyId {
    Ref5,
    Ref6,
    Ref10,
    Ref11,
    Proposed,
}

impl TopologyId {
    /// Table order.
    pub const ALL: [TopologyId; 5] = [
        TopologyId::Ref5,
        TopologyId::Ref6,
        TopologyId::Ref10,
        TopologyId::Ref11,
        TopologyId::Proposed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TopologyId::Ref5 => "ref5",
            TopologyId::Ref6 => "ref6",
            TopologyId::Ref10 => "ref10",
            TopologyId::Ref11 => "ref11",
            TopologyId::Proposed => "proposed",
        }
    }

    fn meta(&self) -> Metadata {
        use InputCurrent::*;
        let (s, d, c, single, coupled, shared, input) = match self {
            TopologyId::Ref5 => (2, 2, 4, 1, 1, true, Continuous),
            TopologyId::Ref6 => (2, 5, 4, 0, 2, false, Continuous),
            TopologyId::Ref10 => (1, 2, 3, 2, 0, true, Discontinuous),
            TopologyId::Ref11 => (2, 4, 4, 0, 2, true, Continuous),
            TopologyId::Proposed => (2, 4, 4, 0, 2, false, Continuous),
        };
        Metadata {
            n_switches: s,
            n_diodes: d,
            n_caps: c,
            n_single_cores: single,
            n_coupled_cores: coupled,
            shared_ground: shared,
            input_current: input,
        }
    }
}

impl std::str::FromStr for TopologyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TopologyId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown topology '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCurrent {
    Continuous,
    Discontinuous,
}

impl InputCurrent {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputCurrent::Continuous => "continuous",
            InputCurrent::Discontinuous => "discontinuous",
        }
    }
}

struct Metadata {
    n_switches: u32,
    n_diodes: u32,
    n_caps: u32,
    n_single_cores: u32,
    n_coupled_cores: u32,
    shared_ground: bool,
    input_current: InputCurrent,
}

/// Electrical figures of one row. `None` marks the formula as undefined at
/// the requested point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub topology: TopologyId,
    pub gain: Option<f64>,
    pub vsw: Option<f64>,
    pub vd: Option<f64>,
    pub n_switches: u32,
    pub n_diodes: u32,
    pub n_caps: u32,
    pub n_single_cores: u32,
    pub n_coupled_cores: u32,
    pub shared_ground: bool,
    pub input_current: InputCurrent,
}

impl ComparisonRow {
    pub fn counts(&self) -> String {
        format!("{}/{}/{}", self.n_switches, self.n_diodes, self.n_caps)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("{topology}: duty {duty} outside the valid domain of its gain formula")]
    DutyOutOfDomain { topology: &'static str, duty: f64 },
    #[error("{topology}: turns ratio {n} outside the valid domain of its gain formula")]
    RatioOutOfDomain { topology: &'static str, n: f64 },
    #[error("malformed comparison CSV: {0}")]
    Csv(String),
}

/// Evaluates one table row at `(n_ratio, duty, vin)`.
pub fn topology_row(
    id: TopologyId,
    n_ratio: f64,
    duty: f64,
    vin: f64,
) -> Result<ComparisonRow, CompareError> {
    let topology = id.as_str();
    if !(duty > 0.0 && duty < 1.0) {
        return Err(CompareError::DutyOutOfDomain { topology, duty });
    }
    let n = n_ratio;
    let inv = 1.0 / (1.0 - duty);
    let (gain, vsw_of, vd_of): (f64, Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = match id {
        TopologyId::Ref5 => {
            if !(n > 1.0) {
                return Err(CompareError::RatioOutOfDomain { topology, n });
            }
            (
                (2.0 * n - 1.0) / ((n - 1.0) * (1.0 - duty)),
                Box::new(move |_vo| vin * inv),
                Box::new(move |vo| n * vo / (2.0 * n - 1.0)),
            )
        }
        TopologyId::Ref6 => (
            (3.0 * n + 1.0) * inv,
            Box::new(move |vo| vo / (3.0 * n + 1.0)),
            Box::new(move |vo| 2.0 * n * vo / (3.0 * n + 1.0)),
        ),
        TopologyId::Ref10 => {
            if duty >= 0.5 {
                return Err(CompareError::DutyOutOfDomain { topology, duty });
            }
            (1.0 / (1.0 - 2.0 * duty), Box::new(|vo| vo), Box::new(|vo| vo))
        }
        TopologyId::Ref11 => (
            2.0 * (n + 1.0) * inv,
            Box::new(move |vo| vo / (2.0 * (n + 1.0))),
            Box::new(move |vo| n * vo / (n + 1.0)),
        ),
        TopologyId::Proposed => (
            crate::analytic::gain_floor(n) * inv,
            Box::new(move |_vo| vin * inv),
            Box::new(move |_vo| 2.0 * vin * inv),
        ),
    };
    let vo = gain * vin;
    let m = id.meta();
    Ok(ComparisonRow {
        topology: id,
        gain: Some(gain),
        vsw: Some(vsw_of(vo)),
        vd: Some(vd_of(vo)),
        n_switches: m.n_switches,
        n_diodes: m.n_diodes,
        n_caps: m.n_caps,
        n_single_cores: m.n_single_cores,
        n_coupled_cores: m.n_coupled_cores,
        shared_ground: m.shared_ground,
        input_current: m.input_current,
    })
}

fn undefined_row(id: TopologyId) -> ComparisonRow {
    let m = id.meta();
    ComparisonRow {
        topology: id,
        gain: None,
        vsw: None,
        vd: None,
        n_switches: m.n_switches,
        n_diodes: m.n_diodes,
        n_caps: m.n_caps,
        n_single_cores: m.n_single_cores,
        n_coupled_cores: m.n_coupled_cores,
        shared_ground: m.shared_ground,
        input_current: m.input_current,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub n_ratio: f64,
    pub duty: f64,
    pub vin: f64,
    pub rows: Vec<ComparisonRow>,
}

/// All five rows in table order. Rows whose formulas are undefined at the
/// point are kept with empty electrical fields.
pub fn comparison_table(n_ratio: f64, duty: f64, vin: f64) -> ComparisonTable {
    let rows = TopologyId::ALL
        .into_iter()
        .map(|id| topology_row(id, n_ratio, duty, vin).unwrap_or_else(|_| undefined_row(id)))
        .collect();
    ComparisonTable {
        n_ratio,
        duty,
        vin,
        rows,
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}"),
        None => "undefined".to_string(),
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "topology",
    "gain",
    "vsw",
    "vd",
    "n_switches",
    "n_diodes",
    "n_caps",
    "n_single_cores",
    "n_coupled_cores",
    "shared_ground",
    "input_current",
];

impl ComparisonTable {
    pub fn row(&self, id: TopologyId) -> &ComparisonRow {
        self.rows.iter().find(|r| r.topology == id).expect("all rows present")
    }

    /// Column-aligned markdown.
    pub fn to_markdown(&self) -> String {
        let header = [
            "topology", "gain", "vsw [V]", "vd [V]", "S/D/C", "single cores", "coupled cores",
            "shared ground", "input current",
        ];
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.topology.as_str().to_string(),
                    fmt_opt(r.gain, 2),
                    fmt_opt(r.vsw, 2),
                    fmt_opt(r.vd, 2),
                    r.counts(),
                    r.n_single_cores.to_string(),
                    r.n_coupled_cores.to_string(),
                    if r.shared_ground { "yes" } else { "no" }.to_string(),
                    r.input_current.as_str().to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Comparison at N = {}, D = {}, Vin = {} V (all rows at the same input voltage)",
            self.n_ratio, self.duty, self.vin
        );
        let _ = writeln!(s);
        let line = |cells: &mut dyn Iterator<Item = String>| -> String {
            let mut out = String::from("|");
            for (cell, w) in cells.zip(&widths) {
                let _ = write!(out, " {cell:<w$} |");
            }
            out
        };
        let _ = writeln!(s, "{}", line(&mut header.iter().map(|h| h.to_string())));
        let _ = writeln!(s, "{}", line(&mut widths.iter().map(|w| "-".repeat(*w))));
        for row in body {
            let _ = writeln!(s, "{}", line(&mut row.into_iter()));
        }
        s
    }

    /// One header row then one row per topology, full precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:?}"));
            w.write_record([
                r.topology.as_str().to_string(),
                opt(r.gain),
                opt(r.vsw),
                opt(r.vd),
                r.n_switches.to_string(),
                r.n_diodes.to_string(),
                r.n_caps.to_string(),
                r.n_single_cores.to_string(),
                r.n_coupled_cores.to_string(),
                r.shared_ground.to_string(),
                r.input_current.as_str().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Reads rows back from [`ComparisonTable::to_csv`] output. The
    /// evaluation point is not part of the CSV and must be supplied.
    pub fn from_csv(text: &str, n_ratio: f64, duty: f64, vin: f64) -> Result<Self, CompareError> {
        let err = |m: &str| CompareError::Csv(m.to_string());
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| err(&e.to_string()))?;
        if headers.iter().ne(CSV_HEADER) {
            return Err(err("unexpected header"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| err(&e.to_string()))?;
            let f = |i: usize| rec.get(i).ok_or_else(|| err("short record"));
            let opt = |s: &str| -> Result<Option<f64>, CompareError> {
                if s == "undefined" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| err(s))
                }
            };
            let int = |s: &str| -> Result<u32, CompareError> { s.parse().map_err(|_| err(s)) };
            rows.push(ComparisonRow {
                topology: f(0)?.parse().map_err(|e: String| err(&e))?,
                gain: opt(f(1)?)?,
                vsw: opt(f(2)?)?,
                vd: opt(f(3)?)?,
                n_switches: int(f(4)?)?,
                n_diodes: int(f(5)?)?,
                n_caps: int(f(6)?)?,
                n_single_cores: int(f(7)?)?,
                n_coupled_cores: int(f(8)?)?,
                shared_ground: f(9)?.parse().map_err(|_| err("shared_ground"))?,
                input_current: match f(10)? {
                    "continuous" => InputCurrent::Continuous,
                    "discontinuous" => InputCurrent::Discontinuous,
                    other => return Err(err(other)),
                },
            });
        }
        Ok(Self {
            n_ratio,
            duty,
            vin,
            rows,
        })
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_markdown())
    }
}
