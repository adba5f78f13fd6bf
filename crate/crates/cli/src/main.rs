//! `stepup` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 simulation did not
//! converge, 4 simulation disagrees with the closed forms, 5 partial sweep
//! failure or other runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use stepup_core::analytic::{self, FormulaMode, SearchLimits, SearchOutcome, SearchScore};
use stepup_core::compare;
use stepup_core::engine::{self, EngineConfig};
use stepup_core::metrics;
use stepup_core::model::{self, ConverterDesign, DeviceParasitics, OperatingTargets};
use stepup_core::netlist;

const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CROSSCHECK: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

#[derive(Parser)]
#[command(name = "stepup", version, about = "Interleaved high step-up converter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form operating point and consistency audit.
    Analyze(AnalyzeArgs),
    /// Time-domain simulation with crosscheck against the closed forms.
    Simulate(SimulateArgs),
    /// Efficiency versus output power.
    Sweep(SweepArgs),
    /// Topology comparison table.
    Compare(CompareArgs),
    /// Duty and turns-ratio selection for a target operating point.
    Design(DesignArgs),
    /// Consistency audit of the closed forms only.
    Audit(DesignSource),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Simulation parameter set (10 µF capacitors).
    Sim,
    /// Hardware prototype parameter set (1 µF capacitors).
    Proto,
}

#[derive(Args, Clone)]
struct DesignSource {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    vin: Option<f64>,
    #[arg(long = "n")]
    n_ratio: Option<f64>,
    #[arg(long)]
    duty: Option<f64>,
    #[arg(long)]
    fsw: Option<f64>,
    #[arg(long)]
    rload: Option<f64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    src: DesignSource,
    #[arg(long)]
    mode: Option<FormulaMode>,
    /// Print JSON instead of markdown.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    max_periods: Option<usize>,
    #[arg(long)]
    ss_tol: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    src: DesignSource,
    #[command(flatten)]
    engine: EngineArgs,
    /// Relative crosscheck tolerance.
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
    /// Simulate an arbitrary netlist file instead of the built-in converter.
    #[arg(long)]
    netlist: Option<PathBuf>,
    /// Period for netlists without PWM, seconds.
    #[arg(long)]
    period: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    src: DesignSource,
    #[command(flatten)]
    engine: EngineArgs,
    /// Output powers in watts.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100.0, 200.0, 300.0, 400.0, 500.0])]
    loads: Vec<f64>,
    /// Evaluate with all parasitics set to zero.
    #[arg(long)]
    zero_parasitics: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "n", default_value_t = model::REFERENCE_TURNS_RATIO)]
    n_ratio: f64,
    #[arg(long = "d", alias = "duty", default_value_t = 0.73)]
    duty: f64,
    #[arg(long, default_value_t = 30.0)]
    vin: f64,
    /// Print CSV instead of markdown.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Stress,
    Loss,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    vin: f64,
    #[arg(long)]
    vout: f64,
    #[arg(long, default_value_t = model::PROTOTYPE_RATED_POWER)]
    pout: f64,
    /// Candidate turns ratios.
    #[arg(long = "n", value_delimiter = ',', default_values_t = vec![model::REFERENCE_TURNS_RATIO])]
    n_ratios: Vec<f64>,
    #[arg(long)]
    vsw_max: Option<f64>,
    #[arg(long)]
    vd_max: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    duty_min: f64,
    #[arg(long, default_value_t = 1.0)]
    duty_max: f64,
    #[arg(long, value_enum, default_value_t = Score::Stress)]
    score: Score,
}

/// Contents of a `--config` file. Every field is optional; flags override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    design: Option<ConverterDesign>,
    design_file: Option<PathBuf>,
    parasitics: Option<DeviceParasitics>,
    formula_mode: Option<FormulaMode>,
    engine: Option<EngineSection>,
    output_dir: Option<PathBuf>,
    emit: Option<Emit>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSection {
    steps_per_period: Option<usize>,
    max_periods: Option<usize>,
    ss_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Emit {
    csv: bool,
    md: bool,
    svg: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self { csv: true, md: true, svg: true }
    }
}

/// A fully resolved configuration.
struct Resolved {
    design: ConverterDesign,
    parasitics: DeviceParasitics,
    mode: FormulaMode,
    engine: EngineConfig,
    out: Option<PathBuf>,
    emit: Emit,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit(EXIT_RUNTIME, e.into())
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Exit {
    Exit(EXIT_INVALID, e.into())
}

fn resolve(src: &DesignSource, engine_args: Option<&EngineArgs>) -> Result<Resolved, Exit> {
    let cfg: RunConfig = match &src.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(invalid)?
        }
        None => RunConfig::default(),
    };
    let base_dir = src.config.as_ref().and_then(|p| p.parent()).unwrap_or(Path::new("."));
    let (mut design, mut parasitics) = match (src.preset, cfg.design, &cfg.design_file) {
        (Some(Preset::Proto), _, _) => model::preset_prototype(),
        (Some(Preset::Sim), _, _) => (model::preset_simulation(), DeviceParasitics::default()),
        (None, Some(d), _) => (d, DeviceParasitics::default()),
        (None, None, Some(f)) => {
            let path = base_dir.join(f);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading design file {}", path.display()))
                .map_err(invalid)?;
            (ConverterDesign::from_json(&text).map_err(invalid)?, DeviceParasitics::default())
        }
        (None, None, None) => (model::preset_simulation(), DeviceParasitics::default()),
    };
    if let Some(p) = cfg.parasitics {
        parasitics = p;
    }
    for (slot, v) in [
        (&mut design.vin, src.vin),
        (&mut design.n_ratio, src.n_ratio),
        (&mut design.duty, src.duty),
        (&mut design.fsw, src.fsw),
        (&mut design.rload, src.rload),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    model::validate(&design).map_err(invalid)?;
    parasitics.validate().map_err(invalid)?;
    let mut engine = EngineConfig::default();
    if let Some(e) = cfg.engine {
        engine.steps_per_period = e.steps_per_period.unwrap_or(engine.steps_per_period);
        engine.max_periods = e.max_periods.unwrap_or(engine.max_periods);
        engine.ss_tolerance = e.ss_tolerance.unwrap_or(engine.ss_tolerance);
    }
    if let Some(a) = engine_args {
        engine.steps_per_period = a.steps.unwrap_or(engine.steps_per_period);
        engine.max_periods = a.max_periods.unwrap_or(engine.max_periods);
        engine.ss_tolerance = a.ss_tol.unwrap_or(engine.ss_tolerance);
    }
    Ok(Resolved {
        design,
        parasitics,
        mode: cfg.formula_mode.unwrap_or_default(),
        engine,
        out: src.out.clone().or(cfg.output_dir),
        emit: cfg.emit.unwrap_or_default(),
    })
}

fn header(r: &Resolved) -> String {
    let d = &r.design;
    let p = &r.parasitics;
    format!(
        "# stepup report\n\n\
         design: vin {} V, N {}, D {}, fsw {} Hz, Lm {} H, Lk {} H, C {} F, R {} Ω\n\n\
         parasitics: rds_on {} Ω, vf {} V, esr {} Ω, r_winding {} Ω\n\n\
         engine: {} steps/period, max {} periods, steady-state tolerance {:e}\n\n",
        d.vin,
        d.n_ratio,
        d.duty,
        d.fsw,
        d.lm,
        d.lk,
        d.cap,
        d.rload,
        p.rds_on,
        p.vf,
        p.esr,
        p.r_winding,
        r.engine.steps_per_period,
        r.engine.max_periods,
        r.engine.ss_tolerance
    )
}

fn write_out(dir: &Option<PathBuf>, name: &str, contents: &str) -> Result<(), Exit> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(invalid)?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Exit> {
    let mut r = resolve(&a.src, None)?;
    if let Some(m) = a.mode {
        r.mode = m;
    }
    let report = analytic::analyze(&r.design, r.mode).map_err(invalid)?;
    let audit = analytic::audit_consistency(&r.design).map_err(invalid)?;
    if a.json {
        let doc = serde_json::json!({ "report": report, "audit": audit });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        let text = format!("{}{}\n{}", header(&r), report.to_markdown(), audit.to_markdown());
        print!("{text}");
        if r.emit.md {
            write_out(&r.out, "report.md", &text)?;
        }
    }
    Ok(())
}

fn cmd_audit(src: &DesignSource) -> Result<(), Exit> {
    let r = resolve(src, None)?;
    let audit = analytic::audit_consistency(&r.design).map_err(invalid)?;
    let text = format!("{}{}", header(&r), audit.to_markdown());
    print!("{text}");
    if r.emit.md {
        write_out(&r.out, "report.md", &text)?;
    }
    Ok(())
}

fn simulate_netlist(path: &Path, a: &SimulateArgs) -> Result<(), Exit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
    let net = netlist::parse(&text).map_err(invalid)?;
    let flat = netlist::expand_coupled(&net).map_err(invalid)?;
    let r = resolve(&a.src, Some(&a.engine))?;
    let cfg = EngineConfig {
        period: a.period,
        ..r.engine
    };
    let (waves, steady) = engine::run_transient(&flat, &cfg).map_err(invalid)?;
    println!(
        "periods run: {}, residual {:e}, converged: {}",
        steady.periods_run, steady.residual, steady.converged
    );
    for (name, data) in waves.names.iter().zip(&waves.data) {
        let s = metrics::stats(&waves.time, data)?;
        println!("{name}: avg {:.6} rms {:.6} min {:.6} max {:.6}", s.avg, s.rms, s.min, s.max);
    }
    if r.emit.csv {
        write_out(&r.out, "waves.csv", &waves.to_csv())?;
    }
    if !steady.converged {
        return Err(Exit(EXIT_NOT_CONVERGED, anyhow::anyhow!("no periodic steady state after {} periods", steady.periods_run)));
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Exit> {
    if let Some(p) = &a.netlist {
        return simulate_netlist(p, a);
    }
    let r = resolve(&a.src, Some(&a.engine))?;
    if !(a.tol >= 0.0) {
        return Err(invalid(anyhow::anyhow!("--tol must be non-negative")));
    }
    let report = analytic::analyze(&r.design, r.mode).map_err(invalid)?;
    let (steady, probes) = metrics::simulate_design(&r.design, &r.engine).map_err(|e| match e {
        metrics::MetricsError::Netlist(_) => invalid(e),
        e => Exit(EXIT_RUNTIME, e.into()),
    })?;
    let mut text = header(&r);
    text.push_str(&format!(
        "steady state: converged {}, periods {}, residual {:e}\n\n",
        steady.converged, steady.periods_run, steady.residual
    ));
    if r.emit.csv {
        write_out(&r.out, "waves.csv", &steady.final_period.to_csv())?;
    }
    if !steady.converged {
        print!("{text}");
        if r.emit.md {
            write_out(&r.out, "report.md", &text)?;
        }
        return Err(Exit(
            EXIT_NOT_CONVERGED,
            anyhow::anyhow!("no periodic steady state after {} periods (residual {:e})", steady.periods_run, steady.residual),
        ));
    }
    let op = metrics::extract_operating_point(&steady, &probes)?;
    let losses = metrics::conduction_losses(&op, &r.parasitics);
    let check = metrics::crosscheck(&report, &op, a.tol);
    let ripple = metrics::ripple_report(&op.iin, &op.ilm[0], &op.ilm[1]);
    text.push_str(&report.to_markdown());
    text.push('\n');
    text.push_str(&op.to_markdown());
    text.push('\n');
    text.push_str(&check.to_markdown());
    text.push('\n');
    text.push_str(&losses.to_markdown(&r.parasitics));
    text.push_str(&format!(
        "\n## Interleaving\n\ninput ripple {:.4} A pk-pk, phase ripple {:.4} A pk-pk, reduction factor {:.3}\n",
        ripple.iin_pkpk, ripple.phase_pkpk, ripple.reduction_factor
    ));
    text.push_str("\n## Diode turn-off\n\n");
    let w = &steady.final_period;
    for p in &probes.diodes {
        let i = w.current(&p.name).unwrap_or(&[]);
        let peak = i.iter().copied().fold(0.0f64, f64::max);
        let verdict = metrics::zcs_check(i, 1e-3 * peak.max(1e-9));
        text.push_str(&format!("{}: {:?}\n", p.name, verdict));
    }
    print!("{text}");
    if r.emit.md {
        write_out(&r.out, "report.md", &text)?;
    }
    if r.emit.csv {
        write_out(&r.out, "op.csv", &op.to_csv())?;
        write_out(&r.out, "losses.csv", &losses.to_csv())?;
    }
    if !check.passed() {
        return Err(Exit(
            EXIT_CROSSCHECK,
            anyhow::anyhow!("crosscheck failed: max deviation {:.3}%", check.max_deviation() * 100.0),
        ));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Exit> {
    let mut r = resolve(&a.src, Some(&a.engine))?;
    if a.zero_parasitics {
        r.parasitics = DeviceParasitics::zero();
    }
    if a.loads.is_empty() || a.loads.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid(anyhow::anyhow!("--loads must be positive watts")));
    }
    let points = metrics::efficiency_sweep(&r.design, &r.parasitics, &a.loads, &r.engine).map_err(invalid)?;
    let mut text = header(&r);
    text.push_str("## Efficiency sweep\n\n| target W | pout W | efficiency | converged |\n|---|---|---|---|\n");
    for p in &points {
        text.push_str(&format!(
            "| {:.1} | {:.2} | {:.3}% | {} |\n",
            p.target_pout,
            p.pout,
            p.efficiency * 100.0,
            p.converged
        ));
    }
    print!("{text}");
    if r.emit.md {
        write_out(&r.out, "report.md", &text)?;
    }
    if r.emit.csv {
        write_out(&r.out, "efficiency.csv", &metrics::sweep_csv(&points))?;
    }
    if r.emit.svg {
        write_out(&r.out, "efficiency.svg", &metrics::sweep_svg(&points))?;
    }
    let failed: Vec<String> = points
        .iter()
        .filter(|p| !p.converged || p.losses.is_none())
        .map(|p| format!("{} W", p.target_pout))
        .collect();
    if !failed.is_empty() {
        return Err(Exit(EXIT_RUNTIME, anyhow::anyhow!("sweep points failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<(), Exit> {
    for (name, v) in [("n", a.n_ratio), ("d", a.duty), ("vin", a.vin)] {
        if !v.is_finite() {
            return Err(invalid(anyhow::anyhow!("--{name} must be finite")));
        }
    }
    let table = compare::comparison_table(a.n_ratio, a.duty, a.vin);
    if a.csv {
        print!("{}", table.to_csv());
    } else {
        print!("{}", table.to_markdown());
    }
    write_out(&a.out, "compare.csv", &table.to_csv())?;
    Ok(())
}

fn cmd_design(a: &DesignArgs) -> Result<(), Exit> {
    let targets = OperatingTargets::new(a.vin, a.vout, a.pout).map_err(invalid)?;
    let limits = SearchLimits {
        vsw_max: a.vsw_max,
        vd_max: a.vd_max,
        duty_range: (a.duty_min, a.duty_max),
    };
    let score = match a.score {
        Score::Stress => SearchScore::Stress,
        Score::Loss => SearchScore::ConductionLoss(DeviceParasitics::default()),
    };
    let outcome = analytic::design_search(&targets, &a.n_ratios, &limits, score).map_err(invalid)?;
    match outcome {
        SearchOutcome::NoFeasibleDesign => println!("no feasible design"),
        SearchOutcome::Ranked(c) => {
            println!("| rank | N | D | Vsw [V] | Vd [V] | ILm [A] | est. loss [W] | note |");
            println!("|---|---|---|---|---|---|---|---|");
            for x in c {
                println!(
                    "| {} | {} | {:.4} | {:.2} | {:.2} | {:.2} | {} | {} |",
                    x.rank,
                    x.n_ratio,
                    x.duty,
                    x.vsw,
                    x.vd,
                    x.ilm_avg,
                    x.est_loss.map_or("-".to_string(), |l| format!("{l:.2}")),
                    if x.overlap_warning { "no switch overlap (D ≤ 0.5)" } else { "" }
                );
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Exit> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Design(a) => cmd_design(a),
        Command::Audit(a) => cmd_audit(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

