//! Closed-form analysis, topology comparison, netlist handling, transient
//! simulation and post-processing for a two-phase interleaved high step-up
//! converter with coupled inductors and a diode-capacitor multiplier.

pub mod analytic;
pub mod compare;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod netlist;
