//! End-to-end commands: run, sweep, report and synthetic data generation.

mod config;
mod report;
mod run;

pub use config::{AlignmentSection, BasisNetSection, DataPaths, PipelineConfig, ReportSection, SyntheticSpec};
pub use report::{cmd_report, render, NodeRow, ObjectivePoint, RunReport, REPORT_FILE, REPORT_SCHEMA};
pub use run::{cmd_run, cmd_sweep, cmd_synth, read_matrix_csv, write_matrix_csv, Timings};
