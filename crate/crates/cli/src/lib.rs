//! Scenario runner for `conc-lab-core`.
//!
//! A scenario is a JSON file ([`config::ScenarioConfig`]). [`pipeline::run_scenario`]
//! executes the stages it asks for and writes CSV tables, a JSON summary with pass/fail
//! rules and a manifest of every tolerance into the output directory.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod scenarios;

use std::fmt;

use conc_lab_core::Error;

/// Process exit codes, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitClass {
    Success,
    Internal,
    Config,
    Hypothesis,
    Contraction,
    Newton,
    Acceptance,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        match self {
            ExitClass::Success => 0,
            ExitClass::Internal => 1,
            ExitClass::Config => 2,
            ExitClass::Hypothesis => 3,
            ExitClass::Contraction => 4,
            ExitClass::Newton => 5,
            ExitClass::Acceptance => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitClass::Success => "no",
            ExitClass::Internal => "internal",
            ExitClass::Config => "config",
            ExitClass::Hypothesis => "hypothesis",
            ExitClass::Contraction => "contraction",
            ExitClass::Newton => "newton",
            ExitClass::Acceptance => "acceptance",
        }
    }

    pub fn of(error: &Error) -> Self {
        match error {
            Error::HypothesisViolation { .. } => ExitClass::Hypothesis,
            Error::ContractionFailure(_)
            | Error::LinearSolveStall { .. }
            | Error::EigEstimateStall(_)
            | Error::DegenerateBasis(_)
            | Error::Margin { .. } => ExitClass::Contraction,
            Error::NewtonDivergence(_)
            | Error::BoundaryPeak(_)
            | Error::DegeneratePeak
            | Error::InsufficientTail
            | Error::SweepInconsistent { .. } => ExitClass::Newton,
            _ => ExitClass::Internal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunError {
    pub class: ExitClass,
    pub stage: &'static str,
    pub message: String,
}

impl RunError {
    pub fn new(class: ExitClass, stage: &'static str, message: String) -> Self {
        Self { class, stage, message }
    }

    pub fn from_core(stage: &'static str, error: Error) -> Self {
        Self::new(ExitClass::of(&error), stage, error.to_string())
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failure in stage {}: {}", self.class.label(), self.stage, self.message)
    }
}

impl std::error::Error for RunError {}

pub use config::ScenarioConfig;
pub use pipeline::{run_scenario, RunOptions, RunSummary, Stage};
