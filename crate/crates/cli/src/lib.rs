//! Batch front end for additive regression with SPD responses: simulation
//! benchmarks, fitting on CSV data, prediction, evaluation and export.

pub mod commands;
pub mod model;
pub mod table;

use std::fmt;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub const GENERAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const SIMULATION: i32 = 3;
    pub const NO_CONVERGENCE: i32 = 4;

    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(Self::USAGE, error)
    }

    pub fn general(error: impl Into<anyhow::Error>) -> Self {
        Self::new(Self::GENERAL, error)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}
