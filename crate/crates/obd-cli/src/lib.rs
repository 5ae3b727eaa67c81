//! Experiment harness for the offline-behavior-distillation lab: seeded
//! pipelines, normalized-return evaluation, the comparison/sweep
//! experiments, and CSV emission.

use thiserror::Error;

pub mod config;
pub mod csvout;
pub mod eval;
pub mod experiments;

pub use config::Config;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or command line; process exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Numerical failure (non-finite values, violated verification);
    /// process exit code 3.
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<obd_core::distill::DistillError> for HarnessError {
    fn from(e: obd_core::distill::DistillError) -> Self {
        match e {
            obd_core::distill::DistillError::NonFinite(step) => {
                HarnessError::Numerical(format!("non-finite value at outer step {step}"))
            }
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<obd_core::policy::PolicyError> for HarnessError {
    fn from(e: obd_core::policy::PolicyError) -> Self {
        match e {
            obd_core::policy::PolicyError::NonFinite { what, step } => {
                HarnessError::Numerical(format!("non-finite {what} at step {step}"))
            }
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<obd_core::datagen::DataError> for HarnessError {
    fn from(e: obd_core::datagen::DataError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<obd_core::density::DensityError> for HarnessError {
    fn from(e: obd_core::density::DensityError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<obd_core::bounds::BoundsError> for HarnessError {
    fn from(e: obd_core::bounds::BoundsError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

/// Run independent work items on up to `jobs` threads, preserving input
/// order in the output. Results are independent of `jobs`.
pub fn run_cells<T, F>(jobs: usize, cells: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if jobs <= 1 {
        return cells.into_iter().map(|f| f()).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool construction");
    pool.install(|| {
        use rayon::prelude::*;
        cells.into_par_iter().map(|f| f()).collect()
    })
}
