//! Experiment harness: dataset generation and persistence, run
//! configuration, the brute-force grid oracle, evaluation reports, and the
//! permutation-consistency suite behind the CLI.

mod dataset;
mod eval;
mod oracle;
mod permcheck;
mod runconfig;

pub use dataset::{Dataset, DatasetHeader, Sample, DATASET_VERSION};
pub use eval::{evaluate, EvalReport, SampleRow, REPORT_VERSION};
pub use oracle::{oracle_wsr, OracleResult};
pub use permcheck::{permutation_suite, PermutationReport};
pub use runconfig::RunConfig;
