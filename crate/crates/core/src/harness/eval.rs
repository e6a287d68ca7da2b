//! Evaluation: per-sample forward passes, feasible-fraction and mean
//! weighted sum rate, with JSON/CSV report output.

use serde::{Deserialize, Serialize};

use crate::fbl;
use crate::harness::dataset::Dataset;
use crate::proj::{C1Spec, C2Evaluator};
use crate::unroll::{usrmnet_forward, UsrmNet};
use crate::Result;

pub const REPORT_VERSION: u32 = 1;

/// Per-sample evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    /// Seed of the sample's realization (stable identity under reordering).
    pub seed: u64,
    pub wsr: f64,
    pub vg: f64,
    pub feasible: bool,
}

/// Aggregated evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    /// What the numbers are measured against (oracle substitution note).
    pub reference: String,
    /// Mean objective over feasible samples only.
    pub mean_wsr_feasible: Option<f64>,
    /// Fraction of samples with zero constraint violation.
    pub feasible_fraction: f64,
    /// Mean objective ratio against a reference solver, when one was run.
    pub oracle_ratio: Option<f64>,
    pub rows: Vec<SampleRow>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "seed,wsr,vg,feasible";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{}\n",
                r.seed, r.wsr, r.vg, r.feasible
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        Ok(())
    }
}

/// Runs the model over every sample: the objective comes from the final
/// stacked vector, the violation from the final beamformer. Aggregates are
/// computed over rows sorted by sample seed, so dataset order cannot change
/// them.
pub fn evaluate(model: &UsrmNet, dataset: &Dataset) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let spec = C1Spec::from_realization(&sample.real)?;
        let trace = usrmnet_forward(model, &sample.x0, &sample.w0, &sample.real, &spec)?;
        let ev = C2Evaluator::new(&sample.real, &trace.w);
        let (vg, _) = ev.violation(&trace.x)?;
        rows.push(SampleRow {
            seed: sample.real.seed,
            wsr: fbl::wsr(&trace.x, &sample.real.sys)?,
            vg,
            feasible: vg == 0.0,
        });
    }

    let mut sorted: Vec<&SampleRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let feasible: Vec<&&SampleRow> = sorted.iter().filter(|r| r.feasible).collect();
    let mean_wsr_feasible = if feasible.is_empty() {
        None
    } else {
        Some(feasible.iter().map(|r| r.wsr).sum::<f64>() / feasible.len() as f64)
    };
    let feasible_fraction = feasible.len() as f64 / rows.len().max(1) as f64;

    Ok(EvalReport {
        version: REPORT_VERSION,
        reference: "none".into(),
        mean_wsr_feasible,
        feasible_fraction,
        oracle_ratio: None,
        rows,
    })
}
