//! Closed-form computational-cost model for the unrolled network and the
//! iterative solver it replaces.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters of the flop-count formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub k: usize,
    pub n_t: usize,
    /// Unrolled depth.
    pub depth: usize,
    /// Beamformer-update count assumed for the iterative baseline.
    pub baseline_updates: usize,
    /// Feature widths of the step-size head.
    pub eta_dims: Vec<usize>,
    /// Feature widths of the perturbation head.
    pub perturb_dims: Vec<usize>,
    /// Filter length shared by both heads.
    pub filter_order: usize,
}

impl CostConfig {
    /// The study defaults: widths `{5, 32, 2}` and `{k + 5, 32, 5}`,
    /// first-order filters, depth 2, three baseline updates.
    pub fn defaults(k: usize, n_t: usize, depth: usize) -> Self {
        CostConfig {
            k,
            n_t,
            depth,
            baseline_updates: 3,
            eta_dims: vec![5, 32, 2],
            perturb_dims: vec![k + 5, 32, 5],
            filter_order: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_t == 0 || self.depth == 0 || self.filter_order == 0 {
            return Err(Error::Contract(
                "k, n_t, depth, and filter_order must be >= 1".into(),
            ));
        }
        if self.baseline_updates == 0 {
            return Err(Error::Contract("baseline_updates must be >= 1".into()));
        }
        if self.eta_dims.is_empty() || self.perturb_dims.is_empty() {
            return Err(Error::Contract("head widths must be nonempty".into()));
        }
        Ok(())
    }

    /// Stacked variable count `5K`.
    pub fn stacked_len(&self) -> usize {
        5 * self.k
    }

    /// Directly-projected constraint count `5K + 1`.
    pub fn direct_constraints(&self) -> usize {
        5 * self.k + 1
    }
}

fn head_cost(k: u64, order: u64, dims: &[usize]) -> u64 {
    dims.iter()
        .map(|&p| k.pow(3) * (order - 1) + k * k * order + k * k * p as u64)
        .sum()
}

/// Flop count of one full forward pass through the unrolled model:
/// per layer, the beamformer refresh, both adjacency builds, both filter
/// heads, and the gradient walk plus projection.
pub fn usrmnet_flops(cfg: &CostConfig) -> Result<u64> {
    cfg.validate()?;
    let (k, n_t) = (cfg.k as u64, cfg.n_t as u64);
    let order = cfg.filter_order as u64;
    let m = cfg.stacked_len() as u64;
    let n_h = cfg.direct_constraints() as u64;
    let per_layer = k * n_t.pow(3)
        + 2 * k * k * n_t
        + head_cost(k, order, &cfg.eta_dims)
        + head_cost(k, order, &cfg.perturb_dims)
        + m * n_h
        + m;
    Ok(cfg.depth as u64 * per_layer)
}

/// Flop count of the iterative baseline: per beamformer update, one interior
/// solve of the auxiliary program plus the beamformer refresh.
pub fn hebf_flops(cfg: &CostConfig) -> Result<f64> {
    cfg.validate()?;
    let k = cfg.k as f64;
    let n_t = cfg.n_t as f64;
    Ok(cfg.baseline_updates as f64 * ((k * k + 3.0 * k).powf(3.5) + n_t.powf(2.7) + k * n_t.powi(3)))
}

/// Cost ratio of the unrolled model to the baseline, in percent.
pub fn ratio_w3(cfg: &CostConfig) -> Result<f64> {
    Ok(100.0 * usrmnet_flops(cfg)? as f64 / hebf_flops(cfg)?)
}

/// One row of the comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct CostRow {
    pub k: usize,
    pub usrmnet_flops: u64,
    pub hebf_flops: f64,
    pub ratio_pct: f64,
}

/// Builds comparison rows for the given user counts.
pub fn cost_table(ks: &[usize], n_t: usize, depth: usize) -> Result<Vec<CostRow>> {
    ks.iter()
        .map(|&k| {
            let cfg = CostConfig::defaults(k, n_t, depth);
            Ok(CostRow {
                k,
                usrmnet_flops: usrmnet_flops(&cfg)?,
                hebf_flops: hebf_flops(&cfg)?,
                ratio_pct: ratio_w3(&cfg)?,
            })
        })
        .collect()
}

/// Renders rows as CSV with a fixed column order.
pub fn cost_table_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("k,usrmnet_flops,hebf_flops,ratio_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6e},{:.4}\n",
            r.k, r.usrmnet_flops, r.hebf_flops, r.ratio_pct
        ));
    }
    out
}
