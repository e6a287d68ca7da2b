//! Constraint-set machinery: the directly-projected constraint family, the
//! penalized constraint family, the single-constraint projection operator,
//! and the mean-violation metric.
//!
//! The decision vector stacks five length-`K` blocks as
//! `x = [q; sinr_lb; sinr_ub; disp; disp_root]`:
//!
//! * `q` — uplink-dual transmit powers,
//! * `sinr_lb` — per-user SINR lower bounds (enter the objective),
//! * `sinr_ub` — per-user SINR upper bounds,
//! * `disp` — dispersion bounds,
//! * `disp_root` — square-root-of-dispersion bounds (the rate penalty).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::fbl::{self, Beamformers, Realization};
use crate::{Error, Result};

pub const BLOCKS: usize = 5;

/// Stacked decision vector of length `5K` with block accessors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptVector {
    k: usize,
    data: Vec<f64>,
}

impl OptVector {
    pub fn zeros(k: usize) -> Self {
        OptVector {
            k,
            data: vec![0.0; BLOCKS * k],
        }
    }

    pub fn from_vec(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != BLOCKS * k {
            return Err(Error::Contract(format!(
                "OptVector wants {} entries for k = {k}, got {}",
                BLOCKS * k,
                data.len()
            )));
        }
        Ok(OptVector { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn block(&self, b: usize) -> &[f64] {
        &self.data[b * self.k..(b + 1) * self.k]
    }

    fn block_mut(&mut self, b: usize) -> &mut [f64] {
        &mut self.data[b * self.k..(b + 1) * self.k]
    }

    pub fn q(&self) -> &[f64] {
        self.block(0)
    }

    pub fn q_mut(&mut self) -> &mut [f64] {
        self.block_mut(0)
    }

    pub fn sinr_lb(&self) -> &[f64] {
        self.block(1)
    }

    pub fn sinr_lb_mut(&mut self) -> &mut [f64] {
        self.block_mut(1)
    }

    pub fn sinr_ub(&self) -> &[f64] {
        self.block(2)
    }

    pub fn sinr_ub_mut(&mut self) -> &mut [f64] {
        self.block_mut(2)
    }

    pub fn disp(&self) -> &[f64] {
        self.block(3)
    }

    pub fn disp_mut(&mut self) -> &mut [f64] {
        self.block_mut(3)
    }

    pub fn disp_root(&self) -> &[f64] {
        self.block(4)
    }

    pub fn disp_root_mut(&mut self) -> &mut [f64] {
        self.block_mut(4)
    }

    /// Applies a user permutation to every block: output user `j` is input
    /// user `perm[j]`.
    pub fn permute_users(&self, perm: &[usize]) -> OptVector {
        assert_eq!(perm.len(), self.k);
        let mut out = OptVector::zeros(self.k);
        for b in 0..BLOCKS {
            for (j, &src) in perm.iter().enumerate() {
                out.block_mut(b)[j] = self.block(b)[src];
            }
        }
        out
    }
}

// --- Single-constraint projection ------------------------------------------

/// A differentiable scalar constraint `h(x) <= xi`.
pub trait ScalarConstraint {
    fn eval(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Affine constraint `a^T x <= xi`.
pub struct AffineConstraint {
    pub coeffs: Vec<f64>,
}

impl ScalarConstraint for AffineConstraint {
    fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    fn grad(&self, _x: &[f64]) -> Vec<f64> {
        self.coeffs.clone()
    }
}

/// Projects `x` onto `{h(x) <= xi}` with one gradient step: feasible points
/// pass through unchanged, infeasible points move along `-grad h` far enough
/// to land on the boundary (exactly, for affine `h`).
pub fn pocs(x: &[f64], h: &dyn ScalarConstraint, xi: f64) -> Result<Vec<f64>> {
    let value = h.eval(x);
    if value <= xi {
        return Ok(x.to_vec());
    }
    let grad = h.grad(x);
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    if norm2 <= 0.0 {
        return Err(Error::Degenerate(format!(
            "zero constraint gradient at infeasible point (h = {value}, xi = {xi})"
        )));
    }
    let step = (xi - value) / norm2;
    Ok(x.iter().zip(&grad).map(|(v, g)| v + step * g).collect())
}

// --- The directly-projected constraint family --------------------------------

/// Constants of the directly-projected constraints for one realization: the
/// minimum SINR `nu3`, the per-user full-power bounds `gamma_tilde`, the
/// power budget, and the induced dispersion box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Spec {
    pub nu3: f64,
    pub gamma_tilde: Vec<f64>,
    pub p_max: f64,
    disp_lo: f64,
    disp_hi: Vec<f64>,
    infeasible: Vec<bool>,
}

impl C1Spec {
    pub fn new(nu3: f64, gamma_tilde: Vec<f64>, p_max: f64) -> Result<Self> {
        if !(p_max > 0.0) {
            return Err(Error::Contract("p_max must be > 0".into()));
        }
        let disp_lo = fbl::dispersion(nu3)?;
        let disp_hi = gamma_tilde
            .iter()
            .map(|&g| fbl::dispersion(g))
            .collect::<Result<Vec<_>>>()?;
        let infeasible = gamma_tilde.iter().map(|&g| nu3 > g).collect();
        Ok(C1Spec {
            nu3,
            gamma_tilde,
            p_max,
            disp_lo,
            disp_hi,
            infeasible,
        })
    }

    pub fn from_realization(real: &Realization) -> Result<Self> {
        C1Spec::new(
            fbl::nu3(&real.sys)?,
            fbl::gamma_tilde(real),
            real.sys.p_max,
        )
    }

    pub fn k(&self) -> usize {
        self.gamma_tilde.len()
    }

    /// Count of scalar constraints in the family: four per-user boxes, the
    /// per-user nonnegativity of `q`, and the shared power sum.
    pub fn constraint_count(&self) -> usize {
        BLOCKS * self.k() + 1
    }

    /// Users whose minimum SINR exceeds their full-power bound; their upper
    /// boxes pin to `gamma_tilde` and the penalized family can never close.
    pub fn infeasible_users(&self) -> Vec<usize> {
        self.infeasible
            .iter()
            .enumerate()
            .filter_map(|(k, &bad)| bad.then_some(k))
            .collect()
    }

    pub fn disp_bounds(&self) -> (f64, &[f64]) {
        (self.disp_lo, &self.disp_hi)
    }

    /// Worst signed residual over every constraint in the family; feasible
    /// vectors come out `<= 0`.
    pub fn max_residual(&self, x: &OptVector) -> f64 {
        let k = self.k();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..k {
            worst = worst.max(self.nu3 - x.sinr_lb()[i]);
            worst = worst.max(x.sinr_ub()[i] - self.gamma_tilde[i]);
            worst = worst.max(self.disp_lo - x.disp()[i]);
            worst = worst.max(x.disp()[i] - self.disp_hi[i].max(self.disp_lo));
            worst = worst.max(-x.q()[i]);
        }
        worst.max(x.q().iter().sum::<f64>() - self.p_max)
    }

    pub fn permute_users(&self, perm: &[usize]) -> C1Spec {
        C1Spec {
            nu3: self.nu3,
            gamma_tilde: perm.iter().map(|&s| self.gamma_tilde[s]).collect(),
            p_max: self.p_max,
            disp_lo: self.disp_lo,
            disp_hi: perm.iter().map(|&s| self.disp_hi[s]).collect(),
            infeasible: perm.iter().map(|&s| self.infeasible[s]).collect(),
        }
    }
}

/// Relative slack applied to the power-sum feasibility test so that the
/// projection is bit-for-bit idempotent despite rounding in the shift.
const POWER_SUM_SLACK: f64 = 1e-14;

/// Projects the stacked vector onto the directly-projected family on the
/// tape. Box blocks clip coordinate-wise; the power block gets the exact
/// Euclidean projection onto `{q >= 0, sum q <= P}` via nonnegative clipping
/// and a uniform-shift active-set iteration. Differentiable almost
/// everywhere; clip gradients pass through on the inactive side.
pub fn project_c1_tape(tape: &mut Tape, x: Var, spec: &C1Spec) -> Var {
    let k = spec.k();
    assert_eq!(tape.value(x).len(), BLOCKS * k, "x has wrong length");

    let q = tape.slice(x, 0, k);
    let sinr_lb = tape.slice(x, k, k);
    let sinr_ub = tape.slice(x, 2 * k, k);
    let disp = tape.slice(x, 3 * k, k);
    let disp_root = tape.slice(x, 4 * k, k);

    // Power block: clip to the nonnegative orthant, then shift the active
    // set uniformly until the budget holds. The active set shrinks each
    // round, so this terminates in at most k rounds and realizes the exact
    // Euclidean projection.
    let mut q_proj = tape.relu(q);
    let budget = spec.p_max * (1.0 + POWER_SUM_SLACK);
    if tape.value(q_proj).data().iter().sum::<f64>() > budget {
        let q0 = tape.value(q_proj).data().to_vec();
        let mut active: Vec<bool> = q0.iter().map(|&v| v > 0.0).collect();
        loop {
            let m = active.iter().filter(|&&a| a).count();
            let sum_active: f64 = q0
                .iter()
                .zip(&active)
                .filter_map(|(&v, &a)| a.then_some(v))
                .sum();
            let shift = (sum_active - spec.p_max) / m as f64;
            let next: Vec<bool> = q0
                .iter()
                .zip(&active)
                .map(|(&v, &a)| a && v - shift > 0.0)
                .collect();
            if next == active {
                break;
            }
            active = next;
        }
        let mask: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let m = active.iter().filter(|&&a| a).count() as f64;
        let mask_leaf = tape.leaf(Tensor::from_vec(mask));
        let masked = tape.mul(q_proj, mask_leaf);
        let sum_active = tape.sum(masked);
        let excess = tape.add_const(sum_active, -spec.p_max);
        let shift = tape.scale(excess, 1.0 / m);
        let shift_vec = tape.mul_scalar(mask_leaf, shift);
        let shifted = tape.sub(q_proj, shift_vec);
        let rezeroed = tape.mul(shifted, mask_leaf);
        q_proj = tape.relu(rezeroed);
    }

    let lb_clipped = tape.clip_lo(sinr_lb, Tensor::full(k, spec.nu3));
    let ub_clipped = tape.clip_hi(sinr_ub, Tensor::from_vec(spec.gamma_tilde.clone()));
    let disp_lo = tape.clip_lo(disp, Tensor::full(k, spec.disp_lo));
    let disp_clipped = tape.clip_hi(disp_lo, Tensor::from_vec(spec.disp_hi.clone()));

    let a = tape.concat(q_proj, lb_clipped);
    let b = tape.concat(a, ub_clipped);
    let c = tape.concat(b, disp_clipped);
    tape.concat(c, disp_root)
}

/// Value-level wrapper over [`project_c1_tape`]; single source of truth for
/// the projection arithmetic.
pub fn project_c1(x: &OptVector, spec: &C1Spec) -> OptVector {
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::from_vec(x.as_slice().to_vec()));
    let out = project_c1_tape(&mut tape, xv, spec);
    OptVector::from_vec(x.k(), tape.value(out).data().to_vec()).expect("projection keeps length")
}

// --- The penalized constraint family -----------------------------------------

/// Hinged residual blocks of the penalized family, one tape node per family.
pub struct C2Residuals {
    /// `[sinr_lb - sinr]^+`
    pub lb_over_sinr: Var,
    /// `[sinr - sinr_ub]^+`
    pub sinr_over_ub: Var,
    /// `[V(sinr_ub) - disp]^+`
    pub disp_short: Var,
    /// `[sqrt(disp) - disp_root]^+`
    pub root_short: Var,
}

/// Evaluates the four penalized constraint families against a fixed
/// beamformer through the SINR gain matrix.
#[derive(Clone, Debug)]
pub struct C2Evaluator {
    gains: Tensor,
    k: usize,
}

impl C2Evaluator {
    pub fn new(real: &Realization, w: &Beamformers) -> Self {
        let gains = fbl::sinr_gains(real, w);
        C2Evaluator {
            k: real.sys.k,
            gains,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gains(&self) -> &Tensor {
        &self.gains
    }

    /// Number of scalar constraints in the family.
    pub fn constraint_count(&self) -> usize {
        4 * self.k
    }

    /// Signed constraint values (positive means violated), one vector per
    /// family, before hinging. Errors when a dispersion entry is negative.
    pub fn raw_residuals(&self, x: &OptVector) -> Result<[Vec<f64>; 4]> {
        let sinr = fbl::sinr_from_gains(x.q(), &self.gains);
        let k = self.k;
        let mut lb = Vec::with_capacity(k);
        let mut ub = Vec::with_capacity(k);
        let mut disp = Vec::with_capacity(k);
        let mut root = Vec::with_capacity(k);
        for i in 0..k {
            lb.push(x.sinr_lb()[i] - sinr[i]);
            ub.push(sinr[i] - x.sinr_ub()[i]);
            let ub_val = x.sinr_ub()[i];
            if ub_val < 0.0 {
                return Err(Error::Domain(format!(
                    "dispersion of negative bound {ub_val}"
                )));
            }
            disp.push(fbl::dispersion(ub_val)? - x.disp()[i]);
            let d = x.disp()[i];
            if d < 0.0 {
                return Err(Error::Domain(format!("sqrt of negative dispersion {d}")));
            }
            root.push(d.sqrt() - x.disp_root()[i]);
        }
        Ok([lb, ub, disp, root])
    }

    /// Mean hinged violation and the stacked `4K` hinged residual vector,
    /// ordered family-by-family.
    pub fn violation(&self, x: &OptVector) -> Result<(f64, Vec<f64>)> {
        let raw = self.raw_residuals(x)?;
        let mut stacked = Vec::with_capacity(4 * self.k);
        for family in &raw {
            stacked.extend(family.iter().map(|&r| r.max(0.0)));
        }
        let vg = stacked.iter().sum::<f64>() / stacked.len() as f64;
        Ok((vg, stacked))
    }

    /// Hinged residuals as tape nodes, differentiable through the powers and
    /// every auxiliary block.
    pub fn residuals_tape(&self, tape: &mut Tape, x: Var) -> C2Residuals {
        let k = self.k;
        let q = tape.slice(x, 0, k);
        let sinr_lb = tape.slice(x, k, k);
        let sinr_ub = tape.slice(x, 2 * k, k);
        let disp = tape.slice(x, 3 * k, k);
        let disp_root = tape.slice(x, 4 * k, k);

        let sinr = fbl::sinr_tape(tape, q, &self.gains);

        let lb_gap = tape.sub(sinr_lb, sinr);
        let lb_over_sinr = tape.relu(lb_gap);

        let ub_gap = tape.sub(sinr, sinr_ub);
        let sinr_over_ub = tape.relu(ub_gap);

        // V(u) = 1 - (1 + u)^{-2}
        let shifted = tape.add_const(sinr_ub, 1.0);
        let sq = tape.mul(shifted, shifted);
        let ones = tape.leaf(Tensor::full(k, 1.0));
        let inv = tape.div(ones, sq);
        let v_of_ub = tape.sub(ones, inv);
        let disp_gap = tape.sub(v_of_ub, disp);
        let disp_short = tape.relu(disp_gap);

        let root = tape.sqrt(disp);
        let root_gap = tape.sub(root, disp_root);
        let root_short = tape.relu(root_gap);

        C2Residuals {
            lb_over_sinr,
            sinr_over_ub,
            disp_short,
            root_short,
        }
    }
}

/// Mean hinged violation of the penalized family: the feasibility metric.
pub fn violation_c2(x: &OptVector, ev: &C2Evaluator) -> Result<(f64, Vec<f64>)> {
    ev.violation(x)
}
