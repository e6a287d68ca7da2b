//! Brute-force grid oracle for small user counts: exhaustive power search
//! over the capped simplex with MMSE beamformers, one local refinement pass.

use crate::fbl::{self, Beamformers, Realization};
use crate::{Error, Result};

/// Best feasible operating point found by the grid search.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub wsr: f64,
    pub q: Vec<f64>,
    pub w: Beamformers,
}

const MAX_ORACLE_USERS: usize = 3;

/// Exhaustive search over `{q >= 0, sum q <= P}` at `resolution` steps per
/// axis: for each grid power the beamformer is the MMSE response, a point is
/// feasible when every user meets the rate target, and the incumbent is
/// refined once on a 10x finer local grid.
pub fn oracle_wsr(real: &Realization, resolution: usize) -> Result<OracleResult> {
    let sys = &real.sys;
    if sys.k > MAX_ORACLE_USERS {
        return Err(Error::Contract(format!(
            "grid oracle supports at most {MAX_ORACLE_USERS} users, got {}",
            sys.k
        )));
    }
    if resolution < 2 {
        return Err(Error::Contract("resolution must be at least 2".into()));
    }
    let theta = sys.theta_coeff()?;
    let target = sys.rate_target();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let step = sys.p_max / resolution as f64;
    let evaluate = |best: &mut Option<(f64, Vec<f64>)>, q: &[f64]| -> Result<()> {
        if q.iter().any(|&v| v < 0.0) || q.iter().sum::<f64>() > sys.p_max * (1.0 + 1e-12) {
            return Ok(());
        }
        let w = fbl::mmse_beamformer(q, real)?;
        let gammas = fbl::sinr(q, &w, real);
        let mut wsr = 0.0;
        for (k, &g) in gammas.iter().enumerate() {
            let r = fbl_rate_nonneg(g, theta)?;
            if r < target - 1e-12 {
                return Ok(()); // infeasible point
            }
            wsr += sys.weights[k] * r;
        }
        if best.as_ref().map_or(true, |(b, _)| wsr > *b) {
            *best = Some((wsr, q.to_vec()));
        }
        Ok(())
    };

    for_each_grid_point(sys.k, resolution, step, &mut |q| evaluate(&mut best, q))?;
    let (_, coarse_q) = best
        .clone()
        .ok_or_else(|| Error::Infeasible("no feasible grid point".into()))?;

    // One refinement pass: 10x finer steps in a one-coarse-step box around
    // the incumbent.
    let fine = step / 10.0;
    let mut refine_axes: Vec<Vec<f64>> = Vec::with_capacity(sys.k);
    for &c in &coarse_q {
        let lo = (c - step).max(0.0);
        let points: Vec<f64> = (0..=20).map(|i| lo + fine * i as f64).collect();
        refine_axes.push(points);
    }
    let mut idx = vec![0usize; sys.k];
    loop {
        let q: Vec<f64> = idx.iter().zip(&refine_axes).map(|(&i, ax)| ax[i]).collect();
        evaluate(&mut best, &q)?;
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < refine_axes[carry].len() {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == sys.k {
                break;
            }
        }
        if carry == sys.k {
            break;
        }
    }

    let (wsr, q) = best.expect("incumbent survives refinement");
    let w = fbl::mmse_beamformer(&q, real)?;
    Ok(OracleResult { wsr, q, w })
}

fn fbl_rate_nonneg(gamma: f64, theta: f64) -> Result<f64> {
    fbl::fbl_rate(gamma, theta)
}

fn for_each_grid_point(
    k: usize,
    resolution: usize,
    step: f64,
    f: &mut impl FnMut(&[f64]) -> Result<()>,
) -> Result<()> {
    let mut q = vec![0.0; k];
    fn recurse(
        q: &mut Vec<f64>,
        axis: usize,
        remaining: usize,
        step: f64,
        f: &mut impl FnMut(&[f64]) -> Result<()>,
    ) -> Result<()> {
        if axis + 1 == q.len() {
            for i in 0..=remaining {
                q[axis] = i as f64 * step;
                f(q)?;
            }
            return Ok(());
        }
        for i in 0..=remaining {
            q[axis] = i as f64 * step;
            recurse(q, axis + 1, remaining - i, step, f)?;
        }
        Ok(())
    }
    recurse(&mut q, 0, resolution, step, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::{channel_gen, Geometry, SystemParams};

    fn geo() -> Geometry {
        Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        }
    }

    #[test]
    fn single_user_optimum_is_full_power() {
        let sys = SystemParams::from_snr_db(1, 4, 25.0, 128, 128.0, 1e-5).unwrap();
        let real = channel_gen(3, &sys, &geo()).unwrap();
        let out = oracle_wsr(&real, 100).unwrap();
        assert!((out.q[0] - sys.p_max).abs() < 1e-9 * sys.p_max);
        let theta = sys.theta_coeff().unwrap();
        let g = fbl::sinr(&out.q, &out.w, &real)[0];
        let expect = sys.weights[0] * fbl::fbl_rate(g, theta).unwrap();
        assert!((out.wsr - expect).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_reports_infeasible() {
        let mut sys = SystemParams::from_snr_db(1, 4, 25.0, 128, 128.0, 1e-5).unwrap();
        sys.p_max = 1e-9;
        let real = channel_gen(4, &sys, &geo()).unwrap();
        assert!(matches!(
            oracle_wsr(&real, 50),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn too_many_users_is_a_contract_violation() {
        let sys = SystemParams::from_snr_db(4, 4, 25.0, 128, 128.0, 1e-5).unwrap();
        let real = channel_gen(5, &sys, &geo()).unwrap();
        assert!(matches!(oracle_wsr(&real, 10), Err(Error::Contract(_))));
    }

    #[test]
    fn resolution_consistency_two_users() {
        let sys = SystemParams::from_snr_db(2, 4, 25.0, 128, 128.0, 1e-5).unwrap();
        let real = channel_gen(6, &sys, &geo()).unwrap();
        let coarse = oracle_wsr(&real, 200).unwrap();
        let fine = oracle_wsr(&real, 400).unwrap();
        let rel = (fine.wsr - coarse.wsr).abs() / fine.wsr;
        assert!(rel < 0.01, "rel gap {rel}");
    }

    #[test]
    fn oracle_is_monotone_in_power() {
        let sys = SystemParams::from_snr_db(2, 4, 20.0, 128, 128.0, 1e-5).unwrap();
        let real = channel_gen(8, &sys, &geo()).unwrap();
        let base = oracle_wsr(&real, 150).unwrap();
        let mut bigger = real.clone();
        bigger.sys.p_max *= 2.0;
        let more = oracle_wsr(&bigger, 150).unwrap();
        assert!(more.wsr >= base.wsr - 1e-9);
    }
}
