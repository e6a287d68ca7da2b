//! Permutation-consistency suite: relabeling users must permute every output
//! identically, from the reshape primitive up through the full stacked model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fbl::{self, Geometry, SystemParams};
use crate::hwgcn::{adjacency, eta_net_forward, gamma_reshape, perturb_net_forward};
use crate::proj::C1Spec;
use crate::unroll::{init_x0_w0, layer_forward, usrmnet_forward, UsrmNet};
use crate::Result;

/// Worst deviations observed per check, in output units.
#[derive(Clone, Debug, Default)]
pub struct PermutationReport {
    pub reshape: f64,
    pub adjacency: f64,
    pub filter: f64,
    pub step_size: f64,
    pub perturbation: f64,
    pub layer: f64,
    pub model: f64,
}

impl PermutationReport {
    pub fn max_deviation(&self) -> f64 {
        [
            self.reshape,
            self.adjacency,
            self.filter,
            self.step_size,
            self.perturbation,
            self.layer,
            self.model,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn random_perm(k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    p
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs every equivariance check for one user count over `n_perms` random
/// permutations and returns the worst deviations.
pub fn permutation_suite(
    seed: u64,
    k: usize,
    n_t: usize,
    n_perms: usize,
) -> Result<PermutationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = SystemParams::from_snr_db(k, n_t, 20.0, 128, 128.0, 1e-5)?;
    let geo = Geometry {
        d0: 50.0,
        path_loss_exp: 3.0,
        d_min: 120.0,
        d_max: 140.0,
    };
    let real = fbl::channel_gen(seed.wrapping_add(1), &sys, &geo)?;
    let spec = C1Spec::from_realization(&real)?;
    let (x0, w0) = init_x0_w0(&real, &spec)?;
    let model = UsrmNet::random(k, 2, 1, &mut rng);
    let layer = &model.layers[0];
    let a = adjacency(&real.h, &w0);

    let base_eta = eta_net_forward(&layer.eta_net, &a, &x0)?;
    let base_bar = perturb_net_forward(&layer.perturb_net, &a, &x0)?;
    let base_layer = layer_forward(layer, &x0, &real, &w0, &spec)?;
    let base_trace = usrmnet_forward(&model, &x0, &w0, &real, &spec)?;

    let mut report = PermutationReport::default();
    for _ in 0..n_perms {
        let perm = random_perm(k, &mut rng);
        let real_p = real.permute(&perm);
        let spec_p = spec.permute_users(&perm);
        let x0_p = x0.permute_users(&perm);
        let w0_p = w0.permute(&perm);
        let a_p = a.permute(&perm);

        // Reshape primitive.
        let lhs = gamma_reshape(&x0_p);
        let rhs = gamma_reshape(&x0);
        let mut reshape_dev = 0.0f64;
        for (j, &src) in perm.iter().enumerate() {
            for c in 0..crate::proj::BLOCKS {
                let d = (lhs.data()[j * crate::proj::BLOCKS + c]
                    - rhs.data()[src * crate::proj::BLOCKS + c])
                    .abs();
                reshape_dev = reshape_dev.max(d);
            }
        }
        report.reshape = report.reshape.max(reshape_dev);

        // Adjacency built from permuted inputs vs permuted adjacency.
        let direct = adjacency(&real_p.h, &w0_p);
        report.adjacency = report
            .adjacency
            .max(max_abs_diff(direct.matrix().data(), a_p.matrix().data()));

        // Filter layer (the first one of the step-size head).
        let z = gamma_reshape(&x0);
        let z_p = gamma_reshape(&x0_p);
        let f = crate::hwgcn::gconv_forward(&layer.eta_net.layers()[0], &a, &z)?;
        let f_p = crate::hwgcn::gconv_forward(&layer.eta_net.layers()[0], &a_p, &z_p)?;
        let cols = f.shape()[1];
        let mut filter_dev = 0.0f64;
        for (j, &src) in perm.iter().enumerate() {
            for c in 0..cols {
                filter_dev =
                    filter_dev.max((f_p.data()[j * cols + c] - f.data()[src * cols + c]).abs());
            }
        }
        report.filter = report.filter.max(filter_dev);

        // Step-size head pools to a permutation-invariant pair.
        let eta_p = eta_net_forward(&layer.eta_net, &a_p, &x0_p)?;
        report.step_size = report
            .step_size
            .max(max_abs_diff(&base_eta, &eta_p));

        // Perturbation head is equivariant.
        let bar_p = perturb_net_forward(&layer.perturb_net, &a_p, &x0_p)?;
        let bar_expect = base_bar.permute_users(&perm);
        report.perturbation = report
            .perturbation
            .max(max_abs_diff(bar_p.as_slice(), bar_expect.as_slice()));

        // One full layer.
        let layer_p = layer_forward(layer, &x0_p, &real_p, &w0_p, &spec_p)?;
        let layer_expect = base_layer.permute_users(&perm);
        report.layer = report
            .layer
            .max(max_abs_diff(layer_p.as_slice(), layer_expect.as_slice()));

        // The stacked model, including beamformer refreshes.
        let trace_p = usrmnet_forward(&model, &x0_p, &w0_p, &real_p, &spec_p)?;
        let x_expect = base_trace.x.permute_users(&perm);
        let mut model_dev = max_abs_diff(trace_p.x.as_slice(), x_expect.as_slice());
        let w_expect = base_trace.w.permute(&perm);
        for (a, b) in trace_p.w.w.data().iter().zip(w_expect.w.data()) {
            model_dev = model_dev.max((a - b).norm());
        }
        report.model = report.model.max(model_dev);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_tight_for_small_networks() {
        let report = permutation_suite(7, 4, 8, 20).unwrap();
        assert!(
            report.max_deviation() < 1e-9,
            "deviation {:?}",
            report
        );
    }
}
