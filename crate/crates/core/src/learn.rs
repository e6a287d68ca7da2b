//! Unsupervised primal-dual training: the multi-task loss, the dual ascent
//! on the penalized constraints, and the layer-wise schedule.
//!
//! Each layer trains on its own frozen inputs. Per minibatch the layer runs
//! forward on the tape, the loss backpropagates into the taps and the scale
//! pair, Adam updates them, and the multipliers take one hinged ascent step
//! on the batch-mean constraint values. After a layer finishes, its outputs
//! (with refreshed beamformers) become the next layer's inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Tape, Tensor, Var};
use crate::fbl::{self, Beamformers, Realization};
use crate::hwgcn::adjacency;
use crate::proj::{C1Spec, C2Evaluator, C2Residuals, OptVector};
use crate::unroll::{layer_forward, layer_forward_tape, UpgdLayer, UsrmNet};
use crate::{Error, Result};

/// Trainer hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Tap learning rate.
    pub lr_theta: f64,
    /// Scale-pair learning rate.
    pub lr_s: f64,
    /// Dual ascent step.
    pub lr_lambda: f64,
    /// Minibatch size.
    pub batch: usize,
    /// Epochs per layer.
    pub epochs: usize,
    /// Initial scale pair.
    pub s_init: [f64; 2],
    /// Shuffling seed.
    pub seed: u64,
}

impl TrainConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        TrainConfig {
            lr_theta: 0.001,
            lr_s: 0.001,
            lr_lambda: 0.0001,
            batch: 20,
            epochs: 50,
            s_init: [1.0, 1.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_theta < 0.0 || self.lr_s < 0.0 || self.lr_lambda < 0.0 {
            return Err(Error::Contract("learning rates must be >= 0".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Contract("batch and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Multipliers for the four penalized constraint families plus the scale pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda_lb: Vec<f64>,
    pub lambda_ub: Vec<f64>,
    pub lambda_disp: Vec<f64>,
    pub lambda_root: Vec<f64>,
    pub s: [f64; 2],
}

impl DualState {
    /// Zero multipliers, scale pair at its initial value.
    pub fn fresh(k: usize, s_init: [f64; 2]) -> Self {
        DualState {
            lambda_lb: vec![0.0; k],
            lambda_ub: vec![0.0; k],
            lambda_disp: vec![0.0; k],
            lambda_root: vec![0.0; k],
            s: s_init,
        }
    }

    pub fn lambda_norm(&self) -> f64 {
        self.families()
            .iter()
            .flat_map(|f| f.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_nonnegative(&self) -> bool {
        self.families()
            .iter()
            .all(|f| f.iter().all(|&v| v >= 0.0))
    }

    fn families(&self) -> [&Vec<f64>; 4] {
        [
            &self.lambda_lb,
            &self.lambda_ub,
            &self.lambda_disp,
            &self.lambda_root,
        ]
    }
}

// --- Loss ---------------------------------------------------------------------

/// Scale-weighted two-task loss:
/// `e^{-s1/2} l1 + e^{-s2/2} l2 + e^{s1/2} + e^{s2/2}`.
pub fn multitask_loss(l1: f64, l2: f64, s: [f64; 2]) -> f64 {
    (-0.5 * s[0]).exp() * l1 + (-0.5 * s[1]).exp() * l2 + (0.5 * s[0]).exp() + (0.5 * s[1]).exp()
}

/// Tape version of [`multitask_loss`]; `s` is a two-entry node so the scale
/// pair receives gradients.
pub fn multitask_loss_tape(tape: &mut Tape, l1: Var, l2: Var, s: Var) -> Var {
    let neg_half = tape.scale(s, -0.5);
    let damp = tape.exp(neg_half);
    let w1 = tape.index(damp, 0);
    let w2 = tape.index(damp, 1);
    let pos_half = tape.scale(s, 0.5);
    let grow = tape.exp(pos_half);
    let regular = tape.sum(grow);
    let t1 = tape.mul(w1, l1);
    let t2 = tape.mul(w2, l2);
    let partial = tape.add(t1, t2);
    tape.add(partial, regular)
}

/// Per-sample contributions to the batch loss.
pub struct SampleTerms {
    /// Scalar objective node (the weighted sum-rate surrogate).
    pub wsr: Var,
    /// Hinged residual nodes of the penalized families.
    pub residuals: C2Residuals,
}

/// Batch loss: the exponentiated-objective task plus the multiplier-weighted
/// hinge task, both batch means, combined by [`multitask_loss_tape`].
pub fn urllc_loss_tape(
    tape: &mut Tape,
    samples: &[SampleTerms],
    dual: &DualState,
    s: Var,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Contract("loss needs at least one sample".into()));
    }
    let inv_b = 1.0 / samples.len() as f64;
    let lam_lb = tape.leaf(Tensor::from_vec(dual.lambda_lb.clone()));
    let lam_ub = tape.leaf(Tensor::from_vec(dual.lambda_ub.clone()));
    let lam_disp = tape.leaf(Tensor::from_vec(dual.lambda_disp.clone()));
    let lam_root = tape.leaf(Tensor::from_vec(dual.lambda_root.clone()));

    let mut l1_acc: Option<Var> = None;
    let mut l2_acc: Option<Var> = None;
    for sample in samples {
        let neg = tape.neg(sample.wsr);
        let e = tape.exp(neg);
        l1_acc = Some(match l1_acc {
            None => e,
            Some(acc) => tape.add(acc, e),
        });

        let r = &sample.residuals;
        let weighted = [
            (lam_lb, r.lb_over_sinr),
            (lam_ub, r.sinr_over_ub),
            (lam_disp, r.disp_short),
            (lam_root, r.root_short),
        ];
        let mut sample_pen: Option<Var> = None;
        for (lam, res) in weighted {
            let prod = tape.mul(lam, res);
            let total = tape.sum(prod);
            sample_pen = Some(match sample_pen {
                None => total,
                Some(acc) => tape.add(acc, total),
            });
        }
        let pen = sample_pen.expect("four families");
        l2_acc = Some(match l2_acc {
            None => pen,
            Some(acc) => tape.add(acc, pen),
        });
    }
    let l1 = tape.scale(l1_acc.expect("nonempty"), inv_b);
    let l2 = tape.scale(l2_acc.expect("nonempty"), inv_b);
    Ok(multitask_loss_tape(tape, l1, l2, s))
}

/// Hinged dual ascent: each multiplier entry moves up by
/// `lr * max(mean residual, 0)` and never decreases.
pub fn dual_update(dual: &mut DualState, mean_raw: &[Vec<f64>; 4], lr_lambda: f64) {
    let targets = [
        &mut dual.lambda_lb,
        &mut dual.lambda_ub,
        &mut dual.lambda_disp,
        &mut dual.lambda_root,
    ];
    for (lam, raw) in targets.into_iter().zip(mean_raw) {
        for (l, &r) in lam.iter_mut().zip(raw) {
            *l += lr_lambda * r.max(0.0);
        }
    }
}

// --- Layer-wise training ---------------------------------------------------------

/// One training sample: the realization, its projection constants, and the
/// cached layer input (initialization or frozen-prefix output).
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub real: Realization,
    pub spec: C1Spec,
    pub x: OptVector,
    pub w: Beamformers,
}

/// One per-epoch log row.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub layer: usize,
    pub epoch: usize,
    pub loss: f64,
    pub mean_wsr: f64,
    pub mean_vg: f64,
    pub s1: f64,
    pub s2: f64,
    pub lambda_norm: f64,
}

/// Training log, one record per epoch per layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,layer,loss,wsr,vg,s1,s2,lambda_norm";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.epoch, r.layer, r.loss, r.mean_wsr, r.mean_vg, r.s1, r.s2, r.lambda_norm
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn layer_records(&self, layer: usize) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.layer == layer).collect()
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Called at the end of every epoch with the epoch index and the layer as
/// trained so far; lets callers track held-out metrics along the run.
pub type EpochMonitor<'a> = &'a mut dyn FnMut(usize, &UpgdLayer, &DualState) -> Result<()>;

/// Trains one layer on its cached inputs. The dual state starts from zero
/// multipliers and the configured scale pair; multipliers update per
/// minibatch. Returns the final dual state and the per-epoch records.
pub fn train_layer(
    layer: &mut UpgdLayer,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    layer_idx: usize,
) -> Result<(DualState, Vec<EpochRecord>)> {
    train_layer_monitored(layer, samples, cfg, layer_idx, None)
}

/// [`train_layer`] with an optional per-epoch monitor callback.
pub fn train_layer_monitored(
    layer: &mut UpgdLayer,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    layer_idx: usize,
    mut monitor: Option<EpochMonitor<'_>>,
) -> Result<(DualState, Vec<EpochRecord>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("training needs samples".into()));
    }
    let k = samples[0].real.sys.k;
    layer.validate(k)?;

    let mut dual = DualState::fresh(k, cfg.s_init);
    let mut adam: Vec<AdamState> = layer
        .params()
        .iter()
        .map(|t| AdamState::new(t.shape()))
        .collect();
    let mut adam_s = AdamState::new(&[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ (layer_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    // Per-sample evaluators are tied to the frozen input beamformers, so
    // build them once per layer.
    let evaluators: Vec<C2Evaluator> = samples
        .iter()
        .map(|smp| C2Evaluator::new(&smp.real, &smp.w))
        .collect();

    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut wsr_sum = 0.0;
        let mut vg_sum = 0.0;

        for (batch_idx, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut tape = Tape::new();
            let vars = layer.register(&mut tape, true);
            let param_vars = vars.all();
            let s_var = tape.param(Tensor::from_vec(dual.s.to_vec()));

            let mut terms = Vec::with_capacity(chunk.len());
            let mut raw_mean: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; k]);
            for &i in chunk {
                let smp = &samples[i];
                let a = adjacency(&smp.real.h, &smp.w);
                let x0 = tape.leaf(Tensor::from_vec(smp.x.as_slice().to_vec()));
                let out =
                    layer_forward_tape(&mut tape, layer, &vars, &a, x0, &smp.real.sys, &smp.spec)?;

                let phi = tape.slice(out, k, k);
                let t = tape.slice(out, 4 * k, k);
                let wsr = fbl::wsr_tape(&mut tape, phi, t, &smp.real.sys)?;
                let residuals = evaluators[i].residuals_tape(&mut tape, out);

                let x_out = OptVector::from_vec(k, tape.value(out).data().to_vec())?;
                let raw = evaluators[i].raw_residuals(&x_out)?;
                for (acc, fam) in raw_mean.iter_mut().zip(&raw) {
                    for (a, &r) in acc.iter_mut().zip(fam) {
                        *a += r;
                    }
                }
                let (vg, _) = evaluators[i].violation(&x_out)?;
                vg_sum += vg;
                wsr_sum += fbl::wsr(&x_out, &smp.real.sys)?;
                terms.push(SampleTerms { wsr, residuals });
            }

            let loss = urllc_loss_tape(&mut tape, &terms, &dual, s_var)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Numeric {
                    node: batch_idx,
                    msg: format!("non-finite loss in epoch {epoch}, batch {batch_idx}"),
                });
            }
            assert!(loss_val > 0.0, "loss must stay strictly positive");
            loss_sum += loss_val;
            batches += 1;

            let grads = tape.backward(loss)?;

            let mut updated = Vec::with_capacity(param_vars.len());
            for ((var, current), st) in param_vars
                .iter()
                .zip(layer.params().iter().map(|t| (*t).clone()))
                .zip(adam.iter_mut())
            {
                let g = grads.get_or_zero(*var, current.shape());
                let mut p = current;
                adam_step(&mut p, &g, st, cfg.lr_theta)?;
                updated.push(p);
            }
            layer.set_params(&updated)?;

            let gs = grads.get_or_zero(s_var, &[2]);
            let mut s_t = Tensor::from_vec(dual.s.to_vec());
            adam_step(&mut s_t, &gs, &mut adam_s, cfg.lr_s)?;
            dual.s = [s_t.data()[0], s_t.data()[1]];

            let inv = 1.0 / chunk.len() as f64;
            for fam in raw_mean.iter_mut() {
                for v in fam.iter_mut() {
                    *v *= inv;
                }
            }
            dual_update(&mut dual, &raw_mean, cfg.lr_lambda);
        }

        records.push(EpochRecord {
            layer: layer_idx,
            epoch,
            loss: loss_sum / batches as f64,
            mean_wsr: wsr_sum / samples.len() as f64,
            mean_vg: vg_sum / samples.len() as f64,
            s1: dual.s[0],
            s2: dual.s[1],
            lambda_norm: dual.lambda_norm(),
        });
        if let Some(cb) = monitor.as_mut() {
            cb(epoch, layer, &dual)?;
        }
    }
    Ok((dual, records))
}

/// Trains the whole stack layer by layer. After a layer trains, its frozen
/// forward outputs (with refreshed beamformers) become the cached inputs of
/// the next layer.
pub fn train_usrmnet(
    model: &mut UsrmNet,
    mut samples: Vec<TrainSample>,
    cfg: &TrainConfig,
) -> Result<(Vec<DualState>, TrainLog)> {
    let mut log = TrainLog::default();
    let mut duals = Vec::with_capacity(model.depth());
    let depth = model.depth();
    for idx in 0..depth {
        let (dual, records) = train_layer(&mut model.layers[idx], &samples, cfg, idx)?;
        log.records.extend(records);
        duals.push(dual);
        if idx + 1 < depth {
            samples = advance_samples(&model.layers[idx], samples)?;
        }
    }
    Ok((duals, log))
}

/// Applies a frozen layer to every sample and refreshes the beamformers.
pub fn advance_samples(layer: &UpgdLayer, samples: Vec<TrainSample>) -> Result<Vec<TrainSample>> {
    samples
        .into_iter()
        .map(|mut smp| {
            let x = layer_forward(layer, &smp.x, &smp.real, &smp.w, &smp.spec)?;
            let w = fbl::mmse_beamformer(x.q(), &smp.real)?;
            smp.x = x;
            smp.w = w;
            Ok(smp)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::{channel_gen, Geometry, SystemParams};
    use crate::unroll::init_x0_w0;
    use rand::SeedableRng;

    fn tiny_dataset(n: usize, k: usize, n_t: usize, seed: u64) -> Vec<TrainSample> {
        let sys = SystemParams::from_snr_db(k, n_t, 40.0, 512, 64.0, 1e-5).unwrap();
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        (0..n)
            .map(|i| {
                let real = channel_gen(seed + i as u64, &sys, &geo).unwrap();
                let spec = C1Spec::from_realization(&real).unwrap();
                let (x, w) = init_x0_w0(&real, &spec).unwrap();
                TrainSample { real, spec, x, w }
            })
            .collect()
    }

    #[test]
    fn multitask_loss_known_values() {
        assert!((multitask_loss(1.0, 0.0, [0.0, 0.0]) - 3.0).abs() < 1e-15);
        assert!((multitask_loss(0.0, 0.0, [0.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn multitask_loss_minimizer_is_log_l() {
        // For fixed l1 = l2 = l the optimal scale is ln(l): verify by a
        // golden-section search over one coordinate.
        let l = 0.7f64;
        let f = |s: f64| multitask_loss(l, l, [s, s]);
        let (mut a, mut b) = (-5.0f64, 5.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let s_star = 0.5 * (a + b);
        assert!((s_star - l.ln()).abs() < 1e-6, "{s_star} vs {}", l.ln());
    }

    #[test]
    fn multitask_s_gradient_closed_form_and_fd() {
        let (l1, l2) = (0.8, 0.3);
        let s0 = [0.4, -0.2];
        let mut tape = Tape::new();
        let l1v = tape.leaf(Tensor::scalar(l1));
        let l2v = tape.leaf(Tensor::scalar(l2));
        let sv = tape.param(Tensor::from_vec(s0.to_vec()));
        let loss = multitask_loss_tape(&mut tape, l1v, l2v, sv);
        let g = tape.backward(loss).unwrap();
        let gs = g.get(sv).unwrap();
        let expect0 = -0.5 * (-0.5 * s0[0]).exp() * l1 + 0.5 * (0.5 * s0[0]).exp();
        let expect1 = -0.5 * (-0.5 * s0[1]).exp() * l2 + 0.5 * (0.5 * s0[1]).exp();
        assert!((gs.data()[0] - expect0).abs() < 1e-12);
        assert!((gs.data()[1] - expect1).abs() < 1e-12);

        let h = 1e-6;
        for i in 0..2 {
            let mut lo = s0;
            let mut hi = s0;
            lo[i] -= h;
            hi[i] += h;
            let fd = (multitask_loss(l1, l2, hi) - multitask_loss(l1, l2, lo)) / (2.0 * h);
            assert!((gs.data()[i] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn dual_update_hinges_and_accumulates() {
        let mut dual = DualState::fresh(1, [1.0, 1.0]);
        dual.lambda_lb[0] = 0.5;
        let raw = [vec![-0.3], vec![2.0], vec![0.0], vec![0.0]];
        dual.lambda_ub[0] = 0.5;
        dual_update(&mut dual, &raw, 1e-4);
        assert_eq!(dual.lambda_lb[0], 0.5); // negative mean: unchanged
        assert!((dual.lambda_ub[0] - 0.5002).abs() < 1e-12);
        let before = dual.clone();
        dual_update(&mut dual, &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]], 1e-4);
        assert_eq!(dual, before);
    }

    #[test]
    fn loss_reduces_to_exp_wsr_plus_two_when_feasible() {
        // One sample, all residuals zero, s = [0, 0]:
        // loss = e^{-wsr} + 0 + 1 + 1.
        let samples = tiny_dataset(1, 1, 4, 40);
        let smp = &samples[0];
        let ev = C2Evaluator::new(&smp.real, &smp.w);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(smp.x.as_slice().to_vec()));
        let k = 1;
        let phi = tape.slice(xv, k, k);
        let t = tape.slice(xv, 4 * k, k);
        let wsr = fbl::wsr_tape(&mut tape, phi, t, &smp.real.sys).unwrap();
        let wsr_val = tape.value(wsr).item();
        let residuals = ev.residuals_tape(&mut tape, xv);
        // The initialization pins the bound families to equality, so every
        // hinge is exactly zero.
        assert_eq!(tape.value(residuals.lb_over_sinr).data()[0], 0.0);
        let s = tape.param(Tensor::from_vec(vec![0.0, 0.0]));
        let mut dual = DualState::fresh(1, [0.0, 0.0]);
        dual.lambda_lb[0] = 3.0; // nonzero multipliers must not matter
        let loss = urllc_loss_tape(
            &mut tape,
            &[SampleTerms { wsr, residuals }],
            &dual,
            s,
        )
        .unwrap();
        let expect = (-wsr_val).exp() + 2.0;
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_hand_computation_with_violations() {
        // Single user with hand-set blocks and multipliers.
        let samples = tiny_dataset(1, 1, 4, 41);
        let smp = &samples[0];
        let ev = C2Evaluator::new(&smp.real, &smp.w);
        let mut x = smp.x.clone();
        // Push the bounds around so every family has a known residual.
        let gamma = fbl::sinr(&x.q().to_vec(), &smp.w, &smp.real)[0];
        x.sinr_lb_mut()[0] = gamma + 0.4; // lb residual 0.4
        x.sinr_ub_mut()[0] = gamma - 0.2; // ub residual 0.2
        let v_ub = fbl::dispersion(x.sinr_ub()[0]).unwrap();
        x.disp_mut()[0] = v_ub - 0.05; // disp residual 0.05
        x.disp_root_mut()[0] = x.disp()[0].sqrt() - 0.01; // root residual 0.01

        let mut dual = DualState::fresh(1, [0.3, -0.1]);
        dual.lambda_lb[0] = 1.5;
        dual.lambda_ub[0] = 0.5;
        dual.lambda_disp[0] = 2.0;
        dual.lambda_root[0] = 4.0;

        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(x.as_slice().to_vec()));
        let phi = tape.slice(xv, 1, 1);
        let t = tape.slice(xv, 4, 1);
        let wsr = fbl::wsr_tape(&mut tape, phi, t, &smp.real.sys).unwrap();
        let wsr_val = tape.value(wsr).item();
        let residuals = ev.residuals_tape(&mut tape, xv);
        let s = tape.param(Tensor::from_vec(dual.s.to_vec()));
        let loss = urllc_loss_tape(
            &mut tape,
            &[SampleTerms { wsr, residuals }],
            &dual,
            s,
        )
        .unwrap();

        let l1 = (-wsr_val).exp();
        let l2 = 1.5 * 0.4 + 0.5 * 0.2 + 2.0 * 0.05 + 4.0 * 0.01;
        let expect = multitask_loss(l1, l2, dual.s);
        assert!((tape.value(loss).item() - expect).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let samples = tiny_dataset(6, 2, 4, 50);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut layer = UpgdLayer::random(2, 1, &mut rng);
        let before: Vec<Tensor> = layer.params().into_iter().cloned().collect();
        let mut cfg = TrainConfig::default_with_seed(7);
        cfg.lr_theta = 0.0;
        cfg.lr_s = 0.0;
        cfg.epochs = 3;
        let (dual, _) = train_layer(&mut layer, &samples, &cfg, 0).unwrap();
        let after: Vec<Tensor> = layer.params().into_iter().cloned().collect();
        assert_eq!(before, after);
        assert_eq!(dual.s, cfg.s_init);
        // Multipliers still move (lr_lambda > 0) unless everything is feasible.
        assert!(dual.all_nonnegative());
    }

    #[test]
    fn zero_dual_rate_keeps_lambda_zero() {
        let samples = tiny_dataset(6, 2, 4, 51);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut layer = UpgdLayer::random(2, 1, &mut rng);
        let mut cfg = TrainConfig::default_with_seed(8);
        cfg.lr_lambda = 0.0;
        cfg.epochs = 3;
        let (dual, _) = train_layer(&mut layer, &samples, &cfg, 0).unwrap();
        assert_eq!(dual.lambda_norm(), 0.0);
    }

    #[test]
    fn tiny_fixture_loss_and_violation_do_not_increase() {
        let samples = tiny_dataset(8, 2, 4, 52);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut layer = UpgdLayer::random(2, 1, &mut rng);
        let cfg = TrainConfig::default_with_seed(9);
        let (dual, records) = train_layer(&mut layer, &samples, &cfg, 0).unwrap();
        assert_eq!(records.len(), 50);
        let first = &records[0];
        let last = &records[49];
        assert!(last.loss <= first.loss, "{} vs {}", last.loss, first.loss);
        assert!(
            last.mean_vg <= first.mean_vg + 1e-12,
            "{} vs {}",
            last.mean_vg,
            first.mean_vg
        );
        assert!(dual.all_nonnegative());
        assert!(records.iter().all(|r| r.loss > 0.0));
    }

    #[test]
    fn multipliers_are_monotone_within_a_layer() {
        let samples = tiny_dataset(8, 2, 4, 53);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut layer = UpgdLayer::random(2, 1, &mut rng);
        let mut cfg = TrainConfig::default_with_seed(10);
        cfg.epochs = 10;
        let (_, records) = train_layer(&mut layer, &samples, &cfg, 0).unwrap();
        for w in records.windows(2) {
            assert!(w[1].lambda_norm >= w[0].lambda_norm - 1e-15);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let samples = tiny_dataset(8, 2, 4, 54);
        let cfg = TrainConfig::default_with_seed(11);
        let mut run = |cfg: &TrainConfig| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let mut model = UsrmNet::random(2, 2, 1, &mut rng);
            let (duals, log) = train_usrmnet(&mut model, samples.clone(), cfg).unwrap();
            (model, duals, log)
        };
        let (m1, d1, l1) = run(&cfg);
        let (m2, d2, l2) = run(&cfg);
        assert_eq!(m1, m2);
        assert_eq!(d1, d2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn single_layer_stack_reduces_to_train_layer() {
        let samples = tiny_dataset(8, 2, 4, 55);
        let cfg = TrainConfig::default_with_seed(12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let layer0 = UpgdLayer::random(2, 1, &mut rng);

        let mut model = UsrmNet {
            layers: vec![layer0.clone()],
        };
        let (duals, log) = train_usrmnet(&mut model, samples.clone(), &cfg).unwrap();

        let mut direct = layer0;
        let (dual_direct, records_direct) = train_layer(&mut direct, &samples, &cfg, 0).unwrap();
        assert_eq!(model.layers[0], direct);
        assert_eq!(duals[0], dual_direct);
        assert_eq!(log.records, records_direct);
    }

    #[test]
    fn cached_second_layer_inputs_match_frozen_prefix() {
        let samples = tiny_dataset(4, 2, 4, 56);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let layer = UpgdLayer::random(2, 1, &mut rng);
        let advanced = advance_samples(&layer, samples.clone()).unwrap();
        for (orig, adv) in samples.iter().zip(&advanced) {
            let x = layer_forward(&layer, &orig.x, &orig.real, &orig.w, &orig.spec).unwrap();
            let w = fbl::mmse_beamformer(x.q(), &orig.real).unwrap();
            assert_eq!(adv.x, x);
            assert_eq!(adv.w, w);
        }
    }

    #[test]
    fn frozen_prefix_params_do_not_move_during_later_layers() {
        let samples = tiny_dataset(6, 2, 4, 57);
        let mut cfg = TrainConfig::default_with_seed(13);
        cfg.epochs = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut model = UsrmNet::random(2, 2, 1, &mut rng);

        // Train only the first layer with the same schedule, then the full
        // stack: layer 0 must come out bit-identical.
        let mut solo = model.layers[0].clone();
        let (_, _) = train_layer(&mut solo, &samples, &cfg, 0).unwrap();
        train_usrmnet(&mut model, samples, &cfg).unwrap();
        assert_eq!(model.layers[0], solo);
    }
}
