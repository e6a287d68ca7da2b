//! One unrolled projected-gradient layer and the stacked model with analytic
//! beamformer updates between layers.
//!
//! A layer takes the previous solution, asks the step-size head for the two
//! gradient steps, walks the objective gradient on the rate-bound and
//! dispersion-root blocks, adds the perturbation head's update, and projects
//! back onto the directly-enforced constraint set. Between layers the
//! beamformer is refreshed from the projected powers without gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::fbl::{self, Beamformers, Realization, SystemParams};
use crate::hwgcn::{
    adjacency, eta_net_forward_tape, max_order, perturb_net_forward_tape, Adjacency,
    AdjacencyPowers, FeatureScale, HwgcnNet, NetRole, NetVars,
};
use crate::learn::{DualState, TrainConfig};
use crate::proj::{project_c1_tape, C1Spec, OptVector, BLOCKS};
use crate::{Error, Result};

/// One unrolled layer: a step-size head and a perturbation head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpgdLayer {
    pub eta_net: HwgcnNet,
    pub perturb_net: HwgcnNet,
}

impl UpgdLayer {
    pub fn random(k: usize, order: usize, rng: &mut impl rand::Rng) -> Self {
        UpgdLayer {
            eta_net: HwgcnNet::step_size(order, rng),
            perturb_net: HwgcnNet::perturbation(k, order, rng),
        }
    }

    /// All-zero heads; the layer then reduces to the bare projection.
    pub fn zeroed(k: usize, order: usize) -> Self {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        UpgdLayer {
            eta_net: HwgcnNet::step_size(order, &mut rng).zeroed_like(),
            perturb_net: HwgcnNet::perturbation(k, order, &mut rng).zeroed_like(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        self.eta_net.validate()?;
        self.perturb_net.validate()?;
        if self.eta_net.role() != NetRole::StepSize
            || self.perturb_net.role() != NetRole::Perturbation
        {
            return Err(Error::Contract("head roles are swapped".into()));
        }
        if self.perturb_net.input_width() != k + BLOCKS {
            return Err(Error::Contract(format!(
                "perturbation head expects width {} for k = {k}",
                self.perturb_net.input_width()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.eta_net.param_count() + self.perturb_net.param_count()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        LayerVars {
            eta: self.eta_net.register(tape, trainable),
            perturb: self.perturb_net.register(tape, trainable),
        }
    }

    /// Writes back tap values (used after an optimizer step on tape copies).
    pub fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        let mut it = values.iter();
        for net in [&mut self.eta_net, &mut self.perturb_net] {
            for layer in net.layers_mut() {
                for tap in layer.taps_mut() {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Contract("not enough tap values".into()))?;
                    if v.shape() != tap.shape() {
                        return Err(Error::Contract("tap shape changed".into()));
                    }
                    *tap = v.clone();
                }
            }
        }
        if it.next().is_some() {
            return Err(Error::Contract("too many tap values".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.eta_net
            .layers()
            .iter()
            .chain(self.perturb_net.layers())
            .flat_map(|l| l.taps().iter())
            .collect()
    }
}

/// Tape handles for one layer's parameters.
pub struct LayerVars {
    pub eta: NetVars,
    pub perturb: NetVars,
}

impl LayerVars {
    pub fn all(&self) -> Vec<Var> {
        self.eta.all().chain(self.perturb.all()).collect()
    }
}

/// The stacked unrolled model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsrmNet {
    pub layers: Vec<UpgdLayer>,
}

impl UsrmNet {
    pub fn random(k: usize, depth: usize, order: usize, rng: &mut impl rand::Rng) -> Self {
        UsrmNet {
            layers: (0..depth).map(|_| UpgdLayer::random(k, order, rng)).collect(),
        }
    }

    pub fn zeroed(k: usize, depth: usize, order: usize) -> Self {
        UsrmNet {
            layers: (0..depth).map(|_| UpgdLayer::zeroed(k, order)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("model needs at least one layer".into()));
        }
        for l in &self.layers {
            l.validate(k)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(UpgdLayer::param_count).sum()
    }
}

// --- Objective gradient --------------------------------------------------------

/// Gradient of the minimized objective `-sum_k alpha_k (ln(1 + phi_k) -
/// theta t_k)` with respect to the stacked vector: nonzero only on the
/// rate-bound block (`-alpha_k / (1 + phi_k)`) and the dispersion-root block
/// (`+alpha_k theta`).
pub fn grad_objective(x: &OptVector, sys: &SystemParams) -> Result<Vec<f64>> {
    let theta = sys.theta_coeff()?;
    let k = x.k();
    let mut g = vec![0.0; BLOCKS * k];
    for i in 0..k {
        let phi = x.sinr_lb()[i];
        if phi <= -1.0 {
            return Err(Error::Domain(format!(
                "objective gradient undefined at phi = {phi}"
            )));
        }
        g[k + i] = -sys.weights[i] / (1.0 + phi);
        g[4 * k + i] = sys.weights[i] * theta;
    }
    Ok(g)
}

/// Generic single-step form of the gradient walk: `x0 - eta * grad` with one
/// shared step size. The unrolled layer uses the blockwise form instead, but
/// the scalar form stays available for plain PGD experiments.
pub fn preliminary_step_uniform(x0: &OptVector, grad: &[f64], eta: f64) -> OptVector {
    let mut out = x0.clone();
    for (v, g) in out.as_mut_slice().iter_mut().zip(grad) {
        *v -= eta * g;
    }
    out
}

// --- Layer forward --------------------------------------------------------------

/// One layer on the tape. `x0` enters as a tape node; the objective gradient
/// is evaluated at its recorded values, so the gradient step is exact at the
/// layer input. Returns the projected output node.
pub fn layer_forward_tape(
    tape: &mut Tape,
    layer: &UpgdLayer,
    vars: &LayerVars,
    a: &Adjacency,
    x0: Var,
    sys: &SystemParams,
    spec: &C1Spec,
) -> Result<Var> {
    let k = a.k();
    let x0_values = OptVector::from_vec(k, tape.value(x0).data().to_vec())?;
    let grad = grad_objective(&x0_values, sys)?;

    let order = max_order(&layer.eta_net).max(max_order(&layer.perturb_net));
    let powers = AdjacencyPowers::register(tape, a, order);
    let scale = FeatureScale::from_bounds(spec.p_max, &spec.gamma_tilde);

    let eta = eta_net_forward_tape(tape, &layer.eta_net, &vars.eta, &powers, x0, &scale);
    let eta_lb = tape.index(eta, 0);
    let eta_root = tape.index(eta, 1);

    let mut grad_lb = vec![0.0; BLOCKS * k];
    let mut grad_root = vec![0.0; BLOCKS * k];
    grad_lb[k..2 * k].copy_from_slice(&grad[k..2 * k]);
    grad_root[4 * k..].copy_from_slice(&grad[4 * k..]);
    let grad_lb = tape.leaf(Tensor::from_vec(grad_lb));
    let grad_root = tape.leaf(Tensor::from_vec(grad_root));
    let step_lb = tape.mul_scalar(grad_lb, eta_lb);
    let step_root = tape.mul_scalar(grad_root, eta_root);
    let step = tape.add(step_lb, step_root);
    let x_hat = tape.sub(x0, step);

    let x_bar = perturb_net_forward_tape(
        tape,
        &layer.perturb_net,
        &vars.perturb,
        a,
        &powers,
        x_hat,
        &scale,
    );
    let x_tilde = tape.add(x_hat, x_bar);
    Ok(project_c1_tape(tape, x_tilde, spec))
}

/// Value-level layer forward: builds the coupling graph from the channel and
/// the beamformer the layer actually sees, then runs the tape arithmetic.
pub fn layer_forward(
    layer: &UpgdLayer,
    x0: &OptVector,
    real: &Realization,
    w: &Beamformers,
    spec: &C1Spec,
) -> Result<OptVector> {
    let a = adjacency(&real.h, w);
    let mut tape = Tape::new();
    let x0v = tape.leaf(Tensor::from_vec(x0.as_slice().to_vec()));
    let vars = layer.register(&mut tape, false);
    let out = layer_forward_tape(&mut tape, layer, &vars, &a, x0v, &real.sys, spec)?;
    OptVector::from_vec(x0.k(), tape.value(out).data().to_vec())
}

/// Output of a full forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub x: OptVector,
    pub w: Beamformers,
    /// Objective value after each layer.
    pub wsr_per_layer: Vec<f64>,
}

/// Runs every layer in order, refreshing the beamformer from the projected
/// powers after each layer (no gradients flow through the refresh).
pub fn usrmnet_forward(
    model: &UsrmNet,
    x0: &OptVector,
    w0: &Beamformers,
    real: &Realization,
    spec: &C1Spec,
) -> Result<ForwardTrace> {
    model.validate(real.sys.k)?;
    let mut x = x0.clone();
    let mut w = w0.clone();
    let mut wsr_per_layer = Vec::with_capacity(model.depth());
    for layer in &model.layers {
        x = layer_forward(layer, &x, real, &w, spec)?;
        w = fbl::mmse_beamformer(x.q(), real)?;
        wsr_per_layer.push(fbl::wsr(&x, &real.sys)?);
    }
    Ok(ForwardTrace { x, w, wsr_per_layer })
}

// --- Initialization -------------------------------------------------------------

/// Uniform-power initialization: matched MMSE beamformer at equal powers,
/// auxiliaries pinned to the resulting SINR (clipped into their boxes), and
/// a final projection so the output is always feasible for the direct set.
pub fn init_x0_w0(real: &Realization, spec: &C1Spec) -> Result<(OptVector, Beamformers)> {
    let sys = &real.sys;
    let k = sys.k;
    let q = vec![sys.p_max / k as f64; k];
    let w = fbl::mmse_beamformer(&q, real)?;
    let gamma = fbl::sinr(&q, &w, real);

    let (disp_lo, disp_hi) = spec.disp_bounds();
    let mut x = OptVector::zeros(k);
    x.q_mut().copy_from_slice(&q);
    for i in 0..k {
        let bounded = gamma[i].max(spec.nu3).min(spec.gamma_tilde[i]);
        x.sinr_lb_mut()[i] = bounded;
        x.sinr_ub_mut()[i] = bounded;
        let v = fbl::dispersion(bounded)?;
        let v = v.max(disp_lo).min(disp_hi[i].max(disp_lo));
        x.disp_mut()[i] = v;
        x.disp_root_mut()[i] = v.sqrt();
    }
    let x = crate::proj::project_c1(&x, spec);
    Ok((x, w))
}

// --- Checkpoint -----------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model snapshot: every tap matrix, the per-layer dual
/// state, and the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub sys: SystemParams,
    pub geo: fbl::Geometry,
    pub train: TrainConfig,
    pub model: UsrmNet,
    /// Final dual state of each layer's training run.
    pub duals: Vec<DualState>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&body)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Io(format!(
                "checkpoint version {} unsupported (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        ckpt.model.validate(ckpt.sys.k)?;
        Ok(ckpt)
    }
}
