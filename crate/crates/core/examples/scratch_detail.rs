// Scratch: inspect one trained layer's outputs block by block. (debug aid)

use usrmnet::fbl::{sinr, Geometry, SystemParams};
use usrmnet::harness::Dataset;
use usrmnet::hwgcn::{adjacency, eta_net_forward_scaled, perturb_net_forward_scaled, FeatureScale};
use usrmnet::learn::{train_usrmnet, TrainConfig};
use usrmnet::unroll::{usrmnet_forward, UsrmNet};
use usrmnet::proj::C1Spec;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let snr: f64 = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(30.0);
    let epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(50);
    let final_gain: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(0.05);

    let sys = SystemParams::from_snr_db(2, 4, snr, 128, 128.0, 1e-5).unwrap();
    let geo = Geometry {
        d0: 50.0,
        path_loss_exp: 3.0,
        d_min: 120.0,
        d_max: 140.0,
    };
    let train_ds = Dataset::generate(&sys, &geo, 1001, 512).unwrap();
    let test_ds = Dataset::generate(&sys, &geo, 2002, 3).unwrap();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(42);
    let mut model = UsrmNet::random(2, 2, 1, &mut rng);
    for layer in &mut model.layers {
        for net in [&mut layer.eta_net, &mut layer.perturb_net] {
            let last = net.layers_mut().last_mut().unwrap();
            for tap in last.taps_mut() {
                for v in tap.data_mut() {
                    *v *= final_gain;
                }
            }
        }
    }
    let mut cfg = TrainConfig::default_with_seed(7);
    cfg.epochs = epochs;
    if epochs > 0 {
        train_usrmnet(&mut model, train_ds.train_samples().unwrap(), &cfg).unwrap();
    }

    for sample in &test_ds.samples {
        let spec = C1Spec::from_realization(&sample.real).unwrap();
        let a = adjacency(&sample.real.h, &sample.w0);
        let scale = FeatureScale::from_bounds(spec.p_max, &spec.gamma_tilde);
        let eta =
            eta_net_forward_scaled(&model.layers[0].eta_net, &a, &sample.x0, &scale).unwrap();
        let bar =
            perturb_net_forward_scaled(&model.layers[0].perturb_net, &a, &sample.x0, &scale)
                .unwrap();
        println!("eta = {eta:?}");
        println!("xbar q    = {:?}", bar.q());
        println!("xbar lb   = {:?}", bar.sinr_lb());
        println!("xbar ub   = {:?}", bar.sinr_ub());
        println!("xbar disp = {:?}", bar.disp());
        println!("xbar root = {:?}", bar.disp_root());

        let trace = usrmnet_forward(&model, &sample.x0, &sample.w0, &sample.real, &spec).unwrap();
        let x = &trace.x;
        let g = sinr(&x.q().to_vec(), &trace.w, &sample.real);
        for k in 0..2 {
            println!(
                "user {k}: q {:9.4}  lb-gamma {:+9.5}  gamma-ub {:+9.5}  V(ub)-disp {:+9.5}  sqrt(disp)-root {:+9.5}",
                x.q()[k],
                x.sinr_lb()[k] - g[k],
                g[k] - x.sinr_ub()[k],
                usrmnet::fbl::dispersion(x.sinr_ub()[k]).unwrap() - x.disp()[k],
                x.disp()[k].sqrt() - x.disp_root()[k],
            );
        }
        println!("---");
    }
}
