// Scratch: per-family residual breakdown after training. (debug aid)

use usrmnet::fbl::{mmse_beamformer, Geometry, SystemParams};
use usrmnet::harness::Dataset;
use usrmnet::learn::{train_usrmnet, TrainConfig};
use usrmnet::proj::{C1Spec, C2Evaluator};
use usrmnet::unroll::{usrmnet_forward, UsrmNet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(512);
    let snr: f64 = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(25.0);
    let epochs: usize = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(50);
    let zero_init: bool = args.get(4).map(|v| v == "zero").unwrap_or(false);

    let sys = SystemParams::from_snr_db(2, 4, snr, 512, 64.0, 1e-5).unwrap();
    let geo = Geometry {
        d0: 50.0,
        path_loss_exp: 3.0,
        d_min: 120.0,
        d_max: 140.0,
    };
    let train_ds = Dataset::generate(&sys, &geo, 1001, n_train).unwrap();
    let test_ds = Dataset::generate(&sys, &geo, 2002, 100).unwrap();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(42);
    let mut model = if zero_init {
        UsrmNet::zeroed(2, 2, 1)
    } else {
        UsrmNet::random(2, 2, 1, &mut rng)
    };
    let mut cfg = TrainConfig::default_with_seed(1);
    cfg.epochs = epochs;
    if epochs > 0 {
        let (_d, _l) = train_usrmnet(&mut model, train_ds.train_samples().unwrap(), &cfg).unwrap();
    }

    // Residuals by family, against the final W and the pre-update W.
    let mut fam_final = [0.0f64; 4];
    let mut fam_pre = [0.0f64; 4];
    let mut feasible_final = 0;
    let mut feasible_pre = 0;
    let n = test_ds.samples.len();
    for sample in &test_ds.samples {
        let spec = C1Spec::from_realization(&sample.real).unwrap();
        // Run layers manually to capture W_{L-1}.
        let mut x = sample.x0.clone();
        let mut w_prev = sample.w0.clone();
        let mut w_cur = sample.w0.clone();
        for layer in &model.layers {
            w_prev = w_cur.clone();
            x = usrmnet::unroll::layer_forward(layer, &x, &sample.real, &w_prev, &spec).unwrap();
            w_cur = mmse_beamformer(x.q(), &sample.real).unwrap();
        }
        let trace = usrmnet_forward(&model, &sample.x0, &sample.w0, &sample.real, &spec).unwrap();
        assert_eq!(trace.x, x);

        let ev_final = C2Evaluator::new(&sample.real, &w_cur);
        let raw_final = ev_final.raw_residuals(&x).unwrap();
        let (vgf, _) = ev_final.violation(&x).unwrap();
        if vgf == 0.0 {
            feasible_final += 1;
        }
        let ev_pre = C2Evaluator::new(&sample.real, &w_prev);
        let raw_pre = ev_pre.raw_residuals(&x).unwrap();
        let (vgp, _) = ev_pre.violation(&x).unwrap();
        if vgp == 0.0 {
            feasible_pre += 1;
        }
        for f in 0..4 {
            fam_final[f] += raw_final[f].iter().map(|&r| r.max(0.0)).sum::<f64>() / 2.0;
            fam_pre[f] += raw_pre[f].iter().map(|&r| r.max(0.0)).sum::<f64>() / 2.0;
        }
    }
    let names = ["lb_over_sinr", "sinr_over_ub", "disp_short", "root_short"];
    println!("family means (final W | pre-update W):");
    for f in 0..4 {
        println!(
            "  {:14} {:10.3e} | {:10.3e}",
            names[f],
            fam_final[f] / n as f64,
            fam_pre[f] / n as f64
        );
    }
    println!(
        "feasible vs final W: {}/{n}; vs pre-update W: {}/{n}",
        feasible_final, feasible_pre
    );
}
