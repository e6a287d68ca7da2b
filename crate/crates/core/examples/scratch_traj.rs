// Scratch: print training trajectories for the tiny fixture. (debug aid)

use usrmnet::fbl::{channel_gen, Geometry, SystemParams};
use usrmnet::learn::{train_layer, TrainConfig, TrainSample};
use usrmnet::proj::C1Spec;
use usrmnet::unroll::{init_x0_w0, UpgdLayer};

fn dataset(n: usize, k: usize, n_t: usize, seed: u64, snr: f64, d: f64) -> Vec<TrainSample> {
    let sys = SystemParams::from_snr_db(k, n_t, snr, 128, d, 1e-5).unwrap();
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

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(8);
    let seed: u64 = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(52);
    let snr: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(25.0);
    let epochs: usize = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(50);

    let samples = dataset(n, 2, 4, seed, snr, 128.0);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let mut layer = UpgdLayer::random(2, 1, &mut rng);
    let mut cfg = TrainConfig::default_with_seed(9);
    cfg.epochs = epochs;
    let t0 = std::time::Instant::now();
    let (dual, records) = train_layer(&mut layer, &samples, &cfg, 0).unwrap();
    println!("train time: {:?}", t0.elapsed());
    for r in records.iter() {
        if r.epoch % 5 == 0 || r.epoch <= 3 || r.epoch + 3 > epochs {
            println!(
                "epoch {:3}  loss {:9.5}  wsr {:8.4}  vg {:9.6}  s1 {:8.4}  s2 {:8.4}  |lam| {:9.6}",
                r.epoch, r.loss, r.mean_wsr, r.mean_vg, r.s1, r.s2, r.lambda_norm
            );
        }
    }
    println!("final dual s = {:?}", dual.s);
}
