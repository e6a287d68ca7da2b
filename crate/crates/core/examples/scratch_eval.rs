// Scratch: full pipeline dry run — train 2 layers, evaluate held-out
// feasibility and the oracle gap. (debug aid)

use usrmnet::fbl::{Geometry, SystemParams};
use usrmnet::harness::{evaluate, oracle_wsr, Dataset};
use usrmnet::learn::{train_usrmnet, TrainConfig};
use usrmnet::unroll::UsrmNet;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(512);
    let n_test: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let snr: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(25.0);
    let payload: f64 = args.get(4).map(|v| v.parse().unwrap()).unwrap_or(128.0);
    let epochs: usize = args.get(5).map(|v| v.parse().unwrap()).unwrap_or(50);

    let mut sys = SystemParams::from_snr_db(2, 4, snr, 512, payload, 1e-5).unwrap();
    if let Some(w) = args.get(7) {
        let parts: Vec<f64> = w.split(',').map(|v| v.parse().unwrap()).collect();
        sys.weights = parts;
    }
    let geo = Geometry {
        d0: 50.0,
        path_loss_exp: 3.0,
        d_min: 120.0,
        d_max: 140.0,
    };
    let t0 = std::time::Instant::now();
    let train_ds = Dataset::generate(&sys, &geo, 1001, n_train).unwrap();
    let test_ds = Dataset::generate(&sys, &geo, 2002, n_test).unwrap();
    println!("datasets: {:?}", t0.elapsed());

    let final_gain: f64 = args.get(6).map(|v| v.parse().unwrap()).unwrap_or(1.0);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(42);
    let mut model = UsrmNet::random(2, 2, 1, &mut rng);
    if final_gain != 1.0 {
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
    }
    let mut cfg = TrainConfig::default_with_seed(7);
    cfg.epochs = epochs;
    let t0 = std::time::Instant::now();
    let log = if epochs > 0 {
        let (_duals, log) =
            train_usrmnet(&mut model, train_ds.train_samples().unwrap(), &cfg).unwrap();
        log
    } else {
        model = UsrmNet::zeroed(2, 2, 1);
        usrmnet::learn::TrainLog::default()
    };
    println!("train: {:?}", t0.elapsed());

    for layer in 0..(if epochs > 0 { 2 } else { 0 }) {
        let recs = log.layer_records(layer);
        let first = recs.first().unwrap();
        let last = recs.last().unwrap();
        println!(
            "layer {layer}: loss {:.4} -> {:.4} ({:.1}%)  vg {:.5} -> {:.5}  wsr {:.4} -> {:.4}",
            first.loss,
            last.loss,
            100.0 * last.loss / first.loss,
            first.mean_vg,
            last.mean_vg,
            first.mean_wsr,
            last.mean_wsr
        );
        let last10: Vec<f64> = recs.iter().rev().take(10).map(|r| r.s1).collect();
        let (lo, hi) = last10
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        println!(
            "  s1 final {:.4}, last-10 range {:.4} ({:.0}% of |final|)",
            last.s1,
            hi - lo,
            100.0 * (hi - lo) / last.s1.abs()
        );
    }

    // Layer-wise mean WSR on the test set.
    let mut per_layer = vec![0.0f64; model.depth()];
    for sample in &test_ds.samples {
        let spec = usrmnet::proj::C1Spec::from_realization(&sample.real).unwrap();
        let trace =
            usrmnet::unroll::usrmnet_forward(&model, &sample.x0, &sample.w0, &sample.real, &spec)
                .unwrap();
        for (acc, w) in per_layer.iter_mut().zip(&trace.wsr_per_layer) {
            *acc += w / test_ds.samples.len() as f64;
        }
    }
    println!("mean test WSR per layer: {per_layer:?}");

    let t0 = std::time::Instant::now();
    let report = evaluate(&model, &test_ds).unwrap();
    println!("eval: {:?}", t0.elapsed());
    println!(
        "feasible fraction = {:.4}; mean feasible WSR = {:?}",
        report.feasible_fraction, report.mean_wsr_feasible
    );
    let mut vgs: Vec<f64> = report.rows.iter().map(|r| r.vg).collect();
    vgs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "vg quantiles: p50 {:.2e} p75 {:.2e} p90 {:.2e} p95 {:.2e} max {:.2e}",
        vgs[vgs.len() / 2],
        vgs[vgs.len() * 3 / 4],
        vgs[vgs.len() * 9 / 10],
        vgs[vgs.len() * 19 / 20],
        vgs[vgs.len() - 1]
    );

    // Oracle gap on the feasible test samples.
    let t0 = std::time::Instant::now();
    let mut model_sum = 0.0;
    let mut oracle_sum = 0.0;
    let mut count = 0;
    for (row, sample) in report.rows.iter().zip(&test_ds.samples) {
        if !row.feasible {
            continue;
        }
        let oracle = oracle_wsr(&sample.real, 200).unwrap();
        model_sum += row.wsr;
        oracle_sum += oracle.wsr;
        count += 1;
    }
    println!("oracle: {:?} over {count} samples", t0.elapsed());
    if count > 0 {
        println!(
            "mean model WSR {:.4} vs oracle {:.4} -> ratio {:.4}",
            model_sum / count as f64,
            oracle_sum / count as f64,
            model_sum / oracle_sum
        );
    }
}
