use hjbpi_core::elm::*;
use hjbpi_core::pinn;
use hjbpi_core::systems::*;
use hjbpi_core::verify::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let spec = |n: usize, budget: u64| VerificationSpec {
        mode: VerifyMode::FullRoa, mu: 1e-4, epsilon: 0.1,
        c1: 0.01, c2: 1.99, delta: 1e-6,
        max_boxes: if budget > 0 { budget } else { default_max_boxes(n) },
    };
    if which == "elm1" {
        let bench = make_synthetic::<f64>(1);
        let cfg = ElmConfig { width: 50, seed: 2, ..ElmConfig::default() };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let net = run.final_net().unwrap().clone();
        let beta_sum: f64 = net.beta.iter().map(|b| b.abs()).sum();
        println!("elm n=1: err {:.2e} |beta|_1 {:.2e}", run.final_test_error().unwrap(), beta_sum);
        let t = Instant::now();
        let report = verify(&bench.system, &net, &spec(1, 0)).unwrap();
        println!("  verify: {:?} cond {:?} boxes {} time {:.1}s width {:.2e}", report.outcome, report.condition_id, report.boxes_processed, t.elapsed().as_secs_f64(), report.max_enclosure_width);
        if report.outcome == Outcome::Verified {
            println!("  spot check: {}", spot_check(&bench.system, &net, &spec(1, 0), 10_000, 3));
        }
    }
    if which == "elm2" {
        let bench = make_synthetic::<f64>(2);
        let cfg = ElmConfig { width: 200, seed: 7, ..ElmConfig::default() };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let net = run.final_net().unwrap().clone();
        let beta_sum: f64 = net.beta.iter().map(|b| b.abs()).sum();
        println!("elm n=2: err {:.2e} |beta|_1 {:.2e}", run.final_test_error().unwrap(), beta_sum);
        let t = Instant::now();
        let report = verify(&bench.system, &net, &spec(2, 2_000_000)).unwrap();
        println!("  verify: {:?} cond {:?} boxes {} time {:.1}s width {:.2e}", report.outcome, report.condition_id, report.boxes_processed, t.elapsed().as_secs_f64(), report.max_enclosure_width);
        if report.outcome == Outcome::Verified {
            println!("  spot check: {}", spot_check(&bench.system, &net, &spec(2, 0), 10_000, 3));
        }
    }
    if which == "pinn2" {
        let bench = make_synthetic::<f64>(2);
        let tcfg = pinn::TrainConfig { steps_per_iter: 2000, seed: 7, ..pinn::TrainConfig::default() };
        let t = Instant::now();
        let (run, _) = pinn::run_pinn_pi(&bench, None, &tcfg, 200, 10).unwrap();
        println!("pinn n=2 m=200: err {:.3e} time {:.1}s", run.final_test_error().unwrap(), t.elapsed().as_secs_f64());
        let net = run.final_net().unwrap().clone();
        let beta_sum: f64 = net.beta.iter().map(|b| b.abs()).sum();
        println!("  |beta|_1 {:.2e}", beta_sum);
        let t = Instant::now();
        let report = verify(&bench.system, &net, &spec(2, 2_000_000)).unwrap();
        println!("  verify: {:?} cond {:?} witness {:?} boxes {} time {:.1}s", report.outcome, report.condition_id, report.witness.as_ref().map(|w| (&w.point, w.value)), report.boxes_processed, t.elapsed().as_secs_f64());
        if report.outcome == Outcome::Verified {
            println!("  spot check: {}", spot_check(&bench.system, &net, &spec(2, 0), 10_000, 3));
        }
    }
}
