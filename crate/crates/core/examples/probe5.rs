use hjbpi_core::elm::*;
use hjbpi_core::systems::*;
use hjbpi_core::verify::*;
use std::time::Instant;

fn main() {
    let bench = make_pendulum::<f64>();
    let cfg = ElmConfig { width: 100, seed: 1, ..ElmConfig::default() };
    let run = run_elm_pi(&bench, None, &cfg).unwrap();
    let net = run.final_net().unwrap().clone();
    println!("pendulum m=100 seed=1 rms {:.2e}", run.iterations.last().unwrap().residual_rms);
    // where does the c1 level set reach?
    for t in [0.1f64, 0.3, 0.5, 0.55, 0.6, 0.75] {
        use hjbpi_core::valuenet::ValueFunction;
        println!("  V(0,{t}) = {:.5}, V({t},0) = {:.5}", net.value(&[0.0, t]), net.value(&[t, 0.0]));
    }
    for eps in [0.1f64, 0.5, 0.75] {
        let spec = VerificationSpec {
            mode: VerifyMode::FullRoa, mu: 1e-4, epsilon: eps,
            c1: 0.01, c2: 0.029, delta: 1e-6, max_boxes: 10_000_000,
        };
        let t = Instant::now();
        let report = verify(&bench.system, &net, &spec).unwrap();
        println!("eps={eps}: {:?} cond {:?} witness {:?} boxes {} time {:.1}s",
            report.outcome, report.condition_id,
            report.witness.as_ref().map(|w| (&w.point, w.value)),
            report.boxes_processed, t.elapsed().as_secs_f64());
    }
}
