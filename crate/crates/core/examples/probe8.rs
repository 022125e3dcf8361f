use hjbpi_core::elm::*;
use hjbpi_core::systems::*;
use hjbpi_core::verify::*;
use hjbpi_core::valuenet::Policy;

fn main() {
    let bench = make_pendulum::<f64>();
    let spec = VerificationSpec {
        mode: VerifyMode::FullRoa, mu: 1e-4, epsilon: 0.75,
        c1: 0.01, c2: 0.029, delta: 1e-6, max_boxes: 10_000_000,
    };
    for seed in 0u64..5 {
        let cfg = ElmConfig { width: 50, seed, ..ElmConfig::default() };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let net = run.final_net().unwrap().clone();
        let report = verify(&bench.system, &net, &spec).unwrap();
        // simulate from a batch in Omega
        let pol = Policy::FromValue(std::sync::Arc::new(net));
        let mut rng = hjbpi_core::rng::stream_rng(seed, hjbpi_core::rng::Stream::SimBatch);
        let mut conv = 0;
        let total = 24;
        for _ in 0..total {
            let x0 = bench.system.domain.sample_interior(&mut rng);
            match hjbpi_core::sim::simulate(&bench.system, &pol, &x0, 10.0, 0.01) {
                Ok(traj) => { if hjbpi_core::sim::converges(&traj, 5e-2) { conv += 1; } }
                Err(_) => {}
            }
        }
        println!("m=50 seed={seed}: verify {:?} cond {:?} sims {conv}/{total}", report.outcome, report.condition_id);
    }
}
