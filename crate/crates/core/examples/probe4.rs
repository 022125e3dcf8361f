use hjbpi_core::elm::*;
use hjbpi_core::systems::*;
use hjbpi_core::valuenet::Policy;
use hjbpi_core::sim;

fn main() {
    let bench = make_lorenz::<f64>();
    let lqr = lqr_initial_policy(&bench).unwrap();
    if let Policy::Linear(k) = &lqr { println!("LQR K = {:?}", k.as_slice()); }
    let box1 = BoundingBox::<f64>::symmetric(1.0, 3);
    let mut rng = hjbpi_core::rng::stream_rng(7, hjbpi_core::rng::Stream::SimBatch);
    let x0s: Vec<Vec<f64>> = (0..10).map(|_| box1.sample_interior(&mut rng)).collect();

    println!("--- initial LQR policy:");
    for x0 in &x0s[..4] {
        let traj = sim::simulate(&bench.system, &lqr, x0, 20.0, 0.01).unwrap();
        let peak = traj.states.iter().map(|s| s.amax()).fold(0.0f64, f64::max);
        println!("x0 {:?} final |x| {:.2e} peak {:.2} status {:?}", x0.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(), traj.final_state().amax(), peak, traj.status);
    }
    for m in [400usize] {
        let cfg = ElmConfig { width: m, seed: 7, ..ElmConfig::default() };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        println!("--- ELM m={m} net policy (rms history {:?}):", run.iterations.iter().map(|i| format!("{:.1e}", i.residual_rms)).collect::<Vec<_>>());
        let net = std::sync::Arc::new(run.final_net().unwrap().clone());
        let pol = Policy::FromValue(net);
        for x0 in &x0s[..6] {
            let traj = sim::simulate(&bench.system, &pol, x0, 20.0, 0.01).unwrap();
            let peak = traj.states.iter().map(|s| s.amax()).fold(0.0f64, f64::max);
            println!("x0 {:?} final |x| {:.2e} peak {:.2} status {:?}", x0.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(), traj.final_state().amax(), peak, traj.status);
        }
    }
}
