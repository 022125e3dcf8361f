use hjbpi_core::pinn;
use hjbpi_core::systems::*;
use std::time::Instant;

fn main() {
    let bench = make_synthetic::<f64>(5);
    let tcfg = pinn::TrainConfig { steps_per_iter: 2000, seed: 7, ..pinn::TrainConfig::default() };
    let t = Instant::now();
    let (run, _) = pinn::run_pinn_pi(&bench, None, &tcfg, 800, 10).unwrap();
    println!("pinn n=5 m=800: err {:.3e} time {:.1}s", run.final_test_error().unwrap(), t.elapsed().as_secs_f64());
    for it in &run.iterations {
        println!("  iter {} rms {:.2e} err {:?} gain_warn {} nondec {}", it.index, it.residual_rms, it.test_error.map(|v| format!("{v:.2e}")), it.gain_warning, it.nondecreasing_loss);
    }
}
