use hjbpi_core::elm::*;
use hjbpi_core::systems::*;

fn main() {
    for seed in [7u64, 1, 2, 3, 4, 5, 6, 8, 11, 13] {
        let bench = make_synthetic::<f64>(3);
        let cfg = ElmConfig { width: 800, seed, ..ElmConfig::default() };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let tp = &run.test_points;
        let rref = bench.reference.as_ref().unwrap();
        let last = eval_on_points(run.final_net().unwrap(), tp);
        let dip = tp.iter().zip(&last).fold(0.0f64, |acc, (x, &v)| acc.min(v - (rref.value)(x)));
        println!("n=3 m=800 seed={seed} err={:.3e} dip={dip:.3e} conv={}", run.final_test_error().unwrap(), run.converged);
    }
}
