use hjbpi_core::elm::*;
use hjbpi_core::systems::*;

fn main() {
    for (n, m) in [(1usize, 50usize), (2, 200), (3, 800)] {
        for seed in 0u64..6 {
            let bench = make_synthetic::<f64>(n);
            let cfg = ElmConfig { width: m, seed, ..ElmConfig::default() };
            let run = run_elm_pi(&bench, None, &cfg).unwrap();
            let tp = &run.test_points;
            let ups: Vec<String> = run.iterations.windows(2).map(|w| {
                let prev = eval_on_points(&w[0].net, tp);
                let next = eval_on_points(&w[1].net, tp);
                format!("{:.1e}", prev.iter().zip(&next).fold(f64::NEG_INFINITY, |a, (&p, &q)| a.max(q - p)))
            }).collect();
            let rref = bench.reference.as_ref().unwrap();
            let last = eval_on_points(run.final_net().unwrap(), tp);
            let dip = tp.iter().zip(&last).fold(0.0f64, |acc, (x, &v)| acc.min(v - (rref.value)(x)));
            println!("n={n} m={m} seed={seed} err={:.1e} conv={} dip={dip:.1e} ups={}", run.final_test_error().unwrap(), run.converged, ups.join(" "));
            if n == 3 { break; }
        }
    }
}
