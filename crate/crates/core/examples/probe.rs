use hjbpi_core::elm::*;
use hjbpi_core::systems::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "elm" {
        for (n, m, seed) in [(1usize, 50usize, 7u64), (2, 200, 7), (3, 800, 7)] {
            let bench = make_synthetic::<f64>(n);
            let cfg = ElmConfig { width: m, seed, ..ElmConfig::default() };
            let t = Instant::now();
            let run = run_elm_pi(&bench, None, &cfg).unwrap();
            let el = t.elapsed().as_secs_f64();
            println!(
                "elm n={n} m={m} seed={seed}: err {:?} converged {} iters {} time {el:.2}s",
                run.final_test_error().map(|v| format!("{v:.2e}")),
                run.converged,
                run.iterations.len()
            );
            // monotonicity from i>=1
            let tp = &run.test_points;
            let mut worst: f64 = f64::NEG_INFINITY;
            for w in run.iterations.windows(2).skip(1) {
                let prev = eval_on_points(&w[0].net, tp);
                let next = eval_on_points(&w[1].net, tp);
                let up = prev.iter().zip(&next).fold(f64::NEG_INFINITY, |a, (&p, &q)| a.max(q - p));
                worst = worst.max(up);
            }
            // pointwise V >= V* - 1e-4
            let rref = bench.reference.as_ref().unwrap();
            let last = eval_on_points(run.final_net().unwrap(), tp);
            let dip = tp.iter().zip(&last).fold(0.0f64, |acc, (x, &v)| acc.min(v - (rref.value)(x)));
            println!("   worst upward step (i>=1): {worst:.2e}, max dip below V*: {dip:.2e}");
        }
    }
    if which == "pendulum" {
        for m in [50usize, 100] {
            for seed in [0u64, 1, 2, 3, 4, 7] {
                let bench = make_pendulum::<f64>();
                let cfg = ElmConfig { width: m, seed, ..ElmConfig::default() };
                let t = Instant::now();
                let run = run_elm_pi(&bench, None, &cfg).unwrap();
                println!(
                    "pendulum m={m} seed={seed}: rms {:.2e} converged {} iters {} time {:.2}s diverged {:?}",
                    run.iterations.last().unwrap().residual_rms,
                    run.converged,
                    run.iterations.len(),
                    t.elapsed().as_secs_f64(),
                    run.diverged
                );
            }
        }
    }
    if which == "lorenz" {
        for m in [100usize, 400] {
            let bench = make_lorenz::<f64>();
            let cfg = ElmConfig { width: m, seed: 7, ..ElmConfig::default() };
            let t = Instant::now();
            let run = run_elm_pi(&bench, None, &cfg).unwrap();
            let el = t.elapsed().as_secs_f64();
            let net = std::sync::Arc::new(run.final_net().unwrap().clone());
            let policy = hjbpi_core::valuenet::Policy::FromValue(net);
            let mut rng = hjbpi_core::rng::stream_rng(7, hjbpi_core::rng::Stream::SimBatch);
            let box1 = BoundingBox::<f64>::symmetric(1.0, 3);
            let mut conv = 0;
            for _ in 0..10 {
                let x0 = box1.sample_interior(&mut rng);
                let traj = hjbpi_core::sim::simulate(&bench.system, &policy, &x0, 20.0, 0.01).unwrap();
                if hjbpi_core::sim::converges(&traj, 1e-3) { conv += 1; }
            }
            println!("lorenz m={m}: rms {:.2e} converged_traj {conv}/10 time {el:.2}s", run.iterations.last().unwrap().residual_rms);
        }
    }
}
