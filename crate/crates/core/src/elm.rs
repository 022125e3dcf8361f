//! Policy evaluation as a linear least-squares solve over the output
//! weights of a random-feature net, plus the outer policy-iteration loop.
//!
//! With W and b frozen, the policy-evaluation residual is affine in beta:
//! row s of the design matrix is sigma'(w_j.x_s + b_j) (w_j . drift(x_s)) and
//! the target is minus the running cost, so the evaluation step reduces to
//! one minimum-norm least-squares solve.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ghjb;
use crate::riccati;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::systems::{Benchmark, BoundingBox, ControlAffineSystem};
use crate::valuenet::{Activation, Policy, ValueFunction, ValueNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Uniform,
    Grid,
}

/// Points at which the residual is evaluated. All strictly interior, none
/// exactly at the origin, deterministic in (seed, count, domain).
#[derive(Debug, Clone)]
pub struct CollocationSet<S: Scalar> {
    pub points: Vec<Vec<S>>,
    pub seed: u64,
    pub sampler: Sampler,
}

impl<S: Scalar> CollocationSet<S> {
    pub fn sample(
        domain: &BoundingBox<S>,
        count: usize,
        seed: u64,
        iteration: u32,
        sampler: Sampler,
    ) -> Self {
        let points = match sampler {
            Sampler::Uniform => {
                let mut rng = rng::stream_rng(seed, Stream::Collocation(iteration));
                (0..count).map(|_| domain.sample_interior(&mut rng)).collect()
            }
            Sampler::Grid => {
                let n = domain.dim();
                let per_axis = (count as f64).powf(1.0 / n as f64).ceil() as usize;
                let per_axis = per_axis.max(2);
                let mut pts = Vec::new();
                let k = S::from_double(per_axis as f64);
                let total = per_axis.pow(n as u32);
                for flat in 0..total {
                    let mut idx = flat;
                    let mut x = Vec::with_capacity(n);
                    for i in 0..n {
                        let j = idx % per_axis;
                        idx /= per_axis;
                        // cell centers keep every point strictly interior
                        let t = (S::from_double(j as f64) + S::from_double(0.5)) / k;
                        x.push(domain.lo[i] + (domain.hi[i] - domain.lo[i]) * t);
                    }
                    if x.iter().any(|&v| v != S::zero()) {
                        pts.push(x);
                    }
                }
                pts
            }
        };
        CollocationSet {
            points,
            seed,
            sampler,
        }
    }
}

/// Assembled least-squares system min |A beta - t|.
pub struct LeastSquaresProblem<S: Scalar> {
    pub a: DMatrix<S>,
    pub t: DVector<S>,
    /// Trailing rows holding the boundary penalty, if any.
    pub penalty_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasMode {
    /// Normalize V(0) = 0 by subtracting the bias after the solve.
    Subtract,
    /// Append the sqrt(lambda) sigma(b)' row with target 0.
    Penalty,
}

/// Builds the design matrix and target for one policy-evaluation solve.
/// `net.beta` is ignored; W and b stay fixed.
pub fn assemble<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    policy: &Policy<S>,
    net: &ValueNet<S>,
    colloc: &CollocationSet<S>,
    lambda: f64,
    bias_mode: BiasMode,
) -> LeastSquaresProblem<S> {
    let n_pts = colloc.points.len();
    let m = net.width();
    let penalty = if bias_mode == BiasMode::Penalty && lambda > 0.0 {
        1
    } else {
        0
    };
    let mut a = DMatrix::zeros(n_pts + penalty, m);
    let mut t = DVector::zeros(n_pts + penalty);

    let rows: Vec<(Vec<S>, S)> = colloc
        .points
        .par_iter()
        .map(|x| {
            let u = policy.eval(sys, x);
            let drift = sys.drift(x, &u);
            let running = sys.running_cost(x, &u);
            let z = net.pre_activations(x);
            let wd = &net.w * &drift;
            let row: Vec<S> = (0..m).map(|j| net.activation.d1(z[j]) * wd[j]).collect();
            (row, -running)
        })
        .collect();
    for (s, (row, target)) in rows.into_iter().enumerate() {
        for j in 0..m {
            a[(s, j)] = row[j];
        }
        t[s] = target;
    }
    if penalty == 1 {
        let sl = S::from_double(lambda.sqrt());
        for j in 0..m {
            a[(n_pts, j)] = sl * net.activation.apply(net.b[j]);
        }
        t[n_pts] = S::zero();
    }
    LeastSquaresProblem {
        a,
        t,
        penalty_rows: penalty,
    }
}

pub struct LsSolution<S: Scalar> {
    pub beta: DVector<S>,
    /// Numerical rank at the rcond cutoff.
    pub rank: usize,
    pub sigma_max: S,
    pub sigma_min: S,
}

/// Minimum-norm least-squares solution by SVD with a relative singular-value
/// cutoff. Tall systems are first reduced by a thin QR; the R factor shares
/// A's singular values, so the rank report and truncation are unchanged.
pub fn solve_ls<S: Scalar>(problem: &LeastSquaresProblem<S>, rcond: f64) -> Result<LsSolution<S>> {
    let (rows, cols) = problem.a.shape();
    if rows == 0 {
        return Err(Error::Dimension("least squares needs at least one row".into()));
    }
    let (reduced, rhs) = if rows > cols {
        let qr = problem.a.clone().qr();
        let mut qt_t = problem.t.clone();
        qr.q_tr_mul(&mut qt_t);
        (qr.r(), qt_t.rows(0, cols).into_owned())
    } else {
        (problem.a.clone(), problem.t.clone())
    };
    let svd = reduced.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == S::zero() {
        return Ok(LsSolution {
            beta: DVector::zeros(cols),
            rank: 0,
            sigma_max,
            sigma_min: S::zero(),
        });
    }
    let cutoff = sigma_max * S::from_double(rcond);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let sigma_min = svd.singular_values.min();
    let beta = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::Config(format!("svd solve: {e}")))?
        .column(0)
        .into_owned();
    Ok(LsSolution {
        beta,
        rank,
        sigma_max,
        sigma_min,
    })
}

#[derive(Debug, Clone)]
pub struct ElmConfig {
    pub width: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Boundary-penalty weight, used in `BiasMode::Penalty`.
    pub lambda: f64,
    pub bias_mode: BiasMode,
    pub max_iters: usize,
    /// Sup-norm convergence tolerance on the test grid.
    pub tol: f64,
    /// Redraw W, b and the collocation set every iteration.
    pub resample: bool,
    /// Zero the hidden biases after initialization (relu benchmarks).
    pub zero_bias: bool,
    /// Collocation count; defaults to width * state_dim.
    pub collocation: Option<usize>,
    /// Relative SVD cutoff.
    pub rcond: f64,
}

impl Default for ElmConfig {
    fn default() -> Self {
        ElmConfig {
            width: 50,
            seed: 7,
            activation: Activation::Tanh,
            lambda: 1.0,
            bias_mode: BiasMode::Subtract,
            max_iters: 10,
            tol: 1e-9,
            resample: false,
            zero_bias: false,
            collocation: None,
            rcond: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PiIteration<S: Scalar> {
    pub index: usize,
    pub net: ValueNet<S>,
    pub residual_rms: S,
    pub sup_change: Option<S>,
    pub test_error: Option<S>,
    /// Gain-matching target dropped this iteration (PINN runs only).
    pub gain_warning: bool,
    /// Training loss did not decrease over the iteration (PINN runs only).
    pub nondecreasing_loss: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PiRun<S: Scalar> {
    pub iterations: Vec<PiIteration<S>>,
    pub converged: bool,
    pub diverged: Option<String>,
    pub test_points: Vec<Vec<S>>,
}

impl<S: Scalar> PiRun<S> {
    pub fn final_net(&self) -> Option<&ValueNet<S>> {
        self.iterations.last().map(|it| &it.net)
    }

    pub fn final_test_error(&self) -> Option<S> {
        self.iterations.last().and_then(|it| it.test_error)
    }

    /// Per-iteration CSV: iter, residual_rms, sup_change, test_error, wall_ms.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("iter,residual_rms,sup_change,test_error,wall_ms\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{:e},{},{},{}\n",
                it.index,
                it.residual_rms.to_f64(),
                it.sup_change
                    .map_or(String::new(), |v| format!("{:e}", v.to_f64())),
                it.test_error
                    .map_or(String::new(), |v| format!("{:e}", v.to_f64())),
                it.wall_ms,
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Test points for convergence and error reporting: a 21-per-axis grid for
/// n <= 3, otherwise 2N random points.
pub fn test_points<S: Scalar>(domain: &BoundingBox<S>, n_colloc: usize, seed: u64) -> Vec<Vec<S>> {
    let n = domain.dim();
    if n <= 3 {
        domain.grid(21)
    } else {
        let mut rng = rng::stream_rng(seed, Stream::TestPoints);
        (0..2 * n_colloc)
            .map(|_| domain.sample_interior(&mut rng))
            .collect()
    }
}

pub fn eval_on_points<S: Scalar>(net: &dyn ValueFunction<S>, pts: &[Vec<S>]) -> Vec<S> {
    pts.iter().map(|x| net.value(x)).collect()
}

fn sup_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// LQR warm start: Kleinman's recursion on the linearization, seeded by pole
/// placement. The full Hessian of Q enters as the state weight, which gives
/// a gain somewhat stronger than the local optimum; the extra margin keeps
/// the initial closed loop contracting on all of the (closed) domain box,
/// where the locally optimal gain can leave boundary equilibria.
pub fn lqr_initial_policy<S: Scalar>(bench: &Benchmark<S>) -> Result<Policy<S>> {
    if bench.uncontrollable_linearization {
        if bench.system.input_dim == 1 && bench.system.state_dim == 1 {
            return Ok(Policy::NegHalfAbs);
        }
        return Err(Error::Uncontrollable(
            "no built-in initial policy for this benchmark".into(),
        ));
    }
    let (a, b, qhat) = crate::systems::linearize(&bench.system)?;
    let k0 = riccati::stabilizing_gain(&a, &b)?;
    let (_p, k) = riccati::kleinman(&a, &b, &qhat, &bench.system.r, &k0, 100, 1e-12)?;
    Ok(Policy::Linear(k))
}

/// Iterates least-squares policy evaluation and policy improvement until the
/// sup-norm change of the value on the test grid drops below `tol` or
/// `max_iters` is reached.
pub fn run_elm_pi<S: Scalar>(
    bench: &Benchmark<S>,
    initial_policy: Option<Policy<S>>,
    cfg: &ElmConfig,
) -> Result<PiRun<S>> {
    let sys = &bench.system;
    let n = sys.state_dim;
    let n_colloc = cfg.collocation.unwrap_or(cfg.width * n);
    let mut net = ValueNet::<S>::init_random(cfg.width, n, cfg.seed, cfg.activation);
    if cfg.zero_bias {
        net.b = DVector::zeros(cfg.width);
    }
    let mut colloc = CollocationSet::sample(&sys.domain, n_colloc, cfg.seed, 0, Sampler::Uniform);
    let tp = test_points(&sys.domain, n_colloc, cfg.seed);
    let oracle = bench
        .reference
        .as_ref()
        .map(|r| tp.iter().map(|x| (r.value)(x)).collect::<Vec<S>>());

    let mut policy = match initial_policy {
        Some(p) => p,
        None => lqr_initial_policy(bench)?,
    };
    let mut run = PiRun {
        iterations: Vec::new(),
        converged: false,
        diverged: None,
        test_points: tp.clone(),
    };
    let mut prev_vals: Option<Vec<S>> = None;
    let mut prev_rms: Option<S> = None;

    for i in 0..cfg.max_iters {
        let started = Instant::now();
        if cfg.resample && i > 0 {
            let derived =
                cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64));
            net = ValueNet::<S>::init_random(cfg.width, n, derived, cfg.activation);
            if cfg.zero_bias {
                net.b = DVector::zeros(cfg.width);
            }
            colloc =
                CollocationSet::sample(&sys.domain, n_colloc, cfg.seed, i as u32, Sampler::Uniform);
        }
        let problem = assemble(sys, &policy, &net, &colloc, cfg.lambda, cfg.bias_mode);
        let sol = solve_ls(&problem, cfg.rcond)?;
        net.beta = sol.beta;
        match cfg.bias_mode {
            BiasMode::Subtract => net.normalize_origin(),
            BiasMode::Penalty => net.bias_shift = S::zero(),
        }

        let data_rows = problem.a.nrows() - problem.penalty_rows;
        let resid = (&problem.a * &net.beta - &problem.t)
            .rows(0, data_rows)
            .norm_squared();
        let residual_rms = (resid / S::from_double(data_rows as f64)).sqrt();

        let vals = eval_on_points(&net, &tp);
        let sup_change = prev_vals.as_ref().map(|p| sup_diff(&vals, p));
        let test_error = oracle.as_ref().map(|o| sup_diff(&vals, o));
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;

        run.iterations.push(PiIteration {
            index: i,
            net: net.clone(),
            residual_rms,
            sup_change,
            test_error,
            gain_warning: false,
            nondecreasing_loss: false,
            wall_ms,
        });

        if let Some(prev) = prev_rms {
            if residual_rms > S::from_double(1e3) * prev {
                run.diverged = Some(format!(
                    "policy evaluation diverged at iteration {i}: residual rms grew from {:e} to {:e}",
                    prev.to_f64(),
                    residual_rms.to_f64()
                ));
                return Ok(run);
            }
        }
        prev_rms = Some(residual_rms);
        prev_vals = Some(vals);

        policy = Policy::FromValue(Arc::new(net.clone()));
        if let Some(ch) = sup_change {
            if ch < S::from_double(cfg.tol) {
                run.converged = true;
                break;
            }
        }
    }
    Ok(run)
}

/// RMS of the GHJB residual of `net` under `policy` over the collocation
/// points, via the residual evaluator (not the design matrix). Used to check
/// assembler/evaluator consistency.
pub fn residual_rms_direct<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    policy: &Policy<S>,
    net: &ValueNet<S>,
    colloc: &CollocationSet<S>,
) -> S {
    let total = colloc.points.iter().fold(S::zero(), |acc, x| {
        let r = ghjb::ghjb_residual(sys, policy, net, x).residual;
        acc + r * r
    });
    (total / S::from_double(colloc.points.len() as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_bilinear, make_synthetic};
    use approx::assert_relative_eq;

    #[test]
    fn assemble_hand_case() {
        // synthetic n=1, kappa = -2x, single tanh neuron, one point at 0.5
        let bench = make_synthetic::<f64>(1);
        let net = ValueNet {
            w: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 0.0),
            beta: DVector::from_element(1, 0.0),
            activation: Activation::Tanh,
            bias_shift: 0.0,
        };
        let pol = Policy::Map(Arc::new(|x: &[f64]| DVector::from_element(1, -2.0 * x[0])));
        let colloc = CollocationSet {
            points: vec![vec![0.5]],
            seed: 0,
            sampler: Sampler::Uniform,
        };
        let p = assemble(&bench.system, &pol, &net, &colloc, 0.0, BiasMode::Subtract);
        assert_eq!(p.a.nrows(), 1);
        assert_eq!(p.penalty_rows, 0);
        let sech2 = 1.0 - 0.5f64.tanh().powi(2);
        assert_relative_eq!(p.a[(0, 0)], sech2 * (0.125 - 1.0), epsilon = 1e-15);
        assert_relative_eq!(p.a[(0, 0)], -0.68814, epsilon = 1e-5);
        assert_eq!(p.t[0], -1.375);

        // exactly determined 1x1 system: solving it zeroes the residual
        let sol = solve_ls(&p, 1e-12).unwrap();
        let mut solved = net.clone();
        solved.beta = sol.beta;
        let r = ghjb::ghjb_residual(&bench.system, &pol, &solved, &[0.5]);
        assert!(r.residual.abs() < 1e-12);
    }

    #[test]
    fn penalty_row_appended_only_in_penalty_mode() {
        let bench = make_synthetic::<f64>(1);
        let net = ValueNet::<f64>::init_random(4, 1, 0, Activation::Tanh);
        let colloc = CollocationSet::sample(&bench.system.domain, 6, 0, 0, Sampler::Uniform);
        let p0 = assemble(
            &bench.system,
            &Policy::Zero,
            &net,
            &colloc,
            0.0,
            BiasMode::Subtract,
        );
        assert_eq!(p0.a.nrows(), 6);
        let p1 = assemble(
            &bench.system,
            &Policy::Zero,
            &net,
            &colloc,
            1.0,
            BiasMode::Penalty,
        );
        assert_eq!(p1.a.nrows(), 7);
        assert_eq!(p1.penalty_rows, 1);
    }

    #[test]
    fn solve_ls_examples() {
        // consistent overdetermined
        let p = LeastSquaresProblem {
            a: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            t: DVector::from_column_slice(&[1.0, 1.0]),
            penalty_rows: 0,
        };
        let s = solve_ls(&p, 1e-12).unwrap();
        assert_relative_eq!(s.beta[0], 1.0, epsilon = 1e-14);
        assert_eq!(s.rank, 1);

        // minimum-norm on a rank-1 row
        let p2 = LeastSquaresProblem {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            t: DVector::from_column_slice(&[2.0]),
            penalty_rows: 0,
        };
        let s2 = solve_ls(&p2, 1e-12).unwrap();
        assert_relative_eq!(s2.beta[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s2.beta[1], 1.0, epsilon = 1e-14);
        assert_eq!(s2.rank, 1);

        // identity
        let p3 = LeastSquaresProblem {
            a: DMatrix::identity(2, 2),
            t: DVector::from_column_slice(&[3.0, 4.0]),
            penalty_rows: 0,
        };
        let s3 = solve_ls(&p3, 1e-12).unwrap();
        assert_eq!(s3.beta, DVector::from_column_slice(&[3.0, 4.0]));
    }

    #[test]
    fn bilinear_relu_reaches_machine_precision() {
        let bench = make_bilinear::<f64>();
        let cfg = ElmConfig {
            width: 10,
            seed: 3,
            activation: Activation::Relu,
            zero_bias: true,
            ..ElmConfig::default()
        };
        let run = run_elm_pi(&bench, Some(Policy::NegHalfAbs), &cfg).unwrap();
        let err = run.final_test_error().unwrap();
        assert!(err <= 1e-12, "bilinear error {err:e}");
        assert!(run.converged);
    }

    #[test]
    fn synthetic_n1_converges_tight() {
        let bench = make_synthetic::<f64>(1);
        let cfg = ElmConfig {
            width: 50,
            seed: 7,
            ..ElmConfig::default()
        };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let err = run.final_test_error().unwrap();
        assert!(err <= 1e-6, "synthetic n=1 error {err:e}");
    }

    #[test]
    fn determinism_bitwise_beta_history() {
        let bench = make_synthetic::<f64>(1);
        let cfg = ElmConfig {
            width: 20,
            seed: 5,
            max_iters: 4,
            ..ElmConfig::default()
        };
        let a = run_elm_pi(&bench, None, &cfg).unwrap();
        let b = run_elm_pi(&bench, None, &cfg).unwrap();
        assert_eq!(a.iterations.len(), b.iterations.len());
        for (x, y) in a.iterations.iter().zip(&b.iterations) {
            assert_eq!(x.net.beta, y.net.beta);
        }
    }

    #[test]
    fn residual_certificate_matches_direct_evaluation() {
        let bench = make_synthetic::<f64>(2);
        let cfg = ElmConfig {
            width: 30,
            seed: 11,
            max_iters: 1,
            ..ElmConfig::default()
        };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let it = &run.iterations[0];
        // rebuild the same first-iteration state and compare the two routes
        let colloc =
            CollocationSet::sample(&bench.system.domain, 60, cfg.seed, 0, Sampler::Uniform);
        let pol = lqr_initial_policy(&bench).unwrap();
        let direct = residual_rms_direct(&bench.system, &pol, &it.net, &colloc);
        assert_relative_eq!(
            direct.to_f64(),
            it.residual_rms.to_f64(),
            epsilon = 1e-10,
            max_relative = 1e-10
        );
    }

    #[test]
    fn monotone_improvement_on_synthetic() {
        // the exact-PI monotonicity carries over once policy evaluation is
        // accurate; 4m collocation points push the least-squares floor well
        // below the 10*tol slack
        let bench = make_synthetic::<f64>(1);
        let cfg = ElmConfig {
            width: 50,
            seed: 2,
            collocation: Some(200),
            ..ElmConfig::default()
        };
        let run = run_elm_pi(&bench, None, &cfg).unwrap();
        let tp = &run.test_points;
        for w in run.iterations.windows(2) {
            let prev = eval_on_points(&w[0].net, tp);
            let next = eval_on_points(&w[1].net, tp);
            let max_up = prev
                .iter()
                .zip(&next)
                .fold(f64::NEG_INFINITY, |acc, (&p, &nx)| acc.max(nx - p));
            assert!(
                max_up <= 10.0 * cfg.tol,
                "value increased by {max_up:e} between iterations"
            );
        }
    }

    #[test]
    fn collocation_points_interior_and_deterministic() {
        let bench = make_synthetic::<f64>(2);
        let a = CollocationSet::<f64>::sample(&bench.system.domain, 40, 9, 0, Sampler::Uniform);
        let b = CollocationSet::<f64>::sample(&bench.system.domain, 40, 9, 0, Sampler::Uniform);
        assert_eq!(a.points, b.points);
        for x in &a.points {
            assert!(x.iter().all(|v| v.abs() < 1.0));
            assert!(x.iter().any(|&v| v != 0.0));
        }
        let g = CollocationSet::<f64>::sample(&bench.system.domain, 16, 9, 0, Sampler::Grid);
        for x in &g.points {
            assert!(x.iter().all(|v| v.abs() < 1.0));
            assert!(x.iter().any(|&v| v != 0.0));
        }
    }
}
