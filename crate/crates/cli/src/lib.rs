//! Command implementations behind the `hjbpi` binary: configuration
//! parsing, run orchestration, and artifact emission.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hjbpi_core::elm::{self, BiasMode, ElmConfig, PiRun};
use hjbpi_core::io;
use hjbpi_core::pinn::{self, TrainConfig};
use hjbpi_core::sim;
use hjbpi_core::systems::{Benchmark, BenchmarkName};
use hjbpi_core::valuenet::{Activation, Policy};
use hjbpi_core::verify::{self, VerificationReport, VerificationSpec, VerifyMode};
use hjbpi_core::{Real, Scalar};

pub type Result<T> = anyhow::Result<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Elm,
    Pinn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElmSection {
    #[serde(default = "d_activation")]
    pub activation: String,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// "subtract" or "penalty".
    #[serde(default = "d_bias_mode")]
    pub bias_mode: String,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default)]
    pub resample: bool,
    #[serde(default)]
    pub zero_bias: bool,
    #[serde(default = "d_rcond")]
    pub rcond: f64,
}

fn d_activation() -> String {
    "tanh".into()
}
fn d_lambda() -> f64 {
    1.0
}
fn d_bias_mode() -> String {
    "subtract".into()
}
fn d_tol() -> f64 {
    1e-9
}
fn d_rcond() -> f64 {
    1e-12
}

impl Default for ElmSection {
    fn default() -> Self {
        ElmSection {
            activation: d_activation(),
            lambda: d_lambda(),
            bias_mode: d_bias_mode(),
            tol: d_tol(),
            resample: false,
            zero_bias: false,
            rcond: d_rcond(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnSection {
    #[serde(default = "d_steps")]
    pub steps_per_iter: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_one")]
    pub lambda_origin: f64,
    #[serde(default = "d_one")]
    pub lambda_gain: f64,
    /// 0 trains on the full collocation set.
    #[serde(default)]
    pub batch: usize,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
}

fn d_steps() -> usize {
    10_000
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_one() -> f64 {
    1.0
}
fn d_log_every() -> usize {
    100
}

impl Default for PinnSection {
    fn default() -> Self {
        PinnSection {
            steps_per_iter: d_steps(),
            learning_rate: d_lr(),
            adam_beta1: d_beta1(),
            adam_beta2: d_beta2(),
            adam_eps: d_eps(),
            lambda_origin: d_one(),
            lambda_gain: d_one(),
            batch: 0,
            log_every: d_log_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// "decrease_only" or "full_roa".
    #[serde(default = "d_mode")]
    pub mode: String,
    #[serde(default = "d_mu")]
    pub mu: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// 0 selects the dimension-dependent default.
    #[serde(default)]
    pub max_boxes: u64,
}

fn d_mode() -> String {
    "decrease_only".into()
}
fn d_mu() -> f64 {
    1e-4
}
fn d_epsilon() -> f64 {
    0.1
}
fn d_delta() -> f64 {
    1e-6
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            mode: d_mode(),
            mu: d_mu(),
            epsilon: d_epsilon(),
            c1: 0.0,
            c2: 0.0,
            delta: d_delta(),
            max_boxes: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "d_count")]
    pub count: usize,
    /// Half-width of the centered sampling cube for initial states;
    /// 0 samples from the benchmark domain.
    #[serde(default)]
    pub x0_half_width: f64,
    #[serde(default = "d_t_final")]
    pub t_final: f64,
    #[serde(default = "d_h")]
    pub h: f64,
    #[serde(default = "d_conv_tol")]
    pub tol: f64,
}

fn d_count() -> usize {
    10
}
fn d_t_final() -> f64 {
    10.0
}
fn d_h() -> f64 {
    0.01
}
fn d_conv_tol() -> f64 {
    1e-3
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            count: d_count(),
            x0_half_width: 0.0,
            t_final: d_t_final(),
            h: d_h(),
            tol: d_conv_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: String,
    pub algorithm: Algorithm,
    pub width: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    /// Collocation count; 0 derives width * state_dim.
    #[serde(default)]
    pub collocation: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub elm: ElmSection,
    #[serde(default)]
    pub pinn: PinnSection,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

fn d_seed() -> u64 {
    7
}
fn d_iterations() -> usize {
    10
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            benchmark: "synthetic:1".into(),
            algorithm: Algorithm::Elm,
            width: 50,
            seed: d_seed(),
            iterations: d_iterations(),
            collocation: 0,
            out_dir: None,
            elm: ElmSection::default(),
            pinn: PinnSection::default(),
            verify: Some(VerifySection::default()),
            simulate: Some(SimulateSection::default()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default)]
    pub rows: Vec<RunConfig>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("config: cannot read {}: {e}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
    Ok(cfg)
}

pub fn load_table_config(path: &Path) -> Result<TableConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("config: cannot read {}: {e}", path.display()))?;
    let cfg: TableConfig = toml::from_str(&text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
    Ok(cfg)
}

pub fn resolve_benchmark(name: &str) -> Result<Benchmark<Real>> {
    let parsed: BenchmarkName = name
        .parse()
        .map_err(|e| anyhow::anyhow!("benchmark: {e}"))?;
    Ok(Benchmark::by_name(&parsed))
}

fn elm_config(cfg: &RunConfig) -> Result<ElmConfig> {
    Ok(ElmConfig {
        width: cfg.width,
        seed: cfg.seed,
        activation: Activation::parse(&cfg.elm.activation)
            .map_err(|e| anyhow::anyhow!("elm.activation: {e}"))?,
        lambda: cfg.elm.lambda,
        bias_mode: match cfg.elm.bias_mode.as_str() {
            "subtract" => BiasMode::Subtract,
            "penalty" => BiasMode::Penalty,
            other => anyhow::bail!("elm.bias_mode: unknown mode {other:?}"),
        },
        max_iters: cfg.iterations,
        tol: cfg.elm.tol,
        resample: cfg.elm.resample,
        zero_bias: cfg.elm.zero_bias,
        collocation: (cfg.collocation > 0).then_some(cfg.collocation),
        rcond: cfg.elm.rcond,
    })
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        steps_per_iter: cfg.pinn.steps_per_iter,
        learning_rate: cfg.pinn.learning_rate,
        adam_beta1: cfg.pinn.adam_beta1,
        adam_beta2: cfg.pinn.adam_beta2,
        adam_eps: cfg.pinn.adam_eps,
        lambda_origin: cfg.pinn.lambda_origin,
        lambda_gain: cfg.pinn.lambda_gain,
        batch: (cfg.pinn.batch > 0).then_some(cfg.pinn.batch),
        seed: cfg.seed,
        collocation: (cfg.collocation > 0).then_some(cfg.collocation),
        log_every: cfg.pinn.log_every,
    }
}

pub fn verification_spec(section: &VerifySection, state_dim: usize) -> Result<VerificationSpec> {
    let mode = match section.mode.as_str() {
        "decrease_only" => VerifyMode::DecreaseOnly,
        "full_roa" => VerifyMode::FullRoa,
        other => anyhow::bail!("verify.mode: unknown mode {other:?}"),
    };
    let spec = VerificationSpec {
        mode,
        mu: section.mu,
        epsilon: section.epsilon,
        c1: section.c1,
        c2: section.c2,
        delta: section.delta,
        max_boxes: if section.max_boxes > 0 {
            section.max_boxes
        } else {
            verify::default_max_boxes(state_dim)
        },
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub benchmark: String,
    pub algorithm: Algorithm,
    pub n: usize,
    pub m: usize,
    pub collocation: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: Option<String>,
    pub final_test_error: Option<f64>,
    pub final_residual_rms: f64,
    pub wall_ms: f64,
}

/// Runs one policy-iteration configuration and writes its artifacts:
/// per-iteration CSV, serialized final net, summary record, and (for PINN)
/// the training trace and per-iteration checkpoints.
pub fn cmd_solve(cfg: &RunConfig, out_dir: &Path) -> Result<SolveSummary> {
    std::fs::create_dir_all(out_dir)?;
    let bench = resolve_benchmark(&cfg.benchmark)?;
    let n = bench.system.state_dim;
    let n_colloc = if cfg.collocation > 0 {
        cfg.collocation
    } else {
        cfg.width * n
    };
    let started = std::time::Instant::now();
    let run: PiRun<Real> = match cfg.algorithm {
        Algorithm::Elm => {
            let ecfg = elm_config(cfg)?;
            elm::run_elm_pi(&bench, None, &ecfg)?
        }
        Algorithm::Pinn => {
            let tcfg = train_config(cfg);
            let (run, trace) = pinn::run_pinn_pi(&bench, None, &tcfg, cfg.width, cfg.iterations)?;
            trace.write_csv(&out_dir.join("train.csv"))?;
            for it in &run.iterations {
                io::save_net(&it.net, &out_dir.join(format!("net_iter_{}.json", it.index)))?;
            }
            run
        }
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    run.write_csv(&out_dir.join("iterations.csv"))?;
    let net = run
        .final_net()
        .ok_or_else(|| anyhow::anyhow!("run produced no iterations"))?;
    io::save_net(net, &out_dir.join("net.json"))?;

    let summary = SolveSummary {
        benchmark: cfg.benchmark.clone(),
        algorithm: cfg.algorithm,
        n,
        m: cfg.width,
        collocation: n_colloc,
        iterations: run.iterations.len(),
        converged: run.converged,
        diverged: run.diverged.clone(),
        final_test_error: run.final_test_error().map(Scalar::to_f64),
        final_residual_rms: run
            .iterations
            .last()
            .map(|it| it.residual_rms.to_f64())
            .unwrap_or(f64::NAN),
        wall_ms,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Loads a serialized net, runs the verifier, writes the report. The exit
/// code contract (0 verified / 1 counterexample / 2 budget) is mapped by the
/// binary from the returned report.
pub fn cmd_verify(
    net_path: &Path,
    benchmark: &str,
    section: &VerifySection,
    out_dir: &Path,
) -> Result<VerificationReport> {
    std::fs::create_dir_all(out_dir)?;
    let bench = resolve_benchmark(benchmark)?;
    let net = io::load_net::<Real>(net_path)?;
    if net.state_dim() != bench.system.state_dim {
        anyhow::bail!(
            "net: state dimension {} does not match benchmark {} ({})",
            net.state_dim(),
            benchmark,
            bench.system.state_dim
        );
    }
    let spec = verification_spec(section, bench.system.state_dim)?;
    let report = verify::verify(&bench.system, &net, &spec)?;
    verify::save_report(&report, &out_dir.join("report.json"))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub count: usize,
    pub converged_count: usize,
    /// Mean accumulated cost over converged trajectories.
    pub mean_cost: Option<f64>,
}

/// Simulates a batch of closed-loop trajectories from seeded uniform initial
/// states and writes one CSV per trajectory plus a summary.
pub fn cmd_simulate(
    net_path: &Path,
    benchmark: &str,
    section: &SimulateSection,
    seed: u64,
    out_dir: &Path,
) -> Result<SimulateSummary> {
    std::fs::create_dir_all(out_dir)?;
    let bench = resolve_benchmark(benchmark)?;
    let net = io::load_net::<Real>(net_path)?;
    if net.state_dim() != bench.system.state_dim {
        anyhow::bail!("net: state dimension does not match benchmark");
    }
    let policy = Policy::FromValue(Arc::new(net));
    let domain = if section.x0_half_width > 0.0 {
        hjbpi_core::systems::BoundingBox::symmetric(section.x0_half_width, bench.system.state_dim)
    } else {
        bench.system.domain.clone()
    };
    let mut rng = hjbpi_core::rng::stream_rng(seed, hjbpi_core::rng::Stream::SimBatch);
    let x0s: Vec<Vec<Real>> = (0..section.count)
        .map(|_| domain.sample_interior(&mut rng))
        .collect();

    use rayon::prelude::*;
    let trajectories: Vec<hjbpi_core::Result<sim::Trajectory<Real>>> = x0s
        .par_iter()
        .map(|x0| sim::simulate(&bench.system, &policy, x0, section.t_final, section.h))
        .collect();

    let mut converged_count = 0;
    let mut cost_sum = 0.0;
    for (k, traj) in trajectories.iter().enumerate() {
        let traj = traj
            .as_ref()
            .map_err(|e| anyhow::anyhow!("trajectory {k}: {e}"))?;
        traj.write_csv(&out_dir.join(format!("traj_{k}.csv")))?;
        if sim::converges(traj, section.tol) {
            converged_count += 1;
            cost_sum += traj.total_cost();
        }
    }
    let summary = SimulateSummary {
        count: section.count,
        converged_count,
        mean_cost: (converged_count > 0).then(|| cost_sum / converged_count as f64),
    };
    std::fs::write(
        out_dir.join("simulate_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Runs each table row as a solve and aggregates one CSV line per row.
/// Row failures are recorded in the status column and do not stop the run.
pub fn cmd_table(cfg: &TableConfig, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    use rayon::prelude::*;
    let results: Vec<(usize, String)> = cfg
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let row_dir = out_dir.join(format!("row_{i}"));
            let line = match cmd_solve(row, &row_dir) {
                Ok(s) => format!(
                    "{},{},{},{:?},{},{:.3},ok",
                    s.n,
                    s.m,
                    s.collocation,
                    s.algorithm,
                    s.final_test_error
                        .map_or(String::new(), |v| format!("{v:e}")),
                    s.wall_ms / 1e3,
                ),
                Err(e) => format!(",,,,,,{}", format!("{e}").replace(',', ";")),
            };
            (i, line)
        })
        .collect();
    let mut lines = results;
    lines.sort_by_key(|(i, _)| *i);
    let mut out = String::from("n,m,N,algorithm,error,time_s,status\n");
    for (_, l) in lines {
        out.push_str(&l);
        out.push('\n');
    }
    let path = out_dir.join("table.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}

/// Emits the SMT query for the decrease inequality of a serialized net.
pub fn cmd_export_smt(
    net_path: &Path,
    benchmark: &str,
    section: &VerifySection,
    out_path: &Path,
) -> Result<()> {
    let bench = resolve_benchmark(benchmark)?;
    let net = io::load_net::<Real>(net_path)?;
    let spec = verification_spec(section, bench.system.state_dim)?;
    let query = verify::smt::export_smt_query(&bench.system, &net, &spec)?;
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out_path, query)?;
    Ok(())
}

/// The default configuration document, generated from the default values.
pub fn default_config_reference() -> String {
    let cfg = RunConfig::default();
    let body = toml::to_string_pretty(&cfg).expect("defaults serialize");
    format!(
        "# hjbpi configuration reference (generated defaults)\n\
         #\n\
         # benchmark: synthetic:<n> | bilinear | pendulum | lorenz\n\
         # algorithm: elm | pinn\n\
         # collocation: 0 derives width * state_dim\n\
         # verify.max_boxes: 0 selects 1e7 (n <= 2) or 1e8 (n >= 3)\n\
         # simulate.x0_half_width: 0 samples initial states from the benchmark domain\n\n{body}"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
benchmark = "synthetic:2"
algorithm = "elm"
width = 30
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.elm.bias_mode, "subtract");
        assert_eq!(cfg.pinn.steps_per_iter, 10_000);
    }

    #[test]
    fn unknown_fields_rejected() {
        let r: std::result::Result<RunConfig, _> = toml::from_str(
            r#"
benchmark = "synthetic:2"
algorithm = "elm"
width = 30
widht = 12
"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn invalid_benchmark_names_field() {
        let err = match resolve_benchmark("cartpole") {
            Err(e) => e,
            Ok(_) => panic!("cartpole should not resolve"),
        };
        assert!(format!("{err}").contains("benchmark"));
    }

    #[test]
    fn default_reference_is_parseable() {
        let text = default_config_reference();
        let cfg: RunConfig = toml::from_str(
            &text
                .lines()
                .filter(|l| !l.trim_start().starts_with('#'))
                .collect::<Vec<_>>()
                .join("\n"),
        )
        .unwrap();
        assert_eq!(cfg.width, 50);
    }
}
