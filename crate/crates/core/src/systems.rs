//! Control-affine systems, their linearizations, and the benchmark suite.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{c, var, Expr};
use crate::interval::Interval;
use crate::rng;
use crate::scalar::Scalar;

pub type ScalarMap<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
pub type VectorMap<S> = Arc<dyn Fn(&[S]) -> DVector<S> + Send + Sync>;

/// Axis-aligned box domain.
#[derive(Debug, Clone)]
pub struct BoundingBox<S: Scalar> {
    pub lo: DVector<S>,
    pub hi: DVector<S>,
}

impl<S: Scalar> BoundingBox<S> {
    pub fn symmetric(half_width: f64, dim: usize) -> Self {
        let h = S::from_double(half_width);
        BoundingBox {
            lo: DVector::from_element(dim, -h),
            hi: DVector::from_element(dim, h),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[S]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }

    /// One point uniform in the open interior, never exactly the origin.
    pub fn sample_interior(&self, rng: &mut ChaCha8Rng) -> Vec<S> {
        loop {
            let x: Vec<S> = (0..self.dim())
                .map(|i| rng::range_uniform(rng, self.lo[i], self.hi[i]))
                .collect();
            let on_boundary = x
                .iter()
                .enumerate()
                .any(|(i, &v)| v == self.lo[i] || v == self.hi[i]);
            let at_origin = x.iter().all(|&v| v == S::zero());
            if !on_boundary && !at_origin {
                return x;
            }
        }
    }

    /// Tensor grid with `per_axis` points per axis, boundary included.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<S>> {
        assert!(per_axis >= 2);
        let n = self.dim();
        let total = per_axis.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let denom = S::from_double((per_axis - 1) as f64);
        for flat in 0..total {
            let mut idx = flat;
            let mut x = Vec::with_capacity(n);
            for i in 0..n {
                let k = idx % per_axis;
                idx /= per_axis;
                let t = S::from_double(k as f64) / denom;
                x.push(self.lo[i] + (self.hi[i] - self.lo[i]) * t);
            }
            out.push(x);
        }
        out
    }

    pub fn as_intervals(&self) -> Vec<Interval<S>> {
        (0..self.dim())
            .map(|i| Interval::new(self.lo[i], self.hi[i]))
            .collect()
    }
}

/// dx/dt = f(x) + g(x) u with running cost Q(x) + u' R u.
pub struct ControlAffineSystem<S: Scalar> {
    pub state_dim: usize,
    pub input_dim: usize,
    /// Drift field, one expression per state component.
    pub f: Vec<Expr>,
    /// Input matrix field, `g[i][j]` is row i, column j.
    pub g: Vec<Vec<Expr>>,
    /// State cost.
    pub q: ScalarMap<S>,
    /// Analytic Hessian of Q at the origin, when known.
    pub qhat: Option<DMatrix<S>>,
    /// Constant input cost weight (symmetric positive definite).
    pub r: DMatrix<S>,
    /// Cached inverse of R; computed once so the policy used in simulation
    /// and the policy verified by interval analysis are the same object.
    pub r_inv: DMatrix<S>,
    pub domain: BoundingBox<S>,
}

impl<S: Scalar> ControlAffineSystem<S> {
    pub fn new(
        f: Vec<Expr>,
        g: Vec<Vec<Expr>>,
        q: ScalarMap<S>,
        qhat: Option<DMatrix<S>>,
        r: DMatrix<S>,
        domain: BoundingBox<S>,
    ) -> Result<Self> {
        let state_dim = f.len();
        let input_dim = g.first().map_or(0, Vec::len);
        if g.len() != state_dim || g.iter().any(|row| row.len() != input_dim) {
            return Err(Error::Dimension("g must be state_dim x input_dim".into()));
        }
        if r.nrows() != input_dim || r.ncols() != input_dim {
            return Err(Error::Dimension("R must be input_dim x input_dim".into()));
        }
        if domain.dim() != state_dim {
            return Err(Error::Dimension("domain dim != state_dim".into()));
        }
        let chol = nalgebra::Cholesky::new(r.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("R".into()))?;
        let r_inv = chol.inverse();
        Ok(ControlAffineSystem {
            state_dim,
            input_dim,
            f,
            g,
            q,
            qhat,
            r,
            r_inv,
            domain,
        })
    }

    pub fn eval_f(&self, x: &[S]) -> DVector<S> {
        DVector::from_iterator(self.state_dim, self.f.iter().map(|e| e.eval(x)))
    }

    pub fn eval_g(&self, x: &[S]) -> DMatrix<S> {
        DMatrix::from_fn(self.state_dim, self.input_dim, |i, j| self.g[i][j].eval(x))
    }

    pub fn eval_q(&self, x: &[S]) -> S {
        (self.q)(x)
    }

    /// Closed-loop drift f(x) + g(x) u.
    pub fn drift(&self, x: &[S], u: &DVector<S>) -> DVector<S> {
        self.eval_f(x) + self.eval_g(x) * u
    }

    /// Running cost Q(x) + u' R u.
    pub fn running_cost(&self, x: &[S], u: &DVector<S>) -> S {
        self.eval_q(x) + (u.transpose() * &self.r * u)[(0, 0)]
    }

    pub fn f_interval(&self, x: &[Interval<S>]) -> Vec<Interval<S>> {
        self.f.iter().map(|e| e.eval_interval(x)).collect()
    }

    pub fn g_interval(&self, x: &[Interval<S>]) -> Vec<Vec<Interval<S>>> {
        self.g
            .iter()
            .map(|row| row.iter().map(|e| e.eval_interval(x)).collect())
            .collect()
    }

    /// Structural invariants: f(0) = 0, Q(0) = 0, Q > 0 on sampled points,
    /// origin strictly interior.
    pub fn validate(&self) -> Result<()> {
        let zero = vec![S::zero(); self.state_dim];
        let f0 = self.eval_f(&zero);
        if f0.iter().any(|&v| v != S::zero()) {
            return Err(Error::Config("f(0) != 0".into()));
        }
        if self.eval_q(&zero) != S::zero() {
            return Err(Error::Config("Q(0) != 0".into()));
        }
        for i in 0..self.state_dim {
            if !(self.domain.lo[i] < S::zero() && S::zero() < self.domain.hi[i]) {
                return Err(Error::Config("origin not strictly interior to domain".into()));
            }
        }
        let mut rng = rng::stream_rng(0xC0FFEE, rng::Stream::TestPoints);
        for _ in 0..128 {
            let x = self.domain.sample_interior(&mut rng);
            if self.eval_q(&x) <= S::zero() {
                return Err(Error::Config(format!(
                    "Q not positive at sampled point {:?}",
                    x.iter().map(|v| v.to_f64()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }
}

/// A = Df(0), B = g(0), Qhat = Hessian of Q at 0.
///
/// A and Qhat come from the registered analytic data (symbolic derivative of
/// the drift expressions, stored Hessian) and are cross-checked against
/// central finite differences; disagreement beyond 1e-6 is an error. When the
/// analytic route is unavailable (non-smooth drift, no stored Hessian) the
/// finite-difference estimate is returned.
pub fn linearize<S: Scalar>(
    sys: &ControlAffineSystem<S>,
) -> Result<(DMatrix<S>, DMatrix<S>, DMatrix<S>)> {
    let n = sys.state_dim;
    let zero = vec![S::zero(); n];
    let b = sys.eval_g(&zero);

    let a_fd = fd_jacobian(sys, &zero);
    let a = if sys.f.iter().all(Expr::is_smooth) {
        let a_sym = DMatrix::from_fn(n, n, |i, j| {
            sys.f[i].diff(j).expect("smooth drift").eval(zero.as_slice())
        });
        check_close(&a_sym, &a_fd, 1e-6, "Df(0)")?;
        a_sym
    } else {
        a_fd
    };

    let q_fd = fd_hessian_q(sys, &zero);
    let qhat = match &sys.qhat {
        Some(analytic) => {
            check_close(analytic, &q_fd, 1e-6, "Hessian of Q at 0")?;
            analytic.clone()
        }
        None => q_fd,
    };
    Ok((a, b, qhat))
}

fn fd_jacobian<S: Scalar>(sys: &ControlAffineSystem<S>, x0: &[S]) -> DMatrix<S> {
    let n = sys.state_dim;
    let h = S::from_double(1e-6);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = sys.eval_f(&xp);
        let fm = sys.eval_f(&xm);
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (S::from_double(2.0) * h);
        }
    }
    a
}

fn fd_hessian_q<S: Scalar>(sys: &ControlAffineSystem<S>, x0: &[S]) -> DMatrix<S> {
    let n = sys.state_dim;
    let h = S::from_double(1e-4);
    let q = |x: &[S]| sys.eval_q(x);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                let mut xp = x0.to_vec();
                let mut xm = x0.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (q(&xp) - S::from_double(2.0) * q(x0) + q(&xm)) / (h * h)
            } else {
                let mut xpp = x0.to_vec();
                let mut xpm = x0.to_vec();
                let mut xmp = x0.to_vec();
                let mut xmm = x0.to_vec();
                xpp[i] += h;
                xpp[j] += h;
                xpm[i] += h;
                xpm[j] -= h;
                xmp[i] -= h;
                xmp[j] += h;
                xmm[i] -= h;
                xmm[j] -= h;
                (q(&xpp) - q(&xpm) - q(&xmp) + q(&xmm)) / (S::from_double(4.0) * h * h)
            };
            out[(i, j)] = v;
        }
    }
    out
}

fn check_close<S: Scalar>(
    analytic: &DMatrix<S>,
    fd: &DMatrix<S>,
    tol: f64,
    what: &str,
) -> Result<()> {
    for i in 0..analytic.nrows() {
        for j in 0..analytic.ncols() {
            let a = analytic[(i, j)].to_f64();
            let b = fd[(i, j)].to_f64();
            let scale = 1.0f64.max(a.abs());
            if (a - b).abs() > tol * scale {
                return Err(Error::LinearizationMismatch(format!(
                    "{what}[{i},{j}]: analytic {a} vs finite-difference {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Analytic reference solution attached to a benchmark.
pub struct Reference<S: Scalar> {
    pub value: ScalarMap<S>,
    pub gradient: VectorMap<S>,
    pub policy: VectorMap<S>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BenchmarkName {
    Synthetic(usize),
    Bilinear,
    Pendulum,
    Lorenz,
}

impl std::fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchmarkName::Synthetic(n) => write!(f, "synthetic:{n}"),
            BenchmarkName::Bilinear => write!(f, "bilinear"),
            BenchmarkName::Pendulum => write!(f, "pendulum"),
            BenchmarkName::Lorenz => write!(f, "lorenz"),
        }
    }
}

impl std::str::FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(BenchmarkName::Bilinear),
            "pendulum" => Ok(BenchmarkName::Pendulum),
            "lorenz" => Ok(BenchmarkName::Lorenz),
            other => {
                if let Some(d) = other.strip_prefix("synthetic:") {
                    let n: usize = d
                        .parse()
                        .map_err(|_| Error::Parse(format!("benchmark: bad dimension in {s:?}")))?;
                    if n == 0 {
                        return Err(Error::Parse("benchmark: dimension must be >= 1".into()));
                    }
                    Ok(BenchmarkName::Synthetic(n))
                } else {
                    Err(Error::Parse(format!(
                        "benchmark: unknown name {s:?} (expected synthetic:<n>, bilinear, pendulum, lorenz)"
                    )))
                }
            }
        }
    }
}

pub struct Benchmark<S: Scalar> {
    pub name: BenchmarkName,
    pub system: ControlAffineSystem<S>,
    pub reference: Option<Reference<S>>,
    /// Set when B = g(0) makes (A, B) uncontrollable; disables LQR warm
    /// starts and gain matching.
    pub uncontrollable_linearization: bool,
}

impl<S: Scalar> Benchmark<S> {
    pub fn by_name(name: &BenchmarkName) -> Self {
        match name {
            BenchmarkName::Synthetic(n) => make_synthetic(*n),
            BenchmarkName::Bilinear => make_bilinear(),
            BenchmarkName::Pendulum => make_pendulum(),
            BenchmarkName::Lorenz => make_lorenz(),
        }
    }
}

/// n-dimensional decoupled benchmark with known solution:
/// drift x_i^3 per axis, one input per axis, Q = sum(x_i^2 + 2 x_i^4), R = I.
pub fn make_synthetic<S: Scalar>(n: usize) -> Benchmark<S> {
    assert!(n >= 1);
    let f: Vec<Expr> = (0..n).map(|i| var(i).pow(3)).collect();
    let g: Vec<Vec<Expr>> = (0..n)
        .map(|i| (0..n).map(|j| c(if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    let q: ScalarMap<S> = Arc::new(|x: &[S]| {
        let two = S::from_double(2.0);
        x.iter().fold(S::zero(), |acc, &v| acc + v * v + two * v.powi(4))
    });
    let qhat = DMatrix::from_diagonal_element(n, n, S::from_double(2.0));
    let r = DMatrix::identity(n, n);
    let domain = BoundingBox::symmetric(1.0, n);
    let system = ControlAffineSystem::new(f, g, q, Some(qhat), r, domain).expect("well-formed");

    let half = S::from_double(0.5);
    let value: ScalarMap<S> = Arc::new(move |x: &[S]| {
        x.iter().fold(S::zero(), |acc, &v| {
            let v2 = v * v;
            acc + half * v2 * v2 + half * (v2 + S::one()) * (v2 + S::one()) - half
        })
    });
    let gradient: VectorMap<S> = Arc::new(|x: &[S]| {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .map(|&v| S::from_double(4.0) * v.powi(3) + S::from_double(2.0) * v),
        )
    });
    let policy: VectorMap<S> = Arc::new(|x: &[S]| {
        DVector::from_iterator(x.len(), x.iter().map(|&v| -S::from_double(2.0) * v.powi(3) - v))
    });

    Benchmark {
        name: BenchmarkName::Synthetic(n),
        system,
        reference: Some(Reference {
            value,
            gradient,
            policy,
        }),
        uncontrollable_linearization: false,
    }
}

/// Scalar bilinear problem dx/dt = x u with Q = x^2, R = 1. The optimal
/// value 2|x| is non-smooth at the origin, so relu nets fit it exactly.
pub fn make_bilinear<S: Scalar>() -> Benchmark<S> {
    let f = vec![c(0.0)];
    let g = vec![vec![var(0)]];
    let q: ScalarMap<S> = Arc::new(|x: &[S]| x[0] * x[0]);
    let qhat = DMatrix::from_element(1, 1, S::from_double(2.0));
    let r = DMatrix::identity(1, 1);
    let domain = BoundingBox::symmetric(1.0, 1);
    let system = ControlAffineSystem::new(f, g, q, Some(qhat), r, domain).expect("well-formed");

    let value: ScalarMap<S> = Arc::new(|x: &[S]| S::from_double(2.0) * x[0].abs());
    let gradient: VectorMap<S> = Arc::new(|x: &[S]| {
        DVector::from_element(1, S::from_double(2.0) * sign(x[0]))
    });
    let policy: VectorMap<S> = Arc::new(|x: &[S]| DVector::from_element(1, -x[0].abs()));

    Benchmark {
        name: BenchmarkName::Bilinear,
        system,
        reference: Some(Reference {
            value,
            gradient,
            policy,
        }),
        uncontrollable_linearization: true,
    }
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Inverted pendulum: theta'' = (m g l sin(theta) - mu theta' + u) / (m l^2)
/// with l = 0.5, m = 0.1, g = 9.8, mu = 0.1; Q(x) = x'x, R = 2.
pub fn make_pendulum<S: Scalar>() -> Benchmark<S> {
    let (mass, length, grav, damping) = (0.1f64, 0.5f64, 9.8f64, 0.1f64);
    let ml2 = mass * length * length;
    let f = vec![
        var(1),
        c(grav / length) * var(0).sin() - c(damping / ml2) * var(1),
    ];
    let g = vec![vec![c(0.0)], vec![c(1.0 / ml2)]];
    let q: ScalarMap<S> = Arc::new(|x: &[S]| x[0] * x[0] + x[1] * x[1]);
    let qhat = DMatrix::from_diagonal_element(2, 2, S::from_double(2.0));
    let r = DMatrix::from_element(1, 1, S::from_double(2.0));
    let domain = BoundingBox::symmetric(2.0, 2);
    let system = ControlAffineSystem::new(f, g, q, Some(qhat), r, domain).expect("well-formed");

    Benchmark {
        name: BenchmarkName::Pendulum,
        system,
        reference: None,
        uncontrollable_linearization: false,
    }
}

/// Controlled chaotic system (Lorenz-type, coefficients as used throughout):
/// x1' = -10 x1 + 10 x2 + u, x2' = 28 x1 - x2 - x1 x2, x3' = -(8/3) x2 + x1 x2.
pub fn make_lorenz<S: Scalar>() -> Benchmark<S> {
    let f = vec![
        c(-10.0) * var(0) + c(10.0) * var(1),
        c(28.0) * var(0) - var(1) - var(0) * var(1),
        c(-8.0 / 3.0) * var(1) + var(0) * var(1),
    ];
    let g = vec![vec![c(1.0)], vec![c(0.0)], vec![c(0.0)]];
    let q: ScalarMap<S> = Arc::new(|x: &[S]| x.iter().fold(S::zero(), |acc, &v| acc + v * v));
    let qhat = DMatrix::from_diagonal_element(3, 3, S::from_double(2.0));
    let r = DMatrix::identity(1, 1);
    let domain = BoundingBox::symmetric(2.0, 3);
    let system = ControlAffineSystem::new(f, g, q, Some(qhat), r, domain).expect("well-formed");

    Benchmark {
        name: BenchmarkName::Lorenz,
        system,
        reference: None,
        uncontrollable_linearization: false,
    }
}
