//! One-hidden-layer value approximators and the feedback policies they induce.
//!
//! V(x) = beta' sigma(W x + b) - bias_shift, with closed-form gradient
//! beta' diag(sigma'(W x + b)) W. The origin Hessian is available for tanh
//! nets and feeds the gain-matching machinery.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
        }
    }

    /// First derivative; relu uses the subgradient choice sigma'(0) = 0.
    #[inline]
    pub fn d1<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::one() - t * t
            }
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }

    /// Second derivative; zero everywhere for relu (away from the kink).
    #[inline]
    pub fn d2<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                S::from_double(-2.0) * t * (S::one() - t * t)
            }
            Activation::Relu => S::zero(),
        }
    }

    /// Third derivative (tanh only); used by the gain loss backpropagation.
    #[inline]
    pub fn d3<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = S::one() - t * t;
                s * (S::from_double(6.0) * t * t - S::from_double(2.0))
            }
            Activation::Relu => S::zero(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Anything that exposes a value and its gradient. Implemented by [`ValueNet`]
/// and by analytic adapters so oracles flow through the same residual code.
pub trait ValueFunction<S: Scalar>: Send + Sync {
    fn value(&self, x: &[S]) -> S;
    /// Gradient DV(x) as a vector (the row layout is implied).
    fn gradient(&self, x: &[S]) -> DVector<S>;
    /// Hessian at the origin, when the representation has one.
    fn hessian_origin(&self) -> Option<DMatrix<S>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet<S: Scalar> {
    /// Hidden weights, `width x state_dim`.
    pub w: DMatrix<S>,
    /// Hidden biases, length `width`.
    pub b: DVector<S>,
    /// Output weights, length `width`.
    pub beta: DVector<S>,
    pub activation: Activation,
    /// Output offset so that value(0) = 0 after normalization.
    pub bias_shift: S,
}

impl<S: Scalar> ValueNet<S> {
    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Random hidden layer with entries of W and b i.i.d. uniform on [-1, 1],
    /// beta = 0. Deterministic in (width, state_dim, seed): W is drawn
    /// row-major, then b.
    pub fn init_random(width: usize, state_dim: usize, seed: u64, activation: Activation) -> Self {
        assert!(width >= 1 && state_dim >= 1);
        let mut rng = rng::stream_rng(seed, Stream::NetInit);
        let mut w = DMatrix::zeros(width, state_dim);
        for i in 0..width {
            for j in 0..state_dim {
                w[(i, j)] = rng::unit_uniform(&mut rng);
            }
        }
        let b = DVector::from_fn(width, |_, _| rng::unit_uniform(&mut rng));
        ValueNet {
            w,
            b,
            beta: DVector::zeros(width),
            activation,
            bias_shift: S::zero(),
        }
    }

    /// Pre-activations W x + b.
    pub fn pre_activations(&self, x: &[S]) -> DVector<S> {
        let xv = DVector::from_column_slice(x);
        &self.w * xv + &self.b
    }

    /// Raw output before the bias shift.
    pub fn raw_value(&self, x: &[S]) -> S {
        let z = self.pre_activations(x);
        let mut acc = S::zero();
        for j in 0..self.width() {
            acc += self.beta[j] * self.activation.apply(z[j]);
        }
        acc
    }

    /// Sets bias_shift so value(0) = 0 exactly.
    pub fn normalize_origin(&mut self) {
        self.bias_shift = S::zero();
        self.bias_shift = self.raw_value(&vec![S::zero(); self.state_dim()]);
    }

    /// Hessian sum over neurons: beta_j sigma''(b_j) w_j w_j'. Only defined
    /// for twice-differentiable activations.
    pub fn try_hessian_origin(&self) -> Result<DMatrix<S>> {
        if self.activation == Activation::Relu {
            return Err(Error::ReluSecondDerivative);
        }
        let n = self.state_dim();
        let mut h = DMatrix::zeros(n, n);
        for j in 0..self.width() {
            let coef = self.beta[j] * self.activation.d2(self.b[j]);
            if coef == S::zero() {
                continue;
            }
            let wj = self.w.row(j);
            for a in 0..n {
                for bidx in 0..n {
                    h[(a, bidx)] += coef * wj[a] * wj[bidx];
                }
            }
        }
        Ok(h)
    }
}

impl<S: Scalar> ValueFunction<S> for ValueNet<S> {
    fn value(&self, x: &[S]) -> S {
        self.raw_value(x) - self.bias_shift
    }

    fn gradient(&self, x: &[S]) -> DVector<S> {
        let z = self.pre_activations(x);
        let n = self.state_dim();
        let mut g = DVector::zeros(n);
        for j in 0..self.width() {
            let coef = self.beta[j] * self.activation.d1(z[j]);
            if coef == S::zero() {
                continue;
            }
            for k in 0..n {
                g[k] += coef * self.w[(j, k)];
            }
        }
        g
    }

    fn hessian_origin(&self) -> Option<DMatrix<S>> {
        self.try_hessian_origin().ok()
    }
}

/// Feedback law u = -1/2 R^{-1} g'(x) DV(x)', with the explicit zero branch
/// at the origin.
pub fn policy<S: Scalar>(
    value_fn: &dyn ValueFunction<S>,
    sys: &ControlAffineSystem<S>,
    x: &[S],
) -> DVector<S> {
    if x.iter().all(|&v| v == S::zero()) {
        return DVector::zeros(sys.input_dim);
    }
    let dv = value_fn.gradient(x);
    let gt = sys.eval_g(x).transpose();
    -(&sys.r_inv * (gt * dv)).scale(S::from_double(0.5))
}

/// Jacobian at the origin of the induced policy.
///
/// With DV(0) = 0 this is -1/2 R^{-1} B' HessV(0) in closed form. Otherwise
/// the product g'(x) DV(x)' is differentiated by central finite differences
/// (step 1e-5), which also captures the Dg'(0) DV(0) term for non-constant g.
pub fn policy_jacobian_origin<S: Scalar>(
    value_fn: &dyn ValueFunction<S>,
    sys: &ControlAffineSystem<S>,
) -> Result<DMatrix<S>> {
    let n = sys.state_dim;
    let zero = vec![S::zero(); n];
    let hess = value_fn
        .hessian_origin()
        .ok_or(Error::ReluSecondDerivative)?;
    let dv0 = value_fn.gradient(&zero);
    let half = S::from_double(0.5);
    if dv0.iter().all(|&v| v == S::zero()) {
        let bt = sys.eval_g(&zero).transpose();
        return Ok(-(&sys.r_inv * bt * hess).scale(half));
    }
    let h = S::from_double(1e-5);
    let mut jac = DMatrix::zeros(sys.input_dim, n);
    for k in 0..n {
        let mut xp = zero.clone();
        let mut xm = zero.clone();
        xp[k] += h;
        xm[k] -= h;
        let hp = sys.eval_g(&xp).transpose() * value_fn.gradient(&xp);
        let hm = sys.eval_g(&xm).transpose() * value_fn.gradient(&xm);
        let col = (hp - hm).scale(S::one() / (S::from_double(2.0) * h));
        jac.set_column(k, &col);
    }
    Ok(-(&sys.r_inv * jac).scale(half))
}

/// Feedback policies handled by the iteration drivers and the simulator.
#[derive(Clone)]
pub enum Policy<S: Scalar> {
    /// u = 0.
    Zero,
    /// u = K x.
    Linear(DMatrix<S>),
    /// u = -|x|/2, the built-in admissible start for the bilinear problem.
    NegHalfAbs,
    /// The improvement step applied to a value function.
    FromValue(Arc<dyn ValueFunction<S>>),
    /// Arbitrary map, used for analytic reference policies.
    Map(Arc<dyn Fn(&[S]) -> DVector<S> + Send + Sync>),
}

impl<S: Scalar> Policy<S> {
    pub fn eval(&self, sys: &ControlAffineSystem<S>, x: &[S]) -> DVector<S> {
        match self {
            Policy::Zero => DVector::zeros(sys.input_dim),
            Policy::Linear(k) => k * DVector::from_column_slice(x),
            Policy::NegHalfAbs => DVector::from_element(1, -x[0].abs() * S::from_double(0.5)),
            Policy::FromValue(v) => policy(v.as_ref(), sys, x),
            Policy::Map(f) => f(x),
        }
    }

    /// D kappa(0) when the policy has one.
    pub fn jacobian_origin(&self, sys: &ControlAffineSystem<S>) -> Option<DMatrix<S>> {
        match self {
            Policy::Zero => Some(DMatrix::zeros(sys.input_dim, sys.state_dim)),
            Policy::Linear(k) => Some(k.clone()),
            Policy::FromValue(v) => policy_jacobian_origin(v.as_ref(), sys).ok(),
            Policy::NegHalfAbs | Policy::Map(_) => None,
        }
    }
}
