//! Policy-evaluation (GHJB) and optimal (HJB) residuals.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;
use crate::systems::{ControlAffineSystem, Reference};
use crate::valuenet::{Policy, ValueFunction};

/// One residual evaluation, with the pieces kept so the identity
/// residual = running_cost + DV . drift_closed stays recomputable.
#[derive(Debug, Clone)]
pub struct ResidualSample<S: Scalar> {
    pub x: Vec<S>,
    pub residual: S,
    pub drift_closed: DVector<S>,
    pub running_cost: S,
}

/// G(x, kappa, DV) = Q(x) + kappa' R kappa + DV (f + g kappa).
pub fn ghjb_residual<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    policy: &Policy<S>,
    value_fn: &dyn ValueFunction<S>,
    x: &[S],
) -> ResidualSample<S> {
    let u = policy.eval(sys, x);
    let drift = sys.drift(x, &u);
    let running = sys.running_cost(x, &u);
    let dv = value_fn.gradient(x);
    let residual = running + dv.dot(&drift);
    ResidualSample {
        x: x.to_vec(),
        residual,
        drift_closed: drift,
        running_cost: running,
    }
}

/// H(x, DV) = -Q(x) - DV f(x) + 1/4 DV g R^{-1} g' DV'.
pub fn hjb_residual<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    value_fn: &dyn ValueFunction<S>,
    x: &[S],
) -> S {
    let dv = value_fn.gradient(x);
    let f = sys.eval_f(x);
    let g = sys.eval_g(x);
    let gtdv = g.transpose() * &dv;
    let quad = (&sys.r_inv * &gtdv).dot(&gtdv);
    -sys.eval_q(x) - dv.dot(&f) + S::from_double(0.25) * quad
}

/// Wraps a closed-form value function and gradient in the net evaluation
/// interface, so oracle values flow through the same residual code paths.
pub struct AnalyticValue<S: Scalar> {
    pub value: crate::systems::ScalarMap<S>,
    pub gradient: crate::systems::VectorMap<S>,
    pub hessian_origin: Option<DMatrix<S>>,
}

impl<S: Scalar> AnalyticValue<S> {
    pub fn from_reference(r: &Reference<S>) -> Self {
        AnalyticValue {
            value: r.value.clone(),
            gradient: r.gradient.clone(),
            hessian_origin: None,
        }
    }
}

impl<S: Scalar> ValueFunction<S> for AnalyticValue<S> {
    fn value(&self, x: &[S]) -> S {
        (self.value)(x)
    }

    fn gradient(&self, x: &[S]) -> DVector<S> {
        (self.gradient)(x)
    }

    fn hessian_origin(&self) -> Option<DMatrix<S>> {
        self.hessian_origin.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_bilinear, make_synthetic};
    use crate::valuenet::{Activation, ValueNet};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use std::sync::Arc;

    #[test]
    fn reference_solves_its_own_ghjb() {
        let bench = make_synthetic::<f64>(1);
        let r = bench.reference.as_ref().unwrap();
        let adapter = AnalyticValue::from_reference(r);
        let pol = Policy::Map(r.policy.clone());
        let s = ghjb_residual(&bench.system, &pol, &adapter, &[0.5]);
        assert!(s.residual.abs() < 1e-12, "residual {}", s.residual);
        // recomposition identity
        assert_relative_eq!(
            s.residual,
            s.running_cost + adapter.gradient(&s.x).dot(&s.drift_closed),
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_policy_zero_net_residual_is_q() {
        let bench = make_synthetic::<f64>(2);
        let net = ValueNet::<f64>::init_random(5, 2, 0, Activation::Tanh);
        let x = [0.3, -0.4];
        let s = ghjb_residual(&bench.system, &Policy::Zero, &net, &x);
        assert_eq!(s.residual, bench.system.eval_q(&x));
    }

    #[test]
    fn hand_evaluated_single_neuron_residual() {
        let bench = make_synthetic::<f64>(1);
        let net = ValueNet {
            w: nalgebra::DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 0.0),
            beta: DVector::from_element(1, 1.0),
            activation: Activation::Tanh,
            bias_shift: 0.0,
        };
        let pol = Policy::Map(Arc::new(|x: &[f64]| {
            DVector::from_element(1, -2.0 * x[0])
        }));
        let s = ghjb_residual(&bench.system, &pol, &net, &[0.5]);
        let sech2 = 1.0 - 0.5f64.tanh().powi(2);
        let expect = 0.375 + 1.0 + sech2 * (0.125 - 1.0);
        assert_relative_eq!(s.residual, expect, epsilon = 1e-15);
        assert_relative_eq!(s.residual, 0.6869, epsilon = 1e-4);
    }

    #[test]
    fn hjb_residual_of_reference_vanishes() {
        let bench = make_synthetic::<f64>(1);
        let adapter = AnalyticValue::from_reference(bench.reference.as_ref().unwrap());
        assert!(hjb_residual(&bench.system, &adapter, &[0.7]).abs() < 1e-12);

        let bil = make_bilinear::<f64>();
        let ad2 = AnalyticValue::from_reference(bil.reference.as_ref().unwrap());
        assert!(hjb_residual(&bil.system, &ad2, &[0.3]).abs() < 1e-12);
    }

    #[test]
    fn hjb_residual_of_zero_net_is_minus_q() {
        let bench = make_synthetic::<f64>(2);
        let net = ValueNet::<f64>::init_random(4, 2, 1, Activation::Tanh);
        let x = [0.5, 0.25];
        assert_eq!(
            hjb_residual(&bench.system, &net, &x),
            -bench.system.eval_q(&x)
        );
    }

    #[test]
    fn residual_is_affine_in_beta() {
        // exact check with dyadic weights so products and sums do not round
        let bench = make_synthetic::<f64>(1);
        let mk = |b1: f64, b2: f64| ValueNet {
            w: nalgebra::DMatrix::from_column_slice(2, 1, &[0.5, 0.25]),
            b: DVector::from_column_slice(&[0.0, 0.0]),
            beta: DVector::from_column_slice(&[b1, b2]),
            activation: Activation::Relu,
            bias_shift: 0.0,
        };
        let pol = Policy::Map(Arc::new(|x: &[f64]| DVector::from_element(1, -x[0])));
        let x = [0.5];
        let r12 = ghjb_residual(&bench.system, &pol, &mk(0.25, 0.5), &x);
        let r1 = ghjb_residual(&bench.system, &pol, &mk(0.25, 0.0), &x);
        let r2 = ghjb_residual(&bench.system, &pol, &mk(0.0, 0.5), &x);
        assert_eq!(r12.residual, r1.residual + r2.residual - r12.running_cost);

        // float tolerance for generic weights
        let bench2 = make_synthetic::<f64>(2);
        for seed in 0..20u64 {
            let mut n1 = ValueNet::<f64>::init_random(8, 2, seed, Activation::Tanh);
            let mut n2 = n1.clone();
            let mut r = crate::rng::stream_rng(seed, crate::rng::Stream::TestPoints);
            n1.beta = DVector::from_fn(8, |_, _| crate::rng::unit_uniform(&mut r));
            n2.beta = DVector::from_fn(8, |_, _| crate::rng::unit_uniform(&mut r));
            let sum = ValueNet {
                beta: &n1.beta + &n2.beta,
                ..n1.clone()
            };
            let x: Vec<f64> = (0..2).map(|_| crate::rng::unit_uniform(&mut r)).collect();
            let pol = Policy::Zero;
            let a = ghjb_residual(&bench2.system, &pol, &sum, &x);
            let b1 = ghjb_residual(&bench2.system, &pol, &n1, &x);
            let b2 = ghjb_residual(&bench2.system, &pol, &n2, &x);
            assert_relative_eq!(
                a.residual,
                b1.residual + b2.residual - a.running_cost,
                epsilon = 1e-12
            );
        }
    }
}
