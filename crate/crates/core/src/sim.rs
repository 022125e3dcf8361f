//! Closed-loop trajectory simulation with running-cost accounting.
//!
//! Classical fixed-step RK4 on dx/dt = f(x) + g(x) kappa(x); the cost
//! integral of Q + u'Ru is accumulated with the trapezoid rule on the same
//! grid. Fixed step keeps runs deterministic; the benchmark dynamics are
//! non-stiff at the scales used.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::valuenet::Policy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    /// State infinity-norm exceeded 1e3; integration stopped early.
    Diverged { step: usize },
}

#[derive(Debug, Clone)]
pub struct Trajectory<S: Scalar> {
    pub times: Vec<S>,
    pub states: Vec<DVector<S>>,
    pub inputs: Vec<DVector<S>>,
    /// Running integral of the cost up to each grid node.
    pub accumulated_cost: Vec<S>,
    pub status: TrajectoryStatus,
}

impl<S: Scalar> Trajectory<S> {
    pub fn final_state(&self) -> &DVector<S> {
        self.states.last().expect("nonempty trajectory")
    }

    pub fn total_cost(&self) -> S {
        *self.accumulated_cost.last().expect("nonempty trajectory")
    }

    /// CSV rows: t, x_1..x_n, u_1..u_m, cost.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let n = self.states[0].len();
        let m = self.inputs[0].len();
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        for i in 1..=m {
            out.push_str(&format!(",u_{i}"));
        }
        out.push_str(",cost\n");
        for k in 0..self.times.len() {
            out.push_str(&format!("{}", self.times[k].to_f64()));
            for i in 0..n {
                out.push_str(&format!(",{}", self.states[k][i].to_f64()));
            }
            for i in 0..m {
                out.push_str(&format!(",{}", self.inputs[k][i].to_f64()));
            }
            out.push_str(&format!(",{}\n", self.accumulated_cost[k].to_f64()));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

const DIVERGENCE_BOUND: f64 = 1e3;

/// Fixed-step RK4 from `x0` over [0, T].
pub fn simulate<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    policy: &Policy<S>,
    x0: &[S],
    t_final: S,
    h: S,
) -> Result<Trajectory<S>> {
    if h <= S::zero() || t_final < h {
        return Err(Error::Config("simulate: need h > 0 and T >= h".into()));
    }
    let steps = (t_final / h).to_f64().round() as usize;
    let rhs = |x: &DVector<S>| -> DVector<S> {
        let u = policy.eval(sys, x.as_slice());
        sys.drift(x.as_slice(), &u)
    };
    let mut x = DVector::from_column_slice(x0);
    let mut u = policy.eval(sys, x0);
    let mut cost = S::zero();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut costs = Vec::with_capacity(steps + 1);
    times.push(S::zero());
    states.push(x.clone());
    inputs.push(u.clone());
    costs.push(cost);

    let half = S::from_double(0.5);
    let sixth = S::from_double(1.0 / 6.0);
    let two = S::from_double(2.0);
    let mut running_prev = sys.running_cost(x.as_slice(), &u);

    for k in 0..steps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (h * half)));
        let k3 = rhs(&(&x + &k2 * (h * half)));
        let k4 = rhs(&(&x + &k3 * h));
        x = &x + (k1 + k2 * two + k3 * two + k4) * (h * sixth);

        if x.iter().any(|v| !Scalar::is_finite(*v)) {
            return Err(Error::NumericalBlowup(k + 1));
        }
        u = policy.eval(sys, x.as_slice());
        let running = sys.running_cost(x.as_slice(), &u);
        cost += (running_prev + running) * half * h;
        running_prev = running;

        times.push(S::from_double((k + 1) as f64) * h);
        states.push(x.clone());
        inputs.push(u.clone());
        costs.push(cost);

        if x.amax() > S::from_double(DIVERGENCE_BOUND) {
            return Ok(Trajectory {
                times,
                states,
                inputs,
                accumulated_cost: costs,
                status: TrajectoryStatus::Diverged { step: k + 1 },
            });
        }
    }
    Ok(Trajectory {
        times,
        states,
        inputs,
        accumulated_cost: costs,
        status: TrajectoryStatus::Completed,
    })
}

/// A trajectory counts as converged when it completed and the state stayed
/// within `tol` (infinity norm) over the final tenth of the grid.
pub fn converges<S: Scalar>(traj: &Trajectory<S>, tol: S) -> bool {
    if traj.status != TrajectoryStatus::Completed {
        return false;
    }
    let len = traj.states.len();
    let tail_start = (9 * len).div_ceil(10).min(len - 1);
    traj.states[tail_start..]
        .iter()
        .all(|x| x.amax() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_synthetic, BoundingBox, ControlAffineSystem, ScalarMap};
    use crate::valuenet::Policy;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    /// dx/dt = -x as a control system with g = 0.
    fn decay_system() -> ControlAffineSystem<f64> {
        let q: ScalarMap<f64> = Arc::new(|x: &[f64]| x[0] * x[0]);
        ControlAffineSystem::new(
            vec![-crate::expr::var(0)],
            vec![vec![crate::expr::c(0.0)]],
            q,
            None,
            nalgebra::DMatrix::identity(1, 1),
            BoundingBox::symmetric(2.0, 1),
        )
        .unwrap()
    }

    #[test]
    fn single_rk4_step_hand_value() {
        let sys = decay_system();
        let traj = simulate(&sys, &Policy::Zero, &[1.0], 0.1, 0.1).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_relative_eq!(traj.states[1][0], 0.9048375, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_start_stays_zero() {
        let sys = decay_system();
        let traj = simulate(&sys, &Policy::Zero, &[0.0], 1.0, 0.01).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        assert_eq!(traj.total_cost(), 0.0);
        assert!(converges(&traj, 1e-9));
    }

    #[test]
    fn decay_converges_at_tolerance() {
        let sys = decay_system();
        let traj = simulate(&sys, &Policy::Zero, &[1.0], 20.0, 0.01).unwrap();
        assert!(converges(&traj, 1e-3));
        assert!(!converges(&traj, 1e-12));
    }

    #[test]
    fn rk4_fourth_order_ratio() {
        let sys = decay_system();
        let exact = (-1.0f64).exp();
        let err = |h: f64| {
            let traj = simulate(&sys, &Policy::Zero, &[1.0], 1.0, h).unwrap();
            (traj.final_state()[0] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "order ratio {ratio} outside [12, 20]"
        );
    }

    #[test]
    fn unstable_flow_reports_divergence() {
        // dx/dt = 10 x with zero control blows past the bound
        let q: ScalarMap<f64> = Arc::new(|x: &[f64]| x[0] * x[0]);
        let sys = ControlAffineSystem::new(
            vec![crate::expr::c(10.0) * crate::expr::var(0)],
            vec![vec![crate::expr::c(0.0)]],
            q,
            None,
            nalgebra::DMatrix::identity(1, 1),
            BoundingBox::symmetric(2.0, 1),
        )
        .unwrap();
        let traj = simulate(&sys, &Policy::Zero, &[1.0], 5.0, 0.01).unwrap();
        assert!(matches!(traj.status, TrajectoryStatus::Diverged { .. }));
        assert!(!converges(&traj, 1e-3));
    }

    #[test]
    fn cost_matches_value_for_reference_policy() {
        let bench = make_synthetic::<f64>(1);
        let r = bench.reference.as_ref().unwrap();
        let pol = Policy::Map(r.policy.clone());
        let traj = simulate(&bench.system, &pol, &[0.5], 20.0, 0.01).unwrap();
        let expect = (r.value)(&[0.5]);
        assert_relative_eq!(expect, 0.3125, epsilon = 1e-15);
        assert!(
            (traj.total_cost() - expect).abs() < 2e-2,
            "cost {} vs value {}",
            traj.total_cost(),
            expect
        );
    }
}
