//! Small expression trees for system dynamics.
//!
//! Benchmark vector fields are registered as expressions so one definition
//! serves three consumers: point evaluation (simulation, residuals), interval
//! evaluation (the branch-and-bound verifier), and text export (SMT queries).

use crate::interval::Interval;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

use Expr::*;

pub fn c(v: f64) -> Expr {
    Const(v)
}

pub fn var(i: usize) -> Expr {
    Var(i)
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Sub(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Neg(Box::new(self))
    }
}

impl Expr {
    pub fn pow(self, p: i32) -> Expr {
        Pow(Box::new(self), p)
    }

    pub fn sin(self) -> Expr {
        Sin(Box::new(self))
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Const(v) => S::from_double(*v),
            Var(i) => x[*i],
            Neg(a) => -a.eval(x),
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Pow(a, p) => a.eval(x).powi(*p),
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            Tanh(a) => a.eval(x).tanh(),
            Abs(a) => a.eval(x).abs(),
            Min(a, b) => {
                let (u, v) = (a.eval(x), b.eval(x));
                if u < v {
                    u
                } else {
                    v
                }
            }
            Max(a, b) => {
                let (u, v) = (a.eval(x), b.eval(x));
                if u > v {
                    u
                } else {
                    v
                }
            }
        }
    }

    pub fn eval_interval<S: Scalar>(&self, x: &[Interval<S>]) -> Interval<S> {
        match self {
            Const(v) => Interval::point(S::from_double(*v)),
            Var(i) => x[*i],
            Neg(a) => a.eval_interval(x).neg(),
            Add(a, b) => a.eval_interval(x).add(&b.eval_interval(x)),
            Sub(a, b) => a.eval_interval(x).sub(&b.eval_interval(x)),
            Mul(a, b) => a.eval_interval(x).mul(&b.eval_interval(x)),
            Div(a, b) => a.eval_interval(x).div(&b.eval_interval(x)),
            Pow(a, p) => a.eval_interval(x).powi(*p),
            Sin(a) => a.eval_interval(x).sin(),
            Cos(a) => a.eval_interval(x).cos(),
            Tanh(a) => a.eval_interval(x).tanh(),
            Abs(a) => a.eval_interval(x).abs(),
            Min(a, b) => a.eval_interval(x).min(&b.eval_interval(x)),
            Max(a, b) => a.eval_interval(x).max(&b.eval_interval(x)),
        }
    }

    /// Partial derivative with respect to variable `i`.
    ///
    /// `Abs`/`Min`/`Max` are rejected: they are admitted in dynamics only
    /// where no derivative is ever requested (the verifier's mean-value
    /// refinement skips systems containing them).
    pub fn diff(&self, i: usize) -> Option<Expr> {
        let d = match self {
            Const(_) => c(0.0),
            Var(j) => c(if *j == i { 1.0 } else { 0.0 }),
            Neg(a) => -a.diff(i)?,
            Add(a, b) => a.diff(i)? + b.diff(i)?,
            Sub(a, b) => a.diff(i)? - b.diff(i)?,
            Mul(a, b) => a.diff(i)? * (**b).clone() + (**a).clone() * b.diff(i)?,
            Div(a, b) => Div(
                Box::new(a.diff(i)? * (**b).clone() - (**a).clone() * b.diff(i)?),
                Box::new((**b).clone().pow(2)),
            ),
            Pow(a, p) => c(f64::from(*p)) * (**a).clone().pow(p - 1) * a.diff(i)?,
            Sin(a) => Cos(a.clone()) * a.diff(i)?,
            Cos(a) => -(Sin(a.clone()) * a.diff(i)?),
            Tanh(a) => (c(1.0) - Tanh(a.clone()).pow(2)) * a.diff(i)?,
            Abs(_) | Min(_, _) | Max(_, _) => return None,
        };
        Some(simplify(d))
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Const(_) | Var(_) => true,
            Neg(a) | Pow(a, _) | Sin(a) | Cos(a) | Tanh(a) => a.is_smooth(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.is_smooth() && b.is_smooth(),
            Abs(_) | Min(_, _) | Max(_, _) => false,
        }
    }
}

/// Constant folding and identity elimination; keeps derivative trees small.
fn simplify(e: Expr) -> Expr {
    match e {
        Neg(a) => match simplify(*a) {
            Const(v) => Const(-v),
            a => Neg(Box::new(a)),
        },
        Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(u), Const(v)) => Const(u + v),
            (Const(z), b) if z == 0.0 => b,
            (a, Const(z)) if z == 0.0 => a,
            (a, b) => Add(Box::new(a), Box::new(b)),
        },
        Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(u), Const(v)) => Const(u - v),
            (a, Const(z)) if z == 0.0 => a,
            (a, b) => Sub(Box::new(a), Box::new(b)),
        },
        Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Const(u), Const(v)) => Const(u * v),
            (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
            (Const(o), b) if o == 1.0 => b,
            (a, Const(o)) if o == 1.0 => a,
            (a, b) => Mul(Box::new(a), Box::new(b)),
        },
        Pow(a, p) => match (simplify(*a), p) {
            (a, 1) => a,
            (_, 0) => Const(1.0),
            (Const(v), p) => Const(v.powi(p)),
            (a, p) => Pow(Box::new(a), p),
        },
        other => other,
    }
}
