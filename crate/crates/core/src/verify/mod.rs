//! Interval branch-and-bound verification of the Lyapunov decrease
//! inequality and the region-of-attraction conditions.
//!
//! The verifier either proves DV(x)(f + g kappa) <= -mu on the requested
//! region, or produces a point witness of the delta-weakened negation, or
//! runs out of its box budget. Witnesses are always confirmed by direct
//! point evaluation, so interval overestimation can never produce a false
//! counterexample; conversely a "verified" answer covers the whole region
//! by construction.

pub mod smt;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::interval::Interval;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::valuenet::{Activation, ValueFunction, ValueNet};

/// Axis-aligned box, the unit of branch-and-bound work.
#[derive(Debug, Clone)]
pub struct IntervalBox<S: Scalar> {
    pub dims: Vec<Interval<S>>,
}

impl<S: Scalar> IntervalBox<S> {
    pub fn from_domain(domain: &crate::systems::BoundingBox<S>) -> Self {
        IntervalBox {
            dims: domain.as_intervals(),
        }
    }

    pub fn midpoint(&self) -> Vec<S> {
        self.dims.iter().map(Interval::midpoint).collect()
    }

    /// Largest |x| over the box in the infinity norm.
    pub fn max_abs(&self) -> S {
        self.dims
            .iter()
            .fold(S::zero(), |acc, iv| acc.max(iv.abs_max()))
    }

    /// Bisect along the axis that is widest relative to the reference box.
    pub fn split(&self, reference: &IntervalBox<S>) -> (IntervalBox<S>, IntervalBox<S>) {
        let mut axis = 0;
        let mut best = S::from_double(-1.0);
        for (i, iv) in self.dims.iter().enumerate() {
            let ref_w = reference.dims[i].width();
            if ref_w == S::zero() {
                continue;
            }
            let rel = iv.width() / ref_w;
            if rel > best {
                best = rel;
                axis = i;
            }
        }
        let mid = self.dims[axis].midpoint();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[axis] = Interval::new(self.dims[axis].lo, mid);
        right.dims[axis] = Interval::new(mid, self.dims[axis].hi);
        (left, right)
    }
}

/// Interval counterpart of [`ValueFunction`]: rigorous enclosures of the
/// value and gradient over a box. The Hessian enclosure, when available,
/// enables the mean-value refinement inside the verifier.
pub trait IntervalValue<S: Scalar>: ValueFunction<S> {
    fn value_interval(&self, bx: &[Interval<S>]) -> Interval<S>;
    fn gradient_interval(&self, bx: &[Interval<S>]) -> Vec<Interval<S>>;
    fn hessian_interval(&self, bx: &[Interval<S>]) -> Option<Vec<Vec<Interval<S>>>> {
        let _ = bx;
        None
    }
}

impl<S: Scalar> IntervalValue<S> for ValueNet<S> {
    fn value_interval(&self, bx: &[Interval<S>]) -> Interval<S> {
        let mut acc = Interval::point(-self.bias_shift);
        for j in 0..self.width() {
            let z = self.pre_activation_interval(j, bx);
            let s = match self.activation {
                Activation::Tanh => z.tanh(),
                Activation::Relu => z.relu(),
            };
            acc = acc.add(&s.scale(self.beta[j]));
        }
        acc
    }

    fn gradient_interval(&self, bx: &[Interval<S>]) -> Vec<Interval<S>> {
        let n = self.state_dim();
        let mut dv = vec![Interval::zero(); n];
        for j in 0..self.width() {
            let z = self.pre_activation_interval(j, bx);
            let s1 = match self.activation {
                Activation::Tanh => z.sech2(),
                Activation::Relu => z.step(),
            };
            let coef = s1.scale(self.beta[j]);
            for (k, item) in dv.iter_mut().enumerate() {
                *item = item.add(&coef.mul(&Interval::point(self.w[(j, k)])));
            }
        }
        dv
    }

    fn hessian_interval(&self, bx: &[Interval<S>]) -> Option<Vec<Vec<Interval<S>>>> {
        if self.activation == Activation::Relu {
            return None;
        }
        let n = self.state_dim();
        let mut h = vec![vec![Interval::zero(); n]; n];
        for j in 0..self.width() {
            let z = self.pre_activation_interval(j, bx);
            let coef = z.tanh_dd().scale(self.beta[j]);
            for k in 0..n {
                let ck = coef.mul(&Interval::point(self.w[(j, k)]));
                for q in 0..n {
                    h[k][q] = h[k][q].add(&ck.mul(&Interval::point(self.w[(j, q)])));
                }
            }
        }
        Some(h)
    }
}

impl<S: Scalar> ValueNet<S> {
    fn pre_activation_interval(&self, j: usize, bx: &[Interval<S>]) -> Interval<S> {
        let mut z = Interval::point(self.b[j]);
        for (k, xk) in bx.iter().enumerate() {
            z = z.add(&xk.scale(self.w[(j, k)]));
        }
        z
    }
}

/// Symbolic derivatives of the dynamics, precomputed once per verification.
struct SystemDerivatives {
    /// df[k][q] = d f_k / d x_q.
    df: Vec<Vec<Expr>>,
    /// dg[k][l][q] = d g_kl / d x_q.
    dg: Vec<Vec<Vec<Expr>>>,
}

impl SystemDerivatives {
    fn build<S: Scalar>(sys: &ControlAffineSystem<S>) -> Option<Self> {
        let n = sys.state_dim;
        let mut df = Vec::with_capacity(n);
        for fk in &sys.f {
            let mut row = Vec::with_capacity(n);
            for q in 0..n {
                row.push(fk.diff(q)?);
            }
            df.push(row);
        }
        let mut dg = Vec::with_capacity(n);
        for grow in &sys.g {
            let mut rows = Vec::with_capacity(grow.len());
            for gkl in grow {
                let mut row = Vec::with_capacity(n);
                for q in 0..n {
                    row.push(gkl.diff(q)?);
                }
                rows.push(row);
            }
            dg.push(rows);
        }
        Some(SystemDerivatives { df, dg })
    }
}

/// kappa = -1/2 R^{-1} g'(x) DV(x)' as interval vectors.
fn kappa_interval<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    g: &[Vec<Interval<S>>],
    dv: &[Interval<S>],
) -> Vec<Interval<S>> {
    let m = sys.input_dim;
    let n = sys.state_dim;
    let half = S::from_double(-0.5);
    let mut kappa = Vec::with_capacity(m);
    for l in 0..m {
        let mut acc = Interval::zero();
        for p in 0..m {
            let mut gt_dv = Interval::zero();
            for k in 0..n {
                gt_dv = gt_dv.add(&g[k][p].mul(&dv[k]));
            }
            acc = acc.add(&gt_dv.scale(sys.r_inv[(l, p)]));
        }
        kappa.push(acc.scale(half));
    }
    kappa
}

/// Plain interval sweep of DV(x).(f(x) + g(x) kappa(x)) over the box, with
/// kappa expanded symbolically so the whole expression is one evaluation.
/// This form is inclusion-monotone: nested boxes give nested enclosures.
pub fn interval_eval_dvdot<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    vf: &dyn IntervalValue<S>,
    bx: &IntervalBox<S>,
) -> Interval<S> {
    let dv = vf.gradient_interval(&bx.dims);
    let f = sys.f_interval(&bx.dims);
    let g = sys.g_interval(&bx.dims);
    let kappa = kappa_interval(sys, &g, &dv);
    let mut acc = Interval::zero();
    for k in 0..sys.state_dim {
        let mut dk = f[k];
        for l in 0..sys.input_dim {
            dk = dk.add(&g[k][l].mul(&kappa[l]));
        }
        acc = acc.add(&dv[k].mul(&dk));
    }
    acc
}

/// Enclosure of V over the box: plain sweep intersected with the mean-value
/// form around the midpoint.
fn value_enclosure<S: Scalar>(vf: &dyn IntervalValue<S>, bx: &IntervalBox<S>) -> Interval<S> {
    let naive = vf.value_interval(&bx.dims);
    let mid = bx.midpoint();
    let mid_box: Vec<Interval<S>> = mid.iter().map(|&v| Interval::point(v)).collect();
    let center = vf.value_interval(&mid_box);
    let dv = vf.gradient_interval(&bx.dims);
    let mut mv = center;
    for (k, iv) in bx.dims.iter().enumerate() {
        let offset = Interval::new(iv.lo - mid[k], iv.hi - mid[k]);
        mv = mv.add(&dv[k].mul(&offset));
    }
    naive.intersect(&mv).unwrap_or(naive)
}

/// Enclosure of dVdot: plain sweep, refined by the mean-value form when the
/// dynamics are smooth and the net exposes a Hessian enclosure.
fn dvdot_enclosure<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    vf: &dyn IntervalValue<S>,
    derivs: Option<&SystemDerivatives>,
    bx: &IntervalBox<S>,
) -> Interval<S> {
    let naive = interval_eval_dvdot(sys, vf, bx);
    let (Some(derivs), Some(hv)) = (derivs, vf.hessian_interval(&bx.dims)) else {
        return naive;
    };
    let n = sys.state_dim;
    let m = sys.input_dim;
    let dv = vf.gradient_interval(&bx.dims);
    let f = sys.f_interval(&bx.dims);
    let g = sys.g_interval(&bx.dims);
    let kappa = kappa_interval(sys, &g, &dv);

    // d_k = f_k + sum_l g_kl kappa_l
    let mut d = Vec::with_capacity(n);
    for k in 0..n {
        let mut dk = f[k];
        for l in 0..m {
            dk = dk.add(&g[k][l].mul(&kappa[l]));
        }
        d.push(dk);
    }
    // dkappa[l][q]
    let neg_half = S::from_double(-0.5);
    let mut dkappa = vec![vec![Interval::zero(); n]; m];
    for l in 0..m {
        for q in 0..n {
            let mut acc = Interval::zero();
            for p in 0..m {
                let mut inner = Interval::zero();
                for k in 0..n {
                    let dgv = derivs.dg[k][p][q].eval_interval(&bx.dims);
                    inner = inner.add(&dgv.mul(&dv[k]));
                    inner = inner.add(&g[k][p].mul(&hv[k][q]));
                }
                acc = acc.add(&inner.scale(sys.r_inv[(l, p)]));
            }
            dkappa[l][q] = acc.scale(neg_half);
        }
    }
    // gradient of dVdot
    let mid = bx.midpoint();
    let mid_box = IntervalBox {
        dims: mid.iter().map(|&v| Interval::point(v)).collect(),
    };
    let center = interval_eval_dvdot(sys, vf, &mid_box);
    let mut mv = center;
    for q in 0..n {
        let mut grad_q = Interval::zero();
        for k in 0..n {
            // d d_k / d x_q
            let mut ddk = derivs.df[k][q].eval_interval(&bx.dims);
            for l in 0..m {
                let dgv = derivs.dg[k][l][q].eval_interval(&bx.dims);
                ddk = ddk.add(&dgv.mul(&kappa[l]));
                ddk = ddk.add(&g[k][l].mul(&dkappa[l][q]));
            }
            grad_q = grad_q.add(&hv[k][q].mul(&d[k]));
            grad_q = grad_q.add(&dv[k].mul(&ddk));
        }
        let offset = Interval::new(bx.dims[q].lo - mid[q], bx.dims[q].hi - mid[q]);
        mv = mv.add(&grad_q.mul(&offset));
    }
    naive.intersect(&mv).unwrap_or(naive)
}

/// Point evaluation of dVdot with the deployed policy (explicit zero branch).
pub fn dvdot_point<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    vf: &dyn ValueFunction<S>,
    x: &[S],
) -> S {
    let u = crate::valuenet::policy(vf, sys, x);
    let drift = sys.drift(x, &u);
    vf.gradient(x).dot(&drift)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Only the decrease inequality on the domain minus the origin ball.
    DecreaseOnly,
    /// The three region-of-attraction conditions.
    FullRoa,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationSpec {
    pub mode: VerifyMode,
    /// Decrease margin mu > 0.
    pub mu: f64,
    /// Radius of the excluded infinity-norm ball around the origin.
    pub epsilon: f64,
    /// Inner level bound (full ROA mode).
    #[serde(default)]
    pub c1: f64,
    /// Outer level bound (full ROA mode).
    #[serde(default)]
    pub c2: f64,
    /// Weakening tolerance for counterexample confirming.
    pub delta: f64,
    pub max_boxes: u64,
}

impl VerificationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mu <= 0.0 || self.delta <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::Config("verify: mu, delta, epsilon must be > 0".into()));
        }
        if self.max_boxes == 0 {
            return Err(Error::Config("verify: max_boxes must be >= 1".into()));
        }
        if self.mode == VerifyMode::FullRoa && !(0.0 < self.c1 && self.c1 < self.c2) {
            return Err(Error::Config("verify: need 0 < c1 < c2".into()));
        }
        Ok(())
    }
}

/// Default box budgets by dimension.
pub fn default_max_boxes(state_dim: usize) -> u64 {
    if state_dim <= 2 {
        10_000_000
    } else {
        100_000_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Verified,
    Counterexample,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    /// Eq-style decrease outside the origin ball (decrease_only mode).
    DecreaseOutsideBall,
    /// ROA condition 1: decrease on the band c1 <= V <= c2.
    RoaBandDecrease,
    /// ROA condition 2: the c2 level set avoids the domain boundary.
    RoaBoundary,
    /// ROA condition 3: the c1 level set is inside the origin ball.
    RoaInnerLevel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    /// Direct point evaluation of the violated quantity at the witness.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub outcome: Outcome,
    pub witness: Option<Witness>,
    pub condition_id: Option<ConditionId>,
    pub boxes_processed: u64,
    pub wall_ms: f64,
    /// Widest dVdot enclosure seen at the top level, for diagnosing nets
    /// that are hard to verify.
    pub max_enclosure_width: f64,
}

enum PhaseResult<S: Scalar> {
    Clear,
    Witness(Vec<S>, f64, ConditionId),
    OutOfBudget,
}

struct Search<'a, S: Scalar> {
    sys: &'a ControlAffineSystem<S>,
    vf: &'a dyn IntervalValue<S>,
    derivs: Option<SystemDerivatives>,
    spec: &'a VerificationSpec,
    reference: IntervalBox<S>,
    boxes_processed: u64,
    max_width: f64,
}

impl<'a, S: Scalar> Search<'a, S> {
    /// Generic branch-and-bound: `classify` returns Some(true) to accept a
    /// box, Some(false) to discard it, None to test the midpoint and split.
    /// `witness_check` returns the violated value when the midpoint is a
    /// confirmed counterexample.
    fn run(
        &mut self,
        roots: Vec<IntervalBox<S>>,
        condition: ConditionId,
        mut classify: impl FnMut(&mut Self, &IntervalBox<S>) -> Option<bool>,
        mut witness_check: impl FnMut(&Self, &[S]) -> Option<f64>,
    ) -> PhaseResult<S> {
        let mut stack = roots;
        while let Some(bx) = stack.pop() {
            self.boxes_processed += 1;
            if self.boxes_processed > self.spec.max_boxes {
                return PhaseResult::OutOfBudget;
            }
            match classify(self, &bx) {
                Some(true) | Some(false) => continue,
                None => {}
            }
            let mid = bx.midpoint();
            if let Some(value) = witness_check(self, &mid) {
                return PhaseResult::Witness(mid, value, condition);
            }
            let (l, r) = bx.split(&self.reference);
            stack.push(l);
            stack.push(r);
        }
        PhaseResult::Clear
    }
}

/// Branch-and-bound verification of the configured conditions.
pub fn verify<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    vf: &dyn IntervalValue<S>,
    spec: &VerificationSpec,
) -> Result<VerificationReport> {
    spec.validate()?;
    let started = Instant::now();
    let reference = IntervalBox::from_domain(&sys.domain);
    let derivs = SystemDerivatives::build(sys);
    let mut search = Search {
        sys,
        vf,
        derivs,
        spec,
        reference: reference.clone(),
        boxes_processed: 0,
        max_width: 0.0,
    };

    let eps = S::from_double(spec.epsilon);
    let mu = S::from_double(spec.mu);
    let delta = spec.delta;
    let mu_f = spec.mu;

    let result = match spec.mode {
        VerifyMode::DecreaseOnly => {
            let root = IntervalBox::from_domain(&sys.domain);
            search.run(
                vec![root],
                ConditionId::DecreaseOutsideBall,
                |s, bx| {
                    if bx.max_abs() < eps {
                        return Some(false); // strictly inside the excluded ball
                    }
                    let enc = dvdot_enclosure(s.sys, s.vf, s.derivs.as_ref(), bx);
                    s.max_width = s.max_width.max(enc.width().to_f64());
                    if enc.hi <= -mu {
                        Some(true)
                    } else {
                        None
                    }
                },
                |s, mid| {
                    let inside_ball = mid.iter().all(|v| v.abs().to_f64() < spec.epsilon);
                    if inside_ball {
                        return None;
                    }
                    let v = dvdot_point(s.sys, s.vf.as_value(), mid).to_f64();
                    (v >= -mu_f - delta).then_some(v)
                },
            )
        }
        VerifyMode::FullRoa => {
            let c1 = S::from_double(spec.c1);
            let c2 = S::from_double(spec.c2);
            // condition 2: V > c2 on each boundary face
            let mut faces = Vec::new();
            for axis in 0..sys.state_dim {
                for bound in [sys.domain.lo[axis], sys.domain.hi[axis]] {
                    let mut face = IntervalBox::from_domain(&sys.domain);
                    face.dims[axis] = Interval::point(bound);
                    faces.push(face);
                }
            }
            let r2 = search.run(
                faces,
                ConditionId::RoaBoundary,
                |s, bx| {
                    let v = value_enclosure(s.vf, bx);
                    if v.lo > c2 {
                        Some(true)
                    } else {
                        None
                    }
                },
                |s, mid| {
                    let v = s.vf.as_value().value(mid).to_f64();
                    (v <= spec.c2 + delta).then_some(v)
                },
            );
            // condition 3: V > c1 outside the origin ball
            let r3 = match r2 {
                PhaseResult::Clear => search.run(
                    vec![IntervalBox::from_domain(&sys.domain)],
                    ConditionId::RoaInnerLevel,
                    |s, bx| {
                        if bx.max_abs() < eps {
                            return Some(false);
                        }
                        let v = value_enclosure(s.vf, bx);
                        if v.lo > c1 {
                            Some(true)
                        } else {
                            None
                        }
                    },
                    |s, mid| {
                        let inside_ball = mid.iter().all(|v| v.abs().to_f64() < spec.epsilon);
                        if inside_ball {
                            return None;
                        }
                        let v = s.vf.as_value().value(mid).to_f64();
                        (v <= spec.c1 + delta).then_some(v)
                    },
                ),
                other => other,
            };
            // condition 1: decrease on the band c1 <= V <= c2
            match r3 {
                PhaseResult::Clear => search.run(
                    vec![IntervalBox::from_domain(&sys.domain)],
                    ConditionId::RoaBandDecrease,
                    |s, bx| {
                        let v = value_enclosure(s.vf, bx);
                        if v.hi < c1 || v.lo > c2 {
                            return Some(false); // disjoint from the band
                        }
                        let enc = dvdot_enclosure(s.sys, s.vf, s.derivs.as_ref(), bx);
                        s.max_width = s.max_width.max(enc.width().to_f64());
                        if enc.hi <= -mu {
                            Some(true)
                        } else {
                            None
                        }
                    },
                    |s, mid| {
                        let v = s.vf.as_value().value(mid).to_f64();
                        if v < spec.c1 || v > spec.c2 {
                            return None;
                        }
                        let d = dvdot_point(s.sys, s.vf.as_value(), mid).to_f64();
                        (d >= -mu_f - delta).then_some(d)
                    },
                ),
                other => other,
            }
        }
    };

    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let report = match result {
        PhaseResult::Clear => VerificationReport {
            outcome: Outcome::Verified,
            witness: None,
            condition_id: None,
            boxes_processed: search.boxes_processed,
            wall_ms,
            max_enclosure_width: search.max_width,
        },
        PhaseResult::Witness(point, value, condition) => VerificationReport {
            outcome: Outcome::Counterexample,
            witness: Some(Witness {
                point: point.iter().map(|v| v.to_f64()).collect(),
                value,
            }),
            condition_id: Some(condition),
            boxes_processed: search.boxes_processed,
            wall_ms,
            max_enclosure_width: search.max_width,
        },
        PhaseResult::OutOfBudget => VerificationReport {
            outcome: Outcome::BudgetExhausted,
            witness: None,
            condition_id: None,
            boxes_processed: search.boxes_processed,
            wall_ms,
            max_enclosure_width: search.max_width,
        },
    };
    Ok(report)
}

/// Helper so the closures above can reach point-evaluation methods.
trait AsValue<S: Scalar> {
    fn as_value(&self) -> &dyn ValueFunction<S>;
}

impl<S: Scalar> AsValue<S> for &dyn IntervalValue<S> {
    fn as_value(&self) -> &dyn ValueFunction<S> {
        // IntervalValue is a subtrait of ValueFunction
        *self as &dyn ValueFunction<S>
    }
}

/// Monte-Carlo soundness check of a verified report: direct point evaluation
/// of the verified conditions at random points of the relevant regions. Only
/// meaningful when the report outcome is Verified; returns true when every
/// sample satisfies the condition with margin >= 0.
pub fn spot_check<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    vf: &dyn IntervalValue<S>,
    spec: &VerificationSpec,
    samples: usize,
    seed: u64,
) -> bool {
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::TestPoints);
    let n = sys.state_dim;
    let vfp = vf as &dyn ValueFunction<S>;
    for i in 0..samples {
        let x = sys.domain.sample_interior(&mut rng);
        let inside_ball = x.iter().all(|v| v.abs().to_f64() < spec.epsilon);
        let v = vfp.value(&x).to_f64();
        match spec.mode {
            VerifyMode::DecreaseOnly => {
                if !inside_ball && dvdot_point(sys, vfp, &x).to_f64() > -spec.mu {
                    return false;
                }
            }
            VerifyMode::FullRoa => {
                if spec.c1 <= v && v <= spec.c2 && dvdot_point(sys, vfp, &x).to_f64() > -spec.mu {
                    return false;
                }
                if !inside_ball && v <= spec.c1 {
                    return false;
                }
            }
        }
        // boundary samples for condition 2
        if spec.mode == VerifyMode::FullRoa && i % 4 == 0 {
            let mut xb = x.clone();
            let axis = i % n;
            xb[axis] = if i % 8 == 0 {
                sys.domain.lo[axis]
            } else {
                sys.domain.hi[axis]
            };
            if vfp.value(&xb).to_f64() <= spec.c2 {
                return false;
            }
        }
    }
    true
}

pub fn save_report(report: &VerificationReport, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("report serialize: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}
