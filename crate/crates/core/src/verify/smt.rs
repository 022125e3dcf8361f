//! SMT-LIB export of the decrease-inequality negation, for cross-checking
//! the in-repo verifier against external delta-complete solvers.
//!
//! The query asserts the box membership, exclusion of the origin ball, and
//! DV(x)(f + g kappa) > -mu; a `sat` answer from the external tool is a
//! candidate counterexample, `unsat` confirms the inequality. tanh is
//! expanded through exp(2z), bound once per neuron in a let layer.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::valuenet::{Activation, ValueNet};
use crate::verify::{VerificationSpec, VerifyMode};

/// Plain-decimal rendering (SMT-LIB has no exponent syntax). Negative values
/// are wrapped in a unary minus application.
pub fn smt_num(v: f64) -> String {
    assert!(v.is_finite(), "cannot render {v} in SMT");
    if v < 0.0 || v == 0.0 && v.is_sign_negative() {
        return format!("(- {})", smt_num(-v));
    }
    let shortest = format!("{v:e}"); // mantissa 'e' exponent
    let (mantissa, exp) = shortest.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i.to_string(), f.to_string()),
        None => (mantissa.to_string(), String::new()),
    };
    let digits: String = format!("{int_part}{frac_part}");
    let point = int_part.len() as i32 + exp;
    let mut out = String::new();
    if point <= 0 {
        out.push_str("0.");
        for _ in 0..(-point) {
            out.push('0');
        }
        out.push_str(&digits);
    } else if (point as usize) >= digits.len() {
        out.push_str(&digits);
        for _ in 0..(point as usize - digits.len()) {
            out.push('0');
        }
        out.push_str(".0");
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    out
}

fn expr_to_smt(e: &Expr) -> String {
    match e {
        Expr::Const(v) => smt_num(*v),
        Expr::Var(i) => format!("x{i}"),
        Expr::Neg(a) => format!("(- {})", expr_to_smt(a)),
        Expr::Add(a, b) => format!("(+ {} {})", expr_to_smt(a), expr_to_smt(b)),
        Expr::Sub(a, b) => format!("(- {} {})", expr_to_smt(a), expr_to_smt(b)),
        Expr::Mul(a, b) => format!("(* {} {})", expr_to_smt(a), expr_to_smt(b)),
        Expr::Div(a, b) => format!("(/ {} {})", expr_to_smt(a), expr_to_smt(b)),
        Expr::Pow(a, p) => {
            assert!(*p >= 0);
            if *p == 0 {
                "1.0".to_string()
            } else {
                let base = expr_to_smt(a);
                let mut out = String::from("(*");
                for _ in 0..*p {
                    out.push(' ');
                    out.push_str(&base);
                }
                out.push(')');
                out
            }
        }
        Expr::Sin(a) => format!("(sin {})", expr_to_smt(a)),
        Expr::Cos(a) => format!("(cos {})", expr_to_smt(a)),
        Expr::Tanh(a) => {
            let z = expr_to_smt(a);
            format!("(/ (- (exp (* 2.0 {z})) 1.0) (+ (exp (* 2.0 {z})) 1.0))")
        }
        Expr::Abs(a) => {
            let v = expr_to_smt(a);
            format!("(ite (>= {v} 0.0) {v} (- {v}))")
        }
        Expr::Min(a, b) => {
            let (u, v) = (expr_to_smt(a), expr_to_smt(b));
            format!("(ite (<= {u} {v}) {u} {v})")
        }
        Expr::Max(a, b) => {
            let (u, v) = (expr_to_smt(a), expr_to_smt(b));
            format!("(ite (>= {u} {v}) {u} {v})")
        }
    }
}

/// Emits the negation of the decrease inequality over the domain minus the
/// origin ball as a quantifier-free query. Byte-deterministic in its inputs.
pub fn export_smt_query<S: Scalar>(
    sys: &ControlAffineSystem<S>,
    net: &ValueNet<S>,
    spec: &VerificationSpec,
) -> Result<String> {
    if spec.mode != VerifyMode::DecreaseOnly {
        return Err(Error::Config(
            "smt export supports decrease_only queries".into(),
        ));
    }
    spec.validate()?;
    let n = sys.state_dim;
    let m_in = sys.input_dim;
    let width = net.width();
    let mut q = String::new();
    let _ = writeln!(q, "(set-logic QF_NRA)");
    for i in 0..n {
        let _ = writeln!(q, "(declare-const x{i} Real)");
    }
    // domain box
    let mut box_terms = Vec::new();
    for i in 0..n {
        box_terms.push(format!(
            "(<= {} x{i}) (<= x{i} {})",
            smt_num(sys.domain.lo[i].to_f64()),
            smt_num(sys.domain.hi[i].to_f64())
        ));
    }
    let _ = writeln!(q, "(assert (and {}))", box_terms.join(" "));
    // outside the infinity-norm ball of radius epsilon
    let eps = smt_num(spec.epsilon);
    let mut ball_terms = Vec::new();
    for i in 0..n {
        ball_terms.push(format!("(>= x{i} {eps}) (<= x{i} (- {eps}))"));
    }
    let _ = writeln!(q, "(assert (or {}))", ball_terms.join(" "));

    // let layers: z_j, activation derivative s_j, gradient dv_k, input kap_l
    let mut z_binds = Vec::new();
    for j in 0..width {
        let mut terms: Vec<String> = (0..n)
            .map(|k| format!("(* {} x{k})", smt_num(net.w[(j, k)].to_f64())))
            .collect();
        terms.push(smt_num(net.b[j].to_f64()));
        z_binds.push(format!("(z{j} (+ {}))", terms.join(" ")));
    }
    let s_binds: Vec<String> = match net.activation {
        Activation::Tanh => (0..width)
            .map(|j| format!("(e{j} (exp (* 2.0 z{j})))"))
            .collect(),
        Activation::Relu => Vec::new(),
    };
    let d_binds: Vec<String> = match net.activation {
        Activation::Tanh => (0..width)
            .map(|j| {
                format!("(s{j} (- 1.0 (* (/ (- e{j} 1.0) (+ e{j} 1.0)) (/ (- e{j} 1.0) (+ e{j} 1.0)))))")
            })
            .collect(),
        Activation::Relu => (0..width)
            .map(|j| format!("(s{j} (ite (> z{j} 0.0) 1.0 0.0))"))
            .collect(),
    };
    let mut dv_binds = Vec::new();
    for k in 0..n {
        let terms: Vec<String> = (0..width)
            .map(|j| {
                format!(
                    "(* {} s{j} {})",
                    smt_num(net.beta[j].to_f64()),
                    smt_num(net.w[(j, k)].to_f64())
                )
            })
            .collect();
        dv_binds.push(format!("(dv{k} (+ {}))", terms.join(" ")));
    }
    let mut kap_binds = Vec::new();
    for l in 0..m_in {
        let mut outer = Vec::new();
        for p in 0..m_in {
            let inner: Vec<String> = (0..n)
                .map(|k| format!("(* {} dv{k})", expr_to_smt(&sys.g[k][p])))
                .collect();
            outer.push(format!(
                "(* {} (+ {}))",
                smt_num(sys.r_inv[(l, p)].to_f64()),
                inner.join(" ")
            ));
        }
        kap_binds.push(format!("(kap{l} (* (- 0.5) (+ {})))", outer.join(" ")));
    }
    // dvdot = sum_k dv_k (f_k + sum_l g_kl kap_l)
    let mut dot_terms = Vec::new();
    for k in 0..n {
        let mut drift = vec![expr_to_smt(&sys.f[k])];
        for l in 0..m_in {
            drift.push(format!("(* {} kap{l})", expr_to_smt(&sys.g[k][l])));
        }
        dot_terms.push(format!("(* dv{k} (+ {}))", drift.join(" ")));
    }
    let dvdot = format!("(+ {})", dot_terms.join(" "));
    let negation = format!("(> {dvdot} (- {}))", smt_num(spec.mu));

    let mut body = negation;
    for layer in [&kap_binds, &dv_binds, &d_binds, &s_binds, &z_binds] {
        if !layer.is_empty() {
            body = format!("(let ({}) {})", layer.join(" "), body);
        }
    }
    let _ = writeln!(q, "(assert {body})");
    let _ = writeln!(q, "(check-sat)");
    let _ = writeln!(q, "(exit)");
    Ok(q)
}
