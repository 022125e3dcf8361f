//! Linear-algebra kernel behind the gain-matching machinery: Lyapunov
//! solves, the Kleinman gain recursion, Hurwitz certification, and pole
//! placement for stabilizing warm starts.
//!
//! The Lyapunov equation is solved through the Kronecker-vectorized dense
//! system; every in-scope problem has n <= 6, so the O(n^6) solve is
//! negligible and no Schur decomposition is needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub struct LyapunovProblem<S: Scalar> {
    /// Closed-loop matrix A_hat.
    pub a: DMatrix<S>,
    /// Symmetric right-hand side M in P A + A' P = -M.
    pub m: DMatrix<S>,
}

impl<S: Scalar> LyapunovProblem<S> {
    pub fn new(a: DMatrix<S>, m: DMatrix<S>) -> Self {
        // enforce symmetry of the right-hand side
        let half = S::from_double(0.5);
        let m_sym = (&m + m.transpose()).scale(half);
        LyapunovProblem { a, m: m_sym }
    }
}

/// Unique symmetric P with P A + A' P = -M, provided no two eigenvalues of A
/// sum to zero. Singularity of the vectorized system reports the resonance.
pub fn lyapunov_solve<S: Scalar>(p: &LyapunovProblem<S>) -> Result<DMatrix<S>> {
    let n = p.a.nrows();
    if p.a.ncols() != n || p.m.shape() != (n, n) {
        return Err(Error::Dimension("lyapunov: square matrices required".into()));
    }
    let at = p.a.transpose();
    let eye = DMatrix::<S>::identity(n, n);
    // vec(A' P) = (I (x) A') vec(P), vec(P A) = (A' (x) I) vec(P)
    let sys = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(p.m.as_slice());
    let lu = sys.lu();
    let sol = lu.solve(&rhs).ok_or(Error::ResonantSpectrum)?;
    let raw = DMatrix::from_column_slice(n, n, sol.as_slice());
    let half = S::from_double(0.5);
    let p_sym = (&raw + raw.transpose()).scale(half);

    let residual = (&p_sym * &p.a + p.a.transpose() * &p_sym + &p.m).norm();
    let scale = p_sym.norm() * p.a.norm() + p.m.norm();
    if residual.to_f64() > 1e-8 * scale.to_f64().max(1.0) {
        return Err(Error::ResonantSpectrum);
    }
    Ok(p_sym)
}

/// K = -R^{-1} B' P.
pub fn gain_update<S: Scalar>(
    p: &DMatrix<S>,
    b: &DMatrix<S>,
    r: &DMatrix<S>,
) -> Result<DMatrix<S>> {
    let chol =
        nalgebra::Cholesky::new(r.clone()).ok_or_else(|| Error::NotPositiveDefinite("R".into()))?;
    Ok(-chol.solve(&(b.transpose() * p)))
}

/// True iff the Lyapunov equation with M = I has a positive definite
/// solution: the classical eigensolver-free Hurwitz certificate.
pub fn is_hurwitz<S: Scalar>(a: &DMatrix<S>) -> bool {
    let n = a.nrows();
    let prob = LyapunovProblem::new(a.clone(), DMatrix::identity(n, n));
    match lyapunov_solve(&prob) {
        Ok(p) => nalgebra::Cholesky::new(p).is_some(),
        Err(_) => false,
    }
}

/// Kleinman recursion: alternate Lyapunov solves with gain updates until the
/// gain is stationary. Returns the stabilizing ARE solution pair (P, K) for
///   A'P + PA - P B R^{-1} B' P + Q = 0.
pub fn kleinman<S: Scalar>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    qhat: &DMatrix<S>,
    rhat: &DMatrix<S>,
    k0: &DMatrix<S>,
    max_iters: usize,
    tol: f64,
) -> Result<(DMatrix<S>, DMatrix<S>)> {
    let mut k = k0.clone();
    for i in 0..max_iters {
        let a_cl = a + b * &k;
        if !is_hurwitz(&a_cl) {
            return Err(Error::NotHurwitz(i));
        }
        let m = qhat + k.transpose() * rhat * &k;
        let p = lyapunov_solve(&LyapunovProblem::new(a_cl, m))?;
        let k_next = gain_update(&p, b, rhat)?;
        let delta = (&k_next - &k).norm().to_f64();
        k = k_next;
        if delta < tol {
            return Ok((p, k));
        }
    }
    Err(Error::NotHurwitz(max_iters))
}

/// A stabilizing gain for (A, B): exact when B is square invertible
/// (closed loop -I), Ackermann pole placement at -1, ..., -n for single
/// input. Used only to seed the Kleinman recursion.
pub fn stabilizing_gain<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> Result<DMatrix<S>> {
    let n = a.nrows();
    let m = b.ncols();
    if m == n {
        if let Some(b_inv) = b.clone().try_inverse() {
            return Ok(b_inv * (-(a.clone()) - DMatrix::identity(n, n)));
        }
    }
    if m == 1 {
        // controllability matrix [b, Ab, ..., A^{n-1} b]
        let mut ctrl = DMatrix::zeros(n, n);
        let mut col = b.column(0).into_owned();
        for j in 0..n {
            ctrl.set_column(j, &col);
            col = a * &col;
        }
        // q(A) = prod_i (A + i I) places poles at -1..-n
        let mut qa = DMatrix::<S>::identity(n, n);
        for i in 1..=n {
            qa = qa * (a + DMatrix::from_diagonal_element(n, n, S::from_double(i as f64)));
        }
        // Ackermann: k_row = e_n' C^{-1} q(A); our convention is u = +Kx
        let mut last = DVector::zeros(n);
        last[n - 1] = S::one();
        let w = ctrl
            .transpose()
            .lu()
            .solve(&last)
            .ok_or_else(|| Error::Uncontrollable("rank-deficient controllability matrix".into()))?;
        let k_row = qa.transpose() * w;
        let k = -DMatrix::from_fn(1, n, |_, j| k_row[j]);
        let a_cl = a + b * &k;
        if !is_hurwitz(&a_cl) {
            return Err(Error::Uncontrollable(
                "pole placement failed to stabilize".into(),
            ));
        }
        return Ok(k);
    }
    Err(Error::Uncontrollable(format!(
        "no stabilizing-gain recipe for n={n}, m={m}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn scalar_lyapunov() {
        let p = lyapunov_solve(&LyapunovProblem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
        ))
        .unwrap();
        assert_eq!(p[(0, 0)], 0.5);
    }

    #[test]
    fn identity_lyapunov() {
        let p = lyapunov_solve(&LyapunovProblem::new(
            -DMatrix::<f64>::identity(2, 2),
            DMatrix::identity(2, 2),
        ))
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5);
        assert_relative_eq!(p[(1, 1)], 0.5);
        assert_relative_eq!(p[(0, 1)], 0.0);
    }

    #[test]
    fn hand_solved_2x2() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let p = lyapunov_solve(&LyapunovProblem::new(a, DMatrix::identity(2, 2))).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.5, epsilon = 1e-12);
        assert_relative_eq!(p[(0, 1)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn resonant_spectrum_detected() {
        // eigenvalues +1 and -1 sum to zero
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = lyapunov_solve(&LyapunovProblem::new(a, DMatrix::identity(2, 2)));
        assert!(matches!(r, Err(Error::ResonantSpectrum)));
    }

    #[test]
    fn gain_update_cases() {
        let k = gain_update(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_eq!(k[(0, 0)], -1.0);

        let k0 = gain_update(
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_eq!(k0[(0, 0)], 0.0);

        let k2 = gain_update(
            &(DMatrix::identity(2, 2) * 0.5),
            &DMatrix::identity(2, 2),
            &(DMatrix::identity(2, 2) * 2.0),
        )
        .unwrap();
        assert_relative_eq!(k2[(0, 0)], -0.25);
        assert_relative_eq!(k2[(1, 1)], -0.25);
    }

    #[test]
    fn hurwitz_cases() {
        assert!(is_hurwitz(&DMatrix::from_element(1, 1, -1.0)));
        assert!(!is_hurwitz(&DMatrix::from_element(1, 1, 1.0)));
        // open-loop pendulum: s^2 + 4 s - 19.6 has a positive root
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 19.6, -4.0]);
        assert!(!is_hurwitz(&a));
    }

    #[test]
    fn kleinman_scalar_fixed_point() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let (p, k) = kleinman(
            &DMatrix::from_element(1, 1, 0.0),
            &one,
            &one,
            &one,
            &DMatrix::from_element(1, 1, -1.0),
            10,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(k[(0, 0)], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn kleinman_uncontrolled_stable() {
        // B = 0 forces K = 0 and P solves the plain Lyapunov equation
        let (p, k) = kleinman(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 0.0),
            10,
            1e-12,
        )
        .unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn kleinman_monotone_decrease() {
        // P_{i+1} <= P_i along the recursion (checked via eigen floor)
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 19.6, -4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 40.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 2.0);
        let k0 = stabilizing_gain(&a, &b).unwrap();
        let mut k = k0;
        let mut prev: Option<DMatrix<f64>> = None;
        for _ in 0..8 {
            let a_cl = &a + &b * &k;
            let m = &q + k.transpose() * &r * &k;
            let p = lyapunov_solve(&LyapunovProblem::new(a_cl, m)).unwrap();
            if let Some(pp) = prev {
                let diff = &pp - &p;
                let eig = diff.symmetric_eigenvalues();
                assert!(eig.iter().all(|&e| e >= -1e-10), "monotonicity violated");
            }
            k = gain_update(&p, &b, &r).unwrap();
            prev = Some(p);
        }
    }

    #[test]
    fn kleinman_satisfies_are() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 19.6, -4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 40.0]);
        let q = DMatrix::<f64>::identity(2, 2) * 2.0;
        let r = DMatrix::from_element(1, 1, 2.0);
        let k0 = stabilizing_gain(&a, &b).unwrap();
        let (p, _k) = kleinman(&a, &b, &q, &r, &k0, 50, 1e-13).unwrap();
        let res = a.transpose() * &p + &p * &a
            - &p * &b * DMatrix::from_element(1, 1, 0.5) * b.transpose() * &p
            + &q;
        assert!(res.norm() < 1e-8, "ARE residual {}", res.norm());
    }

    #[test]
    fn scaling_invariance_of_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 19.6, -4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 40.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 2.0);
        let k0 = stabilizing_gain(&a, &b).unwrap();
        let (_, k_base) = kleinman(&a, &b, &q, &r, &k0, 60, 1e-14).unwrap();
        for c in [0.1, 10.0] {
            let (_, k_scaled) =
                kleinman(&a, &b, &(&q * c), &(&r * c), &k0, 60, 1e-14).unwrap();
            assert!((&k_scaled - &k_base).norm() < 1e-10);
        }
    }

    #[test]
    fn lyapunov_residual_on_random_stable_systems() {
        let mut rng = crate::rng::stream_rng(5, crate::rng::Stream::TestPoints);
        for trial in 0..100 {
            let n = 2 + (trial % 4); // 2..=5
            let l = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = -(&l * l.transpose()) - DMatrix::identity(n, n);
            let c = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let m = &c * c.transpose();
            let p = lyapunov_solve(&LyapunovProblem::new(a.clone(), m.clone())).unwrap();
            let res = (&p * &a + a.transpose() * &p + &m).norm();
            let scale = p.norm() * a.norm() + m.norm();
            assert!(res <= 1e-10 * scale.max(1.0), "residual {res} scale {scale}");
        }
    }

    #[test]
    fn stabilizing_gain_square_and_single_input() {
        let a = DMatrix::from_element(1, 1, 0.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let k = stabilizing_gain(&a, &b).unwrap();
        assert!(is_hurwitz(&(a + b * &k)));

        let a3 = DMatrix::from_row_slice(
            3,
            3,
            &[-10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, -8.0 / 3.0, 0.0],
        );
        let b3 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let k3 = stabilizing_gain(&a3, &b3).unwrap();
        assert!(is_hurwitz(&(a3 + b3 * &k3)));
    }

    #[test]
    fn stabilizing_gain_rejects_uncontrollable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        assert!(stabilizing_gain(&a, &b).is_err());
    }
}
