//! Dense small-matrix special functions.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`: the systems this crate
//! fits are small (a handful of state variables), so clarity wins over
//! blocked algorithms. All functions are pure.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITERS: usize = 10_000;

pub(crate) fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_same_order(a: &Matrix, b: &Matrix) -> Result<usize> {
    let n = ensure_square(a)?;
    let m = ensure_square(b)?;
    if n != m {
        return Err(Error::Dimension(format!("orders {n} and {m} differ")));
    }
    Ok(n)
}

fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Relative Frobenius distance `|a - b| / max(|b|, tiny)`.
pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a general real matrix, as (re, im) pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    ensure_square(m)?;
    ensure_finite(m, "eigenvalue input")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITERS)
        .ok_or_else(|| Error::Computation("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

/// Largest real part over the spectrum of `m`.
pub fn spectral_abscissa(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff `m` is symmetric to `tol` and every eigenvalue exceeds `tol`.
pub fn is_spd(m: &Matrix, tol: f64) -> bool {
    if m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > tol.max(1e-12) * scale {
        return false;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .all(|&l| l > tol)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric positive semidefinite square root; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    ensure_square(m)?;
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is not invertible".into()))?;
    ensure_finite(&inv, "matrix inverse")
        .map_err(|_| Error::Singular("matrix is numerically singular".into()))?;
    Ok(inv)
}

// Padé degrees and the 1-norm bounds below which each reaches double
// precision without scaling (Higham 2005).
#[allow(clippy::excessive_precision)]
const PADE_DEGREES: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

fn pade_coefficients(m: usize) -> Vec<f64> {
    // c_k = (2m-k)! m! / ((2m)! k! (m-k)!), built by the ratio recurrence.
    let mut c = vec![1.0; m + 1];
    for k in 1..=m {
        c[k] = c[k - 1] * (m + 1 - k) as f64 / (k * (2 * m + 1 - k)) as f64;
    }
    c
}

fn pade_approximant(a: &Matrix, m: usize) -> Result<Matrix> {
    let n = a.nrows();
    let c = pade_coefficients(m);
    let a2 = a * a;
    let mut even = Matrix::identity(n, n);
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for k in (0..=m).step_by(2) {
        if k > 0 {
            even = &even * &a2;
        }
        v += &even * c[k];
        if k < m {
            u_inner += &even * c[k + 1];
        }
    }
    let u = a * u_inner;
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Computation("Padé denominator is singular".into()))
}

/// Matrix exponential `exp(s * m)` by scaling and squaring with diagonal Padé approximants.
///
/// `s = 0` returns the identity exactly. Overflow is reported as
/// [`Error::Computation`] instead of leaking infinities.
pub fn expm(m: &Matrix, s: f64) -> Result<Matrix> {
    let n = ensure_square(m)?;
    ensure_finite(m, "expm input")?;
    if !s.is_finite() || s < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "expm time must be finite and non-negative, got {s}"
        )));
    }
    if s == 0.0 || n == 0 {
        return Ok(Matrix::identity(n, n));
    }
    let a = m * s;
    ensure_finite(&a, "expm scaled input")
        .map_err(|_| Error::Computation("s*M overflows".into()))?;
    let norm = norm1(&a);

    let out = if let Some(&(deg, _)) = PADE_DEGREES.iter().find(|(_, th)| norm <= *th) {
        pade_approximant(&a, deg)?
    } else {
        let squarings = if norm > THETA_13 {
            (norm / THETA_13).log2().ceil() as i32
        } else {
            0
        };
        if squarings > 1023 {
            return Err(Error::Computation(format!(
                "exponent norm {norm:.3e} out of range"
            )));
        }
        let scaled = &a * 2f64.powi(-squarings);
        let mut r = pade_approximant(&scaled, 13)?;
        for _ in 0..squarings {
            r = &r * &r;
            if r.iter().any(|v| !v.is_finite()) {
                break;
            }
        }
        r
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Computation(format!(
            "matrix exponential overflowed (|s*M|_1 = {norm:.3e})"
        )));
    }
    Ok(out)
}

fn gauss_legendre_unit(points: usize) -> (Vec<f64>, Vec<f64>) {
    // Golub-Welsch on [-1, 1], mapped to [0, 1].
    let mut jacobi = Matrix::zeros(points, points);
    for k in 1..points {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k, k - 1)] = beta;
        jacobi[(k - 1, k)] = beta;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            ((eig.eigenvalues[i] + 1.0) / 2.0, v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Principal square root by the Denman-Beavers iteration.
fn sqrtm_db(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = Matrix::identity(n, n);
    for _ in 0..100 {
        let y_inv = inverse(&y)?;
        let z_inv = inverse(&z)?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Err(Error::Computation(
        "matrix square root iteration did not converge".into(),
    ))
}

/// Principal matrix logarithm.
///
/// Fails with [`Error::BranchCut`] when an eigenvalue sits on the closed
/// negative real axis (including zero); there is no real principal log then.
pub fn logm_principal(m: &Matrix) -> Result<Matrix> {
    let n = ensure_square(m)?;
    ensure_finite(m, "logm input")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for (re, im) in eigenvalues(m)? {
        let modulus = re.hypot(im);
        let on_cut = re <= 0.0 && im.abs() <= 1e-12 * modulus.max(scale);
        if modulus <= 1e-14 * scale || on_cut {
            return Err(Error::BranchCut { re, im });
        }
    }

    let id = Matrix::identity(n, n);
    let mut x = m.clone();
    let mut roots = 0;
    while norm1(&(&x - &id)) > 0.25 {
        if roots >= 64 {
            return Err(Error::Computation(
                "inverse scaling did not approach the identity".into(),
            ));
        }
        x = sqrtm_db(&x)?;
        roots += 1;
    }

    // log(I + Y) = ∫₀¹ Y (I + tY)⁻¹ dt, exact to rounding for |Y| <= 1/4 with 10 nodes.
    let y = &x - &id;
    let (nodes, weights) = gauss_legendre_unit(10);
    let mut log = Matrix::zeros(n, n);
    for (t, w) in nodes.into_iter().zip(weights) {
        let shifted = &id + &y * t;
        let term = shifted
            .lu()
            .solve(&y)
            .ok_or_else(|| Error::Computation("singular quadrature factor in logm".into()))?;
        log += term * w;
    }
    let out = log * 2f64.powi(roots);
    ensure_finite(&out, "logm output")?;
    Ok(out)
}

/// Solve `F X + X Fᵀ = S` for `X`.
///
/// Requires that no two eigenvalues of `F` sum to zero (true whenever the
/// spectrum of `F` lies strictly inside one half-plane). The result is
/// symmetrized when `S` is symmetric.
pub fn solve_two_sided(f: &Matrix, s: &Matrix) -> Result<Matrix> {
    let n = ensure_same_order(f, s)?;
    ensure_finite(f, "two-sided solve operator")?;
    ensure_finite(s, "two-sided solve right-hand side")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let eig = eigenvalues(f)?;
    let fscale = f.amax().max(1.0);
    for (i, &(ar, ai)) in eig.iter().enumerate() {
        for &(br, bi) in &eig[i..] {
            if (ar + br).hypot(ai + bi) <= 1e-12 * fscale {
                return Err(Error::Singular(format!(
                    "operator spectrum contains λ and -λ (λ ≈ {ar:.3e}{ai:+.3e}i)"
                )));
            }
        }
    }

    // Column-major vec: vec(F X) = (I ⊗ F) vec X, vec(X Fᵀ) = (F ⊗ I) vec X.
    let id = Matrix::identity(n, n);
    let op = id.kronecker(f) + f.kronecker(&id);
    let rhs = DVector::from_column_slice(s.as_slice());
    let lu = op.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("two-sided operator is singular".into()))?;
    // One round of iterative refinement.
    let resid = &rhs - &op * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let mut x = Matrix::from_column_slice(n, n, sol.as_slice());
    ensure_finite(&x, "two-sided solve output")
        .map_err(|_| Error::Singular("two-sided solve produced non-finite values".into()))?;

    let s_scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() <= 1e-12 * s_scale {
        x = symmetrize(&x);
    }
    Ok(x)
}

/// Frobenius residual `|F X + X Fᵀ − S|`.
pub fn two_sided_residual(f: &Matrix, x: &Matrix, s: &Matrix) -> f64 {
    (f * x + x * f.transpose() - s).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{E, FRAC_PI_2};

    fn a_dagger() -> Matrix {
        Matrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.2, -0.8])
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn pade_coefficients_match_reference() {
        // Degree-13 coefficients from Higham (2005), normalized so c_0 = 1.
        let b13 = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        let c = pade_coefficients(13);
        for k in 0..=13 {
            assert_relative_eq!(c[k], b13[k] / b13[0], max_relative = 1e-14);
        }
    }

    #[test]
    fn expm_diagonal() {
        let e = expm(&diag(&[-1.0, -0.5]), 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(e[(1, 1)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_zero_time_is_identity() {
        let e = expm(&a_dagger(), 0.0).unwrap();
        assert_eq!(e, Matrix::identity(2, 2));
    }

    #[test]
    fn expm_rotation() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&m, FRAC_PI_2).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((e - want).amax() < 1e-14);
    }

    #[test]
    fn expm_agrees_with_nalgebra() {
        let m = Matrix::from_row_slice(3, 3, &[-2.0, 3.0, 0.1, 0.0, -0.3, 5.0, 1.0, -4.0, -1.0]);
        for s in [0.01, 0.3, 1.0, 7.5] {
            let ours = expm(&m, s).unwrap();
            let theirs = (&m * s).exp();
            assert!(rel_frobenius(&ours, &theirs) < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn expm_overflow_is_an_error() {
        let m = diag(&[1.0, -1.0]);
        assert!(matches!(expm(&m, 1e4), Err(Error::Computation(_))));
        assert!(matches!(expm(&m, -1.0), Err(Error::InvalidArgument(_))));
        let bad = diag(&[f64::NAN, 0.0]);
        assert!(matches!(expm(&bad, 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn logm_diagonal_and_identity() {
        let l = logm_principal(&diag(&[1.0 / E, (-0.5f64).exp()])).unwrap();
        assert!((l - diag(&[-1.0, -0.5])).amax() < 1e-13);
        let z = logm_principal(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(z, Matrix::zeros(3, 3));
    }

    #[test]
    fn logm_inverts_expm_for_a_dagger() {
        let m = expm(&a_dagger(), 0.5).unwrap();
        let l = logm_principal(&m).unwrap();
        assert!(rel_frobenius(&l, &(a_dagger() * 0.5)) < 1e-12);
        let back = expm(&l, 1.0).unwrap();
        assert!(rel_frobenius(&back, &m) < 1e-12);
    }

    #[test]
    fn logm_handles_complex_spectrum() {
        // Rotation by 0.9 rad scaled: eigenvalues e^{-0.2 ± 0.9i}.
        let gen = Matrix::from_row_slice(2, 2, &[-0.2, 0.9, -0.9, -0.2]);
        let m = expm(&gen, 1.0).unwrap();
        let l = logm_principal(&m).unwrap();
        assert!(rel_frobenius(&l, &gen) < 1e-12);
    }

    #[test]
    fn logm_rejects_branch_cut() {
        let neg = diag(&[-0.5, 0.7]);
        assert!(matches!(logm_principal(&neg), Err(Error::BranchCut { .. })));
        let sing = diag(&[0.0, 1.0]);
        assert!(matches!(
            logm_principal(&sing),
            Err(Error::BranchCut { .. })
        ));
    }

    #[test]
    fn two_sided_diagonal_cases() {
        let x = solve_two_sided(&diag(&[-1.0, -0.5]), &diag(&[-2.0, -1.0])).unwrap();
        assert!((x - Matrix::identity(2, 2)).amax() < 1e-14);
        let id = Matrix::identity(2, 2);
        let x = solve_two_sided(&id, &(&id * 2.0)).unwrap();
        assert!((x - id).amax() < 1e-14);
    }

    #[test]
    fn two_sided_residual_for_a_dagger() {
        let a = a_dagger();
        let c = Matrix::identity(2, 2);
        let s = -(&a * &c + &c * a.transpose());
        let x = solve_two_sided(&a, &s).unwrap();
        assert!(two_sided_residual(&a, &x, &s) <= 1e-10 * s.norm());
        assert!((x + c).amax() < 1e-12);
    }

    #[test]
    fn two_sided_rejects_shared_spectrum() {
        let f = diag(&[1.0, -1.0]);
        assert!(matches!(
            solve_two_sided(&f, &Matrix::identity(2, 2)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn abscissa_examples() {
        assert_relative_eq!(spectral_abscissa(&diag(&[-1.0, -0.5])).unwrap(), -0.5);
        let rot = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(spectral_abscissa(&rot).unwrap().abs() < 1e-15);
        // λ² + 1.8λ + 0.9 = 0: discriminant 3.24 - 3.6 < 0, so Re λ = -0.9.
        let disc: f64 = 1.8 * 1.8 - 4.0 * 0.9;
        let expect = if disc >= 0.0 {
            (-1.8 + disc.sqrt()) / 2.0
        } else {
            -0.9
        };
        assert_relative_eq!(
            spectral_abscissa(&a_dagger()).unwrap(),
            expect,
            epsilon = 1e-13
        );
    }

    #[test]
    fn spd_examples() {
        assert!(is_spd(&Matrix::identity(3, 3), 1e-12));
        assert!(!is_spd(&diag(&[1.0, -0.1]), 1e-12));
        assert!(!is_spd(&diag(&[1.0, 0.0]), 1e-12));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(!is_spd(&asym, 1e-12));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = Matrix::from_row_slice(2, 2, &[3.375, -0.575, -0.575, 2.11]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-13);
        assert!((&r - r.transpose()).amax() < 1e-15);
    }
}
