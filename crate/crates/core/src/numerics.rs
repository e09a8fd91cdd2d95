//! Dense numerical kernels: finite-difference Jacobians, Newton solving,
//! nonsymmetric eigenvalues and rank tests.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerances shared by the solvers.
#[derive(Debug, Clone, Copy)]
pub struct NumericsConfig {
    /// Step for central finite differences.
    pub fd_epsilon: f64,
    /// Residual infinity-norm tolerance for Newton.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Threshold below which an eigenvalue real part counts as zero.
    pub eig_zero_tol: f64,
    /// Relative singular-value cutoff for rank decisions.
    pub rank_tol: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            fd_epsilon: 1e-7,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            eig_zero_tol: 1e-8,
            rank_tol: 1e-8,
        }
    }
}

/// Full spectrum of a real matrix, ordered by descending real part (ties by
/// descending imaginary part).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// `||A v - lambda v||_2` for the leading eigenpair, from inverse iteration.
    pub leading_residual: f64,
}

impl Spectrum {
    pub fn leading(&self) -> Complex64 {
        self.eigenvalues[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

/// Stability verdict derived from a spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityTag {
    pub kind: Stability,
    /// Number of eigenvalues with real part above the zero threshold.
    pub unstable_count: usize,
    /// Whether the rightmost eigenvalue belongs to a complex conjugate pair.
    pub leading_pair_complex: bool,
}

impl StabilityTag {
    pub fn is_stable(&self) -> bool {
        self.kind == Stability::Stable
    }
}

/// Central finite-difference Jacobian, column by column.
pub fn fd_jacobian<F>(residual: F, u: &DVector<f64>, config: &NumericsConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let eps = config.fd_epsilon;
    let dim = u.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut probe = u.clone();
    for j in 0..dim {
        probe[j] = u[j] + eps;
        let fp = residual(&probe).map_err(|e| Error::ColumnEvaluation {
            column: j,
            source: Box::new(e),
        })?;
        probe[j] = u[j] - eps;
        let fm = residual(&probe).map_err(|e| Error::ColumnEvaluation {
            column: j,
            source: Box::new(e),
        })?;
        probe[j] = u[j];
        let col = (fp - fm) / (2.0 * eps);
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), dim));
        jac.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense LU solve with partial pivoting. A pivot below `1e-12` times the
/// matrix infinity norm signals proximity to a bifurcation point.
pub fn solve_lu(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = inf_norm(matrix).max(f64::MIN_POSITIVE);
    let lu = matrix.clone().lu();
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::SingularJacobian);
    }
    lu.solve(rhs).ok_or(Error::SingularJacobian)
}

/// Newton iteration on `residual(u) = 0` with a finite-difference Jacobian.
/// Returns the solution and the iteration count.
pub fn newton_solve<F>(
    residual: F,
    u0: &DVector<f64>,
    config: &NumericsConfig,
) -> Result<(DVector<f64>, usize)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut u = u0.clone();
    for iter in 0..=config.newton_max_iter {
        let r = residual(&u)?;
        if r.amax() <= config.newton_tol {
            return Ok((u, iter));
        }
        if iter == config.newton_max_iter {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: r.amax(),
            });
        }
        let jac = fd_jacobian(&residual, &u, config)?;
        let du = solve_lu(&jac, &(-&r))?;
        u += du;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                residual: f64::INFINITY,
            });
        }
    }
    unreachable!()
}

/// Full spectrum of a dense real matrix via the real Schur reduction.
pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Spectrum> {
    assert_eq!(matrix.nrows(), matrix.ncols());
    let dim = matrix.nrows();
    if dim == 0 {
        return Ok(Spectrum {
            eigenvalues: vec![],
            leading_residual: 0.0,
        });
    }
    let schur = nalgebra::linalg::Schur::try_new(matrix.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::EigenFailure)?;
    let mut eigenvalues: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    eigenvalues.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    let leading_residual = leading_eigenpair_residual(matrix, eigenvalues[0]);
    Ok(Spectrum {
        eigenvalues,
        leading_residual,
    })
}

/// Residual of the leading eigenpair, with the eigenvector recovered by
/// inverse iteration on the real 2m-dimensional embedding of `A - lambda I`.
fn leading_eigenpair_residual(a: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let m = a.nrows();
    let scale = inf_norm(a).max(1.0);
    // Slightly detuned shift keeps the iteration matrix invertible.
    let alpha = lambda.re + 1e-10 * scale;
    let beta = lambda.im;
    let mut big = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            big[(i, j)] = a[(i, j)];
            big[(m + i, m + j)] = a[(i, j)];
        }
        big[(i, i)] -= alpha;
        big[(m + i, m + i)] -= alpha;
        big[(i, m + i)] = beta;
        big[(m + i, i)] = -beta;
    }
    let lu = big.lu();
    let mut v = DVector::from_fn(2 * m, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(next) => {
                let norm = next.norm();
                if !(norm.is_finite() && norm > 0.0) {
                    break;
                }
                v = next / norm;
            }
            None => break,
        }
    }
    let vr = v.rows(0, m).into_owned();
    let vi = v.rows(m, m).into_owned();
    // (A v - lambda v) split into real and imaginary parts.
    let rr = a * &vr - lambda.re * &vr + lambda.im * &vi;
    let ri = a * &vi - lambda.re * &vi - lambda.im * &vr;
    (rr.norm_squared() + ri.norm_squared()).sqrt()
}

/// Classifies a spectrum against the zero-real-part threshold.
pub fn classify_stability(spectrum: &Spectrum, config: &NumericsConfig) -> StabilityTag {
    let unstable_count = spectrum
        .eigenvalues
        .iter()
        .filter(|z| z.re > config.eig_zero_tol)
        .count();
    let leading_pair_complex = spectrum
        .eigenvalues
        .first()
        .map(|z| z.im.abs() > config.eig_zero_tol)
        .unwrap_or(false);
    StabilityTag {
        kind: if unstable_count == 0 {
            Stability::Stable
        } else {
            Stability::Unstable
        },
        unstable_count,
        leading_pair_complex,
    }
}

/// Number of singular values below `rank_tol` times the largest one.
pub fn rank_deficiency(matrix: &DMatrix<f64>, config: &NumericsConfig) -> usize {
    let svd = matrix.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return svd.singular_values.len();
    }
    svd.singular_values
        .iter()
        .filter(|&&sv| sv < config.rank_tol * max_sv)
        .count()
}

/// Smallest and largest singular values of a matrix.
pub fn singular_value_extrema(matrix: &DMatrix<f64>) -> (f64, f64) {
    let svd = matrix.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    (min_sv, max_sv)
}
