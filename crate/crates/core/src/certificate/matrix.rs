//! Metzler and Hurwitz tests, the positive weighting vector of the scalar
//! comparison function, and Euler steps of linear comparison systems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("eigenvalue test ({eigen}) and leading-minor test ({minors}) disagree; spectral abscissa {abscissa:e}")]
    Disagreement { eigen: bool, minors: bool, abscissa: f64 },
    #[error("matrix is not Metzler")]
    NotMetzler,
    #[error("matrix is not Hurwitz")]
    NotHurwitz,
    #[error("linear solve failed: matrix is singular")]
    Singular,
}

pub const METZLER_TOL: f64 = -1e-12;
pub const HURWITZ_TOL: f64 = -1e-9;

fn square(m: &DMatrix<f64>) -> Result<usize, MatrixError> {
    if m.nrows() != m.ncols() {
        return Err(MatrixError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |r, c| rows[r][c])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

pub fn check_metzler(m: &DMatrix<f64>) -> Result<bool, MatrixError> {
    let n = square(m)?;
    for r in 0..n {
        for c in 0..n {
            if r != c && m[(r, c)] < METZLER_TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64, MatrixError> {
    let n = square(m)?;
    if n == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 10_000).ok_or(MatrixError::NoConvergence)?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every leading principal minor of `-m` is positive, which for a
/// Metzler `m` is equivalent to `m` being Hurwitz. The minors are tested
/// through the pivots of elimination without row exchanges (each pivot is
/// the ratio of consecutive minors), which stays well scaled for large `m`.
pub fn leading_minors_positive(m: &DMatrix<f64>) -> Result<bool, MatrixError> {
    let n = square(m)?;
    let mut a = -m;
    let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let pivot = a[(k, k)];
        if !(pivot > 1e-12 * scale) {
            return Ok(false);
        }
        for r in k + 1..n {
            let f = a[(r, k)] / pivot;
            if f != 0.0 {
                for c in k..n {
                    a[(r, c)] -= f * a[(k, c)];
                }
            }
        }
    }
    Ok(true)
}

/// Hurwitz test. For Metzler input the eigenvalue verdict must agree with
/// the leading-minor criterion, otherwise a diagnostics error is raised.
pub fn check_hurwitz(m: &DMatrix<f64>) -> Result<bool, MatrixError> {
    let abscissa = spectral_abscissa(m)?;
    let eigen = abscissa < HURWITZ_TOL;
    if check_metzler(m)? {
        let minors = leading_minors_positive(m)?;
        if minors != eigen {
            return Err(MatrixError::Disagreement { eigen, minors, abscissa });
        }
    }
    Ok(eigen)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositiveWeights {
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    /// `min_i c_i / p_i`, the exponential rate of the scalar comparison function.
    pub c_min: f64,
    /// Uniform off-diagonal perturbation applied before the eigen fallback.
    pub perturbation: Option<f64>,
}

/// Strictly positive `p` with `pᵀΛ = -cᵀ`, `c > 0`, for Metzler Hurwitz `Λ`.
pub fn solve_positive_p(lambda: &DMatrix<f64>) -> Result<PositiveWeights, MatrixError> {
    let n = square(lambda)?;
    if !check_metzler(lambda)? {
        return Err(MatrixError::NotMetzler);
    }
    if !check_hurwitz(lambda)? {
        return Err(MatrixError::NotHurwitz);
    }
    let rhs = DVector::from_element(n, -1.0);
    let p = lambda.transpose().lu().solve(&rhs).ok_or(MatrixError::Singular)?;
    if p.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Ok(weights(lambda, p.iter().copied().collect(), None));
    }
    perron_fallback(lambda)
}

fn weights(lambda: &DMatrix<f64>, p: Vec<f64>, perturbation: Option<f64>) -> PositiveWeights {
    let n = p.len();
    let c: Vec<f64> = (0..n).map(|j| -(0..n).map(|i| p[i] * lambda[(i, j)]).sum::<f64>()).collect();
    let c_min = c.iter().zip(&p).map(|(c, p)| c / p).fold(f64::INFINITY, f64::min);
    PositiveWeights { p, c, c_min, perturbation }
}

/// Left Perron vector of `Λ + αI`, with a tiny uniform off-diagonal
/// perturbation when `Λ` is reducible.
fn perron_fallback(lambda: &DMatrix<f64>) -> Result<PositiveWeights, MatrixError> {
    let n = lambda.nrows();
    let mut m = lambda.clone();
    let perturbation = if is_irreducible(lambda) {
        None
    } else {
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    m[(r, c)] += 1e-9;
                }
            }
        }
        Some(1e-9)
    };
    let alpha = (0..n).map(|k| m[(k, k)].abs()).fold(0.0, f64::max) + 1.0;
    let b = (&m + DMatrix::identity(n, n) * alpha).transpose();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..100_000 {
        let mut w = &b * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Err(MatrixError::Singular);
        }
        w /= norm;
        let diff = (&w - &v).norm();
        v = w;
        if diff < 1e-15 {
            break;
        }
    }
    let p: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let out = weights(lambda, p, perturbation);
    if out.p.iter().any(|&x| x <= 0.0) || out.c.iter().any(|&x| x <= 0.0) {
        return Err(MatrixError::Singular);
    }
    Ok(out)
}

fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in 0..n {
                let e = if forward { m[(u, w)] } else { m[(w, u)] };
                if w != u && e > 0.0 && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

/// One Euler step of `ż = M z`.
pub fn comparison_step(m: &DMatrix<f64>, z: &[f64], t: f64) -> Vec<f64> {
    let zv = DVector::from_column_slice(z);
    let out = &zv + (m * &zv) * t;
    out.iter().copied().collect()
}
