//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of a least-squares problem together with the numerical rank
/// of the design matrix.
pub struct Lstsq {
    pub solution: DVector<f64>,
    pub rank: usize,
}

/// Minimum-norm least squares via SVD.
///
/// Rank is decided with a relative cutoff `max(n, p) * eps * sigma_max`,
/// the usual pseudo-inverse convention. Rank-deficient systems return the
/// minimum-norm solution rather than failing.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Lstsq> {
    assert_eq!(a.nrows(), b.len(), "design and response row mismatch");
    if a.ncols() == 0 {
        return Ok(Lstsq {
            solution: DVector::zeros(0),
            rank: 0,
        });
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = sigma_max * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let solution = svd
        .solve(b, eps)
        .map_err(|e| Error::Parameter(format!("SVD solve failed: {e}")))?;
    Ok(Lstsq { solution, rank })
}

/// Solve a square linear system by LU with full pivoting.
///
/// Errors when the matrix is singular to working precision.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    assert_eq!(a.nrows(), b.len(), "matrix and rhs size mismatch");
    let lu = a.clone().full_piv_lu();
    lu.solve(b)
        .ok_or_else(|| Error::SingularKkt("LU solve found no solution".into()))
}

/// Median of a slice; the even case averages the two middle elements.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rows of `m` at `idx`, in order (duplicates allowed).
pub(crate) fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), m.ncols());
    for (r, &i) in idx.iter().enumerate() {
        out.set_row(r, &m.row(i));
    }
    out
}

/// Deterministic per-stream seed derivation (splitmix64 over base and index).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
