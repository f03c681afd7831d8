//! Observation preprocessing: Savitzky–Golay smoothing, finite-difference
//! derivative estimation, and construction of the polynomial candidate
//! library.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::TimeSeries;

/// Polynomial library specification: monomials of total degree up to
/// `max_degree`, optionally including the constant term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LibrarySpec {
    pub max_degree: usize,
    pub include_bias: bool,
}

impl LibrarySpec {
    pub fn new(max_degree: usize, include_bias: bool) -> Result<Self> {
        if max_degree > 5 {
            return Err(Error::Parameter(format!(
                "library degree {max_degree} exceeds the supported maximum of 5"
            )));
        }
        Ok(LibrarySpec { max_degree, include_bias })
    }

    /// The quadratic library used throughout the experiments.
    pub fn quadratic() -> Self {
        LibrarySpec { max_degree: 2, include_bias: true }
    }
}

/// Evaluated candidate library: one row per sample, one column per
/// monomial. `features[j]` holds the exponent vector of column j.
#[derive(Clone, Debug)]
pub struct LibraryMatrix {
    pub values: DMatrix<f64>,
    pub features: Vec<Vec<u32>>,
    pub names: Vec<String>,
    pub spec: LibrarySpec,
}

impl LibraryMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

/// How a derivative matrix was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivMethod {
    FiniteDifference,
    Exact,
}

/// Estimated (or exact) time derivatives, one row per sample.
#[derive(Clone, Debug)]
pub struct DerivMatrix {
    pub values: DMatrix<f64>,
    pub method: DerivMethod,
}

/// Exponent vectors of all monomials in `m` variables up to the spec's
/// degree, ordered by total degree ascending and, within a degree, by
/// exponent vector in descending lexicographic order. For m = 2, degree 2:
/// [1, x1, x2, x1^2, x1*x2, x2^2].
pub fn monomial_exponents(m: usize, spec: &LibrarySpec) -> Vec<Vec<u32>> {
    let mut all = Vec::new();
    let lo = if spec.include_bias { 0 } else { 1 };
    for degree in lo..=spec.max_degree {
        let mut of_degree = Vec::new();
        enumerate_degree(m, degree as u32, &mut vec![0; m], 0, &mut of_degree);
        of_degree.sort_by(|a, b| b.cmp(a)); // descending lexicographic
        all.extend(of_degree);
    }
    all
}

fn enumerate_degree(m: usize, remaining: u32, current: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
    if pos == m - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in 0..=remaining {
        current[pos] = e;
        enumerate_degree(m, remaining - e, current, pos + 1, out);
        current[pos] = 0;
    }
}

/// Human-readable monomial name, e.g. "1", "x2", "x1^2*x2".
pub fn feature_name(exponents: &[u32]) -> String {
    let mut parts = Vec::new();
    for (i, &e) in exponents.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(format!("x{}", i + 1)),
            _ => parts.push(format!("x{}^{}", i + 1, e)),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Names of all library features for an `m`-dimensional state.
pub fn feature_names(m: usize, spec: &LibrarySpec) -> Vec<String> {
    monomial_exponents(m, spec).iter().map(|e| feature_name(e)).collect()
}

/// Evaluate one library row at a single state.
pub fn library_row(x: &[f64], features: &[Vec<u32>]) -> Vec<f64> {
    features
        .iter()
        .map(|exps| {
            exps.iter()
                .zip(x)
                .map(|(&e, &v)| v.powi(e as i32))
                .product()
        })
        .collect()
}

/// Evaluate the candidate library on a state matrix (rows = samples).
pub fn build_library(x: &DMatrix<f64>, spec: &LibrarySpec) -> Result<LibraryMatrix> {
    if x.ncols() == 0 {
        return Err(Error::Parameter("state matrix needs at least one column".into()));
    }
    for (i, row) in x.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData { row: i });
        }
    }
    let features = monomial_exponents(x.ncols(), spec);
    let names = features.iter().map(|e| feature_name(e)).collect();
    let mut values = DMatrix::zeros(x.nrows(), features.len());
    for i in 0..x.nrows() {
        let state: Vec<f64> = x.row(i).iter().cloned().collect();
        let row = library_row(&state, &features);
        for (j, v) in row.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    Ok(LibraryMatrix { values, features, names, spec: *spec })
}

/// Weights of the local least-squares polynomial fit over a window of the
/// given odd length, evaluated at integer `offset` from the window center.
/// `offset = 0` gives the classical smoothing weights.
pub fn savgol_weights(window: usize, polyorder: usize, offset: i64) -> Result<Vec<f64>> {
    if window % 2 == 0 || window < 3 {
        return Err(Error::Parameter(format!("window must be odd and >= 3, got {window}")));
    }
    if polyorder >= window {
        return Err(Error::Parameter(format!(
            "polyorder {polyorder} must be smaller than window {window}"
        )));
    }
    let half = (window / 2) as i64;
    // Vandermonde A[s][k] = s^k over positions s = -half..=half.
    let a = DMatrix::from_fn(window, polyorder + 1, |i, k| {
        ((i as i64 - half) as f64).powi(k as i32)
    });
    let ata = a.transpose() * &a;
    let eval = DVector::from_fn(polyorder + 1, |k, _| (offset as f64).powi(k as i32));
    // w = A (A^T A)^{-1} eval, so that w . y = fitted value at `offset`.
    let coef = linalg::solve_square(&ata, &eval)
        .map_err(|_| Error::Parameter("degenerate smoothing window".into()))?;
    Ok((a * coef).iter().cloned().collect())
}

/// Savitzky–Golay smoothing. Interior samples take the center value of a
/// local polynomial fit; samples within half a window of either end reuse
/// the nearest full window, evaluated at the sample's offset from that
/// window's center.
pub fn savgol_smooth(ts: &TimeSeries, window: usize, polyorder: usize) -> Result<TimeSeries> {
    let n = ts.n_samples();
    if window > n {
        return Err(Error::Parameter(format!(
            "window {window} exceeds series length {n}"
        )));
    }
    let half = window / 2;
    // Precompute weights for every offset used: 0 for the interior,
    // -half..=half for the two boundary bands.
    let mut offset_weights = Vec::with_capacity(2 * half + 1);
    for offset in -(half as i64)..=(half as i64) {
        offset_weights.push(savgol_weights(window, polyorder, offset)?);
    }
    let mut out = ts.states.clone();
    for col in 0..ts.dim() {
        for i in 0..n {
            // Center of the nearest full window.
            let center = i.clamp(half, n - 1 - half);
            let offset = i as i64 - center as i64;
            let w = &offset_weights[(offset + half as i64) as usize];
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * ts.states[(center - half + k, col)];
            }
            out[(i, col)] = acc;
        }
    }
    TimeSeries::new(ts.t0, ts.dt, out, ts.labels.clone())
}

/// Second-order finite differences: central stencils on the interior,
/// one-sided three-point stencils at the two ends.
pub fn finite_diff(ts: &TimeSeries) -> Result<DerivMatrix> {
    let n = ts.n_samples();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let dt = ts.dt;
    let s = &ts.states;
    let m = ts.dim();
    let mut d = DMatrix::zeros(n, m);
    for col in 0..m {
        d[(0, col)] = (-3.0 * s[(0, col)] + 4.0 * s[(1, col)] - s[(2, col)]) / (2.0 * dt);
        for i in 1..n - 1 {
            d[(i, col)] = (s[(i + 1, col)] - s[(i - 1, col)]) / (2.0 * dt);
        }
        d[(n - 1, col)] =
            (3.0 * s[(n - 1, col)] - 4.0 * s[(n - 2, col)] + s[(n - 3, col)]) / (2.0 * dt);
    }
    Ok(DerivMatrix { values: d, method: DerivMethod::FiniteDifference })
}

/// Exact derivatives obtained by evaluating a known vector field at every
/// sample (noiseless benchmarking only).
pub fn exact_derivatives(ts: &TimeSeries, rhs: &crate::systems::Rhs) -> DerivMatrix {
    let n = ts.n_samples();
    let m = ts.dim();
    let mut d = DMatrix::zeros(n, m);
    for i in 0..n {
        let f = rhs(&ts.row(i));
        for k in 0..m {
            d[(i, k)] = f[k];
        }
    }
    DerivMatrix { values: d, method: DerivMethod::Exact }
}
