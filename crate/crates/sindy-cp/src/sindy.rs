//! Sparse regression core: sequentially thresholded least squares (STLSQ),
//! equality-constrained least squares via the KKT system, and ensembles of
//! sparse models with bootstrap/jackknife resampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::{library_row, monomial_exponents, DerivMatrix, LibraryMatrix, LibrarySpec};

/// Default cap on STLSQ alternations; iteration stops earlier as soon as
/// the support stabilizes.
pub const DEFAULT_MAX_ITER: usize = 20;

/// A sparse coefficient matrix: one column per state equation, one row per
/// library feature.
#[derive(Clone, Debug)]
pub struct SparseModel {
    /// p x m coefficients; entries off the support are exactly zero.
    pub coeffs: DMatrix<f64>,
    /// p x m activity mask.
    pub support: DMatrix<bool>,
    /// Threshold the model was fit with.
    pub lambda: f64,
    pub feature_names: Vec<String>,
    /// Set when any least-squares subproblem was rank-deficient and fell
    /// back to the minimum-norm solution.
    pub rank_warning: bool,
}

impl SparseModel {
    /// Wrap a coefficient matrix; the support is its nonzero pattern.
    pub fn from_coeffs(coeffs: DMatrix<f64>, lambda: f64, feature_names: Vec<String>) -> Self {
        let support = coeffs.map(|v| v != 0.0);
        SparseModel { coeffs, support, lambda, feature_names, rank_warning: false }
    }

    pub fn n_features(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Evaluate the model as a vector field at a single state.
    pub fn rhs(&self, x: &[f64], spec: &LibrarySpec) -> Vec<f64> {
        let features = monomial_exponents(x.len(), spec);
        self.rhs_with_features(x, &features)
    }

    /// As [`rhs`](Self::rhs) with precomputed exponent vectors (hot path).
    pub fn rhs_with_features(&self, x: &[f64], features: &[Vec<u32>]) -> Vec<f64> {
        let row = library_row(x, features);
        let mut out = vec![0.0; self.n_states()];
        for k in 0..self.n_states() {
            let mut acc = 0.0;
            for j in 0..self.n_features() {
                let c = self.coeffs[(j, k)];
                if c != 0.0 {
                    acc += row[j] * c;
                }
            }
            out[k] = acc;
        }
        out
    }

    /// Predicted derivatives for every row of an evaluated library.
    pub fn predict(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        theta * &self.coeffs
    }

    /// Active feature indices for one state column.
    pub fn active_features(&self, state: usize) -> Vec<usize> {
        (0..self.n_features()).filter(|&j| self.support[(j, state)]).collect()
    }
}

/// How an ensemble's members were resampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    Bootstrap,
    Jackknife,
}

/// A bag of sparse models with their resampling bookkeeping.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<SparseModel>,
    /// Rows each member was fit on (with repeats for bootstrap draws).
    pub train_rows: Vec<Vec<usize>>,
    /// Rows withheld from each member (empty for bootstrap members, which
    /// exclude rows only implicitly by not drawing them).
    pub held_out: Vec<Vec<usize>>,
    pub kind: EnsembleKind,
    /// Row count of the source data.
    pub n_rows: usize,
}

impl Ensemble {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Per-member masks over source rows: true where the member's training
    /// data contains the row.
    pub fn train_masks(&self) -> Vec<Vec<bool>> {
        self.members
            .iter()
            .enumerate()
            .map(|(b, _)| {
                let mut mask = vec![false; self.n_rows];
                for &r in &self.train_rows[b] {
                    mask[r] = true;
                }
                mask
            })
            .collect()
    }
}

/// Aggregation rule for ensemble coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Median,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Sequentially thresholded least squares on an evaluated library.
pub fn stlsq(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    lambda: f64,
    max_iter: usize,
) -> Result<SparseModel> {
    stlsq_matrix(&theta.values, &theta.names, &xdot.values, lambda, max_iter)
}

/// STLSQ core over raw matrices; used directly when the library has been
/// reduced (feature removed) or resampled.
pub fn stlsq_matrix(
    theta: &DMatrix<f64>,
    names: &[String],
    xdot: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
) -> Result<SparseModel> {
    if theta.nrows() != xdot.nrows() {
        return Err(Error::Parameter(format!(
            "library has {} rows but derivatives have {}",
            theta.nrows(),
            xdot.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if max_iter < 1 {
        return Err(Error::Parameter("max_iter must be >= 1".into()));
    }
    let p = theta.ncols();
    let m = xdot.ncols();
    let mut coeffs = DMatrix::zeros(p, m);
    let mut rank_warning = false;

    // Each state equation is an independent regression.
    for k in 0..m {
        let y = DVector::from_fn(theta.nrows(), |i, _| xdot[(i, k)]);
        let mut active: Vec<usize> = (0..p).collect();
        let mut solved: Vec<f64> = Vec::new();
        let mut iters = 0;
        loop {
            if active.is_empty() {
                solved.clear();
                break;
            }
            let sub = DMatrix::from_fn(theta.nrows(), active.len(), |i, j| theta[(i, active[j])]);
            let fit = linalg::lstsq(&sub, &y)?;
            if fit.rank < active.len() {
                rank_warning = true;
            }
            solved = fit.solution.iter().cloned().collect();
            let kept: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|(j, _)| solved[*j].abs() >= lambda)
                .map(|(_, &col)| col)
                .collect();
            iters += 1;
            if kept.len() == active.len() {
                break; // support stable: the last fit is the final refit
            }
            if iters >= max_iter {
                // Out of iterations: refit once on the last thresholded set.
                active = kept;
                if active.is_empty() {
                    solved.clear();
                } else {
                    let sub =
                        DMatrix::from_fn(theta.nrows(), active.len(), |i, j| theta[(i, active[j])]);
                    let fit = linalg::lstsq(&sub, &y)?;
                    if fit.rank < active.len() {
                        rank_warning = true;
                    }
                    solved = fit.solution.iter().cloned().collect();
                }
                break;
            }
            active = kept;
        }
        for (j, &col) in active.iter().enumerate() {
            if !solved.is_empty() {
                coeffs[(col, k)] = solved[j];
            }
        }
    }

    let support = coeffs.map(|v| v != 0.0);
    Ok(SparseModel {
        coeffs,
        support,
        lambda,
        feature_names: names.to_vec(),
        rank_warning,
    })
}

/// Equality-constrained least squares via the bordered KKT system
///
/// ```text
/// [ TH^T TH   C^T ] [ xi ]   [ TH^T y ]
/// [   C        0  ] [ z  ] = [   d    ]
/// ```
///
/// Returns the coefficient vector and the Lagrange multipliers. `z = 0`
/// whenever the constraints are already satisfied by the unconstrained
/// optimum. Supports one or more constraint rows.
pub fn constrained_lstsq(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    c_rows: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = theta.ncols();
    let k = c_rows.nrows();
    if c_rows.ncols() != p {
        return Err(Error::Parameter(format!(
            "constraint rows have {} columns, library has {p}",
            c_rows.ncols()
        )));
    }
    if d.len() != k {
        return Err(Error::Parameter(format!(
            "{k} constraint rows but {} constraint values",
            d.len()
        )));
    }
    let gram = theta.transpose() * theta;
    let rhs_top = theta.transpose() * y;
    let mut kkt = DMatrix::zeros(p + k, p + k);
    kkt.view_mut((0, 0), (p, p)).copy_from(&gram);
    kkt.view_mut((0, p), (p, k)).copy_from(&c_rows.transpose());
    kkt.view_mut((p, 0), (k, p)).copy_from(c_rows);
    let mut rhs = DVector::zeros(p + k);
    rhs.rows_mut(0, p).copy_from(&rhs_top);
    rhs.rows_mut(p, k).copy_from(d);

    let sol = linalg::solve_square(&kkt, &rhs)
        .map_err(|_| Error::SingularKkt(format!("{k} constraint(s) on {p} columns")))?;
    let xi = DVector::from_fn(p, |i, _| sol[i]);
    let z = DVector::from_fn(k, |i, _| sol[p + i]);

    // The op contract promises an (essentially) exact equality; treat a
    // large residual as degeneracy rather than returning a bad solution.
    let resid = (c_rows * &xi - d).amax();
    let tol = 1e-10 * d.amax().max(1.0);
    if resid > tol {
        return Err(Error::SingularKkt(format!(
            "constraint residual {resid:.3e} exceeds tolerance"
        )));
    }
    Ok((xi, z))
}

/// Single-constraint convenience wrapper around [`constrained_lstsq`].
pub fn constrained_lstsq_single(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    c_row: &[f64],
    d: f64,
) -> Result<(DVector<f64>, f64)> {
    let c = DMatrix::from_row_slice(1, c_row.len(), c_row);
    let dv = DVector::from_vec(vec![d]);
    let (xi, z) = constrained_lstsq(theta, y, &c, &dv)?;
    Ok((xi, z[0]))
}

/// Fit `b` STLSQ models on paired row resamples (drawn with replacement).
pub fn bootstrap_ensemble(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    b: usize,
    lambda: f64,
    seed: u64,
) -> Result<Ensemble> {
    if b < 1 {
        return Err(Error::Parameter("ensemble size must be >= 1".into()));
    }
    let n = theta.n_samples();
    let fits: Result<Vec<(SparseModel, Vec<usize>)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(linalg::derive_seed(seed, i as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let th = select_rows(&theta.values, &rows);
            let xd = select_rows(&xdot.values, &rows);
            let model = stlsq_matrix(&th, &theta.names, &xd, lambda, DEFAULT_MAX_ITER)?;
            Ok((model, rows))
        })
        .collect();
    let fits = fits?;
    let (members, train_rows): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    Ok(Ensemble {
        held_out: vec![Vec::new(); members.len()],
        members,
        train_rows,
        kind: EnsembleKind::Bootstrap,
        n_rows: n,
    })
}

/// Leave-one-batch-out ensemble: member i is fit with batch i withheld.
pub fn jackknife_ensemble(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    lambda: f64,
    batch: usize,
) -> Result<Ensemble> {
    let n = theta.n_samples();
    if batch < 1 {
        return Err(Error::Parameter("batch must be >= 1".into()));
    }
    if n / batch < 2 {
        return Err(Error::InsufficientData { needed: 2 * batch, got: n });
    }
    let groups = n.div_ceil(batch);
    let fits: Result<Vec<(SparseModel, Vec<usize>, Vec<usize>)>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let held: Vec<usize> = (g * batch..((g + 1) * batch).min(n)).collect();
            let train: Vec<usize> = (0..n).filter(|r| !held.contains(r)).collect();
            let th = select_rows(&theta.values, &train);
            let xd = select_rows(&xdot.values, &train);
            let model = stlsq_matrix(&th, &theta.names, &xd, lambda, DEFAULT_MAX_ITER)?;
            Ok((model, train, held))
        })
        .collect();
    let mut members = Vec::with_capacity(groups);
    let mut train_rows = Vec::with_capacity(groups);
    let mut held_out = Vec::with_capacity(groups);
    for (model, train, held) in fits? {
        members.push(model);
        train_rows.push(train);
        held_out.push(held);
    }
    Ok(Ensemble { members, train_rows, held_out, kind: EnsembleKind::Jackknife, n_rows: n })
}

/// Elementwise mean/median of member coefficients; the support is the
/// nonzero pattern of the aggregate.
pub fn aggregate(ens: &Ensemble, method: Aggregation) -> SparseModel {
    let first = &ens.members[0];
    let p = first.n_features();
    let m = first.n_states();
    let coeffs = DMatrix::from_fn(p, m, |j, k| {
        let vals: Vec<f64> = ens.members.iter().map(|mm| mm.coeffs[(j, k)]).collect();
        match method {
            Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            Aggregation::Median => linalg::median(&vals),
        }
    });
    let mut model = SparseModel::from_coeffs(coeffs, first.lambda, first.feature_names.clone());
    model.rank_warning = ens.members.iter().any(|mm| mm.rank_warning);
    model
}

/// Fraction of members in which each library term is active.
pub fn inclusion_probability(ens: &Ensemble) -> DMatrix<f64> {
    let first = &ens.members[0];
    let b = ens.size() as f64;
    DMatrix::from_fn(first.n_features(), first.n_states(), |j, k| {
        ens.members.iter().filter(|mm| mm.support[(j, k)]).count() as f64 / b
    })
}

/// Median aggregate with entries zeroed wherever the inclusion probability
/// falls below `tol`.
pub fn prune_by_inclusion(ens: &Ensemble, tol: f64) -> Result<SparseModel> {
    if !(0.0..=1.0).contains(&tol) {
        return Err(Error::Parameter(format!("tolerance must lie in [0,1], got {tol}")));
    }
    let mut model = aggregate(ens, Aggregation::Median);
    let incl = inclusion_probability(ens);
    for k in 0..model.n_states() {
        for j in 0..model.n_features() {
            if incl[(j, k)] < tol {
                model.coeffs[(j, k)] = 0.0;
            }
        }
    }
    model.support = model.coeffs.map(|v| v != 0.0);
    Ok(model)
}
