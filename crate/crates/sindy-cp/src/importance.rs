//! Library-feature importance: leave-one-covariate-out (LOCO) excess
//! prediction error with jackknife resampling, the regularization-path
//! statistic that accumulates coefficient-path deviations across a grid of
//! thresholds, and the ensemble inclusion-probability baseline.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::{DerivMatrix, LibraryMatrix};
use crate::sindy::{
    bootstrap_ensemble, inclusion_probability, stlsq_matrix, SparseModel, DEFAULT_MAX_ITER,
};

/// How a report's raw scores were produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportanceMethod {
    Loco,
    LocoPath,
    Inclusion,
}

impl ImportanceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ImportanceMethod::Loco => "loco",
            ImportanceMethod::LocoPath => "loco_path",
            ImportanceMethod::Inclusion => "inclusion",
        }
    }
}

/// Per-(feature, state) importance scores. `raw` keeps each method's native
/// units; `scores` is the per-state normalization (each column sums to 1
/// unless identically zero).
#[derive(Clone, Debug)]
pub struct ImportanceReport {
    pub raw: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub method: ImportanceMethod,
    pub data_len: usize,
    pub feature_names: Vec<String>,
    /// (resample, feature) refits skipped because the fit failed.
    pub n_skipped: usize,
}

impl ImportanceReport {
    pub fn from_raw(
        raw: DMatrix<f64>,
        method: ImportanceMethod,
        data_len: usize,
        feature_names: Vec<String>,
        n_skipped: usize,
    ) -> Self {
        let mut scores = raw.clone();
        for mut col in scores.column_iter_mut() {
            let total: f64 = col.iter().map(|v| v.max(0.0)).sum();
            if total > 0.0 {
                for v in col.iter_mut() {
                    *v = v.max(0.0) / total;
                }
            } else {
                col.fill(0.0);
            }
        }
        ImportanceReport { raw, scores, method, data_len, feature_names, n_skipped }
    }

    /// Indices of the `k` highest-scoring features for one state, ties
    /// broken by feature index for determinism.
    pub fn top_features(&self, state: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.nrows()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[(b, state)]
                .partial_cmp(&self.scores[(a, state)])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }
}

/// Strictly increasing grid of nonnegative thresholds.
#[derive(Clone, Debug)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Parameter("lambda grid needs at least 2 points".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("lambda grid values must be finite and >= 0".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("lambda grid must be strictly increasing".into()));
        }
        Ok(LambdaGrid { values })
    }

    /// `k` log-spaced points from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Parameter(format!(
                "log-spaced grid needs 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if k < 2 {
            return Err(Error::Parameter("lambda grid needs at least 2 points".into()));
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let values = (0..k)
            .map(|i| (llo + (lhi - llo) * i as f64 / (k - 1) as f64).exp())
            .collect();
        LambdaGrid::new(values)
    }

    /// Default grid around a reference threshold: 10 log-spaced points
    /// spanning [0.1 * lambda_ref, 5 * lambda_ref].
    pub fn default_for(lambda_ref: f64) -> Result<Self> {
        LambdaGrid::log_spaced(0.1 * lambda_ref, 5.0 * lambda_ref, 10)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Resampling controls shared by the importance estimators.
#[derive(Clone, Copy, Debug)]
pub struct ImportanceConfig {
    /// Leave-one-out up to this many rows; beyond it, leave-one-batch-out.
    pub loo_threshold: usize,
    /// Number of contiguous batches in the batched regime.
    pub max_batches: usize,
    pub max_iter: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig { loo_threshold: 200, max_batches: 50, max_iter: DEFAULT_MAX_ITER }
    }
}

/// Held-out index groups: singletons up to the LOO threshold, contiguous
/// batches beyond it.
pub fn jackknife_plan(n: usize, cfg: &ImportanceConfig) -> Vec<Vec<usize>> {
    if n <= cfg.loo_threshold {
        (0..n).map(|i| vec![i]).collect()
    } else {
        let chunk = n.div_ceil(cfg.max_batches);
        (0..n).collect::<Vec<_>>().chunks(chunk).map(|c| c.to_vec()).collect()
    }
}

/// Excess prediction error of the reduced model at one held-out point,
/// per state. `reduced` must be expressed on the full library with the
/// removed feature's row zeroed, so both models consume the same row.
pub fn loco_excess(
    full: &SparseModel,
    reduced: &SparseModel,
    theta_row: &[f64],
    xdot_row: &[f64],
) -> Vec<f64> {
    let m = full.n_states();
    (0..m)
        .map(|k| {
            let pred = |mdl: &SparseModel| -> f64 {
                (0..mdl.n_features()).map(|j| theta_row[j] * mdl.coeffs[(j, k)]).sum()
            };
            (xdot_row[k] - pred(reduced)).abs() - (xdot_row[k] - pred(full)).abs()
        })
        .collect()
}

/// Re-run the full sparse regression with column `j` removed and embed the
/// result back into full-library coordinates (row `j` zero).
fn reduced_fit(
    theta: &DMatrix<f64>,
    names: &[String],
    xdot: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    max_iter: usize,
) -> Result<SparseModel> {
    let reduced_theta = theta.clone().remove_column(j);
    let reduced_names: Vec<String> =
        names.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, n)| n.clone()).collect();
    let fit = stlsq_matrix(&reduced_theta, &reduced_names, xdot, lambda, max_iter)?;
    let coeffs = fit.coeffs.insert_row(j, 0.0);
    Ok(SparseModel::from_coeffs(coeffs, lambda, names.to_vec()))
}

/// LOCO importance: for every jackknife unit, fit the full and each
/// reduced model on the retained rows and score the excess error at the
/// held-out rows. Negative excesses are clipped to zero before averaging;
/// raw scores are the per-(feature, state) means.
pub fn loco_importance(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    lambda: f64,
    cfg: &ImportanceConfig,
) -> Result<ImportanceReport> {
    let n = theta.n_samples();
    let p = theta.n_features();
    let m = xdot.values.ncols();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if p < 2 {
        return Err(Error::Parameter("need at least 2 library features".into()));
    }
    let units = jackknife_plan(n, cfg);

    struct Partial {
        sum: DMatrix<f64>,
        count: DMatrix<f64>,
        skipped: usize,
    }

    let partials: Vec<Partial> = units
        .par_iter()
        .map(|held| {
            let rest: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
            let theta_rest = linalg::select_rows(&theta.values, &rest);
            let xdot_rest = linalg::select_rows(&xdot.values, &rest);
            let mut out =
                Partial { sum: DMatrix::zeros(p, m), count: DMatrix::zeros(p, m), skipped: 0 };
            let full = match stlsq_matrix(&theta_rest, &theta.names, &xdot_rest, lambda, cfg.max_iter)
            {
                Ok(f) => f,
                Err(_) => {
                    out.skipped += p;
                    return out;
                }
            };
            for j in 0..p {
                let reduced =
                    match reduced_fit(&theta_rest, &theta.names, &xdot_rest, j, lambda, cfg.max_iter)
                    {
                        Ok(r) => r,
                        Err(_) => {
                            out.skipped += 1;
                            continue;
                        }
                    };
                for &r in held {
                    let theta_row: Vec<f64> = theta.values.row(r).iter().cloned().collect();
                    let xdot_row: Vec<f64> = xdot.values.row(r).iter().cloned().collect();
                    let deltas = loco_excess(&full, &reduced, &theta_row, &xdot_row);
                    for k in 0..m {
                        out.sum[(j, k)] += deltas[k].max(0.0);
                        out.count[(j, k)] += 1.0;
                    }
                }
            }
            out
        })
        .collect();

    let mut sum = DMatrix::zeros(p, m);
    let mut count = DMatrix::zeros(p, m);
    let mut skipped = 0;
    for part in partials {
        sum += part.sum;
        count += part.count;
        skipped += part.skipped;
    }
    let raw = DMatrix::from_fn(p, m, |j, k| if count[(j, k)] > 0.0 { sum[(j, k)] / count[(j, k)] } else { 0.0 });
    Ok(ImportanceReport::from_raw(raw, ImportanceMethod::Loco, n, theta.names.clone(), skipped))
}

/// Cumulative coefficient-path deviation for feature `j`: the L1 distance
/// between the full and reduced solution paths summed across the grid,
/// with the missing row of the reduced path treated as zero.
pub fn loco_path_stat(
    theta: &DMatrix<f64>,
    names: &[String],
    xdot: &DMatrix<f64>,
    grid: &LambdaGrid,
    j: usize,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let p = theta.ncols();
    let m = xdot.ncols();
    if j >= p {
        return Err(Error::Parameter(format!("feature index {j} out of range (p = {p})")));
    }
    let mut acc = vec![0.0; m];
    for &lambda in grid.values() {
        let full = stlsq_matrix(theta, names, xdot, lambda, max_iter)?;
        let reduced = reduced_fit(theta, names, xdot, j, lambda, max_iter)?;
        for k in 0..m {
            for r in 0..p {
                acc[k] += (reduced.coeffs[(r, k)] - full.coeffs[(r, k)]).abs();
            }
        }
    }
    Ok(acc)
}

/// LOCO-path importance: the path statistic per feature, averaged over
/// jackknife resamples; raw scores are the per-(feature, state) means.
pub fn loco_path_importance(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    grid: &LambdaGrid,
    cfg: &ImportanceConfig,
) -> Result<ImportanceReport> {
    let n = theta.n_samples();
    let p = theta.n_features();
    let m = xdot.values.ncols();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if p < 2 {
        return Err(Error::Parameter("need at least 2 library features".into()));
    }
    let units = jackknife_plan(n, cfg);

    struct Partial {
        sum: DMatrix<f64>,
        count: DMatrix<f64>,
        skipped: usize,
    }

    let partials: Vec<Partial> = units
        .par_iter()
        .map(|held| {
            let rest: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
            let theta_rest = linalg::select_rows(&theta.values, &rest);
            let xdot_rest = linalg::select_rows(&xdot.values, &rest);
            let mut out =
                Partial { sum: DMatrix::zeros(p, m), count: DMatrix::zeros(p, m), skipped: 0 };
            for j in 0..p {
                match loco_path_stat(&theta_rest, &theta.names, &xdot_rest, grid, j, cfg.max_iter)
                {
                    Ok(t) => {
                        for k in 0..m {
                            out.sum[(j, k)] += t[k];
                            out.count[(j, k)] += 1.0;
                        }
                    }
                    Err(_) => out.skipped += 1,
                }
            }
            out
        })
        .collect();

    let mut sum = DMatrix::zeros(p, m);
    let mut count = DMatrix::zeros(p, m);
    let mut skipped = 0;
    for part in partials {
        sum += part.sum;
        count += part.count;
        skipped += part.skipped;
    }
    let raw = DMatrix::from_fn(p, m, |j, k| if count[(j, k)] > 0.0 { sum[(j, k)] / count[(j, k)] } else { 0.0 });
    Ok(ImportanceReport::from_raw(raw, ImportanceMethod::LocoPath, n, theta.names.clone(), skipped))
}

/// Inclusion-probability baseline: how often each coefficient survives
/// thresholding across a bootstrap ensemble.
pub fn inclusion_importance(
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
    b: usize,
    lambda: f64,
    seed: u64,
) -> Result<ImportanceReport> {
    let ens = bootstrap_ensemble(theta, xdot, b, lambda, seed)?;
    let raw = inclusion_probability(&ens);
    Ok(ImportanceReport::from_raw(
        raw,
        ImportanceMethod::Inclusion,
        theta.n_samples(),
        theta.names.clone(),
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{build_library, exact_derivatives, LibrarySpec};
    use crate::systems::{make_system, simulate_ode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lv_data(n_steps: usize) -> (LibraryMatrix, DerivMatrix) {
        let sys = make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap();
        let ts = simulate_ode(&sys, &[5.0, 5.0], 0.1, n_steps).unwrap();
        let theta = build_library(&ts.states, &LibrarySpec::quadratic()).unwrap();
        let xdot = exact_derivatives(&ts, &sys.rhs);
        (theta, xdot)
    }

    fn model_from(coeffs: &[f64], p: usize, m: usize) -> SparseModel {
        let names: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        SparseModel::from_coeffs(DMatrix::from_column_slice(p, m, coeffs), 0.0, names)
    }

    #[test]
    fn loco_excess_identical_models_zero() {
        let full = model_from(&[0.4, 0.2], 2, 1);
        let delta = loco_excess(&full, &full, &[1.0, 2.0], &[0.7]);
        assert_eq!(delta, vec![0.0]);
    }

    #[test]
    fn loco_excess_direct_subtraction() {
        // Full prediction 0.4 vs target 0.5: residual 0.1; reduced
        // prediction 0.1: residual 0.4; excess 0.3.
        let full = model_from(&[0.4, 0.0], 2, 1);
        let reduced = model_from(&[0.1, 0.0], 2, 1);
        let delta = loco_excess(&full, &reduced, &[1.0, 0.0], &[0.5]);
        assert_relative_eq!(delta[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn loco_excess_negative_allowed() {
        let full = model_from(&[0.1, 0.0], 2, 1);
        let reduced = model_from(&[0.4, 0.0], 2, 1);
        let delta = loco_excess(&full, &reduced, &[1.0, 0.0], &[0.5]);
        assert_relative_eq!(delta[0], -0.3, epsilon = 1e-12);
    }

    #[test]
    fn loco_importance_exact_lv_mass_on_true_features() {
        let (theta, xdot) = lv_data(60);
        let report =
            loco_importance(&theta, &xdot, 0.05, &ImportanceConfig::default()).unwrap();
        assert_eq!(report.n_skipped, 0);
        // State x1: true features x1 (index 1) and x1*x2 (index 4).
        let s0: Vec<f64> = report.scores.column(0).iter().cloned().collect();
        assert!(s0[1] + s0[4] > 1.0 - 1e-6, "true-feature mass {s0:?}");
        for j in [0usize, 2, 3, 5] {
            assert!(s0[j] < 1e-6, "inert feature {j} scored {}", s0[j]);
        }
        // State x2: true features x2 (index 2) and x1*x2 (index 4).
        let s1: Vec<f64> = report.scores.column(1).iter().cloned().collect();
        assert!(s1[2] + s1[4] > 1.0 - 1e-6);
        let mut top0 = report.top_features(0, 2);
        top0.sort();
        assert_eq!(top0, vec![1, 4]);
        let mut top1 = report.top_features(1, 2);
        top1.sort();
        assert_eq!(top1, vec![2, 4]);
    }

    #[test]
    fn loco_importance_orthogonal_two_features() {
        // Orthogonal design, only feature 1 drives the response.
        let n = 8;
        let theta_vals = DMatrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                if i < 4 { 1.0 } else { -1.0 }
            } else if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let xdot_vals = DMatrix::from_fn(n, 1, |i, _| 2.0 * theta_vals[(i, 0)]);
        let theta = LibraryMatrix {
            values: theta_vals,
            features: vec![vec![1, 0], vec![0, 1]],
            names: vec!["x1".into(), "x2".into()],
            spec: LibrarySpec::new(1, false).unwrap(),
        };
        let xdot = DerivMatrix { values: xdot_vals, method: crate::preprocess::DerivMethod::Exact };
        let report =
            loco_importance(&theta, &xdot, 0.1, &ImportanceConfig::default()).unwrap();
        assert_relative_eq!(report.scores[(0, 0)], 1.0, epsilon = 1e-9);
        assert!(report.scores[(1, 0)] < 1e-9);
    }

    #[test]
    fn loco_importance_duplicate_columns_both_near_zero() {
        // Perfectly correlated carriers of the signal: either column can
        // compensate for the other, so LOCO cannot see either one. This is
        // the known correlated-feature limitation.
        let n = 12;
        let signal = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin() + 1.5);
        let theta_vals = DMatrix::from_fn(n, 2, |i, _| signal[(i, 0)]);
        let xdot = DerivMatrix {
            values: signal.clone(),
            method: crate::preprocess::DerivMethod::Exact,
        };
        let theta = LibraryMatrix {
            values: theta_vals,
            features: vec![vec![1, 0], vec![0, 1]],
            names: vec!["a".into(), "b".into()],
            spec: LibrarySpec::new(1, false).unwrap(),
        };
        let report =
            loco_importance(&theta, &xdot, 0.05, &ImportanceConfig::default()).unwrap();
        assert!(report.raw[(0, 0)] < 1e-9, "raw {}", report.raw[(0, 0)]);
        assert!(report.raw[(1, 0)] < 1e-9, "raw {}", report.raw[(1, 0)]);
    }

    #[test]
    fn lambda_grid_validation() {
        assert!(LambdaGrid::new(vec![0.1]).is_err());
        assert!(LambdaGrid::new(vec![0.2, 0.1]).is_err());
        assert!(LambdaGrid::new(vec![0.1, 0.1]).is_err());
        assert!(LambdaGrid::new(vec![-0.1, 0.1]).is_err());
        let g = LambdaGrid::log_spaced(0.01, 0.5, 10).unwrap();
        assert_eq!(g.values().len(), 10);
        assert_relative_eq!(g.values()[0], 0.01, epsilon = 1e-12);
        assert_relative_eq!(g.values()[9], 0.5, epsilon = 1e-12);
        let d = LambdaGrid::default_for(0.05).unwrap();
        assert_relative_eq!(d.values()[0], 0.005, epsilon = 1e-12);
        assert_relative_eq!(d.values()[9], 0.25, epsilon = 1e-12);
    }

    /// Independent oracle: plain normal-equations STLSQ with Gaussian
    /// elimination, no shared code with the production path.
    fn oracle_stlsq(theta: &DMatrix<f64>, xdot_col: &[f64], lambda: f64) -> Vec<f64> {
        let p = theta.ncols();
        let n = theta.nrows();
        let mut active: Vec<usize> = (0..p).collect();
        let mut coef = vec![0.0; p];
        for _ in 0..40 {
            if active.is_empty() {
                return vec![0.0; p];
            }
            let a = active.len();
            // Normal equations on active columns.
            let mut ata = vec![vec![0.0; a + 1]; a];
            for (r, &cr) in active.iter().enumerate() {
                for (c, &cc) in active.iter().enumerate() {
                    ata[r][c] = (0..n).map(|i| theta[(i, cr)] * theta[(i, cc)]).sum();
                }
                ata[r][a] = (0..n).map(|i| theta[(i, cr)] * xdot_col[i]).sum();
            }
            // Gaussian elimination with partial pivoting.
            for col in 0..a {
                let piv = (col..a).max_by(|&x, &y| ata[x][col].abs().total_cmp(&ata[y][col].abs())).unwrap();
                ata.swap(col, piv);
                let pv = ata[col][col];
                for row in (col + 1)..a {
                    let f = ata[row][col] / pv;
                    for c2 in col..=a {
                        ata[row][c2] -= f * ata[col][c2];
                    }
                }
            }
            let mut sol = vec![0.0; a];
            for row in (0..a).rev() {
                let mut acc = ata[row][a];
                for c2 in (row + 1)..a {
                    acc -= ata[row][c2] * sol[c2];
                }
                sol[row] = acc / ata[row][row];
            }
            let kept: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|(i, _)| sol[*i].abs() >= lambda)
                .map(|(_, &c)| c)
                .collect();
            coef = vec![0.0; p];
            for (i, &c) in active.iter().enumerate() {
                coef[c] = sol[i];
            }
            if kept.len() == active.len() {
                break;
            }
            active = kept;
            if active.is_empty() {
                return vec![0.0; p];
            }
        }
        for (c, v) in coef.iter_mut().enumerate() {
            if !active.contains(&c) {
                *v = 0.0;
            }
        }
        coef
    }

    #[test]
    fn loco_path_stat_matches_path_oracle_on_exact_lv() {
        let (theta, xdot) = lv_data(50);
        let grid = LambdaGrid::log_spaced(0.01, 0.5, 10).unwrap();
        let p = theta.n_features();
        let m = 2;

        // Oracle route: evaluate both paths via the normal-equations STLSQ
        // and accumulate the L1 deviations directly.
        let oracle_t = |j: usize| -> Vec<f64> {
            let mut acc = vec![0.0; m];
            for &lam in grid.values() {
                for k in 0..m {
                    let y: Vec<f64> = (0..theta.n_samples()).map(|i| xdot.values[(i, k)]).collect();
                    let full = oracle_stlsq(&theta.values, &y, lam);
                    let red_theta = theta.values.clone().remove_column(j);
                    let red = oracle_stlsq(&red_theta, &y, lam);
                    let mut red_full = vec![0.0; p];
                    let mut idx = 0;
                    for r in 0..p {
                        if r != j {
                            red_full[r] = red[idx];
                            idx += 1;
                        }
                    }
                    for r in 0..p {
                        acc[k] += (red_full[r] - full[r]).abs();
                    }
                }
            }
            acc
        };

        let mut t_by_feature = Vec::new();
        for j in 0..p {
            let t = loco_path_stat(&theta.values, &theta.names, &xdot.values, &grid, j, 20)
                .unwrap();
            let want = oracle_t(j);
            for k in 0..m {
                assert_relative_eq!(t[k], want[k], epsilon = 1e-6, max_relative = 1e-6);
            }
            assert!(t.iter().all(|v| *v >= 0.0));
            t_by_feature.push(t);
        }
        // The interaction term's path statistic dominates in the x1
        // equation.
        let t_interaction = t_by_feature[4][0];
        for (j, t) in t_by_feature.iter().enumerate() {
            if j != 4 {
                assert!(
                    t_interaction > t[0],
                    "T[x1*x2]={t_interaction} not above T[{j}]={}",
                    t[0]
                );
            }
        }
    }

    #[test]
    fn loco_path_inactive_feature_zero() {
        // Orthogonal design where feature 2 never enters the model at any
        // threshold: identical paths, T = 0.
        let n = 8;
        let theta_vals = DMatrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                if i < 4 { 1.0 } else { -1.0 }
            } else if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let xdot_vals = DMatrix::from_fn(n, 1, |i, _| 2.0 * theta_vals[(i, 0)]);
        let names = vec!["x1".to_string(), "x2".to_string()];
        let grid = LambdaGrid::log_spaced(0.05, 0.5, 5).unwrap();
        let t = loco_path_stat(&theta_vals, &names, &xdot_vals, &grid, 1, 20).unwrap();
        assert_eq!(t, vec![0.0]);
    }

    #[test]
    fn loco_path_importance_all_inert_zero_report() {
        let sys = make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap();
        let ts = simulate_ode(&sys, &[5.0, 5.0], 0.1, 20).unwrap();
        let theta = build_library(&ts.states, &LibrarySpec::quadratic()).unwrap();
        let zero = DerivMatrix {
            values: DMatrix::zeros(21, 2),
            method: crate::preprocess::DerivMethod::Exact,
        };
        let grid = LambdaGrid::default_for(0.05).unwrap();
        let report =
            loco_path_importance(&theta, &zero, &grid, &ImportanceConfig::default()).unwrap();
        assert!(report.raw.iter().all(|v| *v == 0.0));
        assert!(report.scores.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loco_path_importance_exact_lv_top2() {
        let (theta, xdot) = lv_data(50);
        let grid = LambdaGrid::default_for(0.05).unwrap();
        let report =
            loco_path_importance(&theta, &xdot, &grid, &ImportanceConfig::default()).unwrap();
        let mut top0 = report.top_features(0, 2);
        top0.sort();
        assert_eq!(top0, vec![1, 4]);
        let mut top1 = report.top_features(1, 2);
        top1.sort();
        assert_eq!(top1, vec![2, 4]);
    }

    #[test]
    fn inclusion_and_loco_agree_on_top_set() {
        for n in [20usize, 40, 80] {
            let (theta, xdot) = lv_data(n);
            let loco =
                loco_importance(&theta, &xdot, 0.05, &ImportanceConfig::default()).unwrap();
            let incl = inclusion_importance(&theta, &xdot, 50, 0.05, 7).unwrap();
            for state in 0..2 {
                let mut a = loco.top_features(state, 2);
                let mut b = incl.top_features(state, 2);
                a.sort();
                b.sort();
                assert_eq!(a, b, "n={n} state={state}");
            }
        }
    }

    #[test]
    fn jackknife_plan_regimes() {
        let cfg = ImportanceConfig::default();
        let loo = jackknife_plan(10, &cfg);
        assert_eq!(loo.len(), 10);
        assert!(loo.iter().all(|u| u.len() == 1));
        let batched = jackknife_plan(400, &cfg);
        assert_eq!(batched.len(), 50);
        assert_eq!(batched.iter().map(|u| u.len()).sum::<usize>(), 400);
        assert!(batched.iter().all(|u| u.len() == 8));
    }

    proptest! {
        #[test]
        fn normalized_columns_sum_to_one_or_zero(
            vals in proptest::collection::vec(0.0f64..10.0, 12),
        ) {
            let raw = DMatrix::from_column_slice(6, 2, &vals);
            let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
            let rep = ImportanceReport::from_raw(raw, ImportanceMethod::Loco, 12, names, 0);
            for col in rep.scores.column_iter() {
                let s: f64 = col.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9 || s == 0.0);
            }
        }

        #[test]
        fn normalization_scale_invariant(
            vals in proptest::collection::vec(0.0f64..10.0, 12),
            scale in 0.1f64..50.0,
        ) {
            let raw = DMatrix::from_column_slice(6, 2, &vals);
            let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
            let a = ImportanceReport::from_raw(raw.clone(), ImportanceMethod::Loco, 12, names.clone(), 0);
            let b = ImportanceReport::from_raw(raw * scale, ImportanceMethod::Loco, 12, names, 0);
            for (x, y) in a.scores.iter().zip(b.scores.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
