//! Coefficient uncertainty via feature conformal prediction: each
//! jackknife member is re-solved under an equality constraint that forces
//! it to reproduce its held-out derivative exactly, the L1 distance
//! between the member and its constrained surrogate becomes a
//! non-conformity score, and a single score quantile calibrates a uniform
//! half-width around the aggregated coefficients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conformal::empirical_quantile;
use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::{DerivMatrix, LibraryMatrix};
use crate::sindy::{aggregate, constrained_lstsq, Aggregation, Ensemble, EnsembleKind, SparseModel};

/// Constrained re-solve of one member on its training rows: per state, the
/// least-squares problem restricted to the member's active support with
/// the equality constraint that the held-out library rows map exactly to
/// the held-out derivatives. Off-support entries stay zero and no further
/// thresholding is applied.
pub fn surrogate_model(
    theta_rest: &DMatrix<f64>,
    xdot_rest: &DMatrix<f64>,
    constraint_rows: &DMatrix<f64>,
    constraint_rhs: &DMatrix<f64>,
    member: &SparseModel,
) -> Result<SparseModel> {
    let p = member.n_features();
    let m = member.n_states();
    if constraint_rows.ncols() != p {
        return Err(Error::Parameter(format!(
            "constraint rows have {} columns, library has {p}",
            constraint_rows.ncols()
        )));
    }
    let mut coeffs = DMatrix::zeros(p, m);
    for k in 0..m {
        let support = member.active_features(k);
        let d = DVector::from_fn(constraint_rhs.nrows(), |i, _| constraint_rhs[(i, k)]);
        if support.is_empty() {
            if d.amax() > 1e-8 {
                return Err(Error::SingularKkt(format!(
                    "state {k}: empty support cannot satisfy a nonzero constraint"
                )));
            }
            continue;
        }
        let theta_sub =
            DMatrix::from_fn(theta_rest.nrows(), support.len(), |i, j| theta_rest[(i, support[j])]);
        let c_sub = DMatrix::from_fn(constraint_rows.nrows(), support.len(), |i, j| {
            constraint_rows[(i, support[j])]
        });
        let y = DVector::from_fn(xdot_rest.nrows(), |i, _| xdot_rest[(i, k)]);
        let (xi, _z) = constrained_lstsq(&theta_sub, &y, &c_sub, &d)?;
        for (j, &col) in support.iter().enumerate() {
            coeffs[(col, k)] = xi[j];
        }
    }
    Ok(SparseModel::from_coeffs(coeffs, member.lambda, member.feature_names.clone()))
}

/// Non-conformity scores with their skip audit.
#[derive(Clone, Debug)]
pub struct ScoredSurrogates {
    pub scores: Vec<f64>,
    pub skipped: usize,
}

/// One score per jackknife member: the entrywise L1 distance between the
/// member's coefficients and its constrained surrogate's. Members whose
/// surrogate solve fails are skipped; fewer than 5 surviving scores or a
/// skip rate above 20% fails the calibration loudly.
pub fn featurecp_scores(
    ens: &Ensemble,
    theta: &LibraryMatrix,
    xdot: &DerivMatrix,
) -> Result<ScoredSurrogates> {
    if ens.kind != EnsembleKind::Jackknife {
        return Err(Error::Parameter(
            "feature-CP calibration needs a jackknife ensemble with held-out rows".into(),
        ));
    }
    let maybe_scores: Vec<Option<f64>> = (0..ens.size())
        .into_par_iter()
        .map(|i| {
            let train = &ens.train_rows[i];
            let held = &ens.held_out[i];
            if held.is_empty() {
                return None;
            }
            let theta_rest = linalg::select_rows(&theta.values, train);
            let xdot_rest = linalg::select_rows(&xdot.values, train);
            let c_rows = linalg::select_rows(&theta.values, held);
            let c_rhs = linalg::select_rows(&xdot.values, held);
            match surrogate_model(&theta_rest, &xdot_rest, &c_rows, &c_rhs, &ens.members[i]) {
                Ok(surrogate) => {
                    let s = surrogate
                        .coeffs
                        .iter()
                        .zip(ens.members[i].coeffs.iter())
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>();
                    Some(s)
                }
                Err(_) => None,
            }
        })
        .collect();

    let scores: Vec<f64> = maybe_scores.iter().flatten().cloned().collect();
    let skipped = ens.size() - scores.len();
    if scores.len() < 5 {
        return Err(Error::Calibration(format!(
            "only {} usable surrogate scores (need at least 5)",
            scores.len()
        )));
    }
    if (skipped as f64) > 0.2 * ens.size() as f64 {
        return Err(Error::Calibration(format!(
            "surrogate skip rate too high: {skipped} of {} members",
            ens.size()
        )));
    }
    Ok(ScoredSurrogates { scores, skipped })
}

/// Calibrated coefficient intervals: a single score quantile applied as a
/// uniform half-width around every active aggregated coefficient.
#[derive(Clone, Debug)]
pub struct CoefficientIntervals {
    pub center: DMatrix<f64>,
    pub half_width: f64,
    pub alpha: f64,
    pub scores: Vec<f64>,
    /// True where the aggregated support excludes the coefficient; those
    /// entries carry the degenerate interval [0, 0].
    pub structural_zero: DMatrix<bool>,
    pub feature_names: Vec<String>,
    pub n_skipped: usize,
}

impl CoefficientIntervals {
    /// (lower, upper) bounds for one coefficient.
    pub fn bounds(&self, feature: usize, state: usize) -> (f64, f64) {
        if self.structural_zero[(feature, state)] {
            (0.0, 0.0)
        } else {
            let c = self.center[(feature, state)];
            (c - self.half_width, c + self.half_width)
        }
    }

    pub fn width(&self, feature: usize, state: usize) -> f64 {
        if self.structural_zero[(feature, state)] {
            0.0
        } else {
            2.0 * self.half_width
        }
    }

    /// Whether every nonzero entry of `truth` falls inside its interval.
    pub fn covers_nonzero(&self, truth: &DMatrix<f64>) -> bool {
        for j in 0..truth.nrows() {
            for k in 0..truth.ncols() {
                let v = truth[(j, k)];
                if v != 0.0 {
                    let (lo, hi) = self.bounds(j, k);
                    if v < lo || v > hi {
                        return false;
                    }
                }
            }
        }
        true
    }
}

pub fn coefficient_intervals(
    ens: &Ensemble,
    scored: &ScoredSurrogates,
    alpha: f64,
    aggregation: Aggregation,
) -> Result<CoefficientIntervals> {
    let agg = aggregate(ens, aggregation);
    let q = empirical_quantile(&scored.scores, alpha)?;
    let structural_zero = agg.support.map(|s| !s);
    Ok(CoefficientIntervals {
        center: agg.coeffs,
        half_width: q,
        alpha,
        scores: scored.scores.clone(),
        structural_zero,
        feature_names: agg.feature_names,
        n_skipped: scored.skipped,
    })
}

/// Per-coefficient ensemble-quantile intervals: the nearest-rank
/// [alpha/2, 1 - alpha/2] quantiles of each coefficient across members.
#[derive(Clone, Debug)]
pub struct EnsembleIntervals {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub alpha: f64,
}

impl EnsembleIntervals {
    pub fn half_width(&self, feature: usize, state: usize) -> f64 {
        0.5 * (self.upper[(feature, state)] - self.lower[(feature, state)])
    }

    pub fn covers_nonzero(&self, truth: &DMatrix<f64>) -> bool {
        for j in 0..truth.nrows() {
            for k in 0..truth.ncols() {
                let v = truth[(j, k)];
                if v != 0.0 && (v < self.lower[(j, k)] || v > self.upper[(j, k)]) {
                    return false;
                }
            }
        }
        true
    }
}

/// Nearest-rank quantile: the ceil(beta * n)-th smallest (1-based), with a
/// guard against floating-point drift on exact-integer products.
fn nearest_rank(sorted: &[f64], beta: f64) -> f64 {
    let n = sorted.len();
    let idx = ((beta * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n);
    sorted[idx - 1]
}

pub fn esindy_intervals(ens: &Ensemble, alpha: f64) -> Result<EnsembleIntervals> {
    if ens.size() == 0 {
        return Err(Error::Calibration("empty ensemble".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let p = ens.members[0].n_features();
    let m = ens.members[0].n_states();
    let mut lower = DMatrix::zeros(p, m);
    let mut upper = DMatrix::zeros(p, m);
    for j in 0..p {
        for k in 0..m {
            let mut vals: Vec<f64> = ens.members.iter().map(|mm| mm.coeffs[(j, k)]).collect();
            vals.sort_by(f64::total_cmp);
            lower[(j, k)] = nearest_rank(&vals, alpha / 2.0);
            upper[(j, k)] = nearest_rank(&vals, 1.0 - alpha / 2.0);
        }
    }
    Ok(EnsembleIntervals { lower, upper, alpha })
}
