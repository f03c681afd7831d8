//! Conformal prediction intervals for time-series forecasts: empirical
//! quantiles, a split-conformal baseline, EnbPI-style out-of-sample
//! calibration with a sliding score window, and a PI feedback controller
//! that adapts interval width to the observed miscoverage rate.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::{
    build_library, exact_derivatives, finite_diff, monomial_exponents, savgol_smooth,
    savgol_weights, DerivMatrix, LibrarySpec,
};
use crate::sindy::{bootstrap_ensemble, Ensemble};
use crate::systems::{Rhs, TimeSeries, DEFAULT_DIVERGENCE_GUARD};

/// Absolute slack in the covered-flag comparison. In exact arithmetic a
/// zero-noise stream has residuals and calibration scores both exactly
/// zero, so every interval covers; in floats both are integration dust of
/// about 1e-12 and the comparison would flip arbitrarily. The slack is
/// orders of magnitude below any real interval width.
const COVERAGE_SLACK: f64 = 1e-8;

/// Index of the conformal quantile: k = ceil((m + 1)(1 - alpha)), computed
/// with a small guard so exact-integer products do not drift across the
/// ceiling. May exceed `m`, in which case the quantile is the +inf sentinel.
pub fn quantile_index(m: usize, alpha: f64) -> usize {
    let v = (m as f64 + 1.0) * (1.0 - alpha);
    ((v - 1e-9).ceil().max(1.0)) as usize
}

/// The k-th smallest score with k = ceil((m+1)(1-alpha)); returns +inf when
/// k exceeds the list length (conservative out-of-range rule).
pub fn empirical_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Calibration("empty score list".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("non-finite score".into()));
    }
    let m = scores.len();
    let k = quantile_index(m, alpha);
    if k > m {
        return Ok(f64::INFINITY);
    }
    let mut v = scores.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// Split-conformal interval constructor for scalar regression, used as a
/// self-contained baseline in tests of the quantile machinery.
pub struct SplitConformal {
    predictor: Box<dyn Fn(f64) -> f64>,
    pub q: f64,
    pub alpha: f64,
}

impl SplitConformal {
    /// (lower, center, upper) at a query point.
    pub fn interval(&self, x: f64) -> (f64, f64, f64) {
        let c = (self.predictor)(x);
        (c - self.q, c, c + self.q)
    }
}

/// Fit on `train`, calibrate absolute residuals on `cal` (the two sets must
/// be disjoint samples), and return the interval constructor.
pub fn split_conformal(
    train: &[(f64, f64)],
    cal: &[(f64, f64)],
    alpha: f64,
    fit: impl Fn(&[(f64, f64)]) -> Box<dyn Fn(f64) -> f64>,
) -> Result<SplitConformal> {
    if train.is_empty() || cal.is_empty() {
        return Err(Error::Calibration("empty train or calibration split".into()));
    }
    let predictor = fit(train);
    let scores: Vec<f64> = cal.iter().map(|&(x, y)| (y - predictor(x)).abs()).collect();
    let q = empirical_quantile(&scores, alpha)?;
    Ok(SplitConformal { predictor, q, alpha })
}

/// State smoothing applied before a forecast is launched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoother {
    None,
    SavGol { window: usize, polyorder: usize },
}

impl Smoother {
    /// First stream index at which a causal smoothed state is available.
    pub fn start_index(&self) -> usize {
        match self {
            Smoother::None => 0,
            Smoother::SavGol { window, .. } => window - 1,
        }
    }

    /// Smooth a full series (training use).
    pub fn apply_full(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        match self {
            Smoother::None => Ok(ts.clone()),
            Smoother::SavGol { window, polyorder } => savgol_smooth(ts, *window, *polyorder),
        }
    }
}

/// Causal tail smoother: the smoothed state at index t uses only samples
/// up to t (the trailing window's polynomial fit evaluated at its right
/// edge).
pub struct TailSmoother {
    weights: Option<Vec<f64>>, // None = identity
    window: usize,
}

impl TailSmoother {
    pub fn new(smoother: Smoother) -> Result<Self> {
        match smoother {
            Smoother::None => Ok(TailSmoother { weights: None, window: 1 }),
            Smoother::SavGol { window, polyorder } => {
                let half = (window / 2) as i64;
                Ok(TailSmoother {
                    weights: Some(savgol_weights(window, polyorder, half)?),
                    window,
                })
            }
        }
    }

    /// Smoothed state at index `at`; requires `at + 1 >= window`.
    pub fn state_at(&self, ts: &TimeSeries, at: usize) -> Result<Vec<f64>> {
        match &self.weights {
            None => Ok(ts.row(at)),
            Some(w) => {
                if at + 1 < self.window {
                    return Err(Error::InsufficientData { needed: self.window, got: at + 1 });
                }
                let start = at + 1 - self.window;
                let mut out = vec![0.0; ts.dim()];
                for (k, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, wi) in w.iter().enumerate() {
                        acc += wi * ts.states[(start + i, k)];
                    }
                    *o = acc;
                }
                Ok(out)
            }
        }
    }
}

/// Member trajectories and their pointwise mean for one forecast launch.
pub struct ForecastResult {
    /// horizon x m trajectory per member; None once a member diverged.
    pub members: Vec<Option<DMatrix<f64>>>,
    /// horizon x m mean over surviving members.
    pub mean: DMatrix<f64>,
    pub n_diverged: usize,
}

/// Integrate every ensemble member forward `horizon` steps from `x0` with
/// RK4 at step `dt`. Diverging members (non-finite or beyond `guard`) are
/// excluded from the mean and counted.
pub fn forecast(
    ens: &Ensemble,
    x0: &[f64],
    dt: f64,
    horizon: usize,
    spec: &LibrarySpec,
    guard: f64,
) -> Result<ForecastResult> {
    if horizon < 1 {
        return Err(Error::Parameter("horizon must be >= 1".into()));
    }
    let m = x0.len();
    let features = monomial_exponents(m, spec);
    let mut members = Vec::with_capacity(ens.size());
    let mut n_diverged = 0;
    for member in &ens.members {
        let mut traj = DMatrix::zeros(horizon, m);
        let mut x = x0.to_vec();
        let mut ok = true;
        for h in 0..horizon {
            x = match rk4_model_step(member, &x, dt, &features) {
                Some(next) if next.iter().all(|v| v.is_finite() && v.abs() <= guard) => next,
                _ => {
                    ok = false;
                    break;
                }
            };
            for k in 0..m {
                traj[(h, k)] = x[k];
            }
        }
        if ok {
            members.push(Some(traj));
        } else {
            members.push(None);
            n_diverged += 1;
        }
    }
    let survivors = ens.size() - n_diverged;
    if survivors == 0 {
        return Err(Error::Calibration("every ensemble member diverged".into()));
    }
    let mut mean = DMatrix::zeros(horizon, m);
    for traj in members.iter().flatten() {
        mean += traj;
    }
    mean /= survivors as f64;
    Ok(ForecastResult { members, mean, n_diverged })
}

fn rk4_model_step(
    model: &crate::sindy::SparseModel,
    x: &[f64],
    dt: f64,
    features: &[Vec<u32>],
) -> Option<Vec<f64>> {
    let f = |x: &[f64]| model.rhs_with_features(x, features);
    let k1 = f(x);
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = f(&x2);
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = f(&x3);
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = f(&x4);
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Forecast from the causally smoothed tail state of `recent`.
pub fn forecast_from_series(
    ens: &Ensemble,
    recent: &TimeSeries,
    horizon: usize,
    smoother: Smoother,
    spec: &LibrarySpec,
) -> Result<ForecastResult> {
    let tail = TailSmoother::new(smoother)?;
    let x0 = tail.state_at(recent, recent.n_samples() - 1)?;
    forecast(ens, &x0, recent.dt, horizon, spec, DEFAULT_DIVERGENCE_GUARD)
}

/// Sliding window of per-state non-conformity scores with FIFO eviction.
#[derive(Clone, Debug)]
pub struct ScoreWindow {
    capacity: usize,
    scores: Vec<VecDeque<f64>>,
}

impl ScoreWindow {
    pub fn new(capacity: usize, n_states: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Parameter("window capacity must be >= 1".into()));
        }
        Ok(ScoreWindow { capacity, scores: vec![VecDeque::new(); n_states] })
    }

    pub fn push(&mut self, s: &[f64]) {
        for (k, window) in self.scores.iter_mut().enumerate() {
            if window.len() == self.capacity {
                window.pop_front();
            }
            window.push_back(s[k]);
        }
    }

    pub fn len(&self) -> usize {
        self.scores.first().map_or(0, |w| w.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_states(&self) -> usize {
        self.scores.len()
    }

    pub fn state_scores(&self, k: usize) -> Vec<f64> {
        self.scores[k].iter().cloned().collect()
    }

    /// Per-state empirical quantile of the current window contents.
    pub fn quantile(&self, alpha: f64) -> Result<Vec<f64>> {
        (0..self.n_states())
            .map(|k| empirical_quantile(&self.state_scores(k), alpha))
            .collect()
    }
}

/// Score the newly verifiable forecast, push it into the window, and
/// return the half-widths for the next interval.
pub fn enbpi_step(window: &mut ScoreWindow, new_score: &[f64], alpha: f64) -> Result<Vec<f64>> {
    window.push(new_score);
    window.quantile(alpha)
}

/// Symmetric prediction interval at the forecast's horizon endpoint.
#[derive(Clone, Debug)]
pub struct PredictionInterval {
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub q: Vec<f64>,
}

impl PredictionInterval {
    pub fn new(center: Vec<f64>, q: Vec<f64>, alpha: f64) -> Self {
        let lower = center.iter().zip(&q).map(|(c, qi)| c - qi).collect();
        let upper = center.iter().zip(&q).map(|(c, qi)| c + qi).collect();
        PredictionInterval { center, lower, upper, alpha, q }
    }
}

/// EnbPI interval: ensemble-mean center with per-state half-widths from the
/// sliding score window.
pub fn enbpi_interval(
    center_endpoint: Vec<f64>,
    window: &ScoreWindow,
    alpha: f64,
) -> Result<PredictionInterval> {
    if window.is_empty() {
        return Err(Error::Calibration("empty score window".into()));
    }
    let q = window.quantile(alpha)?;
    Ok(PredictionInterval::new(center_endpoint, q, alpha))
}

/// Saturation function applied to the accumulated coverage error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Saturation {
    /// r(x) = k_i * x; used in unit tests and long-run analyses.
    Identity,
    /// r(x) = k_i * tan(clamp(x ln t / (c t))), the time-decaying tangent
    /// saturation; `c` scales how fast the integral pressure relaxes.
    Tan { c: f64 },
}

/// Proportional-integral controller on the interval half-width.
///
/// The update is q_{t+1} = eta * g_t + r_t(sum g_i) with g_t = err_t -
/// alpha; the half-width actually used is max(q, 0). The controller is
/// positional: q is recomputed from the error history each step rather
/// than incremented.
#[derive(Clone, Debug)]
pub struct PidState {
    pub q: f64,
    pub eta: f64,
    pub k_i: f64,
    pub sat: Saturation,
    pub err_sum: f64,
    pub t: u64,
}

impl PidState {
    pub fn new(eta: f64, k_i: f64, sat: Saturation) -> Self {
        PidState { q: 0.0, eta, k_i, sat, err_sum: 0.0, t: 0 }
    }

    /// Feed one verified coverage outcome into the controller.
    pub fn update(&mut self, covered: bool, alpha: f64) {
        let err = if covered { 0.0 } else { 1.0 };
        let g = err - alpha;
        self.t += 1;
        self.err_sum += g;
        let r = match self.sat {
            Saturation::Identity => self.k_i * self.err_sum,
            Saturation::Tan { c } => {
                let t = self.t as f64;
                let x = self.err_sum * t.ln() / (c * t);
                let clamp = std::f64::consts::FRAC_PI_2 - 0.01;
                self.k_i * x.clamp(-clamp, clamp).tan()
            }
        };
        self.q = self.eta * g + r;
    }

    /// Half-width for the next interval.
    pub fn half_width(&self) -> f64 {
        self.q.max(0.0)
    }
}

/// Which verified coverage signal feeds each controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PidFeedback {
    /// One controller per state, fed that state's own covered flag. The
    /// default: it drives every state's miscoverage to the target, which
    /// is what the per-state coverage plots measure.
    PerState,
    /// A single controller fed the all-states-covered flag; every state
    /// shares one half-width.
    Joint,
}

/// Controller gain configuration. Absolute gains are derived per state
/// from the warm-up score scale q0: eta = eta_scale * 2 * q0 (a fraction
/// of the initial interval width) and k_i = ki_scale * q0.
#[derive(Clone, Copy, Debug)]
pub struct PidConfig {
    pub eta_scale: f64,
    pub ki_scale: f64,
    pub c: f64,
    pub identity_saturation: bool,
    pub feedback: PidFeedback,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            eta_scale: 0.05,
            ki_scale: 1.0,
            c: 0.1,
            identity_saturation: false,
            feedback: PidFeedback::PerState,
        }
    }
}

/// Interval method run by the online loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Enbpi,
    Cppid,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Enbpi => "enbpi",
            Method::Cppid => "cppid",
        }
    }
}

/// Configuration of one online forecasting run.
#[derive(Clone)]
pub struct OnlineConfig {
    pub train_len: usize,
    pub horizon: usize,
    pub alpha: f64,
    /// Sliding calibration window capacity l_r.
    pub window: usize,
    /// Leading emissions excluded from achieved-coverage aggregation.
    pub burn_in: usize,
    pub ensemble_size: usize,
    pub lambda: f64,
    pub smoother: Smoother,
    pub library: LibrarySpec,
    /// Refit the ensemble on all data seen so far every this many steps;
    /// 0 disables refitting.
    pub refit_every: usize,
    pub pid: PidConfig,
    pub seed: u64,
    pub guard: f64,
    /// When set, training derivatives come from this vector field instead
    /// of finite differences (noiseless benchmarking).
    pub deriv_oracle: Option<Rhs>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            train_len: 150,
            horizon: 2,
            alpha: 0.1,
            window: 100,
            burn_in: 100,
            ensemble_size: 50,
            lambda: 0.05,
            smoother: Smoother::SavGol { window: 9, polyorder: 3 },
            library: LibrarySpec::quadratic(),
            refit_every: 50,
            pid: PidConfig::default(),
            seed: 0,
            guard: DEFAULT_DIVERGENCE_GUARD,
            deriv_oracle: None,
        }
    }
}

/// One verified forecast: the horizon-endpoint interval plus whole-block
/// coverage per state. A state counts covered only if the member-mean
/// trajectory tracks the observations within q over the entire horizon.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Stream index the forecast was launched from.
    pub origin: usize,
    /// Time of the horizon endpoint.
    pub time: f64,
    pub truth: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub q: Vec<f64>,
    pub covered: Vec<bool>,
    pub joint_covered: bool,
    pub width: Vec<f64>,
    pub n_diverged: usize,
}

/// Full record of an online run.
#[derive(Clone, Debug)]
pub struct ForecastLog {
    pub steps: Vec<StepRecord>,
    pub alpha: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub state_labels: Vec<String>,
    /// Warm-up origins skipped for lack of an out-of-sample member.
    pub n_skipped_scores: usize,
}

impl ForecastLog {
    fn post_burn_in(&self) -> &[StepRecord] {
        let skip = self.burn_in.min(self.steps.len());
        &self.steps[skip..]
    }

    /// Per-state achieved coverage over the post-burn-in emissions.
    pub fn coverage(&self) -> Vec<f64> {
        let steps = self.post_burn_in();
        let m = self.state_labels.len();
        let mut cov = vec![0.0; m];
        for rec in steps {
            for k in 0..m {
                if rec.covered[k] {
                    cov[k] += 1.0;
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= steps.len().max(1) as f64);
        cov
    }

    /// Fraction of post-burn-in emissions with every state covered.
    pub fn joint_coverage(&self) -> f64 {
        let steps = self.post_burn_in();
        steps.iter().filter(|r| r.joint_covered).count() as f64 / steps.len().max(1) as f64
    }

    /// Mean post-burn-in miscoverage, pooled over states: the error signal
    /// the controllers drive to alpha.
    pub fn mean_err(&self) -> f64 {
        let cov = self.coverage();
        1.0 - cov.iter().sum::<f64>() / cov.len() as f64
    }

    /// Per-state mean interval width over the post-burn-in emissions.
    pub fn mean_width(&self) -> Vec<f64> {
        let steps = self.post_burn_in();
        let m = self.state_labels.len();
        let mut w = vec![0.0; m];
        for rec in steps {
            for k in 0..m {
                w[k] += rec.width[k];
            }
        }
        w.iter_mut().for_each(|v| *v /= steps.len().max(1) as f64);
        w
    }
}

/// One point of the rolling coverage/width series.
#[derive(Clone, Debug)]
pub struct RollingPoint {
    pub origin: usize,
    pub coverage: Vec<f64>,
    pub width: Vec<f64>,
}

/// Trailing-window coverage and mean width per state; the window is
/// truncated at the start of the log.
pub fn coverage_metrics(log: &ForecastLog, window: usize) -> Result<Vec<RollingPoint>> {
    if window < 1 {
        return Err(Error::Parameter("rolling window must be >= 1".into()));
    }
    let m = log.state_labels.len();
    let mut out = Vec::with_capacity(log.steps.len());
    for i in 0..log.steps.len() {
        let lo = (i + 1).saturating_sub(window);
        let span = &log.steps[lo..=i];
        let mut cov = vec![0.0; m];
        let mut wid = vec![0.0; m];
        for rec in span {
            for k in 0..m {
                if rec.covered[k] {
                    cov[k] += 1.0;
                }
                wid[k] += rec.width[k];
            }
        }
        for k in 0..m {
            cov[k] /= span.len() as f64;
            wid[k] /= span.len() as f64;
        }
        out.push(RollingPoint { origin: log.steps[i].origin, coverage: cov, width: wid });
    }
    Ok(out)
}

/// Out-of-sample non-conformity scores over a range of forecast origins.
///
/// For each origin t the score (per state) is the maximum absolute residual
/// over the horizon, computed per member and averaged over the members
/// whose training rows exclude t; origins with no qualifying member are
/// skipped and counted.
pub struct ScoredOrigins {
    pub per_origin: Vec<(usize, Vec<f64>)>,
    pub skipped: usize,
}

pub fn enbpi_scores(
    ens: &Ensemble,
    stream: &TimeSeries,
    origins: std::ops::RangeInclusive<usize>,
    horizon: usize,
    smoother: Smoother,
    spec: &LibrarySpec,
    guard: f64,
) -> Result<ScoredOrigins> {
    let tail = TailSmoother::new(smoother)?;
    let masks = ens.train_masks();
    let m = stream.dim();
    let mut per_origin = Vec::new();
    let mut skipped = 0;
    for t in origins {
        if t + horizon >= stream.n_samples() {
            return Err(Error::Parameter(format!(
                "origin {t} needs {horizon} future samples"
            )));
        }
        let qualifying: Vec<usize> = (0..ens.size())
            .filter(|&b| t >= masks[b].len() || !masks[b][t])
            .collect();
        if qualifying.is_empty() {
            skipped += 1;
            continue;
        }
        let x0 = tail.state_at(stream, t)?;
        let mut acc = vec![0.0; m];
        let mut used = 0;
        for &b in &qualifying {
            let single = Ensemble {
                members: vec![ens.members[b].clone()],
                train_rows: vec![Vec::new()],
                held_out: vec![Vec::new()],
                kind: ens.kind,
                n_rows: ens.n_rows,
            };
            match forecast(&single, &x0, stream.dt, horizon, spec, guard) {
                Ok(fr) => {
                    for k in 0..m {
                        let mut worst = 0.0f64;
                        for h in 0..horizon {
                            let resid = (stream.states[(t + 1 + h, k)] - fr.mean[(h, k)]).abs();
                            worst = worst.max(resid);
                        }
                        acc[k] += worst;
                    }
                    used += 1;
                }
                Err(_) => {} // diverged member: contributes nothing
            }
        }
        if used == 0 {
            skipped += 1;
            continue;
        }
        for a in acc.iter_mut() {
            *a /= used as f64;
        }
        per_origin.push((t, acc));
    }
    Ok(ScoredOrigins { per_origin, skipped })
}

struct Pending {
    origin: usize,
    forecast: ForecastResult,
    q: Vec<f64>,
}

/// Train on the stream prefix, then walk the remainder: forecast, emit an
/// interval, and on verification either recalibrate the score window
/// (EnbPI) or update the feedback controllers (CP-PID).
pub fn run_online(method: Method, stream: &TimeSeries, cfg: &OnlineConfig) -> Result<ForecastLog> {
    let n = stream.n_samples();
    let m = stream.dim();
    let smoother_start = cfg.smoother.start_index();
    if cfg.train_len < smoother_start + cfg.horizon + 2 {
        return Err(Error::InsufficientData {
            needed: smoother_start + cfg.horizon + 2,
            got: cfg.train_len,
        });
    }
    if n < cfg.train_len + cfg.horizon + 1 {
        return Err(Error::InsufficientData { needed: cfg.train_len + cfg.horizon + 1, got: n });
    }

    let fit_ensemble = |upto: usize, seed: u64| -> Result<Ensemble> {
        let prefix = TimeSeries::new(
            stream.t0,
            stream.dt,
            stream.states.rows(0, upto).into_owned(),
            stream.labels.clone(),
        )?;
        let smoothed = cfg.smoother.apply_full(&prefix)?;
        let xdot: DerivMatrix = match &cfg.deriv_oracle {
            Some(rhs) => exact_derivatives(&prefix, rhs),
            None => finite_diff(&smoothed)?,
        };
        let theta = build_library(&smoothed.states, &cfg.library)?;
        bootstrap_ensemble(&theta, &xdot, cfg.ensemble_size, cfg.lambda, seed)
    };

    let mut ens = fit_ensemble(cfg.train_len, linalg::derive_seed(cfg.seed, 0xB007))?;

    // Warm-up: out-of-sample scores across the training range.
    let warm_end = cfg.train_len - 1 - cfg.horizon;
    let warm = enbpi_scores(
        &ens,
        stream,
        smoother_start..=warm_end,
        cfg.horizon,
        cfg.smoother,
        &cfg.library,
        cfg.guard,
    )?;
    if warm.per_origin.is_empty() {
        return Err(Error::Calibration("no usable warm-up scores".into()));
    }

    let mut window = ScoreWindow::new(cfg.window, m)?;
    for (_, s) in &warm.per_origin {
        window.push(s);
    }

    // Controller gains from the warm-up score scale.
    let mut controllers: Vec<PidState> = (0..m)
        .map(|k| {
            let scores = window.state_scores(k);
            let q0 = match empirical_quantile(&scores, cfg.alpha) {
                Ok(q) if q.is_finite() => q,
                _ => scores.iter().cloned().fold(0.0, f64::max),
            };
            let q0 = q0.max(1e-12);
            let sat = if cfg.pid.identity_saturation {
                Saturation::Identity
            } else {
                Saturation::Tan { c: cfg.pid.c }
            };
            PidState::new(cfg.pid.eta_scale * 2.0 * q0, cfg.pid.ki_scale * q0, sat)
        })
        .collect();

    let tail = TailSmoother::new(cfg.smoother)?;
    let features = monomial_exponents(m, &cfg.library);
    let mut pendings: VecDeque<Pending> = VecDeque::new();
    let mut records: Vec<StepRecord> = Vec::new();

    let verify = |pending: Pending,
                      window: &mut ScoreWindow,
                      controllers: &mut Vec<PidState>,
                      records: &mut Vec<StepRecord>|
     -> Result<()> {
        let t = pending.origin;
        // Whole-block residual of the mean trajectory, per state.
        let mut block_resid = vec![0.0f64; m];
        for h in 0..cfg.horizon {
            for k in 0..m {
                let r = (stream.states[(t + 1 + h, k)] - pending.forecast.mean[(h, k)]).abs();
                block_resid[k] = block_resid[k].max(r);
            }
        }
        let covered: Vec<bool> =
            (0..m).map(|k| block_resid[k] <= pending.q[k] + COVERAGE_SLACK).collect();
        let joint = covered.iter().all(|&c| c);

        match method {
            Method::Enbpi => {
                // Member-averaged out-of-sample score (post-training time:
                // every member qualifies).
                let mut acc = vec![0.0; m];
                let mut used = 0;
                for traj in pending.forecast.members.iter().flatten() {
                    for k in 0..m {
                        let mut worst = 0.0f64;
                        for h in 0..cfg.horizon {
                            let r = (stream.states[(t + 1 + h, k)] - traj[(h, k)]).abs();
                            worst = worst.max(r);
                        }
                        acc[k] += worst;
                    }
                    used += 1;
                }
                if used > 0 {
                    for a in acc.iter_mut() {
                        *a /= used as f64;
                    }
                    window.push(&acc);
                }
            }
            Method::Cppid => match cfg.pid.feedback {
                PidFeedback::PerState => {
                    for k in 0..m {
                        controllers[k].update(covered[k], cfg.alpha);
                    }
                }
                PidFeedback::Joint => {
                    controllers[0].update(joint, cfg.alpha);
                }
            },
        }

        let endpoint = cfg.horizon - 1;
        let center: Vec<f64> = (0..m).map(|k| pending.forecast.mean[(endpoint, k)]).collect();
        let truth: Vec<f64> = (0..m).map(|k| stream.states[(t + cfg.horizon, k)]).collect();
        let interval = PredictionInterval::new(center, pending.q.clone(), cfg.alpha);
        records.push(StepRecord {
            origin: t,
            time: stream.time(t + cfg.horizon),
            truth,
            center: interval.center,
            lower: interval.lower,
            upper: interval.upper,
            q: pending.q,
            covered,
            joint_covered: joint,
            width: interval.q.iter().map(|q| 2.0 * q).collect(),
            n_diverged: pending.forecast.n_diverged,
        });
        Ok(())
    };

    let last_origin = n - 1 - cfg.horizon;
    for t in cfg.train_len..=last_origin {
        // Verify the oldest pending forecast once its block is observed.
        while pendings.front().is_some_and(|p| p.origin + cfg.horizon <= t) {
            let p = pendings.pop_front().unwrap();
            verify(p, &mut window, &mut controllers, &mut records)?;
        }

        if cfg.refit_every > 0 && t > cfg.train_len && (t - cfg.train_len) % cfg.refit_every == 0 {
            ens = fit_ensemble(t, linalg::derive_seed(cfg.seed, t as u64))?;
        }

        let x0 = tail.state_at(stream, t)?;
        let fr = {
            let mut traj_members = Vec::with_capacity(ens.size());
            let mut n_diverged = 0;
            for member in &ens.members {
                let mut traj = DMatrix::zeros(cfg.horizon, m);
                let mut x = x0.clone();
                let mut ok = true;
                for h in 0..cfg.horizon {
                    x = match rk4_model_step(member, &x, stream.dt, &features) {
                        Some(next)
                            if next.iter().all(|v| v.is_finite() && v.abs() <= cfg.guard) =>
                        {
                            next
                        }
                        _ => {
                            ok = false;
                            break;
                        }
                    };
                    for k in 0..m {
                        traj[(h, k)] = x[k];
                    }
                }
                if ok {
                    traj_members.push(Some(traj));
                } else {
                    traj_members.push(None);
                    n_diverged += 1;
                }
            }
            let survivors = ens.size() - n_diverged;
            if survivors == 0 {
                return Err(Error::Calibration(format!(
                    "every ensemble member diverged at origin {t}"
                )));
            }
            let mut mean = DMatrix::zeros(cfg.horizon, m);
            for traj in traj_members.iter().flatten() {
                mean += traj;
            }
            mean /= survivors as f64;
            ForecastResult { members: traj_members, mean, n_diverged }
        };

        let q: Vec<f64> = match method {
            Method::Enbpi => window.quantile(cfg.alpha)?,
            Method::Cppid => match cfg.pid.feedback {
                PidFeedback::PerState => controllers.iter().map(|c| c.half_width()).collect(),
                PidFeedback::Joint => vec![controllers[0].half_width(); m],
            },
        };
        pendings.push_back(Pending { origin: t, forecast: fr, q });
    }
    while let Some(p) = pendings.pop_front() {
        verify(p, &mut window, &mut controllers, &mut records)?;
    }

    Ok(ForecastLog {
        steps: records,
        alpha: cfg.alpha,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        state_labels: stream.labels.clone(),
        n_skipped_scores: warm.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sindy::{EnsembleKind, SparseModel};
    use crate::systems::{make_system, simulate_ode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sort_oracle(scores: &[f64], alpha: f64) -> f64 {
        // Independent route: full sort, then direct indexing.
        let mut v = scores.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = quantile_index(v.len(), alpha);
        if k > v.len() {
            f64::INFINITY
        } else {
            v[k - 1]
        }
    }

    #[test]
    fn quantile_forced_examples() {
        let nine: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        assert_eq!(empirical_quantile(&nine, 0.1).unwrap(), 9.0);
        assert_eq!(empirical_quantile(&[5.0], 0.5).unwrap(), 5.0);
        let four: Vec<f64> = (1..=4).map(|v| v as f64).collect();
        assert_eq!(empirical_quantile(&four, 0.1).unwrap(), f64::INFINITY);
        assert!(empirical_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn quantile_monotone_in_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..10.0)).collect();
        let q90 = empirical_quantile(&scores, 0.1).unwrap();
        let q50 = empirical_quantile(&scores, 0.5).unwrap();
        assert!(q90 >= q50);
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_oracle(
            scores in proptest::collection::vec(0.0f64..100.0, 1..60),
            alpha in 0.01f64..0.5,
        ) {
            let fast = empirical_quantile(&scores, alpha).unwrap();
            let slow = sort_oracle(&scores, alpha);
            prop_assert_eq!(fast, slow);
        }
    }

    #[test]
    fn split_conformal_zero_residuals_collapse() {
        let train: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0)).collect();
        let cal: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0)).collect();
        let sc = split_conformal(&train, &cal, 0.2, |_| Box::new(|_| 2.0)).unwrap();
        let (lo, c, hi) = sc.interval(3.0);
        assert_eq!((lo, c, hi), (2.0, 2.0, 2.0));
    }

    #[test]
    fn split_conformal_plus_minus_one() {
        let train = vec![(0.0, 0.0)];
        let cal: Vec<(f64, f64)> = (0..10)
            .map(|i| (i as f64, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let sc = split_conformal(&train, &cal, 0.1, |_| Box::new(|_| 0.0)).unwrap();
        let (lo, _, hi) = sc.interval(0.0);
        assert_eq!((lo, hi), (-1.0, 1.0));
    }

    #[test]
    fn split_conformal_coverage_simulation() {
        // i.i.d. gaussian regression with a constant-mean fit; coverage
        // over fresh test points should reach 1 - alpha up to Monte-Carlo
        // error.
        let alpha = 0.2;
        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut covered = 0;
        for _ in 0..trials {
            let draw = |rng: &mut ChaCha8Rng| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y = 1.0 + rand_distr::Distribution::sample(
                    &rand_distr::Normal::new(0.0, 0.5).unwrap(),
                    rng,
                );
                (x, y)
            };
            let train: Vec<(f64, f64)> = (0..10).map(|_| draw(&mut rng)).collect();
            let cal: Vec<(f64, f64)> = (0..19).map(|_| draw(&mut rng)).collect();
            let sc = split_conformal(&train, &cal, alpha, |tr| {
                let mean = tr.iter().map(|p| p.1).sum::<f64>() / tr.len() as f64;
                Box::new(move |_| mean)
            })
            .unwrap();
            let (x, y) = draw(&mut rng);
            let (lo, _, hi) = sc.interval(x);
            if y >= lo && y <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        // se ~ sqrt(0.8*0.2/1e4) = 0.004; allow 2 MC standard errors below
        // the target (the rule is conservative from above).
        assert!(rate >= 1.0 - alpha - 0.008, "coverage {rate}");
    }

    /// Ensemble whose members all equal the true Lotka-Volterra model.
    fn exact_lv_ensemble(copies: usize) -> (Ensemble, crate::systems::SystemDef) {
        let sys = make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap();
        let model = sys.true_coeffs.clone().unwrap();
        let ens = Ensemble {
            members: vec![model; copies],
            train_rows: vec![Vec::new(); copies],
            held_out: vec![Vec::new(); copies],
            kind: EnsembleKind::Bootstrap,
            n_rows: 0,
        };
        (ens, sys)
    }

    #[test]
    fn forecast_identical_members_mean_equals_member() {
        let (ens, _) = exact_lv_ensemble(5);
        let fr = forecast(&ens, &[3.0, 4.0], 0.1, 3, &LibrarySpec::quadratic(), 1e6).unwrap();
        let first = fr.members[0].as_ref().unwrap();
        for h in 0..3 {
            for k in 0..2 {
                assert_relative_eq!(fr.mean[(h, k)], first[(h, k)], epsilon = 1e-12);
            }
        }
        assert_eq!(fr.n_diverged, 0);
    }

    #[test]
    fn forecast_equilibrium_constant() {
        let (ens, _) = exact_lv_ensemble(3);
        let fr = forecast(&ens, &[10.0, 10.0], 0.1, 4, &LibrarySpec::quadratic(), 1e6).unwrap();
        for h in 0..4 {
            assert_relative_eq!(fr.mean[(h, 0)], 10.0, epsilon = 1e-10);
            assert_relative_eq!(fr.mean[(h, 1)], 10.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn forecast_matches_true_integrator() {
        let (ens, sys) = exact_lv_ensemble(2);
        let fr = forecast(&ens, &[1.0, 1.0], 0.1, 2, &LibrarySpec::quadratic(), 1e6).unwrap();
        let truth = simulate_ode(&sys, &[1.0, 1.0], 0.1, 2).unwrap();
        for h in 0..2 {
            for k in 0..2 {
                assert_relative_eq!(fr.mean[(h, k)], truth.states[(h + 1, k)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn forecast_from_series_smooths_tail() {
        let (ens, sys) = exact_lv_ensemble(1);
        let ts = simulate_ode(&sys, &[5.0, 5.0], 0.1, 30).unwrap();
        let fr = forecast_from_series(
            &ens,
            &ts,
            2,
            Smoother::SavGol { window: 9, polyorder: 3 },
            &LibrarySpec::quadratic(),
        )
        .unwrap();
        // The smoothed state of an exact cubic-fit window tracks the true
        // trajectory closely, so the forecast should too.
        let truth = simulate_ode(&sys, &ts.row(30), 0.1, 2).unwrap();
        for k in 0..2 {
            assert_relative_eq!(fr.mean[(1, k)], truth.states[(2, k)], epsilon = 1e-2);
        }
    }

    /// One-state models with a constant vector field (bias term only).
    fn bias_model(c: f64) -> SparseModel {
        let names = vec!["1".into(), "x1".into(), "x1^2".into()];
        let coeffs = DMatrix::from_column_slice(3, 1, &[c, 0.0, 0.0]);
        SparseModel::from_coeffs(coeffs, 0.0, names)
    }

    fn bias_ensemble(cs: &[f64], train_rows: Vec<Vec<usize>>, n_rows: usize) -> Ensemble {
        Ensemble {
            members: cs.iter().map(|&c| bias_model(c)).collect(),
            held_out: vec![Vec::new(); cs.len()],
            train_rows,
            kind: EnsembleKind::Bootstrap,
            n_rows,
        }
    }

    fn two_row_stream() -> TimeSeries {
        TimeSeries::new(
            0.0,
            1.0,
            DMatrix::from_column_slice(2, 1, &[0.0, 0.3]),
            vec!["x1".into()],
        )
        .unwrap()
    }

    #[test]
    fn enbpi_scores_perfect_members_zero() {
        let (ens, sys) = exact_lv_ensemble(3);
        let mut ens = ens;
        ens.n_rows = 40;
        ens.train_rows = vec![Vec::new(); 3]; // trained on nothing: always out-of-sample
        let ts = simulate_ode(&sys, &[5.0, 5.0], 0.1, 40).unwrap();
        let scored = enbpi_scores(
            &ens,
            &ts,
            0..=37,
            2,
            Smoother::None,
            &LibrarySpec::quadratic(),
            1e6,
        )
        .unwrap();
        assert_eq!(scored.skipped, 0);
        for (_, s) in &scored.per_origin {
            for v in s {
                assert!(*v < 1e-7, "score {v}");
            }
        }
    }

    #[test]
    fn enbpi_scores_single_member_value() {
        // Model with zero field from x0=0: forecast stays 0, observation
        // 0.3, so the score is 0.3.
        let ens = bias_ensemble(&[0.0], vec![vec![1]], 2);
        let stream = two_row_stream();
        let scored = enbpi_scores(
            &ens,
            &stream,
            0..=0,
            1,
            Smoother::None,
            &LibrarySpec::quadratic(),
            1e6,
        )
        .unwrap();
        assert_eq!(scored.per_origin.len(), 1);
        assert_relative_eq!(scored.per_origin[0].1[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn enbpi_scores_mean_over_qualifying_members() {
        // Constant fields +0.1 and -0.1 over dt=1 land at 0.1 and -0.1;
        // residuals against 0.3 are 0.2 and 0.4, mean 0.3.
        let ens = bias_ensemble(&[0.1, -0.1], vec![vec![1], vec![1]], 2);
        let stream = two_row_stream();
        let scored = enbpi_scores(
            &ens,
            &stream,
            0..=0,
            1,
            Smoother::None,
            &LibrarySpec::quadratic(),
            1e6,
        )
        .unwrap();
        assert_relative_eq!(scored.per_origin[0].1[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn enbpi_scores_out_of_sample_discipline() {
        // Member 0 trained on row 0 must not contribute at origin 0; only
        // member 1's residual (0.4) appears.
        let ens = bias_ensemble(&[0.1, -0.1], vec![vec![0], vec![1]], 2);
        let stream = two_row_stream();
        let scored = enbpi_scores(
            &ens,
            &stream,
            0..=0,
            1,
            Smoother::None,
            &LibrarySpec::quadratic(),
            1e6,
        )
        .unwrap();
        assert_relative_eq!(scored.per_origin[0].1[0], 0.4, epsilon = 1e-12);

        // No qualifying member at all: origin skipped with a count.
        let ens = bias_ensemble(&[0.1], vec![vec![0]], 2);
        let scored = enbpi_scores(
            &ens,
            &stream,
            0..=0,
            1,
            Smoother::None,
            &LibrarySpec::quadratic(),
            1e6,
        )
        .unwrap();
        assert!(scored.per_origin.is_empty());
        assert_eq!(scored.skipped, 1);
    }

    #[test]
    fn score_window_fifo() {
        let mut w = ScoreWindow::new(3, 1).unwrap();
        for v in 1..=5 {
            w.push(&[v as f64]);
        }
        assert_eq!(w.state_scores(0), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn score_window_outlier_evicted_after_capacity_pushes() {
        let mut w = ScoreWindow::new(5, 1).unwrap();
        for _ in 0..5 {
            w.push(&[0.1]);
        }
        w.push(&[100.0]); // outlier enters
        let elevated = w.quantile(0.1).unwrap()[0];
        assert!(elevated >= 100.0 || elevated.is_infinite());
        for _ in 0..5 {
            w.push(&[0.1]); // five more pushes fully evict it
        }
        let settled = w.quantile(0.5).unwrap()[0];
        assert_relative_eq!(settled, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn enbpi_step_capacity_one_tracks_latest() {
        let mut w = ScoreWindow::new(1, 1).unwrap();
        let q1 = enbpi_step(&mut w, &[0.5], 0.4).unwrap();
        // One score, k = ceil(2*0.6) = 2 > 1: sentinel.
        assert!(q1[0].is_infinite());
        let q2 = enbpi_step(&mut w, &[0.2], 0.6).unwrap();
        // k = ceil(2*0.4) = 1: the single latest residual.
        assert_eq!(q2[0], 0.2);
    }

    #[test]
    fn enbpi_interval_symmetry_and_example() {
        let mut w = ScoreWindow::new(10, 1).unwrap();
        for v in 1..=9 {
            w.push(&[v as f64 / 10.0]);
        }
        let int = enbpi_interval(vec![2.0], &w, 0.1).unwrap();
        assert_relative_eq!(int.q[0], 0.9, epsilon = 1e-12);
        assert_relative_eq!(int.upper[0] - int.center[0], int.center[0] - int.lower[0], epsilon = 1e-12);

        let mut wz = ScoreWindow::new(4, 1).unwrap();
        wz.push(&[0.0]);
        wz.push(&[0.0]);
        wz.push(&[0.0]);
        let zint = enbpi_interval(vec![1.5], &wz, 0.5).unwrap();
        assert_eq!(zint.lower[0], 1.5);
        assert_eq!(zint.upper[0], 1.5);
    }

    #[test]
    fn pid_update_examples() {
        let mut pid = PidState::new(0.1, 1.0, Saturation::Identity);
        pid.update(true, 0.1);
        assert_relative_eq!(pid.err_sum, -0.1, epsilon = 1e-12);
        // P term = eta*g = -0.01; q = P + I = -0.01 + (-0.1)
        assert_relative_eq!(pid.q, -0.11, epsilon = 1e-12);
        assert_eq!(pid.half_width(), 0.0);

        let mut pid = PidState::new(0.1, 1.0, Saturation::Identity);
        pid.update(false, 0.1);
        assert_relative_eq!(pid.err_sum, 0.9, epsilon = 1e-12);
        assert_relative_eq!(pid.q, 0.09 + 0.9, epsilon = 1e-12);
    }

    #[test]
    fn pid_err_sum_closes_over_balanced_cycles() {
        // alpha = 0.2 and a 5-step cycle with exactly one miss: sum g = 0.
        let mut pid = PidState::new(0.05, 1.0, Saturation::Identity);
        for cycle in 0..10 {
            pid.update(false, 0.2);
            for _ in 0..4 {
                pid.update(true, 0.2);
            }
            assert!(pid.err_sum.abs() < 1e-12, "cycle {cycle}: {}", pid.err_sum);
        }
    }

    #[test]
    fn pid_long_run_miscoverage_approaches_alpha() {
        // Identity saturation, bounded i.i.d. scores: the integral term
        // forces the long-run error rate to alpha.
        let alpha = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut pid = PidState::new(0.05, 1.0, Saturation::Identity);
        let mut errs = 0.0;
        let t_max = 1000;
        for _ in 0..t_max {
            let score: f64 = rng.gen_range(0.0..1.0);
            let covered = score <= pid.half_width();
            if !covered {
                errs += 1.0;
            }
            pid.update(covered, alpha);
        }
        let mean_err = errs / t_max as f64;
        assert!((mean_err - alpha).abs() <= 0.03, "mean err {mean_err}");
    }

    #[test]
    fn pid_tan_saturation_clamps() {
        let mut pid = PidState::new(0.0, 1.0, Saturation::Tan { c: 0.1 });
        // Repeated misses early on push the argument into the clamp; q must
        // stay finite.
        for _ in 0..5 {
            pid.update(false, 0.1);
        }
        assert!(pid.q.is_finite());
        assert!(pid.q > 10.0, "clamped tangent should be large, got {}", pid.q);
    }

    fn lv_stream(n_steps: usize, seed: u64, noise: f64) -> TimeSeries {
        let sys = make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap();
        let ts = simulate_ode(&sys, &[5.0, 5.0], 0.1, n_steps).unwrap();
        if noise == 0.0 {
            ts
        } else {
            crate::systems::add_measurement_noise(
                &ts,
                &crate::systems::NoiseSpec::gaussian(noise, seed),
            )
            .unwrap()
        }
    }

    #[test]
    fn run_online_noiseless_exact_coverage_one_width_zero() {
        let sys = make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap();
        let stream = lv_stream(400, 0, 0.0);
        let cfg = OnlineConfig {
            train_len: 100,
            smoother: Smoother::None,
            deriv_oracle: Some(sys.rhs.clone()),
            refit_every: 0,
            burn_in: 20,
            window: 50,
            ensemble_size: 10,
            seed: 1,
            ..OnlineConfig::default()
        };
        let log = run_online(Method::Enbpi, &stream, &cfg).unwrap();
        for c in log.coverage() {
            assert_eq!(c, 1.0);
        }
        for w in log.mean_width() {
            assert!(w < 1e-7, "width {w}");
        }
    }

    #[test]
    fn run_online_same_seed_identical_logs() {
        let stream = lv_stream(400, 5, 0.2);
        let cfg = OnlineConfig {
            train_len: 120,
            burn_in: 30,
            window: 60,
            ensemble_size: 15,
            seed: 9,
            ..OnlineConfig::default()
        };
        for method in [Method::Enbpi, Method::Cppid] {
            let a = run_online(method, &stream, &cfg).unwrap();
            let b = run_online(method, &stream, &cfg).unwrap();
            assert_eq!(a.steps.len(), b.steps.len());
            for (ra, rb) in a.steps.iter().zip(&b.steps) {
                assert_eq!(ra.center, rb.center);
                assert_eq!(ra.lower, rb.lower);
                assert_eq!(ra.upper, rb.upper);
                assert_eq!(ra.covered, rb.covered);
            }
        }
    }

    #[test]
    fn coverage_metrics_examples() {
        let mk = |covered: bool| StepRecord {
            origin: 0,
            time: 0.0,
            truth: vec![0.0],
            center: vec![0.0],
            lower: vec![0.0],
            upper: vec![0.0],
            q: vec![0.5],
            covered: vec![covered],
            joint_covered: covered,
            width: vec![1.0],
            n_diverged: 0,
        };
        let log = ForecastLog {
            steps: vec![mk(true), mk(false), mk(true), mk(false)],
            alpha: 0.1,
            horizon: 1,
            burn_in: 0,
            state_labels: vec!["x1".into()],
            n_skipped_scores: 0,
        };
        let all = coverage_metrics(&log, 1).unwrap();
        let flags: Vec<f64> = all.iter().map(|p| p.coverage[0]).collect();
        assert_eq!(flags, vec![1.0, 0.0, 1.0, 0.0]);
        let two = coverage_metrics(&log, 2).unwrap();
        assert_eq!(two[1].coverage[0], 0.5);
        assert_eq!(two[3].coverage[0], 0.5);

        let all_covered = ForecastLog {
            steps: vec![mk(true); 6],
            ..log
        };
        for p in coverage_metrics(&all_covered, 3).unwrap() {
            assert_eq!(p.coverage[0], 1.0);
        }
    }
}
