//! Configuration-driven experiment harness. Each runner simulates data,
//! drives the library end to end, writes CSV artifacts with the full
//! resolved config embedded in their headers, and evaluates the
//! config-declared acceptance checks that decide the CLI exit code.

pub mod config;

pub use config::{fmt_f64, parse_config, ScenarioConfig};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::conformal::{
    coverage_metrics, run_online, ForecastLog, Method, OnlineConfig, PidConfig, PidFeedback,
    Smoother,
};
use crate::error::{Error, Result};
use crate::featurecp::{coefficient_intervals, esindy_intervals, featurecp_scores};
use crate::importance::{
    inclusion_importance, loco_importance, loco_path_importance, ImportanceConfig,
    ImportanceMethod, LambdaGrid,
};
use crate::linalg::derive_seed;
use crate::preprocess::{
    build_library, exact_derivatives, finite_diff, savgol_smooth, DerivMatrix, LibraryMatrix,
    LibrarySpec,
};
use crate::sindy::{bootstrap_ensemble, jackknife_ensemble, Aggregation};
use crate::systems::{
    add_measurement_noise, make_system, simulate_ode, simulate_sde, NoiseSpec, SystemDef,
    TimeSeries, DEFAULT_DIVERGENCE_GUARD,
};

/// One configured acceptance check evaluated by a runner.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }
}

/// Files written plus the check verdicts for one runner invocation.
#[derive(Clone, Debug, Default)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
    pub checks: Vec<CheckResult>,
}

impl RunArtifacts {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Extract the `#cfg` header block of an artifact and parse it back into
/// the configuration that produced the file.
pub fn embedded_config(file_text: &str) -> Result<ScenarioConfig> {
    let header: String = file_text
        .lines()
        .take_while(|l| l.starts_with("#cfg"))
        .map(|l| format!("{l}\n"))
        .collect();
    if header.is_empty() {
        return Err(Error::Config("no #cfg header found in file".into()));
    }
    parse_config(&header)
}

fn method_from_name(name: &str) -> Result<Method> {
    match name {
        "enbpi" => Ok(Method::Enbpi),
        "cppid" => Ok(Method::Cppid),
        other => Err(Error::Config(format!("unknown method '{other}'"))),
    }
}

fn smoother_from(cfg: &ScenarioConfig) -> Smoother {
    if cfg.savgol_window == 0 {
        Smoother::None
    } else {
        Smoother::SavGol { window: cfg.savgol_window, polyorder: cfg.savgol_polyorder }
    }
}

fn library_from(cfg: &ScenarioConfig) -> Result<LibrarySpec> {
    LibrarySpec::new(cfg.library_degree, cfg.library_bias)
}

fn scenario_system(cfg: &ScenarioConfig) -> Result<SystemDef> {
    make_system(&cfg.system, &cfg.params)
}

/// Mean over states of the per-state sample standard deviation: the pooled
/// signal scale that relative noise levels refer to.
fn pooled_std(ts: &TimeSeries) -> f64 {
    let n = ts.n_samples() as f64;
    let mut total = 0.0;
    for col in ts.states.column_iter() {
        let mean: f64 = col.iter().sum::<f64>() / n;
        let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        total += var.sqrt();
    }
    total / ts.dim() as f64
}

/// Simulate `n_rows` samples and corrupt them: process noise (relative
/// level > 0 switches to the stochastic integrator) and measurement noise
/// of the given kind. Returns (underlying trajectory, observed stream).
fn simulate_stream(
    cfg: &ScenarioConfig,
    sys: &SystemDef,
    run_seed: u64,
    n_rows: usize,
    noise_kind: &str,
    measurement_rel: f64,
    process_rel: f64,
) -> Result<(TimeSeries, TimeSeries)> {
    if n_rows < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n_rows });
    }
    let steps = n_rows - 1;
    let reference = simulate_ode(sys, &cfg.x0, cfg.dt, steps)?;
    let sigma = pooled_std(&reference);
    let base = if process_rel > 0.0 {
        simulate_sde(sys, &cfg.x0, cfg.dt, steps, process_rel * sigma, derive_seed(run_seed, 1))?
    } else {
        reference
    };
    let noisy = match noise_kind {
        "none" => base.clone(),
        "gaussian" => add_measurement_noise(
            &base,
            &NoiseSpec::gaussian(measurement_rel * sigma, derive_seed(run_seed, 2)),
        )?,
        "gamma" => add_measurement_noise(
            &base,
            &NoiseSpec::gamma(
                measurement_rel * sigma,
                cfg.gamma_shape,
                cfg.gamma_centered,
                derive_seed(run_seed, 2),
            ),
        )?,
        other => return Err(Error::Config(format!("unknown noise kind '{other}'"))),
    };
    Ok((base, noisy))
}

fn online_config(cfg: &ScenarioConfig, sys: &SystemDef, alpha: f64, run_seed: u64) -> Result<OnlineConfig> {
    Ok(OnlineConfig {
        train_len: cfg.train_len,
        horizon: cfg.horizon,
        alpha,
        window: cfg.window,
        burn_in: cfg.burn_in,
        ensemble_size: cfg.ensemble_size,
        lambda: cfg.lambda,
        smoother: smoother_from(cfg),
        library: library_from(cfg)?,
        refit_every: cfg.refit_every,
        pid: PidConfig {
            eta_scale: cfg.pid_eta_scale,
            ki_scale: cfg.pid_ki_scale,
            c: cfg.pid_c,
            identity_saturation: cfg.pid_identity_saturation,
            feedback: if cfg.pid_feedback == "joint" {
                PidFeedback::Joint
            } else {
                PidFeedback::PerState
            },
        },
        seed: derive_seed(run_seed, 3),
        guard: DEFAULT_DIVERGENCE_GUARD,
        deriv_oracle: cfg.exact_derivatives.then(|| sys.rhs.clone()),
    })
}

/// Smooth, differentiate, and featurize one observed stream.
fn preprocess_stream(
    cfg: &ScenarioConfig,
    sys: &SystemDef,
    noisy: &TimeSeries,
) -> Result<(LibraryMatrix, DerivMatrix)> {
    let smoothed = if cfg.savgol_window == 0 {
        noisy.clone()
    } else {
        savgol_smooth(noisy, cfg.savgol_window, cfg.savgol_polyorder)?
    };
    let xdot = if cfg.exact_derivatives {
        exact_derivatives(&smoothed, &sys.rhs)
    } else {
        finite_diff(&smoothed)?
    };
    let theta = build_library(&smoothed.states, &library_from(cfg)?)?;
    Ok((theta, xdot))
}

fn write_artifact(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    name: &str,
    header: &str,
    rows: &[String],
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut text = cfg.echo_header();
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let path = out_dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn fmt_flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

// ---------------------------------------------------------------------------
// simulate

/// Write the simulated clean and observed stream as a long-format CSV.
pub fn run_simulate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let sys = scenario_system(cfg).map_err(|e| e.in_stage("simulate"))?;
    let run_seed = derive_seed(cfg.seed, 0);
    let (clean, noisy) = simulate_stream(
        cfg,
        &sys,
        run_seed,
        cfg.n_total,
        &cfg.noise_kind,
        cfg.noise_level_rel,
        cfg.process_level_rel,
    )
    .map_err(|e| e.in_stage("simulate"))?;
    let mut rows = Vec::new();
    for i in 0..clean.n_samples() {
        for k in 0..clean.dim() {
            rows.push(format!(
                "{},{},{},{}",
                fmt_f64(clean.time(i)),
                clean.labels[k],
                fmt_f64(clean.states[(i, k)]),
                fmt_f64(noisy.states[(i, k)]),
            ));
        }
    }
    let file = write_artifact(cfg, out_dir, "stream.csv", "t,state,clean,noisy", &rows)?;
    Ok(RunArtifacts { files: vec![file], checks: Vec::new() })
}

// ---------------------------------------------------------------------------
// forecast

/// Per-method coverage aggregates over all realizations.
#[derive(Clone, Debug)]
pub struct MethodAggregate {
    pub method: Method,
    pub mean_coverage: f64,
    pub mean_width: f64,
    pub mean_err: f64,
}

pub struct ForecastScenarioResult {
    pub artifacts: RunArtifacts,
    /// Per realization, the (method, log) pairs in config order.
    pub logs: Vec<Vec<(Method, ForecastLog)>>,
    pub aggregates: Vec<MethodAggregate>,
}

/// Simulate one stream per realization and run every configured method on
/// it; realization 0 is written as the per-step forecast logs.
pub fn run_forecast_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ForecastScenarioResult> {
    let sys = scenario_system(cfg).map_err(|e| e.in_stage("simulate"))?;
    let methods: Vec<Method> =
        cfg.methods.iter().map(|m| method_from_name(m)).collect::<Result<_>>()?;

    let logs: Vec<Vec<(Method, ForecastLog)>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| -> Result<Vec<(Method, ForecastLog)>> {
            let run_seed = derive_seed(cfg.seed, r as u64);
            let (_clean, noisy) = simulate_stream(
                cfg,
                &sys,
                run_seed,
                cfg.n_total,
                &cfg.noise_kind,
                cfg.noise_level_rel,
                cfg.process_level_rel,
            )
            .map_err(|e| e.in_stage("simulate"))?;
            let ocfg = online_config(cfg, &sys, cfg.alpha, run_seed)?;
            methods
                .iter()
                .map(|&m| Ok((m, run_online(m, &noisy, &ocfg).map_err(|e| e.in_stage("online"))?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    for (method, log) in &logs[0] {
        let rolling = coverage_metrics(log, cfg.rolling_window)?;
        let mut rows = Vec::with_capacity(log.steps.len() * log.state_labels.len());
        for (rec, roll) in log.steps.iter().zip(&rolling) {
            for k in 0..log.state_labels.len() {
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    fmt_f64(rec.time),
                    log.state_labels[k],
                    fmt_f64(rec.truth[k]),
                    fmt_f64(rec.center[k]),
                    fmt_f64(rec.lower[k]),
                    fmt_f64(rec.upper[k]),
                    fmt_flag(rec.covered[k]),
                    fmt_f64(rec.width[k]),
                    fmt_f64(roll.coverage[k]),
                    fmt_f64(roll.width[k]),
                ));
            }
        }
        files.push(write_artifact(
            cfg,
            out_dir,
            &format!("forecast_{}.csv", method.name()),
            "t,state,truth,center,lower,upper,covered,width,rolling_coverage,rolling_width",
            &rows,
        )?);
    }

    // Coverage summary over all realizations.
    let mut summary_rows = Vec::new();
    let mut aggregates = Vec::new();
    let mut checks = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let mut cov_sum = 0.0;
        let mut width_sum = 0.0;
        let mut err_sum = 0.0;
        for (r, per_method) in logs.iter().enumerate() {
            let log = &per_method[mi].1;
            let cov = log.coverage();
            let pooled_cov = cov.iter().sum::<f64>() / cov.len() as f64;
            let width = log.mean_width();
            let pooled_width = width.iter().sum::<f64>() / width.len() as f64;
            summary_rows.push(format!(
                "{},{},{},{},{},{}",
                method.name(),
                r,
                fmt_f64(pooled_cov),
                fmt_f64(log.joint_coverage()),
                fmt_f64(pooled_width),
                fmt_f64(log.mean_err()),
            ));
            cov_sum += pooled_cov;
            width_sum += pooled_width;
            err_sum += log.mean_err();
        }
        let n = cfg.realizations as f64;
        let agg = MethodAggregate {
            method,
            mean_coverage: cov_sum / n,
            mean_width: width_sum / n,
            mean_err: err_sum / n,
        };
        checks.push(CheckResult::new(
            format!("coverage_{}", method.name()),
            agg.mean_coverage >= cfg.check_coverage_low
                && agg.mean_coverage <= cfg.check_coverage_high,
            format!(
                "mean coverage {:.4} target band [{}, {}]",
                agg.mean_coverage, cfg.check_coverage_low, cfg.check_coverage_high
            ),
        ));
        aggregates.push(agg);
    }
    files.push(write_artifact(
        cfg,
        out_dir,
        "coverage_summary.csv",
        "method,realization,coverage,joint_coverage,mean_width,mean_err",
        &summary_rows,
    )?);

    Ok(ForecastScenarioResult { artifacts: RunArtifacts { files, checks }, logs, aggregates })
}

// ---------------------------------------------------------------------------
// coverage sweep

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub method: Method,
    pub noise_level_rel: f64,
    pub target: f64,
    pub achieved: f64,
    pub mean_width: f64,
}

pub struct CoverageSweepResult {
    pub artifacts: RunArtifacts,
    pub rows: Vec<SweepRow>,
}

/// One online run per (noise level, target, method, realization); achieved
/// coverage and width aggregated post-burn-in.
pub fn run_coverage_sweep(cfg: &ScenarioConfig, out_dir: &Path) -> Result<CoverageSweepResult> {
    if cfg.targets.len() < 2 {
        return Err(Error::Config("coverage sweep needs at least 2 targets".into()));
    }
    let sys = scenario_system(cfg).map_err(|e| e.in_stage("simulate"))?;
    let methods: Vec<Method> =
        cfg.methods.iter().map(|m| method_from_name(m)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (li, &level) in cfg.sweep_noise_levels_rel.iter().enumerate() {
        // Streams depend on (level, realization) only; share them across
        // targets and methods.
        let streams: Vec<(u64, TimeSeries)> = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| -> Result<(u64, TimeSeries)> {
                let run_seed =
                    derive_seed(cfg.seed, (1u64 << 56) | ((li as u64) << 32) | r as u64);
                let (_c, noisy) = simulate_stream(
                    cfg,
                    &sys,
                    run_seed,
                    cfg.n_total,
                    &cfg.noise_kind,
                    level,
                    cfg.process_level_rel,
                )
                .map_err(|e| e.in_stage("simulate"))?;
                Ok((run_seed, noisy))
            })
            .collect::<Result<_>>()?;

        for &target in &cfg.targets {
            let alpha = 1.0 - target;
            for &method in &methods {
                let per_real: Vec<(f64, f64)> = streams
                    .par_iter()
                    .map(|(run_seed, noisy)| -> Result<(f64, f64)> {
                        let ocfg = online_config(cfg, &sys, alpha, *run_seed)?;
                        let log = run_online(method, noisy, &ocfg)
                            .map_err(|e| e.in_stage("online"))?;
                        let cov = log.coverage();
                        let width = log.mean_width();
                        Ok((
                            cov.iter().sum::<f64>() / cov.len() as f64,
                            width.iter().sum::<f64>() / width.len() as f64,
                        ))
                    })
                    .collect::<Result<_>>()?;
                let n = per_real.len() as f64;
                rows.push(SweepRow {
                    method,
                    noise_level_rel: level,
                    target,
                    achieved: per_real.iter().map(|p| p.0).sum::<f64>() / n,
                    mean_width: per_real.iter().map(|p| p.1).sum::<f64>() / n,
                });
            }
        }
    }

    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.method.name(),
                fmt_f64(r.noise_level_rel),
                fmt_f64(r.target),
                fmt_f64(r.achieved),
                fmt_f64(r.mean_width),
                cfg.realizations,
            )
        })
        .collect();
    let file = write_artifact(
        cfg,
        out_dir,
        "coverage_sweep.csv",
        "method,noise_level_rel,target,achieved,mean_width,realizations",
        &csv_rows,
    )?;

    let mut checks = Vec::new();
    // Achieved coverage within tolerance of every target.
    let worst = rows
        .iter()
        .map(|r| ((r.achieved - r.target).abs(), r))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((gap, row)) = worst {
        checks.push(CheckResult::new(
            "sweep_tolerance",
            gap <= cfg.check_sweep_tol,
            format!(
                "worst |achieved - target| = {:.4} at (method {}, level {}, target {})",
                gap,
                row.method.name(),
                row.noise_level_rel,
                row.target
            ),
        ));
    }
    if cfg.check_width_monotone {
        let mut ok = true;
        let mut detail = String::from("widths strictly increase with target");
        for &method in &methods {
            for &level in &cfg.sweep_noise_levels_rel {
                let widths: Vec<f64> = cfg
                    .targets
                    .iter()
                    .map(|&t| {
                        rows.iter()
                            .find(|r| {
                                r.method == method
                                    && r.noise_level_rel == level
                                    && r.target == t
                            })
                            .map(|r| r.mean_width)
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                if widths.windows(2).any(|w| !(w[0] < w[1])) {
                    ok = false;
                    detail = format!(
                        "widths not strictly increasing for method {} at level {}: {:?}",
                        method.name(),
                        level,
                        widths
                    );
                }
            }
        }
        checks.push(CheckResult::new("width_monotone", ok, detail));
    }
    if cfg.check_noise_width_order && cfg.sweep_noise_levels_rel.len() >= 2 {
        let mut order: Vec<usize> = (0..cfg.sweep_noise_levels_rel.len()).collect();
        order.sort_by(|&a, &b| {
            cfg.sweep_noise_levels_rel[a].total_cmp(&cfg.sweep_noise_levels_rel[b])
        });
        let mut ok = true;
        let mut detail = String::from("noisier streams give wider intervals at every target");
        for &method in &methods {
            for &target in &cfg.targets {
                let widths: Vec<f64> = order
                    .iter()
                    .map(|&i| {
                        let level = cfg.sweep_noise_levels_rel[i];
                        rows.iter()
                            .find(|r| {
                                r.method == method
                                    && r.noise_level_rel == level
                                    && r.target == target
                            })
                            .map(|r| r.mean_width)
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                if widths.windows(2).any(|w| !(w[1] >= w[0])) {
                    ok = false;
                    detail = format!(
                        "width ordering violated for method {} at target {}: {:?}",
                        method.name(),
                        target,
                        widths
                    );
                }
            }
        }
        checks.push(CheckResult::new("noise_width_order", ok, detail));
    }

    Ok(CoverageSweepResult {
        artifacts: RunArtifacts { files: vec![file], checks },
        rows,
    })
}

// ---------------------------------------------------------------------------
// importance sweep

pub struct ImportanceSweepResult {
    pub artifacts: RunArtifacts,
    /// Per method: (n, mean normalized scores, mean raw scores).
    pub curves: Vec<(ImportanceMethod, Vec<(usize, DMatrix<f64>, DMatrix<f64>)>)>,
    pub n_star: Vec<(ImportanceMethod, Option<usize>)>,
}

/// Whether averaged scores rank every true feature above every inert one,
/// per state.
fn ranking_ok(avg: &DMatrix<f64>, truth_support: &DMatrix<bool>) -> bool {
    for k in 0..truth_support.ncols() {
        let mut min_true = f64::INFINITY;
        let mut max_inert = f64::NEG_INFINITY;
        for j in 0..truth_support.nrows() {
            if truth_support[(j, k)] {
                min_true = min_true.min(avg[(j, k)]);
            } else {
                max_inert = max_inert.max(avg[(j, k)]);
            }
        }
        if !(min_true > max_inert) {
            return false;
        }
    }
    true
}

/// Inclusion, LOCO, and LOCO-path curves over the configured data lengths,
/// averaged over noise realizations, with the stability threshold n* per
/// method.
pub fn run_importance_sweep(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ImportanceSweepResult> {
    let sys = scenario_system(cfg).map_err(|e| e.in_stage("simulate"))?;
    let truth = sys
        .true_coeffs
        .as_ref()
        .ok_or_else(|| Error::Config(format!("system '{}' has no reference coefficients", cfg.system)))?;
    let lib = library_from(cfg)?;
    let names = crate::preprocess::feature_names(sys.dim, &lib);
    // The reference support in the scenario library's coordinates.
    let mut truth_support = DMatrix::from_element(names.len(), sys.dim, false);
    for (j, name) in names.iter().enumerate() {
        for k in 0..sys.dim {
            if let Some(tj) = truth.feature_names.iter().position(|n| n == name) {
                truth_support[(j, k)] = truth.support[(tj, k)];
            }
        }
    }

    let icfg = ImportanceConfig { max_iter: cfg.max_iter, ..ImportanceConfig::default() };
    let grid = LambdaGrid::default_for(cfg.lambda)?;
    let methods =
        [ImportanceMethod::Inclusion, ImportanceMethod::Loco, ImportanceMethod::LocoPath];

    let mut curves: Vec<(ImportanceMethod, Vec<(usize, DMatrix<f64>, DMatrix<f64>)>)> =
        methods.iter().map(|&m| (m, Vec::new())).collect();

    for &n in &cfg.importance_lengths {
        let per_real: Vec<[(DMatrix<f64>, DMatrix<f64>); 3]> = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| -> Result<[(DMatrix<f64>, DMatrix<f64>); 3]> {
                let run_seed =
                    derive_seed(cfg.seed, (2u64 << 56) | ((n as u64) << 24) | r as u64);
                let (_clean, noisy) = simulate_stream(
                    cfg,
                    &sys,
                    run_seed,
                    n,
                    &cfg.noise_kind,
                    cfg.importance_noise_rel,
                    0.0,
                )
                .map_err(|e| e.in_stage("simulate"))?;
                let (theta, xdot) =
                    preprocess_stream(cfg, &sys, &noisy).map_err(|e| e.in_stage("preprocess"))?;
                let incl = inclusion_importance(
                    &theta,
                    &xdot,
                    cfg.ensemble_size,
                    cfg.lambda,
                    derive_seed(run_seed, 4),
                )
                .map_err(|e| e.in_stage("importance"))?;
                let loco = loco_importance(&theta, &xdot, cfg.lambda, &icfg)
                    .map_err(|e| e.in_stage("importance"))?;
                let path = loco_path_importance(&theta, &xdot, &grid, &icfg)
                    .map_err(|e| e.in_stage("importance"))?;
                Ok([
                    (incl.scores, incl.raw),
                    (loco.scores, loco.raw),
                    (path.scores, path.raw),
                ])
            })
            .collect::<Result<_>>()?;

        for (mi, curve) in curves.iter_mut().enumerate() {
            let p = per_real[0][mi].0.nrows();
            let m = per_real[0][mi].0.ncols();
            let mut norm_mean = DMatrix::zeros(p, m);
            let mut raw_mean = DMatrix::zeros(p, m);
            for real in &per_real {
                norm_mean += &real[mi].0;
                raw_mean += &real[mi].1;
            }
            norm_mean /= cfg.realizations as f64;
            raw_mean /= cfg.realizations as f64;
            curve.1.push((n, norm_mean, raw_mean));
        }
    }

    // n*: the smallest listed n from which the ranking stays correct.
    let mut n_star: Vec<(ImportanceMethod, Option<usize>)> = Vec::new();
    for (method, curve) in &curves {
        let ok: Vec<bool> = curve.iter().map(|(_, norm, _)| ranking_ok(norm, &truth_support)).collect();
        let mut star = None;
        for i in 0..ok.len() {
            if ok[i..].iter().all(|&b| b) {
                star = Some(curve[i].0);
                break;
            }
        }
        n_star.push((*method, star));
    }

    // Largest inert normalized score on the averaged curves, measured over
    // the stable region n >= n* (everywhere when no n* exists).
    let mut inert_max: Vec<(ImportanceMethod, f64)> = Vec::new();
    for ((method, curve), (_, star)) in curves.iter().zip(&n_star) {
        let from = star.unwrap_or(0);
        let mut worst = 0.0f64;
        for (n, norm, _) in curve {
            if *n < from {
                continue;
            }
            for j in 0..norm.nrows() {
                for k in 0..norm.ncols() {
                    if !truth_support[(j, k)] {
                        worst = worst.max(norm[(j, k)]);
                    }
                }
            }
        }
        inert_max.push((*method, worst));
    }

    let mut rows = Vec::new();
    for (method, curve) in &curves {
        for (n, norm, raw) in curve {
            for k in 0..norm.ncols() {
                for j in 0..norm.nrows() {
                    rows.push(format!(
                        "{},{},{},x{},{},{}",
                        method.name(),
                        n,
                        names[j],
                        k + 1,
                        fmt_f64(raw[(j, k)]),
                        fmt_f64(norm[(j, k)]),
                    ));
                }
            }
        }
    }
    let mut files = vec![write_artifact(
        cfg,
        out_dir,
        "importance.csv",
        "method,n,feature,state,raw,normalized",
        &rows,
    )?];

    let summary_rows: Vec<String> = curves
        .iter()
        .zip(&n_star)
        .zip(&inert_max)
        .map(|(((method, _), (_, star)), (_, worst))| {
            format!(
                "{},{},{}",
                method.name(),
                star.map(|s| s.to_string()).unwrap_or_default(),
                fmt_f64(*worst),
            )
        })
        .collect();
    files.push(write_artifact(
        cfg,
        out_dir,
        "importance_summary.csv",
        "method,n_star,inert_max",
        &summary_rows,
    )?);

    let mut checks = Vec::new();
    for ((method, star), (_, worst)) in n_star.iter().zip(&inert_max) {
        checks.push(CheckResult::new(
            format!("nstar_{}", method.name()),
            star.is_some_and(|s| s <= cfg.check_nstar_max),
            match star {
                Some(s) => format!("n* = {s} (max allowed {})", cfg.check_nstar_max),
                None => "ranking never stabilized over the configured lengths".into(),
            },
        ));
        checks.push(CheckResult::new(
            format!("inert_{}", method.name()),
            *worst <= cfg.check_inert_max,
            format!("largest inert normalized score {:.4} (max {})", worst, cfg.check_inert_max),
        ));
    }

    Ok(ImportanceSweepResult { artifacts: RunArtifacts { files, checks }, curves, n_star })
}

// ---------------------------------------------------------------------------
// coefficient sweep

#[derive(Clone, Debug)]
pub struct CoefConfigRow {
    pub kind: String,
    pub level_rel: f64,
    pub fcp_coverage: f64,
    pub es_coverage: f64,
    pub fcp_mean_width: f64,
    pub es_mean_width: f64,
}

pub struct CoefficientSweepResult {
    pub artifacts: RunArtifacts,
    pub rows: Vec<CoefConfigRow>,
}

/// Feature-CP and ensemble-quantile coefficient intervals per noise
/// configuration, with per-realization truth-coverage flags.
pub fn run_coefficient_sweep(cfg: &ScenarioConfig, out_dir: &Path) -> Result<CoefficientSweepResult> {
    let sys = scenario_system(cfg).map_err(|e| e.in_stage("simulate"))?;
    let truth_model = sys
        .true_coeffs
        .as_ref()
        .ok_or_else(|| Error::Config(format!("system '{}' has no reference coefficients", cfg.system)))?;
    let lib = library_from(cfg)?;
    let names = crate::preprocess::feature_names(sys.dim, &lib);
    // Reference coefficients in the scenario library's coordinates.
    let mut truth = DMatrix::zeros(names.len(), sys.dim);
    for (j, name) in names.iter().enumerate() {
        if let Some(tj) = truth_model.feature_names.iter().position(|n| n == name) {
            for k in 0..sys.dim {
                truth[(j, k)] = truth_model.coeffs[(tj, k)];
            }
        }
    }

    struct RealOutcome {
        fcp_covered: bool,
        es_covered: bool,
        fcp_width: f64,
        es_width: f64,
        interval_rows: Option<Vec<String>>,
    }

    let mut rows = Vec::new();
    let mut flag_rows = Vec::new();
    let mut interval_rows: Vec<String> = Vec::new();
    for (ki, kind) in cfg.coef_noise_kinds.iter().enumerate() {
        let levels = if kind == "process" {
            &cfg.coef_process_levels_rel
        } else {
            &cfg.coef_noise_levels_rel
        };
        for (li, &level) in levels.iter().enumerate() {
            let outcomes: Vec<RealOutcome> = (0..cfg.realizations)
                .into_par_iter()
                .map(|r| -> Result<RealOutcome> {
                    let run_seed = derive_seed(
                        cfg.seed,
                        (3u64 << 56) | ((ki as u64) << 48) | ((li as u64) << 40) | r as u64,
                    );
                    let (measurement_kind, measurement_rel, process_rel) = match kind.as_str() {
                        "process" => ("none", 0.0, level),
                        other => (other, level, 0.0),
                    };
                    // Process noise can push a population through zero and
                    // blow up; condition on non-extinct trajectories by
                    // reseeding the rare divergent draw.
                    let mut noisy = None;
                    let mut last_err = None;
                    for attempt in 0..5u64 {
                        match simulate_stream(
                            cfg,
                            &sys,
                            derive_seed(run_seed, attempt),
                            cfg.coef_n,
                            measurement_kind,
                            measurement_rel,
                            process_rel,
                        ) {
                            Ok((_clean, ts)) => {
                                noisy = Some(ts);
                                break;
                            }
                            Err(e @ Error::Divergence { .. }) => last_err = Some(e),
                            Err(e) => return Err(e.in_stage("simulate")),
                        }
                    }
                    let noisy = match noisy {
                        Some(ts) => ts,
                        None => return Err(last_err.unwrap().in_stage("simulate")),
                    };
                    let (theta, xdot) = preprocess_stream(cfg, &sys, &noisy)
                        .map_err(|e| e.in_stage("preprocess"))?;
                    let ens = jackknife_ensemble(&theta, &xdot, cfg.lambda, cfg.coef_batch)
                        .map_err(|e| e.in_stage("ensemble"))?;
                    let scored = featurecp_scores(&ens, &theta, &xdot)
                        .map_err(|e| e.in_stage("featurecp"))?;
                    let fcp = coefficient_intervals(&ens, &scored, cfg.alpha, Aggregation::Median)
                        .map_err(|e| e.in_stage("featurecp"))?;
                    // The baseline intervals come from the standard bagged
                    // ensemble, not the jackknife one: leave-one-out member
                    // spread vanishes with n and would undersell the
                    // baseline.
                    let es_ens = bootstrap_ensemble(
                        &theta,
                        &xdot,
                        cfg.ensemble_size,
                        cfg.lambda,
                        derive_seed(run_seed, 5),
                    )
                    .map_err(|e| e.in_stage("ensemble"))?;
                    let es =
                        esindy_intervals(&es_ens, cfg.alpha).map_err(|e| e.in_stage("esindy"))?;

                    let mut fcp_width = 0.0;
                    let mut es_width = 0.0;
                    let mut true_count = 0.0;
                    for j in 0..truth.nrows() {
                        for k in 0..truth.ncols() {
                            if truth[(j, k)] != 0.0 {
                                fcp_width += fcp.width(j, k);
                                es_width += es.upper[(j, k)] - es.lower[(j, k)];
                                true_count += 1.0;
                            }
                        }
                    }
                    let interval_rows = (r == 0).then(|| {
                        let mut out = Vec::new();
                        for k in 0..truth.ncols() {
                            for j in 0..truth.nrows() {
                                let (lo, hi) = fcp.bounds(j, k);
                                out.push(format!(
                                    "{kind},{},featurecp,{},x{},{},{},{},{}",
                                    fmt_f64(level),
                                    names[j],
                                    k + 1,
                                    fmt_f64(fcp.center[(j, k)]),
                                    fmt_f64(lo),
                                    fmt_f64(hi),
                                    fmt_flag(fcp.structural_zero[(j, k)]),
                                ));
                                out.push(format!(
                                    "{kind},{},esindy,{},x{},{},{},{},0",
                                    fmt_f64(level),
                                    names[j],
                                    k + 1,
                                    fmt_f64(0.5 * (es.lower[(j, k)] + es.upper[(j, k)])),
                                    fmt_f64(es.lower[(j, k)]),
                                    fmt_f64(es.upper[(j, k)]),
                                ));
                            }
                        }
                        out
                    });
                    Ok(RealOutcome {
                        fcp_covered: fcp.covers_nonzero(&truth),
                        es_covered: es.covers_nonzero(&truth),
                        fcp_width: fcp_width / true_count,
                        es_width: es_width / true_count,
                        interval_rows,
                    })
                })
                .collect::<Result<_>>()?;

            let n = outcomes.len() as f64;
            rows.push(CoefConfigRow {
                kind: kind.clone(),
                level_rel: level,
                fcp_coverage: outcomes.iter().filter(|o| o.fcp_covered).count() as f64 / n,
                es_coverage: outcomes.iter().filter(|o| o.es_covered).count() as f64 / n,
                fcp_mean_width: outcomes.iter().map(|o| o.fcp_width).sum::<f64>() / n,
                es_mean_width: outcomes.iter().map(|o| o.es_width).sum::<f64>() / n,
            });
            for (r, o) in outcomes.iter().enumerate() {
                flag_rows.push(format!(
                    "{kind},{},{r},{},{}",
                    fmt_f64(level),
                    fmt_flag(o.fcp_covered),
                    fmt_flag(o.es_covered),
                ));
            }
            if let Some(ir) = outcomes.first().and_then(|o| o.interval_rows.clone()) {
                interval_rows.extend(ir);
            }
        }
    }

    let coverage_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.kind,
                fmt_f64(r.level_rel),
                fmt_f64(r.fcp_coverage),
                fmt_f64(r.es_coverage),
                fmt_f64(r.fcp_mean_width),
                fmt_f64(r.es_mean_width),
                cfg.realizations,
            )
        })
        .collect();
    let files = vec![
        write_artifact(
            cfg,
            out_dir,
            "coef_coverage.csv",
            "kind,level_rel,featurecp_coverage,esindy_coverage,featurecp_mean_width,esindy_mean_width,realizations",
            &coverage_rows,
        )?,
        write_artifact(
            cfg,
            out_dir,
            "coef_flags.csv",
            "kind,level_rel,realization,featurecp_covered,esindy_covered",
            &flag_rows,
        )?,
        write_artifact(
            cfg,
            out_dir,
            "coef_intervals.csv",
            "kind,level_rel,method,feature,state,center,lower,upper,structural_zero",
            &interval_rows,
        )?,
    ];

    let mut checks = Vec::new();
    if cfg.check_comparative {
        let middle = cfg.coef_noise_levels_rel[cfg.coef_noise_levels_rel.len() / 2];
        match rows.iter().find(|r| r.kind == "gamma" && r.level_rel == middle) {
            Some(row) => checks.push(CheckResult::new(
                "comparative_gamma",
                row.fcp_coverage > row.es_coverage,
                format!(
                    "gamma level {}: feature-CP coverage {:.3} vs ensemble baseline {:.3}",
                    middle, row.fcp_coverage, row.es_coverage
                ),
            )),
            None => checks.push(CheckResult::new(
                "comparative_gamma",
                true,
                "skipped: no gamma configuration in the sweep".to_string(),
            )),
        }
    }
    if cfg.check_width_order {
        let bad: Vec<&CoefConfigRow> =
            rows.iter().filter(|r| r.fcp_mean_width < r.es_mean_width - 1e-12).collect();
        checks.push(CheckResult::new(
            "width_order",
            bad.is_empty(),
            if bad.is_empty() {
                "feature-CP intervals at least as wide as the ensemble baseline everywhere".into()
            } else {
                format!(
                    "feature-CP narrower at ({}, {})",
                    bad[0].kind, bad[0].level_rel
                )
            },
        ));
    }

    Ok(CoefficientSweepResult { artifacts: RunArtifacts { files, checks }, rows })
}
