//! Flat key = value scenario configuration with a typed schema, defaults,
//! canonical echo order, and round-trip parsing. Every output file embeds
//! the resolved config as `#cfg key = value` lines so any artifact can be
//! reproduced from its own header.

use crate::error::{Error, Result};
use crate::systems::make_system;

/// Fully resolved scenario configuration. Lists are comma-separated in the
/// text form; empty `params`/`x0` resolve to the system's canonical values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub system: String,
    pub params: Vec<f64>,
    pub x0: Vec<f64>,
    pub dt: f64,
    /// Total stream length in samples.
    pub n_total: usize,
    /// Training prefix length in samples.
    pub train_len: usize,
    pub noise_kind: String,
    /// Measurement noise scale as a fraction of the pooled clean-signal
    /// standard deviation.
    pub noise_level_rel: f64,
    pub gamma_shape: f64,
    pub gamma_centered: bool,
    /// Process (dynamics) noise scale, same relative convention; 0 = ODE.
    pub process_level_rel: f64,
    pub ensemble_size: usize,
    pub lambda: f64,
    pub max_iter: usize,
    pub library_degree: usize,
    pub library_bias: bool,
    /// 0 disables smoothing; otherwise odd and > polyorder.
    pub savgol_window: usize,
    pub savgol_polyorder: usize,
    /// Use the true vector field for training derivatives (noiseless
    /// benchmarking only).
    pub exact_derivatives: bool,
    pub alpha: f64,
    pub horizon: usize,
    /// Sliding calibration window capacity l_r.
    pub window: usize,
    pub burn_in: usize,
    pub refit_every: usize,
    pub rolling_window: usize,
    pub methods: Vec<String>,
    pub pid_eta_scale: f64,
    pub pid_ki_scale: f64,
    pub pid_c: f64,
    pub pid_feedback: String,
    pub pid_identity_saturation: bool,
    pub targets: Vec<f64>,
    pub sweep_noise_levels_rel: Vec<f64>,
    pub importance_lengths: Vec<usize>,
    pub importance_noise_rel: f64,
    pub coef_noise_levels_rel: Vec<f64>,
    /// Process-noise levels for the coefficient sweep. Population dynamics
    /// tolerate far less additive state noise than measurement noise
    /// before trajectories hit zero and diverge, so these are separate
    /// from (and much smaller than) the measurement levels.
    pub coef_process_levels_rel: Vec<f64>,
    pub coef_noise_kinds: Vec<String>,
    pub coef_n: usize,
    pub coef_batch: usize,
    pub realizations: usize,
    pub seed: u64,
    pub check_coverage_low: f64,
    pub check_coverage_high: f64,
    pub check_sweep_tol: f64,
    pub check_width_monotone: bool,
    pub check_noise_width_order: bool,
    pub check_nstar_max: usize,
    pub check_inert_max: f64,
    pub check_comparative: bool,
    pub check_width_order: bool,
}

impl ScenarioConfig {
    /// Raw defaults before cross-field resolution.
    fn base() -> Self {
        ScenarioConfig {
            system: "lotka_volterra".into(),
            params: Vec::new(),
            x0: Vec::new(),
            dt: 0.1,
            n_total: 1300,
            train_len: 150,
            noise_kind: "gaussian".into(),
            noise_level_rel: 0.05,
            gamma_shape: 2.0,
            gamma_centered: false,
            process_level_rel: 0.0,
            ensemble_size: 50,
            lambda: 0.05,
            max_iter: 20,
            library_degree: 2,
            library_bias: true,
            savgol_window: 9,
            savgol_polyorder: 3,
            exact_derivatives: false,
            alpha: 0.1,
            horizon: 2,
            window: 100,
            burn_in: 100,
            refit_every: 50,
            rolling_window: 50,
            methods: vec!["enbpi".into(), "cppid".into()],
            pid_eta_scale: 0.05,
            pid_ki_scale: 1.0,
            pid_c: 0.1,
            pid_feedback: "per_state".into(),
            pid_identity_saturation: false,
            targets: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
            sweep_noise_levels_rel: vec![0.05, 0.2],
            importance_lengths: vec![25, 50, 100, 200, 300, 400],
            importance_noise_rel: 0.05,
            coef_noise_levels_rel: vec![0.05, 0.1, 0.2],
            coef_process_levels_rel: vec![0.005, 0.01, 0.02],
            coef_noise_kinds: vec!["gamma".into(), "process".into()],
            coef_n: 250,
            coef_batch: 1,
            realizations: 20,
            seed: 42,
            check_coverage_low: 0.85,
            check_coverage_high: 0.95,
            check_sweep_tol: 0.05,
            check_width_monotone: true,
            check_noise_width_order: true,
            check_nstar_max: 400,
            check_inert_max: 0.35,
            check_comparative: true,
            check_width_order: true,
        }
    }

    /// Canonical per-system parameter defaults.
    fn default_params(system: &str) -> Option<Vec<f64>> {
        match system {
            "lotka_volterra" => Some(vec![1.0, 0.1, 1.0, 0.1]),
            "lorenz" => Some(vec![10.0, 28.0, 8.0 / 3.0]),
            _ => None,
        }
    }

    /// Apply one key = value override.
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("key '{key}': {what} (got '{value}')"));
        match key {
            "system" => self.system = value.to_string(),
            "params" => self.params = parse_f64_list(value).ok_or_else(|| bad("expected floats"))?,
            "x0" => self.x0 = parse_f64_list(value).ok_or_else(|| bad("expected floats"))?,
            "dt" => self.dt = value.parse().map_err(|_| bad("expected float"))?,
            "n_total" => self.n_total = value.parse().map_err(|_| bad("expected integer"))?,
            "train_len" => self.train_len = value.parse().map_err(|_| bad("expected integer"))?,
            "noise_kind" => self.noise_kind = value.to_string(),
            "noise_level_rel" => {
                self.noise_level_rel = value.parse().map_err(|_| bad("expected float"))?
            }
            "gamma_shape" => self.gamma_shape = value.parse().map_err(|_| bad("expected float"))?,
            "gamma_centered" => {
                self.gamma_centered = value.parse().map_err(|_| bad("expected bool"))?
            }
            "process_level_rel" => {
                self.process_level_rel = value.parse().map_err(|_| bad("expected float"))?
            }
            "ensemble_size" => {
                self.ensemble_size = value.parse().map_err(|_| bad("expected integer"))?
            }
            "lambda" => self.lambda = value.parse().map_err(|_| bad("expected float"))?,
            "max_iter" => self.max_iter = value.parse().map_err(|_| bad("expected integer"))?,
            "library_degree" => {
                self.library_degree = value.parse().map_err(|_| bad("expected integer"))?
            }
            "library_bias" => self.library_bias = value.parse().map_err(|_| bad("expected bool"))?,
            "savgol_window" => {
                self.savgol_window = value.parse().map_err(|_| bad("expected integer"))?
            }
            "savgol_polyorder" => {
                self.savgol_polyorder = value.parse().map_err(|_| bad("expected integer"))?
            }
            "exact_derivatives" => {
                self.exact_derivatives = value.parse().map_err(|_| bad("expected bool"))?
            }
            "alpha" => self.alpha = value.parse().map_err(|_| bad("expected float"))?,
            "horizon" => self.horizon = value.parse().map_err(|_| bad("expected integer"))?,
            "window" => self.window = value.parse().map_err(|_| bad("expected integer"))?,
            "burn_in" => self.burn_in = value.parse().map_err(|_| bad("expected integer"))?,
            "refit_every" => {
                self.refit_every = value.parse().map_err(|_| bad("expected integer"))?
            }
            "rolling_window" => {
                self.rolling_window = value.parse().map_err(|_| bad("expected integer"))?
            }
            "methods" => {
                self.methods = parse_str_list(value);
            }
            "pid_eta_scale" => {
                self.pid_eta_scale = value.parse().map_err(|_| bad("expected float"))?
            }
            "pid_ki_scale" => {
                self.pid_ki_scale = value.parse().map_err(|_| bad("expected float"))?
            }
            "pid_c" => self.pid_c = value.parse().map_err(|_| bad("expected float"))?,
            "pid_feedback" => self.pid_feedback = value.to_string(),
            "pid_identity_saturation" => {
                self.pid_identity_saturation = value.parse().map_err(|_| bad("expected bool"))?
            }
            "targets" => self.targets = parse_f64_list(value).ok_or_else(|| bad("expected floats"))?,
            "sweep_noise_levels_rel" => {
                self.sweep_noise_levels_rel =
                    parse_f64_list(value).ok_or_else(|| bad("expected floats"))?
            }
            "importance_lengths" => {
                self.importance_lengths =
                    parse_usize_list(value).ok_or_else(|| bad("expected integers"))?
            }
            "importance_noise_rel" => {
                self.importance_noise_rel = value.parse().map_err(|_| bad("expected float"))?
            }
            "coef_noise_levels_rel" => {
                self.coef_noise_levels_rel =
                    parse_f64_list(value).ok_or_else(|| bad("expected floats"))?
            }
            "coef_process_levels_rel" => {
                self.coef_process_levels_rel =
                    parse_f64_list(value).ok_or_else(|| bad("expected floats"))?
            }
            "coef_noise_kinds" => {
                self.coef_noise_kinds = parse_str_list(value);
            }
            "coef_n" => self.coef_n = value.parse().map_err(|_| bad("expected integer"))?,
            "coef_batch" => self.coef_batch = value.parse().map_err(|_| bad("expected integer"))?,
            "realizations" => {
                self.realizations = value.parse().map_err(|_| bad("expected integer"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("expected integer"))?,
            "check_coverage_low" => {
                self.check_coverage_low = value.parse().map_err(|_| bad("expected float"))?
            }
            "check_coverage_high" => {
                self.check_coverage_high = value.parse().map_err(|_| bad("expected float"))?
            }
            "check_sweep_tol" => {
                self.check_sweep_tol = value.parse().map_err(|_| bad("expected float"))?
            }
            "check_width_monotone" => {
                self.check_width_monotone = value.parse().map_err(|_| bad("expected bool"))?
            }
            "check_noise_width_order" => {
                self.check_noise_width_order = value.parse().map_err(|_| bad("expected bool"))?
            }
            "check_nstar_max" => {
                self.check_nstar_max = value.parse().map_err(|_| bad("expected integer"))?
            }
            "check_inert_max" => {
                self.check_inert_max = value.parse().map_err(|_| bad("expected float"))?
            }
            "check_comparative" => {
                self.check_comparative = value.parse().map_err(|_| bad("expected bool"))?
            }
            "check_width_order" => {
                self.check_width_order = value.parse().map_err(|_| bad("expected bool"))?
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Resolve empty params/x0 against the system registry and check
    /// cross-field consistency. Component-level parameters (smoother
    /// windows, library degree, noise specs) are validated by the
    /// components themselves when the scenario runs.
    pub fn validated(mut self) -> Result<Self> {
        if self.params.is_empty() {
            self.params = Self::default_params(&self.system)
                .ok_or_else(|| Error::UnknownSystem(self.system.clone()))?;
        }
        let sys = make_system(&self.system, &self.params)?;
        if self.x0.is_empty() {
            self.x0 = sys.default_x0.clone();
        }
        if self.x0.len() != sys.dim {
            return Err(Error::Config(format!(
                "x0 has {} entries, system '{}' has dimension {}",
                self.x0.len(),
                self.system,
                sys.dim
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.realizations < 1 {
            return Err(Error::Config("realizations must be >= 1".into()));
        }
        if self.n_total <= self.train_len + self.horizon {
            return Err(Error::Config(format!(
                "n_total = {} leaves no forecast steps beyond train_len = {} + horizon = {}",
                self.n_total, self.train_len, self.horizon
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        for m in &self.methods {
            if m != "enbpi" && m != "cppid" {
                return Err(Error::Config(format!(
                    "unknown method '{m}' (expected enbpi or cppid)"
                )));
            }
        }
        match self.noise_kind.as_str() {
            "gaussian" | "gamma" | "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown noise_kind '{other}' (expected gaussian, gamma, or none)"
                )))
            }
        }
        match self.pid_feedback.as_str() {
            "per_state" | "joint" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown pid_feedback '{other}' (expected per_state or joint)"
                )))
            }
        }
        for t in &self.targets {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::Config(format!("target {t} must lie in (0,1)")));
            }
        }
        if self.targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("targets must be strictly increasing".into()));
        }
        if self.importance_lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("importance_lengths must be strictly increasing".into()));
        }
        for k in &self.coef_noise_kinds {
            match k.as_str() {
                "gamma" | "gaussian" | "process" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown coef noise kind '{other}' (expected gamma, gaussian, or process)"
                    )))
                }
            }
        }
        if self.savgol_window != 0 && self.savgol_window % 2 == 0 {
            return Err(Error::Config(format!(
                "savgol_window must be odd or 0 to disable, got {}",
                self.savgol_window
            )));
        }
        Ok(self)
    }

    /// Canonical (key, value) pairs, every field, fixed order.
    pub fn echo_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("system", self.system.clone()),
            ("params", fmt_f64_list(&self.params)),
            ("x0", fmt_f64_list(&self.x0)),
            ("dt", fmt_f64(self.dt)),
            ("n_total", self.n_total.to_string()),
            ("train_len", self.train_len.to_string()),
            ("noise_kind", self.noise_kind.clone()),
            ("noise_level_rel", fmt_f64(self.noise_level_rel)),
            ("gamma_shape", fmt_f64(self.gamma_shape)),
            ("gamma_centered", self.gamma_centered.to_string()),
            ("process_level_rel", fmt_f64(self.process_level_rel)),
            ("ensemble_size", self.ensemble_size.to_string()),
            ("lambda", fmt_f64(self.lambda)),
            ("max_iter", self.max_iter.to_string()),
            ("library_degree", self.library_degree.to_string()),
            ("library_bias", self.library_bias.to_string()),
            ("savgol_window", self.savgol_window.to_string()),
            ("savgol_polyorder", self.savgol_polyorder.to_string()),
            ("exact_derivatives", self.exact_derivatives.to_string()),
            ("alpha", fmt_f64(self.alpha)),
            ("horizon", self.horizon.to_string()),
            ("window", self.window.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("refit_every", self.refit_every.to_string()),
            ("rolling_window", self.rolling_window.to_string()),
            ("methods", self.methods.join(",")),
            ("pid_eta_scale", fmt_f64(self.pid_eta_scale)),
            ("pid_ki_scale", fmt_f64(self.pid_ki_scale)),
            ("pid_c", fmt_f64(self.pid_c)),
            ("pid_feedback", self.pid_feedback.clone()),
            ("pid_identity_saturation", self.pid_identity_saturation.to_string()),
            ("targets", fmt_f64_list(&self.targets)),
            ("sweep_noise_levels_rel", fmt_f64_list(&self.sweep_noise_levels_rel)),
            ("importance_lengths", fmt_usize_list(&self.importance_lengths)),
            ("importance_noise_rel", fmt_f64(self.importance_noise_rel)),
            ("coef_noise_levels_rel", fmt_f64_list(&self.coef_noise_levels_rel)),
            ("coef_process_levels_rel", fmt_f64_list(&self.coef_process_levels_rel)),
            ("coef_noise_kinds", self.coef_noise_kinds.join(",")),
            ("coef_n", self.coef_n.to_string()),
            ("coef_batch", self.coef_batch.to_string()),
            ("realizations", self.realizations.to_string()),
            ("seed", self.seed.to_string()),
            ("check_coverage_low", fmt_f64(self.check_coverage_low)),
            ("check_coverage_high", fmt_f64(self.check_coverage_high)),
            ("check_sweep_tol", fmt_f64(self.check_sweep_tol)),
            ("check_width_monotone", self.check_width_monotone.to_string()),
            ("check_noise_width_order", self.check_noise_width_order.to_string()),
            ("check_nstar_max", self.check_nstar_max.to_string()),
            ("check_inert_max", fmt_f64(self.check_inert_max)),
            ("check_comparative", self.check_comparative.to_string()),
            ("check_width_order", self.check_width_order.to_string()),
        ]
    }

    /// The `#cfg key = value` header block embedded in every output file.
    pub fn echo_header(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.echo_pairs() {
            out.push_str("#cfg ");
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Plain `key = value` text (the --help default listing).
    pub fn echo_plain(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.echo_pairs() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::base().validated().expect("built-in defaults validate")
    }
}

/// Parse a config from text. Accepts plain `key = value` lines, `#cfg`
/// echo lines (so any output file header is itself a valid config), blank
/// lines, and `#` comments.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::base();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line = if let Some(rest) = line.strip_prefix("#cfg") {
            rest.trim()
        } else if line.starts_with('#') || line.is_empty() {
            continue;
        } else {
            line
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                i + 1
            )));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validated()
}

fn parse_f64_list(value: &str) -> Option<Vec<f64>> {
    if value.is_empty() {
        return Some(Vec::new());
    }
    value.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_usize_list(value: &str) -> Option<Vec<usize>> {
    if value.is_empty() {
        return Some(Vec::new());
    }
    value.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_str_list(value: &str) -> Vec<String> {
    if value.is_empty() {
        return Vec::new();
    }
    value.split(',').map(|v| v.trim().to_string()).collect()
}

/// Shortest round-trip decimal form, with negative zero normalized.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn fmt_f64_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn fmt_usize_list(vs: &[usize]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
