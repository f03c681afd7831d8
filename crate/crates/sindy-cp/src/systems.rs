//! Benchmark dynamical systems, fixed-step integrators, and measurement-noise
//! models.
//!
//! The registry ships the two systems every experiment uses: the
//! Lotka–Volterra predator–prey equations and the Lorenz system. Each
//! [`SystemDef`] carries the generating coefficients in the quadratic
//! monomial basis so recovered models can be compared index-by-index.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::preprocess::{self, LibrarySpec};
use crate::sindy::SparseModel;

/// Vector field f(x) mapping a state to its time derivative.
pub type Rhs = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Default per-entry magnitude guard for stochastic simulation.
pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e6;

/// A named dynamical system: dimension, vector field, generating
/// coefficients (in the quadratic library basis), and a default initial
/// state for simulations.
#[derive(Clone)]
pub struct SystemDef {
    pub name: String,
    pub dim: usize,
    pub rhs: Rhs,
    pub true_coeffs: Option<SparseModel>,
    pub default_x0: Vec<f64>,
    pub params: Vec<f64>,
}

impl SystemDef {
    /// Evaluate the vector field at a state.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.rhs)(x)
    }
}

/// Measurement-noise distribution applied entrywise to a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Gamma,
}

/// Specification of an additive measurement-noise model.
///
/// `level` is the scale parameter in state units: the standard deviation
/// for Gaussian noise, the gamma scale parameter otherwise. Gamma noise is
/// non-zero-mean (mean = `gamma_shape * level`) unless `centered` is set.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub gamma_shape: f64,
    pub centered: bool,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(level: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            level,
            gamma_shape: 2.0,
            centered: false,
            seed,
        }
    }

    pub fn gamma(level: f64, shape: f64, centered: bool, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gamma,
            level,
            gamma_shape: shape,
            centered,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise level must be finite and >= 0, got {}",
                self.level
            )));
        }
        if self.kind == NoiseKind::Gamma && !(self.gamma_shape > 0.0) {
            return Err(Error::Parameter(format!(
                "gamma shape must be > 0, got {}",
                self.gamma_shape
            )));
        }
        Ok(())
    }
}

/// A uniformly sampled multivariate time series.
///
/// `states` holds one sample per row; `labels` names the state columns.
#[derive(Clone, Debug)]
pub struct TimeSeries {
    pub t0: f64,
    pub dt: f64,
    pub states: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl TimeSeries {
    pub fn new(t0: f64, dt: f64, states: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: states.nrows(),
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be finite and > 0, got {dt}")));
        }
        if labels.len() != states.ncols() {
            return Err(Error::Parameter(format!(
                "{} labels for {} state columns",
                labels.len(),
                states.ncols()
            )));
        }
        for (i, row) in states.row_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteData { row: i });
            }
        }
        Ok(TimeSeries { t0, dt, states, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.states.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.states.row(i).iter().cloned().collect()
    }

    /// Default state labels x1..xm.
    pub fn default_labels(dim: usize) -> Vec<String> {
        (1..=dim).map(|k| format!("x{k}")).collect()
    }
}

/// Build a registry system by name.
///
/// `lotka_volterra` takes params `[alpha, beta, gamma, delta]` for
/// x1' = alpha*x1 - beta*x1*x2, x2' = delta*x1*x2 - gamma*x2.
/// `lorenz` takes `[sigma, rho, beta]` for the classical equations.
pub fn make_system(name: &str, params: &[f64]) -> Result<SystemDef> {
    match name {
        "lotka_volterra" => {
            if params.len() != 4 {
                return Err(Error::Arity {
                    system: name.into(),
                    expected: 4,
                    got: params.len(),
                });
            }
            let (alpha, beta, gamma, delta) = (params[0], params[1], params[2], params[3]);
            let rhs: Rhs = Arc::new(move |x: &[f64]| {
                vec![
                    alpha * x[0] - beta * x[0] * x[1],
                    delta * x[0] * x[1] - gamma * x[1],
                ]
            });
            // Quadratic basis for m=2: [1, x1, x2, x1^2, x1*x2, x2^2].
            let entries = [
                (1, 0, alpha),  // x1 in dx1
                (4, 0, -beta),  // x1*x2 in dx1
                (2, 1, -gamma), // x2 in dx2
                (4, 1, delta),  // x1*x2 in dx2
            ];
            let true_coeffs = coeffs_from_entries(2, &entries);
            Ok(SystemDef {
                name: name.into(),
                dim: 2,
                rhs,
                true_coeffs: Some(true_coeffs),
                default_x0: vec![5.0, 5.0],
                params: params.to_vec(),
            })
        }
        "lorenz" => {
            if params.len() != 3 {
                return Err(Error::Arity {
                    system: name.into(),
                    expected: 3,
                    got: params.len(),
                });
            }
            let (sigma, rho, beta) = (params[0], params[1], params[2]);
            let rhs: Rhs = Arc::new(move |x: &[f64]| {
                vec![
                    sigma * (x[1] - x[0]),
                    x[0] * (rho - x[2]) - x[1],
                    x[0] * x[1] - beta * x[2],
                ]
            });
            // Quadratic basis for m=3:
            // [1, x1, x2, x3, x1^2, x1*x2, x1*x3, x2^2, x2*x3, x3^2].
            let entries = [
                (1, 0, -sigma), // x1 in dx1
                (2, 0, sigma),  // x2 in dx1
                (1, 1, rho),    // x1 in dx2
                (2, 1, -1.0),   // x2 in dx2
                (6, 1, -1.0),   // x1*x3 in dx2
                (3, 2, -beta),  // x3 in dx3
                (5, 2, 1.0),    // x1*x2 in dx3
            ];
            let true_coeffs = coeffs_from_entries(3, &entries);
            Ok(SystemDef {
                name: name.into(),
                dim: 3,
                rhs,
                true_coeffs: Some(true_coeffs),
                default_x0: vec![-8.0, 8.0, 27.0],
                params: params.to_vec(),
            })
        }
        other => Err(Error::UnknownSystem(other.into())),
    }
}

fn coeffs_from_entries(dim: usize, entries: &[(usize, usize, f64)]) -> SparseModel {
    let spec = LibrarySpec::quadratic();
    let names = preprocess::feature_names(dim, &spec);
    let p = names.len();
    let mut coeffs = DMatrix::zeros(p, dim);
    for &(j, k, v) in entries {
        coeffs[(j, k)] = v;
    }
    SparseModel::from_coeffs(coeffs, 0.0, names)
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step(rhs: &Rhs, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let check = |stage: usize, v: &[f64]| -> Result<()> {
        if v.iter().any(|e| !e.is_finite()) {
            Err(Error::Integration { step: 0, stage })
        } else {
            Ok(())
        }
    };
    let k1 = rhs(x);
    check(1, &k1)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = rhs(&x2);
    check(2, &k2)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = rhs(&x3);
    check(3, &k3)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = rhs(&x4);
    check(4, &k4)?;
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check(4, &out)?;
    Ok(out)
}

/// Integrate a system with RK4 for `n` steps; the result has `n + 1` rows
/// with row 0 equal to `x0`.
pub fn simulate_ode(system: &SystemDef, x0: &[f64], dt: f64, n: usize) -> Result<TimeSeries> {
    if n < 1 {
        return Err(Error::Parameter("step count must be >= 1".into()));
    }
    if x0.len() != system.dim {
        return Err(Error::Arity {
            system: system.name.clone(),
            expected: system.dim,
            got: x0.len(),
        });
    }
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(x0.to_vec());
    let mut x = x0.to_vec();
    for step in 0..n {
        x = rk4_step(&system.rhs, &x, dt).map_err(|e| match e {
            Error::Integration { stage, .. } => Error::Integration { step, stage },
            other => other,
        })?;
        rows.push(x.clone());
    }
    let states = DMatrix::from_fn(n + 1, system.dim, |i, j| rows[i][j]);
    TimeSeries::new(0.0, dt, states, TimeSeries::default_labels(system.dim))
}

/// Euler–Maruyama trajectory with additive process noise:
/// x_{k+1} = x_k + f(x_k) dt + process_level * sqrt(dt) * z_k.
///
/// With `process_level = 0` this is plain Euler integration (first order,
/// unlike the RK4 driver above). Uses the default divergence guard.
pub fn simulate_sde(
    system: &SystemDef,
    x0: &[f64],
    dt: f64,
    n: usize,
    process_level: f64,
    seed: u64,
) -> Result<TimeSeries> {
    simulate_sde_guarded(system, x0, dt, n, process_level, seed, DEFAULT_DIVERGENCE_GUARD)
}

/// As [`simulate_sde`] with an explicit per-entry magnitude guard; any
/// state entry exceeding the guard aborts with the offending step.
pub fn simulate_sde_guarded(
    system: &SystemDef,
    x0: &[f64],
    dt: f64,
    n: usize,
    process_level: f64,
    seed: u64,
    guard: f64,
) -> Result<TimeSeries> {
    if n < 1 {
        return Err(Error::Parameter("step count must be >= 1".into()));
    }
    if !(process_level >= 0.0 && process_level.is_finite()) {
        return Err(Error::Parameter(format!(
            "process level must be finite and >= 0, got {process_level}"
        )));
    }
    if x0.len() != system.dim {
        return Err(Error::Arity {
            system: system.name.clone(),
            expected: system.dim,
            got: x0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sqrt_dt = dt.sqrt();
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(x0.to_vec());
    let mut x = x0.to_vec();
    for step in 0..n {
        let f = (system.rhs)(&x);
        for i in 0..x.len() {
            x[i] += f[i] * dt + process_level * sqrt_dt * normal.sample(&mut rng);
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite() || v.abs() > guard) {
            return Err(Error::Divergence {
                step,
                value: *v,
                guard,
            });
        }
        rows.push(x.clone());
    }
    let states = DMatrix::from_fn(n + 1, system.dim, |i, j| rows[i][j]);
    TimeSeries::new(0.0, dt, states, TimeSeries::default_labels(system.dim))
}

/// Add i.i.d. measurement noise to every entry of a trajectory.
pub fn add_measurement_noise(ts: &TimeSeries, spec: &NoiseSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let mut out = ts.clone();
    if spec.level == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, spec.level)
                .map_err(|e| Error::Parameter(format!("gaussian noise: {e}")))?;
            for v in out.states.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        NoiseKind::Gamma => {
            let dist = Gamma::new(spec.gamma_shape, spec.level)
                .map_err(|e| Error::Parameter(format!("gamma noise: {e}")))?;
            let shift = if spec.centered {
                spec.gamma_shape * spec.level
            } else {
                0.0
            };
            for v in out.states.iter_mut() {
                *v += dist.sample(&mut rng) - shift;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::preprocess::build_library;

    fn lv() -> SystemDef {
        make_system("lotka_volterra", &[1.0, 0.1, 1.0, 0.1]).unwrap()
    }

    #[test]
    fn unknown_system_rejected() {
        assert!(matches!(
            make_system("rossler", &[1.0]),
            Err(Error::UnknownSystem(_))
        ));
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(matches!(
            make_system("lotka_volterra", &[1.0, 0.1]),
            Err(Error::Arity { expected: 4, got: 2, .. })
        ));
        assert!(matches!(
            make_system("lorenz", &[10.0]),
            Err(Error::Arity { expected: 3, got: 1, .. })
        ));
    }

    #[test]
    fn lotka_volterra_fixed_point() {
        let sys = lv();
        let f = sys.eval(&[10.0, 10.0]);
        assert_relative_eq!(f[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(f[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lotka_volterra_unit_state() {
        let f = lv().eval(&[1.0, 1.0]);
        assert_relative_eq!(f[0], 0.9, epsilon = 1e-14);
        assert_relative_eq!(f[1], -0.9, epsilon = 1e-14);
    }

    #[test]
    fn lorenz_origin_is_equilibrium() {
        let sys = make_system("lorenz", &[10.0, 28.0, 8.0 / 3.0]).unwrap();
        let f = sys.eval(&[0.0, 0.0, 0.0]);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn true_coeffs_reproduce_rhs_on_random_states() {
        // The registry coefficients, pushed through the library row, must
        // match the closed-form vector field everywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let uniform = rand::distributions::Uniform::new(0.1, 20.0);
        for sys in [lv(), make_system("lorenz", &[10.0, 28.0, 8.0 / 3.0]).unwrap()] {
            let model = sys.true_coeffs.as_ref().unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..sys.dim)
                    .map(|_| rand::distributions::Distribution::sample(&uniform, &mut rng))
                    .collect();
                let via_library = model.rhs(&x, &LibrarySpec::quadratic());
                let direct = sys.eval(&x);
                for k in 0..sys.dim {
                    assert_relative_eq!(via_library[k], direct[k], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rk4_zero_field_identity() {
        let rhs: Rhs = Arc::new(|x: &[f64]| vec![0.0; x.len()]);
        let out = rk4_step(&rhs, &[10.0, 10.0], 0.1).unwrap();
        assert_eq!(out, vec![10.0, 10.0]);
    }

    #[test]
    fn rk4_exponential_step() {
        // Hand-evaluated stages for x' = x, dt = 0.1:
        // k1=1, k2=1.05, k3=1.0525, k4=1.10525.
        let rhs: Rhs = Arc::new(|x: &[f64]| vec![x[0]]);
        let out = rk4_step(&rhs, &[1.0], 0.1).unwrap();
        assert_relative_eq!(out[0], 1.1051708333333332, epsilon = 1e-15);
    }

    #[test]
    fn rk4_preserves_lv_equilibrium() {
        let sys = lv();
        let out = rk4_step(&sys.rhs, &[10.0, 10.0], 0.1).unwrap();
        assert_relative_eq!(out[0], 10.0, epsilon = 1e-13);
        assert_relative_eq!(out[1], 10.0, epsilon = 1e-13);
    }

    #[test]
    fn rk4_reports_non_finite_stage() {
        let rhs: Rhs = Arc::new(|x: &[f64]| vec![1.0 / (x[0] - 1.0)]);
        match rk4_step(&rhs, &[1.0], 0.1) {
            Err(Error::Integration { stage: 1, .. }) => {}
            other => panic!("expected stage-1 integration error, got {other:?}"),
        }
    }

    #[test]
    fn rk4_matches_taylor_on_linear_fields() {
        // On x' = Ax one RK4 step equals the degree-4 Taylor truncation of
        // exp(A dt) applied to x.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let uniform = rand::distributions::Uniform::new(-1.0, 1.0);
        for _ in 0..20 {
            let a = DMatrix::from_fn(2, 2, |_, _| {
                rand::distributions::Distribution::sample(&uniform, &mut rng)
            });
            let dt = 0.05; // keeps ||A|| dt <= 0.1
            let a_dyn = a.clone();
            let rhs: Rhs = Arc::new(move |x: &[f64]| {
                let xv = nalgebra::DVector::from_column_slice(x);
                (&a_dyn * xv).iter().cloned().collect()
            });
            let x0 = nalgebra::DVector::from_vec(vec![1.0, -0.5]);
            let stepped = rk4_step(&rhs, x0.as_slice(), dt).unwrap();
            let ad = &a * dt;
            let mut taylor = DMatrix::identity(2, 2);
            let mut term = DMatrix::identity(2, 2);
            for k in 1..=4 {
                term = &term * &ad / k as f64;
                taylor += &term;
            }
            let expect = taylor * &x0;
            for i in 0..2 {
                assert_relative_eq!(stepped[i], expect[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn simulate_ode_rejects_zero_steps() {
        let sys = lv();
        assert!(simulate_ode(&sys, &[5.0, 5.0], 0.1, 0).is_err());
    }

    #[test]
    fn simulate_ode_zero_field_two_rows() {
        let sys = SystemDef {
            name: "still".into(),
            dim: 1,
            rhs: Arc::new(|_: &[f64]| vec![0.0]),
            true_coeffs: None,
            default_x0: vec![2.0],
            params: vec![],
        };
        let ts = simulate_ode(&sys, &[2.0], 0.1, 1).unwrap();
        assert_eq!(ts.n_samples(), 2);
        assert_eq!(ts.states[(0, 0)], ts.states[(1, 0)]);
    }

    #[test]
    fn simulate_ode_equilibrium_constant() {
        let ts = simulate_ode(&lv(), &[10.0, 10.0], 0.1, 50).unwrap();
        for row in ts.states.row_iter() {
            assert_relative_eq!(row[0], 10.0, epsilon = 1e-10);
            assert_relative_eq!(row[1], 10.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn simulate_ode_exponential_oracle() {
        let sys = SystemDef {
            name: "exp".into(),
            dim: 1,
            rhs: Arc::new(|x: &[f64]| vec![x[0]]),
            true_coeffs: None,
            default_x0: vec![1.0],
            params: vec![],
        };
        let ts = simulate_ode(&sys, &[1.0], 0.05, 20).unwrap();
        assert_relative_eq!(ts.states[(20, 0)], std::f64::consts::E, epsilon = 1e-6);
    }

    #[test]
    fn sde_zero_noise_zero_field_constant() {
        let sys = SystemDef {
            name: "still".into(),
            dim: 2,
            rhs: Arc::new(|_: &[f64]| vec![0.0, 0.0]),
            true_coeffs: None,
            default_x0: vec![1.0, 2.0],
            params: vec![],
        };
        let ts = simulate_sde(&sys, &[1.0, 2.0], 0.1, 20, 0.0, 3).unwrap();
        for row in ts.states.row_iter() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], 2.0);
        }
    }

    #[test]
    fn sde_seed_reproducibility() {
        let sys = lv();
        let a = simulate_sde(&sys, &[5.0, 5.0], 0.1, 100, 0.3, 99).unwrap();
        let b = simulate_sde(&sys, &[5.0, 5.0], 0.1, 100, 0.3, 99).unwrap();
        assert_eq!(a.states, b.states);
        let c = simulate_sde(&sys, &[5.0, 5.0], 0.1, 100, 0.3, 100).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn sde_euler_exponential_error() {
        // Euler on x' = x over [0,1] at dt=0.001: global error O(dt).
        let sys = SystemDef {
            name: "exp".into(),
            dim: 1,
            rhs: Arc::new(|x: &[f64]| vec![x[0]]),
            true_coeffs: None,
            default_x0: vec![1.0],
            params: vec![],
        };
        let ts = simulate_sde(&sys, &[1.0], 0.001, 1000, 0.0, 0).unwrap();
        let rel = (ts.states[(1000, 0)] - std::f64::consts::E).abs() / std::f64::consts::E;
        assert!(rel < 0.002, "relative error {rel} too large for Euler");
    }

    #[test]
    fn sde_divergence_guard_trips() {
        let sys = SystemDef {
            name: "blowup".into(),
            dim: 1,
            rhs: Arc::new(|x: &[f64]| vec![x[0] * x[0]]),
            true_coeffs: None,
            default_x0: vec![1.0],
            params: vec![],
        };
        match simulate_sde_guarded(&sys, &[10.0], 1.0, 100, 0.0, 0, 1e3) {
            Err(Error::Divergence { guard, .. }) => assert_eq!(guard, 1e3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn noise_level_zero_identity() {
        let ts = simulate_ode(&lv(), &[5.0, 5.0], 0.1, 10).unwrap();
        let out = add_measurement_noise(&ts, &NoiseSpec::gaussian(0.0, 1)).unwrap();
        assert_eq!(ts.states, out.states);
    }

    #[test]
    fn gamma_noise_mean_matches_identity() {
        // shape=2, scale=0.5 (not centered): mean of added noise is 1.0.
        let states = DMatrix::zeros(100_000, 1);
        let ts = TimeSeries::new(0.0, 0.1, states, vec!["x1".into()]).unwrap();
        let noisy = add_measurement_noise(&ts, &NoiseSpec::gamma(0.5, 2.0, false, 5)).unwrap();
        let mean = noisy.states.iter().sum::<f64>() / 100_000.0;
        // var = shape * scale^2 = 0.5, se = sqrt(0.5/1e5) ~ 0.0022
        assert!((mean - 1.0).abs() < 3.0 * 0.0023, "mean {mean}");
        let centered =
            add_measurement_noise(&ts, &NoiseSpec::gamma(0.5, 2.0, true, 5)).unwrap();
        let cmean = centered.states.iter().sum::<f64>() / 100_000.0;
        assert!(cmean.abs() < 3.0 * 0.0023, "centered mean {cmean}");
    }

    #[test]
    fn gaussian_noise_std_matches() {
        let states = DMatrix::zeros(100_000, 1);
        let ts = TimeSeries::new(0.0, 0.1, states, vec!["x1".into()]).unwrap();
        let noisy = add_measurement_noise(&ts, &NoiseSpec::gaussian(0.1, 9)).unwrap();
        let mean = noisy.states.iter().sum::<f64>() / 100_000.0;
        let var = noisy.states.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 100_000.0;
        let sd = var.sqrt();
        assert!((0.097..=0.103).contains(&sd), "sd {sd}");
    }

    #[test]
    fn noise_seed_reproducibility() {
        let ts = simulate_ode(&lv(), &[5.0, 5.0], 0.1, 50).unwrap();
        let a = add_measurement_noise(&ts, &NoiseSpec::gaussian(0.2, 4)).unwrap();
        let b = add_measurement_noise(&ts, &NoiseSpec::gaussian(0.2, 4)).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn euler_and_rk4_agree_to_first_order() {
        let sys = lv();
        let rk = simulate_ode(&sys, &[5.0, 5.0], 0.001, 1000).unwrap();
        let eu = simulate_sde(&sys, &[5.0, 5.0], 0.001, 1000, 0.0, 0).unwrap();
        let mut max_rel: f64 = 0.0;
        for i in 0..=1000 {
            for k in 0..2 {
                let rel = (rk.states[(i, k)] - eu.states[(i, k)]).abs()
                    / rk.states[(i, k)].abs().max(1.0);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 0.01, "max relative gap {max_rel}");
    }

    #[test]
    fn library_row_evaluation_matches_rhs_via_library_matrix() {
        // Push a batch of states through build_library and multiply by the
        // true coefficients; compare against direct rhs evaluation.
        let sys = lv();
        let model = sys.true_coeffs.as_ref().unwrap();
        let states = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 10.0, 10.0, 2.0, 3.0]);
        let lib = build_library(&states, &LibrarySpec::quadratic()).unwrap();
        let pred = &lib.values * &model.coeffs;
        for i in 0..3 {
            let x: Vec<f64> = states.row(i).iter().cloned().collect();
            let f = sys.eval(&x);
            for k in 0..2 {
                assert_relative_eq!(pred[(i, k)], f[k], epsilon = 1e-12);
            }
        }
    }
}
