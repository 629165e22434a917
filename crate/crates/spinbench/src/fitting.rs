//! Nonlinear least-squares extraction of relaxation and decoherence
//! parameters from decay traces and temperature series.
//!
//! All fits run through one damped least-squares (Levenberg-Marquardt)
//! driver with analytic Jacobians, box constraints enforced by projection,
//! up to 200 iterations and a gradient tolerance of 1e-10. One-sigma
//! uncertainties come from the Gauss-Newton covariance scaled by the reduced
//! chi-square. The temperature models are fitted in rate space (Eq.-style
//! rate laws are linear or near-linear there); decay traces are fitted in
//! amplitude space.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::dynamics::{flipflop_summand, FlipFlopModel, SlrModel};
use crate::{Error, Result};

/// Maximum LM iterations.
pub const MAX_ITERATIONS: usize = 200;

/// Infinity-norm gradient tolerance declaring first-order optimality.
pub const GRADIENT_TOL: f64 = 1e-10;

/// Minimum number of trace points accepted by any trace fit.
pub const MIN_TRACE_POINTS: usize = 5;

// ---------------------------------------------------------------------------
// data containers
// ---------------------------------------------------------------------------

/// (delay, amplitude) samples of an echo decay or recovery measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoDecayTrace {
    delays_us: Vec<f64>,
    amplitudes: Vec<f64>,
    sigmas: Option<Vec<f64>>,
}

impl EchoDecayTrace {
    pub fn new(delays_us: Vec<f64>, amplitudes: Vec<f64>, sigmas: Option<Vec<f64>>) -> Result<Self> {
        if delays_us.len() != amplitudes.len() {
            return Err(Error::invalid("trace", "delay/amplitude length mismatch"));
        }
        if let Some(s) = &sigmas {
            if s.len() != delays_us.len() {
                return Err(Error::invalid("trace", "sigma length mismatch"));
            }
            if s.iter().any(|&x| x <= 0.0) {
                return Err(Error::invalid("trace", "sigmas must be > 0"));
            }
        }
        for w in delays_us.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(
                    "trace",
                    format!("delays must be strictly increasing ({} after {})", w[1], w[0]),
                ));
            }
        }
        Ok(EchoDecayTrace { delays_us, amplitudes, sigmas })
    }

    pub fn len(&self) -> usize {
        self.delays_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays_us.is_empty()
    }

    pub fn delays_us(&self) -> &[f64] {
        &self.delays_us
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn sigmas(&self) -> Option<&[f64]> {
        self.sigmas.as_deref()
    }

    /// Read a trace from CSV columns `delay_us, amplitude[, sigma]`, with or
    /// without a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (delays, amps, sigmas) = read_numeric_csv(text, "trace")?;
        EchoDecayTrace::new(delays, amps, sigmas)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// (temperature, time-constant) samples for the temperature-model fits.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSeries {
    pub temperatures_k: Vec<f64>,
    pub time_constants: Vec<f64>,
}

impl TemperatureSeries {
    pub fn new(temperatures_k: Vec<f64>, time_constants: Vec<f64>) -> Result<Self> {
        if temperatures_k.len() != time_constants.len() {
            return Err(Error::invalid("series", "length mismatch"));
        }
        if temperatures_k.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("series", "temperatures must be > 0"));
        }
        if time_constants.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("series", "time constants must be > 0"));
        }
        Ok(TemperatureSeries { temperatures_k, time_constants })
    }

    /// Read from CSV columns `T_K, time_constant`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (t, tc, _) = read_numeric_csv(text, "temperature series")?;
        TemperatureSeries::new(t, tc)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.temperatures_k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures_k.is_empty()
    }
}

type NumericColumns = (Vec<f64>, Vec<f64>, Option<Vec<f64>>);

fn read_numeric_csv(text: &str, what: &'static str) -> Result<NumericColumns> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ss: Vec<f64> = Vec::new();
    let mut saw_sigma = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            None if lineno == 0 => continue, // header row
            None => {
                return Err(Error::Format {
                    what,
                    why: format!("non-numeric data on line {}", lineno + 1),
                })
            }
            Some(nums) => match nums.len() {
                2 => {
                    xs.push(nums[0]);
                    ys.push(nums[1]);
                }
                3 => {
                    xs.push(nums[0]);
                    ys.push(nums[1]);
                    ss.push(nums[2]);
                    saw_sigma = true;
                }
                n => {
                    return Err(Error::Format {
                        what,
                        why: format!("expected 2 or 3 columns, got {n} on line {}", lineno + 1),
                    })
                }
            },
        }
    }
    if saw_sigma && ss.len() != xs.len() {
        return Err(Error::Format { what, why: "sigma column present only on some rows".into() });
    }
    Ok((xs, ys, saw_sigma.then_some(ss)))
}

// ---------------------------------------------------------------------------
// fit results
// ---------------------------------------------------------------------------

/// One fitted parameter with its one-sigma uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub unit: String,
    pub value: f64,
    pub sigma: f64,
    /// True when the optimum sits on a box constraint; the uncertainty is
    /// then not meaningful.
    pub at_bound: bool,
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the (weighted) residual vector at the optimum.
    pub residual_norm: f64,
    /// False when the iteration limit was reached before the gradient,
    /// step-size or cost criteria; parameters are then not authoritative.
    pub converged: bool,
    pub iterations: usize,
    /// Residual count minus parameter count.
    pub dof: usize,
    /// Free-form notes such as the fitted space (rate vs amplitude).
    pub metadata: BTreeMap<String, String>,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.parameter(name).map(|p| p.value).unwrap_or(f64::NAN)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.parameter(name).map(|p| p.sigma).unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

// ---------------------------------------------------------------------------
// the Levenberg-Marquardt driver
// ---------------------------------------------------------------------------

/// A residual model with analytic Jacobian and box constraints.
pub(crate) trait FitModel {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    /// r_k(p), length n_residuals.
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    /// J[k][i] = ∂r_k/∂p_i.
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>);
    /// Inclusive box constraints per parameter.
    fn bounds(&self) -> Vec<(f64, f64)>;
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub at_bound: Vec<bool>,
}

fn cost_of(model: &dyn FitModel, p: &[f64], buf: &mut [f64]) -> f64 {
    model.residuals(p, buf);
    buf.iter().map(|r| r * r).sum::<f64>()
}

fn clamp_params(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (x, &(lo, hi)) in p.iter_mut().zip(bounds) {
        *x = x.clamp(lo, hi);
    }
}

pub(crate) fn levenberg_marquardt(model: &dyn FitModel, x0: &[f64]) -> Result<LmOutcome> {
    let n = model.n_residuals();
    let m = model.n_params();
    if n < m {
        return Err(Error::Fit(format!("{n} residuals cannot determine {m} parameters")));
    }
    let bounds = model.bounds();
    let mut x = x0.to_vec();
    clamp_params(&mut x, &bounds);

    let mut resid = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, m);
    let mut cost = cost_of(model, &x, &mut resid);
    if !cost.is_finite() {
        return Err(Error::Fit("initial residuals are not finite".into()));
    }

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        model.jacobian(&x, &mut jac);
        let r = DVector::from_column_slice(&resid);
        let grad = jac.transpose() * &r;
        if grad.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;

        let mut accepted = false;
        for _ in 0..25 {
            // damped normal equations with projection onto the bounds
            let mut a = jtj.clone();
            for d in 0..m {
                let diag = jtj[(d, d)].max(1e-12);
                a[(d, d)] = jtj[(d, d)] + lambda * diag;
            }
            let step = match a.cholesky() {
                Some(chol) => chol.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut x_trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            clamp_params(&mut x_trial, &bounds);
            let mut r_trial = vec![0.0; n];
            let cost_trial = cost_of(model, &x_trial, &mut r_trial);
            if cost_trial.is_finite() && cost_trial <= cost {
                let step_norm: f64 =
                    x.iter().zip(&x_trial).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let x_norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cost_drop = cost - cost_trial;
                x = x_trial;
                resid = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if step_norm < 1e-12 * (1.0 + x_norm) || cost_drop < 1e-14 * (1.0 + cost) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            // no acceptable step at any damping: a (possibly constrained)
            // local minimum
            converged = converged || !accepted;
            break;
        }
    }

    // Gauss-Newton covariance scaled by reduced chi-square
    model.jacobian(&x, &mut jac);
    let jtj = jac.transpose() * &jac;
    let dof = (n - m).max(1);
    let chi2_red = cost / dof as f64;
    let sigmas = match jtj.clone().try_inverse() {
        Some(cov) => (0..m).map(|k| (cov[(k, k)].max(0.0) * chi2_red).sqrt()).collect(),
        None => vec![f64::NAN; m],
    };
    let at_bound = x
        .iter()
        .zip(&bounds)
        .map(|(&v, &(lo, hi))| {
            let span = (hi - lo).abs();
            let tol = if span.is_finite() { 1e-9 * (1.0 + span) } else { 1e-9 * (1.0 + v.abs()) };
            (v - lo).abs() < tol || (v - hi).abs() < tol
        })
        .collect();

    Ok(LmOutcome {
        params: x,
        sigmas,
        residual_norm: cost.sqrt(),
        converged,
        iterations,
        at_bound,
    })
}

/// Central finite-difference Jacobian, used by tests to validate the
/// analytic ones.
#[cfg(test)]
pub(crate) fn finite_difference_jacobian(
    model: &dyn FitModel,
    p: &[f64],
    out: &mut DMatrix<f64>,
) {
    let n = model.n_residuals();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut pw = p.to_vec();
    for i in 0..model.n_params() {
        let h = 1e-6 * p[i].abs().max(1e-6);
        pw[i] = p[i] + h;
        model.residuals(&pw, &mut hi);
        pw[i] = p[i] - h;
        model.residuals(&pw, &mut lo);
        pw[i] = p[i];
        for k in 0..n {
            out[(k, i)] = (hi[k] - lo[k]) / (2.0 * h);
        }
    }
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

fn weights_of(sigmas: Option<&[f64]>, n: usize) -> Vec<f64> {
    match sigmas {
        Some(s) => s.iter().map(|x| 1.0 / x).collect(),
        None => vec![1.0; n],
    }
}

/// y = offset - amplitude·e^{-τ/t1}; parameters [amplitude, offset, t1].
pub(crate) struct RecoveryModel<'a> {
    pub trace: &'a EchoDecayTrace,
    pub weights: Vec<f64>,
}

impl FitModel for RecoveryModel<'_> {
    fn n_residuals(&self) -> usize {
        self.trace.len()
    }

    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (amp, off, t1) = (p[0], p[1], p[2]);
        for (k, (&tau, &y)) in
            self.trace.delays_us().iter().zip(self.trace.amplitudes()).enumerate()
        {
            out[k] = (off - amp * (-tau / t1).exp() - y) * self.weights[k];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (amp, t1) = (p[0], p[2]);
        for (k, &tau) in self.trace.delays_us().iter().enumerate() {
            let e = (-tau / t1).exp();
            out[(k, 0)] = -e * self.weights[k];
            out[(k, 1)] = self.weights[k];
            out[(k, 2)] = -amp * e * tau / (t1 * t1) * self.weights[k];
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (f64::NEG_INFINITY, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
            (1e-12, f64::INFINITY),
        ]
    }
}

/// E = E₀·exp[-(2τ/t2)^m]; parameters [e0, t2, m].
pub(crate) struct MimsModel<'a> {
    pub trace: &'a EchoDecayTrace,
    pub weights: Vec<f64>,
}

impl MimsModel<'_> {
    fn envelope(tau: f64, t2: f64, m: f64) -> f64 {
        let u = 2.0 * tau / t2;
        if u <= 0.0 {
            1.0
        } else {
            (-u.powf(m)).exp()
        }
    }
}

impl FitModel for MimsModel<'_> {
    fn n_residuals(&self) -> usize {
        self.trace.len()
    }

    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (e0, t2, m) = (p[0], p[1], p[2]);
        for (k, (&tau, &y)) in
            self.trace.delays_us().iter().zip(self.trace.amplitudes()).enumerate()
        {
            out[k] = (e0 * Self::envelope(tau, t2, m) - y) * self.weights[k];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (e0, t2, m) = (p[0], p[1], p[2]);
        for (k, &tau) in self.trace.delays_us().iter().enumerate() {
            let u = 2.0 * tau / t2;
            let env = Self::envelope(tau, t2, m);
            out[(k, 0)] = env * self.weights[k];
            if u > 0.0 {
                let w = u.powf(m);
                out[(k, 1)] = e0 * env * m * w / t2 * self.weights[k];
                out[(k, 2)] = -e0 * env * w * u.ln() * self.weights[k];
            } else {
                out[(k, 1)] = 0.0;
                out[(k, 2)] = 0.0;
            }
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-300, f64::INFINITY), (1e-12, f64::INFINITY), (0.5 + 1e-9, 2.5)]
    }
}

/// rate = A·coth(ΔE/2k_BT) in rate space; parameter [A].
pub(crate) struct SlrRateModel {
    pub rates: Vec<f64>,
    pub coth_values: Vec<f64>,
}

impl SlrRateModel {
    fn new(series: &TemperatureSeries, transition_energy_ghz: f64, c: &PhysicalConstants) -> Self {
        let rates: Vec<f64> = series.time_constants.iter().map(|t| 1.0 / t).collect();
        let coth_values = series
            .temperatures_k
            .iter()
            .map(|&t| {
                let x = transition_energy_ghz / (2.0 * c.boltzmann_ghz_per_k * t);
                if x > 50.0 {
                    1.0
                } else {
                    1.0 + 2.0 / (2.0 * x).exp_m1()
                }
            })
            .collect();
        SlrRateModel { rates, coth_values }
    }
}

impl FitModel for SlrRateModel {
    fn n_residuals(&self) -> usize {
        self.rates.len()
    }

    fn n_params(&self) -> usize {
        1
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (k, (&r, &c)) in self.rates.iter().zip(&self.coth_values).enumerate() {
            out[k] = p[0] * c - r;
        }
    }

    fn jacobian(&self, _p: &[f64], out: &mut DMatrix<f64>) {
        for (k, &c) in self.coth_values.iter().enumerate() {
            out[(k, 0)] = c;
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-300, f64::INFINITY)]
    }
}

/// rate = C·w(T) + D in rate space with fixed Zeeman temperatures;
/// parameters [C, D].
pub(crate) struct FlipFlopRateModel {
    pub rates: Vec<f64>,
    pub w_values: Vec<f64>,
}

impl FlipFlopRateModel {
    fn new(series: &TemperatureSeries, zeeman_temps_k: &[f64; 4]) -> Self {
        let rates: Vec<f64> = series.time_constants.iter().map(|t| 1.0 / t).collect();
        let w_values = series
            .temperatures_k
            .iter()
            .map(|&t| zeeman_temps_k.iter().map(|&ti| flipflop_summand(1.0, ti / t)).sum())
            .collect();
        FlipFlopRateModel { rates, w_values }
    }
}

impl FitModel for FlipFlopRateModel {
    fn n_residuals(&self) -> usize {
        self.rates.len()
    }

    fn n_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (k, (&r, &w)) in self.rates.iter().zip(&self.w_values).enumerate() {
            out[k] = p[0] * w + p[1] - r;
        }
    }

    fn jacobian(&self, _p: &[f64], out: &mut DMatrix<f64>) {
        for (k, &w) in self.w_values.iter().enumerate() {
            out[(k, 0)] = w;
            out[(k, 1)] = 1.0;
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY)]
    }
}

// ---------------------------------------------------------------------------
// public fit operations
// ---------------------------------------------------------------------------

fn require_points(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::pre(format!("{what} needs at least {min} points, got {n}")));
    }
    Ok(())
}

/// Delay at which |y - y_ref| first drops below 1/e of its initial value,
/// used to initialize time constants.
fn one_over_e_crossing(delays: &[f64], values: &[f64], y_ref: f64) -> f64 {
    let gap0 = (values[0] - y_ref).abs();
    if gap0 == 0.0 {
        return delays[delays.len() / 2].max(1e-9);
    }
    for (k, &y) in values.iter().enumerate() {
        if (y - y_ref).abs() <= gap0 / std::f64::consts::E {
            return delays[k].max(1e-9);
        }
    }
    delays[delays.len() - 1].max(1e-9)
}

fn outcome_to_result(
    out: LmOutcome,
    names: &[(&str, &str)],
    n: usize,
    metadata: BTreeMap<String, String>,
) -> FitResult {
    let parameters = names
        .iter()
        .enumerate()
        .map(|(k, &(name, unit))| FitParameter {
            name: name.to_string(),
            unit: unit.to_string(),
            value: out.params[k],
            sigma: out.sigmas[k],
            at_bound: out.at_bound[k],
        })
        .collect();
    FitResult {
        parameters,
        residual_norm: out.residual_norm,
        converged: out.converged,
        iterations: out.iterations,
        dof: n - names.len(),
        metadata,
    }
}

/// Fit y = offset - amplitude·e^{-τ/t1} to an inversion-recovery trace.
/// Delays and t1 are in the trace's delay unit (µs by convention).
pub fn fit_exponential_recovery(trace: &EchoDecayTrace) -> Result<FitResult> {
    require_points(trace.len(), MIN_TRACE_POINTS, "recovery fit")?;
    let y = trace.amplitudes();
    let offset0 = *y.last().unwrap();
    let amp0 = offset0 - y[0];
    let t10 = one_over_e_crossing(trace.delays_us(), y, offset0);
    let model = RecoveryModel { trace, weights: weights_of(trace.sigmas(), trace.len()) };
    let out = levenberg_marquardt(&model, &[amp0, offset0, t10])?;
    if !out.converged {
        return Err(Error::Fit(format!(
            "recovery fit did not converge in {} iterations",
            out.iterations
        )));
    }
    let mut meta = BTreeMap::new();
    meta.insert("model".into(), "offset - amplitude*exp(-delay/t1)".into());
    meta.insert("space".into(), "amplitude".into());
    Ok(outcome_to_result(
        out,
        &[("amplitude", "a.u."), ("offset", "a.u."), ("t1", "delay units")],
        trace.len(),
        meta,
    ))
}

/// Fit the Mims law E = E₀·exp[-(2τ/t2)^m] to a two-pulse echo decay; τ and
/// t2 in µs, m constrained to (0.5, 2.5].
pub fn fit_mims(trace: &EchoDecayTrace) -> Result<FitResult> {
    require_points(trace.len(), MIN_TRACE_POINTS, "Mims fit")?;
    let y = trace.amplitudes();
    let half = trace.len().div_ceil(2);
    if y[..half].iter().any(|&v| v <= 0.0) {
        return Err(Error::pre(
            "Mims fit requires positive amplitudes over at least the first half of the trace",
        ));
    }
    let (y_min, y_max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if y_max - y_min <= 1e-12 * y_max.abs().max(1.0) {
        return Err(Error::pre("trace is flat; no decay to fit"));
    }
    let e00 = y[0].max(y_max * 0.5);
    let t20 = 2.0 * one_over_e_crossing(trace.delays_us(), y, 0.0);
    let model = MimsModel { trace, weights: weights_of(trace.sigmas(), trace.len()) };
    let out = levenberg_marquardt(&model, &[e00, t20, 1.0])?;
    if !out.converged {
        return Err(Error::Fit(format!(
            "Mims fit did not converge in {} iterations",
            out.iterations
        )));
    }
    let mut meta = BTreeMap::new();
    meta.insert("model".into(), "e0*exp(-(2*delay/t2)^m)".into());
    meta.insert("space".into(), "amplitude".into());
    Ok(outcome_to_result(
        out,
        &[("e0", "a.u."), ("t2", "us"), ("m", "dimensionless")],
        trace.len(),
        meta,
    ))
}

/// Fit the direct-process prefactor A of 1/T₁ = A·coth(ΔE/2k_BT) to a
/// (T, T₁) series. Time constants in seconds give A in s⁻¹.
pub fn fit_slr_model(
    series: &TemperatureSeries,
    transition_energy_ghz: f64,
    constants: &PhysicalConstants,
) -> Result<FitResult> {
    require_points(series.len(), 3, "SLR fit")?;
    if transition_energy_ghz <= 0.0 {
        return Err(Error::pre("transition energy must be > 0 GHz"));
    }
    let model = SlrRateModel::new(series, transition_energy_ghz, constants);
    // initialize from the two extreme temperatures
    let last = model.rates.len() - 1;
    let a0 = 0.5
        * (model.rates[0] / model.coth_values[0] + model.rates[last] / model.coth_values[last]);
    let out = levenberg_marquardt(&model, &[a0.max(1e-12)])?;
    if !out.converged {
        return Err(Error::Fit(format!("SLR fit did not converge in {} iterations", out.iterations)));
    }
    let mut meta = BTreeMap::new();
    meta.insert("model".into(), "rate = A*coth(dE/(2*kB*T))".into());
    meta.insert("space".into(), "rate".into());
    meta.insert("transition_energy_ghz".into(), format!("{transition_energy_ghz}"));
    Ok(outcome_to_result(out, &[("A", "1/time units")], series.len(), meta))
}

/// Fit (C, D) of the flip-flop law 1/T₂ = C·Σᵢ[(1+e^{Tᵢ/T})(1+e^{-Tᵢ/T})]⁻¹ + D
/// with the Zeeman temperatures held fixed. Time constants in ms give C and
/// D in ms⁻¹.
pub fn fit_flipflop_model(
    series: &TemperatureSeries,
    zeeman_temperatures_k: &[f64; 4],
) -> Result<FitResult> {
    require_points(series.len(), 3, "flip-flop fit")?;
    if zeeman_temperatures_k.iter().any(|&t| t <= 0.0) {
        return Err(Error::pre("Zeeman temperatures must be > 0 K"));
    }
    let model = FlipFlopRateModel::new(series, zeeman_temperatures_k);

    // initialize from a linear solve at the two extreme temperatures
    let (k_lo, k_hi) = (0, series.len() - 1);
    let (w1, w2) = (model.w_values[k_lo], model.w_values[k_hi]);
    let (r1, r2) = (model.rates[k_lo], model.rates[k_hi]);
    let (c0, d0) = if (w2 - w1).abs() > 1e-15 {
        let c = (r2 - r1) / (w2 - w1);
        (c.max(0.0), (r1 - c * w1).max(0.0))
    } else {
        (0.0, 0.5 * (r1 + r2))
    };

    let out = levenberg_marquardt(&model, &[c0, d0])?;
    if !out.converged {
        return Err(Error::Fit(format!(
            "flip-flop fit did not converge in {} iterations",
            out.iterations
        )));
    }
    let mut meta = BTreeMap::new();
    meta.insert("model".into(), "rate = C*sum_i 1/((1+exp(Ti/T))(1+exp(-Ti/T))) + D".into());
    meta.insert("space".into(), "rate".into());
    meta.insert(
        "zeeman_temperatures_k".into(),
        format!(
            "{},{},{},{}",
            zeeman_temperatures_k[0],
            zeeman_temperatures_k[1],
            zeeman_temperatures_k[2],
            zeeman_temperatures_k[3]
        ),
    );
    Ok(outcome_to_result(out, &[("C", "1/time units"), ("D", "1/time units")], series.len(), meta))
}

// ---------------------------------------------------------------------------
// synthetic series generators (shared by tests and the CLI examples)
// ---------------------------------------------------------------------------

/// Noiseless (T, T₁) series from an SLR model on a temperature grid.
pub fn synthesize_slr_series(
    model: &SlrModel,
    temperatures_k: &[f64],
    constants: &PhysicalConstants,
) -> Result<TemperatureSeries> {
    let t1: Result<Vec<f64>> = temperatures_k
        .iter()
        .map(|&t| crate::dynamics::slr_rate(model, t, constants).map(|r| 1.0 / r))
        .collect();
    TemperatureSeries::new(temperatures_k.to_vec(), t1?)
}

/// Noiseless (T, T₂) series from a flip-flop model on a temperature grid;
/// time constants in ms.
pub fn synthesize_flipflop_series(
    model: &FlipFlopModel,
    temperatures_k: &[f64],
) -> Result<TemperatureSeries> {
    let t2: Result<Vec<f64>> = temperatures_k
        .iter()
        .map(|&t| crate::dynamics::flipflop_rate(model, t).map(|r| 1.0 / r))
        .collect();
    TemperatureSeries::new(temperatures_k.to_vec(), t2?)
}
