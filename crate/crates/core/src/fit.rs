//! Maximum-likelihood fitting: one joint box-constrained solve, or the
//! alternating scheme that switches between the linear block `(rho, beta)`
//! and the network block `(lambda, gamma)` with random restarts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodWorkspace;
use crate::model::{canonicalize, Dataset, IdentificationReport, Layout, ModelSpec, ParameterVector};
use crate::optimize::{maximize_box_constrained, BoxBounds, LbfgsbOptions, OptimResult, Termination};
use crate::weights::RhoInterval;

/// Smallest admissible leading slope of each neuron.
pub const MIN_LEADING_SLOPE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Joint,
    Alternating,
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "alternating" => Ok(Self::Alternating),
            other => Err(Error::InvalidInput(format!("unknown fit mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub mode: FitMode,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Inner-solve stop on the change in log-likelihood.
    pub value_tolerance: f64,
    /// Alternating mode stops once an outer pass gains less than this.
    pub outer_threshold: f64,
    pub max_outer_iterations: usize,
    /// Starting draws of the network block per alternating pass.
    pub restarts: usize,
    /// Network-block starting values are drawn from `(0, start_scale)`.
    pub start_scale: f64,
    /// Distance kept from the edge of the admissible rho interval.
    pub rho_margin: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mode: FitMode::Joint,
            max_iterations: 1000,
            gradient_tolerance: 1e-5,
            value_tolerance: 1e-8,
            outer_threshold: 1e-2,
            max_outer_iterations: 200,
            restarts: 5,
            start_scale: 0.05,
            rho_margin: 1e-3,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient tolerance", self.gradient_tolerance),
            ("value tolerance", self.value_tolerance),
            ("outer threshold", self.outer_threshold),
            ("start scale", self.start_scale),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
        if !(self.rho_margin >= 0.0) {
            return Err(Error::InvalidInput("rho margin must be nonnegative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidInput("at least one restart is required".into()));
        }
        Ok(())
    }

    fn inner(&self) -> LbfgsbOptions {
        LbfgsbOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            value_tolerance: self.value_tolerance,
            ..LbfgsbOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    /// Estimates, in canonical neuron order.
    pub theta: ParameterVector,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Log-likelihood after each outer pass (a single entry in joint mode).
    pub trace: Vec<f64>,
    /// Projected-gradient max-norm at the estimate.
    pub gradient_norm: f64,
    pub identification: IdentificationReport,
    pub options: FitOptions,
}

impl FitResult {
    pub fn parameter_count(&self) -> usize {
        self.theta.layout.len()
    }
}

/// Default box: rho within the admissible interval pulled in by `margin`,
/// leading neuron slopes at least [`MIN_LEADING_SLOPE`], everything else free.
pub fn default_bounds(layout: &Layout, interval: &RhoInterval, margin: f64) -> BoxBounds {
    let mut b = BoxBounds::unbounded(layout.len());
    let r = interval.shrink(margin);
    b.lower[layout.rho_index()] = r.lower;
    b.upper[layout.rho_index()] = r.upper;
    for i in 0..layout.hidden {
        b.lower[layout.gamma_index(i, layout.leading_slope())] = MIN_LEADING_SLOPE;
    }
    b
}

/// Least-squares coefficients of `y` on the linear design with `rho = 0`.
fn least_squares_beta(data: &Dataset, layout: &Layout) -> Result<Vec<f64>> {
    let nb = layout.beta_len();
    if nb == 0 {
        return Ok(Vec::new());
    }
    let n = data.n();
    let x = data.x();
    let off = usize::from(layout.intercept);
    let design = DMatrix::from_fn(n, nb, |s, k| if k < off { 1.0 } else { x[(s, k - off)] });
    let y = DVector::from_column_slice(data.y());
    let svd = design.svd(true, true);
    let beta = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::Singular(format!("least-squares warm start: {e}")))?;
    Ok(beta.as_slice().to_vec())
}

fn draw_network_block(theta: &mut ParameterVector, scale: f64, rng: &mut ChaCha8Rng) {
    let lead = theta.layout.leading_slope();
    for l in &mut theta.lambda {
        *l = rng.random_range(0.0..scale);
    }
    for row in &mut theta.gamma {
        for g in row.iter_mut() {
            *g = rng.random_range(0.0..scale);
        }
        row[lead] = row[lead].max(MIN_LEADING_SLOPE);
    }
}

/// Least-squares `beta`, `rho = 0`, network block drawn from `(0, start_scale)`.
pub fn default_start(data: &Dataset, layout: &Layout, options: &FitOptions, rng: &mut ChaCha8Rng) -> Result<ParameterVector> {
    let mut theta = ParameterVector::zeros(*layout);
    theta.beta = least_squares_beta(data, layout)?;
    draw_network_block(&mut theta, options.start_scale, rng);
    Ok(theta)
}

/// Maximizes over the coordinates in `free`, holding the rest of `full`.
fn maximize_over(
    ws: &mut LikelihoodWorkspace,
    full: &[f64],
    free: &[usize],
    bounds: &BoxBounds,
    options: &LbfgsbOptions,
) -> Result<(Vec<f64>, OptimResult)> {
    let start: Vec<f64> = free.iter().map(|&i| full[i]).collect();
    let sub = BoxBounds::new(
        free.iter().map(|&i| bounds.lower[i]).collect(),
        free.iter().map(|&i| bounds.upper[i]).collect(),
    )?;
    let mut point = full.to_vec();
    let res = maximize_box_constrained(
        |x| {
            for (k, &i) in free.iter().enumerate() {
                point[i] = x[k];
            }
            let (v, g) = ws.value_and_gradient(&point)?;
            Ok((v, free.iter().map(|&i| g[i]).collect()))
        },
        &start,
        &sub,
        options,
    )?;
    let mut out = full.to_vec();
    for (k, &i) in free.iter().enumerate() {
        out[i] = res.x[k];
    }
    Ok((out, res))
}

fn prepare<'a>(data: &'a Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<LikelihoodWorkspace<'a>> {
    options.validate()?;
    spec.family.validate()?;
    LikelihoodWorkspace::new(data, spec.layout, spec.family)
}

fn finish(
    ws: &mut LikelihoodWorkspace,
    spec: &ModelSpec,
    flat: Vec<f64>,
    bounds: &BoxBounds,
    iterations: usize,
    termination: Termination,
    trace: Vec<f64>,
    options: &FitOptions,
) -> Result<FitResult> {
    let (loglik, grad) = ws.value_and_gradient(&flat)?;
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let gradient_norm = bounds.projected_gradient_norm(&flat, &neg);
    let (theta, identification) = canonicalize(&ParameterVector::from_flat(spec.layout, &flat)?);
    Ok(FitResult {
        spec: *spec,
        theta,
        loglik,
        iterations,
        converged: termination.converged(),
        termination,
        trace,
        gradient_norm,
        identification,
        options: *options,
    })
}

/// Single box-constrained maximization over the full parameter vector from
/// the default start.
pub fn fit_joint(data: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let start = default_start(data, &spec.layout, options, &mut rng)?;
    fit_joint_from(data, spec, &start, options)
}

/// [`fit_joint`] from a caller-supplied start, which must lie inside the
/// default bounds.
pub fn fit_joint_from(data: &Dataset, spec: &ModelSpec, start: &ParameterVector, options: &FitOptions) -> Result<FitResult> {
    let mut ws = prepare(data, spec, options)?;
    if start.layout != spec.layout {
        return Err(Error::Shape("start does not match the model layout".into()));
    }
    let bounds = default_bounds(&spec.layout, &ws.rho_interval(), options.rho_margin);
    let all: Vec<usize> = (0..spec.layout.len()).collect();
    let (flat, res) = maximize_over(&mut ws, &start.to_flat(), &all, &bounds, &options.inner())?;
    finish(&mut ws, spec, flat, &bounds, res.iterations, res.termination, vec![res.value], options)
}

/// Alternates between the linear block and the network block until an outer
/// pass gains less than `outer_threshold`. Every network step tries the
/// incumbent and `restarts` fresh draws and keeps the best.
pub fn fit_alternating(data: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let mut ws = prepare(data, spec, options)?;
    let layout = spec.layout;
    let bounds = default_bounds(&layout, &ws.rho_interval(), options.rho_margin);
    let inner = options.inner();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut flat = default_start(data, &layout, options, &mut rng)?.to_flat();

    let linear: Vec<usize> = (0..=layout.rho_index()).collect();
    let network: Vec<usize> = (layout.rho_index() + 1..layout.len()).collect();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut stalled = false;
    let mut termination = Termination::MaxIterations;
    for _ in 0..options.max_outer_iterations {
        let (next, res) = maximize_over(&mut ws, &flat, &linear, &bounds, &inner)?;
        iterations += res.iterations;
        stalled |= res.termination == Termination::MaxIterations;
        flat = next;
        let mut best = res.value;

        if !network.is_empty() {
            let mut candidates = vec![flat.clone()];
            for _ in 0..options.restarts {
                let mut theta = ParameterVector::from_flat(layout, &flat)?;
                draw_network_block(&mut theta, options.start_scale, &mut rng);
                candidates.push(theta.to_flat());
            }
            for cand in candidates {
                let Ok((next, res)) = maximize_over(&mut ws, &cand, &network, &bounds, &inner) else {
                    continue;
                };
                iterations += res.iterations;
                if res.value > best {
                    best = res.value;
                    flat = next;
                }
            }
        }

        let gain = trace.last().map(|&prev| best - prev);
        trace.push(best);
        if gain.is_some_and(|g| g < options.outer_threshold) {
            termination = if stalled {
                Termination::MaxIterations
            } else {
                Termination::ValueChange
            };
            break;
        }
    }
    finish(&mut ws, spec, flat, &bounds, iterations, termination, trace, options)
}

/// Dispatches on `options.mode`.
pub fn fit(data: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    match options.mode {
        FitMode::Joint => fit_joint(data, spec, options),
        FitMode::Alternating => fit_alternating(data, spec, options),
    }
}

/// Convenience wrapper building the model specification from its parts.
pub fn fit_model(data: &Dataset, layout: Layout, family: DensityFamily, options: &FitOptions) -> Result<FitResult> {
    fit(data, &ModelSpec::new(layout, family)?, options)
}
