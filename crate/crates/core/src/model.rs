//! PSAR-ANN model: `(I - rho W) y = X beta + F(X gamma') lambda + eps`.
//!
//! Each hidden neuron `i` sees the covariates through the logistic function
//! `F(sum_k gamma_ik (x_sk - c_i))`, where the centering offset `c_i` is
//! present only when the layout carries a neuron bias. With one covariate
//! this is exactly `F(gamma_1 (x - gamma_0))`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::weights::WeightMatrix;

/// Shape of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Number of covariates `q` in the data.
    pub covariates: usize,
    /// Number of hidden neurons `h`.
    pub hidden: usize,
    /// Whether the covariates enter linearly through `beta`.
    #[serde(default = "default_true")]
    pub linear: bool,
    /// Constant column in the linear part.
    #[serde(default)]
    pub intercept: bool,
    /// Per-neuron centering offset.
    #[serde(default)]
    pub neuron_bias: bool,
}

fn default_true() -> bool {
    true
}

impl Layout {
    /// The general model: linear part plus `hidden` neurons, no offsets.
    pub fn general(covariates: usize, hidden: usize) -> Self {
        Self {
            covariates,
            hidden,
            linear: true,
            intercept: false,
            neuron_bias: false,
        }
    }

    /// Pure nonlinear single-covariate model used in simulation:
    /// `y = rho W y + lambda F(gamma_1 (x - gamma_0)) + eps`.
    pub fn centered_single_neuron() -> Self {
        Self {
            covariates: 1,
            hidden: 1,
            linear: false,
            intercept: false,
            neuron_bias: true,
        }
    }

    pub fn beta_len(&self) -> usize {
        usize::from(self.intercept) + if self.linear { self.covariates } else { 0 }
    }

    pub fn gamma_row_len(&self) -> usize {
        self.covariates + usize::from(self.neuron_bias)
    }

    pub fn len(&self) -> usize {
        self.beta_len() + 1 + self.hidden * (1 + self.gamma_row_len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rho_index(&self) -> usize {
        self.beta_len()
    }

    pub fn lambda_index(&self, i: usize) -> usize {
        self.beta_len() + 1 + i
    }

    /// Index of entry `j` of neuron `i`'s gamma row (offset first when present).
    pub fn gamma_index(&self, i: usize, j: usize) -> usize {
        self.beta_len() + 1 + self.hidden + i * self.gamma_row_len() + j
    }

    /// Position of the leading slope weight within a gamma row.
    pub fn leading_slope(&self) -> usize {
        usize::from(self.neuron_bias)
    }

    /// Human-readable parameter names in flattening order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        if self.intercept {
            out.push("beta0".to_string());
        }
        if self.linear {
            out.extend((1..=self.covariates).map(|k| format!("beta{k}")));
        }
        out.push("rho".into());
        let single = self.hidden == 1;
        for i in 1..=self.hidden {
            out.push(if single { "lambda".into() } else { format!("lambda{i}") });
        }
        for i in 1..=self.hidden {
            let prefix = if single { "gamma".to_string() } else { format!("gamma{i}_") };
            if self.neuron_bias {
                out.push(format!("{prefix}0"));
            }
            out.extend((1..=self.covariates).map(|k| format!("{prefix}{k}")));
        }
        out
    }
}

/// Model shape plus error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layout: Layout,
    pub family: DensityFamily,
}

impl ModelSpec {
    pub fn new(layout: Layout, family: DensityFamily) -> Result<Self> {
        family.validate()?;
        Ok(Self { layout, family })
    }
}

/// `theta = (beta, rho, lambda, gamma_1, ..., gamma_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: Vec<f64>,
    pub rho: f64,
    pub lambda: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub layout: Layout,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            beta: vec![0.0; layout.beta_len()],
            rho: 0.0,
            lambda: vec![0.0; layout.hidden],
            gamma: vec![vec![0.0; layout.gamma_row_len()]; layout.hidden],
            layout,
        }
    }

    pub fn new(
        layout: Layout,
        beta: Vec<f64>,
        rho: f64,
        lambda: Vec<f64>,
        gamma: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let theta = Self {
            beta,
            rho,
            lambda,
            gamma,
            layout,
        };
        theta.check()?;
        Ok(theta)
    }

    /// Validates block lengths against the layout.
    pub fn check(&self) -> Result<()> {
        let l = &self.layout;
        if self.beta.len() != l.beta_len() {
            return Err(Error::Shape(format!(
                "beta has {} entries, layout expects {}",
                self.beta.len(),
                l.beta_len()
            )));
        }
        if self.lambda.len() != l.hidden || self.gamma.len() != l.hidden {
            return Err(Error::Shape(format!(
                "{} lambdas and {} gamma rows for {} neurons",
                self.lambda.len(),
                self.gamma.len(),
                l.hidden
            )));
        }
        if let Some(row) = self.gamma.iter().find(|r| r.len() != l.gamma_row_len()) {
            return Err(Error::Shape(format!(
                "gamma row has {} entries, layout expects {}",
                row.len(),
                l.gamma_row_len()
            )));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.len());
        out.extend_from_slice(&self.beta);
        out.push(self.rho);
        out.extend_from_slice(&self.lambda);
        for row in &self.gamma {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn from_flat(layout: Layout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, layout expects {}",
                flat.len(),
                layout.len()
            )));
        }
        let nb = layout.beta_len();
        let h = layout.hidden;
        let g = layout.gamma_row_len();
        let gamma_start = nb + 1 + h;
        Ok(Self {
            beta: flat[..nb].to_vec(),
            rho: flat[nb],
            lambda: flat[nb + 1..gamma_start].to_vec(),
            gamma: (0..h)
                .map(|i| flat[gamma_start + i * g..gamma_start + (i + 1) * g].to_vec())
                .collect(),
            layout,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Response, covariates and weights. `W y` is computed once at construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    w: WeightMatrix,
    wy: Vec<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, w: WeightMatrix) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        if x.nrows() != n {
            return Err(Error::Shape(format!("X has {} rows for {n} responses", x.nrows())));
        }
        if w.n() != n {
            return Err(Error::Shape(format!("W is {0}x{0} for {n} responses", w.n())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response y"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates X"));
        }
        let wy = w.mul_vec(&y);
        Ok(Self { y, x, w, wy })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.w
    }

    pub fn wy(&self) -> &[f64] {
        &self.wy
    }

    /// Same data with the spectrum of `W` attached.
    pub fn with_spectrum(self) -> Result<Self> {
        let w = self.w.with_spectrum()?;
        Ok(Self { w, ..self })
    }

    pub(crate) fn check_layout(&self, layout: &Layout) -> Result<()> {
        if layout.covariates != self.covariates() {
            return Err(Error::Shape(format!(
                "layout expects {} covariates, data has {}",
                layout.covariates,
                self.covariates()
            )));
        }
        Ok(())
    }
}

/// Logistic function (`order` 0) and its first two derivatives, evaluated
/// without overflow for any finite `z`.
pub fn logistic(z: f64, order: u8) -> f64 {
    let f = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    match order {
        0 => f,
        1 => f * (1.0 - f),
        2 => f * (1.0 - f) * (1.0 - 2.0 * f),
        _ => panic!("logistic derivative of order {order} is not provided"),
    }
}

/// Argument of neuron `row` at covariates `x` (offset first when `bias`).
#[inline]
pub(crate) fn neuron_input(row: &[f64], x: impl Iterator<Item = f64>, bias: bool) -> f64 {
    if bias {
        let c = row[0];
        row[1..].iter().zip(x).map(|(g, xv)| g * (xv - c)).sum()
    } else {
        row.iter().zip(x).map(|(g, xv)| g * xv).sum()
    }
}

/// `F(X gamma') lambda`, one entry per location.
pub fn nn_component(x: &DMatrix<f64>, theta: &ParameterVector) -> Result<Vec<f64>> {
    theta.check()?;
    if theta.layout.covariates != x.ncols() {
        return Err(Error::Shape(format!(
            "gamma rows expect {} covariates, X has {}",
            theta.layout.covariates,
            x.ncols()
        )));
    }
    let bias = theta.layout.neuron_bias;
    let order = canonical_order(&theta.lambda, &theta.gamma);
    Ok((0..x.nrows())
        .map(|s| {
            order
                .iter()
                .map(|&i| {
                    let z = neuron_input(&theta.gamma[i], x.row(s).iter().copied(), bias);
                    theta.lambda[i] * logistic(z, 0)
                })
                .sum()
        })
        .collect())
}

/// Linear predictor `X_l beta` (intercept column first).
pub fn linear_part(x: &DMatrix<f64>, theta: &ParameterVector) -> Vec<f64> {
    let l = &theta.layout;
    (0..x.nrows())
        .map(|s| {
            let mut acc = 0.0;
            let mut k = 0;
            if l.intercept {
                acc += theta.beta[0];
                k = 1;
            }
            if l.linear {
                acc += x.row(s).iter().zip(&theta.beta[k..]).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        })
        .collect()
}

/// `eps(theta) = (I - rho W) y - X beta - F(X gamma') lambda`.
pub fn residuals(theta: &ParameterVector, data: &Dataset) -> Result<Vec<f64>> {
    theta.check()?;
    data.check_layout(&theta.layout)?;
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameter vector"));
    }
    let lin = linear_part(data.x(), theta);
    let nn = nn_component(data.x(), theta)?;
    let eps: Vec<f64> = (0..data.n())
        .map(|s| data.y[s] - theta.rho * data.wy[s] - lin[s] - nn[s])
        .collect();
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("residuals"));
    }
    Ok(eps)
}

/// Violations of the identification restrictions found by [`canonicalize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Neurons (after reordering) with `lambda_i = 0`.
    pub zero_lambda: Vec<usize>,
    /// Neurons whose leading slope weight is not positive.
    pub nonpositive_leading_gamma: Vec<usize>,
}

impl IdentificationReport {
    pub fn is_clean(&self) -> bool {
        self.zero_lambda.is_empty() && self.nonpositive_leading_gamma.is_empty()
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Neuron indices by decreasing `lambda`, ties by ascending gamma row.
/// Sums over neurons follow this order so that relabeling them cannot change
/// a single bit of the result.
pub(crate) fn canonical_order(lambda: &[f64], gamma: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&a, &b| {
        lambda[b]
            .total_cmp(&lambda[a])
            .then_with(|| lexicographic(&gamma[a], &gamma[b]))
    });
    order
}

/// Puts neurons in canonical order and reports sign or reducibility problems
/// without repairing them.
pub fn canonicalize(theta: &ParameterVector) -> (ParameterVector, IdentificationReport) {
    let order = canonical_order(&theta.lambda, &theta.gamma);
    let out = ParameterVector {
        beta: theta.beta.clone(),
        rho: theta.rho,
        lambda: order.iter().map(|&i| theta.lambda[i]).collect(),
        gamma: order.iter().map(|&i| theta.gamma[i].clone()).collect(),
        layout: theta.layout,
    };
    let lead = theta.layout.leading_slope();
    let report = IdentificationReport {
        zero_lambda: (0..out.lambda.len()).filter(|&i| out.lambda[i] == 0.0).collect(),
        nonpositive_leading_gamma: (0..out.gamma.len())
            .filter(|&i| out.gamma[i].get(lead).is_some_and(|&g| g <= 0.0))
            .collect(),
    };
    (out, report)
}
