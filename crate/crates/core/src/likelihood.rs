//! Log-likelihood, analytic score and Hessian.
//!
//! `L(theta) = sum_i ln(1 - rho tau_i) + sum_s ln f(eps_s(theta))`, where
//! `tau_i` are the eigenvalues of `W`. Derivatives are taken with respect to
//! the flattened parameter vector (see [`ParameterVector::to_flat`]).

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::density::{laplace_curvature_error, DensityFamily, Kernel};
use crate::error::{Error, Result};
use crate::model::{logistic, residuals, Dataset, Layout, ParameterVector};
use crate::weights::{spectrum_and_bounds, RhoInterval, Spectrum};

/// Distance kept from the edge of the admissible rho interval.
pub const RHO_GUARD: f64 = 1e-6;

/// `ln |I - rho W| = sum_i ln(1 - rho tau_i)`.
pub fn log_det_term(rho: f64, spectrum: &Spectrum) -> Result<f64> {
    check_rho(rho, &spectrum.rho_interval(), 0.0)?;
    let mut acc = 0.0;
    for &t in spectrum.eigenvalues() {
        let a = 1.0 - rho * t;
        if a <= 0.0 {
            let r = spectrum.rho_interval();
            return Err(Error::RhoOutOfBounds {
                rho,
                lower: r.lower,
                upper: r.upper,
            });
        }
        acc += a.ln();
    }
    Ok(acc)
}

/// First and second derivatives of [`log_det_term`] in `rho`.
pub fn log_det_derivatives(rho: f64, spectrum: &Spectrum) -> (f64, f64) {
    spectrum.eigenvalues().iter().fold((0.0, 0.0), |(d1, d2), &t| {
        let r = t / (1.0 - rho * t);
        (d1 - r, d2 - r * r)
    })
}

fn check_rho(rho: f64, interval: &RhoInterval, margin: f64) -> Result<()> {
    let guarded = interval.shrink(margin);
    if !rho.is_finite() || !guarded.contains(rho) {
        return Err(Error::RhoOutOfBounds {
            rho,
            lower: guarded.lower,
            upper: guarded.upper,
        });
    }
    Ok(())
}

/// Per-location derivative pieces, in flattened parameter order.
#[derive(Debug, Clone)]
pub struct LocationTerms {
    /// Row `s` is the gradient of `(1/n) ln|I - rho W| + ln f(eps_s)`.
    pub scores: DMatrix<f64>,
    /// Sum over locations of the per-location Hessians, i.e. the full Hessian.
    pub hessian: DMatrix<f64>,
}

/// Likelihood evaluator bound to one dataset and error family. Holds the
/// spectrum of `W` and scratch space; create one per thread.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace<'a> {
    data: &'a Dataset,
    family: DensityFamily,
    kernel: Kernel,
    spectrum: Arc<Spectrum>,
    interval: RhoInterval,
    layout: Layout,
    jac: Vec<f64>,
}

impl<'a> LikelihoodWorkspace<'a> {
    /// Uses the spectrum attached to the data's weight matrix, computing it
    /// when absent.
    pub fn new(data: &'a Dataset, layout: Layout, family: DensityFamily) -> Result<Self> {
        let kernel = family.kernel()?;
        data.check_layout(&layout)?;
        let spectrum = match data.weights().shared_spectrum() {
            Some(s) => s,
            None => Arc::new(spectrum_and_bounds(data.weights())?.0),
        };
        if spectrum.len() != data.n() {
            return Err(Error::Shape(format!(
                "spectrum has {} values for n = {}",
                spectrum.len(),
                data.n()
            )));
        }
        let interval = spectrum.rho_interval();
        Ok(Self {
            data,
            family,
            kernel,
            spectrum,
            interval,
            layout,
            jac: vec![0.0; layout.len()],
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn family(&self) -> DensityFamily {
        self.family
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn rho_interval(&self) -> RhoInterval {
        self.interval
    }

    fn unpack(&self, flat: &[f64]) -> Result<ParameterVector> {
        let theta = ParameterVector::from_flat(self.layout, flat)?;
        check_rho(theta.rho, &self.interval, RHO_GUARD)?;
        Ok(theta)
    }

    fn log_det(&self, rho: f64) -> Result<f64> {
        log_det_term(rho, &self.spectrum)
    }

    pub fn residuals(&self, flat: &[f64]) -> Result<Vec<f64>> {
        residuals(&self.unpack(flat)?, self.data)
    }

    pub fn value(&self, flat: &[f64]) -> Result<f64> {
        let theta = self.unpack(flat)?;
        let eps = residuals(&theta, self.data)?;
        let sum: f64 = eps.iter().map(|&e| self.kernel.log_pdf(e)).sum();
        finite(self.log_det(theta.rho)? + sum, "log-likelihood")
    }

    /// `dL/dtheta`; for Laplace the score uses `sign(0) = 0`.
    pub fn value_and_gradient(&mut self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let theta = self.unpack(flat)?;
        let eps = residuals(&theta, self.data)?;
        let (d1, _) = log_det_derivatives(theta.rho, &self.spectrum);
        let mut grad = vec![0.0; self.layout.len()];
        grad[self.layout.rho_index()] = d1;
        let mut sum = 0.0;
        let mut jac = std::mem::take(&mut self.jac);
        for (s, &e) in eps.iter().enumerate() {
            sum += self.kernel.log_pdf(e);
            let psi = self.kernel.score(e);
            self.location_jacobian(&theta, s, &mut jac);
            for (g, j) in grad.iter_mut().zip(&jac) {
                *g += psi * j;
            }
        }
        self.jac = jac;
        let value = finite(self.log_det(theta.rho)? + sum, "log-likelihood")?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("score"));
        }
        Ok((value, grad))
    }

    pub fn gradient(&mut self, flat: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(flat)?.1)
    }

    /// Analytic Hessian; unavailable for Laplace errors.
    pub fn hessian(&mut self, flat: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.location_terms(flat)?.hessian)
    }

    /// Per-location scores and the full Hessian in one pass.
    pub fn location_terms(&mut self, flat: &[f64]) -> Result<LocationTerms> {
        if !self.family.has_curvature() {
            return Err(laplace_curvature_error());
        }
        let theta = self.unpack(flat)?;
        let eps = residuals(&theta, self.data)?;
        let n = self.data.n();
        let k = self.layout.len();
        let ri = self.layout.rho_index();
        let (d1, d2) = log_det_derivatives(theta.rho, &self.spectrum);
        let mut scores = DMatrix::zeros(n, k);
        let mut hess = DMatrix::zeros(k, k);
        hess[(ri, ri)] = d2;
        let mut jac = std::mem::take(&mut self.jac);
        for (s, &e) in eps.iter().enumerate() {
            let psi = self.kernel.score(e);
            let u = self.kernel.curvature(e).expect("family has curvature");
            self.location_jacobian(&theta, s, &mut jac);
            for a in 0..k {
                scores[(s, a)] = psi * jac[a];
                if jac[a] == 0.0 {
                    continue;
                }
                let ua = u * jac[a];
                for b in 0..=a {
                    hess[(a, b)] += ua * jac[b];
                }
            }
            scores[(s, ri)] += d1 / n as f64;
            self.add_second_derivatives(&theta, s, psi, &mut hess);
        }
        self.jac = jac;
        for a in 0..k {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        if hess.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Hessian"));
        }
        Ok(LocationTerms {
            scores,
            hessian: hess,
        })
    }

    /// `d eps_s / d theta` written into `out`.
    fn location_jacobian(&self, theta: &ParameterVector, s: usize, out: &mut [f64]) {
        let l = &self.layout;
        let x = self.data.x();
        let mut k = 0;
        if l.intercept {
            out[0] = -1.0;
            k = 1;
        }
        if l.linear {
            for c in 0..l.covariates {
                out[k + c] = -x[(s, c)];
            }
        }
        out[l.rho_index()] = -self.data.wy()[s];
        let bias = usize::from(l.neuron_bias);
        for (i, row) in theta.gamma.iter().enumerate() {
            let c = if l.neuron_bias { row[0] } else { 0.0 };
            let slopes = &row[bias..];
            let z: f64 = slopes.iter().enumerate().map(|(j, g)| g * (x[(s, j)] - c)).sum();
            let f0 = logistic(z, 0);
            let f1 = logistic(z, 1);
            let lam = theta.lambda[i];
            out[l.lambda_index(i)] = -f0;
            if l.neuron_bias {
                out[l.gamma_index(i, 0)] = lam * f1 * slopes.iter().sum::<f64>();
            }
            for j in 0..l.covariates {
                out[l.gamma_index(i, bias + j)] = -lam * f1 * (x[(s, j)] - c);
            }
        }
    }

    /// Adds `psi_s * d^2 eps_s / dtheta dtheta'` to the lower triangle.
    fn add_second_derivatives(&self, theta: &ParameterVector, s: usize, psi: f64, hess: &mut DMatrix<f64>) {
        let l = &self.layout;
        let x = self.data.x();
        let q = l.covariates;
        let bias = usize::from(l.neuron_bias);
        let mut add = |a: usize, b: usize, v: f64| {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            hess[(hi, lo)] += psi * v;
        };
        for (i, row) in theta.gamma.iter().enumerate() {
            let c = if l.neuron_bias { row[0] } else { 0.0 };
            let slopes = &row[bias..];
            let dx: Vec<f64> = (0..q).map(|j| x[(s, j)] - c).collect();
            let z: f64 = slopes.iter().zip(&dx).map(|(g, d)| g * d).sum();
            let f1 = logistic(z, 1);
            let f2 = logistic(z, 2);
            let lam = theta.lambda[i];
            let li = l.lambda_index(i);
            let g = |j: usize| l.gamma_index(i, bias + j);
            for j in 0..q {
                add(li, g(j), -f1 * dx[j]);
                for m in 0..=j {
                    add(g(j), g(m), -lam * f2 * dx[j] * dx[m]);
                }
            }
            if l.neuron_bias {
                let ci = l.gamma_index(i, 0);
                let ssum: f64 = slopes.iter().sum();
                add(li, ci, f1 * ssum);
                add(ci, ci, -lam * f2 * ssum * ssum);
                for j in 0..q {
                    add(g(j), ci, lam * (f2 * ssum * dx[j] + f1));
                }
            }
        }
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn log_likelihood(theta: &ParameterVector, data: &Dataset, family: &DensityFamily) -> Result<f64> {
    theta.check()?;
    LikelihoodWorkspace::new(data, theta.layout, *family)?.value(&theta.to_flat())
}

/// Raw gradient `dL/dtheta` in flattened order.
pub fn score_vector(theta: &ParameterVector, data: &Dataset, family: &DensityFamily) -> Result<Vec<f64>> {
    theta.check()?;
    LikelihoodWorkspace::new(data, theta.layout, *family)?.gradient(&theta.to_flat())
}

pub fn hessian_matrix(theta: &ParameterVector, data: &Dataset, family: &DensityFamily) -> Result<DMatrix<f64>> {
    theta.check()?;
    LikelihoodWorkspace::new(data, theta.layout, *family)?.hessian(&theta.to_flat())
}
