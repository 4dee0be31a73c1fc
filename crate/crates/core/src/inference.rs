//! Sandwich covariance, confidence intervals, Moran's I, AIC and the
//! likelihood-ratio test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodWorkspace;
use crate::model::{Dataset, ParameterVector};
use crate::weights::WeightMatrix;

/// Relative eigenvalue floor used when inverting `A`.
const EIGEN_FLOOR: f64 = 1e-10;

/// `A = -(1/n) sum_s H_s`, `B = (1/n) sum_s g_s g_s'` and
/// `Omega = A^-1 B A^-1`, where `g_s`, `H_s` are the gradient and Hessian of
/// `(1/n) ln|I - rho W| + ln f(eps_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub names: Vec<String>,
    pub n: usize,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    /// `sqrt(diag(Omega) / n)`.
    pub se: Vec<f64>,
    /// `A^-1`, reported for normal errors where it equals `Omega` in the limit.
    pub inverse_information: Option<DMatrix<f64>>,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

impl CovarianceEstimate {
    /// Standard errors as if the sample had `n` locations.
    pub fn se_at(&self, n: usize) -> Vec<f64> {
        (0..self.omega_hat.nrows())
            .map(|i| (self.omega_hat[(i, i)].max(0.0) / n as f64).sqrt())
            .collect()
    }

    /// `||A - B||_F / ||A||_F`.
    pub fn information_mismatch(&self) -> f64 {
        (&self.a_hat - &self.b_hat).norm() / self.a_hat.norm()
    }
}

/// Symmetric (pseudo-)inverse with eigenvalues below `EIGEN_FLOOR * max`
/// dropped. Returns the inverse, the condition number and whether any
/// eigenvalue was dropped.
fn symmetric_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, f64, bool) {
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let low = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let floor = EIGEN_FLOOR * top;
    let mut dropped = false;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v.abs() <= floor {
            dropped = true;
            0.0
        } else {
            1.0 / v
        }
    });
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    (symmetrize(inv), top / low, dropped)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn asymptotic_covariance(theta: &ParameterVector, data: &Dataset, family: &DensityFamily) -> Result<CovarianceEstimate> {
    theta.check()?;
    let mut ws = LikelihoodWorkspace::new(data, theta.layout, *family)?;
    let terms = ws.location_terms(&theta.to_flat())?;
    let n = data.n();
    let nf = n as f64;
    let a_hat = symmetrize(-&terms.hessian / nf);
    let b_hat = symmetrize(terms.scores.transpose() * &terms.scores / nf);
    let (a_inv, condition_number, dropped) = symmetric_inverse(&a_hat);
    let mut warnings = Vec::new();
    if dropped {
        warnings.push(format!(
            "A is numerically singular (condition number {condition_number:.3e}); a pseudo-inverse was used"
        ));
    }
    if a_hat.clone().symmetric_eigen().eigenvalues.iter().any(|&v| v < 0.0) {
        warnings.push("A is not positive definite; the point may not be a local maximum".into());
    }
    let omega_hat = symmetrize(&a_inv * &b_hat * &a_inv);
    let se = (0..omega_hat.nrows())
        .map(|i| (omega_hat[(i, i)].max(0.0) / nf).sqrt())
        .collect();
    Ok(CovarianceEstimate {
        names: theta.layout.names(),
        n,
        a_hat,
        b_hat,
        omega_hat,
        se,
        inverse_information: matches!(family, DensityFamily::Normal).then_some(a_inv),
        condition_number,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided normal quantile `z_{(1 + level) / 2}`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 * (1.0 + level)))
}

/// `theta_j +- z * se_j`.
pub fn confidence_intervals(cov: &CovarianceEstimate, theta: &ParameterVector, level: f64) -> Result<Vec<Interval>> {
    let z = normal_critical_value(level)?;
    let est = theta.to_flat();
    if est.len() != cov.se.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} standard errors",
            est.len(),
            cov.se.len()
        )));
    }
    Ok(est
        .iter()
        .zip(&cov.se)
        .zip(&cov.names)
        .map(|((&e, &se), name)| Interval {
            name: name.clone(),
            estimate: e,
            se,
            lower: e - z * se,
            upper: e + z * se,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    #[serde(rename = "I")]
    pub statistic: f64,
    pub expected: f64,
    pub variance: f64,
    pub z: f64,
    pub p: f64,
}

/// Moran's I with its normal-approximation z-score and two-sided p-value.
pub fn morans_i(values: &[f64], w: &WeightMatrix) -> Result<MoranResult> {
    let n = values.len();
    if w.n() != n {
        return Err(Error::Shape(format!("{n} values for a {0}x{0} weight matrix", w.n())));
    }
    if n < 3 {
        return Err(Error::InvalidInput("Moran's I needs at least 3 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = e.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::InvalidInput("Moran's I is undefined for constant values".into()));
    }
    let csr = w.csr();
    let s0: f64 = csr.iter().map(|(_, _, v)| v).sum();
    if s0 == 0.0 {
        return Err(Error::InvalidInput("weight matrix has no links".into()));
    }
    let cross: f64 = csr.iter().map(|(i, j, v)| v * e[i] * e[j]).sum();
    let statistic = n as f64 / s0 * cross / ss;

    let t = csr.transpose();
    let mut s1 = 0.0;
    for (i, j, v) in csr.iter() {
        let s = v + t.get(i, j);
        s1 += s * s;
    }
    for (i, j, v) in t.iter() {
        if csr.get(i, j) == 0.0 {
            s1 += v * v;
        }
    }
    s1 *= 0.5;
    let s2: f64 = (0..n)
        .map(|i| {
            let s = csr.row_sum(i) + t.row_sum(i);
            s * s
        })
        .sum();
    let nf = n as f64;
    let expected = -1.0 / (nf - 1.0);
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected;
    let z = (statistic - expected) / variance.sqrt();
    let p = erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(MoranResult {
        statistic,
        expected,
        variance,
        z,
        p,
    })
}

/// `2k - 2 ln L`.
pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    pub warning: Option<String>,
}

/// `2 (ln L_alt - ln L_null)` against chi-square(`df`). A negative difference
/// means the fits are not nested as claimed; the statistic is then floored at
/// zero and a warning attached.
pub fn lrt(null_loglik: f64, alt_loglik: f64, df: usize) -> Result<LrtResult> {
    if df == 0 {
        return Err(Error::InvalidInput("likelihood-ratio test needs df >= 1".into()));
    }
    if !null_loglik.is_finite() || !alt_loglik.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    let raw = 2.0 * (alt_loglik - null_loglik);
    let warning = (raw < 0.0).then(|| {
        format!("alternative log-likelihood {alt_loglik} is below the null {null_loglik}; statistic set to 0")
    });
    let statistic = raw.max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(LrtResult {
        statistic,
        df,
        p: chi.sf(statistic),
        warning,
    })
}
