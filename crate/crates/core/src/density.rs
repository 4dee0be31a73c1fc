//! Unit-variance error densities: log-density, score `f'/f` and curvature
//! `d^2 ln f / de^2`.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Error distribution, each with mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DensityFamily {
    Normal,
    /// Student t with `df` degrees of freedom scaled by `sqrt((df - 2) / df)`.
    #[serde(rename = "t")]
    ScaledT { df: f64 },
    /// Laplace with scale `sqrt(2) / 2`.
    Laplace,
}

/// `(log f, f'/f, d^2 ln f)` at one point; curvature is `None` for Laplace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityTerms {
    pub log_pdf: f64,
    pub score: f64,
    pub curvature: Option<f64>,
}

impl DensityFamily {
    pub fn scaled_t(df: f64) -> Result<Self> {
        let f = Self::ScaledT { df };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ScaledT { df } if !(df > 2.0 && df.is_finite()) => Err(Error::InvalidInput(
                format!("t degrees of freedom must exceed 2, got {df}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn has_curvature(&self) -> bool {
        !matches!(self, Self::Laplace)
    }

    pub fn name(&self) -> String {
        match self {
            Self::Normal => "normal".into(),
            Self::ScaledT { df } => format!("t({df})"),
            Self::Laplace => "laplace".into(),
        }
    }

    pub(crate) fn kernel(&self) -> Result<Kernel> {
        self.validate()?;
        Ok(match *self {
            Self::Normal => Kernel::Normal,
            Self::ScaledT { df } => Kernel::T {
                df,
                log_norm: ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * ((df - 2.0) * PI).ln(),
            },
            Self::Laplace => Kernel::Laplace,
        })
    }

    pub fn log_pdf(&self, eps: f64) -> Result<f64> {
        Ok(self.kernel()?.log_pdf(eps))
    }

    pub fn score(&self, eps: f64) -> Result<f64> {
        Ok(self.kernel()?.score(eps))
    }

    pub fn curvature(&self, eps: f64) -> Result<f64> {
        self.kernel()?.curvature(eps).ok_or_else(laplace_curvature_error)
    }
}

pub(crate) fn laplace_curvature_error() -> Error {
    Error::Unsupported(
        "the Laplace log-density is not twice differentiable at zero, so its curvature, \
         the Hessian and the asymptotic covariance are unavailable"
            .into(),
    )
}

/// Log-density, score and curvature of `family` at `eps`.
pub fn density_eval(family: &DensityFamily, eps: f64) -> Result<DensityTerms> {
    if !eps.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    let k = family.kernel()?;
    Ok(DensityTerms {
        log_pdf: k.log_pdf(eps),
        score: k.score(eps),
        curvature: k.curvature(eps),
    })
}

/// Family with its normalizing constant precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Kernel {
    Normal,
    T { df: f64, log_norm: f64 },
    Laplace,
}

impl Kernel {
    #[inline]
    pub fn log_pdf(&self, e: f64) -> f64 {
        match *self {
            Self::Normal => -HALF_LN_2PI - 0.5 * e * e,
            Self::T { df, log_norm } => log_norm - 0.5 * (1.0 + df) * (e * e / (df - 2.0)).ln_1p(),
            Self::Laplace => -0.5 * LN_2 - SQRT_2 * e.abs(),
        }
    }

    #[inline]
    pub fn score(&self, e: f64) -> f64 {
        match *self {
            Self::Normal => -e,
            Self::T { df, .. } => -(1.0 + df) * e / (df - 2.0 + e * e),
            Self::Laplace => {
                if e > 0.0 {
                    -SQRT_2
                } else if e < 0.0 {
                    SQRT_2
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub fn curvature(&self, e: f64) -> Option<f64> {
        match *self {
            Self::Normal => Some(-1.0),
            Self::T { df, .. } => {
                let d = df - 2.0 + e * e;
                Some(-(1.0 + df) * (df - 2.0 - e * e) / (d * d))
            }
            Self::Laplace => None,
        }
    }
}
