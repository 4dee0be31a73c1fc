//! Synthetic data on lattices and seeded Monte Carlo replication.
//!
//! Replicate `i` draws from its own generator seeded with `seed ^ i`, so
//! results do not depend on how replicates are scheduled across threads.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions, FitResult};
use crate::inference::asymptotic_covariance;
use crate::model::{linear_part, nn_component, Dataset, Layout, ModelSpec, ParameterVector};
use crate::weights::{build_lattice_adjacency, row_standardize, BandedLu, CsrMatrix, LatticeSpec, Spectrum, WeightMatrix};

/// Offset mixed into replicate seeds for the fitter's starting draws, keeping
/// them independent of the data stream.
const FIT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lattice: LatticeSpec,
    pub true_theta: ParameterVector,
    pub family: DensityFamily,
    #[serde(default = "default_x_mean")]
    pub x_mean: f64,
    #[serde(default = "default_x_sd")]
    pub x_sd: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_x_mean() -> f64 {
    0.5
}

fn default_x_sd() -> f64 {
    3.0
}

fn default_replicates() -> usize {
    200
}

impl SimConfig {
    /// Queen lattice `side x side`, `y = rho W y + lambda F(gamma1 (x - gamma0)) + eps`
    /// with `(rho, lambda, gamma0, gamma1) = (0.6, 5, 0.5, 1)` and `x ~ N(0.5, 3^2)`.
    pub fn centered_design(side: usize, family: DensityFamily, replicates: usize, seed: u64) -> Result<Self> {
        let layout = Layout::centered_single_neuron();
        let true_theta = ParameterVector::new(layout, vec![], 0.6, vec![5.0], vec![vec![0.5, 1.0]])?;
        Ok(Self {
            lattice: LatticeSpec::queen(side, side)?,
            true_theta,
            family,
            x_mean: default_x_mean(),
            x_sd: default_x_sd(),
            replicates,
            seed,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            layout: self.true_theta.layout,
            family: self.family,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.true_theta.check()?;
        self.family.validate()?;
        if !self.true_theta.is_finite() {
            return Err(Error::NonFinite("true parameters"));
        }
        if !(self.x_sd >= 0.0 && self.x_sd.is_finite() && self.x_mean.is_finite()) {
            return Err(Error::InvalidInput("covariate law needs finite mean and sd >= 0".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("at least one replicate is required".into()));
        }
        Ok(())
    }
}

/// Draws `n` unit-variance errors.
pub fn sample_errors<R: Rng + ?Sized>(family: &DensityFamily, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    family.validate()?;
    Ok(match *family {
        DensityFamily::Normal => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        DensityFamily::ScaledT { df } => {
            let t = StudentT::new(df).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let scale = ((df - 2.0) / df).sqrt();
            (0..n).map(|_| t.sample(rng) * scale).collect()
        }
        DensityFamily::Laplace => {
            let b = std::f64::consts::FRAC_1_SQRT_2;
            (0..n)
                .map(|_| {
                    let u = loop {
                        let u: f64 = rng.random();
                        if u > 0.0 {
                            break u;
                        }
                    };
                    if u < 0.5 {
                        b * (2.0 * u).ln()
                    } else {
                        -b * (2.0 * (1.0 - u)).ln()
                    }
                })
                .collect()
        }
    })
}

/// One generated dataset and the errors injected into it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub eps: Vec<f64>,
}

/// A configuration with its weights, spectrum and factored `I - rho W`
/// prepared once and shared by every replicate.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    w: WeightMatrix,
    lu: Arc<BandedLu>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        let w = row_standardize(&build_lattice_adjacency(&config.lattice)?)?.with_spectrum()?;
        Self::with_weights(config, w)
    }

    /// Uses `w` (with its spectrum attached) instead of building it from
    /// the lattice.
    pub fn with_weights(config: SimConfig, w: WeightMatrix) -> Result<Self> {
        config.validate()?;
        if w.n() != config.lattice.len() {
            return Err(Error::Shape(format!("weights have n = {}, lattice {}", w.n(), config.lattice.len())));
        }
        let w = w.with_spectrum()?;
        let rho = config.true_theta.rho;
        let interval = w.rho_interval().expect("spectrum attached");
        if !interval.contains(rho) {
            return Err(Error::RhoOutOfBounds {
                rho,
                lower: interval.lower,
                upper: interval.upper,
            });
        }
        let n = w.n();
        let a = CsrMatrix::from_rows(
            n,
            (0..n)
                .map(|i| {
                    let mut row: Vec<(usize, f64)> = w.csr().row(i).map(|(j, v)| (j, -rho * v)).collect();
                    row.push((i, 1.0));
                    row
                })
                .collect(),
        )?;
        let lu = Arc::new(BandedLu::factor(&a)?);
        Ok(Self { config, w, lu })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.w
    }

    pub fn spectrum(&self) -> Arc<Spectrum> {
        self.w.shared_spectrum().expect("spectrum attached")
    }

    /// Draws `X` then `eps` from the replicate's generator and solves
    /// `(I - rho W) y = X beta + F(X gamma') lambda + eps`.
    pub fn replicate(&self, index: u64) -> Result<Simulated> {
        let cfg = &self.config;
        let n = self.w.n();
        let q = cfg.true_theta.layout.covariates;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index);
        let law = Normal::new(cfg.x_mean, cfg.x_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let xs: Vec<f64> = (0..n * q).map(|_| law.sample(&mut rng)).collect();
        let x = DMatrix::from_row_slice(n, q, &xs);
        let eps = sample_errors(&cfg.family, n, &mut rng)?;
        let lin = linear_part(&x, &cfg.true_theta);
        let nn = nn_component(&x, &cfg.true_theta)?;
        let rhs: Vec<f64> = (0..n).map(|s| lin[s] + nn[s] + eps[s]).collect();
        let y = self.lu.solve(&rhs)?;
        let data = Dataset::new(y, x, self.w.clone())?;
        Ok(Simulated { data, eps })
    }
}

pub fn generate_dataset(config: &SimConfig, replicate_index: u64) -> Result<Simulated> {
    Simulator::new(config.clone())?.replicate(replicate_index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: u64,
    pub converged: bool,
    pub loglik: Option<f64>,
    pub iterations: usize,
    /// Flattened estimates; absent when the fit failed.
    pub estimates: Option<Vec<f64>>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn included(&self) -> bool {
        self.converged && self.estimates.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub family: DensityFamily,
    pub replicates: Vec<ReplicateRecord>,
    /// Over converged replicates only.
    pub mean: Vec<f64>,
    /// Sample SD over converged replicates; `None` with fewer than two.
    pub sd: Vec<Option<f64>>,
    /// Replicates left out of the moments.
    pub failures: usize,
    /// Asymptotic standard errors at the truth, when requested.
    pub asymptotic_se: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

impl McSummary {
    pub fn included(&self) -> usize {
        self.replicates.len() - self.failures
    }

    /// Per-replicate estimates of one parameter, converged replicates only.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(
            self.replicates
                .iter()
                .filter(|r| r.included())
                .map(|r| r.estimates.as_ref().expect("included")[j])
                .collect(),
        )
    }

    /// One row per replicate followed by `mean` and `sd` footer rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["replicate".to_string(), "converged".into(), "loglik".into(), "iterations".into()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.replicates {
            let mut rec = vec![
                r.index.to_string(),
                r.converged.to_string(),
                fmt(r.loglik),
                r.iterations.to_string(),
            ];
            match &r.estimates {
                Some(e) => rec.extend(e.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), self.names.len())),
            }
            w.write_record(&rec)?;
        }
        let footer = |label: &str, vals: Vec<String>| {
            let mut rec = vec![label.to_string(), String::new(), String::new(), String::new()];
            rec.extend(vals);
            rec
        };
        w.write_record(footer("mean", self.mean.iter().map(|v| v.to_string()).collect()))?;
        w.write_record(footer("sd", self.sd.iter().map(|v| fmt(*v)).collect()))?;
        if let Some(se) = &self.asymptotic_se {
            w.write_record(footer("asymptotic_se", se.iter().map(|v| v.to_string()).collect()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the estimates of `param` for converged replicates from a summary CSV.
pub fn read_mc_column<R: Read>(reader: R, param: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let j = header
        .iter()
        .position(|h| h == param)
        .filter(|&j| j >= 4)
        .ok_or_else(|| Error::InvalidInput(format!("no parameter column '{param}'")))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec[0].parse::<u64>().is_err() || &rec[1] != "true" {
            continue;
        }
        out.push(
            rec[j]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("replicate {}: bad value '{}'", &rec[0], &rec[j])))?,
        );
    }
    Ok(out)
}

fn moments(records: &[ReplicateRecord], k: usize) -> (Vec<f64>, Vec<Option<f64>>) {
    let rows: Vec<&Vec<f64>> = records
        .iter()
        .filter(|r| r.included())
        .map(|r| r.estimates.as_ref().expect("included"))
        .collect();
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    let sd = (0..k)
        .map(|j| {
            (rows.len() >= 2).then(|| {
                let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                (ss / (m - 1.0)).sqrt()
            })
        })
        .collect();
    (mean, sd)
}

fn run_replicate(sim: &Simulator, index: u64, options: &FitOptions) -> ReplicateRecord {
    let opts = FitOptions {
        seed: sim.config.seed ^ index ^ FIT_STREAM,
        ..*options
    };
    let outcome: Result<FitResult> = sim.replicate(index).and_then(|s| fit(&s.data, &sim.config.spec(), &opts));
    match outcome {
        Ok(f) => ReplicateRecord {
            index,
            converged: f.converged,
            loglik: Some(f.loglik),
            iterations: f.iterations,
            estimates: Some(f.theta.to_flat()),
            error: None,
        },
        Err(e) => ReplicateRecord {
            index,
            converged: false,
            loglik: None,
            iterations: 0,
            estimates: None,
            error: Some(e.to_string()),
        },
    }
}

/// Fits every replicate in parallel (on `threads` workers when given) and
/// summarizes the converged ones.
pub fn monte_carlo(config: &SimConfig, options: &FitOptions, threads: Option<usize>) -> Result<McSummary> {
    let sim = Simulator::new(config.clone())?;
    monte_carlo_with(&sim, options, threads)
}

pub fn monte_carlo_with(sim: &Simulator, options: &FitOptions, threads: Option<usize>) -> Result<McSummary> {
    options.validate()?;
    let cfg = &sim.config;
    let m = cfg.replicates as u64;
    let work = || -> Vec<ReplicateRecord> { (0..m).into_par_iter().map(|i| run_replicate(sim, i, options)).collect() };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let failures = records.iter().filter(|r| !r.included()).count();
    if failures == records.len() {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_else(|| "no replicate converged".into());
        return Err(Error::Optimization(format!("every replicate failed: {first}")));
    }
    let layout = cfg.true_theta.layout;
    let (mean, sd) = moments(&records, layout.len());
    let mut notes = Vec::new();
    if !cfg.family.has_curvature() {
        notes.push(format!(
            "covariance output disabled for {} errors: the log-density is not twice differentiable at zero",
            cfg.family.name()
        ));
    }
    if failures > 0 {
        notes.push(format!("{failures} of {} replicates excluded (not converged or failed)", records.len()));
    }
    Ok(McSummary {
        names: layout.names(),
        truth: cfg.true_theta.to_flat(),
        family: cfg.family,
        replicates: records,
        mean,
        sd,
        failures,
        asymptotic_se: None,
        notes,
    })
}

/// Asymptotic standard errors for a sample of size `n_target`, estimated at
/// the true parameters from one large replicate of `sim`.
pub fn asymptotic_se_at_truth(sim: &Simulator, replicate_index: u64, n_target: usize) -> Result<Vec<f64>> {
    let s = sim.replicate(replicate_index)?;
    let cov = asymptotic_covariance(&sim.config.true_theta, &s.data, &sim.config.family)?;
    Ok(cov.se_at(n_target))
}

/// Normal QQ pairs `(Phi^-1((i - 0.5) / m), x_(i))`.
pub fn qq_data(estimates: &[f64]) -> Result<Vec<(f64, f64)>> {
    let m = estimates.len();
    if m < 3 {
        return Err(Error::InvalidInput(format!("QQ data needs at least 3 values, got {m}")));
    }
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("estimates"));
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std = StdNormal::new(0.0, 1.0).expect("standard normal");
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (std.inverse_cdf((i as f64 + 0.5) / m as f64), v))
        .collect())
}

pub fn write_qq_csv<W: Write>(writer: W, pairs: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theoretical", "sample"])?;
    for (t, s) in pairs {
        w.write_record([t.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::residuals;

    fn moments_of(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn error_laws_have_unit_variance() {
        for fam in [DensityFamily::Normal, DensityFamily::ScaledT { df: 8.0 }, DensityFamily::Laplace] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let e = sample_errors(&fam, 1_000_000, &mut rng).unwrap();
            let (mean, var) = moments_of(&e);
            assert!(mean.abs() < 0.005, "{fam:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.02, "{fam:?} var {var}");
        }
    }

    #[test]
    fn same_seed_same_errors() {
        let draw = || sample_errors(&DensityFamily::Laplace, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(draw(), draw());
    }

    #[test]
    fn residuals_at_truth_recover_injected_errors() {
        let cfg = SimConfig::centered_design(12, DensityFamily::scaled_t(4.0).unwrap(), 1, 5).unwrap();
        let s = generate_dataset(&cfg, 0).unwrap();
        let eps = residuals(&cfg.true_theta, &s.data).unwrap();
        for (a, b) in eps.iter().zip(&s.eps) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rho_gives_direct_response() {
        let mut cfg = SimConfig::centered_design(5, DensityFamily::Normal, 1, 2).unwrap();
        cfg.true_theta.rho = 0.0;
        let s = generate_dataset(&cfg, 0).unwrap();
        let g = nn_component(s.data.x(), &cfg.true_theta).unwrap();
        for i in 0..25 {
            assert_eq!(s.data.y()[i], g[i] + s.eps[i]);
        }
    }

    #[test]
    fn covariate_law() {
        let cfg = SimConfig::centered_design(70, DensityFamily::Normal, 1, 11).unwrap();
        let s = generate_dataset(&cfg, 0).unwrap();
        let x: Vec<f64> = s.data.x().column(0).iter().copied().collect();
        let (mean, var) = moments_of(&x);
        let n = x.len() as f64;
        assert!((mean - 0.5).abs() < 3.0 * 3.0 / n.sqrt());
        assert!((var.sqrt() - 3.0).abs() < 3.0 * 3.0 / (2.0 * n).sqrt());
    }

    #[test]
    fn replicates_use_distinct_streams() {
        let cfg = SimConfig::centered_design(4, DensityFamily::Normal, 2, 1).unwrap();
        let sim = Simulator::new(cfg).unwrap();
        assert_ne!(sim.replicate(0).unwrap().eps, sim.replicate(1).unwrap().eps);
        assert_eq!(sim.replicate(1).unwrap().eps, sim.replicate(1).unwrap().eps);
    }

    #[test]
    fn single_replicate_summary() {
        let cfg = SimConfig::centered_design(10, DensityFamily::Normal, 1, 4).unwrap();
        let mc = monte_carlo(&cfg, &FitOptions::default(), Some(1)).unwrap();
        assert_eq!(mc.replicates.len(), 1);
        if mc.failures == 0 {
            assert_eq!(Some(mc.mean.clone()), mc.replicates[0].estimates);
            assert!(mc.sd.iter().all(Option::is_none));
        }
        let mut buf = Vec::new();
        mc.write_csv(&mut buf).unwrap();
        let rho = read_mc_column(buf.as_slice(), "rho").unwrap();
        assert_eq!(rho.len(), mc.included());
    }

    #[test]
    fn qq_pairs() {
        let q = qq_data(&[1.0, -1.0, 0.0]).unwrap();
        assert_eq!(q[1].0, 0.0);
        assert!(q.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        assert!(qq_data(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn qq_slope_estimates_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..5000).map(|_| 2.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let q = qq_data(&v).unwrap();
        let (mt, ms) = (
            q.iter().map(|p| p.0).sum::<f64>() / q.len() as f64,
            q.iter().map(|p| p.1).sum::<f64>() / q.len() as f64,
        );
        let cov: f64 = q.iter().map(|p| (p.0 - mt) * (p.1 - ms)).sum();
        let var: f64 = q.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sd = moments_of(&v).1.sqrt();
        assert!((cov / var - sd).abs() < 0.05 * sd);
    }
}
