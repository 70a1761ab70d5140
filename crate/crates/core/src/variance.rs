//! Per-block covariance of the AIRLS estimate.
//!
//! [`estimate_covariance`] combines likelihood-weighted conditional
//! least-squares variances and conditional means over Gaussian samples of
//! the other blocks (law of total variance). [`estimate_covariance_fast`]
//! replaces each per-sample pseudoinverse by a first-order expansion around
//! the one at the estimate. [`resampling_covariance`] re-solves the problem
//! on fresh noise realizations and serves as the reference.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{empirical_var, pinv_symmetric, spectral_norm_symmetric};
use crate::model::{linearize_rows, BlockId, MultiaffineModel};
use crate::solver::{airls_solve, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMethod {
    Prop1,
    Fast,
    Resampling,
}

impl std::str::FromStr for CovarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop1" => Ok(Self::Prop1),
            "fast" => Ok(Self::Fast),
            "resampling" => Ok(Self::Resampling),
            other => Err(Error::InvalidConfig(format!(
                "unknown covariance method `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub block: usize,
    #[serde(with = "matrix_rows")]
    pub sigma: DMatrix<f64>,
    pub method: CovarianceMethod,
    pub n_samples: usize,
    /// `sum_k p(k) / p(x_hat)` for the sampling estimators; `n_samples` for resampling.
    pub effective_weight_sum: f64,
    pub spectral_norm: f64,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// Per-coordinate standard deviation of the Gaussian proposal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerScale {
    /// `max(alpha, 1e-3 (1 + |x_j|))`.
    #[default]
    Default,
    Uniform(f64),
    /// One entry per coordinate of `x`; entries of the estimated block are ignored.
    PerCoordinate(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub scale: SamplerScale,
    pub n_samples: usize,
    pub seed: u64,
    /// Smoothing parameter used for the weights.
    pub alpha: f64,
    pub rtol: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            scale: SamplerScale::Default,
            n_samples: 1000,
            seed: 0,
            alpha: 1e-3,
            rtol: None,
        }
    }
}

impl SamplerConfig {
    fn scales(&self, x_hat: &DVector<f64>) -> Result<Vec<f64>> {
        let s: Vec<f64> = match &self.scale {
            SamplerScale::Default => x_hat
                .iter()
                .map(|v| self.alpha.max(1e-3 * (1.0 + v.abs())))
                .collect(),
            SamplerScale::Uniform(s) => vec![*s; x_hat.len()],
            SamplerScale::PerCoordinate(v) => {
                if v.len() != x_hat.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x_hat.len(),
                        got: v.len(),
                        context: "sampler scale".into(),
                    });
                }
                v.clone()
            }
        };
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "sampler scale must be finite and >= 0".into(),
            ));
        }
        Ok(s)
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::InvalidConfig("N_S ≥ 2 required".into()))
    } else {
        Ok(())
    }
}

/// Independent random stream `k` of the family identified by `seed`.
pub fn sample_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

struct Conditional {
    log_p: f64,
    /// `F^T W F` at the sample.
    gram: DMatrix<f64>,
    /// `F^T W^(1/2) 1`.
    ft_sqrt_w_one: DVector<f64>,
    sigma2: f64,
    mean_weighted_residual: f64,
}

/// Rows used by the estimators: every non-flat factor that depends on some block.
fn estimator_rows(model: &MultiaffineModel) -> Vec<usize> {
    model
        .factors
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.density.is_flat() && !f.expr.is_constant())
        .map(|(h, _)| h)
        .collect()
}

fn conditional(
    model: &MultiaffineModel,
    x: &DVector<f64>,
    block: BlockId,
    rows: &[usize],
    alpha: f64,
) -> Result<Conditional> {
    let sys = linearize_rows(model, x, block, rows);
    let r = sys.residual(model.block(x, block));
    let mut log_p = 0.0;
    let mut sqrt_w = DVector::zeros(rows.len());
    for (k, &h) in rows.iter().enumerate() {
        let d = &model.factors[h].density;
        log_p -= d.neg_log_density(r[k])?;
        sqrt_w[k] = d.row_weight(r[k], alpha, model.qbar)?.sqrt();
    }
    let mut wf = sys.f.clone();
    for (mut row, &s) in wf.row_iter_mut().zip(sqrt_w.iter()) {
        row *= s;
    }
    let weighted: Vec<f64> = r.iter().zip(sqrt_w.iter()).map(|(a, b)| a * b).collect();
    let mean = weighted.iter().sum::<f64>() / weighted.len().max(1) as f64;
    Ok(Conditional {
        log_p,
        gram: wf.transpose() * &wf,
        ft_sqrt_w_one: wf.transpose() * DVector::from_element(rows.len(), 1.0),
        sigma2: empirical_var(&weighted),
        mean_weighted_residual: mean,
    })
}

fn finalize(
    sigma: DMatrix<f64>,
    block: BlockId,
    method: CovarianceMethod,
    n: usize,
    ews: f64,
) -> Result<CovarianceEstimate> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance estimate".into()));
    }
    let sym = (&sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let floored = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let psd = &eig.eigenvectors * floored * eig.eigenvectors.transpose();
    let psd = (&psd + psd.transpose()) * 0.5;
    Ok(CovarianceEstimate {
        block: block.0,
        spectral_norm: spectral_norm_symmetric(&psd),
        sigma: psd,
        method,
        n_samples: n,
        effective_weight_sum: ews,
    })
}

fn sampling_estimate(
    model: &MultiaffineModel,
    x_hat: &DVector<f64>,
    block: BlockId,
    sampler: &SamplerConfig,
    fast: bool,
) -> Result<CovarianceEstimate> {
    model.check_point(x_hat)?;
    model.layout.check_block(block)?;
    check_samples(sampler.n_samples)?;
    if !(sampler.alpha > 0.0) {
        return Err(Error::InvalidConfig("alpha must be > 0".into()));
    }
    let scales = sampler.scales(x_hat)?;
    let rows = estimator_rows(model);
    let own = model.layout.range(block);
    let ni = own.len();

    let at_hat = conditional(model, x_hat, block, &rows, sampler.alpha)?;
    let pinv_hat = pinv_symmetric(&at_hat.gram, sampler.rtol)?;

    let samples: Vec<Result<Conditional>> = (0..sampler.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(sampler.seed, k as u64);
            let mut x = x_hat.clone();
            for j in 0..x.len() {
                if !own.contains(&j) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[j] += scales[j] * z;
                }
            }
            conditional(model, &x, block, &rows, sampler.alpha)
        })
        .collect();

    let mut parts = Vec::with_capacity(samples.len());
    for s in samples {
        parts.push(s?);
    }
    let log_max = parts
        .iter()
        .map(|c| c.log_p)
        .fold(f64::NEG_INFINITY, f64::max);
    if !log_max.is_finite() {
        return Err(Error::ProposalTooWide);
    }
    let weights: Vec<f64> = parts.iter().map(|c| (c.log_p - log_max).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    let relative_log_sum = log_max + wsum.ln() - at_hat.log_p;
    if relative_log_sum < (1e-300_f64).ln() {
        return Err(Error::ProposalTooWide);
    }

    let mut second = DMatrix::zeros(ni, ni);
    let mut first = DVector::zeros(ni);
    for (c, &w) in parts.iter().zip(&weights) {
        let pinv = if fast {
            &pinv_hat - (&c.gram - &at_hat.gram)
        } else {
            pinv_symmetric(&c.gram, sampler.rtol)?
        };
        let m = (&pinv * &c.ft_sqrt_w_one) * c.mean_weighted_residual;
        second += (&pinv * c.sigma2 + &m * m.transpose()) * w;
        first += m * w;
    }
    second /= wsum;
    first /= wsum;
    let sigma = second - &first * first.transpose();
    let method = if fast {
        CovarianceMethod::Fast
    } else {
        CovarianceMethod::Prop1
    };
    finalize(
        sigma,
        block,
        method,
        sampler.n_samples,
        relative_log_sum.exp(),
    )
}

/// Likelihood-weighted law-of-total-variance estimate for block `block`.
pub fn estimate_covariance(
    model: &MultiaffineModel,
    x_hat: &DVector<f64>,
    block: BlockId,
    sampler: &SamplerConfig,
) -> Result<CovarianceEstimate> {
    sampling_estimate(model, x_hat, block, sampler, false)
}

/// As [`estimate_covariance`] with `(F^T W F)^+` at each sample replaced by
/// `A0^+ - (A_k - A0)`, where `A0` is the Gram matrix at the estimate.
pub fn estimate_covariance_fast(
    model: &MultiaffineModel,
    x_hat: &DVector<f64>,
    block: BlockId,
    sampler: &SamplerConfig,
) -> Result<CovarianceEstimate> {
    sampling_estimate(model, x_hat, block, sampler, true)
}

/// Empirical covariance `(1/N) sum x x^T - mean mean^T` of block estimates.
pub fn empirical_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples.len();
    let d = samples.first().map_or(0, |s| s.len());
    let mut second = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    for s in samples {
        second += s * s.transpose();
        mean += s;
    }
    let nf = n.max(1) as f64;
    second /= nf;
    mean /= nf;
    second - &mean * mean.transpose()
}

/// Re-generates the data `n_samples` times, solves each instance and returns
/// the empirical covariance of block `block`.
///
/// `generator(noise_seed)` must return a model with the same layout and an
/// initial point.
pub fn resampling_covariance<G>(
    generator: G,
    block: BlockId,
    n_samples: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<CovarianceEstimate>
where
    G: Fn(u64) -> Result<(MultiaffineModel, DVector<f64>)> + Sync,
{
    check_samples(n_samples)?;
    let estimates: Vec<Result<DVector<f64>>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let noise_seed = sample_rng(seed, k as u64).next_u64();
            let wrap = |e: Error| Error::Resampling {
                index: k,
                source: Box::new(e),
            };
            let (model, x0) = generator(noise_seed).map_err(wrap)?;
            model.layout.check_block(block).map_err(wrap)?;
            let res = airls_solve(&model, &x0, solver).map_err(wrap)?;
            Ok(DVector::from_column_slice(
                &res.x_hat[model.layout.range(block)],
            ))
        })
        .collect();
    let mut xs = Vec::with_capacity(n_samples);
    for e in estimates {
        xs.push(e?);
    }
    finalize(
        empirical_covariance(&xs),
        block,
        CovarianceMethod::Resampling,
        n_samples,
        n_samples as f64,
    )
}
