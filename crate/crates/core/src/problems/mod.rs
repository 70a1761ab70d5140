//! Seeded synthetic problem generators.
//!
//! Every generator draws its ground truth from `seed` and its observation
//! noise from `noise_seed`, so the same truth can be re-observed under fresh
//! noise.

mod admittance;
mod gpca;
mod random;
mod supply_demand;
mod sysid;
mod tensor;
mod water;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearForm, MultiaffineModel, ProblemDocument};
use crate::variance::sample_rng;

pub use admittance::{gen_admittance, AdmittanceParams, AdmittanceProblem};
pub use gpca::{gen_gpca, GpcaParams, GpcaProblem};
pub use random::{random_gnd_model, RandomModelParams};
pub use supply_demand::{gen_supply_demand, SupplyDemandParams};
pub use sysid::{gen_eiv_sysid, SysidParams, SysidProblem};
pub use tensor::{gen_tensor_regression, TensorParams, TensorProblem};
pub use water::{gen_water, WaterParams};

/// A generated model with its ground truth and starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub model: MultiaffineModel,
    pub x_true: DVector<f64>,
    pub x_init: DVector<f64>,
    pub spec: GeneratorSpec,
}

impl ProblemInstance {
    /// Problem file carrying the initial point and the generator parameters.
    pub fn to_document(&self) -> ProblemDocument {
        ProblemDocument {
            model: self.model.clone(),
            x_init: Some(self.x_init.as_slice().to_vec()),
            generator: serde_json::to_value(&self.spec).ok(),
        }
    }

    pub fn truth_json(&self) -> Result<String> {
        let blocks: Vec<serde_json::Value> = self
            .model
            .layout
            .ids()
            .map(|b| {
                serde_json::json!({
                    "name": self.model.layout.name(b),
                    "values": &self.x_true.as_slice()[self.model.layout.range(b)],
                })
            })
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "x_true": self.x_true.as_slice(),
            "blocks": blocks,
            "generator": self.spec,
        }))?)
    }
}

/// Parameters of any generator; stored in problem files to allow re-generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum GeneratorSpec {
    SupplyDemand(SupplyDemandParams),
    Water(WaterParams),
    EivSysid(SysidParams),
    Admittance(AdmittanceParams),
    Gpca(GpcaParams),
    TensorRegression(TensorParams),
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<ProblemInstance> {
        match self {
            GeneratorSpec::SupplyDemand(p) => gen_supply_demand(p),
            GeneratorSpec::Water(p) => gen_water(p),
            GeneratorSpec::EivSysid(p) => Ok(gen_eiv_sysid(p)?.instance),
            GeneratorSpec::Admittance(p) => Ok(gen_admittance(p)?.instance),
            GeneratorSpec::Gpca(p) => Ok(gen_gpca(p)?.instance),
            GeneratorSpec::TensorRegression(p) => Ok(gen_tensor_regression(p)?.instance),
        }
    }

    /// Same ground truth, observation noise drawn from `noise_seed`.
    pub fn with_noise_seed(&self, noise_seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            GeneratorSpec::SupplyDemand(p) => p.noise_seed = Some(noise_seed),
            GeneratorSpec::Water(p) => p.noise_seed = Some(noise_seed),
            GeneratorSpec::EivSysid(p) => p.noise_seed = Some(noise_seed),
            GeneratorSpec::Admittance(p) => p.noise_seed = Some(noise_seed),
            GeneratorSpec::Gpca(p) => p.noise_seed = Some(noise_seed),
            GeneratorSpec::TensorRegression(p) => p.noise_seed = Some(noise_seed),
        }
        s
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::SupplyDemand(_) => "supply_demand",
            GeneratorSpec::Water(_) => "water",
            GeneratorSpec::EivSysid(_) => "eiv_sysid",
            GeneratorSpec::Admittance(_) => "admittance",
            GeneratorSpec::Gpca(_) => "gpca",
            GeneratorSpec::TensorRegression(_) => "tensor_regression",
        }
    }
}

/// Noise seed used when none is given.
pub(crate) fn default_noise_seed(seed: u64) -> u64 {
    sample_rng(seed, 0x006e_6f69_7365).next_u64()
}

pub(crate) fn check_dim(name: &str, v: usize, min: usize) -> Result<()> {
    if v < min {
        Err(Error::InvalidConfig(format!(
            "{name} must be >= {min}, got {v}"
        )))
    } else {
        Ok(())
    }
}

pub(crate) fn check_ratio(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        Err(Error::InvalidConfig(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    } else {
        Ok(())
    }
}

/// Draw from the standard GND with exponent `q`, `p(y) ∝ exp(-q |y|^q)`.
///
/// `q |y|^q` is Gamma(1/q, 1) distributed, which gives an exact sampler.
pub fn sample_gnd(q: f64, rng: &mut impl Rng) -> f64 {
    let g: f64 = Gamma::new(1.0 / q, 1.0).expect("q > 0").sample(rng);
    let y = (g / q).powf(1.0 / q);
    if rng.random_bool(0.5) {
        y
    } else {
        -y
    }
}

/// Relative root-mean-square error `||est - truth|| / ||truth||`.
pub fn rrms(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Relative Frobenius error of two equally shaped matrices stored flat.
pub fn relative_frobenius(estimate: &[f64], truth: &[f64]) -> f64 {
    rrms(estimate, truth)
}

/// `qbar` of at least 2, so that Laplace-type factors are reweighted.
///
/// With `qbar = 1` a `q = 1` factor has constant weight and its surrogate
/// `r^2 + alpha` no longer tracks `|r|`.
pub fn heavy_tailed_qbar(max_q: f64) -> u32 {
    (max_q.ceil() as u32).max(2)
}

pub(crate) fn unit(dim: usize, k: usize) -> LinearForm {
    LinearForm::unit(dim, k, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gnd_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gnd(2.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Γ(3/q) / (q^(2/q) Γ(1/q)) = 1/4 for q = 2
        assert!((var - 0.25).abs() < 0.01, "{var}");
        let l1: Vec<f64> = (0..n).map(|_| sample_gnd(1.0, &mut rng)).collect();
        let mean_abs = l1.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        assert!((mean_abs - 1.0).abs() < 0.02, "{mean_abs}");
    }

    #[test]
    fn rrms_definition() {
        assert_eq!(rrms(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
        assert!((rrms(&[2.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
