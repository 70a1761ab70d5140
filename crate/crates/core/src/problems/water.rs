//! Agricultural water use with latent rain `R` and irradiance `I`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::densities::Density;
use crate::error::Result;
use crate::model::{
    BlockLayout, Factor, LinearForm, MultiaffineExpr, MultiaffineModel, ResidualTerm,
};

use super::{check_dim, check_ratio, default_noise_seed, unit, GeneratorSpec, ProblemInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterParams {
    /// Number of days.
    pub t: usize,
    /// Relative multiplicative noise on the observed pressure, humidity and outflow.
    pub noise_ratio: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

impl WaterParams {
    pub fn new(t: usize, noise_ratio: f64, seed: u64) -> Self {
        Self {
            t,
            noise_ratio,
            seed,
            noise_seed: None,
        }
    }
}

/// Positive-side rate of the rain sign factor; effectively one-sided.
const RAIN_SIGN_POS_RATE: f64 = 1e-12;

fn gauss_002() -> Density {
    // exp(-r^2 / 0.02)
    Density::gnd_with_rate(2.0, 50.0)
}

/// Water model with blocks `R` and `I`, each of length `t`.
///
/// The rain factor `|(R - 3P(1-D)) + 50(|R| - R)| / 3` is not multiaffine.
/// It is replaced by a Laplace factor on `R - 3P(1-D)` plus a one-sided
/// factor with slope 98/3 on negative `R`. The two agree for `R >= 0`, share
/// the slope 99/3 for `R <= -3P(1-D)/99` and differ by the constant
/// `2P(1-D)` there; the spurious mode of the printed density at
/// `R = -3P(1-D)/99` is dropped.
pub fn gen_water(p: &WaterParams) -> Result<ProblemInstance> {
    check_dim("t", p.t, 1)?;
    check_ratio("noise_ratio", p.noise_ratio)?;
    let n = p.t;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));

    let log_p = Normal::new(0.0, 0.1).expect("valid normal");
    let pressure: Vec<f64> = (0..n).map(|_| f64::exp(log_p.sample(&mut rng))).collect();
    let day: Vec<f64> = (1..=n)
        .map(|t| {
            (std::f64::consts::PI / 365.0 * t as f64 / n as f64)
                .sin()
                .powi(2)
        })
        .collect();
    let irr: Vec<f64> = day.iter().map(|d| d + 1.0).collect();
    let rain: Vec<f64> = (0..n).map(|t| 3.0 * pressure[t] * (1.0 - day[t])).collect();
    let mut humidity = vec![0.0; n];
    let mut acc = 0.0;
    for t in 0..n {
        acc = 0.9 * acc + irr[t];
        humidity[t] = 10.0 + acc;
    }
    let outflow: Vec<f64> = (0..n).map(|t| humidity[t] - rain[t] + 2.0).collect();

    let mut perturb = |v: f64| {
        let e: f64 = StandardNormal.sample(&mut noise);
        v * (1.0 + p.noise_ratio * e)
    };
    let p_obs: Vec<f64> = pressure.iter().map(|&v| perturb(v)).collect();
    let h_obs: Vec<f64> = humidity.iter().map(|&v| perturb(v)).collect();
    let w_obs: Vec<f64> = outflow.iter().map(|&v| perturb(v)).collect();

    let mut layout = BlockLayout::new();
    let r_b = layout.push("R", n)?;
    let i_b = layout.push("I", n)?;
    let mut factors = Vec::with_capacity(7 * n);
    for t in 0..n {
        factors.push(
            Factor::new(MultiaffineExpr::constant(p_obs[t].ln()), gauss_002())
                .labeled(format!("pressure[{t}]")),
        );
        factors.push(
            Factor::new(MultiaffineExpr::constant(day[t]), Density::Flat)
                .labeled(format!("day[{t}]")),
        );
        factors.push(
            Factor::new(
                MultiaffineExpr::constant(-day[t] - 1.0).with(ResidualTerm::linear(
                    1.0,
                    i_b,
                    unit(n, t),
                )),
                Density::AsymmetricLaplace {
                    rate_pos: 205.0,
                    rate_neg: 5.0,
                },
            )
            .labeled(format!("irradiance[{t}]")),
        );
        factors.push(
            Factor::new(
                MultiaffineExpr::constant(-3.0 * p_obs[t] * (1.0 - day[t]))
                    .with(ResidualTerm::linear(1.0, r_b, unit(n, t))),
                Density::gnd_with_rate(1.0, 1.0 / 3.0),
            )
            .labeled(format!("rain[{t}]")),
        );
        factors.push(
            Factor::new(
                MultiaffineExpr::new(vec![ResidualTerm::linear(1.0, r_b, unit(n, t))]),
                Density::AsymmetricLaplace {
                    rate_pos: RAIN_SIGN_POS_RATE,
                    rate_neg: 98.0 / 3.0,
                },
            )
            .labeled(format!("rain[{t}]")),
        );
        let decay = LinearForm::sparse(n, (0..=t).map(|k| (k, -(0.9f64.powi((t - k) as i32)))))?;
        factors.push(
            Factor::new(
                MultiaffineExpr::constant(h_obs[t] - 10.0)
                    .with(ResidualTerm::linear(1.0, i_b, decay)),
                gauss_002(),
            )
            .labeled(format!("humidity[{t}]")),
        );
        factors.push(
            Factor::new(
                MultiaffineExpr::constant(w_obs[t] - h_obs[t] - 2.0).with(ResidualTerm::linear(
                    1.0,
                    r_b,
                    unit(n, t),
                )),
                gauss_002(),
            )
            .labeled(format!("outflow[{t}]")),
        );
    }
    let model = MultiaffineModel::new(layout, factors, None)?;
    let x_true = DVector::from_iterator(2 * n, rain.iter().chain(&irr).copied());
    let x_init = DVector::zeros(2 * n);
    Ok(ProblemInstance {
        model,
        x_true,
        x_init,
        spec: GeneratorSpec::Water(p.clone()),
    })
}
