//! Supply and demand with unknown prices `P` and taxes `tau`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::densities::Density;
use crate::error::Result;
use crate::model::{BlockLayout, Factor, MultiaffineExpr, MultiaffineModel, ResidualTerm};

use super::{check_dim, check_ratio, default_noise_seed, unit, GeneratorSpec, ProblemInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyDemandParams {
    /// Number of time steps.
    pub t: usize,
    /// Number of taxed goods per time step.
    pub n_t: usize,
    /// Relative multiplicative noise on the observed supply and demand.
    pub noise_ratio: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

impl SupplyDemandParams {
    pub fn new(t: usize, n_t: usize, noise_ratio: f64, seed: u64) -> Self {
        Self {
            t,
            n_t,
            noise_ratio,
            seed,
            noise_seed: None,
        }
    }
}

fn supply_density() -> Density {
    // exp(-|S - 100|^0.4 / 200^0.2)
    Density::gnd_with_rate(0.4, 200f64.powf(-0.2))
}

fn price_density() -> Density {
    // exp(-r^2 / 0.02)
    Density::gnd_with_rate(2.0, 50.0)
}

fn demand_density() -> Density {
    // exp(-|r| / sqrt 2)
    Density::gnd_with_rate(1.0, std::f64::consts::FRAC_1_SQRT_2)
}

/// Supply-demand model with blocks `P[t]` (one per time step) and `tau`.
///
/// Supplies and taxes are sampled, prices and demands sit at their
/// conditional modes, and supply and demand are observed with multiplicative
/// noise.
pub fn gen_supply_demand(p: &SupplyDemandParams) -> Result<ProblemInstance> {
    check_dim("t", p.t, 1)?;
    check_dim("n_t", p.n_t, 1)?;
    check_ratio("noise_ratio", p.noise_ratio)?;
    let (t_len, n) = (p.t, p.n_t);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));

    let c = 200f64.powf(-0.2);
    let gamma = Gamma::new(2.5, 1.0).expect("valid shape");
    let supply: Vec<f64> = (0..t_len)
        .map(|_| {
            let g: f64 = gamma.sample(&mut rng);
            let dev = (g / c).powf(2.5);
            if rng.random_bool(0.5) {
                100.0 + dev
            } else {
                100.0 - dev
            }
        })
        .collect();
    let tau_dist = Normal::new(10.0, 3.0).expect("valid normal");
    let tau: Vec<f64> = (0..n).map(|_| tau_dist.sample(&mut rng)).collect();
    let price = |s: f64, j: usize| (20.0 - 0.1 * s) / n as f64 * (1.0 + 0.01 * tau[j]);

    let mut layout = BlockLayout::new();
    let p_blocks: Vec<_> = (0..t_len)
        .map(|t| layout.push(format!("P[{t}]"), n))
        .collect::<Result<_>>()?;
    let tau_block = layout.push("tau", n)?;

    let mut x_true = DVector::zeros(layout.dim());
    let mut factors = Vec::new();
    for t in 0..t_len {
        let mut perturb = |v: f64| {
            let e: f64 = StandardNormal.sample(&mut noise);
            v * (1.0 + p.noise_ratio * e)
        };
        let s_obs = perturb(supply[t]);
        let demand_obs: Vec<f64> = (0..n)
            .map(|j| perturb(200.0 - 10.0 * price(supply[t], j)))
            .collect();

        factors.push(
            Factor::new(MultiaffineExpr::constant(s_obs - 100.0), supply_density())
                .labeled(format!("supply[{t}]")),
        );
        let a = (20.0 - 0.1 * s_obs) / n as f64;
        for j in 0..n {
            x_true[layout.offset(p_blocks[t]) + j] = price(supply[t], j);
            let expr = MultiaffineExpr::constant(a)
                .with(ResidualTerm::linear(0.01 * a, tau_block, unit(n, j)))
                .with(ResidualTerm::linear(-1.0, p_blocks[t], unit(n, j)));
            factors.push(Factor::new(expr, price_density()).labeled(format!("price[{t},{j}]")));
        }
        for (j, d) in demand_obs.iter().enumerate() {
            let expr = MultiaffineExpr::constant(200.0 - d).with(ResidualTerm::linear(
                -10.0,
                p_blocks[t],
                unit(n, j),
            ));
            factors.push(Factor::new(expr, demand_density()).labeled(format!("demand[{t},{j}]")));
        }
    }
    for (j, tj) in tau.iter().enumerate() {
        x_true[layout.offset(tau_block) + j] = *tj;
        let expr = MultiaffineExpr::new(vec![ResidualTerm::linear(1.0, tau_block, unit(n, j))]);
        factors.push(Factor::new(expr, Density::Flat).labeled(format!("tau_prior[{j}]")));
    }
    let model = MultiaffineModel::new(layout, factors, None)?;
    let x_init = DVector::zeros(model.dim());
    Ok(ProblemInstance {
        model,
        x_true,
        x_init,
        spec: GeneratorSpec::SupplyDemand(p.clone()),
    })
}
