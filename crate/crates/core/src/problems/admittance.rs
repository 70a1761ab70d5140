//! Bayesian errors-in-variables estimation of a grid admittance matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::ols_solve;
use crate::densities::Density;
use crate::error::{Error, Result};
use crate::model::{BlockLayout, Factor, MultiaffineExpr, MultiaffineModel, ResidualTerm};

use super::{check_dim, check_ratio, default_noise_seed, unit, GeneratorSpec, ProblemInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceParams {
    pub m_nodes: usize,
    pub n_samples: usize,
    /// Noise standard deviation relative to the RMS of voltages and currents.
    pub noise_level: f64,
    /// Rate of the Laplace prior on each entry of `Y`; zero drops the prior.
    #[serde(default = "default_prior_weight")]
    pub prior_weight: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

pub(crate) fn default_prior_weight() -> f64 {
    DEFAULT_PRIOR_WEIGHT
}

/// Default Laplace rate of the sparsity prior.
pub const DEFAULT_PRIOR_WEIGHT: f64 = 1e3;

impl AdmittanceParams {
    pub fn new(m_nodes: usize, n_samples: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            m_nodes,
            n_samples,
            noise_level,
            prior_weight: DEFAULT_PRIOR_WEIGHT,
            seed,
            noise_seed: None,
        }
    }

    pub fn with_prior_weight(mut self, w: f64) -> Self {
        self.prior_weight = w;
        self
    }
}

#[derive(Clone, Debug)]
pub struct AdmittanceProblem {
    pub instance: ProblemInstance,
    pub y_true: DMatrix<f64>,
    /// `n_samples × m_nodes`.
    pub v_tilde: DMatrix<f64>,
    /// `n_samples × m_nodes`.
    pub i_tilde: DMatrix<f64>,
}

impl AdmittanceProblem {
    /// `Y` block of a solution vector.
    pub fn y_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.y_true.nrows();
        let off = x.len() - m * m;
        DMatrix::from_row_slice(m, m, &x.as_slice()[off..])
    }
}

/// Relative noise used for the density scales of noise-free data.
const NOISE_FLOOR: f64 = 1e-6;
/// Probability of an extra line beyond the spanning tree.
const EXTRA_EDGE_PROB: f64 = 0.15;

/// Random weighted graph Laplacian: a random spanning tree plus a few extra lines.
fn random_laplacian(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(m, m);
    let connect = |y: &mut DMatrix<f64>, a: usize, b: usize, g: f64| {
        y[(a, b)] -= g;
        y[(b, a)] -= g;
        y[(a, a)] += g;
        y[(b, b)] += g;
    };
    for k in 1..m {
        let parent = rng.random_range(0..k);
        let g = rng.random_range(1.0..3.0);
        connect(&mut y, k, parent, g);
    }
    for a in 0..m {
        for b in a + 1..m {
            if y[(a, b)] == 0.0 && rng.random_bool(EXTRA_EDGE_PROB) {
                let g = rng.random_range(1.0..3.0);
                connect(&mut y, a, b, g);
            }
        }
    }
    y
}

fn rms(m: &DMatrix<f64>) -> f64 {
    (m.norm_squared() / m.len() as f64).sqrt()
}

/// Admittance model with one voltage block `V[s]` per sample and the block
/// `Y` (row-major `m × m`), so that the currents of sample `s` are
/// `V[s]ᵀ Y`.
///
/// Voltages are `1 + 0.1 ε`. Gaussian factors use the true noise standard
/// deviation, floored at `1e-6` relative for noise-free data. The solver
/// starts from the measured voltages and the column-wise least-squares fit
/// of `Ĩ` on `Ṽ`.
pub fn gen_admittance(p: &AdmittanceParams) -> Result<AdmittanceProblem> {
    check_dim("m_nodes", p.m_nodes, 2)?;
    check_dim("n_samples", p.n_samples, 1)?;
    check_ratio("noise_level", p.noise_level)?;
    if !(p.prior_weight >= 0.0 && p.prior_weight.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "prior_weight must be finite and >= 0, got {}",
            p.prior_weight
        )));
    }
    let (m, n) = (p.m_nodes, p.n_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));

    let y_true = random_laplacian(m, &mut rng);
    let v = DMatrix::from_fn(n, m, |_, _| {
        1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)
    });
    let i = &v * &y_true;
    let (sv, si) = (p.noise_level * rms(&v), p.noise_level * rms(&i));
    let v_tilde = DMatrix::from_fn(n, m, |r, c| {
        v[(r, c)] + sv * noise.sample::<f64, _>(StandardNormal)
    });
    let i_tilde = DMatrix::from_fn(n, m, |r, c| {
        i[(r, c)] + si * noise.sample::<f64, _>(StandardNormal)
    });

    let gauss = |sigma: f64| Density::ScaledGnd {
        q: 2.0,
        scale: 2.0 * sigma,
    };
    let dv = gauss(p.noise_level.max(NOISE_FLOOR) * rms(&v));
    let di = gauss(p.noise_level.max(NOISE_FLOOR) * rms(&i));

    let mut layout = BlockLayout::new();
    let vb: Vec<_> = (0..n)
        .map(|s| layout.push(format!("V[{s}]"), m))
        .collect::<Result<_>>()?;
    let yb = layout.push("Y", m * m)?;
    let mut factors = Vec::with_capacity(2 * n * m + m * m);
    for s in 0..n {
        for j in 0..m {
            let mut expr = MultiaffineExpr::constant(i_tilde[(s, j)]);
            for k in 0..m {
                expr.push(ResidualTerm::new(
                    -1.0,
                    vec![(vb[s], unit(m, k)), (yb, unit(m * m, k * m + j))],
                )?);
            }
            factors.push(Factor::new(expr, di.clone()).labeled(format!("current[{s},{j}]")));
        }
        for k in 0..m {
            let expr = MultiaffineExpr::constant(-v_tilde[(s, k)]).with(ResidualTerm::linear(
                1.0,
                vb[s],
                unit(m, k),
            ));
            factors.push(Factor::new(expr, dv.clone()).labeled(format!("voltage[{s},{k}]")));
        }
    }
    if p.prior_weight > 0.0 {
        for e in 0..m * m {
            let expr = MultiaffineExpr::new(vec![ResidualTerm::linear(1.0, yb, unit(m * m, e))]);
            factors.push(
                Factor::new(expr, Density::gnd_with_rate(1.0, p.prior_weight))
                    .labeled(format!("sparsity[{e}]")),
            );
        }
    }
    let model = MultiaffineModel::new(layout, factors, None)?;
    let row_major = |mat: &DMatrix<f64>| mat.transpose().as_slice().to_vec();
    let x_true = DVector::from_iterator(
        n * m + m * m,
        row_major(&v).into_iter().chain(row_major(&y_true)),
    );
    let mut y_ls = DMatrix::zeros(m, m);
    for j in 0..m {
        let col = ols_solve(&v_tilde, &i_tilde.column(j).into_owned())?;
        y_ls.set_column(j, &col);
    }
    let x_init = DVector::from_iterator(
        n * m + m * m,
        row_major(&v_tilde).into_iter().chain(row_major(&y_ls)),
    );
    let instance = ProblemInstance {
        model,
        x_true,
        x_init,
        spec: GeneratorSpec::Admittance(p.clone()),
    };
    Ok(AdmittanceProblem {
        instance,
        y_true,
        v_tilde,
        i_tilde,
    })
}
