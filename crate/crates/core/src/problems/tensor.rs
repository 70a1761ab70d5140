//! Rank-one matrix regression `Z = Φ (x₁ x₂ᵀ)ᵀ + noise`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::Density;
use crate::error::{Error, Result};
use crate::model::{
    BlockLayout, Factor, LinearForm, MultiaffineExpr, MultiaffineModel, ResidualTerm,
};

use super::{
    check_dim, check_ratio, default_noise_seed, heavy_tailed_qbar, relative_frobenius, sample_gnd,
    unit, GeneratorSpec, ProblemInstance,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorParams {
    pub n1: usize,
    pub n2: usize,
    /// Number of regressor rows.
    pub t: usize,
    /// GND exponent of the noise and of the fitted factors.
    pub q: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Fraction of entries of `Z` replaced by gross outliers.
    #[serde(default)]
    pub outlier_ratio: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

fn default_noise() -> f64 {
    0.01
}

impl TensorParams {
    pub fn new(n1: usize, n2: usize, t: usize, q: f64, seed: u64) -> Self {
        Self {
            n1,
            n2,
            t,
            q,
            noise: default_noise(),
            outlier_ratio: 0.0,
            seed,
            noise_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorProblem {
    pub instance: ProblemInstance,
    /// `n1 × n2`.
    pub x_true: DMatrix<f64>,
    /// `t × n2`.
    pub phi: DMatrix<f64>,
    /// `t × n1`.
    pub z: DMatrix<f64>,
}

impl TensorProblem {
    /// `x̂₁ x̂₂ᵀ` of a solution vector.
    pub fn product_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (n1, n2) = self.x_true.shape();
        let a = DVector::from_column_slice(&x.as_slice()[..n1]);
        let b = DVector::from_column_slice(&x.as_slice()[n1..n1 + n2]);
        a * b.transpose()
    }

    pub fn error_of(&self, x: &DVector<f64>) -> f64 {
        relative_frobenius(self.product_of(x).as_slice(), self.x_true.as_slice())
    }

    /// Same data, factors refitted under the GND exponent `q`.
    pub fn model_with_exponent(&self, q: f64) -> Result<MultiaffineModel> {
        let mut model = self.instance.model.clone();
        for f in &mut model.factors {
            f.density = match f.density {
                Density::ScaledGnd { scale, .. } => Density::ScaledGnd { q, scale },
                _ => Density::StandardGnd { q },
            };
        }
        MultiaffineModel::new(model.layout, model.factors, Some(heavy_tailed_qbar(q)))
    }
}

/// Multiplier of the outlier magnitude relative to the RMS of the clean data.
const OUTLIER_SCALE: f64 = 5.0;

/// Rank-one regression with blocks `x1` (length `n1`) and `x2` (length `n2`).
///
/// Residual `(t, h)` is `Z_th - x1_h ⟨Φ_t, x2⟩`; factors are GND(q) with
/// scale `noise` (1 when noise-free). Outliers are uniform on
/// `[-5 r, 5 r]` with `r` the RMS of the clean `Z`. The starting point is
/// drawn at random.
pub fn gen_tensor_regression(p: &TensorParams) -> Result<TensorProblem> {
    check_dim("n1", p.n1, 1)?;
    check_dim("n2", p.n2, 1)?;
    check_dim("t", p.t, 1)?;
    check_ratio("noise", p.noise)?;
    if !(0.0..=1.0).contains(&p.outlier_ratio) {
        return Err(Error::InvalidConfig(format!(
            "outlier_ratio must lie in [0, 1], got {}",
            p.outlier_ratio
        )));
    }
    if !(p.q > 0.0 && p.q.is_finite()) {
        return Err(Error::InvalidConfig(format!("q must be > 0, got {}", p.q)));
    }
    let (n1, n2) = (p.n1, p.n2);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));
    let normal = |rng: &mut ChaCha8Rng, n: usize| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    let x1 = normal(&mut rng, n1);
    let x2 = normal(&mut rng, n2);
    let phi = DMatrix::from_fn(p.t, n2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let init = normal(&mut rng, n1 + n2);
    let x_mat = &x1 * x2.transpose();
    let clean = &phi * x_mat.transpose();
    let r = (clean.norm_squared() / clean.len() as f64).sqrt();
    let z = clean.map(|v| {
        let mut v = v + p.noise * sample_gnd(p.q, &mut noise);
        if p.outlier_ratio > 0.0 && noise.random_bool(p.outlier_ratio) {
            v += noise.random_range(-OUTLIER_SCALE * r..=OUTLIER_SCALE * r);
        }
        v
    });

    let density = Density::ScaledGnd {
        q: p.q,
        scale: if p.noise > 0.0 { p.noise } else { 1.0 },
    };
    let mut layout = BlockLayout::new();
    let b1 = layout.push("x1", n1)?;
    let b2 = layout.push("x2", n2)?;
    let mut factors = Vec::with_capacity(p.t * n1);
    for t in 0..p.t {
        let row: Vec<f64> = phi.row(t).iter().copied().collect();
        for h in 0..n1 {
            let expr = MultiaffineExpr::constant(z[(t, h)]).with(ResidualTerm::new(
                -1.0,
                vec![(b1, unit(n1, h)), (b2, LinearForm::dense(&row))],
            )?);
            factors.push(Factor::new(expr, density.clone()).labeled(format!("z[{t},{h}]")));
        }
    }
    let model = MultiaffineModel::new(layout, factors, Some(heavy_tailed_qbar(p.q)))?;
    let x_true = DVector::from_iterator(n1 + n2, x1.iter().chain(x2.iter()).copied());
    let instance = ProblemInstance {
        model,
        x_true,
        x_init: init,
        spec: GeneratorSpec::TensorRegression(p.clone()),
    };
    Ok(TensorProblem {
        instance,
        x_true: x_mat,
        phi,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::eval_residuals;

    #[test]
    fn gauge_freedom_leaves_residuals_unchanged() {
        let prob = gen_tensor_regression(&TensorParams::new(3, 4, 10, 2.0, 3)).unwrap();
        let x = &prob.instance.x_true;
        let c = -2.7;
        let mut y = x.clone();
        y.rows_mut(0, 3).scale_mut(c);
        y.rows_mut(3, 4).scale_mut(1.0 / c);
        let rx = eval_residuals(&prob.instance.model, x).unwrap();
        let ry = eval_residuals(&prob.instance.model, &y).unwrap();
        assert!((rx - ry).amax() < 1e-12);
        assert!(prob.error_of(&y) < 1e-14);
    }
}
