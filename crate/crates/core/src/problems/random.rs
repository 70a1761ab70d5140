//! Random multiaffine models with GND factors.

use nalgebra::DVector;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::densities::Density;
use crate::error::{Error, Result};
use crate::model::{
    BlockId, BlockLayout, Factor, LinearForm, MultiaffineExpr, MultiaffineModel, ResidualTerm,
};

use super::unit;

#[derive(Clone, Debug, PartialEq)]
pub struct RandomModelParams {
    pub max_blocks: usize,
    pub max_block_size: usize,
    /// Upper bound on the number of scalar unknowns.
    pub max_unknowns: usize,
    pub max_factors: usize,
    /// GND exponents drawn uniformly per factor.
    pub exponents: Vec<f64>,
    pub qbar: u32,
    /// Only affine residuals (at most one block per term).
    pub affine_only: bool,
    /// One affine factor per coordinate, which keeps the minimizer bounded.
    pub anchors: bool,
    pub seed: u64,
}

impl RandomModelParams {
    pub fn new(seed: u64) -> Self {
        Self {
            max_blocks: 4,
            max_block_size: 5,
            max_unknowns: usize::MAX,
            max_factors: 30,
            exponents: vec![0.5, 1.0, 1.5, 2.0],
            qbar: 2,
            affine_only: false,
            anchors: true,
            seed,
        }
    }
}

fn dense_form(n: usize, rng: &mut ChaCha8Rng) -> LinearForm {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    LinearForm::dense(&v)
}

/// Random model and a random starting point.
pub fn random_gnd_model(p: &RandomModelParams) -> Result<(MultiaffineModel, DVector<f64>)> {
    if p.max_blocks == 0 || p.max_block_size == 0 || p.max_unknowns == 0 || p.exponents.is_empty() {
        return Err(Error::InvalidConfig(
            "random model needs at least one block, unknown and exponent".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n_blocks = rng.random_range(1..=p.max_blocks.min(p.max_unknowns));
    let mut layout = BlockLayout::new();
    let mut budget = p.max_unknowns;
    for b in 0..n_blocks {
        let left = n_blocks - b - 1;
        let cap = p.max_block_size.min(budget.saturating_sub(left)).max(1);
        let size = rng.random_range(1..=cap);
        budget = budget.saturating_sub(size);
        layout.push(format!("b{b}"), size)?;
    }
    let ids: Vec<BlockId> = layout.ids().collect();
    let density = |rng: &mut ChaCha8Rng| {
        let q = *p.exponents.choose(rng).expect("nonempty");
        Density::ScaledGnd {
            q,
            scale: rng.random_range(0.5..2.0),
        }
    };

    let mut factors = Vec::new();
    if p.anchors {
        for &b in &ids {
            let n = layout.size(b);
            for k in 0..n {
                if factors.len() >= p.max_factors {
                    break;
                }
                let c: f64 = rng.sample(StandardNormal);
                let expr =
                    MultiaffineExpr::constant(-c).with(ResidualTerm::linear(1.0, b, unit(n, k)));
                factors.push(Factor::new(expr, density(&mut rng)));
            }
        }
    }
    let floor = factors.len() + 1;
    let m = if floor >= p.max_factors {
        p.max_factors
    } else {
        rng.random_range(floor..=p.max_factors)
    };
    while factors.len() < m.max(1) {
        let mut expr = MultiaffineExpr::constant(2.0 * rng.sample::<f64, _>(StandardNormal));
        for _ in 0..rng.random_range(1..=3) {
            let picks: Vec<BlockId> = if p.affine_only {
                vec![*ids.choose(&mut rng).expect("nonempty")]
            } else {
                let k = rng.random_range(1..=ids.len().min(3));
                ids.choose_multiple(&mut rng, k).copied().collect()
            };
            let forms = picks
                .into_iter()
                .map(|b| (b, dense_form(layout.size(b), &mut rng)))
                .collect();
            expr.push(ResidualTerm::new(rng.sample(StandardNormal), forms)?);
        }
        factors.push(Factor::new(expr, density(&mut rng)));
    }
    let model = MultiaffineModel::new(layout, factors, Some(p.qbar))?;
    let x0 = DVector::from_fn(model.dim(), |_, _| rng.sample(StandardNormal));
    Ok((model, x0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn respects_limits() {
        for seed in 0..50 {
            let mut p = RandomModelParams::new(seed);
            p.max_unknowns = 2;
            let (model, x0) = random_gnd_model(&p).unwrap();
            assert!(model.dim() <= 2 && model.dim() >= 1);
            assert!(model.num_factors() <= 30);
            assert_eq!(x0.len(), model.dim());
        }
        for seed in 0..50 {
            let (model, _) = random_gnd_model(&RandomModelParams::new(seed)).unwrap();
            assert!(model.layout.len() <= 4);
            assert!(model.layout.ids().all(|b| model.layout.size(b) <= 5));
            assert_eq!(model.qbar, 2);
        }
    }
}
