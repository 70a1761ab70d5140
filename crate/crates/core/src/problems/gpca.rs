//! Generalized PCA: fitting a union of hyperplanes through their normals.

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
    check_dim, check_ratio, default_noise_seed, heavy_tailed_qbar, sample_gnd, GeneratorSpec,
    ProblemInstance,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpcaParams {
    pub n_subspaces: usize,
    pub dim: usize,
    pub m_points: usize,
    /// GND exponent of the point perturbation and of the data factors.
    pub q: f64,
    /// Scale of the perturbation along the normal.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

fn default_noise() -> f64 {
    0.01
}

impl GpcaParams {
    pub fn new(n_subspaces: usize, dim: usize, m_points: usize, q: f64, seed: u64) -> Self {
        Self {
            n_subspaces,
            dim,
            m_points,
            q,
            noise: default_noise(),
            seed,
            noise_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpcaProblem {
    pub instance: ProblemInstance,
    /// Unit normals, one column per subspace.
    pub normals: DMatrix<f64>,
    /// Anchor vectors, one column per subspace.
    pub anchors: DMatrix<f64>,
    /// Data points, one column per point.
    pub points: DMatrix<f64>,
}

impl GpcaProblem {
    /// Largest angle in degrees between estimated and true normals, under the
    /// best matching of subspaces and ignoring sign and scale.
    pub fn max_angle_deg(&self, x: &DVector<f64>) -> f64 {
        let (d, n) = self.normals.shape();
        let est: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_column_slice(&x.as_slice()[i * d..(i + 1) * d]))
            .collect();
        let angle = |a: &DVector<f64>, b: usize| {
            let b = self.normals.column(b);
            let c = (a.dot(&b).abs() / (a.norm() * b.norm())).min(1.0);
            c.acos().to_degrees()
        };
        let mut best = f64::INFINITY;
        permutations(n, &mut |perm| {
            let worst = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| angle(&est[i], j))
                .fold(0.0, f64::max);
            best = best.min(worst);
        });
        best
    }
}

fn permutations(n: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(k: usize, p: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            visit(p);
            return;
        }
        for j in k..p.len() {
            p.swap(k, j);
            rec(k + 1, p, visit);
            p.swap(k, j);
        }
    }
    rec(0, &mut (0..n).collect(), visit);
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// GPCA model with one block `x[i]` per normal.
///
/// Residual `h` is `Π_i φ_hᵀ x_i` under the standard GND(q). Each normal
/// also gets a Gaussian anchor `⟨a_i, x_i⟩ - 1` with a random unit `a_i`,
/// which fixes its scale. The starting point is `x_i = a_i`.
pub fn gen_gpca(p: &GpcaParams) -> Result<GpcaProblem> {
    check_dim("n_subspaces", p.n_subspaces, 1)?;
    check_dim("dim", p.dim, 2)?;
    check_dim("m_points", p.m_points, 1)?;
    check_ratio("noise", p.noise)?;
    if !(p.q > 0.0 && p.q.is_finite()) {
        return Err(Error::InvalidConfig(format!("q must be > 0, got {}", p.q)));
    }
    if p.n_subspaces > 8 {
        return Err(Error::InvalidConfig(
            "at most 8 subspaces are supported".into(),
        ));
    }
    let (n, d) = (p.n_subspaces, p.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));

    let mut normals = DMatrix::zeros(d, n);
    let mut anchors = DMatrix::zeros(d, n);
    for i in 0..n {
        let b = random_unit(d, &mut rng);
        let a = loop {
            let a = random_unit(d, &mut rng);
            if a.dot(&b).abs() > 0.3 {
                break a;
            }
        };
        normals.set_column(i, &b);
        anchors.set_column(i, &a);
    }
    let mut points = DMatrix::zeros(d, p.m_points);
    for h in 0..p.m_points {
        let b = normals.column(h % n);
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let on_plane = &g - b * b.dot(&g);
        let off = p.noise * sample_gnd(p.q, &mut noise);
        points.set_column(h, &(on_plane + b * off));
    }

    let mut layout = BlockLayout::new();
    let blocks: Vec<_> = (0..n)
        .map(|i| layout.push(format!("x[{i}]"), d))
        .collect::<Result<_>>()?;
    let mut factors = Vec::with_capacity(p.m_points + n);
    for h in 0..p.m_points {
        let phi = points.column(h).iter().copied().collect::<Vec<_>>();
        let term = ResidualTerm::new(
            1.0,
            blocks
                .iter()
                .map(|&b| (b, LinearForm::dense(&phi)))
                .collect(),
        )?;
        factors.push(
            Factor::new(
                MultiaffineExpr::new(vec![term]),
                Density::StandardGnd { q: p.q },
            )
            .labeled(format!("point[{h}]")),
        );
    }
    for (i, &b) in blocks.iter().enumerate() {
        let a: Vec<f64> = anchors.column(i).iter().copied().collect();
        let expr = MultiaffineExpr::constant(-1.0).with(ResidualTerm::linear(
            1.0,
            b,
            LinearForm::dense(&a),
        ));
        factors.push(Factor::new(expr, Density::gaussian()).labeled(format!("anchor[{i}]")));
    }
    let model = MultiaffineModel::new(layout, factors, Some(heavy_tailed_qbar(p.q)))?;
    let x_true = DVector::from_iterator(
        n * d,
        (0..n).flat_map(|i| {
            let b = normals.column(i);
            let s = anchors.column(i).dot(&b);
            b.iter().map(move |v| v / s).collect::<Vec<_>>()
        }),
    );
    let x_init = DVector::from_iterator(n * d, anchors.iter().copied());
    let instance = ProblemInstance {
        model,
        x_true,
        x_init,
        spec: GeneratorSpec::Gpca(p.clone()),
    };
    Ok(GpcaProblem {
        instance,
        normals,
        anchors,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_residuals, validate_model};

    #[test]
    fn points_on_a_single_hyperplane_give_zero_residuals() {
        let mut p = GpcaParams::new(1, 3, 20, 2.0, 9);
        p.noise = 0.0;
        let prob = gen_gpca(&p).unwrap();
        let r = eval_residuals(&prob.instance.model, &prob.instance.x_true).unwrap();
        assert!(r.amax() < 1e-12, "{}", r.amax());
        assert_eq!(prob.max_angle_deg(&prob.instance.x_true), 0.0);
    }

    #[test]
    fn residuals_are_degree_one_per_block() {
        let prob = gen_gpca(&GpcaParams::new(3, 3, 12, 1.0, 1)).unwrap();
        assert!(validate_model(&prob.instance.model).is_ok());
        assert_eq!(prob.instance.model.factors[0].expr.blocks().len(), 3);
    }
}
