//! Comparators: zeroth-order gradient descent, exhaustive grid search and
//! ordinary least squares.

use std::ops::ControlFlow;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZogdConfig {
    pub step0: f64,
    pub decay: f64,
    /// Smoothing radius; `None` uses `1e-4 (1 + ||x||)` at the current iterate.
    pub mu: Option<f64>,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ZogdConfig {
    fn default() -> Self {
        Self {
            step0: 1.0,
            decay: 0.99995,
            mu: None,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

impl ZogdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return Err(Error::InvalidConfig("smoothing radius must be > 0".into()));
            }
        }
        if !self.step0.is_finite() {
            return Err(Error::InvalidConfig("step0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZogdPoint {
    pub iter: usize,
    pub f_best: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZogdResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    /// Best objective seen after each iteration.
    pub trace: Vec<ZogdPoint>,
    pub iterations: usize,
    /// True if a non-finite objective value stopped the run.
    pub halted: bool,
}

/// Two-point zeroth-order descent with step `step0 * decay^k`.
pub fn zogd_minimize(
    objective: impl FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    cfg: &ZogdConfig,
) -> Result<ZogdResult> {
    zogd_minimize_observed(objective, x0, cfg, |_, _, _| ControlFlow::Continue(()))
}

/// [`zogd_minimize`] with an observer called after every iteration with the
/// iteration count, the best point and its value. Returning `Break` stops the run.
pub fn zogd_minimize_observed(
    mut objective: impl FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    cfg: &ZogdConfig,
    mut observer: impl FnMut(usize, &DVector<f64>, f64) -> ControlFlow<()>,
) -> Result<ZogdResult> {
    cfg.validate()?;
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = x0.len();
    let mut x = x0.clone();
    let mut best = (x0.clone(), f0);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut step = cfg.step0;
    let mut halted = false;
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        let mut u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = u.norm();
        if norm == 0.0 {
            continue;
        }
        u /= norm;
        let mu = cfg.mu.unwrap_or(1e-4 * (1.0 + x.norm()));
        let fp = objective(&(&x + &u * mu));
        let fm = objective(&(&x - &u * mu));
        if !fp.is_finite() || !fm.is_finite() {
            halted = true;
            break;
        }
        x.axpy(-step * (fp - fm) / (2.0 * mu), &u, 1.0);
        step *= cfg.decay;
        iterations = k + 1;

        let fx = objective(&x);
        if !fx.is_finite() {
            halted = true;
            break;
        }
        if fx < best.1 {
            best = (x.clone(), fx);
        }
        trace.push(ZogdPoint {
            iter: iterations,
            f_best: best.1,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        if observer(iterations, &best.0, best.1).is_break() {
            break;
        }
    }
    Ok(ZogdResult {
        x_best: best.0.as_slice().to_vec(),
        f_best: best.1,
        trace,
        iterations,
        halted,
    })
}

pub const GRID_NODE_LIMIT: f64 = 1e8;

/// Exhaustive search over a regular grid with `steps[d]` nodes per dimension
/// (endpoints included). Ties go to the lowest flat index; non-finite values are skipped.
pub fn grid_search_minimize(
    objective: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &[(f64, f64)],
    steps: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let dim = bounds.len();
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidConfig(format!(
            "grid search supports 1 to 3 dimensions, got {dim}"
        )));
    }
    if steps.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: steps.len(),
            context: "grid steps".into(),
        });
    }
    if steps.contains(&0)
        || bounds
            .iter()
            .any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
    {
        return Err(Error::InvalidConfig(
            "grid needs finite lo <= hi and at least one node per dimension".into(),
        ));
    }
    let nodes: f64 = steps.iter().map(|&s| s as f64).product();
    if nodes > GRID_NODE_LIMIT {
        return Err(Error::GridBudget {
            nodes,
            limit: GRID_NODE_LIMIT,
        });
    }
    let total = nodes as usize;
    let coord = |d: usize, k: usize| {
        let (lo, hi) = bounds[d];
        if steps[d] == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (steps[d] - 1) as f64
        }
    };
    let point = |mut idx: usize, buf: &mut [f64]| {
        for d in (0..dim).rev() {
            buf[d] = coord(d, idx % steps[d]);
            idx /= steps[d];
        }
    };

    const CHUNK: usize = 1 << 14;
    let n_chunks = total.div_ceil(CHUNK);
    let best = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0.0; dim];
            let mut best = (f64::INFINITY, usize::MAX);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                point(idx, &mut buf);
                let v = objective(&buf);
                if v < best.0 {
                    best = (v, idx);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    if best.1 == usize::MAX {
        return Err(Error::NonFinite(
            "objective is non-finite at every grid node".into(),
        ));
    }
    let mut x = vec![0.0; dim];
    point(best.1, &mut x);
    Ok((x, best.0))
}

/// Unweighted minimum-norm least squares.
pub fn ols_solve(f: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    weighted_lstsq(f, c, &DVector::from_element(f.nrows(), 1.0), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zogd_quadratic() {
        let res = zogd_minimize(
            |x| (x[0] - 3.0).powi(2),
            &DVector::zeros(1),
            &ZogdConfig::default(),
        )
        .unwrap();
        assert!((res.x_best[0] - 3.0).abs() <= 0.05, "{}", res.x_best[0]);
        assert!(res.trace.windows(2).all(|w| w[1].f_best <= w[0].f_best));
    }

    #[test]
    fn zogd_constant_objective() {
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let res = zogd_minimize(
            |_| 4.0,
            &x0,
            &ZogdConfig {
                max_iters: 50,
                ..ZogdConfig::default()
            },
        )
        .unwrap();
        assert_eq!(res.x_best, vec![1.0, -2.0]);
        assert!(res.trace.iter().all(|p| p.f_best == 4.0));
    }

    #[test]
    fn zogd_halts_on_non_finite() {
        let res = zogd_minimize(
            |x| {
                if x[0] > 0.5 {
                    f64::NAN
                } else {
                    (x[0] - 3.0).powi(2)
                }
            },
            &DVector::zeros(1),
            &ZogdConfig::default(),
        )
        .unwrap();
        assert!(res.halted);
        assert!(res.f_best.is_finite());
        assert!(ZogdConfig {
            decay: 1.0,
            ..ZogdConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn grid_examples() {
        let (x, _) =
            grid_search_minimize(|x| (x[0] - 3.0).powi(2), &[(0.0, 10.0)], &[1001]).unwrap();
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-12);
        let steps = 200_000;
        let (x, _) = grid_search_minimize(
            |x| x[0].abs() + 2.0 * (x[0] - 10.0).abs(),
            &[(-5.0, 15.0)],
            &[steps],
        )
        .unwrap();
        assert!((x[0] - 10.0).abs() <= 20.0 / (steps - 1) as f64);
        assert!(grid_search_minimize(|_| 0.0, &[(0.0, 1.0); 4], &[2; 4]).is_err());
        assert!(matches!(
            grid_search_minimize(|_| 0.0, &[(0.0, 1.0); 3], &[1000, 1000, 1000]),
            Err(Error::GridBudget { .. })
        ));
    }

    #[test]
    fn grid_ties_pick_lowest_index() {
        let (x, v) =
            grid_search_minimize(|_| 1.0, &[(0.0, 1.0), (0.0, 1.0)], &[50_000, 3]).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ols_examples() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_relative_eq!(
            ols_solve(&f, &DVector::from_vec(vec![1.0, 3.0])).unwrap()[0],
            2.0,
            epsilon = 1e-14
        );
        let x = ols_solve(&DMatrix::identity(2, 2), &DVector::from_vec(vec![2.0, 5.0])).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 5.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn ols_normal_equations(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(3..8);
            let n = rng.random_range(1..=m);
            let f = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let c = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let x = ols_solve(&f, &c).unwrap();
            let normal = f.transpose() * (&f * &x - &c);
            let cond = f.clone().svd(false, false).singular_values;
            prop_assume!(cond.min() > 1e-3);
            prop_assert!(normal.amax() <= 1e-10);
            let w = weighted_lstsq(&f, &c, &DVector::from_element(m, 1.0), None).unwrap();
            prop_assert_eq!(x, w);
        }

        #[test]
        fn grid_is_exhaustive(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let obj = |x: &[f64]| (x[0] - a).powi(2) + (x[1] - b).abs();
            let (_, best) = grid_search_minimize(obj, &[(-4.0, 4.0), (-4.0, 4.0)], &[41, 41]).unwrap();
            for i in 0..41 {
                for j in 0..41 {
                    let p = [-4.0 + 0.2 * i as f64, -4.0 + 0.2 * j as f64];
                    prop_assert!(best <= obj(&p) + 1e-12);
                }
            }
        }
    }
}
