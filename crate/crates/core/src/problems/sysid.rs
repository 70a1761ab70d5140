//! Errors-in-variables identification of `x_{t+1} = A x_t + B u_t`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::ols_solve;
use crate::densities::Density;
use crate::error::{Error, Result};
use crate::model::{BlockLayout, Factor, MultiaffineExpr, MultiaffineModel, ResidualTerm};

use super::{check_dim, default_noise_seed, unit, GeneratorSpec, ProblemInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SysidParams {
    pub n_x: usize,
    pub n_u: usize,
    /// Number of recorded transitions.
    pub t: usize,
    /// Fraction of raw state and input measurements hit by an outlier.
    pub outlier_ratio: f64,
    /// Forgetting factor of the autocorrelation sums.
    #[serde(default = "one")]
    pub beta: f64,
    /// Position setpoint tracked by the double integrator.
    #[serde(default = "default_setpoint")]
    pub setpoint: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

fn default_setpoint() -> f64 {
    DEFAULT_SETPOINT
}

pub const DEFAULT_SETPOINT: f64 = 10.0;

impl SysidParams {
    pub fn new(n_x: usize, n_u: usize, t: usize, outlier_ratio: f64, seed: u64) -> Self {
        Self {
            n_x,
            n_u,
            t,
            outlier_ratio,
            beta: 1.0,
            setpoint: DEFAULT_SETPOINT,
            seed,
            noise_seed: None,
        }
    }
}

/// Generated sysid instance with the data matrices and the true parameters.
#[derive(Clone, Debug)]
pub struct SysidProblem {
    pub instance: ProblemInstance,
    /// `[A, B]`, `n_x × n_z`.
    pub theta_true: DMatrix<f64>,
    /// `n_x × (n_x + n_z)`.
    pub y_tilde: DMatrix<f64>,
    /// `n_z × (n_x + n_z)`.
    pub z_tilde: DMatrix<f64>,
}

impl SysidProblem {
    /// Row-wise least squares `Θ Z̃ ≈ Ỹ`.
    pub fn ols_theta(&self) -> Result<DMatrix<f64>> {
        let zt = self.z_tilde.transpose();
        let mut theta = DMatrix::zeros(self.theta_true.nrows(), self.theta_true.ncols());
        for l in 0..theta.nrows() {
            let rhs = self.y_tilde.row(l).transpose();
            let row = ols_solve(&zt, &rhs)?;
            theta.row_mut(l).copy_from(&row.transpose());
        }
        Ok(theta)
    }

    /// Θ block of a solution vector, reshaped row-major.
    pub fn theta_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (r, c) = self.theta_true.shape();
        DMatrix::from_row_slice(r, c, &x.as_slice()[..r * c])
    }
}

/// Sampling step of the double integrator.
const DT: f64 = 0.1;
/// Stabilizing state feedback used while exciting the double integrator.
const FEEDBACK: [f64; 2] = [1.0, 1.5];
/// Length of each trajectory segment of autonomous systems.
const SEGMENT: usize = 50;
const MAX_RETRIES: usize = 20;

struct System {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Feedback `u = -K (x - r) + e` applied during simulation.
    k: DMatrix<f64>,
    r: DVector<f64>,
}

fn double_integrator() -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, DT, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[DT * DT / 2.0, DT]);
    (a, b)
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

fn make_system(n_x: usize, n_u: usize, setpoint: f64, rng: &mut ChaCha8Rng) -> Result<System> {
    if n_x == 2 && n_u <= 1 {
        let (a, b) = double_integrator();
        let k = DMatrix::from_row_slice(1, 2, &FEEDBACK);
        return Ok(if n_u == 1 {
            let r = DVector::from_vec(vec![setpoint, 0.0]);
            System { a, b, k, r }
        } else {
            // autonomous closed loop of the double integrator
            System {
                a: &a - &b * &k,
                b: DMatrix::zeros(2, 0),
                k: DMatrix::zeros(0, 2),
                r: DVector::zeros(2),
            }
        });
    }
    for _ in 0..MAX_RETRIES {
        let raw = DMatrix::from_fn(n_x, n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&raw);
        if rho == 0.0 || !rho.is_finite() {
            continue;
        }
        let a = raw * (0.9 / rho);
        if spectral_radius(&a) < 1.0 {
            let b = DMatrix::from_fn(n_x, n_u, |_, _| rng.sample::<f64, _>(StandardNormal));
            return Ok(System {
                a,
                b,
                k: DMatrix::zeros(n_u, n_x),
                r: DVector::zeros(n_x),
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "no stable system found after {MAX_RETRIES} draws"
    )))
}

/// EIV sysid model with blocks `Theta` (`n_x × n_z`) and `Z` (`n_z × (n_x + n_z)`),
/// both flattened row-major.
///
/// The two-state, at most one-input default is the double integrator with
/// step 0.1. With one input it tracks the position `setpoint` under
/// `u = -[1, 1.5] (x - r) + e`; without
/// inputs the closed loop itself is identified from trajectories restarted
/// every 50 steps. Other sizes use a random system with spectral radius 0.9.
/// Outliers drawn uniformly from `[-m, m]` are added to a fraction
/// `outlier_ratio` of the raw measurements, `m` being the mean magnitude of
/// the corresponding signal.
pub fn gen_eiv_sysid(p: &SysidParams) -> Result<SysidProblem> {
    check_dim("n_x", p.n_x, 1)?;
    check_dim("t", p.t, 1)?;
    if !(0.0..=0.05).contains(&p.outlier_ratio) {
        return Err(Error::InvalidConfig(format!(
            "outlier_ratio must lie in [0, 0.05], got {}",
            p.outlier_ratio
        )));
    }
    if !(p.beta > 0.0 && p.beta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "beta must lie in (0, 1], got {}",
            p.beta
        )));
    }
    if !p.setpoint.is_finite() {
        return Err(Error::InvalidConfig("setpoint must be finite".into()));
    }
    let (n_x, n_u) = (p.n_x, p.n_u);
    let n_z = n_x + n_u;
    let n_c = n_x + n_z;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise =
        ChaCha8Rng::seed_from_u64(p.noise_seed.unwrap_or_else(|| default_noise_seed(p.seed)));
    let sys = make_system(n_x, n_u, p.setpoint, &mut rng)?;

    // states x_0..x_T and inputs u_0..u_{T-1}; `fresh[t]` marks a restart at t
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(p.t + 1);
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(p.t);
    let mut fresh = vec![false; p.t + 1];
    let draw = |rng: &mut ChaCha8Rng, n: usize| {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    xs.push(draw(&mut rng, n_x));
    fresh[0] = true;
    for t in 0..p.t {
        let u = -&sys.k * (&xs[t] - &sys.r) + draw(&mut rng, n_u);
        let mut next = &sys.a * &xs[t] + &sys.b * &u;
        if n_u == 0 && (t + 1) % SEGMENT == 0 {
            next = draw(&mut rng, n_x);
            fresh[t + 1] = true;
        }
        xs.push(next);
        us.push(u);
    }

    let mean_abs = |vals: &mut dyn Iterator<Item = f64>| {
        let (s, c) = vals.fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    };
    let mx: Vec<f64> = (0..n_x)
        .map(|j| mean_abs(&mut xs.iter().map(|x| x[j])))
        .collect();
    let mu: Vec<f64> = (0..n_u)
        .map(|j| mean_abs(&mut us.iter().map(|u| u[j])))
        .collect();
    let mut corrupt = |v: f64, m: f64| {
        if p.outlier_ratio > 0.0 && noise.random_bool(p.outlier_ratio) {
            v + noise.random_range(-m..=m)
        } else {
            v
        }
    };
    let x_obs: Vec<DVector<f64>> = xs
        .iter()
        .map(|x| DVector::from_fn(n_x, |j, _| corrupt(x[j], mx[j])))
        .collect();
    let u_obs: Vec<DVector<f64>> = us
        .iter()
        .map(|u| DVector::from_fn(n_u, |j, _| corrupt(u[j], mu[j])))
        .collect();

    let mut c = DMatrix::<f64>::zeros(n_c, n_c);
    for t in 0..p.t {
        if fresh[t + 1] {
            continue;
        }
        let mut g = DVector::zeros(n_c);
        g.rows_mut(0, n_x).copy_from(&x_obs[t + 1]);
        g.rows_mut(n_x, n_x).copy_from(&x_obs[t]);
        g.rows_mut(2 * n_x, n_u).copy_from(&u_obs[t]);
        let w = p.beta.powi((p.t - 1 - t) as i32);
        c.ger(w, &g, &g, 1.0);
    }
    let y_tilde = c.rows(0, n_x).into_owned();
    let z_tilde = c.rows(n_x, n_z).into_owned();
    let mut theta_true = DMatrix::zeros(n_x, n_z);
    theta_true.columns_mut(0, n_x).copy_from(&sys.a);
    theta_true.columns_mut(n_x, n_u).copy_from(&sys.b);

    let mut layout = BlockLayout::new();
    let th = layout.push("Theta", n_x * n_z)?;
    let zb = layout.push("Z", n_z * n_c)?;
    let (n_th, n_zb) = (n_x * n_z, n_z * n_c);
    let mut factors = Vec::new();
    for l in 0..n_x {
        for h in 0..n_c {
            let mut expr = MultiaffineExpr::constant(-y_tilde[(l, h)]);
            for k in 0..n_z {
                expr.push(ResidualTerm::new(
                    1.0,
                    vec![(th, unit(n_th, l * n_z + k)), (zb, unit(n_zb, k * n_c + h))],
                )?);
            }
            factors.push(
                Factor::new(expr, Density::gnd_with_rate(1.0, 1.0))
                    .labeled(format!("data[{l},{h}]")),
            );
        }
    }
    for k in 0..n_z {
        for h in 0..n_c {
            let expr = MultiaffineExpr::constant(-z_tilde[(k, h)]).with(ResidualTerm::linear(
                1.0,
                zb,
                unit(n_zb, k * n_c + h),
            ));
            factors.push(
                Factor::new(expr, Density::gnd_with_rate(1.0, 1.0))
                    .labeled(format!("z_prior[{k},{h}]")),
            );
        }
    }
    for l in 0..n_x {
        for k in 0..n_z {
            let expr =
                MultiaffineExpr::new(vec![ResidualTerm::linear(1.0, th, unit(n_th, l * n_z + k))]);
            factors.push(
                Factor::new(expr, Density::gnd_with_rate(1.0, 1.0))
                    .labeled(format!("theta_prior[{l},{k}]")),
            );
        }
    }
    let model = MultiaffineModel::new(layout, factors, Some(2))?;

    let z_clean = {
        let mut c0 = DMatrix::<f64>::zeros(n_z, n_c);
        for t in 0..p.t {
            if fresh[t + 1] {
                continue;
            }
            let mut g = DVector::zeros(n_c);
            g.rows_mut(0, n_x).copy_from(&xs[t + 1]);
            g.rows_mut(n_x, n_x).copy_from(&xs[t]);
            g.rows_mut(2 * n_x, n_u).copy_from(&us[t]);
            let zt = g.rows(n_x, n_z).into_owned();
            c0.ger(p.beta.powi((p.t - 1 - t) as i32), &zt, &g, 1.0);
        }
        c0
    };
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    let x_true = DVector::from_iterator(
        n_th + n_zb,
        row_major(&theta_true)
            .into_iter()
            .chain(row_major(&z_clean)),
    );
    let x_init = DVector::from_iterator(
        n_th + n_zb,
        std::iter::repeat_n(0.0, n_th).chain(row_major(&z_tilde)),
    );
    let instance = ProblemInstance {
        model,
        x_true,
        x_init,
        spec: GeneratorSpec::EivSysid(p.clone()),
    };
    Ok(SysidProblem {
        instance,
        theta_true,
        y_tilde,
        z_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn clean_data_satisfy_the_regression_exactly() {
        for n_u in [0, 1] {
            let prob = gen_eiv_sysid(&SysidParams::new(2, n_u, 300, 0.0, 5)).unwrap();
            let resid = &prob.theta_true * &prob.z_tilde - &prob.y_tilde;
            assert!(
                resid.amax() < 1e-9 * prob.y_tilde.amax(),
                "{n_u}: {}",
                resid.amax()
            );
            let ols = prob.ols_theta().unwrap();
            assert!((ols - &prob.theta_true).norm() < 1e-8);
            assert!(validate_model(&prob.instance.model).is_ok());
        }
    }

    #[test]
    fn closed_loop_is_stable() {
        let (a, b) = double_integrator();
        let k = DMatrix::from_row_slice(1, 2, &FEEDBACK);
        let rho = spectral_radius(&(a - b * k));
        assert!((rho - 0.855f64.sqrt()).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn random_systems_are_stable() {
        let prob = gen_eiv_sysid(&SysidParams::new(3, 2, 200, 0.01, 8)).unwrap();
        let a = prob.theta_true.columns(0, 3).into_owned();
        assert!(spectral_radius(&a) < 1.0);
    }
}
