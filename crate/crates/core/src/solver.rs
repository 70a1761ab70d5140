//! The AIRLS loop: per-block reweighting and weighted least-squares updates,
//! objective bookkeeping and termination.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_lstsq;
use crate::model::{eval_residuals, linearize_rows, validate_model, BlockId, MultiaffineModel};

/// Order in which blocks are visited within a sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    #[default]
    Ascending,
    Custom(Vec<usize>),
    /// A fresh permutation per sweep drawn from the configured seed.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    /// Relative tolerance on the decrease of `L` between sweeps.
    pub tol: f64,
    pub max_sweeps: usize,
    pub block_order: BlockOrder,
    pub seed: u64,
    /// Relative singular-value cutoff; `None` uses `max(M, n_i) * eps`.
    pub rtol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            tol: 1e-8,
            max_sweeps: 1000,
            block_order: BlockOrder::Ascending,
            seed: 0,
            rtol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be > 0".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be >= 0".into()));
        }
        if let Some(r) = self.rtol {
            if !(r >= 0.0) {
                return Err(Error::InvalidConfig("rtol must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_sweeps(mut self, n: usize) -> Self {
        self.max_sweeps = n;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxSweeps,
    Stalled,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxSweeps => "max_sweeps",
            Termination::Stalled => "stalled",
        })
    }
}

/// Objective values after one sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "Ghat")]
    pub g_hat: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub max_block_delta: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x_hat: Vec<f64>,
    /// Objectives at the initial point (sweep 0).
    pub initial: SweepRecord,
    pub trace: Vec<SweepRecord>,
    pub sweeps: usize,
    pub termination: Termination,
    /// `sum_h alpha^(q_h/2)` when `qbar = 2` and every factor is GND.
    pub epsilon_bound: Option<f64>,
    /// Set when non-GND factors are present; monotonicity is then not guaranteed.
    pub heuristic_mode: bool,
    /// Invariant violations observed during the run.
    pub diagnostics: Vec<String>,
}

impl SolveResult {
    pub fn x_hat_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_hat)
    }

    pub fn final_record(&self) -> &SweepRecord {
        self.trace.last().unwrap_or(&self.initial)
    }
}

/// `(F^T W F)^+ F^T W C`, the minimum-norm minimizer of `||F x - C||_W^2`.
pub fn weighted_ls_update(
    f: &DMatrix<f64>,
    c: &DVector<f64>,
    w: &DVector<f64>,
    rtol: Option<f64>,
) -> Result<DVector<f64>> {
    weighted_lstsq(f, c, w, rtol)
}

/// Sum of `-log p_h(0)` over non-flat factors.
pub fn g_zero(model: &MultiaffineModel) -> f64 {
    model
        .factors
        .iter()
        .filter(|f| !f.density.is_flat())
        .map(|f| f.density.neg_log_p0())
        .sum()
}

/// Negative log-likelihood `-sum_h log p_h(r_h(x))`; flat priors contribute 0.
pub fn eval_g(model: &MultiaffineModel, x: &DVector<f64>) -> Result<f64> {
    let r = eval_residuals(model, x)?;
    let mut g = 0.0;
    for (f, &rh) in model.factors.iter().zip(r.iter()) {
        g += f.density.neg_log_density(rh)?;
    }
    Ok(g)
}

/// Smoothed objective `G0 + sum_h (z_h^2 + alpha)^(q_h/qbar)`, where `z_h`
/// is the canonical residual of GND factor `h`. Non-GND factors contribute
/// `log(p(0)/p(rho_h))`.
pub fn eval_ghat(model: &MultiaffineModel, x: &DVector<f64>, alpha: f64) -> Result<f64> {
    let r = eval_residuals(model, x)?;
    ghat_from_residuals(model, &r, alpha)
}

/// Termination variable `L = -sum_h log p_h(rho_h(x))` with modified
/// residuals taken on the canonical scale; identical to [`eval_ghat`].
pub fn eval_l(model: &MultiaffineModel, x: &DVector<f64>, alpha: f64) -> Result<f64> {
    eval_ghat(model, x, alpha)
}

fn ghat_from_residuals(model: &MultiaffineModel, r: &DVector<f64>, alpha: f64) -> Result<f64> {
    let mut s = g_zero(model);
    for (f, &rh) in model.factors.iter().zip(r.iter()) {
        s += f.density.surrogate(rh, alpha, model.qbar)?;
    }
    Ok(s)
}

fn g_from_residuals(model: &MultiaffineModel, r: &DVector<f64>) -> Result<f64> {
    let mut g = 0.0;
    for (f, &rh) in model.factors.iter().zip(r.iter()) {
        g += f.density.neg_log_density(rh)?;
    }
    Ok(g)
}

/// `sum_h alpha^(q_h/2)` when `qbar = 2` and all factors are GND (flat priors allowed).
pub fn suboptimality_bound(model: &MultiaffineModel, alpha: f64) -> Option<f64> {
    if model.qbar != 2 || !model.all_gnd() {
        return None;
    }
    Some(
        model
            .factors
            .iter()
            .filter_map(|f| f.density.gnd_exponent())
            .map(|q| alpha.powf(q / 2.0))
            .sum(),
    )
}

struct SweepPlan {
    incidence: Vec<Vec<usize>>,
    order: Vec<BlockId>,
    rng: Option<ChaCha8Rng>,
}

impl SweepPlan {
    fn new(model: &MultiaffineModel, cfg: &SolverConfig) -> Result<Self> {
        let nb = model.layout.len();
        let (order, rng) = match &cfg.block_order {
            BlockOrder::Ascending => ((0..nb).map(BlockId).collect(), None),
            BlockOrder::Custom(p) => {
                let mut seen = vec![false; nb];
                for &b in p {
                    if b >= nb || std::mem::replace(&mut seen[b], true) {
                        return Err(Error::InvalidConfig(format!(
                            "block order must be a permutation of 0..{nb}"
                        )));
                    }
                }
                if p.len() != nb {
                    return Err(Error::InvalidConfig(format!(
                        "block order must be a permutation of 0..{nb}"
                    )));
                }
                (p.iter().map(|&b| BlockId(b)).collect(), None)
            }
            BlockOrder::Random => (
                (0..nb).map(BlockId).collect(),
                Some(ChaCha8Rng::seed_from_u64(cfg.seed)),
            ),
        };
        Ok(Self {
            incidence: model.block_incidence(),
            order,
            rng,
        })
    }

    fn next_order(&mut self) -> Vec<BlockId> {
        if let Some(rng) = &mut self.rng {
            self.order.shuffle(rng);
        }
        self.order.clone()
    }
}

fn update_block(
    model: &MultiaffineModel,
    x: &mut DVector<f64>,
    b: BlockId,
    rows: &[usize],
    cfg: &SolverConfig,
) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let sys = linearize_rows(model, x, b, rows);
    let range = model.layout.range(b);
    let xi = &x.as_slice()[range.clone()];
    let r = sys.residual(xi);
    let mut w = DVector::zeros(rows.len());
    for (k, &h) in rows.iter().enumerate() {
        w[k] = model.factors[h]
            .density
            .row_weight(r[k], cfg.alpha, model.qbar)
            .map_err(|e| Error::Numerical {
                block: b.0,
                message: e.to_string(),
            })?;
    }
    let new = weighted_ls_update(&sys.f, &sys.c, &w, cfg.rtol).map_err(|e| Error::Numerical {
        block: b.0,
        message: e.to_string(),
    })?;
    let mut delta = 0.0;
    for (k, v) in new.iter().enumerate() {
        delta += (v - xi[k]).powi(2);
    }
    x.as_mut_slice()[range].copy_from_slice(new.as_slice());
    Ok(delta.sqrt())
}

fn sweep_in_place(
    model: &MultiaffineModel,
    x: &mut DVector<f64>,
    cfg: &SolverConfig,
    plan: &mut SweepPlan,
) -> Result<f64> {
    let mut max_delta = 0.0_f64;
    for b in plan.next_order() {
        let d = update_block(model, x, b, &plan.incidence[b.0], cfg)?;
        max_delta = max_delta.max(d);
    }
    Ok(max_delta)
}

/// One pass over all blocks. Weights are refreshed before every block update.
pub fn airls_sweep(
    model: &MultiaffineModel,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    model.check_point(x)?;
    let mut plan = SweepPlan::new(model, cfg)?;
    let mut y = x.clone();
    sweep_in_place(model, &mut y, cfg, &mut plan)?;
    Ok(y)
}

const STALL_DELTA: f64 = 1e-14;
const STALL_SWEEPS: usize = 3;

/// Runs sweeps until `L` stops decreasing, the iterate stalls, or the sweep budget is spent.
pub fn airls_solve(
    model: &MultiaffineModel,
    x_init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    airls_solve_observed(model, x_init, cfg, |_, _| {})
}

/// [`airls_solve`] with a callback invoked after every sweep.
pub fn airls_solve_observed(
    model: &MultiaffineModel,
    x_init: &DVector<f64>,
    cfg: &SolverConfig,
    mut observer: impl FnMut(&SweepRecord, &DVector<f64>),
) -> Result<SolveResult> {
    cfg.validate()?;
    model.check_point(x_init)?;
    validate_model(model).into_result()?;
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point".into()));
    }
    let start = Instant::now();
    let mut plan = SweepPlan::new(model, cfg)?;
    let heuristic_mode = !model.all_gnd();
    let mut x = x_init.clone();

    let record = |x: &DVector<f64>,
                  sweep: usize,
                  max_block_delta: f64,
                  elapsed_s: f64|
     -> Result<SweepRecord> {
        let r = eval_residuals(model, x)?;
        let g_hat = ghat_from_residuals(model, &r, cfg.alpha)?;
        Ok(SweepRecord {
            sweep,
            l: g_hat,
            g_hat,
            g: g_from_residuals(model, &r)?,
            max_block_delta,
            elapsed_s,
        })
    };

    let initial = record(&x, 0, 0.0, 0.0)?;
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut l_prev = initial.l;
    let mut stall = 0;
    let mut termination = Termination::MaxSweeps;

    for sweep in 1..=cfg.max_sweeps {
        let max_delta = sweep_in_place(model, &mut x, cfg, &mut plan)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("iterate after sweep {sweep}")));
        }
        let rec = record(&x, sweep, max_delta, start.elapsed().as_secs_f64())?;
        let l = rec.l;
        observer(&rec, &x);
        trace.push(rec);

        if !heuristic_mode && l > l_prev + 1e-9 * (1.0 + l_prev.abs()) {
            let msg = format!("L increased at sweep {sweep}: {l_prev} -> {l}");
            warn!("{msg}");
            diagnostics.push(msg);
        }
        if l_prev - l <= cfg.tol * (1.0 + l.abs()) {
            termination = Termination::Converged;
            break;
        }
        stall = if max_delta < STALL_DELTA {
            stall + 1
        } else {
            0
        };
        if stall >= STALL_SWEEPS {
            termination = Termination::Stalled;
            break;
        }
        l_prev = l;
    }
    debug!(
        "AIRLS finished after {} sweeps ({termination})",
        trace.len()
    );

    Ok(SolveResult {
        x_hat: x.as_slice().to_vec(),
        initial,
        sweeps: trace.len(),
        trace,
        termination,
        epsilon_bound: suboptimality_bound(model, cfg.alpha),
        heuristic_mode,
        diagnostics,
    })
}

/// Solution drift when `alpha` is halved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaDrift {
    pub alpha: f64,
    pub drift: f64,
    pub relative_drift: f64,
}

/// Re-solves with `alpha / 2` and reports `||x(alpha) - x(alpha/2)||`.
pub fn alpha_drift(
    model: &MultiaffineModel,
    x_init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<AlphaDrift> {
    let a = airls_solve(model, x_init, cfg)?.x_hat_vector();
    let half = SolverConfig {
        alpha: cfg.alpha / 2.0,
        ..cfg.clone()
    };
    let b = airls_solve(model, x_init, &half)?.x_hat_vector();
    let drift = (&a - &b).norm();
    Ok(AlphaDrift {
        alpha: cfg.alpha,
        drift,
        relative_drift: drift / (1.0 + a.norm()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{gnd_log_density, Density};
    use crate::model::{BlockLayout, Factor, LinearForm, MultiaffineExpr, ResidualTerm};
    use approx::assert_relative_eq;

    fn scalar_factor(block: usize, coeff: f64, offset: f64, d: Density) -> Factor {
        Factor::new(
            MultiaffineExpr::new(vec![
                ResidualTerm::linear(coeff, BlockId(block), LinearForm::dense(&[1.0])),
                ResidualTerm::constant(offset),
            ]),
            d,
        )
    }

    fn one_dim(factors: Vec<Factor>, qbar: Option<u32>) -> MultiaffineModel {
        MultiaffineModel::new(BlockLayout::from_blocks([("x", 1)]).unwrap(), factors, qbar).unwrap()
    }

    fn bilinear() -> MultiaffineModel {
        let one = || LinearForm::dense(&[1.0]);
        let layout = BlockLayout::from_blocks([("x1", 1), ("x2", 1)]).unwrap();
        let factors = vec![
            Factor::new(
                MultiaffineExpr::new(vec![
                    ResidualTerm::new(1.0, vec![(BlockId(0), one()), (BlockId(1), one())]).unwrap(),
                    ResidualTerm::constant(-6.0),
                ]),
                Density::gaussian(),
            ),
            scalar_factor(0, 1.0, -2.0, Density::gaussian()),
            scalar_factor(1, 1.0, -3.0, Density::gaussian()),
        ];
        MultiaffineModel::new(layout, factors, None).unwrap()
    }

    #[test]
    fn weighted_update_examples() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        let x = weighted_ls_update(&f, &c, &DVector::from_vec(vec![3.0, 1.0]), None).unwrap();
        assert_relative_eq!(x[0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_single_block() {
        let model = one_dim(vec![scalar_factor(0, 1.0, -3.0, Density::gaussian())], None);
        let res = airls_solve(&model, &DVector::zeros(1), &SolverConfig::default()).unwrap();
        assert_relative_eq!(res.x_hat[0], 3.0, epsilon = 1e-12);
        assert!(res.sweeps <= 2);
        assert_eq!(res.termination, Termination::Converged);
        assert_eq!(res.epsilon_bound, Some(1e-3));
    }

    #[test]
    fn l1_majority() {
        let model = one_dim(
            vec![
                scalar_factor(0, 1.0, 0.0, Density::laplace()),
                scalar_factor(0, 1.0, -10.0, Density::laplace()),
                scalar_factor(0, 1.0, -10.0, Density::laplace()),
            ],
            Some(2),
        );
        let res = airls_solve(&model, &DVector::zeros(1), &SolverConfig::default()).unwrap();
        assert!((res.x_hat[0] - 10.0).abs() <= 0.05, "{}", res.x_hat[0]);
        assert_relative_eq!(
            res.epsilon_bound.unwrap(),
            3.0 * 1e-3_f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bilinear_first_sweep() {
        let model = bilinear();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let cfg = SolverConfig::default();
        let x1 = airls_sweep(&model, &x0, &cfg).unwrap();
        // x1 given x2 = 1: rows [1; 1], C = [6; 2]
        assert_relative_eq!(x1[0], 4.0, epsilon = 1e-12);
        // x2 given x1 = 4: rows [4; 1], C = [6; 3] => (24 + 3) / 17
        assert_relative_eq!(x1[1], 27.0 / 17.0, epsilon = 1e-12);
        assert!(
            eval_ghat(&model, &x1, cfg.alpha).unwrap() < eval_ghat(&model, &x0, cfg.alpha).unwrap()
        );
    }

    #[test]
    fn fixed_point_is_stable() {
        let model = bilinear();
        let cfg = SolverConfig::default();
        let mut x = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..300 {
            x = airls_sweep(&model, &x, &cfg).unwrap();
        }
        let y = airls_sweep(&model, &x, &cfg).unwrap();
        assert!((y - &x).amax() <= 1e-12);
    }

    #[test]
    fn objective_examples() {
        let model = one_dim(vec![scalar_factor(0, 1.0, -3.0, Density::gaussian())], None);
        let g0 = -gnd_log_density(2.0, 0.0).unwrap();
        let at = |v: f64| DVector::from_vec(vec![v]);
        assert_relative_eq!(eval_g(&model, &at(3.0)).unwrap(), g0, epsilon = 1e-14);
        assert_relative_eq!(g0, 0.225_791, epsilon = 1e-6);
        assert_relative_eq!(eval_g(&model, &at(4.0)).unwrap(), g0 + 2.0, epsilon = 1e-14);
        assert_relative_eq!(
            eval_ghat(&model, &at(3.0), 1e-3).unwrap(),
            g0 + 1e-3,
            epsilon = 1e-14
        );
        for &v in &[-1.0, 2.5, 3.0, 7.0] {
            let diff = eval_ghat(&model, &at(v), 1e-14).unwrap() - eval_g(&model, &at(v)).unwrap();
            assert!(diff.abs() < 1e-12);
        }

        let flat = one_dim(vec![scalar_factor(0, 1.0, 0.0, Density::Flat); 3], None);
        assert_eq!(eval_g(&flat, &at(5.0)).unwrap(), 0.0);
    }

    #[test]
    fn bound_examples() {
        let two = one_dim(
            vec![
                scalar_factor(0, 1.0, 0.0, Density::gaussian()),
                scalar_factor(0, 1.0, 1.0, Density::gaussian()),
            ],
            None,
        );
        assert_relative_eq!(
            suboptimality_bound(&two, 1e-3).unwrap(),
            2e-3,
            epsilon = 1e-18
        );
        let three = one_dim(
            vec![scalar_factor(0, 1.0, 0.0, Density::gaussian())],
            Some(3),
        );
        assert_eq!(suboptimality_bound(&three, 1e-3), None);
        let al = one_dim(
            vec![scalar_factor(
                0,
                1.0,
                0.0,
                Density::AsymmetricLaplace {
                    rate_pos: 1.0,
                    rate_neg: 2.0,
                },
            )],
            None,
        );
        assert_eq!(suboptimality_bound(&al, 1e-3), None);
    }

    #[test]
    fn max_sweeps_and_invalid_alpha() {
        let model = bilinear();
        let res = airls_solve(
            &model,
            &DVector::from_vec(vec![1.0, 1.0]),
            &SolverConfig::default().with_max_sweeps(1),
        )
        .unwrap();
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.termination, Termination::MaxSweeps);
        let err = airls_solve(
            &model,
            &DVector::zeros(2),
            &SolverConfig::default().with_alpha(0.0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("alpha must be > 0"));
    }

    #[test]
    fn random_block_order_is_seeded() {
        let model = bilinear();
        let cfg = SolverConfig {
            block_order: BlockOrder::Random,
            seed: 9,
            ..SolverConfig::default()
        };
        let a = airls_solve(&model, &DVector::from_vec(vec![1.0, 1.0]), &cfg).unwrap();
        let b = airls_solve(&model, &DVector::from_vec(vec![1.0, 1.0]), &cfg).unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        let bad = SolverConfig {
            block_order: BlockOrder::Custom(vec![0, 0]),
            ..SolverConfig::default()
        };
        assert!(airls_sweep(&model, &DVector::zeros(2), &bad).is_err());
    }

    #[test]
    fn alpha_drift_is_small_for_gaussian() {
        let model = bilinear();
        let d = alpha_drift(
            &model,
            &DVector::from_vec(vec![1.0, 1.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(d.relative_drift < 1e-6);
    }
}
