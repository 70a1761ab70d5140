//! Desk-scale versions of the paper's figure experiments.
//!
//! Each suite returns plot-ready curves. The per-run helpers are public so
//! that tests can check the same quantities the curves display.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{grid_search_minimize, zogd_minimize_observed, ZogdConfig};
use crate::error::{Error, Result};
use crate::problems::{
    gen_eiv_sysid, gen_supply_demand, gen_water, relative_frobenius, rrms, SupplyDemandParams,
    SysidParams, WaterParams,
};
use crate::solver::{airls_solve, airls_solve_observed, eval_g, SolverConfig};
use crate::variance::{
    estimate_covariance, estimate_covariance_fast, resampling_covariance, sample_rng, SamplerConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fig1,
    Fig4,
    Fig5,
    Fig6,
    Fig8,
    Fig10,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Fig1,
        Suite::Fig4,
        Suite::Fig5,
        Suite::Fig6,
        Suite::Fig8,
        Suite::Fig10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fig1 => "fig1",
            Suite::Fig4 => "fig4",
            Suite::Fig5 => "fig5",
            Suite::Fig6 => "fig6",
            Suite::Fig8 => "fig8",
            Suite::Fig10 => "fig10",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown suite {s:?}; expected one of fig1, fig4, fig5, fig6, fig8, fig10"
                ))
            })
    }
}

/// One plotted curve: a header and numeric rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text with a header line; floats use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub suite: Suite,
    pub seed: u64,
    /// Seeds of the individual runs, derived from `seed`.
    pub run_seeds: Vec<u64>,
    pub solver: SolverConfig,
    pub curves: Vec<Curve>,
    pub notes: Vec<String>,
}

/// Seed of run `k` of a suite.
pub fn run_seed(seed: u64, k: usize) -> u64 {
    sample_rng(seed, 0x7275_6e00 + k as u64).next_u64()
}

pub fn run_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n).map(|k| run_seed(seed, k)).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn solver_config() -> SolverConfig {
    SolverConfig::default().with_max_sweeps(5000)
}

/// `(elapsed_s, rrms_error)` pairs.
pub type ErrorTrace = Vec<(f64, f64)>;

/// Convergence race on one supply-demand instance.
#[derive(Clone, Debug)]
pub struct Race {
    pub airls: ErrorTrace,
    pub airls_time: f64,
    pub airls_error: f64,
    pub zogd: ErrorTrace,
    /// ZOGD error at the wall-clock time AIRLS needed to converge.
    pub zogd_error_at_airls_time: f64,
    pub zogd_step0: f64,
    pub grid: ErrorTrace,
}

const ZOGD_STEPS: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];
const ZOGD_PILOT_ITERS: usize = 2000;

/// Initial ZOGD step with the lowest objective after a short pilot run.
pub fn pick_zogd_step(
    objective: impl Fn(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<f64> {
    let mut best = (f64::INFINITY, ZOGD_STEPS[0]);
    for step0 in ZOGD_STEPS {
        let cfg = ZogdConfig {
            step0,
            max_iters: ZOGD_PILOT_ITERS,
            seed,
            ..ZogdConfig::default()
        };
        let f = crate::baselines::zogd_minimize(&objective, x0, &cfg)?.f_best;
        if f < best.0 {
            best = (f, step0);
        }
    }
    Ok(best.1)
}

fn error_at(trace: &[(f64, f64)], t: f64, initial: f64) -> f64 {
    trace
        .iter()
        .take_while(|(s, _)| *s <= t)
        .last()
        .map_or(initial, |p| p.1)
}

/// AIRLS, ZOGD and grid search on a noise-free supply-demand instance with
/// `t = 2`, `n_t = 1`. ZOGD runs for `zogd_iters` iterations from the
/// initial step picked by [`pick_zogd_step`]; the grid is refined over a box
/// of half-width 10 around the truth.
pub fn supply_demand_race(seed: u64, zogd_iters: usize, with_grid: bool) -> Result<Race> {
    let inst = gen_supply_demand(&SupplyDemandParams::new(2, 1, 0.0, seed))?;
    let truth = inst.x_true.as_slice();
    let model = &inst.model;
    let e0 = rrms(inst.x_init.as_slice(), truth);

    let mut airls = vec![(0.0, e0)];
    let start = Instant::now();
    let res = airls_solve_observed(model, &inst.x_init, &solver_config(), |_, x| {
        airls.push((start.elapsed().as_secs_f64(), rrms(x.as_slice(), truth)));
    })?;
    let airls_time = start.elapsed().as_secs_f64();
    let airls_error = rrms(&res.x_hat, truth);

    let objective = |x: &DVector<f64>| eval_g(model, x).unwrap_or(f64::INFINITY);
    let zogd_step0 = pick_zogd_step(objective, &inst.x_init, seed)?;
    let mut zogd = vec![(0.0, e0)];
    let cfg = ZogdConfig {
        step0: zogd_step0,
        max_iters: zogd_iters,
        seed,
        ..ZogdConfig::default()
    };
    let start = Instant::now();
    zogd_minimize_observed(objective, &inst.x_init, &cfg, |_, x, _| {
        zogd.push((start.elapsed().as_secs_f64(), rrms(x.as_slice(), truth)));
        ControlFlow::Continue(())
    })?;
    let zogd_error_at_airls_time = error_at(&zogd, airls_time, e0);

    let mut grid = Vec::new();
    if with_grid {
        let bounds: Vec<(f64, f64)> = truth.iter().map(|v| (v - 10.0, v + 10.0)).collect();
        let start = Instant::now();
        for steps in [3usize, 5, 9, 17, 33, 65, 129] {
            let (x, _) = grid_search_minimize(
                |p| eval_g(model, &DVector::from_column_slice(p)).unwrap_or(f64::INFINITY),
                &bounds,
                &vec![steps; bounds.len()],
            )?;
            grid.push((start.elapsed().as_secs_f64(), rrms(&x, truth)));
        }
    }
    Ok(Race {
        airls,
        airls_time,
        airls_error,
        zogd,
        zogd_error_at_airls_time,
        zogd_step0,
        grid,
    })
}

/// RRMS error at the start and after every sweep.
pub fn sweep_errors(
    model: &crate::model::MultiaffineModel,
    x_init: &DVector<f64>,
    truth: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut errors = vec![rrms(x_init.as_slice(), truth)];
    let mut times = vec![0.0];
    let start = Instant::now();
    airls_solve_observed(model, x_init, cfg, |_, x| {
        errors.push(rrms(x.as_slice(), truth));
        times.push(start.elapsed().as_secs_f64());
    })?;
    Ok((errors, times))
}

/// Fraction of sweeps `k >= 1` with `e_k <= e_0 0.7^k`, counted up to the
/// first sweep whose error is within 10x of the smallest error.
pub fn envelope_fraction(errors: &[f64], rate: f64) -> f64 {
    let Some(&e0) = errors.first() else {
        return f64::NAN;
    };
    let floor = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let end = errors
        .iter()
        .position(|&e| e <= 10.0 * floor)
        .unwrap_or(errors.len() - 1);
    if end == 0 {
        return 1.0;
    }
    let ok = (1..=end)
        .filter(|&k| errors[k] <= e0 * rate.powi(k as i32))
        .count();
    ok as f64 / end as f64
}

/// Spectral norms of the three covariance estimates of `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceNorms {
    pub prop1: f64,
    pub fast: f64,
    pub resampling: f64,
}

/// Covariance of `tau` on supply-demand `t = 2`, `n_t = 1`.
pub fn supply_demand_variance(
    noise: f64,
    seed: u64,
    n_prop: usize,
    n_resample: usize,
) -> Result<VarianceNorms> {
    let params = SupplyDemandParams::new(2, 1, noise, seed);
    let inst = gen_supply_demand(&params)?;
    let cfg = solver_config();
    let x_hat = airls_solve(&inst.model, &inst.x_init, &cfg)?.x_hat_vector();
    let tau = inst.model.layout.id("tau")?;
    let sampler = SamplerConfig {
        n_samples: n_prop,
        seed,
        ..SamplerConfig::default()
    };
    let prop1 = estimate_covariance(&inst.model, &x_hat, tau, &sampler)?.spectral_norm;
    let fast = estimate_covariance_fast(&inst.model, &x_hat, tau, &sampler)?.spectral_norm;
    let resampling = resampling_covariance(
        |noise_seed| {
            let mut p = params.clone();
            p.noise_seed = Some(noise_seed);
            let i = gen_supply_demand(&p)?;
            Ok((i.model, i.x_init))
        },
        tau,
        n_resample,
        seed,
        &cfg,
    )?
    .spectral_norm;
    Ok(VarianceNorms {
        prop1,
        fast,
        resampling,
    })
}

/// Relative Frobenius errors of `[A, B]` from Laplace AIRLS and from OLS on
/// the same double-integrator data.
pub fn sysid_errors(outlier_ratio: f64, t: usize, seed: u64) -> Result<(f64, f64)> {
    let prob = gen_eiv_sysid(&SysidParams::new(2, 1, t, outlier_ratio, seed))?;
    let res = airls_solve(
        &prob.instance.model,
        &prob.instance.x_init,
        &solver_config(),
    )?;
    let truth = prob.theta_true.as_slice();
    let airls = relative_frobenius(prob.theta_of(&res.x_hat_vector()).as_slice(), truth);
    let ols = relative_frobenius(prob.ols_theta()?.as_slice(), truth);
    Ok((airls, ols))
}

/// RRMS error of `(R, I)` and solve time on the water model.
pub fn water_recovery(t: usize, noise: f64, seed: u64) -> Result<(f64, f64)> {
    let inst = gen_water(&WaterParams::new(t, noise, seed))?;
    let start = Instant::now();
    let res = airls_solve(&inst.model, &inst.x_init, &solver_config())?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok((rrms(&res.x_hat, inst.x_true.as_slice()), elapsed))
}

fn supply_demand_time(t: usize, noise: f64, seed: u64) -> Result<(f64, f64)> {
    let inst = gen_supply_demand(&SupplyDemandParams::new(t, 1, noise, seed))?;
    let start = Instant::now();
    let res = airls_solve(&inst.model, &inst.x_init, &solver_config())?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok((rrms(&res.x_hat, inst.x_true.as_slice()), elapsed))
}

fn collect<T: Send>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

const NOISE_SWEEP: [f64; 5] = [1e-4, 1e-3, 1e-2, 3e-2, 1e-1];

/// Runs the desk-scale experiment behind one figure.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteOutput> {
    let mut notes = Vec::new();
    let (curves, seeds) = match suite {
        Suite::Fig1 => {
            let seeds = run_seeds(seed, 10);
            let mut airls = Curve::new("airls", &["outlier_ratio", "relative_error"]);
            let mut ols = Curve::new("ols", &["outlier_ratio", "relative_error"]);
            for ratio in [0.001, 0.005, 0.01, 0.02, 0.05] {
                let runs = collect(
                    seeds
                        .par_iter()
                        .map(|&s| sysid_errors(ratio, 2000, s))
                        .collect(),
                )?;
                let (a, o): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
                airls.push(vec![ratio, median(&a)]);
                ols.push(vec![ratio, median(&o)]);
            }
            notes.push("double integrator, 2000 samples, median over 10 seeds".into());
            (vec![airls, ols], seeds)
        }
        Suite::Fig4 => {
            let seeds = run_seeds(seed, 1);
            let race = supply_demand_race(seeds[0], 20_000, true)?;
            let mut curves = Vec::new();
            for (name, trace) in [
                ("airls", &race.airls),
                ("zogd", &race.zogd),
                ("grid_search", &race.grid),
            ] {
                let mut c = Curve::new(name, &["elapsed_s", "rrms_error"]);
                for &(t, e) in trace {
                    c.push(vec![t, e]);
                }
                curves.push(c);
            }
            notes.push("supply-demand t=2 n_t=1, noise-free".into());
            notes.push(format!(
                "zogd step0 {} picked from {:?} by a {}-iteration pilot",
                race.zogd_step0, ZOGD_STEPS, ZOGD_PILOT_ITERS
            ));
            notes.push("sampling baseline omitted".into());
            notes.push("grid search box: truth +- 10, 3 to 129 nodes per axis".into());
            (curves, seeds)
        }
        Suite::Fig5 => {
            let seeds = run_seeds(seed, 5);
            let mut scaling = Curve::new("scaling", &["t", "elapsed_s"]);
            for t in [2usize, 10, 50, 200, 800] {
                let runs = collect(
                    seeds
                        .iter()
                        .map(|&s| supply_demand_time(t, 0.0, s))
                        .collect(),
                )?;
                let times: Vec<f64> = runs.iter().map(|r| r.1).collect();
                scaling.push(vec![t as f64, median(&times)]);
            }
            let mut noise = Curve::new("robustness", &["noise_ratio", "rrms_error"]);
            for ratio in NOISE_SWEEP {
                let runs = collect(
                    seeds
                        .par_iter()
                        .map(|&s| supply_demand_time(2, ratio, s))
                        .collect(),
                )?;
                let errs: Vec<f64> = runs.iter().map(|r| r.0).collect();
                noise.push(vec![ratio, median(&errs)]);
            }
            notes.push("supply-demand n_t=1, median over 5 seeds".into());
            (vec![scaling, noise], seeds)
        }
        Suite::Fig6 => {
            let seeds = run_seeds(seed, 1);
            let inst = gen_supply_demand(&SupplyDemandParams::new(400, 2, 0.0, seeds[0]))?;
            let (errors, times) = sweep_errors(
                &inst.model,
                &inst.x_init,
                inst.x_true.as_slice(),
                &solver_config().with_tol(1e-14),
            )?;
            let mut airls = Curve::new("airls", &["elapsed_s", "rrms_error"]);
            let mut envelope = Curve::new("envelope", &["elapsed_s", "rrms_error"]);
            for (k, (&t, &e)) in times.iter().zip(&errors).enumerate() {
                airls.push(vec![t, e]);
                envelope.push(vec![t, errors[0] * 0.7f64.powi(k as i32)]);
            }
            notes.push("supply-demand t=400 n_t=2, envelope e0 * 0.7^k".into());
            (vec![airls, envelope], seeds)
        }
        Suite::Fig8 => {
            let seeds = run_seeds(seed, 3);
            let cols = ["noise_ratio", "spectral_norm"];
            let mut resampling = Curve::new("resampling", &cols);
            let mut prop1 = Curve::new("prop1", &cols);
            let mut fast = Curve::new("fast", &cols);
            for ratio in [1e-3, 3e-3, 1e-2, 3e-2, 1e-1] {
                let runs = collect(
                    seeds
                        .iter()
                        .map(|&s| supply_demand_variance(ratio, s, 1000, 10))
                        .collect(),
                )?;
                let pick =
                    |f: fn(&VarianceNorms) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
                resampling.push(vec![ratio, pick(|v| v.resampling)]);
                prop1.push(vec![ratio, pick(|v| v.prop1)]);
                fast.push(vec![ratio, pick(|v| v.fast)]);
            }
            notes.push(
                "supply-demand t=2 n_t=1, block tau, 1000 samples, 10 resamples, median over 3 seeds"
                    .into(),
            );
            (vec![resampling, prop1, fast], seeds)
        }
        Suite::Fig10 => {
            let seeds = run_seeds(seed, 5);
            let mut scaling = Curve::new("scaling", &["t", "elapsed_s"]);
            for t in [10usize, 25, 50, 100, 200] {
                let runs = collect(seeds.iter().map(|&s| water_recovery(t, 0.0, s)).collect())?;
                let times: Vec<f64> = runs.iter().map(|r| r.1).collect();
                scaling.push(vec![t as f64, median(&times)]);
            }
            let mut noise = Curve::new("robustness", &["noise_ratio", "rrms_error"]);
            for ratio in NOISE_SWEEP {
                let runs = collect(
                    seeds
                        .par_iter()
                        .map(|&s| water_recovery(50, ratio, s))
                        .collect(),
                )?;
                let errs: Vec<f64> = runs.iter().map(|r| r.0).collect();
                noise.push(vec![ratio, median(&errs)]);
            }
            notes.push("water model, median over 5 seeds".into());
            (vec![scaling, noise], seeds)
        }
    };
    Ok(SuiteOutput {
        suite,
        seed,
        run_seeds: seeds,
        solver: solver_config(),
        curves,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("fig7".parse::<Suite>().is_err());
    }

    #[test]
    fn envelope_fraction_counts_until_floor() {
        let geometric: Vec<f64> = (0..20).map(|k| 0.5f64.powi(k)).collect();
        assert_eq!(envelope_fraction(&geometric, 0.7), 1.0);
        let slow: Vec<f64> = (0..100).map(|k| 0.9f64.powi(k)).collect();
        assert_eq!(envelope_fraction(&slow, 0.7), 0.0);
        assert_eq!(envelope_fraction(&[1.0, 1.0], 0.7), 1.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn error_at_uses_last_point_before_deadline() {
        let tr = [(0.0, 1.0), (0.5, 0.1), (2.0, 0.01)];
        assert_eq!(error_at(&tr, 1.0, 9.0), 0.1);
        assert_eq!(error_at(&tr[1..], 0.1, 9.0), 9.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut c = Curve::new("x", &["a", "b"]);
        c.push(vec![1.0, 0.5]);
        assert_eq!(c.to_csv(), "a,b\n1,0.5\n");
    }
}
