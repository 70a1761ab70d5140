use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{Map, Value};

use airls::experiments::{run_suite, Suite};
use airls::problems::{
    AdmittanceParams, GpcaParams, SupplyDemandParams, SysidParams, TensorParams, WaterParams,
};
use airls::{
    airls_solve, estimate_covariance, estimate_covariance_fast, resampling_covariance,
    validate_model, BlockId, CovarianceEstimate, GeneratorSpec, MultiaffineModel, SamplerConfig,
    SamplerScale, SolveResult, SolverConfig, Termination,
};

use crate::failure::{CliResult, Failure};
use crate::files::{
    display, ensure_dir, read_point, read_problem, truth_path, write_csv, write_json,
    write_matrix_csv, write_text,
};

pub const TRACE_HEADER: [&str; 6] = ["sweep", "L", "Ghat", "G", "max_block_delta", "elapsed_s"];

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Problem file (JSON).
    pub problem: PathBuf,
    /// Smoothing parameter of the modified residuals.
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    /// Relative tolerance on the decrease of L between sweeps.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting point; overrides the one stored in the problem file.
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    /// Directory receiving report.json and trace.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct BlockValues<'a> {
    name: &'a str,
    values: &'a [f64],
}

#[derive(Serialize)]
struct Timing {
    total_s: f64,
    per_sweep_s: Vec<f64>,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    command: &'static str,
    problem: String,
    init: &'static str,
    config: &'a SolverConfig,
    status: Termination,
    blocks: Vec<BlockValues<'a>>,
    result: &'a SolveResult,
    timing: Timing,
    outputs: Vec<String>,
}

fn check_len(model: &MultiaffineModel, x: &[f64], what: &str) -> CliResult<()> {
    if x.len() == model.dim() {
        Ok(())
    } else {
        Err(Failure::input(anyhow!(
            "{what} has {} entries, the model has {} unknowns",
            x.len(),
            model.dim()
        )))
    }
}

fn validated(model: &MultiaffineModel) -> CliResult<()> {
    validate_model(model).into_result().map_err(Failure::from)
}

pub fn solve(args: &SolveArgs) -> CliResult<()> {
    let cfg = SolverConfig {
        alpha: args.alpha,
        tol: args.tol,
        max_sweeps: args.max_sweeps,
        seed: args.seed,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    let doc = read_problem(&args.problem)?;
    let model = &doc.model;
    validated(model)?;
    let (x0, init) = match (&args.init_file, &doc.x_init) {
        (Some(p), _) => (read_point(p)?, "init_file"),
        (None, Some(x)) => (x.clone(), "problem_file"),
        (None, None) => (vec![0.0; model.dim()], "zeros"),
    };
    check_len(model, &x0, "initial point")?;

    let start = Instant::now();
    let res = airls_solve(model, &DVector::from_vec(x0), &cfg)?;
    let total_s = start.elapsed().as_secs_f64();
    for d in &res.diagnostics {
        log::warn!("{d}");
    }

    ensure_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let trace_path = args.out.join("trace.csv");
    let header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    write_csv(
        &trace_path,
        &header,
        res.trace.iter().map(|r| {
            [
                r.sweep as f64,
                r.l,
                r.g_hat,
                r.g,
                r.max_block_delta,
                r.elapsed_s,
            ]
        }),
    )?;

    let mut prev = 0.0;
    let per_sweep_s = res
        .trace
        .iter()
        .map(|r| {
            let d = r.elapsed_s - prev;
            prev = r.elapsed_s;
            d
        })
        .collect();
    let blocks = model
        .layout
        .ids()
        .map(|b| BlockValues {
            name: model.layout.name(b),
            values: &res.x_hat[model.layout.range(b)],
        })
        .collect();
    let report = SolveReport {
        command: "solve",
        problem: display(&args.problem),
        init,
        config: &cfg,
        status: res.termination,
        blocks,
        result: &res,
        timing: Timing {
            total_s,
            per_sweep_s,
        },
        outputs: vec![display(&report_path), display(&trace_path)],
    };
    write_json(&report_path, &report)?;

    let last = res.final_record();
    say!(
        "{} after {} sweeps: G = {:.6e}, Ghat = {:.6e}",
        res.termination,
        res.sweeps,
        last.g,
        last.g_hat
    );
    say!(
        "wrote {} and {}",
        display(&report_path),
        display(&trace_path)
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Method {
    Prop1,
    Fast,
    Resampling,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    /// Problem file (JSON).
    pub problem: PathBuf,
    /// Solution: a solve report, `{"x_hat": [...]}` or a bare array.
    pub solution: PathBuf,
    /// Block name or index.
    #[arg(long)]
    pub block: String,
    #[arg(long, value_enum, default_value_t = Method::Prop1)]
    pub method: Method,
    /// Samples drawn (prop1, fast) or re-solved instances (resampling).
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Smoothing parameter used in weights and re-solves.
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    /// Standard deviation of the proposal for every coordinate.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Directory receiving sigma.csv and variance.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct VarianceReport<'a> {
    command: &'static str,
    problem: String,
    solution: String,
    block: &'a str,
    seed: u64,
    sampler: Option<&'a SamplerConfig>,
    solver: Option<&'a SolverConfig>,
    spectral_norm: f64,
    estimate: &'a CovarianceEstimate,
    outputs: Vec<String>,
}

fn find_block(model: &MultiaffineModel, key: &str) -> CliResult<BlockId> {
    match model.layout.id(key) {
        Ok(b) => Ok(b),
        Err(e) => match key.parse::<usize>() {
            Ok(i) if i < model.layout.len() => Ok(BlockId(i)),
            _ => Err(e.into()),
        },
    }
}

pub fn variance(args: &VarianceArgs) -> CliResult<()> {
    let doc = read_problem(&args.problem)?;
    let model = &doc.model;
    validated(model)?;
    let x_hat = read_point(&args.solution)?;
    check_len(model, &x_hat, "solution")?;
    let x_hat = DVector::from_vec(x_hat);
    let block = find_block(model, &args.block)?;

    let sampler = SamplerConfig {
        scale: args
            .scale
            .map_or(SamplerScale::Default, SamplerScale::Uniform),
        n_samples: args.samples,
        seed: args.seed,
        alpha: args.alpha,
        rtol: None,
    };
    let solver = SolverConfig::default().with_alpha(args.alpha);
    let est = match args.method {
        Method::Prop1 => estimate_covariance(model, &x_hat, block, &sampler)?,
        Method::Fast => estimate_covariance_fast(model, &x_hat, block, &sampler)?,
        Method::Resampling => {
            let spec: GeneratorSpec = doc
                .generator
                .clone()
                .ok_or_else(|| {
                    Failure::input(anyhow!(
                        "resampling needs a generator-backed problem file; {} has no `generator`",
                        display(&args.problem)
                    ))
                })
                .and_then(|v| {
                    serde_json::from_value(v)
                        .map_err(|e| Failure::input(anyhow!("unrecognized `generator` entry: {e}")))
                })?;
            solver.validate()?;
            resampling_covariance(
                |noise_seed| {
                    let inst = spec.with_noise_seed(noise_seed).generate()?;
                    Ok((inst.model, inst.x_init))
                },
                block,
                args.samples,
                args.seed,
                &solver,
            )?
        }
    };

    ensure_dir(&args.out)?;
    let sigma_path = args.out.join("sigma.csv");
    let report_path = args.out.join("variance.json");
    let name = model.layout.name(block);
    let header: Vec<String> = (0..est.sigma.ncols())
        .map(|j| format!("{name}[{j}]"))
        .collect();
    write_matrix_csv(&sigma_path, &header, &est.sigma)?;
    let resampling = matches!(args.method, Method::Resampling);
    let report = VarianceReport {
        command: "variance",
        problem: display(&args.problem),
        solution: display(&args.solution),
        block: name,
        seed: args.seed,
        sampler: (!resampling).then_some(&sampler),
        solver: resampling.then_some(&solver),
        spectral_norm: est.spectral_norm,
        estimate: &est,
        outputs: vec![display(&sigma_path), display(&report_path)],
    };
    write_json(&report_path, &report)?;
    say!("spectral norm {:.6e}", est.spectral_norm);
    say!(
        "wrote {} and {}",
        display(&sigma_path),
        display(&report_path)
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// One of fig1, fig4, fig5, fig6, fig8, fig10.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let suite = Suite::from_str(&args.suite)?;
    let out = run_suite(suite, args.seed)?;
    ensure_dir(&args.out_dir)?;
    let mut files = Vec::new();
    for c in &out.curves {
        let path = args.out_dir.join(format!("{}_{}.csv", suite, c.name));
        write_text(&path, &c.to_csv())?;
        files.push(display(&path));
    }
    let meta_path = args.out_dir.join(format!("{suite}_metadata.json"));
    let meta = serde_json::json!({
        "suite": out.suite,
        "seed": out.seed,
        "run_seeds": out.run_seeds,
        "solver": out.solver,
        "notes": out.notes,
        "curves": out.curves.iter().map(|c| &c.name).collect::<Vec<_>>(),
        "files": files,
    });
    write_json(&meta_path, &meta)?;
    for f in &files {
        say!("wrote {f}");
    }
    say!("wrote {}", display(&meta_path));
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// supply_demand, water, eiv_sysid, admittance, gpca or tensor_regression.
    pub generator: String,
    /// Generator parameters as key=value (keys are case-insensitive).
    pub params: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Problem file to write; the ground truth goes to `<stem>.truth.json`.
    #[arg(long, default_value = "problem.json")]
    pub out: PathBuf,
}

/// Default parameters of a generator as a JSON object.
fn generator_defaults(name: &str, seed: u64) -> CliResult<Value> {
    let v = match name {
        "supply_demand" => serde_json::to_value(SupplyDemandParams::new(2, 1, 0.01, seed)),
        "water" => serde_json::to_value(WaterParams::new(50, 0.01, seed)),
        "eiv_sysid" => serde_json::to_value(SysidParams::new(2, 1, 2000, 0.01, seed)),
        "admittance" => serde_json::to_value(AdmittanceParams::new(9, 400, 1e-4, seed)),
        "gpca" => serde_json::to_value(GpcaParams::new(2, 2, 50, 2.0, seed)),
        "tensor_regression" => serde_json::to_value(TensorParams::new(3, 4, 50, 1.0, seed)),
        other => {
            return Err(Failure::input(anyhow!(
                "unknown generator `{other}`; expected supply_demand, water, eiv_sysid, \
                 admittance, gpca or tensor_regression"
            )))
        }
    };
    v.map_err(Failure::output)
}

/// Generator spec from defaults overridden by `key=value` pairs.
pub fn parse_generator(name: &str, params: &[String], seed: u64) -> CliResult<GeneratorSpec> {
    let Value::Object(mut fields) = generator_defaults(name, seed)? else {
        unreachable!("parameter structs serialize to objects");
    };
    let mut allowed: Vec<String> = fields.keys().cloned().collect();
    allowed.push("noise_seed".into());
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Failure::input(anyhow!("expected key=value, got `{p}`")))?;
        let key = k.trim().to_ascii_lowercase();
        if key == "seed" {
            return Err(Failure::input(anyhow!("use --seed instead of seed=")));
        }
        if !allowed.contains(&key) {
            return Err(Failure::input(anyhow!(
                "unknown parameter `{k}` for {name}; expected one of {}",
                allowed.join(", ")
            )));
        }
        let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::from(v.trim()));
        fields.insert(key, value);
    }
    let mut tagged = Map::new();
    tagged.insert("name".into(), Value::from(name));
    tagged.extend(fields);
    serde_json::from_value(Value::Object(tagged))
        .map_err(|e| Failure::input(anyhow!("invalid parameters for {name}: {e}")))
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = parse_generator(&args.generator, &args.params, args.seed)?;
    let inst = spec.generate()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let truth = truth_path(&args.out);
    write_text(&args.out, &(inst.to_document().to_json()? + "\n"))?;
    write_text(&truth, &(inst.truth_json()? + "\n"))?;
    say!(
        "{}: {} unknowns in {} blocks, {} factors",
        spec.name(),
        inst.model.dim(),
        inst.model.layout.len(),
        inst.model.num_factors()
    );
    say!("wrote {} and {}", display(&args.out), display(&truth));
    Ok(())
}

pub fn threads_from_env(value: Option<String>) -> CliResult<Option<usize>> {
    let Some(v) = value else { return Ok(None) };
    match v.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(Some(n)),
        _ => Err(Failure::input(anyhow!(
            "AIRLS_THREADS must be a positive integer, got `{v}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_overrides() {
        let spec = parse_generator(
            "eiv_sysid",
            &["n_x=2".into(), "n_u=0".into(), "outlier_ratio=0.01".into()],
            7,
        )
        .unwrap();
        match spec {
            GeneratorSpec::EivSysid(p) => {
                assert_eq!((p.n_x, p.n_u, p.seed), (2, 0, 7));
                assert_eq!(p.outlier_ratio, 0.01);
            }
            other => panic!("wrong generator {other:?}"),
        }
        let spec = parse_generator("supply_demand", &["T=3".into(), "n_T=2".into()], 0).unwrap();
        assert!(matches!(spec, GeneratorSpec::SupplyDemand(p) if p.t == 3 && p.n_t == 2));
    }

    #[test]
    fn generator_errors() {
        assert_eq!(parse_generator("nope", &[], 0).unwrap_err().code, 2);
        assert_eq!(
            parse_generator("water", &["x=1".into()], 0)
                .unwrap_err()
                .code,
            2
        );
        assert_eq!(
            parse_generator("water", &["t".into()], 0).unwrap_err().code,
            2
        );
        assert_eq!(
            parse_generator("water", &["t=abc".into()], 0)
                .unwrap_err()
                .code,
            2
        );
    }

    #[test]
    fn thread_env() {
        assert_eq!(threads_from_env(None).unwrap(), None);
        assert_eq!(threads_from_env(Some("3".into())).unwrap(), Some(3));
        assert!(threads_from_env(Some("0".into())).is_err());
    }
}
