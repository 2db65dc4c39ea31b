//! The `holderlab` command-line front end: dispatches a [`RunConfig`] to the
//! experiment modules and writes deterministic CSV/JSON artifacts.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{parse_config, parse_config_file, Command, ConfigError, Format, Key, RunConfig, GLOBAL_KEYS};

use crate::error::Error;
use crate::holder_inequalities::{run_inequality_suite, SuiteConfig};
use crate::mlmc::{mlmc_convergence_experiment, MlmcExperimentConfig, PathFunctional};
use crate::special_fns::{brownian_ratio_f, gamma, gaussian_abs_moment, script_e, SeriesConfig};
use crate::spectral_galerkin::{galerkin_rate_experiment, GalerkinConfig, Nonlinearity, SpectralSeeProblem};
use crate::stochastic_schemes::{brownian_exact_experiment, euler_rate_experiment, EulerRateConfig, NormKind, SdeProblem};

/// Name of the sidecar log; it holds the timestamp and is not an artifact.
pub const LOG_FILE: &str = "holderlab.log";

/// Exit statuses of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    /// Precondition violations surface as configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(
                Error::InvalidArgument(_) | Error::OutOfRange { .. } | Error::Domain { .. } | Error::Unsupported(_),
            ) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_FAILURE,
        }
    }
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: i32,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

/// Runs the configured command on a pool with `config.threads` workers.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| ConfigError::Other(format!("cannot start thread pool: {e}")))?;
    let outcome = pool.install(|| dispatch(config))?;
    write_log(config, &outcome)?;
    Ok(outcome)
}

fn dispatch(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    match cfg.command {
        Command::Inequalities => run_inequalities(cfg),
        Command::Brownian => run_brownian(cfg),
        Command::Euler => run_euler(cfg),
        Command::Galerkin => run_galerkin(cfg),
        Command::Mlmc => run_mlmc(cfg),
        Command::Special => run_special(cfg),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Writes `rows` as `<stem>.csv` or `<stem>.json`.
fn write_table<T: Serialize>(cfg: &RunConfig, stem: &str, rows: &[T]) -> Result<PathBuf, Error> {
    ensure_dir(&cfg.output)?;
    match cfg.format {
        Format::Csv => {
            let path = cfg.output.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
            for row in rows {
                w.serialize(row).map_err(|e| io_error(&path, e))?;
            }
            w.flush().map_err(|e| io_error(&path, e))?;
            Ok(path)
        }
        Format::Json => write_json(cfg, stem, &rows),
    }
}

fn write_json<T: Serialize + ?Sized>(cfg: &RunConfig, stem: &str, value: &T) -> Result<PathBuf, Error> {
    ensure_dir(&cfg.output)?;
    let path = cfg.output.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    Ok(path)
}

fn write_log(cfg: &RunConfig, outcome: &RunOutcome) -> Result<(), Error> {
    if outcome.artifacts.is_empty() {
        return Ok(());
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut text = format!(
        "timestamp_unix = {stamp}\ncommand = {}\nseed = {}\nthreads = {}\nstatus = {}\nsummary = {}\n",
        cfg.command.name(),
        cfg.seed,
        cfg.threads,
        outcome.status,
        outcome.summary
    );
    for (k, v) in &cfg.params {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = cfg.output.join(LOG_FILE);
    fs::write(&path, text).map_err(|e| io_error(&path, e))
}

fn run_inequalities(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let defaults = SuiteConfig::default();
    let suite = SuiteConfig {
        min_points: cfg.get("min_points", defaults.min_points)?,
        max_points: cfg.get("max_points", defaults.max_points)?,
        dims: cfg.get_list("dims", &defaults.dims)?,
        horizon: cfg.get("horizon", defaults.horizon)?,
        oversample: cfg.get("oversample", defaults.oversample)?,
    };
    let trials = cfg.get("trials", 1000usize)?;
    let report = run_inequality_suite(trials, cfg.seed, &suite)?;
    let path = write_json(cfg, "inequalities", &report)?;
    let failures = report.total_failures();
    Ok(RunOutcome {
        status: if failures == 0 { EXIT_OK } else { EXIT_FAILURE },
        summary: format!(
            "inequalities: {} checks x {} trials, {} failures",
            report.inequalities.len(),
            report.trials,
            failures
        ),
        artifacts: vec![path],
    })
}

fn run_brownian(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let rows = brownian_exact_experiment(
        &cfg.get_list("alphas", &[0.0, 0.25, 0.5])?,
        &cfg.get_list("ps", &[2.0])?,
        &cfg.get_list("Ns", &[4, 16, 64])?,
        cfg.get("samples", 10_000usize)?,
        cfg.get("oversample", 8usize)?,
        cfg.get("horizon", 1.0)?,
        cfg.seed,
    )?;
    let path = write_table(cfg, "brownian_exact", &rows)?;
    let agree = rows
        .iter()
        .filter(|r| (r.mc_estimate - r.exact).abs() <= 3.0 * r.mc_stderr + 0.02 * r.exact.abs())
        .count();
    Ok(RunOutcome {
        status: EXIT_OK,
        summary: format!(
            "brownian: {agree}/{} cells within 3 std errors + 2% of the closed form",
            rows.len()
        ),
        artifacts: vec![path],
    })
}

fn sde_problem(cfg: &RunConfig) -> Result<SdeProblem, CliError> {
    let horizon = cfg.get("horizon", 1.0)?;
    Ok(match cfg.get_choice("problem", &["bm", "gbm"], "bm")? {
        "bm" => {
            for k in ["mu", "sigma"] {
                if cfg.params.contains_key(k) {
                    return Err(ConfigError::Value {
                        key: k.into(),
                        message: "only meaningful with problem = gbm".into(),
                    }
                    .into());
                }
            }
            SdeProblem::brownian_motion(cfg.get("x0", 0.0)?, horizon)?
        }
        _ => SdeProblem::geometric_brownian_motion(
            cfg.get("mu", 0.5)?,
            cfg.get("sigma", 0.2)?,
            cfg.get("x0", 1.0)?,
            horizon,
        )?,
    })
}

fn run_euler(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let mut problem = sde_problem(cfg)?;
    if cfg.get_choice("reference", &["exact", "euler"], "exact")? == "euler" {
        problem = problem.without_exact_solution();
    }
    let defaults = EulerRateConfig::default();
    let rate_cfg = EulerRateConfig {
        ns: cfg.get_list("Ns", &defaults.ns)?,
        p: cfg.get("p", defaults.p)?,
        alpha: cfg.get("alpha", defaults.alpha)?,
        samples: cfg.get("samples", defaults.samples)?,
        seed: cfg.seed,
        norm: match cfg.get_choice("norm", &["full", "seminorm"], "full")? {
            "full" => NormKind::Full,
            _ => NormKind::Seminorm,
        },
        fine_factor: cfg.get("fine_factor", defaults.fine_factor)?,
    };
    let (rows, fit) = euler_rate_experiment(&problem, &rate_cfg)?;
    let path = write_table(cfg, "euler_rate", &rows)?;
    Ok(RunOutcome {
        status: EXIT_OK,
        summary: format!(
            "euler ({}): fitted slope {:.4} (R^2 {:.4})",
            problem.name, fit.slope, fit.r_squared
        ),
        artifacts: vec![path],
    })
}

fn galerkin_problem(cfg: &RunConfig) -> Result<SpectralSeeProblem, CliError> {
    let mut p = SpectralSeeProblem::default();
    match cfg.get_choice("lambda_family", &["laplacian", "power"], "laplacian")? {
        "laplacian" => {
            for k in ["lambda_scale", "lambda_exponent"] {
                if cfg.params.contains_key(k) {
                    return Err(ConfigError::Value {
                        key: k.into(),
                        message: "only meaningful with lambda_family = power".into(),
                    }
                    .into());
                }
            }
        }
        _ => {
            p.lambda_scale = cfg.get("lambda_scale", p.lambda_scale)?;
            p.lambda_exponent = cfg.get("lambda_exponent", p.lambda_exponent)?;
        }
    }
    p.noise_scale = cfg.get("noise_scale", p.noise_scale)?;
    p.s = cfg.get("s", p.s)?;
    p.theta_target = cfg.get("theta_target", p.theta_target)?;
    p.iota = cfg.get("iota", p.iota)?;
    p.chi = cfg.get("chi", p.chi)?;
    p.beta = cfg.get("beta", p.beta)?;
    p.gamma = cfg.get("gamma", p.gamma)?;
    p.alpha_f = cfg.get("alpha_F", p.alpha_f)?;
    p.x0 = cfg.get_list("x0", &p.x0)?;
    p.horizon = cfg.get("horizon", p.horizon)?;
    p.nonlinearity = match cfg.get_choice("nonlinearity", &["zero", "tanh", "damping"], "zero")? {
        "zero" => Nonlinearity::Zero,
        "tanh" => Nonlinearity::Tanh {
            kappa: cfg.get("kappa", 0.5)?,
        },
        _ => Nonlinearity::Damping {
            rate: cfg.get("rate", 1.0)?,
        },
    };
    Ok(p)
}

fn run_galerkin(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let problem = galerkin_problem(cfg)?;
    let defaults = GalerkinConfig::default();
    let gcfg = GalerkinConfig {
        ns: cfg.get_list("Ns", &defaults.ns)?,
        n_ref: cfg.get("N_ref", defaults.n_ref)?,
        p: cfg.get("p", defaults.p)?,
        delta: cfg.get("delta", defaults.delta)?,
        samples: cfg.get("samples", defaults.samples)?,
        time_steps: cfg.get("time_steps", defaults.time_steps)?,
        seed: cfg.seed,
    };
    let (rows, fit) = galerkin_rate_experiment(&problem, &gcfg)?;
    let path = write_table(cfg, "galerkin_rate", &rows)?;
    Ok(RunOutcome {
        status: EXIT_OK,
        summary: format!("galerkin: fitted slope {:.4} (R^2 {:.4})", fit.slope, fit.r_squared),
        artifacts: vec![path],
    })
}

fn run_mlmc(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let problem = sde_problem(cfg)?;
    let defaults = MlmcExperimentConfig::default();
    let mcfg = MlmcExperimentConfig {
        levels: cfg.get_list("levels", &defaults.levels)?,
        n0: cfg.get("n0", defaults.n0)?,
        p: cfg.get("p", defaults.p)?,
        gamma: cfg.get("gamma", defaults.gamma)?,
        rho: cfg.get("rho", defaults.rho)?,
        alpha: cfg.get("alpha", defaults.alpha)?,
        beta: cfg.get("beta", defaults.beta)?,
        repetitions: cfg.get("repetitions", defaults.repetitions)?,
        reference_samples: cfg.get("reference_samples", defaults.reference_samples)?,
        reference_factor: cfg.get("reference_factor", defaults.reference_factor)?,
        seed: cfg.seed,
    };
    let g = match cfg.get_choice("functional", &["identity", "saturating"], "identity")? {
        "identity" => PathFunctional::identity(mcfg.alpha),
        _ => PathFunctional::saturating(mcfg.alpha),
    };
    let out = mlmc_convergence_experiment(&problem, &g, &mcfg)?;
    let conv = write_table(cfg, "mlmc_conv", &out.rows)?;
    let levels = write_table(cfg, "mlmc_levels", &out.levels)?;
    let c = &out.comparison;
    Ok(RunOutcome {
        status: if out.inconclusive { EXIT_FAILURE } else { EXIT_OK },
        summary: format!(
            "mlmc: fitted log2-error slope per level {:.4}; at L = {} (cost {}) mlmc error {:.4e} vs plain MC {:.4e}{}",
            out.fit.slope,
            c.levels,
            c.cost,
            c.mlmc_error,
            c.plain_error,
            if out.inconclusive { "; INCONCLUSIVE: reference error too large" } else { "" }
        ),
        artifacts: vec![conv, levels],
    })
}

#[derive(Debug, Serialize)]
struct SpecialRow {
    function: &'static str,
    r: Option<f64>,
    x: Option<f64>,
    alpha: Option<f64>,
    p: Option<f64>,
    value: f64,
}

fn required<T>(cfg: &RunConfig, key: &str) -> Result<T, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    cfg.get_opt(key)?.ok_or_else(|| {
        ConfigError::Value {
            key: key.to_string(),
            message: "required for this function".into(),
        }
        .into()
    })
}

fn run_special(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let name = cfg.get_choice("fn", &["gamma", "script-e", "f-alpha", "gauss-moment"], "gamma")?;
    let mut row = SpecialRow {
        function: name,
        r: None,
        x: None,
        alpha: None,
        p: None,
        value: 0.0,
    };
    row.value = match name {
        "gamma" => {
            let x = required(cfg, "x")?;
            row.x = Some(x);
            gamma(x)?
        }
        "script-e" => {
            let (r, x) = (required(cfg, "r")?, required(cfg, "x")?);
            row.r = Some(r);
            row.x = Some(x);
            let defaults = SeriesConfig::default();
            let series = SeriesConfig {
                rel_tol: cfg.get("rel_tol", defaults.rel_tol)?,
                max_terms: cfg.get("max_terms", defaults.max_terms)?,
            };
            script_e(r, x, &series)?
        }
        "f-alpha" => {
            let a = required(cfg, "alpha")?;
            row.alpha = Some(a);
            brownian_ratio_f(a)?
        }
        _ => {
            let p = required(cfg, "p")?;
            row.p = Some(p);
            gaussian_abs_moment(p)?
        }
    };
    let path = write_table(cfg, "special", std::slice::from_ref(&row))?;
    Ok(RunOutcome {
        status: EXIT_OK,
        summary: format!("{name} = {:?}", row.value),
        artifacts: vec![path],
    })
}

/// Entry point used by the binary: parse, run, print, and map to a status.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match parse_config(argv) {
        Ok(c) => c,
        Err(ConfigError::Usage(e)) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.status
        }
        Err(e) => {
            let label = if e.exit_code() == EXIT_CONFIG { "configuration error" } else { "error" };
            eprintln!("{label}: {e}");
            e.exit_code()
        }
    }
}
