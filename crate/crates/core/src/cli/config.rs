//! Run configuration: command-line flags layered over an optional
//! `key = value` file, validated against a per-command key table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Arg, ArgMatches};

/// Configuration problems; always reported with exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Usage(#[from] clap::Error),
    #[error("{file}:{line}: {message}")]
    File { file: String, line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Inequalities,
    Brownian,
    Euler,
    Galerkin,
    Mlmc,
    Special,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Inequalities,
        Command::Brownian,
        Command::Euler,
        Command::Galerkin,
        Command::Mlmc,
        Command::Special,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Inequalities => "inequalities",
            Command::Brownian => "brownian",
            Command::Euler => "euler",
            Command::Galerkin => "galerkin",
            Command::Mlmc => "mlmc",
            Command::Special => "special",
        }
    }

    fn about(&self) -> &'static str {
        match self {
            Command::Inequalities => "Randomised check of the deterministic Hölder inequalities",
            Command::Brownian => "Brownian interpolation errors: closed form versus Monte Carlo",
            Command::Euler => "Strong convergence rate of the Euler–Maruyama scheme",
            Command::Galerkin => "Spectral Galerkin truncation rate for a stochastic heat equation",
            Command::Mlmc => "Multilevel Monte Carlo convergence in a Hölder norm",
            Command::Special => "Spot evaluation of the special functions",
        }
    }

    pub fn keys(&self) -> &'static [Key] {
        match self {
            Command::Inequalities => INEQUALITY_KEYS,
            Command::Brownian => BROWNIAN_KEYS,
            Command::Euler => EULER_KEYS,
            Command::Galerkin => GALERKIN_KEYS,
            Command::Mlmc => MLMC_KEYS,
            Command::Special => SPECIAL_KEYS,
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::Other(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("expected `csv` or `json`, got `{s}`")),
        }
    }
}

/// A configuration key: its file spelling, its `--flag` spelling and help.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, flag: &'static str, help: &'static str) -> Key {
    Key { name, flag, help }
}

pub const GLOBAL_KEYS: &[Key] = &[
    key("seed", "seed", "Master seed (default 0)"),
    key("threads", "threads", "Worker threads, 0 = all cores (fallback: HOLDERLAB_THREADS)"),
    key("output", "output", "Directory for the artifacts (default: out)"),
    key("format", "format", "Artifact format: csv or json (default csv)"),
];

const INEQUALITY_KEYS: &[Key] = &[
    key("trials", "trials", "Number of random trials (default 1000)"),
    key("min_points", "min-points", "Smallest random partition size (default 3)"),
    key("max_points", "max-points", "Largest random partition size (default 33)"),
    key("dims", "dims", "State dimensions, comma separated (default 1,3)"),
    key("horizon", "horizon", "Time horizon T (default 1)"),
    key("oversample", "oversample", "Evaluation refinement factor (default 4)"),
];

const BROWNIAN_KEYS: &[Key] = &[
    key("alphas", "alphas", "Hölder exponents in [0, 1/2] (default 0,0.25,0.5)"),
    key("ps", "ps", "Moment exponents (default 2)"),
    key("Ns", "ns", "Interpolation resolutions (default 4,16,64)"),
    key("samples", "samples", "Monte Carlo samples per resolution (default 10000)"),
    key("oversample", "oversample", "Sampling refinement per interpolation step (default 8)"),
    key("horizon", "horizon", "Time horizon T (default 1)"),
];

const SDE_KEYS: [Key; 5] = [
    key("problem", "problem", "bm (dX = dW) or gbm (dX = mu X dt + sigma X dW)"),
    key("mu", "mu", "GBM drift coefficient (default 0.5)"),
    key("sigma", "sigma", "GBM volatility (default 0.2)"),
    key("x0", "x0", "Initial value (default 0 for bm, 1 for gbm)"),
    key("horizon", "horizon", "Time horizon T (default 1)"),
];

const EULER_KEYS: &[Key] = &[
    SDE_KEYS[0],
    SDE_KEYS[1],
    SDE_KEYS[2],
    SDE_KEYS[3],
    SDE_KEYS[4],
    key("Ns", "ns", "Step counts (default 8,16,32,64,128)"),
    key("p", "p", "Moment exponent (default 2)"),
    key("alpha", "alpha", "Hölder exponent of the error norm (default 0)"),
    key("samples", "samples", "Monte Carlo samples (default 4000)"),
    key("norm", "norm", "full (sup + seminorm) or seminorm (default full)"),
    key("fine_factor", "fine-factor", "Reference grid refinement over max N (default 8)"),
    key("reference", "reference", "exact (closed-form solution) or euler (fine Euler path)"),
];

const GALERKIN_KEYS: &[Key] = &[
    key("lambda_family", "lambda-family", "laplacian (λ_n = −π² n²) or power (λ_n = −lambda_scale n^lambda_exponent)"),
    key("lambda_scale", "lambda-scale", "Eigenvalue scale for the power family"),
    key("lambda_exponent", "lambda-exponent", "Eigenvalue exponent for the power family"),
    key("noise_scale", "noise-scale", "Noise coefficient scale (default 1)"),
    key("s", "s", "Noise decay b_n = noise_scale n^{-s} (default 0.6)"),
    key("theta_target", "theta-target", "Target regularity gain (default 0.45)"),
    key("iota", "iota", "Rate multiplier (default 2)"),
    key("chi", "chi", "Spatial regularity of the solution (default 0.45)"),
    key("beta", "beta", "Regularity index of the initial value space (default 0)"),
    key("gamma", "gamma", "Regularity index of the error norm (default 0)"),
    key("nonlinearity", "nonlinearity", "zero, tanh or damping (default zero)"),
    key("kappa", "kappa", "Strength of the tanh nonlinearity (default 0.5)"),
    key("rate", "rate", "Rate of the damping nonlinearity (default 1)"),
    key("alpha_F", "alpha-f", "Smoothing order of the nonlinearity (default 0.25)"),
    key("x0", "x0", "Initial coefficients, comma separated (default empty)"),
    key("horizon", "horizon", "Time horizon T (default 1)"),
    key("Ns", "ns", "Truncation levels (default 4,8,16,32)"),
    key("N_ref", "n-ref", "Reference truncation level (default 256)"),
    key("p", "p", "Moment exponent (default 2)"),
    key("delta", "delta", "Hölder exponent in time; 0 measures sup_t (default 0)"),
    key("samples", "samples", "Monte Carlo samples (default 4000)"),
    key("time_steps", "time-steps", "Uniform time steps (default 1024)"),
];

const MLMC_KEYS: &[Key] = &[
    SDE_KEYS[0],
    SDE_KEYS[1],
    SDE_KEYS[2],
    SDE_KEYS[3],
    SDE_KEYS[4],
    key("functional", "functional", "identity or saturating x/(1+|x|) (default identity)"),
    key("levels", "levels", "Finest levels L to run (default 2,3,4,5,6,7)"),
    key("n0", "n0", "Coarsest resolution N0 (default 1)"),
    key("p", "p", "Moment exponent over repetitions (default 2)"),
    key("gamma", "gamma", "Hölder exponent of the error norm (default 0)"),
    key("rho", "rho", "Declared strong rate of the level sampler (default 0.4)"),
    key("alpha", "alpha", "Domain Hölder exponent of the functional (default 0.1)"),
    key("beta", "beta", "Declared path regularity (default 0.5)"),
    key("repetitions", "repetitions", "Independent estimates per L (default 50)"),
    key("reference_samples", "reference-samples", "Samples of the reference mean (default 65536)"),
    key("reference_factor", "reference-factor", "Reference resolution over N_L (default 4)"),
];

const SPECIAL_KEYS: &[Key] = &[
    key("fn", "fn", "gamma, script-e, f-alpha or gauss-moment"),
    key("x", "x", "Argument of gamma and script-e"),
    key("r", "r", "Order of script-e"),
    key("alpha", "alpha", "Argument of f-alpha"),
    key("p", "p", "Exponent of gauss-moment"),
    key("rel_tol", "rel-tol", "Series truncation tolerance (default 1e-14)"),
    key("max_terms", "max-terms", "Series term cap (default 10000)"),
];

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    /// `0` = all cores.
    pub threads: usize,
    pub output: PathBuf,
    pub format: Format,
    /// Command parameters by key, as given.
    pub params: BTreeMap<String, String>,
}

fn build_cli() -> clap::Command {
    let mut root = clap::Command::new("holderlab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Numerical experiments for Hölder-norm error analysis of stochastic schemes")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("Read `key = value` lines from FILE; flags take precedence"),
        );
    for k in GLOBAL_KEYS {
        root = root.arg(Arg::new(k.name).long(k.flag).global(true).value_name("VALUE").help(k.help));
    }
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name()).about(cmd.about());
        for k in cmd.keys() {
            sub = sub.arg(Arg::new(k.name).long(k.flag).value_name("VALUE").allow_negative_numbers(true).help(k.help));
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str, file: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::File {
                file: file.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::File {
                file: file.to_string(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn string_arg(m: &ArgMatches, id: &str) -> Option<String> {
    m.try_get_one::<String>(id).ok().flatten().cloned()
}

/// Builds a [`RunConfig`] from `argv` (including the program name).
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = build_cli().try_get_matches_from(argv)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse()?;

    let mut values: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = string_arg(sub, "config").or_else(|| string_arg(&matches, "config")) {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ConfigError::Other(format!("cannot read config file {path}: {e}")))?;
        for (line, k, v) in parse_config_file(&text, &path)? {
            let known = GLOBAL_KEYS.iter().chain(command.keys()).any(|key| key.name == k);
            if !known {
                return Err(ConfigError::File {
                    file: path.clone(),
                    line,
                    message: format!("unknown key `{k}` for command `{}`", command.name()),
                });
            }
            values.insert(k, v);
        }
    }
    for k in GLOBAL_KEYS {
        // global flags may appear before or after the subcommand
        if let Some(v) = string_arg(sub, k.name).or_else(|| string_arg(&matches, k.name)) {
            values.insert(k.name.to_string(), v);
        }
    }
    for k in command.keys() {
        if let Some(v) = string_arg(sub, k.name) {
            values.insert(k.name.to_string(), v);
        }
    }

    let seed = take_parsed(&mut values, "seed")?.unwrap_or(0);
    let threads = match take_parsed(&mut values, "threads")? {
        Some(t) => t,
        None => match std::env::var("HOLDERLAB_THREADS") {
            Ok(v) if !v.trim().is_empty() => parse_value("HOLDERLAB_THREADS", &v)?,
            _ => 0,
        },
    };
    let output = values.remove("output").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    let format = take_parsed(&mut values, "format")?.unwrap_or(Format::Csv);
    Ok(RunConfig {
        command,
        seed,
        threads,
        output,
        format,
        params: values,
    })
}

fn take_parsed<T>(values: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    values.remove(key).map(|v| parse_value(key, &v)).transpose()
}

fn parse_value<T>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        message: format!("`{raw}`: {e}"),
    })
}

impl RunConfig {
    /// Typed parameter with a default.
    pub fn get<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.params.get(key) {
            Some(raw) => parse_value(key, raw),
            None => Ok(default),
        }
    }

    /// Typed parameter without a default.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.params.get(key).map(|raw| parse_value(key, raw)).transpose()
    }

    /// Comma-separated list parameter with a default.
    pub fn get_list<T>(&self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T: FromStr + Clone,
        T::Err: fmt::Display,
    {
        match self.params.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) if raw.trim().is_empty() => Ok(Vec::new()),
            Some(raw) => raw.split(',').map(|item| parse_value(key, item)).collect(),
        }
    }

    /// One of a fixed set of words.
    pub fn get_choice(&self, key: &str, choices: &[&'static str], default: &'static str) -> Result<&'static str, ConfigError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(raw) => choices.iter().copied().find(|c| *c == raw.trim()).ok_or_else(|| ConfigError::Value {
                key: key.to_string(),
                message: format!("`{raw}`: expected one of {}", choices.join(", ")),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("holderlab".to_string())
            .chain(s.split_whitespace().map(String::from))
            .collect()
    }

    #[test]
    fn flags_populate_the_config() {
        let c = parse_config(argv("brownian --seed 7 --samples 10000")).unwrap();
        assert_eq!(c.command, Command::Brownian);
        assert_eq!(c.seed, 7);
        assert_eq!(c.get::<usize>("samples", 0).unwrap(), 10000);
        assert_eq!(c.format, Format::Csv);
        // global flags are accepted before the subcommand too
        let c = parse_config(argv("--seed 3 --format json euler")).unwrap();
        assert_eq!((c.seed, c.format), (3, Format::Json));
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nsamples = 100   # trailing\nseed=5\n\nNs = 4,8\n").unwrap();
        let c = parse_config(argv(&format!("brownian --config {} --samples 200", path.display()))).unwrap();
        assert_eq!(c.get::<usize>("samples", 0).unwrap(), 200);
        assert_eq!(c.seed, 5);
        assert_eq!(c.get_list::<usize>("Ns", &[]).unwrap(), vec![4, 8]);
    }

    #[test]
    fn malformed_and_unknown_keys_are_errors() {
        let c = parse_config(argv("euler --alpha banana")).unwrap();
        let err = c.get::<f64>("alpha", 0.0).unwrap_err().to_string();
        assert!(err.contains("alpha") && err.contains("banana"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "samples = 10\nsampels = 20\n").unwrap();
        let err = parse_config(argv(&format!("brownian --config {}", path.display()))).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("sampels"), "{err}");

        std::fs::write(&path, "samples 10\n").unwrap();
        assert!(parse_config(argv(&format!("brownian --config {}", path.display()))).is_err());
        assert!(parse_config(argv("brownian --no-such-flag 1")).is_err());
        assert!(parse_config(argv("brownian --seed -1")).is_err());
    }

    #[test]
    fn choices_are_checked() {
        let c = parse_config(argv("mlmc --functional cubic")).unwrap();
        assert!(c.get_choice("functional", &["identity", "saturating"], "identity").is_err());
    }
}
