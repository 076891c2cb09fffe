//! The `tailchain` command line.
//!
//! Every subcommand is also callable as a function; [`run_cli`] parses
//! arguments and returns the process exit code.

pub mod config;
pub mod io;
pub mod run;

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tailchain::admissible::{adjoint_with_tol, is_admissible_with_tol, JSON_SLACK_TOL};
use tailchain::chain::{battery, sample_bftc_paths, timechange_family};
use tailchain::diagnostics::{energy_permutation_test, TestRecord, DEFAULT_PERMUTATIONS};
use tailchain::engine::{extract_windows, norm_percentile, simulate_with, SimConfig};
use tailchain::measures::{AtomMeasure, TailIndex};
use tailchain::models::{BuiltModel, ModelConfig};
use tailchain::rng;

pub use config::{load_config, validate_config, Diagnostic, ExperimentConfig};
pub use run::{run_experiment, RunReport};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TAILCHAIN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "tailchain",
    version,
    about = "Tail chain experiments for heavy-tailed Markov chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelArgs {
    /// Builtin model name (ar1-d1, kesten-lognormal).
    #[arg(long)]
    pub model: Option<String>,
    /// JSON model specification file.
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
}

impl ModelArgs {
    pub fn config(&self) -> anyhow::Result<ModelConfig> {
        match (&self.model, &self.spec_file) {
            (Some(name), _) => ModelConfig::builtin(name).with_context(|| {
                format!(
                    "unknown builtin model '{name}' (known: {})",
                    ModelConfig::BUILTIN_NAMES.join(", ")
                )
            }),
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok(serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?)
            }
            (None, None) => bail!("need --model or --spec-file"),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory to a binary file with a JSON sidecar.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract normalized windows around exceedances of a simulated trajectory.
    Windows {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        threshold_percentile: f64,
        #[arg(short = 's', default_value_t = 2)]
        s: usize,
        #[arg(short = 't', default_value_t = 2)]
        t: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjoint of an atomic measure read as JSON ("-" for stdin).
    Adjoint {
        #[arg(long, default_value = "-")]
        input: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample tail chain paths, or estimate the time-change family.
    Bftc {
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides the tail index of the model.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(short = 's', default_value_t = 2)]
        s: usize,
        #[arg(short = 't', default_value_t = 2)]
        t: usize,
        #[arg(short = 'n', default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        check_timechange: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy permutation test between two numeric CSV files.
    Compare {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Leading columns to drop from both files.
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Run a full experiment from a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a configuration file against the schema.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn sink(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn with_alpha(cfg: ModelConfig, alpha: Option<f64>) -> ModelConfig {
    let Some(a) = alpha else { return cfg };
    match cfg {
        ModelConfig::Ar1 {
            d,
            a: m,
            innovation,
            ..
        } => ModelConfig::Ar1 {
            d,
            alpha: a,
            a: m,
            innovation,
        },
        ModelConfig::Kesten {
            d,
            radial,
            rotation,
            additive,
            ..
        } => ModelConfig::Kesten {
            d,
            alpha: a,
            radial,
            rotation,
            additive,
        },
    }
}

/// Adjoint of a JSON measure plus the admissibility report of the input.
pub fn adjoint_json(text: &str, alpha: f64) -> anyhow::Result<serde_json::Value> {
    let p = AtomMeasure::from_json_str(text).context("[measures] reading measure")?;
    let alpha = TailIndex::new(alpha)?;
    let report = is_admissible_with_tol(&p, alpha, JSON_SLACK_TOL).context("[admissible]")?;
    let star = adjoint_with_tol(&p, alpha, JSON_SLACK_TOL).context("[admissible]")?;
    Ok(serde_json::json!({ "adjoint": star.to_json(), "admissibility": report }))
}

fn simulate_cmd(
    model: &ModelArgs,
    n: usize,
    burn_in: Option<usize>,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = model.config()?;
    let built = cfg.build().context("[models]")?;
    let m = built.as_model();
    let mut sim = SimConfig::new(n);
    if let Some(b) = burn_in {
        sim = sim.burn_in(b);
    }
    let traj = simulate_with(m.as_ref(), &sim, &mut rng::split(seed, 1)).context("[engine]")?;
    let header = io::Sidecar {
        d: m.dim(),
        n,
        seed,
        model: serde_json::to_value(&cfg)?,
        burn_in: burn_in.unwrap_or_else(|| m.burn_in()),
    };
    io::write_trajectory(out, &traj, &header)
}

fn bftc_cmd(
    built: &BuiltModel,
    s: usize,
    t: usize,
    n: usize,
    seed: u64,
    check: bool,
    out: Option<&Path>,
) -> anyhow::Result<bool> {
    let spec = built.bftc_spec().context("[tailchain]")?;
    let d = spec.dim();
    if !check {
        let paths =
            sample_bftc_paths(&spec, s, t, n, &mut rng::split(seed, 2)).context("[tailchain]")?;
        io::write_paths(sink(out)?, &paths, d)?;
        return Ok(true);
    }
    let fs_ = battery();
    let family =
        timechange_family(&fs_, &spec, s, t, n, &mut rng::split(seed, 4)).context("[tailchain]")?;
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(["functional", "i", "estimate", "ci"])?;
    let mut agrees = true;
    for (f, fam) in fs_.iter().zip(&family) {
        agrees &= tailchain::chain::family_agrees(fam);
        for (i, e) in fam.iter().enumerate() {
            w.write_record([
                f.name().to_string(),
                i.to_string(),
                e.estimate.to_string(),
                e.ci.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(agrees)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the exit code: 0 on success, 1 when a gated check fails or a
/// configuration is invalid.
pub fn run_cli<I, T>(args: I) -> anyhow::Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Simulate {
            model,
            n,
            burn_in,
            seed,
            out,
        } => {
            simulate_cmd(&model, n, burn_in, seed, &out)?;
        }
        Command::Windows {
            input,
            threshold_percentile,
            s,
            t,
            out,
        } => {
            let (header, traj) = io::read_trajectory(&input)?;
            let x = norm_percentile(&[&traj], threshold_percentile).context("[engine]")?;
            let windows = extract_windows(&traj, x, s, t).context("[engine]")?;
            io::write_windows(sink(out.as_deref())?, &windows, s, t, header.d)?;
        }
        Command::Adjoint { input, alpha, out } => {
            let text = if input == "-" {
                let mut buf = String::new();
                std::io::stdin().read_to_string(&mut buf)?;
                buf
            } else {
                fs::read_to_string(&input).with_context(|| format!("reading {input}"))?
            };
            let value = adjoint_json(&text, alpha)?;
            let mut w = sink(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&value)?)?;
        }
        Command::Bftc {
            model,
            alpha,
            s,
            t,
            n,
            seed,
            check_timechange,
            out,
        } => {
            let built = with_alpha(model.config()?, alpha)
                .build()
                .context("[models]")?;
            if !bftc_cmd(&built, s, t, n, seed, check_timechange, out.as_deref())? {
                eprintln!("time-change estimates disagree beyond their confidence intervals");
                return Ok(1);
            }
        }
        Command::Compare {
            x,
            y,
            skip,
            permutations,
            seed,
        } => {
            let xs = io::read_rows(&x, skip)?;
            let ys = io::read_rows(&y, skip)?;
            let res = energy_permutation_test(&xs, &ys, permutations, &mut rng::split(seed, 3))
                .context("[diagnostics]")?;
            let rec = TestRecord::new("energy-permutation", &res, seed);
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
        Command::Run { config, out_dir } => {
            let cfg = load_config(&config)?;
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_experiment(&cfg, &dir)?;
            print!("{}", fs::read_to_string(dir.join("summary.txt"))?);
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::Validate { config } => {
            let problems = validate_config(&config)?;
            if problems.is_empty() {
                println!("{}: valid", config.display());
            } else {
                for p in &problems {
                    println!("{p}");
                }
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Builds the global thread pool, honouring [`THREADS_ENV`].
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        anyhow::ensure!(n >= 1, "{THREADS_ENV} must be a positive integer");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}
