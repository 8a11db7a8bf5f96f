//! The `kinface` command line: subcommands, flag overrides on top of a TOML
//! run config, and a uniform exit-code scheme (0 ok, 1 config, 2 I/O,
//! 3 numeric failure).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "kinface", version, about = "Parent-to-child face latent aggregation")]
pub struct Cli {
    /// TOML run config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Treat out-of-range parameters and undecodable label colors as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset whose children are pixel averages of their parents.
    Synth,
    /// Augment every family's parents and write a new manifest.
    Augment {
        /// Input manifest; defaults to the config's `manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Render label-map PNGs with the palette.
    Colorize {
        /// Label-map PNGs, or directories searched (non-recursively) for them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train the aggregator.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict one child from two parent images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Father photo, or label map when segmentation is on.
        #[arg(long)]
        father: PathBuf,
        /// Mother photo, or label map when segmentation is on.
        #[arg(long)]
        mother: PathBuf,
    },
    /// Score a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

impl From<SplitArg> for kinface::pipeline::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::All => Self::All,
        }
    }
}

/// A failed numeric check that is not a library error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericFailure(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    use kinface::Error as E;
    for cause in err.chain() {
        if cause.is::<NumericFailure>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } | E::PaletteMismatch { .. } => EXIT_IO,
                E::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_CONFIG,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_CONFIG
}

/// Resolve the run config: file (or defaults), then flag overrides.
/// Paths given on the command line are relative to the working directory.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let cwd = std::env::current_dir().map_err(|e| kinface::Error::Io {
        path: ".".into(),
        message: e.to_string(),
    })?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(&cwd.join(path))?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.resolve_paths(&cwd);
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = cwd.join(dir);
    }
    cfg.strict |= cli.strict;
    let manifest = match &cli.command {
        Command::Augment { manifest } | Command::Train { manifest } | Command::Eval { manifest, .. } => manifest.as_ref(),
        _ => None,
    };
    if let Some(m) = manifest {
        cfg.manifest = Some(cwd.join(m));
    }
    Ok(cfg)
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match resolve_config(&cli).and_then(|cfg| commands::dispatch(&cli.command, &cfg)) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
