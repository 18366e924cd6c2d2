//! `stereo-shape` command-line front end.

mod complete;
mod evaluate;
mod reconstruct;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stereo_shape::Error;

#[derive(Parser, Debug)]
#[command(name = "stereo-shape", version, about = "Stereo shape evaluation, completion and meshing")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score KITTI-format predictions against ground truth.
    Evaluate(evaluate::Args),
    /// Mirror-complete a partial cloud in its box's object frame.
    Complete(complete::Args),
    /// Extract an isosurface mesh from an occupancy field.
    Reconstruct(reconstruct::Args),
    /// Run the synthetic end-to-end property suite.
    Selftest(selftest::Args),
}

/// Exit status for a failure: 3 for configuration problems, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.root() {
                Error::Config(_) | Error::UnknownShape(_) | Error::InvalidPartition(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Attaches the file path to core errors so messages name the file.
pub(crate) fn in_file<T>(r: stereo_shape::Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| anyhow::Error::new(e.in_file(PathBuf::from(path))))
}

pub(crate) fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Error::Config(msg.into()))
}

fn run(cli: Cli) -> Result<u8> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Evaluate(a) => evaluate::run(a).map(|_| 0),
        Command::Complete(a) => complete::run(a).map(|_| 0),
        Command::Reconstruct(a) => reconstruct::run(a).map(|_| 0),
        Command::Selftest(a) => selftest::run(a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
