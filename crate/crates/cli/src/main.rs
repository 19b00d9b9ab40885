mod args;
mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::Parser;

use args::Cli;

/// Error raised by the front end itself, tagged with a report category.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    CliError {
        category: "config",
        message: message.into(),
    }
    .into()
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<blurfield::Error>() {
            return e.category();
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.category;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "internal"
}

/// Resolves output paths against the run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn output(&self, p: &Path) -> anyhow::Result<PathBuf> {
        let path = if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| blurfield::Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        Ok(path)
    }
}

// Log lines go to both stderr and the run's log file.
struct Tee {
    file: Mutex<fs::File>,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.file.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stderr().flush()?;
        self.file.lock().expect("log file lock").flush()
    }
}

fn setup(cli: &Cli) -> anyhow::Result<RunDir> {
    let root = cli.run_dir.clone();
    fs::create_dir_all(&root).map_err(|e| blurfield::Error::Io {
        path: root.clone(),
        source: e,
    })?;
    let name = cli.command.name();

    let frozen = toml::to_string(cli).map_err(|e| config_error(format!("cannot serialize effective config: {e}")))?;
    let frozen_path = root.join(format!("{name}.config.toml"));
    fs::write(&frozen_path, frozen).map_err(|e| blurfield::Error::Io {
        path: frozen_path,
        source: e,
    })?;

    let log_path = root.join(format!("{name}.log"));
    let file = fs::File::create(&log_path).map_err(|e| blurfield::Error::Io {
        path: log_path,
        source: e,
    })?;
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    // A second init in the same process (tests) keeps the first logger.
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Pipe(Box::new(Tee { file: Mutex::new(file) })))
        .try_init();

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads must be >= 1"));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(RunDir { root })
}

fn run(argv: Vec<String>) -> anyhow::Result<()> {
    let argv = config::merge(argv)?;
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    let run_dir = setup(&cli)?;
    log::info!("blurfield {} {}", env!("CARGO_PKG_VERSION"), cli.command.name());
    commands::dispatch(&cli.command, &run_dir)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("blurfield: error: {}: {msg}", category(&err));
            ExitCode::FAILURE
        }
    }
}
