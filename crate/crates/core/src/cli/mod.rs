//! The `flowens` command line: argument parsing, run orchestration and
//! output files.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, KEYS};

use crate::diffcore::checkpoint::manifest_path;
use crate::error::{Error, Result};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for usage and configuration errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable capping the worker pool.
pub const THREADS_VAR: &str = "FLOWENS_THREADS";

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("gen-data", "collect a dataset from an environment"),
    ("train", "fit models on a dataset and save checkpoints"),
    ("active-learn", "run the active-learning benchmark over seeds, models and criteria"),
    ("evaluate", "score a checkpoint: KL, RMSE, log-likelihood and uncertainty"),
    ("dim-study", "Monte-Carlo entropy error against dimension"),
    ("mi-check", "base-space against output-space mutual information"),
    ("budget-report", "sample budgets of output-space and base-space estimation"),
];

/// Flags whose meaning is local to one subcommand.
fn renamed(sub: &str) -> &'static [(&'static str, &'static str)] {
    match sub {
        "dim-study" => &[("n", "dim_n"), ("seeds", "dim_seeds")],
        _ => &[],
    }
}

fn command() -> Command {
    let mut cmd = Command::new("flowens")
        .about("Conditional flow ensembles, uncertainty decomposition and active learning")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let local = renamed(name);
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file; flags override it"),
        );
        for (key, help) in KEYS {
            if local.iter().any(|(flag, target)| flag == key || target == key) {
                continue;
            }
            sub = sub.arg(Arg::new(*key).long(key.replace('_', "-")).value_name("VALUE").help(*help).action(ArgAction::Set));
        }
        for (flag, target) in local {
            let help = KEYS.iter().find(|(k, _)| k == target).map(|(_, h)| *h).unwrap_or("");
            sub = sub.arg(
                Arg::new(*target)
                    .long(*flag)
                    .alias(target.replace('_', "-"))
                    .value_name("VALUE")
                    .help(help)
                    .action(ArgAction::Set),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn flag_values(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|(k, _)| m.try_get_one::<String>(k).ok().flatten().map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} = `{v}` is not a positive integer")))?;
    // The global pool can only be set once per process.
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already initialised");
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (sub, m) = matches.subcommand().expect("subcommand required");
    let result = init_threads().and_then(|_| {
        let file = m.get_one::<String>("config").map(PathBuf::from);
        let cfg = ExperimentConfig::resolve(file.as_deref(), &flag_values(m))?;
        cfg.validate()?;
        commands::run(sub, &cfg)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    hash: String,
}

/// Files written by one subcommand, collected for its manifest.
#[derive(Debug)]
pub(crate) struct RunOutputs {
    dir: PathBuf,
    files: Vec<OutputEntry>,
    checkpoints: Vec<OutputEntry>,
}

impl RunOutputs {
    pub(crate) fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn entry(&self, path: &Path) -> Result<OutputEntry> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        Ok(OutputEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            hash: content_hash(&bytes),
        })
    }

    pub(crate) fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.record(&p)?;
        Ok(p)
    }

    pub(crate) fn record(&mut self, path: &Path) -> Result<()> {
        let e = self.entry(path)?;
        self.files.push(e);
        Ok(())
    }

    /// Records a checkpoint and its manifest file.
    pub(crate) fn record_checkpoint(&mut self, path: &Path) -> Result<()> {
        for p in [path.to_path_buf(), manifest_path(path)] {
            let e = self.entry(&p)?;
            self.checkpoints.push(e);
        }
        Ok(())
    }

    /// Writes `resolved.cfg` and `manifest.json`.
    pub(crate) fn finish(mut self, command: &str, cfg: &ExperimentConfig, seeds: &[u64]) -> Result<()> {
        let cfg_path = self.path("resolved.cfg");
        std::fs::write(&cfg_path, cfg.to_file_text()).map_err(|e| Error::io(&cfg_path, e))?;
        self.record(&cfg_path)?;
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seeds": seeds,
            "config": cfg.resolved(),
            "outputs": self.files,
            "checkpoints": self.checkpoints,
        });
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn content_hash_matches_git_blob_layout() {
        // sha256 of "blob 0\0"
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Estimator("x".into())), EXIT_RUNTIME);
        assert_eq!(cli_main(["flowens", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(cli_main(["flowens", "gen-data", "--no-such-flag", "1"]), EXIT_CONFIG);
        assert_eq!(cli_main(["flowens", "gen-data", "--env", "moon"]), EXIT_CONFIG);
    }
}
