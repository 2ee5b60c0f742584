//! Subcommands. Each resolves its config block, derives a run id from the
//! block and its input files, writes everything under `out_dir/{run_id}` and
//! returns a typed result that is also written to `result.json`.

pub mod bound;
pub mod report;
pub mod similarity;
pub mod toy;
pub mod train;
pub mod transfer;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use xferlab_core::eval::report::write_json;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::parallel::thread_count;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Replaces the config's `out_dir`.
    pub out: Option<PathBuf>,
    /// Replaces every seed list of the selected block with this one seed.
    pub seed_override: Option<u64>,
    pub threads: usize,
}

impl RunOptions {
    /// Options with the worker cap read from `XFERLAB_THREADS`.
    pub fn from_env(out: Option<PathBuf>, seed_override: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            out,
            seed_override,
            threads: thread_count()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
    started: Instant,
}

/// First 16 hex digits of the SHA-256 of the command, the canonical JSON of
/// its resolved block and the contents of every input file it reads.
pub fn run_id<T: Serialize>(command: &str, block: &T, inputs: &[String]) -> CliResult<String> {
    let canonical = serde_json::to_value(block)
        .and_then(|v| serde_json::to_string(&v))
        .map_err(|e| CliError::new("INTERNAL", crate::error::EXIT_OTHER, e.to_string()))?;
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(canonical.as_bytes());
    for text in inputs {
        h.update([0]);
        h.update(text.as_bytes());
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

pub(crate) fn open_run<T: Serialize>(
    command: &str,
    block: &T,
    inputs: &[String],
    loaded: &LoadedConfig,
    opts: &RunOptions,
) -> CliResult<RunDir> {
    let run_id = run_id(command, block, inputs)?;
    let root = opts.out.clone().unwrap_or_else(|| loaded.config.out_dir.clone());
    let path = root.join(&run_id);
    std::fs::create_dir_all(&path)
        .map_err(|e| CliError::new("IO_ERROR", crate::error::EXIT_IO, format!("{}: {e}", path.display())))?;
    Ok(RunDir {
        run_id,
        path,
        started: Instant::now(),
    })
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    run_id: &'a str,
    version: &'a str,
    threads: usize,
    wall_time_s: f64,
}

/// Writes `result.json` and `run_meta.json`; only the latter holds
/// timing.
pub(crate) fn close_run<T: Serialize>(command: &str, run: &RunDir, opts: &RunOptions, result: &T) -> CliResult<()> {
    write_json(&run.path.join("result.json"), result)?;
    write_json(
        &run.path.join("run_meta.json"),
        &RunMeta {
            command,
            run_id: &run.run_id,
            version: env!("CARGO_PKG_VERSION"),
            threads: opts.threads,
            wall_time_s: run.started.elapsed().as_secs_f64(),
        },
    )?;
    Ok(())
}

pub(crate) fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::config("CONFIG_MISSING_FILE", format!("{}: {e}", path.display())))
}

/// Filesystem-safe label for file names.
pub(crate) fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub(crate) fn unique_labels<'a>(what: &str, labels: impl Iterator<Item = &'a str>) -> CliResult<()> {
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if l.is_empty() || !seen.insert(slug(l)) {
            return Err(CliError::config(
                "CONFIG_INVALID",
                format!("{what} labels must be nonempty and distinct, got {l:?}"),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_depends_on_command_block_and_inputs() {
        let a = run_id("toy", &serde_json::json!({"seeds": [1, 2]}), &[]).unwrap();
        assert_eq!(a.len(), 16);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(a, run_id("toy", &serde_json::json!({"seeds": [1, 2]}), &[]).unwrap());
        assert_ne!(a, run_id("toy", &serde_json::json!({"seeds": [1]}), &[]).unwrap());
        assert_ne!(a, run_id("train", &serde_json::json!({"seeds": [1, 2]}), &[]).unwrap());
        assert_ne!(a, run_id("toy", &serde_json::json!({"seeds": [1, 2]}), &["#".into()]).unwrap());
    }

    #[test]
    fn key_order_does_not_change_run_id() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a": 1, "b": 2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b": 2, "a": 1}"#).unwrap();
        assert_eq!(run_id("x", &a, &[]).unwrap(), run_id("x", &b, &[]).unwrap());
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("damping 2x/α"), "damping_2x__");
        assert!(unique_labels("t", ["a b", "a_b"].into_iter()).is_err());
        assert!(unique_labels("t", ["a", ""].into_iter()).is_err());
        assert!(unique_labels("t", ["a", "b"].into_iter()).is_ok());
    }
}
