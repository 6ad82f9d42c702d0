//! Subcommands and the plumbing they share.

pub mod benchmark;
pub mod evaluate;
pub mod fit;
pub mod simulate;

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::{read_config_file, resolve};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replay the settings of an earlier run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Given flags as a JSON object, with absent flags dropped.
pub(crate) fn given_flags(flags: &impl Serialize) -> Value {
    match serde_json::to_value(flags).expect("flags serialize") {
        Value::Object(map) => Value::Object(map.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        other => other,
    }
}

/// Settings from defaults or a replayed manifest, then the config file, then flags.
pub(crate) fn resolve_settings<T: Serialize + DeserializeOwned + Default>(
    common: &CommonArgs,
    command: &str,
    text_keys: &[&str],
    flags: &impl Serialize,
) -> CliResult<(T, Option<RunManifest>)> {
    let replay = common
        .manifest
        .as_deref()
        .map(|p| RunManifest::read(p, command))
        .transpose()?;
    let base = match &replay {
        Some(m) => m.settings()?,
        None => T::default(),
    };
    let file = match &common.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let settings = resolve(base, text_keys, &file, given_flags(flags))?;
    Ok((settings, replay))
}

/// Runs `f` on a pool of `threads` workers, or the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// An input path from a flag, or else from the replayed manifest.
pub(crate) fn input_path(
    flag: Option<&Path>,
    replay: Option<&RunManifest>,
    key: &str,
) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| replay.and_then(|m| m.input(key)).map(PathBuf::from))
}

/// Writes the fit wall-clock time as a two-column table.
pub(crate) fn write_timings(path: &Path, rows: &[(String, f64)]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.clone(), format!("{v:.6}")]).collect();
    crate::io::write_table(path, &["phase", "seconds"], &rows)
}
