//! Parameter resolution and the `run.json` record.
//!
//! Precedence: explicit flags, then the `--config` file, then defaults. The
//! seed additionally falls back to `MANISTREAM_SEED` before its default of 0.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use manistream::{FitParams, Scene};
use serde::Serialize;
use serde_json::Value;

use crate::args::ParamFlags;
use crate::error::CliError;

pub const SEED_ENV: &str = "MANISTREAM_SEED";

/// Seed from the environment, if set and valid.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Reads a config file. A previous `run.json` is accepted too; its `params`
/// object is used.
fn read_config(path: &Path) -> Result<serde_json::Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("command") && m.contains_key("params") => m.remove("params").unwrap_or(Value::Null),
        other => other,
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("config {} must hold a JSON object of parameters", path.display()))),
    }
}

pub fn resolve_params(flags: &ParamFlags) -> Result<FitParams, CliError> {
    let file = match &flags.config {
        Some(path) => read_config(path)?,
        None => serde_json::Map::new(),
    };
    let mut params: FitParams =
        serde_json::from_value(Value::Object(file.clone())).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let epsilon_given = flags.epsilon.is_some() || file.contains_key("epsilon");
    if let Some(mode) = flags.sim_mode {
        params.sim_mode = mode;
    }
    if !epsilon_given {
        params.epsilon = params.sim_mode.default_epsilon();
    }
    macro_rules! overlay {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field {
                params.$field = v;
            }
        )*};
    }
    overlay!(epsilon, knn, k, l, lambda, levels, gap_ratio);
    if flags.d_global.is_some() {
        params.d_global = flags.d_global;
    }
    params.seed = match flags.seed {
        Some(s) => s,
        None if file.contains_key("seed") => params.seed,
        None => env_seed()?.unwrap_or(0),
    };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(params)
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<FitParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        RunConfig {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: None,
            scene: None,
            seed,
            threads,
            extra: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(mut self, name: &str, path: &Path) -> Self {
        self.outputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("run.json"), text + "\n")
    }
}

/// Directory that receives `run.json` for a file output.
pub fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
