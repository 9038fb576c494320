//! Config file loading, command-line overrides and output plumbing.

use std::fs;
use std::path::{Path, PathBuf};

use dicl_core::dicl::{DiclConfig, MethodKind};
use dicl_core::forecaster::{ForecastBackendSpec, LlmHttp};
use dicl_core::{DiclError, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Flags shared by every verb.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct GlobalArgs {
    /// TOML config file (`.json` for JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "dicl-out")]
    pub out: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Route forecasts to an HTTP inference server.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
}

/// Raw config table and the directory relative paths resolve against.
pub struct RawConfig {
    pub table: Map<String, Value>,
    pub base_dir: PathBuf,
}

pub fn load_raw(path: Option<&Path>) -> Result<RawConfig> {
    let Some(path) = path else {
        return Ok(RawConfig {
            table: Map::new(),
            base_dir: PathBuf::from("."),
        });
    };
    let text = fs::read_to_string(path)
        .map_err(|e| DiclError::schema(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| DiclError::schema(format!("config {}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| DiclError::schema(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(table)?
    };
    let Value::Object(table) = value else {
        return Err(DiclError::schema("config must be a table of keys"));
    };
    Ok(RawConfig {
        table,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

pub fn parse_table<T: DeserializeOwned>(table: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(table)).map_err(|e| DiclError::schema(format!("config: {e}")))
}

pub fn resolve_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !base.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

pub fn default_method() -> DiclConfig {
    DiclConfig::new(MethodKind::Vicl)
}

/// Apply `--seed` and `--backend-url` to a method block.
pub fn override_method(method: &mut DiclConfig, seed: u64, args: &GlobalArgs) {
    method.seed = seed;
    if let Some(url) = &args.backend_url {
        method.backend = ForecastBackendSpec::LlmHttp {
            endpoint: url.clone(),
            max_concurrency: LlmHttp::default_concurrency(),
            timeout_secs: LlmHttp::default_timeout_secs(),
            temperature: LlmHttp::default_temperature(),
            max_context: None,
        };
    }
}

pub fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write `resolved_config.json` into the output directory.
pub fn write_resolved<T: Serialize>(out: &Path, config: &T) -> Result<()> {
    prepare_out(out)?;
    write_json(&out.join("resolved_config.json"), config)
}

pub fn csv_err(e: csv::Error) -> DiclError {
    DiclError::Io(std::io::Error::other(e))
}
