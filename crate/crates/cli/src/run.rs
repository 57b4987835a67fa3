//! Run directories, manifests and layered configuration.
//!
//! Every command resolves its spec (defaults, then a JSON config file, then
//! command-line overrides), hashes it, and writes its outputs under
//! `<out_root>/<command>-<hash>/` together with a `manifest.json` that
//! records the resolved spec and the SHA-256 of every output and input file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geoaux::synthdata::sha256_hex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const RUN_FORMAT: &str = "geoaux-run";
pub const RUN_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GEOAUX_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

/// Hex characters of the spec hash used in directory names.
const DIR_HASH_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub spec_hash: String,
    pub spec: Value,
    /// Files read by the run, by path as given in the spec.
    pub inputs: BTreeMap<String, String>,
    /// Files written by the run, relative to the run directory.
    pub outputs: BTreeMap<String, String>,
}

/// SHA-256 of the canonical JSON of `(command, spec)`. Object keys are
/// sorted, so field order never changes the hash.
pub fn spec_hash(command: &str, spec: &Value) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::json!({ "command": command, "spec": spec }))?;
    Ok(sha256_hex(&canonical))
}

/// Directory name of a run: the command and a prefix of its spec hash.
pub fn run_dir_name(command: &str, spec_hash: &str) -> String {
    format!("{command}-{}", &spec_hash[..DIR_HASH_LEN.min(spec_hash.len())])
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Output directory of one command invocation.
#[derive(Debug)]
pub struct RunDir {
    dir: PathBuf,
    command: String,
    spec: Value,
    spec_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    /// Creates `<out_root>/<command>-<hash>`. An existing directory is an
    /// error unless `overwrite` is set, in which case it is replaced.
    pub fn create(out_root: &Path, command: &str, spec: &impl Serialize, overwrite: bool) -> Result<Self> {
        let spec = serde_json::to_value(spec)?;
        let hash = spec_hash(command, &spec)?;
        let dir = out_root.join(run_dir_name(command, &hash));
        if dir.exists() {
            if !overwrite {
                return Err(CliError::RunExists(dir));
            }
            fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            spec,
            spec_hash: hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Records a file that something else wrote under the run directory.
    pub fn track(&mut self, rel: &str) -> Result<()> {
        let path = self.path(rel);
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Hashes an input file and records it under its spec path.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            format: RUN_FORMAT.to_string(),
            version: RUN_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            spec_hash: self.spec_hash,
            spec: self.spec,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        Ok(manifest)
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let m: RunManifest = serde_json::from_slice(&bytes)?;
    if m.format != RUN_FORMAT || m.version != RUN_VERSION {
        return Err(CliError::Invalid(format!(
            "{} is not a {RUN_FORMAT} v{RUN_VERSION} manifest",
            path.display()
        )));
    }
    let hash = spec_hash(&m.command, &m.spec)?;
    if hash != m.spec_hash {
        return Err(CliError::Invalid(format!(
            "spec hash in {} does not match its spec",
            path.display()
        )));
    }
    Ok(m)
}

/// Recursively merges `over` into `base`. Every key in `over` must already
/// exist in `base`, which catches misspelled options.
pub fn merge(base: &mut Value, over: &Value, at: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| CliError::Invalid(format!("unknown option `{here}`")))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

/// Parses a command-line value: JSON when it parses, a string otherwise.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `value` at a dotted `path`, creating nothing: the path must exist.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut over = value;
    for key in path.rsplit('.') {
        if key.is_empty() {
            return Err(CliError::Invalid(format!("malformed option path `{path}`")));
        }
        let mut m = serde_json::Map::new();
        m.insert(key.to_string(), over);
        over = Value::Object(m);
    }
    merge(root, &over, "")
}

/// Dotted paths of every leaf (non-object value) under `root`.
fn leaf_paths(root: &Value, prefix: &str, out: &mut Vec<String>) {
    match root {
        Value::Object(m) => {
            for (k, v) in m {
                let here = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(v, &here, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// Maps a flag name to an option path of `spec`. A full dotted path is
/// taken as is; a bare name (dashes read as underscores) must match the
/// last segment of exactly one path.
pub fn option_path(spec: &Value, flag: &str) -> Result<String> {
    let name = flag.replace('-', "_");
    let mut leaves = Vec::new();
    leaf_paths(spec, "", &mut leaves);
    let exists = |p: &str| {
        let mut v = spec;
        p.split('.').all(|k| match v.get(k) {
            Some(next) => {
                v = next;
                true
            }
            None => false,
        })
    };
    if name.contains('.') || exists(&name) {
        return Ok(name);
    }
    let hits: Vec<&String> = leaves.iter().filter(|p| p.rsplit('.').next() == Some(name.as_str())).collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(CliError::Invalid(format!("unknown option `--{flag}`"))),
        many => Err(CliError::Invalid(format!(
            "`--{flag}` is ambiguous; use one of {}",
            many.iter().map(|p| format!("--{p}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Parses `--name value` / `--name=value` pairs and `--set path=value`
/// entries into overrides of `spec`.
pub fn parse_overrides(spec: &Value, flags: &[String], sets: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = flags.iter();
    while let Some(arg) = it.next() {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Invalid(format!("unexpected argument `{arg}`")))?;
        let (name, raw) = match body.split_once('=') {
            Some((n, v)) => (n, v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Invalid(format!("`--{body}` needs a value")))?;
                (body, v.clone())
            }
        };
        out.push((option_path(spec, name)?, parse_value(&raw)));
    }
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("`--set {s}` is not PATH=VALUE")))?;
        out.push((path.to_string(), parse_value(raw)));
    }
    Ok(out)
}

/// Default spec, then the optional config file, then `key=value` overrides.
pub fn resolve<T>(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = config {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        let file: Value = serde_json::from_slice(&bytes)?;
        merge(&mut value, &file, "")?;
    }
    for (path, v) in overrides {
        set_path(&mut value, path, v.clone())?;
    }
    Ok(serde_json::from_value(value)?)
}
