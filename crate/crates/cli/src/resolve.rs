//! Configuration resolution: defaults, then a JSON file, then flags; the
//! result is echoed to the output directory before any work starts.

use std::path::{Path, PathBuf};

use denomamba::data::ImageFormat;
use denomamba::{Ablation, Error, ModelConfig, NoiseParams, Result, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Recursively overlays `over` onto `base`; objects merge key by key, anything
/// else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))
}

/// `base` overlaid with `file` and then `flags`, parsed back into `T`.
pub fn resolve<T: Serialize + DeserializeOwned>(base: &T, file: Option<&Value>, flags: Value) -> Result<T> {
    let mut value = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(Error::Config("configuration file must hold a JSON object".into()));
        }
        merge(&mut value, f.clone());
    }
    merge(&mut value, flags);
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

/// Object holding only the flags that were actually given.
pub fn flag_object(entries: impl IntoIterator<Item = (&'static str, Option<Value>)>) -> Value {
    let map: Map<String, Value> = entries.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect();
    Value::Object(map)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `config` as pretty JSON to `dir/resolved_config.json`.
pub fn echo<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    create_dir(dir)?;
    let text = serde_json::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(RESOLVED_CONFIG), text + "\n")
}

pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("--{flag} is required (as a flag or in the configuration file)")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub size: usize,
    pub noise: NoiseParams,
    pub seed: u64,
    pub format: ImageFormat,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n: 8,
            size: 32,
            noise: NoiseParams::default(),
            seed: 0,
            format: ImageFormat::Raw,
            out: None,
        }
    }
}

/// Everything `train` and `ablate` need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pathways removed from the model (already reflected in `model.flags`).
    #[serde(default)]
    pub ablations: Vec<String>,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Variants trained by `ablate`; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<String>,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let train = match name {
            "paper" => TrainConfig::paper(),
            _ => TrainConfig::desk(),
        };
        Ok(RunConfig {
            preset: name.to_string(),
            model: ModelConfig::preset(name)?,
            train,
            ablations: Vec::new(),
            manifest: None,
            val_manifest: None,
            out: None,
            variants: Vec::new(),
        })
    }

    /// Applies `ablations` to the model flags and validates everything.
    pub fn finish(mut self) -> Result<Self> {
        let mut seen = Vec::new();
        for name in &self.ablations {
            let a: Ablation = name.parse()?;
            if !seen.contains(&a) {
                seen.push(a);
            }
        }
        for &a in &seen {
            self.model = self.model.with_ablation(a);
        }
        self.ablations = seen.iter().map(|a| a.to_string()).collect();
        for v in &self.variants {
            v.parse::<Ablation>()?;
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

/// Flag overrides shared by `train` and `ablate`.
pub fn run_flags(args: &crate::args::ModelArgs, manifest: &Option<PathBuf>, val: &Option<PathBuf>, out: &Option<PathBuf>) -> Value {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| json!(p));
    let mut train = flag_object([
        ("epochs", args.epochs.map(|v| json!(v))),
        ("base_lr", args.lr.map(|v| json!(v))),
        ("seed", args.seed.map(|v| json!(v))),
    ]);
    if train.as_object().is_some_and(Map::is_empty) {
        train = Value::Null;
    }
    let model = args.seed.map(|s| json!({ "seed": s }));
    flag_object([
        ("preset", args.preset.as_ref().map(|p| json!(p))),
        ("train", (!train.is_null()).then_some(train)),
        ("model", model),
        ("manifest", path(manifest)),
        ("val_manifest", path(val)),
        ("out", path(out)),
    ])
}

/// Preset named by the flag, else by the file, else `desk`.
pub fn preset_name(flag: &Option<String>, file: Option<&Value>) -> String {
    flag.clone()
        .or_else(|| file.and_then(|f| f.get("preset")).and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| "desk".to_string())
}

pub fn image_format(name: &str) -> Result<ImageFormat> {
    ImageFormat::parse(name)
}
