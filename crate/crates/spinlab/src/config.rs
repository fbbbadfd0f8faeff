use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use spinlab_core::calibration::Calibration;

use crate::error::{CliError, CliResult};
use crate::schema::{DefaultValue, Experiment};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    #[serde(default)]
    parameters: Map<String, Value>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    calibration_file: Option<PathBuf>,
}

/// A validated run description. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub params: Params,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub calibration: Calibration,
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the effective config in canonical key order.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base_dir, seed_override)
    }

    pub fn parse(text: &str, base_dir: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
        if let (Some(seed), Some(obj)) = (seed_override, value.as_object_mut()) {
            obj.insert("seed".into(), seed.into());
        }
        let raw: RawConfig =
            serde_json::from_value(value.clone()).map_err(|e| CliError::validation(format!("config: {e}")))?;
        let experiment: Experiment = raw.experiment.parse()?;
        if experiment.is_stochastic() && raw.seed.is_none() {
            return Err(CliError::validation(format!("experiment {experiment} needs a seed")));
        }
        let calibration = match &raw.calibration_file {
            Some(f) => {
                let path = base_dir.join(f);
                let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                Calibration::from_json(&text)?
            }
            None => Calibration::default(),
        };
        let params = Params::resolve(experiment, raw.parameters, &calibration)?;
        Ok(Self {
            experiment,
            params,
            seed: raw.seed,
            output_dir: raw.output_dir.map(|d| base_dir.join(d)),
            calibration,
            base_dir: base_dir.to_path_buf(),
            hash: canonical_hash(&value),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// serde_json keeps object keys sorted, so this is independent of the key
/// order in the file.
pub fn canonical_hash(value: &Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameter block with defaults filled in and unknown keys rejected.
#[derive(Debug, Clone)]
pub struct Params {
    values: Map<String, Value>,
}

impl Params {
    pub fn resolve(
        experiment: Experiment,
        mut given: Map<String, Value>,
        calibration: &Calibration,
    ) -> CliResult<Self> {
        let docs = experiment.params();
        if let Some(unknown) = given.keys().find(|k| !docs.iter().any(|d| d.name == k.as_str())) {
            return Err(CliError::validation(format!(
                "unknown parameter {unknown:?} for {experiment}; run `spinlab describe {experiment}`"
            )));
        }
        let mut values = Map::new();
        for d in docs {
            let v = match (given.remove(d.name), d.default) {
                (Some(v), _) => v,
                (None, DefaultValue::Value(lit)) => serde_json::from_str(lit).expect("schema defaults are valid JSON"),
                (None, DefaultValue::Calibration) => calibration_default(d.name, calibration),
                (None, DefaultValue::Required) => {
                    return Err(CliError::validation(format!(
                        "{experiment} needs parameter {:?}",
                        d.name
                    )))
                }
            };
            values.insert(d.name.to_string(), v);
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("parameter {key} is not in the schema"))
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        self.get(key)
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::validation(format!("{key} must be a number")))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.get(key)
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| CliError::validation(format!("{key} must be a non-negative integer")))
    }

    pub fn string(&self, key: &str) -> CliResult<String> {
        self.get(key)
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| CliError::validation(format!("{key} must be a string")))
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        let err = || CliError::validation(format!("{key} must be a list of numbers"));
        self.get(key)
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|v| v.as_f64().ok_or_else(err))
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        let err = || CliError::validation(format!("{key} must be a list of non-negative integers"));
        self.get(key)
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|v| v.as_u64().map(|u| u as usize).ok_or_else(err))
            .collect()
    }

    /// The resolved block, for the run record.
    pub fn as_json(&self) -> Value {
        Value::Object(self.values.clone())
    }
}

fn calibration_default(key: &str, c: &Calibration) -> Value {
    match key {
        "b_rad_per_s" => c.nuclear_bath.coupling_b.into(),
        "tau_c_s" => c.nuclear_bath.tau_c.into(),
        _ => unreachable!("no calibration default for {key}"),
    }
}
