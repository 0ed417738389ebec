//! Run configuration: a versioned JSON document driving every CLI command,
//! with dotted-path `--set` overrides. Unknown keys are rejected and every
//! command writes its fully resolved config next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::GenParams;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// The four leave-one-domain-out tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    OciToM,
    OmiToC,
    OcmToI,
    IcmToO,
}

impl Task {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "OCI_to_M" => Ok(Task::OciToM),
            "OMI_to_C" => Ok(Task::OmiToC),
            "OCM_to_I" => Ok(Task::OcmToI),
            "ICM_to_O" => Ok(Task::IcmToO),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected OCI_to_M, OMI_to_C, OCM_to_I or ICM_to_O)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::OciToM => "OCI_to_M",
            Task::OmiToC => "OMI_to_C",
            Task::OcmToI => "OCM_to_I",
            Task::IcmToO => "ICM_to_O",
        }
    }

    pub fn held_out(&self) -> &'static str {
        match self {
            Task::OciToM => "M",
            Task::OmiToC => "C",
            Task::OcmToI => "I",
            Task::IcmToO => "O",
        }
    }

    pub const ALL: [Task; 4] = [Task::OciToM, Task::OmiToC, Task::OcmToI, Task::IcmToO];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding the generated domain CSVs and manifest.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Directory for run outputs (checkpoints, histories, reports).
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: default_data_dir(),
            out_dir: default_out_dir(),
        }
    }
}

/// Inputs for the probe and report commands.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReportInputs {
    /// Checkpoint of the plain baseline encoder (probe command).
    #[serde(default)]
    pub baseline_checkpoint: Option<PathBuf>,
    /// Checkpoint of the suppression-trained encoder (probe command).
    #[serde(default)]
    pub dasn_checkpoint: Option<PathBuf>,
    /// Labeled checkpoints for the ablation table (report command).
    #[serde(default)]
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    pub label: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Task name such as "OCI_to_M".
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default)]
    pub data: GenParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub report: ReportInputs,
}

fn default_task() -> String {
    "OCI_to_M".to_string()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            task: default_task(),
            data: GenParams::default(),
            train: TrainConfig::default(),
            paths: Paths {
                data_dir: default_data_dir(),
                out_dir: default_out_dir(),
            },
            report: ReportInputs::default(),
        }
    }
}

impl RunConfig {
    pub fn task(&self) -> Result<Task> {
        Task::parse(&self.task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.task()?;
        self.train.resolved_factors()?;
        self.train.loss_weights()?;
        Ok(())
    }

    /// Load a config file and apply `--set path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Pretty JSON with stable key order (serde preserves struct order).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write the fully resolved config next to the outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.json"), self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Apply one `dotted.path=value` override onto a JSON document. The value
/// is parsed as JSON when possible, falling back to a plain string.
fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        Error::Config(format!("override '{item}' is not of the form key.path=value"))
    })?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::Config(format!("override '{item}' has an empty path segment")));
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override '{item}': '{seg}' is not an object field"))
        })?;
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!()
}
