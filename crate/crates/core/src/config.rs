//! Run configuration and its flat `key = value` file format.
//!
//! Keys are dotted paths into the JSON form of [`RunConfig`], values are JSON
//! scalars. A file only needs the keys it changes; everything else keeps its
//! default. `#` starts a comment line.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::encoding::{CalibrationCurve, DecoyTable, TimingParams};
use crate::error::{Error, Result};
use crate::linksim::{DecoyIntensities, LinkParams, StateMix};
use crate::secprops::VerifyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub loss_min: f64,
    pub loss_max: f64,
    pub loss_step: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            loss_min: 0.0,
            loss_max: 60.0,
            loss_step: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSpec {
    pub n_frames: u64,
    pub seed: u64,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_frames: 10_000_000,
            seed: 0,
        }
    }
}

pub const MIN_MC_FRAMES: u64 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub link: LinkParams,
    pub intensities: DecoyIntensities,
    pub timing: TimingParams,
    pub calibration: CalibrationCurve,
    pub mix: StateMix,
    pub sweep: SweepSpec,
    pub mc: McSpec,
    pub verify: VerifyConfig,
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.intensities.validate()?;
        self.timing.validate()?;
        self.calibration.validate()?;
        self.mix.validate()?;
        self.verify.validate()?;
        self.decoy_table()?;
        let s = &self.sweep;
        if !(s.loss_min.is_finite() && s.loss_max.is_finite()) {
            return Err(Error::Config("sweep bounds must be finite".into()));
        }
        if !(s.loss_step.is_finite() && s.loss_step > 0.0) {
            return Err(Error::Config(format!(
                "sweep.loss_step must be positive, got {}",
                s.loss_step
            )));
        }
        if self.output.dir.is_empty() {
            return Err(Error::Config("output.dir is empty".into()));
        }
        Ok(())
    }

    /// Intensity fractions of the dimmed Z states relative to the signal.
    pub fn decoy_table(&self) -> Result<DecoyTable> {
        let i = &self.intensities;
        DecoyTable::from_mean_photon_numbers(i.mu, i.nu, i.omega)
    }

    pub fn to_kv(&self) -> String {
        let mut flat = Vec::new();
        flatten("", &to_value(self), &mut flat);
        let mut out = String::from("# dmqkd run configuration\n");
        let mut section = "";
        for (key, v) in &flat {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                section = head;
                out.push_str(&format!("\n# {section}\n"));
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Parses either the key-value format or JSON, filling unset keys from
    /// the defaults. The result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = if text.trim_start().starts_with('{') {
            Self::from_json(text)?
        } else {
            Self::from_kv(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let v = v.trim();
            let value =
                serde_json::from_str::<Value>(v).unwrap_or_else(|_| Value::String(v.into()));
            entries.push((i + 1, k.trim().to_string(), value));
        }
        overlay(entries)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if !v.is_object() {
            return Err(Error::Parse {
                line: 1,
                message: "expected a JSON object".into(),
            });
        }
        let mut flat = Vec::new();
        flatten("", &v, &mut flat);
        overlay(flat.into_iter().map(|(k, v)| (0, k, v)).collect())
    }
}

fn to_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serialises")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .as_object_mut()
            .expect("path prefix is an object")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .expect("path prefix is an object")
        .insert(parts[parts.len() - 1].to_string(), v);
}

/// Applies `(line, key, value)` entries on top of the defaults.
fn overlay(entries: Vec<(usize, String, Value)>) -> Result<RunConfig> {
    let mut root = to_value(&RunConfig::default());
    let mut known = Vec::new();
    flatten("", &root, &mut known);
    let mut seen = std::collections::HashSet::new();
    for (line, key, value) in entries {
        if !known.iter().any(|(k, _)| *k == key) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key {key:?}"),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
        set_path(&mut root, &key, value);
    }
    serde_json::from_value(root).map_err(|e| Error::Config(format!("bad value: {e}")))
}
