//! Run manifest: the config fingerprint, the artifact list, and the four
//! pipeline gates (error margin c < 1, input-constraint satisfaction of
//! the trained policy, the iterated-controller stability margin, and the
//! user horizon against the certified minimum).

use std::fs;
use std::path::Path;

use adpmpc::fmt::Json;
use anyhow::{Context, Result};
use serde::Deserialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Deserialize, Default)]
pub struct GateStatus {
    pub evaluated: bool,
    pub passed: bool,
    #[serde(default)]
    pub detail: String,
}

impl GateStatus {
    pub fn not_evaluated() -> Self {
        Self {
            evaluated: false,
            passed: false,
            detail: String::new(),
        }
    }

    pub fn result(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            evaluated: true,
            passed,
            detail: detail.into(),
        }
    }

    fn to_json(&self) -> Json {
        Json::Object(vec![
            ("evaluated".into(), Json::Bool(self.evaluated)),
            ("passed".into(), Json::Bool(self.passed)),
            ("detail".into(), Json::Str(self.detail.clone())),
        ])
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct Gates {
    #[serde(default)]
    pub error_margin: GateStatus,
    #[serde(default)]
    pub input_constraints: GateStatus,
    #[serde(default)]
    pub stability_margin: GateStatus,
    #[serde(default)]
    pub horizon: GateStatus,
}

impl Gates {
    pub fn all_evaluated_passed(&self) -> bool {
        [
            &self.error_margin,
            &self.input_constraints,
            &self.stability_margin,
            &self.horizon,
        ]
        .iter()
        .all(|g| !g.evaluated || g.passed)
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
pub struct RunManifest {
    pub config_hash: String,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub gates: Gates,
    #[serde(default)]
    pub x0_list: Vec<Vec<f64>>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            ..Default::default()
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(manifest))
    }

    pub fn add_artifact(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
            self.artifacts.sort();
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = Json::Object(vec![
            ("config_hash".into(), Json::Str(self.config_hash.clone())),
            (
                "artifacts".into(),
                Json::Array(self.artifacts.iter().map(|a| Json::Str(a.clone())).collect()),
            ),
            (
                "gates".into(),
                Json::Object(vec![
                    ("error_margin".into(), self.gates.error_margin.to_json()),
                    (
                        "input_constraints".into(),
                        self.gates.input_constraints.to_json(),
                    ),
                    (
                        "stability_margin".into(),
                        self.gates.stability_margin.to_json(),
                    ),
                    ("horizon".into(), self.gates.horizon.to_json()),
                ]),
            ),
            (
                "x0_list".into(),
                Json::Array(
                    self.x0_list
                        .iter()
                        .map(|x| Json::Array(x.iter().map(|v| Json::Float(*v)).collect()))
                        .collect(),
                ),
            ),
        ]);
        let path = dir.join(MANIFEST_FILE);
        let mut file = fs::File::create(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        json.write(&mut file)?;
        Ok(())
    }

    /// Names of listed artifacts that are missing on disk.
    pub fn missing_artifacts(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| !dir.join(a).exists())
            .cloned()
            .collect()
    }
}
