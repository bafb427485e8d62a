use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TargetKind;
use crate::error::{Error, Result};
use crate::features::{GraphConfig, Vocabulary};
use crate::learning::TrainMode;
use crate::mrf::{CategoryModel, EdgeFeatures};

pub const MODEL_FORMAT_VERSION: u64 = 1;

/// A trained category model with everything needed to featurize new photos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u64,
    pub category_id: String,
    pub target_kind: TargetKind,
    pub mode: TrainMode,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub graph: GraphConfig,
    pub vocabulary: Vocabulary,
    pub theta_node: Vec<f64>,
    pub theta_edge: EdgeFeatures,
}

impl ModelFile {
    pub fn model(&self) -> Result<CategoryModel> {
        if self.theta_node.len() != self.vocabulary.len() {
            return Err(Error::Dimension {
                what: "theta_node vs vocabulary",
                expected: self.vocabulary.len(),
                actual: self.theta_node.len(),
            });
        }
        CategoryModel::new(&self.category_id, self.theta_node.clone(), self.theta_edge)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u64,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if v.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                path: path.to_path_buf(),
                found: v.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        m.model()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }
}
