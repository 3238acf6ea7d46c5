//! Run configuration: classifier and embedder sources, and the config hash
//! stamped into reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{load_calibration, CalibrationError};
use crate::gateway::SessionMode;
use crate::metrics::{EmbeddingProvider, HttpEmbedder, HttpEmbedderConfig, StubEmbedder};
use crate::verdicts::{Classifier, GateLevel};

/// Where the verdict classifier comes from: the built-in reference
/// thresholds or a calibration file produced by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierSource {
    Reference,
    File(PathBuf),
}

impl std::str::FromStr for ClassifierSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "reference" {
            Ok(ClassifierSource::Reference)
        } else {
            Ok(ClassifierSource::File(PathBuf::from(s)))
        }
    }
}

impl ClassifierSource {
    pub fn load(&self) -> Result<Classifier, CalibrationError> {
        match self {
            ClassifierSource::Reference => Ok(Classifier::reference()),
            ClassifierSource::File(path) => Ok(load_calibration(path)?.into()),
        }
    }
}

/// Embedding provider configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderConfig {
    Stub {
        #[serde(default)]
        dimension: Option<usize>,
    },
    Http(HttpEmbedderConfig),
}

/// Builds the embedder; no path means the offline stub.
pub fn load_embedder(path: Option<&Path>) -> Result<Box<dyn EmbeddingProvider>, String> {
    let Some(path) = path else {
        return Ok(Box::new(StubEmbedder::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config: EmbedderConfig =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    match config {
        EmbedderConfig::Stub { dimension } => {
            Ok(Box::new(dimension.map_or_else(StubEmbedder::default, StubEmbedder::new)))
        }
        EmbedderConfig::Http(http) => Ok(Box::new(
            HttpEmbedder::new(http).map_err(|e| e.to_string())?,
        )),
    }
}

/// Everything that determines a `run` invocation's output. Hashed into the
/// report so numbers stay traceable to their configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub provider: PathBuf,
    pub embedder: Option<PathBuf>,
    pub versions: Vec<String>,
    pub tutorials: Vec<u32>,
    pub modes: Vec<SessionMode>,
    pub classifier: ClassifierSource,
    pub semantic_mode: crate::metrics::SemanticMode,
    pub no_cache: bool,
    pub jobs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gate: GateLevel,
}

pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_source_parses() {
        assert_eq!("reference".parse::<ClassifierSource>().unwrap(), ClassifierSource::Reference);
        assert_eq!(
            "out/calibration.json".parse::<ClassifierSource>().unwrap(),
            ClassifierSource::File(PathBuf::from("out/calibration.json"))
        );
    }

    #[test]
    fn stub_embedder_when_no_config_given() {
        let embedder = load_embedder(None).unwrap();
        assert_eq!(embedder.name(), "stub");
    }

    #[test]
    fn embedder_config_parses_both_kinds() {
        let dir = tempfile::TempDir::new().unwrap();
        let stub_path = dir.path().join("stub.toml");
        std::fs::write(&stub_path, "kind = \"stub\"\ndimension = 16\n").unwrap();
        let embedder = load_embedder(Some(&stub_path)).unwrap();
        assert_eq!(embedder.dimension(), 16);

        let http_path = dir.path().join("http.toml");
        std::fs::write(
            &http_path,
            "kind = \"http\"\nname = \"emb\"\nendpoint = \"http://127.0.0.1:9/v1/embeddings\"\nmodel = \"m\"\n",
        )
        .unwrap();
        let embedder = load_embedder(Some(&http_path)).unwrap();
        assert_eq!(embedder.name(), "emb");
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&vec!["x", "y"]);
        let b = config_hash(&vec!["x", "y"]);
        let c = config_hash(&vec!["x", "z"]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
