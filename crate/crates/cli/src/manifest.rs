use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Record written next to every output file. `argv` is the fully resolved
/// command line; replaying it regenerates the outputs byte for byte.
/// Fields are declared in key order so the document has sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub argv: Vec<String>,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub options: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
}

impl Manifest {
    pub fn new(command: &str, argv: Vec<String>) -> Manifest {
        Manifest {
            argv,
            command: command.to_string(),
            inputs: BTreeMap::new(),
            options: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Manifest, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Manifest, CliError> {
        Manifest::parse(&crate::commands::read(path)?)
    }
}
