use std::path::{Path, PathBuf};

use czkit_core::CzError;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CzError),

    #[error("{0}")]
    Usage(String),

    /// A checked property failed outside a report.
    #[error("{0}")]
    Violation(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<CliError> for i32 {
    fn from(e: CliError) -> i32 {
        match e {
            CliError::Violation(_) | CliError::Core(CzError::NotDoubling { .. } | CzError::ChainGap { .. }) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Input file read once; its digest goes into the report.
pub struct Input {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

impl Input {
    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        Ok(Input { path: path.to_owned(), bytes })
    }

    pub fn json(&self) -> CliResult<Value> {
        serde_json::from_slice(&self.bytes).map_err(|source| CliError::Json { path: self.path.clone(), source })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

/// Rejects outputs that coincide with an input or with each other.
pub fn distinct_paths(inputs: &[&Path], outputs: &[Option<&Path>]) -> CliResult<()> {
    let outs: Vec<&Path> = outputs.iter().flatten().copied().collect();
    for (i, o) in outs.iter().enumerate() {
        if inputs.contains(o) || outs[..i].contains(o) {
            return Err(CliError::usage(format!("path {} is used twice", o.display())));
        }
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialise") + "\n";
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

/// Report envelope shared by every subcommand.
pub fn envelope(command: &str, inputs: &[&Input], pass: bool, result: Value) -> Value {
    let inputs: Vec<Value> = inputs
        .iter()
        .map(|i| json!({ "path": i.path.display().to_string(), "sha256": i.sha256() }))
        .collect();
    json!({
        "tool": "czkit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "inputs": inputs,
        "pass": pass,
        "result": result,
    })
}

pub fn emit(report: &Value, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => write_json(p, report),
        None => {
            println!("{}", serde_json::to_string_pretty(report).expect("json values serialise"));
            Ok(())
        }
    }
}
