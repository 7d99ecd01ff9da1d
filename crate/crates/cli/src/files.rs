//! On-disk layout of scenario bundles and small read/write helpers.
//!
//! A bundle directory holds `network.inp`, `scenarios/<id>.json` and
//! `references/<id>.json`. Scenarios are ordered by timestamp, then id.

use std::path::{Path, PathBuf};

use hydrocal::network::{parse_inp, serialize_inp, NetworkGraph};
use hydrocal::scenario::{ReferencePressures, Scenario};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub const NETWORK: &str = "network.inp";
pub const SCENARIOS: &str = "scenarios";
pub const REFERENCES: &str = "references";

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", p.display()))),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::internal)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::internal(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    write_bytes(path, (text + "\n").as_bytes())
}

/// CSV produced by `fill` into an in-memory buffer, then written to `path`.
pub fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> hydrocal::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_bytes(path, &buf)
}

pub fn read_network(path: &Path) -> Result<NetworkGraph, CliError> {
    let parsed = parse_inp(&read_text(path)?)?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: line {}: [{}] {}", path.display(), w.line, w.section, w.message);
    }
    Ok(parsed.graph)
}

#[derive(Debug, Clone)]
pub struct BundleFiles {
    pub graph: NetworkGraph,
    pub scenarios: Vec<Scenario>,
    pub references: Vec<ReferencePressures>,
    /// Every file read, for the manifest.
    pub files: Vec<PathBuf>,
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_bundle(dir: &Path) -> Result<BundleFiles, CliError> {
    let network = dir.join(NETWORK);
    let graph = read_network(&network)?;
    let mut files = vec![network];
    let mut scenarios: Vec<Scenario> = Vec::new();
    for p in json_files(&dir.join(SCENARIOS))? {
        scenarios.push(read_json(&p)?);
        files.push(p);
    }
    scenarios.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
    let mut references = Vec::new();
    for p in json_files(&dir.join(REFERENCES))? {
        references.push(read_json(&p)?);
        files.push(p);
    }
    for s in &scenarios {
        s.validate()?;
    }
    Ok(BundleFiles {
        graph,
        scenarios,
        references,
        files,
    })
}

fn file_name(id: &str) -> Result<String, CliError> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(CliError::validation(anyhow::anyhow!("scenario id '{id}' is not usable as a file name")));
    }
    Ok(format!("{id}.json"))
}

pub fn write_bundle(
    dir: &Path,
    graph: &NetworkGraph,
    scenarios: &[Scenario],
    references: &[ReferencePressures],
) -> Result<(), CliError> {
    write_bytes(&dir.join(NETWORK), serialize_inp(graph).as_bytes())?;
    for s in scenarios {
        write_json(&dir.join(SCENARIOS).join(file_name(&s.id)?), s)?;
    }
    for r in references {
        write_json(&dir.join(REFERENCES).join(file_name(&r.scenario_id)?), r)?;
    }
    Ok(())
}
