//! Run manifests: what was run, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Run;
use crate::{run_command, CliError, Command};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Root seed every random stream of the run is derived from.
    pub seed: Option<u64>,
    /// Effective configuration blocks after defaults and overrides.
    pub config: Option<serde_json::Value>,
    pub inputs: Vec<FileHash>,
    pub out_dir: PathBuf,
    /// Files written by the run, relative to `out_dir`.
    pub outputs: Vec<FileHash>,
    pub exit_code: u8,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of every file below `dir` except the manifest, keyed by relative path.
fn output_hashes(dir: &Path) -> Result<BTreeMap<PathBuf, String>, CliError> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) -> Result<(), CliError> {
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::internal(anyhow::anyhow!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(CliError::internal)?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).map_err(CliError::internal)?.to_path_buf();
                if rel != Path::new(MANIFEST) {
                    out.insert(rel, sha256_file(&path)?);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

pub fn write(command: &Command, run: &Run) -> Result<(), CliError> {
    let out_dir = command.out().to_path_buf();
    let inputs = run
        .inputs
        .iter()
        .map(|p| Ok(FileHash { path: p.clone(), sha256: sha256_file(p)? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let outputs = output_hashes(&out_dir)?
        .into_iter()
        .map(|(path, sha256)| FileHash { path, sha256 })
        .collect();
    let manifest = RunManifest {
        tool: "hydrocal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        seed: run.seed,
        config: run.config.clone(),
        inputs,
        out_dir: out_dir.clone(),
        outputs,
        exit_code: run.code,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
    std::fs::write(out_dir.join(MANIFEST), text + "\n").map_err(CliError::internal)
}

pub fn read(path: &Path) -> Result<RunManifest, CliError> {
    let path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(anyhow::anyhow!("{}: {e}", path.display())))
}

/// Re-run the recorded command into a scratch directory and compare every
/// output hash. Exit code 0 when identical, 2 when inputs or outputs differ.
pub fn verify(path: &Path) -> Result<u8, CliError> {
    let manifest = read(path)?;
    let mut changed = Vec::new();
    for input in &manifest.inputs {
        match sha256_file(&input.path) {
            Ok(h) if h == input.sha256 => {}
            _ => changed.push(input.path.display().to_string()),
        }
    }
    if !changed.is_empty() {
        eprintln!("inputs changed since the run: {}", changed.join(", "));
        return Ok(CliError::VALIDATION);
    }
    let modified: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|f| sha256_file(&manifest.out_dir.join(&f.path)).ok().as_ref() != Some(&f.sha256))
        .map(|f| f.path.display().to_string())
        .collect();
    if !modified.is_empty() {
        eprintln!("outputs modified since the run: {}", modified.join(", "));
        return Ok(CliError::VALIDATION);
    }
    let scratch = std::env::temp_dir().join(format!(
        "hydrocal-verify-{}-{}",
        std::process::id(),
        manifest.outputs.len()
    ));
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch).map_err(CliError::internal)?;
    }
    let mut command = manifest.command.clone();
    command.set_out(scratch.clone());
    let result = run_command(command);
    let fresh = result.and_then(|code| Ok((code, output_hashes(&scratch)?)));
    let _ = std::fs::remove_dir_all(&scratch);
    let (code, fresh) = fresh?;
    let recorded: BTreeMap<PathBuf, String> = manifest.outputs.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect();
    let mut differing: Vec<String> = recorded
        .iter()
        .filter(|(p, h)| fresh.get(*p) != Some(h))
        .map(|(p, _)| p.display().to_string())
        .collect();
    differing.extend(fresh.keys().filter(|p| !recorded.contains_key(*p)).map(|p| p.display().to_string()));
    if code != manifest.exit_code {
        differing.push(format!("exit code {code} (recorded {})", manifest.exit_code));
    }
    if differing.is_empty() {
        println!("verified {} outputs", recorded.len());
        Ok(0)
    } else {
        eprintln!("outputs differ: {}", differing.join(", "));
        Ok(CliError::VALIDATION)
    }
}
