use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::commands::Outcome;

pub const TOOL: &str = "repsim";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub params: Command,
    pub inputs: Vec<FileDigest>,
    pub out: PathBuf,
    /// Paths relative to `out` (or the file name when `out` is a file).
    pub artifacts: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `<out>.meta.json`, next to the output.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn artifact_name(out: &Path, file: &Path) -> PathBuf {
    match file.strip_prefix(out) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.to_path_buf(),
        _ => file.file_name().map(PathBuf::from).unwrap_or_else(|| file.to_path_buf()),
    }
}

pub fn record(argv: &[String], command: &Command, outcome: &Outcome) -> Result<Option<RunMeta>> {
    let Some(out) = &outcome.out else {
        return Ok(None);
    };
    let digest = |p: &PathBuf, name: PathBuf| -> Result<FileDigest> {
        Ok(FileDigest {
            path: name,
            sha256: sha256_file(p)?,
        })
    };
    let inputs = outcome.inputs.iter().map(|p| digest(p, p.clone())).collect::<Result<_>>()?;
    let artifacts = outcome
        .artifacts
        .iter()
        .map(|p| digest(p, artifact_name(out, p)))
        .collect::<Result<_>>()?;
    let meta = RunMeta {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv: argv.to_vec(),
        params: command.clone(),
        inputs,
        out: out.clone(),
        artifacts,
    };
    let path = meta_path(out);
    let mut bytes = serde_json::to_vec_pretty(&meta)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(Some(meta))
}

pub fn load(path: &Path) -> Result<RunMeta> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let meta: RunMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if meta.tool != TOOL {
        bail!("{}: written by `{}`, not {TOOL}", path.display(), meta.tool);
    }
    Ok(meta)
}

/// Fails naming the first input whose content no longer matches.
pub fn check_inputs(meta: &RunMeta) -> Result<()> {
    for input in &meta.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            bail!("input {} changed since the recorded run", input.path.display());
        }
    }
    Ok(())
}

/// The recorded argv with `--out` pointed elsewhere.
pub fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.to_string_lossy().into_owned();
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut iter = argv.iter();
    while let Some(arg) = iter.next() {
        if arg == "--out" {
            iter.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if arg.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(arg.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out]);
    }
    result
}

/// Fails naming the first artifact whose digest differs from the recorded one.
pub fn compare_artifacts(recorded: &RunMeta, replayed: &RunMeta) -> Result<()> {
    if recorded.artifacts.len() != replayed.artifacts.len() {
        bail!(
            "replay wrote {} files, the recorded run wrote {}",
            replayed.artifacts.len(),
            recorded.artifacts.len()
        );
    }
    for (a, b) in recorded.artifacts.iter().zip(&replayed.artifacts) {
        if a.sha256 != b.sha256 {
            bail!("replayed {} differs from the recorded digest", b.path.display());
        }
    }
    Ok(())
}
