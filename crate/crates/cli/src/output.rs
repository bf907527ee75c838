//! Output directories: exclusive lock, overwrite protection and manifests.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{config, CliError};

pub const LOCK_FILE: &str = ".qfei.lock";
pub const MANIFEST: &str = "manifest.json";

/// Held for the lifetime of a command; removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(config(format!(
                "{} is locked by another run (remove {} if that run died)",
                root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Prepares `dir` for a fresh run: refuses a non-empty directory unless
/// `force`, in which case its contents are removed.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(config(format!("{} already exists; pass --force to overwrite", dir.display())));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(config(format!("{} not found; run `qfei {hint}` first", path.display())))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(qfei::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    seeds: &'a BTreeMap<String, u64>,
    artifacts: Vec<Artifact>,
}

/// Writes `manifest.json` listing every other file under `dir`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_hash: &str,
    seeds: &BTreeMap<String, u64>,
) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let artifacts = files
        .into_iter()
        .filter(|rel| rel != MANIFEST)
        .map(|rel| {
            let bytes = fs::read(dir.join(&rel))?;
            Ok(Artifact { bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)), path: rel })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash,
        seeds,
        artifacts,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}
