//! `manifest.json`: what was run, with which configuration, and what it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Experiment;

#[derive(Serialize)]
struct Artifact {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    cli_version: &'static str,
    library_version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    config_sha256: String,
    config: &'a Experiment,
    seeds: &'a [u64],
    artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `<out>/manifest.json` and returns its path.
pub fn write(exp: &Experiment, command: &str, artifacts: &[PathBuf]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&exp.out_dir)?;
    let config_json = serde_json::to_vec(exp)?;
    let manifest = Manifest {
        tool: "mmwave-mdp",
        cli_version: env!("CARGO_PKG_VERSION"),
        library_version: mmwave_mdp::VERSION,
        command,
        argv: std::env::args().collect(),
        config_sha256: hex::encode(Sha256::digest(&config_json)),
        config: exp,
        seeds: &exp.seeds,
        artifacts: artifacts
            .iter()
            .map(|p| Ok(Artifact { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<anyhow::Result<_>>()?,
    };
    let path = exp.out_dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}
