//! On-disk cache of converged policy profiles.
//!
//! A file name carries L, K, N and OH for humans plus a digest of everything
//! the policies depend on, so a changed channel, rate table or solver setting
//! never picks up an old file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mmwave_mdp::multiuser::{Convergence, PolicyProfile};
use mmwave_mdp::profile_io::{read_profile, write_profile, PolicyHeader};
use mmwave_mdp::StateSpace;
use sha2::{Digest, Sha256};

use crate::config::Experiment;

#[derive(Clone, Debug)]
pub struct CacheEntry {
    pub policy: PathBuf,
    pub log: PathBuf,
    pub header: PolicyHeader,
}

pub fn entry(exp: &Experiment, n: u32, oh: f64, states: usize) -> CacheEntry {
    let header = PolicyHeader {
        bss: exp.bss,
        channel_states: exp.matrix().k(),
        ues: n,
        omega: exp.omega,
        epsilon: exp.epsilon,
        oh,
        channel_hash: exp.channel_hash.clone(),
        states,
    };
    let mut h = Sha256::new();
    h.update(format!(
        "{} {} {} {} {} {} {} {:?}",
        header.bss, header.channel_states, n, exp.omega, exp.epsilon, oh, exp.channel_hash, exp.rates
    ));
    let digest = hex::encode(&h.finalize()[..8]);
    let stem = format!("L{}_K{}_N{n}_oh{oh}_{digest}", header.bss, header.channel_states);
    CacheEntry {
        policy: exp.cache_dir.join(format!("{stem}.policy")),
        log: exp.cache_dir.join(format!("{stem}.log.csv")),
        header,
    }
}

pub fn store(entry: &CacheEntry, convergence: &Convergence, write_policy: bool) -> anyhow::Result<()> {
    let dir = entry.policy.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create cache directory {}", dir.display()))?;
    let mut log = BufWriter::new(File::create(&entry.log)?);
    convergence.log.write_csv(&mut log)?;
    log.flush()?;
    if write_policy {
        let mut w = BufWriter::new(File::create(&entry.policy)?);
        write_profile(&mut w, &entry.header, &convergence.profile)?;
        w.flush()?;
    }
    Ok(())
}

/// Reads a policy file and checks it against the expected header.
pub fn load(path: &Path, expected: &PolicyHeader) -> anyhow::Result<PolicyProfile> {
    let file = File::open(path).with_context(|| format!("cannot open policy file {}", path.display()))?;
    let (header, profile) =
        read_profile(BufReader::new(file)).with_context(|| format!("cannot read policy file {}", path.display()))?;
    if &header != expected {
        bail!(
            "policy file {} was solved for a different setup ({header:?}, expected {expected:?}); re-run `solve`",
            path.display()
        );
    }
    Ok(profile)
}

/// Cached profile for (N, OH), or an error telling the user to run `solve`.
pub fn require(exp: &Experiment, space: &StateSpace, oh: f64) -> anyhow::Result<PolicyProfile> {
    let e = entry(exp, space.num_ues(), oh, space.len());
    if !e.policy.exists() {
        bail!(
            "no cached MDP policies for L={} N={} OH={oh} in {}; run `mmwave-mdp solve --bss {} --ues {} --oh {oh}` \
             with the same configuration first (or drop `mdp` from --scheme)",
            exp.bss,
            space.num_ues(),
            exp.cache_dir.display(),
            exp.bss,
            space.num_ues()
        );
    }
    load(&e.policy, &e.header)
}
