//! Versioned text format for converged policy profiles.
//!
//! ```text
//! mmwave-mdp-policy 1
//! bss 3
//! channel_states 3
//! ues 3
//! omega 0.9
//! epsilon 0.000001
//! oh 0.1
//! channel_hash 3f0c9a2b11d8e7a4
//! states 189
//! ue 1 1 1 2 3 1 ...
//! ue 2 ...
//! ```
//!
//! Actions are written 1-based (1 = stay on the serving BS) and indexed by
//! state index of `StateSpace::enumerate(bss, channel_states, ues)`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mdp::DeterministicPolicy;
use crate::multiuser::PolicyProfile;

pub const FORMAT_MAGIC: &str = "mmwave-mdp-policy";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyHeader {
    pub bss: usize,
    pub channel_states: usize,
    pub ues: u32,
    pub omega: f64,
    pub epsilon: f64,
    pub oh: f64,
    pub channel_hash: String,
    pub states: usize,
}

pub fn write_profile<W: Write>(mut w: W, header: &PolicyHeader, profile: &PolicyProfile) -> Result<()> {
    writeln!(w, "{FORMAT_MAGIC} {FORMAT_VERSION}")?;
    writeln!(w, "bss {}", header.bss)?;
    writeln!(w, "channel_states {}", header.channel_states)?;
    writeln!(w, "ues {}", header.ues)?;
    writeln!(w, "omega {}", header.omega)?;
    writeln!(w, "epsilon {}", header.epsilon)?;
    writeln!(w, "oh {}", header.oh)?;
    writeln!(w, "channel_hash {}", header.channel_hash)?;
    writeln!(w, "states {}", header.states)?;
    for (i, p) in profile.policies.iter().enumerate() {
        write!(w, "ue {}", i + 1)?;
        for a in p.actions() {
            write!(w, " {}", a + 1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::PolicyFormat { line, msg: msg.into() }
}

pub fn read_profile<R: BufRead>(r: R) -> Result<(PolicyHeader, PolicyProfile)> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((no, line)) => Ok((no, line?)),
            None => Err(format_err(0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    let (no, magic) = next("magic line")?;
    let mut parts = magic.split_whitespace();
    if parts.next() != Some(FORMAT_MAGIC) {
        return Err(format_err(no, "not a policy file"));
    }
    match parts.next().map(str::parse::<u32>) {
        Some(Ok(FORMAT_VERSION)) => {}
        other => return Err(format_err(no, format!("unsupported version {other:?}"))),
    }

    let mut field = |key: &str| -> Result<(usize, String)> {
        let (no, line) = next(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((no, v.trim().to_string())),
            _ => Err(format_err(no, format!("expected `{key} <value>`"))),
        }
    };
    fn parse<T: std::str::FromStr>(no: usize, v: &str) -> Result<T> {
        v.parse().map_err(|_| format_err(no, format!("cannot parse `{v}`")))
    }
    let (no, v) = field("bss")?;
    let bss: usize = parse(no, &v)?;
    let (no, v) = field("channel_states")?;
    let channel_states = parse(no, &v)?;
    let (no, v) = field("ues")?;
    let ues: u32 = parse(no, &v)?;
    let (no, v) = field("omega")?;
    let omega = parse(no, &v)?;
    let (no, v) = field("epsilon")?;
    let epsilon = parse(no, &v)?;
    let (no, v) = field("oh")?;
    let oh = parse(no, &v)?;
    let (_, channel_hash) = field("channel_hash")?;
    let (no, v) = field("states")?;
    let states: usize = parse(no, &v)?;
    let header = PolicyHeader { bss, channel_states, ues, omega, epsilon, oh, channel_hash, states };

    let mut policies = Vec::with_capacity(ues as usize);
    for ue in 1..=ues as usize {
        let (no, line) = next("ue line")?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("ue") || parts.next().map(str::parse::<usize>) != Some(Ok(ue)) {
            return Err(format_err(no, format!("expected `ue {ue} ...`")));
        }
        let actions: Vec<u8> = parts
            .map(|a| match a.parse::<u8>() {
                Ok(x) if x >= 1 && x as usize <= bss => Ok(x - 1),
                _ => Err(format_err(no, format!("invalid action `{a}`"))),
            })
            .collect::<Result<_>>()?;
        if actions.len() != states {
            return Err(format_err(no, format!("{} actions for {states} states", actions.len())));
        }
        policies.push(DeterministicPolicy::new(actions));
    }
    Ok((header, PolicyProfile::new(policies)))
}
