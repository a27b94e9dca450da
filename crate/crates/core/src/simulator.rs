//! Slot-level Monte Carlo evaluation on the ground-truth system: N·L
//! independent Markov links and the true cell loads.
//!
//! Slot t runs in this order:
//! 1. every distributed UE observes its own L link states and the loads left by
//!    slot t − 1, and all of them pick a BS simultaneously;
//! 2. all links take one Markov step;
//! 3. the centralized upper bound, which knows every link, assigns all UEs;
//! 4. each UE earns (1 − c)·R(link to its BS)/U, where U is the actual number of
//!    UEs on that BS after the moves and c = OH if it switched BS.
//!
//! Decisions are therefore made on link states one step older than the ones
//! that carry the data, as in the MDP reward where the rate comes from the
//! destination state.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{self, JointObservation};
use crate::channel::{ChannelMatrix, ChannelState};
use crate::error::{invalid, Error, Result};
use crate::multiuser::PolicyProfile;
use crate::rng::{self, sample_index, Stream};
use crate::state_space::{canonical_order, Connection, StateSpace};

pub use crate::channel::RateTable;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub bss: usize,
    pub ues: usize,
    pub channel: ChannelMatrix,
    pub rates: RateTable,
    pub oh: f64,
    pub slots: u64,
    pub warmup: u64,
    pub seeds: Vec<u64>,
    /// Whether the upper bound charges handover cost inside its objective.
    pub ub_charges_oh: bool,
    pub bandwidth_hz: f64,
    pub slot_seconds: f64,
    pub symbols_per_slot: u32,
    pub data_symbols: u32,
}

impl SimConfig {
    /// 1 GHz carrier, 125 μs slots with 24 of 30 OFDM symbols carrying data,
    /// 10⁵ slots per seed after 1000 warmup slots, 20 seeds.
    pub fn new(bss: usize, ues: usize, channel: ChannelMatrix, rates: RateTable, oh: f64) -> Self {
        SimConfig {
            bss,
            ues,
            channel,
            rates,
            oh,
            slots: 100_000,
            warmup: 1_000,
            seeds: (0..20).collect(),
            ub_charges_oh: true,
            bandwidth_hz: 1e9,
            slot_seconds: 125e-6,
            symbols_per_slot: 30,
            data_symbols: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bss == 0 || self.ues == 0 {
            return Err(invalid("need at least one BS and one UE"));
        }
        if self.channel.k() != self.rates.k() {
            return Err(invalid("channel matrix and rate table disagree on K"));
        }
        if !(0.0..=1.0).contains(&self.oh) {
            return Err(invalid(format!("handover cost {} outside [0, 1]", self.oh)));
        }
        if self.slots <= self.warmup {
            return Err(invalid("slots must exceed warmup"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed required"));
        }
        if self.data_symbols > self.symbols_per_slot || self.symbols_per_slot == 0 {
            return Err(invalid("data symbols must not exceed symbols per slot"));
        }
        if !(self.bandwidth_hz > 0.0 && self.slot_seconds > 0.0) {
            return Err(invalid("bandwidth and slot duration must be positive"));
        }
        Ok(())
    }
}

/// Bits/s carried at spectral efficiency `se` over the data share of each slot.
pub fn throughput(se: f64, config: &SimConfig) -> f64 {
    se * config.bandwidth_hz * (config.data_symbols as f64 / config.symbols_per_slot as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    Mdp,
    Load,
    Rate,
    Channel,
    Upper,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] =
        [SchemeKind::Mdp, SchemeKind::Load, SchemeKind::Rate, SchemeKind::Channel, SchemeKind::Upper];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Mdp => "mdp",
            SchemeKind::Load => "load",
            SchemeKind::Rate => "rate",
            SchemeKind::Channel => "channel",
            SchemeKind::Upper => "upper",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown scheme `{s}` (expected mdp, load, rate, channel or upper)")))
    }
}

/// A converged profile together with the state space its policies index.
#[derive(Clone, Debug)]
pub struct MdpPolicies {
    pub profile: PolicyProfile,
    pub space: StateSpace,
}

#[derive(Clone, Copy, Debug)]
pub enum Scheme<'a> {
    Mdp(&'a MdpPolicies),
    Load,
    Rate,
    Channel,
    Upper,
}

impl Scheme<'_> {
    pub fn kind(&self) -> SchemeKind {
        match self {
            Scheme::Mdp(_) => SchemeKind::Mdp,
            Scheme::Load => SchemeKind::Load,
            Scheme::Rate => SchemeKind::Rate,
            Scheme::Channel => SchemeKind::Channel,
            Scheme::Upper => SchemeKind::Upper,
        }
    }

    /// Baseline for `kind`; `None` for the MDP scheme, which needs policies.
    pub fn baseline(kind: SchemeKind) -> Option<Scheme<'static>> {
        match kind {
            SchemeKind::Mdp => None,
            SchemeKind::Load => Some(Scheme::Load),
            SchemeKind::Rate => Some(Scheme::Rate),
            SchemeKind::Channel => Some(Scheme::Channel),
            SchemeKind::Upper => Some(Scheme::Upper),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Mean spectral efficiency per UE over the measured slots (bits/s/Hz).
    pub avg_se: f64,
    pub handovers: u64,
    pub handovers_per_ue_per_kslot: f64,
    pub measured_slots: u64,
}

/// Sample mean and 95% Student-t confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Summary {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Summary { mean, ci95: 0.0 };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
        Summary { mean, ci95: t * (var / n as f64).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub scheme: SchemeKind,
    pub bss: usize,
    pub channel_states: usize,
    pub ues: usize,
    pub oh: f64,
    pub slots: u64,
    pub per_seed: Vec<SeedMetrics>,
    pub se: Summary,
    pub handovers_total: Summary,
    pub handovers_per_ue_per_kslot: Summary,
}

impl Metrics {
    fn from_seeds(config: &SimConfig, scheme: SchemeKind, per_seed: Vec<SeedMetrics>) -> Metrics {
        let col = |f: fn(&SeedMetrics) -> f64| Summary::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Metrics {
            scheme,
            bss: config.bss,
            channel_states: config.channel.k(),
            ues: config.ues,
            oh: config.oh,
            slots: config.slots,
            se: col(|s| s.avg_se),
            handovers_total: col(|s| s.handovers as f64),
            handovers_per_ue_per_kslot: col(|s| s.handovers_per_ue_per_kslot),
            per_seed,
        }
    }
}

/// Runs every seed of `config` under `scheme` (seeds in parallel).
pub fn run(config: &SimConfig, scheme: Scheme<'_>) -> Result<Metrics> {
    config.validate()?;
    if let Scheme::Mdp(p) = scheme {
        if p.space.num_bss() != config.bss
            || p.space.num_ues() as usize != config.ues
            || p.space.num_channel_states() != config.channel.k()
        {
            return Err(invalid("policy profile dimensions do not match the simulation config"));
        }
        p.profile.validate(&p.space)?;
    }
    if scheme.kind() == SchemeKind::Upper {
        let size = (config.bss as f64).powi(config.ues as i32);
        if size > baselines::UPPER_BOUND_BUDGET as f64 {
            return Err(Error::CapExceeded { size: size as u64, cap: baselines::UPPER_BOUND_BUDGET });
        }
    }
    let pi = config.channel.steady_state()?;
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, scheme, &pi, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_seeds(config, scheme.kind(), per_seed))
}

/// Per-UE MDP decision: position → real BS, splitting ties among identical neighbors uniformly.
fn mdp_choice(
    policies: &MdpPolicies,
    ue: usize,
    serving: usize,
    chans: &[ChannelState],
    loads: &[u32],
    rng: &mut Stream,
) -> usize {
    let labels: Vec<usize> = (0..chans.len()).filter(|&i| i != serving).collect();
    let conns: Vec<Connection> = labels.iter().map(|&i| Connection { channel: chans[i], load: loads[i] }).collect();
    let sorted: Vec<Connection> = canonical_order(&conns).into_iter().map(|p| conns[p]).collect();
    let me = Connection { channel: chans[serving], load: loads[serving] };
    let idx = policies.space.locate(&me, &sorted).expect("observed state belongs to the space");
    match policies.profile.policies[ue].action(idx) {
        0 => serving,
        p => {
            let target = sorted[p - 1];
            let ties: Vec<usize> = labels.iter().zip(&conns).filter(|(_, c)| **c == target).map(|(&i, _)| i).collect();
            if ties.len() == 1 {
                ties[0]
            } else {
                ties[sample_index(&vec![1.0 / ties.len() as f64; ties.len()], rng)]
            }
        }
    }
}

fn count_loads(assignment: &[usize], l: usize) -> Vec<u32> {
    let mut loads = vec![0u32; l];
    for &a in assignment {
        loads[a] += 1;
    }
    loads
}

/// One seed. Link (ue, bs) draws from stream `ue·L + bs`; UE decisions use stream `N·L + ue`.
pub fn run_seed(config: &SimConfig, scheme: Scheme<'_>, pi: &[f64], seed: u64) -> Result<SeedMetrics> {
    let (n, l) = (config.ues, config.bss);
    let mut link_rng: Vec<Stream> = (0..n * l).map(|i| rng::stream(seed, i as u64)).collect();
    let mut ue_rng: Vec<Stream> = (0..n).map(|k| rng::stream(seed, (n * l + k) as u64)).collect();

    let mut chans: Vec<Vec<ChannelState>> = (0..n)
        .map(|k| (0..l).map(|i| ChannelState(sample_index(pi, &mut link_rng[k * l + i]) as u8)).collect())
        .collect();
    let mut assign: Vec<usize> = chans.iter().map(|row| baselines::channel_policy(row)).collect();
    let mut loads = count_loads(&assign, l);

    let mut se_sum = 0.0;
    let mut handovers = 0u64;
    let mut others = vec![0u32; l];
    let mut next = vec![0usize; n];
    for t in 0..config.slots {
        for k in 0..n {
            others.copy_from_slice(&loads);
            others[assign[k]] -= 1;
            next[k] = match scheme {
                Scheme::Mdp(p) => mdp_choice(p, k, assign[k], &chans[k], &loads, &mut ue_rng[k]),
                Scheme::Load => baselines::load_policy(&others, &mut ue_rng[k]),
                Scheme::Rate => baselines::rate_policy(&chans[k], &others, &config.rates),
                Scheme::Channel => baselines::channel_policy(&chans[k]),
                Scheme::Upper => assign[k],
            };
        }
        for k in 0..n {
            for i in 0..l {
                let s = &mut chans[k][i];
                *s = config.channel.step(s.index(), &mut link_rng[k * l + i]);
            }
        }
        if let Scheme::Upper = scheme {
            let obs = JointObservation { channels: chans.clone(), loads: loads.clone() };
            next = baselines::upper_bound_assignment(&obs, &config.rates, config.oh, &assign, config.ub_charges_oh)?;
        }
        let new_loads = count_loads(&next, l);
        debug_assert_eq!(new_loads.iter().sum::<u32>() as usize, n);
        if t >= config.warmup {
            for k in 0..n {
                let moved = next[k] != assign[k];
                let cost = if moved { config.oh } else { 0.0 };
                se_sum += (1.0 - cost) * config.rates.rate(chans[k][next[k]]) / new_loads[next[k]] as f64;
                handovers += u64::from(moved);
            }
        }
        std::mem::swap(&mut assign, &mut next);
        loads = new_loads;
    }
    let measured = config.slots - config.warmup;
    Ok(SeedMetrics {
        seed,
        avg_se: se_sum / (n as f64 * measured as f64),
        handovers,
        handovers_per_ue_per_kslot: handovers as f64 * 1000.0 / (n as f64 * measured as f64),
        measured_slots: measured,
    })
}

/// One configuration of a sweep, with MDP policies when the `mdp` scheme is requested.
#[derive(Clone, Debug)]
pub struct SweepCase {
    pub config: SimConfig,
    pub mdp: Option<MdpPolicies>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub case: usize,
    pub metrics: Metrics,
    /// (SE − SE_channel)/SE_channel within the same case, when `channel` was run.
    pub gain_vs_channel: Option<f64>,
}

/// Cross product of cases and schemes, in case-major order.
pub fn sweep(cases: &[SweepCase], schemes: &[SchemeKind]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cases.len() * schemes.len());
    for (i, case) in cases.iter().enumerate() {
        let mut metrics = Vec::with_capacity(schemes.len());
        for &kind in schemes {
            let scheme = match kind {
                SchemeKind::Mdp => Scheme::Mdp(
                    case.mdp.as_ref().ok_or_else(|| invalid(format!("case {i} has no MDP policies")))?,
                ),
                other => Scheme::baseline(other).expect("baseline scheme"),
            };
            metrics.push(run(&case.config, scheme)?);
        }
        let channel_se = metrics.iter().find(|m| m.scheme == SchemeKind::Channel).map(|m| m.se.mean);
        rows.extend(metrics.into_iter().map(|m| {
            let gain = channel_se.map(|c| (m.se.mean - c) / c);
            SweepRow { case: i, metrics: m, gain_vs_channel: gain }
        }));
    }
    Ok(rows)
}

/// Columns `scheme, L, K, N, oh, seed, avg_se_bits_per_s_per_hz, handovers_total, handovers_per_ue_per_kslot, slots`.
pub fn write_raw_csv<'a, W: Write>(mut w: W, metrics: impl IntoIterator<Item = &'a Metrics>) -> Result<()> {
    writeln!(
        w,
        "scheme,L,K,N,oh,seed,avg_se_bits_per_s_per_hz,handovers_total,handovers_per_ue_per_kslot,slots"
    )?;
    for m in metrics {
        for s in &m.per_seed {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                m.scheme, m.bss, m.channel_states, m.ues, m.oh, s.seed, s.avg_se, s.handovers,
                s.handovers_per_ue_per_kslot, m.slots
            )?;
        }
    }
    Ok(())
}

/// One row per (case, scheme) with seed-level means and 95% half-widths.
pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(
        w,
        "scheme,L,K,N,oh,seeds,slots,mean,ci95_halfwidth,handovers_per_ue_per_kslot_mean,handovers_per_ue_per_kslot_ci95,gain_vs_channel"
    )?;
    for r in rows {
        let m = &r.metrics;
        let gain = r.gain_vs_channel.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.scheme,
            m.bss,
            m.channel_states,
            m.ues,
            m.oh,
            m.per_seed.len(),
            m.slots,
            m.se.mean,
            m.se.ci95,
            m.handovers_per_ue_per_kslot.mean,
            m.handovers_per_ue_per_kslot.ci95,
            gain
        )?;
    }
    Ok(())
}

/// Long-format plot data: `scheme, N, oh, metric, mean, ci95_halfwidth`.
pub fn write_plot_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "scheme,N,oh,metric,mean,ci95_halfwidth")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(w, "{},{},{},avg_se,{},{}", m.scheme, m.ues, m.oh, m.se.mean, m.se.ci95)?;
        writeln!(
            w,
            "{},{},{},handovers_per_ue_per_kslot,{},{}",
            m.scheme, m.ues, m.oh, m.handovers_per_ue_per_kslot.mean, m.handovers_per_ue_per_kslot.ci95
        )?;
        if let Some(g) = r.gain_vs_channel {
            writeln!(w, "{},{},{},gain_vs_channel,{},", m.scheme, m.ues, m.oh, g)?;
        }
    }
    Ok(())
}
