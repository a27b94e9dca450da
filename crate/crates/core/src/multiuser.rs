//! Round-robin best-response dynamics over per-UE policies.
//!
//! When UE k updates its policy it sees the other UEs only through their
//! policies averaged over the stationary channel law: from the cell loads of
//! the previous slot, each other UE picks a BS with the probability its policy
//! assigns to that load pattern when its own L links are drawn i.i.d. from π.
//! UE k's kernel combines its own L link transitions with the resulting
//! distribution of next-slot cell loads.
//!
//! Conventions used throughout:
//! - BS labels inside one of UE k's states are the action positions of that
//!   state: 0 is k's serving BS, `p ≥ 1` is canonical neighbor `p − 1`.
//! - The load view says how many other UEs sit on each BS but not which ones,
//!   so every arrangement of the other UEs consistent with the loads is taken
//!   as equally likely.
//! - When a policy points at a neighbor that is indistinguishable (same channel
//!   and load) from other non-serving BSs, the choice is split uniformly among them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{ChannelMatrix, ChannelState, RateTable};
use crate::error::{invalid, Result};
use crate::mdp::{reward_unchecked, value_iteration, DeterministicPolicy, Kernel, RewardTable, SolverParams, ViaOutcome};
use crate::rng;
use crate::state_space::{canonical_order, Connection, StateSpace};

/// Everything a best response needs besides the policy profile.
#[derive(Clone, Debug)]
pub struct Environment {
    pub space: StateSpace,
    pub channel: ChannelMatrix,
    /// Stationary distribution of `channel`.
    pub pi: Vec<f64>,
    pub rates: RateTable,
    /// Handover cost as a fraction of the slot's resources.
    pub oh: f64,
    pub solver: SolverParams,
}

impl Environment {
    pub fn new(
        space: StateSpace,
        channel: ChannelMatrix,
        rates: RateTable,
        oh: f64,
        solver: SolverParams,
    ) -> Result<Self> {
        if channel.k() != space.num_channel_states() || rates.k() != channel.k() {
            return Err(invalid("state space, channel matrix and rate table disagree on K"));
        }
        if !(0.0..=1.0).contains(&oh) {
            return Err(invalid(format!("handover cost {oh} outside [0, 1]")));
        }
        solver.validate()?;
        let pi = channel.steady_state()?;
        Ok(Environment { space, channel, pi, rates, oh, solver })
    }

    pub fn num_ues(&self) -> usize {
        self.space.num_ues() as usize
    }
}

/// One deterministic policy per UE, all over the same state space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyProfile {
    pub policies: Vec<DeterministicPolicy>,
}

impl PolicyProfile {
    pub fn new(policies: Vec<DeterministicPolicy>) -> Self {
        PolicyProfile { policies }
    }

    /// Uniformly random actions for every UE and state.
    pub fn random(space: &StateSpace, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let l = space.num_bss();
        let policies = (0..space.num_ues())
            .map(|_| DeterministicPolicy::new((0..space.len()).map(|_| r.gen_range(0..l) as u8).collect()))
            .collect();
        PolicyProfile { policies }
    }

    pub fn constant(space: &StateSpace, action: u8) -> Self {
        PolicyProfile {
            policies: vec![DeterministicPolicy::constant(space.len(), action); space.num_ues() as usize],
        }
    }

    pub fn num_ues(&self) -> usize {
        self.policies.len()
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        if self.policies.len() != space.num_ues() as usize {
            return Err(invalid(format!(
                "profile has {} policies for {} UEs",
                self.policies.len(),
                space.num_ues()
            )));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.len() != space.len() {
                return Err(invalid(format!("policy {i} covers {} states, space has {}", p.len(), space.len())));
            }
            if p.actions().iter().any(|&a| a as usize >= space.num_bss()) {
                return Err(invalid(format!("policy {i} uses an action outside 1..L")));
            }
        }
        Ok(())
    }
}

/// Iterates all K^L channel combinations (last position varies fastest).
fn channel_combos(k: usize, l: usize) -> impl Iterator<Item = Vec<ChannelState>> {
    let total = k.pow(l as u32);
    (0..total).map(move |mut code| {
        let mut combo = vec![ChannelState(0); l];
        for slot in combo.iter_mut().rev() {
            *slot = ChannelState((code % k) as u8);
            code /= k;
        }
        combo
    })
}

fn check_loads(space: &StateSpace, loads: &[u32], serving: usize) -> Result<()> {
    if loads.len() != space.num_bss() {
        return Err(invalid(format!("expected {} loads, got {}", space.num_bss(), loads.len())));
    }
    if loads.iter().sum::<u32>() != space.num_ues() {
        return Err(invalid("loads do not sum to N"));
    }
    if serving >= loads.len() || loads[serving] == 0 {
        return Err(invalid(format!("BS {serving} cannot serve the UE: it carries no load")));
    }
    Ok(())
}

/// P[UE x picks BS i | loads] with x served by `serving_of_x` and its links drawn i.i.d. from `pi`.
///
/// `loads` are the labeled cell loads (including x on its own BS).
pub fn selection_probabilities(
    policy: &DeterministicPolicy,
    space: &StateSpace,
    pi: &[f64],
    loads: &[u32],
    serving_of_x: usize,
) -> Result<Vec<f64>> {
    check_loads(space, loads, serving_of_x)?;
    if policy.len() != space.len() {
        return Err(invalid("policy does not cover the state space"));
    }
    if pi.len() != space.num_channel_states() {
        return Err(invalid("channel distribution length differs from K"));
    }
    Ok(selection_unchecked(policy, space, pi, loads, serving_of_x))
}

fn selection_unchecked(
    policy: &DeterministicPolicy,
    space: &StateSpace,
    pi: &[f64],
    loads: &[u32],
    serving: usize,
) -> Vec<f64> {
    let l = space.num_bss();
    let mut out = vec![0.0; l];
    let labels: Vec<usize> = (0..l).filter(|&i| i != serving).collect();
    let mut conns = Vec::with_capacity(l - 1);
    let mut sorted = Vec::with_capacity(l - 1);
    for combo in channel_combos(space.num_channel_states(), l) {
        let weight: f64 = combo.iter().map(|c| pi[c.index()]).product();
        if weight == 0.0 {
            continue;
        }
        conns.clear();
        conns.extend(labels.iter().map(|&i| Connection { channel: combo[i], load: loads[i] }));
        sorted.clear();
        sorted.extend(canonical_order(&conns).into_iter().map(|p| conns[p]));
        let me = Connection { channel: combo[serving], load: loads[serving] };
        let idx = space.locate(&me, &sorted).expect("labeled view canonicalizes into the space");
        match policy.action(idx) {
            0 => out[serving] += weight,
            p => {
                let target = sorted[p - 1];
                let ties: Vec<usize> =
                    labels.iter().zip(&conns).filter(|(_, c)| **c == target).map(|(&i, _)| i).collect();
                let share = weight / ties.len() as f64;
                for i in ties {
                    out[i] += share;
                }
            }
        }
    }
    out
}

/// Every way of seating the labeled UEs `0..counts.sum()` so that position `j`
/// holds exactly `counts[j]` of them; `seat[x]` is the position of UE x.
fn arrangements(counts: &[u32]) -> Vec<Vec<usize>> {
    fn fill(remaining: &mut [u32], seat: &mut Vec<usize>, total: usize, out: &mut Vec<Vec<usize>>) {
        if seat.len() == total {
            out.push(seat.clone());
            return;
        }
        for j in 0..remaining.len() {
            if remaining[j] > 0 {
                remaining[j] -= 1;
                seat.push(j);
                fill(remaining, seat, total, out);
                seat.pop();
                remaining[j] += 1;
            }
        }
    }
    let total = counts.iter().sum::<u32>() as usize;
    let mut out = Vec::new();
    fill(&mut counts.to_vec(), &mut Vec::with_capacity(total), total, &mut out);
    out
}

/// Distribution of the other UEs' next-slot counts per BS, given previous-slot `loads`
/// (position order, UE k on position 0).
///
/// Exactly `loads[j]` other UEs (one fewer on position 0) sit on position j; which
/// of them sits where is unknown, so every arrangement is equally likely. Given
/// an arrangement the UEs choose independently.
fn others_occupancy(
    k: usize,
    profile: &PolicyProfile,
    env: &Environment,
    loads: &[u32],
) -> Vec<(Vec<u32>, f64)> {
    let l = loads.len();
    let n = env.num_ues();
    let empty = vec![0; l];
    if n == 1 {
        return vec![(empty, 1.0)];
    }
    let others: Vec<usize> = (0..n).filter(|&x| x != k).collect();
    let mut others_on = loads.to_vec();
    others_on[0] -= 1;
    // sel[j][slot]: selection vector of the slot-th other UE when it sits on position j.
    let sel: Vec<Vec<Vec<f64>>> = (0..l)
        .map(|j| {
            if others_on[j] == 0 {
                return Vec::new();
            }
            others
                .iter()
                .map(|&x| selection_unchecked(&profile.policies[x], &env.space, &env.pi, loads, j))
                .collect()
        })
        .collect();
    let seatings = arrangements(&others_on);
    let weight = 1.0 / seatings.len() as f64;
    let mut total: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for seat in &seatings {
        let mut dist: BTreeMap<Vec<u32>, f64> = BTreeMap::from([(empty.clone(), weight)]);
        for (slot, &j) in seat.iter().enumerate() {
            let mix = &sel[j][slot];
            let mut next = BTreeMap::new();
            for (counts, p) in &dist {
                for (i, &q) in mix.iter().enumerate() {
                    if q > 0.0 {
                        let mut c = counts.clone();
                        c[i] += 1;
                        *next.entry(c).or_insert(0.0) += p * q;
                    }
                }
            }
            dist = next;
        }
        for (counts, p) in dist {
            *total.entry(counts).or_insert(0.0) += p;
        }
    }
    total.into_iter().collect()
}

/// UE k's single-agent kernel and expected rewards given the other UEs' policies.
///
/// For every state and action the destination law is the product of UE k's
/// own L link transitions and the load evolution in which k moves to the
/// chosen BS and every other UE moves independently by its selection
/// probabilities at the previous-slot loads. Destinations are canonicalized
/// and probabilities merged; rewards follow [`crate::mdp::transition_reward`].
pub fn build_kernel(k: usize, profile: &PolicyProfile, env: &Environment) -> Result<(Kernel, RewardTable)> {
    let space = &env.space;
    profile.validate(space)?;
    let n = env.num_ues();
    if k >= n {
        return Err(invalid(format!("UE index {k} out of range for N = {n}")));
    }
    let l = space.num_bss();
    let kk = space.num_channel_states();

    let load_patterns: BTreeSet<Vec<u32>> = space.states().iter().map(|s| s.loads()).collect();
    let occupancy: HashMap<Vec<u32>, Vec<(Vec<u32>, f64)>> = load_patterns
        .into_par_iter()
        .map(|loads| {
            let dist = others_occupancy(k, profile, env, &loads);
            (loads, dist)
        })
        .collect();

    let combos: Vec<Vec<ChannelState>> = channel_combos(kk, l).collect();
    let per_state: Vec<(Vec<Vec<(u32, f64)>>, Vec<f64>)> = space
        .states()
        .par_iter()
        .map(|s| {
            let loads = s.loads();
            let occ = &occupancy[&loads];
            let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(l);
            let mut rewards = Vec::with_capacity(l);
            let mut neighbors = Vec::with_capacity(l - 1);
            for a in 0..l {
                if a >= 2 && s.neighbors[a - 1] == s.neighbors[a - 2] {
                    rows.push(rows[a - 1].clone());
                    rewards.push(rewards[a - 1]);
                    continue;
                }
                let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
                for combo in &combos {
                    let p_chan: f64 =
                        (0..l).map(|pos| env.channel.prob(s.connection(pos).channel.index(), combo[pos].index())).product();
                    if p_chan == 0.0 {
                        continue;
                    }
                    for (others, p_occ) in occ {
                        let load_at = |pos: usize| others[pos] + u32::from(pos == a);
                        let serving = Connection { channel: combo[a], load: load_at(a) };
                        neighbors.clear();
                        neighbors.extend(
                            (0..l).filter(|&pos| pos != a).map(|pos| Connection { channel: combo[pos], load: load_at(pos) }),
                        );
                        neighbors.sort_unstable_by(|x, y| y.cmp(x));
                        let dest = space.locate(&serving, &neighbors).expect("destination is a member of the space");
                        *acc.entry(dest as u32).or_insert(0.0) += p_chan * p_occ;
                    }
                }
                let reward = acc
                    .iter()
                    .map(|(&j, &p)| p * reward_unchecked(s, a, space.state_of(j as usize), &env.rates, env.oh))
                    .sum();
                rows.push(acc.into_iter().collect());
                rewards.push(reward);
            }
            (rows, rewards)
        })
        .collect();

    let mut rows = Vec::with_capacity(space.len() * l);
    let mut rewards = Vec::with_capacity(space.len() * l);
    for (r, w) in per_state {
        rows.extend(r);
        rewards.extend(w);
    }
    Ok((Kernel::new(space.len(), l, rows)?, RewardTable::new(l, rewards)?))
}

#[derive(Clone, Debug)]
pub struct BestResponse {
    pub policy: DeterministicPolicy,
    pub via: ViaOutcome,
    pub kernel: Kernel,
    pub rewards: RewardTable,
}

/// Value-iteration policy of UE k against the frozen policies of everyone else.
pub fn best_response(k: usize, profile: &PolicyProfile, env: &Environment) -> Result<BestResponse> {
    let (kernel, rewards) = build_kernel(k, profile, env)?;
    let via = value_iteration(&kernel, &rewards, &env.solver)?;
    Ok(BestResponse { policy: via.policy.clone(), via, kernel, rewards })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// 0-based index of the UE updated in this iteration.
    pub ue: usize,
    /// States whose action changed.
    pub changed: usize,
    pub sweeps: usize,
    pub via_converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IterationLog {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,ue,changed,sweeps,via_converged")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.iteration, r.ue + 1, r.changed, r.sweeps, r.via_converged)?;
        }
        Ok(())
    }

    /// Change counts of the last N iterations.
    pub fn last_cycle(&self, n: usize) -> Vec<usize> {
        let start = self.records.len().saturating_sub(n);
        self.records[start..].iter().map(|r| r.changed).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Convergence {
    pub profile: PolicyProfile,
    pub log: IterationLog,
}

impl Convergence {
    pub fn converged(&self) -> bool {
        self.log.converged
    }
}

/// Sequential best responses, UE ((n − 1) mod N) at iteration n, until N
/// consecutive updates change nothing or `max_outer` iterations have run.
pub fn converge(initial: PolicyProfile, env: &Environment, max_outer: usize) -> Result<Convergence> {
    initial.validate(&env.space)?;
    let n = env.num_ues();
    let mut profile = initial;
    let mut log = IterationLog::default();
    let mut quiet = 0;
    for iteration in 1..=max_outer {
        let ue = (iteration - 1) % n;
        let br = best_response(ue, &profile, env)?;
        let changed = br.policy.differences(&profile.policies[ue]);
        profile.policies[ue] = br.policy;
        log.records.push(IterationRecord {
            iteration,
            ue,
            changed,
            sweeps: br.via.sweeps,
            via_converged: br.via.converged,
        });
        quiet = if changed == 0 { quiet + 1 } else { 0 };
        if quiet >= n {
            log.converged = true;
            break;
        }
    }
    Ok(Convergence { profile, log })
}

/// Changes each UE's best response would make to `profile`; all zeros at a fixed point.
pub fn fixed_point_deviations(profile: &PolicyProfile, env: &Environment) -> Result<Vec<usize>> {
    (0..env.num_ues())
        .map(|k| Ok(best_response(k, profile, env)?.policy.differences(&profile.policies[k])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::policy_evaluation_exact;

    fn env(l: usize, n: u32, oh: f64) -> Environment {
        Environment::new(
            StateSpace::enumerate(l, 3, n).unwrap(),
            ChannelMatrix::urban_nlos_dominant(),
            RateTable::default(),
            oh,
            SolverParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_policy_selects_its_bs() {
        let e = env(3, 3, 0.1);
        let stay = DeterministicPolicy::constant(e.space.len(), 0);
        let p = selection_probabilities(&stay, &e.space, &e.pi, &[1, 2, 0], 1).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-12 && p[0] == 0.0 && p[2] == 0.0);
        assert!(selection_probabilities(&stay, &e.space, &e.pi, &[1, 2, 0], 2).is_err());
        assert!(selection_probabilities(&stay, &e.space, &e.pi, &[1, 1, 0], 0).is_err());
    }

    #[test]
    fn single_channel_state_gives_indicator() {
        let space = StateSpace::enumerate(3, 1, 2).unwrap();
        // Move to the first neighbor everywhere; from BS 0 with loads (1,1,0) the
        // canonical first neighbor is the loaded one, BS 1.
        let policy = DeterministicPolicy::constant(space.len(), 1);
        let p = selection_probabilities(&policy, &space, &[1.0], &[1, 1, 0], 0).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn selection_rows_sum_to_one() {
        let e = env(3, 4, 0.1);
        let prof = PolicyProfile::random(&e.space, 3);
        for loads in [[2u32, 1, 1], [4, 0, 0], [1, 0, 3]] {
            for j in 0..3 {
                if loads[j] > 0 {
                    let p = selection_probabilities(&prof.policies[0], &e.space, &e.pi, &loads, j).unwrap();
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_ue_kernel_keeps_loads_on_chosen_bs() {
        let e = env(3, 1, 0.1);
        let prof = PolicyProfile::random(&e.space, 1);
        let (kernel, _) = build_kernel(0, &prof, &e).unwrap();
        for s in 0..e.space.len() {
            for a in 0..3 {
                let from = e.space.state_of(s);
                let mut total = 0.0;
                for &(j, p) in kernel.row(s, a) {
                    let to = e.space.state_of(j as usize);
                    assert_eq!(to.serving.load, 1);
                    assert!(to.neighbors.iter().all(|c| c.load == 0));
                    total += p;
                    // The new serving link evolved from the chosen link.
                    assert!(e.channel.prob(from.connection(a).channel.index(), to.serving.channel.index()) > 0.0);
                }
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_rates_give_stay_policy() {
        let space = StateSpace::enumerate(3, 3, 2).unwrap();
        let e = Environment::new(
            space,
            ChannelMatrix::urban_nlos_dominant(),
            RateTable::new(vec![0.0, 0.0, 0.0]).unwrap(),
            0.1,
            SolverParams::default(),
        )
        .unwrap();
        let prof = PolicyProfile::random(&e.space, 9);
        let br = best_response(0, &prof, &e).unwrap();
        assert!(br.policy.actions().iter().all(|&a| a == 0));
        let c = converge(prof, &e, 20).unwrap();
        assert!(c.converged());
        assert_eq!(c.profile, PolicyProfile::constant(&e.space, 0));
    }

    #[test]
    fn single_ue_converges_in_two_iterations() {
        let e = env(3, 1, 0.1);
        let c = converge(PolicyProfile::random(&e.space, 4), &e, 10).unwrap();
        assert!(c.converged());
        assert_eq!(c.log.records.len(), 2);
        assert_eq!(c.log.records[1].changed, 0);
    }

    #[test]
    fn best_response_improves_pointwise() {
        let e = env(2, 2, 0.1);
        let prof = PolicyProfile::random(&e.space, 17);
        let br = best_response(1, &prof, &e).unwrap();
        let omega = e.solver.omega;
        let old = policy_evaluation_exact(&prof.policies[1], &br.kernel, &br.rewards, omega).unwrap();
        let new = policy_evaluation_exact(&br.policy, &br.kernel, &br.rewards, omega).unwrap();
        for (n, o) in new.0.iter().zip(&old.0) {
            assert!(n + 1e-9 >= *o);
        }
    }

    #[test]
    fn stay_put_others_give_point_mass_occupancy() {
        let e = env(3, 3, 0.1);
        let prof = PolicyProfile::constant(&e.space, 0);
        let dist = others_occupancy(0, &prof, &e, &[1, 2, 0]);
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].0, vec![0, 2, 0]);
        assert!((dist[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arrangements_are_multinomial() {
        assert_eq!(arrangements(&[0, 1, 1]), vec![vec![1, 2], vec![2, 1]]);
        assert_eq!(arrangements(&[2, 0]), vec![vec![0, 0]]);
        assert_eq!(arrangements(&[2, 1, 2]).len(), 30);
        assert_eq!(arrangements(&[0, 0]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn stay_put_others_keep_their_counts_when_spread() {
        let e = env(3, 3, 0.1);
        let prof = PolicyProfile::constant(&e.space, 0);
        let dist = others_occupancy(0, &prof, &e, &[1, 1, 1]);
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].0, vec![0, 1, 1]);
        assert!((dist[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_profile() {
        let e = env(3, 2, 0.1);
        let small = PolicyProfile::random(&StateSpace::enumerate(3, 3, 3).unwrap(), 0);
        assert!(build_kernel(0, &small, &e).is_err());
        let prof = PolicyProfile::random(&e.space, 0);
        assert!(build_kernel(5, &prof, &e).is_err());
    }
}
