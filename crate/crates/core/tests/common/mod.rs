//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mmwave_mdp::mdp::{transition_reward, DeterministicPolicy, Kernel, RewardTable};
use mmwave_mdp::multiuser::{Environment, PolicyProfile};
use mmwave_mdp::{ChannelState, Connection, SystemState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn combos(k: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|c| {
                (0..k).map(move |x| {
                    let mut c = c.clone();
                    c.push(x);
                    c
                })
            })
            .collect();
    }
    out
}

fn view(serving: Connection, mut neighbors: Vec<Connection>) -> SystemState {
    neighbors.sort_by(|a, b| b.cmp(a));
    SystemState { serving, neighbors }
}

/// Where another UE attributed to position `j` goes, as (position, prob) pairs,
/// for one concrete set of its link states.
fn other_choice(
    policy: &DeterministicPolicy,
    env: &Environment,
    loads: &[u32],
    j: usize,
    chans: &[usize],
) -> Vec<(usize, f64)> {
    let l = loads.len();
    let conn = |i: usize| Connection { channel: ChannelState(chans[i] as u8), load: loads[i] };
    let state = view(conn(j), (0..l).filter(|&i| i != j).map(conn).collect());
    let idx = env.space.index_of(&state).expect("view in space");
    match policy.action(idx) {
        0 => vec![(j, 1.0)],
        p => {
            let target = state.neighbors[p - 1];
            let ties: Vec<usize> = (0..l).filter(|&i| i != j && conn(i) == target).collect();
            ties.iter().map(|&i| (i, 1.0 / ties.len() as f64)).collect()
        }
    }
}

/// Exact destination law and expected reward of (state, action) for UE `k`,
/// by explicit enumeration of every other UE's attributed BS, link states and
/// choice, jointly with UE k's own link transitions.
pub fn joint_enumeration_row(
    env: &Environment,
    profile: &PolicyProfile,
    k: usize,
    s: usize,
    a: usize,
) -> (BTreeMap<usize, f64>, f64) {
    let state = env.space.state_of(s).clone();
    let l = env.space.num_bss();
    let kk = env.space.num_channel_states();
    let n = env.num_ues();
    let loads = state.loads();
    let mut others_on = loads.clone();
    others_on[0] -= 1;

    // Every labeled seating of the others with `others_on[j]` of them on
    // position j, each equally likely; then every UE's links and choice.
    let others: Vec<usize> = (0..n).filter(|&x| x != k).collect();
    let mut seatings: Vec<Vec<usize>> = vec![vec![]];
    for _ in &others {
        seatings = seatings
            .into_iter()
            .flat_map(|seat| (0..l).map(move |j| [seat.clone(), vec![j]].concat()))
            .collect();
    }
    seatings.retain(|seat| (0..l).all(|j| seat.iter().filter(|&&p| p == j).count() as u32 == others_on[j]));
    let all_chans = combos(kk, l);
    let mut joint: Vec<(Vec<u32>, f64)> = Vec::new();
    for seat in &seatings {
        let mut part: Vec<(Vec<u32>, f64)> = vec![(vec![0; l], 1.0 / seatings.len() as f64)];
        for (&x, &j) in others.iter().zip(seat) {
            let mut next = Vec::new();
            for (counts, w) in &part {
                for chans in &all_chans {
                    let w_ch: f64 = chans.iter().map(|&c| env.pi[c]).product();
                    for (pos, q) in other_choice(&profile.policies[x], env, &loads, j, chans) {
                        let mut c = counts.clone();
                        c[pos] += 1;
                        next.push((c, w * w_ch * q));
                    }
                }
            }
            part = next;
        }
        joint.extend(part);
    }

    let mut row = BTreeMap::new();
    let mut reward = 0.0;
    for next_chans in &all_chans {
        let p_ch: f64 =
            (0..l).map(|pos| env.channel.prob(state.connection(pos).channel.index(), next_chans[pos])).product();
        if p_ch == 0.0 {
            continue;
        }
        for (counts, w) in &joint {
            let conn = |pos: usize| Connection {
                channel: ChannelState(next_chans[pos] as u8),
                load: counts[pos] + u32::from(pos == a),
            };
            let dest = view(conn(a), (0..l).filter(|&p| p != a).map(conn).collect());
            let j = env.space.index_of(&dest).expect("destination in space");
            let p = p_ch * w;
            *row.entry(j).or_insert(0.0) += p;
            reward += p * transition_reward(&state, a, &dest, &env.rates, env.oh).unwrap();
        }
    }
    (row, reward)
}

/// Largest entrywise gap between a kernel row and a dense map.
pub fn row_gap(kernel: &Kernel, s: usize, a: usize, oracle: &BTreeMap<usize, f64>) -> f64 {
    let mine: BTreeMap<usize, f64> = kernel.row(s, a).iter().map(|&(j, p)| (j as usize, p)).collect();
    mine.keys()
        .chain(oracle.keys())
        .map(|j| (mine.get(j).copied().unwrap_or(0.0) - oracle.get(j).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// A random finite MDP with dense rows: `(kernel, rewards)`.
pub fn random_mdp(seed: u64, states: usize, actions: usize) -> (Kernel, RewardTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = Vec::with_capacity(states);
    let mut rewards = Vec::with_capacity(states * actions);
    for _ in 0..states {
        let mut by_action = Vec::with_capacity(actions);
        for _ in 0..actions {
            // Sparse-ish rows: each destination kept with probability 0.3, at least one.
            let mut row: Vec<f64> =
                (0..states).map(|_| if rng.gen_bool(0.3) { rng.gen::<f64>() } else { 0.0 }).collect();
            if row.iter().all(|&p| p == 0.0) {
                row[rng.gen_range(0..states)] = 1.0;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            by_action.push(row);
            rewards.push(rng.gen_range(-1.0..4.0));
        }
        dense.push(by_action);
    }
    (Kernel::from_dense(&dense).unwrap(), RewardTable::new(actions, rewards).unwrap())
}

/// Howard policy iteration with exact evaluation by Gaussian elimination.
/// Returns the optimal values.
pub fn policy_iteration(kernel: &Kernel, rewards: &RewardTable, omega: f64) -> Vec<f64> {
    let n = kernel.num_states();
    let m = kernel.num_actions();
    let mut policy = vec![0usize; n];
    loop {
        let v = evaluate(kernel, rewards, omega, &policy);
        let mut changed = false;
        for s in 0..n {
            let q = |a: usize| rewards.get(s, a) + omega * kernel.row(s, a).iter().map(|&(j, p)| p * v[j as usize]).sum::<f64>();
            let current = q(policy[s]);
            for a in 0..m {
                if q(a) > current + 1e-12 {
                    policy[s] = a;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return v;
        }
    }
}

/// Solves (I − ωP_d)v = r_d by partial-pivot Gaussian elimination.
pub fn evaluate(kernel: &Kernel, rewards: &RewardTable, omega: f64, policy: &[usize]) -> Vec<f64> {
    let n = kernel.num_states();
    let mut a = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        a[s][s] = 1.0;
        for &(j, p) in kernel.row(s, policy[s]) {
            a[s][j as usize] -= omega * p;
        }
        a[s][n] = rewards.get(s, policy[s]);
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
    }
    (0..n).map(|s| a[s][n] / a[s][s]).collect()
}

/// Every labeled (serving, neighbors) view with loads summing to `n` and a
/// loaded serving BS, neighbors in arbitrary order.
pub fn raw_views(l: usize, k: usize, n: u32) -> Vec<SystemState> {
    fn loads(l: usize, n: u32) -> Vec<Vec<u32>> {
        if l == 1 {
            return vec![vec![n]];
        }
        (0..=n)
            .flat_map(|first| {
                loads(l - 1, n - first).into_iter().map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
            })
            .collect()
    }
    let mut out = Vec::new();
    for ld in loads(l, n).into_iter().filter(|ld| ld[0] >= 1) {
        for chans in combos(k, l) {
            let conn = |i: usize| Connection { channel: ChannelState(chans[i] as u8), load: ld[i] };
            out.push(SystemState { serving: conn(0), neighbors: (1..l).map(conn).collect() });
        }
    }
    out
}

/// Sorts the neighbors of a raw view into descending (channel, load) order.
pub fn canonical_view(raw: &SystemState) -> SystemState {
    view(raw.serving, raw.neighbors.clone())
}
