//! Finite discounted MDP: sparse kernel, rewards, value iteration and exact
//! policy evaluation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::channel::RateTable;
use crate::error::{invalid, Error, Result};
use crate::state_space::SystemState;

/// Tolerance on Σ_j p(j | s, a) = 1.
pub const KERNEL_ROW_TOLERANCE: f64 = 1e-9;

/// Sparse transition kernel, one row per (state, action).
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    num_states: usize,
    num_actions: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl Kernel {
    /// `rows[s * num_actions + a]` lists `(destination, probability)` pairs.
    pub fn new(num_states: usize, num_actions: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("kernel needs at least one state and one action"));
        }
        if rows.len() != num_states * num_actions {
            return Err(invalid(format!(
                "kernel has {} rows, expected {}",
                rows.len(),
                num_states * num_actions
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(dest, p) in row {
                if dest as usize >= num_states {
                    return Err(invalid(format!("row {r} points to state {dest} out of range")));
                }
                if !(p >= 0.0) {
                    return Err(invalid(format!("row {r} has negative probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > KERNEL_ROW_TOLERANCE {
                return Err(invalid(format!(
                    "row (state {}, action {}) sums to {sum}",
                    r / num_actions,
                    r % num_actions
                )));
            }
        }
        Ok(Kernel { num_states, num_actions, rows })
    }

    /// Kernel from a dense `[state][action][dest]` array, dropping zeros.
    pub fn from_dense(dense: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = dense.len();
        let num_actions = dense.first().map_or(0, Vec::len);
        let rows = dense
            .iter()
            .flat_map(|by_action| {
                by_action.iter().map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, p)| **p != 0.0)
                        .map(|(j, p)| (j as u32, *p))
                        .collect()
                })
            })
            .collect();
        Kernel::new(num_states, num_actions, rows)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[(u32, f64)] {
        &self.rows[state * self.num_actions + action]
    }
}

/// Expected immediate reward r(s, a).
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if num_actions == 0 || values.len() % num_actions != 0 {
            return Err(invalid("reward table length must be a multiple of the action count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rewards must be finite"));
        }
        Ok(RewardTable { num_actions, values })
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn scaled(&self, factor: f64) -> RewardTable {
        RewardTable { num_actions: self.num_actions, values: self.values.iter().map(|v| v * factor).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// One action per state. Actions are 0-based positions: 0 keeps the serving BS,
/// `a ≥ 1` moves to canonical neighbor `a − 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    actions: Vec<u8>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<u8>) -> Self {
        DeterministicPolicy { actions }
    }

    pub fn constant(num_states: usize, action: u8) -> Self {
        DeterministicPolicy { actions: vec![action; num_states] }
    }

    #[inline]
    pub fn action(&self, state: usize) -> usize {
        self.actions[state] as usize
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[u8] {
        &self.actions
    }

    /// Number of states where the two policies disagree.
    pub fn differences(&self, other: &DeterministicPolicy) -> usize {
        self.actions.iter().zip(&other.actions).filter(|(a, b)| a != b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    /// Discount factor ω in (0, 1).
    pub omega: f64,
    /// Target suboptimality ε of the returned policy.
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { omega: 0.9, epsilon: 1e-6, max_sweeps: 10_000 }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(invalid(format!("discount factor {} not in (0, 1)", self.omega)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(invalid("max_sweeps must be positive"));
        }
        Ok(())
    }

    /// Sup-norm change below which value iteration stops, ε(1 − ω)/(2ω).
    pub fn stopping_threshold(&self) -> f64 {
        self.epsilon * (1.0 - self.omega) / (2.0 * self.omega)
    }
}

#[derive(Clone, Debug)]
pub struct ViaOutcome {
    pub values: ValueFunction,
    pub policy: DeterministicPolicy,
    pub sweeps: usize,
    /// False when `max_sweeps` ran out before the stopping rule fired.
    pub converged: bool,
    /// ‖v^{n+1} − v^n‖∞ for every sweep.
    pub deltas: Vec<f64>,
}

/// Per-transition reward (1 − c)·R_{s_j}/(U_a + 1).
///
/// `U_a` is the load of BS `a` in `from`, excluding the tagged UE; the `+1`
/// accounts for the UE joining (or staying on) that cell. `R_{s_j}` is the rate
/// of the channel to BS `a` in `to`, which has `a` as its serving BS. `c = oh`
/// whenever `a` is not the current serving BS.
pub fn transition_reward(
    from: &SystemState,
    action: usize,
    to: &SystemState,
    rates: &RateTable,
    oh: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&oh) {
        return Err(invalid(format!("handover cost {oh} outside [0, 1]")));
    }
    if action >= from.num_bss() {
        return Err(invalid(format!("action {action} invalid for {} BSs", from.num_bss())));
    }
    Ok(reward_unchecked(from, action, to, rates, oh))
}

#[inline]
pub(crate) fn reward_unchecked(
    from: &SystemState,
    action: usize,
    to: &SystemState,
    rates: &RateTable,
    oh: f64,
) -> f64 {
    let cost = if action == 0 { 0.0 } else { oh };
    (1.0 - cost) * rates.rate(to.serving.channel) / (from.load_excluding_self(action) as f64 + 1.0)
}

/// r(s, a) = Σ_j p(j | s, a)·r_t(s, a, j).
pub fn expected_reward<F>(kernel: &Kernel, per_transition: F) -> RewardTable
where
    F: Fn(usize, usize, usize) -> f64,
{
    let values = (0..kernel.num_states)
        .flat_map(|s| (0..kernel.num_actions).map(move |a| (s, a)))
        .map(|(s, a)| kernel.row(s, a).iter().map(|&(j, p)| p * per_transition(s, a, j as usize)).sum())
        .collect();
    RewardTable { num_actions: kernel.num_actions, values }
}

#[inline]
fn q_value(kernel: &Kernel, rewards: &RewardTable, omega: f64, v: &[f64], s: usize, a: usize) -> f64 {
    let future: f64 = kernel.row(s, a).iter().map(|&(j, p)| p * v[j as usize]).sum();
    rewards.get(s, a) + omega * future
}

/// Best action and value at `s`; ties go to the lowest action index.
#[inline]
fn greedy(kernel: &Kernel, rewards: &RewardTable, omega: f64, v: &[f64], s: usize) -> (u8, f64) {
    let mut best = (0u8, q_value(kernel, rewards, omega, v, s, 0));
    for a in 1..kernel.num_actions {
        let q = q_value(kernel, rewards, omega, v, s, a);
        if q > best.1 {
            best = (a as u8, q);
        }
    }
    best
}

fn check_shapes(kernel: &Kernel, rewards: &RewardTable) -> Result<()> {
    if rewards.num_actions != kernel.num_actions || rewards.values.len() != kernel.rows.len() {
        return Err(invalid("reward table does not match kernel dimensions"));
    }
    Ok(())
}

/// Jacobi value iteration from v⁰ = 0.
///
/// Each sweep computes v^{n+1} = max_a {r + ωPv^n} together with the greedy
/// policy with respect to v^n. Iteration stops once ‖v^{n+1} − v^n‖∞ drops
/// below ε(1 − ω)/(2ω); the policy from that final sweep is returned, which is
/// ε-optimal. States are evaluated in parallel, but every state only reads
/// v^n, so the result does not depend on the thread count.
pub fn value_iteration(kernel: &Kernel, rewards: &RewardTable, params: &SolverParams) -> Result<ViaOutcome> {
    params.validate()?;
    check_shapes(kernel, rewards)?;
    let threshold = params.stopping_threshold();
    let mut v = vec![0.0; kernel.num_states];
    let mut deltas = Vec::new();
    loop {
        let sweep: Vec<(u8, f64)> = (0..kernel.num_states)
            .into_par_iter()
            .map(|s| greedy(kernel, rewards, params.omega, &v, s))
            .collect();
        let delta = sweep.iter().zip(&v).map(|((_, q), old)| (q - old).abs()).fold(0.0, f64::max);
        deltas.push(delta);
        let converged = delta < threshold;
        if converged || deltas.len() >= params.max_sweeps {
            let (actions, values): (Vec<u8>, Vec<f64>) = sweep.into_iter().unzip();
            return Ok(ViaOutcome {
                values: ValueFunction(values),
                policy: DeterministicPolicy::new(actions),
                sweeps: deltas.len(),
                converged,
                deltas,
            });
        }
        v = sweep.into_iter().map(|(_, q)| q).collect();
    }
}

/// Greedy policy with respect to `values` (lowest index on ties).
pub fn greedy_policy(kernel: &Kernel, rewards: &RewardTable, omega: f64, values: &ValueFunction) -> DeterministicPolicy {
    DeterministicPolicy::new(
        (0..kernel.num_states).map(|s| greedy(kernel, rewards, omega, &values.0, s).0).collect(),
    )
}

/// Solves (I − ωP_d)v = r_d with a dense LU factorization.
pub fn policy_evaluation_exact(
    policy: &DeterministicPolicy,
    kernel: &Kernel,
    rewards: &RewardTable,
    omega: f64,
) -> Result<ValueFunction> {
    check_shapes(kernel, rewards)?;
    if policy.len() != kernel.num_states {
        return Err(invalid("policy does not cover the kernel's states"));
    }
    if policy.actions.iter().any(|&a| a as usize >= kernel.num_actions) {
        return Err(invalid("policy uses an action outside the kernel's action set"));
    }
    let n = kernel.num_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let act = policy.action(s);
        b[s] = rewards.get(s, act);
        for &(j, p) in kernel.row(s, act) {
            a[(s, j as usize)] -= omega * p;
        }
    }
    let v = a.lu().solve(&b).ok_or_else(|| Error::Degenerate("singular policy-evaluation system".into()))?;
    Ok(ValueFunction(v.iter().copied().collect()))
}

/// Debug dump with columns `state, action, dest, prob, reward`.
/// Actions are written 1-based, reward is the per-transition reward.
pub fn write_kernel_csv<W, F>(mut w: W, kernel: &Kernel, per_transition: F) -> Result<()>
where
    W: Write,
    F: Fn(usize, usize, usize) -> f64,
{
    writeln!(w, "state,action,dest,prob,reward")?;
    for s in 0..kernel.num_states {
        for a in 0..kernel.num_actions {
            for &(j, p) in kernel.row(s, a) {
                writeln!(w, "{s},{},{j},{p},{}", a + 1, per_transition(s, a, j as usize))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::Connection;

    fn state(serving: (u8, u32), neighbors: &[(u8, u32)]) -> SystemState {
        SystemState {
            serving: Connection::new(serving.0, serving.1),
            neighbors: neighbors.iter().map(|&(c, l)| Connection::new(c, l)).collect(),
        }
    }

    #[test]
    fn reward_arithmetic() {
        let rates = RateTable::default();
        // Tagged UE plus two others on the serving LOS cell.
        let from = state((2, 3), &[(1, 0)]);
        let stay_to = state((2, 3), &[(1, 0)]);
        let r = transition_reward(&from, 0, &stay_to, &rates, 0.1).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-12);

        let from = state((1, 1), &[(2, 2)]);
        let move_to = state((2, 3), &[(1, 0)]);
        let r = transition_reward(&from, 1, &move_to, &rates, 0.10).unwrap();
        assert!((r - 1.2).abs() < 1e-12);

        let outage_to = state((0, 3), &[(1, 0)]);
        assert_eq!(transition_reward(&from, 1, &outage_to, &rates, 0.3).unwrap(), 0.0);
        assert!(transition_reward(&from, 1, &move_to, &rates, 1.5).is_err());
    }

    #[test]
    fn expected_reward_examples() {
        let k = Kernel::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let r = expected_reward(&k, |s, _, j| match (s, j) {
            (0, 1) => 3.0,
            (1, 0) => 1.2,
            (1, 1) => 4.0 / 3.0,
            _ => 0.0,
        });
        assert_eq!(r.get(0, 0), 3.0);
        assert!((r.get(1, 0) - 1.266_666_666_666_666_7).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_rows() {
        assert!(Kernel::new(1, 1, vec![vec![(0, 0.9)]]).is_err());
        assert!(Kernel::new(1, 1, vec![vec![(1, 1.0)]]).is_err());
        assert!(Kernel::new(1, 2, vec![vec![(0, 1.0)]]).is_err());
    }

    #[test]
    fn single_state_two_actions() {
        let k = Kernel::new(1, 2, vec![vec![(0, 1.0)], vec![(0, 1.0)]]).unwrap();
        let r = RewardTable::new(2, vec![1.0, 0.0]).unwrap();
        let out = value_iteration(&k, &r, &SolverParams { omega: 0.5, epsilon: 1e-9, max_sweeps: 1000 }).unwrap();
        assert!(out.converged);
        assert!((out.values.0[0] - 2.0).abs() < 1e-8);
        assert_eq!(out.policy.action(0), 0);
    }

    #[test]
    fn deterministic_two_cycle() {
        // 0 → 1 → 0 with rewards (1, 0): v₀ = 1/(1 − ω²), v₁ = ω/(1 − ω²).
        let k = Kernel::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 1.0)]]).unwrap();
        let r = RewardTable::new(1, vec![1.0, 0.0]).unwrap();
        let params = SolverParams { omega: 0.9, epsilon: 1e-10, max_sweeps: 100_000 };
        let out = value_iteration(&k, &r, &params).unwrap();
        let v0 = 1.0 / 0.19;
        let v1 = 0.9 / 0.19;
        assert!((out.values.0[0] - v0).abs() < 1e-9);
        assert!((out.values.0[1] - v1).abs() < 1e-9);
        let exact = policy_evaluation_exact(&out.policy, &k, &r, 0.9).unwrap();
        assert!((exact.0[0] - v0).abs() < 1e-12 && (exact.0[1] - v1).abs() < 1e-12);
    }

    #[test]
    fn exact_evaluation_trivial_cases() {
        let k = Kernel::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let v = policy_evaluation_exact(&DeterministicPolicy::constant(1, 0), &k, &RewardTable::new(1, vec![1.0]).unwrap(), 0.9)
            .unwrap();
        assert!((v.0[0] - 10.0).abs() < 1e-12);
        let v = policy_evaluation_exact(&DeterministicPolicy::constant(1, 0), &k, &RewardTable::new(1, vec![0.0]).unwrap(), 0.9)
            .unwrap();
        assert_eq!(v.0[0], 0.0);
    }

    #[test]
    fn max_sweeps_flags_non_convergence() {
        let k = Kernel::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let r = RewardTable::new(1, vec![1.0]).unwrap();
        let out = value_iteration(&k, &r, &SolverParams { omega: 0.99, epsilon: 1e-9, max_sweeps: 5 }).unwrap();
        assert!(!out.converged);
        assert_eq!(out.sweeps, 5);
    }

    #[test]
    fn rejects_bad_params() {
        let k = Kernel::new(1, 1, vec![vec![(0, 1.0)]]).unwrap();
        let r = RewardTable::new(1, vec![1.0]).unwrap();
        for omega in [0.0, 1.0, 1.5] {
            assert!(value_iteration(&k, &r, &SolverParams { omega, ..Default::default() }).is_err());
        }
    }

    #[test]
    fn kernel_csv_dump() {
        let k = Kernel::new(1, 2, vec![vec![(0, 1.0)], vec![(0, 1.0)]]).unwrap();
        let mut out = Vec::new();
        write_kernel_csv(&mut out, &k, |_, a, _| a as f64).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "state,action,dest,prob,reward\n0,1,0,1,0\n0,2,0,1,1\n");
    }
}
