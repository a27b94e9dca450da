//! Symmetry-reduced joint state space.
//!
//! A state is the tagged UE's serving connection plus the multiset of its L−1
//! neighbor connections. Each connection is a (channel state, load) pair.
//! Loads count every UE attached to the BS, so the serving load includes the
//! tagged UE itself and is always at least 1, and all L loads sum to N.
//!
//! Neighbors are kept sorted in descending (channel, load) order, which makes
//! each permutation class of neighbors a single state. The serving connection
//! is never permuted with the neighbors.

use std::collections::HashMap;
use std::io::Write;

use crate::channel::ChannelState;
use crate::error::{invalid, Error, Result};

/// Default upper bound on the number of enumerated states.
pub const DEFAULT_STATE_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Connection {
    pub channel: ChannelState,
    /// UEs attached to this BS, including the tagged UE when it is the serving BS.
    pub load: u32,
}

impl Connection {
    pub fn new(channel: u8, load: u32) -> Self {
        Connection { channel: ChannelState(channel), load }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub serving: Connection,
    /// Canonical (descending) order.
    pub neighbors: Vec<Connection>,
}

impl SystemState {
    pub fn num_bss(&self) -> usize {
        self.neighbors.len() + 1
    }

    pub fn total_load(&self) -> u32 {
        self.serving.load + self.neighbors.iter().map(|c| c.load).sum::<u32>()
    }

    /// Connection at action position `a`: 0 is the serving BS, `a ≥ 1` is neighbor `a − 1`.
    #[inline]
    pub fn connection(&self, a: usize) -> Connection {
        if a == 0 {
            self.serving
        } else {
            self.neighbors[a - 1]
        }
    }

    /// Load of the BS at position `a` excluding the tagged UE.
    #[inline]
    pub fn load_excluding_self(&self, a: usize) -> u32 {
        if a == 0 {
            self.serving.load - 1
        } else {
            self.neighbors[a - 1].load
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.neighbors.windows(2).all(|w| w[0] >= w[1])
    }

    /// Loads in position order (serving first).
    pub fn loads(&self) -> Vec<u32> {
        std::iter::once(self.serving.load).chain(self.neighbors.iter().map(|c| c.load)).collect()
    }

    pub fn occupancy(&self) -> OccupancyState {
        OccupancyState::from_loads(&self.loads())
    }
}

/// Channel-free view of a state: the multiset of L cell loads.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupancyState {
    loads: Vec<u32>,
}

impl OccupancyState {
    pub fn from_loads(loads: &[u32]) -> Self {
        let mut loads = loads.to_vec();
        loads.sort_unstable_by(|a, b| b.cmp(a));
        OccupancyState { loads }
    }

    pub fn loads(&self) -> &[u32] {
        &self.loads
    }

    pub fn total(&self) -> u32 {
        self.loads.iter().sum()
    }
}

/// Sorts neighbors into canonical order after checking the load constraints.
pub fn canonicalize(
    serving: Connection,
    mut neighbors: Vec<Connection>,
    total_ues: u32,
) -> Result<SystemState> {
    if serving.load < 1 {
        return Err(invalid("serving BS load must include the tagged UE"));
    }
    let sum = serving.load + neighbors.iter().map(|c| c.load).sum::<u32>();
    if sum != total_ues {
        return Err(invalid(format!("loads sum to {sum}, expected {total_ues}")));
    }
    neighbors.sort_unstable_by(|a, b| b.cmp(a));
    Ok(SystemState { serving, neighbors })
}

/// Canonical order of labeled neighbors: `order[p]` is the input index placed at position `p`.
///
/// The sort is stable, so equal neighbors keep their input order.
pub fn canonical_order(neighbors: &[Connection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by(|&a, &b| neighbors[b].cmp(&neighbors[a]));
    order
}

/// All canonical states for (L, K, N), indexed.
#[derive(Clone, Debug)]
pub struct StateSpace {
    l: usize,
    k: usize,
    n: u32,
    states: Vec<SystemState>,
    lookup: HashMap<u64, usize>,
}

impl StateSpace {
    pub fn enumerate(l: usize, k: usize, n: u32) -> Result<Self> {
        Self::enumerate_with_cap(l, k, n, DEFAULT_STATE_CAP)
    }

    pub fn enumerate_with_cap(l: usize, k: usize, n: u32, cap: u64) -> Result<Self> {
        if l < 1 || k < 1 || n < 1 {
            return Err(invalid("L, K and N must all be at least 1"));
        }
        if k > u8::MAX as usize {
            return Err(invalid("at most 255 channel states supported"));
        }
        if l > u8::MAX as usize {
            return Err(invalid("at most 255 base stations supported"));
        }
        let base = (k as u64) * (n as u64 + 1);
        if base.checked_pow(l as u32).is_none() {
            return Err(Error::Overflow(format!("state key for L={l}, K={k}, N={n} exceeds 64 bits")));
        }
        let mut space = StateSpace { l, k, n, states: Vec::new(), lookup: HashMap::new() };
        let mut neighbors = Vec::with_capacity(l - 1);
        for c in 0..k {
            for load in 1..=n {
                let serving = Connection::new(c as u8, load);
                space.extend_neighbors(serving, &mut neighbors, n - load, None, cap)?;
            }
        }
        Ok(space)
    }

    /// Depth-first generation of non-increasing neighbor lists using exactly `budget` load.
    fn extend_neighbors(
        &mut self,
        serving: Connection,
        prefix: &mut Vec<Connection>,
        budget: u32,
        bound: Option<Connection>,
        cap: u64,
    ) -> Result<()> {
        if prefix.len() == self.l - 1 {
            if budget == 0 {
                if self.states.len() as u64 >= cap {
                    return Err(Error::CapExceeded { size: self.states.len() as u64 + 1, cap });
                }
                let state = SystemState { serving, neighbors: prefix.clone() };
                self.lookup.insert(self.key(&state.serving, &state.neighbors), self.states.len());
                self.states.push(state);
            }
            return Ok(());
        }
        for c in (0..self.k).rev() {
            for load in (0..=budget).rev() {
                let conn = Connection::new(c as u8, load);
                if bound.is_some_and(|b| conn > b) {
                    continue;
                }
                prefix.push(conn);
                self.extend_neighbors(serving, prefix, budget - load, Some(conn), cap)?;
                prefix.pop();
            }
        }
        Ok(())
    }

    #[inline]
    fn key(&self, serving: &Connection, neighbors: &[Connection]) -> u64 {
        let stride = self.n as u64 + 1;
        let base = self.k as u64 * stride;
        let code = |c: &Connection| c.channel.0 as u64 * stride + c.load as u64;
        neighbors.iter().fold(code(serving), |acc, c| acc * base + code(c))
    }

    pub fn num_bss(&self) -> usize {
        self.l
    }

    pub fn num_channel_states(&self) -> usize {
        self.k
    }

    pub fn num_ues(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn state_of(&self, index: usize) -> &SystemState {
        &self.states[index]
    }

    /// Index of a canonical state; `None` for non-canonical or foreign states.
    pub fn index_of(&self, state: &SystemState) -> Option<usize> {
        self.locate(&state.serving, &state.neighbors)
    }

    /// Like [`index_of`](Self::index_of) without building a `SystemState`.
    /// `neighbors` must already be in canonical order.
    pub fn locate(&self, serving: &Connection, neighbors: &[Connection]) -> Option<usize> {
        if neighbors.len() + 1 != self.l
            || serving.channel.index() >= self.k
            || serving.load > self.n
            || neighbors.iter().any(|c| c.channel.index() >= self.k || c.load > self.n)
        {
            return None;
        }
        let idx = *self.lookup.get(&self.key(serving, neighbors))?;
        (self.states[idx].serving == *serving && self.states[idx].neighbors == neighbors)
            .then_some(idx)
    }

    /// CSV listing: `index, serving_channel, serving_load, neighbor_i_channel, neighbor_i_load, ...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "index,serving_channel,serving_load")?;
        for i in 1..self.l {
            write!(w, ",neighbor_{i}_channel,neighbor_{i}_load")?;
        }
        writeln!(w)?;
        for (idx, s) in self.states.iter().enumerate() {
            write!(w, "{idx},{},{}", s.serving.channel, s.serving.load)?;
            for c in &s.neighbors {
                write!(w, ",{},{}", c.channel, c.load)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn q(x: i64) -> i64 {
    x.max(0)
}

fn floor_half(x: i64) -> i64 {
    x.div_euclid(2)
}

/// Closed-form occupancy-combination counts c_L(N) for L in 1..=4, as published.
///
/// These are diagnostics only; [`StateSpace::enumerate`] is the authoritative count.
pub fn paper_count_c(l: usize, n: u32) -> Result<u64> {
    let n = n as i64;
    let value = match l {
        1 => n + 1,
        2 => floor_half(n),
        3 => (0..n).map(|i| q(floor_half(n - 1 - i) - i)).sum(),
        4 => {
            let inner: i64 = (0..n).map(|j| q(floor_half(n - 1 - j) - j)).sum();
            (0..n)
                .map(|i| inner - (0..i).map(|k| q(floor_half(n - 2 - i - k) - k)).sum::<i64>())
                .sum()
        }
        _ => return Err(Error::Unsupported(format!("closed form c_L only given for L in 1..=4, got {l}"))),
    };
    Ok(value.max(0) as u64)
}

/// Closed-form load-combination count C_L(N) = c₁(N) + Σ_{i<N} Σ_{k=2}^{L−1} c_k(N − i).
pub fn paper_count_occupancy(l: usize, n: u32) -> Result<u64> {
    if l == 0 || l > 5 {
        return Err(Error::Unsupported(format!("closed form C_L only defined for L in 1..=5, got {l}")));
    }
    let mut total = paper_count_c(1, n)?;
    for i in 0..n {
        for k in 2..l {
            total = total
                .checked_add(paper_count_c(k, n - i)?)
                .ok_or_else(|| Error::Overflow("C_L(N)".into()))?;
        }
    }
    Ok(total)
}

/// Closed-form total state count K^L · C_L(N).
pub fn paper_count_total(l: usize, k: usize, n: u32) -> Result<u64> {
    let channels = (k as u64)
        .checked_pow(l as u32)
        .ok_or_else(|| Error::Overflow(format!("K^L for K={k}, L={l}")))?;
    channels
        .checked_mul(paper_count_occupancy(l, n)?)
        .ok_or_else(|| Error::Overflow("K^L * C_L(N)".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn c(ch: u8, load: u32) -> Connection {
        Connection::new(ch, load)
    }

    #[test]
    fn canonical_order_sorts_by_channel_first() {
        let s = canonicalize(c(1, 1), vec![c(1, 2), c(2, 0)], 3).unwrap();
        assert_eq!(s.neighbors, vec![c(2, 0), c(1, 2)]);
        let same = canonicalize(c(0, 1), vec![c(2, 1), c(2, 1)], 3).unwrap();
        assert_eq!(same.neighbors, vec![c(2, 1), c(2, 1)]);
    }

    #[test]
    fn canonicalize_rejects_bad_loads() {
        assert!(canonicalize(c(1, 0), vec![c(1, 2)], 2).is_err());
        assert!(canonicalize(c(1, 1), vec![c(1, 2)], 2).is_err());
    }

    fn permutations(items: &[Connection]) -> Vec<Vec<Connection>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn all_permutations_share_one_canonical_form() {
        let neighbors = vec![c(1, 2), c(2, 0), c(1, 0), c(2, 1)];
        let serving = c(0, 2);
        let forms: HashSet<SystemState> = permutations(&neighbors)
            .into_iter()
            .map(|p| canonicalize(serving, p, 5).unwrap())
            .collect();
        assert_eq!(forms.len(), 1);
        let only = forms.into_iter().next().unwrap();
        assert_eq!(canonicalize(only.serving, only.neighbors.clone(), 5).unwrap(), only);
    }

    #[test]
    fn canonical_order_is_stable_on_ties() {
        let order = canonical_order(&[c(1, 1), c(2, 0), c(1, 1)]);
        assert_eq!(order, vec![1, 0, 2]);
    }

    #[test]
    fn tiny_spaces() {
        assert_eq!(StateSpace::enumerate(1, 1, 1).unwrap().len(), 1);
        let s = StateSpace::enumerate(2, 1, 2).unwrap();
        let loads: HashSet<(u32, u32)> =
            s.states().iter().map(|st| (st.serving.load, st.neighbors[0].load)).collect();
        assert_eq!(loads, HashSet::from([(1, 1), (2, 0)]));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn index_round_trip() {
        let s = StateSpace::enumerate(3, 3, 4).unwrap();
        for i in 0..s.len() {
            assert_eq!(s.index_of(s.state_of(i)), Some(i));
            assert!(s.state_of(i).is_canonical());
        }
        let noncanonical = SystemState { serving: c(1, 1), neighbors: vec![c(0, 1), c(2, 2)] };
        assert_eq!(s.index_of(&noncanonical), None);
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            StateSpace::enumerate_with_cap(3, 3, 3, 10),
            Err(Error::CapExceeded { cap: 10, .. })
        ));
    }

    #[test]
    fn published_counts_small_values() {
        assert_eq!(paper_count_c(1, 5).unwrap(), 6);
        assert_eq!(paper_count_c(2, 4).unwrap(), 2);
        // c₃(5): i = 0 gives ⌊4/2⌋ − 0 = 2, i = 1 gives ⌊3/2⌋ − 1 = 0, the rest are clipped to 0.
        assert_eq!(paper_count_c(3, 5).unwrap(), 2);
        assert!(matches!(paper_count_c(5, 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn published_totals() {
        for n in 1..8 {
            assert_eq!(paper_count_total(1, 1, n).unwrap(), n as u64 + 1);
        }
        // C₃(3) = c₁(3) + c₂(3) + c₂(2) + c₂(1) = 4 + 1 + 1 + 0 = 6.
        assert_eq!(paper_count_occupancy(3, 3).unwrap(), 6);
        assert_eq!(paper_count_total(3, 3, 3).unwrap(), 162);
        assert!(matches!(paper_count_total(40, 255, 3), Err(Error::Overflow(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let s = StateSpace::enumerate(2, 1, 2).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,serving_channel,serving_load,neighbor_1_channel,neighbor_1_load"));
        assert_eq!(lines.count(), 2);
    }
}
