//! K-state Markov model of a single UE–BS link.
//!
//! All links in the system share one [`ChannelMatrix`]. States are ordinals
//! `0..K`; for the default three-state model the order is outage, NLOS, LOS,
//! so a larger ordinal always means a better link.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::rng::sample_index;

/// Rows whose sum is off by more than this are rejected; smaller drift is renormalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Name of the shipped urban preset.
pub const URBAN_NLOS_DOMINANT: &str = "urban-nlos-dominant";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelState(pub u8);

impl ChannelState {
    pub const OUTAGE: ChannelState = ChannelState(0);
    pub const NLOS: ChannelState = ChannelState(1);
    pub const LOS: ChannelState = ChannelState(2);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Row-stochastic K×K transition matrix, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    k: usize,
    p: Vec<f64>,
}

impl ChannelMatrix {
    /// Builds a matrix from rows, validating entries and row sums.
    ///
    /// Rows off unit sum by at most [`ROW_SUM_TOLERANCE`] are renormalized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(invalid("channel matrix has no rows"));
        }
        if k > u8::MAX as usize {
            return Err(invalid(format!("channel matrix has {k} states, at most 255 supported")));
        }
        let mut p = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(invalid(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(invalid(format!("row {i} has entry {x} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(invalid(format!("row {i} sums to {sum}, not 1")));
            }
            p.extend(row.iter().map(|x| x / sum));
        }
        Ok(ChannelMatrix { k, p })
    }

    /// The urban scenario in which NLOS is the dominant link state.
    pub fn urban_nlos_dominant() -> Self {
        ChannelMatrix::from_rows(&[
            vec![0.55, 0.3, 0.15],
            vec![0.01, 0.8, 0.19],
            vec![0.38, 0.40, 0.22],
        ])
        .expect("preset is stochastic")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            URBAN_NLOS_DOMINANT => Some(Self::urban_nlos_dominant()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[URBAN_NLOS_DOMINANT]
    }

    /// Number of channel states K.
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.p[from * self.k + to]
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from * self.k..(from + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|i| self.row(i).to_vec()).collect()
    }

    /// Short stable hash of the exact matrix entries, used to key policy caches.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for x in &self.p {
            h.update(x.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Unique stationary distribution π with πP = π.
    ///
    /// Fails with [`Error::Degenerate`] unless the chain has exactly one closed
    /// communicating class.
    pub fn steady_state(&self) -> Result<Vec<f64>> {
        let k = self.k;
        let closed = self.closed_classes();
        if closed != 1 {
            return Err(Error::Degenerate(format!(
                "chain has {closed} closed classes, stationary distribution is not unique"
            )));
        }
        // (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1.
        let mut a = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] = self.prob(j, i) - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..k {
            a[(k - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(k);
        b[k - 1] = 1.0;
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("singular stationarity system".into()))?;
        let mut pi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        Ok(pi)
    }

    /// ‖πP − π‖∞.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        (0..self.k)
            .map(|j| {
                let flow: f64 = (0..self.k).map(|i| pi[i] * self.prob(i, j)).sum();
                (flow - pi[j]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Mean number of slots spent in `state` per visit, 1/(1 − P[k][k]).
    pub fn holding_time_mean(&self, state: ChannelState) -> Result<f64> {
        let i = self.check_state(state)?;
        let stay = self.prob(i, i);
        if stay >= 1.0 {
            return Err(Error::Degenerate(format!("state {i} is absorbing")));
        }
        Ok(1.0 / (1.0 - stay))
    }

    /// Next link state drawn from row `current`.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        current: ChannelState,
        rng: &mut R,
    ) -> Result<ChannelState> {
        let i = self.check_state(current)?;
        Ok(self.step(i, rng))
    }

    #[inline]
    pub(crate) fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> ChannelState {
        ChannelState(sample_index(self.row(from), rng) as u8)
    }

    fn check_state(&self, state: ChannelState) -> Result<usize> {
        if state.index() >= self.k {
            return Err(invalid(format!("channel state {state} out of range for K = {}", self.k)));
        }
        Ok(state.index())
    }

    /// Number of closed communicating classes of the transition graph.
    fn closed_classes(&self) -> usize {
        let k = self.k;
        let mut reach = vec![false; k * k];
        for i in 0..k {
            reach[i * k + i] = true;
            for j in 0..k {
                if self.prob(i, j) > 0.0 {
                    reach[i * k + j] = true;
                }
            }
        }
        for m in 0..k {
            for i in 0..k {
                if reach[i * k + m] {
                    for j in 0..k {
                        if reach[m * k + j] {
                            reach[i * k + j] = true;
                        }
                    }
                }
            }
        }
        // A state sits in a closed class iff everything it reaches reaches it back.
        let mut seen = vec![false; k];
        let mut count = 0;
        for i in 0..k {
            if seen[i] {
                continue;
            }
            let closed = (0..k).all(|j| !reach[i * k + j] || reach[j * k + i]);
            for j in 0..k {
                if reach[i * k + j] && reach[j * k + i] {
                    seen[j] = true;
                }
            }
            if closed {
                count += 1;
            }
        }
        count
    }
}

/// Spectral efficiency (bits/s/Hz) obtained in each channel state when alone in the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    rates: Vec<f64>,
}

impl RateTable {
    /// Rates indexed by channel state. Outage (state 0) must be 0 and rates
    /// must be nondecreasing in the state ordinal.
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(invalid("rate table is empty"));
        }
        if rates[0] != 0.0 {
            return Err(invalid("outage rate must be 0"));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("rates must be finite and nonnegative"));
        }
        if rates.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("rates must be nondecreasing in channel quality"));
        }
        Ok(RateTable { rates })
    }

    /// Three-state table with the given NLOS and LOS rates.
    pub fn three_state(nlos: f64, los: f64) -> Result<Self> {
        Self::new(vec![0.0, nlos, los])
    }

    pub fn k(&self) -> usize {
        self.rates.len()
    }

    #[inline]
    pub fn rate(&self, state: ChannelState) -> f64 {
        self.rates[state.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }
}

impl Default for RateTable {
    /// 4 bits/s/Hz in LOS, 1 in NLOS.
    fn default() -> Self {
        RateTable { rates: vec![0.0, 1.0, 4.0] }
    }
}

/// Targets for fitting a channel matrix: stationary law and mean holding times (slots).
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTargets {
    pub pi_target: Vec<f64>,
    pub t_avg: Vec<f64>,
}

impl CalibrationTargets {
    pub fn new(pi_target: Vec<f64>, t_avg: Vec<f64>) -> Result<Self> {
        if pi_target.is_empty() || pi_target.len() != t_avg.len() {
            return Err(invalid("pi_target and t_avg must be nonempty and of equal length"));
        }
        if pi_target.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("pi_target entries must lie in [0, 1]"));
        }
        let sum: f64 = pi_target.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(invalid(format!("pi_target sums to {sum}, not 1")));
        }
        if t_avg.iter().any(|t| !(*t >= 1.0) || !t.is_finite()) {
            return Err(invalid("every mean holding time must be finite and >= 1 slot"));
        }
        Ok(CalibrationTargets { pi_target, t_avg })
    }

    /// Diagonal the fit aims for, 1 − 1/t_avg.
    pub fn diagonal_target(&self) -> Vec<f64> {
        self.t_avg.iter().map(|t| 1.0 - 1.0 / t).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub matrix: ChannelMatrix,
    /// Σ_k (P[k][k] − (1 − 1/t_avg[k]))².
    pub objective: f64,
    /// ‖π_target P − π_target‖∞ of the returned matrix.
    pub residual: f64,
}

/// Fits the stochastic matrix closest (in diagonal least squares) to the
/// holding-time targets among all matrices that keep `pi_target` stationary.
///
/// Writing F[i][j] = π_i P[i][j], stationarity plus row-stochasticity say F is
/// a nonnegative matrix with row and column sums both equal to π. The diagonal
/// y_i = P[i][i] is feasible iff the leftover masses r_i = π_i (1 − y_i) satisfy
/// r_i ≤ Σ_{j≠i} r_j, so the fit is the Euclidean projection of the target
/// diagonal onto a box intersected with K half-spaces (solved with Dykstra's
/// algorithm). The off-diagonal flow is then realized exactly by the half-turn
/// construction in [`zero_diagonal_flow`].
pub fn calibrate_matrix(targets: &CalibrationTargets) -> Result<Calibration> {
    let k = targets.pi_target.len();
    if k == 1 {
        let d = targets.diagonal_target()[0];
        return Ok(Calibration {
            matrix: ChannelMatrix { k: 1, p: vec![1.0] },
            objective: (1.0 - d).powi(2),
            residual: 0.0,
        });
    }
    let pi = &targets.pi_target;
    let target = targets.diagonal_target();
    let y = project_diagonal(pi, &target);

    let leftover: Vec<f64> = (0..k).map(|i| pi[i] * (1.0 - y[i])).collect();
    let flow = zero_diagonal_flow(&leftover);
    let mut rows = vec![vec![0.0; k]; k];
    for i in 0..k {
        if pi[i] > 0.0 {
            for j in 0..k {
                rows[i][j] = if i == j { y[i] } else { flow[i][j] / pi[i] };
            }
        } else {
            // Rows of unvisited states never touch stationarity.
            let spread = (1.0 - y[i]) / (k - 1) as f64;
            for j in 0..k {
                rows[i][j] = if i == j { y[i] } else { spread };
            }
        }
        let sum: f64 = rows[i].iter().sum();
        rows[i].iter_mut().for_each(|x| *x = (*x / sum).clamp(0.0, 1.0));
    }
    let matrix = ChannelMatrix::from_rows(&rows)?;
    let residual = matrix.stationarity_residual(pi);
    if residual > ROW_SUM_TOLERANCE {
        return Err(Error::Calibration { residual });
    }
    let objective = (0..k).map(|i| (matrix.prob(i, i) - target[i]).powi(2)).sum();
    Ok(Calibration { matrix, objective, residual })
}

/// Dykstra projection of `target` onto {y ∈ [0,1]^K : 2π_i(1 − y_i) ≤ Σ_j π_j(1 − y_j) ∀i}.
fn project_diagonal(pi: &[f64], target: &[f64]) -> Vec<f64> {
    let k = pi.len();
    // Half-space i as a·y ≤ b with a = π − 2π_i e_i, b = 1 − 2π_i.
    let halfspaces: Vec<(Vec<f64>, f64)> = (0..k)
        .map(|i| {
            let mut a = pi.to_vec();
            a[i] -= 2.0 * pi[i];
            (a, 1.0 - 2.0 * pi[i])
        })
        .collect();
    let mut y = target.to_vec();
    let mut corrections = vec![vec![0.0; k]; k + 1];
    for _ in 0..200_000 {
        let before = y.clone();
        // Box.
        let z: Vec<f64> = (0..k).map(|j| y[j] + corrections[0][j]).collect();
        let proj: Vec<f64> = z.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        corrections[0] = (0..k).map(|j| z[j] - proj[j]).collect();
        y = proj;
        for (h, (a, b)) in halfspaces.iter().enumerate() {
            let z: Vec<f64> = (0..k).map(|j| y[j] + corrections[h + 1][j]).collect();
            let norm2: f64 = a.iter().map(|x| x * x).sum();
            let excess = a.iter().zip(&z).map(|(x, v)| x * v).sum::<f64>() - b;
            let proj: Vec<f64> = if excess > 0.0 && norm2 > 0.0 {
                z.iter().zip(a).map(|(v, x)| v - excess / norm2 * x).collect()
            } else {
                z.clone()
            };
            corrections[h + 1] = (0..k).map(|j| z[j] - proj[j]).collect();
            y = proj;
        }
        let moved = y.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < 1e-15 {
            break;
        }
    }
    y.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Nonnegative zero-diagonal matrix whose row and column sums both equal `mass`.
///
/// Lay the masses end to end on a circle of circumference S = Σ mass and pair
/// every point with the point half a turn away: F[i][j] is the length of
/// interval i that lands on interval j. No interval longer than S/2 exists
/// when the diagonal is feasible, so nothing maps onto itself, and the map is
/// an involution, which makes F symmetric.
pub fn zero_diagonal_flow(mass: &[f64]) -> Vec<Vec<f64>> {
    let k = mass.len();
    let total: f64 = mass.iter().sum();
    let mut flow = vec![vec![0.0; k]; k];
    if total <= 0.0 {
        return flow;
    }
    let half = total / 2.0;
    let mut starts = Vec::with_capacity(k);
    let mut acc = 0.0;
    for m in mass {
        starts.push(acc);
        acc += m;
    }
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    for i in 0..k {
        // Interval i shifted by S/2, split where it wraps.
        let (s, e) = (starts[i] + half, starts[i] + mass[i] + half);
        let pieces = if e <= total {
            vec![(s, e)]
        } else if s >= total {
            vec![(s - total, e - total)]
        } else {
            vec![(s, total), (0.0, e - total)]
        };
        for j in 0..k {
            if i == j {
                continue;
            }
            let (b0, b1) = (starts[j], starts[j] + mass[j]);
            flow[i][j] = pieces.iter().map(|&(a0, a1)| overlap(a0, a1, b0, b1)).sum();
        }
    }
    flow
}
