//! Comparison association schemes.
//!
//! BS indices here are real labels `0..L`. Per-UE schemes see one row of link
//! states plus the loads of the previous slot; the simulator passes loads
//! that exclude the deciding UE itself, so `loads[i] + 1` is the cell size
//! the UE would join.

use rand::Rng;

use crate::channel::{ChannelState, RateTable};
use crate::error::{invalid, Error, Result};

/// Upper limit on L^N for the exhaustive centralized search.
pub const UPPER_BOUND_BUDGET: u64 = 10_000_000;

/// What a centralized controller sees: every UE's link states and the previous loads.
#[derive(Clone, Debug, PartialEq)]
pub struct JointObservation {
    /// `channels[ue][bs]`.
    pub channels: Vec<Vec<ChannelState>>,
    pub loads: Vec<u32>,
}

impl JointObservation {
    pub fn new(channels: Vec<Vec<ChannelState>>, loads: Vec<u32>) -> Result<Self> {
        let l = loads.len();
        if channels.is_empty() || channels.iter().any(|row| row.len() != l) {
            return Err(invalid("every UE needs one link state per BS"));
        }
        if loads.iter().sum::<u32>() as usize != channels.len() {
            return Err(invalid("loads do not sum to the number of UEs"));
        }
        Ok(JointObservation { channels, loads })
    }
}

/// Least-loaded BS, ties broken uniformly at random.
pub fn load_policy<R: Rng + ?Sized>(loads: &[u32], rng: &mut R) -> usize {
    let min = *loads.iter().min().expect("at least one BS");
    let ties: Vec<usize> = (0..loads.len()).filter(|&i| loads[i] == min).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.gen_range(0..ties.len())]
    }
}

/// Best instantaneous share R(channel_i)/(loads_i + 1), ties to the lowest index.
pub fn rate_policy(channels: &[ChannelState], loads: &[u32], rates: &RateTable) -> usize {
    let share = |i: usize| rates.rate(channels[i]) / (loads[i] as f64 + 1.0);
    (1..channels.len()).fold(0, |best, i| if share(i) > share(best) { i } else { best })
}

/// Best link state, ties to the lowest index.
pub fn channel_policy(channels: &[ChannelState]) -> usize {
    (1..channels.len()).fold(0, |best, i| if channels[i] > channels[best] { i } else { best })
}

/// Sum over UEs of (1 − c_k)·R(channel_{k,a_k})/U_{a_k} for a joint assignment,
/// where U counts the UEs the assignment itself puts on each BS.
pub fn assignment_reward(
    channels: &[Vec<ChannelState>],
    assignment: &[usize],
    previous: &[usize],
    rates: &RateTable,
    oh: f64,
) -> f64 {
    let l = channels[0].len();
    let mut counts = vec![0u32; l];
    for &a in assignment {
        counts[a] += 1;
    }
    assignment
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let cost = if a != previous[k] { oh } else { 0.0 };
            (1.0 - cost) * rates.rate(channels[k][a]) / counts[a] as f64
        })
        .sum()
}

/// Centralized exhaustive search over all L^N joint assignments.
///
/// Returns the lexicographically smallest assignment with the largest total
/// slot reward. `charge_oh` controls whether handovers are penalized in the
/// objective.
pub fn upper_bound_assignment(
    obs: &JointObservation,
    rates: &RateTable,
    oh: f64,
    previous: &[usize],
    charge_oh: bool,
) -> Result<Vec<usize>> {
    let n = obs.channels.len();
    let l = obs.loads.len();
    if previous.len() != n || previous.iter().any(|&a| a >= l) {
        return Err(invalid("previous assignment does not match the observation"));
    }
    let size = (l as u64).checked_pow(n as u32).filter(|&s| s <= UPPER_BOUND_BUDGET);
    let Some(size) = size else {
        return Err(Error::CapExceeded { size: (l as f64).powi(n as i32) as u64, cap: UPPER_BOUND_BUDGET });
    };
    let oh = if charge_oh { oh } else { 0.0 };
    let mut current = vec![0usize; n];
    let mut best = current.clone();
    let mut best_value = f64::NEG_INFINITY;
    for _ in 0..size {
        let value = assignment_reward(&obs.channels, &current, previous, rates, oh);
        if value > best_value {
            best_value = value;
            best.copy_from_slice(&current);
        }
        // Odometer, first UE most significant, so candidates come in lexicographic order.
        for digit in current.iter_mut().rev() {
            *digit += 1;
            if *digit < l {
                break;
            }
            *digit = 0;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    const OUT: ChannelState = ChannelState::OUTAGE;
    const NLOS: ChannelState = ChannelState::NLOS;
    const LOS: ChannelState = ChannelState::LOS;

    #[test]
    fn load_examples() {
        let mut rng = stream(0, 0);
        assert_eq!(load_policy(&[0, 2, 1], &mut rng), 0);
        for _ in 0..200 {
            assert!(matches!(load_policy(&[2, 0, 0], &mut rng), 1 | 2));
        }
        let mut counts = [0usize; 3];
        let draws = 30_000;
        for _ in 0..draws {
            counts[load_policy(&[1, 1, 1], &mut rng)] += 1;
        }
        let expected = draws as f64 / 3.0;
        let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 4.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn rate_examples() {
        let rates = RateTable::default();
        for loads in [[0, 0, 0], [5, 0, 0], [2, 1, 3]] {
            assert_eq!(rate_policy(&[LOS, OUT, OUT], &loads, &rates), 0);
        }
        // 4/4 against 2/1.
        let rates_2 = RateTable::three_state(2.0, 4.0).unwrap();
        assert_eq!(rate_policy(&[LOS, NLOS], &[3, 0], &rates_2), 1);
        assert_eq!(rate_policy(&[OUT, OUT], &[1, 0], &rates), 0);
    }

    #[test]
    fn channel_examples() {
        assert_eq!(channel_policy(&[NLOS, LOS, OUT]), 1);
        assert_eq!(channel_policy(&[OUT, OUT, OUT]), 0);
        assert_eq!(channel_policy(&[LOS, LOS, NLOS]), 0);
    }

    #[test]
    fn upper_bound_single_ue_matches_rate() {
        let rates = RateTable::default();
        let obs = JointObservation::new(vec![vec![NLOS, LOS, OUT]], vec![1, 0, 0]).unwrap();
        assert_eq!(upper_bound_assignment(&obs, &rates, 0.0, &[0], true).unwrap(), vec![1]);
        assert_eq!(rate_policy(&obs.channels[0], &[0, 0, 0], &rates), 1);
    }

    #[test]
    fn upper_bound_shares_the_only_good_cell() {
        let rates = RateTable::default();
        let obs = JointObservation::new(vec![vec![LOS, OUT, OUT], vec![LOS, OUT, OUT]], vec![1, 1, 0]).unwrap();
        // Sharing gives 2 + 2; a split gives 4 + 0 and loses the lexicographic tie-break.
        let best = upper_bound_assignment(&obs, &rates, 0.1, &[0, 0], true).unwrap();
        assert_eq!(best, vec![0, 0]);
        let total = assignment_reward(&obs.channels, &best, &[0, 0], &rates, 0.0);
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_budget() {
        let obs = JointObservation::new(vec![vec![LOS; 10]; 8], vec![8, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            upper_bound_assignment(&obs, &RateTable::default(), 0.1, &[0; 8], true),
            Err(Error::CapExceeded { .. })
        ));
    }
}
