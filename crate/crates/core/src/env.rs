//! Environment randomness: per-slot UE activity, Rayleigh fading and
//! random-walk mobility, plus exact enumeration of the activity sample space.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::scenario::{Position, Scenario};

/// Largest UE count for which the 2^N sample space may be enumerated.
pub const MAX_ENUMERATION_UES: usize = 20;

/// Distances below this are clamped so the power law stays finite.
pub const DISTANCE_FLOOR_M: f64 = 1.0;

pub const DEFAULT_MOBILITY_STEP_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityState {
    pub active: Vec<bool>,
}

impl ActivityState {
    pub fn all_active(n: usize) -> Self {
        Self { active: vec![true; n] }
    }

    /// State whose bit `i` of `mask` gives the activity of UE `i`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self { active: (0..n).map(|i| mask >> i & 1 == 1).collect() }
    }

    pub fn is_active(&self, ue: usize) -> bool {
        self.active[ue]
    }

    pub fn count_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

/// Channel gains `h[n][m]` between every UE and AP for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub gain: Vec<Vec<f64>>,
}

impl ChannelRealization {
    pub fn get(&self, ue: usize, ap: usize) -> f64 {
        self.gain[ue][ap]
    }
}

/// Draws each UE's activity independently with its own probability.
pub fn sample_activity(scenario: &Scenario, stream: &RngStream, iteration: u64) -> ActivityState {
    let active = scenario
        .ues
        .iter()
        .enumerate()
        .map(|(n, ue)| {
            let mut rng = stream.fork(n as u64, iteration, Purpose::Activity);
            rng.random::<f64>() < ue.active_prob
        })
        .collect();
    ActivityState { active }
}

/// Probability of one activity realization under independent Bernoulli activity.
pub fn joint_probability(scenario: &Scenario, state: &ActivityState) -> f64 {
    scenario
        .ues
        .iter()
        .zip(&state.active)
        .map(|(ue, &on)| if on { ue.active_prob } else { 1.0 - ue.active_prob })
        .product()
}

/// Iterator over all `2^N` activity states with their probabilities.
#[derive(Debug, Clone)]
pub struct SampleSpace {
    probs: Vec<f64>,
    next: u64,
    end: u64,
}

impl Iterator for SampleSpace {
    type Item = (ActivityState, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let mask = self.next;
        self.next += 1;
        let n = self.probs.len();
        let p = (0..n)
            .map(|i| if mask >> i & 1 == 1 { self.probs[i] } else { 1.0 - self.probs[i] })
            .product();
        Some((ActivityState::from_mask(mask, n), p))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SampleSpace {}

pub fn enumerate_sample_space(scenario: &Scenario) -> Result<SampleSpace> {
    let n = scenario.num_ues();
    if n > MAX_ENUMERATION_UES {
        return Err(Error::Capacity { requested: n, bound: MAX_ENUMERATION_UES });
    }
    Ok(SampleSpace {
        probs: scenario.ues.iter().map(|u| u.active_prob).collect(),
        next: 0,
        end: 1u64 << n,
    })
}

/// Path-loss gain `d^-theta` with the distance floor applied.
pub fn path_gain(distance: f64, path_loss_exponent: f64) -> f64 {
    distance.max(DISTANCE_FLOOR_M).powf(-path_loss_exponent)
}

/// Channel gains for the given UE positions, faded when the scenario enables
/// Rayleigh fading.
pub fn realize_channel(
    scenario: &Scenario,
    positions: &[Position],
    stream: &RngStream,
    iteration: u64,
) -> ChannelRealization {
    if scenario.physics.rayleigh_enabled {
        faded_channel(scenario, positions, stream, iteration)
    } else {
        path_loss_channel(scenario, positions)
    }
}

/// Path loss times a unit-mean exponential power factor per link.
pub fn faded_channel(
    scenario: &Scenario,
    positions: &[Position],
    stream: &RngStream,
    iteration: u64,
) -> ChannelRealization {
    let mut channel = path_loss_channel(scenario, positions);
    for (n, row) in channel.gain.iter_mut().enumerate() {
        let mut rng = stream.fork(n as u64, iteration, Purpose::Fading);
        for h in row.iter_mut() {
            let fade: f64 = Exp1.sample(&mut rng);
            // An exact zero draw would make the link unusable.
            *h *= fade.max(f64::MIN_POSITIVE);
        }
    }
    channel
}

/// Deterministic path-loss gains for the given UE positions.
pub fn path_loss_channel(scenario: &Scenario, positions: &[Position]) -> ChannelRealization {
    let theta = scenario.physics.path_loss_exponent;
    let gain = positions
        .iter()
        .map(|pos| scenario.aps.iter().map(|ap| path_gain(pos.distance(&ap.position), theta)).collect())
        .collect();
    ChannelRealization { gain }
}

/// Fading-free gains at the scenario's own UE positions.
pub fn static_channel(scenario: &Scenario) -> ChannelRealization {
    path_loss_channel(scenario, &scenario.positions())
}

fn reflect(v: f64, side: f64) -> f64 {
    let period = 2.0 * side;
    let mut r = v.rem_euclid(period);
    if r > side {
        r = period - r;
    }
    r
}

/// One random-walk step: uniform offset in a disc of radius `step_m`,
/// reflected back into the square area.
pub fn step_mobility(
    scenario: &Scenario,
    positions: &[Position],
    step_m: f64,
    stream: &RngStream,
    iteration: u64,
) -> Vec<Position> {
    let side = scenario.physics.area_side_m;
    positions
        .iter()
        .enumerate()
        .map(|(n, pos)| {
            let mut rng = stream.fork(n as u64, iteration, Purpose::Mobility);
            let radius = step_m * rng.random::<f64>().sqrt();
            let angle = std::f64::consts::TAU * rng.random::<f64>();
            Position::new(
                reflect(pos.x + radius * angle.cos(), side),
                reflect(pos.y + radius * angle.sin(), side),
            )
        })
        .collect()
}
