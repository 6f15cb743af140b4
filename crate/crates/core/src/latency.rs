//! Delay formulas: link capacity, transmission and computation times, AP and
//! ES loads (per activity realization and in expectation), generation error
//! and the minimal inference-step count meeting a UE's error threshold.
//!
//! Under proportional-fair sharing every UE attached to a resource finishes
//! when the resource drains, so a UE's delay is the load of the AP (or ES) it
//! uses.

use serde::{Deserialize, Serialize};

use crate::env::{ActivityState, ChannelRealization};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scenario::{EdgeServer, Scenario, UserEquipment};

/// Thermal noise power over `bandwidth_hz`, in watts.
pub fn noise_power_watts<T: Real>(noise_psd_dbm_per_hz: T, bandwidth_hz: T) -> T {
    let ten = T::of(10.0);
    ten.powf((noise_psd_dbm_per_hz - T::of(30.0)) / ten) * bandwidth_hz
}

/// Shannon capacity in bits/s of a link with the given bandwidth, transmit
/// power and channel gain.
pub fn channel_capacity<T: Real>(
    bandwidth_hz: T,
    tx_power_watts: T,
    gain: T,
    noise_psd_dbm_per_hz: T,
) -> Result<T> {
    if !(bandwidth_hz > T::zero() && tx_power_watts > T::zero() && gain > T::zero()) {
        return Err(Error::Domain(format!(
            "capacity needs positive bandwidth, power and gain (got {bandwidth_hz:?}, {tx_power_watts:?}, {gain:?})"
        )));
    }
    let snr = tx_power_watts * gain / noise_power_watts(noise_psd_dbm_per_hz, bandwidth_hz);
    Ok(bandwidth_hz * snr.ln_1p() / T::of(std::f64::consts::LN_2))
}

pub fn transmission_time<T: Real>(data_bits: T, capacity: T) -> Result<T> {
    if !(capacity > T::zero()) {
        return Err(Error::Domain(format!("transmission over zero capacity ({capacity:?})")));
    }
    Ok(data_bits / capacity)
}

/// Average generation error after `steps` denoising steps.
pub fn aec<T: Real>(forward_error_scale: T, fitness: T, steps: T) -> T {
    forward_error_scale * (-(fitness * steps)).exp()
}

/// Smallest step count `>= min_steps` whose generation error does not exceed
/// `threshold`.
pub fn optimal_steps<T: Real>(forward_error_scale: T, fitness: T, threshold: T, min_steps: u32) -> u32 {
    let raw = -(threshold / forward_error_scale).ln() / fitness;
    let mut d = if raw.is_finite() && raw > T::of(min_steps as f64) {
        raw.ceil().to_u32().unwrap_or(u32::MAX)
    } else {
        min_steps
    };
    // The closed form can land one off when the log is within rounding of an integer.
    while aec(forward_error_scale, fitness, T::of(d as f64)) > threshold && d < u32::MAX {
        d += 1;
    }
    while d > min_steps && aec(forward_error_scale, fitness, T::of((d - 1) as f64)) <= threshold {
        d -= 1;
    }
    d
}

pub fn ue_optimal_steps(scenario: &Scenario, ue: &UserEquipment, server: usize) -> u32 {
    let es = &scenario.servers[server];
    optimal_steps(
        es.forward_error_scale,
        ue.fitness[server],
        ue.error_threshold,
        scenario.game.min_inference_steps,
    )
}

/// Time for `server` to run `steps` inference steps on its own.
pub fn compute_time(server: &EdgeServer, steps: u32) -> f64 {
    server.flops_per_step * steps as f64 / server.flops_per_sec
}

pub fn unit_tx_time(scenario: &Scenario, ue: usize, ap: usize, channel: &ChannelRealization) -> Result<f64> {
    let u = &scenario.ues[ue];
    let a = &scenario.aps[ap];
    let capacity = channel_capacity(
        a.bandwidth_hz,
        u.tx_power_watts[ap],
        channel.get(ue, ap),
        scenario.physics.noise_psd_dbm_per_hz,
    )?;
    transmission_time(u.data_size_bits, capacity)
}

/// Pure strategies of every UE: AP, ES and inference steps (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub ap_choice: Vec<usize>,
    pub es_choice: Vec<usize>,
    pub steps: Vec<u32>,
}

impl StrategyProfile {
    /// Profile whose steps are the minimal error-feasible count on each chosen ES.
    pub fn with_optimal_steps(scenario: &Scenario, ap_choice: Vec<usize>, es_choice: Vec<usize>) -> Self {
        let steps = es_choice
            .iter()
            .zip(&scenario.ues)
            .map(|(&k, ue)| ue_optimal_steps(scenario, ue, k))
            .collect();
        Self { ap_choice, es_choice, steps }
    }

    pub fn num_ues(&self) -> usize {
        self.ap_choice.len()
    }

    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        let n = scenario.num_ues();
        if self.ap_choice.len() != n || self.es_choice.len() != n || self.steps.len() != n {
            return Err(Error::Domain(format!("profile does not cover {n} UEs")));
        }
        if let Some(x) = self.ap_choice.iter().find(|&&m| m >= scenario.num_aps()) {
            return Err(Error::Domain(format!("AP index {x} out of range")));
        }
        if let Some(y) = self.es_choice.iter().find(|&&k| k >= scenario.num_servers()) {
            return Err(Error::Domain(format!("ES index {y} out of range")));
        }
        if self.steps.iter().any(|&d| d < scenario.game.min_inference_steps) {
            return Err(Error::Domain("inference steps below the minimum".into()));
        }
        Ok(())
    }
}

/// How an expected per-UE delay treats the UE's own activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Expected delay given that the UE itself is active: own unit time at
    /// weight 1, every other UE weighted by its activity probability.
    #[default]
    Conditional,
    /// Expected load of the chosen resource, own unit time weighted by the
    /// UE's activity probability. This is the form under which the stochastic
    /// games admit the exponential potential.
    Weighted,
}

/// Realized (one activity state) or expected evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Evaluation<'a> {
    Realized(&'a ActivityState),
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub access: Vec<f64>,
    pub compute: Vec<f64>,
    pub total: Vec<f64>,
    pub ap_loads: Vec<f64>,
    pub es_loads: Vec<f64>,
    /// Sum of totals over active UEs (realized) or its expectation (expected).
    pub objective: f64,
}

/// Per-scenario tables of unit transmission times and optimal step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    /// `tx[n][m]`: time for UE n to send its data alone over AP m.
    pub tx: Vec<Vec<f64>>,
    /// `opt_steps[n][k]`: minimal feasible steps for UE n on ES k.
    pub opt_steps: Vec<Vec<u32>>,
    /// `opt_compute[n][k]`: ES k's time to serve UE n alone at its optimal steps.
    pub opt_compute: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    step_time: Vec<f64>,
}

impl DelayModel {
    pub fn new(scenario: &Scenario, channel: &ChannelRealization) -> Result<Self> {
        let (n, m) = (scenario.num_ues(), scenario.num_aps());
        let tx = (0..n)
            .map(|i| (0..m).map(|j| unit_tx_time(scenario, i, j, channel)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let opt_steps: Vec<Vec<u32>> = scenario
            .ues
            .iter()
            .map(|ue| (0..scenario.num_servers()).map(|k| ue_optimal_steps(scenario, ue, k)).collect())
            .collect();
        let opt_compute = opt_steps
            .iter()
            .map(|row| row.iter().zip(&scenario.servers).map(|(&d, es)| compute_time(es, d)).collect())
            .collect();
        Ok(Self {
            tx,
            opt_steps,
            opt_compute,
            probs: scenario.ues.iter().map(|u| u.active_prob).collect(),
            step_time: scenario.servers.iter().map(|es| es.flops_per_step / es.flops_per_sec).collect(),
        })
    }

    pub fn num_ues(&self) -> usize {
        self.tx.len()
    }

    pub fn num_aps(&self) -> usize {
        self.tx.first().map_or(0, Vec::len)
    }

    pub fn num_servers(&self) -> usize {
        self.step_time.len()
    }

    /// Time for ES `k` to serve a job of `steps` steps alone.
    pub fn unit_compute(&self, k: usize, steps: u32) -> f64 {
        self.step_time[k] * steps as f64
    }

    fn weights<'a>(&'a self, eval: Evaluation<'a>) -> impl Iterator<Item = f64> + 'a {
        (0..self.num_ues()).map(move |n| match eval {
            Evaluation::Realized(w) => {
                if w.is_active(n) {
                    1.0
                } else {
                    0.0
                }
            }
            Evaluation::Expected => self.probs[n],
        })
    }

    pub fn ap_loads(&self, profile: &StrategyProfile, eval: Evaluation<'_>) -> Vec<f64> {
        let mut loads = vec![0.0; self.num_aps()];
        for (n, w) in self.weights(eval).enumerate() {
            if w > 0.0 {
                let m = profile.ap_choice[n];
                loads[m] += w * self.tx[n][m];
            }
        }
        loads
    }

    pub fn es_loads(&self, profile: &StrategyProfile, eval: Evaluation<'_>) -> Vec<f64> {
        let mut loads = vec![0.0; self.num_servers()];
        for (n, w) in self.weights(eval).enumerate() {
            if w > 0.0 {
                let k = profile.es_choice[n];
                loads[k] += w * self.unit_compute(k, profile.steps[n]);
            }
        }
        loads
    }

    /// UE `n`'s expected access delay given expected AP loads.
    pub fn expected_access(&self, profile: &StrategyProfile, ap_loads: &[f64], n: usize, form: Expectation) -> f64 {
        let m = profile.ap_choice[n];
        match form {
            Expectation::Weighted => ap_loads[m],
            Expectation::Conditional => ap_loads[m] + (1.0 - self.probs[n]) * self.tx[n][m],
        }
    }

    pub fn expected_compute(&self, profile: &StrategyProfile, es_loads: &[f64], n: usize, form: Expectation) -> f64 {
        let k = profile.es_choice[n];
        match form {
            Expectation::Weighted => es_loads[k],
            Expectation::Conditional => {
                es_loads[k] + (1.0 - self.probs[n]) * self.unit_compute(k, profile.steps[n])
            }
        }
    }

    /// Per-UE delays and the system objective.
    ///
    /// Realized mode gives inactive UEs zero delay. Expected mode reports each
    /// UE's delay conditioned on it being active, and the objective is the
    /// expectation of the realized objective, `sum_n p_n * total_n`.
    pub fn total_service_time(&self, profile: &StrategyProfile, eval: Evaluation<'_>) -> DelayBreakdown {
        let ap_loads = self.ap_loads(profile, eval);
        let es_loads = self.es_loads(profile, eval);
        let n = self.num_ues();
        let (mut access, mut compute, mut total) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut objective = 0.0;
        for i in 0..n {
            let weight = match eval {
                Evaluation::Realized(w) => {
                    if !w.is_active(i) {
                        continue;
                    }
                    access[i] = ap_loads[profile.ap_choice[i]];
                    compute[i] = es_loads[profile.es_choice[i]];
                    1.0
                }
                Evaluation::Expected => {
                    access[i] = self.expected_access(profile, &ap_loads, i, Expectation::Conditional);
                    compute[i] = self.expected_compute(profile, &es_loads, i, Expectation::Conditional);
                    self.probs[i]
                }
            };
            total[i] = access[i] + compute[i];
            objective += weight * total[i];
        }
        DelayBreakdown { access, compute, total, ap_loads, es_loads, objective }
    }

    /// Expected system objective of a profile.
    pub fn expected_objective(&self, profile: &StrategyProfile) -> f64 {
        self.total_service_time(profile, Evaluation::Expected).objective
    }
}

pub fn realized_ap_loads(
    scenario: &Scenario,
    profile: &StrategyProfile,
    channel: &ChannelRealization,
    activity: &ActivityState,
) -> Result<Vec<f64>> {
    Ok(DelayModel::new(scenario, channel)?.ap_loads(profile, Evaluation::Realized(activity)))
}

pub fn expected_ap_loads(
    scenario: &Scenario,
    profile: &StrategyProfile,
    channel: &ChannelRealization,
) -> Result<Vec<f64>> {
    Ok(DelayModel::new(scenario, channel)?.ap_loads(profile, Evaluation::Expected))
}

/// Realized ES loads; computation does not depend on the channel.
pub fn realized_es_loads(scenario: &Scenario, profile: &StrategyProfile, activity: &ActivityState) -> Vec<f64> {
    es_loads_weighted(scenario, profile, |n| if activity.is_active(n) { 1.0 } else { 0.0 })
}

pub fn expected_es_loads(scenario: &Scenario, profile: &StrategyProfile) -> Vec<f64> {
    es_loads_weighted(scenario, profile, |n| scenario.ues[n].active_prob)
}

fn es_loads_weighted(scenario: &Scenario, profile: &StrategyProfile, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut loads = vec![0.0; scenario.num_servers()];
    for n in 0..scenario.num_ues() {
        let w = weight(n);
        if w > 0.0 {
            let k = profile.es_choice[n];
            loads[k] += w * compute_time(&scenario.servers[k], profile.steps[n]);
        }
    }
    loads
}

pub fn total_service_time(
    scenario: &Scenario,
    profile: &StrategyProfile,
    channel: &ChannelRealization,
    eval: Evaluation<'_>,
) -> Result<DelayBreakdown> {
    Ok(DelayModel::new(scenario, channel)?.total_service_time(profile, eval))
}
