//! Multi-agent stochastic learning: every UE runs a linear reward-inaction
//! automaton over its APs (association subgame) and over its edge servers
//! (offloading subgame), rewarded by its normalized observed delay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    faded_channel, path_loss_channel, sample_activity, static_channel, step_mobility, ActivityState,
    DEFAULT_MOBILITY_STEP_M,
};
use crate::error::{Error, Result};
use crate::game::{GameView, InfoMode, NeReport, PayoffKind};
use crate::latency::{DelayModel, Expectation, StrategyProfile};
use crate::real::Real;
use crate::rng::{Purpose, RngStream};
use crate::scenario::Scenario;
use crate::trace::{RunTrace, TraceRow};

/// NE tolerance applied to decoded learning outcomes.
pub const DECODED_NE_TOLERANCE: f64 = 1e-6;

/// Per-UE mixed strategies over APs (`ap_probs`) and edge servers (`es_probs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategyState<T> {
    pub ap_probs: Vec<Vec<T>>,
    pub es_probs: Vec<Vec<T>>,
    pub alpha: T,
    pub beta: T,
    pub iteration: u64,
}

fn check_rate<T: Real>(name: &str, rate: T) -> Result<()> {
    if !(rate > T::zero() && rate < T::one()) {
        return Err(Error::Domain(format!("{name} must lie in (0, 1), got {:?}", rate)));
    }
    Ok(())
}

impl<T: Real> MixedStrategyState<T> {
    /// Every action equally likely.
    pub fn uniform(num_ues: usize, num_aps: usize, num_servers: usize, alpha: T, beta: T) -> Result<Self> {
        check_rate("alpha", alpha)?;
        check_rate("beta", beta)?;
        if num_aps == 0 || num_servers == 0 {
            return Err(Error::Domain("need at least one AP and one ES".into()));
        }
        let row = |len: usize| vec![T::one() / T::of(len as f64); len];
        Ok(Self {
            ap_probs: vec![row(num_aps); num_ues],
            es_probs: vec![row(num_servers); num_ues],
            alpha,
            beta,
            iteration: 0,
        })
    }
}

/// Linear reward-inaction step: the chosen action gains `rate * reward` of
/// the remaining mass, every other entry shrinks by the factor
/// `1 - rate * reward`. Returns the L2 norm of the change.
pub fn lri_update<T: Real>(probs: &mut [T], chosen: usize, reward: T, rate: T) -> Result<T> {
    if !(reward >= T::zero() && reward <= T::one()) {
        return Err(Error::Domain(format!("reward must lie in [0, 1], got {:?}", reward)));
    }
    check_rate("learning rate", rate)?;
    if chosen >= probs.len() {
        return Err(Error::Domain(format!("action {chosen} out of range for {} actions", probs.len())));
    }
    if reward == T::zero() {
        return Ok(T::zero());
    }
    let shrink = T::one() - rate * reward;
    let mut others = T::zero();
    let mut sq = T::zero();
    for (i, p) in probs.iter_mut().enumerate() {
        if i != chosen {
            let next = *p * shrink;
            sq = sq + (next - *p) * (next - *p);
            *p = next;
            others = others + next;
        }
    }
    let next = (T::one() - others).max(T::zero());
    sq = sq + (next - probs[chosen]) * (next - probs[chosen]);
    probs[chosen] = next;
    Ok(sq.sqrt())
}

/// Samples an action index from a probability row.
pub fn sample_action<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just short of u.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Per-row argmax; ties go to the lowest index.
pub fn decode(rows: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0
        })
        .collect()
}

/// How the per-UE reward bounds are built. Both are fixed before learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    /// Every UE piled on its own worst resource: `sum_n' max_r T_n'r`. A hard
    /// upper bound, so rewards are rarely clamped but sit close to 1.
    PileUp,
    /// UE n's expected delay under the initial profile, where every UE plays
    /// uniformly. Outcomes worse than the starting point earn no reward.
    #[default]
    InitialExpected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizers {
    pub access_bound: Vec<f64>,
    pub compute_bound: Vec<f64>,
}

impl RewardNormalizers {
    /// Bounds from the fading-free channel at the initial UE positions.
    pub fn new(scenario: &Scenario, kind: NormalizerKind, scale: f64) -> Result<Self> {
        let model = DelayModel::new(scenario, &static_channel(scenario))?;
        Ok(Self::from_model(&model, kind, scale))
    }

    pub fn from_model(model: &DelayModel, kind: NormalizerKind, scale: f64) -> Self {
        let scaled = |v: Vec<f64>| v.into_iter().map(|b| b * scale).collect();
        Self {
            access_bound: scaled(bounds(&model.tx, &model.probs, kind)),
            compute_bound: scaled(bounds(&model.opt_compute, &model.probs, kind)),
        }
    }
}

fn bounds(unit: &[Vec<f64>], probs: &[f64], kind: NormalizerKind) -> Vec<f64> {
    let n = unit.len();
    let r = unit.first().map_or(0, Vec::len);
    match kind {
        NormalizerKind::PileUp => {
            let total: f64 = unit.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum();
            vec![total; n]
        }
        NormalizerKind::InitialExpected => {
            let column: Vec<f64> = (0..r).map(|j| (0..n).map(|i| probs[i] * unit[i][j]).sum::<f64>() / r as f64).collect();
            (0..n)
                .map(|i| (0..r).map(|j| column[j] + (1.0 - probs[i] / r as f64) * unit[i][j]).sum::<f64>() / r as f64)
                .collect()
        }
    }
}

/// Reward `clamp(1 - delay / bound, 0, 1)`.
pub fn normalized_reward(delay: f64, bound: f64) -> f64 {
    (1.0 - delay / bound).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMonitor {
    pub threshold: f64,
    pub max_iter: u64,
    pub last_norms: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(threshold: f64, max_iter: u64, num_ues: usize) -> Self {
        Self { threshold, max_iter, last_norms: vec![0.0; num_ues] }
    }

    /// Records one iteration's per-UE change norms; true once every UE moved
    /// less than the threshold.
    pub fn observe(&mut self, norms: Vec<f64>) -> bool {
        self.last_norms = norms;
        self.max_norm() < self.threshold
    }

    pub fn max_norm(&self) -> f64 {
        self.last_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// What a UE observes as its delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Expected delay of the sampled profile given that the UE is active.
    #[default]
    Conditional,
    /// Load of the chosen resource in this slot's activity realization.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaslConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub max_iter: u64,
    pub delay_mode: DelayMode,
    pub normalizer: NormalizerKind,
    pub normalizer_scale: f64,
    pub fading: bool,
    pub mobility: bool,
    pub mobility_step_m: f64,
    pub seed: u64,
}

impl Default for MaslConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            delta: 1e-3,
            max_iter: 10_000,
            delay_mode: DelayMode::Conditional,
            normalizer: NormalizerKind::default(),
            normalizer_scale: 1.0,
            fading: false,
            mobility: false,
            mobility_step_m: DEFAULT_MOBILITY_STEP_M,
            seed: 0,
        }
    }
}

impl MaslConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("alpha", self.alpha)?;
        check_rate("beta", self.beta)?;
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be > 0".into()));
        }
        if !(self.normalizer_scale > 0.0) {
            return Err(Error::Config("normalizer_scale must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.mobility_step_m >= 0.0) {
            return Err(Error::Config("mobility_step_m must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgame {
    Access,
    Compute,
}

impl Subgame {
    fn purpose(self) -> Purpose {
        match self {
            Subgame::Access => Purpose::ApAction,
            Subgame::Compute => Purpose::EsAction,
        }
    }
}

/// Delays of all UEs for sampled actions. `unit[n][a]` is UE n's alone-time
/// on resource a; inactive UEs get `NaN` in realized mode.
fn observed_delays(unit: &[Vec<f64>], probs: &[f64], actions: &[usize], mode: DelayMode, w: &ActivityState) -> Vec<f64> {
    let r = unit.first().map_or(0, Vec::len);
    let mut loads = vec![0.0; r];
    match mode {
        DelayMode::Conditional => {
            for (n, &a) in actions.iter().enumerate() {
                loads[a] += probs[n] * unit[n][a];
            }
            actions.iter().enumerate().map(|(n, &a)| loads[a] + (1.0 - probs[n]) * unit[n][a]).collect()
        }
        DelayMode::Realized => {
            for (n, &a) in actions.iter().enumerate() {
                if w.is_active(n) {
                    loads[a] += unit[n][a];
                }
            }
            actions.iter().enumerate().map(|(n, &a)| if w.is_active(n) { loads[a] } else { f64::NAN }).collect()
        }
    }
}

/// Conditional expected delays and system total of a pure action vector.
fn expected_delays(unit: &[Vec<f64>], probs: &[f64], actions: &[usize]) -> (Vec<f64>, f64) {
    let d = observed_delays(unit, probs, actions, DelayMode::Conditional, &ActivityState::all_active(0));
    let total = d.iter().zip(probs).map(|(t, p)| t * p).sum();
    (d, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgameRun {
    pub subgame: Subgame,
    pub probs: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: u64,
    pub trace: RunTrace,
}

impl SubgameRun {
    pub fn decoded(&self) -> Vec<usize> {
        decode(&self.probs)
    }
}

/// Shared learning loop for both subgames.
fn run_subgame(scenario: &Scenario, subgame: Subgame, config: &MaslConfig) -> Result<SubgameRun> {
    config.validate()?;
    let stream = RngStream::new(config.seed);
    let static_model = DelayModel::new(scenario, &static_channel(scenario))?;
    let normalizers = RewardNormalizers::from_model(&static_model, config.normalizer, config.normalizer_scale);
    let (bound, rate, width) = match subgame {
        Subgame::Access => (&normalizers.access_bound, config.alpha, scenario.num_aps()),
        Subgame::Compute => (&normalizers.compute_bound, config.beta, scenario.num_servers()),
    };
    let n = scenario.num_ues();
    let probs_p = static_model.probs.clone();
    let mut probs = vec![vec![1.0 / width as f64; width]; n];
    let mut monitor = ConvergenceMonitor::new(config.delta, config.max_iter, n);
    let mut positions = scenario.positions();
    let time_varying =
        subgame == Subgame::Access && (config.fading || config.mobility || scenario.physics.rayleigh_enabled);
    let mut trace = RunTrace::default();
    let mut converged = false;
    let mut iterations = 0;

    for tau in 0..config.max_iter {
        let w = sample_activity(scenario, &stream, tau);
        let varying_tx;
        let unit: &[Vec<f64>] = match subgame {
            Subgame::Access if time_varying => {
                if config.mobility && tau > 0 {
                    positions = step_mobility(scenario, &positions, config.mobility_step_m, &stream, tau);
                }
                let channel = if config.fading || scenario.physics.rayleigh_enabled {
                    faded_channel(scenario, &positions, &stream, tau)
                } else {
                    path_loss_channel(scenario, &positions)
                };
                varying_tx = DelayModel::new(scenario, &channel)?.tx;
                &varying_tx
            }
            Subgame::Access => &static_model.tx,
            Subgame::Compute => &static_model.opt_compute,
        };
        let actions: Vec<usize> = (0..n)
            .map(|i| sample_action(&probs[i], &mut stream.fork(i as u64, tau, subgame.purpose())))
            .collect();
        let observed = observed_delays(unit, &probs_p, &actions, config.delay_mode, &w);
        let mut norms = vec![0.0; n];
        for i in 0..n {
            if w.is_active(i) {
                let r = normalized_reward(observed[i], bound[i]);
                norms[i] = lri_update(&mut probs[i], actions[i], r, rate)?;
            }
        }
        let (ue_delays, total) = expected_delays(unit, &probs_p, &actions);
        iterations = tau + 1;
        let done = monitor.observe(norms);
        trace.push(TraceRow {
            iteration: tau,
            total_expected_time: total,
            max_strategy_delta: monitor.max_norm(),
            ue_delays,
        });
        if done {
            converged = true;
            break;
        }
    }
    Ok(SubgameRun { subgame, probs, converged, iterations, trace })
}

/// Association subgame (APs).
pub fn run_alg1(scenario: &Scenario, config: &MaslConfig) -> Result<SubgameRun> {
    run_subgame(scenario, Subgame::Access, config)
}

/// Offloading subgame (edge servers, steps fixed at the per-ES optimum).
pub fn run_alg2(scenario: &Scenario, config: &MaslConfig) -> Result<SubgameRun> {
    run_subgame(scenario, Subgame::Compute, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JcacoRun {
    pub state: MixedStrategyState<f64>,
    pub profile: StrategyProfile,
    pub converged: bool,
    pub access_converged: bool,
    pub compute_converged: bool,
    pub iterations: u64,
    /// Expected service time of the decoded profile on the static channel.
    pub objective: f64,
    pub trace: RunTrace,
    pub ne_access: NeReport,
    pub ne_compute: NeReport,
}

impl JcacoRun {
    pub fn is_ne(&self) -> bool {
        self.ne_access.is_ne && self.ne_compute.is_ne
    }
}

/// Runs both subgames, decodes the pure profile and checks it for
/// equilibrium in the stochastic view.
pub fn run_jcaco(scenario: &Scenario, config: &MaslConfig) -> Result<JcacoRun> {
    let access = run_alg1(scenario, config)?;
    let compute = run_alg2(scenario, config)?;
    let profile = StrategyProfile::with_optimal_steps(scenario, access.decoded(), compute.decoded());
    let view = GameView::new(
        scenario,
        &static_channel(scenario),
        InfoMode::Stochastic(Expectation::Conditional),
        PayoffKind::Access,
    )?;
    let objective = view.model.expected_objective(&profile);
    let ne_access = view.is_nash_equilibrium(&profile, DECODED_NE_TOLERANCE);
    let ne_compute = view.with_kind(PayoffKind::Compute).is_nash_equilibrium(&profile, DECODED_NE_TOLERANCE);
    Ok(JcacoRun {
        state: MixedStrategyState {
            ap_probs: access.probs,
            es_probs: compute.probs,
            alpha: config.alpha,
            beta: config.beta,
            iteration: access.iterations.max(compute.iterations),
        },
        profile,
        converged: access.converged && compute.converged,
        access_converged: access.converged,
        compute_converged: compute.converged,
        iterations: access.iterations.max(compute.iterations),
        objective,
        trace: RunTrace::combine(&access.trace, &compute.trace),
        ne_access,
        ne_compute,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Mean of `(P' - P) / rate` per UE and action.
    pub mean: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub samples: u64,
}

/// Monte-Carlo estimate of the expected one-step update direction of a
/// subgame at mixed state `probs`, under conditional-delay rewards.
pub fn estimate_drift(
    scenario: &Scenario,
    subgame: Subgame,
    probs: &[Vec<f64>],
    normalizers: &RewardNormalizers,
    n_samples: u64,
    stream: &RngStream,
) -> Result<DriftEstimate> {
    if n_samples < 2 {
        return Err(Error::Domain("drift estimation needs at least two samples".into()));
    }
    let model = DelayModel::new(scenario, &static_channel(scenario))?;
    let (unit, bound) = match subgame {
        Subgame::Access => (&model.tx, &normalizers.access_bound),
        Subgame::Compute => (&model.opt_compute, &normalizers.compute_bound),
    };
    let n = scenario.num_ues();
    let mut sum: Vec<Vec<f64>> = probs.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut sum_sq = sum.clone();
    for s in 0..n_samples {
        let w = sample_activity(scenario, stream, s);
        let actions: Vec<usize> =
            (0..n).map(|i| sample_action(&probs[i], &mut stream.fork(i as u64, s, Purpose::Drift))).collect();
        let observed = observed_delays(unit, &model.probs, &actions, DelayMode::Conditional, &w);
        for i in 0..n {
            if !w.is_active(i) {
                continue;
            }
            let r = normalized_reward(observed[i], bound[i]);
            for (j, &p) in probs[i].iter().enumerate() {
                let step = r * (if j == actions[i] { 1.0 } else { 0.0 } - p);
                sum[i][j] += step;
                sum_sq[i][j] += step * step;
            }
        }
    }
    let count = n_samples as f64;
    let mean: Vec<Vec<f64>> = sum.iter().map(|r| r.iter().map(|s| s / count).collect()).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            sq.iter()
                .zip(m)
                .map(|(q, mu)| ((q / count - mu * mu).max(0.0) * count / (count - 1.0) / count).sqrt())
                .collect()
        })
        .collect();
    Ok(DriftEstimate { mean, std_err, samples: n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, GenerationConfig};

    #[test]
    fn lri_hand_arithmetic() {
        let mut p = vec![0.5_f64, 0.5];
        lri_update(&mut p, 0, 1.0, 0.1).unwrap();
        assert!((p[0] - 0.55).abs() < 1e-15 && (p[1] - 0.45).abs() < 1e-15);
        let mut q = vec![0.2, 0.3, 0.5];
        assert_eq!(lri_update(&mut q, 2, 0.0, 0.5).unwrap(), 0.0);
        assert_eq!(q, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn lri_rejects_bad_inputs() {
        let mut p = vec![0.5, 0.5];
        assert!(lri_update(&mut p, 0, 1.5, 0.1).is_err());
        assert!(lri_update(&mut p, 0, -0.1, 0.1).is_err());
        assert!(lri_update(&mut p, 0, f64::NAN, 0.1).is_err());
        assert!(lri_update(&mut p, 2, 0.5, 0.1).is_err());
        assert!(lri_update(&mut p, 0, 0.5, 1.0).is_err());
    }

    #[test]
    fn pure_row_absorbs() {
        let mut p = vec![0.0, 1.0, 0.0];
        assert_eq!(lri_update(&mut p, 1, 0.7, 0.9).unwrap(), 0.0);
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_state_and_rates() {
        let s = MixedStrategyState::<f32>::uniform(2, 4, 2, 0.1, 0.2).unwrap();
        assert_eq!(s.ap_probs[1], vec![0.25; 4]);
        assert_eq!(s.es_probs[0], vec![0.5; 2]);
        assert!(MixedStrategyState::<f64>::uniform(2, 4, 2, 0.0, 0.2).is_err());
        assert!(MixedStrategyState::<f64>::uniform(2, 4, 2, 0.1, 1.0).is_err());
    }

    #[test]
    fn decode_ties_to_lowest() {
        assert_eq!(decode(&[vec![0.4, 0.4, 0.2], vec![0.1, 0.9]]), vec![0, 1]);
    }

    #[test]
    fn reward_clamps() {
        assert_eq!(normalized_reward(2.0, 2.0), 0.0);
        assert_eq!(normalized_reward(0.0, 2.0), 1.0);
        assert_eq!(normalized_reward(5.0, 2.0), 0.0);
        assert_eq!(normalized_reward(0.5, 2.0), 0.75);
    }

    #[test]
    fn bound_constructions_by_hand() {
        let unit = vec![vec![1.0, 3.0], vec![2.0, 0.5], vec![4.0, 4.0]];
        let probs = vec![0.5, 1.0, 0.25];
        assert_eq!(bounds(&unit, &probs, NormalizerKind::PileUp), vec![9.0; 3]);
        // Uniform column loads: [3.5, 3.0] / 2 = [1.75, 1.5]. UE 0 adds
        // (1 - 0.25) of its own time: [2.5, 3.75], mean 3.125.
        let b = bounds(&unit, &probs, NormalizerKind::InitialExpected);
        for (got, want) in b.iter().zip([3.125, 2.25, 5.125]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn single_action_converges_immediately() {
        let s = generate_scenario(&GenerationConfig::new(1, 1, 5, 3)).unwrap();
        let run = run_jcaco(&s, &MaslConfig::default()).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations, 1);
        assert!(run.state.ap_probs.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn deterministic_per_seed() {
        let s = generate_scenario(&GenerationConfig::new(3, 3, 8, 4)).unwrap();
        let cfg = MaslConfig { seed: 11, ..MaslConfig::default() };
        assert_eq!(run_jcaco(&s, &cfg).unwrap(), run_jcaco(&s, &cfg).unwrap());
    }
}
