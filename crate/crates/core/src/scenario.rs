//! Network instance: access points, edge servers, user equipment and the
//! physical and game constants that parameterize every delay formula.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

/// Bits in one (decimal) megabyte.
pub const BITS_PER_MB: f64 = 8.0e6;

/// Smallest representable change of an activity probability.
pub const PROB_GRANULARITY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPoint {
    pub id: usize,
    pub position: Position,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeServer {
    pub id: usize,
    /// Computation capacity in TeraFLOPs per second.
    pub flops_per_sec: f64,
    /// Cost of one inference step in TeraFLOPs.
    pub flops_per_step: f64,
    /// Scale of the average generation error at zero inference steps.
    pub forward_error_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEquipment {
    pub id: usize,
    pub position: Position,
    pub data_size_bits: f64,
    pub active_prob: f64,
    pub error_threshold: f64,
    /// Per-server attenuation factors; larger means the server's model fits this UE better.
    pub fitness: Vec<f64>,
    /// Per-AP transmit power in watts.
    pub tx_power_watts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConstants {
    pub path_loss_exponent: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub rayleigh_enabled: bool,
    pub area_side_m: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            path_loss_exponent: 4.0,
            noise_psd_dbm_per_hz: -174.0,
            rayleigh_enabled: false,
            area_side_m: 1000.0,
        }
    }
}

/// Constants of the potential games.
///
/// Potential bases are stored as base-2 logarithms: the sign-preserving base
/// for a 1 ms granularity is `2^1000`, which is only barely representable and
/// any finer granularity overflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConstants {
    pub comm_time_granularity: f64,
    pub comp_time_granularity: f64,
    pub comm_potential_log2_base: f64,
    pub comp_potential_log2_base: f64,
    pub min_inference_steps: u32,
}

impl GameConstants {
    /// Granularities with the smallest admissible potential bases.
    pub fn with_granularity(comm: f64, comp: f64) -> Self {
        Self {
            comm_time_granularity: comm,
            comp_time_granularity: comp,
            comm_potential_log2_base: 1.0 / comm,
            comp_potential_log2_base: 1.0 / comp,
            min_inference_steps: 1,
        }
    }
}

impl Default for GameConstants {
    fn default() -> Self {
        Self::with_granularity(1e-3, 1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub aps: Vec<AccessPoint>,
    pub servers: Vec<EdgeServer>,
    pub ues: Vec<UserEquipment>,
    pub physics: PhysicsConstants,
    pub game: GameConstants,
}

/// One failed invariant, located by a dotted path such as `aps[2].bandwidth_hz`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }

    fn positive(&mut self, path: String, name: &str, value: f64) {
        if !(value > 0.0 && value.is_finite()) {
            self.push(path, format!("{name} must be > 0"));
        }
    }
}

impl Scenario {
    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.ues.iter().map(|u| u.position).collect()
    }

    /// Checks every invariant and reports all violations rather than the first.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let side = self.physics.area_side_m;
        let inside = |p: &Position| (0.0..=side).contains(&p.x) && (0.0..=side).contains(&p.y);

        if self.aps.is_empty() {
            r.push("aps", "at least one access point is required");
        }
        if self.servers.is_empty() {
            r.push("servers", "at least one edge server is required");
        }
        if self.ues.is_empty() {
            r.push("ues", "at least one UE is required");
        }

        for (i, ap) in self.aps.iter().enumerate() {
            let at = format!("aps[{i}]");
            if ap.id != i {
                r.push(format!("{at}.id"), format!("id {} does not match index {i}", ap.id));
            }
            r.positive(format!("{at}.bandwidth_hz"), "bandwidth_hz", ap.bandwidth_hz);
            if !inside(&ap.position) {
                r.push(format!("{at}.position"), "position outside the scenario area");
            }
        }

        for (i, es) in self.servers.iter().enumerate() {
            let at = format!("servers[{i}]");
            if es.id != i {
                r.push(format!("{at}.id"), format!("id {} does not match index {i}", es.id));
            }
            r.positive(format!("{at}.flops_per_sec"), "flops_per_sec", es.flops_per_sec);
            r.positive(format!("{at}.flops_per_step"), "flops_per_step", es.flops_per_step);
            r.positive(
                format!("{at}.forward_error_scale"),
                "forward_error_scale",
                es.forward_error_scale,
            );
        }

        let (m, k) = (self.aps.len(), self.servers.len());
        for (i, ue) in self.ues.iter().enumerate() {
            let at = format!("ues[{i}]");
            if ue.id != i {
                r.push(format!("{at}.id"), format!("id {} does not match index {i}", ue.id));
            }
            if !inside(&ue.position) {
                r.push(format!("{at}.position"), "position outside the scenario area");
            }
            r.positive(format!("{at}.data_size_bits"), "data_size_bits", ue.data_size_bits);
            r.positive(format!("{at}.error_threshold"), "error_threshold", ue.error_threshold);
            if !(ue.active_prob > 0.0 && ue.active_prob <= 1.0) {
                r.push(format!("{at}.active_prob"), "active_prob must lie in (0, 1]");
            } else if !is_quantized(ue.active_prob) {
                r.push(
                    format!("{at}.active_prob"),
                    format!("active_prob must be a multiple of {PROB_GRANULARITY}"),
                );
            }
            if ue.fitness.len() != k {
                r.push(
                    format!("{at}.fitness"),
                    format!("fitness length mismatch: {} entries for {k} servers", ue.fitness.len()),
                );
            }
            for (j, g) in ue.fitness.iter().enumerate() {
                r.positive(format!("{at}.fitness[{j}]"), "fitness", *g);
            }
            if ue.tx_power_watts.len() != m {
                r.push(
                    format!("{at}.tx_power_watts"),
                    format!("tx_power length mismatch: {} entries for {m} APs", ue.tx_power_watts.len()),
                );
            }
            for (j, p) in ue.tx_power_watts.iter().enumerate() {
                r.positive(format!("{at}.tx_power_watts[{j}]"), "tx_power_watts", *p);
            }
        }

        let ph = &self.physics;
        r.positive("physics.path_loss_exponent".into(), "path_loss_exponent", ph.path_loss_exponent);
        r.positive("physics.area_side_m".into(), "area_side_m", ph.area_side_m);
        if !ph.noise_psd_dbm_per_hz.is_finite() {
            r.push("physics.noise_psd_dbm_per_hz", "noise_psd_dbm_per_hz must be finite");
        }

        let g = &self.game;
        r.positive("game.comm_time_granularity".into(), "comm_time_granularity", g.comm_time_granularity);
        r.positive("game.comp_time_granularity".into(), "comp_time_granularity", g.comp_time_granularity);
        if g.comm_time_granularity > 0.0 && g.comm_potential_log2_base < 1.0 / g.comm_time_granularity {
            r.push(
                "game.comm_potential_log2_base",
                "potential base must be at least 2^(1/comm_time_granularity)",
            );
        }
        if g.comp_time_granularity > 0.0 && g.comp_potential_log2_base < 1.0 / g.comp_time_granularity {
            r.push(
                "game.comp_potential_log2_base",
                "potential base must be at least 2^(1/comp_time_granularity)",
            );
        }
        if g.min_inference_steps < 1 {
            r.push("game.min_inference_steps", "min_inference_steps must be >= 1");
        }
        r
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Compact JSON with fixed field order; stable across runs and platforms.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("scenario serializes to JSON")
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Reads a TOML scenario file (or canonical JSON when the extension is `.json`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            Self::from_toml_str(&text)
        };
        parsed.map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }
}

pub fn quantize_prob(p: f64) -> f64 {
    let per_unit = (1.0 / PROB_GRANULARITY).round();
    let steps = (p * per_unit).round().max(1.0);
    (steps / per_unit).min(1.0)
}

fn is_quantized(p: f64) -> bool {
    let steps = p / PROB_GRANULARITY;
    (steps - steps.round()).abs() < 1e-6
}

/// Closed interval a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    /// Always consumes exactly one draw, so degenerate ranges keep streams aligned.
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + u * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamRanges {
    pub flops_per_step: Range,
    pub flops_per_sec: Range,
    pub data_size_mb: Range,
    pub bandwidth_hz: Range,
    pub tx_power_watts: Range,
    pub active_prob: Range,
    pub error_threshold: Range,
    pub forward_error_scale: Range,
    pub fitness: Range,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            flops_per_step: Range::new(0.1, 0.5),
            flops_per_sec: Range::new(2.0, 10.0),
            data_size_mb: Range::new(2.0, 10.0),
            bandwidth_hz: Range::new(2e6, 10e6),
            tx_power_watts: Range::point(0.2),
            active_prob: Range::new(0.1, 1.0),
            error_threshold: Range::new(0.01, 0.1),
            forward_error_scale: Range::new(0.5, 1.0),
            fitness: Range::new(0.2, 1.0),
        }
    }
}

impl ParamRanges {
    fn named(&self) -> [(&'static str, Range); 9] {
        [
            ("flops_per_step", self.flops_per_step),
            ("flops_per_sec", self.flops_per_sec),
            ("data_size_mb", self.data_size_mb),
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_watts", self.tx_power_watts),
            ("active_prob", self.active_prob),
            ("error_threshold", self.error_threshold),
            ("forward_error_scale", self.forward_error_scale),
            ("fitness", self.fitness),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub num_aps: usize,
    pub num_servers: usize,
    pub num_ues: usize,
    pub seed: u64,
    pub ranges: ParamRanges,
    pub physics: PhysicsConstants,
    pub game: GameConstants,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            num_aps: 5,
            num_servers: 5,
            num_ues: 30,
            seed: 0,
            ranges: ParamRanges::default(),
            physics: PhysicsConstants::default(),
            game: GameConstants::default(),
        }
    }
}

impl GenerationConfig {
    pub fn new(num_aps: usize, num_servers: usize, num_ues: usize, seed: u64) -> Self {
        Self { num_aps, num_servers, num_ues, seed, ..Self::default() }
    }
}

/// AP centers on a grid with `ceil(sqrt(M))` columns covering the square area.
pub fn grid_positions(count: usize, side: f64) -> Vec<Position> {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let rows = count.div_ceil(cols);
    let (w, h) = (side / cols as f64, side / rows as f64);
    (0..count)
        .map(|i| Position::new((i % cols) as f64 * w + w / 2.0, (i / cols) as f64 * h + h / 2.0))
        .collect()
}

// Entity kinds used as the iteration label of scenario streams, so each UE's
// parameters are independent of how many APs or servers exist.
const AP_STREAM: u64 = 0;
const ES_STREAM: u64 = 1;
const UE_STREAM: u64 = 2;

/// Builds a scenario deterministically from `config`.
pub fn generate_scenario(config: &GenerationConfig) -> Result<Scenario> {
    let (m, k, n) = (config.num_aps, config.num_servers, config.num_ues);
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::Config("num_aps, num_servers and num_ues must all be >= 1".into()));
    }
    for (name, range) in config.ranges.named() {
        if !(range.lo <= range.hi) {
            return Err(Error::Config(format!(
                "ranges.{name} is inverted: lo {} > hi {}",
                range.lo, range.hi
            )));
        }
    }
    let side = config.physics.area_side_m;
    if !(side > 0.0) {
        return Err(Error::Config("physics.area_side_m must be > 0".into()));
    }
    let ranges = &config.ranges;
    let stream = RngStream::new(config.seed);

    let aps = grid_positions(m, side)
        .into_iter()
        .enumerate()
        .map(|(id, position)| {
            let mut rng = stream.fork(id as u64, AP_STREAM, Purpose::Scenario);
            AccessPoint { id, position, bandwidth_hz: ranges.bandwidth_hz.sample(&mut rng) }
        })
        .collect();

    let servers = (0..k)
        .map(|id| {
            let mut rng = stream.fork(id as u64, ES_STREAM, Purpose::Scenario);
            EdgeServer {
                id,
                flops_per_sec: ranges.flops_per_sec.sample(&mut rng),
                flops_per_step: ranges.flops_per_step.sample(&mut rng),
                forward_error_scale: ranges.forward_error_scale.sample(&mut rng),
            }
        })
        .collect();

    let ues = (0..n)
        .map(|id| {
            let mut rng = stream.fork(id as u64, UE_STREAM, Purpose::Scenario);
            let position =
                Position::new(Range::new(0.0, side).sample(&mut rng), Range::new(0.0, side).sample(&mut rng));
            let data_size_bits = ranges.data_size_mb.sample(&mut rng) * BITS_PER_MB;
            let active_prob = quantize_prob(ranges.active_prob.sample(&mut rng));
            let error_threshold = ranges.error_threshold.sample(&mut rng);
            // Per-resource vectors are drawn from their own streams so their
            // length never shifts the draws above.
            let mut fit_rng = stream.fork(id as u64, UE_STREAM + 1, Purpose::Scenario);
            let fitness = (0..k).map(|_| ranges.fitness.sample(&mut fit_rng)).collect();
            let mut pow_rng = stream.fork(id as u64, UE_STREAM + 2, Purpose::Scenario);
            let tx_power_watts = (0..m).map(|_| ranges.tx_power_watts.sample(&mut pow_rng)).collect();
            UserEquipment {
                id,
                position,
                data_size_bits,
                active_prob,
                error_threshold,
                fitness,
                tx_power_watts,
            }
        })
        .collect();

    Ok(Scenario {
        aps,
        servers,
        ues,
        physics: config.physics.clone(),
        game: config.game.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        generate_scenario(&GenerationConfig::new(4, 3, 10, 1)).unwrap()
    }

    #[test]
    fn default_generation_is_valid() {
        let s = base();
        assert!(s.validate().is_ok(), "{:?}", s.validate());
        let centers: Vec<_> = s.aps.iter().map(|a| (a.position.x, a.position.y)).collect();
        assert_eq!(centers, vec![(250.0, 250.0), (750.0, 250.0), (250.0, 750.0), (750.0, 750.0)]);
    }

    #[test]
    fn minimal_instance() {
        let s = generate_scenario(&GenerationConfig::new(1, 1, 1, 99)).unwrap();
        assert!(s.validate().is_ok());
        assert_eq!(s.aps[0].position, Position::new(500.0, 500.0));
    }

    #[test]
    fn zero_bandwidth_is_reported() {
        let mut s = base();
        s.aps[2].bandwidth_hz = 0.0;
        let r = s.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].path, "aps[2].bandwidth_hz");
        assert_eq!(r.violations[0].message, "bandwidth_hz must be > 0");
    }

    #[test]
    fn fitness_shape_is_reported() {
        let mut s = base();
        s.ues[4].fitness.pop();
        let r = s.validate();
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].message.starts_with("fitness length mismatch"));
    }

    #[test]
    fn collects_every_violation() {
        let mut s = base();
        s.servers[0].flops_per_sec = -1.0;
        s.ues[0].active_prob = 0.0;
        s.ues[1].active_prob = 0.5004;
        s.ues[2].position.x = 1e4;
        s.game.comm_potential_log2_base = 10.0;
        let paths: Vec<_> = s.validate().violations.into_iter().map(|v| v.path).collect();
        assert_eq!(
            paths,
            vec![
                "servers[0].flops_per_sec",
                "ues[0].active_prob",
                "ues[1].active_prob",
                "ues[2].position",
                "game.comm_potential_log2_base",
            ]
        );
    }

    #[test]
    fn inverted_range_is_config_error() {
        let mut cfg = GenerationConfig::new(2, 2, 2, 0);
        cfg.ranges.flops_per_sec = Range::new(5.0, 1.0);
        let err = generate_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("flops_per_sec"));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_scenario(&GenerationConfig::new(4, 3, 10, 7)).unwrap();
        let b = generate_scenario(&GenerationConfig::new(4, 3, 10, 7)).unwrap();
        assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes());
        let c = generate_scenario(&GenerationConfig::new(4, 3, 10, 8)).unwrap();
        assert_ne!(a.to_canonical_bytes(), c.to_canonical_bytes());
    }

    #[test]
    fn ue_draws_do_not_depend_on_resource_counts() {
        let a = generate_scenario(&GenerationConfig::new(2, 2, 5, 3)).unwrap();
        let b = generate_scenario(&GenerationConfig::new(9, 6, 8, 3)).unwrap();
        for (x, y) in a.ues.iter().zip(&b.ues) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.data_size_bits, y.data_size_bits);
            assert_eq!(x.active_prob, y.active_prob);
            assert_eq!(x.fitness[..2], y.fitness[..2]);
        }
    }

    #[test]
    fn toml_roundtrip() {
        let s = base();
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
        let back = Scenario::from_canonical_bytes(&s.to_canonical_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = base().to_toml_string();
        text = text.replacen("[physics]", "[physics]\nbogus = 1", 1);
        assert!(Scenario::from_toml_str(&text).unwrap_err().contains("bogus"));
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize_prob(0.12345), 0.123);
        assert_eq!(quantize_prob(0.0), 0.001);
        assert_eq!(quantize_prob(1.0), 1.0);
    }
}
