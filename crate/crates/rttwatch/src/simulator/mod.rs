//! Deterministic traffic/attack simulator: generates benign per-flow RTT
//! streams over a propagation floor, injects interception-style floor
//! shifts, drives the detection engine end to end (including probe
//! responses during blocks), and reports detection latency, false
//! positives, and downtime.
//!
//! Everything is derived from the scenario seed; two runs of the same
//! scenario produce byte-identical event logs.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    probe_schedule, select_vulnerable, AttackEvent, DefendVerdict, DetectionEngine, DetectorConfig,
    EventKind, Lambda, TauTable,
};
use crate::rttsource::{
    prefix_key_from_str, prefix_key_to_string, sig_hash, Direction, PrefixSignature, RttSample,
    DEFAULT_HASH_SEEDS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("overlapping attacks on prefix {0}")]
    OverlappingAttacks(String),
    #[error("attack window [{t_start_s}, {t_end_s}) outside the stream or inside the profiling span")]
    AttackOutOfRange { t_start_s: f64, t_end_s: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Noise added on top of the propagation floor, always non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// No noise: every sample sits on the floor.
    None,
    /// Lognormal body: `scale_ms * exp(sigma * z)`, occasionally close to
    /// zero, so window minima track the floor.
    Lognormal { sigma: f64, scale_ms: f64 },
    /// Heavy-tailed: Pareto(scale_ms, alpha) shifted to start at zero.
    Pareto { scale_ms: f64, alpha: f64 },
    /// Lognormal body plus occasional large spikes.
    SpikeMixture {
        sigma: f64,
        scale_ms: f64,
        spike_prob: f64,
        spike_ms: f64,
    },
}

impl NoiseSpec {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Lognormal { sigma, scale_ms } => {
                let d = LogNormal::new(0.0, sigma.max(1e-9)).expect("valid lognormal");
                scale_ms * d.sample(rng)
            }
            NoiseSpec::Pareto { scale_ms, alpha } => {
                let d = Pareto::new(scale_ms.max(1e-9), alpha.max(1e-9)).expect("valid pareto");
                d.sample(rng) - scale_ms
            }
            NoiseSpec::SpikeMixture {
                sigma,
                scale_ms,
                spike_prob,
                spike_ms,
            } => {
                let d = LogNormal::new(0.0, sigma.max(1e-9)).expect("valid lognormal");
                let mut v = scale_ms * d.sample(rng);
                if rng.gen::<f64>() < spike_prob {
                    v += spike_ms * (0.5 + rng.gen::<f64>());
                }
                v
            }
        }
    }
}

/// A benign floor shift (correlated congestion) on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent {
    pub t_start_s: f64,
    pub duration_s: f64,
    pub extra_ms: f64,
}

/// One destination prefix and the path to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathModel {
    pub prefix: String,
    /// Propagation floor: no sample is ever below this.
    pub base_rtt_ms: f64,
    pub noise: NoiseSpec,
    /// Per-flow sampling rate.
    pub sample_rate_hz: f64,
    #[serde(default = "default_flows")]
    pub flows: u32,
    /// Mid-attack lower bound installed for this prefix.
    pub tau_mid_ms: Option<f64>,
    /// Keep flow 0 nearly noise-free so each window sees the floor.
    #[serde(default = "default_true")]
    pub stable_flow: bool,
    #[serde(default)]
    pub congestion: Vec<CongestionEvent>,
    /// Direction mix for vulnerability gating (defaults to server flows).
    #[serde(default = "default_true")]
    pub server_flows: bool,
}

fn default_flows() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

impl PathModel {
    pub fn prefix_key(&self) -> Result<u32, SimError> {
        prefix_key_from_str(&self.prefix).map_err(|e| SimError::BadScenario(e.to_string()))
    }

    /// The benign floor at time `t` (base plus any active congestion).
    pub fn floor_at(&self, t_s: f64) -> f64 {
        let mut f = self.base_rtt_ms;
        for ev in &self.congestion {
            if t_s >= ev.t_start_s && t_s < ev.t_start_s + ev.duration_s {
                f += ev.extra_ms;
            }
        }
        f
    }
}

/// An injected interception: every sample of `prefix` in
/// `[t_start_s, t_end_s)` is delayed by at least `delta_ms`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub prefix: String,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub delta_ms: f64,
}

impl AttackSpec {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.t_start_s < self.t_end_s) || !(self.delta_ms > 0.0) {
            return Err(SimError::BadScenario(format!(
                "attack on {} needs t_start < t_end and delta_ms > 0",
                self.prefix
            )));
        }
        Ok(())
    }
}

/// A full simulation scenario (TOML-serializable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    /// Fraction of the stream used for profiling before detection starts.
    #[serde(default = "default_profile_fraction")]
    pub profile_fraction: f64,
    #[serde(default)]
    pub detector: DetectorSettings,
    pub paths: Vec<PathModel>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

fn default_profile_fraction() -> f64 {
    0.5
}

/// Detector knobs in scenario files (flattened for TOML friendliness).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSettings {
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    /// Fixed surge threshold in ms; mutually exclusive with `lambda_pct`.
    pub lambda_ms: Option<f64>,
    /// Surge threshold as a percentage of the profiled max-of-minima.
    pub lambda_pct: Option<f64>,
    #[serde(default = "default_min_samples")]
    pub min_samples_per_window: u32,
    #[serde(default = "default_probe_slow_after")]
    pub probe_slow_after_s: f64,
    #[serde(default = "default_probe_slow_period")]
    pub probe_slow_period_s: f64,
    #[serde(default)]
    pub continuous_profiling: bool,
}

fn default_window_s() -> f64 {
    0.25
}
fn default_min_samples() -> u32 {
    5
}
fn default_probe_slow_after() -> f64 {
    300.0
}
fn default_probe_slow_period() -> f64 {
    60.0
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            window_s: default_window_s(),
            lambda_ms: Some(5.0),
            lambda_pct: None,
            min_samples_per_window: default_min_samples(),
            probe_slow_after_s: default_probe_slow_after(),
            probe_slow_period_s: default_probe_slow_period(),
            continuous_profiling: false,
        }
    }
}

impl DetectorSettings {
    pub fn to_config(&self) -> Result<DetectorConfig, SimError> {
        let lambda = match (self.lambda_ms, self.lambda_pct) {
            (Some(_), Some(_)) => {
                return Err(SimError::BadScenario(
                    "specify lambda_ms or lambda_pct, not both".into(),
                ))
            }
            (Some(ms), None) => Lambda::Ms(ms),
            (None, Some(pct)) => Lambda::FractionOfMax(pct / 100.0),
            (None, None) => Lambda::Ms(5.0),
        };
        if !(self.window_s > 0.0) {
            return Err(SimError::BadScenario("window_s must be positive".into()));
        }
        Ok(DetectorConfig {
            window_s: self.window_s,
            lambda,
            min_samples_per_window: self.min_samples_per_window,
            probe_slow_after_s: self.probe_slow_after_s,
            probe_slow_period_s: self.probe_slow_period_s,
            continuous_profiling: self.continuous_profiling,
        })
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.paths.is_empty() {
            return Err(SimError::BadScenario("scenario has no paths".into()));
        }
        let profile_until = self.duration_s * self.profile_fraction;
        let mut spans: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        for a in &self.attacks {
            a.validate()?;
            if a.t_start_s < profile_until || a.t_end_s > self.duration_s {
                return Err(SimError::AttackOutOfRange {
                    t_start_s: a.t_start_s,
                    t_end_s: a.t_end_s,
                });
            }
            if !self.paths.iter().any(|p| p.prefix == a.prefix) {
                return Err(SimError::BadScenario(format!(
                    "attack targets unknown prefix {}",
                    a.prefix
                )));
            }
            let v = spans.entry(a.prefix.clone()).or_default();
            for &(s, e) in v.iter() {
                if a.t_start_s < e && s < a.t_end_s {
                    return Err(SimError::OverlappingAttacks(a.prefix.clone()));
                }
            }
            v.push((a.t_start_s, a.t_end_s));
        }
        Ok(())
    }
}

/// Per-flow deterministic sub-seed.
fn flow_rng(seed: u64, prefix_key: u32, flow: u32) -> ChaCha8Rng {
    let mix = seed ^ ((prefix_key as u64) << 24) ^ ((flow as u64) << 1);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Generates the benign sample stream for one path. Flow ids are
/// `flow_id_base + flow`; timestamps are strictly sorted.
pub fn gen_benign_stream(
    model: &PathModel,
    duration_s: f64,
    seed: u64,
    flow_id_base: u64,
) -> Result<Vec<RttSample>, SimError> {
    if !(model.sample_rate_hz > 0.0) || model.flows == 0 {
        return Err(SimError::BadScenario(format!(
            "path {} needs flows > 0 and a positive sample rate",
            model.prefix
        )));
    }
    let key = model.prefix_key()?;
    let sig = PrefixSignature {
        index: sig_hash(key, DEFAULT_HASH_SEEDS[0]),
        key,
    };
    let mut out = Vec::new();
    for flow in 0..model.flows {
        let mut rng = flow_rng(seed, key, flow);
        let phase: f64 = rng.gen::<f64>();
        let period = 1.0 / model.sample_rate_hz;
        let damp = if model.stable_flow && flow == 0 { 0.02 } else { 1.0 };
        let mut k = 0u64;
        loop {
            let jitter: f64 = rng.gen::<f64>() * 0.2 - 0.1;
            let t = (k as f64 + phase + jitter).max(0.0) * period;
            if t >= duration_s {
                break;
            }
            let noise = model.noise.draw(&mut rng) * damp;
            let rtt = model.floor_at(t) + noise;
            out.push(RttSample {
                sig,
                flow_id: flow_id_base + flow as u64,
                t_ack_us: (t * 1e6) as u64,
                rtt_ms: rtt,
            });
            k += 1;
        }
    }
    out.sort_by_key(|s| (s.t_ack_us, s.flow_id));
    Ok(out)
}

/// Applies attack floor shifts to a sorted stream. Samples inside
/// `[t_start, t_end)` gain `delta_ms`; the floor property is preserved
/// because benign samples never sit below the benign floor.
pub fn inject_attack(stream: &mut [RttSample], spec: &AttackSpec) -> Result<(), SimError> {
    spec.validate()?;
    let key = prefix_key_from_str(&spec.prefix).map_err(|e| SimError::BadScenario(e.to_string()))?;
    let (a, b) = ((spec.t_start_s * 1e6) as u64, (spec.t_end_s * 1e6) as u64);
    for s in stream.iter_mut() {
        if s.sig.key == key && s.t_ack_us >= a && s.t_ack_us < b {
            s.rtt_ms += spec.delta_ms;
        }
    }
    Ok(())
}

/// Metrics of one simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub seed: u64,
    /// One entry per attack spec: seconds from the first affected sample
    /// to the detection changepoint, or None when missed.
    pub detection_latency_s: Vec<Option<f64>>,
    /// Attacks on covered prefixes that were never detected.
    pub false_negatives: usize,
    /// Attacks on prefixes that were not covered (no bound, not
    /// defendable, not vulnerable): reported separately, not as misses.
    pub uncovered_attacks: usize,
    /// Detections not attributable to any injected attack.
    pub false_positives: usize,
    /// Valid benign detection-phase windows (FPR denominator).
    pub benign_valid_windows: u64,
    pub fpr: f64,
    pub fnr: f64,
    /// Downtime of each false-positive block that was rolled back.
    pub downtime_s: Vec<f64>,
    pub median_downtime_s: Option<f64>,
    pub prefixes: usize,
    pub covered_prefixes: usize,
    pub defendable_prefixes: usize,
}

/// Everything a run produces.
pub struct ScenarioRun {
    pub metrics: ScenarioMetrics,
    pub events: Vec<AttackEvent>,
    /// (prefix, window_end_us, min_rtt_ms) per completed window of the
    /// generated stream, for external plotting.
    pub window_minima: Vec<(u32, u64, f64)>,
}

/// Runs a scenario end to end.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun, SimError> {
    scenario.validate()?;
    let cfg = scenario.detector.to_config()?;
    let mut tau = TauTable::default();
    for p in &scenario.paths {
        if let Some(t) = p.tau_mid_ms {
            tau.insert(p.prefix_key()?, t);
        }
    }

    // generate, inject, merge
    let mut streams: Vec<RttSample> = Vec::new();
    let mut flow_id_base = 0u64;
    let mut dirs: Vec<(u32, Direction)> = Vec::new();
    for p in &scenario.paths {
        let s = gen_benign_stream(p, scenario.duration_s, scenario.seed, flow_id_base)?;
        flow_id_base += p.flows as u64;
        dirs.push((
            p.prefix_key()?,
            if p.server_flows { Direction::Ciso } else { Direction::Sico },
        ));
        streams.extend(s);
    }
    for a in &scenario.attacks {
        inject_attack(&mut streams, a)?;
    }
    streams.sort_by_key(|s| (s.t_ack_us, s.flow_id));

    let profile_until_us = (scenario.duration_s * scenario.profile_fraction * 1e6) as u64;
    let mut engine = DetectionEngine::new(cfg.clone(), tau, profile_until_us);
    engine.set_covered(select_vulnerable(dirs, false));

    let by_key: HashMap<u32, &PathModel> = scenario
        .paths
        .iter()
        .map(|p| (p.prefix_key().expect("validated"), p))
        .collect();
    let attack_by_key: Vec<(u32, &AttackSpec)> = scenario
        .attacks
        .iter()
        .map(|a| (prefix_key_from_str(&a.prefix).expect("validated"), a))
        .collect();

    let probe_floor = |key: u32, t_s: f64| -> f64 {
        let model = by_key[&key];
        let mut floor = model.floor_at(t_s);
        for (k, a) in &attack_by_key {
            if *k == key && t_s >= a.t_start_s && t_s < a.t_end_s {
                floor += a.delta_ms;
            }
        }
        floor
    };

    let mut probe_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x70726f6265);
    let mut drive_probes = |engine: &mut DetectionEngine, now_us: u64, rng: &mut ChaCha8Rng| {
        for req in engine.advance_probes(now_us) {
            let t_s = req.t_us as f64 / 1e6;
            let model = by_key[&req.prefix_key];
            let noise = model.noise.draw(rng) * 0.02;
            let rtt = probe_floor(req.prefix_key, t_s) + noise;
            engine.on_probe_rtt(req.prefix_key, Some(rtt), req.t_us);
        }
    };

    for s in &streams {
        drive_probes(&mut engine, s.t_ack_us, &mut probe_rng);
        engine.process(s);
    }
    // let pending probes resolve until the end of the run
    drive_probes(&mut engine, (scenario.duration_s * 1e6) as u64, &mut probe_rng);

    let events = engine.events().to_vec();
    let metrics = compute_metrics(scenario, &cfg, &engine, &streams, &events)?;
    let window_minima = window_minima(&streams, cfg.window_s);
    Ok(ScenarioRun {
        metrics,
        events,
        window_minima,
    })
}

fn window_minima(streams: &[RttSample], window_s: f64) -> Vec<(u32, u64, f64)> {
    let window_us = (window_s * 1e6) as u64;
    let mut anchors: HashMap<u32, u64> = HashMap::new();
    let mut mins: BTreeMap<(u32, u64), f64> = BTreeMap::new();
    for s in streams {
        let t0 = *anchors.entry(s.sig.key).or_insert(s.t_ack_us);
        let w = (s.t_ack_us - t0) / window_us;
        let end = t0 + (w + 1) * window_us;
        let e = mins.entry((s.sig.key, end)).or_insert(f64::INFINITY);
        if s.rtt_ms < *e {
            *e = s.rtt_ms;
        }
    }
    mins.into_iter().map(|((k, end), m)| (k, end, m)).collect()
}

fn compute_metrics(
    scenario: &Scenario,
    cfg: &DetectorConfig,
    engine: &DetectionEngine,
    streams: &[RttSample],
    events: &[AttackEvent],
) -> Result<ScenarioMetrics, SimError> {
    let window_us = (cfg.window_s * 1e6) as u64;
    let detections: Vec<&AttackEvent> = events
        .iter()
        .filter(|e| e.kind == EventKind::Detected)
        .collect();

    // attack bookkeeping
    let mut latencies = Vec::new();
    let mut false_negatives = 0usize;
    let mut uncovered = 0usize;
    let mut attributable: HashSet<usize> = HashSet::new(); // detection indices
    for a in &scenario.attacks {
        let key = prefix_key_from_str(&a.prefix).map_err(|e| SimError::BadScenario(e.to_string()))?;
        let a_us = (a.t_start_s * 1e6) as u64;
        let b_us = (a.t_end_s * 1e6) as u64;
        let first_affected = streams
            .iter()
            .find(|s| s.sig.key == key && s.t_ack_us >= a_us && s.t_ack_us < b_us)
            .map(|s| s.t_ack_us);
        let covered = engine
            .params()
            .get(&key)
            .map(|p| p.verdict == DefendVerdict::Defendable)
            .unwrap_or(false);
        let hit = detections.iter().enumerate().find(|(_, e)| {
            e.prefix_key == key && e.t_us >= a_us && e.t_us <= b_us + 2 * window_us
        });
        match (covered, hit, first_affected) {
            (_, Some((idx, e)), Some(t_first)) => {
                attributable.insert(idx);
                latencies.push(Some((e.t_us.saturating_sub(t_first)) as f64 / 1e6));
            }
            (false, None, _) => {
                uncovered += 1;
                latencies.push(None);
            }
            (true, None, _) => {
                false_negatives += 1;
                latencies.push(None);
            }
            (_, Some(_), None) => {
                // attack window contained no samples; treat as uncovered
                uncovered += 1;
                latencies.push(None);
            }
        }
    }

    let false_positives = detections.len() - attributable.len();

    // benign valid windows: engine total minus valid windows completed
    // inside attack spans on the attacked prefix
    let mut attack_windows = 0u64;
    for a in &scenario.attacks {
        let key = prefix_key_from_str(&a.prefix).map_err(|e| SimError::BadScenario(e.to_string()))?;
        for (k, end, _) in window_minima(streams, cfg.window_s) {
            if k == key {
                let start = end - window_us;
                let (a_us, b_us) = ((a.t_start_s * 1e6) as u64, (a.t_end_s * 1e6) as u64);
                let profile_until = (scenario.duration_s * scenario.profile_fraction * 1e6) as u64;
                if start < b_us && a_us < end && end >= profile_until {
                    attack_windows += 1;
                }
            }
        }
    }
    let benign_valid_windows = engine
        .counters
        .valid_windows_detection
        .saturating_sub(attack_windows);
    let fpr = if benign_valid_windows > 0 {
        false_positives as f64 / benign_valid_windows as f64
    } else {
        0.0
    };
    let covered_attacks = scenario.attacks.len() - uncovered;
    let fnr = if covered_attacks > 0 {
        false_negatives as f64 / covered_attacks as f64
    } else {
        0.0
    };

    // downtime: block -> unblock pairs for non-attributable detections
    let mut downtime = Vec::new();
    let mut open_blocks: HashMap<u32, (u64, bool)> = HashMap::new(); // key -> (t_block, attributable)
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::Detected => {
                let idx = detections.iter().position(|d| std::ptr::eq(*d, e));
                let attr = idx.map(|k| attributable.contains(&k)).unwrap_or(false);
                let _ = i;
                open_blocks.insert(e.prefix_key, (e.t_us, attr));
            }
            EventKind::UnblockedFp => {
                if let Some((t0, attr)) = open_blocks.remove(&e.prefix_key) {
                    if !attr {
                        downtime.push((e.t_us - t0) as f64 / 1e6);
                    }
                }
            }
            EventKind::ProbeSent => {}
        }
    }
    let median_downtime_s = if downtime.is_empty() {
        None
    } else {
        let mut d = downtime.clone();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(crate::stats::percentile_sorted(&d, 50.0))
    };

    let defendable = engine
        .params()
        .values()
        .filter(|p| p.verdict == DefendVerdict::Defendable)
        .count();

    Ok(ScenarioMetrics {
        seed: scenario.seed,
        detection_latency_s: latencies,
        false_negatives,
        uncovered_attacks: uncovered,
        false_positives,
        benign_valid_windows,
        fpr,
        fnr,
        downtime_s: downtime,
        median_downtime_s,
        prefixes: scenario.paths.len(),
        covered_prefixes: engine.params().len(),
        defendable_prefixes: defendable,
    })
}

impl ScenarioMetrics {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "#schema=rttwatch.metrics.v1").unwrap();
        writeln!(s, "seed: {}", self.seed).unwrap();
        writeln!(s, "prefixes: {}", self.prefixes).unwrap();
        writeln!(s, "covered_prefixes: {}", self.covered_prefixes).unwrap();
        writeln!(s, "defendable_prefixes: {}", self.defendable_prefixes).unwrap();
        for (i, l) in self.detection_latency_s.iter().enumerate() {
            match l {
                Some(v) => writeln!(s, "attack_{i}_latency_s: {v:.3}").unwrap(),
                None => writeln!(s, "attack_{i}_latency_s: miss").unwrap(),
            }
        }
        writeln!(s, "false_negatives: {}", self.false_negatives).unwrap();
        writeln!(s, "uncovered_attacks: {}", self.uncovered_attacks).unwrap();
        writeln!(s, "false_positives: {}", self.false_positives).unwrap();
        writeln!(s, "benign_valid_windows: {}", self.benign_valid_windows).unwrap();
        writeln!(s, "fpr: {:.6}", self.fpr).unwrap();
        writeln!(s, "fnr: {:.6}", self.fnr).unwrap();
        match self.median_downtime_s {
            Some(v) => writeln!(s, "median_downtime_s: {v:.3}").unwrap(),
            None => writeln!(s, "median_downtime_s: n/a").unwrap(),
        }
        s
    }
}

/// Replay gating and evaluation over an externally supplied sample stream
/// (from capture extraction or CSV).
pub struct ReplayOptions {
    /// Activity gate: a prefix must produce samples in at least this many
    /// distinct buckets to be profiled.
    pub min_active_buckets: usize,
    pub bucket_s: f64,
    /// Split of each prefix's active span into profiling then detection.
    pub profile_fraction: f64,
    /// Include access-network-only prefixes in the vulnerable set.
    pub include_access_networks: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            min_active_buckets: 10,
            bucket_s: 60.0,
            profile_fraction: 0.5,
            include_access_networks: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub total_prefixes: usize,
    pub vulnerable_prefixes: usize,
    pub active_prefixes: usize,
    pub covered_prefixes: usize,
    pub defendable_prefixes: usize,
    pub detections: usize,
    /// Under the no-attack assumption every detection is a false positive.
    pub false_positives: usize,
    pub valid_windows_detection: u64,
    pub fpr: f64,
}

/// Replays a benign trace through gating and detection. Direction
/// metadata, when available, drives the vulnerable-prefix gate; without it
/// every prefix is treated as operator-included.
pub fn replay_evaluation(
    samples: &[RttSample],
    directions: Option<&HashMap<u64, Direction>>,
    tau: &TauTable,
    cfg: &DetectorConfig,
    opts: &ReplayOptions,
) -> Result<(ReplayMetrics, Vec<AttackEvent>), SimError> {
    let mut all_prefixes: HashSet<u32> = HashSet::new();
    let mut first_last: HashMap<u32, (u64, u64)> = HashMap::new();
    let mut buckets: HashMap<u32, HashSet<u64>> = HashMap::new();
    let bucket_us = (opts.bucket_s * 1e6) as u64;
    for s in samples {
        all_prefixes.insert(s.sig.key);
        let e = first_last.entry(s.sig.key).or_insert((s.t_ack_us, s.t_ack_us));
        e.0 = e.0.min(s.t_ack_us);
        e.1 = e.1.max(s.t_ack_us);
        buckets.entry(s.sig.key).or_default().insert(s.t_ack_us / bucket_us);
    }

    let vulnerable: HashSet<u32> = match directions {
        Some(dirs) => {
            let pairs = samples.iter().filter_map(|s| {
                dirs.get(&s.flow_id).map(|d| (s.sig.key, *d))
            });
            select_vulnerable(pairs, opts.include_access_networks)
        }
        None => all_prefixes.clone(),
    };
    let active: HashSet<u32> = buckets
        .iter()
        .filter(|(_, b)| b.len() >= opts.min_active_buckets)
        .map(|(k, _)| *k)
        .collect();
    let covered: HashSet<u32> = vulnerable
        .intersection(&active)
        .copied()
        .filter(|k| tau.get(*k).is_some())
        .collect();

    let mut engine = DetectionEngine::new(cfg.clone(), tau.clone(), u64::MAX);
    for &k in &covered {
        let (t0, t1) = first_last[&k];
        let boundary = t0 + ((t1 - t0) as f64 * opts.profile_fraction) as u64;
        engine.set_profile_boundary(k, boundary);
    }
    engine.set_covered(covered.clone());

    for s in samples {
        engine.process(s);
    }

    let events = engine.events().to_vec();
    let detections = events.iter().filter(|e| e.kind == EventKind::Detected).count();
    let defendable = engine
        .params()
        .values()
        .filter(|p| p.verdict == DefendVerdict::Defendable)
        .count();
    let valid_windows = engine.counters.valid_windows_detection;
    let metrics = ReplayMetrics {
        total_prefixes: all_prefixes.len(),
        vulnerable_prefixes: vulnerable.len(),
        active_prefixes: active.len(),
        covered_prefixes: covered.len(),
        defendable_prefixes: defendable,
        detections,
        false_positives: detections,
        valid_windows_detection: valid_windows,
        fpr: if valid_windows > 0 {
            detections as f64 / valid_windows as f64
        } else {
            0.0
        },
    };
    Ok((metrics, events))
}

/// Formats window minima as CSV for external plotting.
pub fn write_window_minima_csv<W: std::io::Write>(
    w: W,
    minima: &[(u32, u64, f64)],
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["#schema=rttwatch.window-minima.v1", "", ""])?;
    wtr.write_record(["prefix", "window_end_us", "min_rtt_ms"])?;
    for (k, end, m) in minima {
        wtr.write_record([
            prefix_key_to_string(*k),
            end.to_string(),
            format!("{m:.3}"),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Stand-in probe schedule check used by operator docs and tests.
pub fn next_probe_offset_s(t_since_block_s: f64, cfg: &DetectorConfig) -> f64 {
    probe_schedule(t_since_block_s, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_path(prefix: &str, base: f64, tau: f64) -> PathModel {
        PathModel {
            prefix: prefix.into(),
            base_rtt_ms: base,
            noise: NoiseSpec::None,
            sample_rate_hz: 40.0,
            flows: 2,
            tau_mid_ms: Some(tau),
            stable_flow: true,
            congestion: vec![],
            server_flows: true,
        }
    }

    #[test]
    fn zero_noise_stream_sits_on_the_floor() {
        let p = base_path("203.0.113.0/24", 190.5, 199.0);
        let s = gen_benign_stream(&p, 5.0, 1, 0).unwrap();
        assert!(!s.is_empty());
        assert!(s.iter().all(|x| (x.rtt_ms - 190.5).abs() < 1e-12));
        // sorted
        assert!(s.windows(2).all(|w| w[0].t_ack_us <= w[1].t_ack_us));
    }

    #[test]
    fn lognormal_minimum_approaches_floor() {
        let mut p = base_path("203.0.113.0/24", 100.0, 150.0);
        p.noise = NoiseSpec::Lognormal { sigma: 1.0, scale_ms: 5.0 };
        p.stable_flow = false;
        p.flows = 4;
        let s = gen_benign_stream(&p, 10.0, 42, 0).unwrap();
        assert!(s.len() > 1000);
        let min = s.iter().map(|x| x.rtt_ms).fold(f64::INFINITY, f64::min);
        assert!(min >= 100.0, "floor preserved: {min}");
        assert!(min - 100.0 < 1.0, "minimum within 1 ms of the floor: {min}");
    }

    #[test]
    fn stable_flow_pins_window_minima_to_floor() {
        // one noisy flow, one stable flow: per-window minima near the floor
        let mut p = base_path("203.0.113.0/24", 50.0, 100.0);
        p.noise = NoiseSpec::SpikeMixture {
            sigma: 0.8,
            scale_ms: 20.0,
            spike_prob: 0.2,
            spike_ms: 80.0,
        };
        p.flows = 2;
        let s = gen_benign_stream(&p, 8.0, 7, 0).unwrap();
        let minima = window_minima(&s, 0.25);
        let worst = minima.iter().map(|(_, _, m)| *m).fold(0.0, f64::max);
        assert!(worst < 55.0, "stable flow keeps minima near 50, worst {worst}");
    }

    #[test]
    fn inject_preserves_floor_and_rejects_overlap() {
        let p = base_path("203.0.113.0/24", 100.0, 150.0);
        let mut s = gen_benign_stream(&p, 10.0, 3, 0).unwrap();
        let spec = AttackSpec {
            prefix: "203.0.113.0/24".into(),
            t_start_s: 4.0,
            t_end_s: 6.0,
            delta_ms: 20.0,
        };
        inject_attack(&mut s, &spec).unwrap();
        for x in &s {
            let t = x.t_ack_us as f64 / 1e6;
            if (4.0..6.0).contains(&t) {
                assert!(x.rtt_ms >= 120.0 - 1e-12);
            } else {
                assert!((x.rtt_ms - 100.0).abs() < 1e-12);
            }
        }
        // empty interval is identity
        let mut s2 = gen_benign_stream(&p, 2.0, 3, 0).unwrap();
        let before = s2.clone();
        inject_attack(
            &mut s2,
            &AttackSpec {
                prefix: "203.0.113.0/24".into(),
                t_start_s: 100.0,
                t_end_s: 101.0,
                delta_ms: 5.0,
            },
        )
        .unwrap();
        assert_eq!(s2, before);
        // overlapping specs rejected at scenario level
        let sc = Scenario {
            seed: 1,
            duration_s: 20.0,
            profile_fraction: 0.25,
            detector: DetectorSettings::default(),
            paths: vec![base_path("203.0.113.0/24", 100.0, 150.0)],
            attacks: vec![
                AttackSpec { prefix: "203.0.113.0/24".into(), t_start_s: 6.0, t_end_s: 10.0, delta_ms: 5.0 },
                AttackSpec { prefix: "203.0.113.0/24".into(), t_start_s: 9.0, t_end_s: 12.0, delta_ms: 5.0 },
            ],
        };
        assert!(matches!(sc.validate(), Err(SimError::OverlappingAttacks(_))));
    }

    #[test]
    fn attack_inside_profiling_span_is_rejected() {
        let sc = Scenario {
            seed: 1,
            duration_s: 20.0,
            profile_fraction: 0.5,
            detector: DetectorSettings::default(),
            paths: vec![base_path("203.0.113.0/24", 100.0, 150.0)],
            attacks: vec![AttackSpec {
                prefix: "203.0.113.0/24".into(),
                t_start_s: 5.0,
                t_end_s: 12.0,
                delta_ms: 30.0,
            }],
        };
        assert!(matches!(sc.validate(), Err(SimError::AttackOutOfRange { .. })));
    }

    #[test]
    fn end_to_end_detection_and_recovery() {
        let mut path = base_path("203.0.113.0/24", 190.5, 199.0);
        path.noise = NoiseSpec::Lognormal { sigma: 0.7, scale_ms: 2.0 };
        path.sample_rate_hz = 60.0;
        path.flows = 3;
        let sc = Scenario {
            seed: 11,
            duration_s: 60.0,
            profile_fraction: 0.5,
            detector: DetectorSettings::default(),
            paths: vec![path],
            attacks: vec![AttackSpec {
                prefix: "203.0.113.0/24".into(),
                t_start_s: 40.0,
                t_end_s: 50.0,
                delta_ms: 25.0,
            }],
        };
        let run = run_scenario(&sc).unwrap();
        assert_eq!(run.metrics.false_negatives, 0);
        let latency = run.metrics.detection_latency_s[0].expect("attack detected");
        assert!(latency <= 0.5 + 1e-9, "latency {latency}");
        // the block rolls back after the attack is withdrawn
        let unblocks = run
            .events
            .iter()
            .filter(|e| e.kind == EventKind::UnblockedFp)
            .count();
        assert!(unblocks >= 1, "prefix recovers after withdrawal");
    }

    #[test]
    fn runs_are_bit_identical_for_same_seed() {
        let mut path = base_path("203.0.113.0/24", 100.0, 140.0);
        path.noise = NoiseSpec::SpikeMixture {
            sigma: 0.9,
            scale_ms: 4.0,
            spike_prob: 0.05,
            spike_ms: 30.0,
        };
        let sc = Scenario {
            seed: 77,
            duration_s: 30.0,
            profile_fraction: 0.5,
            detector: DetectorSettings::default(),
            paths: vec![path],
            attacks: vec![AttackSpec {
                prefix: "203.0.113.0/24".into(),
                t_start_s: 20.0,
                t_end_s: 25.0,
                delta_ms: 45.0,
            }],
        };
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a.events, b.events);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        crate::detector::write_events_csv(&mut buf_a, &a.events).unwrap();
        crate::detector::write_events_csv(&mut buf_b, &b.events).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn scenario_toml_round_trip() {
        let text = r#"
seed = 42
duration_s = 120.0
profile_fraction = 0.5

[detector]
window_s = 0.25
lambda_ms = 5.0

[[paths]]
prefix = "203.0.113.0/24"
base_rtt_ms = 190.5
sample_rate_hz = 60.0
flows = 4
tau_mid_ms = 199.0

[paths.noise]
kind = "lognormal"
sigma = 0.7
scale_ms = 2.0

[[attacks]]
prefix = "203.0.113.0/24"
t_start_s = 80.0
t_end_s = 100.0
delta_ms = 25.0
"#;
        let sc = Scenario::from_toml(text).unwrap();
        assert_eq!(sc.paths.len(), 1);
        assert_eq!(sc.attacks.len(), 1);
        assert!(matches!(sc.paths[0].noise, NoiseSpec::Lognormal { .. }));
        // bad schema surfaces a parse error
        assert!(Scenario::from_toml("seed = \"nope\"").is_err());
    }
}
