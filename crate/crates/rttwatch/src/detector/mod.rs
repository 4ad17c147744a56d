//! Streaming minRTT changepoint detection over tumbling windows.
//!
//! Per destination prefix, samples aggregate into non-overlapping windows
//! of `window_s`; each window keeps its minimum RTT and sample count. When
//! a sample crosses a window boundary the window rolls: the finished
//! minimum becomes the previous-window minimum and, if both adjacent
//! windows are valid (enough samples), the surge conditions are checked:
//!
//! 1. the minimum crosses the per-prefix absolute threshold `tau_mid`
//!    between consecutive windows, and
//! 2. the jump exceeds the surge threshold `lambda`.
//!
//! Detection blocks the prefix and starts probing it; a probe RTT below
//! `tau_mid` unblocks it (false-positive correction). Everything is
//! sample-driven: no timers, no background threads.

pub mod reference;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefixtable::{PrefixSlot, PrefixTable, TableConfig};
use crate::rttsource::{prefix_key_from_str, prefix_key_to_string, Direction, RttSample, RttSourceError};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad tau table row {row}: {detail}")]
    BadTauRow { row: usize, detail: String },
    #[error("{0}")]
    Source(#[from] RttSourceError),
}

/// Surge threshold: a fixed jump in milliseconds, or a fraction of the
/// profiled max-of-window-minima (resolved per prefix when profiling
/// finishes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Lambda {
    Ms(f64),
    FractionOfMax(f64),
}

impl Lambda {
    pub fn resolve(&self, max_of_min_ms: f64) -> f64 {
        match *self {
            Lambda::Ms(v) => v,
            Lambda::FractionOfMax(f) => f * max_of_min_ms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Tumbling window length, seconds.
    pub window_s: f64,
    pub lambda: Lambda,
    /// Windows with fewer samples are invalid for surge checks.
    pub min_samples_per_window: u32,
    /// Probe cadence: one per window until this many seconds since the
    /// block, then one per `probe_slow_period_s`.
    pub probe_slow_after_s: f64,
    pub probe_slow_period_s: f64,
    /// Keep updating profile statistics during the detection phase.
    pub continuous_profiling: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_s: 0.25,
            lambda: Lambda::Ms(5.0),
            min_samples_per_window: 5,
            probe_slow_after_s: 300.0,
            probe_slow_period_s: 60.0,
            continuous_profiling: false,
        }
    }
}

/// Benign-traffic profile of one prefix, read from its table slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub max_of_min_ms: f64,
    pub min_of_min_ms: f64,
    pub valid_window_count: u32,
}

impl ProfileStats {
    pub fn from_slot(slot: &PrefixSlot) -> Self {
        Self {
            max_of_min_ms: slot.max_of_min_ms,
            min_of_min_ms: slot.min_of_min_ms,
            valid_window_count: slot.valid_window_count,
        }
    }
}

/// Why a prefix is or is not defendable against a threat bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefendVerdict {
    Defendable,
    /// No valid window was ever profiled.
    EmptyProfile,
    /// Even the quietest benign window minimum exceeds the mid-attack
    /// lower bound; the threat region is too close or the path too slow.
    FloorAboveTau,
    /// The bound clears the benign maximum by less than the surge
    /// threshold.
    HeadroomTooSmall,
}

/// Defendability gate: a prefix is defendable against a threat bound when
/// `tau_mid - max_of_min > lambda` (strict).
pub fn defendability(profile: &ProfileStats, tau_mid_ms: f64, lambda_ms: f64) -> DefendVerdict {
    if profile.valid_window_count == 0 {
        return DefendVerdict::EmptyProfile;
    }
    if profile.min_of_min_ms > tau_mid_ms {
        return DefendVerdict::FloorAboveTau;
    }
    if tau_mid_ms - profile.max_of_min_ms > lambda_ms {
        DefendVerdict::Defendable
    } else {
        DefendVerdict::HeadroomTooSmall
    }
}

pub fn is_defendable(profile: &ProfileStats, tau_mid_ms: f64, lambda_ms: f64) -> bool {
    defendability(profile, tau_mid_ms, lambda_ms) == DefendVerdict::Defendable
}

/// Both surge conditions from the two-window changepoint check.
pub fn check_surge(min_prev_ms: f64, min_cur_ms: f64, tau_mid_ms: f64, lambda_ms: f64) -> bool {
    min_prev_ms < tau_mid_ms && min_cur_ms > tau_mid_ms && (min_cur_ms - min_prev_ms) > lambda_ms
}

/// Vulnerable-prefix selection: prefixes with at least one external-server
/// (CISO) flow. Prefixes seen only as external clients belong to access
/// networks and are excluded unless the operator opts them in.
pub fn select_vulnerable(
    flows: impl IntoIterator<Item = (u32, Direction)>,
    include_access_networks: bool,
) -> std::collections::HashSet<u32> {
    let mut server: std::collections::HashSet<u32> = Default::default();
    let mut any: std::collections::HashSet<u32> = Default::default();
    for (prefix, dir) in flows {
        any.insert(prefix);
        if dir == Direction::Ciso {
            server.insert(prefix);
        }
    }
    if include_access_networks {
        any
    } else {
        server
    }
}

/// Seconds until the next probe, given time since the block.
pub fn probe_schedule(t_since_block_s: f64, cfg: &DetectorConfig) -> f64 {
    if t_since_block_s < cfg.probe_slow_after_s {
        cfg.window_s
    } else {
        cfg.probe_slow_period_s
    }
}

/// Per-prefix thresholds resolved at the profiling/detection split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixParams {
    pub tau_mid_ms: f64,
    pub lambda_ms: f64,
    pub verdict: DefendVerdict,
}

/// Per-prefix mid-attack RTT lower bounds.
#[derive(Debug, Clone, Default)]
pub struct TauTable {
    map: HashMap<u32, f64>,
}

impl TauTable {
    pub fn insert(&mut self, prefix_key: u32, tau_mid_ms: f64) {
        self.map.insert(prefix_key, tau_mid_ms);
    }

    pub fn get(&self, prefix_key: u32) -> Option<f64> {
        self.map.get(&prefix_key).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.map.iter().map(|(k, v)| (*k, *v))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, DetectorError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut map = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let prefix = rec.get(0).ok_or_else(|| DetectorError::BadTauRow {
                row,
                detail: "missing prefix".into(),
            })?;
            let tau: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| DetectorError::BadTauRow {
                    row,
                    detail: "bad tau_mid_ms".into(),
                })?;
            let key = prefix_key_from_str(prefix).map_err(|e| DetectorError::BadTauRow {
                row,
                detail: e.to_string(),
            })?;
            map.insert(key, tau);
        }
        Ok(Self { map })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DetectorError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["#schema=rttwatch.tau-table.v1", ""])?;
        wtr.write_record(["prefix", "tau_mid_ms"])?;
        let mut rows: Vec<(u32, f64)> = self.iter().collect();
        rows.sort_by_key(|(k, _)| *k);
        for (k, tau) in rows {
            wtr.write_record([prefix_key_to_string(k), format!("{tau:.4}")])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Detected,
    UnblockedFp,
    ProbeSent,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::Detected => write!(f, "detected"),
            EventKind::UnblockedFp => write!(f, "unblocked_fp"),
            EventKind::ProbeSent => write!(f, "probe_sent"),
        }
    }
}

/// One entry of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvent {
    /// Detection events carry the end of the surging window (the
    /// changepoint); probe/unblock events carry their wall time.
    pub t_us: u64,
    pub prefix_key: u32,
    pub kind: EventKind,
    pub min_prev_ms: Option<f64>,
    pub min_cur_ms: Option<f64>,
    pub tau_mid_ms: f64,
    pub lambda_ms: f64,
}

pub fn write_events_csv<W: Write>(w: W, events: &[AttackEvent]) -> Result<(), DetectorError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["#schema=rttwatch.events.v1", "", "", "", "", "", ""])?;
    wtr.write_record(["t_us", "prefix", "kind", "min_prev_ms", "min_cur_ms", "tau_mid_ms", "lambda_ms"])?;
    for e in events {
        wtr.write_record([
            e.t_us.to_string(),
            prefix_key_to_string(e.prefix_key),
            e.kind.to_string(),
            e.min_prev_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
            e.min_cur_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
            format!("{:.3}", e.tau_mid_ms),
            format!("{:.3}", e.lambda_ms),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Result of applying one sample to a slot.
#[derive(Debug, Default, Clone, Copy)]
pub struct ObserveOutcome {
    /// Set when the rollover triggered by this sample detected a surge.
    pub surge: Option<SurgeHit>,
    pub out_of_order: bool,
    /// Set when the rollover completed a valid window (profiling or not).
    pub completed_valid_window: bool,
    /// End time of the completed window, when one completed.
    pub completed_window_end_us: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SurgeHit {
    pub min_prev_ms: f64,
    pub min_cur_ms: f64,
    /// The changepoint: end of the surging window.
    pub boundary_us: u64,
}

/// Rolls the slot's window forward to cover `now_us`.
///
/// The finished minimum becomes the previous-window minimum. If exactly
/// one window elapsed and both the old and the freshly finished window are
/// valid, the surge conditions are evaluated against `surge_params`
/// (`(tau_mid, lambda)`); profile statistics update from valid windows
/// while `profiling` holds and the prefix is not under mitigation.
pub fn roll_window(
    slot: &mut PrefixSlot,
    now_us: u64,
    cfg: &DetectorConfig,
    surge_params: Option<(f64, f64)>,
    profiling: bool,
) -> ObserveOutcome {
    let window_us = (cfg.window_s * 1e6) as u64;
    debug_assert!(now_us >= slot.t_window_start_us + window_us);
    let elapsed = (now_us - slot.t_window_start_us) / window_us;
    let cur_valid = slot.window_count >= cfg.min_samples_per_window;
    let boundary_us = slot.t_window_start_us + window_us;

    let mut outcome = ObserveOutcome::default();
    if cur_valid {
        outcome.completed_valid_window = true;
        outcome.completed_window_end_us = Some(boundary_us);
        if profiling && !slot.attacked {
            slot.max_of_min_ms = slot.max_of_min_ms.max(slot.min_rtt_cur_ms);
            slot.min_of_min_ms = slot.min_of_min_ms.min(slot.min_rtt_cur_ms);
            slot.valid_window_count += 1;
        }
    }

    if elapsed == 1 && slot.prev_valid && cur_valid && !slot.attacked {
        if let Some((tau, lambda)) = surge_params {
            if check_surge(slot.min_rtt_prev_ms, slot.min_rtt_cur_ms, tau, lambda) {
                outcome.surge = Some(SurgeHit {
                    min_prev_ms: slot.min_rtt_prev_ms,
                    min_cur_ms: slot.min_rtt_cur_ms,
                    boundary_us,
                });
            }
        }
    }

    slot.min_rtt_prev_ms = slot.min_rtt_cur_ms;
    // non-adjacent windows never compare: a gap invalidates the previous
    slot.prev_valid = cur_valid && elapsed == 1;
    slot.min_rtt_cur_ms = f64::INFINITY;
    slot.window_count = 0;
    slot.t_window_start_us += elapsed * window_us;
    outcome
}

/// Applies one sample to a slot, rolling the window first when the sample
/// crosses the boundary. Out-of-order samples are clamped to the slot's
/// last timestamp (preserving the minimum) and flagged.
pub fn observe_sample(
    slot: &mut PrefixSlot,
    sample: &RttSample,
    cfg: &DetectorConfig,
    surge_params: Option<(f64, f64)>,
    profiling: bool,
) -> ObserveOutcome {
    let mut t = sample.t_ack_us;
    let mut outcome = ObserveOutcome::default();
    if t < slot.t_last_us {
        t = slot.t_last_us;
        outcome.out_of_order = true;
    }
    let window_us = (cfg.window_s * 1e6) as u64;
    if t >= slot.t_window_start_us + window_us {
        let rolled = roll_window(slot, t, cfg, surge_params, profiling);
        outcome.surge = rolled.surge;
        outcome.completed_valid_window = rolled.completed_valid_window;
        outcome.completed_window_end_us = rolled.completed_window_end_us;
    }
    slot.t_last_us = t;
    slot.window_count += 1;
    if sample.rtt_ms < slot.min_rtt_cur_ms {
        slot.min_rtt_cur_ms = sample.rtt_ms;
    }
    outcome
}

/// A blocked prefix awaiting false-positive correction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockState {
    pub t_block_us: u64,
    pub next_probe_us: u64,
    pub probes_sent: u32,
    pub target: Option<Ipv4Addr>,
}

/// A probe the engine wants sent (transport is up to the caller: the
/// simulator synthesizes responses, a live deployment would send an ICMP
/// echo to the target).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRequest {
    pub t_us: u64,
    pub prefix_key: u32,
    pub target: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    pub samples: u64,
    pub out_of_order: u64,
    pub samples_while_blocked: u64,
    pub samples_without_tau: u64,
    pub valid_windows_profiling: u64,
    pub valid_windows_detection: u64,
    pub detections: u64,
    pub unblocks: u64,
    pub probes_sent: u64,
}

/// The streaming engine: state table, thresholds, block table, event log.
pub struct DetectionEngine {
    pub cfg: DetectorConfig,
    table: PrefixTable,
    tau: TauTable,
    /// Operator/vulnerability gating; `None` covers every prefix with a
    /// tau entry.
    covered: Option<std::collections::HashSet<u32>>,
    /// Profiling ends at this stream time; surge checks start after.
    profile_until_us: u64,
    /// Per-prefix overrides of the profiling boundary (trace replays split
    /// each prefix's own active span).
    profile_until_per_prefix: HashMap<u32, u64>,
    params: HashMap<u32, PrefixParams>,
    block: HashMap<u32, BlockState>,
    last_host: HashMap<u32, Ipv4Addr>,
    events: Vec<AttackEvent>,
    pub counters: EngineCounters,
}

impl DetectionEngine {
    pub fn new(cfg: DetectorConfig, tau: TauTable, profile_until_us: u64) -> Self {
        Self {
            cfg,
            table: PrefixTable::new(TableConfig::default()),
            tau,
            covered: None,
            profile_until_us,
            profile_until_per_prefix: HashMap::new(),
            params: HashMap::new(),
            block: HashMap::new(),
            last_host: HashMap::new(),
            events: Vec::new(),
            counters: EngineCounters::default(),
        }
    }

    pub fn with_table(mut self, table_cfg: TableConfig) -> Self {
        self.table = PrefixTable::new(table_cfg);
        self
    }

    /// Restricts detection to these prefixes (vulnerability gating).
    pub fn set_covered(&mut self, covered: std::collections::HashSet<u32>) {
        self.covered = Some(covered);
    }

    /// Profiling boundary for one specific prefix.
    pub fn set_profile_boundary(&mut self, prefix_key: u32, until_us: u64) {
        self.profile_until_per_prefix.insert(prefix_key, until_us);
    }

    /// Pins the thresholds for one prefix, bypassing profiling (used when
    /// the operator supplies pre-computed parameters).
    pub fn set_params(&mut self, prefix_key: u32, params: PrefixParams) {
        self.params.insert(prefix_key, params);
    }

    /// Records the most recently active host of a prefix (probe target).
    pub fn note_host(&mut self, prefix_key: u32, host: Ipv4Addr) {
        self.last_host.insert(prefix_key, host);
    }

    pub fn table(&self) -> &PrefixTable {
        &self.table
    }

    pub fn events(&self) -> &[AttackEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<AttackEvent> {
        self.events
    }

    pub fn blocked(&self) -> &HashMap<u32, BlockState> {
        &self.block
    }

    pub fn params(&self) -> &HashMap<u32, PrefixParams> {
        &self.params
    }

    pub fn profile_until_us(&self) -> u64 {
        self.profile_until_us
    }

    fn boundary_us(&self, key: u32) -> u64 {
        self.profile_until_per_prefix
            .get(&key)
            .copied()
            .unwrap_or(self.profile_until_us)
    }

    fn in_detection_phase(&self, key: u32, t_us: u64) -> bool {
        t_us >= self.boundary_us(key)
    }

    /// Freezes one prefix's thresholds from its profile (first
    /// detection-phase sample of the prefix triggers this).
    fn resolve_params(&mut self, key: u32) {
        if self.params.contains_key(&key) {
            return;
        }
        let Some(tau) = self.tau.get(key) else {
            return;
        };
        let profile = self
            .table
            .get(key)
            .map(ProfileStats::from_slot)
            .unwrap_or(ProfileStats {
                max_of_min_ms: f64::NEG_INFINITY,
                min_of_min_ms: f64::INFINITY,
                valid_window_count: 0,
            });
        let lambda = self.cfg.lambda.resolve(if profile.valid_window_count > 0 {
            profile.max_of_min_ms
        } else {
            0.0
        });
        let verdict = defendability(&profile, tau, lambda);
        self.params.insert(key, PrefixParams {
            tau_mid_ms: tau,
            lambda_ms: lambda,
            verdict,
        });
    }

    /// Feeds one sample; returns a detection event if this sample's
    /// rollover flagged the prefix.
    pub fn process(&mut self, sample: &RttSample) -> Option<AttackEvent> {
        self.counters.samples += 1;
        let key = sample.sig.key;
        let t = sample.t_ack_us;

        if self.block.contains_key(&key) {
            self.counters.samples_while_blocked += 1;
            return None;
        }

        let has_tau = self.tau.get(key).is_some();
        if !has_tau {
            self.counters.samples_without_tau += 1;
        }
        let gated_out = match &self.covered {
            Some(set) => !set.contains(&key),
            None => false,
        };

        let detection_phase = self.in_detection_phase(key, t);
        if detection_phase && has_tau {
            self.resolve_params(key);
        }
        let profiling = !detection_phase || self.cfg.continuous_profiling;
        let surge_params = if detection_phase && has_tau && !gated_out {
            self.params.get(&key).and_then(|p| {
                (p.verdict == DefendVerdict::Defendable).then_some((p.tau_mid_ms, p.lambda_ms))
            })
        } else {
            None
        };

        let boundary = self.boundary_us(key);
        let slot = self.table.access(sample.sig, t);
        let outcome = observe_sample(slot, sample, &self.cfg, surge_params, profiling);
        if outcome.out_of_order {
            self.counters.out_of_order += 1;
        }
        if outcome.completed_valid_window {
            if let Some(end) = outcome.completed_window_end_us {
                if end >= boundary {
                    self.counters.valid_windows_detection += 1;
                } else {
                    self.counters.valid_windows_profiling += 1;
                }
            }
        }

        let hit = outcome.surge?;
        let params = self.params.get(&key).copied()?;
        Some(self.mitigate_with(key, hit, params))
    }

    fn mitigate_with(&mut self, key: u32, hit: SurgeHit, params: PrefixParams) -> AttackEvent {
        self.counters.detections += 1;
        if let Some(slot) = self.table.get_mut(key) {
            slot.attacked = true;
        }
        let t_block = hit.boundary_us;
        let period = probe_schedule(0.0, &self.cfg);
        self.block.entry(key).or_insert(BlockState {
            t_block_us: t_block,
            next_probe_us: t_block + (period * 1e6) as u64,
            probes_sent: 0,
            target: self.last_host.get(&key).copied(),
        });
        let event = AttackEvent {
            t_us: t_block,
            prefix_key: key,
            kind: EventKind::Detected,
            min_prev_ms: Some(hit.min_prev_ms),
            min_cur_ms: Some(hit.min_cur_ms),
            tau_mid_ms: params.tau_mid_ms,
            lambda_ms: params.lambda_ms,
        };
        self.events.push(event.clone());
        event
    }

    /// Blocks a prefix outright (idempotent), as the mitigation step does
    /// on detection.
    pub fn mitigate(&mut self, prefix_key: u32, now_us: u64) {
        if self.block.contains_key(&prefix_key) {
            return;
        }
        if let Some(slot) = self.table.get_mut(prefix_key) {
            slot.attacked = true;
        }
        let period = probe_schedule(0.0, &self.cfg);
        self.block.insert(prefix_key, BlockState {
            t_block_us: now_us,
            next_probe_us: now_us + (period * 1e6) as u64,
            probes_sent: 0,
            target: self.last_host.get(&prefix_key).copied(),
        });
    }

    /// Emits every probe due at or before `now_us` (at most one per
    /// blocked prefix per call step; the caller advances time).
    pub fn advance_probes(&mut self, now_us: u64) -> Vec<ProbeRequest> {
        let mut due: Vec<ProbeRequest> = Vec::new();
        for (&key, st) in self.block.iter_mut() {
            while st.next_probe_us <= now_us {
                let t = st.next_probe_us;
                st.probes_sent += 1;
                due.push(ProbeRequest {
                    t_us: t,
                    prefix_key: key,
                    target: st.target,
                });
                let since_s = (t - st.t_block_us) as f64 / 1e6;
                let period = probe_schedule(since_s, &self.cfg);
                st.next_probe_us = t + (period * 1e6) as u64;
            }
        }
        due.sort_by_key(|p| (p.t_us, p.prefix_key));
        for p in &due {
            self.counters.probes_sent += 1;
            let params = self.params.get(&p.prefix_key);
            self.events.push(AttackEvent {
                t_us: p.t_us,
                prefix_key: p.prefix_key,
                kind: EventKind::ProbeSent,
                min_prev_ms: None,
                min_cur_ms: None,
                tau_mid_ms: params.map(|x| x.tau_mid_ms).unwrap_or(0.0),
                lambda_ms: params.map(|x| x.lambda_ms).unwrap_or(0.0),
            });
        }
        due
    }

    /// Probe response for a blocked prefix. A RTT below `tau_mid`
    /// unblocks it and fully resumes detection; a timeout (`None`) leaves
    /// it blocked.
    pub fn on_probe_rtt(
        &mut self,
        prefix_key: u32,
        probe_rtt_ms: Option<f64>,
        now_us: u64,
    ) -> Option<AttackEvent> {
        let rtt = probe_rtt_ms?;
        let params = self.params.get(&prefix_key).copied()?;
        if !self.block.contains_key(&prefix_key) {
            return None;
        }
        if rtt >= params.tau_mid_ms {
            return None;
        }
        self.block.remove(&prefix_key);
        self.counters.unblocks += 1;
        if let Some(slot) = self.table.get_mut(prefix_key) {
            slot.attacked = false;
            slot.min_rtt_cur_ms = f64::INFINITY;
            slot.min_rtt_prev_ms = f64::INFINITY;
            slot.prev_valid = false;
            slot.window_count = 0;
            slot.t_window_start_us = now_us;
            slot.t_last_us = now_us;
        }
        let event = AttackEvent {
            t_us: now_us,
            prefix_key,
            kind: EventKind::UnblockedFp,
            min_prev_ms: None,
            min_cur_ms: Some(rtt),
            tau_mid_ms: params.tau_mid_ms,
            lambda_ms: params.lambda_ms,
        };
        self.events.push(event.clone());
        Some(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rttsource::{prefix_signature, PrefixSignature, RttSample};

    fn sig() -> PrefixSignature {
        prefix_signature("203.0.113.5".parse().unwrap())
    }

    fn sample(t_us: u64, rtt_ms: f64) -> RttSample {
        RttSample {
            sig: sig(),
            flow_id: 0,
            t_ack_us: t_us,
            rtt_ms,
        }
    }

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    #[test]
    fn surge_rule_table() {
        assert!(check_surge(190.0, 215.0, 199.0, 5.0));
        assert!(!check_surge(190.0, 193.0, 199.0, 5.0)); // no crossing
        assert!(!check_surge(200.0, 230.0, 199.0, 5.0)); // prev already above
        assert!(!check_surge(190.0, 199.0, 199.0, 5.0)); // cur not strictly above
        assert!(!check_surge(195.0, 200.0, 199.0, 5.0)); // jump == lambda
    }

    #[test]
    fn defendability_rules() {
        let prof = |max, min, n| ProfileStats {
            max_of_min_ms: max,
            min_of_min_ms: min,
            valid_window_count: n,
        };
        // values from a realistic scenario: bound 199, benign max 190.5
        assert!(is_defendable(&prof(190.5, 150.0, 10), 199.0, 5.0));
        // exact equality is not defendable (strict inequality)
        assert!(!is_defendable(&prof(194.0, 150.0, 10), 199.0, 5.0));
        assert_eq!(
            defendability(&prof(194.0, 150.0, 10), 199.0, 5.0),
            DefendVerdict::HeadroomTooSmall
        );
        // quiet floor above the bound
        assert_eq!(
            defendability(&prof(260.0, 210.0, 10), 199.0, 5.0),
            DefendVerdict::FloorAboveTau
        );
        assert_eq!(
            defendability(&prof(f64::NEG_INFINITY, f64::INFINITY, 0), 199.0, 5.0),
            DefendVerdict::EmptyProfile
        );
    }

    #[test]
    fn lambda_fraction_resolves_against_profile_max() {
        assert_eq!(Lambda::Ms(7.5).resolve(100.0), 7.5);
        assert!((Lambda::FractionOfMax(0.10).resolve(190.0) - 19.0).abs() < 1e-12);
    }

    #[test]
    fn in_window_updates_min_and_count() {
        let mut slot = crate::prefixtable::PrefixTable::new(TableConfig::default())
            .access(sig(), 0)
            .clone();
        for (t, r) in [(0u64, 10.0), (50_000, 8.0), (100_000, 12.0)] {
            observe_sample(&mut slot, &sample(t, r), &cfg(), None, true);
        }
        assert_eq!(slot.window_count, 3);
        assert_eq!(slot.min_rtt_cur_ms, 8.0);
    }

    #[test]
    fn detection_fires_at_rollover_after_surged_window() {
        let c = cfg();
        let mut engine = {
            let mut tau = TauTable::default();
            tau.insert(sig().key, 199.0);
            DetectionEngine::new(c.clone(), tau, 0) // detection from t=0
        };
        // skip profiling: pin the thresholds directly
        engine.set_params(sig().key, PrefixParams {
            tau_mid_ms: 199.0,
            lambda_ms: 5.0,
            verdict: DefendVerdict::Defendable,
        });
        // window 0: six samples at 190; window 1: six at 215; window 2 first sample
        let mut events = Vec::new();
        for k in 0..6 {
            events.extend(engine.process(&sample(k * 40_000, 190.0)));
        }
        for k in 0..6 {
            events.extend(engine.process(&sample(250_000 + k * 40_000, 215.0)));
        }
        assert!(events.is_empty(), "no detection before window 1 closes");
        let hit = engine.process(&sample(500_000, 215.0));
        let ev = hit.expect("surge detected at the rollover of window 1");
        assert_eq!(ev.kind, EventKind::Detected);
        assert_eq!(ev.t_us, 500_000); // changepoint = end of window 1
        assert_eq!(ev.min_prev_ms, Some(190.0));
        assert_eq!(ev.min_cur_ms, Some(215.0));
        assert!(engine.blocked().contains_key(&sig().key));
        // samples while blocked are dropped
        assert!(engine.process(&sample(510_000, 215.0)).is_none());
        assert_eq!(engine.counters.samples_while_blocked, 1);
    }

    #[test]
    fn window_with_too_few_samples_is_invalid() {
        let c = cfg();
        let mut slot = crate::prefixtable::PrefixTable::new(TableConfig::default())
            .access(sig(), 0)
            .clone();
        // 4 samples only: window invalid
        for k in 0..4u64 {
            observe_sample(&mut slot, &sample(k * 50_000, 190.0), &c, None, true);
        }
        let out = roll_window(&mut slot, 250_000, &c, Some((199.0, 5.0)), true);
        assert!(!out.completed_valid_window);
        assert!(!slot.prev_valid);
        assert_eq!(slot.valid_window_count, 0);
        // next window surges but prev was invalid: no detection
        for k in 0..6u64 {
            observe_sample(&mut slot, &sample(260_000 + k * 30_000, 215.0), &c, Some((199.0, 5.0)), true);
        }
        let out = roll_window(&mut slot, 520_000, &c, Some((199.0, 5.0)), true);
        assert!(out.surge.is_none());
    }

    #[test]
    fn gap_invalidates_previous_window() {
        let c = cfg();
        let mut slot = crate::prefixtable::PrefixTable::new(TableConfig::default())
            .access(sig(), 0)
            .clone();
        for k in 0..6u64 {
            observe_sample(&mut slot, &sample(k * 40_000, 190.0), &c, None, true);
        }
        // next sample lands 3 windows later
        let out = observe_sample(&mut slot, &sample(1_000_000, 215.0), &c, Some((199.0, 5.0)), true);
        assert!(out.surge.is_none());
        assert!(!slot.prev_valid, "gap must invalidate the previous window");
    }

    #[test]
    fn attacked_prefix_freezes_profile() {
        let c = cfg();
        let mut slot = crate::prefixtable::PrefixTable::new(TableConfig::default())
            .access(sig(), 0)
            .clone();
        for k in 0..6u64 {
            observe_sample(&mut slot, &sample(k * 40_000, 190.0), &c, None, true);
        }
        roll_window(&mut slot, 250_000, &c, None, true);
        let before = slot.valid_window_count;
        assert_eq!(before, 1);
        slot.attacked = true;
        for k in 0..6u64 {
            observe_sample(&mut slot, &sample(260_000 + k * 30_000, 240.0), &c, None, true);
        }
        roll_window(&mut slot, 520_000, &c, None, true);
        assert_eq!(slot.valid_window_count, before, "attacked windows must not profile");
        assert!(slot.max_of_min_ms < 240.0);
    }

    #[test]
    fn out_of_order_sample_clamps_and_counts() {
        let c = cfg();
        let mut slot = crate::prefixtable::PrefixTable::new(TableConfig::default())
            .access(sig(), 0)
            .clone();
        observe_sample(&mut slot, &sample(100_000, 10.0), &c, None, true);
        let out = observe_sample(&mut slot, &sample(50_000, 9.0), &c, None, true);
        assert!(out.out_of_order);
        assert_eq!(slot.t_last_us, 100_000);
        assert_eq!(slot.min_rtt_cur_ms, 9.0, "clamping preserves the minimum");
    }

    #[test]
    fn vulnerable_selection_port_heuristic() {
        use Direction::*;
        let flows = vec![
            (1u32, Ciso),        // external server: included
            (2u32, Sico),        // access network only: excluded
            (3u32, Sico),
            (3u32, Ciso),        // mixed: included
        ];
        let v = select_vulnerable(flows.clone(), false);
        assert!(v.contains(&1) && v.contains(&3) && !v.contains(&2));
        let v_all = select_vulnerable(flows, true);
        assert!(v_all.contains(&2));
    }

    #[test]
    fn probe_schedule_steps_down_after_five_minutes() {
        let c = cfg();
        assert_eq!(probe_schedule(0.0, &c), 0.25);
        assert_eq!(probe_schedule(299.0, &c), 0.25);
        assert_eq!(probe_schedule(301.0, &c), 60.0);
    }

    #[test]
    fn unblock_on_low_probe_and_reattack_detectable() {
        let c = cfg();
        let mut tau = TauTable::default();
        tau.insert(sig().key, 199.0);
        let mut engine = DetectionEngine::new(c.clone(), tau, 0);
        engine.set_params(sig().key, PrefixParams {
            tau_mid_ms: 199.0,
            lambda_ms: 5.0,
            verdict: DefendVerdict::Defendable,
        });
        engine.note_host(sig().key, "203.0.113.77".parse().unwrap());

        let mut feed = |engine: &mut DetectionEngine, t0: u64, rtt: f64| -> Option<AttackEvent> {
            let mut ev = None;
            for k in 0..6u64 {
                ev = ev.or(engine.process(&sample(t0 + k * 40_000, rtt)));
            }
            ev
        };
        feed(&mut engine, 0, 190.0);
        feed(&mut engine, 250_000, 215.0);
        let ev = engine.process(&sample(500_000, 215.0)).expect("detected");
        assert_eq!(ev.kind, EventKind::Detected);

        // probes: first due one window after the block
        let due = engine.advance_probes(750_001);
        assert_eq!(due.len(), 1);
        assert_eq!(due[0].t_us, 750_000);
        assert_eq!(due[0].target, Some("203.0.113.77".parse().unwrap()));
        // probe rtt above tau: stays blocked
        assert!(engine.on_probe_rtt(sig().key, Some(200.0), 750_000).is_none());
        assert!(engine.blocked().contains_key(&sig().key));
        // timeout: stays blocked
        assert!(engine.on_probe_rtt(sig().key, None, 760_000).is_none());
        // probe rtt below tau: unblocks
        let ev = engine.on_probe_rtt(sig().key, Some(198.0), 1_000_000).expect("unblocked");
        assert_eq!(ev.kind, EventKind::UnblockedFp);
        assert!(!engine.blocked().contains_key(&sig().key));
        // re-attack after recovery is detected again
        feed(&mut engine, 1_000_000, 190.0);
        feed(&mut engine, 1_250_000, 230.0);
        let ev = engine.process(&sample(1_500_000, 230.0)).expect("re-detected");
        assert_eq!(ev.kind, EventKind::Detected);
    }

    #[test]
    fn double_mitigate_is_idempotent() {
        let mut engine = DetectionEngine::new(cfg(), TauTable::default(), 0);
        engine.mitigate(42, 1_000);
        let st = *engine.blocked().get(&42).unwrap();
        engine.mitigate(42, 2_000);
        assert_eq!(engine.blocked().get(&42).unwrap().t_block_us, st.t_block_us);
    }

    #[test]
    fn tau_table_round_trip() {
        let mut tau = TauTable::default();
        tau.insert(0xcb0071, 199.0);
        tau.insert(0x080808, 135.5);
        let mut buf = Vec::new();
        tau.write_csv(&mut buf).unwrap();
        let back = TauTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.get(0xcb0071), Some(199.0));
        assert_eq!(back.get(0x080808), Some(135.5));
    }
}
