//! Fixed-capacity per-prefix state store mirroring a switch register
//! table: direct-indexed slots keyed by a 24-bit prefix, cuckoo-style
//! relocation under a small set of hash seeds, and idle-timeout
//! reclamation evaluated lazily on access (hardware has no sweeper; the
//! periodic scan is an operator convenience).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::rttsource::{sig_hash, PrefixSignature, DEFAULT_HASH_SEEDS, TABLE_SLOTS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableConfig {
    pub slots: usize,
    pub hash_seeds: Vec<u64>,
    pub max_recirculations: u32,
    pub timeout_s: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            slots: TABLE_SLOTS,
            hash_seeds: DEFAULT_HASH_SEEDS.to_vec(),
            max_recirculations: 3,
            timeout_s: 5.0,
        }
    }
}

/// Per-prefix detection state, one slot per active /24.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrefixSlot {
    pub key: u32,
    pub t_first_us: u64,
    pub t_last_us: u64,
    pub t_window_start_us: u64,
    pub window_count: u32,
    pub min_rtt_cur_ms: f64,
    pub min_rtt_prev_ms: f64,
    pub prev_valid: bool,
    pub attacked: bool,
    /// Profile: largest window minimum seen in valid windows.
    pub max_of_min_ms: f64,
    /// Profile: smallest window minimum seen in valid windows.
    pub min_of_min_ms: f64,
    /// Profile: number of valid windows that contributed.
    pub valid_window_count: u32,
}

impl PrefixSlot {
    fn fresh(key: u32, now_us: u64) -> Self {
        Self {
            key,
            t_first_us: now_us,
            t_last_us: now_us,
            t_window_start_us: now_us,
            window_count: 0,
            min_rtt_cur_ms: f64::INFINITY,
            min_rtt_prev_ms: f64::INFINITY,
            prev_valid: false,
            attacked: false,
            max_of_min_ms: f64::NEG_INFINITY,
            min_of_min_ms: f64::INFINITY,
            valid_window_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounters {
    pub accesses: u64,
    pub inserts: u64,
    pub recirculations: u64,
    pub drops: u64,
    pub timeout_reclaims: u64,
}

pub struct PrefixTable {
    cfg: TableConfig,
    slots: Vec<Option<PrefixSlot>>,
    pub counters: TableCounters,
}

impl PrefixTable {
    pub fn new(cfg: TableConfig) -> Self {
        assert!(cfg.slots.is_power_of_two(), "slot count must be a power of two");
        assert!(cfg.hash_seeds.len() >= 2, "need at least two hash seeds");
        assert!(cfg.max_recirculations >= 1);
        let slots = vec![None; cfg.slots];
        Self {
            cfg,
            slots,
            counters: TableCounters::default(),
        }
    }

    pub fn config(&self) -> &TableConfig {
        &self.cfg
    }

    fn index(&self, key: u32, seed_no: usize) -> usize {
        (sig_hash(key, self.cfg.hash_seeds[seed_no]) as usize) & (self.cfg.slots - 1)
    }

    fn timed_out(&self, slot: &PrefixSlot, now_us: u64) -> bool {
        now_us.saturating_sub(slot.t_last_us) > (self.cfg.timeout_s * 1e6) as u64
    }

    /// Finds or inserts the slot for `sig`, relocating colliding residents
    /// under alternate seeds, up to the recirculation budget. When the
    /// budget is exhausted the displaced resident is dropped (counted).
    pub fn access(&mut self, sig: PrefixSignature, now_us: u64) -> &mut PrefixSlot {
        self.counters.accesses += 1;
        debug_assert!(
            self.cfg.slots != TABLE_SLOTS
                || self.cfg.hash_seeds[0] != DEFAULT_HASH_SEEDS[0]
                || self.index(sig.key, 0) == sig.index as usize,
            "signature index disagrees with table hashing"
        );

        // lookup under every seed first
        let mut found: Option<usize> = None;
        for s in 0..self.cfg.hash_seeds.len() {
            let idx = self.index(sig.key, s);
            if let Some(slot) = &self.slots[idx] {
                if slot.key == sig.key {
                    found = Some(idx);
                    break;
                }
            }
        }
        if let Some(idx) = found {
            return self.slots[idx].as_mut().expect("present");
        }

        // insert at the primary index, displacing the resident if needed
        self.counters.inserts += 1;
        let home = self.index(sig.key, 0);
        let displaced = self.slots[home].replace(PrefixSlot::fresh(sig.key, now_us));
        if let Some(old) = displaced {
            if self.timed_out(&old, now_us) {
                self.counters.timeout_reclaims += 1;
            } else {
                self.relocate(old, home, now_us);
            }
        }
        self.slots[home].as_mut().expect("just inserted")
    }

    /// Moves a displaced resident to one of its alternate indexes,
    /// chaining further displacements within the recirculation budget.
    fn relocate(&mut self, mut entry: PrefixSlot, mut came_from: usize, now_us: u64) {
        for _ in 0..self.cfg.max_recirculations {
            self.counters.recirculations += 1;
            // next index in the seed cycle after the one it occupied
            let positions: Vec<usize> = (0..self.cfg.hash_seeds.len())
                .map(|s| self.index(entry.key, s))
                .collect();
            let cur_pos = positions.iter().position(|&p| p == came_from).unwrap_or(0);
            let target = positions[(cur_pos + 1) % positions.len()];
            if target == came_from {
                // all seeds map to the same slot; nowhere to go
                break;
            }
            match &self.slots[target] {
                None => {
                    self.slots[target] = Some(entry);
                    return;
                }
                Some(resident) if self.timed_out(resident, now_us) => {
                    self.counters.timeout_reclaims += 1;
                    self.slots[target] = Some(entry);
                    return;
                }
                Some(_) => {
                    let next = self.slots[target].replace(entry).expect("occupied");
                    entry = next;
                    came_from = target;
                }
            }
        }
        self.counters.drops += 1;
    }

    /// Read-only lookup without insertion.
    pub fn get(&self, key: u32) -> Option<&PrefixSlot> {
        for s in 0..self.cfg.hash_seeds.len() {
            let idx = self.index(key, s);
            if let Some(slot) = &self.slots[idx] {
                if slot.key == key {
                    return Some(slot);
                }
            }
        }
        None
    }

    pub fn get_mut(&mut self, key: u32) -> Option<&mut PrefixSlot> {
        let mut at = None;
        for s in 0..self.cfg.hash_seeds.len() {
            let idx = self.index(key, s);
            if matches!(&self.slots[idx], Some(slot) if slot.key == key) {
                at = Some(idx);
                break;
            }
        }
        at.and_then(move |idx| self.slots[idx].as_mut())
    }

    /// Clears every slot idle past the timeout; returns how many.
    pub fn expire_scan(&mut self, now_us: u64) -> usize {
        let timeout_us = (self.cfg.timeout_s * 1e6) as u64;
        let mut reclaimed = 0;
        for slot in self.slots.iter_mut() {
            if let Some(s) = slot {
                if now_us.saturating_sub(s.t_last_us) > timeout_us {
                    *slot = None;
                    reclaimed += 1;
                }
            }
        }
        self.counters.timeout_reclaims += reclaimed as u64;
        reclaimed
    }

    pub fn live_len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn iter_live(&self) -> impl Iterator<Item = &PrefixSlot> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }

    /// Diagnostic CSV dump of live slots.
    pub fn dump_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "#schema=rttwatch.slots.v1", "", "", "", "", "", "", "", "",
        ])?;
        wtr.write_record([
            "prefix",
            "t_first_us",
            "t_last_us",
            "t_window_start_us",
            "window_count",
            "min_rtt_cur_ms",
            "min_rtt_prev_ms",
            "attacked",
            "valid_windows",
        ])?;
        for s in self.iter_live() {
            wtr.write_record([
                crate::rttsource::prefix_key_to_string(s.key),
                s.t_first_us.to_string(),
                s.t_last_us.to_string(),
                s.t_window_start_us.to_string(),
                s.window_count.to_string(),
                format!("{:.3}", s.min_rtt_cur_ms),
                format!("{:.3}", s.min_rtt_prev_ms),
                (s.attacked as u8).to_string(),
                s.valid_window_count.to_string(),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn sig_for(key: u32, cfg: &TableConfig) -> PrefixSignature {
        PrefixSignature {
            index: sig_hash(key, cfg.hash_seeds[0]),
            key,
        }
    }

    fn small_cfg() -> TableConfig {
        TableConfig {
            slots: TABLE_SLOTS,
            ..TableConfig::default()
        }
    }

    #[test]
    fn insert_then_access_preserves_state() {
        let cfg = small_cfg();
        let mut t = PrefixTable::new(cfg.clone());
        let sig = sig_for(0x0a0b0c, &cfg);
        {
            let slot = t.access(sig, 1_000_000);
            slot.min_rtt_cur_ms = 42.0;
            slot.window_count = 3;
        }
        let slot = t.access(sig, 2_000_000);
        assert_eq!(slot.min_rtt_cur_ms, 42.0);
        assert_eq!(slot.window_count, 3);
        assert_eq!(t.counters.inserts, 1);
    }

    #[test]
    fn idle_resident_is_replaced_after_timeout() {
        let cfg = small_cfg();
        let mut t = PrefixTable::new(cfg.clone());
        // two keys mapping to the same primary index
        let a = 0x000001u32;
        let b = (1..0xff_ffff)
            .find(|&k| k != a && sig_hash(k, cfg.hash_seeds[0]) == sig_hash(a, cfg.hash_seeds[0]))
            .unwrap();
        t.access(sig_for(a, &cfg), 0);
        // b arrives 6 s later; a has been idle past the 5 s timeout
        t.access(sig_for(b, &cfg), 6_000_001);
        assert_eq!(t.counters.timeout_reclaims, 1);
        assert_eq!(t.counters.recirculations, 0);
        assert!(t.get(a).is_none());
        assert!(t.get(b).is_some());
    }

    #[test]
    fn collision_relocates_resident() {
        let cfg = small_cfg();
        let mut t = PrefixTable::new(cfg.clone());
        let a = 0x000001u32;
        let b = (1..0xff_ffff)
            .find(|&k| k != a && sig_hash(k, cfg.hash_seeds[0]) == sig_hash(a, cfg.hash_seeds[0]))
            .unwrap();
        t.access(sig_for(a, &cfg), 0).min_rtt_cur_ms = 7.0;
        t.access(sig_for(b, &cfg), 1_000);
        // both live: a moved to its alternate index
        assert_eq!(t.get(a).unwrap().min_rtt_cur_ms, 7.0);
        assert!(t.get(b).is_some());
        assert_eq!(t.counters.recirculations, 1);
        assert_eq!(t.counters.drops, 0);
    }

    /// Three keys whose two hash indexes form the same two-slot set force
    /// a relocation cycle that must stop at the budget and drop one entry.
    #[test]
    fn constructed_collision_cycle_drops_after_budget() {
        let cfg = small_cfg();
        // search for three keys with identical {h0, h1} index sets
        let mut by_pair: HashMap<(u16, u16), Vec<u32>> = HashMap::new();
        let mut triple: Option<Vec<u32>> = None;
        for key in 0..0xff_ffffu32 {
            let h0 = sig_hash(key, cfg.hash_seeds[0]);
            let h1 = sig_hash(key, cfg.hash_seeds[1]);
            if h0 == h1 {
                continue;
            }
            let pair = if h0 < h1 { (h0, h1) } else { (h1, h0) };
            let v = by_pair.entry(pair).or_default();
            v.push(key);
            if v.len() == 3 {
                triple = Some(v.clone());
                break;
            }
        }
        let keys = triple.expect("three mutually colliding keys exist in the /24 space");
        let mut t = PrefixTable::new(cfg.clone());
        for &k in &keys {
            t.access(sig_for(k, &cfg), 1_000);
        }
        assert_eq!(t.counters.drops, 1, "exactly one entry dropped");
        assert!(t.counters.recirculations <= 1 + 1 + cfg.max_recirculations as u64);
        // exactly two of the three are live
        let live = keys.iter().filter(|&&k| t.get(k).is_some()).count();
        assert_eq!(live, 2);
        // the dropped prefix re-inserts cleanly on next access
        let dropped = *keys.iter().find(|&&k| t.get(k).is_none()).unwrap();
        t.access(sig_for(dropped, &cfg), 2_000);
        assert!(t.get(dropped).is_some());
    }

    #[test]
    fn expire_scan_reclaims_stale_slots() {
        let cfg = small_cfg();
        let mut t = PrefixTable::new(cfg.clone());
        assert_eq!(t.expire_scan(10_000_000), 0);
        t.access(sig_for(1, &cfg), 0);
        t.access(sig_for(2, &cfg), 8_000_000);
        assert_eq!(t.expire_scan(10_000_000), 1); // key 1 idle > 5 s
        assert!(t.get(1).is_none());
        assert!(t.get(2).is_some());
    }

    /// Shadow-map differential: under modest load with unique primary
    /// indexes, the bounded table is indistinguishable from an unbounded
    /// exact map.
    #[test]
    fn shadow_map_differential_small() {
        let cfg = small_cfg();
        let mut table = PrefixTable::new(cfg.clone());
        let mut shadow: HashMap<u32, (u64, f64)> = HashMap::new(); // key -> (t_last, min)

        // unique primary indexes, below half load
        let mut keys = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut k = 1u32;
        while keys.len() < 20_000 {
            let h = sig_hash(k, cfg.hash_seeds[0]);
            if seen.insert(h) {
                keys.push(k);
            }
            k += 7;
        }

        let mut rng_state = 0xabcdefu64;
        let mut rng = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        let mut now = 0u64;
        for _ in 0..100_000 {
            now += rng() % 500; // well under the idle timeout
            let key = keys[(rng() % keys.len() as u64) as usize];
            let rtt = (rng() % 100_000) as f64 / 1000.0;
            let slot = table.access(sig_for(key, &cfg), now);
            slot.t_last_us = now;
            slot.min_rtt_cur_ms = slot.min_rtt_cur_ms.min(rtt);
            let e = shadow.entry(key).or_insert((now, f64::INFINITY));
            e.0 = now;
            e.1 = e.1.min(rtt);
        }
        assert_eq!(table.counters.drops, 0);
        assert_eq!(table.live_len(), shadow.len());
        for (key, (t_last, min)) in &shadow {
            let slot = table.get(*key).expect("key live in table");
            assert_eq!(slot.t_last_us, *t_last);
            assert_eq!(slot.min_rtt_cur_ms, *min);
        }
    }
}
