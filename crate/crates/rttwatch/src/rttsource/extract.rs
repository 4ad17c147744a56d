//! Passive RTT extraction by matching outbound data segments against the
//! first inbound ACK that covers them.
//!
//! Only the external leg is measured: a pending entry is created for each
//! outbound segment that consumes sequence space (payload, or SYN/SYN-ACK
//! which also yields a handshake sample), and retired by inbound ACKs.
//! Matching rules, in order:
//!
//! * an inbound ACK retires every pending entry it covers, but emits at
//!   most one sample: the exact-match entry when present, otherwise the
//!   lowest covered entry (cumulative ACK);
//! * a retransmitted segment (same expected ACK while one is pending)
//!   poisons its entry: the entry is still retired by a covering ACK but
//!   never emits a sample;
//! * the per-flow pending list is capped; the oldest entry falls off.

use std::collections::HashMap;
use std::io::Read;

use super::pcap::{PcapPacket, PcapReader, TcpMeta};
use super::{prefix_signature, FlowKey, Ipv4Prefix, RttSample, RttSourceError};

const MAX_PENDING_PER_FLOW: usize = 64;

#[derive(Debug, Clone, Copy)]
struct Pending {
    expected_ack: u32,
    t_data_us: u64,
    /// Karn rule: set when the segment was retransmitted.
    poisoned: bool,
}

struct FlowState {
    flow_id: u64,
    pending: Vec<Pending>,
}

/// Counters describing what extraction did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub frames: u64,
    pub skipped_unparseable: u64,
    pub skipped_non_internal: u64,
    pub data_segments: u64,
    pub retransmissions: u64,
    pub pending_evicted: u64,
    pub samples: u64,
    pub zero_rtt_dropped: u64,
}

/// Streaming data/ACK matcher.
pub struct RttExtractor {
    internal: Ipv4Prefix,
    flows: HashMap<FlowKey, FlowState>,
    next_flow_id: u64,
    pub stats: ExtractStats,
}

/// `lhs <= rhs` in 32-bit sequence space.
fn seq_le(lhs: u32, rhs: u32) -> bool {
    rhs.wrapping_sub(lhs) < 0x8000_0000
}

impl RttExtractor {
    pub fn new(internal: Ipv4Prefix) -> Self {
        Self {
            internal,
            flows: HashMap::new(),
            next_flow_id: 0,
            stats: ExtractStats::default(),
        }
    }

    /// Feeds one captured frame; returns a sample when an ACK matches.
    pub fn on_packet(&mut self, pkt: &PcapPacket) -> Option<RttSample> {
        self.stats.frames += 1;
        let Some(tcp) = pkt.tcp else {
            self.stats.skipped_unparseable += 1;
            return None;
        };
        if tcp.rst {
            return None;
        }
        let Ok((key, outbound)) = FlowKey::canonicalize(
            tcp.src_ip,
            tcp.dst_ip,
            tcp.src_port,
            tcp.dst_port,
            6,
            &self.internal,
        ) else {
            self.stats.skipped_non_internal += 1;
            return None;
        };
        let next_id = &mut self.next_flow_id;
        let state = self.flows.entry(key).or_insert_with(|| {
            let id = *next_id;
            *next_id += 1;
            FlowState {
                flow_id: id,
                pending: Vec::new(),
            }
        });

        if outbound {
            Self::on_outbound(&mut self.stats, state, &tcp, pkt.t_us);
            None
        } else {
            Self::on_inbound_ack(&mut self.stats, state, &key, &tcp, pkt.t_us)
        }
    }

    fn on_outbound(stats: &mut ExtractStats, state: &mut FlowState, tcp: &TcpMeta, t_us: u64) {
        let consumed = tcp.payload_len + if tcp.syn { 1 } else { 0 };
        if consumed == 0 {
            return; // pure ACK or window update
        }
        stats.data_segments += 1;
        let expected = tcp.seq.wrapping_add(consumed);
        if let Some(entry) = state.pending.iter_mut().find(|p| p.expected_ack == expected) {
            // same sequence range again: retransmission
            entry.poisoned = true;
            entry.t_data_us = t_us;
            stats.retransmissions += 1;
            return;
        }
        if state.pending.len() >= MAX_PENDING_PER_FLOW {
            state.pending.remove(0);
            stats.pending_evicted += 1;
        }
        state.pending.push(Pending {
            expected_ack: expected,
            t_data_us: t_us,
            poisoned: false,
        });
    }

    fn on_inbound_ack(
        stats: &mut ExtractStats,
        state: &mut FlowState,
        key: &FlowKey,
        tcp: &TcpMeta,
        t_us: u64,
    ) -> Option<RttSample> {
        if !tcp.ack {
            return None;
        }
        let ack = tcp.ack_no;
        let mut chosen: Option<Pending> = None;
        for p in state.pending.iter() {
            if !seq_le(p.expected_ack, ack) {
                continue;
            }
            let better = match chosen {
                None => true,
                Some(c) => {
                    if p.expected_ack == ack && c.expected_ack != ack {
                        true
                    } else if c.expected_ack == ack {
                        false
                    } else {
                        // cumulative ACK: lowest covered entry wins
                        seq_le(p.expected_ack, c.expected_ack) && p.expected_ack != c.expected_ack
                    }
                }
            };
            if better {
                chosen = Some(*p);
            }
        }
        state.pending.retain(|p| !seq_le(p.expected_ack, ack));
        let hit = chosen?;
        if hit.poisoned {
            return None;
        }
        if t_us <= hit.t_data_us {
            stats.zero_rtt_dropped += 1;
            return None;
        }
        stats.samples += 1;
        Some(RttSample {
            sig: prefix_signature(key.external_ip()),
            flow_id: state.flow_id,
            t_ack_us: t_us,
            rtt_ms: (t_us - hit.t_data_us) as f64 / 1000.0,
        })
    }

    /// External IP per flow id, for probe targeting and flow maps.
    pub fn flow_table(&self) -> Vec<(u64, FlowKey)> {
        let mut v: Vec<(u64, FlowKey)> = self
            .flows
            .iter()
            .map(|(k, s)| (s.flow_id, *k))
            .collect();
        v.sort_by_key(|(id, _)| *id);
        v
    }
}

/// Reads a capture and extracts all RTT samples in stream order.
pub fn extract_rtt_samples<R: Read>(
    reader: R,
    internal: Ipv4Prefix,
) -> Result<(Vec<RttSample>, ExtractStats, Vec<(u64, FlowKey)>), RttSourceError> {
    let pcap = PcapReader::new(reader).map_err(|e| match e {
        super::pcap::PcapError::Io(io) => RttSourceError::Io(io),
        other => RttSourceError::BadField {
            row: 0,
            detail: other.to_string(),
        },
    })?;
    let mut ex = RttExtractor::new(internal);
    let mut out = Vec::new();
    for pkt in pcap {
        let pkt = pkt.map_err(|e| match e {
            super::pcap::PcapError::Io(io) => RttSourceError::Io(io),
            other => RttSourceError::BadField {
                row: 0,
                detail: other.to_string(),
            },
        })?;
        if let Some(s) = ex.on_packet(&pkt) {
            out.push(s);
        }
    }
    let flows = ex.flow_table();
    Ok((out, ex.stats, flows))
}
