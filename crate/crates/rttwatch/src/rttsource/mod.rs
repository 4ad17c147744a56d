//! RTT sample streams: passive extraction from packet captures
//! (data/ACK matching), CSV replay, direction classification, and the
//! prefix signature scheme shared with the state table.

mod csvio;
mod extract;
mod pcap;

pub use csvio::{read_flow_map, read_samples_csv, write_flow_map, write_samples_csv, CsvReadReport, FlowGeo, FlowMap};
pub use extract::{extract_rtt_samples, ExtractStats, RttExtractor};
pub use pcap::{build_tcp_frame, PcapError, PcapPacket, PcapReader, PcapWriter, TcpMeta};

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slots in the per-prefix state table; signature indexes address it.
pub const TABLE_SLOTS: usize = 65_536;

/// Default hash seeds: the first one defines [`prefix_signature`] indexes,
/// the rest drive relocation in the state table.
pub const DEFAULT_HASH_SEEDS: [u64; 2] = [0x5157_7461_7263_6801, 0x9e37_79b9_7f4a_7c15];

#[derive(Debug, Error)]
pub enum RttSourceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("samples not sorted by timestamp at row {row}")]
    UnsortedSamples { row: usize },
    #[error("bad csv field at row {row}: {detail}")]
    BadField { row: usize, detail: String },
    #[error("flow has no endpoint in the internal prefix")]
    NoInternalEndpoint,
    #[error("flow has no external endpoint")]
    NoExternalEndpoint,
    #[error("bad prefix spec {0:?}")]
    BadPrefix(String),
}

/// An IPv4 prefix such as `10.0.0.0/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Prefix {
    addr: u32,
    len: u8,
}

impl Ipv4Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, RttSourceError> {
        if len > 32 {
            return Err(RttSourceError::BadPrefix(format!("{addr}/{len}")));
        }
        let mask = Self::mask(len);
        Ok(Self {
            addr: u32::from(addr) & mask,
            len,
        })
    }

    pub fn parse(s: &str) -> Result<Self, RttSourceError> {
        let (ip, len) = s
            .split_once('/')
            .ok_or_else(|| RttSourceError::BadPrefix(s.to_string()))?;
        let addr: Ipv4Addr = ip
            .parse()
            .map_err(|_| RttSourceError::BadPrefix(s.to_string()))?;
        let len: u8 = len
            .parse()
            .map_err(|_| RttSourceError::BadPrefix(s.to_string()))?;
        Self::new(addr, len)
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - len)
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        (u32::from(ip) & Self::mask(self.len)) == self.addr
    }
}

impl std::fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

/// Identity of a destination /24 in the state table: a table index plus
/// the 24-bit prefix key stored for exact matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefixSignature {
    pub index: u16,
    /// Top 24 bits of the external address.
    pub key: u32,
}

/// splitmix64; deterministic across runs and platforms.
fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Table index for a prefix key under a hash seed.
pub fn sig_hash(key: u32, seed: u64) -> u16 {
    (mix64(key as u64 ^ seed) & (TABLE_SLOTS as u64 - 1)) as u16
}

/// Signature of the /24 containing `external_ip`.
pub fn prefix_signature(external_ip: Ipv4Addr) -> PrefixSignature {
    let key = u32::from(external_ip) >> 8;
    PrefixSignature {
        index: sig_hash(key, DEFAULT_HASH_SEEDS[0]),
        key,
    }
}

/// Dotted form of a 24-bit prefix key, e.g. `203.0.113.0/24`.
pub fn prefix_key_to_string(key: u32) -> String {
    format!("{}/24", Ipv4Addr::from(key << 8))
}

/// Parses `a.b.c.0/24` (or a bare address) into a 24-bit prefix key.
pub fn prefix_key_from_str(s: &str) -> Result<u32, RttSourceError> {
    let ip_part = s.split('/').next().unwrap_or(s);
    let addr: Ipv4Addr = ip_part
        .parse()
        .map_err(|_| RttSourceError::BadPrefix(s.to_string()))?;
    Ok(u32::from(addr) >> 8)
}

/// One passive RTT measurement for a destination prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttSample {
    pub sig: PrefixSignature,
    pub flow_id: u64,
    /// Capture timestamp of the matching ACK, microseconds.
    pub t_ack_us: u64,
    pub rtt_ms: f64,
}

/// A TCP five-tuple, canonicalized so the internal host is the `src` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    /// Canonicalizes an observed tuple against the internal prefix.
    /// Returns the canonical key (internal endpoint as src) and whether
    /// the original tuple was already in that orientation.
    pub fn canonicalize(
        src_ip: Ipv4Addr,
        dst_ip: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        protocol: u8,
        internal: &Ipv4Prefix,
    ) -> Result<(Self, bool), RttSourceError> {
        let src_internal = internal.contains(src_ip);
        let dst_internal = internal.contains(dst_ip);
        match (src_internal, dst_internal) {
            (true, false) => Ok((
                Self { src_ip, dst_ip, src_port, dst_port, protocol },
                true,
            )),
            (false, true) => Ok((
                Self {
                    src_ip: dst_ip,
                    dst_ip: src_ip,
                    src_port: dst_port,
                    dst_port: src_port,
                    protocol,
                },
                false,
            )),
            (false, false) => Err(RttSourceError::NoInternalEndpoint),
            (true, true) => Err(RttSourceError::NoExternalEndpoint),
        }
    }

    pub fn external_ip(&self) -> Ipv4Addr {
        self.dst_ip
    }

    pub fn internal_port(&self) -> u16 {
        self.src_port
    }

    pub fn external_port(&self) -> u16 {
        self.dst_port
    }
}

/// Flow direction relative to the defended network edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Client inside, server outside.
    Ciso,
    /// Server inside, client outside.
    Sico,
}

/// Port-heuristic direction classification for a canonicalized flow.
/// Ambiguous port patterns default to CISO.
pub fn classify_direction(flow: &FlowKey, internal: &Ipv4Prefix) -> Result<Direction, RttSourceError> {
    if !internal.contains(flow.src_ip) {
        return Err(RttSourceError::NoInternalEndpoint);
    }
    let internal_port = flow.internal_port();
    let external_port = flow.external_port();
    if internal_port < 1024 && external_port >= 1024 {
        Ok(Direction::Sico)
    } else if external_port < 1024 && internal_port >= 1024 {
        Ok(Direction::Ciso)
    } else {
        Ok(Direction::Ciso)
    }
}
