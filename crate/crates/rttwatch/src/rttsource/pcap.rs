//! Minimal legacy-pcap reader/writer for Ethernet/IPv4/TCP traffic.
//! The writer exists so tests and tools can build synthetic captures with
//! exactly known timing.

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use thiserror::Error;

const PCAP_MAGIC_US: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NS: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a pcap file (magic {0:#x})")]
    BadMagic(u32),
    #[error("unsupported link type {0}")]
    BadLinkType(u32),
}

/// TCP header fields the extractor needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpMeta {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack_no: u32,
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
    pub rst: bool,
    pub payload_len: u32,
}

/// One captured frame: timestamp plus parsed TCP metadata when the frame
/// is Ethernet/IPv4/TCP, `None` otherwise.
#[derive(Debug, Clone)]
pub struct PcapPacket {
    pub t_us: u64,
    pub tcp: Option<TcpMeta>,
}

pub struct PcapReader<R: Read> {
    r: R,
    ns_resolution: bool,
    swapped: bool,
    /// Frames that were not parseable TCP (non-IP, truncated, non-TCP).
    pub skipped: u64,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut r: R) -> Result<Self, PcapError> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let (swapped, ns) = match magic {
            PCAP_MAGIC_US => (false, false),
            PCAP_MAGIC_NS => (false, true),
            m if m.swap_bytes() == PCAP_MAGIC_US => (true, false),
            m if m.swap_bytes() == PCAP_MAGIC_NS => (true, true),
            m => return Err(PcapError::BadMagic(m)),
        };
        let link = read_u32(&header[20..24], swapped);
        if link != LINKTYPE_ETHERNET {
            return Err(PcapError::BadLinkType(link));
        }
        Ok(Self {
            r,
            ns_resolution: ns,
            swapped,
            skipped: 0,
            done: false,
        })
    }

    fn next_packet(&mut self) -> Result<Option<PcapPacket>, PcapError> {
        if self.done {
            return Ok(None);
        }
        let mut rec = [0u8; 16];
        match self.r.read_exact(&mut rec) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                self.done = true;
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        }
        let ts_sec = read_u32(&rec[0..4], self.swapped) as u64;
        let ts_frac = read_u32(&rec[4..8], self.swapped) as u64;
        let incl_len = read_u32(&rec[8..12], self.swapped) as usize;
        let mut data = vec![0u8; incl_len];
        self.r.read_exact(&mut data)?;
        let t_us = if self.ns_resolution {
            ts_sec * 1_000_000 + ts_frac / 1000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        let tcp = parse_ethernet_ipv4_tcp(&data);
        if tcp.is_none() {
            self.skipped += 1;
        }
        Ok(Some(PcapPacket { t_us, tcp }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PcapPacket, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

fn read_u32(b: &[u8], swapped: bool) -> u32 {
    let v = u32::from_le_bytes(b.try_into().unwrap());
    if swapped {
        v.swap_bytes()
    } else {
        v
    }
}

fn parse_ethernet_ipv4_tcp(frame: &[u8]) -> Option<TcpMeta> {
    if frame.len() < 14 {
        return None;
    }
    let mut off = 12;
    let mut ethertype = u16::from_be_bytes([frame[off], frame[off + 1]]);
    off += 2;
    // single 802.1Q tag
    if ethertype == 0x8100 {
        if frame.len() < off + 4 {
            return None;
        }
        ethertype = u16::from_be_bytes([frame[off + 2], frame[off + 3]]);
        off += 4;
    }
    if ethertype != 0x0800 {
        return None;
    }
    let ip = &frame[off..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ip[9] != 6 || total_len < ihl || ip.len() < total_len {
        return None;
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let tcp = &ip[ihl..total_len];
    if tcp.len() < 20 {
        return None;
    }
    let doff = ((tcp[12] >> 4) as usize) * 4;
    if doff < 20 || tcp.len() < doff {
        return None;
    }
    let flags = tcp[13];
    Some(TcpMeta {
        src_ip,
        dst_ip,
        src_port: u16::from_be_bytes([tcp[0], tcp[1]]),
        dst_port: u16::from_be_bytes([tcp[2], tcp[3]]),
        seq: u32::from_be_bytes([tcp[4], tcp[5], tcp[6], tcp[7]]),
        ack_no: u32::from_be_bytes([tcp[8], tcp[9], tcp[10], tcp[11]]),
        syn: flags & 0x02 != 0,
        ack: flags & 0x10 != 0,
        fin: flags & 0x01 != 0,
        rst: flags & 0x04 != 0,
        payload_len: (total_len - ihl - doff) as u32,
    })
}

pub struct PcapWriter<W: Write> {
    w: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut w: W) -> Result<Self, PcapError> {
        w.write_all(&PCAP_MAGIC_US.to_le_bytes())?;
        w.write_all(&2u16.to_le_bytes())?; // version major
        w.write_all(&4u16.to_le_bytes())?; // version minor
        w.write_all(&0i32.to_le_bytes())?; // thiszone
        w.write_all(&0u32.to_le_bytes())?; // sigfigs
        w.write_all(&65_535u32.to_le_bytes())?; // snaplen
        w.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(Self { w })
    }

    pub fn write_frame(&mut self, t_us: u64, frame: &[u8]) -> Result<(), PcapError> {
        self.w.write_all(&((t_us / 1_000_000) as u32).to_le_bytes())?;
        self.w.write_all(&((t_us % 1_000_000) as u32).to_le_bytes())?;
        self.w.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.w.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.w.write_all(frame)?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.w
    }
}

/// Builds an Ethernet/IPv4/TCP frame with a zero-filled payload.
#[allow(clippy::too_many_arguments)]
pub fn build_tcp_frame(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    seq: u32,
    ack_no: u32,
    syn: bool,
    ack: bool,
    payload_len: usize,
) -> Vec<u8> {
    let ip_len = 20 + 20 + payload_len;
    let mut f = Vec::with_capacity(14 + ip_len);
    f.extend_from_slice(&[0u8; 12]); // mac addresses
    f.extend_from_slice(&0x0800u16.to_be_bytes());
    // ipv4 header
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&(ip_len as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0, 0x40, 0, 64, 6, 0, 0]); // id, DF, ttl, tcp, csum
    f.extend_from_slice(&src_ip.octets());
    f.extend_from_slice(&dst_ip.octets());
    // tcp header
    f.extend_from_slice(&src_port.to_be_bytes());
    f.extend_from_slice(&dst_port.to_be_bytes());
    f.extend_from_slice(&seq.to_be_bytes());
    f.extend_from_slice(&ack_no.to_be_bytes());
    let mut flags = 0u8;
    if syn {
        flags |= 0x02;
    }
    if ack {
        flags |= 0x10;
    }
    f.push(0x50); // data offset 5
    f.push(flags);
    f.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]); // window, csum, urg
    f.extend(std::iter::repeat(0u8).take(payload_len));
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_round_trip() {
        let src: Ipv4Addr = "10.0.0.1".parse().unwrap();
        let dst: Ipv4Addr = "8.8.8.8".parse().unwrap();
        let mut buf = Vec::new();
        {
            let mut w = PcapWriter::new(&mut buf).unwrap();
            let f1 = build_tcp_frame(src, dst, 1234, 443, 1000, 0, true, false, 0);
            let f2 = build_tcp_frame(dst, src, 443, 1234, 5000, 1001, true, true, 0);
            w.write_frame(10, &f1).unwrap();
            w.write_frame(40_010, &f2).unwrap();
        }
        let r = PcapReader::new(&buf[..]).unwrap();
        let pkts: Vec<_> = r.map(|p| p.unwrap()).collect();
        assert_eq!(pkts.len(), 2);
        let t0 = pkts[0].tcp.as_ref().unwrap();
        assert!(t0.syn && !t0.ack);
        assert_eq!(t0.seq, 1000);
        assert_eq!(pkts[1].t_us, 40_010);
        let t1 = pkts[1].tcp.as_ref().unwrap();
        assert!(t1.syn && t1.ack);
        assert_eq!(t1.ack_no, 1001);
    }

    #[test]
    fn garbage_frames_are_skipped_not_fatal() {
        let mut buf = Vec::new();
        {
            let mut w = PcapWriter::new(&mut buf).unwrap();
            w.write_frame(5, &[0u8; 6]).unwrap(); // truncated
            let f = build_tcp_frame(
                "10.0.0.1".parse().unwrap(),
                "8.8.8.8".parse().unwrap(),
                1,
                2,
                0,
                0,
                false,
                true,
                3,
            );
            w.write_frame(9, &f).unwrap();
        }
        let mut r = PcapReader::new(&buf[..]).unwrap();
        let got: Vec<_> = (&mut r).map(|p| p.unwrap()).collect();
        assert_eq!(got.len(), 2);
        assert!(got[0].tcp.is_none());
        assert!(got[1].tcp.is_some());
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn bad_magic_is_an_error() {
        let buf = vec![0u8; 24];
        assert!(matches!(PcapReader::new(&buf[..]), Err(PcapError::BadMagic(_))));
    }
}
