//! Sample CSV (`flow_id,t_ack_us,rtt_ms`) and the sidecar flow map
//! (`flow_id,dest_prefix,dest_lat,dest_lon`) that ties anonymized flow ids
//! to destination prefixes and geolocations.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::geodesy::GeoPoint;

use super::{prefix_key_from_str, prefix_key_to_string, sig_hash, PrefixSignature, RttSample, RttSourceError, DEFAULT_HASH_SEEDS};

/// Destination info for one anonymized flow.
#[derive(Debug, Clone, Copy)]
pub struct FlowGeo {
    pub prefix_key: u32,
    pub dest: GeoPoint,
}

/// Flow id registry plus per-flow destination prefix/geolocation.
#[derive(Debug, Default, Clone)]
pub struct FlowMap {
    ids: HashMap<String, u64>,
    names: Vec<String>,
    geo: HashMap<u64, FlowGeo>,
}

impl FlowMap {
    pub fn id_for(&mut self, label: &str) -> u64 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.names.len() as u64;
        self.ids.insert(label.to_string(), id);
        self.names.push(label.to_string());
        id
    }

    pub fn label_of(&self, id: u64) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn geo_of(&self, id: u64) -> Option<&FlowGeo> {
        self.geo.get(&id)
    }

    pub fn insert_geo(&mut self, label: &str, geo: FlowGeo) {
        let id = self.id_for(label);
        self.geo.insert(id, geo);
    }

    pub fn flows(&self) -> impl Iterator<Item = (u64, &str, Option<&FlowGeo>)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u64, n.as_str(), self.geo.get(&(i as u64))))
    }
}

/// Reads the flow->prefix mapping CSV: `flow_id,dest_prefix,dest_lat,dest_lon`.
pub fn read_flow_map<R: Read>(r: R) -> Result<FlowMap, RttSourceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut map = FlowMap::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let label = rec
            .get(0)
            .ok_or_else(|| RttSourceError::BadField { row, detail: "missing flow_id".into() })?;
        let prefix = rec
            .get(1)
            .ok_or_else(|| RttSourceError::BadField { row, detail: "missing dest_prefix".into() })?;
        let lat: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RttSourceError::BadField { row, detail: "bad dest_lat".into() })?;
        let lon: f64 = rec
            .get(3)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RttSourceError::BadField { row, detail: "bad dest_lon".into() })?;
        let prefix_key = prefix_key_from_str(prefix)?;
        let dest = GeoPoint::new(lat, lon).map_err(|e| RttSourceError::BadField {
            row,
            detail: e.to_string(),
        })?;
        map.insert_geo(label, FlowGeo { prefix_key, dest });
    }
    Ok(map)
}

pub fn write_flow_map<W: Write>(w: W, map: &FlowMap) -> Result<(), RttSourceError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["#schema=rttwatch.flow-map.v1", "", "", ""])?;
    wtr.write_record(["flow_id", "dest_prefix", "dest_lat", "dest_lon"])?;
    for (_, label, geo) in map.flows() {
        if let Some(g) = geo {
            wtr.write_record([
                label,
                &prefix_key_to_string(g.prefix_key),
                &format!("{:.6}", g.dest.lat),
                &format!("{:.6}", g.dest.lon),
            ])?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// What a CSV read accepted and rejected.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CsvReadReport {
    pub accepted: usize,
    pub rejected_negative_rtt: usize,
    pub rejected_unknown_flow: usize,
}

/// Reads a sample CSV (`flow_id,t_ack_us,rtt_ms`). Rows must be
/// time-sorted; rows with negative RTT are rejected and counted; rows
/// whose flow id has no mapping are rejected and counted.
pub fn read_samples_csv<R: Read>(
    r: R,
    map: &mut FlowMap,
) -> Result<(Vec<RttSample>, CsvReadReport), RttSourceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = Vec::new();
    let mut report = CsvReadReport::default();
    let mut last_t: Option<u64> = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let label = rec
            .get(0)
            .ok_or_else(|| RttSourceError::BadField { row, detail: "missing flow_id".into() })?;
        let t_ack_us: u64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RttSourceError::BadField { row, detail: "bad t_ack_us".into() })?;
        let rtt_ms: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RttSourceError::BadField { row, detail: "bad rtt_ms".into() })?;
        if let Some(prev) = last_t {
            if t_ack_us < prev {
                return Err(RttSourceError::UnsortedSamples { row });
            }
        }
        last_t = Some(t_ack_us);
        if rtt_ms <= 0.0 {
            report.rejected_negative_rtt += 1;
            continue;
        }
        let flow_id = map.id_for(label);
        let Some(geo) = map.geo_of(flow_id).copied() else {
            report.rejected_unknown_flow += 1;
            continue;
        };
        report.accepted += 1;
        out.push(RttSample {
            sig: PrefixSignature {
                index: sig_hash(geo.prefix_key, DEFAULT_HASH_SEEDS[0]),
                key: geo.prefix_key,
            },
            flow_id,
            t_ack_us,
            rtt_ms,
        });
    }
    Ok((out, report))
}

/// Writes a sample CSV with flow labels taken from the map (falling back
/// to `f<id>` for unlabeled flows).
pub fn write_samples_csv<W: Write>(
    w: W,
    samples: &[RttSample],
    map: Option<&FlowMap>,
) -> Result<(), RttSourceError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["#schema=rttwatch.samples.v1", "", ""])?;
    wtr.write_record(["flow_id", "t_ack_us", "rtt_ms"])?;
    for s in samples {
        let label = map
            .and_then(|m| m.label_of(s.flow_id))
            .map(str::to_owned)
            .unwrap_or_else(|| format!("f{}", s.flow_id));
        wtr.write_record([
            label,
            s.t_ack_us.to_string(),
            format!("{:.3}", s.rtt_ms),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
