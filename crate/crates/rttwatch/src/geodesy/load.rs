//! Boundary ingestion from GeoJSON feature collections.
//!
//! Accepts `Polygon` and `MultiPolygon` features carrying a country name
//! (`name`/`NAME`/`ADMIN`) and optionally an ISO code
//! (`iso_a3`/`ISO_A3`/`ADM0_A3`/`a3`). Rings are closed on load and split
//! at the antimeridian so downstream code can treat longitude as planar.

use std::path::Path;

use serde_json::Value;

use super::{Country, CountryBoundarySet, GeoPoint, GeodesyError, Polygon, Ring};

const NAME_KEYS: &[&str] = &["name", "NAME", "ADMIN", "admin", "NAME_LONG"];
const ISO_KEYS: &[&str] = &["iso_a3", "ISO_A3", "ADM0_A3", "adm0_a3", "a3"];

/// Loads a country boundary set from a GeoJSON file.
pub fn load_boundaries<P: AsRef<Path>>(path: P) -> Result<CountryBoundarySet, GeodesyError> {
    let text = std::fs::read_to_string(path)?;
    parse_boundaries(&text)
}

/// Same as [`load_boundaries`] but from an in-memory string.
pub fn parse_boundaries(text: &str) -> Result<CountryBoundarySet, GeodesyError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| GeodesyError::Parse(e.to_string()))?;
    let features = root
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| GeodesyError::Parse("missing \"features\" array".into()))?;
    if features.is_empty() {
        return Err(GeodesyError::EmptyDataset);
    }

    let mut countries = Vec::with_capacity(features.len());
    for (idx, feat) in features.iter().enumerate() {
        let props = feat.get("properties").cloned().unwrap_or(Value::Null);
        let name = first_string(&props, NAME_KEYS).unwrap_or_else(|| format!("feature-{idx}"));
        let iso_code = first_string(&props, ISO_KEYS).unwrap_or_default();

        let geom = feat
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| GeodesyError::BadGeometry {
                country: name.clone(),
                detail: "missing geometry".into(),
            })?;
        let gtype = geom.get("type").and_then(|t| t.as_str()).unwrap_or("");
        let coords = geom.get("coordinates").ok_or_else(|| GeodesyError::BadGeometry {
            country: name.clone(),
            detail: "missing coordinates".into(),
        })?;

        let raw_polys: Vec<&Value> = match gtype {
            "Polygon" => vec![coords],
            "MultiPolygon" => coords.as_array().map(|a| a.iter().collect()).unwrap_or_default(),
            other => {
                return Err(GeodesyError::BadGeometry {
                    country: name.clone(),
                    detail: format!("unsupported geometry type {other:?}"),
                })
            }
        };

        let mut polygons = Vec::new();
        for poly in raw_polys {
            let rings = poly.as_array().ok_or_else(|| GeodesyError::BadGeometry {
                country: name.clone(),
                detail: "polygon is not an array of rings".into(),
            })?;
            if rings.is_empty() {
                continue; // quantization artifacts in some sources
            }
            let mut parsed: Vec<Vec<Ring>> = Vec::with_capacity(rings.len());
            for ring in rings {
                let pts = parse_ring(ring, &name)?;
                if pts.len() < 4 {
                    return Err(GeodesyError::BadGeometry {
                        country: name.clone(),
                        detail: format!("ring with {} positions (need at least 4)", pts.len()),
                    });
                }
                parsed.push(split_antimeridian(pts));
            }
            let mut exteriors = parsed.remove(0);
            let holes: Vec<Ring> = parsed.into_iter().flatten().collect();
            // if the exterior split into several pieces, holes stay with the
            // first piece; admin-0 sources are already split so this path is
            // only exercised by synthetic data
            let first = exteriors.remove(0);
            polygons.push(Polygon {
                exterior: first,
                holes,
            });
            for extra in exteriors {
                polygons.push(Polygon {
                    exterior: extra,
                    holes: vec![],
                });
            }
        }
        if polygons.is_empty() {
            return Err(GeodesyError::BadGeometry {
                country: name.clone(),
                detail: "no usable polygons".into(),
            });
        }

        let mainland_index = polygons
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.exterior
                    .spherical_area_sr()
                    .partial_cmp(&b.exterior.spherical_area_sr())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .unwrap_or(0);

        countries.push(Country {
            name,
            iso_code,
            polygons,
            mainland_index,
        });
    }

    Ok(CountryBoundarySet { countries })
}

fn first_string(props: &Value, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| props.get(k).and_then(|v| v.as_str()).map(str::to_owned))
}

fn parse_ring(ring: &Value, country: &str) -> Result<Vec<GeoPoint>, GeodesyError> {
    let arr = ring.as_array().ok_or_else(|| GeodesyError::BadGeometry {
        country: country.to_string(),
        detail: "ring is not an array".into(),
    })?;
    let mut out = Vec::with_capacity(arr.len());
    for pos in arr {
        let xy = pos.as_array().ok_or_else(|| GeodesyError::BadGeometry {
            country: country.to_string(),
            detail: "position is not an array".into(),
        })?;
        let (lon, lat) = match (xy.first().and_then(Value::as_f64), xy.get(1).and_then(Value::as_f64)) {
            (Some(lon), Some(lat)) => (lon, lat),
            _ => {
                return Err(GeodesyError::BadGeometry {
                    country: country.to_string(),
                    detail: "position is not numeric [lon, lat]".into(),
                })
            }
        };
        let p = GeoPoint::new(lat, lon).map_err(|_| GeodesyError::BadGeometry {
            country: country.to_string(),
            detail: format!("coordinate out of range: lon={lon} lat={lat}"),
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Splits a ring that crosses the antimeridian into rings that do not.
/// Rings already on one side pass through untouched.
fn split_antimeridian(pts: Vec<GeoPoint>) -> Vec<Ring> {
    let crosses = pts
        .windows(2)
        .any(|w| (w[1].lon - w[0].lon).abs() > 180.0);
    if !crosses {
        return vec![Ring::new(pts).expect("non-empty ring")];
    }

    // walk in an unwrapped longitude frame, cutting at multiples of 180
    let mut chains: Vec<Vec<GeoPoint>> = Vec::new();
    let mut current: Vec<GeoPoint> = Vec::new();
    let mut prev = pts[0];
    current.push(prev);
    for &p in &pts[1..] {
        let mut dlon = p.lon - prev.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        let crossing = (prev.lon > 0.0 && prev.lon + dlon > 180.0)
            || (prev.lon < 0.0 && prev.lon + dlon < -180.0)
            || (prev.lon > 0.0 && p.lon < 0.0 && dlon > 0.0)
            || (prev.lon < 0.0 && p.lon > 0.0 && dlon < 0.0);
        if crossing {
            // interpolate the latitude at the meridian
            let target = if dlon > 0.0 { 180.0 } else { -180.0 };
            let t = (target - prev.lon) / dlon;
            let lat = prev.lat + t * (p.lat - prev.lat);
            let edge_pt = GeoPoint {
                lat,
                lon: if target > 0.0 { 179.999_999 } else { -180.0 },
            };
            current.push(edge_pt);
            chains.push(std::mem::take(&mut current));
            let other_side = GeoPoint {
                lat,
                lon: if target > 0.0 { -180.0 } else { 179.999_999 },
            };
            current.push(other_side);
        }
        current.push(p);
        prev = p;
    }
    if !current.is_empty() {
        // merge the tail chain with the head chain (same side of the cut)
        if let Some(headpos) = chains.first().map(|_| 0) {
            let mut head = chains.remove(headpos);
            let mut tail = current;
            tail.pop(); // drop duplicate closing vertex
            tail.extend(head.drain(..));
            chains.insert(0, tail);
        } else {
            chains.push(current);
        }
    }
    chains
        .into_iter()
        .filter(|c| c.len() >= 3)
        .map(|c| Ring::new(c).expect("non-empty chain"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::BoundaryMode;

    fn fc(features: &str) -> String {
        format!("{{\"type\":\"FeatureCollection\",\"features\":[{features}]}}")
    }

    fn feature(name: &str, geom: &str) -> String {
        format!(
            "{{\"type\":\"Feature\",\"properties\":{{\"name\":\"{name}\",\"iso_a3\":\"TST\"}},\"geometry\":{geom}}}"
        )
    }

    #[test]
    fn single_country_single_ring() {
        let g = r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}"#;
        let set = parse_boundaries(&fc(&feature("Testland", g))).unwrap();
        assert_eq!(set.len(), 1);
        let c = &set.countries[0];
        assert_eq!(c.name, "Testland");
        assert_eq!(c.mainland_index, 0);
        assert_eq!(c.polygons.len(), 1);
    }

    #[test]
    fn multi_ring_mainland_selection() {
        // big polygon second: mainland_index must point at it
        let g = r#"{"type":"MultiPolygon","coordinates":[
            [[[10,10],[10.5,10],[10.5,10.5],[10,10.5],[10,10]]],
            [[[0,0],[8,0],[8,8],[0,8],[0,0]]]
        ]}"#;
        let set = parse_boundaries(&fc(&feature("Archipelago", g))).unwrap();
        assert_eq!(set.countries[0].mainland_index, 1);
    }

    #[test]
    fn malformed_geometry_names_country() {
        let g = r#"{"type":"Polygon","coordinates":[[[0,0],[1,0]]]}"#;
        let err = parse_boundaries(&fc(&feature("Brokenia", g))).unwrap_err();
        match err {
            GeodesyError::BadGeometry { country, .. } => assert_eq!(country, "Brokenia"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_errors() {
        assert!(matches!(
            parse_boundaries("{\"type\":\"FeatureCollection\",\"features\":[]}"),
            Err(GeodesyError::EmptyDataset)
        ));
        assert!(matches!(parse_boundaries("not json"), Err(GeodesyError::Parse(_))));
    }

    #[test]
    fn antimeridian_ring_is_split() {
        // a band straddling the antimeridian: lon 170..-170 at lat 0..10
        let g = r#"{"type":"Polygon","coordinates":[[[170,0],[-170,0],[-170,10],[170,10],[170,0]]]}"#;
        let set = parse_boundaries(&fc(&feature("Dateline", g))).unwrap();
        let c = &set.countries[0];
        assert!(c.polygons.len() >= 2, "expected a split, got {} polygons", c.polygons.len());
        for poly in &c.polygons {
            for ring in poly.rings() {
                for w in ring.points().windows(2) {
                    assert!(
                        (w[1].lon - w[0].lon).abs() <= 180.0,
                        "ring still wraps: {} -> {}",
                        w[0].lon,
                        w[1].lon
                    );
                }
            }
        }
        // both sides remain addressable: a point on each side is inside
        assert!(c.contains(GeoPoint { lat: 5.0, lon: 175.0 }));
        assert!(c.contains(GeoPoint { lat: 5.0, lon: -175.0 }));
    }

    #[test]
    fn hole_rings_are_kept_as_boundary() {
        let g = r#"{"type":"Polygon","coordinates":[
            [[0,0],[10,0],[10,10],[0,10],[0,0]],
            [[4,4],[6,4],[6,6],[4,6],[4,4]]
        ]}"#;
        let set = parse_boundaries(&fc(&feature("Holey", g))).unwrap();
        let c = &set.countries[0];
        let rings: Vec<_> = c.rings(BoundaryMode::Mainland).collect();
        assert_eq!(rings.len(), 2);
    }
}
