//! Country boundary ingestion and great-circle distance/delay kernels.
//!
//! Everything downstream (attack search, per-prefix RTT lower bounds) is
//! built on the two kernels in this module: haversine distance on a mean
//! radius sphere and distance-to-delay conversion at the speed of light in
//! fiber. Boundary sets are immutable after loading and safe to share
//! across worker threads.

mod load;

pub use load::{load_boundaries, parse_boundaries};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers (IUGG mean radius R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Propagation speed in optical fiber, km per millisecond (approx. 2c/3).
pub const FIBER_KM_PER_MS: f64 = 199.86;

/// Upper bound for any point-pair distance (half the equatorial
/// circumference, used as a sanity cap).
pub const MAX_POINT_DISTANCE_KM: f64 = 20_037.6;

#[derive(Debug, Error)]
pub enum GeodesyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("boundary file is not a parseable feature collection: {0}")]
    Parse(String),
    #[error("boundary file contains no countries")]
    EmptyDataset,
    #[error("malformed geometry for country {country}: {detail}")]
    BadGeometry { country: String, detail: String },
    #[error("coordinate out of range: lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("boundary sampling resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("ring has fewer than 3 distinct vertices")]
    DegenerateRing,
    #[error("unknown country {name:?}")]
    UnknownCountry { name: String },
}

/// A geographic point, latitude/longitude in degrees.
///
/// Longitude is normalized to the half-open range [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeodesyError> {
        if !lat.is_finite() || !lon.is_finite() || lat < -90.0 || lat > 90.0 {
            return Err(GeodesyError::InvalidCoordinate { lat, lon });
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    /// Unit vector on the sphere, ECEF-style (x toward lon 0, z toward the
    /// north pole).
    pub fn unit(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        let cl = lat.cos();
        [cl * lon.cos(), cl * lon.sin(), lat.sin()]
    }

    pub fn from_unit(v: [f64; 3]) -> Self {
        let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self {
            lat,
            lon: normalize_lon(lon),
        }
    }
}

/// Normalize a longitude in degrees to [-180, 180).
pub fn normalize_lon(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l -= 360.0;
    }
    l
}

/// Great-circle distance in kilometers, non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DistanceKm(pub f64);

/// One-way propagation delay in milliseconds, non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DelayMs(pub f64);

/// Haversine great-circle distance on the mean-radius sphere.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> DistanceKm {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let sl = (dlat / 2.0).sin();
    let so = (dlon / 2.0).sin();
    let h = (sl * sl + lat1.cos() * lat2.cos() * so * so).clamp(0.0, 1.0);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    DistanceKm(EARTH_RADIUS_KM * c)
}

/// Distance between two unit vectors, in kilometers. Stable for both tiny
/// and near-antipodal separations.
pub(crate) fn unit_distance_km(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cx = a[1] * b[2] - a[2] * b[1];
    let cy = a[2] * b[0] - a[0] * b[2];
    let cz = a[0] * b[1] - a[1] * b[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    EARTH_RADIUS_KM * cross.atan2(dot)
}

/// One-way delay of `d` at the speed of light in fiber.
pub fn km_to_ms(d: DistanceKm) -> DelayMs {
    DelayMs(d.0 / FIBER_KM_PER_MS)
}

/// A closed boundary ring: the first point equals the last.
#[derive(Debug, Clone)]
pub struct Ring {
    points: Vec<GeoPoint>,
}

impl Ring {
    /// Builds a ring, closing it if the input is open.
    pub fn new(mut points: Vec<GeoPoint>) -> Result<Self, GeodesyError> {
        if points.is_empty() {
            return Err(GeodesyError::DegenerateRing);
        }
        let first = points[0];
        let last = *points.last().expect("non-empty");
        if first != last {
            points.push(first);
        }
        Ok(Self { points })
    }

    /// All positions including the closing duplicate.
    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    /// Number of distinct vertices (closing duplicate excluded).
    pub fn distinct_vertices(&self) -> usize {
        let mut seen: Vec<(u64, u64)> = self.points[..self.points.len() - 1]
            .iter()
            .map(|p| (p.lat.to_bits(), p.lon.to_bits()))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Total great-circle length of the ring edges, km.
    pub fn perimeter_km(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| great_circle_km(w[0], w[1]).0)
            .sum()
    }

    /// Absolute spherical area of the ring in steradians: fan
    /// triangulation from the first vertex, each triangle's signed
    /// spherical excess from the Van Oosterom-Strackee formula. Exact on
    /// the sphere, insensitive to longitude wrapping.
    pub fn spherical_area_sr(&self) -> f64 {
        let pts = &self.points;
        if pts.len() < 4 {
            return 0.0;
        }
        let a = pts[0].unit();
        let mut total = 0.0;
        for w in pts[1..pts.len() - 1].windows(2) {
            let b = w[0].unit();
            let c = w[1].unit();
            let triple = a[0] * (b[1] * c[2] - b[2] * c[1])
                - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
            let dot_ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let dot_bc = b[0] * c[0] + b[1] * c[1] + b[2] * c[2];
            let dot_ca = c[0] * a[0] + c[1] * a[1] + c[2] * a[2];
            total += 2.0 * triple.atan2(1.0 + dot_ab + dot_bc + dot_ca);
        }
        total.abs()
    }
}

/// One polygon of a country: an exterior ring and optional holes
/// (enclave borders are boundary too).
#[derive(Debug, Clone)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Even-odd point-in-polygon test in lon/lat space. Holes subtract.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            if ray_cast(ring.points(), p) {
                inside = !inside;
            }
        }
        inside
    }
}

fn ray_cast(pts: &[GeoPoint], p: GeoPoint) -> bool {
    let mut inside = false;
    for w in pts.windows(2) {
        let (y1, y2) = (w[0].lat, w[1].lat);
        let (x1, x2) = (w[0].lon, w[1].lon);
        if (y1 > p.lat) != (y2 > p.lat) {
            let t = (p.lat - y1) / (y2 - y1);
            let x = x1 + t * (x2 - x1);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Which parts of a country participate in boundary computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Only the largest contiguous landmass.
    Mainland,
    /// Every polygon of the country.
    Entire,
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryMode::Mainland => write!(f, "mainland"),
            BoundaryMode::Entire => write!(f, "entire"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Country {
    pub name: String,
    pub iso_code: String,
    pub polygons: Vec<Polygon>,
    /// Index of the polygon whose exterior has the largest spherical area.
    pub mainland_index: usize,
}

impl Country {
    pub fn rings(&self, mode: BoundaryMode) -> Box<dyn Iterator<Item = &Ring> + '_> {
        match mode {
            BoundaryMode::Mainland => Box::new(self.polygons[self.mainland_index].rings()),
            BoundaryMode::Entire => Box::new(self.polygons.iter().flat_map(|p| p.rings())),
        }
    }

    /// True when `p` falls inside any polygon of the country.
    pub fn contains(&self, p: GeoPoint) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

#[derive(Debug, Clone)]
pub struct CountryBoundarySet {
    pub countries: Vec<Country>,
}

impl CountryBoundarySet {
    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<&Country> {
        self.countries
            .iter()
            .find(|c| c.name == name)
            .or_else(|| {
                self.countries
                    .iter()
                    .find(|c| c.name.eq_ignore_ascii_case(name) || c.iso_code.eq_ignore_ascii_case(name))
            })
    }

    pub fn index_of(&self, name: &str) -> Result<usize, GeodesyError> {
        self.countries
            .iter()
            .position(|c| c.name == name)
            .or_else(|| {
                self.countries.iter().position(|c| {
                    c.name.eq_ignore_ascii_case(name) || c.iso_code.eq_ignore_ascii_case(name)
                })
            })
            .ok_or_else(|| GeodesyError::UnknownCountry {
                name: name.to_string(),
            })
    }
}

/// Spherical linear interpolation between two unit vectors.
pub(crate) fn slerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let omega = dot.acos();
    if omega < 1e-12 {
        return a;
    }
    let so = omega.sin();
    let (wa, wb) = (((1.0 - t) * omega).sin() / so, (t * omega).sin() / so);
    let v = [
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
    ];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Densifies a ring so consecutive returned points are at most
/// `resolution_km` apart. All original vertices are retained; interior
/// points are inserted along the great-circle edges.
pub fn sample_boundary(ring: &Ring, resolution_km: DistanceKm) -> Result<Vec<GeoPoint>, GeodesyError> {
    if !(resolution_km.0 > 0.0) {
        return Err(GeodesyError::BadResolution(resolution_km.0));
    }
    if ring.distinct_vertices() < 3 {
        return Err(GeodesyError::DegenerateRing);
    }
    let pts = ring.points();
    let mut out = Vec::with_capacity(pts.len());
    for w in pts.windows(2) {
        out.push(w[0]);
        let d = great_circle_km(w[0], w[1]).0;
        if d > resolution_km.0 {
            let n = (d / resolution_km.0).ceil() as usize; // n segments, n-1 interior points
            let (ua, ub) = (w[0].unit(), w[1].unit());
            for k in 1..n {
                out.push(GeoPoint::from_unit(slerp(ua, ub, k as f64 / n as f64)));
            }
        }
    }
    // closing vertex is the first one; do not duplicate it
    Ok(out)
}

/// Walks a ring and emits roughly one point per `resolution_km` of arc
/// length (plus each ring's starting vertex). Unlike [`sample_boundary`]
/// this *decimates* rings that are denser than the resolution, which is
/// what the pairwise searches want. Degenerate rings yield their distinct
/// points.
pub(crate) fn resample_ring_units(ring: &Ring, resolution_km: f64) -> Vec<[f64; 3]> {
    let pts = ring.points();
    let mut out = Vec::new();
    let first = pts[0].unit();
    out.push(first);
    let mut acc = 0.0;
    let mut prev = first;
    for p in &pts[1..] {
        let u = p.unit();
        let d = unit_distance_km(prev, u);
        if d <= 0.0 {
            prev = u;
            continue;
        }
        if d > resolution_km {
            // long edge: emit interior points along the edge itself
            let n = (d / resolution_km).ceil() as usize;
            for k in 1..n {
                out.push(slerp(prev, u, k as f64 / n as f64));
            }
            out.push(u);
            acc = 0.0;
        } else {
            acc += d;
            if acc >= resolution_km {
                out.push(u);
                acc = 0.0;
            }
        }
        prev = u;
    }
    if out.len() == 1 && ring.distinct_vertices() > 1 {
        // tiny ring below resolution: keep one extra vertex so a span exists
        if let Some(p) = pts[1..].iter().find(|p| p.unit() != first) {
            out.push(p.unit());
        }
    }
    out
}

/// Sampled boundary of a country in one mode: unit vectors plus the
/// original raw vertices (used for exact refinement).
pub(crate) struct SampledBoundary {
    pub units: Vec<[f64; 3]>,
    pub effective_resolution_km: f64,
}

pub(crate) fn search_points(
    country: &Country,
    mode: BoundaryMode,
    resolution_km: f64,
    max_points: usize,
) -> SampledBoundary {
    let mut res = resolution_km;
    let perimeter: f64 = country.rings(mode).map(|r| r.perimeter_km()).sum();
    if perimeter / res > max_points as f64 {
        res = perimeter / max_points as f64;
    }
    let mut units = Vec::new();
    for ring in country.rings(mode) {
        units.extend(resample_ring_units(ring, res));
    }
    SampledBoundary {
        units,
        effective_resolution_km: res,
    }
}

fn raw_units(country: &Country, mode: BoundaryMode) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for ring in country.rings(mode) {
        let pts = ring.points();
        out.extend(pts[..pts.len() - 1].iter().map(|p| p.unit()));
    }
    out
}

/// Exact pairwise maximum over two point sets. Returns (km, i, j).
fn argmax_cross(a: &[[f64; 3]], b: &[[f64; 3]]) -> (f64, usize, usize) {
    let mut best = (-1.0, 0, 0);
    for (i, &u) in a.iter().enumerate() {
        for (j, &v) in b.iter().enumerate() {
            let d = unit_distance_km(u, v);
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

fn argmin_cross(a: &[[f64; 3]], b: &[[f64; 3]]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for (i, &u) in a.iter().enumerate() {
        for (j, &v) in b.iter().enumerate() {
            let d = unit_distance_km(u, v);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

/// Points of the country boundary within `radius_km` of `center`, taken
/// from the raw vertices plus a `fine_km` densification of nearby edges.
pub(crate) fn near_points_for_refinement(
    country: &Country,
    mode: BoundaryMode,
    center: [f64; 3],
    radius_km: f64,
    fine_km: f64,
) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for ring in country.rings(mode) {
        let pts = ring.points();
        for w in pts.windows(2) {
            let (ua, ub) = (w[0].unit(), w[1].unit());
            let da = unit_distance_km(ua, center);
            let db = unit_distance_km(ub, center);
            let edge = unit_distance_km(ua, ub);
            if da.min(db) > radius_km + edge {
                continue;
            }
            if da <= radius_km {
                out.push(ua);
            }
            if edge > fine_km {
                let n = (edge / fine_km).ceil() as usize;
                for k in 1..n {
                    let v = slerp(ua, ub, k as f64 / n as f64);
                    if unit_distance_km(v, center) <= radius_km {
                        out.push(v);
                    }
                }
            }
        }
    }
    if out.is_empty() {
        out.push(center);
    }
    out
}

/// Threshold below which the exact vertex set is used directly.
const EXACT_VERTEX_LIMIT: usize = 2_500;

/// Largest pairwise great-circle distance among boundary points of a
/// country: coarse scan at `resolution_km` plus a `fine_km` refinement
/// around the coarse optimum (raw vertices included, so small countries
/// are exact).
pub fn max_intra_distance(
    country: &Country,
    mode: BoundaryMode,
    resolution_km: DistanceKm,
    fine_km: DistanceKm,
) -> (DistanceKm, (GeoPoint, GeoPoint)) {
    let raw = raw_units(country, mode);
    if raw.len() <= 1 {
        let p = country.rings(mode).next().map(|r| r.points()[0]).unwrap_or(GeoPoint { lat: 0.0, lon: 0.0 });
        return (DistanceKm(0.0), (p, p));
    }
    if raw.len() <= EXACT_VERTEX_LIMIT {
        let (d, i, j) = argmax_cross(&raw, &raw);
        return (
            DistanceKm(d),
            (GeoPoint::from_unit(raw[i]), GeoPoint::from_unit(raw[j])),
        );
    }
    let sampled = search_points(country, mode, resolution_km.0, usize::MAX);
    let (d0, i0, j0) = argmax_cross(&sampled.units, &sampled.units);
    let radius = 2.0 * sampled.effective_resolution_km;
    let near_p: Vec<[f64; 3]> = raw
        .iter()
        .copied()
        .filter(|u| unit_distance_km(*u, sampled.units[i0]) <= radius)
        .collect();
    let near_q: Vec<[f64; 3]> = raw
        .iter()
        .copied()
        .filter(|u| unit_distance_km(*u, sampled.units[j0]) <= radius)
        .collect();
    let _ = fine_km; // vertices alone are exact for maxima
    let (d1, i1, j1) = argmax_cross(&near_p, &near_q);
    if d1 > d0 {
        (
            DistanceKm(d1),
            (GeoPoint::from_unit(near_p[i1]), GeoPoint::from_unit(near_q[j1])),
        )
    } else {
        (
            DistanceKm(d0),
            (
                GeoPoint::from_unit(sampled.units[i0]),
                GeoPoint::from_unit(sampled.units[j0]),
            ),
        )
    }
}

/// Smallest great-circle distance between the boundaries of two distinct
/// countries, with local refinement at `fine_km` around the coarse optimum.
pub fn min_inter_distance(
    c1: &Country,
    c2: &Country,
    mode: BoundaryMode,
    resolution_km: DistanceKm,
    fine_km: DistanceKm,
) -> (DistanceKm, (GeoPoint, GeoPoint)) {
    let s1 = search_points(c1, mode, resolution_km.0, usize::MAX);
    let s2 = search_points(c2, mode, resolution_km.0, usize::MAX);
    let (d0, i0, j0) = argmin_cross(&s1.units, &s2.units);
    let radius = 2.0 * s1.effective_resolution_km.max(s2.effective_resolution_km);
    let near1 = near_points_for_refinement(c1, mode, s1.units[i0], radius, fine_km.0);
    let near2 = near_points_for_refinement(c2, mode, s2.units[j0], radius, fine_km.0);
    let (d1, i1, j1) = argmin_cross(&near1, &near2);
    if d1 < d0 {
        (
            DistanceKm(d1),
            (GeoPoint::from_unit(near1[i1]), GeoPoint::from_unit(near2[j1])),
        )
    } else {
        (
            DistanceKm(d0),
            (
                GeoPoint::from_unit(s1.units[i0]),
                GeoPoint::from_unit(s2.units[j0]),
            ),
        )
    }
}

/// One row of the per-country distance table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceRow {
    pub country: String,
    pub mode: String,
    pub max_intra_km: f64,
    pub nearest_country: String,
    pub min_inter_km: f64,
}

/// Full distance survey: per-country max-intra, the pairwise min-inter
/// matrix, and the nearest neighbor per country.
#[derive(Debug, Clone)]
pub struct DistanceSurvey {
    pub names: Vec<String>,
    pub max_intra_km: Vec<f64>,
    /// Symmetric matrix; the diagonal is 0.
    pub min_inter_km: Vec<Vec<f64>>,
}

impl DistanceSurvey {
    pub fn rows(&self, mode: BoundaryMode) -> Vec<DistanceRow> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let (mut best, mut who) = (f64::INFINITY, i);
                for (j, d) in self.min_inter_km[i].iter().enumerate() {
                    if j != i && *d < best {
                        best = *d;
                        who = j;
                    }
                }
                DistanceRow {
                    country: name.clone(),
                    mode: mode.to_string(),
                    max_intra_km: self.max_intra_km[i],
                    nearest_country: self.names[who].clone(),
                    min_inter_km: best,
                }
            })
            .collect()
    }

    /// All off-diagonal pair distances (each unordered pair once).
    pub fn pair_distances(&self) -> Vec<f64> {
        let n = self.names.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.min_inter_km[i][j]);
            }
        }
        out
    }
}

/// Computes the full survey (parallel over countries/pairs).
pub fn distance_survey(
    set: &CountryBoundarySet,
    mode: BoundaryMode,
    resolution_km: DistanceKm,
    fine_km: DistanceKm,
) -> DistanceSurvey {
    use rayon::prelude::*;
    let names: Vec<String> = set.countries.iter().map(|c| c.name.clone()).collect();
    let max_intra_km: Vec<f64> = set
        .countries
        .par_iter()
        .map(|c| max_intra_distance(c, mode, resolution_km, fine_km).0 .0)
        .collect();
    let n = set.countries.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            min_inter_distance(
                &set.countries[i],
                &set.countries[j],
                mode,
                resolution_km,
                fine_km,
            )
            .0
             .0
        })
        .collect();
    let mut min_inter_km = vec![vec![0.0; n]; n];
    for (&(i, j), &d) in pairs.iter().zip(dists.iter()) {
        min_inter_km[i][j] = d;
        min_inter_km[j][i] = d;
    }
    DistanceSurvey {
        names,
        max_intra_km,
        min_inter_km,
    }
}
