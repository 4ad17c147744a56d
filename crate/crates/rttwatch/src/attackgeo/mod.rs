//! Worst-case interception geometry: for a victim country hosting both
//! endpoints and a threat country hosting the attacker, find the placement
//! of source S, destination D (victim boundary) and attacker A (threat
//! boundary) that minimizes the round-trip deviation
//! `delta(S,A) + delta(D,A) - delta(S,D)`. Also computes per-path
//! mid-attack RTT lower bounds against arbitrary threat regions.

mod coverage;
mod delay_model;

pub use coverage::{coverage_report, realistic_defendability, CoverageReport, CurvePoint};
pub use delay_model::{fit_percentile_model, FitReport, ModelError, PercentileDelayModel};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesy::{
    great_circle_km, km_to_ms, normalize_lon, resample_ring_units, search_points, unit_distance_km,
    BoundaryMode, Country, CountryBoundarySet, DelayMs, DistanceKm, GeoPoint, GeodesyError,
    Polygon, FIBER_KM_PER_MS,
};

/// Tuning for the boundary grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSearchParams {
    /// Coarse boundary sampling resolution.
    pub resolution_km: f64,
    /// Local refinement resolution around the coarse optimum.
    pub fine_km: f64,
    /// Cap on sampled points per country; very long boundaries are searched
    /// at a proportionally coarser effective resolution (the refinement
    /// pass restores local precision).
    pub max_points_per_country: usize,
    /// Among triples within this much deviation of the optimum, the
    /// reported triple takes the largest pre-attack separation. The
    /// deviation landscape is flat near the optimum; this picks the
    /// worst-case endpoint spread the flat region allows.
    pub tie_break_km: f64,
}

impl Default for AttackSearchParams {
    fn default() -> Self {
        Self {
            resolution_km: 25.0,
            fine_km: 5.0,
            max_points_per_country: 512,
            tie_break_km: 50.0,
        }
    }
}

/// The least-detectable attack for one (victim, threat) ordered pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalAttack {
    pub victim: String,
    pub threat: String,
    pub s: GeoPoint,
    pub d: GeoPoint,
    pub a: GeoPoint,
    pub delta_pre_km: f64,
    pub delta_mid_km: f64,
    pub delta_dev_km: f64,
    pub tau_pre_ms: f64,
    pub tau_mid_ms: f64,
    pub tau_dev_ms: f64,
}

impl OptimalAttack {
    fn from_triple(victim: &str, threat: &str, s: GeoPoint, d: GeoPoint, a: GeoPoint) -> Self {
        let d_sd = great_circle_km(s, d).0;
        let d_sa = great_circle_km(s, a).0;
        let d_da = great_circle_km(d, a).0;
        let pre = 2.0 * d_sd;
        let mid = d_sd + d_sa + d_da;
        let dev = (mid - pre).max(0.0);
        Self {
            victim: victim.to_string(),
            threat: threat.to_string(),
            s,
            d,
            a,
            delta_pre_km: pre,
            delta_mid_km: mid,
            delta_dev_km: dev,
            tau_pre_ms: pre / FIBER_KM_PER_MS,
            tau_mid_ms: mid / FIBER_KM_PER_MS,
            tau_dev_ms: dev / FIBER_KM_PER_MS,
        }
    }
}

/// Round-trip delay deviation from leg distances:
/// `(d_sa + d_da - d_sd) / c_f`, clamped at zero. Negative inputs are
/// geometrically impossible and produce a warning on stderr.
pub fn deviation_ms(d_sd: DistanceKm, d_sa: DistanceKm, d_da: DistanceKm) -> DelayMs {
    let dev = d_sa.0 + d_da.0 - d_sd.0;
    if dev < 0.0 {
        eprintln!(
            "warning: negative deviation clamped to zero (d_sd={} d_sa={} d_da={})",
            d_sd.0, d_sa.0, d_da.0
        );
        return DelayMs(0.0);
    }
    DelayMs(dev / FIBER_KM_PER_MS)
}

/// Deviation surface z(x, y) = (2y - x)/c_f clamped at zero, where x is the
/// host separation and y the average host-attacker distance, both km.
pub fn deviation_surface(x_grid: &[f64], y_grid: &[f64]) -> Vec<Vec<DelayMs>> {
    y_grid
        .iter()
        .map(|&y| {
            x_grid
                .iter()
                .map(|&x| DelayMs(((2.0 * y - x) / FIBER_KM_PER_MS).max(0.0)))
                .collect()
        })
        .collect()
}

struct VictimGrid {
    units: Vec<[f64; 3]>,
    /// Row-major pairwise distances, km (f32: the search threshold scale is
    /// hundreds of km, well above f32 noise at these magnitudes).
    dvv: Vec<f32>,
    max_row: Vec<f32>,
    max_intra: f32,
    effective_resolution_km: f64,
}

fn build_victim_grid(country: &Country, mode: BoundaryMode, params: &AttackSearchParams) -> VictimGrid {
    let sampled = search_points(country, mode, params.resolution_km, params.max_points_per_country);
    let units = sampled.units;
    let n = units.len();
    let mut dvv = vec![0.0f32; n * n];
    let mut max_row = vec![0.0f32; n];
    let mut max_intra = 0.0f32;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = unit_distance_km(units[i], units[j]) as f32;
            dvv[i * n + j] = d;
            dvv[j * n + i] = d;
        }
    }
    for i in 0..n {
        let row_max = dvv[i * n..(i + 1) * n]
            .iter()
            .copied()
            .fold(0.0f32, f32::max);
        max_row[i] = row_max;
        max_intra = max_intra.max(row_max);
    }
    VictimGrid {
        units,
        dvv,
        max_row,
        max_intra,
        effective_resolution_km: sampled.effective_resolution_km,
    }
}

#[derive(Clone, Copy)]
struct Triple {
    s: [f64; 3],
    d: [f64; 3],
    a: [f64; 3],
}

/// Exhaustive minimum of the deviation over (S, D, A) grids, returning the
/// minimum found, the arg-min triple, and (when `tie_break_km > 0`) the
/// near-optimal triple with the largest S-D separation.
fn grid_search(grid: &VictimGrid, threat_units: &[[f64; 3]], tie_break_km: f64) -> (f64, Triple, Triple) {
    let n = grid.units.len();
    let mut best = f32::INFINITY;
    let mut best_idx = (0usize, 0usize, 0usize);
    let mut x = vec![0.0f32; n];
    let mut per_a_min = vec![f32::INFINITY; threat_units.len()];

    for (ai, &a) in threat_units.iter().enumerate() {
        let mut minx = f32::INFINITY;
        for (i, &u) in grid.units.iter().enumerate() {
            let d = unit_distance_km(u, a) as f32;
            x[i] = d;
            minx = minx.min(d);
        }
        // cheapest possible deviation from this attacker point
        if 2.0 * minx - grid.max_intra >= best {
            per_a_min[ai] = 2.0 * minx - grid.max_intra;
            continue;
        }
        let mut a_min = f32::INFINITY;
        for i in 0..n {
            let xi = x[i];
            if xi + minx - grid.max_row[i] >= best.min(a_min) {
                continue;
            }
            let row = &grid.dvv[i * n..(i + 1) * n];
            // vectorizable scan over j >= i
            let mut row_min = f32::INFINITY;
            let mut row_arg = i;
            for j in i..n {
                let v = xi + x[j] - row[j];
                if v < row_min {
                    row_min = v;
                    row_arg = j;
                }
            }
            if row_min < a_min {
                a_min = row_min;
            }
            if row_min < best {
                best = row_min;
                best_idx = (i, row_arg, ai);
            }
        }
        per_a_min[ai] = a_min;
    }

    let arg_triple = Triple {
        s: grid.units[best_idx.0],
        d: grid.units[best_idx.1],
        a: threat_units[best_idx.2],
    };

    if tie_break_km <= 0.0 {
        return (best as f64, arg_triple, arg_triple);
    }

    // second pass: among triples within tie_break_km of the optimum, take
    // the one with the largest S-D separation
    let thresh = best + tie_break_km as f32;
    let mut spread_idx = best_idx;
    let mut spread_sd = grid.dvv[best_idx.0 * n + best_idx.1];
    for (ai, &a) in threat_units.iter().enumerate() {
        if per_a_min[ai] > thresh {
            continue;
        }
        let mut minx = f32::INFINITY;
        for (i, &u) in grid.units.iter().enumerate() {
            let d = unit_distance_km(u, a) as f32;
            x[i] = d;
            minx = minx.min(d);
        }
        for i in 0..n {
            let xi = x[i];
            if xi + minx - grid.max_row[i] > thresh {
                continue;
            }
            let row = &grid.dvv[i * n..(i + 1) * n];
            for j in i..n {
                if xi + x[j] - row[j] <= thresh && row[j] > spread_sd {
                    spread_sd = row[j];
                    spread_idx = (i, j, ai);
                }
            }
        }
    }
    let spread_triple = Triple {
        s: grid.units[spread_idx.0],
        d: grid.units[spread_idx.1],
        a: threat_units[spread_idx.2],
    };
    (best as f64, arg_triple, spread_triple)
}

fn dev_of(t: &Triple) -> f64 {
    unit_distance_km(t.s, t.a) + unit_distance_km(t.d, t.a) - unit_distance_km(t.s, t.d)
}

fn sd_of(t: &Triple) -> f64 {
    unit_distance_km(t.s, t.d)
}

/// Local exhaustive refinement around seed triples at `fine_km`.
fn refine(
    victim: &Country,
    threat: &Country,
    mode: BoundaryMode,
    seeds: &[Triple],
    radius_km: f64,
    fine_km: f64,
    tie_break_km: f64,
) -> (f64, Triple) {
    let mut best_dev = f64::INFINITY;
    let mut candidates: Vec<Triple> = Vec::new();
    for seed in seeds {
        let near_s = crate::geodesy::near_points_for_refinement(victim, mode, seed.s, radius_km, fine_km);
        let near_d = crate::geodesy::near_points_for_refinement(victim, mode, seed.d, radius_km, fine_km);
        let near_a = crate::geodesy::near_points_for_refinement(threat, mode, seed.a, radius_km, fine_km);
        for &s in &near_s {
            for &d in &near_d {
                let d_sd = unit_distance_km(s, d);
                for &a in &near_a {
                    let dev = unit_distance_km(s, a) + unit_distance_km(d, a) - d_sd;
                    if dev < best_dev {
                        best_dev = dev;
                    }
                    if dev <= best_dev + tie_break_km {
                        candidates.push(Triple { s, d, a });
                    }
                }
            }
        }
    }
    // among near-optimal candidates, largest separation wins
    let mut chosen = *candidates.first().expect("refinement sets are non-empty");
    let mut chosen_sd = -1.0;
    for t in &candidates {
        if dev_of(t) <= best_dev + tie_break_km {
            let sd = sd_of(t);
            if sd > chosen_sd {
                chosen_sd = sd;
                chosen = *t;
            }
        }
    }
    (best_dev, chosen)
}

fn attack_from_grid(
    victim: &Country,
    threat: &Country,
    mode: BoundaryMode,
    grid: &VictimGrid,
    threat_units: &[[f64; 3]],
    threat_res: f64,
    params: &AttackSearchParams,
) -> OptimalAttack {
    let (_, arg_triple, spread_triple) = grid_search(grid, threat_units, params.tie_break_km);
    let radius = 2.0 * grid.effective_resolution_km.max(threat_res).max(params.resolution_km);
    let (_, chosen) = refine(
        victim,
        threat,
        mode,
        &[arg_triple, spread_triple],
        radius,
        params.fine_km,
        params.tie_break_km,
    );
    OptimalAttack::from_triple(
        &victim.name,
        &threat.name,
        GeoPoint::from_unit(chosen.s),
        GeoPoint::from_unit(chosen.d),
        GeoPoint::from_unit(chosen.a),
    )
}

/// Optimal attack for a single (victim, threat) pair.
pub fn optimal_attack(
    set: &CountryBoundarySet,
    victim: &str,
    threat: &str,
    mode: BoundaryMode,
    params: &AttackSearchParams,
) -> Result<OptimalAttack, GeodesyError> {
    let vi = set.index_of(victim)?;
    let ti = set.index_of(threat)?;
    let victim = &set.countries[vi];
    let threat = &set.countries[ti];
    let grid = build_victim_grid(victim, mode, params);
    let sampled_t = search_points(threat, mode, params.resolution_km, params.max_points_per_country);
    Ok(attack_from_grid(
        victim,
        threat,
        mode,
        &grid,
        &sampled_t.units,
        sampled_t.effective_resolution_km,
        params,
    ))
}

/// Optimal attacks for every ordered (victim, threat) pair, parallel over
/// victims. Output is ordered victim-major in the boundary-set order.
pub fn optimal_attacks_all(
    set: &CountryBoundarySet,
    mode: BoundaryMode,
    params: &AttackSearchParams,
) -> Vec<OptimalAttack> {
    let sampled: Vec<_> = set
        .countries
        .iter()
        .map(|c| search_points(c, mode, params.resolution_km, params.max_points_per_country))
        .collect();
    set.countries
        .par_iter()
        .enumerate()
        .flat_map_iter(|(vi, victim)| {
            let grid = build_victim_grid(victim, mode, params);
            let countries = &set.countries;
            let sampled = &sampled;
            let params = params.clone();
            (0..countries.len())
                .filter(move |&ti| ti != vi)
                .map(move |ti| {
                    attack_from_grid(
                        victim,
                        &countries[ti],
                        mode,
                        &grid,
                        &sampled[ti].units,
                        sampled[ti].effective_resolution_km,
                        &params,
                    )
                })
                .collect::<Vec<_>>()
                .into_iter()
        })
        .collect()
}

/// A named threat region: one or more polygons an attacker could occupy.
#[derive(Debug, Clone)]
pub struct ThreatRegion {
    pub name: String,
    pub polygons: Vec<Polygon>,
}

impl ThreatRegion {
    pub fn from_country(country: &Country, mode: BoundaryMode) -> Self {
        let polygons = match mode {
            BoundaryMode::Mainland => vec![country.polygons[country.mainland_index].clone()],
            BoundaryMode::Entire => country.polygons.clone(),
        };
        Self {
            name: country.name.clone(),
            polygons,
        }
    }

    fn contains(&self, p: GeoPoint) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// Smallest possible mid-attack round-trip time for traffic between `src`
/// and `dst` when the attacker sits anywhere in one of `regions`:
/// `min over A of km_to_ms(delta(S,D) + delta(S,A) + delta(D,A))`.
///
/// Always at least the pre-attack RTT `km_to_ms(2 delta(S,D))`; equals it
/// exactly when a region touches the S-D great-circle path.
pub fn lower_bound_mid_rtt(
    src: GeoPoint,
    dst: GeoPoint,
    regions: &[ThreatRegion],
    resolution_km: DistanceKm,
) -> Result<DelayMs, GeodesyError> {
    if regions.is_empty() {
        return Err(GeodesyError::EmptyDataset);
    }
    if !(resolution_km.0 > 0.0) {
        return Err(GeodesyError::BadResolution(resolution_km.0));
    }
    let d_sd = great_circle_km(src, dst).0;

    // attacker on the path: zero detour
    let su = src.unit();
    let du = dst.unit();
    let steps = (d_sd / resolution_km.0).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let p = GeoPoint::from_unit(crate::geodesy::slerp(su, du, k as f64 / steps as f64));
        if regions.iter().any(|r| r.contains(p)) {
            return Ok(km_to_ms(DistanceKm(2.0 * d_sd)));
        }
    }

    let mut best = f64::INFINITY;
    let mut best_a = su;
    for region in regions {
        for poly in &region.polygons {
            for ring in poly.rings() {
                for a in resample_ring_units(ring, resolution_km.0) {
                    let sum = unit_distance_km(su, a) + unit_distance_km(du, a);
                    if sum < best {
                        best = sum;
                        best_a = a;
                    }
                }
            }
        }
    }
    // local fine pass around the best boundary point
    for region in regions {
        for poly in &region.polygons {
            for ring in poly.rings() {
                for a in resample_ring_units(ring, resolution_km.0 / 5.0) {
                    if unit_distance_km(a, best_a) <= 2.0 * resolution_km.0 {
                        let sum = unit_distance_km(su, a) + unit_distance_km(du, a);
                        if sum < best {
                            best = sum;
                        }
                    }
                }
            }
        }
    }
    Ok(km_to_ms(DistanceKm(d_sd + best)))
}

/// Writes the attacks table as CSV with a schema header line.
pub fn write_attacks_csv<W: std::io::Write>(w: W, attacks: &[OptimalAttack]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(w);
    wtr.write_record([
        "#schema=rttwatch.attacks.v1",
        "", "", "", "", "", "", "", "", "", "", "", "", "",
    ])?;
    wtr.write_record([
        "victim", "threat", "s_lat", "s_lon", "d_lat", "d_lon", "a_lat", "a_lon",
        "delta_pre_km", "delta_mid_km", "delta_dev_km", "tau_pre_ms", "tau_mid_ms", "tau_dev_ms",
    ])?;
    for at in attacks {
        wtr.write_record([
            at.victim.clone(),
            at.threat.clone(),
            format!("{:.6}", at.s.lat),
            format!("{:.6}", normalize_lon(at.s.lon)),
            format!("{:.6}", at.d.lat),
            format!("{:.6}", normalize_lon(at.d.lon)),
            format!("{:.6}", at.a.lat),
            format!("{:.6}", normalize_lon(at.a.lon)),
            format!("{:.3}", at.delta_pre_km),
            format!("{:.3}", at.delta_mid_km),
            format!("{:.3}", at.delta_dev_km),
            format!("{:.4}", at.tau_pre_ms),
            format!("{:.4}", at.tau_mid_ms),
            format!("{:.4}", at.tau_dev_ms),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
