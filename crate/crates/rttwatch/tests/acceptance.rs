//! Acceptance suite: every criterion prints one PASS/FAIL line.
//!
//! The geodesy criteria run against the bundled Admin-0 boundary dataset
//! (`data/countries.geojson`); the heavy survey and attack-search fixtures
//! are computed once and shared across criteria.

use std::sync::OnceLock;
use std::time::Instant;

use rttwatch::attackgeo::{
    coverage_report, optimal_attack, optimal_attacks_all, AttackSearchParams, CoverageReport,
    OptimalAttack,
};
use rttwatch::geodesy::{
    distance_survey, load_boundaries, BoundaryMode, CountryBoundarySet, DelayMs, DistanceKm,
    DistanceSurvey, FIBER_KM_PER_MS,
};
use rttwatch::stats::percentile;

fn data_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/countries.geojson")
}

fn boundaries() -> &'static CountryBoundarySet {
    static SET: OnceLock<CountryBoundarySet> = OnceLock::new();
    SET.get_or_init(|| load_boundaries(data_path()).expect("bundled boundary dataset loads"))
}

struct SurveyFixture {
    survey: DistanceSurvey,
    elapsed_s: f64,
}

fn survey() -> &'static SurveyFixture {
    static S: OnceLock<SurveyFixture> = OnceLock::new();
    S.get_or_init(|| {
        let t0 = Instant::now();
        let survey = distance_survey(
            boundaries(),
            BoundaryMode::Mainland,
            DistanceKm(25.0),
            DistanceKm(5.0),
        );
        SurveyFixture {
            survey,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

struct AttackFixture {
    attacks: Vec<OptimalAttack>,
    report: CoverageReport,
    elapsed_s: f64,
}

fn attacks() -> &'static AttackFixture {
    static A: OnceLock<AttackFixture> = OnceLock::new();
    A.get_or_init(|| {
        let t0 = Instant::now();
        let attacks = optimal_attacks_all(
            boundaries(),
            BoundaryMode::Mainland,
            &AttackSearchParams::default(),
        );
        let report = coverage_report(&attacks, DelayMs(5.0));
        AttackFixture {
            attacks,
            report,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn check(criterion: &str, pass: bool, detail: String) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

fn within(value: f64, expected: f64, rel_tol: f64) -> bool {
    (value - expected).abs() <= rel_tol * expected
}

#[test]
fn criterion_01_geodesy_percentiles() {
    let fx = survey();
    let max_intra = &fx.survey.max_intra_km;
    let pairs = fx.survey.pair_distances();

    let mi = [
        percentile(max_intra, 25.0),
        percentile(max_intra, 50.0),
        percentile(max_intra, 75.0),
    ];
    let pi = [
        percentile(&pairs, 25.0),
        percentile(&pairs, 50.0),
        percentile(&pairs, 75.0),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (got, want) in mi.iter().zip([49.0, 413.0, 1129.0]) {
        ok &= within(*got, want, 0.10);
        detail.push_str(&format!("intra {got:.1}/{want} "));
    }
    for (got, want) in pi.iter().zip([4027.0, 7689.0, 11420.0]) {
        ok &= within(*got, want, 0.10);
        detail.push_str(&format!("inter {got:.0}/{want} "));
    }
    // one-way delays follow by linearity at c_f
    let owd_intra: Vec<f64> = mi.iter().map(|d| d / FIBER_KM_PER_MS).collect();
    let owd_inter: Vec<f64> = pi.iter().map(|d| d / FIBER_KM_PER_MS).collect();
    for (got, want) in owd_intra.iter().zip([0.2, 2.1, 5.6]) {
        ok &= (got - want).abs() <= 0.10 * want + 0.05;
    }
    for (got, want) in owd_inter.iter().zip([20.0, 38.0, 57.0]) {
        ok &= (got - want).abs() <= 0.10 * want + 0.5;
    }
    ok &= fx.elapsed_s < 1800.0;
    detail.push_str(&format!("elapsed {:.0}s", fx.elapsed_s));
    check("1 geodesy percentiles", ok, detail);
}

#[test]
fn criterion_02_ideal_coverage() {
    let fx = attacks();
    let r = &fx.report;
    let mut ok = true;
    let mut detail = String::new();

    detail.push_str(&format!("overall {:.2}% ", r.overall_pct));
    ok &= (r.overall_pct - 96.6).abs() <= 2.0;

    let russia = r.per_victim.get("Russia").copied().unwrap_or(0.0);
    detail.push_str(&format!("Russia {russia:.1}% "));
    ok &= (russia - 85.0).abs() <= 3.0;
    detail.push_str(&format!("min={} ", r.min_victim));
    ok &= r.min_victim == "Russia";

    let nz = r.per_victim.get("New Zealand").copied().unwrap_or(0.0);
    detail.push_str(&format!("NZ {nz:.1}% "));
    ok &= nz == 100.0;

    // every country is defendable against at least this share of attacks
    let all_point = r.attacks_pct_all_countries();
    detail.push_str(&format!("all-countries point {all_point:.1}% "));
    ok &= (all_point - 84.0).abs() <= 2.0;

    let dev95 = r.deviation_at_coverage(95.0);
    let dev85 = r.deviation_at_coverage(85.0);
    let ratio95 = r.ratio_at_coverage(95.0);
    let ratio85 = r.ratio_at_coverage(85.0);
    detail.push_str(&format!(
        "dev95 {dev95:.1}ms dev85 {dev85:.1}ms ratio95 {ratio95:.2}x ratio85 {ratio85:.2}x elapsed {:.0}s",
        fx.elapsed_s
    ));
    ok &= (dev95 - 8.0).abs() <= 1.0;
    ok &= (dev85 - 23.0).abs() <= 1.0;
    ok &= (ratio95 - 2.0).abs() <= 0.5;
    ok &= (ratio85 - 4.0).abs() <= 0.5;

    check("2 ideal coverage", ok, detail);
}

#[test]
fn criterion_03_uk_north_korea_bound() {
    let at = optimal_attack(
        boundaries(),
        "United Kingdom",
        "North Korea",
        BoundaryMode::Mainland,
        &AttackSearchParams::default(),
    )
    .expect("UK and North Korea are in the dataset");
    let ok = at.delta_dev_km >= 15_000.0 && at.tau_dev_ms >= 73.0;
    check(
        "3 UK->North Korea bound",
        ok,
        format!("extra {:.0} km, {:.2} ms", at.delta_dev_km, at.tau_dev_ms),
    );
}

#[test]
fn criterion_04_deviation_surface() {
    use rttwatch::attackgeo::deviation_surface;
    let z = deviation_surface(&[0.0, 1090.0], &[2500.0, 3045.0]);
    let z1 = z[0][0].0; // x=0, y=2500
    let z2 = z[1][1].0; // x=1090, y=3045
    let ok = (z1 - 25.0).abs() <= 0.1 && (z2 - 25.0).abs() <= 0.1;
    check("4 deviation surface", ok, format!("z(0,2500)={z1:.2} z(1090,3045)={z2:.2}"));
}
