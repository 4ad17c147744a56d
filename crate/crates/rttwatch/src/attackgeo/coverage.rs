//! Attack coverage analytics: the share of optimal attacks whose RTT
//! deviation clears a detection condition, overall and per victim, plus
//! the coverage curves over deviation and mid/pre RTT ratio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geodesy::{great_circle_km, DelayMs};
use crate::stats::percentile_sorted;

use super::{OptimalAttack, PercentileDelayModel};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coverage_pct: f64,
    pub value: f64,
}

/// Coverage of a set of optimal attacks under a detection condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub condition_ms: f64,
    pub total_attacks: usize,
    pub overall_pct: f64,
    /// Victim country -> % of attacks on it that are covered.
    pub per_victim: BTreeMap<String, f64>,
    /// (attacks_pct, countries_pct): the share of countries whose
    /// per-victim coverage is at least attacks_pct.
    pub countries_vs_attacks: Vec<(f64, f64)>,
    /// Deviation (ms) at each coverage level: `value` is the deviation
    /// that `coverage_pct` percent of attacks meet or exceed.
    pub deviation_curve: Vec<CurvePoint>,
    /// Mid/pre RTT ratio at each coverage level.
    pub ratio_curve: Vec<CurvePoint>,
    pub min_victim: String,
    pub min_victim_pct: f64,
}

impl CoverageReport {
    /// Deviation (ms) met by `pct` percent of attacks.
    pub fn deviation_at_coverage(&self, pct: f64) -> f64 {
        interp_curve(&self.deviation_curve, pct)
    }

    /// Mid/pre ratio met by `pct` percent of attacks.
    pub fn ratio_at_coverage(&self, pct: f64) -> f64 {
        interp_curve(&self.ratio_curve, pct)
    }

    /// Share of attacks every single country is covered against.
    pub fn attacks_pct_all_countries(&self) -> f64 {
        self.min_victim_pct
    }

    /// Plain-text serialization with a schema header.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "#schema=rttwatch.coverage.v1").unwrap();
        writeln!(s, "condition_ms: {}", self.condition_ms).unwrap();
        writeln!(s, "total_attacks: {}", self.total_attacks).unwrap();
        writeln!(s, "overall_coverage_pct: {:.2}", self.overall_pct).unwrap();
        writeln!(
            s,
            "min_victim: {} ({:.2}%)",
            self.min_victim, self.min_victim_pct
        )
        .unwrap();
        writeln!(s, "\n[per_victim]").unwrap();
        for (name, pct) in &self.per_victim {
            writeln!(s, "{name}: {pct:.2}").unwrap();
        }
        writeln!(s, "\n[countries_vs_attacks]").unwrap();
        for (a, c) in &self.countries_vs_attacks {
            writeln!(s, "{a:.1} {c:.2}").unwrap();
        }
        writeln!(s, "\n[deviation_curve]").unwrap();
        for p in &self.deviation_curve {
            writeln!(s, "{:.1} {:.3}", p.coverage_pct, p.value).unwrap();
        }
        writeln!(s, "\n[ratio_curve]").unwrap();
        for p in &self.ratio_curve {
            writeln!(s, "{:.1} {:.4}", p.coverage_pct, p.value).unwrap();
        }
        s
    }
}

fn interp_curve(curve: &[CurvePoint], pct: f64) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    let mut prev = curve[0];
    for p in curve {
        if p.coverage_pct >= pct {
            if (p.coverage_pct - prev.coverage_pct).abs() < 1e-12 {
                return p.value;
            }
            let t = (pct - prev.coverage_pct) / (p.coverage_pct - prev.coverage_pct);
            return prev.value * (1.0 - t) + p.value * t;
        }
        prev = *p;
    }
    curve.last().unwrap().value
}

struct AttackSample<'a> {
    victim: &'a str,
    dev_ms: f64,
    pre_ms: f64,
    mid_ms: f64,
}

fn build_report(samples: Vec<AttackSample<'_>>, condition_ms: f64) -> CoverageReport {
    let total = samples.len();
    let covered = samples.iter().filter(|s| s.dev_ms >= condition_ms).count();

    let mut by_victim: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in &samples {
        let e = by_victim.entry(s.victim).or_insert((0, 0));
        e.0 += 1;
        if s.dev_ms >= condition_ms {
            e.1 += 1;
        }
    }
    let per_victim: BTreeMap<String, f64> = by_victim
        .iter()
        .map(|(name, (n, c))| (name.to_string(), 100.0 * *c as f64 / *n as f64))
        .collect();
    let (min_victim, min_victim_pct) = per_victim
        .iter()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(n, p)| (n.clone(), *p))
        .unwrap_or_default();

    // countries_vs_attacks: for each attacks threshold, the share of
    // countries covered against at least that share of their attacks
    let n_countries = per_victim.len().max(1);
    let countries_vs_attacks: Vec<(f64, f64)> = (0..=100)
        .map(|t| {
            let t = t as f64;
            let cnt = per_victim.values().filter(|&&p| p >= t).count();
            (t, 100.0 * cnt as f64 / n_countries as f64)
        })
        .collect();

    let mut devs: Vec<f64> = samples.iter().map(|s| s.dev_ms).collect();
    devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ratios: Vec<f64> = samples
        .iter()
        .map(|s| {
            if s.pre_ms > 1e-9 {
                s.mid_ms / s.pre_ms
            } else {
                f64::INFINITY
            }
        })
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut deviation_curve = Vec::with_capacity(100);
    let mut ratio_curve = Vec::with_capacity(100);
    for cov in 1..=100 {
        let q = 100.0 - cov as f64; // value exceeded by `cov`% of attacks
        deviation_curve.push(CurvePoint {
            coverage_pct: cov as f64,
            value: percentile_sorted(&devs, q),
        });
        ratio_curve.push(CurvePoint {
            coverage_pct: cov as f64,
            value: percentile_sorted(&ratios, q),
        });
    }

    CoverageReport {
        condition_ms,
        total_attacks: total,
        overall_pct: if total == 0 {
            0.0
        } else {
            100.0 * covered as f64 / total as f64
        },
        per_victim,
        countries_vs_attacks,
        deviation_curve,
        ratio_curve,
        min_victim,
        min_victim_pct,
    }
}

/// Coverage under ideal (speed-of-light) conditions: an attack is covered
/// when its geometric RTT deviation is at least `condition_ms`.
pub fn coverage_report(attacks: &[OptimalAttack], condition_ms: DelayMs) -> CoverageReport {
    let samples = attacks
        .iter()
        .map(|a| AttackSample {
            victim: &a.victim,
            dev_ms: a.tau_dev_ms,
            pre_ms: a.tau_pre_ms,
            mid_ms: a.tau_mid_ms,
        })
        .collect();
    build_report(samples, condition_ms.0)
}

/// Coverage under measured network conditions: the pre-attack minRTT is
/// estimated pessimistically from the model's 75th percentile over the
/// host separation; the mid-attack minRTT optimistically from the 25th
/// percentile per leg. An attack is covered when even this unlucky
/// combination shifts the minRTT by `condition_ms`.
pub fn realistic_defendability(
    model: &PercentileDelayModel,
    attacks: &[OptimalAttack],
    condition_ms: DelayMs,
) -> CoverageReport {
    let samples = attacks
        .iter()
        .map(|a| {
            let d_sd = great_circle_km(a.s, a.d).0;
            let d_sa = great_circle_km(a.s, a.a).0;
            let d_da = great_circle_km(a.d, a.a).0;
            let pre = 2.0 * model.estimate_ms(75, d_sd);
            let mid =
                model.estimate_ms(25, d_sd) + model.estimate_ms(25, d_sa) + model.estimate_ms(25, d_da);
            AttackSample {
                victim: &a.victim,
                dev_ms: mid - pre,
                pre_ms: pre,
                mid_ms: mid,
            }
        })
        .collect();
    build_report(samples, condition_ms.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::GeoPoint;

    fn attack(victim: &str, dev_ms: f64, pre_ms: f64) -> OptimalAttack {
        let p = GeoPoint { lat: 0.0, lon: 0.0 };
        OptimalAttack {
            victim: victim.into(),
            threat: "T".into(),
            s: p,
            d: p,
            a: p,
            delta_pre_km: pre_ms * crate::geodesy::FIBER_KM_PER_MS,
            delta_mid_km: (pre_ms + dev_ms) * crate::geodesy::FIBER_KM_PER_MS,
            delta_dev_km: dev_ms * crate::geodesy::FIBER_KM_PER_MS,
            tau_pre_ms: pre_ms,
            tau_mid_ms: pre_ms + dev_ms,
            tau_dev_ms: dev_ms,
        }
    }

    #[test]
    fn overall_and_per_victim() {
        let attacks = vec![
            attack("A", 10.0, 5.0),
            attack("A", 2.0, 5.0),
            attack("B", 30.0, 5.0),
            attack("B", 40.0, 5.0),
        ];
        let r = coverage_report(&attacks, DelayMs(5.0));
        assert!((r.overall_pct - 75.0).abs() < 1e-9);
        assert!((r.per_victim["A"] - 50.0).abs() < 1e-9);
        assert!((r.per_victim["B"] - 100.0).abs() < 1e-9);
        assert_eq!(r.min_victim, "A");
    }

    #[test]
    fn coverage_monotone_in_condition() {
        let attacks: Vec<OptimalAttack> = (0..50)
            .map(|k| attack("V", k as f64, 10.0))
            .collect();
        let mut prev = 101.0;
        for cond in [0.0, 5.0, 10.0, 20.0, 45.0] {
            let r = coverage_report(&attacks, DelayMs(cond));
            assert!(r.overall_pct <= prev + 1e-9);
            prev = r.overall_pct;
        }
    }

    #[test]
    fn ideal_model_collapses_to_geometric_coverage() {
        let p1 = GeoPoint { lat: 0.0, lon: 0.0 };
        let p2 = GeoPoint { lat: 0.0, lon: 10.0 };
        let p3 = GeoPoint { lat: 20.0, lon: 5.0 };
        let a = OptimalAttack::from_triple("V", "T", p1, p2, p3);
        let model = PercentileDelayModel::speed_of_light();
        let ideal = coverage_report(&[a.clone()], DelayMs(5.0));
        let real = realistic_defendability(&model, &[a], DelayMs(5.0));
        assert_eq!(ideal.overall_pct, real.overall_pct);
        let dev_i = ideal.deviation_curve[49].value;
        let dev_r = real.deviation_curve[49].value;
        assert!((dev_i - dev_r).abs() < 1e-6, "{dev_i} vs {dev_r}");
    }

    #[test]
    fn pessimistic_model_cannot_beat_ideal() {
        // p75 strictly above p25: realistic deviation below geometric
        let mut model = PercentileDelayModel::speed_of_light();
        for p in 75..=100 {
            let (s, i) = model.lines[p - 1];
            model.lines[p - 1] = (s * 1.3, i + 8.0);
        }
        let p1 = GeoPoint { lat: 0.0, lon: 0.0 };
        let p2 = GeoPoint { lat: 0.0, lon: 12.0 };
        let p3 = GeoPoint { lat: 30.0, lon: 6.0 };
        let a = OptimalAttack::from_triple("V", "T", p1, p2, p3);
        let ideal = coverage_report(&[a.clone()], DelayMs(5.0));
        let real = realistic_defendability(&model, &[a], DelayMs(5.0));
        let dev_i = ideal.deviation_curve[0].value;
        let dev_r = real.deviation_curve[0].value;
        assert!(dev_r <= dev_i + 1e-9, "realistic {dev_r} vs ideal {dev_i}");
        assert!(real.overall_pct <= ideal.overall_pct + 1e-9);
    }

    #[test]
    fn curve_lookups_interpolate() {
        let attacks: Vec<OptimalAttack> = (1..=100)
            .map(|k| attack("V", k as f64, 10.0))
            .collect();
        let r = coverage_report(&attacks, DelayMs(5.0));
        // 95% of attacks have dev >= ~5.95 (linear interp of 1..=100)
        let d95 = r.deviation_at_coverage(95.0);
        assert!((d95 - 5.95).abs() < 0.2, "{d95}");
        let d50 = r.deviation_at_coverage(50.0);
        assert!((d50 - 50.5).abs() < 0.6, "{d50}");
    }
}
