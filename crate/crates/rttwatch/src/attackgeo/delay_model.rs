//! Empirical distance-to-delay model: bin observed (distance, minimum
//! one-way delay) samples into 200 km distance bins, take per-bin
//! percentiles, and fit one linear regression per percentile. Percentile
//! crossings from independent fits are repaired with an isotonic pass so
//! the model is monotone in the percentile at every distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::FIBER_KM_PER_MS;
use crate::stats::{isotonic_non_decreasing, linear_fit, percentile_sorted};

pub const DEFAULT_BIN_WIDTH_KM: f64 = 200.0;
pub const DEFAULT_MAX_KM: f64 = 20_075.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least 2 populated distance bins, got {0}")]
    TooFewBins(usize),
    #[error("no usable samples after filtering")]
    NoSamples,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad model file: {0}")]
    BadFile(String),
}

/// Per-percentile linear delay estimates over great-circle distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileDelayModel {
    pub bin_width_km: f64,
    pub max_km: f64,
    /// Index p-1 holds the fit for percentile p (p = 1..=100):
    /// `owd_ms = slope * distance_km + intercept`.
    pub lines: Vec<(f64, f64)>,
}

impl PercentileDelayModel {
    /// Estimated one-way delay at `percentile` (1..=100) for `distance_km`.
    pub fn estimate_ms(&self, percentile: usize, distance_km: f64) -> f64 {
        let p = percentile.clamp(1, 100);
        let (slope, intercept) = self.lines[p - 1];
        slope * distance_km + intercept
    }

    /// An idealized model where every percentile is the speed of light in
    /// fiber (used to cross-check against the geometric analysis).
    pub fn speed_of_light() -> Self {
        Self {
            bin_width_km: DEFAULT_BIN_WIDTH_KM,
            max_km: DEFAULT_MAX_KM,
            lines: vec![(1.0 / FIBER_KM_PER_MS, 0.0); 100],
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), ModelError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["#schema=rttwatch.delay-model.v1", "", ""])?;
        wtr.write_record(["percentile", "slope_ms_per_km", "intercept_ms"])?;
        for (i, (slope, intercept)) in self.lines.iter().enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                format!("{slope:.9}"),
                format!("{intercept:.6}"),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut lines = vec![(0.0, 0.0); 100];
        let mut seen = 0;
        for rec in rdr.records() {
            let rec = rec?;
            let p: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::BadFile("bad percentile".into()))?;
            if !(1..=100).contains(&p) {
                return Err(ModelError::BadFile(format!("percentile {p} out of range")));
            }
            let slope: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::BadFile("bad slope".into()))?;
            let intercept: f64 = rec
                .get(2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::BadFile("bad intercept".into()))?;
            lines[p - 1] = (slope, intercept);
            seen += 1;
        }
        if seen != 100 {
            return Err(ModelError::BadFile(format!("expected 100 percentile rows, got {seen}")));
        }
        Ok(Self {
            bin_width_km: DEFAULT_BIN_WIDTH_KM,
            max_km: DEFAULT_MAX_KM,
            lines,
        })
    }
}

/// What the fit did with its input.
#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub total_samples: usize,
    /// Samples faster than the speed of light for their distance.
    pub excluded_impossible: usize,
    pub populated_bins: usize,
}

/// Fits the percentile model from `(distance_km, min_owd_ms)` samples.
pub fn fit_percentile_model(
    samples: &[(f64, f64)],
) -> Result<(PercentileDelayModel, FitReport), ModelError> {
    fit_percentile_model_with(samples, DEFAULT_BIN_WIDTH_KM, DEFAULT_MAX_KM)
}

pub fn fit_percentile_model_with(
    samples: &[(f64, f64)],
    bin_width_km: f64,
    max_km: f64,
) -> Result<(PercentileDelayModel, FitReport), ModelError> {
    let nbins = (max_km / bin_width_km).ceil() as usize;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nbins];
    let mut report = FitReport {
        total_samples: samples.len(),
        ..Default::default()
    };
    for &(d, owd) in samples {
        if !(d >= 0.0) || !owd.is_finite() {
            report.excluded_impossible += 1;
            continue;
        }
        if owd < d / FIBER_KM_PER_MS {
            report.excluded_impossible += 1;
            continue;
        }
        let idx = ((d / bin_width_km) as usize).min(nbins - 1);
        bins[idx].push(owd);
    }
    for bin in bins.iter_mut() {
        bin.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    }
    let populated: Vec<usize> = (0..nbins).filter(|&i| !bins[i].is_empty()).collect();
    report.populated_bins = populated.len();
    if report.total_samples == report.excluded_impossible {
        return Err(ModelError::NoSamples);
    }
    if populated.len() < 2 {
        return Err(ModelError::TooFewBins(populated.len()));
    }

    let xs: Vec<f64> = populated
        .iter()
        .map(|&i| (i as f64 + 0.5) * bin_width_km)
        .collect();
    let mut slopes = Vec::with_capacity(100);
    let mut intercepts = Vec::with_capacity(100);
    for p in 1..=100 {
        let ys: Vec<f64> = populated
            .iter()
            .map(|&i| percentile_sorted(&bins[i], p as f64))
            .collect();
        let (slope, intercept) = linear_fit(&xs, &ys).ok_or(ModelError::TooFewBins(1))?;
        slopes.push(slope.max(0.0));
        intercepts.push(intercept);
    }
    // repair percentile crossings: monotone slope and intercept in p give a
    // monotone estimate at every non-negative distance
    let slopes = isotonic_non_decreasing(&slopes);
    let intercepts = isotonic_non_decreasing(&intercepts);
    let lines = slopes.into_iter().zip(intercepts).collect();
    Ok((
        PercentileDelayModel {
            bin_width_km,
            max_km,
            lines,
        },
        report,
    ))
}
