//! Straight-line reference of the two-window surge rule, kept independent
//! of the streaming engine so differential tests can compare the two.
//!
//! Windows are laid on a fixed lattice anchored at the first sample.
//! Detection requires two adjacent valid windows satisfying both surge
//! conditions, plus at least one sample in the immediately following
//! window (the streaming engine is sample-driven: a rollover only happens
//! when a later sample crosses the boundary, and a gap of more than one
//! window invalidates the comparison).

/// First detection over a time-sorted single-prefix stream of
/// `(t_us, rtt_ms)` samples, or `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceDetection {
    /// End of the surging window (the changepoint).
    pub boundary_us: u64,
    pub min_prev_ms: f64,
    pub min_cur_ms: f64,
}

pub fn first_detection(
    samples: &[(u64, f64)],
    window_s: f64,
    min_samples: u32,
    tau_mid_ms: f64,
    lambda_ms: f64,
) -> Option<ReferenceDetection> {
    if samples.is_empty() {
        return None;
    }
    let window_us = (window_s * 1e6) as u64;
    let t0 = samples[0].0;
    let last_idx = (samples.last().unwrap().0 - t0) / window_us;

    let n = last_idx as usize + 1;
    let mut mins = vec![f64::INFINITY; n];
    let mut counts = vec![0u32; n];
    for &(t, rtt) in samples {
        let w = ((t - t0) / window_us) as usize;
        counts[w] += 1;
        if rtt < mins[w] {
            mins[w] = rtt;
        }
    }
    for i in 1..n {
        let prev_valid = counts[i - 1] >= min_samples;
        let cur_valid = counts[i] >= min_samples;
        let follower_exists = i + 1 < n && counts[i + 1] > 0;
        if prev_valid
            && cur_valid
            && follower_exists
            && mins[i - 1] < tau_mid_ms
            && mins[i] > tau_mid_ms
            && (mins[i] - mins[i - 1]) > lambda_ms
        {
            return Some(ReferenceDetection {
                boundary_us: t0 + (i as u64 + 1) * window_us,
                min_prev_ms: mins[i - 1],
                min_cur_ms: mins[i],
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_textbook_surge() {
        let mut s = Vec::new();
        for k in 0..6u64 {
            s.push((k * 40_000, 190.0));
        }
        for k in 0..6u64 {
            s.push((250_000 + k * 40_000, 215.0));
        }
        s.push((500_000, 215.0)); // the follower that triggers the rollover
        let d = first_detection(&s, 0.25, 5, 199.0, 5.0).unwrap();
        assert_eq!(d.boundary_us, 500_000);
        assert_eq!(d.min_prev_ms, 190.0);
        assert_eq!(d.min_cur_ms, 215.0);
    }

    #[test]
    fn no_follower_no_detection() {
        let mut s = Vec::new();
        for k in 0..6u64 {
            s.push((k * 40_000, 190.0));
        }
        for k in 0..6u64 {
            s.push((250_000 + k * 40_000, 215.0));
        }
        assert!(first_detection(&s, 0.25, 5, 199.0, 5.0).is_none());
    }
}
