//! Small numeric helpers shared across modules.

/// Percentile with linear interpolation between closest ranks, matching
/// the common numpy default. `p` in [0, 100]. Input must be non-empty.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    percentile_sorted(&sorted, p)
}

/// Percentile over an already sorted slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let p = p.clamp(0.0, 100.0);
    let idx = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = idx - lo as f64;
        sorted[lo] * (1.0 - t) + sorted[hi] * t
    }
}

/// Ordinary least squares fit y = slope*x + intercept. Requires at least
/// two distinct x values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Pool-adjacent-violators: smallest non-decreasing sequence change in
/// least squares, used to repair crossing percentile fits.
pub fn isotonic_non_decreasing(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    for &v in values {
        level.push(v);
        weight.push(1.0);
        while level.len() > 1 && level[level.len() - 2] > level[level.len() - 1] {
            let (l2, w2) = (level.pop().unwrap(), weight.pop().unwrap());
            let (l1, w1) = (level.pop().unwrap(), weight.pop().unwrap());
            level.push((l1 * w1 + l2 * w2) / (w1 + w2));
            weight.push(w1 + w2);
        }
    }
    let mut out = Vec::with_capacity(n);
    for (l, w) in level.iter().zip(&weight) {
        for _ in 0..(*w as usize) {
            out.push(*l);
        }
    }
    out
}
