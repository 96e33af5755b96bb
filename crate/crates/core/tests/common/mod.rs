//! Brute-force reference computations, written from the metric definitions
//! without sharing code with the library.

#![allow(dead_code)]

use nalgebra::DMatrix;

/// `s_j - ln(mean_{i != j} exp(s_i))`, summed directly after a shift.
pub fn llr(row: &[f64], j: usize) -> f64 {
    let others: Vec<f64> = row.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &v)| v).collect();
    let shift = others.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean: f64 = others.iter().map(|v| (v - shift).exp()).sum::<f64>() / others.len() as f64;
    row[j] - (shift + mean.ln())
}

/// Cavg with detections firing at `llr >= threshold`; `llrs` is `N x K`.
pub fn cavg(llrs: &DMatrix<f64>, truth: &[usize], p_target: f64, threshold: f64) -> f64 {
    let k = llrs.ncols();
    let mut total = 0.0;
    for target in 0..k {
        let rows: Vec<usize> = (0..truth.len()).filter(|&t| truth[t] == target).collect();
        let misses = rows.iter().filter(|&&t| llrs[(t, target)] < threshold).count();
        let p_miss = misses as f64 / rows.len() as f64;
        let mut fa_sum = 0.0;
        for other in (0..k).filter(|&o| o != target) {
            let non: Vec<usize> = (0..truth.len()).filter(|&t| truth[t] == other).collect();
            let fired = non.iter().filter(|&&t| llrs[(t, target)] >= threshold).count();
            fa_sum += fired as f64 / non.len() as f64;
        }
        total += p_target * p_miss + (1.0 - p_target) / (k - 1) as f64 * fa_sum;
    }
    total / k as f64
}

/// Minimum of [`cavg`] over every threshold that changes a decision.
pub fn min_cavg(llrs: &DMatrix<f64>, truth: &[usize], p_target: f64) -> f64 {
    let mut thresholds: Vec<f64> = llrs.iter().copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    thresholds
        .iter()
        .map(|&t| cavg(llrs, truth, p_target, t))
        .fold(f64::INFINITY, f64::min)
}

/// Pooled EER in percent: the miss and false-alarm curves evaluated by
/// counting at every candidate threshold, with the crossing linearly
/// interpolated between the last point where misses are below false alarms
/// and the first where they are not.
pub fn eer_percent(llrs: &DMatrix<f64>, truth: &[usize]) -> f64 {
    let mut tar = Vec::new();
    let mut non = Vec::new();
    for t in 0..llrs.nrows() {
        for j in 0..llrs.ncols() {
            if truth[t] == j {
                tar.push(llrs[(t, j)]);
            } else {
                non.push(llrs[(t, j)]);
            }
        }
    }
    let mut candidates: Vec<f64> = tar.iter().chain(&non).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // A threshold just above each distinct value, then +inf.
    let curve = |above: Option<f64>| -> (f64, f64) {
        let (miss, fa) = match above {
            Some(v) => (tar.iter().filter(|&&s| s <= v).count(), non.iter().filter(|&&s| s > v).count()),
            None => (tar.len(), 0),
        };
        (miss as f64 / tar.len() as f64, fa as f64 / non.len() as f64)
    };
    let mut prev = (0.0, 1.0);
    for above in candidates.iter().map(|&v| Some(v)).chain([None]) {
        let cur = curve(above);
        if cur.0 >= cur.1 {
            let (da, db) = (prev.0 - prev.1, cur.0 - cur.1);
            if db == 0.0 {
                return 100.0 * cur.0;
            }
            let lambda = da / (da - db);
            return 100.0 * (prev.0 + lambda * (cur.0 - prev.0));
        }
        prev = cur;
    }
    unreachable!("the curves always cross by +inf")
}

/// Balanced multiclass Cllr in bits from raw scores, with posteriors floored
/// at 1e-300.
pub fn cllr_bits(scores: &DMatrix<f64>, truth: &[usize]) -> f64 {
    let k = scores.ncols();
    let mut per_class = vec![(0.0, 0usize); k];
    for (t, &y) in truth.iter().enumerate() {
        let row: Vec<f64> = scores.row(t).iter().copied().collect();
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - top).exp()).sum();
        let log_post = row[y] - top - z.ln();
        let bits = -(log_post.max(1e-300f64.ln())) / std::f64::consts::LN_2;
        per_class[y].0 += bits;
        per_class[y].1 += 1;
    }
    per_class.iter().map(|(s, n)| s / *n as f64).sum::<f64>() / k as f64
}

/// Achieved signal-to-noise ratio of `noisy = clean + added`, in dB.
pub fn snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    10.0 * (signal / noise).log10()
}
