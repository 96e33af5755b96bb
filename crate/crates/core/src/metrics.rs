//! Detection and identification metrics: Cavg (actual and minimum), pooled
//! EER, multiclass Cllr and accuracy.
//!
//! Per-language detection scores are derived from the identification score
//! matrix as log-likelihood ratios against a flat prior over the competing
//! languages:
//!
//! `llr[t, k] = s[t, k] - logsumexp_{j != k}(s[t, j] - ln(K - 1))`
//!
//! A detector fires when `llr >= threshold`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{LanguageList, ScoreMatrix, TrialLabels};
use crate::error::{Error, Result};
use crate::math::{argmax, logsumexp};

/// Smallest posterior fed into the logarithm in Cllr.
pub const POSTERIOR_FLOOR: f64 = 1e-300;

pub const DEFAULT_P_TARGET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionTrial {
    pub llr: f64,
    /// Language whose detector produced the score.
    pub detector: usize,
    pub true_lang: usize,
}

impl DetectionTrial {
    pub fn is_target(&self) -> bool {
        self.detector == self.true_lang
    }
}

/// All `N * K` (utterance, language) detection trials, utterance-major.
#[derive(Debug, Clone)]
pub struct DetectionTrialSet {
    trials: Vec<DetectionTrial>,
    languages: LanguageList,
}

impl DetectionTrialSet {
    pub fn trials(&self) -> &[DetectionTrial] {
        &self.trials
    }

    pub fn languages(&self) -> &LanguageList {
        &self.languages
    }

    pub fn n_languages(&self) -> usize {
        self.languages.len()
    }

    /// Pooled `(score, is_target)` pairs.
    pub fn pooled(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.trials.iter().map(|t| (t.llr, t.is_target()))
    }

    /// Target and non-target scores of one language's detector.
    pub fn per_language(&self, detector: usize) -> (Vec<f64>, Vec<f64>) {
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for t in self.trials.iter().filter(|t| t.detector == detector) {
            if t.is_target() {
                tar.push(t.llr);
            } else {
                non.push(t.llr);
            }
        }
        (tar, non)
    }

    /// Trial counts indexed `[detector][true_lang]`.
    fn cell_counts(&self) -> Result<Vec<Vec<usize>>> {
        let k = self.n_languages();
        let mut counts = vec![vec![0usize; k]; k];
        for t in &self.trials {
            counts[t.detector][t.true_lang] += 1;
        }
        for (l, row) in counts.iter().enumerate() {
            if row[l] == 0 {
                return Err(Error::EmptyLanguage(self.languages.name(l).to_string()));
            }
        }
        Ok(counts)
    }
}

/// Converts identification scores to per-language detection LLRs.
pub fn detection_llrs(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let k = scores.ncols();
    let log_others = ((k - 1) as f64).ln();
    DMatrix::from_fn(scores.nrows(), k, |t, j| {
        let row = scores.row(t);
        let competitors = (0..k)
            .filter(|&i| i != j)
            .map(|i| row[i] - log_others);
        row[j] - logsumexp(competitors)
    })
}

pub fn expand_trials(
    scores: &ScoreMatrix,
    labels: &TrialLabels,
    p_target: f64,
) -> Result<DetectionTrialSet> {
    check_p_target(p_target)?;
    let k = scores.n_languages();
    if k < 2 {
        return Err(Error::invalid("detection trials need at least 2 languages"));
    }
    let truth = labels.align(scores)?;
    let llrs = detection_llrs(scores.scores());
    let mut trials = Vec::with_capacity(truth.len() * k);
    for (t, &y) in truth.iter().enumerate() {
        for j in 0..k {
            trials.push(DetectionTrial {
                llr: llrs[(t, j)],
                detector: j,
                true_lang: y,
            });
        }
    }
    Ok(DetectionTrialSet {
        trials,
        languages: scores.languages().clone(),
    })
}

fn check_p_target(p_target: f64) -> Result<()> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::invalid(format!("p_target must be in (0, 1), got {p_target}")));
    }
    Ok(())
}

/// Cavg from per-cell counts of trials that did *not* fire.
fn cavg_from_counts(below: &[Vec<usize>], total: &[Vec<usize>], p_target: f64) -> f64 {
    let k = total.len();
    let w_non = (1.0 - p_target) / (k - 1) as f64;
    let mut sum = 0.0;
    for l in 0..k {
        let p_miss = below[l][l] as f64 / total[l][l] as f64;
        let mut fa = 0.0;
        for other in (0..k).filter(|&o| o != l) {
            fa += (total[l][other] - below[l][other]) as f64 / total[l][other] as f64;
        }
        sum += p_target * p_miss + w_non * fa;
    }
    sum / k as f64
}

/// Average pairwise detection cost at a fixed threshold.
pub fn c_avg(trials: &DetectionTrialSet, p_target: f64, threshold: f64) -> Result<f64> {
    check_p_target(p_target)?;
    let total = trials.cell_counts()?;
    let k = total.len();
    let mut below = vec![vec![0usize; k]; k];
    for t in trials.trials() {
        if t.llr < threshold {
            below[t.detector][t.true_lang] += 1;
        }
    }
    Ok(cavg_from_counts(&below, &total, p_target))
}

/// Minimum Cavg over one threshold shared by all detectors, swept across every
/// distinct LLR plus both infinities.
pub fn min_c_avg(trials: &DetectionTrialSet, p_target: f64) -> Result<f64> {
    check_p_target(p_target)?;
    let total = trials.cell_counts()?;
    let k = total.len();
    let mut sorted: Vec<&DetectionTrial> = trials.trials().iter().collect();
    sorted.sort_by(|a, b| a.llr.total_cmp(&b.llr));

    let mut below = vec![vec![0usize; k]; k];
    // threshold = -inf: everything fires
    let mut best = cavg_from_counts(&below, &total, p_target);
    let mut i = 0;
    while i < sorted.len() {
        // threshold = sorted[i].llr: everything strictly below has not fired
        best = best.min(cavg_from_counts(&below, &total, p_target));
        let v = sorted[i].llr;
        while i < sorted.len() && sorted[i].llr == v {
            below[sorted[i].detector][sorted[i].true_lang] += 1;
            i += 1;
        }
    }
    // threshold = +inf
    best = best.min(cavg_from_counts(&below, &total, p_target));
    Ok(best)
}

/// Equal error rate in percent over pooled target / non-target scores.
///
/// Operating points are taken at every distinct score (plus `+inf`), with
/// `Pmiss(t) = #{target < t} / #target` and `Pfa(t) = #{non >= t} / #non`.
/// The EER is the crossing of the two curves, linearly interpolated between
/// the two adjacent operating points that bracket it.
pub fn eer(trials: &DetectionTrialSet) -> Result<f64> {
    eer_from_scores(trials.pooled())
}

pub fn eer_from_scores(scores: impl IntoIterator<Item = (f64, bool)>) -> Result<f64> {
    let mut pooled: Vec<(f64, bool)> = scores.into_iter().collect();
    let n_tar = pooled.iter().filter(|(_, t)| *t).count();
    let n_non = pooled.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::invalid(
            "EER needs at least one target and one non-target trial",
        ));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let point = |tb: usize, nb: usize| {
        (
            tb as f64 / n_tar as f64,
            (n_non - nb) as f64 / n_non as f64,
        )
    };
    // (p_miss, p_fa) at threshold -inf
    let mut prev = point(0, 0);
    let mut i = 0;
    loop {
        let cur = if i < pooled.len() {
            // advance past one distinct value; the threshold sits just above it
            let v = pooled[i].0;
            while i < pooled.len() && pooled[i].0 == v {
                if pooled[i].1 {
                    tar_below += 1;
                } else {
                    non_below += 1;
                }
                i += 1;
            }
            point(tar_below, non_below)
        } else {
            point(n_tar, n_non)
        };
        if cur.0 - cur.1 >= 0.0 {
            return Ok(100.0 * crossing(prev, cur));
        }
        prev = cur;
    }
}

/// Intersection of the segment `a -> b` in (p_miss, p_fa) with p_miss = p_fa.
fn crossing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let da = a.0 - a.1;
    let db = b.0 - b.1;
    if db == 0.0 {
        return b.0;
    }
    let lambda = -da / (db - da);
    a.0 + lambda * (b.0 - a.0)
}

/// Balanced multiclass Cllr in bits with a flat prior.
pub fn cllr(scores: &ScoreMatrix, labels: &TrialLabels) -> Result<f64> {
    let truth = labels.align(scores)?;
    cllr_aligned(scores.scores(), &truth, scores.languages())
}

/// Cllr for labels already in row order.
pub fn cllr_aligned(scores: &DMatrix<f64>, truth: &[usize], languages: &LanguageList) -> Result<f64> {
    let k = scores.ncols();
    if k < 2 {
        return Err(Error::invalid("Cllr needs at least 2 languages"));
    }
    let counts = class_counts(truth, k);
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyLanguage(languages.name(l).to_string()));
    }
    let max_nats = -POSTERIOR_FLOOR.ln();
    let mut per_class = vec![0.0; k];
    for (t, &y) in truth.iter().enumerate() {
        let row = scores.row(t);
        let neg_log_post = logsumexp(row.iter().copied()) - row[y];
        per_class[y] += neg_log_post.min(max_nats);
    }
    let total: f64 = per_class
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .sum();
    Ok(total / (k as f64 * std::f64::consts::LN_2))
}

pub(crate) fn class_counts(truth: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &y in truth {
        counts[y] += 1;
    }
    counts
}

/// Fraction of trials whose highest score is the true language. Ties go to the
/// lowest language index.
pub fn accuracy(scores: &ScoreMatrix, labels: &TrialLabels) -> Result<f64> {
    let truth = labels.align(scores)?;
    let s = scores.scores();
    let correct = truth
        .iter()
        .enumerate()
        .filter(|&(t, &y)| argmax(s.row(t).iter().copied()) == y)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub c_avg: f64,
    pub min_c_avg: f64,
    pub eer_percent: f64,
    pub cllr_bits: f64,
    pub accuracy: f64,
}

impl MetricReport {
    /// Actual Cavg is taken at threshold 0.
    pub fn compute(scores: &ScoreMatrix, labels: &TrialLabels, p_target: f64) -> Result<Self> {
        let trials = expand_trials(scores, labels, p_target)?;
        Ok(MetricReport {
            c_avg: c_avg(&trials, p_target, 0.0)?,
            min_c_avg: min_c_avg(&trials, p_target)?,
            eer_percent: eer(&trials)?,
            cllr_bits: cllr(scores, labels)?,
            accuracy: accuracy(scores, labels)?,
        })
    }
}

/// Renders rows as an aligned table: Cavg columns to 4 decimals, EER to 2.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let header = ["System", "Cavg", "minCavg", "EER", "Cllr", "Acc"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.to_string(),
                format_fixed(r.c_avg, 4),
                format_fixed(r.min_c_avg, 4),
                format_fixed(r.eer_percent, 2),
                format_fixed(r.cllr_bits, 4),
                format_fixed(r.accuracy, 4),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cols: &[&str]| {
        for (i, (c, w)) in cols.iter().zip(&widths).enumerate() {
            if i == 0 {
                out.push_str(&format!("{c:<w$}"));
            } else {
                out.push_str(&format!("  {c:>w$}"));
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &cells {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Fixed-point formatting that rounds the shortest decimal representation of
/// `v` half away from zero, so `0.00785` renders as `0.0079` even though the
/// nearest binary double lies just below the midpoint.
pub fn format_fixed(v: f64, places: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let repr = format!("{}", v.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(places))
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part.as_bytes().get(places).is_some_and(|&d| d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut s: String = digits[..split].iter().map(|d| (d + b'0') as char).collect();
    if places > 0 {
        s.push('.');
        s.extend(digits[split..].iter().map(|d| (d + b'0') as char));
    }
    let is_zero = digits.iter().all(|&d| d == 0);
    if v < 0.0 && !is_zero {
        s.insert(0, '-');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs(k: usize) -> LanguageList {
        LanguageList::new((0..k).map(|i| format!("L{i}"))).unwrap()
    }

    fn setup(rows: &[&[f64]], truth: &[usize]) -> (ScoreMatrix, TrialLabels) {
        let k = rows[0].len();
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("u{i}")).collect();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let sm = ScoreMatrix::new(ids.clone(), DMatrix::from_row_slice(rows.len(), k, &flat), langs(k)).unwrap();
        let tl = TrialLabels::new(ids, truth.to_vec(), k).unwrap();
        (sm, tl)
    }

    fn trial_set(llrs: &[(f64, usize, usize)], k: usize) -> DetectionTrialSet {
        DetectionTrialSet {
            trials: llrs
                .iter()
                .map(|&(llr, detector, true_lang)| DetectionTrial { llr, detector, true_lang })
                .collect(),
            languages: langs(k),
        }
    }

    #[test]
    fn symmetric_scores_expand_to_zero_llrs() {
        let (sm, tl) = setup(&[&[0.0, 0.0], &[0.0, 0.0]], &[0, 1]);
        let trials = expand_trials(&sm, &tl, 0.5).unwrap();
        assert_eq!(trials.trials().len(), 4);
        assert!(trials.trials().iter().all(|t| t.llr == 0.0));
        assert_eq!(trials.pooled().filter(|(_, t)| *t).count(), 2);
    }

    #[test]
    fn llr_formula_three_languages() {
        let ln2 = 2f64.ln();
        let (sm, tl) = setup(&[&[ln2, 0.0, 0.0]], &[0]);
        let trials = expand_trials(&sm, &tl, 0.5).unwrap();
        let t = trials.trials();
        assert!((t[0].llr - ln2).abs() < 1e-15);
        // lang1: 0 - log((2 + 1) / 2)
        assert!((t[1].llr + (1.5f64).ln()).abs() < 1e-15);
        let flags: Vec<bool> = t.iter().map(|t| t.is_target()).collect();
        assert_eq!(flags, vec![true, false, false]);
    }

    #[test]
    fn expand_rejects_missing_ids_and_single_language() {
        let (sm, _) = setup(&[&[0.0, 1.0], &[1.0, 0.0]], &[0, 1]);
        let tl = TrialLabels::new(vec!["u0".into()], vec![0], 2).unwrap();
        assert!(matches!(expand_trials(&sm, &tl, 0.5), Err(Error::UnmatchedId(_))));
        let (sm1, tl1) = setup(&[&[0.0]], &[0]);
        assert!(expand_trials(&sm1, &tl1, 0.5).is_err());
        let (sm, tl) = setup(&[&[0.0, 1.0], &[1.0, 0.0]], &[1, 0]);
        assert!(expand_trials(&sm, &tl, 1.0).is_err());
    }

    #[test]
    fn cavg_extremes() {
        // 2 utterances, 2 languages
        let good = trial_set(&[(5.0, 0, 0), (-5.0, 1, 0), (-5.0, 0, 1), (5.0, 1, 1)], 2);
        assert_eq!(c_avg(&good, 0.5, 0.0).unwrap(), 0.0);
        let bad = trial_set(&[(-5.0, 0, 0), (5.0, 1, 0), (5.0, 0, 1), (-5.0, 1, 1)], 2);
        assert_eq!(c_avg(&bad, 0.5, 0.0).unwrap(), 1.0);
        assert_eq!(min_c_avg(&good, 0.5).unwrap(), 0.0);
        assert!(min_c_avg(&bad, 0.5).unwrap() <= 1.0);
    }

    #[test]
    fn cavg_reports_language_without_targets() {
        let t = trial_set(&[(1.0, 0, 0), (-1.0, 1, 0)], 2);
        assert!(matches!(c_avg(&t, 0.5, 0.0), Err(Error::EmptyLanguage(l)) if l == "L1"));
    }

    #[test]
    fn eer_examples() {
        let pairs = |tar: &[f64], non: &[f64]| {
            tar.iter()
                .map(|&s| (s, true))
                .chain(non.iter().map(|&s| (s, false)))
                .collect::<Vec<_>>()
        };
        assert_eq!(eer_from_scores(pairs(&[2.0, 3.0], &[-2.0, -3.0])).unwrap(), 0.0);
        assert_eq!(eer_from_scores(pairs(&[0.9, 0.2], &[0.8, 0.1])).unwrap(), 50.0);
        assert_eq!(eer_from_scores(pairs(&[-1.0], &[1.0])).unwrap(), 100.0);
        assert!(eer_from_scores(pairs(&[1.0], &[])).is_err());
    }

    #[test]
    fn cllr_reference_values() {
        let (sm, tl) = setup(&[&[0.0, 0.0], &[0.0, 0.0]], &[0, 1]);
        assert_eq!(cllr(&sm, &tl).unwrap(), 1.0);
        let (sm, tl) = setup(&[&[0.0; 4], &[0.0; 4], &[0.0; 4], &[0.0; 4]], &[0, 1, 2, 3]);
        assert_eq!(cllr(&sm, &tl).unwrap(), 2.0);
        let (sm, tl) = setup(&[&[50.0, 0.0], &[0.0, 50.0]], &[0, 1]);
        assert!(cllr(&sm, &tl).unwrap() < 1e-10);
    }

    #[test]
    fn cllr_clamps_impossible_posteriors() {
        let (sm, tl) = setup(&[&[-1e6, 1e6], &[0.0, 1.0]], &[0, 1]);
        let v = cllr(&sm, &tl).unwrap();
        assert!(v.is_finite());
        let floor_bits = -POSTERIOR_FLOOR.log2();
        assert!(v <= (floor_bits + 1.0) / 2.0);
    }

    #[test]
    fn cllr_needs_every_language() {
        let (sm, tl) = setup(&[&[0.0, 0.0], &[0.0, 0.0]], &[0, 0]);
        assert!(matches!(cllr(&sm, &tl), Err(Error::EmptyLanguage(l)) if l == "L1"));
    }

    #[test]
    fn accuracy_cases() {
        let (sm, tl) = setup(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(accuracy(&sm, &tl).unwrap(), 1.0);
        let (sm, tl) = setup(&[&[1.0, 0.0], &[0.0, 1.0]], &[1, 0]);
        assert_eq!(accuracy(&sm, &tl).unwrap(), 0.0);
        let (sm, tl) = setup(&[&[0.0, 0.0]], &[0]);
        assert_eq!(accuracy(&sm, &tl).unwrap(), 1.0);
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(format_fixed(0.00785, 4), "0.0079");
        assert_eq!(format_fixed(0.0, 4), "0.0000");
        assert_eq!(format_fixed(0.865, 2), "0.87");
        assert_eq!(format_fixed(99.996, 2), "100.00");
        assert_eq!(format_fixed(0.5, 4), "0.5000");
        assert_eq!(format_fixed(-0.00001, 2), "0.00");
        assert_eq!(format_fixed(-1.25, 1), "-1.3");
        assert_eq!(format_fixed(12.0, 0), "12");
    }

    #[test]
    fn table_has_one_line_per_system() {
        let r = MetricReport { c_avg: 0.00785, min_c_avg: 0.007, eer_percent: 0.86, cllr_bits: 0.1, accuracy: 0.99 };
        let table = render_table(&[("Fusion", &r)]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("0.0079"));
        assert!(table.contains("0.86"));
    }
}
