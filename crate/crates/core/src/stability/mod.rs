//! Selection changes between rationales of original and perturbed sentences,
//! and the statistics built from them.

mod report;
mod svg;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use report::{build_report, write_report, StabilityReport};

use crate::corpus::{CoarsePos, NUM_LABELS};
use crate::models::{ModelKind, RationaleTrace};
use crate::perturbation::Perturbation;
use crate::{Error, Result};

/// Toggled selections for one (original, perturbed) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub sentence_id: u32,
    /// Index of the perturbation in its dataset.
    pub perturbation: u32,
    pub model: ModelKind,
    pub seed: u64,
    pub position: usize,
    pub length: usize,
    pub original_pred: u8,
    pub perturbed_pred: u8,
    /// Ascending indices where the two masks differ.
    pub changed: Vec<usize>,
    pub distances: Vec<usize>,
    pub direct: Vec<bool>,
    /// True where the token was selected originally and dropped after.
    pub dropped: Vec<bool>,
    /// Coarse tag of each changed token in the perturbed sentence.
    pub pos: Vec<CoarsePos>,
}

impl ChangeRecord {
    pub fn preserved(&self) -> bool {
        self.original_pred == self.perturbed_pred
    }

    pub fn num_changes(&self) -> usize {
        self.changed.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.changed.len();
        let ok = self.distances.len() == n
            && self.direct.len() == n
            && self.dropped.len() == n
            && self.pos.len() == n
            && self.changed.windows(2).all(|w| w[0] < w[1])
            && self.changed.iter().all(|&c| c < self.length)
            && self.position < self.length
            && self
                .changed
                .iter()
                .zip(&self.distances)
                .zip(&self.direct)
                .all(|((&c, &d), &dir)| d == c.abs_diff(self.position) && dir == (d == 0));
        if ok {
            Ok(())
        } else {
            Err(Error::Integrity(format!(
                "inconsistent change record for sentence {} perturbation {}",
                self.sentence_id, self.perturbation
            )))
        }
    }
}

/// Original and perturbed traces for one perturbation.
#[derive(Debug, Clone, Copy)]
pub struct TracePair<'a> {
    pub index: u32,
    pub perturbation: &'a Perturbation,
    pub original: &'a RationaleTrace,
    pub perturbed: &'a RationaleTrace,
}

/// Matches each perturbation with its traces. Original traces have no
/// perturbation index; perturbed ones carry the dataset index.
pub fn pair_traces<'a>(
    perturbations: &'a [Perturbation],
    traces: &'a [RationaleTrace],
) -> Result<Vec<TracePair<'a>>> {
    let mut originals: HashMap<u32, &RationaleTrace> = HashMap::new();
    let mut perturbed: HashMap<u32, &RationaleTrace> = HashMap::new();
    for t in traces {
        match t.perturbation {
            None => originals.insert(t.sentence_id, t),
            Some(i) => perturbed.insert(i, t),
        };
    }
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(perturbations.len());
    for (i, p) in perturbations.iter().enumerate() {
        let i = i as u32;
        let (Some(o), Some(q)) = (originals.get(&p.sentence_id), perturbed.get(&i)) else {
            missing.push(format!("sentence {} (perturbation {i})", p.sentence_id));
            continue;
        };
        if q.sentence_id != p.sentence_id || o.model != q.model || o.seed != q.seed {
            return Err(Error::Integrity(format!(
                "perturbation {i}: trace for sentence {} from {} seed {} does not match original from {} seed {}",
                q.sentence_id, q.model, q.seed, o.model, o.seed
            )));
        }
        pairs.push(TracePair {
            index: i,
            perturbation: p,
            original: o,
            perturbed: q,
        });
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).cloned().collect();
        return Err(Error::Integrity(format!(
            "{} perturbations without traces: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(pairs)
}

/// Pairs whose predicted label is unchanged, and the fraction discarded.
pub fn prediction_preserving<'a>(pairs: &[TracePair<'a>]) -> (Vec<TracePair<'a>>, f64) {
    let kept: Vec<_> = pairs.iter().filter(|p| p.original.pred == p.perturbed.pred).copied().collect();
    let rate = if pairs.is_empty() {
        0.0
    } else {
        1.0 - kept.len() as f64 / pairs.len() as f64
    };
    (kept, rate)
}

/// Symmetric difference of the two masks, with distances to the perturbed
/// position. `perturbed_pos` holds the coarse tags of the perturbed sentence.
pub fn diff_masks(
    original: &RationaleTrace,
    perturbed: &RationaleTrace,
    perturbation: &Perturbation,
    index: u32,
    perturbed_pos: &[CoarsePos],
) -> Result<ChangeRecord> {
    let n = original.mask.len();
    if perturbed.mask.len() != n || perturbed_pos.len() != n {
        return Err(Error::Integrity(format!(
            "sentence {}: original has {n} tokens, perturbed {} (tags {})",
            original.sentence_id,
            perturbed.mask.len(),
            perturbed_pos.len()
        )));
    }
    if perturbation.position >= n {
        return Err(Error::Integrity(format!(
            "sentence {}: perturbation position {} outside {n} tokens",
            original.sentence_id, perturbation.position
        )));
    }
    let changed: Vec<usize> = (0..n).filter(|&i| original.mask[i] != perturbed.mask[i]).collect();
    let distances: Vec<usize> = changed.iter().map(|&c| c.abs_diff(perturbation.position)).collect();
    Ok(ChangeRecord {
        sentence_id: original.sentence_id,
        perturbation: index,
        model: original.model,
        seed: original.seed,
        position: perturbation.position,
        length: n,
        original_pred: original.pred,
        perturbed_pred: perturbed.pred,
        direct: distances.iter().map(|&d| d == 0).collect(),
        dropped: changed.iter().map(|&c| original.mask[c]).collect(),
        pos: changed.iter().map(|&c| perturbed_pos[c]).collect(),
        changed,
        distances,
    })
}

/// Frequencies of 0, 1, 2, 3, 4 and 5+ changes per record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeHistogram {
    pub counts: [usize; 6],
    pub population: usize,
    /// Total changes inside the 5+ bin.
    pub overflow_changes: usize,
}

impl ChangeHistogram {
    pub const LABELS: [&'static str; 6] = ["0", "1", "2", "3", "4", ">=5"];

    pub fn percentages(&self) -> [f64; 6] {
        percentages(&self.counts)
    }

    pub fn total_changes(&self) -> usize {
        (1..5).map(|b| b * self.counts[b]).sum::<usize>() + self.overflow_changes
    }
}

fn percentages<const N: usize>(counts: &[usize; N]) -> [f64; N] {
    let total: usize = counts.iter().sum();
    let mut out = [0.0; N];
    if total > 0 {
        for (o, &c) in out.iter_mut().zip(counts) {
            *o = 100.0 * c as f64 / total as f64;
        }
    }
    out
}

pub fn change_count_histogram(records: &[ChangeRecord]) -> ChangeHistogram {
    let mut h = ChangeHistogram::default();
    for r in records {
        let n = r.num_changes();
        h.counts[n.min(5)] += 1;
        if n >= 5 {
            h.overflow_changes += n;
        }
        h.population += 1;
    }
    h
}

/// Direct and indirect change counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectCounts {
    pub direct: usize,
    pub indirect: usize,
}

impl DirectCounts {
    pub fn total(&self) -> usize {
        self.direct + self.indirect
    }

    /// Share of changes at the perturbed position; `None` with no changes.
    pub fn fraction(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.direct as f64 / self.total() as f64)
    }
}

pub fn direct_counts(records: &[ChangeRecord]) -> DirectCounts {
    let direct = records.iter().flat_map(|r| &r.direct).filter(|&&d| d).count();
    let total: usize = records.iter().map(ChangeRecord::num_changes).sum();
    DirectCounts {
        direct,
        indirect: total - direct,
    }
}

/// Fraction of individual changes that sit at the perturbed position.
pub fn direct_change_fraction(records: &[ChangeRecord]) -> Option<f64> {
    direct_counts(records).fraction()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketQuartiles {
    /// Inclusive sentence-length range.
    pub min_length: usize,
    pub max_length: usize,
    pub count: usize,
    pub quartiles: Quartiles,
}

pub const DEFAULT_BUCKET_WIDTH: usize = 5;

/// Quartiles of indirect-change distances, grouped into sentence-length
/// buckets `[1, w]`, `[w+1, 2w]`, ... Empty buckets are omitted.
pub fn indirect_distance_quartiles(records: &[ChangeRecord], width: usize) -> Vec<BucketQuartiles> {
    assert!(width > 0, "bucket width must be positive");
    let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        for &d in r.distances.iter().filter(|&&d| d > 0) {
            buckets.entry(r.length.saturating_sub(1) / width).or_default().push(d as f64);
        }
    }
    buckets
        .into_iter()
        .map(|(b, v)| BucketQuartiles {
            min_length: b * width + 1,
            max_length: (b + 1) * width,
            count: v.len(),
            quartiles: quartiles(&v).expect("bucket is nonempty"),
        })
        .collect()
}

/// One `(sentence length, changed index)` point per change.
pub fn location_scatter(records: &[ChangeRecord]) -> Vec<(usize, usize)> {
    records
        .iter()
        .flat_map(|r| r.changed.iter().map(move |&c| (r.length, c)))
        .collect()
}

/// Chi-square comparison of change locations, in deciles of relative
/// position, against positions drawn uniformly within each sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityTest {
    pub observed: [usize; 10],
    pub expected: [f64; 10],
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: Option<f64>,
}

fn decile(index: usize, length: usize) -> usize {
    (10 * index / length).min(9)
}

pub fn location_uniformity(points: &[(usize, usize)]) -> UniformityTest {
    let mut observed = [0usize; 10];
    let mut expected = [0.0f64; 10];
    for &(len, idx) in points {
        observed[decile(idx, len)] += 1;
        for i in 0..len {
            expected[decile(i, len)] += 1.0 / len as f64;
        }
    }
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for d in 0..10 {
        if expected[d] > 0.0 {
            cells += 1;
            statistic += (observed[d] as f64 - expected[d]).powi(2) / expected[d];
        }
    }
    let dof = cells.saturating_sub(1);
    let p_value = (dof > 0).then(|| {
        ChiSquared::new(dof as f64)
            .expect("positive degrees of freedom")
            .sf(statistic)
    });
    UniformityTest {
        observed,
        expected,
        statistic,
        degrees_of_freedom: dof,
        p_value,
    }
}

/// For each number `n` of perturbations a sentence has, how many sentences
/// had `0..=n` of them change the rationale.
pub fn sentence_stability(records: &[ChangeRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut per_sentence: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = per_sentence.entry(r.sentence_id).or_default();
        e.0 += 1;
        e.1 += usize::from(r.num_changes() > 0);
    }
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (n, unstable) in per_sentence.into_values() {
        out.entry(n).or_insert_with(|| vec![0; n + 1])[unstable] += 1;
    }
    out
}

/// Fraction of sentences where at least half of the perturbations change
/// the rationale.
pub fn highly_unstable_fraction(stability: &BTreeMap<usize, Vec<usize>>) -> Option<f64> {
    let mut total = 0;
    let mut high = 0;
    for (&n, counts) in stability {
        for (s, &c) in counts.iter().enumerate() {
            total += c;
            if 2 * s >= n {
                high += c;
            }
        }
    }
    (total > 0).then(|| high as f64 / total as f64)
}

/// Coarse part-of-speech percentages for changed tokens, all selected tokens
/// and every token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosComposition {
    pub changed: [usize; 7],
    pub selected: [usize; 7],
    pub corpus: [usize; 7],
}

impl PosComposition {
    pub fn rows(&self) -> [(&'static str, [f64; 7]); 3] {
        [
            ("changed", percentages(&self.changed)),
            ("selected", percentages(&self.selected)),
            ("corpus", percentages(&self.corpus)),
        ]
    }
}

/// `sentences` pairs each original trace with the coarse tags of its tokens.
pub fn pos_composition(records: &[ChangeRecord], sentences: &[(&RationaleTrace, &[CoarsePos])]) -> PosComposition {
    let mut out = PosComposition {
        changed: [0; 7],
        selected: [0; 7],
        corpus: [0; 7],
    };
    for p in records.iter().flat_map(|r| &r.pos) {
        out.changed[p.index()] += 1;
    }
    for (trace, tags) in sentences {
        for (i, t) in tags.iter().enumerate() {
            out.corpus[t.index()] += 1;
            if trace.mask.get(i).copied().unwrap_or(false) {
                out.selected[t.index()] += 1;
            }
        }
    }
    out
}

/// Predicted-label percentages on the originals and the shift seen on the
/// perturbed sentences (every perturbation, before any filtering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionShift {
    pub original: [f64; NUM_LABELS],
    pub perturbed: [f64; NUM_LABELS],
    pub delta: [f64; NUM_LABELS],
    pub original_count: usize,
    pub perturbed_count: usize,
}

pub fn prediction_shift(original_preds: &[u8], perturbed_preds: &[u8]) -> PredictionShift {
    let hist = |preds: &[u8]| {
        let mut h = [0usize; NUM_LABELS];
        for &p in preds {
            h[usize::from(p).min(NUM_LABELS - 1)] += 1;
        }
        percentages(&h)
    };
    let original = hist(original_preds);
    let perturbed = hist(perturbed_preds);
    let mut delta = [0.0; NUM_LABELS];
    for i in 0..NUM_LABELS {
        delta[i] = perturbed[i] - original[i];
    }
    PredictionShift {
        original,
        perturbed,
        delta,
        original_count: original_preds.len(),
        perturbed_count: perturbed_preds.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(mask: &str, pred: u8, perturbation: Option<u32>) -> RationaleTrace {
        RationaleTrace {
            sentence_id: 1,
            perturbation,
            model: ModelKind::Pg,
            seed: 0,
            tokens: mask.chars().map(|_| "w".to_string()).collect(),
            mask: mask.chars().map(|c| c == '1').collect(),
            gates: None,
            pred,
            gold: pred,
        }
    }

    fn pert(position: usize) -> Perturbation {
        Perturbation {
            sentence_id: 1,
            position,
            original: "a".into(),
            replacement: "b".into(),
            rank: 1,
            pos_tag: "NN".into(),
        }
    }

    fn record(mask_a: &str, mask_b: &str, position: usize) -> ChangeRecord {
        let tags = vec![CoarsePos::Noun; mask_a.len()];
        diff_masks(&trace(mask_a, 3, None), &trace(mask_b, 3, Some(0)), &pert(position), 0, &tags).unwrap()
    }

    #[test]
    fn hand_computed_difference() {
        let r = record("0110", "0101", 1);
        assert_eq!(r.changed, [2, 3]);
        assert_eq!(r.distances, [1, 2]);
        assert_eq!(r.direct, [false, false]);
        assert_eq!(r.dropped, [true, false]);
        assert!(record("0110", "0110", 1).changed.is_empty());
        r.validate().unwrap();
    }

    #[test]
    fn length_mismatch_is_integrity_error() {
        let tags = vec![CoarsePos::Noun; 3];
        let e = diff_masks(&trace("011", 3, None), &trace("01", 3, Some(0)), &pert(0), 0, &tags);
        assert!(matches!(e, Err(Error::Integrity(_))));
    }

    #[test]
    fn quartiles_interpolate() {
        let q = quartiles(&[2.0, 3.0, 7.0, 8.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.75, 5.0, 7.25));
        let q = quartiles(&[4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (4.0, 4.0, 4.0));
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn histogram_and_fractions() {
        let empty = change_count_histogram(&[]);
        assert_eq!(empty.population, 0);
        assert_eq!(empty.percentages(), [0.0; 6]);
        let recs = vec![record("0000", "0000", 0), record("0000", "1000", 0), record("000000", "111111", 0)];
        let h = change_count_histogram(&recs);
        assert_eq!(h.counts, [1, 1, 0, 0, 0, 1]);
        assert_eq!(h.total_changes(), 7);
        assert_eq!(direct_counts(&recs), DirectCounts { direct: 2, indirect: 5 });
        assert_eq!(direct_change_fraction(&[record("0000", "1000", 0)]), Some(1.0));
        assert_eq!(direct_change_fraction(&[]), None);
    }

    #[test]
    fn scatter_points() {
        let r = ChangeRecord {
            changed: vec![2, 7],
            distances: vec![1, 4],
            direct: vec![false, false],
            dropped: vec![true, true],
            pos: vec![CoarsePos::Noun; 2],
            length: 12,
            position: 3,
            ..record("0", "0", 0)
        };
        assert_eq!(location_scatter(&[r]), [(12, 2), (12, 7)]);
        assert!(location_scatter(&[]).is_empty());
    }

    #[test]
    fn stability_columns() {
        let mut recs = vec![record("000", "100", 0), record("000", "000", 1), record("000", "000", 2)];
        for r in &mut recs {
            r.sentence_id = 9;
        }
        let s = sentence_stability(&recs);
        assert_eq!(s[&3], [0, 1, 0, 0]);
        let all: Vec<_> = (0..3).map(|i| record("000", "111", i)).collect();
        assert_eq!(sentence_stability(&all)[&3], [0, 0, 0, 1]);
        assert_eq!(highly_unstable_fraction(&sentence_stability(&all)), Some(1.0));
    }

    #[test]
    fn single_noun_change() {
        let r = record("00", "01", 1);
        let c = pos_composition(&[r], &[]);
        assert_eq!(c.rows()[0].1[CoarsePos::Noun.index()], 100.0);
    }

    #[test]
    fn shift_is_perturbed_minus_original() {
        let s = prediction_shift(&[3, 3, 1, 1], &[3, 3, 3, 1]);
        assert_eq!(s.original[3], 50.0);
        assert_eq!(s.delta[3], 25.0);
        assert_eq!(s.delta[1], -25.0);
    }

    #[test]
    fn uniform_locations_fit() {
        let mut points = Vec::new();
        for len in 10..30 {
            for i in 0..len {
                points.push((len, i));
            }
        }
        let t = location_uniformity(&points);
        assert!(t.statistic < 1e-9, "{}", t.statistic);
        let skewed: Vec<_> = (10..30).map(|l| (l, 0)).collect();
        assert!(location_uniformity(&skewed).p_value.unwrap() < 1e-6);
    }
}
