//! Slow, direct reimplementations of the stability statistics, used to
//! cross-check the library on random trace pairs.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rationale_audit::corpus::CoarsePos;
use rationale_audit::models::{ModelKind, RationaleTrace};
use rationale_audit::perturbation::Perturbation;
use rationale_audit::stability::{
    change_count_histogram, diff_masks, direct_counts, indirect_distance_quartiles, pos_composition,
    sentence_stability, ChangeRecord,
};

#[derive(Debug, Clone)]
pub struct Pair {
    pub original: RationaleTrace,
    pub perturbed: RationaleTrace,
    pub perturbation: Perturbation,
    pub original_tags: Vec<CoarsePos>,
    pub perturbed_tags: Vec<CoarsePos>,
}

#[derive(Debug, Clone)]
pub struct RawPair {
    pub sentence_id: u32,
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
    pub position: usize,
    pub tags_a: Vec<usize>,
    pub tags_b: Vec<usize>,
    pub pred_a: u8,
    pub pred_b: u8,
}

fn trace(id: u32, mask: &[bool], pred: u8, perturbation: Option<u32>) -> RationaleTrace {
    RationaleTrace {
        sentence_id: id,
        perturbation,
        model: ModelKind::Cr,
        seed: 0,
        tokens: vec!["w".to_string(); mask.len()],
        mask: mask.to_vec(),
        gates: None,
        pred,
        gold: pred,
    }
}

pub fn build(raw: Vec<RawPair>) -> Vec<Pair> {
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| Pair {
            original: trace(r.sentence_id, &r.mask_a, r.pred_a, None),
            perturbed: trace(r.sentence_id, &r.mask_b, r.pred_b, Some(i as u32)),
            perturbation: Perturbation {
                sentence_id: r.sentence_id,
                position: r.position,
                original: "a".into(),
                replacement: "b".into(),
                rank: 1,
                pos_tag: "NN".into(),
            },
            original_tags: r.tags_a.iter().map(|&t| CoarsePos::ALL[t]).collect(),
            perturbed_tags: r.tags_b.iter().map(|&t| CoarsePos::ALL[t]).collect(),
        })
        .collect()
}

pub fn random_pairs<R: Rng>(rng: &mut R, n: usize) -> Vec<Pair> {
    let raw = (0..n)
        .map(|_| {
            let len = rng.random_range(1..40);
            let flip = rng.random_range(0.0..0.5);
            let mask_a: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
            let mask_b = mask_a.iter().map(|&m| m ^ rng.random_bool(flip)).collect();
            RawPair {
                sentence_id: rng.random_range(0..n as u32 / 3 + 1),
                mask_a,
                mask_b,
                position: rng.random_range(0..len),
                tags_a: (0..len).map(|_| rng.random_range(0..7)).collect(),
                tags_b: (0..len).map(|_| rng.random_range(0..7)).collect(),
                pred_a: rng.random_range(0..5),
                pred_b: rng.random_range(0..5),
            }
        })
        .collect();
    build(raw)
}

/// k-th smallest value (0-based) found by counting, without sorting.
fn order_statistic(xs: &[f64], k: usize) -> f64 {
    for &v in xs {
        let below = xs.iter().filter(|&&x| x < v).count();
        let at_most = xs.iter().filter(|&&x| x <= v).count();
        if below <= k && k < at_most {
            return v;
        }
    }
    unreachable!("k within sample")
}

pub fn brute_quantile(xs: &[f64], p: f64) -> f64 {
    let r = p * (xs.len() - 1) as f64;
    let k = r.floor() as usize;
    let lo = order_statistic(xs, k);
    if k + 1 >= xs.len() {
        return lo;
    }
    lo + (r - k as f64) * (order_statistic(xs, k + 1) - lo)
}

fn check(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

/// Compares every statistic with its direct counterpart.
pub fn check_all(pairs: &[Pair]) -> Result<(), String> {
    let mut records: Vec<ChangeRecord> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let r = diff_masks(&p.original, &p.perturbed, &p.perturbation, i as u32, &p.perturbed_tags)
            .map_err(|e| e.to_string())?;
        r.validate().map_err(|e| e.to_string())?;
        let n = p.original.mask.len();
        let mut changed = Vec::new();
        for j in 0..n {
            if p.original.mask[j] != p.perturbed.mask[j] {
                changed.push(j);
            }
        }
        check(r.changed == changed, "changed indices")?;
        for (k, &c) in changed.iter().enumerate() {
            let d = c.abs_diff(p.perturbation.position);
            check(r.distances[k] == d, "distance")?;
            check(r.direct[k] == (c == p.perturbation.position), "direct flag")?;
            check(r.pos[k] == p.perturbed_tags[c], "changed tag")?;
            check(r.dropped[k] == p.original.mask[c], "drop direction")?;
        }
        let swapped = diff_masks(&p.perturbed, &p.original, &p.perturbation, i as u32, &p.perturbed_tags)
            .map_err(|e| e.to_string())?;
        check(swapped.changed == r.changed, "swap symmetry")?;
        records.push(r);
    }

    let kept: Vec<ChangeRecord> = records.iter().filter(|r| r.preserved()).cloned().collect();

    let h = change_count_histogram(&kept);
    let mut bins = [0usize; 6];
    let mut total_changes = 0;
    for r in &kept {
        let c = r.changed.len();
        total_changes += c;
        let b = if c >= 5 { 5 } else { c };
        bins[b] += 1;
    }
    check(h.counts == bins, "histogram bins")?;
    check(h.population == kept.len(), "histogram population")?;
    check(h.total_changes() == total_changes, "change conservation")?;
    let pct: f64 = h.percentages().iter().sum();
    check(kept.is_empty() || (pct - 100.0).abs() < 1e-9, "percentages sum to 100")?;

    let dc = direct_counts(&kept);
    let direct = kept.iter().flat_map(|r| r.distances.iter()).filter(|&&d| d == 0).count();
    check(dc.direct == direct && dc.total() == total_changes, "direct/indirect split")?;

    for width in [1usize, 3, 5, 7] {
        let got = indirect_distance_quartiles(&kept, width);
        let mut expected = Vec::new();
        let max_len = kept.iter().map(|r| r.length).max().unwrap_or(0);
        let mut lo = 1;
        while lo <= max_len {
            let hi = lo + width - 1;
            let mut ds = Vec::new();
            for r in &kept {
                if r.length >= lo && r.length <= hi {
                    for &d in &r.distances {
                        if d > 0 {
                            ds.push(d as f64);
                        }
                    }
                }
            }
            if !ds.is_empty() {
                expected.push((lo, hi, ds.len(), brute_quantile(&ds, 0.25), brute_quantile(&ds, 0.5), brute_quantile(&ds, 0.75)));
            }
            lo += width;
        }
        check(got.len() == expected.len(), "bucket count")?;
        for (g, e) in got.iter().zip(&expected) {
            let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
            check(
                g.min_length == e.0
                    && g.max_length == e.1
                    && g.count == e.2
                    && close(g.quartiles.q1, e.3)
                    && close(g.quartiles.median, e.4)
                    && close(g.quartiles.q3, e.5),
                "distance quartiles",
            )?;
        }
    }

    let stab = sentence_stability(&kept);
    let mut ids: Vec<u32> = kept.iter().map(|r| r.sentence_id).collect();
    ids.sort();
    ids.dedup();
    let mut expected: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in ids {
        let n = kept.iter().filter(|r| r.sentence_id == id).count();
        let s = kept.iter().filter(|r| r.sentence_id == id && !r.changed.is_empty()).count();
        let col = expected.entry(n).or_insert_with(|| vec![0; n + 1]);
        col[s] += 1;
    }
    check(stab == expected, "sentence stability")?;

    let mut seen = std::collections::HashSet::new();
    let originals: Vec<(&RationaleTrace, &[CoarsePos])> = pairs
        .iter()
        .filter(|p| seen.insert(p.original.sentence_id))
        .map(|p| (&p.original, p.original_tags.as_slice()))
        .collect();
    let comp = pos_composition(&kept, &originals);
    let mut changed = [0usize; 7];
    let mut selected = [0usize; 7];
    let mut corpus = [0usize; 7];
    for r in &kept {
        for p in &r.pos {
            for (k, c) in CoarsePos::ALL.iter().enumerate() {
                if c == p {
                    changed[k] += 1;
                }
            }
        }
    }
    for (t, tags) in &originals {
        for (j, tag) in tags.iter().enumerate() {
            let k = CoarsePos::ALL.iter().position(|c| c == tag).unwrap();
            corpus[k] += 1;
            if t.mask[j] {
                selected[k] += 1;
            }
        }
    }
    check(comp.changed == changed && comp.selected == selected && comp.corpus == corpus, "pos composition")?;
    for (_, row) in comp.rows() {
        let s: f64 = row.iter().sum();
        check(s == 0.0 || (s - 100.0).abs() < 1e-9, "pos rows sum to 100")?;
    }
    Ok(())
}
