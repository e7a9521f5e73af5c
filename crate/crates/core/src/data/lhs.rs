//! Latin hypercube selection of the initial annotation set.
//!
//! Each sample is summarized by per-channel mean and standard deviation (6 features). Every
//! feature is split into `num_strata` equal-count quantile bins. The design is drawn in rounds
//! of `num_strata` points whose bin coordinates are independent permutations per feature, so
//! the design's marginals are balanced. Each design point takes the closest still-available
//! sample in bin space, and an annealed swap-repair pass then makes the *realized* marginals balanced
//! too: every bin of every feature receives `floor(n / num_strata)` or `ceil(n / num_strata)`
//! picks whenever the swap search reaches such a selection.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Sample, SampleId, CHANNELS};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_STRATA: usize = 10;
pub const FEATURES: usize = 2 * CHANNELS;

const MAX_REPAIR_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LhsSelection {
    /// Selected ids in ascending order.
    pub ids: Vec<SampleId>,
    /// Realized pick counts per feature and bin.
    pub bin_counts: Vec<Vec<usize>>,
    /// Whether every feature's counts differ by at most one across bins.
    pub balanced: bool,
}

pub fn summary_features(sample: &Sample) -> [f64; FEATURES] {
    let mut out = [0.0; FEATURES];
    for ch in 0..CHANNELS {
        let xs = sample.channel(ch);
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out[ch] = mean;
        out[CHANNELS + ch] = var.sqrt();
    }
    out
}

/// Equal-count quantile bin of every sample along every feature.
fn quantile_bins(features: &[[f64; FEATURES]], strata: usize) -> Vec<[usize; FEATURES]> {
    let n = features.len();
    let mut bins = vec![[0usize; FEATURES]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for d in 0..FEATURES {
        order.sort_by(|&a, &b| features[a][d].total_cmp(&features[b][d]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            bins[i][d] = rank * strata / n;
        }
    }
    bins
}

pub fn lhs_initial_sample(
    samples: &[&Sample],
    fraction: f64,
    num_strata: usize,
    seed: u64,
) -> Result<LhsSelection> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "LHS fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let total = samples.len();
    let n = (fraction * total as f64 + 1e-9).floor() as usize;
    if n < 1 {
        return Err(Error::InsufficientData(format!(
            "fraction {fraction} of {total} samples selects nothing"
        )));
    }
    if num_strata == 0 || n < num_strata {
        return Err(Error::InsufficientData(format!(
            "{n} picks cannot cover {num_strata} strata"
        )));
    }

    let features: Vec<_> = samples.iter().map(|s| summary_features(s)).collect();
    let bins = quantile_bins(&features, num_strata);
    let mut rng = rng::stream(seed, "lhs", 0);

    // Design in bin coordinates.
    let mut design = Vec::with_capacity(n);
    while design.len() < n {
        let mut perms: Vec<Vec<usize>> = (0..FEATURES)
            .map(|_| {
                let mut p: Vec<usize> = (0..num_strata).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let take = (n - design.len()).min(num_strata);
        for j in 0..take {
            let mut cell = [0usize; FEATURES];
            for (d, perm) in perms.iter_mut().enumerate() {
                cell[d] = perm[j];
            }
            design.push(cell);
        }
    }

    // Closest available member per design point, uniform among ties.
    let mut selected = vec![false; total];
    for cell in &design {
        let mut best = usize::MAX;
        let mut best_dist = usize::MAX;
        let mut ties = 0u32;
        for (i, b) in bins.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let dist: usize = (0..FEATURES).map(|d| b[d].abs_diff(cell[d])).sum();
            if dist < best_dist {
                best_dist = dist;
                best = i;
                ties = 1;
            } else if dist == best_dist {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = i;
                }
            }
        }
        selected[best] = true;
    }

    repair_marginals(&bins, &mut selected, n, num_strata, &mut rng);

    let bin_counts = marginal_counts(&bins, &selected, num_strata);
    let balanced = penalty(&bin_counts, n, num_strata) == 0;
    if !balanced {
        tracing::warn!("LHS marginals could not be fully balanced by swap repair");
    }
    let mut ids: Vec<SampleId> = samples
        .iter()
        .zip(&selected)
        .filter(|(_, &sel)| sel)
        .map(|(s, _)| s.id)
        .collect();
    ids.sort_unstable();
    Ok(LhsSelection {
        ids,
        bin_counts,
        balanced,
    })
}

fn marginal_counts(
    bins: &[[usize; FEATURES]],
    selected: &[bool],
    strata: usize,
) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; strata]; FEATURES];
    for (b, _) in bins.iter().zip(selected).filter(|(_, &s)| s) {
        for d in 0..FEATURES {
            counts[d][b[d]] += 1;
        }
    }
    counts
}

fn bin_penalty(count: usize, lo: usize, hi: usize) -> usize {
    lo.saturating_sub(count) + count.saturating_sub(hi)
}

fn penalty(counts: &[Vec<usize>], n: usize, strata: usize) -> usize {
    let lo = n / strata;
    let hi = n.div_ceil(strata);
    counts
        .iter()
        .flat_map(|c| c.iter())
        .map(|&c| bin_penalty(c, lo, hi))
        .sum()
}

/// Annealed swap search on the marginal imbalance penalty.
///
/// Each step picks a feature with an over-full and an under-full bin and proposes swapping a
/// random selected member of the first for a random unselected member of the second.
fn repair_marginals(
    bins: &[[usize; FEATURES]],
    selected: &mut [bool],
    n: usize,
    strata: usize,
    rng: &mut rng::Rng,
) {
    let lo = n / strata;
    let hi = n.div_ceil(strata);
    let mut counts = marginal_counts(bins, selected, strata);
    let mut current = penalty(&counts, n, strata);
    let mut members = vec![vec![Vec::new(); strata]; FEATURES];
    for (i, b) in bins.iter().enumerate() {
        for d in 0..FEATURES {
            members[d][b[d]].push(i);
        }
    }

    for step in 0..MAX_REPAIR_STEPS {
        if current == 0 {
            return;
        }
        let temperature = 2.0 * (1.0 - step as f64) / MAX_REPAIR_STEPS as f64;
        let unhappy: Vec<usize> = (0..FEATURES)
            .filter(|&d| counts[d].iter().any(|&c| bin_penalty(c, lo, hi) > 0))
            .collect();
        let d = unhappy[rng.random_range(0..unhappy.len())];
        let over: Vec<usize> = (0..strata).filter(|&b| counts[d][b] > lo).collect();
        let under: Vec<usize> = (0..strata).filter(|&b| counts[d][b] < hi).collect();
        let (bo, bu) = (
            over[rng.random_range(0..over.len())],
            under[rng.random_range(0..under.len())],
        );
        if bo == bu {
            continue;
        }
        let pick = |want: bool, list: &[usize], rng: &mut rng::Rng| -> Option<usize> {
            for _ in 0..64 {
                let i = list[rng.random_range(0..list.len())];
                if selected[i] == want {
                    return Some(i);
                }
            }
            None
        };
        let (Some(i), Some(j)) = (
            pick(true, &members[d][bo], rng),
            pick(false, &members[d][bu], rng),
        ) else {
            continue;
        };
        let mut delta = 0isize;
        for e in 0..FEATURES {
            let (bi, bj) = (bins[i][e], bins[j][e]);
            if bi == bj {
                continue;
            }
            let (ci, cj) = (counts[e][bi], counts[e][bj]);
            delta += bin_penalty(ci - 1, lo, hi) as isize - bin_penalty(ci, lo, hi) as isize;
            delta += bin_penalty(cj + 1, lo, hi) as isize - bin_penalty(cj, lo, hi) as isize;
        }
        let accept = delta <= 0
            || (temperature > 0.0 && rng.random::<f64>() < (-(delta as f64) / temperature).exp());
        if !accept {
            continue;
        }
        selected[i] = false;
        selected[j] = true;
        for e in 0..FEATURES {
            counts[e][bins[i][e]] -= 1;
            counts[e][bins[j][e]] += 1;
        }
        current = (current as isize + delta) as usize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn population(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = rng::stream(seed, "test-pop", 0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n as u32)
            .map(|id| {
                // Two clusters with different levels, like similar vs dissimilar machines.
                let offset = if id % 3 == 0 { 0.3 } else { 0.0 };
                let scale: f64 = rng.random_range(0.02..0.2);
                let rows: Vec<[f64; 3]> = (0..16)
                    .map(|_| {
                        [
                            offset + scale * noise.sample(&mut rng),
                            0.5 + scale * noise.sample(&mut rng),
                            offset * 0.5 + 0.1 * scale * noise.sample(&mut rng),
                        ]
                    })
                    .collect();
                Sample::from_rows(id, &rows)
            })
            .collect()
    }

    /// Independent recount: quantile bins by brute-force rank counting.
    fn brute_force_histograms(
        all: &[Sample],
        picked: &[SampleId],
        strata: usize,
    ) -> Vec<Vec<usize>> {
        let feats: Vec<_> = all.iter().map(summary_features).collect();
        let n = all.len();
        let mut hist = vec![vec![0usize; strata]; FEATURES];
        for &id in picked {
            let i = all.iter().position(|s| s.id == id).unwrap();
            for d in 0..FEATURES {
                let rank = (0..n)
                    .filter(|&k| feats[k][d] < feats[i][d] || (feats[k][d] == feats[i][d] && k < i))
                    .count();
                hist[d][rank * strata / n] += 1;
            }
        }
        hist
    }

    #[test]
    fn exact_size() {
        let pop = population(1000, 1);
        let refs: Vec<&Sample> = pop.iter().collect();
        let sel = lhs_initial_sample(&refs, 0.20, DEFAULT_STRATA, 3).unwrap();
        assert_eq!(sel.ids.len(), 200);
    }

    #[test]
    fn deterministic_under_seed() {
        let pop = population(400, 2);
        let refs: Vec<&Sample> = pop.iter().collect();
        let a = lhs_initial_sample(&refs, 0.2, 10, 11).unwrap();
        let b = lhs_initial_sample(&refs, 0.2, 10, 11).unwrap();
        let c = lhs_initial_sample(&refs, 0.2, 10, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.ids, c.ids);
    }

    #[test]
    fn strata_counts_differ_by_at_most_one() {
        let pop = population(1000, 5);
        let refs: Vec<&Sample> = pop.iter().collect();
        for (fraction, seed) in [(0.2, 1), (0.15, 2), (0.2, 3)] {
            let sel = lhs_initial_sample(&refs, fraction, 10, seed).unwrap();
            let hist = brute_force_histograms(&pop, &sel.ids, 10);
            assert_eq!(hist, sel.bin_counts);
            for feature in &hist {
                let occupied: Vec<usize> = feature.iter().copied().filter(|&c| c > 0).collect();
                let max = occupied.iter().max().unwrap();
                let min = occupied.iter().min().unwrap();
                assert!(max - min <= 1, "unbalanced strata {feature:?}");
            }
            assert!(sel.balanced);
        }
    }

    #[test]
    fn too_small_is_rejected() {
        let pop = population(20, 1);
        let refs: Vec<&Sample> = pop.iter().collect();
        assert!(matches!(
            lhs_initial_sample(&refs, 0.01, 1, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            lhs_initial_sample(&refs, 0.2, 10, 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
