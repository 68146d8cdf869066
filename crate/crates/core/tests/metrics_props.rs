//! Property checks for the ranking metrics against independent naive
//! implementations and random baselines.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vscreen::metrics::{bedroc, dcg_k, ef_k, log_auc, RankedList};

/// Literal BEDROC: RIE from the rank sum, extremes by summation over
/// best-case and worst-case placements.
fn naive_bedroc(scores: &[f64], labels: &[bool], alpha: f64) -> f64 {
    let total = scores.len();
    let mut idx: Vec<usize> = (0..total).collect();
    // descending score, earlier input first on ties
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let ranks: Vec<f64> = idx
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i])
        .map(|(r, _)| (r + 1) as f64)
        .collect();
    let n = ranks.len();
    let big = total as f64;
    let mean_all: f64 = (1..=total).map(|r| (-alpha * r as f64 / big).exp()).sum::<f64>() / big;
    let rie =
        |rs: &mut dyn Iterator<Item = f64>| rs.map(|r| (-alpha * r / big).exp()).sum::<f64>() / n as f64 / mean_all;
    let actual = rie(&mut ranks.iter().copied());
    let best = rie(&mut (1..=n).map(|r| r as f64));
    let worst = rie(&mut (total - n + 1..=total).map(|r| r as f64));
    (actual - worst) / (best - worst)
}

fn fixture(seed: u64, total: usize, actives: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..total).map(|_| rng.random::<f64>()).collect();
    let mut labels = vec![false; total];
    for l in labels.iter_mut().take(actives) {
        *l = true;
    }
    // shuffle labels independently of scores
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    (scores, labels)
}

#[test]
fn bedroc_matches_naive_oracle_on_random_fixtures() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let total = rng.random_range(20..400);
        let actives = rng.random_range(1..total / 2);
        let (mut scores, labels) = fixture(seed, total, actives);
        // coarse scores create ties
        if seed % 3 == 0 {
            scores.iter_mut().for_each(|s| *s = (*s * 10.0).floor());
        }
        let rl = RankedList::from_scores(&scores, &labels).unwrap();
        let got = bedroc(&rl, 20.0).unwrap();
        let want = naive_bedroc(&scores, &labels, 20.0);
        assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn random_scores_give_baseline_log_auc() {
    let mut la = 0.0;
    for seed in 0..10 {
        let (scores, labels) = fixture(seed, 100_000, 1000);
        let rl = RankedList::from_scores(&scores, &labels).unwrap();
        la += log_auc(&rl, 0.001, 0.1).unwrap();
    }
    let la = la / 10.0;
    assert!((la - 0.0215).abs() <= 0.005, "logAUC {la}");
}

#[test]
fn random_scores_give_unit_enrichment() {
    // per-list EF100 has standard deviation ~1 here, so average 100 lists
    let mut ef = 0.0;
    for seed in 0..100 {
        let (scores, labels) = fixture(seed, 100_000, 1000);
        ef += ef_k(&RankedList::from_scores(&scores, &labels).unwrap(), 100).unwrap();
    }
    let ef = ef / 100.0;
    assert!((0.7..=1.3).contains(&ef), "EF100 {ef}");
}

proptest! {
    #[test]
    fn metrics_depend_only_on_rank(seed in 0u64..10_000, total in 10usize..300) {
        let actives = 1 + (seed as usize % (total / 2));
        let (scores, labels) = fixture(seed, total, actives);
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        let a = RankedList::from_scores(&scores, &labels).unwrap();
        let b = RankedList::from_scores(&transformed, &labels).unwrap();
        let k = 10.min(total);
        prop_assert_eq!(bedroc(&a, 20.0).unwrap(), bedroc(&b, 20.0).unwrap());
        prop_assert_eq!(log_auc(&a, 0.01, 0.5).unwrap(), log_auc(&b, 0.01, 0.5).unwrap());
        prop_assert_eq!(ef_k(&a, k).unwrap(), ef_k(&b, k).unwrap());
        prop_assert_eq!(dcg_k(&a, k), dcg_k(&b, k));
    }

    #[test]
    fn metrics_are_bounded(seed in 0u64..10_000, total in 10usize..300) {
        let actives = 1 + (seed as usize % (total / 2));
        let (scores, labels) = fixture(seed, total, actives);
        let rl = RankedList::from_scores(&scores, &labels).unwrap();
        let b = bedroc(&rl, 20.0).unwrap();
        let l = log_auc(&rl, 0.001, 0.1).unwrap();
        let e = ef_k(&rl, 10.min(total)).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&b));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&l));
        prop_assert!(e <= total as f64 / actives as f64 + 1e-9);
    }
}
