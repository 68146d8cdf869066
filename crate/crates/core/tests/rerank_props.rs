//! MMR invariants on random candidate sets and the duplicate-scaffold fixture.

use proptest::prelude::*;
use vscreen::fingerprint::{tanimoto, Fingerprint};
use vscreen::metrics::RankedList;
use vscreen::rerank::{build_candidates, lambda_sweep, mmr_rerank, rerank_report, CandidateSet};

fn candidates(scores: &[f64], bits: &[Vec<usize>]) -> CandidateSet {
    let ids: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
    let fps: Vec<Fingerprint> = bits
        .iter()
        .map(|b| Fingerprint::from_ones(64, 2, b.iter().copied()))
        .collect();
    build_candidates(&ids, scores, &fps, 500).unwrap()
}

fn random_set() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<usize>>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.01f64..8.0, n),
            proptest::collection::vec(proptest::collection::vec(0usize..64, 0..6), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lambda_one_is_score_order((scores, bits) in random_set()) {
        let c = candidates(&scores, &bits);
        let r = mmr_rerank(&c, 1.0);
        prop_assert_eq!(r.order, (0..c.entries.len()).collect::<Vec<_>>());
    }

    #[test]
    fn output_is_permutation_with_fixed_head(
        (scores, bits) in random_set(),
        lambda in 0.0f64..=1.0,
    ) {
        let c = candidates(&scores, &bits);
        let r = mmr_rerank(&c, lambda);
        let mut sorted = r.order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..c.entries.len()).collect::<Vec<_>>());
        prop_assert_eq!(r.order[0], mmr_rerank(&c, 0.0).order[0]);
        prop_assert_eq!(r.order[0], 0);
    }

    #[test]
    fn every_step_is_greedy_optimal(
        (scores, bits) in random_set(),
        lambda in 0.0f64..=1.0,
    ) {
        let c = candidates(&scores, &bits);
        let r = mmr_rerank(&c, lambda);
        let sig = |p: f64| 1.0 / (1.0 + (-p).exp());
        for step in 1..r.order.len() {
            let chosen = &r.order[..step];
            let value = |i: usize| {
                let m = chosen
                    .iter()
                    .map(|&j| tanimoto(&c.entries[i].fingerprint, &c.entries[j].fingerprint).unwrap())
                    .fold(0.0, f64::max);
                lambda * sig(c.entries[i].score) - (1.0 - lambda) * m
            };
            let picked = value(r.order[step]);
            for &rest in &r.order[step..] {
                prop_assert!(picked >= value(rest) - 1e-12);
            }
        }
    }
}

/// 101 actives with pairwise-distinct scaffolds, except ranks 99 and 100,
/// which share one.
fn duplicate_fixture() -> (RankedList, CandidateSet) {
    let n = 101;
    let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
    let scores: Vec<f64> = (0..n).map(|i| 5.0 - i as f64 * 0.01).collect();
    let fps: Vec<Fingerprint> = (0..n)
        .map(|i| Fingerprint::from_ones(1024, 2, [if i == 99 { 98 } else { i }]))
        .collect();
    let mut all_ids = ids.clone();
    let mut all_scores = scores.clone();
    let mut labels = vec![true; n];
    for i in 0..900 {
        all_ids.push(format!("d{i}"));
        all_scores.push(-1.0 - i as f64);
        labels.push(false);
    }
    let rl = RankedList::new(
        all_ids
            .iter()
            .zip(&all_scores)
            .zip(&labels)
            .map(|((id, &score), &active)| vscreen::metrics::RankedItem {
                id: id.clone(),
                score,
                active,
            })
            .collect(),
    )
    .unwrap();
    (rl, build_candidates(&ids, &scores, &fps, 500).unwrap())
}

#[test]
fn diversity_rises_when_duplicates_are_demoted() {
    let (rl, c) = duplicate_fixture();
    let one = rerank_report(&rl, &c, &mmr_rerank(&c, 1.0), 100).unwrap();
    let half = rerank_report(&rl, &c, &mmr_rerank(&c, 0.5), 100).unwrap();
    assert_eq!(one.sd_before, one.sd_after);
    assert_eq!(one.ef_before, one.ef_after);
    assert!((one.sd_after - (1.0 - 2.0 / (100.0 * 99.0))).abs() < 1e-12);
    assert_eq!(half.sd_after, 1.0);
    assert!(half.sd_after > one.sd_after);

    let sweep = lambda_sweep(&rl, &c, &[0.0, 0.5, 1.0], 100).unwrap();
    assert_eq!(sweep.len(), 3);
    assert!(sweep[1].sd_after > sweep[2].sd_after);
    assert!(rerank_report(&rl, &c, &mmr_rerank(&c, 1.0), 102).is_err());
}
