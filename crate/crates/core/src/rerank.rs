//! Maximal-marginal-relevance reranking of the positive-score candidates.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{tanimoto, Fingerprint};
use crate::metrics::{sd_from_fingerprints, RankedList};

pub const DEFAULT_CAP: usize = 500;
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("no candidate has a positive score")]
    EmptyCandidates,
    #[error("cutoff {k} exceeds the {available} candidates")]
    CutoffTooLarge { k: usize, available: usize },
    #[error("candidate {0} is missing from the ranked list")]
    UnknownId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
    pub fingerprint: Fingerprint,
    /// Position in the input passed to [`build_candidates`].
    pub input_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
    pub cap: usize,
}

/// Keeps entries with logit > 0, sorted by descending score (input order on
/// ties), truncated to `cap`.
pub fn build_candidates(
    ids: &[String],
    scores: &[f64],
    fingerprints: &[Fingerprint],
    cap: usize,
) -> Result<CandidateSet, RerankError> {
    assert!(ids.len() == scores.len() && ids.len() == fingerprints.len());
    let mut entries: Vec<Candidate> = (0..ids.len())
        .filter(|&i| scores[i] > 0.0)
        .map(|i| Candidate {
            id: ids[i].clone(),
            score: scores[i],
            fingerprint: fingerprints[i].clone(),
            input_index: i,
        })
        .collect();
    if entries.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    entries.truncate(cap);
    Ok(CandidateSet { entries, cap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedSet {
    pub lambda: f64,
    /// Positions into the candidate set, in selection order.
    pub order: Vec<usize>,
    pub ids: Vec<String>,
    /// MMR value of each selected candidate at the step it was chosen.
    pub mmr_scores: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Greedy MMR: start from the top score, then repeatedly take the candidate
/// maximizing `λ·σ(p) − (1 − λ)·max Tanimoto to the selected set`. Ties go
/// to the higher raw score, then the earlier input.
pub fn mmr_rerank(c: &CandidateSet, lambda: f64) -> RerankedSet {
    let scores: Vec<f64> = c.entries.iter().map(|e| e.score).collect();
    let (order, mmr_scores) = mmr_order(&scores, lambda, |i, j| {
        tanimoto(&c.entries[i].fingerprint, &c.entries[j].fingerprint).expect("fingerprint widths agree")
    });
    RerankedSet {
        lambda,
        ids: order.iter().map(|&i| c.entries[i].id.clone()).collect(),
        order,
        mmr_scores,
    }
}

/// The greedy MMR loop over raw scores (logits) and an arbitrary similarity.
/// Returns selected positions and each one's MMR value when chosen. Ties go
/// to the higher score, then the lower position.
pub fn mmr_order(scores: &[f64], lambda: f64, sim: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>) {
    let n = scores.len();
    assert!(n > 0, "candidate set must be nonempty");
    let relevance: Vec<f64> = scores.iter().map(|&p| lambda * sigmoid(p)).collect();
    let better = |i: usize, vi: f64, j: usize, vj: f64| {
        vi.total_cmp(&vj)
            .then(scores[i].total_cmp(&scores[j]))
            .then(j.cmp(&i))
            .is_gt()
    };
    let mut max_sim = vec![0.0f64; n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut mmr_scores = Vec::with_capacity(n);

    let mut pick = 0;
    for i in 1..n {
        if better(i, scores[i], pick, scores[pick]) {
            pick = i;
        }
    }
    let mut value = relevance[pick];
    loop {
        taken[pick] = true;
        order.push(pick);
        mmr_scores.push(value);
        if order.len() == n {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            max_sim[i] = max_sim[i].max(sim(pick, i));
            let v = relevance[i] - (1.0 - lambda) * max_sim[i];
            if best.is_none_or(|(b, bv)| better(i, v, b, bv)) {
                best = Some((i, v));
            }
        }
        (pick, value) = best.expect("a candidate remains");
    }
    (order, mmr_scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedMetrics {
    pub lambda: f64,
    pub k: usize,
    pub ef_before: f64,
    pub ef_after: f64,
    pub sd_before: f64,
    pub sd_after: f64,
}

impl PairedMetrics {
    pub fn ef_delta(&self) -> f64 {
        self.ef_after - self.ef_before
    }

    pub fn sd_delta(&self) -> f64 {
        self.sd_after - self.sd_before
    }
}

/// EF_k and SD_k of the score-ordered top `k` candidates against the
/// reranked top `k`. Labels and the active rate come from `original`.
pub fn rerank_report(
    original: &RankedList,
    candidates: &CandidateSet,
    reranked: &RerankedSet,
    k: usize,
) -> Result<PairedMetrics, RerankError> {
    let available = candidates.entries.len();
    if k == 0 || k > available {
        return Err(RerankError::CutoffTooLarge { k, available });
    }
    let labels: HashMap<&str, bool> = original.items().iter().map(|it| (it.id.as_str(), it.active)).collect();
    let rate = original.actives() as f64 / original.len() as f64;
    let side = |positions: &mut dyn Iterator<Item = usize>| -> Result<(f64, f64), RerankError> {
        let mut hits = 0;
        let mut fps = Vec::with_capacity(k);
        for p in positions.take(k) {
            let e = &candidates.entries[p];
            if *labels
                .get(e.id.as_str())
                .ok_or_else(|| RerankError::UnknownId(e.id.clone()))?
            {
                hits += 1;
            }
            fps.push(e.fingerprint.clone());
        }
        let ef = if rate > 0.0 {
            (hits as f64 / k as f64) / rate
        } else {
            0.0
        };
        let sd = if fps.len() >= 2 {
            sd_from_fingerprints(&fps)
        } else {
            0.0
        };
        Ok((ef, sd))
    };
    let (ef_before, sd_before) = side(&mut (0..available))?;
    let (ef_after, sd_after) = side(&mut reranked.order.iter().copied())?;
    Ok(PairedMetrics {
        lambda: reranked.lambda,
        k,
        ef_before,
        ef_after,
        sd_before,
        sd_after,
    })
}

/// Reranks at every λ (in parallel) and reports paired metrics at
/// `min(k, |candidates|)`.
pub fn lambda_sweep(
    original: &RankedList,
    candidates: &CandidateSet,
    lambdas: &[f64],
    k: usize,
) -> Result<Vec<PairedMetrics>, RerankError> {
    let k = k.min(candidates.entries.len());
    lambdas
        .par_iter()
        .map(|&l| rerank_report(original, candidates, &mmr_rerank(candidates, l), k))
        .collect()
}

/// Writes `lambda,ef100_before,ef100_after,sd100_before,sd100_after`.
pub fn write_sweep_csv<W: Write>(rows: &[PairedMetrics], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lambda", "ef100_before", "ef100_after", "sd100_before", "sd100_after"])?;
    for r in rows {
        out.write_record([
            format!("{:.2}", r.lambda),
            format!("{:.6}", r.ef_before),
            format!("{:.6}", r.ef_after),
            format!("{:.6}", r.sd_before),
            format!("{:.6}", r.sd_after),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn set(scores: &[f64], fps: Vec<Fingerprint>) -> CandidateSet {
        let ids: Vec<String> = (1..=scores.len()).map(|i| i.to_string()).collect();
        build_candidates(&ids, scores, &fps, DEFAULT_CAP).unwrap()
    }

    #[test]
    fn candidates_filter_sort_truncate() {
        let fp = Fingerprint::zeros(64, 2);
        let ids: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
        let fps = vec![fp.clone(); 4];
        assert_eq!(
            build_candidates(&ids, &[-1.0, -0.5, 0.0, -3.0], &fps, 500),
            Err(RerankError::EmptyCandidates)
        );
        let c = build_candidates(&ids, &[0.5, -0.5, 2.0, 0.5], &fps, 500).unwrap();
        let got: Vec<&str> = c.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(got, ["m2", "m0", "m3"]);

        let ids: Vec<String> = (0..600).map(|i| i.to_string()).collect();
        let scores: Vec<f64> = (0..600).map(|i| 1.0 + i as f64).collect();
        let c = build_candidates(&ids, &scores, &vec![fp; 600], 500).unwrap();
        assert_eq!(c.entries.len(), 500);
        assert_eq!(c.entries[0].id, "599");
        assert_eq!(c.entries[499].id, "100");
    }

    #[test]
    fn hand_evaluated_three_candidates() {
        let sims = [[1.0, 0.9, 0.1], [0.9, 1.0, 0.2], [0.1, 0.2, 1.0]];
        let scores = [logit(0.9), logit(0.8), logit(0.7)];
        let (order, mmr) = mmr_order(&scores, 0.5, |i, j| sims[i][j]);
        assert_eq!(order, [0, 2, 1]);
        // step two: candidate 2 scores 0.4 - 0.45, candidate 3 scores 0.35 - 0.05
        assert!((mmr[1] - 0.30).abs() < 1e-12);
        // step three: candidate 2 against {1, 3}: 0.4 - 0.5 * max(0.9, 0.2)
        assert!((mmr[2] + 0.05).abs() < 1e-12);
    }

    #[test]
    fn lambda_one_keeps_score_order() {
        let fps: Vec<Fingerprint> = (0..6).map(|i| Fingerprint::from_ones(64, 2, [i % 2, 10])).collect();
        let c = set(&[3.0, 2.5, 2.5, 1.0, 40.0, 41.0], fps);
        let r = mmr_rerank(&c, 1.0);
        assert_eq!(r.order, (0..6).collect::<Vec<_>>());
        // saturated sigmoids still follow the raw scores
        assert_eq!(r.ids[0], "6");
        assert_eq!(r.ids[1], "5");
    }

    #[test]
    fn singleton() {
        let c = set(&[1.0], vec![Fingerprint::zeros(64, 2)]);
        assert_eq!(mmr_rerank(&c, 0.3).ids, ["1"]);
    }

    #[test]
    fn sweep_csv_layout() {
        let row = PairedMetrics {
            lambda: 0.5,
            k: 100,
            ef_before: 10.0,
            ef_after: 9.5,
            sd_before: 0.25,
            sd_after: 0.5,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "lambda,ef100_before,ef100_after,sd100_before,sd100_after\n0.50,10.000000,9.500000,0.250000,0.500000\n"
        );
        assert_eq!(row.sd_delta(), 0.25);
    }
}
