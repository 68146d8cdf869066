//! Early-recognition ranking metrics and scaffold diversity.
//!
//! Every metric reads a [`RankedList`]: items sorted by descending score,
//! ties kept in input order. Ranks are 1-based.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{murcko_scaffold, MolGraph};
use crate::fingerprint::{scaffold_fingerprint, tanimoto, Fingerprint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric needs at least one active and one inactive (n = {actives}, N = {total})")]
    DegenerateLabels { actives: usize, total: usize },
    #[error("cutoff {k} exceeds list length {total}")]
    CutoffTooLarge { k: usize, total: usize },
    #[error("score for {0} is NaN")]
    NanScore(String),
    #[error("invalid FPR window [{lo}, {hi}]")]
    BadWindow { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    items: Vec<RankedItem>,
    actives: usize,
}

impl RankedList {
    pub fn new(mut items: Vec<RankedItem>) -> Result<Self, MetricError> {
        if let Some(bad) = items.iter().find(|i| i.score.is_nan()) {
            return Err(MetricError::NanScore(bad.id.clone()));
        }
        items.sort_by(|a, b| b.score.total_cmp(&a.score));
        let actives = items.iter().filter(|i| i.active).count();
        Ok(RankedList { items, actives })
    }

    /// Builds a list from parallel score and label slices; ids are indices.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self, MetricError> {
        assert_eq!(scores.len(), labels.len());
        Self::new(
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &active))| RankedItem {
                    id: i.to_string(),
                    score,
                    active,
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn actives(&self) -> usize {
        self.actives
    }

    /// 1-based ranks of the actives, ascending.
    pub fn active_ranks(&self) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.active)
            .map(|(i, _)| i + 1)
            .collect()
    }

    fn require_both_classes(&self) -> Result<(), MetricError> {
        if self.actives == 0 || self.actives == self.items.len() {
            return Err(MetricError::DegenerateLabels {
                actives: self.actives,
                total: self.items.len(),
            });
        }
        Ok(())
    }
}

/// Area under the ROC curve against log10(FPR) over `[lo, hi]`, divided by
/// log10(hi / lo). The ROC is the piecewise-linear path through the
/// per-item (FPR, TPR) vertices of the ranking.
pub fn log_auc(rl: &RankedList, lo: f64, hi: f64) -> Result<f64, MetricError> {
    rl.require_both_classes()?;
    if !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return Err(MetricError::BadWindow { lo, hi });
    }
    let n_act = rl.actives as f64;
    let n_inact = (rl.len() - rl.actives) as f64;
    let (lo_u, hi_u) = (lo.log10(), hi.log10());
    let mut area = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    for it in rl.items() {
        if it.active {
            tp += 1.0;
            continue;
        }
        // a horizontal segment at TPR = tp / n from FPR = fp / N0 to (fp + 1) / N0
        let x0 = fp / n_inact;
        fp += 1.0;
        let x1 = fp / n_inact;
        if x1 <= lo || x0 >= hi {
            continue;
        }
        let u0 = if x0 <= lo { lo_u } else { x0.log10() };
        let u1 = if x1 >= hi { hi_u } else { x1.log10() };
        area += (tp / n_act) * (u1 - u0);
    }
    Ok(area / (hi_u - lo_u))
}

/// BEDROC from the robust initial enhancement with `x_i = r_i / N`.
pub fn bedroc(rl: &RankedList, alpha: f64) -> Result<f64, MetricError> {
    rl.require_both_classes()?;
    let n = rl.actives as f64;
    let big_n = rl.len() as f64;
    let ra = n / big_n;
    let sum: f64 = rl
        .active_ranks()
        .iter()
        .map(|&r| (-alpha * r as f64 / big_n).exp())
        .sum();
    let random = (1.0 / big_n) * ((1.0 - (-alpha).exp()) / ((alpha / big_n).exp_m1()));
    let rie = (sum / n) / random;
    let rie_max = (1.0 - (-alpha * ra).exp()) / (ra * (1.0 - (-alpha).exp()));
    let rie_min = (1.0 - (alpha * ra).exp()) / (ra * (1.0 - alpha.exp()));
    Ok((rie - rie_min) / (rie_max - rie_min))
}

/// Enrichment factor `(n_k / k) / (n / N)`.
pub fn ef_k(rl: &RankedList, k: usize) -> Result<f64, MetricError> {
    if rl.actives == 0 {
        return Err(MetricError::DegenerateLabels {
            actives: 0,
            total: rl.len(),
        });
    }
    if k == 0 || k > rl.len() {
        return Err(MetricError::CutoffTooLarge { k, total: rl.len() });
    }
    let hits = cg_k(rl, k) as f64;
    Ok((hits / k as f64) / (rl.actives as f64 / rl.len() as f64))
}

/// Number of actives in the top `k` (the cumulative gain with 0/1 relevance).
pub fn cg_k(rl: &RankedList, k: usize) -> usize {
    rl.items.iter().take(k).filter(|i| i.active).count()
}

/// `Σ_{i ≤ k} y_i / log2(i + 1)`; a cutoff past the end covers the whole list.
pub fn dcg_k(rl: &RankedList, k: usize) -> f64 {
    rl.items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, it)| it.active)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// One minus the mean pairwise Tanimoto over scaffold fingerprints.
///
/// Panics with fewer than two fingerprints or mixed widths.
pub fn sd_from_fingerprints(fps: &[Fingerprint]) -> f64 {
    let k = fps.len();
    assert!(k >= 2, "scaffold diversity needs at least two molecules");
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += tanimoto(&fps[i], &fps[j]).expect("fingerprint widths agree");
        }
    }
    1.0 - 2.0 * total / (k * (k - 1)) as f64
}

/// Scaffold diversity of a molecule set, using Murcko scaffolds and ECFP.
pub fn sd_k(mols: &[&MolGraph], radius: u32, nbits: usize) -> f64 {
    let fps: Vec<Fingerprint> = mols
        .iter()
        .map(|m| scaffold_fingerprint(murcko_scaffold(m).as_ref(), radius, nbits))
        .collect();
    sd_from_fingerprints(&fps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub logauc: f64,
    pub bedroc: f64,
    pub ef100: f64,
    pub dcg100: f64,
    pub sd100: Option<f64>,
}

impl MetricReport {
    /// `sd100_fps` holds the scaffold fingerprints of the top-ranked
    /// molecules, in rank order.
    pub fn compute(rl: &RankedList, sd100_fps: Option<&[Fingerprint]>) -> Result<Self, MetricError> {
        let k = 100.min(rl.len());
        Ok(MetricReport {
            logauc: log_auc(rl, 0.001, 0.1)?,
            bedroc: bedroc(rl, 20.0)?,
            ef100: ef_k(rl, k)?,
            dcg100: dcg_k(rl, k),
            sd100: sd100_fps
                .filter(|f| f.len() >= 2)
                .map(|f| sd_from_fingerprints(&f[..k.min(f.len())])),
        })
    }

    /// JSON object with every value printed to six decimal places.
    pub fn to_json(&self) -> String {
        let sd = self.sd100.map_or("null".to_string(), |v| format!("{v:.6}"));
        format!(
            "{{\"logauc\": {:.6}, \"bedroc\": {:.6}, \"ef100\": {:.6}, \"dcg100\": {:.6}, \"sd100\": {sd}}}",
            self.logauc, self.bedroc, self.ef100, self.dcg100
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(labels: &[bool]) -> RankedList {
        let n = labels.len();
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        RankedList::from_scores(&scores, labels).unwrap()
    }

    fn placed(total: usize, ranks: &[usize]) -> RankedList {
        let labels: Vec<bool> = (1..=total).map(|r| ranks.contains(&r)).collect();
        list(&labels)
    }

    #[test]
    fn ties_keep_input_order() {
        let rl = RankedList::from_scores(&[1.0, 2.0, 1.0, 2.0], &[true, false, false, true]).unwrap();
        let ids: Vec<&str> = rl.items().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["1", "3", "0", "2"]);
        assert!(RankedList::from_scores(&[f64::NAN], &[true]).is_err());
    }

    #[test]
    fn log_auc_extremes() {
        let perfect = placed(1000, &(1..=10).collect::<Vec<_>>());
        assert!((log_auc(&perfect, 0.001, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let worst = placed(1000, &(991..=1000).collect::<Vec<_>>());
        assert!(log_auc(&worst, 0.001, 0.1).unwrap().abs() < 1e-9);
        assert!(log_auc(&placed(10, &[]), 0.001, 0.1).is_err());
    }

    #[test]
    fn log_auc_step_by_hand() {
        // 1 active of 2 found after 1 of 10 inactives, the other after 5:
        // TPR = 0 on (0, 0.1), so only [0.1, 0.1] matters -> 0 over [0.001, 0.1];
        // over [0.1, 1]: TPR 0.5 on [0.1, 0.5], 1.0 on [0.5, 1.0]
        let labels = [
            false, true, false, false, false, false, true, false, false, false, false, false,
        ];
        let rl = list(&labels);
        assert_eq!(log_auc(&rl, 0.001, 0.1).unwrap(), 0.0);
        let expected =
            (0.5 * (0.5f64.log10() - 0.1f64.log10()) + 1.0 * (0.0 - 0.5f64.log10())) / (0.0 - 0.1f64.log10());
        assert!((log_auc(&rl, 0.1, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bedroc_extremes() {
        let top = placed(500, &[1, 2, 3, 4, 5]);
        assert!((bedroc(&top, 20.0).unwrap() - 1.0).abs() < 1e-9);
        let bottom = placed(500, &[496, 497, 498, 499, 500]);
        assert!(bedroc(&bottom, 20.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn bedroc_ranks_one_and_five_of_ten() {
        // direct summation with x_i = r_i / N, N = 10, n = 2, alpha = 20
        let (a, n, big_n) = (20.0f64, 2.0f64, 10.0f64);
        let rie_of = |ranks: &[f64]| {
            let s: f64 = ranks.iter().map(|r| (-a * r / big_n).exp()).sum();
            let denom: f64 = (1..=10).map(|r| (-a * r as f64 / big_n).exp()).sum::<f64>() / big_n;
            (s / n) / denom
        };
        let rie = rie_of(&[1.0, 5.0]);
        let max = rie_of(&[1.0, 2.0]);
        let min = rie_of(&[9.0, 10.0]);
        let expected = (rie - min) / (max - min);
        let got = bedroc(&placed(10, &[1, 5]), 20.0).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn enrichment_examples() {
        let rl = placed(10_000, &[1, 20, 40, 60, 100]);
        assert!((ef_k(&rl, 100).unwrap() - 100.0).abs() < 1e-9);
        let none = placed(10_000, &[101, 200]);
        assert_eq!(ef_k(&none, 100).unwrap(), 0.0);
        assert!(matches!(
            ef_k(&placed(50, &[1]), 100),
            Err(MetricError::CutoffTooLarge { .. })
        ));
        assert_eq!(cg_k(&rl, 50), 3);
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_k(&placed(10, &[1]), 5), 1.0);
        let two = dcg_k(&placed(10, &[1, 2]), 5);
        assert!((two - (1.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
        assert!((two - 1.6309).abs() < 1e-4);
        assert_eq!(dcg_k(&placed(10, &[7]), 5), 0.0);
    }

    #[test]
    fn scaffold_diversity_formula() {
        let a = Fingerprint::from_ones(64, 2, [1, 2]);
        let b = Fingerprint::from_ones(64, 2, [10]);
        let c = Fingerprint::from_ones(64, 2, [20]);
        // sims: (a,a')=1, (b,b')=1, others 0 -> 1 - 2/6
        let sd = sd_from_fingerprints(&[a.clone(), a, b.clone(), b]);
        assert!((sd - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sd_from_fingerprints(&[c.clone(), c.clone(), c]), 0.0);
        let z = Fingerprint::zeros(64, 2);
        assert_eq!(sd_from_fingerprints(&[z.clone(), z]), 0.0);
    }

    #[test]
    fn sd_on_molecules() {
        let same: Vec<MolGraph> = ["Cc1ccccc1", "Oc1ccccc1", "Nc1ccccc1"]
            .iter()
            .map(|s| crate::chem::parse_smiles(s).unwrap())
            .collect();
        let refs: Vec<&MolGraph> = same.iter().collect();
        assert_eq!(sd_k(&refs, 2, 1024), 0.0);
    }

    #[test]
    fn report_json_has_six_decimals() {
        let r = MetricReport {
            logauc: 0.5,
            bedroc: 1.0 / 3.0,
            ef100: 12.0,
            dcg100: 0.0,
            sd100: None,
        };
        assert_eq!(
            r.to_json(),
            "{\"logauc\": 0.500000, \"bedroc\": 0.333333, \"ef100\": 12.000000, \"dcg100\": 0.000000, \"sd100\": null}"
        );
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["ef100"], 12.0);
    }
}
