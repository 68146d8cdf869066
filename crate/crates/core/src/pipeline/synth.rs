//! Seeded synthetic assay: a few active scaffold families with one dominant
//! family, inside a decoy library built from unrelated ring systems.

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hash::derive_seed;

/// Active families; `{A}` takes a prefix substituent, `{B}` an optional
/// branch on the ring.
pub const ACTIVE_TEMPLATES: [&str; 4] = [
    "{A}c1ccc(-c2ccnc{B}c2)cc1",
    "{A}c1ccc2[nH]cc{B}c2c1",
    "{A}c1ccc(NC(=O)C2CC{B}CC2)cc1",
    "{A}c1ccc(Oc2ncc{B}cn2)cc1",
];

const BENZENE: &str = "{A}c1ccc{B}cc1";
const ACYCLIC: &str = "{A}CCC{B}CC";

const DECOY_TEMPLATES: [&str; 10] = [
    "{A}C1CCC{B}CC1",
    "{A}c1ccc{B}o1",
    "{A}c1ccc{B}s1",
    "{A}c1ccnc{B}c1",
    "{A}C1CCN{B}CC1",
    "{A}C1COC{B}C1",
    "{A}c1ccc2cc{B}ccc2c1",
    "{A}N1CCOC{B}C1",
    "{A}c1ccc(Cc2ccccc2)c{B}c1",
    "{A}C1C{B}C1",
];

const PREFIXES: [&str; 14] = [
    "",
    "C",
    "CC",
    "O",
    "N",
    "F",
    "Cl",
    "Br",
    "CO",
    "N#C",
    "CC(C)",
    "OC(=O)",
    "NC(=O)",
    "CS(=O)(=O)",
];

const BRANCHES: [&str; 10] = ["C", "CC", "O", "N", "F", "Cl", "OC", "C(F)(F)F", "C#N", "C(=O)O"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub active_fraction: f64,
    /// Share of the actives in each family of [`ACTIVE_TEMPLATES`].
    pub shares: Vec<f64>,
    /// Fractions of the decoys that are benzene derivatives and acyclic.
    pub benzene_fraction: f64,
    pub acyclic_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            active_fraction: 0.01,
            shares: vec![0.6, 0.15, 0.15, 0.10],
            benzene_fraction: 0.15,
            acyclic_fraction: 0.08,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub id: String,
    pub smiles: String,
    pub label: bool,
    /// Active family index, `None` for decoys.
    pub family: Option<usize>,
}

fn render(template: &str, rng: &mut ChaCha8Rng) -> String {
    let a = PREFIXES.choose(rng).expect("prefixes");
    let b = if rng.random_bool(0.5) {
        format!("({})", BRANCHES.choose(rng).expect("branches"))
    } else {
        String::new()
    };
    template.replace("{A}", a).replace("{B}", &b)
}

/// Splits `total` by `shares` with largest-remainder rounding.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let raw: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&x, &y| {
        (raw[y] - raw[y].floor())
            .total_cmp(&(raw[x] - raw[x].floor()))
            .then(x.cmp(&y))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

pub fn desk_assay(cfg: &SynthConfig) -> Vec<SynthRecord> {
    assert!(cfg.shares.len() <= ACTIVE_TEMPLATES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth", 0));
    let n_active = ((cfg.n as f64 * cfg.active_fraction).round() as usize).max(cfg.shares.len());
    let n_decoy = cfg.n - n_active;
    let mut rows: Vec<(String, bool, Option<usize>)> = Vec::with_capacity(cfg.n);
    for (f, &count) in apportion(n_active, &cfg.shares).iter().enumerate() {
        for _ in 0..count {
            rows.push((render(ACTIVE_TEMPLATES[f], &mut rng), true, Some(f)));
        }
    }
    let benzene = (n_decoy as f64 * cfg.benzene_fraction).round() as usize;
    let acyclic = (n_decoy as f64 * cfg.acyclic_fraction).round() as usize;
    for _ in 0..benzene {
        rows.push((render(BENZENE, &mut rng), false, None));
    }
    for _ in 0..acyclic {
        rows.push((render(ACYCLIC, &mut rng), false, None));
    }
    for i in 0..n_decoy - benzene - acyclic {
        let t = DECOY_TEMPLATES[i % DECOY_TEMPLATES.len()];
        rows.push((render(t, &mut rng), false, None));
    }
    rows.shuffle(&mut rng);
    rows.into_iter()
        .enumerate()
        .map(|(i, (smiles, label, family))| SynthRecord {
            id: format!("syn_{i:05}"),
            smiles,
            label,
            family,
        })
        .collect()
}

/// Writes `id,smiles,label`.
pub fn write_csv<W: Write>(records: &[SynthRecord], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "smiles", "label"])?;
    for r in records {
        out.write_record([r.id.as_str(), r.smiles.as_str(), if r.label { "1" } else { "0" }])?;
    }
    out.flush()?;
    Ok(())
}
