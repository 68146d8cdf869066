use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Assay, PipelineError};
use crate::chem::{murcko_scaffold, scaffold_key};
use crate::hash::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[serde(alias = "random")]
    RandomCvLite,
    Scaffold,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" | "random_cv_lite" => Ok(Scheme::RandomCvLite),
            "scaffold" => Ok(Scheme::Scaffold),
            other => Err(format!("unknown split scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Valid,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Valid => "valid",
            Role::Test => "test",
        }
    }
}

/// Record indices per role, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    fn from_roles(roles: &[Role]) -> Self {
        let mut s = Split::default();
        for (i, r) in roles.iter().enumerate() {
            match r {
                Role::Train => s.train.push(i),
                Role::Valid => s.valid.push(i),
                Role::Test => s.test.push(i),
            }
        }
        s
    }

    pub fn role_of(&self, n: usize) -> Vec<Option<Role>> {
        let mut roles = vec![None; n];
        for (set, role) in [
            (&self.train, Role::Train),
            (&self.valid, Role::Valid),
            (&self.test, Role::Test),
        ] {
            for &i in set {
                roles[i] = Some(role);
            }
        }
        roles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    /// Writes `id,split,role` for every record and split.
    pub fn write_csv<W: Write>(&self, assay: &Assay, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "split", "role"])?;
        for (s, split) in self.splits.iter().enumerate() {
            for (i, role) in split.role_of(assay.len()).into_iter().enumerate() {
                if let Some(role) = role {
                    out.write_record([assay.records[i].id.as_str(), &s.to_string(), role.as_str()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Number of scaffolds shared by the train and test folds of `split`.
    pub fn leakage(&self, keys: &[String], split: usize) -> usize {
        let s = &self.splits[split];
        let train: HashSet<&str> = s.train.iter().map(|&i| keys[i].as_str()).collect();
        let test: HashSet<&str> = s.test.iter().map(|&i| keys[i].as_str()).collect();
        train.intersection(&test).count()
    }
}

/// Reads a file written by [`SplitPlan::write_csv`] back into per-split
/// index lists for `assay`.
pub fn read_splits_csv<R: Read>(reader: R, assay: &Assay) -> Result<Vec<Split>, PipelineError> {
    let index: HashMap<&str, usize> = assay
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["id", "split", "role"] {
        return Err(PipelineError::Header("expected header id,split,role".into()));
    }
    let mut splits: BTreeMap<usize, Split> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let i = *index
            .get(&rec[0])
            .ok_or_else(|| PipelineError::Header(format!("unknown id '{}' in split file", &rec[0])))?;
        let s: usize = rec[1]
            .parse()
            .map_err(|_| PipelineError::Header(format!("bad split index '{}'", &rec[1])))?;
        let entry = splits.entry(s).or_default();
        match &rec[2] {
            "train" => entry.train.push(i),
            "valid" => entry.valid.push(i),
            "test" => entry.test.push(i),
            other => return Err(PipelineError::Header(format!("bad role '{other}'"))),
        }
    }
    Ok(splits
        .into_values()
        .map(|mut s| {
            s.train.sort_unstable();
            s.valid.sort_unstable();
            s.test.sort_unstable();
            s
        })
        .collect())
}

/// Scaffold grouping keys, one per record (empty for acyclic molecules).
pub fn scaffold_keys(assay: &Assay) -> Vec<String> {
    assay
        .records
        .iter()
        .map(|r| scaffold_key(murcko_scaffold(&r.molecule).as_ref()))
        .collect()
}

/// Random nested-CV-lite folds or seeded scaffold splits.
///
/// `RandomCvLite` needs `n_splits = 5`: split `i` tests fold `i` and
/// validates on fold `i − 1 (mod 5)`. `Scaffold` produces `n_splits`
/// independent 3:1:1 splits; scaffold bins above 10% of the records always
/// go to train.
pub fn make_splits(assay: &Assay, scheme: Scheme, n_splits: usize, seed: u64) -> Result<SplitPlan, PipelineError> {
    let splits = match scheme {
        Scheme::RandomCvLite => random_cv_lite(assay.len(), n_splits, seed)?,
        Scheme::Scaffold => {
            let keys = scaffold_keys(assay);
            (0..n_splits)
                .map(|i| scaffold_split(&keys, derive_seed(seed, "scaffold-split", i as u64)))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(SplitPlan { scheme, seed, splits })
}

fn random_cv_lite(n: usize, n_splits: usize, seed: u64) -> Result<Vec<Split>, PipelineError> {
    if n_splits != 5 {
        return Err(PipelineError::Config(format!(
            "random_cv_lite uses exactly 5 splits, got {n_splits}"
        )));
    }
    if n < 5 {
        return Err(PipelineError::Config(format!("{n} records cannot fill 5 folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "random-cv", 0)));
    let mut fold = vec![0; n];
    for (p, &i) in perm.iter().enumerate() {
        fold[i] = p % 5;
    }
    Ok((0..5)
        .map(|s| {
            let roles: Vec<Role> = fold
                .iter()
                .map(|&f| {
                    if f == s {
                        Role::Test
                    } else if f == (s + 4) % 5 {
                        Role::Valid
                    } else {
                        Role::Train
                    }
                })
                .collect();
            Split::from_roles(&roles)
        })
        .collect())
}

fn scaffold_split(keys: &[String], seed: u64) -> Result<Split, PipelineError> {
    let n = keys.len();
    let mut bins: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        bins.entry(k.as_str()).or_default().push(i);
    }
    let mut roles = vec![Role::Train; n];
    let mut filled = [0usize; 3];
    let (forced, mut rest): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
        bins.into_values().partition(|b| b.len() as f64 > 0.1 * n as f64);
    for b in &forced {
        filled[0] += b.len();
    }
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rest.sort_by_key(|b| std::cmp::Reverse(b.len()));
    let targets = [0.6 * n as f64, 0.2 * n as f64, 0.2 * n as f64];
    let order = [Role::Train, Role::Valid, Role::Test];
    for b in rest {
        let f = (0..3)
            .max_by(|&x, &y| {
                let dx = targets[x] - filled[x] as f64;
                let dy = targets[y] - filled[y] as f64;
                dx.total_cmp(&dy).then(y.cmp(&x))
            })
            .expect("three folds");
        filled[f] += b.len();
        for i in b {
            roles[i] = order[f];
        }
    }
    if filled[1] == 0 || filled[2] == 0 {
        return Err(PipelineError::TooFewScaffolds(format!(
            "scaffold bins fill valid {} / test {} of {n} records",
            filled[1], filled[2]
        )));
    }
    Ok(Split::from_roles(&roles))
}
