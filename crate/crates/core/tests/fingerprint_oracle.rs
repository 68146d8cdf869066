//! Unfolded environment counts against RDKit's Morgan (radius 2) counts, plus
//! pinned popcounts of this implementation for regression.

use vscreen::chem::parse_smiles;
use vscreen::fingerprint::{ecfp, ecfp_identifiers};

fn agreement(file: &str) -> (usize, usize, Vec<String>) {
    let path = format!("{}/tests/fixtures/{file}", env!("CARGO_MANIFEST_DIR"));
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let (mut hit, mut total, mut misses) = (0, 0, Vec::new());
    for r in rdr.records() {
        let r = r.unwrap();
        let Ok(expected) = r[11].parse::<usize>() else {
            continue;
        };
        let mol = parse_smiles(&r[0]).unwrap();
        let ours = ecfp_identifiers(&mol, 2).len();
        total += 1;
        if ours == expected {
            hit += 1;
        } else {
            misses.push(format!("{} ours={ours} rdkit={expected}", &r[0]));
        }
    }
    (hit, total, misses)
}

#[test]
fn curated_environment_counts_match_rdkit() {
    let (hit, total, misses) = agreement("curated_oracle.csv");
    assert!(total >= 40);
    assert!(hit * 100 >= total * 95, "{hit}/{total}: {misses:#?}");
}

#[test]
fn public_environment_counts_match_rdkit() {
    let (hit, total, misses) = agreement("public_500_oracle.csv");
    assert!(total >= 400);
    assert!(hit * 100 >= total * 95, "{hit}/{total}: {misses:#?}");
}

#[test]
fn pinned_popcounts() {
    for (s, pop) in [("CCO", 6), ("c1ccccc1", 3), ("CC(=O)Oc1ccccc1C(=O)O", 24)] {
        let fp = ecfp(&parse_smiles(s).unwrap(), 2, 1024);
        assert_eq!(fp.popcount(), pop, "{s}");
    }
}
