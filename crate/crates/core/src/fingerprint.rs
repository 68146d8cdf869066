//! Circular (ECFP-style) fingerprints folded to a fixed width, and Tanimoto
//! similarity.
//!
//! Atom identifiers start from (element, charge, heavy degree, total H,
//! aromatic, ring membership) and are rehashed `radius` times with the sorted
//! (bond type, neighbor identifier) list. An environment whose bond set was
//! already produced by an earlier identifier is dropped, so structurally
//! redundant identifiers do not set extra bits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::chem::{implicit_hydrogens, BondType, MolGraph};
use crate::hash::StableHasher;

pub const DEFAULT_NBITS: usize = 1024;
pub const DEFAULT_RADIUS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("invalid fingerprint hex: {0}")]
    BadHex(String),
}

/// Fixed-width bit vector. Bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    bits: Vec<u64>,
    nbits: usize,
    radius: u32,
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Fingerprint(r={}, {} bits, {} set)",
            self.radius,
            self.nbits,
            self.popcount()
        )
    }
}

fn check_width(nbits: usize) {
    assert!(
        nbits >= 8 && nbits.is_power_of_two(),
        "fingerprint width must be a power of two >= 8, got {nbits}"
    );
}

impl Fingerprint {
    pub fn zeros(nbits: usize, radius: u32) -> Self {
        check_width(nbits);
        Fingerprint {
            bits: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_ones(nbits: usize, radius: u32, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::zeros(nbits, radius);
        for i in ones {
            fp.set(i);
        }
        fp
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.nbits, "bit {i} out of range for width {}", self.nbits);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.nbits && self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + t)
            })
        })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.nbits).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Lowercase hex, two characters per byte, byte `k` holding bits
    /// `8k..8k+8` with bit `8k` as its least significant bit.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(self.nbits / 8)
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str, radius: u32) -> Result<Self, FingerprintError> {
        let bytes = hex::decode(s.trim()).map_err(|e| FingerprintError::BadHex(e.to_string()))?;
        let nbits = bytes.len() * 8;
        if nbits < 8 || !nbits.is_power_of_two() {
            return Err(FingerprintError::BadHex(format!(
                "{nbits} bits is not a power of two >= 8"
            )));
        }
        let mut fp = Self::zeros(nbits, radius);
        for (k, chunk) in bytes.chunks(8).enumerate() {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            fp.bits[k] = u64::from_le_bytes(word);
        }
        Ok(fp)
    }

    fn and_or_counts(&self, other: &Self) -> (u32, u32) {
        self.bits.iter().zip(&other.bits).fold((0, 0), |(a, o), (x, y)| {
            (a + (x & y).count_ones(), o + (x | y).count_ones())
        })
    }
}

/// |x ∧ y| / |x ∨ y|, with two empty fingerprints counting as identical.
pub fn tanimoto(x: &Fingerprint, y: &Fingerprint) -> Result<f64, FingerprintError> {
    if x.nbits != y.nbits {
        return Err(FingerprintError::WidthMismatch(x.nbits, y.nbits));
    }
    let (and, or) = x.and_or_counts(y);
    Ok(if or == 0 { 1.0 } else { and as f64 / or as f64 })
}

fn bond_code(b: BondType) -> u64 {
    match b {
        BondType::Single => 1,
        BondType::Double => 2,
        BondType::Triple => 3,
        BondType::Aromatic => 12,
    }
}

fn initial_identifiers(mol: &MolGraph) -> Vec<u64> {
    let implicit = implicit_hydrogens(mol);
    let ring = mol.ring_atoms();
    mol.atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            StableHasher::new()
                .write_u64(a.element.atomic_number() as u64)
                .write_u64(a.formal_charge as i64 as u64)
                .write_u64(mol.degree(i) as u64)
                .write_u64(a.explicit_h as u64 + implicit[i] as u64)
                .write_u64(a.aromatic as u64)
                .write_u64(ring[i] as u64)
                .finish()
        })
        .collect()
}

/// Unfolded identifiers of all retained environments up to `radius`.
pub fn ecfp_identifiers(mol: &MolGraph, radius: u32) -> BTreeSet<u64> {
    let n = mol.atom_count();
    let bond_index: BTreeMap<(usize, usize), usize> =
        mol.bonds().enumerate().map(|(k, (i, j, _))| ((i, j), k)).collect();
    let words = mol.bond_count().div_ceil(64).max(1);

    let mut ids = initial_identifiers(mol);
    let mut out: BTreeSet<u64> = ids.iter().copied().collect();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut env = vec![vec![0u64; words]; n];
    let mut dead: Vec<bool> = (0..n).map(|i| mol.degree(i) == 0).collect();

    for round in 0..radius {
        let mut next_ids = ids.clone();
        let mut next_env = env.clone();
        // bond set -> smallest identifier producing it this round, with its atoms
        let mut this_round: BTreeMap<Vec<u64>, (u64, Vec<usize>)> = BTreeMap::new();
        for i in 0..n {
            if dead[i] {
                continue;
            }
            let mut nbrs: Vec<(u64, u64)> = Vec::with_capacity(mol.degree(i));
            for &(j, b) in mol.neighbors(i) {
                nbrs.push((bond_code(b), ids[j]));
                let k = bond_index[&(i.min(j), i.max(j))];
                next_env[i][k / 64] |= 1 << (k % 64);
                for (w, x) in next_env[i].iter_mut().zip(&env[j]) {
                    *w |= x;
                }
            }
            nbrs.sort_unstable();
            let mut h = StableHasher::new();
            h.write_u64(round as u64).write_u64(ids[i]);
            for (b, id) in nbrs {
                h.write_u64(b).write_u64(id);
            }
            let id = h.finish();
            next_ids[i] = id;
            let slot = this_round.entry(next_env[i].clone()).or_insert((id, Vec::new()));
            slot.0 = slot.0.min(id);
            slot.1.push(i);
        }
        for (bonds, (id, atoms)) in this_round {
            if seen.contains(&bonds) {
                for a in atoms {
                    dead[a] = true;
                }
                continue;
            }
            out.insert(id);
            // atoms whose identifier lost the tie are redundant from here on
            for a in atoms {
                if next_ids[a] != id {
                    dead[a] = true;
                }
            }
            seen.insert(bonds);
        }
        ids = next_ids;
        env = next_env;
    }
    out
}

/// Folds [`ecfp_identifiers`] into `nbits` by modulo.
///
/// Panics unless `nbits` is a power of two of at least 8.
pub fn ecfp(mol: &MolGraph, radius: u32, nbits: usize) -> Fingerprint {
    let mut fp = Fingerprint::zeros(nbits, radius);
    for id in ecfp_identifiers(mol, radius) {
        fp.set((id % nbits as u64) as usize);
    }
    fp
}

/// Fingerprint of a scaffold; the empty scaffold maps to all zeros.
pub fn scaffold_fingerprint(scaffold: Option<&MolGraph>, radius: u32, nbits: usize) -> Fingerprint {
    match scaffold {
        Some(s) => ecfp(s, radius, nbits),
        None => Fingerprint::zeros(nbits, radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use proptest::prelude::*;

    fn fp(s: &str) -> Fingerprint {
        ecfp(&parse_smiles(s).unwrap(), 2, 1024)
    }

    #[test]
    fn deterministic_and_order_free() {
        assert_eq!(fp("c1ccccc1"), fp("c1ccccc1"));
        let mol = parse_smiles("c1ccccc1").unwrap();
        let rotated = mol.permuted(&[3, 4, 5, 0, 1, 2]);
        assert_eq!(ecfp(&mol, 2, 1024), ecfp(&rotated, 2, 1024));
        assert_eq!(fp("OCC"), fp("CCO"));
    }

    #[test]
    fn benzene_has_three_environments() {
        // one atom type, one radius-1 ring arc, one radius-2 ring arc
        let ids = ecfp_identifiers(&parse_smiles("c1ccccc1").unwrap(), 2);
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn empty_scaffold_is_zero() {
        let z = scaffold_fingerprint(None, 2, 1024);
        assert!(z.is_empty());
        assert_eq!(z.nbits(), 1024);
    }

    #[test]
    fn tanimoto_set_arithmetic() {
        let x = Fingerprint::from_ones(64, 2, [1, 2, 3]);
        let y = Fingerprint::from_ones(64, 2, [3, 4]);
        assert_eq!(tanimoto(&x, &y).unwrap(), 0.25);
        let d = Fingerprint::from_ones(64, 2, [10, 11]);
        assert_eq!(tanimoto(&x, &d).unwrap(), 0.0);
        assert_eq!(tanimoto(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_empty_conventions() {
        let z = Fingerprint::zeros(64, 2);
        let y = Fingerprint::from_ones(64, 2, [5]);
        assert_eq!(tanimoto(&z, &z).unwrap(), 1.0);
        assert_eq!(tanimoto(&z, &y).unwrap(), 0.0);
    }

    #[test]
    fn width_mismatch() {
        let a = Fingerprint::zeros(64, 2);
        let b = Fingerprint::zeros(128, 2);
        assert_eq!(tanimoto(&a, &b), Err(FingerprintError::WidthMismatch(64, 128)));
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn rejects_odd_width() {
        Fingerprint::zeros(1000, 2);
    }

    #[test]
    fn hex_round_trip() {
        let f = fp("CC(=O)Oc1ccccc1C(=O)O");
        let h = f.to_hex();
        assert_eq!(h.len(), 256);
        assert_eq!(Fingerprint::from_hex(&h, 2).unwrap(), f);
        let small = Fingerprint::from_ones(16, 0, [0, 9]);
        assert_eq!(small.to_hex(), "0102");
        assert!(Fingerprint::from_hex("abc", 2).is_err());
        assert!(Fingerprint::from_hex("zz", 2).is_err());
    }

    #[test]
    fn ones_iterates_set_bits() {
        let f = Fingerprint::from_ones(256, 2, [0, 63, 64, 200]);
        assert_eq!(f.ones().collect::<Vec<_>>(), vec![0, 63, 64, 200]);
        assert_eq!(f.popcount(), 4);
        assert_eq!(f.to_dense().iter().sum::<f64>(), 4.0);
    }

    fn bitvec() -> impl Strategy<Value = Fingerprint> {
        proptest::collection::vec(0usize..128, 0..40).prop_map(|ones| Fingerprint::from_ones(128, 2, ones))
    }

    proptest! {
        #[test]
        fn tanimoto_bounded_and_symmetric(x in bitvec(), y in bitvec()) {
            let a = tanimoto(&x, &y).unwrap();
            let b = tanimoto(&y, &x).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ecfp_permutation_invariant(
            idx in 0usize..6,
            perm in Just((0..40).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let smiles = [
                "CC(=O)Oc1ccccc1C(=O)O",
                "c1ccc2[nH]ccc2c1",
                "C1CCC2(CC1)CCCC2",
                "O=C(NCc1ccncc1)C1CC1",
                "CN1CCN(CC1)c1ccc(cc1)S(=O)(=O)N",
                "[O-][n+]1ccccc1Cl",
            ];
            let mol = parse_smiles(smiles[idx]).unwrap();
            let order: Vec<usize> = perm.into_iter().filter(|&k| k < mol.atom_count()).collect();
            let p = mol.permuted(&order);
            prop_assert_eq!(ecfp(&mol, 2, 1024), ecfp(&p, 2, 1024));
        }
    }
}
