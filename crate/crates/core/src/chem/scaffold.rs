use super::{implicit_hydrogens, BondType, MolGraph};
use crate::hash::StableHasher;

/// Bemis–Murcko scaffold: ring systems plus the linkers between them, with
/// terminal side chains pruned iteratively. Returns `None` for acyclic input.
///
/// As in the common toolkit convention, an atom joined to the scaffold by a
/// double or triple bond (carbonyl oxygen, exocyclic methylene, oxime
/// nitrogen) stays, without the rest of its side chain. Bracket-style atoms (explicit hydrogens, charged, or
/// aromatic N/P) that lose a substituent gain the matching hydrogens, so the
/// scaffold of an N-substituted pyrrole is the NH pyrrole, not an
/// unkekulizable radical.
pub fn murcko_scaffold(mol: &MolGraph) -> Option<MolGraph> {
    let keep = murcko_atoms(mol);
    let n = mol.atom_count();
    let mut scaffold = mol.induced_subgraph(&keep)?;
    let mut new_index = 0;
    for v in 0..n {
        if !keep[v] {
            continue;
        }
        let lost: u32 = mol
            .neighbors(v)
            .iter()
            .filter(|&&(w, _)| !keep[w])
            .map(|&(_, b)| b.half_order() / 2)
            .sum();
        let atom = scaffold.atom_mut(new_index);
        let bracket = atom.explicit_h > 0
            || atom.formal_charge != 0
            || (atom.aromatic && matches!(atom.element, super::Element::N | super::Element::P));
        if lost > 0 && bracket {
            atom.explicit_h = atom.explicit_h.saturating_add(lost as u8);
        }
        new_index += 1;
    }
    Some(scaffold)
}

/// Atoms retained by [`murcko_scaffold`] (all false for acyclic input).
pub fn murcko_atoms(mol: &MolGraph) -> Vec<bool> {
    let n = mol.atom_count();
    let mut keep = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
    while let Some(v) = queue.pop() {
        if !keep[v] {
            continue;
        }
        keep[v] = false;
        for &(w, _) in mol.neighbors(v) {
            if keep[w] {
                degree[w] -= 1;
                if degree[w] == 1 {
                    queue.push(w);
                }
            }
        }
    }
    if !keep.iter().any(|&k| k) {
        return keep;
    }

    let mut restored = vec![false; n];
    for v in 0..n {
        if keep[v] {
            continue;
        }
        restored[v] = mol
            .neighbors(v)
            .iter()
            .any(|&(w, b)| keep[w] && matches!(b, BondType::Double | BondType::Triple));
    }
    for v in 0..n {
        keep[v] |= restored[v];
    }
    keep
}

/// Order-independent key for grouping identical scaffolds: a hex
/// Weisfeiler–Lehman hash over (element, aromaticity, charge, total H) atom
/// labels and bond types. Isomorphic graphs always share a key. The empty
/// scaffold maps to the empty string.
pub fn scaffold_key(scaffold: Option<&MolGraph>) -> String {
    match scaffold {
        None => String::new(),
        Some(mol) => format!("{:016x}", graph_hash(mol)),
    }
}

fn graph_hash(mol: &MolGraph) -> u64 {
    let n = mol.atom_count();
    let hydrogens = implicit_hydrogens(mol);
    let mut labels: Vec<u64> = mol
        .atoms()
        .iter()
        .zip(&hydrogens)
        .map(|(a, &h)| {
            StableHasher::new()
                .write_u64(a.element.atomic_number() as u64)
                .write_u64(a.aromatic as u64)
                .write_u64((a.formal_charge as i64) as u64)
                .write_u64(a.explicit_h as u64 + h as u64)
                .finish()
        })
        .collect();
    let distinct = |labels: &[u64]| {
        let mut v = labels.to_vec();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let mut classes = distinct(&labels);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                let mut env: Vec<(u64, u64)> = mol
                    .neighbors(v)
                    .iter()
                    .map(|&(w, b)| (b.half_order() as u64, labels[w]))
                    .collect();
                env.sort_unstable();
                let mut h = StableHasher::new();
                h.write_u64(labels[v]);
                for (b, l) in env {
                    h.write_u64(b).write_u64(l);
                }
                h.finish()
            })
            .collect();
        let next_classes = distinct(&next);
        labels = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    labels.sort_unstable();
    let mut h = StableHasher::new();
    h.write_u64(n as u64).write_u64(mol.bond_count() as u64);
    for l in labels {
        h.write_u64(l);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::super::{parse_smiles, to_smiles};
    use super::*;

    fn scaffold_of(s: &str) -> Option<MolGraph> {
        murcko_scaffold(&parse_smiles(s).unwrap())
    }

    fn key(s: &str) -> String {
        scaffold_key(Some(&parse_smiles(s).unwrap()))
    }

    #[test]
    fn benzene_is_its_own_scaffold() {
        let benzene = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(murcko_scaffold(&benzene), Some(benzene));
    }

    #[test]
    fn ethylbenzene_reduces_to_benzene() {
        let s = scaffold_of("CCc1ccccc1").unwrap();
        assert_eq!(s, parse_smiles("c1ccccc1").unwrap());
    }

    #[test]
    fn acyclic_molecules_have_empty_scaffold() {
        assert_eq!(scaffold_of("CCO"), None);
        assert_eq!(scaffold_of("C"), None);
        assert_eq!(scaffold_key(None), "");
    }

    #[test]
    fn linkers_and_exocyclic_multiple_bonds_are_kept() {
        let s = scaffold_of("CCc1ccc(cc1)CCc1ccccc1O").unwrap();
        assert_eq!(s.atom_count(), 14);
        let s = scaffold_of("O=C1CCCCC1").unwrap();
        assert_eq!(s.atom_count(), 7);
        let s = scaffold_of("CC(=O)Nc1ccc(O)cc1").unwrap();
        assert_eq!(s.atom_count(), 6);
    }

    #[test]
    fn substituted_aromatic_nitrogen_gains_hydrogen() {
        let s = scaffold_of("Cn1cccc1").unwrap();
        assert_eq!(to_smiles(&s, false).unwrap(), "[nH]1cccc1");
    }

    #[test]
    fn key_is_order_independent() {
        assert_eq!(key("c1ccccc1CC(=O)N"), key("NC(=O)Cc1ccccc1"));
        assert_eq!(key("C1CCCCC1"), key("[CH2]1CCCCC1"));
        assert_ne!(key("c1ccccc1"), key("C1CCCCC1"));
        assert_ne!(key("c1ccncc1"), key("c1ccccc1"));
    }
}
