//! Valence model and aromatic kekulization check.
//!
//! Charged atoms take the valences of their isoelectronic neutral element
//! (N+ behaves like C, O- like F, C- like N, ...). An aromatic atom
//! contributes one unit per aromatic bond plus one more if the kekulé
//! assignment gives it the double bond of its pair.

use super::{BondType, MolGraph};

/// Allowed valences by atomic number of the isoelectronic neutral element.
fn valences_for_electron_count(z: i32) -> Option<&'static [u32]> {
    Some(match z {
        4 => &[2],
        5 => &[3],
        6 => &[4],
        7 => &[3],
        8 => &[2],
        9 => &[1],
        10 => &[0],
        13 => &[3],
        14 => &[4],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        17 => &[1],
        18 => &[0],
        33 => &[3, 5],
        34 => &[2, 4, 6],
        35 => &[1],
        36 => &[0],
        51 => &[3, 5],
        52 => &[2, 4, 6],
        53 => &[1],
        54 => &[0],
        _ => return None,
    })
}

/// Allowed valence list for an atom's element and formal charge.
pub(crate) fn allowed_valences(atom: &super::AtomType) -> Option<&'static [u32]> {
    valences_for_electron_count(atom.element.atomic_number() as i32 - atom.formal_charge as i32)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub atom: usize,
    pub reason: String,
}

/// Outcome of [`check_valence`]. Valid exactly when there are no violations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn valid(&self) -> bool {
        self.violations.is_empty()
    }
}

const KEKULE_BUDGET: usize = 200_000;

struct Analysis {
    /// bond valence excluding hydrogens, including the kekulé double-bond share.
    bond_valence: Vec<u32>,
    violations: Vec<Violation>,
}

fn analyse(mol: &MolGraph) -> Analysis {
    let n = mol.atom_count();
    let mut violations = Vec::new();
    let ring_bonds = mol.ring_bonds();
    let ring_atoms = mol.ring_atoms();

    let mut base = vec![0u32; n];
    let mut aromatic_bonds = vec![0u32; n];
    for (i, j, b) in mol.bonds() {
        match b {
            BondType::Aromatic => {
                aromatic_bonds[i] += 1;
                aromatic_bonds[j] += 1;
                for (x, y) in [(i, j), (j, i)] {
                    if !mol.atom(x).aromatic {
                        violations.push(Violation {
                            atom: x,
                            reason: format!("aromatic bond to {y} on non-aromatic atom"),
                        });
                    }
                }
                if !ring_bonds[&(i, j)] {
                    violations.push(Violation {
                        atom: i,
                        reason: format!("aromatic bond ({i}, {j}) outside a ring"),
                    });
                }
            }
            other => {
                let order = other.half_order() / 2;
                base[i] += order;
                base[j] += order;
            }
        }
    }

    // which aromatic atoms need the double bond of a kekulé pair
    let mut needs_pi = vec![false; n];
    for i in 0..n {
        let atom = mol.atom(i);
        if !atom.aromatic {
            continue;
        }
        if !ring_atoms[i] {
            violations.push(Violation {
                atom: i,
                reason: "aromatic atom outside a ring".into(),
            });
            continue;
        }
        if aromatic_bonds[i] == 0 {
            violations.push(Violation {
                atom: i,
                reason: "aromatic atom without aromatic bonds".into(),
            });
            continue;
        }
        let Some(allowed) = allowed_valences(atom) else {
            continue;
        };
        let v = base[i] + aromatic_bonds[i] + atom.explicit_h as u32;
        if let Some(&target) = allowed.iter().find(|&&a| a >= v) {
            needs_pi[i] = target > v;
        }
    }

    let mut pi = vec![0u32; n];
    let mut mate = vec![usize::MAX; n];
    let mut visited = vec![false; n];
    for start in 0..n {
        if !needs_pi[start] || visited[start] {
            continue;
        }
        // component of the pi subgraph
        let mut comp = vec![start];
        visited[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for &(w, b) in mol.neighbors(v) {
                if b == BondType::Aromatic && needs_pi[w] && !visited[w] {
                    visited[w] = true;
                    comp.push(w);
                }
            }
        }
        let mut budget = KEKULE_BUDGET;
        if comp.len() % 2 == 1 || !perfect_matching(mol, &needs_pi, &comp, &mut mate, &mut budget) {
            for &v in &comp {
                mate[v] = usize::MAX;
            }
            let first = *comp.iter().min().expect("component is nonempty");
            violations.push(Violation {
                atom: first,
                reason: format!("cannot kekulize aromatic system of {} atoms", comp.len()),
            });
        }
    }
    for i in 0..n {
        if mate[i] != usize::MAX {
            pi[i] = 1;
        }
    }

    let bond_valence = (0..n).map(|i| base[i] + aromatic_bonds[i] + pi[i]).collect();
    Analysis {
        bond_valence,
        violations,
    }
}

/// Backtracking perfect matching over aromatic bonds within `comp`, always
/// expanding the unmatched atom with the fewest free partners.
fn perfect_matching(mol: &MolGraph, needs_pi: &[bool], comp: &[usize], mate: &mut [usize], budget: &mut usize) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let free_partners = |v: usize, mate: &[usize]| {
        mol.neighbors(v)
            .iter()
            .filter(|&&(w, b)| b == BondType::Aromatic && needs_pi[w] && mate[w] == usize::MAX)
            .map(|&(w, _)| w)
            .collect::<Vec<_>>()
    };
    let mut best: Option<(usize, Vec<usize>)> = None;
    for &v in comp {
        if mate[v] != usize::MAX {
            continue;
        }
        let partners = free_partners(v, mate);
        if partners.is_empty() {
            return false;
        }
        if best.as_ref().is_none_or(|(_, p)| partners.len() < p.len()) {
            best = Some((v, partners));
        }
    }
    let Some((v, partners)) = best else {
        return true;
    };
    for w in partners {
        mate[v] = w;
        mate[w] = v;
        if perfect_matching(mol, needs_pi, comp, mate, budget) {
            return true;
        }
        mate[v] = usize::MAX;
        mate[w] = usize::MAX;
    }
    false
}

/// Checks every atom's bond-order sum plus explicit hydrogens against its
/// allowed valences; aromatic systems must admit a kekulé structure.
pub fn check_valence(mol: &MolGraph) -> ValidityReport {
    let analysis = analyse(mol);
    let mut violations = analysis.violations;
    for (i, atom) in mol.atoms().iter().enumerate() {
        let Some(allowed) = allowed_valences(atom) else {
            violations.push(Violation {
                atom: i,
                reason: format!(
                    "no valence model for {} with charge {}",
                    atom.element, atom.formal_charge
                ),
            });
            continue;
        };
        let total = analysis.bond_valence[i] + atom.explicit_h as u32;
        let max = *allowed.iter().max().expect("valence lists are nonempty");
        if total > max {
            violations.push(Violation {
                atom: i,
                reason: format!("valence {total} exceeds maximum {max} for {}", atom.element),
            });
        }
    }
    violations.sort_by_key(|v| v.atom);
    ValidityReport { violations }
}

/// Implicit hydrogen count per atom. Neutral atoms without an explicit
/// hydrogen count are filled up to their smallest sufficient valence; charged
/// or hydrogen-annotated atoms carry none (bracket-atom semantics).
pub fn implicit_hydrogens(mol: &MolGraph) -> Vec<u8> {
    let analysis = analyse(mol);
    mol.atoms()
        .iter()
        .enumerate()
        .map(|(i, atom)| {
            if atom.formal_charge != 0 || atom.explicit_h != 0 {
                return 0;
            }
            let v = analysis.bond_valence[i];
            allowed_valences(atom)
                .and_then(|allowed| allowed.iter().find(|&&a| a >= v))
                .map_or(0, |&a| (a - v) as u8)
        })
        .collect()
}
