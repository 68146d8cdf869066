//! Molecular graphs, SMILES I/O, valence checking and Bemis–Murcko scaffolds.
//!
//! A [`MolGraph`] is the sparse categorical form of a heavy-atom graph: an
//! ordered list of typed atoms plus an undirected map of typed bonds keyed by
//! `(i, j)` with `i < j`. Hydrogens are never nodes; they are carried as an
//! explicit count on bracket atoms and are implicit everywhere else.

mod scaffold;
mod smiles;
mod valence;
mod writer;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use scaffold::{murcko_atoms, murcko_scaffold, scaffold_key};
pub use smiles::{parse_smiles, parse_smiles_with_warnings, ParseError, ParseWarning};
pub use valence::{check_valence, implicit_hydrogens, ValidityReport, Violation};
pub use writer::{to_smiles, to_smiles_ordered, SerializationError};

/// Supported element set (the organic subset).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::P => 15,
            Element::S => 16,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol() == sym)
    }

    /// Elements that have a lowercase aromatic SMILES form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Node category of the molecular graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct AtomType {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub explicit_h: u8,
}

impl AtomType {
    pub const MIN_CHARGE: i8 = -2;
    pub const MAX_CHARGE: i8 = 2;

    pub fn new(element: Element) -> Self {
        AtomType {
            element,
            aromatic: false,
            formal_charge: 0,
            explicit_h: 0,
        }
    }

    pub fn aromatic(element: Element) -> Self {
        AtomType {
            aromatic: true,
            ..AtomType::new(element)
        }
    }

    pub fn with_charge(mut self, charge: i8) -> Self {
        self.formal_charge = charge;
        self
    }

    pub fn with_h(mut self, h: u8) -> Self {
        self.explicit_h = h;
        self
    }
}

/// Bond category. The diffusion module adds its own "no bond" category on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; 4] = [BondType::Single, BondType::Double, BondType::Triple, BondType::Aromatic];

    /// Bond order in units of half bonds (aromatic = 3, i.e. 1.5).
    pub fn half_order(self) -> u32 {
        match self {
            BondType::Single => 2,
            BondType::Double => 4,
            BondType::Triple => 6,
            BondType::Aromatic => 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("molecular graph must contain at least one atom")]
    Empty,
    #[error("bond ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("bond ({0}, {1}) references an atom outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("duplicate bond ({0}, {1})")]
    DuplicateBond(usize, usize),
    #[error("formal charge {charge} on atom {atom} is outside [-2, 2]")]
    Charge { atom: usize, charge: i8 },
    #[error("atom {0}: element {1} has no aromatic form")]
    AromaticElement(usize, Element),
}

/// Attributed molecular graph. Bonds are stored once per unordered pair with
/// the smaller index first.
#[derive(Clone, Default)]
pub struct MolGraph {
    atoms: Vec<AtomType>,
    bonds: BTreeMap<(usize, usize), BondType>,
    adjacency: Vec<Vec<(usize, BondType)>>,
}

impl MolGraph {
    /// Builds a graph, validating every structural invariant.
    pub fn new(
        atoms: Vec<AtomType>,
        bonds: impl IntoIterator<Item = (usize, usize, BondType)>,
    ) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut g = MolGraph::with_atoms(atoms)?;
        for (i, j, b) in bonds {
            g.add_bond(i, j, b)?;
        }
        Ok(g)
    }

    pub(crate) fn with_atoms(atoms: Vec<AtomType>) -> Result<Self, GraphError> {
        for (idx, a) in atoms.iter().enumerate() {
            if !(AtomType::MIN_CHARGE..=AtomType::MAX_CHARGE).contains(&a.formal_charge) {
                return Err(GraphError::Charge {
                    atom: idx,
                    charge: a.formal_charge,
                });
            }
            if a.aromatic && !a.element.can_be_aromatic() {
                return Err(GraphError::AromaticElement(idx, a.element));
            }
        }
        let n = atoms.len();
        Ok(MolGraph {
            atoms,
            bonds: BTreeMap::new(),
            adjacency: vec![Vec::new(); n],
        })
    }

    pub(crate) fn push_atom(&mut self, atom: AtomType) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    pub(crate) fn atom_mut(&mut self, i: usize) -> &mut AtomType {
        &mut self.atoms[i]
    }

    pub fn add_bond(&mut self, i: usize, j: usize, bond: BondType) -> Result<(), GraphError> {
        let n = self.atoms.len();
        if i == j {
            return Err(GraphError::SelfLoop(i, j));
        }
        if i >= n || j >= n {
            return Err(GraphError::OutOfRange(i, j, n));
        }
        let key = (i.min(j), i.max(j));
        if self.bonds.contains_key(&key) {
            return Err(GraphError::DuplicateBond(key.0, key.1));
        }
        self.bonds.insert(key, bond);
        for (a, b) in [(i, j), (j, i)] {
            let list = &mut self.adjacency[a];
            let pos = list.partition_point(|&(x, _)| x < b);
            list.insert(pos, (b, bond));
        }
        Ok(())
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn atoms(&self) -> &[AtomType] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &AtomType {
        &self.atoms[i]
    }

    /// Bonds in ascending `(i, j)` order with `i < j`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, BondType)> + '_ {
        self.bonds.iter().map(|(&(i, j), &b)| (i, j, b))
    }

    pub fn bond(&self, i: usize, j: usize) -> Option<BondType> {
        self.bonds.get(&(i.min(j), i.max(j))).copied()
    }

    /// Neighbors of `i` sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, BondType)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Induced subgraph on `keep` (any order); atoms are renumbered by
    /// ascending original index.
    pub fn induced_subgraph(&self, keep: &[bool]) -> Option<MolGraph> {
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut atoms = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = atoms.len();
                atoms.push(self.atoms[i]);
            }
        }
        if atoms.is_empty() {
            return None;
        }
        let mut g = MolGraph::with_atoms(atoms).expect("atoms come from a valid graph");
        for (i, j, b) in self.bonds() {
            if keep[i] && keep[j] {
                g.add_bond(map[i], map[j], b).expect("subgraph of a valid graph");
            }
        }
        Some(g)
    }

    /// Relabels atoms: new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> MolGraph {
        assert_eq!(order.len(), self.atoms.len(), "permutation length");
        let mut inverse = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = order.iter().map(|&o| self.atoms[o]).collect();
        let mut g = MolGraph::with_atoms(atoms).expect("atoms come from a valid graph");
        for (i, j, b) in self.bonds() {
            g.add_bond(inverse[i], inverse[j], b)
                .expect("permutation preserves validity");
        }
        g
    }

    /// Connected components as lists of atom indices, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut head = 0;
            while head < comp.len() {
                let v = comp[head];
                head += 1;
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Per-bond ring membership (a bond is in a ring iff it is not a bridge),
    /// keyed like [`MolGraph::bonds`].
    pub fn ring_bonds(&self) -> BTreeMap<(usize, usize), bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut bridges = std::collections::BTreeSet::new();
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative DFS: (vertex, parent, next neighbor position)
            let mut stack = vec![(root, usize::MAX, 0usize)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, parent, ref mut pos)) = stack.last_mut() {
                if *pos < self.adjacency[v].len() {
                    let w = self.adjacency[v][*pos].0;
                    *pos += 1;
                    if w == parent {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, v, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[v]);
                        if low[v] > disc[p] {
                            bridges.insert((p.min(v), p.max(v)));
                        }
                    }
                }
            }
        }
        self.bonds.keys().map(|&k| (k, !bridges.contains(&k))).collect()
    }

    /// Per-atom ring membership.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut in_ring = vec![false; self.atoms.len()];
        for ((i, j), ring) in self.ring_bonds() {
            if ring {
                in_ring[i] = true;
                in_ring[j] = true;
            }
        }
        in_ring
    }
}

impl PartialEq for MolGraph {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms && self.bonds == other.bonds
    }
}

impl Eq for MolGraph {}

impl fmt::Debug for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MolGraph")
            .field("atoms", &self.atoms)
            .field("bonds", &self.bonds)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> MolGraph {
        MolGraph::new(
            vec![AtomType::new(Element::C); n],
            (1..n).map(|i| (i - 1, i, BondType::Single)),
        )
        .unwrap()
    }

    #[test]
    fn rejects_structural_violations() {
        assert_eq!(MolGraph::new(vec![], []).unwrap_err(), GraphError::Empty);
        let c = AtomType::new(Element::C);
        assert!(matches!(
            MolGraph::new(vec![c], [(0, 0, BondType::Single)]),
            Err(GraphError::SelfLoop(..))
        ));
        assert!(matches!(
            MolGraph::new(vec![c, c], [(0, 2, BondType::Single)]),
            Err(GraphError::OutOfRange(..))
        ));
        assert!(matches!(
            MolGraph::new(vec![c, c], [(0, 1, BondType::Single), (1, 0, BondType::Double)]),
            Err(GraphError::DuplicateBond(0, 1))
        ));
        assert!(matches!(
            MolGraph::new(vec![c.with_charge(3)], []),
            Err(GraphError::Charge { .. })
        ));
        assert!(matches!(
            MolGraph::new(vec![AtomType::aromatic(Element::F)], []),
            Err(GraphError::AromaticElement(0, Element::F))
        ));
    }

    #[test]
    fn bonds_are_stored_with_smaller_index_first() {
        let c = AtomType::new(Element::C);
        let g = MolGraph::new(vec![c, c, c], [(2, 0, BondType::Double)]).unwrap();
        assert_eq!(g.bonds().collect::<Vec<_>>(), vec![(0, 2, BondType::Double)]);
        assert_eq!(g.bond(2, 0), Some(BondType::Double));
        assert_eq!(g.neighbors(0), &[(2, BondType::Double)]);
    }

    #[test]
    fn ring_detection() {
        let mut g = chain(6);
        g.add_bond(0, 5, BondType::Single).unwrap();
        let tail = g.push_atom(AtomType::new(Element::O));
        g.add_bond(3, tail, BondType::Single).unwrap();
        let ring = g.ring_atoms();
        assert_eq!(ring, vec![true, true, true, true, true, true, false]);
        assert!(!chain(4).ring_atoms().iter().any(|&r| r));
    }

    #[test]
    fn permutation_round_trip() {
        let g = chain(4);
        let p = g.permuted(&[3, 1, 0, 2]);
        assert_eq!(p.bond_count(), 3);
        assert!(p.bond(0, 2).is_none());
        assert!(p.bond(0, 3).is_some());
    }
}
