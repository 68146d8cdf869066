use std::fmt::Write;

use thiserror::Error;

use super::{check_valence, AtomType, BondType, MolGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SerializationError {
    #[error("atom {atom} ({element}) has no aromatic SMILES symbol")]
    NoRendering { atom: usize, element: super::Element },
    #[error("more than 99 ring closures open at once")]
    TooManyRingClosures,
    #[error("graph fails valence check at atom {atom}: {reason}")]
    InvalidValence { atom: usize, reason: String },
}

/// Writes SMILES by depth-first traversal from the lowest-index atom of each
/// component. Not canonical: isomorphic inputs with different atom orders can
/// produce different strings, but re-parsing always yields the same graph.
pub fn to_smiles(mol: &MolGraph, allow_invalid: bool) -> Result<String, SerializationError> {
    to_smiles_ordered(mol, allow_invalid).map(|(s, _)| s)
}

/// Like [`to_smiles`], also returning the output atom order: atom `k` of the
/// re-parsed string is atom `order[k]` of `mol`.
pub fn to_smiles_ordered(mol: &MolGraph, allow_invalid: bool) -> Result<(String, Vec<usize>), SerializationError> {
    if !allow_invalid {
        if let Some(v) = check_valence(mol).violations.into_iter().next() {
            return Err(SerializationError::InvalidValence {
                atom: v.atom,
                reason: v.reason,
            });
        }
    }
    for (i, a) in mol.atoms().iter().enumerate() {
        if a.aromatic && !a.element.can_be_aromatic() {
            return Err(SerializationError::NoRendering {
                atom: i,
                element: a.element,
            });
        }
    }

    let n = mol.atom_count();
    let plan = Plan::build(mol);
    let mut out = String::new();
    let mut order = Vec::with_capacity(n);
    let mut digits = RingDigits::default();
    let mut done = vec![false; n];
    for root in 0..n {
        if done[root] {
            continue;
        }
        if !out.is_empty() {
            out.push('.');
        }
        emit(mol, &plan, root, &mut out, &mut order, &mut digits, &mut done)?;
    }
    Ok((out, order))
}

/// DFS spanning forest plus ring-closure edges.
struct Plan {
    children: Vec<Vec<usize>>,
    /// closures opened at an atom: partner, in partner visit order
    opens: Vec<Vec<usize>>,
    /// closures closed at an atom: partner
    closes: Vec<Vec<usize>>,
}

impl Plan {
    fn build(mol: &MolGraph) -> Plan {
        let n = mol.atom_count();
        let mut visit = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut children = vec![Vec::new(); n];
        let mut counter = 0;
        for root in 0..n {
            if visit[root] != usize::MAX {
                continue;
            }
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                if visit[v] != usize::MAX {
                    continue;
                }
                visit[v] = counter;
                counter += 1;
                if parent[v] != usize::MAX {
                    children[parent[v]].push(v);
                }
                for &(w, _) in mol.neighbors(v).iter().rev() {
                    if visit[w] == usize::MAX {
                        parent[w] = v;
                        stack.push(w);
                    }
                }
            }
        }
        let mut opens = vec![Vec::new(); n];
        let mut closes = vec![Vec::new(); n];
        for (i, j, _) in mol.bonds() {
            if parent[i] == j || parent[j] == i {
                continue;
            }
            let (first, second) = if visit[i] < visit[j] { (i, j) } else { (j, i) };
            opens[first].push(second);
            closes[second].push(first);
        }
        for list in opens.iter_mut().chain(closes.iter_mut()) {
            list.sort_by_key(|&v| visit[v]);
        }
        Plan {
            children,
            opens,
            closes,
        }
    }
}

#[derive(Default)]
struct RingDigits {
    in_use: Vec<bool>,
    /// (opener, closer) -> digit
    open: Vec<((usize, usize), usize)>,
}

impl RingDigits {
    fn take(&mut self, edge: (usize, usize)) -> Result<usize, SerializationError> {
        if self.in_use.is_empty() {
            self.in_use = vec![false; 100];
        }
        let d = (1..100)
            .find(|&d| !self.in_use[d])
            .ok_or(SerializationError::TooManyRingClosures)?;
        self.in_use[d] = true;
        self.open.push((edge, d));
        Ok(d)
    }

    fn release(&mut self, edge: (usize, usize)) -> usize {
        let pos = self
            .open
            .iter()
            .position(|&(e, _)| e == edge)
            .expect("closure was opened");
        let (_, d) = self.open.swap_remove(pos);
        self.in_use[d] = false;
        d
    }
}

fn write_digit(out: &mut String, d: usize) {
    if d < 10 {
        let _ = write!(out, "{d}");
    } else {
        let _ = write!(out, "%{d}");
    }
}

fn write_atom(out: &mut String, a: &AtomType) {
    let sym = a.element.symbol();
    let sym = if a.aromatic {
        sym.to_ascii_lowercase()
    } else {
        sym.to_string()
    };
    if a.formal_charge == 0 && a.explicit_h == 0 {
        out.push_str(&sym);
        return;
    }
    out.push('[');
    out.push_str(&sym);
    match a.explicit_h {
        0 => {}
        1 => out.push('H'),
        h => {
            let _ = write!(out, "H{h}");
        }
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{c}");
        }
        c => {
            let _ = write!(out, "-{}", -c);
        }
    }
    out.push(']');
}

fn bond_symbol(mol: &MolGraph, a: usize, b: usize) -> &'static str {
    let both_aromatic = mol.atom(a).aromatic && mol.atom(b).aromatic;
    match mol.bond(a, b).expect("bond exists") {
        BondType::Single if both_aromatic => "-",
        BondType::Single => "",
        BondType::Double => "=",
        BondType::Triple => "#",
        BondType::Aromatic if both_aromatic => "",
        BondType::Aromatic => ":",
    }
}

fn emit(
    mol: &MolGraph,
    plan: &Plan,
    root: usize,
    out: &mut String,
    order: &mut Vec<usize>,
    digits: &mut RingDigits,
    done: &mut [bool],
) -> Result<(), SerializationError> {
    enum Step {
        Atom {
            v: usize,
            from: Option<usize>,
            branch: bool,
        },
        Close,
    }
    let mut stack = vec![Step::Atom {
        v: root,
        from: None,
        branch: false,
    }];
    while let Some(step) = stack.pop() {
        let (v, from, branch) = match step {
            Step::Close => {
                out.push(')');
                continue;
            }
            Step::Atom { v, from, branch } => (v, from, branch),
        };
        if branch {
            out.push('(');
        }
        if let Some(p) = from {
            out.push_str(bond_symbol(mol, p, v));
        }
        write_atom(out, mol.atom(v));
        order.push(v);
        done[v] = true;
        for &partner in &plan.closes[v] {
            let d = digits.release((partner, v));
            write_digit(out, d);
        }
        for &partner in &plan.opens[v] {
            out.push_str(bond_symbol(mol, v, partner));
            let d = digits.take((v, partner))?;
            write_digit(out, d);
        }
        // every child but the last is written as a branch
        let kids = &plan.children[v];
        for (idx, &c) in kids.iter().enumerate().rev() {
            let branch = idx + 1 != kids.len();
            if branch {
                stack.push(Step::Close);
            }
            stack.push(Step::Atom {
                v: c,
                from: Some(v),
                branch,
            });
        }
    }
    Ok(())
}
