use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{AtomType, BondType, Element, GraphError, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnclosedBranch,
    UnbalancedParenthesis,
    EmptyBranch,
    UnbalancedRingClosure(u32),
    RingBondConflict(u32),
    SelfRingClosure(u32),
    DuplicateBond,
    UnknownElement(String),
    BadBracketAtom(String),
    UnexpectedCharacter(char),
    DanglingBond,
    Graph(GraphError),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Empty => write!(f, "empty SMILES"),
            ParseErrorKind::UnclosedBranch => write!(f, "unclosed branch"),
            ParseErrorKind::UnbalancedParenthesis => write!(f, "unbalanced ')'"),
            ParseErrorKind::EmptyBranch => write!(f, "empty branch"),
            ParseErrorKind::UnbalancedRingClosure(r) => write!(f, "unbalanced ring closure {r}"),
            ParseErrorKind::RingBondConflict(r) => {
                write!(f, "conflicting bond symbols on ring closure {r}")
            }
            ParseErrorKind::SelfRingClosure(r) => write!(f, "ring closure {r} bonds an atom to itself"),
            ParseErrorKind::DuplicateBond => write!(f, "duplicate bond"),
            ParseErrorKind::UnknownElement(s) => write!(f, "unknown element '{s}'"),
            ParseErrorKind::BadBracketAtom(s) => write!(f, "bad bracket atom: {s}"),
            ParseErrorKind::UnexpectedCharacter(c) => write!(f, "unexpected character '{c}'"),
            ParseErrorKind::DanglingBond => write!(f, "bond symbol without a following atom"),
            ParseErrorKind::Graph(e) => write!(f, "{e}"),
        }
    }
}

/// SMILES syntax error with the byte offset where it was detected.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarningKind {
    Stereo,
    Isotope,
    AtomClass,
}

/// Accepted-but-discarded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseWarning {
    pub offset: usize,
    pub kind: WarningKind,
}

/// Parses SMILES, logging a warning if stereo, isotope or atom-class
/// annotations were dropped.
pub fn parse_smiles(text: &str) -> Result<MolGraph, ParseError> {
    let (mol, warnings) = parse_smiles_with_warnings(text)?;
    if let Some(w) = warnings.first() {
        log::debug!(
            "{text}: ignored {} annotation(s), first {:?} at offset {}",
            warnings.len(),
            w.kind,
            w.offset
        );
    }
    Ok(mol)
}

pub fn parse_smiles_with_warnings(text: &str) -> Result<(MolGraph, Vec<ParseWarning>), ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        mol: MolGraph::default(),
        warnings: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    Ok((p.mol, p.warnings))
}

struct OpenRing {
    atom: usize,
    bond: Option<BondType>,
    offset: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    mol: MolGraph,
    warnings: Vec<ParseWarning>,
    rings: BTreeMap<u32, OpenRing>,
}

impl Parser<'_> {
    fn err<T>(&self, offset: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError { offset, kind })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ParseError> {
        if self.src.iter().all(|c| c.is_ascii_whitespace()) {
            return self.err(0, ParseErrorKind::Empty);
        }
        // (previous atom, pending bond + offset)
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondType, usize)> = None;
        // open branches: (atom to return to, offset of '(' , atoms seen inside)
        let mut branches: Vec<(Option<usize>, usize, bool)> = Vec::new();
        let mut after_dot = false;

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || pending.is_some() {
                        return self.err(here, ParseErrorKind::UnexpectedCharacter('('));
                    }
                    branches.push((prev, here, false));
                    self.pos += 1;
                }
                b')' => {
                    let Some((back, _, filled)) = branches.pop() else {
                        return self.err(here, ParseErrorKind::UnbalancedParenthesis);
                    };
                    if pending.is_some() {
                        return self.err(here, ParseErrorKind::DanglingBond);
                    }
                    if !filled {
                        return self.err(here, ParseErrorKind::EmptyBranch);
                    }
                    prev = back;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() || prev.is_none() {
                        return self.err(here, ParseErrorKind::UnexpectedCharacter(c as char));
                    }
                    let bond = match c {
                        b'=' => BondType::Double,
                        b'#' => BondType::Triple,
                        b':' => BondType::Aromatic,
                        b'/' | b'\\' => {
                            self.warnings.push(ParseWarning {
                                offset: here,
                                kind: WarningKind::Stereo,
                            });
                            BondType::Single
                        }
                        _ => BondType::Single,
                    };
                    pending = Some((bond, here));
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() || prev.is_none() || !branches.is_empty() {
                        return self.err(here, ParseErrorKind::UnexpectedCharacter('.'));
                    }
                    prev = None;
                    after_dot = true;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return self.err(here, ParseErrorKind::UnexpectedCharacter(c as char));
                    };
                    let label = self.ring_label()?;
                    let bond = pending.take().map(|(b, _)| b);
                    self.ring_bond(atom, label, bond, here)?;
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.mol.push_atom(atom);
                    if let Some(p) = prev {
                        let bond = match pending.take() {
                            Some((b, _)) => b,
                            None => self.implicit_bond(p, idx),
                        };
                        self.bond(p, idx, bond, here)?;
                    } else if let Some((_, off)) = pending {
                        return self.err(off, ParseErrorKind::DanglingBond);
                    }
                    if let Some(top) = branches.last_mut() {
                        top.2 = true;
                    }
                    prev = Some(idx);
                    after_dot = false;
                }
            }
        }

        if let Some((_, off)) = pending {
            return self.err(off, ParseErrorKind::DanglingBond);
        }
        if let Some(&(_, off, _)) = branches.first() {
            return self.err(off, ParseErrorKind::UnclosedBranch);
        }
        if let Some((&label, open)) = self.rings.iter().next() {
            return self.err(open.offset, ParseErrorKind::UnbalancedRingClosure(label));
        }
        if after_dot {
            return self.err(self.src.len(), ParseErrorKind::UnexpectedCharacter('.'));
        }
        Ok(())
    }

    fn implicit_bond(&self, a: usize, b: usize) -> BondType {
        if self.mol.atom(a).aromatic && self.mol.atom(b).aromatic {
            BondType::Aromatic
        } else {
            BondType::Single
        }
    }

    fn bond(&mut self, a: usize, b: usize, bond: BondType, offset: usize) -> Result<(), ParseError> {
        self.mol.add_bond(a, b, bond).map_err(|e| ParseError {
            offset,
            kind: match e {
                GraphError::DuplicateBond(..) => ParseErrorKind::DuplicateBond,
                other => ParseErrorKind::Graph(other),
            },
        })
    }

    fn ring_label(&mut self) -> Result<u32, ParseError> {
        let start = self.pos;
        if self.src[self.pos] == b'%' {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.err(start, ParseErrorKind::UnexpectedCharacter('%')),
            }
        } else {
            self.pos += 1;
            Ok((self.src[start] - b'0') as u32)
        }
    }

    fn ring_bond(&mut self, atom: usize, label: u32, bond: Option<BondType>, offset: usize) -> Result<(), ParseError> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, OpenRing { atom, bond, offset });
                Ok(())
            }
            Some(open) => {
                if open.atom == atom {
                    return self.err(offset, ParseErrorKind::SelfRingClosure(label));
                }
                let bond = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b => return self.err(offset, ParseErrorKind::RingBondConflict(label)),
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.implicit_bond(open.atom, atom),
                };
                self.bond(open.atom, atom, bond, offset)
            }
        }
    }

    fn atom(&mut self) -> Result<AtomType, ParseError> {
        let start = self.pos;
        let c = self.src[self.pos];
        if c == b'[' {
            return self.bracket_atom();
        }
        let next = self.src.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            _ if c.is_ascii_alphabetic() || c == b'*' => {
                let mut sym = (c as char).to_string();
                if let Some(n) = next.filter(u8::is_ascii_lowercase) {
                    sym.push(n as char);
                }
                return self.err(start, ParseErrorKind::UnknownElement(sym));
            }
            _ => {
                let ch = std::str::from_utf8(&self.src[start..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or(c as char);
                return self.err(start, ParseErrorKind::UnexpectedCharacter(ch));
            }
        };
        self.pos += len;
        Ok(AtomType {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<AtomType, ParseError> {
        let open = self.pos;
        let Some(rel_close) = self.src[open..].iter().position(|&c| c == b']') else {
            return self.err(open, ParseErrorKind::BadBracketAtom("missing ']'".into()));
        };
        let close = open + rel_close;
        let body = &self.src[open + 1..close];
        let bad = |msg: &str| ParseError {
            offset: open,
            kind: ParseErrorKind::BadBracketAtom(msg.into()),
        };
        let mut i = 0;

        // isotope
        let iso_start = i;
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        if i > iso_start {
            self.warnings.push(ParseWarning {
                offset: open + 1,
                kind: WarningKind::Isotope,
            });
        }

        // element symbol
        let Some(&first) = body.get(i) else {
            return Err(bad("missing element symbol"));
        };
        let (element, aromatic) = if first.is_ascii_lowercase() {
            let sym_len = if body.get(i + 1).is_some_and(u8::is_ascii_lowercase) {
                2
            } else {
                1
            };
            let sym = std::str::from_utf8(&body[i..i + sym_len]).unwrap_or("?");
            let e = match sym {
                "b" => Element::B,
                "c" => Element::C,
                "n" => Element::N,
                "o" => Element::O,
                "p" => Element::P,
                "s" => Element::S,
                other => return self.err(open + 1 + i, ParseErrorKind::UnknownElement(other.into())),
            };
            i += sym_len;
            (e, true)
        } else if first.is_ascii_uppercase() {
            let sym_len = if body.get(i + 1).is_some_and(u8::is_ascii_lowercase) {
                2
            } else {
                1
            };
            let sym = std::str::from_utf8(&body[i..i + sym_len]).unwrap_or("?");
            let Some(e) = Element::from_symbol(sym) else {
                return self.err(open + 1 + i, ParseErrorKind::UnknownElement(sym.into()));
            };
            i += sym_len;
            (e, false)
        } else {
            return Err(bad("missing element symbol"));
        };

        // chirality
        if body.get(i) == Some(&b'@') {
            self.warnings.push(ParseWarning {
                offset: open + 1 + i,
                kind: WarningKind::Stereo,
            });
            i += 1;
            if body.get(i) == Some(&b'@') {
                i += 1;
            } else {
                // @TH1, @AL2, @SP3, @TB12, @OH25
                let tag = body.get(i..i + 2);
                if matches!(tag, Some(b"TH" | b"AL" | b"SP" | b"TB" | b"OH")) {
                    i += 2;
                    while body.get(i).is_some_and(u8::is_ascii_digit) {
                        i += 1;
                    }
                }
            }
        }

        // hydrogen count
        let mut h = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            h = 1;
            if let Some(&d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                h = d - b'0';
                i += 1;
            }
        }

        // charge
        let mut charge: i32 = 0;
        if let Some(&sign) = body.get(i).filter(|&&c| c == b'+' || c == b'-') {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            if body.get(i) == Some(&sign) {
                charge = 2 * unit;
                i += 1;
            } else {
                let dstart = i;
                while body.get(i).is_some_and(u8::is_ascii_digit) {
                    i += 1;
                }
                charge = if i > dstart {
                    let digits = std::str::from_utf8(&body[dstart..i]).unwrap_or("0");
                    unit * digits.parse::<i32>().map_err(|_| bad("bad charge"))?
                } else {
                    unit
                };
            }
        }
        if !(AtomType::MIN_CHARGE as i32..=AtomType::MAX_CHARGE as i32).contains(&charge) {
            return Err(bad("charge outside [-2, +2]"));
        }

        // atom class
        if body.get(i) == Some(&b':') {
            i += 1;
            let dstart = i;
            while body.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
            if i == dstart {
                return Err(bad("empty atom class"));
            }
            self.warnings.push(ParseWarning {
                offset: open + 1 + dstart,
                kind: WarningKind::AtomClass,
            });
        }

        if i != body.len() {
            let rest = String::from_utf8_lossy(&body[i..]).into_owned();
            return Err(bad(&format!("unexpected '{rest}'")));
        }
        self.pos = close + 1;
        Ok(AtomType {
            element,
            aromatic,
            formal_charge: charge as i8,
            explicit_h: h,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(s: &str) -> (usize, ParseErrorKind) {
        let e = parse_smiles(s).unwrap_err();
        (e.offset, e.kind)
    }

    #[test]
    fn ethanol() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(m.atom_count(), 3);
        assert_eq!(
            m.atoms().iter().map(|a| a.element).collect::<Vec<_>>(),
            vec![Element::C, Element::C, Element::O]
        );
        assert_eq!(
            m.bonds().collect::<Vec<_>>(),
            vec![(0, 1, BondType::Single), (1, 2, BondType::Single)]
        );
    }

    #[test]
    fn benzene_is_an_aromatic_six_cycle() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert!(m.atoms().iter().all(|a| a.aromatic && a.element == Element::C));
        assert_eq!(m.bond_count(), 6);
        assert!(m.bonds().all(|(_, _, b)| b == BondType::Aromatic));
        assert!((0..6).all(|i| m.degree(i) == 2));
    }

    #[test]
    fn unclosed_branch_reports_offset_of_paren() {
        assert_eq!(kind("C("), (1, ParseErrorKind::UnclosedBranch));
        assert_eq!(kind("CC(C(O)C"), (2, ParseErrorKind::UnclosedBranch));
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(kind(""), (0, ParseErrorKind::Empty));
        assert_eq!(kind("C1CC"), (1, ParseErrorKind::UnbalancedRingClosure(1)));
        assert_eq!(kind("CC)"), (2, ParseErrorKind::UnbalancedParenthesis));
        assert_eq!(kind("C()C"), (2, ParseErrorKind::EmptyBranch));
        assert_eq!(kind("CX"), (1, ParseErrorKind::UnknownElement("X".into())));
        assert_eq!(kind("[Na+]"), (1, ParseErrorKind::UnknownElement("Na".into())));
        assert_eq!(kind("C="), (1, ParseErrorKind::DanglingBond));
        assert_eq!(kind("C11"), (2, ParseErrorKind::SelfRingClosure(1)));
        assert_eq!(kind("C=1CC-1"), (6, ParseErrorKind::RingBondConflict(1)));
        assert_eq!(kind("C12CC12"), (6, ParseErrorKind::DuplicateBond));
        assert!(matches!(kind("[C+3]").1, ParseErrorKind::BadBracketAtom(_)));
        assert!(matches!(kind("[C").1, ParseErrorKind::BadBracketAtom(_)));
        assert!(matches!(kind("[CH2x]").1, ParseErrorKind::BadBracketAtom(_)));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[NH4+]").unwrap();
        assert_eq!(m.atom(0), &AtomType::new(Element::N).with_charge(1).with_h(4));
        let m = parse_smiles("C[O-]").unwrap();
        assert_eq!(m.atom(1).formal_charge, -1);
        let m = parse_smiles("[O--]").unwrap();
        assert_eq!(m.atom(0).formal_charge, -2);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atom(3), &AtomType::aromatic(Element::N).with_h(1));
    }

    #[test]
    fn stereo_and_isotopes_are_discarded_with_warnings() {
        let (m, w) = parse_smiles_with_warnings("[13CH3]/C=C/[C@@H](F)Cl").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert_eq!(m.atom(0), &AtomType::new(Element::C).with_h(3));
        assert_eq!(m.bond(0, 1), Some(BondType::Single));
        let kinds: Vec<_> = w.iter().map(|w| w.kind).collect();
        assert_eq!(
            kinds,
            vec![
                WarningKind::Isotope,
                WarningKind::Stereo,
                WarningKind::Stereo,
                WarningKind::Stereo
            ]
        );
    }

    #[test]
    fn ring_closures() {
        let m = parse_smiles("C%10CC%10").unwrap();
        assert_eq!(m.bond(0, 2), Some(BondType::Single));
        let m = parse_smiles("C1=CC=CC=C1").unwrap();
        assert_eq!(m.bond(0, 5), Some(BondType::Single));
        assert_eq!(m.bond(0, 1), Some(BondType::Double));
        // explicit single between aromatic atoms (biphenyl)
        let m = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        assert_eq!(m.bond(5, 6), Some(BondType::Single));
        let m = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        assert_eq!(m.bond(5, 6), Some(BondType::Aromatic));
        // ring bond symbol on the closing side
        let m = parse_smiles("C1CCC=1").unwrap();
        assert_eq!(m.bond(0, 3), Some(BondType::Double));
    }

    #[test]
    fn disconnected_components() {
        let m = parse_smiles("CC.O").unwrap();
        assert_eq!(m.atom_count(), 3);
        assert_eq!(m.components().len(), 2);
        assert!(parse_smiles("CC.").is_err());
        assert!(parse_smiles(".C").is_err());
    }

    #[test]
    fn halogens_and_two_letter_symbols() {
        let m = parse_smiles("ClCBr").unwrap();
        assert_eq!(m.atom(0).element, Element::Cl);
        assert_eq!(m.atom(2).element, Element::Br);
        let m = parse_smiles("BC").unwrap();
        assert_eq!(m.atom(0).element, Element::B);
    }
}
