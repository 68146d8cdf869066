//! Discrete graph diffusion with scaffold anchoring.
//!
//! Nodes and edges are categorical. Forward noise uses marginal transition
//! matrices `Q̄_t = ᾱ_t I + (1 − ᾱ_t) 1 πᵀ` under a cosine schedule. Reverse
//! sampling marginalizes the denoiser's clean-graph prediction through the
//! exact posterior `q(x_{t−1} | x_t, x_0)`. Scaffold atoms occupy indices
//! `0..n′`; their nodes and the edges among them are overwritten with the
//! scaffold's categories before every prediction and after every step.

mod denoiser;

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{check_valence, AtomType, BondType, MolGraph};
use crate::hash::derive_seed;
use crate::sas::ScaffoldLibrary;

pub use denoiser::{Denoiser, DenoiserOutput, ExternalDenoiser, MarginalDenoiser, OneHotEcho};

/// Edge categories: 0 is "no edge", 1..=4 are the bond types.
pub const EDGE_CATEGORIES: usize = 5;
pub const NONE: usize = 0;
pub const DEFAULT_STEPS: usize = 50;
const SIZE_TRIES: usize = 100;
const SIZE_FALLBACK_EXTRA: usize = 5;

pub fn edge_category(b: BondType) -> usize {
    match b {
        BondType::Single => 1,
        BondType::Double => 2,
        BondType::Triple => 3,
        BondType::Aromatic => 4,
    }
}

pub fn bond_of_category(c: usize) -> Option<BondType> {
    match c {
        1 => Some(BondType::Single),
        2 => Some(BondType::Double),
        3 => Some(BondType::Triple),
        4 => Some(BondType::Aromatic),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("atom type {0:?} is not in the node vocabulary")]
    UnknownCategory(AtomType),
    #[error("timestep {t} outside 1..={steps}")]
    BadTimestep { t: usize, steps: usize },
    #[error("denoiser protocol error: {reason}; line: {line}")]
    Protocol { line: String, reason: String },
    #[error("denoiser process: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub node_types: Vec<AtomType>,
    pub node_prior: Vec<f64>,
    pub edge_prior: Vec<f64>,
    /// `size_hist[n]` is the probability of an `n`-atom molecule.
    pub size_hist: Vec<f64>,
}

impl Marginals {
    pub fn node_category(&self, a: &AtomType) -> Option<usize> {
        self.node_types.iter().position(|t| t == a)
    }

    /// Adds any missing types with zero prior mass.
    pub fn ensure_categories(&mut self, types: impl IntoIterator<Item = AtomType>) {
        for t in types {
            if self.node_category(&t).is_none() {
                self.node_types.push(t);
                self.node_prior.push(0.0);
            }
        }
    }

    pub fn max_size(&self) -> usize {
        self.size_hist.len().saturating_sub(1)
    }
}

/// Node, edge and size frequencies. Edge frequencies count every unordered
/// atom pair of every molecule, absent pairs as "none".
pub fn compute_marginals<'a>(mols: impl IntoIterator<Item = &'a MolGraph>) -> Result<Marginals, DiffusionError> {
    let mut node_counts: std::collections::BTreeMap<AtomType, u64> = Default::default();
    let mut edge_counts = [0u64; EDGE_CATEGORIES];
    let mut sizes: Vec<u64> = Vec::new();
    let mut seen = 0usize;
    for m in mols {
        seen += 1;
        let n = m.atom_count();
        for a in m.atoms() {
            *node_counts.entry(*a).or_default() += 1;
        }
        let pairs = (n * (n - 1) / 2) as u64;
        let mut bonded = 0u64;
        for (_, _, b) in m.bonds() {
            edge_counts[edge_category(b)] += 1;
            bonded += 1;
        }
        edge_counts[NONE] += pairs - bonded;
        if sizes.len() <= n {
            sizes.resize(n + 1, 0);
        }
        sizes[n] += 1;
    }
    if seen == 0 {
        return Err(DiffusionError::EmptyDataset);
    }
    let total_nodes: u64 = node_counts.values().sum();
    let total_edges: u64 = edge_counts.iter().sum();
    let edge_prior = if total_edges == 0 {
        let mut d = vec![0.0; EDGE_CATEGORIES];
        d[NONE] = 1.0;
        d
    } else {
        edge_counts.iter().map(|&c| c as f64 / total_edges as f64).collect()
    };
    Ok(Marginals {
        node_types: node_counts.keys().copied().collect(),
        node_prior: node_counts.values().map(|&c| c as f64 / total_nodes as f64).collect(),
        edge_prior,
        size_hist: sizes.iter().map(|&c| c as f64 / seen as f64).collect(),
    })
}

/// Cosine schedule `ᾱ_t = f(t) / f(0)`, `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub s: f64,
}

impl Schedule {
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 1, "at least one diffusion step");
        Schedule { steps, s: 0.008 }
    }

    fn f(&self, t: usize) -> f64 {
        let x = (t as f64 / self.steps as f64 + self.s) / (1.0 + self.s);
        (x * FRAC_PI_2).cos().powi(2)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        (self.f(t) / self.f(0)).clamp(0.0, 1.0)
    }

    /// One-step retention `α_t = ᾱ_t / ᾱ_{t−1}`.
    pub fn alpha(&self, t: usize) -> f64 {
        let prev = self.alpha_bar(t - 1);
        if prev == 0.0 {
            0.0
        } else {
            (self.alpha_bar(t) / prev).clamp(0.0, 1.0)
        }
    }
}

pub type Matrix = Vec<Vec<f64>>;

/// `a·I + (1 − a)·1·priorᵀ`.
pub fn marginal_matrix(a: f64, prior: &[f64]) -> Matrix {
    let k = prior.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (1.0 - a) * prior[j] + if i == j { a } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub node: Matrix,
    pub edge: Matrix,
}

/// Cumulative transition matrices `Q̄_t` for nodes and edges (`t = 0` gives
/// the identity).
pub fn transition(t: usize, m: &Marginals, schedule: &Schedule) -> Transition {
    let a = schedule.alpha_bar(t);
    Transition {
        node: marginal_matrix(a, &m.node_prior),
        edge: marginal_matrix(a, &m.edge_prior),
    }
}

/// Posterior weights for one step: `table[c][x][k] ∝ q(x_{t−1} = k | x_t = c, x_0 = x)`,
/// unnormalized as `Q_t[k, c] · Q̄_{t−1}[x, k] / Q̄_t[x, c]` with 0/0 read as 0.
fn posterior_table(t: usize, prior: &[f64], schedule: &Schedule) -> Vec<Vec<Vec<f64>>> {
    let k = prior.len();
    let step = marginal_matrix(schedule.alpha(t), prior);
    let prev = marginal_matrix(schedule.alpha_bar(t - 1), prior);
    let cur = marginal_matrix(schedule.alpha_bar(t), prior);
    (0..k)
        .map(|c| {
            (0..k)
                .map(|x| {
                    let denom = cur[x][c];
                    (0..k)
                        .map(|j| {
                            if denom > 0.0 {
                                step[j][c] * prev[x][j] / denom
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Precomputed posterior tables for one reverse step.
pub struct StepTables {
    pub t: usize,
    node: Vec<Vec<Vec<f64>>>,
    edge: Vec<Vec<Vec<f64>>>,
}

impl StepTables {
    pub fn new(t: usize, m: &Marginals, schedule: &Schedule) -> Result<Self, DiffusionError> {
        if t == 0 || t > schedule.steps {
            return Err(DiffusionError::BadTimestep {
                t,
                steps: schedule.steps,
            });
        }
        Ok(StepTables {
            t,
            node: posterior_table(t, &m.node_prior, schedule),
            edge: posterior_table(t, &m.edge_prior, schedule),
        })
    }
}

/// `p(x_{t−1} = k) ∝ Σ_x p̂(x) · table[c][x][k]`, normalized; falls back to
/// the current category if every weight vanishes.
fn posterior_row(table: &[Vec<Vec<f64>>], current: usize, pred: &[f64]) -> Vec<f64> {
    let k = pred.len();
    let mut row = vec![0.0; k];
    for (x, &px) in pred.iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        for (j, w) in table[current][x].iter().enumerate() {
            row[j] += px * w;
        }
    }
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|p| *p /= total);
    } else {
        row = vec![0.0; k];
        row[current] = 1.0;
    }
    row
}

/// Posterior rows of the edges `i < j`.
pub type EdgeRows = Vec<(usize, usize, Vec<f64>)>;

/// Posterior probabilities of every node and every edge (`i < j`) for one
/// reverse step, before sampling.
pub fn posterior_probs(
    state: &DiffusionState,
    pred: &DenoiserOutput,
    tables: &StepTables,
) -> Result<(Matrix, EdgeRows), DiffusionError> {
    pred.check_shape(state.n(), tables.node.len())?;
    let nodes = (0..state.n())
        .map(|i| posterior_row(&tables.node, state.nodes[i], &pred.node_probs[i]))
        .collect();
    let mut edges = Vec::new();
    for i in 0..state.n() {
        for j in i + 1..state.n() {
            edges.push((
                i,
                j,
                posterior_row(&tables.edge, state.edges[i][j], &pred.edge_probs[i][j]),
            ));
        }
    }
    Ok((nodes, edges))
}

fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if u < w {
            return i;
        }
        u -= w;
        last = i;
    }
    last
}

/// A noisy graph at timestep `t` with the scaffold anchored at `0..fixed`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiffusionState {
    pub t: usize,
    pub nodes: Vec<usize>,
    /// Symmetric `n × n` edge categories with "none" on the diagonal.
    pub edges: Vec<Vec<usize>>,
    pub fixed: usize,
    scaffold_nodes: Vec<usize>,
    scaffold_edges: Vec<Vec<usize>>,
}

impl DiffusionState {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_mask(&self, i: usize) -> bool {
        i < self.fixed
    }

    pub fn edge_mask(&self, i: usize, j: usize) -> bool {
        i < self.fixed && j < self.fixed
    }

    /// Anchors `scaffold` at indices `0..n′` using the vocabulary of `m`.
    pub fn anchor(&mut self, scaffold: &MolGraph, m: &Marginals) -> Result<(), DiffusionError> {
        let k = scaffold.atom_count();
        if k > self.n() {
            return Err(DiffusionError::ShapeMismatch(format!(
                "scaffold of {k} atoms in a graph of {}",
                self.n()
            )));
        }
        let nodes = scaffold
            .atoms()
            .iter()
            .map(|a| m.node_category(a).ok_or(DiffusionError::UnknownCategory(*a)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut edges = vec![vec![NONE; k]; k];
        for (i, j, b) in scaffold.bonds() {
            edges[i][j] = edge_category(b);
            edges[j][i] = edge_category(b);
        }
        self.fixed = k;
        self.scaffold_nodes = nodes;
        self.scaffold_edges = edges;
        self.apply_mask();
        Ok(())
    }

    /// `G ← m ⊙ s + (1 − m) ⊙ G`.
    pub fn apply_mask(&mut self) {
        for i in 0..self.fixed {
            self.nodes[i] = self.scaffold_nodes[i];
            for j in 0..self.fixed {
                self.edges[i][j] = self.scaffold_edges[i][j];
            }
        }
    }

    pub fn mask_holds(&self) -> bool {
        (0..self.fixed).all(|i| {
            self.nodes[i] == self.scaffold_nodes[i]
                && (0..self.fixed).all(|j| self.edges[i][j] == self.scaffold_edges[i][j])
        })
    }

    /// Full graph (all components, "none" edges dropped).
    pub fn to_graph(&self, m: &Marginals) -> MolGraph {
        let atoms = self.nodes.iter().map(|&c| m.node_types[c]).collect();
        let mut bonds = Vec::new();
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                if let Some(b) = bond_of_category(self.edges[i][j]) {
                    bonds.push((i, j, b));
                }
            }
        }
        MolGraph::new(atoms, bonds).expect("decoded graph is well formed")
    }

    /// The component(s) containing the scaffold, with original order kept so
    /// the scaffold stays at `0..n′`.
    pub fn decode(&self, m: &Marginals) -> MolGraph {
        let full = self.to_graph(m);
        if self.fixed == 0 {
            return full;
        }
        let mut keep = vec![false; self.n()];
        for comp in full.components() {
            if comp[0] < self.fixed {
                for v in comp {
                    keep[v] = true;
                }
            }
        }
        full.induced_subgraph(&keep).expect("scaffold atoms are kept")
    }
}

/// Independent draws from the marginals at `t = T`, nothing anchored.
pub fn sample_prior(n: usize, m: &Marginals, steps: usize, rng: &mut impl Rng) -> DiffusionState {
    assert!(n >= 1, "graph needs at least one node");
    let nodes = (0..n).map(|_| sample_categorical(&m.node_prior, rng)).collect();
    let mut edges = vec![vec![NONE; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = sample_categorical(&m.edge_prior, rng);
            edges[i][j] = c;
            edges[j][i] = c;
        }
    }
    DiffusionState {
        t: steps,
        nodes,
        edges,
        fixed: 0,
        scaffold_nodes: Vec::new(),
        scaffold_edges: Vec::new(),
    }
}

/// Forward noise: draws `G^t ~ Q̄_t` row by row from a clean state.
pub fn forward_noise(
    clean: &DiffusionState,
    t: usize,
    m: &Marginals,
    schedule: &Schedule,
    rng: &mut impl Rng,
) -> DiffusionState {
    let q = transition(t, m, schedule);
    let mut out = clean.clone();
    out.t = t;
    for i in 0..out.n() {
        out.nodes[i] = sample_categorical(&q.node[clean.nodes[i]], rng);
        for j in i + 1..out.n() {
            let c = sample_categorical(&q.edge[clean.edges[i][j]], rng);
            out.edges[i][j] = c;
            out.edges[j][i] = c;
        }
    }
    out
}

/// One reverse step `G^t → G^{t−1}`; the mask is re-applied after sampling.
/// Also returns the largest deviation of a posterior row sum from 1.
pub fn posterior_step(
    state: &DiffusionState,
    pred: &DenoiserOutput,
    tables: &StepTables,
    rng: &mut impl Rng,
) -> Result<(DiffusionState, f64), DiffusionError> {
    if state.t != tables.t {
        return Err(DiffusionError::BadTimestep {
            t: state.t,
            steps: tables.t,
        });
    }
    let (nodes, edges) = posterior_probs(state, pred, tables)?;
    let mut dev: f64 = 0.0;
    let mut next = state.clone();
    next.t = state.t - 1;
    for (i, row) in nodes.iter().enumerate() {
        dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
        next.nodes[i] = sample_categorical(row, rng);
    }
    for (i, j, row) in &edges {
        dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
        let c = sample_categorical(row, rng);
        next.edges[*i][*j] = c;
        next.edges[*j][*i] = c;
    }
    next.apply_mask();
    Ok((next, dev))
}

/// Runs the reverse chain from `state.t` down to 0: mask, predict, sample.
/// `observe` sees every intermediate state and its posterior row deviation.
pub fn denoise(
    mut state: DiffusionState,
    denoiser: &dyn Denoiser,
    m: &Marginals,
    schedule: &Schedule,
    rng: &mut impl Rng,
    observe: &mut dyn FnMut(&DiffusionState, f64),
) -> Result<DiffusionState, DiffusionError> {
    while state.t > 0 {
        state.apply_mask();
        let pred = denoiser.predict(&state, m)?;
        let tables = StepTables::new(state.t, m, schedule)?;
        let (next, dev) = posterior_step(&state, &pred, &tables, rng)?;
        observe(&next, dev);
        state = next;
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct Extension {
    /// Decoded molecule: the scaffold's component(s) of `G⁰`.
    pub molecule: MolGraph,
    /// Sampled graph size `n` (before dropping detached fragments).
    pub sampled_size: usize,
    pub size_fallback: bool,
    pub final_state: DiffusionState,
}

/// Draws `n > n′` from the size histogram (100 tries, then `n′ + 5`).
pub fn draw_size(scaffold_size: usize, m: &Marginals, rng: &mut impl Rng) -> (usize, bool) {
    if m.size_hist.iter().skip(scaffold_size + 1).any(|&p| p > 0.0) {
        for _ in 0..SIZE_TRIES {
            let n = sample_categorical(&m.size_hist, rng);
            if n > scaffold_size {
                return (n, false);
            }
        }
    }
    log::debug!("size histogram exhausted for a {scaffold_size}-atom scaffold");
    (scaffold_size + SIZE_FALLBACK_EXTRA, true)
}

pub fn extend_scaffold(
    scaffold: &MolGraph,
    denoiser: &dyn Denoiser,
    m: &Marginals,
    steps: usize,
    seed: u64,
) -> Result<Extension, DiffusionError> {
    extend_scaffold_observed(scaffold, denoiser, m, steps, seed, &mut |_, _| {})
}

/// [`extend_scaffold`] with a hook on every intermediate state.
pub fn extend_scaffold_observed(
    scaffold: &MolGraph,
    denoiser: &dyn Denoiser,
    m: &Marginals,
    steps: usize,
    seed: u64,
    observe: &mut dyn FnMut(&DiffusionState, f64),
) -> Result<Extension, DiffusionError> {
    let schedule = Schedule::cosine(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, size_fallback) = draw_size(scaffold.atom_count(), m, &mut rng);
    let mut state = sample_prior(n, m, steps, &mut rng);
    state.anchor(scaffold, m)?;
    observe(&state, 0.0);
    let final_state = denoise(state, denoiser, m, &schedule, &mut rng, observe)?;
    Ok(Extension {
        molecule: final_state.decode(m),
        sampled_size: n,
        size_fallback,
        final_state,
    })
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub molecule: MolGraph,
    /// Index of the library entry that seeded this molecule.
    pub entry: usize,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GdsaReport {
    pub attempted: usize,
    pub valid: usize,
    pub size_fallbacks: usize,
}

impl GdsaReport {
    pub fn validity_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.valid as f64 / self.attempted as f64
        }
    }
}

/// One extension per library entry (seeded per entry, run in parallel), kept
/// only if it passes the valence check. Output order follows the library.
pub fn generate_gdsa(
    lib: &ScaffoldLibrary,
    denoiser: &dyn Denoiser,
    m: &Marginals,
    steps: usize,
    seed: u64,
) -> Result<(Vec<Generated>, GdsaReport), DiffusionError> {
    let results: Vec<Result<Extension, DiffusionError>> = lib
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| extend_scaffold(&e.scaffold, denoiser, m, steps, derive_seed(seed, "gdsa", i as u64)))
        .collect();
    let mut report = GdsaReport {
        attempted: lib.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let ext = r?;
        report.size_fallbacks += ext.size_fallback as usize;
        if check_valence(&ext.molecule).valid() {
            out.push(Generated {
                molecule: ext.molecule,
                entry: i,
            });
        }
    }
    report.valid = out.len();
    Ok((out, report))
}
