use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{DiffusionError, DiffusionState, Marginals, EDGE_CATEGORIES, NONE};

/// Clean-graph prediction: one distribution per node over the node
/// vocabulary and one per ordered pair over the edge categories.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub node_probs: Vec<Vec<f64>>,
    pub edge_probs: Vec<Vec<Vec<f64>>>,
}

impl DenoiserOutput {
    pub fn check_shape(&self, n: usize, node_categories: usize) -> Result<(), DiffusionError> {
        let bad = |what: String| Err(DiffusionError::ShapeMismatch(what));
        if self.node_probs.len() != n || self.edge_probs.len() != n {
            return bad(format!(
                "prediction covers {} nodes / {} edge rows, graph has {n}",
                self.node_probs.len(),
                self.edge_probs.len()
            ));
        }
        for (i, row) in self.node_probs.iter().enumerate() {
            if row.len() != node_categories {
                return bad(format!(
                    "node {i}: {} categories, expected {node_categories}",
                    row.len()
                ));
            }
        }
        for (i, row) in self.edge_probs.iter().enumerate() {
            if row.len() != n || row.iter().any(|p| p.len() != EDGE_CATEGORIES) {
                return bad(format!("edge row {i} has the wrong shape"));
            }
        }
        Ok(())
    }

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }
}

pub trait Denoiser: Sync {
    fn predict(&self, state: &DiffusionState, m: &Marginals) -> Result<DenoiserOutput, DiffusionError>;
}

/// Always predicts the dataset marginals.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalDenoiser;

impl Denoiser for MarginalDenoiser {
    fn predict(&self, state: &DiffusionState, m: &Marginals) -> Result<DenoiserOutput, DiffusionError> {
        let n = state.n();
        Ok(DenoiserOutput {
            node_probs: vec![m.node_prior.clone(); n],
            edge_probs: vec![vec![m.edge_prior.clone(); n]; n],
        })
    }
}

/// Predicts the current noisy categories with certainty.
#[derive(Debug, Clone, Copy, Default)]
pub struct OneHotEcho;

impl Denoiser for OneHotEcho {
    fn predict(&self, state: &DiffusionState, m: &Marginals) -> Result<DenoiserOutput, DiffusionError> {
        let k = m.node_types.len();
        Ok(DenoiserOutput {
            node_probs: state.nodes.iter().map(|&c| DenoiserOutput::one_hot(k, c)).collect(),
            edge_probs: state
                .edges
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&c| DenoiserOutput::one_hot(EDGE_CATEGORIES, c))
                        .collect()
                })
                .collect(),
        })
    }
}

#[derive(Serialize)]
struct Request<'a> {
    t: usize,
    nodes: &'a [usize],
    edges: Vec<(usize, usize, usize)>,
}

#[derive(Deserialize)]
struct Response {
    node_probs: Vec<Vec<f64>>,
    edge_probs: Vec<(usize, usize, Vec<f64>)>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Talks to a child process speaking line-delimited JSON: one request line
/// `{"t", "nodes", "edges": [[i, j, c], ...]}` (non-"none" edges, `i < j`),
/// one response line `{"node_probs": [[...]], "edge_probs": [[i, j, [...]], ...]}`.
/// Pairs missing from the response predict "none".
pub struct ExternalDenoiser {
    command: String,
    channel: Mutex<Channel>,
}

impl ExternalDenoiser {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, DiffusionError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalDenoiser {
            command: command.to_string(),
            channel: Mutex::new(Channel { child, stdin, stdout }),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn parse(line: &str, n: usize, k: usize) -> Result<DenoiserOutput, String> {
        let resp: Response = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let normalize = |row: &[f64], want: usize, what: &str| -> Result<Vec<f64>, String> {
            if row.len() != want {
                return Err(format!("{what}: {} probabilities, expected {want}", row.len()));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(format!("{what}: probabilities must be finite and nonnegative"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(format!("{what}: probabilities sum to {total}"));
            }
            Ok(row.iter().map(|p| p / total).collect())
        };
        if resp.node_probs.len() != n {
            return Err(format!("{} node rows for {n} nodes", resp.node_probs.len()));
        }
        let node_probs = resp
            .node_probs
            .iter()
            .enumerate()
            .map(|(i, r)| normalize(r, k, &format!("node {i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let none = DenoiserOutput::one_hot(EDGE_CATEGORIES, NONE);
        let mut edge_probs = vec![vec![none; n]; n];
        for (i, j, row) in &resp.edge_probs {
            if *i >= n || *j >= n || i == j {
                return Err(format!("edge ({i}, {j}) out of range"));
            }
            let row = normalize(row, EDGE_CATEGORIES, &format!("edge ({i}, {j})"))?;
            edge_probs[*i][*j] = row.clone();
            edge_probs[*j][*i] = row;
        }
        Ok(DenoiserOutput { node_probs, edge_probs })
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict(&self, state: &DiffusionState, m: &Marginals) -> Result<DenoiserOutput, DiffusionError> {
        let mut edges = Vec::new();
        for i in 0..state.n() {
            for j in i + 1..state.n() {
                if state.edges[i][j] != NONE {
                    edges.push((i, j, state.edges[i][j]));
                }
            }
        }
        let request = serde_json::to_string(&Request {
            t: state.t,
            nodes: &state.nodes,
            edges,
        })
        .expect("request serializes");
        let mut ch = self.channel.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(ch.stdin, "{request}")?;
        ch.stdin.flush()?;
        let mut line = String::new();
        if ch.stdout.read_line(&mut line)? == 0 {
            return Err(DiffusionError::Protocol {
                line: String::new(),
                reason: "denoiser closed its output".into(),
            });
        }
        let line = line.trim_end();
        Self::parse(line, state.n(), m.node_types.len()).map_err(|reason| DiffusionError::Protocol {
            line: line.to_string(),
            reason,
        })
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}
