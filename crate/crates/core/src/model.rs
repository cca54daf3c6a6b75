//! Per-node value estimates and their mapping to edge probabilities.
//!
//! A [`ValueAssignment`] holds one scalar `d(v)` per node, read as the
//! estimated cost from `v` to the sink. These scalars are the trainable
//! parameters of the learned solver. Edge probabilities follow as
//! `p_uv = sigmoid(d(v) - d(u))`, which is invariant under any constant shift
//! of the assignment.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::rng::seeded_rng;

/// Numerically safe logistic function, computed branch-wise so large inputs
/// cannot overflow. `sigmoid(NaN)` is NaN.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-node scalar estimates `d(v)` of the cost from `v` to the sink.
///
/// Exact solvers anchor `d(sink) = 0` and mark unreachable nodes with `+inf`
/// (serialized as the string `"inf"`). Learned assignments are finite and
/// unanchored; the loss gauges them with a soft sink anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueAssignment {
    values: Vec<f64>,
    convergence_iteration: Option<usize>,
}

impl ValueAssignment {
    pub fn new(values: Vec<f64>) -> Self {
        ValueAssignment {
            values,
            convergence_iteration: None,
        }
    }

    pub fn with_convergence(values: Vec<f64>, k_star: usize) -> Self {
        ValueAssignment {
            values,
            convergence_iteration: Some(k_star),
        }
    }

    pub fn value(&self, v: NodeId) -> f64 {
        self.values[v]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iteration at which the producing oracle converged (k*), if any.
    pub fn convergence_iteration(&self) -> Option<usize> {
        self.convergence_iteration
    }
}

#[derive(Debug, Error)]
pub enum ValueIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unrecognized value entry {0:?} (expected a number, \"inf\", or \"-inf\")")]
    BadEntry(String),
}

#[derive(Serialize, Deserialize)]
struct ValueDoc {
    values: Vec<ValueEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    convergence_iteration: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ValueEntry {
    Num(f64),
    Word(String),
}

/// Reads a value-assignment document: `{"values": [...], ...}` where entries
/// are numbers or the strings `"inf"` / `"-inf"`.
pub fn read_values(reader: impl Read) -> Result<ValueAssignment, ValueIoError> {
    let doc: ValueDoc = serde_json::from_reader(reader).map_err(|e| ValueIoError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut values = Vec::with_capacity(doc.values.len());
    for entry in doc.values {
        match entry {
            ValueEntry::Num(x) => values.push(x),
            ValueEntry::Word(w) => match w.as_str() {
                "inf" => values.push(f64::INFINITY),
                "-inf" => values.push(f64::NEG_INFINITY),
                _ => return Err(ValueIoError::BadEntry(w)),
            },
        }
    }
    Ok(ValueAssignment {
        values,
        convergence_iteration: doc.convergence_iteration,
    })
}

/// Writes the value-assignment document; non-finite values become `"inf"` /
/// `"-inf"` strings.
pub fn write_values(d: &ValueAssignment, mut writer: impl Write) -> std::io::Result<()> {
    let doc = ValueDoc {
        values: d
            .values
            .iter()
            .map(|&x| {
                if x == f64::INFINITY {
                    ValueEntry::Word("inf".to_string())
                } else if x == f64::NEG_INFINITY {
                    ValueEntry::Word("-inf".to_string())
                } else {
                    ValueEntry::Num(x)
                }
            })
            .collect(),
        convergence_iteration: d.convergence_iteration,
    };
    serde_json::to_writer(&mut writer, &doc)?;
    writer.write_all(b"\n")
}

/// Selection probabilities, one per graph edge (same index space as
/// [`Graph::edges`]), each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities {
    probs: Vec<f64>,
}

impl EdgeProbabilities {
    pub fn from_vec(probs: Vec<f64>) -> Self {
        EdgeProbabilities { probs }
    }

    /// Constant probability on every edge.
    pub fn uniform(g: &Graph, p: f64) -> Self {
        EdgeProbabilities {
            probs: vec![p; g.edge_count()],
        }
    }

    /// 0/1 indicator of the edges traversed by a node sequence.
    pub fn indicator(g: &Graph, nodes: &[NodeId]) -> Self {
        let mut probs = vec![0.0; g.edge_count()];
        for pair in nodes.windows(2) {
            if let Some(idx) = g.edge_index(pair[0], pair[1]) {
                probs[idx] = 1.0;
            }
        }
        EdgeProbabilities { probs }
    }

    pub fn prob(&self, edge_idx: usize) -> f64 {
        self.probs[edge_idx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Maps node values to edge probabilities: `p_uv = sigmoid(d(v) - d(u))`.
///
/// If both endpoint values are infinite the difference is undefined; such
/// edges get the neutral probability 0.5 (the limit of equal values). This
/// only occurs for oracle assignments with unreachable nodes.
pub fn edge_probabilities(g: &Graph, d: &ValueAssignment) -> EdgeProbabilities {
    let probs = g
        .edges()
        .iter()
        .map(|e| {
            let diff = d.value(e.to) - d.value(e.from);
            if diff.is_nan() {
                0.5
            } else {
                sigmoid(diff)
            }
        })
        .collect();
    EdgeProbabilities { probs }
}

/// Initialization scheme for learned values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Zeros,
    /// BFS hop count to the sink; unreachable nodes get `node_count`.
    HopDistance,
    Random {
        seed: u64,
    },
}

/// Produces an initial assignment under the given scheme.
pub fn init_values(g: &Graph, scheme: InitScheme) -> ValueAssignment {
    let n = g.node_count();
    let values = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::HopDistance => {
            let mut hops = vec![n; n];
            hops[g.sink()] = 0;
            let mut queue = std::collections::VecDeque::from([g.sink()]);
            while let Some(v) = queue.pop_front() {
                for &ei in g.incoming(v) {
                    let u = g.edge(ei).from;
                    if hops[u] == n && u != g.sink() {
                        hops[u] = hops[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
            hops.into_iter().map(|h| h as f64).collect()
        }
        InitScheme::Random { seed } => {
            let mut rng = seeded_rng(seed, 0);
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        }
    };
    ValueAssignment::new(values)
}
