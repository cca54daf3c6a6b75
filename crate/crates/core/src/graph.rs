//! Directed weighted graphs with a designated source/sink pair, synthetic
//! instance generators, negative-cycle detection, and JSON file I/O.
//!
//! A [`Graph`] is immutable after construction: node ids live in
//! `[0, node_count)`, self-loops and parallel edges are rejected, and the
//! adjacency indices are kept consistent with the edge list. Generators are
//! pure functions of their [`GeneratorSpec`], so the same spec always yields
//! the same instance.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded_rng;

/// Node identifier; always in `[0, node_count)` of the owning graph.
pub type NodeId = usize;

/// A directed weighted edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub weight: f64,
}

/// Construction/validation failures for [`Graph`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node_count must be positive")]
    EmptyGraph,
    #[error("node id {id} out of range for node_count {node_count}")]
    NodeOutOfRange { id: NodeId, node_count: usize },
    #[error("source and sink must differ (both are {node})")]
    SourceEqualsSink { node: NodeId },
    #[error("self-loop at node {node} is not allowed")]
    SelfLoop { node: NodeId },
    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("edge ({from}, {to}) has non-finite weight")]
    NonFiniteWeight { from: NodeId, to: NodeId },
}

/// Error from [`path_cost`] when a consecutive pair is not an edge.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("({from}, {to}) is not an edge of the graph")]
    MissingEdge { from: NodeId, to: NodeId },
}

/// Immutable directed graph instance `(V, E, w, s, t)`.
#[derive(Debug, Clone)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    source: NodeId,
    sink: NodeId,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    edge_lookup: HashMap<(NodeId, NodeId), usize>,
}

impl Graph {
    /// Builds a graph, validating every invariant (ids in range, no
    /// self-loops, no parallel edges, finite weights, source != sink).
    ///
    /// Adjacency lists are sorted by neighbor id so iteration order is
    /// canonical regardless of the edge order supplied.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
        source: NodeId,
        sink: NodeId,
    ) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let check_node = |id: NodeId| {
            if id >= node_count {
                Err(GraphError::NodeOutOfRange { id, node_count })
            } else {
                Ok(())
            }
        };
        check_node(source)?;
        check_node(sink)?;
        if source == sink {
            return Err(GraphError::SourceEqualsSink { node: source });
        }

        let mut edge_vec = Vec::new();
        let mut edge_lookup = HashMap::new();
        for (from, to, weight) in edges {
            check_node(from)?;
            check_node(to)?;
            if from == to {
                return Err(GraphError::SelfLoop { node: from });
            }
            if !weight.is_finite() {
                return Err(GraphError::NonFiniteWeight { from, to });
            }
            if edge_lookup.insert((from, to), edge_vec.len()).is_some() {
                return Err(GraphError::DuplicateEdge { from, to });
            }
            edge_vec.push(Edge { from, to, weight });
        }

        let mut outgoing = vec![Vec::new(); node_count];
        let mut incoming = vec![Vec::new(); node_count];
        for (idx, e) in edge_vec.iter().enumerate() {
            outgoing[e.from].push(idx);
            incoming[e.to].push(idx);
        }
        for list in &mut outgoing {
            list.sort_by_key(|&i| edge_vec[i].to);
        }
        for list in &mut incoming {
            list.sort_by_key(|&i| edge_vec[i].from);
        }

        Ok(Graph {
            node_count,
            edges: edge_vec,
            source,
            sink,
            outgoing,
            incoming,
            edge_lookup,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> Edge {
        self.edges[idx]
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    /// Indices of edges leaving `u`, sorted by target id.
    pub fn outgoing(&self, u: NodeId) -> &[usize] {
        &self.outgoing[u]
    }

    /// Indices of edges entering `u`, sorted by origin id.
    pub fn incoming(&self, u: NodeId) -> &[usize] {
        &self.incoming[u]
    }

    pub fn edge_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.edge_lookup.get(&(from, to)).copied()
    }

    /// Largest absolute edge weight (0 for an edgeless graph).
    pub fn max_abs_weight(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.weight.abs())
            .fold(0.0, f64::max)
    }
}

/// An s->t node sequence with its accumulated cost.
///
/// The invariants (consecutive pairs are edges, no repeated node, endpoints
/// are source/sink) hold for every path produced by the exact solvers and
/// elementary decoders; [`is_elementary_st_path`] checks them explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

impl Path {
    /// Builds a path from a node sequence, computing its cost. Fails if a
    /// consecutive pair is not an edge; does not check elementarity.
    pub fn from_nodes(g: &Graph, nodes: Vec<NodeId>) -> Result<Self, PathError> {
        let cost = path_cost(g, &nodes)?;
        Ok(Path { nodes, cost })
    }
}

/// A directed cycle; `nodes` lists the cycle once, the closing edge from the
/// last node back to the first is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

/// Sum of edge weights over consecutive pairs of `nodes`.
pub fn path_cost(g: &Graph, nodes: &[NodeId]) -> Result<f64, PathError> {
    let mut cost = 0.0;
    for pair in nodes.windows(2) {
        match g.edge_index(pair[0], pair[1]) {
            Some(idx) => cost += g.edge(idx).weight,
            None => {
                return Err(PathError::MissingEdge {
                    from: pair[0],
                    to: pair[1],
                })
            }
        }
    }
    Ok(cost)
}

/// True iff `nodes` is an elementary source->sink path of `g`: starts at the
/// source, ends at the sink, every consecutive pair is an edge, and no node
/// repeats.
pub fn is_elementary_st_path(g: &Graph, nodes: &[NodeId]) -> bool {
    if nodes.len() < 2 {
        return false;
    }
    if nodes[0] != g.source() || *nodes.last().unwrap() != g.sink() {
        return false;
    }
    let mut seen = vec![false; g.node_count()];
    for &v in nodes {
        if v >= g.node_count() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    nodes
        .windows(2)
        .all(|pair| g.edge_index(pair[0], pair[1]).is_some())
}

// ---------------------------------------------------------------------------
// Negative-cycle detection
// ---------------------------------------------------------------------------

/// Finds some negative-total-cost cycle if one exists anywhere in the graph,
/// regardless of reachability from the source.
///
/// Runs Bellman-Ford from a virtual super-source (all distances start at 0);
/// a relaxation in the |V|-th pass certifies a negative cycle, which is then
/// recovered from the predecessor chain.
pub fn detect_negative_cycle(g: &Graph) -> Option<Cycle> {
    let n = g.node_count();
    let mut dist = vec![0.0f64; n];
    let mut pred_edge: Vec<Option<usize>> = vec![None; n];
    let mut last_round_relaxed: Vec<NodeId> = Vec::new();

    for round in 0..n {
        let mut changed = false;
        for (idx, e) in g.edges().iter().enumerate() {
            let cand = dist[e.from] + e.weight;
            if cand < dist[e.to] {
                dist[e.to] = cand;
                pred_edge[e.to] = Some(idx);
                changed = true;
                if round == n - 1 {
                    last_round_relaxed.push(e.to);
                }
            }
        }
        if !changed {
            return None;
        }
    }

    for &start in &last_round_relaxed {
        if let Some(cycle) = extract_predecessor_cycle(g, &pred_edge, start) {
            if cycle.cost < 0.0 {
                return Some(cycle);
            }
        }
    }
    None
}

/// Walks the predecessor chain from `start`, returning the first cycle it
/// closes (chain order is backward along edges, so the result is reversed
/// into forward order).
fn extract_predecessor_cycle(
    g: &Graph,
    pred_edge: &[Option<usize>],
    start: NodeId,
) -> Option<Cycle> {
    let mut chain = vec![start];
    let mut position: HashMap<NodeId, usize> = HashMap::new();
    position.insert(start, 0);
    let mut cur = start;
    loop {
        let edge_idx = pred_edge[cur]?;
        let from = g.edge(edge_idx).from;
        if let Some(&k) = position.get(&from) {
            // chain[k..] walked backward: forward order is chain[k] followed
            // by the rest reversed.
            let mut nodes = vec![chain[k]];
            nodes.extend(chain[k + 1..].iter().rev());
            let mut cost = 0.0;
            for i in 0..nodes.len() {
                let a = nodes[i];
                let b = nodes[(i + 1) % nodes.len()];
                cost += g.edge(g.edge_index(a, b)?).weight;
            }
            return Some(Cycle { nodes, cost });
        }
        position.insert(from, chain.len());
        chain.push(from);
        cur = from;
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Graph family selector with the family-specific parameters inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphFamily {
    /// Directed Erdos-Renyi: each ordered pair (u, v), u != v, is an edge
    /// independently with the given probability.
    ErdosRenyi { edge_probability: f64 },
    /// 4-neighbor lattice on a near-square grid; each undirected adjacency is
    /// realized as two directed edges with independent weights.
    Grid,
    /// Barabasi-Albert preferential attachment, grown undirected and then
    /// expanded into directed edge pairs with independent weights.
    BarabasiAlbert { attachment_count: usize },
}

/// Edge-weight distribution. Normal and log-normal samples are negated with
/// the given flip probability to inject negative edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightDistribution {
    /// U[-1, 1).
    Uniform,
    Normal {
        mean: f64,
        std_dev: f64,
        flip_prob: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
        flip_prob: f64,
    },
}

impl WeightDistribution {
    pub fn normal_default() -> Self {
        WeightDistribution::Normal {
            mean: 0.0,
            std_dev: 1.0,
            flip_prob: 0.5,
        }
    }

    pub fn lognormal_default() -> Self {
        WeightDistribution::LogNormal {
            mu: 0.0,
            sigma: 1.0,
            flip_prob: 0.5,
        }
    }
}

/// Fully seeded description of a synthetic instance; identical specs always
/// generate identical graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub family: GraphFamily,
    pub node_count: usize,
    pub weights: WeightDistribution,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn erdos_renyi(node_count: usize, edge_probability: f64, seed: u64) -> Self {
        GeneratorSpec {
            family: GraphFamily::ErdosRenyi { edge_probability },
            node_count,
            weights: WeightDistribution::Uniform,
            seed,
        }
    }

    pub fn grid(node_count: usize, seed: u64) -> Self {
        GeneratorSpec {
            family: GraphFamily::Grid,
            node_count,
            weights: WeightDistribution::Uniform,
            seed,
        }
    }

    pub fn barabasi_albert(node_count: usize, attachment_count: usize, seed: u64) -> Self {
        GeneratorSpec {
            family: GraphFamily::BarabasiAlbert { attachment_count },
            node_count,
            weights: WeightDistribution::Uniform,
            seed,
        }
    }

    pub fn with_weights(mut self, weights: WeightDistribution) -> Self {
        self.weights = weights;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no instance with a source->sink path after {attempts} attempts")]
    RetriesExhausted { attempts: usize },
}

/// Regeneration budget before a degenerate spec is reported.
pub const GENERATE_RETRY_BUDGET: usize = 100;

/// Generates a seeded instance. The source is node 0; the sink is the node at
/// maximum BFS depth from the source (ties resolved to the lowest id), which
/// guarantees at least one s->t path. Disconnected draws are regenerated up
/// to [`GENERATE_RETRY_BUDGET`] times.
pub fn generate(spec: &GeneratorSpec) -> Result<Graph, GenerateError> {
    validate_spec(spec)?;
    for attempt in 0..GENERATE_RETRY_BUDGET {
        let mut rng = seeded_rng(spec.seed, attempt as u64);
        let edges = match spec.family {
            GraphFamily::ErdosRenyi { edge_probability } => {
                erdos_renyi_edges(spec.node_count, edge_probability, spec.weights, &mut rng)
            }
            GraphFamily::Grid => grid_edges(spec.node_count, spec.weights, &mut rng),
            GraphFamily::BarabasiAlbert { attachment_count } => {
                barabasi_albert_edges(spec.node_count, attachment_count, spec.weights, &mut rng)
            }
        };
        let source = 0;
        if let Some(sink) = deepest_reachable(spec.node_count, &edges, source) {
            let g = Graph::new(spec.node_count, edges, source, sink)
                .expect("generated edges satisfy graph invariants");
            return Ok(g);
        }
    }
    Err(GenerateError::RetriesExhausted {
        attempts: GENERATE_RETRY_BUDGET,
    })
}

fn validate_spec(spec: &GeneratorSpec) -> Result<(), GenerateError> {
    if spec.node_count < 2 {
        return Err(GenerateError::InvalidSpec(
            "node_count must be at least 2".to_string(),
        ));
    }
    match spec.family {
        GraphFamily::ErdosRenyi { edge_probability } => {
            if !(edge_probability > 0.0 && edge_probability <= 1.0) {
                return Err(GenerateError::InvalidSpec(format!(
                    "edge_probability {edge_probability} not in (0, 1]"
                )));
            }
        }
        GraphFamily::BarabasiAlbert { attachment_count } => {
            if attachment_count == 0 {
                return Err(GenerateError::InvalidSpec(
                    "attachment_count must be positive".to_string(),
                ));
            }
        }
        GraphFamily::Grid => {}
    }
    match spec.weights {
        WeightDistribution::Uniform => {}
        WeightDistribution::Normal {
            std_dev, flip_prob, ..
        } => {
            if !(std_dev > 0.0 && std_dev.is_finite()) {
                return Err(GenerateError::InvalidSpec(format!(
                    "normal std_dev {std_dev} must be positive"
                )));
            }
            if !(0.0..=1.0).contains(&flip_prob) {
                return Err(GenerateError::InvalidSpec(format!(
                    "flip_prob {flip_prob} not in [0, 1]"
                )));
            }
        }
        WeightDistribution::LogNormal {
            sigma, flip_prob, ..
        } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(GenerateError::InvalidSpec(format!(
                    "lognormal sigma {sigma} must be positive"
                )));
            }
            if !(0.0..=1.0).contains(&flip_prob) {
                return Err(GenerateError::InvalidSpec(format!(
                    "flip_prob {flip_prob} not in [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

fn draw_weight(dist: WeightDistribution, rng: &mut impl Rng) -> f64 {
    match dist {
        WeightDistribution::Uniform => rng.random_range(-1.0..1.0),
        WeightDistribution::Normal {
            mean,
            std_dev,
            flip_prob,
        } => {
            let x = Normal::new(mean, std_dev).expect("validated std_dev").sample(rng);
            if rng.random_bool(flip_prob) {
                -x
            } else {
                x
            }
        }
        WeightDistribution::LogNormal {
            mu,
            sigma,
            flip_prob,
        } => {
            let x = LogNormal::new(mu, sigma).expect("validated sigma").sample(rng);
            if rng.random_bool(flip_prob) {
                -x
            } else {
                x
            }
        }
    }
}

fn erdos_renyi_edges(
    n: usize,
    p: f64,
    dist: WeightDistribution,
    rng: &mut impl Rng,
) -> Vec<(NodeId, NodeId, f64)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                edges.push((u, v, draw_weight(dist, rng)));
            }
        }
    }
    edges
}

/// Near-square grid dimensions: rows = floor(sqrt(n)), cols = ceil(n / rows).
pub fn grid_dimensions(n: usize) -> (usize, usize) {
    let rows = (n as f64).sqrt().floor().max(1.0) as usize;
    let cols = n.div_ceil(rows);
    (rows, cols)
}

fn grid_edges(n: usize, dist: WeightDistribution, rng: &mut impl Rng) -> Vec<(NodeId, NodeId, f64)> {
    let (rows, cols) = grid_dimensions(n);
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let a = id(r, c);
            if a >= n {
                continue;
            }
            // Right and down adjacencies, each expanded to both directions.
            if c + 1 < cols && id(r, c + 1) < n {
                let b = id(r, c + 1);
                edges.push((a, b, draw_weight(dist, rng)));
                edges.push((b, a, draw_weight(dist, rng)));
            }
            if r + 1 < rows && id(r + 1, c) < n {
                let b = id(r + 1, c);
                edges.push((a, b, draw_weight(dist, rng)));
                edges.push((b, a, draw_weight(dist, rng)));
            }
        }
    }
    edges
}

fn barabasi_albert_edges(
    n: usize,
    m: usize,
    dist: WeightDistribution,
    rng: &mut impl Rng,
) -> Vec<(NodeId, NodeId, f64)> {
    let m0 = (m + 1).min(n);
    let mut undirected: Vec<(NodeId, NodeId)> = Vec::new();
    // Endpoint list: each node appears once per incident undirected edge, so
    // uniform sampling from it is degree-proportional.
    let mut endpoints: Vec<NodeId> = Vec::new();
    for i in 0..m0 {
        for j in (i + 1)..m0 {
            undirected.push((i, j));
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    for k in m0..n {
        let mut chosen: Vec<NodeId> = Vec::with_capacity(m);
        while chosen.len() < m {
            let pick = endpoints[rng.random_range(0..endpoints.len())];
            if !chosen.contains(&pick) {
                chosen.push(pick);
            }
        }
        for &target in &chosen {
            undirected.push((k, target));
        }
        for &target in &chosen {
            endpoints.push(k);
            endpoints.push(target);
        }
    }
    let mut edges = Vec::with_capacity(2 * undirected.len());
    for (a, b) in undirected {
        edges.push((a, b, draw_weight(dist, rng)));
        edges.push((b, a, draw_weight(dist, rng)));
    }
    edges
}

/// BFS from `source`; returns the lowest-id node at maximum depth, or `None`
/// if nothing but the source is reachable.
fn deepest_reachable(n: usize, edges: &[(NodeId, NodeId, f64)], source: NodeId) -> Option<NodeId> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v, _) in edges {
        adj[u].push(v);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut depth = vec![usize::MAX; n];
    depth[source] = 0;
    let mut queue = std::collections::VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let max_depth = depth.iter().copied().filter(|&d| d != usize::MAX).max()?;
    if max_depth == 0 {
        return None;
    }
    (0..n).find(|&v| depth[v] == max_depth)
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] GraphError),
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    node_count: usize,
    source: usize,
    sink: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Parses the JSON graph document, validating all [`Graph`] invariants.
pub fn read_graph(reader: impl Read) -> Result<Graph, GraphIoError> {
    let doc: GraphDoc = serde_json::from_reader(reader).map_err(|e| GraphIoError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(Graph::new(doc.node_count, doc.edges, doc.source, doc.sink)?)
}

/// Writes the JSON graph document. Weights round-trip bit-exactly: the
/// serializer emits the shortest decimal that parses back to the same f64,
/// so write-read-write is byte-identical.
pub fn write_graph(g: &Graph, mut writer: impl Write) -> std::io::Result<()> {
    let doc = GraphDoc {
        node_count: g.node_count(),
        source: g.source(),
        sink: g.sink(),
        edges: g.edges().iter().map(|e| (e.from, e.to, e.weight)).collect(),
    };
    serde_json::to_writer(&mut writer, &doc)?;
    writer.write_all(b"\n")
}

/// Serializes a graph to its canonical document string.
pub fn graph_to_string(g: &Graph) -> String {
    let mut buf = Vec::new();
    write_graph(g, &mut buf).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("serde_json emits utf-8")
}
