//! Matrix signal-flow graphs.
//!
//! Node values are row vectors and a branch `p -> s` with gain `G` contributes
//! `x_p G` to `x_s`, so gains compose left to right along a path. The input-output
//! gain is obtained by eliminating interior nodes with the series, parallel and
//! self-loop rules.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::channel::{CompositeChannel, Mat};
use crate::error::{Error, Result};
use crate::polyval::{dual_add, dual_geo, dual_mul, DualMatrix};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    labels: Vec<String>,
    alive: BTreeSet<NodeId>,
    branches: BTreeMap<(NodeId, NodeId), DualMatrix>,
    input: NodeId,
    output: NodeId,
    dim: usize,
}

impl FlowGraph {
    /// Empty graph with input and output nodes; `dim` is the gain matrix size.
    pub fn new(input: &str, output: &str, dim: usize) -> Self {
        FlowGraph {
            labels: vec![input.to_string(), output.to_string()],
            alive: [0, 1].into_iter().collect(),
            branches: BTreeMap::new(),
            input: 0,
            output: 1,
            dim,
        }
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn label(&self, n: NodeId) -> &str {
        &self.labels[n]
    }

    /// Returns the node with this label, creating it if needed.
    pub fn node(&mut self, label: &str) -> NodeId {
        if let Some(id) = self.find(label) {
            return id;
        }
        self.labels.push(label.to_string());
        let id = self.labels.len() - 1;
        self.alive.insert(id);
        id
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.alive.iter().copied().find(|&n| self.labels[n] == label)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.alive.iter().copied()
    }

    pub fn branch(&self, from: NodeId, to: NodeId) -> Option<&DualMatrix> {
        self.branches.get(&(from, to))
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Adds a branch, merging with an existing parallel branch by addition.
    pub fn add_branch(&mut self, from: NodeId, to: NodeId, gain: DualMatrix) -> Result<()> {
        if !self.alive.contains(&from) || !self.alive.contains(&to) {
            return Err(Error::Graph(format!("dangling branch {from} -> {to}")));
        }
        if from == self.output {
            return Err(Error::Graph("output node cannot have outgoing branches".into()));
        }
        if to == self.input {
            return Err(Error::Graph("input node cannot have incoming branches".into()));
        }
        if gain.val.shape() != (self.dim, self.dim) {
            return Err(Error::Dimension {
                left: gain.val.shape(),
                right: (self.dim, self.dim),
            });
        }
        let merged = match self.branches.remove(&(from, to)) {
            Some(old) => dual_add(&old, &gain)?,
            None => gain,
        };
        self.branches.insert((from, to), merged);
        Ok(())
    }

    /// Convenience wrapper taking labels.
    pub fn connect(&mut self, from: &str, to: &str, gain: DualMatrix) -> Result<()> {
        let (f, t) = (self.node(from), self.node(to));
        self.add_branch(f, t, gain)
    }

    /// Removes `n`, rerouting every predecessor-successor pair through its self-loop closure.
    pub fn eliminate_node(&mut self, n: NodeId) -> Result<()> {
        if n == self.input || n == self.output {
            return Err(Error::Graph(format!(
                "cannot eliminate terminal node {}",
                self.labels[n]
            )));
        }
        if !self.alive.contains(&n) {
            return Err(Error::Graph(format!("node {n} does not exist")));
        }
        let closure = match self.branches.remove(&(n, n)) {
            Some(l) if !l.is_zero() => Some(dual_geo(&l)?),
            _ => None,
        };
        let preds: Vec<(NodeId, DualMatrix)> = self
            .branches
            .iter()
            .filter(|((_, t), _)| *t == n)
            .map(|((f, _), g)| (*f, g.clone()))
            .collect();
        let succs: Vec<(NodeId, DualMatrix)> = self
            .branches
            .iter()
            .filter(|((f, _), _)| *f == n)
            .map(|((_, t), g)| (*t, g.clone()))
            .collect();
        self.branches.retain(|(f, t), _| *f != n && *t != n);
        self.alive.remove(&n);
        for (p, a) in &preds {
            let head = match &closure {
                Some(c) => dual_mul(a, c)?,
                None => a.clone(),
            };
            for (s, b) in &succs {
                self.add_branch(*p, *s, dual_mul(&head, b)?)?;
            }
        }
        Ok(())
    }

    fn reachable(&self) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.input]);
        while let Some(v) = queue.pop_front() {
            if v == self.output {
                return true;
            }
            if !seen.insert(v) {
                continue;
            }
            for (f, t) in self.branches.keys() {
                if *f == v && !seen.contains(t) {
                    queue.push_back(*t);
                }
            }
        }
        false
    }

    /// Input-output gain eliminating interior nodes in ascending label order.
    pub fn graph_gain(&self) -> Result<DualMatrix> {
        let mut order: Vec<NodeId> = self
            .nodes()
            .filter(|&n| n != self.input && n != self.output)
            .collect();
        order.sort_by(|a, b| self.labels[*a].cmp(&self.labels[*b]));
        self.gain_with_order(&order)
    }

    /// Input-output gain for an explicit elimination order.
    pub fn gain_with_order(&self, order: &[NodeId]) -> Result<DualMatrix> {
        if !self.reachable() {
            return Err(Error::Graph("output is unreachable from input".into()));
        }
        let mut g = self.clone();
        for &n in order {
            g.eliminate_node(n)?;
        }
        if g.alive.len() != 2 {
            return Err(Error::Graph("elimination order left interior nodes".into()));
        }
        Ok(g
            .branches
            .remove(&(g.input, g.output))
            .unwrap_or_else(|| DualMatrix::zeros(g.dim)))
    }

    /// Graphviz rendering; each branch shows its total mass and mass-weighted z-degree.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph msfg {\n  rankdir=LR;\n");
        for n in self.nodes() {
            let _ = writeln!(out, "  n{n} [label=\"{}\"];", self.labels[n]);
        }
        for ((f, t), g) in &self.branches {
            let mass = g.val.sum();
            let degree = if mass > 0.0 { g.der.sum() / mass } else { 0.0 };
            let _ = writeln!(out, "  n{f} -> n{t} [label=\"{mass:.3} z^{degree:.2}\"];");
        }
        out.push_str("}\n");
        out
    }
}

fn mpow(m: &Mat, n: u32) -> Mat {
    let mut out = Mat::identity(m.nrows(), m.ncols());
    for _ in 0..n {
        out = &out * m;
    }
    out
}

/// Transmission-count graph of uncoded selective-repeat ARQ with unreliable feedback,
/// evaluated at `z`. Nodes: I (new packet), A (first feedback), B (retransmission after
/// NACK or NACK timeout), C (ACK lost, timer retransmissions), O (ACK received).
pub fn uncoded_throughput_graph(ch: &CompositeChannel, k: u32, timeout: u32, z: f64) -> Result<FlowGraph> {
    let d = timeout - k;
    let p = &ch.pc;
    let pk = mpow(p, k - 1);
    let pt = mpow(p, timeout - 1);
    let c = |m: Mat| DualMatrix::constant(m);
    let t = |m: &Mat, n: u32| DualMatrix::term_at(m, n, z);
    let px1 = c(ch.px1.clone());
    let px0 = c(ch.px0.clone());
    let mut g = FlowGraph::new("I", "O", ch.dim());
    g.connect("I", "A", t(&pk, 1))?;
    let early = &(&c(ch.p(0, 1).clone()) * &px1.partial_geo(d)) * &px0;
    g.connect("A", "O", &c(ch.p(0, 0).clone()) + &early)?;
    g.connect("A", "C", t(&(ch.p(0, 1) * mpow(&ch.px1, d)), 1))?;
    g.connect("C", "C", t(&mpow(&ch.px1, timeout), 1))?;
    g.connect("C", "O", &px1.partial_geo(timeout) * &px0)?;
    let nack = &t(&(ch.p(1, 0) * &pk), 1) + &t(&(ch.p(1, 1) * &pt), 1);
    g.connect("A", "B", nack)?;
    g.connect("B", "A", DualMatrix::identity(ch.dim()))?;
    Ok(g)
}

/// Delay graph of the same state machine; every slot carries one power of `z`.
pub fn uncoded_delay_graph(ch: &CompositeChannel, k: u32, timeout: u32, z: f64) -> Result<FlowGraph> {
    let p = &ch.pc;
    let pk = mpow(p, k - 1);
    let pt = mpow(p, timeout - 1);
    let t = |m: &Mat, n: u32| DualMatrix::term_at(m, n, z);
    let mut g = FlowGraph::new("I", "O", ch.dim());
    g.connect("I", "A", t(&pk, k - 1))?;
    g.connect("A", "O", t(ch.p(0, 0), 1))?;
    g.connect("A", "C", t(ch.p(0, 1), 2))?;
    g.connect("C", "C", t(&ch.px1, 1))?;
    g.connect("C", "O", DualMatrix::constant(ch.px0.clone()))?;
    let nack = &t(&(ch.p(1, 0) * &pk), k) + &t(&(ch.p(1, 1) * &pt), timeout);
    g.connect("A", "B", nack)?;
    g.connect("B", "A", DualMatrix::identity(ch.dim()))?;
    Ok(g)
}
