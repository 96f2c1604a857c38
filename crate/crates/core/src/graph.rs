// SPDX-License-Identifier: Apache-2.0
//! DAG structures, CPDAGs, Markov equivalence and the CPDAG structural Hamming distance.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::acyclicity::topological_order;
use crate::error::{Error, Result};

/// Binary acyclic adjacency; `has_edge(i, j)` means `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DagStructure {
    p: usize,
    adj: Vec<bool>,
}

impl DagStructure {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            adj: vec![false; p * p],
        }
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![false; p * p];
        for &(i, j) in edges {
            if i >= p || j >= p {
                return Err(Error::InvalidParams(format!(
                    "edge ({i}, {j}) out of range for p = {p}"
                )));
            }
            adj[i * p + j] = true;
        }
        let g = Self { p, adj };
        if !g.is_acyclic() {
            return Err(Error::Cyclic);
        }
        Ok(g)
    }

    /// Interprets nonzero entries as edges; errors on cycles.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        support_of(m, 0.0)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.p + j]
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.has_edge(i, j) || self.has_edge(j, i)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in 0..self.p {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|v| **v).count()
    }

    pub fn parents(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.p).filter(move |&i| self.has_edge(i, j))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.p,
            self.p,
            |i, j| if self.has_edge(i, j) { 1.0 } else { 0.0 },
        )
    }

    fn is_acyclic(&self) -> bool {
        topological_order(&self.to_matrix(), 0.0).is_some()
    }
}

/// Outcome of thresholding a weighted matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Thresholded {
    Dag(DagStructure),
    /// The support has a directed cycle; carries the offending edge list.
    Cyclic(Vec<(usize, usize)>),
}

impl Thresholded {
    pub fn dag(&self) -> Option<&DagStructure> {
        match self {
            Thresholded::Dag(g) => Some(g),
            Thresholded::Cyclic(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Thresholded::Dag(_))
    }
}

/// Support `{(i, j) : |B_ij| > eps}` with a validity flag instead of an error.
pub fn threshold_support(b: &DMatrix<f64>, eps: f64) -> Thresholded {
    let p = b.nrows();
    let mut adj = vec![false; p * p];
    let mut edges = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if b[(i, j)].abs() > eps {
                adj[i * p + j] = true;
                edges.push((i, j));
            }
        }
    }
    if topological_order(b, eps).is_some() {
        Thresholded::Dag(DagStructure { p, adj })
    } else {
        Thresholded::Cyclic(edges)
    }
}

/// Support of `b` at threshold `eps`; cyclic supports are reported as [`Error::Cyclic`].
pub fn support_of(b: &DMatrix<f64>, eps: f64) -> Result<DagStructure> {
    if b.nrows() != b.ncols() {
        return Err(Error::InvalidParams("adjacency must be square".into()));
    }
    match threshold_support(b, eps) {
        Thresholded::Dag(g) => Ok(g),
        Thresholded::Cyclic(_) => Err(Error::Cyclic),
    }
}

/// Topological order with ties broken by smallest index.
pub fn topological_sort(g: &DagStructure) -> Result<Vec<usize>> {
    topological_order(&g.to_matrix(), 0.0).ok_or(Error::Cyclic)
}

/// Completed partially directed acyclic graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cpdag {
    p: usize,
    directed: BTreeSet<(usize, usize)>,
    /// Stored with `i < j`.
    undirected: BTreeSet<(usize, usize)>,
}

/// Mark of a node pair inside a CPDAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMark {
    None,
    Forward,
    Backward,
    Undirected,
}

impl Cpdag {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn directed(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    pub fn undirected(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    /// Mark of the pair `(i, j)` as seen from `i` (so `Forward` is `i -> j`).
    pub fn mark(&self, i: usize, j: usize) -> PairMark {
        let key = (i.min(j), i.max(j));
        if self.undirected.contains(&key) {
            PairMark::Undirected
        } else if self.directed.contains(&(i, j)) {
            PairMark::Forward
        } else if self.directed.contains(&(j, i)) {
            PairMark::Backward
        } else {
            PairMark::None
        }
    }

    pub fn edge_count(&self) -> usize {
        self.directed.len() + self.undirected.len()
    }

    /// `1` at `(i, j)` for `i -> j`, mutual ones for undirected edges.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for &(i, j) in &self.directed {
            m[(i, j)] = 1.0;
        }
        for &(i, j) in &self.undirected {
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
        }
        m
    }

    /// Inverse of [`Cpdag::to_matrix`]; the directed part must be acyclic.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let p = m.nrows();
        if m.ncols() != p {
            return Err(Error::InvalidParams("adjacency must be square".into()));
        }
        let mut directed = BTreeSet::new();
        let mut undirected = BTreeSet::new();
        for i in 0..p {
            if m[(i, i)] != 0.0 {
                return Err(Error::InvalidParams("CPDAG diagonal must be zero".into()));
            }
            for j in 0..p {
                if i == j || m[(i, j)] == 0.0 {
                    continue;
                }
                if m[(j, i)] != 0.0 {
                    if i < j {
                        undirected.insert((i, j));
                    }
                } else {
                    directed.insert((i, j));
                }
            }
        }
        let dir_only = DMatrix::from_fn(
            p,
            p,
            |i, j| {
                if directed.contains(&(i, j)) {
                    1.0
                } else {
                    0.0
                }
            },
        );
        if topological_order(&dir_only, 0.0).is_none() {
            return Err(Error::Cyclic);
        }
        Ok(Self {
            p,
            directed,
            undirected,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    None,
    Undirected,
    /// Directed from the row node to the column node.
    Out,
    In,
}

struct Pdag {
    p: usize,
    marks: Vec<Mark>,
}

impl Pdag {
    fn get(&self, i: usize, j: usize) -> Mark {
        self.marks[i * self.p + j]
    }
    fn adjacent(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != Mark::None
    }
    fn directed(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == Mark::Out
    }
    fn undirected(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == Mark::Undirected
    }
    fn orient(&mut self, i: usize, j: usize) {
        self.marks[i * self.p + j] = Mark::Out;
        self.marks[j * self.p + i] = Mark::In;
    }

    // a -> b - c, a and c not adjacent  =>  b -> c
    fn rule1(&mut self) -> bool {
        let p = self.p;
        let mut changed = false;
        for b in 0..p {
            for c in 0..p {
                if !self.undirected(b, c) {
                    continue;
                }
                if (0..p).any(|a| a != c && self.directed(a, b) && !self.adjacent(a, c)) {
                    self.orient(b, c);
                    changed = true;
                }
            }
        }
        changed
    }

    // a -> k -> b and a - b  =>  a -> b
    fn rule2(&mut self) -> bool {
        let p = self.p;
        let mut changed = false;
        for a in 0..p {
            for b in 0..p {
                if !self.undirected(a, b) {
                    continue;
                }
                if (0..p).any(|k| self.directed(a, k) && self.directed(k, b)) {
                    self.orient(a, b);
                    changed = true;
                }
            }
        }
        changed
    }

    // a - c -> b, a - d -> b, c and d not adjacent, a - b  =>  a -> b
    fn rule3(&mut self) -> bool {
        let p = self.p;
        let mut changed = false;
        for a in 0..p {
            for b in 0..p {
                if !self.undirected(a, b) {
                    continue;
                }
                let mids: Vec<usize> = (0..p)
                    .filter(|&c| self.undirected(a, c) && self.directed(c, b))
                    .collect();
                let found = mids
                    .iter()
                    .enumerate()
                    .any(|(x, &c)| mids[x + 1..].iter().any(|&d| !self.adjacent(c, d)));
                if found {
                    self.orient(a, b);
                    changed = true;
                }
            }
        }
        changed
    }

    // a - b, a ~ d, d -> c -> b, d and b not adjacent  =>  a -> b
    fn rule4(&mut self) -> bool {
        let p = self.p;
        let mut changed = false;
        for a in 0..p {
            for b in 0..p {
                if !self.undirected(a, b) {
                    continue;
                }
                let found = (0..p).any(|c| {
                    c != a
                        && self.adjacent(a, c)
                        && self.directed(c, b)
                        && (0..p).any(|d| {
                            d != b
                                && d != a
                                && self.undirected(a, d)
                                && self.directed(d, c)
                                && !self.adjacent(d, b)
                        })
                });
                if found {
                    self.orient(a, b);
                    changed = true;
                }
            }
        }
        changed
    }

    fn apply(&mut self, rule: usize) -> bool {
        match rule {
            0 => self.rule1(),
            1 => self.rule2(),
            2 => self.rule3(),
            _ => self.rule4(),
        }
    }
}

/// CPDAG of the Markov equivalence class of `g`.
pub fn cpdag_of(g: &DagStructure) -> Cpdag {
    cpdag_with_rule_order(g, &[0, 1, 2, 3])
}

/// Same as [`cpdag_of`] with the Meek rules tried in the given order on every sweep.
pub fn cpdag_with_rule_order(g: &DagStructure, order: &[usize]) -> Cpdag {
    let p = g.p();
    let mut pdag = Pdag {
        p,
        marks: vec![Mark::None; p * p],
    };
    for i in 0..p {
        for j in 0..p {
            if g.adjacent(i, j) {
                pdag.marks[i * p + j] = Mark::Undirected;
            }
        }
    }
    // v-structures i -> k <- j with i, j nonadjacent
    for k in 0..p {
        let parents: Vec<usize> = g.parents(k).collect();
        for (x, &i) in parents.iter().enumerate() {
            for &j in &parents[x + 1..] {
                if !g.adjacent(i, j) {
                    pdag.orient(i, k);
                    pdag.orient(j, k);
                }
            }
        }
    }
    loop {
        let mut changed = false;
        for &r in order {
            changed |= pdag.apply(r);
        }
        if !changed {
            break;
        }
    }
    let mut directed = BTreeSet::new();
    let mut undirected = BTreeSet::new();
    for i in 0..p {
        for j in 0..p {
            match pdag.get(i, j) {
                Mark::Out => {
                    directed.insert((i, j));
                }
                Mark::Undirected if i < j => {
                    undirected.insert((i, j));
                }
                _ => {}
            }
        }
    }
    Cpdag {
        p,
        directed,
        undirected,
    }
}

/// Number of node pairs on which the two CPDAGs disagree (presence or mark).
pub fn shd_cpdag(a: &Cpdag, b: &Cpdag) -> Result<usize> {
    if a.p() != b.p() {
        return Err(Error::DimensionMismatch {
            expected: a.p(),
            got: b.p(),
        });
    }
    let p = a.p();
    let mut d = 0;
    for i in 0..p {
        for j in (i + 1)..p {
            if a.mark(i, j) != b.mark(i, j) {
                d += 1;
            }
        }
    }
    Ok(d)
}

/// Markov equivalence via equality of CPDAGs.
pub fn mec_equal(g1: &DagStructure, g2: &DagStructure) -> bool {
    g1.p() == g2.p() && cpdag_of(g1) == cpdag_of(g2)
}
