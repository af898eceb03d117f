//! Directed decorated multigraphs and their Laplacian combinatorics.
//!
//! Vertices are numbered `1..=n`; edges are indexed `0..E` in insertion order and
//! edge subsets are bitmasks over those indices. The last vertex is the base of the
//! reduced Laplacian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge subset as a bitmask over edge indices.
pub type EdgeMask = u64;

/// Spacetime signature: `d` complex directions and `d'` real ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub d: usize,
    pub d_prime: usize,
}

impl Signature {
    pub fn new(d: usize, d_prime: usize) -> Result<Self> {
        if d + d_prime == 0 {
            return Err(Error::InvalidSignature { d, d_prime });
        }
        Ok(Self { d, d_prime })
    }

    /// `d + d'`, the number of one-forms contributed by each propagator.
    pub fn dim(&self) -> usize {
        self.d + self.d_prime
    }

    /// Real dimension `2d + d'` of one vertex position.
    pub fn real_dim(&self) -> usize {
        2 * self.d + self.d_prime
    }

    /// `d + d'/2`, the heat-kernel exponent.
    pub fn half_dim(&self) -> f64 {
        self.d as f64 + 0.5 * self.d_prime as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub tail: usize,
    /// Holomorphic derivative orders, one per complex direction. Empty means zero.
    #[serde(default)]
    pub decoration: Vec<u32>,
}

impl Edge {
    pub fn new(tail: usize, head: usize) -> Self {
        Self { head, tail, decoration: Vec::new() }
    }

    pub fn decorated(tail: usize, head: usize, decoration: Vec<u32>) -> Self {
        Self { head, tail, decoration }
    }

    pub fn is_loop(&self) -> bool {
        self.head == self.tail
    }

    /// Decoration padded with zeros to length `d`.
    pub fn decoration_for(&self, d: usize) -> Vec<u32> {
        let mut n = self.decoration.clone();
        n.resize(d, 0);
        n
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoratedGraph {
    vertex_count: usize,
    edges: Vec<Edge>,
}

/// On-disk graph description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub vertices: usize,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub d_prime: Option<usize>,
}

impl GraphFile {
    pub fn into_graph(self) -> Result<(DecoratedGraph, Option<Signature>)> {
        let sig = match (self.d, self.d_prime) {
            (Some(d), Some(dp)) => Some(Signature::new(d, dp)?),
            (None, None) => None,
            _ => return Err(Error::Config("both d and d_prime must be given".into())),
        };
        let g = DecoratedGraph::new(self.vertices, self.edges)?;
        if let Some(s) = sig {
            g.check_decorations(s)?;
        }
        Ok((g, sig))
    }
}

impl DecoratedGraph {
    /// Graph without self-loops.
    pub fn new(vertex_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let g = Self::with_self_loops(vertex_count, edges)?;
        if let Some(e) = g.edges.iter().position(Edge::is_loop) {
            return Err(Error::SelfLoop(e));
        }
        Ok(g)
    }

    /// Graph that may contain self-loops. Integral operations reject them later.
    pub fn with_self_loops(vertex_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidArgument("graph needs at least one vertex".into()));
        }
        if edges.len() > 60 {
            return Err(Error::TooLarge(format!("{} edges", edges.len())));
        }
        for e in &edges {
            for v in [e.head, e.tail] {
                if v == 0 || v > vertex_count {
                    return Err(Error::InvalidVertex { vertex: v, count: vertex_count });
                }
            }
        }
        Ok(Self { vertex_count, edges })
    }

    /// Undecorated graph from `(tail, head)` pairs.
    pub fn from_pairs(vertex_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(vertex_count, pairs.iter().map(|&(t, h)| Edge::new(t, h)).collect())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn full_mask(&self) -> EdgeMask {
        mask_all(self.edges.len())
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges.iter().any(Edge::is_loop)
    }

    pub fn check_decorations(&self, sig: Signature) -> Result<()> {
        for (i, e) in self.edges.iter().enumerate() {
            if !e.decoration.is_empty() && e.decoration.len() != sig.d {
                return Err(Error::DecorationLength {
                    edge: i,
                    got: e.decoration.len(),
                    expected: sig.d,
                });
            }
        }
        Ok(())
    }

    /// Copy with new decorations (one vector per edge).
    pub fn with_decorations(&self, decorations: &[Vec<u32>]) -> Result<Self> {
        if decorations.len() != self.edges.len() {
            return Err(Error::InvalidArgument("one decoration per edge required".into()));
        }
        let mut g = self.clone();
        for (e, n) in g.edges.iter_mut().zip(decorations) {
            e.decoration = n.clone();
        }
        Ok(g)
    }

    /// Copy with edge `e` reversed.
    pub fn reversed(&self, e: usize) -> Self {
        let mut g = self.clone();
        let edge = &mut g.edges[e];
        std::mem::swap(&mut edge.head, &mut edge.tail);
        g
    }

    fn no_loops(&self) -> Result<()> {
        match self.edges.iter().position(Edge::is_loop) {
            Some(e) => Err(Error::SelfLoop(e)),
            None => Ok(()),
        }
    }

    /// `rho^e_i`: +1 at the head, -1 at the tail. `i` is 1-based.
    pub fn rho(&self, e: usize, i: usize) -> i32 {
        let edge = &self.edges[e];
        if edge.head == edge.tail {
            0
        } else if i == edge.head {
            1
        } else if i == edge.tail {
            -1
        } else {
            0
        }
    }

    /// Full incidence matrix, rows indexed by edge and columns by vertex.
    pub fn incidence_matrix(&self) -> Result<Vec<Vec<i32>>> {
        self.no_loops()?;
        Ok((0..self.edge_count())
            .map(|e| (1..=self.vertex_count).map(|i| self.rho(e, i)).collect())
            .collect())
    }

    /// Incidence matrix with the base vertex column removed, as floats.
    pub fn reduced_incidence(&self) -> DMatrix<f64> {
        let n = self.vertex_count - 1;
        DMatrix::from_fn(self.edge_count(), n, |e, i| self.rho(e, i + 1) as f64)
    }

    /// Component label (0-based, ordered by first vertex) of every vertex using
    /// only the edges in `mask`.
    pub fn components_of(&self, mask: EdgeMask) -> Vec<usize> {
        let mut uf = UnionFind::new(self.vertex_count);
        for (e, edge) in self.edges.iter().enumerate() {
            if mask >> e & 1 == 1 {
                uf.union(edge.head - 1, edge.tail - 1);
            }
        }
        uf.labels()
    }

    pub fn component_count_of(&self, mask: EdgeMask) -> usize {
        self.components_of(mask).into_iter().max().map_or(0, |m| m + 1)
    }

    pub fn component_count(&self) -> usize {
        self.component_count_of(self.full_mask())
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// True when the edges in `mask` contain no cycle.
    pub fn is_forest(&self, mask: EdgeMask) -> bool {
        let mut uf = UnionFind::new(self.vertex_count);
        for (e, edge) in self.edges.iter().enumerate() {
            if mask >> e & 1 == 1 && !uf.union(edge.head - 1, edge.tail - 1) {
                return false;
            }
        }
        true
    }

    /// Vertices touched by the edges of `mask`, sorted.
    pub fn vertices_of(&self, mask: EdgeMask) -> Vec<usize> {
        let mut vs: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(e, _)| mask >> e & 1 == 1)
            .flat_map(|(_, edge)| [edge.head, edge.tail])
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    /// Spanning trees as edge masks. Disconnected graphs have none.
    pub fn spanning_trees(&self) -> Result<Vec<EdgeMask>> {
        self.no_loops()?;
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        let k = self.vertex_count - 1;
        Ok(subsets_of_size(self.edge_count(), k)
            .filter(|&m| self.is_forest(m))
            .collect())
    }

    /// Minimal cuts separating `v1` from `v2`: complements of two-component
    /// spanning forests with `v1` in one tree and `v2` in the other.
    pub fn cut_sets(&self, v1: &[usize], v2: &[usize]) -> Result<Vec<EdgeMask>> {
        self.no_loops()?;
        if v1.is_empty() || v2.is_empty() {
            return Err(Error::EmptySet);
        }
        for &v in v1.iter().chain(v2) {
            if v == 0 || v > self.vertex_count {
                return Err(Error::InvalidVertex { vertex: v, count: self.vertex_count });
            }
        }
        if v1.iter().any(|v| v2.contains(v)) {
            return Err(Error::OverlappingSets);
        }
        if self.vertex_count < 2 {
            return Ok(Vec::new());
        }
        let full = self.full_mask();
        let mut out = Vec::new();
        for forest in subsets_of_size(self.edge_count(), self.vertex_count - 2) {
            if !self.is_forest(forest) {
                continue;
            }
            let labels = self.components_of(forest);
            let c1 = labels[v1[0] - 1];
            let c2 = labels[v2[0] - 1];
            if c1 == c2 {
                continue;
            }
            if v1.iter().all(|&v| labels[v - 1] == c1) && v2.iter().all(|&v| labels[v - 1] == c2) {
                out.push(full & !forest);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn check_t(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.edge_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} Schwinger parameters, got {}",
                self.edge_count(),
                t.len()
            )));
        }
        for (e, &te) in t.iter().enumerate() {
            if !(te > 0.0) {
                return Err(Error::NonPositiveParameter(e, te));
            }
        }
        Ok(())
    }

    /// Reduced weighted Laplacian `M_ij = sum_e rho^e_i rho^e_j / t_e`, `i, j < n`.
    pub fn weighted_laplacian(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        self.no_loops()?;
        self.check_t(t)?;
        Ok(self.laplacian_unchecked(t))
    }

    pub(crate) fn laplacian_unchecked(&self, t: &[f64]) -> DMatrix<f64> {
        let n = self.vertex_count - 1;
        let mut m = DMatrix::zeros(n, n);
        for (e, edge) in self.edges.iter().enumerate() {
            let w = 1.0 / t[e];
            let (h, tl) = (edge.head, edge.tail);
            if h <= n {
                m[(h - 1, h - 1)] += w;
            }
            if tl <= n {
                m[(tl - 1, tl - 1)] += w;
            }
            if h <= n && tl <= n {
                m[(h - 1, tl - 1)] -= w;
                m[(tl - 1, h - 1)] -= w;
            }
        }
        m
    }

    /// `sum_T prod_{e not in T} t_e`.
    pub fn tree_polynomial(&self, t: &[f64]) -> Result<f64> {
        self.check_t(t)?;
        let trees = self.spanning_trees()?;
        let full = self.full_mask();
        Ok(trees.iter().map(|&tr| mask_product(full & !tr, t)).sum())
    }

    /// Kirchhoff's formula `det M = sum_T prod_{e not in T} t_e / prod_e t_e`.
    pub fn kirchhoff_det(&self, t: &[f64]) -> Result<f64> {
        let num = self.tree_polynomial(t)?;
        Ok(num / mask_product(self.full_mask(), t))
    }

    /// `(M^-1)^{ij}` from the cut formula; `i, j` are 1-based and below the base.
    pub fn laplacian_inverse_entry(&self, t: &[f64], i: usize, j: usize) -> Result<f64> {
        let n = self.vertex_count;
        if i == 0 || j == 0 || i >= n || j >= n {
            return Err(Error::IndexOutOfRange(format!("({i}, {j}) with base vertex {n}")));
        }
        let den = self.tree_polynomial(t)?;
        let v1: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
        let num: f64 = self
            .cut_sets(&v1, &[n])?
            .iter()
            .map(|&c| mask_product(c, t))
            .sum();
        Ok(num / den)
    }

    /// `(d^-1)^{ej} = (1/t_e) sum_i rho^e_i (M^-1)^{ij}`.
    pub fn d_inverse_entry(&self, t: &[f64], e: usize, j: usize) -> Result<f64> {
        if e >= self.edge_count() {
            return Err(Error::IndexOutOfRange(format!("edge {e}")));
        }
        let n = self.vertex_count;
        if j == 0 || j >= n {
            return Err(Error::IndexOutOfRange(format!("vertex {j} with base vertex {n}")));
        }
        let mut s = 0.0;
        for i in 1..n {
            let r = self.rho(e, i);
            if r != 0 {
                s += r as f64 * self.laplacian_inverse_entry(t, i, j)?;
            }
        }
        Ok(s / t[e])
    }

    /// `(d+d') |V'| - (d+d'-1) |E'| - (d+d'+1)` for the subgraph spanned by `mask`.
    pub fn laman_excess(&self, mask: EdgeMask, sig: Signature) -> i64 {
        let k = sig.dim() as i64;
        let v = self.vertices_of(mask).len() as i64;
        let e = mask.count_ones() as i64;
        k * v - (k - 1) * e - (k + 1)
    }

    /// Laman condition: every edge-generated subgraph has non-negative excess
    /// and the whole graph has excess zero.
    pub fn is_laman(&self, sig: Signature) -> bool {
        if self.edges.is_empty() || self.laman_excess(self.full_mask(), sig) != 0 {
            return false;
        }
        (1..=self.full_mask()).all(|m| self.laman_excess(m, sig) >= 0)
    }

    /// A connected edge-generated subgraph with negative Laman excess, if any.
    /// Its existence forces the integrand to vanish.
    pub fn rank_witness(&self, sig: Signature) -> Option<EdgeMask> {
        (1..=self.full_mask())
            .filter(|&m| self.laman_excess(m, sig) < 0 && self.is_connected_subgraph(m))
            .max_by_key(|m| (m.count_ones(), std::cmp::Reverse(*m)))
    }

    /// True when the subgraph spanned by `mask` is connected.
    pub fn is_connected_subgraph(&self, mask: EdgeMask) -> bool {
        let vs = self.vertices_of(mask);
        if vs.is_empty() {
            return false;
        }
        let labels = self.components_of(mask);
        let c = labels[vs[0] - 1];
        vs.iter().all(|&v| labels[v - 1] == c)
    }

    /// First Betti number `E - V + components`.
    pub fn betti_1(&self) -> usize {
        self.edge_count() + self.component_count() - self.vertex_count
    }

    /// Subgraph spanned by `mask` with its vertices renumbered in order.
    /// Returns the graph and the original label of each new vertex.
    pub fn subgraph(&self, mask: EdgeMask) -> Result<(DecoratedGraph, Vec<usize>)> {
        let vs = self.vertices_of(mask);
        if vs.is_empty() {
            return Err(Error::InvalidArgument("empty subgraph".into()));
        }
        let relabel = |v: usize| vs.iter().position(|&w| w == v).unwrap() + 1;
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(e, _)| mask >> e & 1 == 1)
            .map(|(_, edge)| Edge {
                head: relabel(edge.head),
                tail: relabel(edge.tail),
                decoration: edge.decoration.clone(),
            })
            .collect();
        Ok((DecoratedGraph::with_self_loops(vs.len(), edges)?, vs))
    }

    /// Contract edge `e`, merging its endpoints into the smaller label.
    /// Edges parallel to `e` become self-loops and are reported.
    pub fn contract_edge(&self, e: usize) -> Result<Contraction> {
        if e >= self.edge_count() {
            return Err(Error::IndexOutOfRange(format!("edge {e}")));
        }
        let edge = &self.edges[e];
        if edge.is_loop() {
            return Err(Error::SelfLoop(e));
        }
        let keep = edge.head.min(edge.tail);
        let gone = edge.head.max(edge.tail);
        let map = |v: usize| {
            if v == gone {
                keep
            } else if v > gone {
                v - 1
            } else {
                v
            }
        };
        let mut edges = Vec::with_capacity(self.edge_count() - 1);
        let mut edge_map = Vec::with_capacity(self.edge_count() - 1);
        let mut self_loops = Vec::new();
        for (i, other) in self.edges.iter().enumerate() {
            if i == e {
                continue;
            }
            let ne = Edge {
                head: map(other.head),
                tail: map(other.tail),
                decoration: other.decoration.clone(),
            };
            if ne.is_loop() {
                self_loops.push(edges.len());
            }
            edge_map.push(i);
            edges.push(ne);
        }
        Ok(Contraction {
            graph: DecoratedGraph::with_self_loops(self.vertex_count - 1, edges)?,
            self_loops,
            edge_map,
            merged_vertex: keep,
        })
    }

    /// Quotient by the subgraph `mask`: each connected piece of `mask` collapses
    /// to a single vertex. Returns the quotient and the edge map.
    pub fn quotient(&self, mask: EdgeMask) -> Result<(DecoratedGraph, Vec<usize>)> {
        let labels = self.components_of(mask);
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut edges = Vec::new();
        let mut edge_map = Vec::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if mask >> e & 1 == 1 {
                continue;
            }
            edges.push(Edge {
                head: labels[edge.head - 1] + 1,
                tail: labels[edge.tail - 1] + 1,
                decoration: edge.decoration.clone(),
            });
            edge_map.push(e);
        }
        Ok((DecoratedGraph::with_self_loops(count, edges)?, edge_map))
    }
}

/// Result of contracting one edge.
#[derive(Clone, Debug)]
pub struct Contraction {
    pub graph: DecoratedGraph,
    /// Indices (in the new graph) of edges that became self-loops.
    pub self_loops: Vec<usize>,
    /// Original index of each surviving edge.
    pub edge_map: Vec<usize>,
    pub merged_vertex: usize,
}

pub fn mask_all(n: usize) -> EdgeMask {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

pub fn mask_product(mask: EdgeMask, t: &[f64]) -> f64 {
    t.iter()
        .enumerate()
        .filter(|(e, _)| mask >> e & 1 == 1)
        .map(|(_, &x)| x)
        .product()
}

pub fn mask_indices(mask: EdgeMask) -> Vec<usize> {
    (0..64).filter(|&e| mask >> e & 1 == 1).collect()
}

/// All `k`-element subsets of `0..n` as masks, in increasing order.
pub fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = EdgeMask> {
    (0..=mask_all(n)).filter(move |m| m.count_ones() as usize == k)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }

    fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut root_label = vec![usize::MAX; n];
        let mut next = 0;
        let mut out = vec![0; n];
        for v in 0..n {
            let r = self.find(v);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            out[v] = root_label[r];
        }
        out
    }
}

/// Small graphs used throughout the tests and the verification suite.
pub mod library {
    use super::DecoratedGraph;

    pub fn single_edge() -> DecoratedGraph {
        DecoratedGraph::from_pairs(2, &[(1, 2)]).unwrap()
    }

    /// Edges a: 1->2, b: 2->3, c: 3->1.
    pub fn triangle() -> DecoratedGraph {
        DecoratedGraph::from_pairs(3, &[(1, 2), (2, 3), (3, 1)]).unwrap()
    }

    pub fn banana() -> DecoratedGraph {
        DecoratedGraph::from_pairs(2, &[(1, 2), (1, 2)]).unwrap()
    }

    pub fn theta() -> DecoratedGraph {
        DecoratedGraph::from_pairs(2, &[(1, 2), (1, 2), (1, 2)]).unwrap()
    }

    /// The 4-cycle 1->2->3->4->1.
    pub fn square() -> DecoratedGraph {
        DecoratedGraph::from_pairs(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]).unwrap()
    }

    /// Path 1->2->3.
    pub fn path3() -> DecoratedGraph {
        DecoratedGraph::from_pairs(3, &[(1, 2), (2, 3)]).unwrap()
    }

    /// Banana on {1,2} followed by an edge 2->3.
    pub fn banana_tail() -> DecoratedGraph {
        DecoratedGraph::from_pairs(3, &[(1, 2), (1, 2), (2, 3)]).unwrap()
    }

    pub fn by_name(name: &str) -> Option<DecoratedGraph> {
        Some(match name {
            "single_edge" | "edge" => single_edge(),
            "triangle" => triangle(),
            "banana" => banana(),
            "theta" => theta(),
            "square" => square(),
            "path3" | "tree" => path3(),
            "banana_tail" => banana_tail(),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::library::*;
    use super::*;

    fn lu_det(m: &DMatrix<f64>) -> f64 {
        m.clone().lu().determinant()
    }

    #[test]
    fn incidence_rows() {
        assert_eq!(single_edge().incidence_matrix().unwrap(), vec![vec![-1, 1]]);
        assert_eq!(
            triangle().incidence_matrix().unwrap(),
            vec![vec![-1, 1, 0], vec![0, -1, 1], vec![1, 0, -1]]
        );
        let r = triangle().reversed(1).incidence_matrix().unwrap();
        assert_eq!(r[1], vec![0, 1, -1]);
    }

    #[test]
    fn self_loops_rejected() {
        assert!(matches!(
            DecoratedGraph::from_pairs(2, &[(1, 1)]),
            Err(Error::SelfLoop(0))
        ));
        let g = DecoratedGraph::with_self_loops(1, vec![Edge::new(1, 1)]).unwrap();
        assert!(g.incidence_matrix().is_err());
    }

    #[test]
    fn trees() {
        assert_eq!(single_edge().spanning_trees().unwrap(), vec![0b1]);
        let mut tr = triangle().spanning_trees().unwrap();
        tr.sort_unstable();
        assert_eq!(tr, vec![0b011, 0b101, 0b110]);
        assert_eq!(banana().spanning_trees().unwrap(), vec![0b01, 0b10]);
        let g = DecoratedGraph::from_pairs(3, &[(1, 2)]).unwrap();
        assert!(matches!(g.spanning_trees(), Err(Error::Disconnected)));
    }

    #[test]
    fn cuts() {
        assert_eq!(triangle().cut_sets(&[1], &[3]).unwrap(), vec![0b101, 0b110]);
        assert_eq!(single_edge().cut_sets(&[1], &[2]).unwrap(), vec![0b1]);
        assert_eq!(banana().cut_sets(&[1], &[2]).unwrap(), vec![0b11]);
        assert!(matches!(
            triangle().cut_sets(&[1, 2], &[2]),
            Err(Error::OverlappingSets)
        ));
    }

    #[test]
    fn laplacian_examples() {
        let m = single_edge().weighted_laplacian(&[1.0]).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        let m = triangle().weighted_laplacian(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        let m = triangle().weighted_laplacian(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m[(0, 0)], 1.25);
        assert_eq!(m[(1, 1)], 1.5);
        assert_eq!(m[(0, 1)], -1.0);
        assert!(triangle().weighted_laplacian(&[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn kirchhoff_examples() {
        assert!((single_edge().kirchhoff_det(&[3.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((triangle().kirchhoff_det(&[1.0, 1.0, 1.0]).unwrap() - 3.0).abs() < 1e-14);
        let (a, b) = (0.7, 2.3);
        let k = banana().kirchhoff_det(&[a, b]).unwrap();
        assert!((k - (a + b) / (a * b)).abs() < 1e-14);
        let t = [0.3, 1.7, 2.2];
        let m = triangle().weighted_laplacian(&t).unwrap();
        let k = triangle().kirchhoff_det(&t).unwrap();
        assert!((k - lu_det(&m)).abs() < 1e-12 * k);
    }

    #[test]
    fn inverse_examples() {
        let g = triangle();
        let one = [1.0, 1.0, 1.0];
        assert!((g.laplacian_inverse_entry(&one, 1, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.laplacian_inverse_entry(&one, 1, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.d_inverse_entry(&one, 0, 1).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        assert!((single_edge().laplacian_inverse_entry(&[2.5], 1, 1).unwrap() - 2.5).abs() < 1e-15);
        assert!((single_edge().d_inverse_entry(&[2.5], 0, 1).unwrap() + 1.0).abs() < 1e-15);
        assert!(g.laplacian_inverse_entry(&one, 3, 1).is_err());
        assert!(g.d_inverse_entry(&one, 5, 1).is_err());
    }

    #[test]
    fn laman_examples() {
        let s11 = Signature::new(1, 1).unwrap();
        let s10 = Signature::new(1, 0).unwrap();
        assert!(triangle().is_laman(s11));
        assert!(banana().is_laman(s10));
        assert!(!banana().is_laman(s11));
        assert!(triangle().is_laman(Signature::new(0, 2).unwrap()));
        assert!(square().is_laman(Signature::new(1, 2).unwrap()));
        assert!(single_edge().is_laman(s10));
    }

    #[test]
    fn betti_examples() {
        assert_eq!(path3().betti_1(), 0);
        assert_eq!(triangle().betti_1(), 1);
        assert_eq!(theta().betti_1(), 2);
    }

    #[test]
    fn witnesses() {
        let s20 = Signature::new(2, 0).unwrap();
        assert_eq!(banana().rank_witness(s20), Some(0b11));
        assert_eq!(triangle().rank_witness(Signature::new(1, 1).unwrap()), None);
        assert_eq!(path3().rank_witness(Signature::new(1, 0).unwrap()), None);
    }

    #[test]
    fn contraction() {
        let c = single_edge().contract_edge(0).unwrap();
        assert_eq!(c.graph.vertex_count(), 1);
        assert_eq!(c.graph.edge_count(), 0);
        let c = triangle().contract_edge(0).unwrap();
        assert_eq!(c.graph.vertex_count(), 2);
        assert_eq!(c.graph.edge_count(), 2);
        assert!(c.self_loops.is_empty());
        assert_eq!(c.graph.betti_1(), 1);
        let c = banana().contract_edge(0).unwrap();
        assert_eq!(c.graph.vertex_count(), 1);
        assert_eq!(c.self_loops, vec![0]);
    }

    #[test]
    fn quotient_of_banana_in_tail() {
        let (q, map) = banana_tail().quotient(0b011).unwrap();
        assert_eq!(q.vertex_count(), 2);
        assert_eq!(map, vec![2]);
        assert!(!q.has_self_loops());
    }

    #[test]
    fn graph_file_round_trip() {
        let js = r#"{"vertices": 3, "edges": [{"head": 2, "tail": 1, "decoration": [0]},
            {"head": 3, "tail": 2, "decoration": [1]}, {"head": 1, "tail": 3, "decoration": [0]}],
            "d": 1, "d_prime": 1}"#;
        let f: GraphFile = serde_json::from_str(js).unwrap();
        let (g, sig) = f.into_graph().unwrap();
        assert_eq!(sig, Some(Signature::new(1, 1).unwrap()));
        assert_eq!(g.edge(1).decoration, vec![1]);
        let bad = r#"{"vertices": 2, "edges": [], "extra": 1}"#;
        assert!(serde_json::from_str::<GraphFile>(bad).is_err());
    }
}
