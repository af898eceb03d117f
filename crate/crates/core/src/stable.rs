//! Stable graphs: multigraphs with vertex genera and external legs.

use crate::error::{Error, Result};
use crate::graph::{DecoratedGraph, Edge};

const MAX_VERTICES: usize = 6;
const MAX_EDGES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StableGraph {
    underlying: DecoratedGraph,
    genus: Vec<usize>,
    /// Number of external legs at each vertex. Legs are labelled, so
    /// automorphisms must fix every vertex carrying one.
    external: Vec<usize>,
}

impl StableGraph {
    pub fn new(underlying: DecoratedGraph, genus: Vec<usize>, external: Vec<usize>) -> Result<Self> {
        let n = underlying.vertex_count();
        if genus.len() != n || external.len() != n {
            return Err(Error::InvalidArgument(
                "genus and external-leg lists need one entry per vertex".into(),
            ));
        }
        let sg = Self { underlying, genus, external };
        for v in 1..=n {
            let val = sg.valency(v);
            let ok = match sg.genus[v - 1] {
                0 => val >= 3,
                1 => val >= 1 || n == 1 && sg.underlying.edge_count() == 0,
                _ => true,
            };
            if !ok {
                return Err(Error::Unstable(v));
            }
        }
        Ok(sg)
    }

    pub fn graph(&self) -> &DecoratedGraph {
        &self.underlying
    }

    pub fn vertex_genus(&self, v: usize) -> usize {
        self.genus[v - 1]
    }

    /// Internal half-edges at `v` (a self-loop counts twice) plus external legs.
    pub fn valency(&self, v: usize) -> usize {
        let internal: usize = self
            .underlying
            .edges()
            .iter()
            .map(|e| (e.head == v) as usize + (e.tail == v) as usize)
            .sum();
        internal + self.external[v - 1]
    }

    /// `b_1 + sum of vertex genera`.
    pub fn genus(&self) -> usize {
        self.underlying.betti_1() + self.genus.iter().sum::<usize>()
    }

    /// Number of undirected automorphisms preserving vertex genus. Each
    /// self-loop contributes its half-edge flip.
    pub fn automorphism_order(&self) -> Result<u64> {
        let n = self.underlying.vertex_count();
        let m = self.underlying.edge_count();
        if n > MAX_VERTICES || m > MAX_EDGES {
            return Err(Error::TooLarge(format!("{n} vertices, {m} edges")));
        }
        let classes = edge_classes(self.underlying.edges());
        let loops = self.underlying.edges().iter().filter(|e| e.is_loop()).count() as u32;
        let mut total = 0u64;
        for perm in permutations(n) {
            let admissible = (0..n).all(|v| {
                self.genus[perm[v]] == self.genus[v]
                    && (self.external[v] == 0 || perm[v] == v)
            });
            if !admissible {
                continue;
            }
            let mut count = 1u64;
            for (&(a, b), &k) in &classes {
                let (pa, pb) = (perm[a - 1] + 1, perm[b - 1] + 1);
                let key = (pa.min(pb), pa.max(pb));
                if classes.get(&key) != Some(&k) {
                    count = 0;
                    break;
                }
                count *= factorial(k);
            }
            total += count;
        }
        Ok(total << loops)
    }

    /// Contract a non-loop edge; the merged vertex carries the summed genus
    /// and legs.
    pub fn contract_edge(&self, e: usize) -> Result<StableGraph> {
        let c = self.underlying.contract_edge(e)?;
        let edge = self.underlying.edge(e);
        let gone = edge.head.max(edge.tail);
        let keep = c.merged_vertex;
        let mut genus = Vec::new();
        let mut external = Vec::new();
        for v in 1..=self.underlying.vertex_count() {
            if v == gone {
                genus[keep - 1] += self.genus[v - 1];
                external[keep - 1] += self.external[v - 1];
            } else {
                genus.push(self.genus[v - 1]);
                external.push(self.external[v - 1]);
            }
        }
        StableGraph::new(c.graph, genus, external)
    }
}

fn edge_classes(edges: &[Edge]) -> std::collections::BTreeMap<(usize, usize), usize> {
    let mut map = std::collections::BTreeMap::new();
    for e in edges {
        *map.entry((e.head.min(e.tail), e.head.max(e.tail))).or_insert(0) += 1;
    }
    map
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut cur, &mut out);
    out
}

fn heap_permute(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(a.clone());
        return;
    }
    for i in 0..k - 1 {
        heap_permute(k - 1, a, out);
        if k % 2 == 0 {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permute(k - 1, a, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::library;

    #[test]
    fn genus_examples() {
        let point = DecoratedGraph::from_pairs(1, &[]).unwrap();
        let sg = StableGraph::new(point, vec![1], vec![0]).unwrap();
        assert_eq!(sg.genus(), 1);
        assert_eq!(sg.automorphism_order().unwrap(), 1);

        let theta = StableGraph::new(library::theta(), vec![0, 0], vec![0, 0]).unwrap();
        assert_eq!(theta.genus(), 2);
        assert_eq!(theta.automorphism_order().unwrap(), 12);

        // genus-0 triangle vertices need a leg each to be stable
        let tri = StableGraph::new(library::triangle(), vec![1, 0, 0], vec![0, 1, 1]).unwrap();
        assert_eq!(tri.genus(), 2);
    }

    #[test]
    fn banana_automorphisms() {
        let b = StableGraph::new(library::banana(), vec![1, 1], vec![0, 0]).unwrap();
        assert_eq!(b.automorphism_order().unwrap(), 4);
        let b = StableGraph::new(library::banana(), vec![1, 2], vec![0, 0]).unwrap();
        assert_eq!(b.automorphism_order().unwrap(), 2);
    }

    #[test]
    fn stability_enforced() {
        assert!(matches!(
            StableGraph::new(library::triangle(), vec![0, 0, 0], vec![0, 0, 0]),
            Err(Error::Unstable(1))
        ));
    }

    #[test]
    fn contraction_keeps_genus() {
        let tri = StableGraph::new(library::triangle(), vec![1, 0, 0], vec![0, 1, 1]).unwrap();
        let c = tri.contract_edge(1).unwrap();
        assert_eq!(c.graph().vertex_count(), 2);
        assert_eq!(c.genus(), tri.genus());
    }

    #[test]
    fn too_large() {
        let pairs: Vec<(usize, usize)> = (1..7).map(|i| (i, i + 1)).collect();
        let g = DecoratedGraph::from_pairs(7, &pairs).unwrap();
        let sg = StableGraph::new(g, vec![1; 7], vec![0; 7]).unwrap();
        assert!(matches!(sg.automorphism_order(), Err(Error::TooLarge(_))));
    }
}
