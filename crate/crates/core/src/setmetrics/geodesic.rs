use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::matrix::{DissimKind, DissimilarityMatrix};

pub const DEFAULT_K_NEIGHBORS: usize = 10;

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Symmetric k-nearest-neighbour graph of `d`, bridged until connected by
/// repeatedly adding the cheapest edge between two components.
pub fn neighbor_graph(d: &DissimilarityMatrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = d.n;
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|j| *j != i).collect();
        order.sort_by(|a, b| d.get(i, *a).total_cmp(&d.get(i, *b)).then(a.cmp(b)));
        for &j in order.iter().take(k) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if adj[i][j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    loop {
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if roots[i] != roots[j] && best.is_none_or(|(w, _, _)| d.get(i, j) < w) {
                    best = Some((d.get(i, j), i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        adj[i][j] = true;
        adj[j][i] = true;
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a] = b;
    }
    (0..n).map(|i| (0..n).filter(|j| adj[i][*j]).map(|j| (j, d.get(i, j))).collect()).collect()
}

pub fn dijkstra(graph: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Item(0.0, source));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &graph[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

/// Shortest-path distances over the neighbour graph of `d`.
pub fn geodesic_complete(d: &DissimilarityMatrix, k_neighbors: usize) -> DissimilarityMatrix {
    let graph = neighbor_graph(d, k_neighbors);
    let n = d.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n..(i + 1) * n].copy_from_slice(&dijkstra(&graph, i));
    }
    // Symmetrize against rounding in the summation order.
    for i in 0..n {
        for j in i + 1..n {
            let v = values[i * n + j].min(values[j * n + i]);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    let kind = match d.kind {
        DissimKind::Gospa => DissimKind::GGospa,
        k => k,
    };
    let mut params = d.params.clone();
    params.push(("k_neighbors".into(), k_neighbors as f64));
    DissimilarityMatrix::new(kind, n, values, params)
}
