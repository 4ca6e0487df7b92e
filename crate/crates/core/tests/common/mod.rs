//! Independent oracles shared by the integration tests: exhaustive cycle
//! enumeration, exhaustive path search for the Aubry set, and random graph
//! generation.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use weakkam::{build_grid, EdgeGraph};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Ring of 2..=8 nodes with stencil `{-a, 0, a}`, `gcd(a, N) = 1` so the
/// graph is strongly connected; costs uniform in `[-1, 1]`.
pub fn random_graph<R: Rng>(rng: &mut R) -> EdgeGraph {
    let n = rng.gen_range(2..=8usize);
    let coprime: Vec<usize> = (1..n).filter(|&a| gcd(a, n) == 1).collect();
    let a = coprime[rng.gen_range(0..coprime.len())] as i32;
    let stencil = vec![[-a, 0], [0, 0], [a, 0]];
    let costs = (0..3 * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    EdgeGraph::from_costs(build_grid(1, n).unwrap(), 1.0, stencil, costs).unwrap()
}

fn out_edges(g: &EdgeGraph, v: usize) -> impl Iterator<Item = usize> + '_ {
    (0..g.stencil_len()).map(move |k| g.edge_id(v, k))
}

/// Every simple cycle as a list of edge ids, each found once from its
/// smallest node.
pub fn simple_cycles(g: &EdgeGraph) -> Vec<Vec<usize>> {
    fn walk(g: &EdgeGraph, start: usize, v: usize, on_path: &mut Vec<bool>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for e in out_edges(g, v) {
            let w = g.head(e);
            if w == start {
                path.push(e);
                out.push(path.clone());
                path.pop();
            } else if w > start && !on_path[w] {
                on_path[w] = true;
                path.push(e);
                walk(g, start, w, on_path, path, out);
                path.pop();
                on_path[w] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; g.node_count()];
    for s in 0..g.node_count() {
        on_path[s] = true;
        walk(g, s, s, &mut on_path, &mut Vec::new(), &mut out);
        on_path[s] = false;
    }
    out
}

pub fn cycle_mean(g: &EdgeGraph, cycle: &[usize]) -> f64 {
    cycle.iter().map(|&e| g.cost(e)).sum::<f64>() / cycle.len() as f64
}

/// Minimum cycle mean over all simple cycles.
pub fn brute_force_lambda(g: &EdgeGraph) -> f64 {
    simple_cycles(g)
        .iter()
        .map(|c| cycle_mean(g, c))
        .fold(f64::INFINITY, f64::min)
}

/// `u(x) + c(e) − u(y) − λ`.
pub fn defects(g: &EdgeGraph, u: &[f64], lambda: f64) -> Vec<f64> {
    (0..g.edge_count())
        .map(|e| u[g.tail(e)] + g.cost(e) - u[g.head(e)] - lambda)
        .collect()
}

/// Edges `e` with defect ≤ ε admitting ε-paths of length `n` into the tail
/// and out of the head; by pigeonhole these are the edges on bi-infinite
/// ε-paths. Path existence is tabulated by length, no graph structure is
/// used beyond adjacency.
pub fn brute_force_aubry(g: &EdgeGraph, defect: &[f64], eps: f64) -> BTreeSet<usize> {
    let n = g.node_count();
    let good: Vec<usize> = (0..g.edge_count()).filter(|&e| defect[e] <= eps).collect();
    // fwd[k][v]: an ε-path of length k starts at v; bwd[k][v]: one ends at v
    let mut fwd = vec![vec![true; n]];
    let mut bwd = vec![vec![true; n]];
    for k in 1..=n {
        let mut f = vec![false; n];
        let mut b = vec![false; n];
        for &e in &good {
            f[g.tail(e)] |= fwd[k - 1][g.head(e)];
            b[g.head(e)] |= bwd[k - 1][g.tail(e)];
        }
        fwd.push(f);
        bwd.push(b);
    }
    good.into_iter()
        .filter(|&e| bwd[n][g.tail(e)] && fwd[n][g.head(e)])
        .collect()
}
