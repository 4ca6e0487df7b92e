//! Compressed adjacency, strongly connected components and reachability for
//! the subgraphs extracted from an [`EdgeGraph`](crate::graph::EdgeGraph).

/// Forward adjacency in CSR form. `targets[start[v]..start[v+1]]` lists the
/// `(head, edge label)` pairs leaving `v`, in insertion order.
#[derive(Clone, Debug)]
pub struct Csr {
    start: Vec<usize>,
    targets: Vec<(u32, u32)>,
}

impl Csr {
    /// `edges` yields `(tail, head, label)`.
    pub fn from_edges<I>(n: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, usize)> + Clone,
    {
        let mut start = vec![0usize; n + 1];
        for (t, _, _) in edges.clone() {
            start[t + 1] += 1;
        }
        for v in 0..n {
            start[v + 1] += start[v];
        }
        let mut fill = start.clone();
        let mut targets = vec![(0u32, 0u32); start[n]];
        for (t, h, l) in edges {
            targets[fill[t]] = (h as u32, l as u32);
            fill[t] += 1;
        }
        Self { start, targets }
    }

    pub fn node_count(&self) -> usize {
        self.start.len() - 1
    }

    #[inline]
    pub fn out(&self, v: usize) -> &[(u32, u32)] {
        &self.targets[self.start[v]..self.start[v + 1]]
    }

    pub fn reversed(&self) -> Self {
        let n = self.node_count();
        let edges: Vec<(usize, usize, usize)> = (0..n)
            .flat_map(|v| self.out(v).iter().map(move |&(h, l)| (h as usize, v, l as usize)))
            .collect();
        Self::from_edges(n, edges.iter().copied())
    }
}

/// Strongly connected components.
#[derive(Clone, Debug)]
pub struct Components {
    /// Component id of each node.
    pub id: Vec<u32>,
    pub count: usize,
    /// Whether the component carries at least one internal edge (a cycle).
    pub cyclic: Vec<bool>,
}

/// Iterative Tarjan. Component ids come out in reverse topological order.
pub fn strongly_connected(csr: &Csr) -> Components {
    const UNSEEN: u32 = u32::MAX;
    let n = csr.node_count();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut id = vec![UNSEEN; n];
    let mut count = 0usize;
    let mut next = 0u32;
    // (node, position in its adjacency list)
    let mut call: Vec<(u32, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root as u32, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root as u32);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let v = v as usize;
            let adj = csr.out(v);
            if *pos < adj.len() {
                let w = adj[*pos].0 as usize;
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w as u32);
                    on_stack[w] = true;
                    call.push((w as u32, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    let p = parent as usize;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack") as usize;
                        on_stack[w] = false;
                        id[w] = count as u32;
                        if w == v {
                            break;
                        }
                    }
                    count += 1;
                }
            }
        }
    }

    let mut cyclic = vec![false; count];
    for v in 0..n {
        for &(w, _) in csr.out(v) {
            if id[w as usize] == id[v] {
                cyclic[id[v] as usize] = true;
            }
        }
    }
    Components { id, count, cyclic }
}

/// Nodes reachable from any seed (seeds included).
pub fn reachable(csr: &Csr, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; csr.node_count()];
    let mut queue: Vec<usize> = Vec::new();
    for s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push(s);
        }
    }
    while let Some(v) = queue.pop() {
        for &(w, _) in csr.out(v) {
            let w = w as usize;
            if !seen[w] {
                seen[w] = true;
                queue.push(w);
            }
        }
    }
    seen
}

/// Breadth-first path from `from` to the first node satisfying `goal`,
/// returned as edge labels. `Some(vec![])` when `from` itself qualifies.
pub fn bfs_path(csr: &Csr, from: usize, goal: impl Fn(usize) -> bool) -> Option<(usize, Vec<usize>)> {
    if goal(from) {
        return Some((from, Vec::new()));
    }
    let n = csr.node_count();
    let mut pred: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut frontier = std::collections::VecDeque::from([from]);
    while let Some(v) = frontier.pop_front() {
        for &(w, l) in csr.out(v) {
            let w = w as usize;
            if seen[w] {
                continue;
            }
            seen[w] = true;
            pred[w] = Some((v as u32, l));
            if goal(w) {
                let mut labels = Vec::new();
                let mut cur = w;
                while let Some((p, l)) = pred[cur] {
                    labels.push(l as usize);
                    cur = p as usize;
                }
                labels.reverse();
                return Some((w, labels));
            }
            frontier.push_back(w);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csr(n: usize, e: &[(usize, usize)]) -> Csr {
        Csr::from_edges(n, e.iter().enumerate().map(|(i, &(a, b))| (a, b, i)))
    }

    #[test]
    fn scc_and_cyclic_flags() {
        // 0 <-> 1, 2 -> 2, 3 alone, 1 -> 3
        let g = csr(4, &[(0, 1), (1, 0), (2, 2), (1, 3)]);
        let c = strongly_connected(&g);
        assert_eq!(c.count, 3);
        assert_eq!(c.id[0], c.id[1]);
        assert!(c.cyclic[c.id[0] as usize]);
        assert!(c.cyclic[c.id[2] as usize]);
        assert!(!c.cyclic[c.id[3] as usize]);
    }

    #[test]
    fn deep_chain_does_not_overflow() {
        let n = 200_000;
        let e: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let c = strongly_connected(&csr(n, &e));
        assert_eq!(c.count, 1);
    }

    #[test]
    fn reachability_and_paths() {
        let g = csr(4, &[(0, 1), (1, 2), (3, 0)]);
        assert_eq!(reachable(&g, [0]), vec![true, true, true, false]);
        assert_eq!(reachable(&g.reversed(), [0]), vec![true, false, false, true]);
        let (end, labels) = bfs_path(&g, 0, |v| v == 2).unwrap();
        assert_eq!((end, labels), (2, vec![0, 1]));
        assert!(bfs_path(&g, 2, |v| v == 0).is_none());
    }
}
