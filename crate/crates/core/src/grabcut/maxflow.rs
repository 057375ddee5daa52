//! s-t minimum cut by Dinic's blocking-flow max-flow.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Outcome of a minimum cut. `source_side[i]` is true when node `i` stays
/// connected to the source in the residual graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CutResult {
    pub source_side: Vec<bool>,
    pub cut_value: f64,
}

/// Flow network over `n` nodes plus implicit source and sink terminals.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    n: usize,
    // edge arrays; edge e and e ^ 1 are residual twins
    to: Vec<usize>,
    cap: Vec<f64>,
    original: Vec<f64>,
    terminal: Vec<(f64, f64)>,
}

const UNSET: usize = usize::MAX;

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            to: Vec::new(),
            cap: Vec::new(),
            original: Vec::new(),
            terminal: vec![(0.0, 0.0); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Adds capacity from the source to `u` and from `u` to the sink.
    pub fn add_terminal(&mut self, u: usize, source_cap: f64, sink_cap: f64) {
        self.terminal[u].0 += source_cap;
        self.terminal[u].1 += sink_cap;
    }

    /// Adds `u -> v` with capacity `cap` and `v -> u` with `rev_cap`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) {
        self.to.push(v);
        self.cap.push(cap);
        self.original.push(cap);
        self.to.push(u);
        self.cap.push(rev_cap);
        self.original.push(rev_cap);
    }

    fn validate(&self) -> Result<()> {
        let bad = |c: &f64| !(c.is_finite() && *c >= 0.0);
        if self.original.iter().any(bad) || self.terminal.iter().any(|(s, t)| bad(s) || bad(t)) {
            return Err(Error::arg("capacities must be finite and non-negative"));
        }
        if self.to.iter().any(|&v| v >= self.n) {
            return Err(Error::arg("edge endpoint out of range"));
        }
        Ok(())
    }

    /// Solves for the maximum flow and reports the corresponding minimum cut.
    pub fn solve(&self) -> Result<CutResult> {
        self.validate()?;
        let n = self.n;
        let (s, t) = (n, n + 1);
        let total = n + 2;

        // residual network including terminal arcs; direct s->u->t flow is
        // pushed up front so each node keeps at most one terminal arc
        let mut to = self.to.clone();
        let mut cap = self.cap.clone();
        let mut tail: Vec<usize> = (0..to.len()).map(|e| to[e ^ 1]).collect();
        let mut scale = 0.0f64;
        for (u, &(a, b)) in self.terminal.iter().enumerate() {
            let direct = a.min(b);
            let (a, b) = (a - direct, b - direct);
            scale = scale.max(a).max(b);
            if a > 0.0 {
                to.extend([u, s]);
                cap.extend([a, 0.0]);
                tail.extend([s, u]);
            }
            if b > 0.0 {
                to.extend([t, u]);
                cap.extend([b, 0.0]);
                tail.extend([u, t]);
            }
        }
        scale = self.original.iter().fold(scale, |m, &c| m.max(c));
        let eps = scale * 1e-13;

        // CSR adjacency
        let mut start = vec![0usize; total + 1];
        for &u in &tail {
            start[u + 1] += 1;
        }
        for i in 0..total {
            start[i + 1] += start[i];
        }
        let mut adj = vec![0usize; tail.len()];
        let mut fill = start.clone();
        for (e, &u) in tail.iter().enumerate() {
            adj[fill[u]] = e;
            fill[u] += 1;
        }

        let mut level = vec![UNSET; total];
        let mut iter = vec![0usize; total];
        let mut queue = VecDeque::new();
        let mut path: Vec<usize> = Vec::new();
        loop {
            level.fill(UNSET);
            level[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &e in &adj[start[u]..start[u + 1]] {
                    let v = to[e];
                    if cap[e] > eps && level[v] == UNSET {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == UNSET {
                break;
            }
            iter.copy_from_slice(&start[..total]);
            path.clear();
            let mut u = s;
            loop {
                if u == t {
                    let f = path.iter().map(|&e| cap[e]).fold(f64::INFINITY, f64::min);
                    for &e in &path {
                        cap[e] -= f;
                        cap[e ^ 1] += f;
                    }
                    let cut = path.iter().position(|&e| cap[e] <= eps).unwrap_or(0);
                    path.truncate(cut);
                    u = path.last().map_or(s, |&e| to[e]);
                    continue;
                }
                let mut advanced = false;
                while iter[u] < start[u + 1] {
                    let e = adj[iter[u]];
                    let v = to[e];
                    if cap[e] > eps && level[v] == level[u] + 1 {
                        path.push(e);
                        u = v;
                        advanced = true;
                        break;
                    }
                    iter[u] += 1;
                }
                if !advanced {
                    if u == s {
                        break;
                    }
                    level[u] = UNSET;
                    let e = path.pop().expect("non-source node has an incoming path edge");
                    u = tail[e];
                    iter[u] += 1;
                }
            }
        }

        // source side = reachable from s in the final residual graph
        let mut reach = vec![false; total];
        reach[s] = true;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &adj[start[u]..start[u + 1]] {
                let v = to[e];
                if cap[e] > eps && !reach[v] {
                    reach[v] = true;
                    queue.push_back(v);
                }
            }
        }
        reach.truncate(n);
        let cut_value = self.cut_value(&reach);
        Ok(CutResult {
            source_side: reach,
            cut_value,
        })
    }

    /// Cost of a labeling: terminal arcs into sink-side nodes, arcs out of
    /// source-side nodes, and edges crossing from the source side to the sink side.
    pub fn cut_value(&self, source_side: &[bool]) -> f64 {
        let mut v = 0.0;
        for (u, &(a, b)) in self.terminal.iter().enumerate() {
            v += if source_side[u] { b } else { a };
        }
        for e in 0..self.to.len() {
            let (u, w) = (self.to[e ^ 1], self.to[e]);
            if source_side[u] && !source_side[w] {
                v += self.original[e];
            }
        }
        v
    }
}

/// Minimum s-t cut over `nodes` with per-node `(source_cap, sink_cap)` and
/// directed edges `(u, v, cap)`.
pub fn min_cut(nodes: usize, terminal_caps: &[(f64, f64)], edges: &[(usize, usize, f64)]) -> Result<CutResult> {
    if terminal_caps.len() != nodes {
        return Err(Error::arg(format!(
            "{} terminal capacities for {nodes} nodes",
            terminal_caps.len()
        )));
    }
    let mut g = FlowGraph::new(nodes);
    for (u, &(a, b)) in terminal_caps.iter().enumerate() {
        g.add_terminal(u, a, b);
    }
    for &(u, v, c) in edges {
        if u >= nodes || v >= nodes {
            return Err(Error::arg(format!("edge ({u}, {v}) out of range")));
        }
        g.add_edge(u, v, c, 0.0);
    }
    g.solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node() {
        let r = min_cut(1, &[(3.0, 1.0)], &[]).unwrap();
        assert_eq!(r.source_side, vec![true]);
        assert_eq!(r.cut_value, 1.0);
    }

    #[test]
    fn chain() {
        // s -> a (5), a -> b (2), b -> t (5)
        let r = min_cut(2, &[(5.0, 0.0), (0.0, 5.0)], &[(0, 1, 2.0)]).unwrap();
        assert_eq!(r.cut_value, 2.0);
        assert_eq!(r.source_side, vec![true, false]);
    }

    #[test]
    fn zero_graph() {
        let r = min_cut(3, &[(0.0, 0.0); 3], &[(0, 1, 0.0), (1, 2, 0.0)]).unwrap();
        assert_eq!(r.cut_value, 0.0);
    }

    #[test]
    fn rejects_negative_capacity() {
        assert!(min_cut(1, &[(-1.0, 0.0)], &[]).is_err());
        assert!(min_cut(2, &[(1.0, 0.0); 2], &[(0, 5, 1.0)]).is_err());
        assert!(min_cut(2, &[(1.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn long_path_does_not_recurse() {
        let n = 200_000;
        let mut caps = vec![(0.0, 0.0); n];
        caps[0].0 = 1.0;
        caps[n - 1].1 = 1.0;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 2.0)).collect();
        assert_eq!(min_cut(n, &caps, &edges).unwrap().cut_value, 1.0);
    }
}
