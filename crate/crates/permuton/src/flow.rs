//! Exact transportation-feasibility oracle on the bipartite support graph.
//!
//! Used as the independent cross-check behind non-degeneracy: the scaling
//! iteration provides the interior witness, this module decides feasibility
//! and per-edge positivity by max-flow arguments (Edmonds-Karp, which
//! terminates for real capacities).

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    flow: f64,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    // adjacency: node -> edge indices (edge i pairs with i^1 as its reverse)
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, flow: 0.0 });
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            flow: 0.0,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn residual(&self, e: usize) -> f64 {
        self.edges[e].cap - self.edges[e].flow
    }

    pub fn flow_on(&self, e: usize) -> f64 {
        self.edges[e].flow
    }

    /// Shortest augmenting paths until exhaustion; returns the flow value.
    pub fn max_flow(&mut self, source: usize, sink: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        loop {
            let mut prev_edge = vec![usize::MAX; self.adj.len()];
            let mut queue = VecDeque::new();
            queue.push_back(source);
            let mut seen = vec![false; self.adj.len()];
            seen[source] = true;
            while let Some(v) = queue.pop_front() {
                if v == sink {
                    break;
                }
                for &e in &self.adj[v] {
                    let to = self.edges[e].to;
                    if !seen[to] && self.residual(e) > eps {
                        seen[to] = true;
                        prev_edge[to] = e;
                        queue.push_back(to);
                    }
                }
            }
            if !seen[sink] {
                return total;
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = sink;
            while v != source {
                let e = prev_edge[v];
                bottleneck = bottleneck.min(self.residual(e));
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = prev_edge[v];
                self.edges[e].flow += bottleneck;
                self.edges[e ^ 1].flow -= bottleneck;
                v = self.edges[e ^ 1].to;
            }
            total += bottleneck;
        }
    }

    /// Can `target` be reached from `start` through residual capacity > eps,
    /// without using edge `skip` or its reverse?
    pub fn residual_reachable(&self, start: usize, target: usize, skip: usize, eps: f64) -> bool {
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::new();
        queue.push_back(start);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            if v == target {
                return true;
            }
            for &e in &self.adj[v] {
                if e == skip || e == (skip ^ 1) {
                    continue;
                }
                let to = self.edges[e].to;
                if !seen[to] && self.residual(e) > eps {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        false
    }

    /// Push `amount` along a residual path from `start` to `target` (which
    /// must exist), then add it to edge `via`. Preserves flow conservation.
    pub fn reroute_through(&mut self, via: usize, start: usize, target: usize, amount: f64) {
        let mut prev_edge = vec![usize::MAX; self.adj.len()];
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::new();
        queue.push_back(start);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            if v == target {
                break;
            }
            for &e in &self.adj[v] {
                if e == via || e == (via ^ 1) {
                    continue;
                }
                let to = self.edges[e].to;
                if !seen[to] && self.residual(e) > amount {
                    seen[to] = true;
                    prev_edge[to] = e;
                    queue.push_back(to);
                }
            }
        }
        assert!(seen[target], "reroute path vanished");
        let mut v = target;
        while v != start {
            let e = prev_edge[v];
            self.edges[e].flow += amount;
            self.edges[e ^ 1].flow -= amount;
            v = self.edges[e ^ 1].to;
        }
        self.edges[via].flow += amount;
        self.edges[via ^ 1].flow -= amount;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_bipartite_flow() {
        // source 0, rows 1-2, cols 3-4, sink 5
        let mut net = FlowNetwork::new(6);
        net.add_edge(0, 1, 0.5);
        net.add_edge(0, 2, 0.5);
        let e11 = net.add_edge(1, 3, f64::INFINITY);
        net.add_edge(1, 4, f64::INFINITY);
        net.add_edge(2, 4, f64::INFINITY);
        net.add_edge(3, 5, 0.25);
        net.add_edge(4, 5, 0.75);
        let v = net.max_flow(0, 5, 1e-15);
        assert!((v - 1.0).abs() < 1e-12);
        assert!((net.flow_on(e11) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn infeasible_flow_is_short() {
        let mut net = FlowNetwork::new(4);
        net.add_edge(0, 1, 1.0);
        net.add_edge(1, 2, 0.25);
        net.add_edge(2, 3, 1.0);
        let v = net.max_flow(0, 3, 1e-15);
        assert!((v - 0.25).abs() < 1e-12);
    }
}
