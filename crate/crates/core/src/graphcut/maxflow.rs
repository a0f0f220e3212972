//! Dinic max-flow on a compressed adjacency layout with `f64` capacities.

/// Residual capacities at or below this are treated as saturated.
pub const CAPACITY_EPS: f64 = 1e-12;

/// s-t flow network over `n` inner nodes plus an implicit source and sink.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    n: usize,
    edges: Vec<(u32, u32, f64, f64)>,
}

/// Solved network: flow value and the source-side node set of a minimum cut.
#[derive(Debug, Clone, PartialEq)]
pub struct MinCutResult {
    pub flow: f64,
    /// `true` for inner nodes reachable from the source in the residual graph.
    pub source_side: Vec<bool>,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        assert!(n + 2 <= u32::MAX as usize, "flow graph too large");
        Self { n, edges: Vec::new() }
    }

    pub fn source(&self) -> usize {
        self.n
    }

    pub fn sink(&self) -> usize {
        self.n + 1
    }

    /// Arc `u -> v` with capacity `cap` and its reverse with `rev_cap`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) {
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0);
        self.edges.push((u as u32, v as u32, cap, rev_cap));
    }

    /// Source arc `s -> u` and sink arc `u -> t`; zero capacities are skipped.
    pub fn add_terminal(&mut self, u: usize, source_cap: f64, sink_cap: f64) {
        if source_cap > 0.0 {
            self.add_edge(self.source(), u, source_cap, 0.0);
        }
        if sink_cap > 0.0 {
            self.add_edge(u, self.sink(), sink_cap, 0.0);
        }
    }

    pub fn solve(&self) -> MinCutResult {
        Residual::new(self).run()
    }
}

struct Residual {
    start: Vec<usize>,
    to: Vec<u32>,
    cap: Vec<f64>,
    rev: Vec<usize>,
    s: usize,
    t: usize,
}

impl Residual {
    fn new(g: &FlowGraph) -> Self {
        let nodes = g.n + 2;
        let mut degree = vec![0usize; nodes + 1];
        for &(u, v, _, _) in &g.edges {
            degree[u as usize + 1] += 1;
            degree[v as usize + 1] += 1;
        }
        for i in 0..nodes {
            degree[i + 1] += degree[i];
        }
        let start = degree;
        let m = start[nodes];
        let mut fill = start.clone();
        let (mut to, mut cap, mut rev) = (vec![0u32; m], vec![0.0; m], vec![0usize; m]);
        for &(u, v, c, rc) in &g.edges {
            let (a, b) = (fill[u as usize], fill[v as usize]);
            fill[u as usize] += 1;
            fill[v as usize] += 1;
            to[a] = v;
            cap[a] = c;
            rev[a] = b;
            to[b] = u;
            cap[b] = rc;
            rev[b] = a;
        }
        Self { start, to, cap, rev, s: g.n, t: g.n + 1 }
    }

    fn levels(&self) -> Vec<u32> {
        let mut level = vec![u32::MAX; self.start.len() - 1];
        let mut queue = std::collections::VecDeque::new();
        level[self.s] = 0;
        queue.push_back(self.s);
        while let Some(u) = queue.pop_front() {
            for a in self.start[u]..self.start[u + 1] {
                let v = self.to[a] as usize;
                if self.cap[a] > CAPACITY_EPS && level[v] == u32::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    /// Blocking flow on the level graph by iterative depth-first search.
    fn blocking_flow(&mut self, level: &mut [u32]) -> f64 {
        let mut next: Vec<usize> = self.start[..self.start.len() - 1].to_vec();
        let mut path: Vec<usize> = Vec::new();
        let mut total = 0.0;
        let mut u = self.s;
        loop {
            if u == self.t {
                let bottleneck = path.iter().map(|&a| self.cap[a]).fold(f64::INFINITY, f64::min);
                for &a in &path {
                    self.cap[a] -= bottleneck;
                    self.cap[self.rev[a]] += bottleneck;
                }
                total += bottleneck;
                let first_saturated = path.iter().position(|&a| self.cap[a] <= CAPACITY_EPS).unwrap_or(0);
                path.truncate(first_saturated);
                u = path.last().map_or(self.s, |&a| self.to[a] as usize);
                continue;
            }
            let mut advanced = false;
            while next[u] < self.start[u + 1] {
                let a = next[u];
                let v = self.to[a] as usize;
                if self.cap[a] > CAPACITY_EPS && level[v] == level[u] + 1 {
                    path.push(a);
                    u = v;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if advanced {
                continue;
            }
            // dead end: block the node and retreat
            level[u] = u32::MAX;
            match path.pop() {
                None => return total,
                Some(a) => {
                    u = self.to[self.rev[a]] as usize;
                    next[u] += 1;
                }
            }
        }
    }

    fn run(mut self) -> MinCutResult {
        let mut flow = 0.0;
        loop {
            let mut level = self.levels();
            if level[self.t] == u32::MAX {
                break;
            }
            flow += self.blocking_flow(&mut level);
        }
        let reach = self.levels();
        let source_side = reach[..self.s].iter().map(|&l| l != u32::MAX).collect();
        MinCutResult { flow, source_side }
    }
}
