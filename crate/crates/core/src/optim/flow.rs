use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geo::DepotId;
use crate::sim::ResponderId;

/// A responder leaving its region for a free depot elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowMove {
    pub responder: ResponderId,
    pub depot: DepotId,
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Residual network solved by successive shortest paths with Johnson
/// potentials. All initial costs are nonnegative so Dijkstra applies from the
/// first iteration.
struct Network {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

#[derive(PartialEq)]
struct State {
    dist: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Network {
    fn new(n: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Pushes up to `want` units from `s` to `t`; returns the flow achieved.
    fn min_cost_flow(&mut self, s: usize, t: usize, want: i64) -> i64 {
        let n = self.adj.len();
        let mut potential = vec![0.0; n];
        let mut flow = 0;
        while flow < want {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev_edge = vec![usize::MAX; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(State { dist: 0.0, node: s });
            while let Some(State { dist: d, node: u }) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap <= 0 {
                        continue;
                    }
                    // reduced costs are >= 0 up to rounding
                    let nd = d + (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        prev_edge[edge.to] = e;
                        heap.push(State { dist: nd, node: edge.to });
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = want - flow;
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            flow += push;
        }
        flow
    }
}

/// Chooses which responders leave shrinking regions and which free depots of
/// growing regions they take, minimizing the summed `cost(responder, depot)`.
///
/// `region_responders[g]` must list the `counts_prev[g]` responders currently
/// in region `g`; `free_depots[g]` the unoccupied depots of region `g`. The
/// network is source -> leaving regions (capacity = surplus) -> their
/// responders (1) -> free depots of arriving regions (1, cost) -> arriving
/// regions (1) -> sink (capacity = deficit).
pub fn min_cost_flow_assign(
    counts_prev: &[usize],
    counts_new: &[usize],
    region_responders: &[Vec<ResponderId>],
    free_depots: &[Vec<DepotId>],
    cost: impl Fn(ResponderId, DepotId) -> f64,
) -> Result<Vec<FlowMove>> {
    let k = counts_prev.len();
    if counts_new.len() != k || region_responders.len() != k || free_depots.len() != k {
        return Err(Error::Input("per-region inputs disagree on region count".into()));
    }
    let surplus: usize = (0..k).map(|g| counts_prev[g].saturating_sub(counts_new[g])).sum();
    let deficit: usize = (0..k).map(|g| counts_new[g].saturating_sub(counts_prev[g])).sum();
    if surplus != deficit {
        return Err(Error::Logic(format!("{surplus} responders leave but {deficit} arrive")));
    }
    for g in 0..k {
        if region_responders[g].len() != counts_prev[g] {
            return Err(Error::Input(format!("region {g} lists {} responders, count says {}", region_responders[g].len(), counts_prev[g])));
        }
        if counts_new[g] > counts_prev[g] && counts_new[g] - counts_prev[g] > free_depots[g].len() {
            return Err(Error::Infeasible(format!("region {g} lacks free depots")));
        }
    }
    if surplus == 0 {
        return Ok(Vec::new());
    }

    let leaving: Vec<usize> = (0..k).filter(|&g| counts_prev[g] > counts_new[g]).collect();
    let arriving: Vec<usize> = (0..k).filter(|&g| counts_new[g] > counts_prev[g]).collect();
    let mut movers: Vec<(usize, ResponderId)> =
        leaving.iter().flat_map(|&g| region_responders[g].iter().map(move |&v| (g, v))).collect();
    movers.sort_by_key(|&(_, v)| v);
    let mut targets: Vec<(usize, DepotId)> =
        arriving.iter().flat_map(|&g| free_depots[g].iter().map(move |&d| (g, d))).collect();
    targets.sort_by_key(|&(_, d)| d);

    let source = 0;
    let sink = 1;
    let leave_base = 2;
    let mover_base = leave_base + leaving.len();
    let target_base = mover_base + movers.len();
    let arrive_base = target_base + targets.len();
    let mut net = Network::new(arrive_base + arriving.len());

    for (i, &g) in leaving.iter().enumerate() {
        net.add_edge(source, leave_base + i, (counts_prev[g] - counts_new[g]) as i64, 0.0);
    }
    for (j, &(g, _)) in movers.iter().enumerate() {
        let i = leaving.iter().position(|&x| x == g).expect("leaving region");
        net.add_edge(leave_base + i, mover_base + j, 1, 0.0);
    }
    let mut assign_edges = Vec::with_capacity(movers.len() * targets.len());
    for (j, &(_, v)) in movers.iter().enumerate() {
        for (q, &(_, d)) in targets.iter().enumerate() {
            let c = cost(v, d);
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::Input(format!("move cost for ({v}, {d}) must be finite and nonnegative")));
            }
            let e = net.add_edge(mover_base + j, target_base + q, 1, c);
            assign_edges.push((e, v, d));
        }
    }
    for (q, &(g, _)) in targets.iter().enumerate() {
        let i = arriving.iter().position(|&x| x == g).expect("arriving region");
        net.add_edge(target_base + q, arrive_base + i, 1, 0.0);
    }
    for (i, &g) in arriving.iter().enumerate() {
        net.add_edge(arrive_base + i, sink, (counts_new[g] - counts_prev[g]) as i64, 0.0);
    }

    let got = net.min_cost_flow(source, sink, surplus as i64);
    if got != surplus as i64 {
        return Err(Error::Infeasible(format!("only {got} of {surplus} responders can be moved")));
    }
    let mut moves: Vec<FlowMove> = assign_edges
        .into_iter()
        .filter(|&(e, _, _)| net.edges[e].cap == 0)
        .map(|(_, responder, depot)| FlowMove { responder, depot })
        .collect();
    moves.sort();
    Ok(moves)
}
