use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::check_region;
use crate::error::{Error, Result};
use crate::features::RegionObs;
use crate::geo::{CellId, DepotId, World, HOUR_S};
use crate::hierarchy::{EpochCause, LowLevelPlanner};
use crate::sim::SimState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub iteration_limit: usize,
    /// Per-second discount on response times in the future.
    pub discount: f64,
    pub uct_c: f64,
    /// Sampled incident futures each assignment is scored against.
    pub n_samples: usize,
    pub horizon_s: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self { iteration_limit: 1000, discount: 0.99995, uct_c: 1.44, n_samples: 50, horizon_s: 7200.0 }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iteration_limit > 0
            && self.discount > 0.0
            && self.discount <= 1.0
            && self.uct_c > 0.0
            && self.n_samples > 0
            && self.horizon_s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Stop,
    Move { v: usize, j: usize },
}

struct Node {
    assign: Vec<usize>,
    moved: Vec<bool>,
    terminal: bool,
    children: Vec<(Action, usize)>,
    untried: Vec<Action>,
    visits: u32,
    total: f64,
}

impl Node {
    fn new(assign: Vec<usize>, moved: Vec<bool>, terminal: bool, n_depots: usize) -> Self {
        let mut untried = Vec::new();
        if !terminal {
            untried.push(Action::Stop);
            let mut occupied = vec![false; n_depots];
            for &j in &assign {
                occupied[j] = true;
            }
            for v in (0..assign.len()).filter(|&v| !moved[v]) {
                for j in (0..n_depots).filter(|&j| !occupied[j]) {
                    untried.push(Action::Move { v, j });
                }
            }
        }
        Self { assign, moved, terminal, children: Vec::new(), untried, visits: 0, total: 0.0 }
    }

    fn child_state(&self, a: Action, n_depots: usize) -> Node {
        match a {
            Action::Stop => Node::new(self.assign.clone(), self.moved.clone(), true, n_depots),
            Action::Move { v, j } => {
                let mut assign = self.assign.clone();
                let mut moved = self.moved.clone();
                assign[v] = j;
                moved[v] = true;
                Node::new(assign, moved, false, n_depots)
            }
        }
    }
}

/// Region-local rollout model: responders start free at their depots after
/// the observed arrival times, incidents go to whoever can reach them first.
struct Rollout {
    /// Seconds until each responder is idle at each depot.
    phi: Vec<Vec<f64>>,
    /// Depot -> incident travel, depots x region cells.
    go: Vec<Vec<f64>>,
    /// Scene -> hospital -> depot, depots x region cells.
    back: Vec<Vec<f64>>,
    t_serve: f64,
    discount: f64,
    futures: Vec<Vec<(f64, usize)>>,
}

impl Rollout {
    fn score(&self, assign: &[usize], free: &mut [f64]) -> f64 {
        let mut sum = 0.0;
        for future in &self.futures {
            for (v, &j) in assign.iter().enumerate() {
                free[v] = self.phi[v][j];
            }
            for &(dt, c) in future {
                let mut best = 0;
                let mut best_rt = f64::INFINITY;
                for (v, &j) in assign.iter().enumerate() {
                    let rt = (free[v] - dt).max(0.0) + self.go[j][c];
                    if rt < best_rt {
                        best_rt = rt;
                        best = v;
                    }
                }
                sum += self.discount.powf(dt) * best_rt;
                free[best] = dt + best_rt + self.t_serve + self.back[assign[best]][c];
            }
        }
        -sum / self.futures.len() as f64
    }
}

/// Poisson arrivals over the cells of one region in `[now, now + horizon)`,
/// as (offset from now, local cell index).
fn sample_future(world: &World, cells: &[CellId], now: f64, horizon: f64, rng: &mut impl Rng) -> Vec<(f64, usize)> {
    let end = now + horizon;
    let mut out = Vec::new();
    let mut t = now;
    while t < end {
        let seg_end = world.rates.next_boundary(t).min(end);
        let rates = world.rates.bucket(t);
        let w: Vec<f64> = cells.iter().map(|&c| rates[c]).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            let gap = Exp::new(total / HOUR_S).expect("positive rate");
            let pick = WeightedIndex::new(&w).expect("positive weights");
            let mut s = t + gap.sample(rng);
            while s < seg_end {
                out.push((s - now, pick.sample(rng)));
                s += gap.sample(rng);
            }
        }
        t = seg_end;
    }
    out
}

fn uct_child(node: &Node, nodes: &[Node], c: f64, lo: f64, hi: f64) -> usize {
    let ln_n = (node.visits.max(1) as f64).ln();
    let mut best = node.children[0].1;
    let mut best_s = f64::NEG_INFINITY;
    for &(_, k) in &node.children {
        let ch = &nodes[k];
        let mean = ch.total / ch.visits as f64;
        let q = if hi > lo { (mean - lo) / (hi - lo) } else { 0.5 };
        let s = q + c * (ln_n / ch.visits as f64).sqrt();
        if s > best_s {
            best_s = s;
            best = k;
        }
    }
    best
}

/// UCT search over single-responder moves within one region, scored against
/// sampled incident futures; returns one depot per responder of `obs`.
pub fn mcts_plan(obs: &RegionObs, state: &SimState, world: &World, cfg: &MctsConfig, rng: &mut impl Rng) -> Result<Vec<DepotId>> {
    cfg.validate()?;
    check_region(obs)?;
    let n = obs.n_responders();
    let m = obs.n_depots();
    let now = state.now;

    let mut start = vec![usize::MAX; n];
    let mut occupied = vec![false; m];
    for (v, &id) in obs.responders.iter().enumerate() {
        if let Some(j) = obs.depots.iter().position(|&d| d == state.responders[id].depot) {
            if !occupied[j] {
                start[v] = j;
                occupied[j] = true;
            }
        }
    }
    for v in 0..n {
        if start[v] == usize::MAX {
            let j = occupied.iter().position(|o| !o).expect("enough depots");
            start[v] = j;
            occupied[j] = true;
        }
    }

    let cells = world.segmentation.cells(obs.region);
    let hospital_of: Vec<CellId> = cells.iter().map(|&c| world.hospitals[world.nearest_hospital(c, now)].cell).collect();
    let mut go = vec![vec![0.0; cells.len()]; m];
    let mut back = vec![vec![0.0; cells.len()]; m];
    for (j, &d) in obs.depots.iter().enumerate() {
        let dc = world.depot_cell(d);
        for (i, &c) in cells.iter().enumerate() {
            go[j][i] = world.travel.time(dc, c, now);
            back[j][i] = world.travel.time(c, hospital_of[i], now) + world.travel.time(hospital_of[i], dc, now);
        }
    }
    let rollout = Rollout {
        phi: (0..n).map(|v| obs.phi.row(v).to_vec()).collect(),
        go,
        back,
        t_serve: state.config().t_serve_s,
        discount: cfg.discount,
        futures: (0..cfg.n_samples).map(|_| sample_future(world, cells, now, cfg.horizon_s, rng)).collect(),
    };

    let mut nodes = vec![Node::new(start, vec![false; n], false, m)];
    let mut free = vec![0.0; n];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut path = Vec::new();
    for _ in 0..cfg.iteration_limit {
        path.clear();
        let mut cur = 0;
        path.push(cur);
        while !nodes[cur].terminal && nodes[cur].untried.is_empty() && !nodes[cur].children.is_empty() {
            cur = uct_child(&nodes[cur], &nodes, cfg.uct_c, lo, hi);
            path.push(cur);
        }
        if !nodes[cur].untried.is_empty() {
            let k = rng.gen_range(0..nodes[cur].untried.len());
            let a = nodes[cur].untried.swap_remove(k);
            let child = nodes[cur].child_state(a, m);
            nodes.push(child);
            let id = nodes.len() - 1;
            nodes[cur].children.push((a, id));
            cur = id;
            path.push(cur);
        }
        let value = rollout.score(&nodes[cur].assign, &mut free);
        lo = lo.min(value);
        hi = hi.max(value);
        for &k in &path {
            nodes[k].visits += 1;
            nodes[k].total += value;
        }
    }

    // follow the most visited line
    let mut cur = 0;
    while let Some(&(_, k)) = nodes[cur].children.iter().max_by(|a, b| nodes[a.1].visits.cmp(&nodes[b.1].visits).then(b.1.cmp(&a.1))) {
        cur = k;
        if nodes[cur].terminal {
            break;
        }
    }
    Ok(nodes[cur].assign.iter().map(|&j| obs.depots[j]).collect())
}

pub struct MctsLlp {
    pub config: MctsConfig,
}

impl LowLevelPlanner for MctsLlp {
    fn plan(&mut self, obs: &RegionObs, _: EpochCause, state: &SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        mcts_plan(obs, state, world, &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::toy_single_region;
    use rand::SeedableRng;

    fn start(depot: DepotId) -> (World, SimState) {
        let world = toy_single_region().world().unwrap();
        let state = SimState::new(&world, Default::default(), &[(depot, 0)]).unwrap();
        (world, state)
    }

    #[test]
    fn lone_depot_is_kept() {
        let (world, state) = start(0);
        let mut obs = RegionObs::capture(&state, &world, 0);
        obs.depots.truncate(1);
        obs.depot_rates.truncate(1);
        obs.phi = crate::nn::Matrix::from_vec(1, 1, vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mcts_plan(&obs, &state, &world, &MctsConfig::default(), &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn finds_the_busy_depot() {
        let (world, state) = start(0);
        let obs = RegionObs::capture(&state, &world, 0);
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if mcts_plan(&obs, &state, &world, &MctsConfig::default(), &mut rng).unwrap() == vec![1] {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn one_iteration_is_legal() {
        let (world, state) = start(1);
        let obs = RegionObs::capture(&state, &world, 0);
        let cfg = MctsConfig { iteration_limit: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = mcts_plan(&obs, &state, &world, &cfg, &mut rng).unwrap();
        assert_eq!(d.len(), 1);
        assert!(obs.depots.contains(&d[0]));
    }

    #[test]
    fn seeded_search_repeats() {
        let (world, state) = start(0);
        let obs = RegionObs::capture(&state, &world, 0);
        let cfg = MctsConfig { iteration_limit: 200, n_samples: 10, ..Default::default() };
        let a = mcts_plan(&obs, &state, &world, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mcts_plan(&obs, &state, &world, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = MctsConfig { n_samples: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
