use rand_chacha::ChaCha8Rng;

use super::HighLevelPlanner;
use crate::error::{Error, Result};
use crate::features::{arrival_time, CityObs};
use crate::geo::{DepotId, RegionId, World};
use crate::optim::{greedy_redistribute, min_cost_flow_assign, FlowMove};
use crate::sim::SimState;

fn proportions(weights: &[f64], fallback: &[usize]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        let t: usize = fallback.iter().sum();
        fallback.iter().map(|&c| c as f64 / t.max(1) as f64).collect()
    }
}

fn region_caps(world: &World) -> Vec<usize> {
    (0..world.n_regions()).map(|g| world.segmentation.depots(g).len()).collect()
}

/// Starting depots: region counts proportional to time-averaged region
/// rates, then the lowest-id depots within each region.
pub fn initial_placement(world: &World, n_responders: usize) -> Result<Vec<(DepotId, RegionId)>> {
    let caps = region_caps(world);
    if n_responders == 0 {
        return Err(Error::Config("fleet must contain at least one responder".into()));
    }
    if n_responders > caps.iter().sum() {
        return Err(Error::Config(format!("{n_responders} responders exceed {} depots", caps.iter().sum::<usize>())));
    }
    let mean = world.rates.mean_rates();
    let mut weights = vec![0.0; world.n_regions()];
    for (c, r) in mean.iter().enumerate() {
        weights[world.segmentation.region_of_cell(c)] += r;
    }
    let counts = greedy_redistribute(&proportions(&weights, &caps), n_responders, &caps)?;
    let mut out = Vec::with_capacity(n_responders);
    for (g, &n) in counts.iter().enumerate() {
        for &d in &world.segmentation.depots(g)[..n] {
            out.push((d, g));
        }
    }
    Ok(out)
}

/// Moves responders between regions so the per-region counts become
/// `counts_new`, choosing movers and destination depots by minimum total
/// arrival time.
pub fn apply_hlp(counts_new: &[usize], state: &mut SimState, world: &World) -> Result<Vec<FlowMove>> {
    let k = world.n_regions();
    if counts_new.len() != k {
        return Err(Error::Input(format!("{} counts for {k} regions", counts_new.len())));
    }
    let counts_prev = state.region_counts(k);
    let members: Vec<_> = (0..k).map(|g| state.region_responders(g)).collect();
    let mut occupied = vec![false; world.depots.len()];
    for r in &state.responders {
        occupied[r.depot] = true;
    }
    let free: Vec<Vec<DepotId>> =
        (0..k).map(|g| world.segmentation.depots(g).iter().copied().filter(|&d| !occupied[d]).collect()).collect();
    let moves = {
        let st = &*state;
        min_cost_flow_assign(&counts_prev, counts_new, &members, &free, |v, d| arrival_time(&st.responders[v], d, st.now, world))?
    };
    for m in &moves {
        state.set_region(m.responder, world.segmentation.region_of_depot(m.depot));
        state.reassign(m.responder, m.depot, world)?;
    }
    if state.region_counts(k) != counts_new {
        return Err(Error::Logic("region counts differ from the requested distribution".into()));
    }
    Ok(moves)
}

/// City planner that splits the fleet in proportion to observed region
/// rates (by depot count when every rate is zero).
#[derive(Debug, Clone, Default)]
pub struct ProportionalHlp;

impl HighLevelPlanner for ProportionalHlp {
    fn plan(&mut self, obs: &CityObs, caps: &[usize], _: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        greedy_redistribute(&proportions(&obs.region_rates, caps), obs.n_responders, caps)
    }
}
