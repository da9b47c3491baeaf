//! Comparison planners for the region level: search, facility location,
//! greedy rate ranking, a fixed allocation and a random one.

mod mcts;
mod pmedian;

pub use mcts::{mcts_plan, MctsConfig, MctsLlp};
pub use pmedian::{pmedian_plan, PMedianLlp, PMedianProblem};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::RegionObs;
use crate::geo::{DepotId, World};
use crate::hierarchy::{EpochCause, LowLevelPlanner};
use crate::nn::Matrix;
use crate::optim::min_cost_assignment;
use crate::sim::SimState;

/// Maps responders onto the chosen depot columns by minimum total arrival
/// time and returns depot ids in responder order.
pub fn match_to_depots(obs: &RegionObs, chosen: &[usize]) -> Result<Vec<DepotId>> {
    let n = obs.n_responders();
    if chosen.len() != n {
        return Err(Error::Logic(format!("{} depots chosen for {n} responders", chosen.len())));
    }
    let mut cost = Matrix::zeros(n, n);
    for v in 0..n {
        for (k, &j) in chosen.iter().enumerate() {
            cost.set(v, k, obs.phi.get(v, j));
        }
    }
    let assign = min_cost_assignment(&cost)?;
    Ok(assign.into_iter().map(|k| obs.depots[chosen[k]]).collect())
}

fn check_region(obs: &RegionObs) -> Result<()> {
    if obs.n_responders() == 0 {
        return Err(Error::Input(format!("region {} has no responders", obs.region)));
    }
    if obs.n_responders() > obs.n_depots() {
        return Err(Error::Infeasible(format!(
            "region {} has {} responders for {} depots",
            obs.region,
            obs.n_responders(),
            obs.n_depots()
        )));
    }
    Ok(())
}

/// Depots with the highest nearby incident rates (lowest index on ties),
/// matched to responders by travel time.
pub fn greedy_plan(obs: &RegionObs) -> Result<Vec<DepotId>> {
    check_region(obs)?;
    let mut order: Vec<usize> = (0..obs.n_depots()).collect();
    order.sort_by(|&a, &b| obs.depot_rates[b].total_cmp(&obs.depot_rates[a]).then(a.cmp(&b)));
    order.truncate(obs.n_responders());
    order.sort_unstable();
    match_to_depots(obs, &order)
}

pub struct GreedyLlp;

impl LowLevelPlanner for GreedyLlp {
    fn plan(&mut self, obs: &RegionObs, _: EpochCause, _: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        greedy_plan(obs)
    }
}

/// Keeps every responder at the depot it already has.
pub struct StaticLlp;

/// The allocation a static planner returns.
pub fn static_plan(obs: &RegionObs, state: &SimState) -> Vec<DepotId> {
    obs.responders.iter().map(|&v| state.responders[v].depot).collect()
}

impl LowLevelPlanner for StaticLlp {
    fn plan(&mut self, obs: &RegionObs, _: EpochCause, state: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        Ok(static_plan(obs, state))
    }
}

/// Uniformly random distinct depots.
pub struct RandomLlp;

impl LowLevelPlanner for RandomLlp {
    fn plan(&mut self, obs: &RegionObs, _: EpochCause, _: &SimState, _: &World, rng: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        check_region(obs)?;
        let mut ds = obs.depots.clone();
        ds.shuffle(rng);
        ds.truncate(obs.n_responders());
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::toy_single_region;
    use rand::SeedableRng;

    fn obs(phi: Vec<Vec<f64>>, rates: Vec<f64>) -> RegionObs {
        let m = rates.len();
        RegionObs { region: 0, responders: (0..phi.len()).collect(), depots: (10..10 + m).collect(), phi: Matrix::from_rows(&phi), depot_rates: rates }
    }

    #[test]
    fn greedy_single_responder_takes_busiest() {
        let o = obs(vec![vec![0.0, 50.0, 50.0]], vec![0.1, 0.9, 0.4]);
        assert_eq!(greedy_plan(&o).unwrap(), vec![11]);
    }

    #[test]
    fn greedy_matches_by_travel_time() {
        // rates pick A (col 1) and B (col 2)
        let o = obs(vec![vec![5.0, 10.0, 90.0], vec![5.0, 80.0, 20.0]], vec![0.0, 1.0, 1.0]);
        assert_eq!(greedy_plan(&o).unwrap(), vec![11, 12]);
        let o = obs(vec![vec![5.0, 80.0, 20.0], vec![5.0, 10.0, 90.0]], vec![0.0, 1.0, 1.0]);
        assert_eq!(greedy_plan(&o).unwrap(), vec![12, 11]);
    }

    #[test]
    fn greedy_rate_tie_prefers_low_index() {
        let o = obs(vec![vec![0.0, 0.0, 0.0]], vec![0.5, 0.5, 0.5]);
        assert_eq!(greedy_plan(&o).unwrap(), vec![10]);
    }

    #[test]
    fn greedy_rejects_overfull_region() {
        let o = obs(vec![vec![0.0], vec![0.0]], vec![1.0]);
        assert!(matches!(greedy_plan(&o), Err(Error::Infeasible(_))));
    }

    #[test]
    fn random_is_a_valid_injection() {
        let world = toy_single_region().world().unwrap();
        let state = SimState::new(&world, Default::default(), &[(0, 0)]).unwrap();
        let o = RegionObs::capture(&state, &world, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = [0; 2];
        for _ in 0..200 {
            let d = RandomLlp.plan(&o, EpochCause::Start, &state, &world, &mut rng).unwrap();
            hits[d[0]] += 1;
        }
        assert!(hits[0] > 60 && hits[1] > 60, "{hits:?}");
        assert_eq!(StaticLlp.plan(&o, EpochCause::Start, &state, &world, &mut rng).unwrap(), vec![0]);
    }
}
