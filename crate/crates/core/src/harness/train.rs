use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::agents::{sample_city_fleet, sample_region_fleet, HlpAgent, HlpConfig, LlpAgent, LlpConfig};
use crate::error::{Error, Result};
use crate::geo::{Depot, DepotId, RateModel, RegionId, Segmentation, World};
use crate::hierarchy::{
    initial_placement, Controller, HighLevelPlanner, LearnedHlp, LearnedLlp, LowLevelPlanner, TriggerMode, TriggerPolicy,
};
use crate::nn::Checkpoint;
use crate::sim::{run_episode, sample_chain, SimState};

const CHECKPOINT_KIND: &str = "policy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub llp_episodes: usize,
    pub hlp_episodes: usize,
    pub llp: LlpConfig,
    pub hlp: HlpConfig,
    /// Chance that each depot is staffed when drawing a region fleet.
    pub region_fleet_p: f64,
    /// City fleets are drawn within this distance of the scenario fleet.
    pub city_fleet_spread: usize,
    /// Greedy evaluation period in episodes for the learning curve; 0 disables.
    pub eval_every: usize,
    pub t_serve_s: f64,
    pub horizon_s: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            llp_episodes: 200,
            hlp_episodes: 100,
            llp: LlpConfig::default(),
            hlp: HlpConfig::default(),
            region_fleet_p: 0.5,
            city_fleet_spread: 2,
            eval_every: 10,
            t_serve_s: 1200.0,
            horizon_s: 11.0 * 24.0 * 3600.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.llp.ddpg.validate()?;
        self.hlp.ddpg.validate()?;
        if !(self.t_serve_s > 0.0 && self.horizon_s > 0.0) {
            return Err(Error::Config("service time and horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.region_fleet_p) {
            return Err(Error::Config("region fleet probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A trained two-level policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub llps: Vec<LlpAgent>,
    /// Absent for single-region cities.
    pub hlp: Option<HlpAgent>,
}

impl PolicyBundle {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Checkpoint::new(CHECKPOINT_KIND, self)?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Checkpoint::load(path)?.decode(CHECKPOINT_KIND)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Checkpoint::from_json(s)?.decode(CHECKPOINT_KIND)
    }

    pub fn check(&self, world: &World) -> Result<()> {
        if self.llps.len() != world.n_regions() {
            return Err(Error::Config(format!("policy has {} region agents for {} regions", self.llps.len(), world.n_regions())));
        }
        for (g, a) in self.llps.iter().enumerate() {
            if a.region != g || a.n_depots() != world.segmentation.depots(g).len() {
                return Err(Error::Config(format!("region agent {g} does not fit this scenario")));
            }
        }
        match (&self.hlp, world.n_regions()) {
            (None, 1) => Ok(()),
            (Some(h), k) if h.n_regions() == k => Ok(()),
            _ => Err(Error::Config("city agent does not fit this scenario".into())),
        }
    }
}

/// One learning-curve sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: String,
    pub region: Option<RegionId>,
    pub episode: usize,
    pub mean_response_s: Option<f64>,
    pub mean_critic_loss: Option<f64>,
}

/// The city restricted to region `g`: its depots renumbered from zero in
/// their original order, incident rates zeroed elsewhere, observation
/// scales inherited from the full city. Returns the original id of each
/// depot.
pub fn region_subworld(world: &World, g: RegionId) -> Result<(World, Vec<DepotId>)> {
    if g >= world.n_regions() {
        return Err(Error::Input(format!("unknown region {g}")));
    }
    let ids = world.segmentation.depots(g).to_vec();
    let depots: Vec<Depot> = ids.iter().enumerate().map(|(i, &d)| Depot { id: i, cell: world.depot_cell(d), capacity: 1 }).collect();
    let labels = world.segmentation.cell_labels();
    let rates: Vec<Vec<f64>> = world
        .rates
        .rates
        .iter()
        .map(|b| b.iter().enumerate().map(|(c, &r)| if labels[c] == g { r } else { 0.0 }).collect())
        .collect();
    let rates = RateModel::new(world.rates.bucket_duration_s, rates)?;
    let seg = Segmentation::single(world.grid.len(), &depots)?;
    let mut sub = World::new(world.grid.clone(), depots, world.hospitals.clone(), world.travel.clone(), rates, seg)?;
    sub.scales = world.scales;
    Ok((sub, ids))
}

fn run_llp_episode(
    sub: &World,
    agent: &mut LlpAgent,
    n: usize,
    chain_seed: u64,
    sim_seed: u64,
    cfg: &TrainConfig,
    learn: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<f64>, Option<f64>)> {
    let m = sub.depots.len();
    let mut ds: Vec<usize> = (0..m).collect();
    if learn {
        ds.shuffle(rng);
    }
    let placement: Vec<(DepotId, RegionId)> = ds[..n].iter().map(|&d| (d, 0)).collect();
    let trigger = TriggerPolicy::new(TriggerMode::Ours);
    let state = SimState::new(sub, trigger.sim_config(cfg.t_serve_s), &placement)?;
    let chain = sample_chain(&sub.rates, cfg.horizon_s, chain_seed)?;
    let mut planner = LearnedLlp::new(agent, learn, learn);
    let result = {
        let llps: Vec<Box<dyn LowLevelPlanner + '_>> = vec![Box::new(&mut planner)];
        let mut ctl = Controller::new(trigger, None, llps);
        run_episode(sub, &chain, state, &mut ctl, sim_seed)?
    };
    Ok((result.mean_response_s, planner.stats.mean_critic_loss()))
}

/// Trains the region agent of `g` on its sub-city with randomly sized
/// fleets, one training chain per episode (cycling through `chain_seeds`).
pub fn train_llp(
    world: &World,
    g: RegionId,
    cfg: &TrainConfig,
    chain_seeds: &[u64],
    eval_seed: u64,
    seed: u64,
) -> Result<(LlpAgent, Vec<CurvePoint>)> {
    cfg.validate()?;
    if chain_seeds.is_empty() {
        return Err(Error::Config("no training chains".into()));
    }
    let (sub, _) = region_subworld(world, g)?;
    let m = sub.depots.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = LlpAgent::new(0, m, cfg.llp.clone(), world.scales, &mut rng)?;
    let eval_n = (m as f64 * cfg.region_fleet_p).round().clamp(1.0, m as f64) as usize;
    let mut curve = Vec::new();
    for ep in 0..cfg.llp_episodes {
        let n = sample_region_fleet(m, cfg.region_fleet_p, &mut rng)?;
        let chain_seed = chain_seeds[ep % chain_seeds.len()];
        let (_, loss) = run_llp_episode(&sub, &mut agent, n, chain_seed, derive_seed(seed, ep as u64), cfg, true, &mut rng)?;
        if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 {
            let (rt, _) = run_llp_episode(&sub, &mut agent, eval_n, eval_seed, eval_seed, cfg, false, &mut rng)?;
            curve.push(CurvePoint { level: "llp".into(), region: Some(g), episode: ep + 1, mean_response_s: rt, mean_critic_loss: loss });
        }
    }
    agent.region = g;
    agent.reset_buffer();
    Ok((agent, curve))
}

fn run_hlp_episode(
    world: &World,
    hlp: &mut HlpAgent,
    llps: &mut [LlpAgent],
    n: usize,
    chain_seed: u64,
    sim_seed: u64,
    cfg: &TrainConfig,
    learn: bool,
) -> Result<(Option<f64>, Option<f64>)> {
    let trigger = TriggerPolicy::new(TriggerMode::Ours);
    let state = SimState::new(world, trigger.sim_config(cfg.t_serve_s), &initial_placement(world, n)?)?;
    let chain = sample_chain(&world.rates, cfg.horizon_s, chain_seed)?;
    let mut planner = LearnedHlp::new(hlp, learn, learn);
    let result = {
        let llps: Vec<Box<dyn LowLevelPlanner + '_>> =
            llps.iter_mut().map(|a| Box::new(LearnedLlp::greedy(a)) as Box<dyn LowLevelPlanner>).collect();
        let hlp: Box<dyn HighLevelPlanner + '_> = Box::new(&mut planner);
        let mut ctl = Controller::new(trigger, Some(hlp), llps);
        ctl.normalize_reward = cfg.hlp.normalize_reward;
        run_episode(world, &chain, state, &mut ctl, sim_seed)?
    };
    Ok((result.mean_response_s, planner.stats.mean_critic_loss()))
}

/// Trains the city agent against frozen, greedy region agents.
pub fn train_hlp(
    world: &World,
    llps: &mut [LlpAgent],
    n_responders: usize,
    cfg: &TrainConfig,
    chain_seeds: &[u64],
    eval_seed: u64,
    seed: u64,
) -> Result<(HlpAgent, Vec<CurvePoint>)> {
    cfg.validate()?;
    if chain_seeds.is_empty() {
        return Err(Error::Config("no training chains".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hlp = HlpAgent::new(world.n_regions(), cfg.hlp.clone(), world.scales, &mut rng)?;
    let max = world.depots.len();
    let mut curve = Vec::new();
    for ep in 0..cfg.hlp_episodes {
        let n = sample_city_fleet(n_responders, cfg.city_fleet_spread, max, &mut rng);
        let chain_seed = chain_seeds[ep % chain_seeds.len()];
        let (_, loss) = run_hlp_episode(world, &mut hlp, llps, n, chain_seed, derive_seed(seed, ep as u64), cfg, true)?;
        if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 {
            let (rt, _) = run_hlp_episode(world, &mut hlp, llps, n_responders, eval_seed, eval_seed, cfg, false)?;
            curve.push(CurvePoint { level: "hlp".into(), region: None, episode: ep + 1, mean_response_s: rt, mean_critic_loss: loss });
        }
    }
    hlp.reset_buffer();
    Ok((hlp, curve))
}

/// All region agents, then the city agent (skipped for a single region).
pub fn train_policy(
    world: &World,
    n_responders: usize,
    cfg: &TrainConfig,
    chain_seeds: &[u64],
    eval_seed: u64,
    seed: u64,
) -> Result<(PolicyBundle, Vec<CurvePoint>)> {
    let mut curve = Vec::new();
    let mut llps = Vec::with_capacity(world.n_regions());
    for g in 0..world.n_regions() {
        let (agent, c) = train_llp(world, g, cfg, chain_seeds, eval_seed, derive_seed(seed, 1_000_000 + g as u64))?;
        llps.push(agent);
        curve.extend(c);
    }
    let hlp = if world.n_regions() > 1 {
        let (h, c) = train_hlp(world, &mut llps, n_responders, cfg, chain_seeds, eval_seed, derive_seed(seed, 2_000_000))?;
        curve.extend(c);
        Some(h)
    } else {
        None
    };
    Ok((PolicyBundle { llps, hlp }, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::toy_two_region;

    #[test]
    fn subworld_keeps_region_depots_and_rates() {
        let world = toy_two_region().world().unwrap();
        let (sub, ids) = region_subworld(&world, 1).unwrap();
        assert_eq!(ids, world.segmentation.depots(1).to_vec());
        assert_eq!(sub.depots.len(), ids.len());
        assert_eq!(sub.scales, world.scales);
        for t in [0.0, 5.0 * 3600.0] {
            assert_eq!(sub.region_rate(0, t), world.region_rate(1, t));
            assert_eq!(sub.depot_rates(0, t), world.depot_rates(1, t));
        }
    }

    #[test]
    fn short_training_runs_and_round_trips() {
        let world = toy_two_region().world().unwrap();
        let cfg = TrainConfig { llp_episodes: 2, hlp_episodes: 2, eval_every: 1, horizon_s: 6.0 * 3600.0, ..Default::default() };
        let (bundle, curve) = train_policy(&world, 3, &cfg, &[1, 2], 3, 4).unwrap();
        bundle.check(&world).unwrap();
        assert_eq!(curve.len(), 2 * 2 + 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.json");
        bundle.save(&p).unwrap();
        let back = PolicyBundle::load(&p).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&bundle).unwrap());
    }
}
