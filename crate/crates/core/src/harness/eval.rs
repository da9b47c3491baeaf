use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, PlannerKind, PolicyBundle};
use crate::baselines::{GreedyLlp, MctsLlp, PMedianLlp, RandomLlp, StaticLlp};
use crate::error::{Error, Result};
use crate::features::ObservationNoise;
use crate::geo::World;
use crate::hierarchy::{
    initial_placement, Controller, ControllerLog, HighLevelPlanner, LearnedHlp, LearnedLlp, LowLevelPlanner,
    ProportionalHlp, TriggerMode, TriggerPolicy,
};
use crate::sim::{run_episode, sample_chain, LatencyStats, SimState};

/// Shared inputs of an evaluation run.
#[derive(Clone, Copy)]
pub struct EvalSetup<'a> {
    pub world: &'a World,
    pub policy: Option<&'a PolicyBundle>,
    pub n_responders: usize,
    pub t_serve_s: f64,
    pub horizon_s: f64,
    pub trigger: TriggerMode,
    pub noise: ObservationNoise,
}

/// Everything recorded for one evaluation chain.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub record: ChainRecord,
    pub decision_latencies_s: Vec<f64>,
    pub log: ControllerLog,
}

/// Deterministic per-chain result; one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_seed: u64,
    pub incidents: usize,
    pub mean_response_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub planner: String,
    pub chains: Vec<ChainRecord>,
    /// Mean over chains of the per-chain mean response time.
    pub mean_response_s: Option<f64>,
    pub decision_latency: LatencyStats,
    pub hlp_epochs: usize,
    pub llp_decisions: usize,
}

impl RunSummary {
    pub fn from_outcomes(planner: &str, outcomes: &[ChainOutcome]) -> Self {
        let chains: Vec<ChainRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
        let means: Vec<f64> = chains.iter().filter_map(|c| c.mean_response_s).collect();
        let lat: Vec<f64> = outcomes.iter().flat_map(|o| o.decision_latencies_s.iter().copied()).collect();
        Self {
            planner: planner.to_string(),
            mean_response_s: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
            decision_latency: LatencyStats::from_samples(&lat),
            hlp_epochs: outcomes.iter().map(|o| o.log.hlp_epochs.len()).sum(),
            llp_decisions: outcomes.iter().map(|o| o.log.llp_decisions.len()).sum(),
            chains,
        }
    }

    /// CSV `chain_seed,incidents,mean_response_s`; wall-clock data is left
    /// out so reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.chains {
            out.serialize(c)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn read_eval_csv<R: Read>(r: R) -> Result<Vec<ChainRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn planners<'a>(kind: &PlannerKind, setup: &EvalSetup<'a>) -> Result<(Option<Box<dyn HighLevelPlanner + 'a>>, Vec<Box<dyn LowLevelPlanner + 'a>>)> {
    let k = setup.world.n_regions();
    let proportional = || Some(Box::new(ProportionalHlp) as Box<dyn HighLevelPlanner>);
    let each = |f: &dyn Fn() -> Box<dyn LowLevelPlanner + 'a>| (0..k).map(|_| f()).collect::<Vec<_>>();
    Ok(match kind {
        PlannerKind::Ours => {
            let policy = setup.policy.ok_or_else(|| Error::Config("the trained planner needs a policy file".into()))?;
            policy.check(setup.world)?;
            let hlp = policy.hlp.clone().map(|h| Box::new(LearnedHlp::greedy(h)) as Box<dyn HighLevelPlanner>);
            let llps = policy.llps.iter().map(|a| Box::new(LearnedLlp::greedy(a.clone())) as Box<dyn LowLevelPlanner>).collect();
            (hlp, llps)
        }
        PlannerKind::Mcts(cfg) => {
            cfg.validate()?;
            let cfg = *cfg;
            (proportional(), each(&|| Box::new(MctsLlp { config: cfg })))
        }
        PlannerKind::Pmedian { alpha } => {
            let alpha = *alpha;
            (proportional(), each(&|| Box::new(PMedianLlp { alpha })))
        }
        PlannerKind::Greedy => (proportional(), each(&|| Box::new(GreedyLlp))),
        PlannerKind::Static => (None, each(&|| Box::new(StaticLlp))),
        PlannerKind::Random => (None, each(&|| Box::new(RandomLlp))),
    })
}

/// Runs one evaluation chain.
pub fn run_chain(setup: &EvalSetup, kind: &PlannerKind, chain_seed: u64) -> Result<ChainOutcome> {
    let world = setup.world;
    let trigger = TriggerPolicy::new(setup.trigger);
    let state = SimState::new(world, trigger.sim_config(setup.t_serve_s), &initial_placement(world, setup.n_responders)?)?;
    let chain = sample_chain(&world.rates, setup.horizon_s, chain_seed)?;
    let (hlp, llps) = planners(kind, setup)?;
    let mut ctl = Controller::new(trigger, hlp, llps).with_noise(setup.noise);
    let result = run_episode(world, &chain, state, &mut ctl, derive_seed(chain_seed, 0xE7A1))?;
    Ok(ChainOutcome {
        record: ChainRecord { chain_seed, incidents: result.log.len(), mean_response_s: result.mean_response_s },
        decision_latencies_s: result.decision_latencies_s,
        log: std::mem::take(&mut ctl.log),
    })
}

/// Evaluates every chain in parallel; results keep the order of `seeds`.
pub fn evaluate(setup: &EvalSetup, kind: &PlannerKind, seeds: &[u64]) -> Result<(RunSummary, Vec<ChainOutcome>)> {
    if seeds.is_empty() {
        return Err(Error::Config("no evaluation chains".into()));
    }
    let outcomes: Vec<ChainOutcome> = seeds.par_iter().map(|&s| run_chain(setup, kind, s)).collect::<Result<_>>()?;
    Ok((RunSummary::from_outcomes(kind.name(), &outcomes), outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma_rate: f64,
    pub sigma_time: f64,
    pub mean_response_s: Option<f64>,
}

/// Mean response time over `seeds` for every pair of noise levels.
pub fn noise_sweep(setup: &EvalSetup, kind: &PlannerKind, seeds: &[u64], sigmas: &[f64]) -> Result<Vec<NoisePoint>> {
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Config("noise levels must be finite and nonnegative".into()));
    }
    let mut out = Vec::with_capacity(sigmas.len() * sigmas.len());
    for &sigma_rate in sigmas {
        for &sigma_time in sigmas {
            let s = EvalSetup { noise: ObservationNoise { sigma_rate, sigma_time }, ..*setup };
            let (summary, _) = evaluate(&s, kind, seeds)?;
            out.push(NoisePoint { sigma_rate, sigma_time, mean_response_s: summary.mean_response_s });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::MctsConfig;
    use crate::scenarios::toy_two_region;

    fn setup(world: &World) -> EvalSetup<'_> {
        EvalSetup {
            world,
            policy: None,
            n_responders: 3,
            t_serve_s: 1200.0,
            horizon_s: 12.0 * 3600.0,
            trigger: TriggerMode::Baseline,
            noise: ObservationNoise::default(),
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let world = toy_two_region().world().unwrap();
        let s = setup(&world);
        let csv = || {
            let (summary, _) = evaluate(&s, &PlannerKind::Greedy, &[5, 6, 7]).unwrap();
            let mut buf = Vec::new();
            summary.write_csv(&mut buf).unwrap();
            buf
        };
        let a = csv();
        assert_eq!(a, csv());
        let rows = read_eval_csv(a.as_slice()).unwrap();
        assert_eq!(rows.iter().map(|r| r.chain_seed).collect::<Vec<_>>(), vec![5, 6, 7]);
    }

    #[test]
    fn every_baseline_runs() {
        let world = toy_two_region().world().unwrap();
        let s = setup(&world);
        let kinds = [
            PlannerKind::Mcts(MctsConfig { iteration_limit: 20, n_samples: 3, ..Default::default() }),
            PlannerKind::Pmedian { alpha: 0.1 },
            PlannerKind::Greedy,
            PlannerKind::Static,
            PlannerKind::Random,
        ];
        for k in &kinds {
            let (summary, outs) = evaluate(&s, k, &[1]).unwrap();
            assert_eq!(summary.chains.len(), 1);
            assert!(summary.mean_response_s.unwrap() >= 0.0);
            if *k == PlannerKind::Static {
                assert!(outs[0].log.llp_decisions.iter().all(|d| d.assignment.iter().all(|&(v, dep)| dep == [0, 1, 2][v])));
            }
        }
    }

    #[test]
    fn trained_planner_needs_policy() {
        let world = toy_two_region().world().unwrap();
        assert!(matches!(run_chain(&setup(&world), &PlannerKind::Ours, 1), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_covers_grid() {
        let world = toy_two_region().world().unwrap();
        let pts = noise_sweep(&setup(&world), &PlannerKind::Greedy, &[1, 2], &[0.0, 0.2]).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].sigma_time, 0.2);
    }
}
