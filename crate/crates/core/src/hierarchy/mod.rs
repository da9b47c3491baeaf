//! Two-level orchestration: when the city and region planners run, and how
//! their decisions reach the simulator.

mod learned;
mod placement;

pub use learned::{LearnedHlp, LearnedLlp, LearningStats};
pub use placement::{apply_hlp, initial_placement, ProportionalHlp};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::hlp_reward;
use crate::error::{Error, Result};
use crate::features::{CityObs, ObservationNoise, RegionObs};
use crate::geo::{DepotId, RegionId, World};
use crate::sim::{ResponderId, SimConfig, SimEvent, SimHooks, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    /// City planner on detected rate changes, region planners on dispatches
    /// and membership changes.
    Ours,
    /// Every planner on every incident and after an idle period.
    Baseline,
}

impl std::str::FromStr for TriggerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Self::Ours),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::Config(format!("unknown trigger mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerPolicy {
    pub mode: TriggerMode,
    pub min_hlp_interval_s: f64,
    pub idle_timeout_s: f64,
}

impl TriggerPolicy {
    pub fn new(mode: TriggerMode) -> Self {
        Self { mode, min_hlp_interval_s: 3600.0, idle_timeout_s: 3600.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_hlp_interval_s > 0.0 && self.idle_timeout_s > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("trigger intervals must be positive".into()))
        }
    }

    /// Simulator settings that deliver the events this policy listens to.
    pub fn sim_config(&self, t_serve_s: f64) -> SimConfig {
        match self.mode {
            TriggerMode::Ours => SimConfig { t_serve_s, idle_timeout_s: None, rate_events: true },
            TriggerMode::Baseline => SimConfig { t_serve_s, idle_timeout_s: Some(self.idle_timeout_s), rate_events: false },
        }
    }
}

/// Why a planner is being invoked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochCause {
    Start,
    /// A responder of the region was just dispatched with this response time.
    Dispatch { response_time_s: f64 },
    /// An incident elsewhere (baseline trigger).
    Incident,
    /// Responders entered or left the region.
    Membership,
    RateChange,
    Timeout,
}

/// Assigns depots to the responders of one region.
pub trait LowLevelPlanner {
    /// One depot from `obs.depots` per responder of `obs.responders`, in order.
    fn plan(
        &mut self,
        obs: &RegionObs,
        cause: EpochCause,
        state: &SimState,
        world: &World,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<DepotId>>;

    /// Value estimate of the region under its latest decision, if the
    /// planner has one.
    fn value(&self, _obs: &RegionObs) -> Option<f64> {
        None
    }

    fn end_episode(&mut self, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
}

/// Distributes responders among regions.
pub trait HighLevelPlanner {
    /// Responder count per region; must sum to `obs.n_responders` and
    /// respect `caps`.
    fn plan(&mut self, obs: &CityObs, caps: &[usize], state: &SimState, world: &World, rng: &mut ChaCha8Rng)
        -> Result<Vec<usize>>;

    /// Whether [`HighLevelPlanner::feedback`] should be computed.
    fn wants_feedback(&self) -> bool {
        false
    }

    /// Critic-weighted estimate of the last decision's quality.
    fn feedback(&mut self, _reward: f64) {}

    fn end_episode(&mut self, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
}

impl<T: LowLevelPlanner + ?Sized> LowLevelPlanner for &mut T {
    fn plan(&mut self, obs: &RegionObs, cause: EpochCause, state: &SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        (**self).plan(obs, cause, state, world, rng)
    }
    fn value(&self, obs: &RegionObs) -> Option<f64> {
        (**self).value(obs)
    }
    fn end_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        (**self).end_episode(rng)
    }
}

impl<T: HighLevelPlanner + ?Sized> HighLevelPlanner for &mut T {
    fn plan(&mut self, obs: &CityObs, caps: &[usize], state: &SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        (**self).plan(obs, caps, state, world, rng)
    }
    fn wants_feedback(&self) -> bool {
        (**self).wants_feedback()
    }
    fn feedback(&mut self, reward: f64) {
        (**self).feedback(reward)
    }
    fn end_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        (**self).end_episode(rng)
    }
}

/// One city-level decision.
#[derive(Debug, Clone, PartialEq)]
pub struct HlpEpoch {
    pub t: f64,
    /// True (noise-free) region incident rates at decision time.
    pub region_rates: Vec<f64>,
    pub counts_before: Vec<usize>,
    pub counts_after: Vec<usize>,
}

/// One region-level decision.
#[derive(Debug, Clone, PartialEq)]
pub struct LlpDecision {
    pub t: f64,
    pub region: RegionId,
    pub assignment: Vec<(ResponderId, DepotId)>,
}

#[derive(Debug, Clone, Default)]
pub struct ControllerLog {
    pub hlp_epochs: Vec<HlpEpoch>,
    pub llp_decisions: Vec<LlpDecision>,
}

/// Simulation hooks running the planners under a trigger policy.
pub struct Controller<'a> {
    pub trigger: TriggerPolicy,
    pub hlp: Option<Box<dyn HighLevelPlanner + 'a>>,
    pub llps: Vec<Box<dyn LowLevelPlanner + 'a>>,
    pub noise: ObservationNoise,
    /// Divide the feedback reward by the total rate.
    pub normalize_reward: bool,
    pub log: ControllerLog,
    last_hlp_t: Option<f64>,
    last_hlp_rates: Option<Vec<f64>>,
}

impl<'a> Controller<'a> {
    pub fn new(
        trigger: TriggerPolicy,
        hlp: Option<Box<dyn HighLevelPlanner + 'a>>,
        llps: Vec<Box<dyn LowLevelPlanner + 'a>>,
    ) -> Self {
        Self {
            trigger,
            hlp,
            llps,
            noise: ObservationNoise::default(),
            normalize_reward: true,
            log: ControllerLog::default(),
            last_hlp_t: None,
            last_hlp_rates: None,
        }
    }

    pub fn with_noise(mut self, noise: ObservationNoise) -> Self {
        self.noise = noise;
        self
    }

    fn region_obs(&self, state: &SimState, world: &World, g: RegionId, rng: &mut ChaCha8Rng) -> RegionObs {
        let obs = RegionObs::capture(state, world, g);
        if self.noise.is_none() {
            obs
        } else {
            obs.with_noise(&self.noise, rng)
        }
    }

    /// Runs the planner of region `g`; returns the observation it saw.
    fn run_llp(
        &mut self,
        g: RegionId,
        cause: EpochCause,
        state: &mut SimState,
        world: &World,
        rng: &mut ChaCha8Rng,
    ) -> Result<(RegionObs, bool)> {
        let obs = self.region_obs(state, world, g, rng);
        if obs.n_responders() == 0 {
            return Ok((obs, false));
        }
        let depots = self.llps[g].plan(&obs, cause, state, world, rng)?;
        if depots.len() != obs.n_responders() {
            return Err(Error::Logic(format!("region {g} planner returned {} depots for {} responders", depots.len(), obs.n_responders())));
        }
        let mut seen = depots.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != depots.len() || depots.iter().any(|d| !obs.depots.contains(d)) {
            return Err(Error::Logic(format!("region {g} planner returned an invalid assignment {depots:?}")));
        }
        for (&v, &d) in obs.responders.iter().zip(&depots) {
            state.reassign(v, d, world)?;
        }
        self.log.llp_decisions.push(LlpDecision {
            t: state.now,
            region: g,
            assignment: obs.responders.iter().copied().zip(depots).collect(),
        });
        Ok((obs, true))
    }

    /// City decision followed by the region planners it implies. Returns the
    /// number of planner calls.
    fn run_hlp(
        &mut self,
        cause: EpochCause,
        dispatched: Option<(RegionId, f64)>,
        state: &mut SimState,
        world: &World,
        rng: &mut ChaCha8Rng,
    ) -> Result<u32> {
        let k = world.n_regions();
        let mut calls = 0;
        let mut changed = false;
        let mut observed_rates = world.region_rates(state.now);
        if let Some(hlp) = self.hlp.as_mut() {
            let mut obs = CityObs::capture(state, world);
            if !self.noise.is_none() {
                obs = obs.with_noise(&self.noise, rng);
            }
            observed_rates = obs.region_rates.clone();
            let caps: Vec<usize> = (0..k).map(|g| world.segmentation.depots(g).len()).collect();
            let before = state.region_counts(k);
            let counts = hlp.plan(&obs, &caps, state, world, rng)?;
            calls += 1;
            if counts.len() != k || counts.iter().sum::<usize>() != state.responders.len() || counts.iter().zip(&caps).any(|(c, m)| c > m)
            {
                return Err(Error::Logic(format!("city planner returned invalid counts {counts:?}")));
            }
            if counts != before {
                apply_hlp(&counts, state, world)?;
                changed = true;
            }
            self.log.hlp_epochs.push(HlpEpoch {
                t: state.now,
                region_rates: world.region_rates(state.now),
                counts_before: before,
                counts_after: counts,
            });
        }
        self.last_hlp_t = Some(state.now);
        self.last_hlp_rates = Some(world.region_rates(state.now));

        let mut seen: Vec<Option<RegionObs>> = vec![None; k];
        let all = changed || self.trigger.mode == TriggerMode::Baseline || cause == EpochCause::Start;
        for g in 0..k {
            let region_cause = match dispatched {
                Some((dg, rt)) if dg == g => EpochCause::Dispatch { response_time_s: rt },
                _ if cause == EpochCause::Start => EpochCause::Start,
                _ if changed => EpochCause::Membership,
                _ => cause,
            };
            let fire = all || dispatched.map_or(false, |(dg, _)| dg == g);
            if fire {
                let (obs, ran) = self.run_llp(g, region_cause, state, world, rng)?;
                calls += u32::from(ran);
                seen[g] = Some(obs);
            }
        }
        if self.hlp.as_ref().map_or(false, |h| h.wants_feedback()) {
            let mut values = Vec::with_capacity(k);
            for g in 0..k {
                let obs = match seen[g].take() {
                    Some(o) => o,
                    None => self.region_obs(state, world, g, rng),
                };
                match self.llps[g].value(&obs) {
                    Some(v) => values.push(v),
                    None => return Err(Error::Config(format!("region {g} planner cannot estimate values for learning"))),
                }
            }
            let r = hlp_reward(&values, &observed_rates, self.normalize_reward);
            if let Some(h) = self.hlp.as_mut() {
                h.feedback(r);
            }
        }
        Ok(calls)
    }

    fn rates_changed(&self, world: &World, t: f64) -> bool {
        match &self.last_hlp_rates {
            Some(prev) => *prev != world.region_rates(t),
            None => true,
        }
    }
}

impl SimHooks for Controller<'_> {
    fn on_event(&mut self, event: &SimEvent, state: &mut SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<u32> {
        if self.llps.len() != world.n_regions() {
            return Err(Error::Config(format!("{} region planners for {} regions", self.llps.len(), world.n_regions())));
        }
        let mode = self.trigger.mode;
        match *event {
            SimEvent::Start => self.run_hlp(EpochCause::Start, None, state, world, rng),
            SimEvent::Incident { outcome, .. } => match mode {
                TriggerMode::Ours => match outcome {
                    Some(rec) => self.dispatch_epoch(rec.region, rec.response_time_s, state, world, rng),
                    None => Ok(0),
                },
                TriggerMode::Baseline => {
                    let n = self.run_hlp(EpochCause::Incident, outcome.map(|r| (r.region, r.response_time_s)), state, world, rng)?;
                    state.touch();
                    Ok(n)
                }
            },
            SimEvent::Released { redispatch: Some(rec), .. } if mode == TriggerMode::Ours => {
                self.dispatch_epoch(rec.region, rec.response_time_s, state, world, rng)
            }
            SimEvent::RateBoundary { .. } if mode == TriggerMode::Ours => {
                let due = self.last_hlp_t.map_or(true, |t| state.now - t >= self.trigger.min_hlp_interval_s - 1e-9);
                if due && self.rates_changed(world, state.now) {
                    self.run_hlp(EpochCause::RateChange, None, state, world, rng)
                } else {
                    Ok(0)
                }
            }
            SimEvent::IdleTimeout if mode == TriggerMode::Baseline => {
                let n = self.run_hlp(EpochCause::Timeout, None, state, world, rng)?;
                state.touch();
                Ok(n)
            }
            SimEvent::End => {
                if let Some(h) = self.hlp.as_mut() {
                    h.end_episode(rng)?;
                }
                for l in self.llps.iter_mut() {
                    l.end_episode(rng)?;
                }
                Ok(0)
            }
            _ => Ok(0),
        }
    }
}

impl Controller<'_> {
    fn dispatch_epoch(&mut self, g: RegionId, rt: f64, state: &mut SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<u32> {
        let (_, ran) = self.run_llp(g, EpochCause::Dispatch { response_time_s: rt }, state, world, rng)?;
        Ok(u32::from(ran))
    }
}

#[cfg(test)]
mod tests;
