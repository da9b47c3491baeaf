use std::borrow::BorrowMut;

use rand_chacha::ChaCha8Rng;

use super::{EpochCause, HighLevelPlanner, LowLevelPlanner};
use crate::agents::{HlpAgent, HlpTransition, LlpAgent, LlpTransition};
use crate::error::Result;
use crate::features::{CityObs, RegionObs};
use crate::geo::{DepotId, World};
use crate::nn::Matrix;
use crate::sim::SimState;

/// Counters kept while an agent learns inside episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LearningStats {
    pub transitions: usize,
    pub updates: usize,
    pub critic_loss_sum: f64,
}

impl LearningStats {
    pub fn mean_critic_loss(&self) -> Option<f64> {
        (self.updates > 0).then(|| self.critic_loss_sum / self.updates as f64)
    }
}

/// Region planner backed by an [`LlpAgent`]. With `learn` set, every epoch
/// closes the previous decision's transition (reward from the dispatch that
/// triggered this epoch, zero otherwise) and runs one training step.
pub struct LearnedLlp<A: BorrowMut<LlpAgent>> {
    pub agent: A,
    pub explore: bool,
    pub learn: bool,
    pub stats: LearningStats,
    pending: Option<(RegionObs, Matrix)>,
    held: Option<LlpTransition>,
    last: Option<(RegionObs, Matrix)>,
}

impl<A: BorrowMut<LlpAgent>> LearnedLlp<A> {
    pub fn new(agent: A, explore: bool, learn: bool) -> Self {
        Self { agent, explore, learn, stats: LearningStats::default(), pending: None, held: None, last: None }
    }

    /// Greedy evaluation planner.
    pub fn greedy(agent: A) -> Self {
        Self::new(agent, false, false)
    }

    fn push(&mut self, t: LlpTransition, rng: &mut ChaCha8Rng) -> Result<()> {
        let agent = self.agent.borrow_mut();
        agent.observe(t);
        self.stats.transitions += 1;
        if let Some(s) = agent.train_step(rng)? {
            self.stats.updates += 1;
            self.stats.critic_loss_sum += s.critic_loss;
        }
        Ok(())
    }
}

impl<A: BorrowMut<LlpAgent>> LowLevelPlanner for LearnedLlp<A> {
    fn plan(&mut self, obs: &RegionObs, cause: EpochCause, _: &SimState, _: &World, rng: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        if self.learn {
            if let Some((s, a)) = self.pending.take() {
                let reward = match cause {
                    EpochCause::Dispatch { response_time_s } => self.agent.borrow().config.ddpg.reward(response_time_s),
                    _ => 0.0,
                };
                let t = LlpTransition { obs: s, action: a, reward, next: obs.clone(), done: false };
                if let Some(prev) = self.held.replace(t) {
                    self.push(prev, rng)?;
                }
            }
        }
        let (p, depots) = self.agent.borrow().act(obs, self.explore, rng)?;
        if self.learn {
            self.pending = Some((obs.clone(), p.clone()));
        }
        self.last = Some((obs.clone(), p));
        Ok(depots)
    }

    fn value(&self, obs: &RegionObs) -> Option<f64> {
        let agent = self.agent.borrow();
        let action = match &self.last {
            Some((o, a)) if o.responders == obs.responders => a.clone(),
            _ => agent.likelihoods(obs).ok()?,
        };
        Some(agent.q_value(obs, &action))
    }

    fn end_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.pending = None;
        self.last = None;
        if self.learn {
            if let Some(mut t) = self.held.take() {
                t.done = true;
                self.push(t, rng)?;
            }
            self.agent.borrow_mut().episodes += 1;
        }
        Ok(())
    }
}

/// City planner backed by an [`HlpAgent`], rewarded through
/// [`HighLevelPlanner::feedback`].
pub struct LearnedHlp<A: BorrowMut<HlpAgent>> {
    pub agent: A,
    pub explore: bool,
    pub learn: bool,
    pub stats: LearningStats,
    pending: Option<(CityObs, Vec<f64>, Option<f64>)>,
    held: Option<HlpTransition>,
}

impl<A: BorrowMut<HlpAgent>> LearnedHlp<A> {
    pub fn new(agent: A, explore: bool, learn: bool) -> Self {
        Self { agent, explore, learn, stats: LearningStats::default(), pending: None, held: None }
    }

    pub fn greedy(agent: A) -> Self {
        Self::new(agent, false, false)
    }

    fn push(&mut self, t: HlpTransition, rng: &mut ChaCha8Rng) -> Result<()> {
        let agent = self.agent.borrow_mut();
        agent.observe(t);
        self.stats.transitions += 1;
        if let Some(loss) = agent.train_step(rng)? {
            self.stats.updates += 1;
            self.stats.critic_loss_sum += loss;
        }
        Ok(())
    }
}

impl<A: BorrowMut<HlpAgent>> HighLevelPlanner for LearnedHlp<A> {
    fn plan(&mut self, obs: &CityObs, caps: &[usize], _: &SimState, _: &World, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.learn {
            if let Some((s, a, Some(r))) = self.pending.take() {
                let t = HlpTransition { obs: s, action: a, reward: r, next: obs.clone(), done: false };
                if let Some(prev) = self.held.replace(t) {
                    self.push(prev, rng)?;
                }
            }
        }
        let (a, counts) = self.agent.borrow().act(obs, caps, self.explore, rng)?;
        if self.learn {
            self.pending = Some((obs.clone(), a, None));
        }
        Ok(counts)
    }

    fn wants_feedback(&self) -> bool {
        self.learn
    }

    fn feedback(&mut self, reward: f64) {
        if let Some(p) = self.pending.as_mut() {
            p.2 = Some(reward);
        }
    }

    fn end_episode(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        if !self.learn {
            return Ok(());
        }
        // the final decision has a reward but no successor: it closes the
        // episode; the one before it keeps its successor
        let last = match self.pending.take() {
            Some((s, a, Some(r))) => Some(HlpTransition { next: s.clone(), obs: s, action: a, reward: r, done: true }),
            _ => None,
        };
        if let Some(mut prev) = self.held.take() {
            prev.done = last.is_none();
            self.push(prev, rng)?;
        }
        if let Some(t) = last {
            self.push(t, rng)?;
        }
        self.agent.borrow_mut().episodes += 1;
        Ok(())
    }
}
