use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DdpgConfig, ReplayBuffer};
use crate::error::{Error, Result};
use crate::features::{hlp_input, CityObs};
use crate::geo::FeatureScales;
use crate::nn::{clip_grad_norm, soft_update, Activation, Adam, Matrix, Mlp};
use crate::optim::{greedy_redistribute, normalize_hlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlpConfig {
    pub ddpg: DdpgConfig,
    pub actor_hidden: Vec<usize>,
    /// Divide the critic-weighted reward by the total incident rate.
    pub normalize_reward: bool,
}

impl Default for HlpConfig {
    fn default() -> Self {
        Self { ddpg: DdpgConfig::high_level(), actor_hidden: vec![256, 64], normalize_reward: true }
    }
}

#[derive(Debug, Clone)]
pub struct HlpTransition {
    pub obs: CityObs,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: CityObs,
    pub done: bool,
}

/// City planner: an MLP actor emitting one nonnegative weight per region
/// except the last (whose weight is fixed at 1), and an MLP critic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HlpAgent {
    pub config: HlpConfig,
    n_regions: usize,
    scales: FeatureScales,
    actor: Mlp,
    actor_target: Mlp,
    critic: Mlp,
    critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub episodes: usize,
    #[serde(skip)]
    buffer: ReplayBuffer<HlpTransition>,
}

impl HlpAgent {
    pub fn new(n_regions: usize, config: HlpConfig, scales: FeatureScales, rng: &mut impl Rng) -> Result<Self> {
        config.ddpg.validate()?;
        if n_regions == 0 {
            return Err(Error::Config("high-level agent needs at least one region".into()));
        }
        // a single region still gets a one-output actor so shapes stay valid;
        // its output is ignored
        let a_dim = (n_regions - 1).max(1);
        let actor = Mlp::with_hidden(2 * n_regions, &config.actor_hidden, a_dim, Activation::Softplus, 0.0, rng)?;
        let critic = Mlp::with_hidden(
            2 * n_regions + a_dim,
            &[config.ddpg.critic_hidden],
            1,
            Activation::Linear,
            config.ddpg.critic_dropout,
            rng,
        )?;
        Ok(Self {
            n_regions,
            scales,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(actor.n_params(), config.ddpg.actor_lr),
            critic_opt: Adam::new(critic.n_params(), config.ddpg.critic_lr),
            actor,
            critic,
            episodes: 0,
            buffer: ReplayBuffer::new(config.ddpg.buffer_capacity),
            config,
        })
    }

    pub fn reset_buffer(&mut self) {
        self.buffer = ReplayBuffer::new(self.config.ddpg.buffer_capacity);
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn buffer(&self) -> &ReplayBuffer<HlpTransition> {
        &self.buffer
    }

    pub fn exploration(&self) -> f64 {
        self.config.ddpg.exploration(self.episodes)
    }

    fn check_obs(&self, obs: &CityObs) -> Result<()> {
        if obs.region_rates.len() != self.n_regions || obs.counts.len() != self.n_regions {
            return Err(Error::Input(format!("city observation does not cover {} regions", self.n_regions)));
        }
        Ok(())
    }

    pub fn raw_action(&self, obs: &CityObs) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        Ok(self.actor.predict(&hlp_input(obs, &self.scales)))
    }

    /// Continuous action and the responder count per region. Exploration
    /// multiplies each weight by log-normal noise.
    pub fn act(&self, obs: &CityObs, caps: &[usize], explore: bool, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<usize>)> {
        if caps.len() != self.n_regions {
            return Err(Error::Input("one capacity per region required".into()));
        }
        let mut a = self.raw_action(obs)?;
        if self.n_regions == 1 {
            return Ok((a, vec![obs.n_responders]));
        }
        if explore {
            let sigma = self.exploration();
            for v in a.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v *= (sigma * z).exp();
            }
        }
        let counts = counts_from_action(&a, obs.n_responders, caps)?;
        Ok((a, counts))
    }

    pub fn q_value(&self, obs: &CityObs, action: &[f64]) -> f64 {
        let mut x = hlp_input(obs, &self.scales);
        x.extend_from_slice(action);
        self.critic.predict(&x)[0]
    }

    pub fn observe(&mut self, t: HlpTransition) {
        self.buffer.push(t);
    }

    pub fn critic_targets(&self, batch: &[&HlpTransition]) -> Vec<f64> {
        let gamma = self.config.ddpg.gamma;
        batch
            .iter()
            .map(|t| {
                if t.done || gamma == 0.0 {
                    return t.reward;
                }
                let xs = hlp_input(&t.next, &self.scales);
                let a = self.actor_target.predict(&xs);
                let mut x = xs;
                x.extend(a);
                t.reward + gamma * self.critic_target.predict(&x)[0]
            })
            .collect()
    }

    pub fn train_step(&mut self, rng: &mut dyn RngCore) -> Result<Option<f64>> {
        let n = self.config.ddpg.batch_size;
        let batch: Vec<HlpTransition> = match self.buffer.sample(n, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&HlpTransition> = batch.iter().collect();
        self.update(&refs, rng).map(Some)
    }

    /// DDPG update on an explicit batch; returns the critic loss.
    pub fn update(&mut self, batch: &[&HlpTransition], rng: &mut dyn RngCore) -> Result<f64> {
        for t in batch {
            self.check_obs(&t.obs)?;
        }
        let targets = self.critic_targets(batch);
        let s_dim = 2 * self.n_regions;
        let a_dim = self.actor.output_dim();
        let mut x = Matrix::zeros(batch.len(), s_dim + a_dim);
        let mut s = Matrix::zeros(batch.len(), s_dim);
        for (i, t) in batch.iter().enumerate() {
            let xs = hlp_input(&t.obs, &self.scales);
            s.row_mut(i).copy_from_slice(&xs);
            x.row_mut(i)[..s_dim].copy_from_slice(&xs);
            x.row_mut(i)[s_dim..].copy_from_slice(&t.action);
        }
        let b = batch.len() as f64;
        let (q, cache) = self.critic.forward(&x, Some(rng));
        let mut dq = Matrix::zeros(batch.len(), 1);
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let e = q.get(i, 0) - targets[i];
            loss += e * e / b;
            dq.set(i, 0, 2.0 * e / b);
        }
        let (_, mut cg) = self.critic.backward(&cache, &dq);
        clip_grad_norm(&mut cg, self.config.ddpg.grad_clip);
        self.critic_opt.step(self.critic.params_mut(), &cg);

        // actor ascends Q(s, mu(s))
        let (a, acache) = self.actor.forward(&s, None);
        let mut xa = Matrix::zeros(batch.len(), s_dim + a_dim);
        xa.set_col_block(0, &s);
        xa.set_col_block(s_dim, &a);
        let (_, ccache) = self.critic.forward(&xa, None);
        let (dx, _) = self.critic.backward(&ccache, &Matrix::from_vec(batch.len(), 1, vec![-1.0 / b; batch.len()]));
        let da = dx.col_block(s_dim, a_dim);
        let (_, mut ag) = self.actor.backward(&acache, &da);
        clip_grad_norm(&mut ag, self.config.ddpg.grad_clip);
        self.actor_opt.step(self.actor.params_mut(), &ag);

        let tau = self.config.ddpg.tau;
        soft_update(self.critic_target.params_mut(), self.critic.params(), tau);
        soft_update(self.actor_target.params_mut(), self.actor.params(), tau);
        Ok(loss)
    }
}

/// Region counts for a continuous high-level action.
pub fn counts_from_action(action: &[f64], n_responders: usize, caps: &[usize]) -> Result<Vec<usize>> {
    let props = normalize_hlp(action)?;
    greedy_redistribute(&props, n_responders, caps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scales() -> FeatureScales {
        FeatureScales { time_s: 3600.0, depot_rate: 1.0, region_rate: 1.0 }
    }

    fn city(rates: Vec<f64>, counts: Vec<usize>) -> CityObs {
        let n = counts.iter().sum();
        CityObs { region_rates: rates, counts, n_responders: n }
    }

    #[test]
    fn single_region_gets_everyone() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = HlpAgent::new(1, HlpConfig::default(), scales(), &mut rng).unwrap();
        let (_, c) = a.act(&city(vec![2.0], vec![7]), &[10], true, &mut rng).unwrap();
        assert_eq!(c, vec![7]);
    }

    #[test]
    fn uniform_action_splits_evenly() {
        assert_eq!(counts_from_action(&[1.0, 1.0], 9, &[5, 5, 5]).unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn repeat_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = HlpAgent::new(3, HlpConfig::default(), scales(), &mut rng).unwrap();
        let o = city(vec![0.5, 1.0, 0.2], vec![2, 2, 2]);
        let caps = [3, 3, 3];
        assert_eq!(a.act(&o, &caps, false, &mut rng).unwrap(), a.act(&o, &caps, false, &mut rng).unwrap());
        let (raw, counts) = a.act(&o, &caps, false, &mut rng).unwrap();
        assert_eq!(raw.len(), 2);
        assert!(raw.iter().all(|&v| v >= 0.0));
        assert_eq!(counts.iter().sum::<usize>(), 6);
    }

    #[test]
    fn critic_fits_bandit_reward() {
        let mut cfg = HlpConfig::default();
        cfg.ddpg.gamma = 0.0;
        cfg.ddpg.critic_dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = HlpAgent::new(2, cfg, scales(), &mut rng).unwrap();
        let o = city(vec![1.0, 0.2], vec![1, 2]);
        let t = HlpTransition { obs: o.clone(), action: vec![0.7], reward: -0.4, next: o.clone(), done: false };
        for _ in 0..2000 {
            a.update(&[&t], &mut rng).unwrap();
        }
        assert!((a.q_value(&o, &[0.7]) + 0.4).abs() < 1e-2);
    }
}
