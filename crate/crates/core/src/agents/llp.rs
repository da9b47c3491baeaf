use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{flat_dirichlet, DdpgConfig, ReplayBuffer};
use crate::error::{Error, Result};
use crate::features::{llp_actor_input, llp_critic_dim, llp_critic_input, llp_critic_input_backward, RegionObs};
use crate::geo::{DepotId, FeatureScales, RegionId};
use crate::nn::{clip_grad_norm, soft_update, Activation, Adam, Matrix, Mlp, Trxl, TrxlConfig};
use crate::optim::max_weight_match;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlpConfig {
    pub ddpg: DdpgConfig,
    /// Model width; `None` means twice the depot count.
    pub d_model: Option<usize>,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for LlpConfig {
    fn default() -> Self {
        Self { ddpg: DdpgConfig::low_level(), d_model: None, heads: 2, layers: 2, mlp_hidden: 64, dropout: 0.0 }
    }
}

impl LlpConfig {
    pub fn trxl(&self, n_depots: usize) -> TrxlConfig {
        TrxlConfig {
            input_dim: 2 * n_depots,
            n_depots,
            d_model: self.d_model.unwrap_or(2 * n_depots),
            heads: self.heads,
            layers: self.layers,
            mlp_hidden: self.mlp_hidden,
            dropout: self.dropout,
        }
    }
}

/// One low-level experience. `next` may hold no responders.
#[derive(Debug, Clone)]
pub struct LlpTransition {
    pub obs: RegionObs,
    pub action: Matrix,
    pub reward: f64,
    pub next: RegionObs,
    pub done: bool,
}

/// Region planner: a set-transformer actor producing responder-by-depot
/// likelihoods and an MLP critic over per-depot occupancy, expected
/// arrival time and nearby incident rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlpAgent {
    pub region: RegionId,
    pub config: LlpConfig,
    n_depots: usize,
    scales: FeatureScales,
    actor: Trxl,
    actor_target: Trxl,
    critic: Mlp,
    critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    /// Completed training episodes (drives the exploration schedule).
    pub episodes: usize,
    #[serde(skip)]
    buffer: ReplayBuffer<LlpTransition>,
}

/// Losses reported by a training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

impl LlpAgent {
    pub fn new(region: RegionId, n_depots: usize, config: LlpConfig, scales: FeatureScales, rng: &mut impl Rng) -> Result<Self> {
        config.ddpg.validate()?;
        if n_depots == 0 {
            return Err(Error::Config(format!("region {region} has no depots")));
        }
        let actor = Trxl::new(config.trxl(n_depots), rng)?;
        let critic = Mlp::with_hidden(
            llp_critic_dim(n_depots),
            &[config.ddpg.critic_hidden],
            1,
            Activation::Linear,
            config.ddpg.critic_dropout,
            rng,
        )?;
        Ok(Self {
            region,
            n_depots,
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

    /// Restores the replay buffer after deserialization.
    pub fn reset_buffer(&mut self) {
        self.buffer = ReplayBuffer::new(self.config.ddpg.buffer_capacity);
    }

    pub fn n_depots(&self) -> usize {
        self.n_depots
    }

    pub fn actor(&self) -> &Trxl {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Trxl {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn buffer(&self) -> &ReplayBuffer<LlpTransition> {
        &self.buffer
    }

    pub fn exploration(&self) -> f64 {
        self.config.ddpg.exploration(self.episodes)
    }

    fn check_obs(&self, obs: &RegionObs) -> Result<()> {
        if obs.n_depots() != self.n_depots {
            return Err(Error::Input(format!(
                "region {} observation has {} depots, agent expects {}",
                self.region,
                obs.n_depots(),
                self.n_depots
            )));
        }
        Ok(())
    }

    /// Noise-free actor output for `obs`; empty when no responders.
    pub fn likelihoods(&self, obs: &RegionObs) -> Result<Matrix> {
        self.check_obs(obs)?;
        if obs.n_responders() == 0 {
            return Ok(Matrix::zeros(0, self.n_depots));
        }
        self.actor.predict(&llp_actor_input(obs, &self.scales))
    }

    /// Continuous action and the depot chosen for each responder (in
    /// `obs.responders` order). Exploration mixes each row with a flat
    /// Dirichlet draw.
    pub fn act(&self, obs: &RegionObs, explore: bool, rng: &mut impl Rng) -> Result<(Matrix, Vec<DepotId>)> {
        if obs.n_responders() == 0 {
            return Err(Error::Input(format!("region {} has no responders to plan for", self.region)));
        }
        let mut p = self.likelihoods(obs)?;
        if explore {
            let eps = self.exploration();
            for r in 0..p.rows() {
                let noise = flat_dirichlet(self.n_depots, rng);
                for (v, n) in p.row_mut(r).iter_mut().zip(noise) {
                    *v = (1.0 - eps) * *v + eps * n;
                }
            }
        }
        let cols = max_weight_match(&p)?;
        Ok((p, cols.into_iter().map(|c| obs.depots[c]).collect()))
    }

    /// Critic estimate for a state and continuous action.
    pub fn q_value(&self, obs: &RegionObs, action: &Matrix) -> f64 {
        self.critic.predict(&llp_critic_input(obs, action, &self.scales))[0]
    }

    pub fn observe(&mut self, t: LlpTransition) {
        self.buffer.push(t);
    }

    /// Regression targets `r + gamma (1 - done) Q'(s', mu'(s'))`.
    pub fn critic_targets(&self, batch: &[&LlpTransition]) -> Result<Vec<f64>> {
        let gamma = self.config.ddpg.gamma;
        batch
            .iter()
            .map(|t| {
                if t.done || gamma == 0.0 {
                    return Ok(t.reward);
                }
                let a = if t.next.n_responders() == 0 {
                    Matrix::zeros(0, self.n_depots)
                } else {
                    self.actor_target.predict(&llp_actor_input(&t.next, &self.scales))?
                };
                let q = self.critic_target.predict(&llp_critic_input(&t.next, &a, &self.scales))[0];
                Ok(t.reward + gamma * q)
            })
            .collect()
    }

    /// Mean of `-Q(s, mu(s))` over the batch and its gradient with respect
    /// to the actor parameters.
    pub fn actor_loss_and_grad(&self, batch: &[&LlpTransition]) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.actor.n_params()];
        let used: Vec<&&LlpTransition> = batch.iter().filter(|t| t.obs.n_responders() > 0).collect();
        if used.is_empty() {
            return Ok((0.0, grads));
        }
        let scale = 1.0 / used.len() as f64;
        let mut loss = 0.0;
        for t in used {
            let x = llp_actor_input(&t.obs, &self.scales);
            let (p, cache) = self.actor.forward(&x, None)?;
            let cin = Matrix::row_vector(&llp_critic_input(&t.obs, &p, &self.scales));
            let (q, ccache) = self.critic.forward(&cin, None);
            loss -= q.get(0, 0) * scale;
            let (dcin, _) = self.critic.backward(&ccache, &Matrix::row_vector(&[-scale]));
            let dp = llp_critic_input_backward(&t.obs, &p, dcin.row(0), &self.scales);
            let (_, g) = self.actor.backward(&cache, &dp);
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((loss, grads))
    }

    /// One DDPG update from a replay minibatch. Returns `None` while the
    /// buffer holds fewer transitions than the batch size.
    pub fn train_step(&mut self, rng: &mut dyn RngCore) -> Result<Option<TrainStats>> {
        let n = self.config.ddpg.batch_size;
        let batch: Vec<LlpTransition> = match self.buffer.sample(n, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&LlpTransition> = batch.iter().collect();
        let stats = self.update(&refs, rng)?;
        Ok(Some(stats))
    }

    /// DDPG update on an explicit batch.
    pub fn update(&mut self, batch: &[&LlpTransition], rng: &mut dyn RngCore) -> Result<TrainStats> {
        let targets = self.critic_targets(batch)?;
        let dim = llp_critic_dim(self.n_depots);
        let mut x = Matrix::zeros(batch.len(), dim);
        for (i, t) in batch.iter().enumerate() {
            self.check_obs(&t.obs)?;
            x.row_mut(i).copy_from_slice(&llp_critic_input(&t.obs, &t.action, &self.scales));
        }
        let (q, cache) = self.critic.forward(&x, Some(rng));
        let b = batch.len() as f64;
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

        let (actor_loss, mut ag) = self.actor_loss_and_grad(batch)?;
        clip_grad_norm(&mut ag, self.config.ddpg.grad_clip);
        self.actor_opt.step(self.actor.params_mut(), &ag);

        let tau = self.config.ddpg.tau;
        soft_update(self.critic_target.params_mut(), self.critic.params(), tau);
        soft_update(self.actor_target.params_mut(), self.actor.params(), tau);
        Ok(TrainStats { critic_loss: loss, mean_q: -actor_loss })
    }

    pub fn target_distance(&self) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        (d(self.actor.params(), self.actor_target.params()) + d(self.critic.params(), self.critic_target.params())).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scales() -> FeatureScales {
        FeatureScales { time_s: 3600.0, depot_rate: 1.0, region_rate: 1.0 }
    }

    fn obs(n_resp: usize, n_dep: usize, rng: &mut impl Rng) -> RegionObs {
        RegionObs {
            region: 0,
            responders: (0..n_resp).collect(),
            depots: (10..10 + n_dep).collect(),
            phi: Matrix::from_vec(n_resp, n_dep, (0..n_resp * n_dep).map(|_| rng.gen_range(0.0..2000.0)).collect()),
            depot_rates: (0..n_dep).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }
    }

    fn agent(n_dep: usize, seed: u64) -> LlpAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LlpAgent::new(0, n_dep, LlpConfig::default(), scales(), &mut rng).unwrap()
    }

    #[test]
    fn single_depot_forced() {
        let a = agent(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = obs(1, 1, &mut rng);
        let (p, dep) = a.act(&o, true, &mut rng).unwrap();
        assert_eq!(dep, vec![10]);
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_act_is_repeatable() {
        let a = agent(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = obs(3, 4, &mut rng);
        assert_eq!(a.act(&o, false, &mut rng).unwrap(), a.act(&o, false, &mut rng).unwrap());
    }

    #[test]
    fn assignments_are_distinct_depots() {
        let a = agent(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=5 {
            let o = obs(n, 5, &mut rng);
            let (_, dep) = a.act(&o, true, &mut rng).unwrap();
            let mut s = dep.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), n);
            assert!(dep.iter().all(|d| o.depots.contains(d)));
        }
    }

    #[test]
    fn too_many_responders_is_infeasible() {
        let a = agent(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let o = obs(3, 2, &mut rng);
        assert!(matches!(a.act(&o, false, &mut rng), Err(Error::Infeasible(_))));
    }

    #[test]
    fn near_identity_likelihoods_give_identity_matching() {
        // Hand-set a one-layer actor: identity input projection, attention and
        // MLP branches switched off, so the stack reduces to layer norm of the
        // raw features. The output projection scores depot j by minus its
        // arrival-time feature, which makes responder v prefer depot v.
        let mut cfg = LlpConfig::default();
        cfg.layers = 1;
        cfg.heads = 1;
        cfg.mlp_hidden = 4;
        let (m, d, h) = (3usize, 6usize, 4usize);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = LlpAgent::new(0, m, cfg, scales(), &mut rng).unwrap();
        let p = a.actor_mut().params_mut();
        p[..d * d].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        let layer = d * d + d;
        let wo = layer + 3 * d * d;
        p[wo..wo + d * d].iter_mut().for_each(|v| *v = 0.0);
        let w2 = wo + d * d + 3 * d + d * h + h;
        p[w2..w2 + h * d].iter_mut().for_each(|v| *v = 0.0);
        let out = w2 + h * d + 3 * d;
        p[out..].iter_mut().for_each(|v| *v = 0.0);
        for j in 0..m {
            p[out + (2 * j) * m + j] = -10.0;
        }
        let o = RegionObs {
            region: 0,
            responders: vec![0, 1, 2],
            depots: vec![7, 8, 9],
            phi: Matrix::from_rows(&[vec![0.0, 3600.0, 3600.0], vec![3600.0, 0.0, 3600.0], vec![3600.0, 3600.0, 0.0]]),
            depot_rates: vec![0.5, 0.5, 0.5],
        };
        let (lik, dep) = a.act(&o, false, &mut rng).unwrap();
        for v in 0..3 {
            assert!(lik.get(v, v) > 0.9, "{lik:?}");
        }
        assert_eq!(dep, vec![7, 8, 9]);
    }

    #[test]
    fn gamma_zero_targets_equal_rewards() {
        let mut cfg = LlpConfig::default();
        cfg.ddpg.gamma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = LlpAgent::new(0, 2, cfg, scales(), &mut rng).unwrap();
        let o = obs(1, 2, &mut rng);
        let t = LlpTransition { obs: o.clone(), action: Matrix::from_rows(&[vec![0.3, 0.7]]), reward: -0.8, next: o, done: false };
        assert_eq!(a.critic_targets(&[&t]).unwrap(), vec![-0.8]);
    }

    #[test]
    fn critic_converges_on_fixed_terminal_transition() {
        let mut cfg = LlpConfig::default();
        cfg.ddpg.critic_dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut a = LlpAgent::new(0, 2, cfg, scales(), &mut rng).unwrap();
        let o = obs(1, 2, &mut rng);
        let action = Matrix::from_rows(&[vec![0.4, 0.6]]);
        let t = LlpTransition { obs: o.clone(), action: action.clone(), reward: -1.5, next: o.clone(), done: true };
        for _ in 0..2000 {
            a.update(&[&t], &mut rng).unwrap();
        }
        assert!((a.q_value(&o, &action) + 1.5).abs() < 1e-2);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        use crate::nn::gradcheck::{numeric_grad, relative_error};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = agent(3, 12);
        let ts: Vec<LlpTransition> = (1..=3)
            .map(|n| {
                let o = obs(n, 3, &mut rng);
                LlpTransition { obs: o.clone(), action: Matrix::zeros(n, 3), reward: 0.0, next: o, done: true }
            })
            .collect();
        let refs: Vec<&LlpTransition> = ts.iter().collect();
        let (_, g) = a.actor_loss_and_grad(&refs).unwrap();
        let num = numeric_grad(a.actor().params(), 1e-5, |p| {
            let mut b = a.clone();
            b.actor_mut().params_mut().copy_from_slice(p);
            b.actor_loss_and_grad(&refs).unwrap().0
        });
        assert!(relative_error(&g, &num) < 1e-4, "{}", relative_error(&g, &num));
    }

    #[test]
    fn targets_track_frozen_online_nets() {
        let mut a = agent(2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for v in a.critic_mut().params_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
        let tau = a.config.ddpg.tau;
        let mut prev = a.target_distance();
        for _ in 0..10 {
            let (c, o) = (a.critic.params().to_vec(), a.actor.params().to_vec());
            soft_update(a.critic_target.params_mut(), &c, tau);
            soft_update(a.actor_target.params_mut(), &o, tau);
            let d = a.target_distance();
            assert!((d - (1.0 - tau) * prev).abs() < 1e-9 * prev.max(1.0));
            prev = d;
        }
    }
}
