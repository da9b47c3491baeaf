//! Actor-critic agents for the two planning levels, trained with DDPG.

mod hlp;
mod llp;
mod replay;

pub use hlp::{counts_from_action, HlpAgent, HlpConfig, HlpTransition};
pub use llp::{LlpAgent, LlpConfig, LlpTransition, TrainStats};
pub use replay::ReplayBuffer;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters shared by both agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Exploration strength at the first episode.
    pub explore_start: f64,
    /// Exploration strength once the schedule has finished.
    pub explore_end: f64,
    /// Episodes over which exploration decays linearly.
    pub explore_decay_episodes: usize,
    pub critic_hidden: usize,
    pub critic_dropout: f64,
    pub grad_clip: f64,
    /// Response times are divided by this before entering rewards.
    pub reward_scale_s: f64,
}

impl DdpgConfig {
    pub fn low_level() -> Self {
        Self {
            gamma: 0.5,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            explore_start: 0.3,
            explore_end: 0.01,
            explore_decay_episodes: 200,
            critic_hidden: 64,
            critic_dropout: 0.1,
            grad_clip: 10.0,
            reward_scale_s: 600.0,
        }
    }

    pub fn high_level() -> Self {
        Self { gamma: 0.95, explore_start: 0.5, explore_end: 0.05, ..Self::low_level() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.batch_size > 0
            && self.buffer_capacity >= self.batch_size
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.explore_start >= 0.0
            && self.explore_end >= 0.0
            && self.critic_hidden > 0
            && (0.0..1.0).contains(&self.critic_dropout)
            && self.grad_clip > 0.0
            && self.reward_scale_s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid DDPG hyperparameters".into()))
        }
    }

    /// Exploration strength after `episodes` completed training episodes.
    pub fn exploration(&self, episodes: usize) -> f64 {
        if self.explore_decay_episodes == 0 {
            return self.explore_end;
        }
        let frac = (episodes as f64 / self.explore_decay_episodes as f64).min(1.0);
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }

    /// Reward for a response time in seconds.
    pub fn reward(&self, response_time_s: f64) -> f64 {
        -response_time_s / self.reward_scale_s
    }
}

/// Weighted critic estimate `sum_g lambda_g Q_g`, divided by `sum_g lambda_g`
/// when `normalize` is set. Zero total rate yields zero.
pub fn hlp_reward(values: &[f64], rates: &[f64], normalize: bool) -> f64 {
    assert_eq!(values.len(), rates.len(), "one critic value per region");
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let s: f64 = values.iter().zip(rates).map(|(q, l)| q * l).sum();
    if normalize {
        s / total
    } else {
        s
    }
}

/// Responder count for a low-level training episode:
/// `Binomial(n_depots, p)` clamped to `[1, n_depots]`.
pub fn sample_region_fleet(n_depots: usize, p: f64, rng: &mut impl Rng) -> Result<usize> {
    if n_depots == 0 {
        return Err(Error::Config("region has no depots".into()));
    }
    let b = Binomial::new(n_depots as u64, p.clamp(0.0, 1.0)).map_err(|e| Error::Config(e.to_string()))?;
    Ok((b.sample(rng) as usize).clamp(1, n_depots))
}

/// Responder count for a high-level training episode: uniform over
/// `center - spread ..= center + spread`, kept within `[1, max]`.
pub fn sample_city_fleet(center: usize, spread: usize, max: usize, rng: &mut impl Rng) -> usize {
    let lo = center.saturating_sub(spread).max(1);
    let hi = (center + spread).min(max).max(lo);
    rng.gen_range(lo..=hi)
}

/// A draw from the flat Dirichlet distribution on `n` categories.
pub fn flat_dirichlet(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    if s > 0.0 {
        draws.into_iter().map(|x: f64| x / s).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_single_region() {
        assert_eq!(hlp_reward(&[-2.5], &[4.0], true), -2.5);
    }

    #[test]
    fn reward_weighted_two_regions() {
        let r = hlp_reward(&[-100.0, -300.0], &[2.0, 1.0], true);
        assert!((r - (-500.0 / 3.0)).abs() < 1e-9);
        assert_eq!(hlp_reward(&[-100.0, -300.0], &[2.0, 1.0], false), -500.0);
    }

    #[test]
    fn reward_zero_rates() {
        assert_eq!(hlp_reward(&[-1.0, -2.0], &[0.0, 0.0], true), 0.0);
    }

    #[test]
    fn reward_linear_in_each_critic() {
        let rates = [1.5, 0.5, 2.0];
        let f = |q: f64| hlp_reward(&[q, -3.0, 1.0], &rates, true);
        let (a, b, c) = (f(-1.0), f(0.0), f(1.0));
        assert!(((b - a) - (c - b)).abs() < 1e-12);
    }

    #[test]
    fn fleet_single_depot_and_full_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_region_fleet(1, 0.3, &mut rng).unwrap(), 1);
            assert_eq!(sample_region_fleet(5, 1.0, &mut rng).unwrap(), 5);
        }
    }

    #[test]
    fn fleet_binomial_mean() {
        // with p well inside (0, 1) and n large the clamp almost never binds
        let (n, p) = (20usize, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let mean = (0..draws).map(|_| sample_region_fleet(n, p, &mut rng).unwrap() as f64).sum::<f64>() / draws as f64;
        let sd = (n as f64 * p * (1.0 - p) / draws as f64).sqrt();
        assert!((mean - n as f64 * p).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn city_fleet_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = sample_city_fleet(26, 3, 100, &mut rng);
            assert!((23..=29).contains(&v));
            seen[v - 23] = true;
        }
        assert!(seen.iter().all(|&s| s));
        for _ in 0..100 {
            assert!((1..=5).contains(&sample_city_fleet(2, 3, 10, &mut rng)));
        }
    }

    #[test]
    fn exploration_schedule() {
        let c = DdpgConfig::low_level();
        assert_eq!(c.exploration(0), 0.3);
        assert!((c.exploration(100) - 0.155).abs() < 1e-12);
        assert!((c.exploration(1000) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let d = flat_dirichlet(n, &mut rng);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x >= 0.0));
        }
    }
}
