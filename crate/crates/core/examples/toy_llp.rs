//! Trains a region agent on a one-street city where every incident happens
//! next to the second depot, then compares it with random stationing.

use erm_core::harness::{derive_seed, evaluate, train_llp, EvalSetup, PlannerKind, PolicyBundle, TrainConfig};
use erm_core::hierarchy::TriggerMode;
use erm_core::scenarios::toy_single_region;

fn main() -> erm_core::Result<()> {
    let scenario = toy_single_region();
    let world = scenario.world()?;
    let cfg = TrainConfig { llp_episodes: 200, eval_every: 20, horizon_s: scenario.horizon_s, ..Default::default() };
    let train: Vec<u64> = (0..50).map(|i| derive_seed(1, i)).collect();
    let eval: Vec<u64> = (50..70).map(|i| derive_seed(1, i)).collect();
    let t0 = std::time::Instant::now();
    let (agent, curve) = train_llp(&world, 0, &cfg, &train, eval[0], 7)?;
    for p in &curve {
        println!("episode {:>3}  eval mean response {:>7.1} s  critic loss {:?}", p.episode, p.mean_response_s.unwrap_or(f64::NAN), p.mean_critic_loss);
    }
    println!("trained in {:.1} s", t0.elapsed().as_secs_f64());

    let policy = PolicyBundle { llps: vec![agent], hlp: None };
    let setup = EvalSetup {
        world: &world,
        policy: Some(&policy),
        n_responders: 1,
        t_serve_s: scenario.t_serve_s,
        horizon_s: scenario.horizon_s,
        trigger: TriggerMode::Ours,
        noise: Default::default(),
    };
    let untrained = {
        let cfg0 = TrainConfig { llp_episodes: 0, ..cfg.clone() };
        let (a, _) = train_llp(&world, 0, &cfg0, &train, eval[0], 7)?;
        PolicyBundle { llps: vec![a], hlp: None }
    };
    let (before, _) = evaluate(&EvalSetup { policy: Some(&untrained), ..setup }, &PlannerKind::Ours, &eval)?;
    let (ours, outcomes) = evaluate(&setup, &PlannerKind::Ours, &eval)?;
    let (random, _) = evaluate(&setup, &PlannerKind::Random, &eval)?;
    let decisions: Vec<_> = outcomes.iter().flat_map(|o| o.log.llp_decisions.iter()).collect();
    let at_b = decisions.iter().filter(|d| d.assignment[0].1 == 1).count();
    println!("decisions at the busy depot: {at_b}/{}", decisions.len());
    println!(
        "mean response: untrained {:.1} s, trained {:.1} s, random {:.1} s",
        before.mean_response_s.unwrap(),
        ours.mean_response_s.unwrap(),
        random.mean_response_s.unwrap()
    );
    Ok(())
}
