//! Trains the full two-level policy on a two-region city whose incident
//! mass swings between the regions, then checks where the city agent puts
//! the majority of the fleet and compares against static stationing.

use erm_core::harness::{derive_seed, evaluate, train_policy, EvalSetup, PlannerKind, TrainConfig};
use erm_core::baselines::MctsConfig;
use erm_core::features::ObservationNoise;
use erm_core::hierarchy::TriggerMode;
use erm_core::scenarios::toy_two_region;

fn main() -> erm_core::Result<()> {
    let scenario = toy_two_region();
    let world = scenario.world()?;
    let cfg = TrainConfig { eval_every: 20, horizon_s: scenario.horizon_s, ..Default::default() };
    let train: Vec<u64> = (0..50).map(|i| derive_seed(2, i)).collect();
    let eval: Vec<u64> = (50..60).map(|i| derive_seed(2, i)).collect();
    let t0 = std::time::Instant::now();
    let (policy, curve) = train_policy(&world, 3, &cfg, &train, eval[0], 11)?;
    for p in &curve {
        println!("{} {:?} episode {:>3}: eval mean response {:>7.1} s", p.level, p.region, p.episode, p.mean_response_s.unwrap_or(f64::NAN));
    }
    println!("trained in {:.1} s", t0.elapsed().as_secs_f64());

    let setup = EvalSetup {
        world: &world,
        policy: Some(&policy),
        n_responders: 3,
        t_serve_s: scenario.t_serve_s,
        horizon_s: scenario.horizon_s,
        trigger: TriggerMode::Ours,
        noise: Default::default(),
    };
    let (ours, outcomes) = evaluate(&setup, &PlannerKind::Ours, &eval)?;
    let (fixed, _) = evaluate(&setup, &PlannerKind::Static, &eval)?;
    let epochs: Vec<_> = outcomes.iter().flat_map(|o| o.log.hlp_epochs.iter().skip(1)).collect();
    let shifted = epochs
        .iter()
        .filter(|e| {
            let hot = if e.region_rates[0] > e.region_rates[1] { 0 } else { 1 };
            e.counts_after[hot] * 2 > e.counts_after.iter().sum::<usize>()
        })
        .count();
    println!("rate-change epochs with the majority in the busy region: {shifted}/{}", epochs.len());
    println!("mean response: trained {:.1} s, static {:.1} s", ours.mean_response_s.unwrap(), fixed.mean_response_s.unwrap());
    println!("decision latency: mean {:.3} ms, max {:.3} ms", ours.decision_latency.mean_s * 1e3, ours.decision_latency.max_s * 1e3);

    let noisy = EvalSetup { noise: ObservationNoise { sigma_rate: 0.3, sigma_time: 0.3 }, ..setup };
    let (with_noise, _) = evaluate(&noisy, &PlannerKind::Ours, &eval)?;
    println!("mean response with noise 0.3 on both channels: {:.1} s", with_noise.mean_response_s.unwrap());

    let search = EvalSetup { trigger: TriggerMode::Baseline, ..setup };
    let (mcts, _) = evaluate(&search, &PlannerKind::Mcts(MctsConfig::default()), &eval[..2])?;
    println!(
        "search baseline: mean response {:.1} s, decision latency mean {:.3} ms",
        mcts.mean_response_s.unwrap(),
        mcts.decision_latency.mean_s * 1e3
    );
    Ok(())
}
