//! Runs the search, facility-location, greedy, static and random planners on
//! the same held-out chains and tests each against greedy with a paired
//! permutation test.

use erm_core::baselines::MctsConfig;
use erm_core::harness::{derive_seed, evaluate, permutation_test, EvalSetup, PlannerKind};
use erm_core::scenarios::{generate_synthetic, SyntheticParams};

fn main() -> erm_core::Result<()> {
    let scenario = generate_synthetic(&SyntheticParams { n_regions: 2, n_depots: 10, n_responders: 6, ..Default::default() }, 3)?;
    let world = scenario.world()?;
    let seeds: Vec<u64> = (0..6).map(|i| derive_seed(17, i)).collect();
    let kinds = [
        PlannerKind::Greedy,
        PlannerKind::Pmedian { alpha: 0.0 },
        PlannerKind::Pmedian { alpha: 5.0 },
        // a lighter search than the default keeps the example quick
        PlannerKind::Mcts(MctsConfig { iteration_limit: 200, n_samples: 10, ..Default::default() }),
        PlannerKind::Static,
        PlannerKind::Random,
    ];
    let mut reference: Option<Vec<f64>> = None;
    println!("{:<16} {:>10} {:>12} {:>8}", "planner", "mean_s", "latency_ms", "p");
    for kind in &kinds {
        let setup = EvalSetup {
            world: &world,
            policy: None,
            n_responders: scenario.n_responders,
            t_serve_s: scenario.t_serve_s,
            horizon_s: 3.0 * 86_400.0,
            trigger: kind.default_trigger(),
            noise: Default::default(),
        };
        let (s, _) = evaluate(&setup, kind, &seeds)?;
        let per_chain: Vec<f64> = s.chains.iter().map(|c| c.mean_response_s.unwrap_or(0.0)).collect();
        let p = match &reference {
            None => {
                reference = Some(per_chain);
                "-".to_string()
            }
            Some(r) => format!("{:.3}", permutation_test(&per_chain, r, 10_000, 0)?),
        };
        let label = match kind {
            PlannerKind::Pmedian { alpha } => format!("pmedian a={alpha}"),
            k => k.name().to_string(),
        };
        println!("{label:<16} {:>10.1} {:>12.3} {p:>8}", s.mean_response_s.unwrap_or(f64::NAN), s.decision_latency.mean_s * 1e3);
    }
    Ok(())
}
