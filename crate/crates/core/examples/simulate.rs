//! Runs the dispatch simulator on one incident chain with responders left
//! at their initial depots, then with a greedy planner repositioning them.

use erm_core::baselines::GreedyLlp;
use erm_core::hierarchy::{initial_placement, Controller, LowLevelPlanner, ProportionalHlp, TriggerMode, TriggerPolicy};
use erm_core::scenarios::{generate_synthetic, SyntheticParams};
use erm_core::sim::{run_episode, sample_chain, NoHooks, SimState};

fn main() -> erm_core::Result<()> {
    let scenario = generate_synthetic(&SyntheticParams { horizon_s: 2.0 * 86_400.0, ..Default::default() }, 9)?;
    let world = scenario.world()?;
    let chain = sample_chain(&world.rates, scenario.horizon_s, 5)?;
    let placement = initial_placement(&world, scenario.n_responders)?;

    let trigger = TriggerPolicy::new(TriggerMode::Baseline);
    let state = SimState::new(&world, trigger.sim_config(scenario.t_serve_s), &placement)?;
    let fixed = run_episode(&world, &chain, state.clone(), &mut NoHooks, 0)?;

    let llps: Vec<Box<dyn LowLevelPlanner>> = (0..world.n_regions()).map(|_| Box::new(GreedyLlp) as _).collect();
    let mut ctl = Controller::new(trigger, Some(Box::new(ProportionalHlp)), llps);
    let moved = run_episode(&world, &chain, state, &mut ctl, 0)?;

    for (name, r) in [("fixed", &fixed), ("greedy", &moved)] {
        let s = r.summary();
        println!(
            "{name:>6}: {} incidents, mean response {:.1} s, max {:.1} s, {} planner calls",
            s.incidents,
            s.mean_response_s.unwrap_or(f64::NAN),
            s.max_response_s.unwrap_or(f64::NAN),
            s.decision_latency.count
        );
    }
    println!("first responses under the greedy planner:");
    for rec in moved.log.iter().take(5) {
        println!("  incident {} at cell {} reported {:.0} s: responder {} arrived after {:.1} s", rec.incident, rec.cell, rec.report_t, rec.responder, rec.response_time_s);
    }
    println!("{} region-level decisions, {} city-level", ctl.log.llp_decisions.len(), ctl.log.hlp_epochs.len());
    Ok(())
}
