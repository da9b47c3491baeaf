//! Perturbs the rates and travel times a planner sees with log-normal noise
//! and reports the mean response time over a grid of noise levels.

use erm_core::harness::{derive_seed, noise_sweep, EvalSetup, PlannerKind};
use erm_core::scenarios::toy_two_region;

fn main() -> erm_core::Result<()> {
    let scenario = toy_two_region();
    let world = scenario.world()?;
    let kind = PlannerKind::Pmedian { alpha: 0.0 };
    let setup = EvalSetup {
        world: &world,
        policy: None,
        n_responders: 3,
        t_serve_s: scenario.t_serve_s,
        horizon_s: scenario.horizon_s,
        trigger: kind.default_trigger(),
        noise: Default::default(),
    };
    let seeds: Vec<u64> = (0..8).map(|i| derive_seed(4, i)).collect();
    let sigmas = [0.0, 0.3, 0.6];
    let points = noise_sweep(&setup, &kind, &seeds, &sigmas)?;
    println!("rows: rate noise, columns: travel-time noise");
    print!("{:>6}", "");
    for s in sigmas {
        print!("{s:>9}");
    }
    println!();
    for row in points.chunks(sigmas.len()) {
        print!("{:>6}", row[0].sigma_rate);
        for p in row {
            print!("{:>9.1}", p.mean_response_s.unwrap_or(f64::NAN));
        }
        println!();
    }
    Ok(())
}
