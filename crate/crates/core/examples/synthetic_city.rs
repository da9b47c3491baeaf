//! Generates a synthetic city, shows how it was split into regions and how
//! demand moves over the day, then samples an incident chain from it.

use erm_core::geo::HOUR_S;
use erm_core::scenarios::{generate_synthetic, Scenario, SyntheticParams};
use erm_core::sim::sample_chain;

fn main() -> erm_core::Result<()> {
    let params = SyntheticParams { n_regions: 3, n_depots: 12, n_responders: 8, ..Default::default() };
    let scenario = generate_synthetic(&params, 42)?;
    let world = scenario.world()?;
    println!("{}x{} grid, {} depots, {} hospitals", world.grid.width(), world.grid.height(), world.depots.len(), world.hospitals.len());
    for g in 0..world.n_regions() {
        println!("region {g}: {} cells, depots {:?}", world.segmentation.cells(g).len(), world.segmentation.depots(g));
    }

    println!("hour  region rates (incidents/h)");
    for h in [3.0, 9.0, 13.0, 18.0, 23.0] {
        let r = world.region_rates(h * HOUR_S);
        println!("{h:>4}  {}", r.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("  "));
    }

    let path = std::env::temp_dir().join("erm_synthetic_city.json");
    scenario.save(&path)?;
    let back = Scenario::load(&path)?;
    assert_eq!(back, scenario);
    println!("saved and reloaded {}", path.display());

    let chain = sample_chain(&world.rates, scenario.horizon_s, 1)?;
    println!("chain over {:.0} days: {} incidents, first at {:.0} s", scenario.horizon_s / 86_400.0, chain.len(), chain.incidents[0].0);
    Ok(())
}
